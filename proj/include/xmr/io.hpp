// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace xmr {

using Json = nlohmann::ordered_json;

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

/// Little-endian IEEE-754 binary64, independent of host byte order.
std::vector<std::uint8_t> encode_f64(std::span<const double> values);
std::vector<double> decode_f64(std::span<const std::uint8_t> bytes);

/// Throws ConfigInvalid if `object` has a key outside `allowed`.
void reject_unknown_keys(const Json& object, std::initializer_list<std::string_view> allowed,
                         std::string_view context);

/// Shortest round-trip decimal rendering, stable across runs.
std::string format_double(double v);

}  // namespace xmr
