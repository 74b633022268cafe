// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "test_util.hpp"
#include "xmr/io.hpp"
#include "xmr/raster.hpp"

using namespace xmr;
using xmr::test::code_of;

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex(std::string_view("abc")) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string_view("")) ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("f64 encoding is little-endian and lossless") {
  const std::vector<double> v{1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e308, -3.25};
  const auto bytes = encode_f64(v);
  REQUIRE(bytes.size() == 40);
  // 1.0 = 0x3FF0000000000000
  CHECK(bytes[7] == 0x3F);
  CHECK(bytes[6] == 0xF0);
  CHECK(bytes[0] == 0x00);
  const auto back = decode_f64(bytes);
  REQUIRE(back.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(std::bit_cast<std::uint64_t>(back[i]) == std::bit_cast<std::uint64_t>(v[i]));
  CHECK(code_of([&] { decode_f64(std::span(bytes).first(7)); }) == ErrorCode::Io);
}

TEST_CASE("unknown config keys are rejected") {
  const Json ok = {{"a", 1}, {"b", 2}};
  reject_unknown_keys(ok, {"a", "b", "c"}, "test");
  const Json typo = {{"a", 1}, {"bb", 2}};
  CHECK(code_of([&] { reject_unknown_keys(typo, {"a", "b"}, "test"); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([&] { reject_unknown_keys(Json::array(), {"a"}, "test"); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("ppm round trip") {
  Image img(3, 2);
  img.set(0, 0, {255, 0, 0});
  img.set(2, 1, {1, 2, 3});
  const auto bytes = encode_ppm(img);
  CHECK(decode_ppm(bytes) == img);

  const std::string with_comment = "P6\n# made by hand\n1 1\n255\n";
  std::vector<std::uint8_t> raw(with_comment.begin(), with_comment.end());
  raw.insert(raw.end(), {9, 8, 7});
  const auto one = decode_ppm(raw);
  CHECK(one.at(0, 0) == Rgb{9, 8, 7});

  const std::string p3 = "P3\n1 1\n255\n1 2 3\n";
  CHECK(code_of([&] { decode_ppm(std::vector<std::uint8_t>(p3.begin(), p3.end())); }) == ErrorCode::Io);
  const std::string deep = "P6\n1 1\n65535\n";
  CHECK(code_of([&] { decode_ppm(std::vector<std::uint8_t>(deep.begin(), deep.end())); }) == ErrorCode::Io);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK(code_of([&] { decode_ppm(truncated); }) == ErrorCode::Io);

  const auto dir = xmr::test::scratch_dir("ppm");
  write_ppm(dir / "a.ppm", img);
  CHECK(read_ppm(dir / "a.ppm") == img);
}
