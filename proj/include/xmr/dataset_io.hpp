// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <variant>

#include "xmr/datagen.hpp"

namespace xmr {

enum class Task { Pedestrian, Vehicle };

std::string_view task_name(Task task);  // "ped" / "veh"
Task parse_task(std::string_view name);

/// Layout:
///   dataset.json    task, seed, generator config, vocabulary
///   samples.jsonl   one record per train/gallery image and per query
///   features.f64    (ped) little-endian float64 rows, described by features.json
///   rasters/*.ppm   (veh) binary P6 rasters
void save_dataset(const std::filesystem::path& dir, const PedestrianDataset& ds);
void save_dataset(const std::filesystem::path& dir, const VehicleDataset& ds);

using AnyDataset = std::variant<PedestrianDataset, VehicleDataset>;

AnyDataset load_dataset(const std::filesystem::path& dir);
Task dataset_task(const std::filesystem::path& dir);

/// sha256 over every file of the dataset directory in sorted relative-path order.
std::string dataset_hash(const std::filesystem::path& dir);

}  // namespace xmr
