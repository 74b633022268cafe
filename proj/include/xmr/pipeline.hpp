// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>

#include "xmr/eval.hpp"
#include "xmr/training.hpp"

namespace xmr {

/// Generator config keys not given in `overrides` keep their defaults.
void generate_to_dir(Task task, const Json& overrides, std::uint64_t seed, const std::filesystem::path& out);

/// Trains on the dataset in `data` and writes a checkpoint to `out`. The run
/// record goes into the checkpoint meta without wall time, so reruns are
/// byte-identical.
RunRecord train_to_dir(const TrainConfig& config, const std::filesystem::path& data,
                       const std::filesystem::path& out);

/// `data` holds ped/ and veh/ dataset directories.
EvalOutput evaluate_dirs(const std::filesystem::path& ckpt_ped, const std::filesystem::path& ckpt_veh,
                         const std::filesystem::path& data, std::optional<bool> augment = std::nullopt);

void write_eval_output(const EvalOutput& out, const std::filesystem::path& report,
                       const std::filesystem::path& submission);

}  // namespace xmr
