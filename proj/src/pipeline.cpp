// SPDX-License-Identifier: Apache-2.0
#include "xmr/pipeline.hpp"

#include "xmr/error.hpp"
#include "xmr/io.hpp"

namespace xmr {

namespace fs = std::filesystem;

void generate_to_dir(Task task, const Json& overrides, std::uint64_t seed, const fs::path& out) {
  if (task == Task::Pedestrian) {
    Json j = PedestrianConfig{}.to_json();
    j.merge_patch(overrides);
    save_dataset(out, generate_pedestrian_dataset(PedestrianConfig::from_json(j), seed));
  } else {
    Json j = VehicleConfig{}.to_json();
    j.merge_patch(overrides);
    save_dataset(out, generate_vehicle_dataset(VehicleConfig::from_json(j), seed));
  }
}

RunRecord train_to_dir(const TrainConfig& config, const fs::path& data, const fs::path& out) {
  const std::string hash = dataset_hash(data);
  const auto dataset = load_dataset(data);
  TrainResult result = std::visit([&](const auto& ds) { return train(config, ds, hash); }, dataset);
  const Json meta{{"task", task_name(config.task)},
                  {"train_config", config.to_json()},
                  {"config_hash", result.record.config_hash},
                  {"dataset_hash", hash},
                  {"record", result.record.to_json()}};
  save_checkpoint(out, result.params, meta);
  return result.record;
}

namespace {

struct LoadedRun {
  Checkpoint checkpoint;
  RunInfo info;
};

LoadedRun load_run(const fs::path& dir, Task expected) {
  LoadedRun r{load_checkpoint(dir), {}};
  const Json& meta = r.checkpoint.meta;
  if (!meta.contains("task") || parse_task(meta.at("task").get<std::string>()) != expected) {
    throw Error(ErrorCode::TaskDatasetMismatch, dir.string() + " is not a " + std::string(task_name(expected)) +
                                                    " checkpoint");
  }
  r.info.config_hash = meta.value("config_hash", "");
  r.info.dataset_hash = meta.value("dataset_hash", "");
  r.info.augment = meta.contains("train_config") ? meta.at("train_config").value("augment", true) : true;
  return r;
}

template <class T>
T load_as(const fs::path& dir) {
  auto any = load_dataset(dir);
  if (!std::holds_alternative<T>(any)) throw Error(ErrorCode::TaskDatasetMismatch, dir.string() + " has the wrong task");
  return std::get<T>(std::move(any));
}

}  // namespace

EvalOutput evaluate_dirs(const fs::path& ckpt_ped, const fs::path& ckpt_veh, const fs::path& data,
                         std::optional<bool> augment) {
  const auto ped_run = load_run(ckpt_ped, Task::Pedestrian);
  const auto veh_run = load_run(ckpt_veh, Task::Vehicle);
  const auto ped = load_as<PedestrianDataset>(data / "ped");
  const auto veh = load_as<VehicleDataset>(data / "veh");

  // reports carry the hashes of the data they were scored on
  RunInfo ped_info = ped_run.info;
  RunInfo veh_info = veh_run.info;
  ped_info.dataset_hash = dataset_hash(data / "ped");
  veh_info.dataset_hash = dataset_hash(data / "veh");

  EvalOutput out = evaluate(EvalInputs{ped, veh, ped_run.checkpoint.params, veh_run.checkpoint.params, ped_info,
                                       veh_info, augment, 0});
  for (const auto* run : {&ped_run, &veh_run}) {
    const auto& trained_on = run->info.dataset_hash;
    const auto& scored_on = run == &ped_run ? ped_info.dataset_hash : veh_info.dataset_hash;
    if (trained_on != scored_on) {
      out.report["warnings"].push_back(std::string(run == &ped_run ? "ped" : "veh") +
                                       " checkpoint was trained on dataset " + trained_on);
    }
  }
  return out;
}

void write_eval_output(const EvalOutput& out, const fs::path& report, const fs::path& submission) {
  write_text(report, out.report.dump(2) + "\n");
  write_text(submission, out.submission);
}

}  // namespace xmr
