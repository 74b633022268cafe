// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xmr/dataset_io.hpp"
#include "xmr/losses.hpp"
#include "xmr/model.hpp"

namespace xmr {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  GradientMap m;
  GradientMap v;
};

/// Bias-corrected Adam on every tensor named in `grads`.
void adam_step(ParamSet& params, const GradientMap& grads, AdamState& state, const AdamHyper& hyper);

struct TrainConfig {
  Task task = Task::Pedestrian;
  int batch_size = 32;
  int epochs = 30;
  AdamHyper adam;
  std::uint64_t seed = 0;
  LossConfig loss;
  bool augment = true;                        // vehicle color prompt
  TargetKind irm_targets = TargetKind::Inclusion;  // or OneHot for the ablation arm
  ModelConfig model = ModelConfig::standard();

  /// ped: 30 epochs, veh: 20 epochs.
  static TrainConfig defaults(Task task);
  void validate() const;
  Json to_json() const;
  /// Unknown keys are rejected. Missing keys take the task defaults.
  static TrainConfig from_json(const Json& j);
  std::string hash() const;
};

// --- batches -----------------------------------------------------------------

struct PedestrianBatch {
  std::vector<std::vector<TokenId>> captions;
  Matrix features;
  std::vector<AttributeSet> image_attrs;
  std::vector<AttributeSet> caption_attrs;
  std::vector<MaskedCaption> masked;
};

struct VehicleBatch {
  std::vector<std::vector<TokenId>> captions;
  Matrix features;
  std::vector<int> tags;
};

int tag_key(VehicleTag tag);

/// Masks one caption attribute per sample, chosen by `rng`.
PedestrianBatch make_pedestrian_batch(std::span<const PedestrianSample* const> samples, int attribute_count,
                                      Rng& rng);
VehicleBatch make_vehicle_batch(std::span<const VehicleSample* const> samples,
                                std::span<const std::vector<double>* const> features);

/// Encoder input for one vehicle: the raster, optionally with the detected
/// color painted into the top-left corner.
std::vector<double> vehicle_features(const VehicleSample& sample, const Palette& palette, bool augment);

/// Objective and gradients with respect to every model parameter, including
/// the encoders and the row normalization.
LossResult pedestrian_step(const ParamSet& params, const PedestrianBatch& batch, const LossConfig& config,
                           TargetKind targets);
LossResult vehicle_step(const ParamSet& params, const VehicleBatch& batch, const LossConfig& config,
                        std::span<const ItmPair> pairs);
LossResult vehicle_step(const ParamSet& params, const VehicleBatch& batch, const LossConfig& config, Rng& rng);

// --- runs --------------------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  int batches = 0;
  double total = 0.0;
  std::map<std::string, double> components;
};

struct RunRecord {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;  // reported, never serialized
  std::string config_hash;
  std::string dataset_hash;

  Json to_json() const;
};

struct TrainResult {
  ParamSet params;
  RunRecord record;
};

TrainResult train(const TrainConfig& config, const PedestrianDataset& data, const std::string& dataset_hash = {});
TrainResult train(const TrainConfig& config, const VehicleDataset& data, const std::string& dataset_hash = {});

// --- checkpoints -------------------------------------------------------------

struct Checkpoint {
  ParamSet params;
  Json meta;  // train config, hashes
};

/// manifest.json + one little-endian float64 file per tensor, each with its sha256.
void save_checkpoint(const std::filesystem::path& dir, const ParamSet& params, const Json& meta = Json::object());
/// Verifies structure and every tensor hash; throws CorruptCheckpoint otherwise.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace xmr
