// SPDX-License-Identifier: Apache-2.0
#include "xmr/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "xmr/augment.hpp"
#include "xmr/error.hpp"
#include "xmr/io.hpp"

namespace xmr {

namespace fs = std::filesystem;

void adam_step(ParamSet& params, const GradientMap& grads, AdamState& state, const AdamHyper& hyper) {
  for (const auto& [name, g] : grads) {
    if (!params.at(name).same_shape(g)) {
      throw Error(ErrorCode::ShapeMismatch, "gradient for '" + name + "' does not match the parameter");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(hyper.beta1, t);
  const double correction2 = 1.0 - std::pow(hyper.beta2, t);
  for (const auto& [name, g] : grads) {
    Matrix& p = params.mutable_at(name);
    auto [m_it, m_new] = state.m.try_emplace(name, g.rows(), g.cols());
    auto [v_it, v_new] = state.v.try_emplace(name, g.rows(), g.cols());
    Matrix& m = m_it->second;
    Matrix& v = v_it->second;
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
      v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

// ---------------------------------------------------------------------------

TrainConfig TrainConfig::defaults(Task task) {
  TrainConfig c;
  c.task = task;
  c.epochs = task == Task::Pedestrian ? 30 : 20;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error(ErrorCode::ConfigInvalid, "batch_size must be >= 2");
  if (epochs < 0) throw Error(ErrorCode::ConfigInvalid, "epochs must be >= 0");
  if (!(adam.lr > 0.0)) throw Error(ErrorCode::ConfigInvalid, "lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "Adam betas must be in [0, 1) and eps > 0");
  }
  loss.validate();
  if (irm_targets == TargetKind::Tag) throw Error(ErrorCode::ConfigInvalid, "irm_targets must be inclusion or one_hot");
}

Json TrainConfig::to_json() const {
  return {{"task", task_name(task)},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
          {"seed", seed},
          {"loss", loss.to_json()},
          {"augment", augment},
          {"irm_targets", irm_targets == TargetKind::OneHot ? "one_hot" : "inclusion"},
          {"model", model.to_json()}};
}

TrainConfig TrainConfig::from_json(const Json& j) {
  reject_unknown_keys(j, {"task", "batch_size", "epochs", "adam", "seed", "loss", "augment", "irm_targets", "model"},
                      "train config");
  if (!j.contains("task")) throw Error(ErrorCode::ConfigInvalid, "train config needs a task");
  TrainConfig c = defaults(parse_task(j.at("task").get<std::string>()));
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    reject_unknown_keys(a, {"lr", "beta1", "beta2", "eps"}, "adam config");
    c.adam.lr = a.value("lr", c.adam.lr);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
  }
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
  c.augment = j.value("augment", c.augment);
  if (j.contains("irm_targets")) {
    const auto t = j.at("irm_targets").get<std::string>();
    if (t == "inclusion") c.irm_targets = TargetKind::Inclusion;
    else if (t == "one_hot") c.irm_targets = TargetKind::OneHot;
    else throw Error(ErrorCode::ConfigInvalid, "irm_targets must be inclusion or one_hot");
  }
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.validate();
  return c;
}

std::string TrainConfig::hash() const { return sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------------------

int tag_key(VehicleTag tag) { return tag.color_id * 1000 + tag.type_id; }

PedestrianBatch make_pedestrian_batch(std::span<const PedestrianSample* const> samples, int attribute_count,
                                      Rng& rng) {
  const auto attrs = AttributeVocabulary::standard(attribute_count);
  PedestrianBatch b;
  if (samples.empty()) throw Error(ErrorCode::EmptyBatch, "empty pedestrian batch");
  b.features = Matrix(samples.size(), samples.front()->image_features.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = *samples[i];
    b.captions.push_back(s.caption_tokens);
    if (s.image_features.size() != b.features.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "ragged pedestrian features");
    }
    std::copy(s.image_features.begin(), s.image_features.end(), b.features.row(i).begin());
    b.image_attrs.push_back(s.image_attributes);
    b.caption_attrs.push_back(s.caption_attributes);
    std::vector<int> present;
    for (int k = 0; k < attribute_count; ++k)
      if (s.caption_attributes.has(k)) present.push_back(k);
    if (present.empty()) throw Error(ErrorCode::EmptyAttributeSet, "caption without attributes");
    b.masked.push_back(mask_attribute(s.caption_attributes, present[rng.below(present.size())], attrs));
  }
  return b;
}

VehicleBatch make_vehicle_batch(std::span<const VehicleSample* const> samples,
                                std::span<const std::vector<double>* const> features) {
  if (samples.empty() || samples.size() != features.size()) {
    throw Error(ErrorCode::EmptyBatch, "vehicle batch needs one feature row per sample");
  }
  VehicleBatch b;
  b.features = Matrix(samples.size(), features.front()->size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    b.captions.push_back(samples[i]->caption_tokens);
    b.tags.push_back(tag_key(samples[i]->tag));
    std::copy(features[i]->begin(), features[i]->end(), b.features.row(i).begin());
  }
  return b;
}

std::vector<double> vehicle_features(const VehicleSample& sample, const Palette& palette, bool augment) {
  if (!augment) return image_to_features(sample.image);
  const auto detected = dominant_color(sample.image, palette, sample.bbox);
  return image_to_features(apply_color_patch(sample.image, detected.rgb, default_patch_for(sample.image)));
}

namespace {

void copy_prefixed(const GradientMap& from, std::string_view prefix, GradientMap& into) {
  for (const auto& [name, g] : from)
    if (name.starts_with(prefix)) accumulate(into, GradientMap{{name, g}});
}

}  // namespace

LossResult pedestrian_step(const ParamSet& params, const PedestrianBatch& batch, const LossConfig& config,
                           TargetKind targets) {
  TextCache text_cache;
  TextCache masked_cache;
  ImageCache image_cache;
  std::vector<std::vector<TokenId>> masked_tokens;
  masked_tokens.reserve(batch.masked.size());
  for (const auto& m : batch.masked) masked_tokens.push_back(m.tokens);

  const auto text = normalize_rows(encode_text(batch.captions, params, &text_cache));
  const auto masked = normalize_rows(encode_text(masked_tokens, params, &masked_cache));
  const auto image = normalize_rows(encode_image(batch.features, params, &image_cache));

  const PedestrianInputs in{text.normalized, image.normalized, masked.normalized,
                            batch.image_attrs, batch.caption_attrs, batch.masked};
  auto objective = pedestrian_objective(in, params, config, targets);
  const auto& g = objective.gradients;

  LossResult r;
  r.value = objective.value;
  r.components = objective.components;
  accumulate(r.gradients, text_backward(text_cache, normalize_rows_backward(text, g.at("f_txt")), params));
  accumulate(r.gradients,
             text_backward(masked_cache, normalize_rows_backward(masked, g.at("f_txt_masked")), params));
  accumulate(r.gradients, image_backward(image_cache, normalize_rows_backward(image, g.at("f_img")), params));
  copy_prefixed(g, "attr.", r.gradients);
  copy_prefixed(g, "irr.", r.gradients);
  return r;
}

namespace {

struct VehicleForward {
  TextCache text_cache;
  ImageCache image_cache;
  NormalizedRows text;
  NormalizedRows image;
};

VehicleForward vehicle_forward(const ParamSet& params, const VehicleBatch& batch) {
  VehicleForward f;
  f.text = normalize_rows(encode_text(batch.captions, params, &f.text_cache));
  f.image = normalize_rows(encode_image(batch.features, params, &f.image_cache));
  return f;
}

LossResult vehicle_backward(const ParamSet& params, const VehicleForward& f, LossResult objective) {
  const auto& g = objective.gradients;
  LossResult r;
  r.value = objective.value;
  r.components = objective.components;
  accumulate(r.gradients, text_backward(f.text_cache, normalize_rows_backward(f.text, g.at("f_txt")), params));
  accumulate(r.gradients, image_backward(f.image_cache, normalize_rows_backward(f.image, g.at("f_img")), params));
  copy_prefixed(g, "itm.", r.gradients);
  copy_prefixed(g, "fitc.", r.gradients);
  return r;
}

}  // namespace

LossResult vehicle_step(const ParamSet& params, const VehicleBatch& batch, const LossConfig& config,
                        std::span<const ItmPair> pairs) {
  const auto f = vehicle_forward(params, batch);
  const VehicleInputs in{f.text.normalized, f.image.normalized, batch.tags};
  return vehicle_backward(params, f, vehicle_objective(in, params, config, pairs));
}

LossResult vehicle_step(const ParamSet& params, const VehicleBatch& batch, const LossConfig& config, Rng& rng) {
  const auto f = vehicle_forward(params, batch);
  const VehicleInputs in{f.text.normalized, f.image.normalized, batch.tags};
  return vehicle_backward(params, f, vehicle_objective(in, params, config, rng));
}

// ---------------------------------------------------------------------------

Json RunRecord::to_json() const {
  Json epochs_json = Json::array();
  for (const auto& e : epochs) {
    Json components = Json::object();
    for (const auto& [k, v] : e.components) components[k] = v;
    epochs_json.push_back({{"epoch", e.epoch}, {"batches", e.batches}, {"total", e.total}, {"components", components}});
  }
  return {{"config_hash", config_hash},
          {"dataset_hash", dataset_hash},
          {"epochs", epochs_json}};
}

namespace {

void require_finite(const LossResult& r, int epoch) {
  bool ok = std::isfinite(r.value);
  for (const auto& [name, g] : r.gradients) ok = ok && g.all_finite();
  if (!ok) {
    throw Error(ErrorCode::DivergedLoss, "non-finite loss or gradient in epoch " + std::to_string(epoch));
  }
}

struct EpochAccumulator {
  EpochRecord record;
  void add(const LossResult& r) {
    ++record.batches;
    record.total += r.value;
    for (const auto& [k, v] : r.components) record.components[k] += v;
  }
  EpochRecord finish() {
    if (record.batches > 0) {
      const double n = record.batches;
      record.total /= n;
      for (auto& [k, v] : record.components) v /= n;
    }
    return record;
  }
};

template <class Step>
TrainResult run_epochs(const TrainConfig& config, ParamSet params, std::size_t sample_count,
                       const std::string& dataset_hash, Step&& step) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const Rng root(config.seed);
  AdamState adam;
  TrainResult result;
  result.record.config_hash = config.hash();
  result.record.dataset_hash = dataset_hash;
  const auto batch = static_cast<std::size_t>(config.batch_size);
  if (config.epochs > 0 && sample_count < batch) {
    throw Error(ErrorCode::ConfigInvalid, "fewer training samples than one batch");
  }

  std::vector<std::size_t> order(sample_count);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = root.child("shuffle", static_cast<std::uint64_t>(epoch));
    shuffle.shuffle(order);
    EpochAccumulator acc;
    acc.record.epoch = epoch;
    // the trailing partial batch is dropped
    for (std::size_t b = 0; b + batch <= sample_count; b += batch) {
      const std::span<const std::size_t> indices(order.data() + b, batch);
      Rng batch_rng = root.child("batch", static_cast<std::uint64_t>(epoch)).child(b / batch);
      LossResult r = step(params, indices, batch_rng);
      require_finite(r, epoch);
      adam_step(params, r.gradients, adam, config.adam);
      Matrix& tau = params.mutable_at("fitc.tau");
      tau[0] = std::max(tau[0], config.loss.tau_fitc_floor);
      acc.add(r);
    }
    result.record.epochs.push_back(acc.finish());
  }
  result.params = std::move(params);
  result.record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const PedestrianDataset& data, const std::string& dataset_hash) {
  if (config.task != Task::Pedestrian) throw Error(ErrorCode::TaskDatasetMismatch, "vehicle config on pedestrian data");
  ModelConfig model = config.model;
  model.attribute_count = data.config.attribute_count;
  model.image_dim = data.config.feature_dim;
  const int q = data.config.attribute_count;
  return run_epochs(config, init_params(model, config.seed), data.train.size(), dataset_hash,
                    [&](const ParamSet& params, std::span<const std::size_t> indices, Rng& rng) {
                      std::vector<const PedestrianSample*> samples;
                      for (auto i : indices) samples.push_back(&data.train[i]);
                      const auto batch = make_pedestrian_batch(samples, q, rng);
                      return pedestrian_step(params, batch, config.loss, config.irm_targets);
                    });
}

TrainResult train(const TrainConfig& config, const VehicleDataset& data, const std::string& dataset_hash) {
  if (config.task != Task::Vehicle) throw Error(ErrorCode::TaskDatasetMismatch, "pedestrian config on vehicle data");
  ModelConfig model = config.model;
  model.image_dim = kImageFeatureDim;
  std::vector<std::vector<double>> features;
  features.reserve(data.train.size());
  for (const auto& s : data.train) features.push_back(vehicle_features(s, data.config.palette, config.augment));
  return run_epochs(config, init_params(model, config.seed), data.train.size(), dataset_hash,
                    [&](const ParamSet& params, std::span<const std::size_t> indices, Rng& rng) {
                      std::vector<const VehicleSample*> samples;
                      std::vector<const std::vector<double>*> rows;
                      for (auto i : indices) {
                        samples.push_back(&data.train[i]);
                        rows.push_back(&features[i]);
                      }
                      return vehicle_step(params, make_vehicle_batch(samples, rows), config.loss, rng);
                    });
}

// ---------------------------------------------------------------------------

void save_checkpoint(const fs::path& dir, const ParamSet& params, const Json& meta) {
  fs::create_directories(dir);
  Json tensors = Json::array();
  for (const auto& name : params.names()) {
    const Matrix& t = params.at(name);
    const auto bytes = encode_f64(t.values());
    const std::string file = name + ".f64";
    write_bytes(dir / file, bytes);
    tensors.push_back({{"name", name},
                       {"rows", t.rows()},
                       {"cols", t.cols()},
                       {"file", file},
                       {"sha256", sha256_hex(bytes)}});
  }
  const Json manifest = {{"format", "xmr-checkpoint-v1"}, {"meta", meta}, {"tensors", tensors}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(ErrorCode::CorruptCheckpoint, "missing " + manifest_path.string());
  Json manifest;
  try {
    manifest = Json::parse(read_text(manifest_path));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("unreadable manifest: ") + e.what());
  }
  if (!manifest.is_object() || manifest.value("format", "") != "xmr-checkpoint-v1" ||
      !manifest.contains("tensors") || !manifest.at("tensors").is_array()) {
    throw Error(ErrorCode::CorruptCheckpoint, "manifest is not an xmr checkpoint");
  }
  Checkpoint ck;
  ck.meta = manifest.value("meta", Json::object());
  try {
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto file = t.at("file").get<std::string>();
      if (file.find('/') != std::string::npos || file.find("..") != std::string::npos) {
        throw Error(ErrorCode::CorruptCheckpoint, "tensor file escapes the checkpoint directory");
      }
      if (!fs::exists(dir / file)) throw Error(ErrorCode::CorruptCheckpoint, "missing tensor file " + file);
      const auto bytes = read_bytes(dir / file);
      if (sha256_hex(bytes) != t.at("sha256").get<std::string>()) {
        throw Error(ErrorCode::CorruptCheckpoint, "hash mismatch for tensor '" + name + "'");
      }
      const auto rows = t.at("rows").get<std::size_t>();
      const auto cols = t.at("cols").get<std::size_t>();
      auto values = decode_f64(bytes);
      if (values.size() != rows * cols) throw Error(ErrorCode::CorruptCheckpoint, "tensor '" + name + "' has the wrong size");
      ck.params.add(name, Matrix(rows, cols, std::move(values)));
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::CorruptCheckpoint, std::string("malformed manifest entry: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::CorruptCheckpoint) throw;
    throw Error(ErrorCode::CorruptCheckpoint, e.what());
  }
  return ck;
}

}  // namespace xmr
