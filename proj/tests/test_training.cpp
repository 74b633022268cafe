// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "xmr/io.hpp"
#include "xmr/training.hpp"

using namespace xmr;
using xmr::test::code_of;
using xmr::test::scratch_dir;

namespace {

PedestrianDataset small_ped(std::uint64_t seed = 42) {
  PedestrianConfig c;
  c.train_size = 64;
  c.query_count = 16;
  c.gallery_size = 32;
  return generate_pedestrian_dataset(c, seed);
}

VehicleDataset small_veh(std::uint64_t seed = 42) {
  VehicleConfig c;
  c.train_size = 48;
  c.query_count = 8;
  c.gallery_size = 16;
  return generate_vehicle_dataset(c, seed);
}

TrainConfig quick(Task task, int epochs = 2) {
  auto c = TrainConfig::defaults(task);
  c.epochs = epochs;
  c.batch_size = 16;
  return c;
}

}  // namespace

TEST_CASE("adam minimizes a quadratic") {
  ParamSet p;
  p.add("x", Matrix(1, 1, 1.0));
  AdamState state;
  const AdamHyper hyper{0.1, 0.9, 0.999, 1e-8};
  for (int t = 0; t < 500; ++t) {
    const double x = p.at("x")[0];
    adam_step(p, {{"x", Matrix(1, 1, 2 * x)}}, state, hyper);
  }
  CHECK(std::abs(p.at("x")[0]) < 1e-3);
  CHECK(state.step == 500);
}

TEST_CASE("adam first step has size lr") {
  ParamSet p;
  p.add("x", Matrix{{1.0, -2.0}});
  AdamState state;
  adam_step(p, {{"x", Matrix{{3.0, -0.001}}}}, state, AdamHyper{0.01});
  CHECK(p.at("x")(0, 0) == doctest::Approx(0.99));
  CHECK(p.at("x")(0, 1) == doctest::Approx(-1.99));
}

TEST_CASE("adam with zero gradient") {
  ParamSet p;
  p.add("x", Matrix{{0.5, 0.25}});
  p.add("y", Matrix{{7.0}});
  const auto before = p;
  AdamState state;
  adam_step(p, {{"x", Matrix(1, 2)}}, state, AdamHyper{});
  CHECK(p == before);
  CHECK(state.step == 1);
  CHECK(code_of([&] { adam_step(p, {{"x", Matrix(2, 2)}}, state, AdamHyper{}); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("train config json") {
  auto c = TrainConfig::defaults(Task::Vehicle);
  CHECK(c.epochs == 20);
  CHECK(TrainConfig::defaults(Task::Pedestrian).epochs == 30);
  c.augment = false;
  c.seed = 9;
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  c.seed = 10;
  CHECK(back.hash() != c.hash());

  CHECK(TrainConfig::from_json(Json{{"task", "ped"}}).epochs == 30);
  CHECK(code_of([] { TrainConfig::from_json(Json{{"epochs", 3}}); }) == ErrorCode::ConfigInvalid);
  CHECK(code_of([] { TrainConfig::from_json(Json{{"task", "veh"}, {"epohcs", 3}}); }) == ErrorCode::ConfigInvalid);
  auto bad = TrainConfig::defaults(Task::Pedestrian);
  bad.batch_size = 1;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("checkpoints round trip bitwise") {
  const auto dir = scratch_dir("ckpt");
  auto params = init_params(ModelConfig::standard(), 3);
  params.mutable_at("text.b")[0] = -0.0;
  params.mutable_at("text.b")[1] = 1e-310;
  save_checkpoint(dir / "a", params, Json{{"note", "x"}});
  const auto ck = load_checkpoint(dir / "a");
  CHECK(ck.params == params);
  CHECK(std::signbit(ck.params.at("text.b")[0]));
  CHECK(ck.meta.at("note") == "x");

  save_checkpoint(dir / "b", params, Json{{"note", "x"}});
  for (const auto& name : params.names())
    CHECK(read_bytes(dir / "a" / (name + ".f64")) == read_bytes(dir / "b" / (name + ".f64")));
  CHECK(read_bytes(dir / "a" / "manifest.json") == read_bytes(dir / "b" / "manifest.json"));
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto dir = scratch_dir("ckpt_bad");
  const auto params = init_params(ModelConfig::standard(), 3);
  save_checkpoint(dir, params);
  auto bytes = read_bytes(dir / "image.w1.f64");
  bytes[100] ^= 0x20;
  write_bytes(dir / "image.w1.f64", bytes);
  CHECK(code_of([&] { load_checkpoint(dir); }) == ErrorCode::CorruptCheckpoint);

  save_checkpoint(dir, params);
  std::filesystem::remove(dir / "manifest.json");
  CHECK(code_of([&] { load_checkpoint(dir); }) == ErrorCode::CorruptCheckpoint);

  save_checkpoint(dir, params);
  std::filesystem::remove(dir / "attr.b.f64");
  CHECK(code_of([&] { load_checkpoint(dir); }) == ErrorCode::CorruptCheckpoint);

  save_checkpoint(dir, params);
  std::ofstream(dir / "manifest.json") << "{\"format\": \"xmr-checkpoint-v1\"";
  CHECK(code_of([&] { load_checkpoint(dir); }) == ErrorCode::CorruptCheckpoint);
}

TEST_CASE("zero epochs leaves the initialization") {
  const auto data = small_ped();
  auto c = quick(Task::Pedestrian, 0);
  c.seed = 5;
  auto model = c.model;
  model.attribute_count = data.config.attribute_count;
  model.image_dim = data.config.feature_dim;
  const auto r = train(c, data);
  CHECK(r.params == init_params(model, 5));
  CHECK(r.record.epochs.empty());
}

TEST_CASE("training is deterministic") {
  const auto data = small_ped();
  const auto a = train(quick(Task::Pedestrian), data, "h");
  const auto b = train(quick(Task::Pedestrian), data, "h");
  CHECK(a.params == b.params);
  REQUIRE(a.record.epochs.size() == 2);
  CHECK(a.record.epochs[1].total == b.record.epochs[1].total);
  CHECK(a.record.epochs[0].batches == 4);
  CHECK(a.record.dataset_hash == "h");
  CHECK(a.record.config_hash == quick(Task::Pedestrian).hash());

  const auto vd = small_veh();
  const auto va = train(quick(Task::Vehicle), vd);
  const auto vb = train(quick(Task::Vehicle), vd);
  CHECK(va.params == vb.params);
  CHECK(va.record.epochs[0].components.contains("fitc"));
}

TEST_CASE("pedestrian loss goes down") {
  PedestrianConfig dc;
  dc.train_size = 256;
  dc.query_count = 8;
  dc.gallery_size = 16;
  const auto data = generate_pedestrian_dataset(dc, 1);
  auto c = TrainConfig::defaults(Task::Pedestrian);
  c.epochs = 10;
  const auto r = train(c, data);
  CHECK(r.record.epochs.back().total < r.record.epochs.front().total);
}

TEST_CASE("fitc temperature stays above its floor") {
  auto c = quick(Task::Vehicle, 3);
  c.adam.lr = 0.05;
  const auto r = train(c, small_veh());
  CHECK(r.params.at("fitc.tau")[0] >= c.loss.tau_fitc_floor);
}

TEST_CASE("task and dataset must agree") {
  CHECK(code_of([] { train(quick(Task::Vehicle), small_ped()); }) == ErrorCode::TaskDatasetMismatch);
  CHECK(code_of([] { train(quick(Task::Pedestrian), small_veh()); }) == ErrorCode::TaskDatasetMismatch);
  auto big = quick(Task::Pedestrian);
  big.batch_size = 128;
  CHECK(code_of([&] { train(big, small_ped()); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("divergence is reported") {
  auto c = quick(Task::Pedestrian, 3);
  c.adam.lr = 1e300;
  CHECK(code_of([&] { train(c, small_ped()); }) == ErrorCode::DivergedLoss);
}

TEST_CASE("vehicle features carry the color prompt") {
  const auto data = small_veh();
  const auto& s = data.train.front();
  const auto raw = vehicle_features(s, data.config.palette, false);
  const auto patched = vehicle_features(s, data.config.palette, true);
  CHECK(raw == image_to_features(s.image));
  CHECK(raw != patched);
  const Rgb c = dominant_color(s.image, data.config.palette, s.bbox).rgb;
  // first block of the red channel is the painted corner
  CHECK(patched[0] == doctest::Approx(c.r / 255.0));
}
