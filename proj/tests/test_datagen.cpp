// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <set>

#include "doctest.h"
#include "test_util.hpp"
#include "xmr/augment.hpp"
#include "xmr/dataset_io.hpp"
#include "xmr/io.hpp"

using namespace xmr;
using xmr::test::code_of;

namespace {

const AttributeVocabulary& attrs() {
  static const auto a = AttributeVocabulary::standard();
  return a;
}

AttributeSet named(std::initializer_list<const char*> names) {
  AttributeSet s;
  for (const char* n : names) s.set(*attrs().index_of(n));
  return s;
}

PedestrianConfig small_ped() {
  PedestrianConfig c;
  c.train_size = 64;
  c.query_count = 40;
  c.gallery_size = 48;
  return c;
}

VehicleConfig small_veh() {
  VehicleConfig c;
  c.train_size = 40;
  c.query_count = 16;
  c.gallery_size = 20;
  return c;
}

}  // namespace

TEST_CASE("vocabulary and tokenizer") {
  const auto& v = Vocabulary::standard();
  CHECK(v.word(Vocabulary::kMask) == "<mask>");
  CHECK(tokenize("A man wearing glasses.") == std::vector<std::string>{"a", "man", "wearing", "glasses"});
  CHECK(v.decode(v.encode({"a", "white", "audi"})) == std::vector<std::string>{"a", "white", "audi"});
  CHECK(code_of([&] { v.id("zebra"); }) == ErrorCode::UnknownToken);
  std::set<std::string> unique;
  for (std::size_t i = 0; i < v.size(); ++i) unique.insert(v.word(static_cast<TokenId>(i)));
  CHECK(unique.size() == v.size());
}

TEST_CASE("attribute vocabulary") {
  CHECK(attrs().size() == 12);
  CHECK(attrs().at(0).name == "glasses");
  CHECK(attrs().at(11).name == "umbrella");
  CHECK(AttributeVocabulary::standard(4).size() == 4);
}

TEST_CASE("attribute sets") {
  const auto s = named({"glasses", "umbrella"});
  CHECK(s.count() == 2);
  CHECK(AttributeSet::from_hex(s.to_hex()) == s);
  CHECK(named({"glasses"}).subset_of(s));
  CHECK_FALSE(s.subset_of(named({"glasses"})));
  CHECK(AttributeSet{}.subset_of(s));
}

TEST_CASE("captions from attributes") {
  CHECK(caption_from_attributes(named({"glasses"}), attrs()) ==
        std::vector<std::string>{"a", "man", "wearing", "glasses"});
  CHECK(join_words(caption_from_attributes(named({"long-sleeves", "glasses"}), attrs())) ==
        "a man wearing glasses and long sleeves");
  CHECK(code_of([] { caption_from_attributes(AttributeSet{}, attrs()); }) == ErrorCode::EmptyAttributeSet);
}

TEST_CASE("masking one attribute") {
  const auto& v = Vocabulary::standard();
  const auto caption = named({"glasses", "long-sleeves"});
  const auto m = mask_attribute(caption, *attrs().index_of("long-sleeves"), attrs());
  CHECK(m.target == v.id("long"));
  const auto words = v.decode(m.tokens);
  CHECK(words == std::vector<std::string>{"a", "man", "wearing", "glasses", "and", "<mask>", "<mask>"});
  CHECK(code_of([&] { mask_attribute(caption, *attrs().index_of("hat"), attrs()); }) == ErrorCode::NoMaskPresent);
}

TEST_CASE("pedestrian dataset invariants") {
  const auto cfg = small_ped();
  const auto ds = generate_pedestrian_dataset(cfg, 42);
  CHECK(ds.train.size() == 64);
  CHECK(ds.gallery.size() == 48);
  CHECK(ds.queries.size() == 40);

  std::set<ImageId> train_ids;
  for (const auto& s : ds.train) train_ids.insert(s.id);
  std::map<ImageId, const PedestrianSample*> gallery;
  for (const auto& s : ds.gallery) {
    CHECK_FALSE(train_ids.contains(s.id));
    gallery[s.id] = &s;
  }
  for (const auto* set : {&ds.train, &ds.gallery})
    for (const auto& s : *set) {
      CHECK(s.image_features.size() == 48);
      CHECK(s.image_attributes.count() >= 2);
      CHECK(s.image_attributes.count() <= 5);
      CHECK_FALSE(s.caption_attributes.empty());
      CHECK(s.caption_attributes.subset_of(s.image_attributes));
    }
  for (const auto& q : ds.queries) {
    REQUIRE_FALSE(q.ground_truth.empty());
    CHECK(std::is_sorted(q.ground_truth.begin(), q.ground_truth.end()));
    const auto& paired = *gallery.at(q.paired_image);
    CHECK(q.tokens == paired.caption_tokens);
    CHECK(q.strict_subset == (paired.caption_attributes != paired.image_attributes));
    for (const auto& [id, s] : gallery) {
      const bool listed = std::binary_search(q.ground_truth.begin(), q.ground_truth.end(), id);
      CHECK(listed == paired.caption_attributes.subset_of(s->image_attributes));
    }
  }
}

TEST_CASE("pedestrian strict-subset fraction") {
  PedestrianConfig cfg;
  cfg.query_count = 1000;
  cfg.gallery_size = 1000;
  cfg.train_size = 8;
  const auto ds = generate_pedestrian_dataset(cfg, 3);
  int strict = 0;
  for (const auto& q : ds.queries) strict += q.strict_subset;
  CHECK(strict > 250);
  CHECK(strict < 350);

  cfg.strict_subset_fraction = 0.0;
  for (const auto& q : generate_pedestrian_dataset(cfg, 3).queries) CHECK_FALSE(q.strict_subset);
}

TEST_CASE("pedestrian features follow the mixing model") {
  auto cfg = small_ped();
  cfg.feature_noise = 0.0;
  const auto ds = generate_pedestrian_dataset(cfg, 5);
  // without noise, equal attribute sets give equal features
  for (const auto& a : ds.train)
    for (const auto& b : ds.train)
      if (a.image_attributes == b.image_attributes) CHECK(a.image_features == b.image_features);
}

TEST_CASE("generator config validation") {
  auto cfg = small_ped();
  cfg.train_size = 4;
  CHECK(code_of([&] { generate_pedestrian_dataset(cfg, 1); }) == ErrorCode::ConfigInvalid);
  Json j = small_ped().to_json();
  CHECK(PedestrianConfig::from_json(j).to_json() == j);
  j["feature_nosie"] = 0.2;
  CHECK(code_of([&] { PedestrianConfig::from_json(j); }) == ErrorCode::ConfigInvalid);

  auto v = small_veh();
  v.types.resize(1);
  CHECK(code_of([&] { generate_vehicle_dataset(v, 1); }) == ErrorCode::ConfigInvalid);
  Json vj = small_veh().to_json();
  CHECK(VehicleConfig::from_json(vj).to_json() == vj);
}

TEST_CASE("vehicle samples") {
  const auto cfg = small_veh();
  const auto& p = cfg.palette;
  const int white = *p.id_of("white");
  const VehicleTag tag{white, 0};
  CHECK(vehicle_caption(tag, cfg) == std::vector<std::string>{"a", "white", "audi"});

  const auto a = generate_vehicle_sample(cfg, tag, Rng(9).child("x", 3), 1);
  const auto b = generate_vehicle_sample(cfg, tag, Rng(9).child("x", 3), 1);
  CHECK(a.image == b.image);

  auto quiet = cfg;
  quiet.noise = 0;
  const auto s = generate_vehicle_sample(quiet, tag, Rng(1), 1);
  const auto& shape = quiet.types[0];
  const Rect body{s.bbox.x, s.bbox.y + shape.cabin_height, shape.body_width, shape.body_height};
  for (int y = body.y; y < body.y + body.height; ++y)
    for (int x = body.x; x < body.x + body.width; ++x)
      if (y < body.y + body.height) CHECK(s.image.at(x, y) == Rgb{240, 240, 240});
  // the prompt corner is left to the background
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) CHECK_FALSE(s.bbox.contains(x, y));
}

TEST_CASE("vehicle dataset invariants") {
  auto cfg = small_veh();
  cfg.train_size = 400;
  const auto ds = generate_vehicle_dataset(cfg, 11);
  int confusable = 0;
  for (const auto& s : ds.train) {
    CHECK(cfg.palette.nearest(s.true_body_color).id == s.tag.color_id);
    CHECK(Vocabulary::standard().decode(s.caption_tokens) == vehicle_caption(s.tag, cfg));
    confusable += is_confusable_color(cfg.palette, s.tag.color_id);
    // at least half of the body rectangle is within the noise radius of the paint
    const auto& shape = cfg.types[static_cast<std::size_t>(s.tag.type_id)];
    int close = 0;
    int total = 0;
    for (int y = 0; y < shape.body_height; ++y)
      for (int x = 0; x < shape.body_width; ++x) {
        const Rgb c = s.image.at(s.bbox.x + x, s.bbox.y + shape.cabin_height + y);
        const Rgb t = s.true_body_color;
        ++total;
        close += std::abs(c.r - t.r) <= cfg.noise && std::abs(c.g - t.g) <= cfg.noise &&
                 std::abs(c.b - t.b) <= cfg.noise;
      }
    CHECK(2 * close >= total);
  }
  CHECK(confusable > 120);
  CHECK(confusable < 200);

  std::map<ImageId, VehicleTag> gallery;
  for (const auto& s : ds.gallery) gallery[s.id] = s.tag;
  for (const auto& q : ds.queries) {
    REQUIRE_FALSE(q.ground_truth.empty());
    const auto want = gallery.at(q.paired_image);
    CHECK(q.confusable == is_confusable_color(cfg.palette, want.color_id));
    for (const auto& [id, t] : gallery)
      CHECK(std::binary_search(q.ground_truth.begin(), q.ground_truth.end(), id) == (t == want));
  }
}

TEST_CASE("datasets on disk") {
  const auto dir = xmr::test::scratch_dir("datasets");
  const auto ped = generate_pedestrian_dataset(small_ped(), 42);
  save_dataset(dir / "p1", ped);
  save_dataset(dir / "p2", generate_pedestrian_dataset(small_ped(), 42));
  CHECK(dataset_hash(dir / "p1") == dataset_hash(dir / "p2"));
  save_dataset(dir / "p3", generate_pedestrian_dataset(small_ped(), 43));
  CHECK(dataset_hash(dir / "p1") != dataset_hash(dir / "p3"));
  CHECK(dataset_task(dir / "p1") == Task::Pedestrian);

  const auto loaded = std::get<PedestrianDataset>(load_dataset(dir / "p1"));
  REQUIRE(loaded.train.size() == ped.train.size());
  for (std::size_t i = 0; i < ped.train.size(); ++i) {
    CHECK(loaded.train[i].id == ped.train[i].id);
    CHECK(loaded.train[i].image_features == ped.train[i].image_features);
    CHECK(loaded.train[i].caption_tokens == ped.train[i].caption_tokens);
    CHECK(loaded.train[i].image_attributes == ped.train[i].image_attributes);
    CHECK(loaded.train[i].caption_attributes == ped.train[i].caption_attributes);
  }
  REQUIRE(loaded.queries.size() == ped.queries.size());
  for (std::size_t i = 0; i < ped.queries.size(); ++i) {
    CHECK(loaded.queries[i].ground_truth == ped.queries[i].ground_truth);
    CHECK(loaded.queries[i].strict_subset == ped.queries[i].strict_subset);
  }
  save_dataset(dir / "p4", loaded);
  CHECK(dataset_hash(dir / "p4") == dataset_hash(dir / "p1"));

  // a flipped feature byte is caught by the manifest hash
  auto bytes = read_bytes(dir / "p1" / "features.f64");
  bytes[17] ^= 0x01;
  write_bytes(dir / "p1" / "features.f64", bytes);
  CHECK(code_of([&] { load_dataset(dir / "p1"); }) == ErrorCode::Io);

  const auto veh = generate_vehicle_dataset(small_veh(), 7);
  save_dataset(dir / "v1", veh);
  save_dataset(dir / "v2", generate_vehicle_dataset(small_veh(), 7));
  CHECK(dataset_hash(dir / "v1") == dataset_hash(dir / "v2"));
  CHECK(dataset_task(dir / "v1") == Task::Vehicle);
  const auto vl = std::get<VehicleDataset>(load_dataset(dir / "v1"));
  REQUIRE(vl.gallery.size() == veh.gallery.size());
  for (std::size_t i = 0; i < veh.gallery.size(); ++i) {
    CHECK(vl.gallery[i].image == veh.gallery[i].image);
    CHECK(vl.gallery[i].tag == veh.gallery[i].tag);
    CHECK(vl.gallery[i].bbox == veh.gallery[i].bbox);
  }
  CHECK(vl.config.to_json() == veh.config.to_json());
}
