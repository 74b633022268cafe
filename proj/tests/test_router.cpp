// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"
#include "test_util.hpp"
#include "xmr/augment.hpp"
#include "xmr/datagen.hpp"
#include "xmr/router.hpp"

using namespace xmr;
using xmr::test::code_of;

namespace {

std::vector<LabeledCaption> captions(std::uint64_t seed, int per_domain) {
  PedestrianConfig pc;
  pc.train_size = per_domain;
  pc.query_count = 8;
  pc.gallery_size = 8;
  VehicleConfig vc;
  vc.train_size = per_domain;
  vc.query_count = 8;
  vc.gallery_size = 8;
  const auto& v = Vocabulary::standard();
  std::vector<LabeledCaption> out;
  for (const auto& s : generate_pedestrian_dataset(pc, seed).train)
    out.push_back({v.decode(s.caption_tokens), Domain::Pedestrian});
  for (const auto& s : generate_vehicle_dataset(vc, seed).train)
    out.push_back({v.decode(s.caption_tokens), Domain::Vehicle});
  return out;
}

const LinearClassifier& text_classifier() {
  static const auto c = train_router_classifier(captions(1, 300));
  return c;
}

}  // namespace

TEST_CASE("domain names") {
  CHECK(domain_name(Domain::Vehicle) == "veh");
  CHECK(parse_domain("ped") == Domain::Pedestrian);
  CHECK(code_of([] { parse_domain("cat"); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("keyword rules") {
  const auto rules = RuleSet::standard();
  rules.validate();
  CHECK(rules.pedestrian_keywords.contains("glasses"));
  CHECK(rules.vehicle_keywords.contains("audi"));
  CHECK_FALSE(rules.vehicle_keywords.contains("white"));
  auto overlap = rules;
  overlap.vehicle_keywords.insert("hat");
  CHECK(code_of([&] { overlap.validate(); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("text routing examples") {
  const auto rules = RuleSet::standard();
  const auto& c = text_classifier();
  const auto ped = route_text(tokenize("A man wearing glasses."), rules, c);
  CHECK(ped.domain == Domain::Pedestrian);
  CHECK(ped.source == RouteSource::Rule);
  const auto veh = route_text(tokenize("white audi"), rules, c);
  CHECK(veh.domain == Domain::Vehicle);
  CHECK(veh.source == RouteSource::Rule);
  CHECK(code_of([&] { route_text({}, rules, c); }) == ErrorCode::EmptyQuery);

  const auto neither = route_text({"a", "white"}, rules, c);
  CHECK(neither.source == RouteSource::Classifier);
  CHECK(neither.domain == Domain::Vehicle);
  const auto both = route_text({"man", "audi"}, rules, c);
  CHECK(both.source == RouteSource::Classifier);
  CHECK(route_text({"zzz"}, rules, c).domain == Domain::Pedestrian);
}

TEST_CASE("every templated caption routes by rule") {
  const auto rules = RuleSet::standard();
  for (const auto& lc : captions(7, 500)) {
    const auto d = route_text(lc.words, rules, text_classifier());
    CHECK(d.source == RouteSource::Rule);
    CHECK(d.domain == lc.domain);
  }
}

TEST_CASE("classifier generalizes to held-out captions") {
  const auto held = captions(99, 500);
  int right = 0;
  for (const auto& lc : held) right += text_classifier().decide(bag_of_words(lc.words)).domain == lc.domain;
  CHECK(static_cast<double>(right) / static_cast<double>(held.size()) >= 0.99);
}

TEST_CASE("logistic regression") {
  Matrix x{{1, 0}, {2, 0.5}, {0, 1}, {0.5, 2}};
  const std::vector<bool> y{true, true, false, false};
  const auto c = train_logistic(x, y, {});
  CHECK(c.trained);
  for (std::size_t i = 0; i < 4; ++i) CHECK(c.decide(x.row(i)).domain == (y[i] ? Domain::Vehicle : Domain::Pedestrian));
  CHECK(train_logistic(x, y, {}).weights == c.weights);
  LogisticOptions other;
  other.seed = 1;
  CHECK(train_logistic(x, y, other).weights != c.weights);

  CHECK(code_of([&] { train_logistic(x, {true, true, true, true}, {}); }) == ErrorCode::SingleClassData);
  CHECK(code_of([&] { train_logistic(x, {true, false}, {}); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { c.decide(std::vector<double>{1.0}); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([] { LinearClassifier{}.decide(std::vector<double>{1.0}); }) == ErrorCode::UntrainedClassifier);

  const auto zero = c.decide(std::vector<double>{0.0, 0.0});
  CHECK(zero.domain == Domain::Pedestrian);
  CHECK(zero.confidence == doctest::Approx(0.5));

  const auto back = classifier_from_json(classifier_to_json(c));
  CHECK(back.weights == c.weights);
}

TEST_CASE("bag of words") {
  const auto& v = Vocabulary::standard();
  const auto b = bag_of_words({"a", "a", "audi", "zebra"});
  CHECK(b.size() == v.size());
  CHECK(b[static_cast<std::size_t>(v.id("a"))] == 2.0);
  CHECK(b[static_cast<std::size_t>(v.id("audi"))] == 1.0);
  double total = 0;
  for (double x : b) total += x;
  CHECK(total == 3.0);
}

TEST_CASE("image routing") {
  PedestrianConfig pc;
  pc.train_size = 1000;
  pc.query_count = 8;
  pc.gallery_size = 1000;
  VehicleConfig vc;
  vc.train_size = 1000;
  vc.query_count = 8;
  vc.gallery_size = 1000;
  const auto ped = generate_pedestrian_dataset(pc, 3);
  const auto veh = generate_vehicle_dataset(vc, 3);

  Matrix x(400, kImageFeatureDim);
  std::vector<Domain> d;
  for (std::size_t i = 0; i < 200; ++i) {
    std::copy(ped.train[i].image_features.begin(), ped.train[i].image_features.end(), x.row(i).begin());
    const auto f = image_to_features(veh.train[i].image);
    std::copy(f.begin(), f.end(), x.row(200 + i).begin());
    d.push_back(Domain::Pedestrian);
  }
  d.resize(400, Domain::Vehicle);
  const auto c = train_image_classifier(x, d);

  int right = 0;
  for (const auto& s : ped.gallery) right += route_image(s.image_features, c).domain == Domain::Pedestrian;
  for (const auto& s : veh.gallery) right += route_image(image_to_features(s.image), c).domain == Domain::Vehicle;
  CHECK(right == 2000);
  CHECK(route_image(std::vector<double>(kImageFeatureDim, 0.0), c).confidence == doctest::Approx(0.5));
  CHECK(code_of([] { route_image(std::vector<double>(kImageFeatureDim), LinearClassifier{}); }) ==
        ErrorCode::UntrainedClassifier);
}
