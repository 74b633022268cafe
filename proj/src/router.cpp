// SPDX-License-Identifier: Apache-2.0
#include "xmr/router.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xmr/augment.hpp"
#include "xmr/datagen.hpp"
#include "xmr/error.hpp"

namespace xmr {

std::string_view domain_name(Domain d) { return d == Domain::Pedestrian ? "ped" : "veh"; }

Domain parse_domain(std::string_view name) {
  if (name == "ped") return Domain::Pedestrian;
  if (name == "veh") return Domain::Vehicle;
  throw Error(ErrorCode::ConfigInvalid, "unknown domain '" + std::string(name) + "'");
}

RuleSet RuleSet::standard() {
  RuleSet r;
  for (const char* w : {"man", "woman", "person", "wearing"}) r.pedestrian_keywords.emplace(w);
  const auto attrs = AttributeVocabulary::standard();
  for (int k = 0; k < attrs.size(); ++k)
    for (const auto& w : attrs.at(k).phrase)
      if (w != "a" && w != "an") r.pedestrian_keywords.insert(w);
  for (const auto& t : VehicleConfig::default_vehicle_types()) r.vehicle_keywords.insert(t.name);
  for (const char* w : {"car", "vehicle"}) r.vehicle_keywords.emplace(w);
  r.validate();
  return r;
}

void RuleSet::validate() const {
  for (const auto& w : pedestrian_keywords)
    if (vehicle_keywords.contains(w)) throw Error(ErrorCode::ConfigInvalid, "keyword '" + w + "' is in both sets");
}

Json RouteDecision::to_json() const {
  return {{"domain", domain_name(domain)},
          {"source", source == RouteSource::Rule ? "rule" : "classifier"},
          {"confidence", confidence}};
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

double LinearClassifier::margin(std::span<const double> x) const {
  if (!trained) throw Error(ErrorCode::UntrainedClassifier, "classifier has not been trained");
  if (x.size() != weights.size()) {
    throw Error(ErrorCode::DimensionMismatch, "classifier expects " + std::to_string(weights.size()) +
                                                  " features, got " + std::to_string(x.size()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m += weights[i] * x[i];
  return m;
}

RouteDecision LinearClassifier::decide(std::span<const double> x) const {
  const double m = margin(x);
  RouteDecision d;
  d.source = RouteSource::Classifier;
  d.domain = m > 0.0 ? Domain::Vehicle : Domain::Pedestrian;
  d.confidence = sigmoid(std::abs(m));
  return d;
}

LinearClassifier train_logistic(const Matrix& x, const std::vector<bool>& vehicle, const LogisticOptions& options) {
  if (x.rows() != vehicle.size()) throw Error(ErrorCode::DimensionMismatch, "one label per row required");
  std::size_t positives = 0;
  for (bool v : vehicle) positives += v ? 1 : 0;
  if (positives == 0 || positives == vehicle.size()) {
    throw Error(ErrorCode::SingleClassData, "classifier training needs both domains");
  }
  LinearClassifier c;
  c.trained = true;
  c.weights.resize(x.cols());
  Rng rng = Rng(options.seed).child("logistic");
  for (auto& w : c.weights) w = rng.uniform(-0.01, 0.01);

  const double n = static_cast<double>(x.rows());
  double previous = std::numeric_limits<double>::infinity();
  std::vector<double> grad(x.cols());
  for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto row = x.row(r);
      const double m = c.margin(row);
      const double y = vehicle[r] ? 1.0 : 0.0;
      loss += softplus(m) - y * m;
      const double g = sigmoid(m) - y;
      for (std::size_t i = 0; i < row.size(); ++i) grad[i] += g * row[i];
    }
    loss /= n;
    if (std::abs(previous - loss) < options.tolerance) break;
    previous = loss;
    for (std::size_t i = 0; i < grad.size(); ++i) c.weights[i] -= options.learning_rate * grad[i] / n;
  }
  return c;
}

std::vector<double> bag_of_words(const std::vector<std::string>& words) {
  const auto& vocab = Vocabulary::standard();
  std::vector<double> counts(vocab.size(), 0.0);
  for (const auto& w : words)
    if (const auto id = vocab.find(w)) counts[static_cast<std::size_t>(*id)] += 1.0;
  return counts;
}

LinearClassifier train_router_classifier(std::span<const LabeledCaption> captions, const LogisticOptions& options) {
  Matrix x(captions.size(), Vocabulary::standard().size());
  std::vector<bool> labels;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto counts = bag_of_words(captions[i].words);
    std::copy(counts.begin(), counts.end(), x.row(i).begin());
    labels.push_back(captions[i].domain == Domain::Vehicle);
  }
  return train_logistic(x, labels, options);
}

LinearClassifier train_image_classifier(const Matrix& features, const std::vector<Domain>& domains,
                                        const LogisticOptions& options) {
  std::vector<bool> labels;
  for (auto d : domains) labels.push_back(d == Domain::Vehicle);
  return train_logistic(features, labels, options);
}

RouteDecision route_text(const std::vector<std::string>& words, const RuleSet& rules,
                         const LinearClassifier& classifier) {
  if (words.empty()) throw Error(ErrorCode::EmptyQuery, "query has no tokens");
  bool ped = false;
  bool veh = false;
  for (const auto& w : words) {
    ped = ped || rules.pedestrian_keywords.contains(w);
    veh = veh || rules.vehicle_keywords.contains(w);
  }
  if (ped != veh) return {ped ? Domain::Pedestrian : Domain::Vehicle, RouteSource::Rule, 1.0};
  return classifier.decide(bag_of_words(words));
}

RouteDecision route_image(std::span<const double> features, const LinearClassifier& classifier) {
  return classifier.decide(features);
}

Json classifier_to_json(const LinearClassifier& c) {
  return {{"trained", c.trained}, {"weights", c.weights}};
}

LinearClassifier classifier_from_json(const Json& j) {
  reject_unknown_keys(j, {"trained", "weights"}, "classifier");
  LinearClassifier c;
  c.trained = j.value("trained", false);
  c.weights = j.value("weights", std::vector<double>{});
  return c;
}

}  // namespace xmr
