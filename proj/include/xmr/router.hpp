// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmr/io.hpp"
#include "xmr/numerics.hpp"

namespace xmr {

enum class Domain { Pedestrian, Vehicle };
std::string_view domain_name(Domain d);  // "ped" / "veh"
Domain parse_domain(std::string_view name);

struct RuleSet {
  std::set<std::string, std::less<>> pedestrian_keywords;
  std::set<std::string, std::less<>> vehicle_keywords;

  /// Pedestrian: the subject and wearing words plus every attribute word.
  /// Vehicle: the type words, "car" and "vehicle". Color words are left out of
  /// both sets; in vehicle captions they always come with a type word.
  static RuleSet standard();
  /// Throws ConfigInvalid if the sets overlap.
  void validate() const;
};

enum class RouteSource { Rule, Classifier };

struct RouteDecision {
  Domain domain = Domain::Pedestrian;
  RouteSource source = RouteSource::Rule;
  double confidence = 1.0;

  Json to_json() const;
  friend bool operator==(const RouteDecision&, const RouteDecision&) = default;
};

/// Bias-free logistic model; a positive margin means vehicle.
struct LinearClassifier {
  std::vector<double> weights;
  bool trained = false;

  double margin(std::span<const double> x) const;
  /// Throws UntrainedClassifier, DimensionMismatch.
  RouteDecision decide(std::span<const double> x) const;
};

struct LogisticOptions {
  int max_epochs = 500;
  double tolerance = 1e-9;  // stop once the loss changes by less than this
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

/// Full-batch gradient descent on mean log loss. Labels: true = vehicle.
/// Throws SingleClassData, DimensionMismatch.
LinearClassifier train_logistic(const Matrix& x, const std::vector<bool>& vehicle, const LogisticOptions& options);

/// Token counts over the shared vocabulary; words outside it are ignored.
std::vector<double> bag_of_words(const std::vector<std::string>& words);

struct LabeledCaption {
  std::vector<std::string> words;
  Domain domain = Domain::Pedestrian;
};

LinearClassifier train_router_classifier(std::span<const LabeledCaption> captions,
                                         const LogisticOptions& options = {});
LinearClassifier train_image_classifier(const Matrix& features, const std::vector<Domain>& domains,
                                        const LogisticOptions& options = {});

/// Rule match first; the classifier decides when both or neither keyword set is
/// hit, with margin 0 going to pedestrian. Throws EmptyQuery.
RouteDecision route_text(const std::vector<std::string>& words, const RuleSet& rules,
                         const LinearClassifier& classifier);
/// Throws UntrainedClassifier.
RouteDecision route_image(std::span<const double> features, const LinearClassifier& classifier);

Json classifier_to_json(const LinearClassifier& c);
LinearClassifier classifier_from_json(const Json& j);

}  // namespace xmr
