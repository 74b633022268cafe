// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmr/datagen.hpp"
#include "xmr/io.hpp"
#include "xmr/model.hpp"
#include "xmr/numerics.hpp"

namespace xmr {

struct LossConfig {
  double tau_irm = 0.07;       // fixed
  double tau_fitc_floor = 1e-3;  // the learnable FITC temperature never drops below this
  double epsilon = 1e-8;
  double weight_irr = 1.0;
  double weight_ac = 1.0;
  double weight_irm = 1.0;
  double weight_fitc = 1.0;
  double weight_fitm = 1.0;

  void validate() const;
  Json to_json() const;
  static LossConfig from_json(const Json& j);
};

enum class TargetKind { Inclusion, Tag, OneHot };

/// Row-stochastic B×B targets.
struct TargetDistribution {
  Matrix rows;
  TargetKind kind = TargetKind::OneHot;
};

struct LossResult {
  double value = 0.0;
  GradientMap gradients;
  std::map<std::string, double> components;
};

/// Sigmoid + binary cross-entropy per attribute, averaged over attributes and
/// rows for each modality, then ½(image + text).
LossResult attribute_classification_loss(const Matrix& logits_img, const Matrix& logits_txt,
                                         std::span<const AttributeSet> labels_img,
                                         std::span<const AttributeSet> labels_txt);
LossResult attribute_classification_loss(const Matrix& logits_img, const Matrix& logits_txt,
                                         std::span<const AttributeSet> labels);

struct MatchingProbabilities {
  Matrix t2i;  // row i: text i over images
  Matrix i2t;  // row i: image i over texts
};
MatchingProbabilities matching_probabilities(const Matrix& sims, double tau);

/// q[i][j] ∝ [text_attrs[i] ⊆ image_attrs[j]].
TargetDistribution inclusion_targets(std::span<const AttributeSet> text_attrs,
                                     std::span<const AttributeSet> image_attrs);
TargetDistribution one_hot_targets(std::size_t batch);

/// mean_i [KL(p^i2t_i ‖ q_i) + KL(p^t2i_i ‖ q_i)] with
/// KL(p‖q) = (1/B) Σ_j p_j log(p_j / (q_j + ε)). Gradient key: "sims".
LossResult irm_loss(const Matrix& sims, double tau, const TargetDistribution& q, double epsilon);

/// Softmax cross-entropy of the irr head over concat(masked text, image) against
/// the masked word. Gradient keys: "f_txt_masked", "f_img", "irr.*".
LossResult irr_proxy_loss(const Matrix& f_txt_masked, const Matrix& f_img,
                          std::span<const MaskedCaption> masked, const ParamSet& params);

/// y[i][j] = 1/K_i when tags match, K_i counting the anchor itself.
TargetDistribution tag_targets(std::span<const int> tags);

/// ½ mean_i [H(y_i, p^i2t_i) + H(y_i, p^t2i_i)]. Gradient keys: "sims", "fitc.tau".
LossResult fitc_loss(const Matrix& sims, double tau, const TargetDistribution& y);

using Eligibility = std::function<bool(std::size_t anchor, std::size_t candidate)>;

/// One draw per anchor row of `p`, restricted to eligible candidates and
/// proportional to p over them. Anchors with no eligible candidate get nullopt.
std::vector<std::optional<std::size_t>> sample_hard_negatives(const Matrix& p, const Eligibility& eligible,
                                                              Rng& rng);
/// Eligible ⇔ different tag.
std::vector<std::optional<std::size_t>> sample_hard_negatives(const Matrix& p, std::span<const int> tags,
                                                              Rng& rng);
/// Eligible ⇔ neither caption's attributes include the other's.
Eligibility non_inclusion_eligibility(std::span<const AttributeSet> attrs);

struct ItmPair {
  std::size_t text = 0;
  std::size_t image = 0;
  bool matched = false;
};

struct MinedPairs {
  std::vector<ItmPair> pairs;
  std::size_t skipped_anchors = 0;
};

/// Per kept anchor i: (t_i, v_i) matched, (t_i, v_j) with j mined from p^t2i_i,
/// (t_k, v_i) with k mined from p^i2t_i.
MinedPairs mine_itm_pairs(const Matrix& sims, double tau, std::span<const int> tags, Rng& rng);

/// 2-way softmax cross-entropy of the itm head, averaged over pairs. Class 1 is
/// "matched". Gradient keys: "f_txt", "f_img", "itm.*".
LossResult fitm_loss(const Matrix& f_txt, const Matrix& f_img, std::span<const ItmPair> pairs,
                     const ParamSet& params);

struct PedestrianInputs {
  const Matrix& f_txt;         // unit rows
  const Matrix& f_img;         // unit rows
  const Matrix& f_txt_masked;  // unit rows, masked captions
  std::span<const AttributeSet> image_attrs;
  std::span<const AttributeSet> caption_attrs;
  std::span<const MaskedCaption> masked;
};

/// L_IRR + L_AC + L_IRM (weighted). `targets` selects inclusion or one-hot IRM
/// targets. Gradient keys: "f_txt", "f_img", "f_txt_masked", "attr.*", "irr.*".
LossResult pedestrian_objective(const PedestrianInputs& in, const ParamSet& params, const LossConfig& config,
                                TargetKind targets = TargetKind::Inclusion);

struct VehicleInputs {
  const Matrix& f_txt;
  const Matrix& f_img;
  std::span<const int> tags;
};

/// L_FITC + L_FITM (weighted). Gradient keys: "f_txt", "f_img", "fitc.tau", "itm.*".
LossResult vehicle_objective(const VehicleInputs& in, const ParamSet& params, const LossConfig& config,
                             std::span<const ItmPair> pairs);
/// Mines negatives from the current similarities first.
LossResult vehicle_objective(const VehicleInputs& in, const ParamSet& params, const LossConfig& config,
                             Rng& rng);

}  // namespace xmr
