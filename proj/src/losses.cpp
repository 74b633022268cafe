// SPDX-License-Identifier: Apache-2.0
#include "xmr/losses.hpp"

#include <algorithm>
#include <cmath>

#include "xmr/error.hpp"

namespace xmr {

namespace {

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

void require_square(const Matrix& m, const char* what) {
  require(m.rows() == m.cols() && m.rows() > 0, ErrorCode::ShapeMismatch,
          std::string(what) + " must be a non-empty square matrix");
}

// log-softmax of one row of logits / tau
std::vector<double> log_softmax(std::span<const double> row, double tau) {
  std::vector<double> z(row.begin(), row.end());
  for (double& v : z) v /= tau;
  const double lse = log_sum_exp(z);
  for (double& v : z) v -= lse;
  return z;
}

// Value and d/ds of (1/B) Σ_j p_j log(p_j / (q_j + ε)) for p = softmax(s / τ).
double kl_row(std::span<const double> s, std::span<const double> q, double tau, double eps, double batch,
              std::span<double> d_s) {
  const auto logp = log_softmax(s, tau);
  std::vector<double> g(s.size());
  double value = 0.0;
  double mean_g = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    const double p = std::exp(logp[j]);
    g[j] = (logp[j] - std::log(q[j] + eps)) / batch;
    value += p * g[j];
    mean_g += p * g[j];
  }
  // the constant 1/B from d(p log p)/dp cancels against Σ_k dp_k = 0
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double p = std::exp(logp[k]);
    d_s[k] = p * (g[k] - mean_g) / tau;
  }
  return value;
}

// Value and d/ds, d/dτ of H(y, softmax(s / τ)).
double cross_entropy_row(std::span<const double> s, std::span<const double> y, double tau,
                         std::span<double> d_s, double& d_tau) {
  const auto logp = log_softmax(s, tau);
  double value = 0.0;
  double y_total = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    value -= y[j] * logp[j];
    y_total += y[j];
  }
  d_tau = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    const double dz = std::exp(logp[k]) * y_total - y[k];
    d_s[k] = dz / tau;
    d_tau += dz * (-s[k] / (tau * tau));
  }
  return value;
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Mean binary cross-entropy over a B×q logit matrix; writes d/dlogits scaled by `scale`.
double bce_block(const Matrix& logits, std::span<const AttributeSet> labels, double scale, Matrix& d) {
  const double n = static_cast<double>(logits.size());
  double total = 0.0;
  d = Matrix(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i)
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      const double z = logits(i, k);
      const double y = labels[i].has(static_cast<int>(k)) ? 1.0 : 0.0;
      total += softplus(z) - z * y;
      d(i, k) = scale * (sigmoid(z) - y) / n;
    }
  return total / n;
}

// Scatter d/dX of concatenated pair rows back onto the text and image rows.
void split_pair_gradient(const Matrix& d_input, std::span<const ItmPair> pairs, std::size_t d,
                         Matrix& d_txt, Matrix& d_img) {
  for (std::size_t r = 0; r < pairs.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) {
      d_txt(pairs[r].text, j) += d_input(r, j);
      d_img(pairs[r].image, j) += d_input(r, d + j);
    }
}

}  // namespace

// ---------------------------------------------------------------------------

void LossConfig::validate() const {
  require(tau_irm > 0.0, ErrorCode::NonPositiveTemperature, "tau_irm must be positive");
  require(tau_fitc_floor > 0.0, ErrorCode::NonPositiveTemperature, "tau_fitc_floor must be positive");
  require(epsilon > 0.0, ErrorCode::ConfigInvalid, "epsilon must be positive");
  for (double w : {weight_irr, weight_ac, weight_irm, weight_fitc, weight_fitm}) {
    require(w >= 0.0 && std::isfinite(w), ErrorCode::ConfigInvalid, "loss weights must be finite and >= 0");
  }
}

Json LossConfig::to_json() const {
  return {{"tau_irm", tau_irm},         {"tau_fitc_floor", tau_fitc_floor}, {"epsilon", epsilon},
          {"weight_irr", weight_irr},   {"weight_ac", weight_ac},           {"weight_irm", weight_irm},
          {"weight_fitc", weight_fitc}, {"weight_fitm", weight_fitm}};
}

LossConfig LossConfig::from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"tau_irm", "tau_fitc_floor", "epsilon", "weight_irr", "weight_ac", "weight_irm",
                       "weight_fitc", "weight_fitm"},
                      "loss config");
  LossConfig c;
  c.tau_irm = j.value("tau_irm", c.tau_irm);
  c.tau_fitc_floor = j.value("tau_fitc_floor", c.tau_fitc_floor);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.weight_irr = j.value("weight_irr", c.weight_irr);
  c.weight_ac = j.value("weight_ac", c.weight_ac);
  c.weight_irm = j.value("weight_irm", c.weight_irm);
  c.weight_fitc = j.value("weight_fitc", c.weight_fitc);
  c.weight_fitm = j.value("weight_fitm", c.weight_fitm);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

LossResult attribute_classification_loss(const Matrix& logits_img, const Matrix& logits_txt,
                                         std::span<const AttributeSet> labels_img,
                                         std::span<const AttributeSet> labels_txt) {
  require(logits_img.same_shape(logits_txt), ErrorCode::DimensionMismatch, "image/text logits shapes differ");
  require(labels_img.size() == logits_img.rows() && labels_txt.size() == logits_txt.rows(),
          ErrorCode::DimensionMismatch, "attribute labels do not match the batch");
  require(!logits_img.empty(), ErrorCode::DimensionMismatch, "empty attribute logits");
  LossResult r;
  Matrix d_img, d_txt;
  const double ce_img = bce_block(logits_img, labels_img, 0.5, d_img);
  const double ce_txt = bce_block(logits_txt, labels_txt, 0.5, d_txt);
  r.value = 0.5 * (ce_img + ce_txt);
  r.components["ce_img"] = ce_img;
  r.components["ce_txt"] = ce_txt;
  r.gradients.emplace("logits_img", std::move(d_img));
  r.gradients.emplace("logits_txt", std::move(d_txt));
  return r;
}

LossResult attribute_classification_loss(const Matrix& logits_img, const Matrix& logits_txt,
                                         std::span<const AttributeSet> labels) {
  return attribute_classification_loss(logits_img, logits_txt, labels, labels);
}

MatchingProbabilities matching_probabilities(const Matrix& sims, double tau) {
  return {stable_softmax_rows(sims, tau), stable_softmax_rows(sims.transposed(), tau)};
}

TargetDistribution inclusion_targets(std::span<const AttributeSet> text_attrs,
                                     std::span<const AttributeSet> image_attrs) {
  require(text_attrs.size() == image_attrs.size(), ErrorCode::ShapeMismatch, "inclusion target batch sizes");
  const std::size_t b = text_attrs.size();
  TargetDistribution t{Matrix(b, b), TargetKind::Inclusion};
  for (std::size_t i = 0; i < b; ++i) {
    int hits = 0;
    for (std::size_t j = 0; j < b; ++j) hits += text_attrs[i].subset_of(image_attrs[j]) ? 1 : 0;
    if (hits == 0) {
      throw Error(ErrorCode::NoInclusionRow, "text " + std::to_string(i) + " is included in no image");
    }
    for (std::size_t j = 0; j < b; ++j) {
      if (text_attrs[i].subset_of(image_attrs[j])) t.rows(i, j) = 1.0 / hits;
    }
  }
  return t;
}

TargetDistribution one_hot_targets(std::size_t batch) {
  return {Matrix::identity(batch), TargetKind::OneHot};
}

LossResult irm_loss(const Matrix& sims, double tau, const TargetDistribution& q, double epsilon) {
  require_square(sims, "similarity matrix");
  require(q.rows.same_shape(sims), ErrorCode::ShapeMismatch, "IRM targets must match the similarity matrix");
  require(tau > 0.0, ErrorCode::NonPositiveTemperature, "IRM temperature");
  const std::size_t b = sims.rows();
  const double batch = static_cast<double>(b);
  const Matrix sims_t = sims.transposed();
  Matrix d_sims(b, b);
  Matrix d_sims_t(b, b);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    total += kl_row(sims_t.row(i), q.rows.row(i), tau, epsilon, batch, d_sims_t.row(i));
    total += kl_row(sims.row(i), q.rows.row(i), tau, epsilon, batch, d_sims.row(i));
  }
  LossResult r;
  r.value = total / batch;
  d_sims += d_sims_t.transposed();
  d_sims *= 1.0 / batch;
  r.gradients.emplace("sims", std::move(d_sims));
  return r;
}

LossResult irr_proxy_loss(const Matrix& f_txt_masked, const Matrix& f_img, std::span<const MaskedCaption> masked,
                          const ParamSet& params) {
  require(f_txt_masked.same_shape(f_img), ErrorCode::ShapeMismatch, "masked text and image embeddings");
  require(masked.size() == f_img.rows(), ErrorCode::ShapeMismatch, "one masked caption per row");
  require(!masked.empty(), ErrorCode::EmptyBatch, "IRR proxy on an empty batch");
  for (const auto& m : masked) {
    if (std::find(m.tokens.begin(), m.tokens.end(), Vocabulary::kMask) == m.tokens.end()) {
      throw Error(ErrorCode::NoMaskPresent, "caption has no masked token");
    }
  }
  FusionCache cache;
  const Matrix logits = fusion_forward("irr", concat_columns(f_txt_masked, f_img), params, &cache);
  const std::size_t b = logits.rows();
  Matrix d_logits(b, logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const auto target = static_cast<std::size_t>(masked[i].target);
    require(target < logits.cols(), ErrorCode::UnknownToken, "masked target outside the vocabulary");
    const auto logp = log_softmax(logits.row(i), 1.0);
    total -= logp[target];
    for (std::size_t k = 0; k < logits.cols(); ++k) {
      d_logits(i, k) = (std::exp(logp[k]) - (k == target ? 1.0 : 0.0)) / static_cast<double>(b);
    }
  }
  auto head = fusion_backward("irr", cache, d_logits, params);
  const std::size_t d = f_img.cols();
  Matrix d_txt(b, d);
  Matrix d_img(b, d);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      d_txt(i, j) = head.d_input(i, j);
      d_img(i, j) = head.d_input(i, d + j);
    }
  LossResult r;
  r.value = total / static_cast<double>(b);
  r.gradients = std::move(head.params);
  r.gradients.emplace("f_txt_masked", std::move(d_txt));
  r.gradients.emplace("f_img", std::move(d_img));
  return r;
}

TargetDistribution tag_targets(std::span<const int> tags) {
  const std::size_t b = tags.size();
  TargetDistribution y{Matrix(b, b), TargetKind::Tag};
  for (std::size_t i = 0; i < b; ++i) {
    const auto k = std::count(tags.begin(), tags.end(), tags[i]);
    for (std::size_t j = 0; j < b; ++j)
      if (tags[j] == tags[i]) y.rows(i, j) = 1.0 / static_cast<double>(k);
  }
  return y;
}

LossResult fitc_loss(const Matrix& sims, double tau, const TargetDistribution& y) {
  require(tau > 0.0, ErrorCode::NonPositiveTemperature, "FITC temperature");
  require_square(sims, "similarity matrix");
  require(y.rows.same_shape(sims), ErrorCode::ShapeMismatch, "FITC targets must match the similarity matrix");
  const std::size_t b = sims.rows();
  const double scale = 0.5 / static_cast<double>(b);
  const Matrix sims_t = sims.transposed();
  Matrix d_sims(b, b);
  Matrix d_sims_t(b, b);
  double total = 0.0;
  double d_tau = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double dt_i2t = 0.0;
    double dt_t2i = 0.0;
    total += cross_entropy_row(sims_t.row(i), y.rows.row(i), tau, d_sims_t.row(i), dt_i2t);
    total += cross_entropy_row(sims.row(i), y.rows.row(i), tau, d_sims.row(i), dt_t2i);
    d_tau += dt_i2t + dt_t2i;
  }
  d_sims += d_sims_t.transposed();
  d_sims *= scale;
  LossResult r;
  r.value = scale * total;
  r.gradients.emplace("sims", std::move(d_sims));
  r.gradients.emplace("fitc.tau", Matrix(1, 1, scale * d_tau));
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::optional<std::size_t>> sample_hard_negatives(const Matrix& p, const Eligibility& eligible,
                                                              Rng& rng) {
  std::vector<std::optional<std::size_t>> out(p.rows());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    candidates.clear();
    double total = 0.0;
    for (std::size_t j = 0; j < p.cols(); ++j) {
      if (j == i || !eligible(i, j)) continue;
      candidates.push_back(j);
      total += p(i, j);
    }
    if (candidates.empty()) continue;
    if (!(total > 0.0)) {
      // every eligible probability underflowed; fall back to a uniform pick
      out[i] = candidates[rng.below(candidates.size())];
      continue;
    }
    const double u = rng.uniform() * total;
    double cumulative = 0.0;
    std::size_t chosen = candidates.back();
    for (std::size_t j : candidates) {
      cumulative += p(i, j);
      if (u < cumulative) {
        chosen = j;
        break;
      }
    }
    out[i] = chosen;
  }
  return out;
}

std::vector<std::optional<std::size_t>> sample_hard_negatives(const Matrix& p, std::span<const int> tags,
                                                              Rng& rng) {
  require(tags.size() == p.rows() && p.rows() == p.cols(), ErrorCode::ShapeMismatch, "mining shapes");
  return sample_hard_negatives(p, [tags](std::size_t i, std::size_t j) { return tags[i] != tags[j]; }, rng);
}

Eligibility non_inclusion_eligibility(std::span<const AttributeSet> attrs) {
  return [attrs](std::size_t i, std::size_t j) {
    return !attrs[i].subset_of(attrs[j]) && !attrs[j].subset_of(attrs[i]);
  };
}

MinedPairs mine_itm_pairs(const Matrix& sims, double tau, std::span<const int> tags, Rng& rng) {
  const auto probs = matching_probabilities(sims, tau);
  const auto neg_images = sample_hard_negatives(probs.t2i, tags, rng);
  const auto neg_texts = sample_hard_negatives(probs.i2t, tags, rng);
  MinedPairs mined;
  for (std::size_t i = 0; i < sims.rows(); ++i) {
    if (!neg_images[i] || !neg_texts[i]) {
      ++mined.skipped_anchors;
      continue;
    }
    mined.pairs.push_back({i, i, true});
    mined.pairs.push_back({i, *neg_images[i], false});
    mined.pairs.push_back({*neg_texts[i], i, false});
  }
  return mined;
}

LossResult fitm_loss(const Matrix& f_txt, const Matrix& f_img, std::span<const ItmPair> pairs,
                     const ParamSet& params) {
  require(f_txt.same_shape(f_img), ErrorCode::ShapeMismatch, "text and image embeddings");
  if (pairs.empty()) throw Error(ErrorCode::EmptyBatch, "every anchor was skipped; no ITM pairs");
  const std::size_t d = f_txt.cols();
  Matrix input(pairs.size(), 2 * d);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    require(pairs[r].text < f_txt.rows() && pairs[r].image < f_img.rows(), ErrorCode::ShapeMismatch,
            "ITM pair index out of range");
    std::copy(f_txt.row(pairs[r].text).begin(), f_txt.row(pairs[r].text).end(), input.row(r).begin());
    std::copy(f_img.row(pairs[r].image).begin(), f_img.row(pairs[r].image).end(),
              input.row(r).begin() + static_cast<std::ptrdiff_t>(d));
  }
  FusionCache cache;
  const Matrix logits = fusion_forward("itm", input, params, &cache);
  const double n = static_cast<double>(pairs.size());
  Matrix d_logits(pairs.size(), 2);
  double total = 0.0;
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const std::size_t label = pairs[r].matched ? 1 : 0;
    const auto logp = log_softmax(logits.row(r), 1.0);
    total -= logp[label];
    for (std::size_t k = 0; k < 2; ++k) d_logits(r, k) = (std::exp(logp[k]) - (k == label ? 1.0 : 0.0)) / n;
  }
  auto head = fusion_backward("itm", cache, d_logits, params);
  Matrix d_txt(f_txt.rows(), d);
  Matrix d_img(f_img.rows(), d);
  split_pair_gradient(head.d_input, pairs, d, d_txt, d_img);
  LossResult r;
  r.value = total / n;
  r.gradients = std::move(head.params);
  r.gradients.emplace("f_txt", std::move(d_txt));
  r.gradients.emplace("f_img", std::move(d_img));
  return r;
}

// ---------------------------------------------------------------------------

namespace {

// d/dsims → d/df_txt, d/df_img for sims = f_txt · f_imgᵀ.
void sims_to_embeddings(const Matrix& d_sims, const Matrix& f_txt, const Matrix& f_img, double weight,
                        GradientMap& out) {
  GradientMap g;
  g.emplace("f_txt", matmul(d_sims, f_img));
  g.emplace("f_img", matmul_at(d_sims, f_txt));
  accumulate(out, g, weight);
}

}  // namespace

LossResult pedestrian_objective(const PedestrianInputs& in, const ParamSet& params, const LossConfig& config,
                                TargetKind targets) {
  config.validate();
  const std::size_t b = in.f_txt.rows();
  require(in.f_img.same_shape(in.f_txt) && in.f_txt_masked.same_shape(in.f_txt), ErrorCode::ShapeMismatch,
          "pedestrian embeddings");
  require(in.image_attrs.size() == b && in.caption_attrs.size() == b && in.masked.size() == b,
          ErrorCode::ShapeMismatch, "pedestrian labels");

  LossResult r;

  const Matrix sims = cosine_similarity_matrix(in.f_txt, in.f_img);
  const TargetDistribution q =
      targets == TargetKind::OneHot ? one_hot_targets(b) : inclusion_targets(in.caption_attrs, in.image_attrs);
  const auto irm = irm_loss(sims, config.tau_irm, q, config.epsilon);
  sims_to_embeddings(irm.gradients.at("sims"), in.f_txt, in.f_img, config.weight_irm, r.gradients);

  const Matrix logits_img = attribute_logits(in.f_img, params);
  const Matrix logits_txt = attribute_logits(in.f_txt, params);
  const auto ac = attribute_classification_loss(logits_img, logits_txt, in.image_attrs, in.caption_attrs);
  {
    auto head_img = attribute_head_backward(in.f_img, ac.gradients.at("logits_img"), params);
    auto head_txt = attribute_head_backward(in.f_txt, ac.gradients.at("logits_txt"), params);
    GradientMap g;
    g.emplace("f_img", std::move(head_img.d_input));
    g.emplace("f_txt", std::move(head_txt.d_input));
    accumulate(g, head_img.params);
    accumulate(g, head_txt.params);
    accumulate(r.gradients, g, config.weight_ac);
  }

  const auto irr = irr_proxy_loss(in.f_txt_masked, in.f_img, in.masked, params);
  accumulate(r.gradients, irr.gradients, config.weight_irr);

  r.value = config.weight_irr * irr.value + config.weight_ac * ac.value + config.weight_irm * irm.value;
  r.components["irr"] = irr.value;
  r.components["ac"] = ac.value;
  r.components["irm"] = irm.value;
  return r;
}

LossResult vehicle_objective(const VehicleInputs& in, const ParamSet& params, const LossConfig& config,
                             std::span<const ItmPair> pairs) {
  config.validate();
  require(in.f_img.same_shape(in.f_txt), ErrorCode::ShapeMismatch, "vehicle embeddings");
  require(in.tags.size() == in.f_txt.rows(), ErrorCode::ShapeMismatch, "vehicle tags");
  const double tau = params.at("fitc.tau")[0];

  LossResult r;
  const Matrix sims = cosine_similarity_matrix(in.f_txt, in.f_img);
  const auto fitc = fitc_loss(sims, tau, tag_targets(in.tags));
  sims_to_embeddings(fitc.gradients.at("sims"), in.f_txt, in.f_img, config.weight_fitc, r.gradients);
  {
    GradientMap g;
    g.emplace("fitc.tau", fitc.gradients.at("fitc.tau"));
    accumulate(r.gradients, g, config.weight_fitc);
  }
  const auto fitm = fitm_loss(in.f_txt, in.f_img, pairs, params);
  accumulate(r.gradients, fitm.gradients, config.weight_fitm);

  r.value = config.weight_fitc * fitc.value + config.weight_fitm * fitm.value;
  r.components["fitc"] = fitc.value;
  r.components["fitm"] = fitm.value;
  return r;
}

LossResult vehicle_objective(const VehicleInputs& in, const ParamSet& params, const LossConfig& config,
                             Rng& rng) {
  const Matrix sims = cosine_similarity_matrix(in.f_txt, in.f_img);
  const auto mined = mine_itm_pairs(sims, params.at("fitc.tau")[0], in.tags, rng);
  auto r = vehicle_objective(in, params, config, mined.pairs);
  r.components["skipped_anchors"] = static_cast<double>(mined.skipped_anchors);
  return r;
}

}  // namespace xmr
