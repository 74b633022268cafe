// SPDX-License-Identifier: Apache-2.0
#include "xmr/gradcheck.hpp"

#include <algorithm>
#include <numeric>

#include "xmr/error.hpp"
#include "xmr/training.hpp"

namespace xmr {

std::vector<TensorCheck> check_gradients(const LossFunction& loss, ParamSet vars,
                                         const std::vector<std::string>& checked, const GradcheckOptions& options,
                                         Rng& rng) {
  const LossResult base = loss(vars);
  std::vector<TensorCheck> out;
  for (const auto& name : checked) {
    const auto it = base.gradients.find(name);
    if (it == base.gradients.end()) {
      throw Error(ErrorCode::ShapeMismatch, "loss produced no gradient for '" + name + "'");
    }
    const Matrix& analytic = it->second;
    if (!analytic.same_shape(vars.at(name))) {
      throw Error(ErrorCode::ShapeMismatch, "gradient for '" + name + "' has the wrong shape");
    }
    std::vector<std::size_t> coords(analytic.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    std::vector<double> a(coords.size());
    std::vector<double> numeric(coords.size());
    for (std::size_t c = 0; c < coords.size(); ++c) {
      const std::size_t k = coords[c];
      const double x = vars.at(name)[k];
      vars.mutable_at(name)[k] = x + options.step;
      const double plus = loss(vars).value;
      vars.mutable_at(name)[k] = x - options.step;
      const double minus = loss(vars).value;
      vars.mutable_at(name)[k] = x;
      numeric[c] = (plus - minus) / (2.0 * options.step);
      a[c] = analytic[k];
    }
    out.push_back({name, coords.size(), max_relative_error(a, numeric)});
  }
  return out;
}

const std::vector<std::string>& gradcheck_loss_names() {
  static const std::vector<std::string> names = {"ac",  "irm",        "irr",     "fitc",
                                                 "fitm", "pedestrian", "vehicle", "encoders"};
  return names;
}

namespace {

constexpr int kAttributes = 12;

Matrix random_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = scale * rng.normal();
  return m;
}

AttributeSet random_attributes(Rng& rng) {
  AttributeSet s;
  const int n = 2 + static_cast<int>(rng.below(4));
  while (s.count() < n) s.set(static_cast<int>(rng.below(kAttributes)));
  return s;
}

AttributeSet random_subset(AttributeSet of, Rng& rng) {
  AttributeSet s;
  for (int k = 0; k < kAttributes; ++k)
    if (of.has(k) && rng.bernoulli(0.6)) s.set(k);
  if (s.empty()) {
    for (int k = 0; k < kAttributes; ++k)
      if (of.has(k)) {
        s.set(k);
        break;
      }
  }
  return s;
}

// Head weights at a larger scale than training init, so that gradients are not
// dominated by round-off.
ParamSet check_params(std::uint64_t seed) {
  ModelConfig c = ModelConfig::standard();
  c.init_scale = 0.3;
  return init_params(c, seed);
}

std::vector<std::string> prefixed(const ParamSet& p, std::string_view prefix) {
  std::vector<std::string> out;
  for (const auto& n : p.names())
    if (n.starts_with(prefix)) out.push_back(n);
  return out;
}

void copy_into(ParamSet& vars, const ParamSet& from, const std::vector<std::string>& names) {
  for (const auto& n : names) vars.add(n, from.at(n));
}

struct PedestrianCase {
  std::vector<AttributeSet> image_attrs;
  std::vector<AttributeSet> caption_attrs;
  std::vector<MaskedCaption> masked;
  std::vector<std::vector<TokenId>> captions;
};

PedestrianCase pedestrian_case(std::size_t batch, Rng& rng) {
  const auto vocab = AttributeVocabulary::standard(kAttributes);
  PedestrianCase c;
  for (std::size_t i = 0; i < batch; ++i) {
    const auto img = random_attributes(rng);
    const auto cap = rng.bernoulli(0.5) ? random_subset(img, rng) : img;
    c.image_attrs.push_back(img);
    c.caption_attrs.push_back(cap);
    std::vector<int> present;
    for (int k = 0; k < kAttributes; ++k)
      if (cap.has(k)) present.push_back(k);
    c.masked.push_back(mask_attribute(cap, present[rng.below(present.size())], vocab));
    c.captions.push_back(Vocabulary::standard().encode(caption_from_attributes(cap, vocab)));
  }
  return c;
}

std::vector<int> random_tags(std::size_t batch, Rng& rng) {
  std::vector<int> tags(batch);
  for (auto& t : tags) t = static_cast<int>(rng.below(3));
  // at least two tags, so that some anchor has a negative
  if (std::all_of(tags.begin(), tags.end(), [&](int t) { return t == tags[0]; })) tags[1] = (tags[0] + 1) % 3;
  return tags;
}

// Pre-normalization rows go through the same row normalization as the model,
// so the objective's gradients can be checked against raw inputs.
LossResult through_normalization(const ParamSet& vars, const std::vector<std::string>& rows,
                                 const std::function<LossResult(const std::map<std::string, Matrix>&)>& objective) {
  std::map<std::string, NormalizedRows> forward;
  std::map<std::string, Matrix> unit;
  for (const auto& r : rows) {
    forward.emplace(r, normalize_rows(vars.at(r)));
    unit.emplace(r, forward.at(r).normalized);
  }
  LossResult res = objective(unit);
  for (const auto& r : rows) res.gradients[r] = normalize_rows_backward(forward.at(r), res.gradients.at(r));
  return res;
}

TensorCheck run_case(const std::string& loss, std::size_t batch, const GradcheckOptions& options, Rng& rng) {
  const LossConfig config;
  constexpr std::size_t d = 32;
  ParamSet vars;
  std::vector<std::string> checked;
  LossFunction fn;
  const ParamSet params = check_params(rng.next_u64());

  if (loss == "ac") {
    auto c = pedestrian_case(batch, rng);
    vars.add("logits_img", random_matrix(batch, kAttributes, 2.0, rng));
    vars.add("logits_txt", random_matrix(batch, kAttributes, 2.0, rng));
    checked = {"logits_img", "logits_txt"};
    fn = [c](const ParamSet& v) {
      return attribute_classification_loss(v.at("logits_img"), v.at("logits_txt"), c.image_attrs, c.caption_attrs);
    };
  } else if (loss == "irm") {
    auto c = pedestrian_case(batch, rng);
    Matrix sims(batch, batch);
    for (auto& s : sims.values()) s = rng.uniform(-1.0, 1.0);
    vars.add("sims", sims);
    checked = {"sims"};
    const auto q = inclusion_targets(c.caption_attrs, c.image_attrs);
    fn = [q, config](const ParamSet& v) { return irm_loss(v.at("sims"), config.tau_irm, q, config.epsilon); };
  } else if (loss == "irr") {
    auto c = pedestrian_case(batch, rng);
    vars.add("f_txt_masked", random_matrix(batch, d, 0.3, rng));
    vars.add("f_img", random_matrix(batch, d, 0.3, rng));
    const auto heads = prefixed(params, "irr.");
    copy_into(vars, params, heads);
    checked = {"f_txt_masked", "f_img"};
    checked.insert(checked.end(), heads.begin(), heads.end());
    fn = [c](const ParamSet& v) { return irr_proxy_loss(v.at("f_txt_masked"), v.at("f_img"), c.masked, v); };
  } else if (loss == "fitc") {
    const auto tags = random_tags(batch, rng);
    Matrix sims(batch, batch);
    for (auto& s : sims.values()) s = rng.uniform(-1.0, 1.0);
    vars.add("sims", sims);
    vars.add("fitc.tau", Matrix(1, 1, rng.uniform(0.05, 0.2)));
    checked = {"sims", "fitc.tau"};
    const auto y = tag_targets(tags);
    fn = [y](const ParamSet& v) { return fitc_loss(v.at("sims"), v.at("fitc.tau")[0], y); };
  } else if (loss == "fitm") {
    const auto tags = random_tags(batch, rng);
    vars.add("f_txt", random_matrix(batch, d, 0.3, rng));
    vars.add("f_img", random_matrix(batch, d, 0.3, rng));
    const auto heads = prefixed(params, "itm.");
    copy_into(vars, params, heads);
    checked = {"f_txt", "f_img"};
    checked.insert(checked.end(), heads.begin(), heads.end());
    Rng mine = rng.child("mine");
    const auto pairs = mine_itm_pairs(cosine_similarity_matrix(vars.at("f_txt"), vars.at("f_img")), 0.07, tags, mine);
    if (pairs.pairs.empty()) return {};
    fn = [p = pairs.pairs](const ParamSet& v) { return fitm_loss(v.at("f_txt"), v.at("f_img"), p, v); };
  } else if (loss == "pedestrian") {
    auto c = pedestrian_case(batch, rng);
    const std::vector<std::string> rows = {"f_txt", "f_img", "f_txt_masked"};
    for (const auto& r : rows) vars.add(r, random_matrix(batch, d, 1.0, rng));
    auto heads = prefixed(params, "attr.");
    const auto irr = prefixed(params, "irr.");
    heads.insert(heads.end(), irr.begin(), irr.end());
    copy_into(vars, params, heads);
    checked = rows;
    checked.insert(checked.end(), heads.begin(), heads.end());
    const auto kind = rng.bernoulli(0.5) ? TargetKind::Inclusion : TargetKind::OneHot;
    fn = [c, rows, config, kind](const ParamSet& v) {
      return through_normalization(v, rows, [&](const std::map<std::string, Matrix>& u) {
        const PedestrianInputs in{u.at("f_txt"), u.at("f_img"), u.at("f_txt_masked"),
                                  c.image_attrs, c.caption_attrs, c.masked};
        return pedestrian_objective(in, v, config, kind);
      });
    };
  } else if (loss == "vehicle") {
    const auto tags = random_tags(batch, rng);
    const std::vector<std::string> rows = {"f_txt", "f_img"};
    for (const auto& r : rows) vars.add(r, random_matrix(batch, d, 1.0, rng));
    auto heads = prefixed(params, "itm.");
    heads.push_back("fitc.tau");
    copy_into(vars, params, heads);
    checked = rows;
    checked.insert(checked.end(), heads.begin(), heads.end());
    Rng mine = rng.child("mine");
    const auto pairs = mine_itm_pairs(cosine_similarity_matrix(vars.at("f_txt"), vars.at("f_img")),
                                      vars.at("fitc.tau")[0], tags, mine);
    fn = [tags, rows, config, p = pairs.pairs](const ParamSet& v) {
      return through_normalization(v, rows, [&](const std::map<std::string, Matrix>& u) {
        const VehicleInputs in{u.at("f_txt"), u.at("f_img"), tags};
        return vehicle_objective(in, v, config, p);
      });
    };
  } else if (loss == "encoders") {
    vars = params;
    checked = vars.names();
    if (rng.bernoulli(0.5)) {
      auto c = pedestrian_case(batch, rng);
      PedestrianBatch b{c.captions, random_matrix(batch, kImageFeatureDim, 0.5, rng), c.image_attrs,
                        c.caption_attrs, c.masked};
      checked = prefixed(vars, "");
      std::erase_if(checked, [](const std::string& n) { return n.starts_with("itm.") || n == "fitc.tau"; });
      fn = [b, config](const ParamSet& v) { return pedestrian_step(v, b, config, TargetKind::Inclusion); };
    } else {
      const auto tags = random_tags(batch, rng);
      const auto vocab = Vocabulary::standard();
      std::vector<std::vector<TokenId>> captions;
      for (int t : tags) captions.push_back(vocab.encode({"a", t == 0 ? "red" : t == 1 ? "white" : "blue", "van"}));
      VehicleBatch b{captions, random_matrix(batch, kImageFeatureDim, 0.5, rng), tags};
      std::erase_if(checked, [](const std::string& n) {
        return n.starts_with("attr.") || n.starts_with("irr.");
      });
      Rng mine = rng.child("mine");
      const auto f_txt = normalize_rows(encode_text(b.captions, vars)).normalized;
      const auto f_img = normalize_rows(encode_image(b.features, vars)).normalized;
      const auto pairs = mine_itm_pairs(cosine_similarity_matrix(f_txt, f_img), vars.at("fitc.tau")[0], tags, mine);
      fn = [b, config, p = pairs.pairs](const ParamSet& v) { return vehicle_step(v, b, config, p); };
    }
  } else {
    throw Error(ErrorCode::ConfigInvalid, "unknown gradcheck loss '" + loss + "'");
  }

  Rng coords = rng.child("coords");
  TensorCheck worst;
  for (auto& t : check_gradients(fn, vars, checked, options, coords))
    if (t.max_relative_error >= worst.max_relative_error) worst = std::move(t);
  return worst;
}

}  // namespace

GradcheckResult gradcheck_loss(const std::string& loss, const GradcheckOptions& options) {
  const auto& names = gradcheck_loss_names();
  if (std::find(names.begin(), names.end(), loss) == names.end()) {
    throw Error(ErrorCode::ConfigInvalid, "unknown gradcheck loss '" + loss + "'");
  }
  GradcheckResult result;
  result.loss = loss;
  const Rng root = Rng(options.base_seed).child(loss);
  for (int s = 0; s < options.seeds; ++s) {
    Rng rng = root.child(static_cast<std::uint64_t>(s));
    const std::size_t batch = s % 2 == 0 ? 4 : 8;
    const auto worst = run_case(loss, batch, options, rng);
    if (result.batches == 0 || worst.max_relative_error > result.max_relative_error) {
      result.max_relative_error = worst.max_relative_error;
      result.worst_tensor = worst.name;
    }
    ++result.batches;
  }
  result.passed = result.max_relative_error <= options.tolerance;
  return result;
}

}  // namespace xmr
