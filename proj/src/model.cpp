// SPDX-License-Identifier: Apache-2.0
#include "xmr/model.hpp"

#include <cmath>

#include "xmr/error.hpp"

namespace xmr {

void accumulate(GradientMap& into, const GradientMap& from, double weight) {
  for (const auto& [name, g] : from) {
    auto it = into.find(name);
    if (it == into.end()) {
      into.emplace(name, weight * g);
    } else {
      if (!it->second.same_shape(g)) throw Error(ErrorCode::ShapeMismatch, "gradient '" + name + "'");
      for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += weight * g[k];
    }
  }
}

// ---------------------------------------------------------------------------

void ParamSet::add(std::string name, Matrix value) {
  if (contains(name)) throw Error(ErrorCode::ShapeMismatch, "duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  ++version_;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  throw Error(ErrorCode::ShapeMismatch, "no parameter named '" + std::string(name) + "'");
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

const Matrix& ParamSet::at(std::string_view name) const { return tensors_[index_of(name)]; }

Matrix& ParamSet::mutable_at(std::string_view name) {
  ++version_;
  return tensors_[index_of(name)];
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

// ---------------------------------------------------------------------------

ModelConfig ModelConfig::standard() {
  ModelConfig c;
  c.vocab_size = static_cast<int>(Vocabulary::standard().size());
  return c;
}

Json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},         {"embed_dim", embed_dim},
          {"image_dim", image_dim},           {"image_hidden", image_hidden},
          {"attribute_count", attribute_count}, {"fusion_hidden", fusion_hidden},
          {"init_scale", init_scale},         {"tau_init", tau_init}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
  reject_unknown_keys(j,
                      {"vocab_size", "embed_dim", "image_dim", "image_hidden", "attribute_count",
                       "fusion_hidden", "init_scale", "tau_init"},
                      "model config");
  ModelConfig c = standard();
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.image_dim = j.value("image_dim", c.image_dim);
  c.image_hidden = j.value("image_hidden", c.image_hidden);
  c.attribute_count = j.value("attribute_count", c.attribute_count);
  c.fusion_hidden = j.value("fusion_hidden", c.fusion_hidden);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.tau_init = j.value("tau_init", c.tau_init);
  return c;
}

ParamSet init_params(const ModelConfig& c, std::uint64_t seed) {
  if (c.vocab_size < 2 || c.embed_dim < 1 || c.image_dim < 1 || c.image_hidden < 1 ||
      c.attribute_count < 1 || c.fusion_hidden < 1 || !(c.tau_init > 0.0)) {
    throw Error(ErrorCode::ConfigInvalid, "model dimensions must be positive");
  }
  const Rng root = Rng(seed).child("init");
  ParamSet p;
  auto add = [&](const std::string& name, int rows, int cols) {
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    Rng rng = root.child(name);
    for (double& v : m.values()) v = rng.uniform(-c.init_scale, c.init_scale);
    p.add(name, std::move(m));
  };
  const int d = c.embed_dim;
  add("text.embed", c.vocab_size, d);
  add("text.w", d, d);
  add("text.b", 1, d);
  add("image.w1", c.image_dim, c.image_hidden);
  add("image.b1", 1, c.image_hidden);
  add("image.w2", c.image_hidden, d);
  add("image.b2", 1, d);
  add("attr.w", d, c.attribute_count);
  add("attr.b", 1, c.attribute_count);
  for (const char* head : {"itm", "irr"}) {
    const int out = std::string_view(head) == "itm" ? 2 : c.vocab_size;
    add(std::string(head) + ".w1", 2 * d, c.fusion_hidden);
    add(std::string(head) + ".b1", 1, c.fusion_hidden);
    add(std::string(head) + ".w2", c.fusion_hidden, out);
    add(std::string(head) + ".b2", 1, out);
  }
  p.add("fitc.tau", Matrix(1, 1, c.tau_init));
  return p;
}

// ---------------------------------------------------------------------------

Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "dense layer shapes");
  }
  Matrix y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
  return y;
}

DenseGrads dense_backward(const Matrix& x, const Matrix& w, const Matrix& d_out) {
  DenseGrads g;
  g.d_input = matmul_bt(d_out, w);
  g.d_weight = matmul_at(x, d_out);
  g.d_bias = Matrix(1, d_out.cols());
  for (std::size_t i = 0; i < d_out.rows(); ++i)
    for (std::size_t j = 0; j < d_out.cols(); ++j) g.d_bias[j] += d_out(i, j);
  return g;
}

Matrix tanh_of(const Matrix& z) {
  Matrix y = z;
  for (double& v : y.values()) v = std::tanh(v);
  return y;
}

Matrix tanh_backward(const Matrix& y, const Matrix& d_out) {
  Matrix d = d_out;
  for (std::size_t k = 0; k < d.size(); ++k) d[k] *= 1.0 - y[k] * y[k];
  return d;
}

NormalizedRows normalize_rows(const Matrix& pre) {
  NormalizedRows out{Matrix(pre.rows(), pre.cols()), std::vector<double>(pre.rows())};
  for (std::size_t i = 0; i < pre.rows(); ++i) {
    if (!std::isfinite(norm2(pre.row(i)))) throw Error(ErrorCode::DivergedLoss, "non-finite embedding row");
    const auto unit = l2_normalize(pre.row(i));
    std::copy(unit.begin(), unit.end(), out.normalized.row(i).begin());
    out.norms[i] = norm2(pre.row(i));
  }
  return out;
}

Matrix normalize_rows_backward(const NormalizedRows& forward, const Matrix& d_normalized) {
  const Matrix& e = forward.normalized;
  if (!e.same_shape(d_normalized)) throw Error(ErrorCode::ShapeMismatch, "normalization backward");
  Matrix d(e.rows(), e.cols());
  for (std::size_t i = 0; i < e.rows(); ++i) {
    const double proj = dot(e.row(i), d_normalized.row(i));
    for (std::size_t j = 0; j < e.cols(); ++j) {
      d(i, j) = (d_normalized(i, j) - e(i, j) * proj) / forward.norms[i];
    }
  }
  return d;
}

// ---------------------------------------------------------------------------

Matrix encode_text(const std::vector<std::vector<TokenId>>& batch, const ParamSet& params,
                   TextCache* cache) {
  const Matrix& table = params.at("text.embed");
  const std::size_t d = table.cols();
  Matrix mean(batch.size(), d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& tokens = batch[i];
    if (tokens.empty()) throw Error(ErrorCode::UnknownToken, "empty token list");
    for (TokenId t : tokens) {
      if (t < 0 || static_cast<std::size_t>(t) >= table.rows()) {
        throw Error(ErrorCode::UnknownToken, "token id " + std::to_string(t) + " outside the embedding table");
      }
      for (std::size_t j = 0; j < d; ++j) mean(i, j) += table(static_cast<std::size_t>(t), j);
    }
    for (std::size_t j = 0; j < d; ++j) mean(i, j) /= static_cast<double>(tokens.size());
  }
  Matrix out = tanh_of(dense_forward(mean, params.at("text.w"), params.at("text.b")));
  if (cache != nullptr) {
    cache->tokens = batch;
    cache->mean = std::move(mean);
    cache->output = out;
    cache->version = params.version();
  }
  return out;
}

Matrix encode_image(const Matrix& features, const ParamSet& params, ImageCache* cache) {
  if (features.cols() != params.at("image.w1").rows()) {
    throw Error(ErrorCode::DimensionMismatch, "image feature width " + std::to_string(features.cols()));
  }
  Matrix hidden = tanh_of(dense_forward(features, params.at("image.w1"), params.at("image.b1")));
  Matrix out = dense_forward(hidden, params.at("image.w2"), params.at("image.b2"));
  if (cache != nullptr) {
    cache->input = features;
    cache->hidden = std::move(hidden);
    cache->output = out;
    cache->version = params.version();
  }
  return out;
}

GradientMap text_backward(const TextCache& cache, const Matrix& d_output, const ParamSet& params) {
  if (cache.version != params.version()) throw Error(ErrorCode::StaleCache, "text cache predates a parameter update");
  if (!d_output.same_shape(cache.output)) throw Error(ErrorCode::ShapeMismatch, "text upstream gradient");
  const Matrix d_pre = tanh_backward(cache.output, d_output);
  auto dense = dense_backward(cache.mean, params.at("text.w"), d_pre);
  const Matrix& table = params.at("text.embed");
  Matrix d_table(table.rows(), table.cols());
  for (std::size_t i = 0; i < cache.tokens.size(); ++i) {
    const double share = 1.0 / static_cast<double>(cache.tokens[i].size());
    for (TokenId t : cache.tokens[i])
      for (std::size_t j = 0; j < table.cols(); ++j) {
        d_table(static_cast<std::size_t>(t), j) += share * dense.d_input(i, j);
      }
  }
  GradientMap g;
  g.emplace("text.embed", std::move(d_table));
  g.emplace("text.w", std::move(dense.d_weight));
  g.emplace("text.b", std::move(dense.d_bias));
  return g;
}

GradientMap image_backward(const ImageCache& cache, const Matrix& d_output, const ParamSet& params) {
  if (cache.version != params.version()) throw Error(ErrorCode::StaleCache, "image cache predates a parameter update");
  if (!d_output.same_shape(cache.output)) throw Error(ErrorCode::ShapeMismatch, "image upstream gradient");
  auto top = dense_backward(cache.hidden, params.at("image.w2"), d_output);
  auto bottom = dense_backward(cache.input, params.at("image.w1"), tanh_backward(cache.hidden, top.d_input));
  GradientMap g;
  g.emplace("image.w1", std::move(bottom.d_weight));
  g.emplace("image.b1", std::move(bottom.d_bias));
  g.emplace("image.w2", std::move(top.d_weight));
  g.emplace("image.b2", std::move(top.d_bias));
  return g;
}

// ---------------------------------------------------------------------------

Matrix attribute_logits(const Matrix& embeddings, const ParamSet& params) {
  return dense_forward(embeddings, params.at("attr.w"), params.at("attr.b"));
}

HeadGrads attribute_head_backward(const Matrix& embeddings, const Matrix& d_logits,
                                  const ParamSet& params) {
  auto dense = dense_backward(embeddings, params.at("attr.w"), d_logits);
  HeadGrads out;
  out.d_input = std::move(dense.d_input);
  out.params.emplace("attr.w", std::move(dense.d_weight));
  out.params.emplace("attr.b", std::move(dense.d_bias));
  return out;
}

Matrix concat_columns(const Matrix& left, const Matrix& right) {
  if (left.rows() != right.rows()) throw Error(ErrorCode::DimensionMismatch, "concat row counts");
  Matrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t i = 0; i < left.rows(); ++i) {
    std::copy(left.row(i).begin(), left.row(i).end(), out.row(i).begin());
    std::copy(right.row(i).begin(), right.row(i).end(),
              out.row(i).begin() + static_cast<std::ptrdiff_t>(left.cols()));
  }
  return out;
}

Matrix fusion_forward(std::string_view prefix, const Matrix& input, const ParamSet& params,
                      FusionCache* cache) {
  const std::string p(prefix);
  Matrix hidden = tanh_of(dense_forward(input, params.at(p + ".w1"), params.at(p + ".b1")));
  Matrix logits = dense_forward(hidden, params.at(p + ".w2"), params.at(p + ".b2"));
  if (cache != nullptr) {
    cache->input = input;
    cache->hidden = std::move(hidden);
  }
  return logits;
}

HeadGrads fusion_backward(std::string_view prefix, const FusionCache& cache, const Matrix& d_logits,
                          const ParamSet& params) {
  const std::string p(prefix);
  auto top = dense_backward(cache.hidden, params.at(p + ".w2"), d_logits);
  auto bottom = dense_backward(cache.input, params.at(p + ".w1"), tanh_backward(cache.hidden, top.d_input));
  HeadGrads out;
  out.d_input = std::move(bottom.d_input);
  out.params.emplace(p + ".w1", std::move(bottom.d_weight));
  out.params.emplace(p + ".b1", std::move(bottom.d_bias));
  out.params.emplace(p + ".w2", std::move(top.d_weight));
  out.params.emplace(p + ".b2", std::move(top.d_bias));
  return out;
}

}  // namespace xmr
