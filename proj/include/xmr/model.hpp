// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "xmr/datagen.hpp"
#include "xmr/io.hpp"
#include "xmr/numerics.hpp"

namespace xmr {

using GradientMap = std::map<std::string, Matrix, std::less<>>;

/// Adds `weight * from` into `into`, creating missing entries.
void accumulate(GradientMap& into, const GradientMap& from, double weight = 1.0);

/// Named parameter tensors in insertion order. Any mutable access bumps the
/// version, which invalidates forward caches taken before it.
class ParamSet {
 public:
  void add(std::string name, Matrix value);

  bool contains(std::string_view name) const;
  const Matrix& at(std::string_view name) const;
  Matrix& mutable_at(std::string_view name);

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t parameter_count() const;
  std::uint64_t version() const noexcept { return version_; }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<std::string> names_;
  std::vector<Matrix> tensors_;
  std::uint64_t version_ = 0;
};

/// Shapes of both towers and all heads. Weights are stored input×output.
///   text.embed  V×d      text.w   d×d     text.b  1×d
///   image.w1    48×64    image.b1 1×64    image.w2 64×d   image.b2 1×d
///   attr.w      d×q      attr.b   1×q
///   itm.w1      2d×h     itm.b1   1×h     itm.w2  h×2     itm.b2  1×2
///   irr.w1      2d×h     irr.b1   1×h     irr.w2  h×V     irr.b2  1×V
///   fitc.tau    1×1
struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 32;
  int image_dim = 48;
  int image_hidden = 64;
  int attribute_count = 12;
  int fusion_hidden = 32;
  double init_scale = 0.05;
  double tau_init = 0.07;

  static ModelConfig standard();
  Json to_json() const;
  static ModelConfig from_json(const Json& j);
};

ParamSet init_params(const ModelConfig& config, std::uint64_t seed);

// --- layers ----------------------------------------------------------------

/// x·w + b, with b broadcast over rows.
Matrix dense_forward(const Matrix& x, const Matrix& w, const Matrix& b);

struct DenseGrads {
  Matrix d_input;
  Matrix d_weight;
  Matrix d_bias;
};
DenseGrads dense_backward(const Matrix& x, const Matrix& w, const Matrix& d_out);

Matrix tanh_of(const Matrix& z);
/// d_out ⊙ (1 - y²) where y = tanh(z).
Matrix tanh_backward(const Matrix& y, const Matrix& d_out);

/// Rows scaled to unit length. Keeps the norms for the backward pass.
struct NormalizedRows {
  Matrix normalized;
  std::vector<double> norms;
};
NormalizedRows normalize_rows(const Matrix& pre);
/// (I - e eᵀ) g / ‖v‖ per row.
Matrix normalize_rows_backward(const NormalizedRows& forward, const Matrix& d_normalized);

// --- encoders ----------------------------------------------------------------

struct TextCache {
  std::vector<std::vector<TokenId>> tokens;
  Matrix mean;    // B×d mean of token embeddings
  Matrix output;  // B×d tanh(mean·w + b), the pre-norm embedding
  std::uint64_t version = 0;
};

struct ImageCache {
  Matrix input;
  Matrix hidden;  // tanh(input·w1 + b1)
  Matrix output;  // hidden·w2 + b2, the pre-norm embedding
  std::uint64_t version = 0;
};

/// Mean of token embeddings followed by one tanh layer. Returns pre-norm rows.
Matrix encode_text(const std::vector<std::vector<TokenId>>& batch, const ParamSet& params,
                   TextCache* cache = nullptr);
Matrix encode_image(const Matrix& features, const ParamSet& params, ImageCache* cache = nullptr);

GradientMap text_backward(const TextCache& cache, const Matrix& d_output, const ParamSet& params);
GradientMap image_backward(const ImageCache& cache, const Matrix& d_output, const ParamSet& params);

// --- heads -------------------------------------------------------------------

/// Shared attribute head: the same attr.w / attr.b score either modality.
Matrix attribute_logits(const Matrix& embeddings, const ParamSet& params);

struct HeadGrads {
  Matrix d_input;
  GradientMap params;
};
HeadGrads attribute_head_backward(const Matrix& embeddings, const Matrix& d_logits,
                                  const ParamSet& params);

/// Two-layer tanh perceptron over concatenated [text | image] rows.
/// `prefix` is "itm" or "irr".
struct FusionCache {
  Matrix input;
  Matrix hidden;
};
Matrix concat_columns(const Matrix& left, const Matrix& right);
Matrix fusion_forward(std::string_view prefix, const Matrix& input, const ParamSet& params,
                      FusionCache* cache = nullptr);
HeadGrads fusion_backward(std::string_view prefix, const FusionCache& cache, const Matrix& d_logits,
                          const ParamSet& params);

}  // namespace xmr
