// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xmr/losses.hpp"
#include "xmr/model.hpp"

namespace xmr {

struct GradcheckOptions {
  int seeds = 100;
  double step = 1e-6;
  double tolerance = 1e-5;
  /// Tensors larger than this are checked on a seeded sample of coordinates.
  std::size_t max_coords_per_tensor = 64;
  std::uint64_t base_seed = 2023;
};

struct TensorCheck {
  std::string name;
  std::size_t coords = 0;
  double max_relative_error = 0.0;
};

struct GradcheckResult {
  std::string loss;
  int batches = 0;
  double max_relative_error = 0.0;
  std::string worst_tensor;
  bool passed = false;
};

/// Loss of the variables in `vars`; gradients are keyed by the same names.
using LossFunction = std::function<LossResult(const ParamSet& vars)>;

/// Compares the analytic gradients of `loss` at `vars` with central differences
/// on every tensor listed in `checked`.
std::vector<TensorCheck> check_gradients(const LossFunction& loss, ParamSet vars,
                                         const std::vector<std::string>& checked, const GradcheckOptions& options,
                                         Rng& rng);

/// "ac", "irm", "irr", "fitc", "fitm", "pedestrian", "vehicle", "encoders".
const std::vector<std::string>& gradcheck_loss_names();

/// Runs `options.seeds` random batches (B alternating 4 and 8) for one loss.
GradcheckResult gradcheck_loss(const std::string& loss, const GradcheckOptions& options);

}  // namespace xmr
