// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "doctest.h"
#include "xmr/error.hpp"
#include "xmr/numerics.hpp"

namespace xmr::test {

inline ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an xmr::Error");
  return ErrorCode::Io;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xmr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

/// Central-difference gradient of f with respect to every entry of m.
inline Matrix numeric_gradient(Matrix& m, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double x = m[k];
    m[k] = x + h;
    const double up = f();
    m[k] = x - h;
    const double down = f();
    m[k] = x;
    g[k] = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_error(const Matrix& a, const Matrix& b) {
  REQUIRE(a.same_shape(b));
  return max_relative_error(a.values(), b.values());
}

}  // namespace xmr::test
