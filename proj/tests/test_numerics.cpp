// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <set>

#include "doctest.h"
#include "xmr/error.hpp"
#include "xmr/numerics.hpp"
#include "test_util.hpp"

using namespace xmr;
using xmr::test::code_of;

using xmr::test::random_matrix;

TEST_CASE("l2_normalize") {
  const std::vector<double> v{3.0, 4.0};
  const auto u = l2_normalize(v);
  CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));

  const std::vector<double> e{1.0, 0.0, 0.0};
  CHECK(l2_normalize(e) == e);

  const std::vector<double> zero{0.0, 0.0};
  CHECK(code_of([&] { l2_normalize(zero); }) == ErrorCode::ZeroVector);

  Rng rng(7);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(5);
    for (auto& a : x) a = rng.normal() * std::pow(10.0, rng.uniform(-5, 5));
    CHECK(std::abs(norm2(l2_normalize(x)) - 1.0) < 1e-12);
  }
}

TEST_CASE("cosine similarity matrix") {
  CHECK(cosine_similarity_matrix(Matrix::identity(2), Matrix::identity(2)) == Matrix{{1, 0}, {0, 1}});
  CHECK(cosine_similarity_matrix(Matrix{{1, 0}}, Matrix{{-1, 0}})(0, 0) == -1.0);
  CHECK(code_of([] { cosine_similarity_matrix(Matrix(2, 3), Matrix(2, 4)); }) == ErrorCode::DimensionMismatch);

  Rng rng(11);
  const auto t = random_matrix(3, 4, rng);
  const auto i = random_matrix(3, 4, rng);
  const auto s = cosine_similarity_matrix(t, i);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k) ref += t(a, k) * i(b, k);
      CHECK(std::abs(s(a, b) - ref) <= 1e-12);
    }
  CHECK(cosine_similarity_matrix(i, t) == s.transposed());
}

TEST_CASE("stable softmax rows") {
  const auto p = stable_softmax_rows(Matrix{{1, 1, 1, 1}}, 1.0);
  for (double v : p.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  const auto q = stable_softmax_rows(Matrix{{0.0, std::log(3.0)}}, 1.0);
  CHECK(std::abs(q[0] - 0.25) < 1e-15);
  CHECK(std::abs(q[1] - 0.75) < 1e-15);

  const auto big = stable_softmax_rows(Matrix{{1000.0, 0.0}}, 1.0);
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);

  CHECK(code_of([] { stable_softmax_rows(Matrix{{1, 2}}, 0.0); }) == ErrorCode::NonPositiveTemperature);
  CHECK(code_of([] { stable_softmax_rows(Matrix{{1, 2}}, -1.0); }) == ErrorCode::NonPositiveTemperature);

  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    auto l = random_matrix(4, 6, rng);
    l *= 10.0;
    const auto s = stable_softmax_rows(l, rng.uniform(0.01, 2.0));
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double sum = 0.0;
      for (double v : s.row(r)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("finite differences") {
  const ScalarFunction square = [](std::span<const double> x) { return x[0] * x[0]; };
  const std::vector<double> x{3.0};
  CHECK(std::abs(finite_difference_gradient(square, x, 1e-6)[0] - 6.0) < 1e-6);

  const ScalarFunction constant = [](std::span<const double>) { return 4.2; };
  const std::vector<double> y{1.0, -2.0, 0.5};
  for (double g : finite_difference_gradient(constant, y, 1e-6)) CHECK(g == 0.0);

  const ScalarFunction lse = [](std::span<const double> v) { return log_sum_exp(v); };
  const std::vector<double> z{0.3, -1.2, 2.0};
  const auto g = finite_difference_gradient(lse, z, 1e-6);
  const auto s = stable_softmax_rows(Matrix::row_vector(z), 1.0);
  CHECK(max_relative_error(g, s.values()) < 1e-8);
}

TEST_CASE("max relative error") {
  const std::vector<double> a{1.0, 2.0};
  const std::vector<double> b{1.0, 2.2};
  CHECK(max_relative_error(a, b) == doctest::Approx(0.2 / 2.2));
  CHECK(max_relative_error(a, a) == 0.0);
  const std::vector<double> tiny{0.0, 1e-12};
  CHECK(max_relative_error(tiny, std::vector<double>{0.0, 0.0}) == doctest::Approx(1e-4));
  const std::vector<double> nan{std::numeric_limits<double>::quiet_NaN(), 0.0};
  CHECK(std::isinf(max_relative_error(nan, a)));
}

TEST_CASE("matrix products") {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  const Matrix b{{1, 0}, {0, 1}, {1, 1}};
  CHECK(matmul(a, b) == Matrix{{4, 5}, {10, 11}});
  CHECK(matmul_bt(a, a) == matmul(a, a.transposed()));
  CHECK(matmul_at(a, a) == matmul(a.transposed(), a));
}

TEST_CASE("rng determinism and child independence") {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng fresh(42);
  Rng used(42);
  for (int i = 0; i < 17; ++i) used.next_u64();
  CHECK(fresh.child("x").next_u64() == used.child("x").next_u64());
  CHECK(fresh.child("x", 3).next_u64() == used.child("x", 3).next_u64());
  CHECK(fresh.child("x").next_u64() != fresh.child("y").next_u64());
  CHECK(fresh.child(std::uint64_t{1}).next_u64() != fresh.child(std::uint64_t{2}).next_u64());

  Rng r(5);
  double sum = 0.0;
  double sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.02);

  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.below(7);
    CHECK(k < 7);
    seen.insert(k);
  }
  CHECK(seen.size() == 7);

  std::vector<int> items{1, 2, 3, 4, 5, 6};
  Rng s(9);
  s.shuffle(items);
  CHECK(std::multiset<int>(items.begin(), items.end()) == std::multiset<int>{1, 2, 3, 4, 5, 6});
}
