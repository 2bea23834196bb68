// Copyright 2026 The rmppi Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rmppi/core.hpp"
#include "rmppi/rmppi.hpp"
#include "rmppi/sampling.hpp"

// Randomized property checks shared by the CLI selftest and the acceptance
// binary. Every density check compares against log-densities evaluated from
// the Gaussian formula with a Cholesky solve.
namespace rmppi::selftest {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

namespace detail {

inline Matrix random_spd(int n, Engine& engine) {
  std::normal_distribution<double> normal;
  Matrix a(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) a(i, j) = normal(engine);
  }
  Matrix s = 0.5 * a * a.transpose() + 0.5 * Matrix::Identity(n, n);
  return 0.5 * (s + s.transpose());
}

inline Matrix random_matrix(int rows, int cols, double scale, Engine& engine) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = normal(engine);
  }
  return m;
}

// log N(v; mean, Sigma) summed over the columns of v.
inline double gaussian_log_density(const Matrix& v, const Matrix& mean, const Matrix& sigma) {
  Eigen::LLT<Matrix> llt(sigma);
  const Matrix l = llt.matrixL();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  const double n = static_cast<double>(sigma.rows());
  double total = 0.0;
  for (Eigen::Index t = 0; t < v.cols(); ++t) {
    const Vector z = l.triangularView<Eigen::Lower>().solve(v.col(t) - mean.col(t));
    total += -0.5 * z.squaredNorm() - 0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det);
  }
  return total;
}

inline double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

template <class Fn>
CheckResult timed(const std::string& name, Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  CheckResult r = fn();
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace detail

// mixed_cost <= alpha  <=>  S* <= alpha, exactly.
inline CheckResult mixed_cost_iff(std::size_t trials, std::uint64_t seed = 1) {
  return detail::timed("mixed cost threshold equivalence", [&] {
    Engine engine(seed);
    std::uniform_real_distribution<double> unit;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < trials; ++i) {
      // Mix continuous draws with exact ties to probe the boundary.
      double s_star = 100.0 * unit(engine);
      double s_hat = 100.0 * unit(engine);
      double alpha = 100.0 * unit(engine);
      switch (i % 5) {
        case 1: alpha = s_star; break;
        case 2: s_hat = alpha; break;
        case 3: s_hat = s_star; break;
        default: break;
      }
      const bool lhs = mixed_cost(s_star, s_hat, alpha) <= alpha;
      const bool rhs = s_star <= alpha;
      if (lhs != rhs) ++failures;
    }
    return CheckResult{"", failures == 0,
                       std::to_string(trials) + " triples, " + std::to_string(failures) + " mismatches"};
  });
}

// augmented_is_weight against p(V) / q_A(V) with V = U + K + E, p = N(0, Sigma)
// and q_A = N(U + K, Sigma) per step.
inline CheckResult augmented_weight_oracle(std::size_t trials, std::uint64_t seed = 2,
                                           double tolerance = 1e-8) {
  return detail::timed("augmented IS weight density ratio", [&] {
    Engine engine(seed);
    std::uniform_int_distribution<int> dim(1, 3), len(1, 10);
    double worst = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
      const int n_u = dim(engine), horizon = len(engine);
      const Matrix sigma = detail::random_spd(n_u, engine);
      const Matrix u = detail::random_matrix(n_u, horizon, 0.4, engine);
      const Matrix k = detail::random_matrix(n_u, horizon, 0.4, engine);
      const Matrix l = Eigen::LLT<Matrix>(sigma).matrixL();
      const Matrix eps = l * detail::random_matrix(n_u, horizon, 1.0, engine);
      const Matrix v = u + k + eps;
      const double oracle = std::exp(
          detail::gaussian_log_density(v, Matrix::Zero(n_u, horizon), sigma) -
          detail::gaussian_log_density(v, u + k, sigma));
      const Matrix sigma_inv = sigma.inverse();
      worst = std::max(worst, detail::rel_error(augmented_is_weight(u, k, eps, sigma_inv), oracle));
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu tuples, max rel. error %.3g", trials, worst);
    return CheckResult{"", worst <= tolerance, buf};
  });
}

// min S <= F_MC <= min S + lambda log N.
inline CheckResult free_energy_sandwich(std::size_t trials, std::uint64_t seed = 3,
                                        double tolerance = 1e-9) {
  return detail::timed("free-energy sandwich", [&] {
    Engine engine(seed);
    std::uniform_int_distribution<int> count(1, 512);
    std::uniform_real_distribution<double> unit;
    std::size_t failures = 0;
    for (std::size_t i = 0; i < trials; ++i) {
      const int n = count(engine);
      const double lambda = std::pow(10.0, -2.0 + 4.0 * unit(engine));
      const double spread = std::pow(10.0, -3.0 + 7.0 * unit(engine));
      const double offset = 1e3 * (unit(engine) - 0.5);
      Vector costs(n);
      for (int j = 0; j < n; ++j) costs(j) = offset + spread * unit(engine);
      const FreeEnergyEstimate f = free_energy_mc(costs, lambda);
      const double lo = costs.minCoeff();
      const double hi = lo + lambda * std::log(static_cast<double>(n));
      const double slack = tolerance * std::max({1.0, std::abs(lo), std::abs(hi)});
      if (f.value < lo - slack || f.value > hi + slack) ++failures;
    }
    return CheckResult{"", failures == 0,
                       std::to_string(trials) + " batches, " + std::to_string(failures) + " outside"};
  });
}

// Batch-normalized is_weights against exp(-S/lambda) p(V) / q(V | U).
inline CheckResult is_weight_oracle(std::size_t trials, std::uint64_t seed = 4,
                                    double tolerance = 1e-8) {
  return detail::timed("vanilla IS weight density ratio", [&] {
    Engine engine(seed);
    std::uniform_int_distribution<int> dim(1, 3), len(1, 10), count(2, 8);
    std::uniform_real_distribution<double> unit;
    double worst = 0.0;
    for (std::size_t i = 0; i < trials; ++i) {
      const int n_u = dim(engine), horizon = len(engine), n = count(engine);
      const Matrix sigma = detail::random_spd(n_u, engine);
      const Matrix l = Eigen::LLT<Matrix>(sigma).matrixL();
      const Matrix u = detail::random_matrix(n_u, horizon, 0.4, engine);
      const double lambda = 0.5 + 2.0 * unit(engine);
      std::vector<ControlSequence> v;
      Vector costs(n), oracle(n);
      for (int j = 0; j < n; ++j) {
        v.push_back(u + l * detail::random_matrix(n_u, horizon, 1.0, engine));
        costs(j) = 5.0 * unit(engine);
        oracle(j) = -costs(j) / lambda +
                    detail::gaussian_log_density(v.back(), Matrix::Zero(n_u, horizon), sigma) -
                    detail::gaussian_log_density(v.back(), u, sigma);
      }
      oracle = (oracle.array() - oracle.maxCoeff()).exp();
      oracle /= oracle.sum();
      const Vector w = is_weights(v, u, sigma.inverse(), lambda, costs);
      for (int j = 0; j < n; ++j) worst = std::max(worst, detail::rel_error(w(j), oracle(j)));
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu batches, max rel. error %.3g", trials, worst);
    return CheckResult{"", worst <= tolerance, buf};
  });
}

}  // namespace rmppi::selftest
