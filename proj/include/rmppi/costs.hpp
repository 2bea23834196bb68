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

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>

#include "rmppi/core.hpp"
#include "rmppi/dynamics.hpp"

namespace rmppi {

// State-dependent part of the running cost (q) and the terminal cost (phi).
class StateCost {
 public:
  virtual ~StateCost() = default;
  virtual double running(const ConstVectorRef& x) const = 0;
  virtual double terminal(const ConstVectorRef& x) const = 0;
};

using StateCostPtr = std::shared_ptr<const StateCost>;

class FunctionStateCost final : public StateCost {
 public:
  using Fn = std::function<double(const ConstVectorRef&)>;
  FunctionStateCost(Fn running, Fn terminal)
      : running_(std::move(running)), terminal_(std::move(terminal)) {}

  double running(const ConstVectorRef& x) const override { return running_(x); }
  double terminal(const ConstVectorRef& x) const override {
    return terminal_(x);
  }

 private:
  Fn running_;
  Fn terminal_;
};

struct QuadraticWallParams {
  Vector target;
  Vector weights;      // diagonal of the quadratic weight
  Vector wall_lower;   // -inf where there is no wall
  Vector wall_upper;   // +inf where there is no wall
  double wall_slope = 0.0;
  double cap = std::numeric_limits<double>::infinity();
  double terminal_scale = 1.0;
};

// Quadratic pull toward a target plus linear walls with a steep slope,
//   q(x)   = min(cap, sum_i w_i (x_i - c_i)^2 + slope * sum_i dist(x_i, [lo_i, hi_i]))
//   phi(x) = terminal_scale * q(x).
// The cap keeps q globally Lipschitz.
class QuadraticWallCost final : public StateCost {
 public:
  explicit QuadraticWallCost(QuadraticWallParams params)
      : p_(std::move(params)) {
    const auto n = p_.target.size();
    require(n > 0, "cost target must be non-empty");
    require(p_.weights.size() == n, "cost weights must match target");
    if (p_.wall_lower.size() == 0) {
      p_.wall_lower =
          Vector::Constant(n, -std::numeric_limits<double>::infinity());
    }
    if (p_.wall_upper.size() == 0) {
      p_.wall_upper =
          Vector::Constant(n, std::numeric_limits<double>::infinity());
    }
    require(p_.wall_lower.size() == n && p_.wall_upper.size() == n,
            "wall bounds must match target");
    require((p_.weights.array() >= 0.0).all(), "cost weights must be >= 0");
    require(p_.wall_slope >= 0.0, "wall slope must be >= 0");
    require(p_.cap > 0.0, "cost cap must be > 0");
    require(p_.terminal_scale >= 0.0, "terminal scale must be >= 0");
  }

  const QuadraticWallParams& params() const { return p_; }

  double uncapped(const ConstVectorRef& x) const {
    double value = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double d = x(i) - p_.target(i);
      value += p_.weights(i) * d * d;
      if (x(i) > p_.wall_upper(i)) value += p_.wall_slope * (x(i) - p_.wall_upper(i));
      if (x(i) < p_.wall_lower(i)) value += p_.wall_slope * (p_.wall_lower(i) - x(i));
    }
    return value;
  }

  double running(const ConstVectorRef& x) const override {
    if (!x.allFinite()) return p_.cap;
    return std::min(p_.cap, uncapped(x));
  }

  double terminal(const ConstVectorRef& x) const override {
    return p_.terminal_scale * running(x);
  }

  // Exact global Lipschitz constant of q with respect to ||v||_W =
  // sqrt(v' W v) (Euclidean when W is empty). Each gradient component is
  // monotone in its own coordinate, so the supremum of the dual norm over the
  // sublevel box {uncapped <= cap} sits on a corner of the gradient box.
  double lipschitz_running(const Matrix& weight = Matrix()) const {
    const auto n = p_.target.size();
    Vector g_lo(n), g_hi(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double inf = std::numeric_limits<double>::infinity();
      double lo = -inf, hi = inf;
      if (p_.weights(i) > 0.0) {
        const double r = std::sqrt(p_.cap / p_.weights(i));
        lo = p_.target(i) - r;
        hi = p_.target(i) + r;
      }
      if (p_.wall_slope > 0.0) {
        if (std::isfinite(p_.wall_upper(i))) {
          hi = std::min(hi, p_.wall_upper(i) + p_.cap / p_.wall_slope);
        }
        if (std::isfinite(p_.wall_lower(i))) {
          lo = std::max(lo, p_.wall_lower(i) - p_.cap / p_.wall_slope);
        }
      }
      auto grad = [&](double xi, bool upper_side) {
        double g = 0.0;
        if (p_.weights(i) > 0.0) g += 2.0 * p_.weights(i) * (xi - p_.target(i));
        if (upper_side && xi > p_.wall_upper(i)) g += p_.wall_slope;
        if (!upper_side && xi < p_.wall_lower(i)) g -= p_.wall_slope;
        return g;
      };
      if (p_.weights(i) > 0.0 && (!std::isfinite(lo) || !std::isfinite(hi))) {
        return std::numeric_limits<double>::infinity();
      }
      g_lo(i) = std::isfinite(lo) ? grad(lo, false)
                                  : (std::isfinite(p_.wall_lower(i)) ? -p_.wall_slope : 0.0);
      g_hi(i) = std::isfinite(hi) ? grad(hi, true)
                                  : (std::isfinite(p_.wall_upper(i)) ? p_.wall_slope : 0.0);
      if (!std::isfinite(g_lo(i)) || !std::isfinite(g_hi(i))) {
        return std::numeric_limits<double>::infinity();
      }
    }
    Matrix dual = weight.size() == 0 ? Matrix::Identity(n, n) : Matrix(weight.inverse());
    double best = 0.0;
    Vector corner(n);
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
      for (Eigen::Index i = 0; i < n; ++i) {
        corner(i) = (mask >> i) & 1U ? g_hi(i) : g_lo(i);
      }
      best = std::max(best, std::sqrt(std::max(0.0, corner.dot(dual * corner))));
    }
    return best;
  }

  double lipschitz_terminal(const Matrix& weight = Matrix()) const {
    return p_.terminal_scale * lipschitz_running(weight);
  }

 private:
  QuadraticWallParams p_;
};

// Everything the samplers need to score a trajectory.
struct CostFunction {
  StateCostPtr state;
  Matrix sigma;        // control-noise covariance
  Matrix sigma_inv;
  Matrix sigma_chol;   // lower Cholesky factor of sigma
  double lambda = 1.0; // inverse temperature
  double beta = 0.5;   // control-cost smoothing
  double lipschitz_q = std::numeric_limits<double>::infinity();
  double lipschitz_phi = std::numeric_limits<double>::infinity();

  int control_dim() const { return static_cast<int>(sigma.rows()); }
};

inline CostFunction make_cost(StateCostPtr state, const Matrix& sigma,
                              double lambda, double beta,
                              double lipschitz_q =
                                  std::numeric_limits<double>::infinity(),
                              double lipschitz_phi =
                                  std::numeric_limits<double>::infinity()) {
  require(state != nullptr, "cost needs a state cost");
  require(sigma.rows() == sigma.cols() && sigma.rows() > 0,
          "sigma must be square and non-empty");
  require(sigma.isApprox(sigma.transpose(), 1e-12), "sigma must be symmetric");
  Eigen::LLT<Matrix> llt(sigma);
  require(llt.info() == Eigen::Success, "sigma must be positive definite");
  require(lambda > 0.0 && std::isfinite(lambda), "lambda must be > 0");
  require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  require(lipschitz_q >= 0.0 && lipschitz_phi >= 0.0,
          "Lipschitz constants must be >= 0");
  CostFunction cost;
  cost.state = std::move(state);
  cost.sigma = sigma;
  cost.sigma_chol = llt.matrixL();
  cost.sigma_inv = llt.solve(Matrix::Identity(sigma.rows(), sigma.cols()));
  cost.lambda = lambda;
  cost.beta = beta;
  cost.lipschitz_q = lipschitz_q;
  cost.lipschitz_phi = lipschitz_phi;
  return cost;
}

// phi(x_T) + sum_{t<T} q(x_t) over the columns of `trajectory`.
inline double path_cost(const StateCost& cost, const Matrix& trajectory) {
  require(trajectory.cols() >= 1, "trajectory needs at least one state");
  const Eigen::Index horizon = trajectory.cols() - 1;
  double running = 0.0;
  for (Eigen::Index t = 0; t < horizon; ++t) running += cost.running(trajectory.col(t));
  return running + cost.terminal(trajectory.col(horizon));
}

inline double path_cost(const StateCost& cost, const Matrix& trajectory,
                        int horizon) {
  require(trajectory.cols() == horizon + 1,
          "trajectory must hold horizon + 1 states, got " +
              std::to_string(trajectory.cols()));
  return path_cost(cost, trajectory);
}

enum class ControlCostScale {
  kFull,      // lambda / 2
  kSmoothed,  // lambda (1 - beta) / 2
};

// scale * (u' Sigma^-1 u + 2 u' Sigma^-1 eps)
inline double control_cost_term(const CostFunction& cost,
                                const ConstVectorRef& u,
                                const ConstVectorRef& eps,
                                ControlCostScale scale = ControlCostScale::kFull) {
  const double factor = scale == ControlCostScale::kFull
                            ? 0.5 * cost.lambda
                            : 0.5 * cost.lambda * (1.0 - cost.beta);
  const Vector si_u = cost.sigma_inv * u;
  return factor * (u.dot(si_u) + 2.0 * eps.dot(si_u));
}

struct LipschitzEstimate {
  double running = 0.0;
  double terminal = 0.0;
  std::size_t pairs = 0;
};

// Largest observed difference quotient over sampled pairs in `domain`; a
// lower bound on the true constants. Half of the pairs are independent
// uniform draws, half are short chords that probe the local slope.
inline LipschitzEstimate lipschitz_estimate(const StateCost& cost,
                                            const StateBox& domain,
                                            std::size_t n_pairs,
                                            std::uint64_t seed = 0,
                                            const Matrix& weight = Matrix()) {
  require(n_pairs >= 1, "lipschitz_estimate needs n_pairs >= 1");
  const auto n = domain.lower.size();
  require(n > 0 && domain.upper.size() == n, "domain box is empty");
  require(domain.lower.allFinite() && domain.upper.allFinite(),
          "domain box must be bounded");
  require((domain.upper.array() > domain.lower.array()).all(),
          "domain box has zero volume");
  Engine engine(stream_seed(seed, StreamTag::kDomain, 0));
  std::uniform_real_distribution<double> unit;
  std::normal_distribution<double> normal;
  const Vector width = domain.upper - domain.lower;
  auto draw = [&] {
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = domain.lower(i) + width(i) * unit(engine);
    return x;
  };
  LipschitzEstimate est;
  est.pairs = n_pairs;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const Vector a = draw();
    Vector b;
    if (k % 2 == 0) {
      b = draw();
    } else {
      Vector dir(n);
      for (Eigen::Index i = 0; i < n; ++i) dir(i) = normal(engine) * width(i);
      b = (a + 1e-4 * dir).cwiseMax(domain.lower).cwiseMin(domain.upper);
    }
    const double dist = weighted_norm(a - b, weight);
    if (dist <= 0.0) continue;
    est.running = std::max(est.running,
                           std::abs(cost.running(a) - cost.running(b)) / dist);
    est.terminal = std::max(est.terminal,
                            std::abs(cost.terminal(a) - cost.terminal(b)) / dist);
  }
  return est;
}

}  // namespace rmppi
