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
#include <cstdio>
#include <limits>
#include <ostream>
#include <vector>

#include "rmppi/core.hpp"
#include "rmppi/costs.hpp"
#include "rmppi/dynamics.hpp"

namespace rmppi {

// N x T x n_u Gaussian perturbations. Sample n occupies columns
// [n T, (n + 1) T) of draws(); column n T + t is eps_t^n.
class NoisePlan {
 public:
  NoisePlan() = default;

  NoisePlan(std::uint64_t seed, int samples, int horizon,
            const Matrix& sigma_chol)
      : seed_(seed), samples_(samples), horizon_(horizon) {
    require(samples >= 1, "noise plan needs at least one sample");
    require(horizon >= 1, "noise plan needs horizon >= 1");
    require(sigma_chol.rows() == sigma_chol.cols() && sigma_chol.rows() > 0,
            "noise factor must be square");
    const auto n_u = sigma_chol.rows();
    draws_.resize(n_u, static_cast<Eigen::Index>(samples) * horizon);
    Engine engine(seed);
    std::normal_distribution<double> normal;
    for (Eigen::Index c = 0; c < draws_.cols(); ++c) {
      for (Eigen::Index i = 0; i < n_u; ++i) draws_(i, c) = normal(engine);
    }
    draws_ = sigma_chol.triangularView<Eigen::Lower>() * draws_;
  }

  static NoisePlan zeros(int samples, int horizon, int control_dim) {
    require(samples >= 1 && horizon >= 1 && control_dim >= 1,
            "noise plan dimensions must be positive");
    NoisePlan plan;
    plan.samples_ = samples;
    plan.horizon_ = horizon;
    plan.draws_ = Matrix::Zero(control_dim,
                               static_cast<Eigen::Index>(samples) * horizon);
    return plan;
  }

  static NoisePlan from_draws(Matrix draws, int samples, int horizon) {
    require(samples >= 1 && horizon >= 1, "noise plan dimensions must be positive");
    require(draws.cols() == static_cast<Eigen::Index>(samples) * horizon,
            "draws must have samples * horizon columns");
    NoisePlan plan;
    plan.samples_ = samples;
    plan.horizon_ = horizon;
    plan.draws_ = std::move(draws);
    return plan;
  }

  std::uint64_t seed() const { return seed_; }
  int samples() const { return samples_; }
  int horizon() const { return horizon_; }
  int control_dim() const { return static_cast<int>(draws_.rows()); }
  const Matrix& draws() const { return draws_; }

  auto sample(int n) const {
    return draws_.middleCols(static_cast<Eigen::Index>(n) * horizon_, horizon_);
  }
  auto sample(int n) {
    return draws_.middleCols(static_cast<Eigen::Index>(n) * horizon_, horizon_);
  }

 private:
  std::uint64_t seed_ = 0;
  int samples_ = 0;
  int horizon_ = 0;
  Matrix draws_;
};

struct FreeEnergyEstimate {
  double value = 0.0;
  std::size_t samples = 0;
  double min_cost = 0.0;
  double spread = std::numeric_limits<double>::quiet_NaN();
};

// -lambda log((1/N) sum exp(-S_n / lambda)) with the minimum cost factored
// out.
inline FreeEnergyEstimate free_energy_mc(const ConstVectorRef& costs,
                                         double lambda) {
  require(costs.size() >= 1, "free_energy_mc needs at least one cost");
  require(lambda > 0.0 && std::isfinite(lambda), "lambda must be > 0");
  require(costs.allFinite(), "free_energy_mc: costs must be finite");
  const double min_cost = costs.minCoeff();
  double sum = 0.0;
  for (Eigen::Index n = 0; n < costs.size(); ++n) {
    sum += std::exp(-(costs(n) - min_cost) / lambda);
  }
  FreeEnergyEstimate est;
  est.samples = static_cast<std::size_t>(costs.size());
  est.min_cost = min_cost;
  est.value = min_cost - lambda * std::log(sum / static_cast<double>(costs.size()));
  return est;
}

// Normalized exp(-S_n / lambda). +inf costs get weight 0; NaN costs or a
// batch without any finite cost are degenerate.
inline Vector softmax_weights(const ConstVectorRef& costs, double lambda) {
  require(costs.size() >= 1, "softmax needs at least one cost");
  require(lambda > 0.0, "lambda must be > 0");
  double min_cost = std::numeric_limits<double>::infinity();
  for (Eigen::Index n = 0; n < costs.size(); ++n) {
    if (std::isnan(costs(n))) throw DegenerateSampling("NaN sample cost");
    min_cost = std::min(min_cost, costs(n));
  }
  if (!std::isfinite(min_cost)) {
    throw DegenerateSampling("no sample has a finite cost");
  }
  Vector w(costs.size());
  double sum = 0.0;
  for (Eigen::Index n = 0; n < costs.size(); ++n) {
    w(n) = std::exp(-(costs(n) - min_cost) / lambda);
    sum += w(n);
  }
  return w / sum;
}

// U + sum_n wbar_n E^n with wbar the normalized weights.
inline ControlSequence mppi_update(const ControlSequence& u,
                                   const ConstVectorRef& weights,
                                   const NoisePlan& plan) {
  require(weights.size() == plan.samples(), "one weight per sample required");
  require(u.rows() == plan.control_dim() && u.cols() == plan.horizon(),
          "control sequence does not match the noise plan");
  double sum = 0.0;
  for (Eigen::Index n = 0; n < weights.size(); ++n) {
    require(weights(n) >= 0.0, "weights must be nonnegative");
    sum += weights(n);
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw DegenerateSampling("all sample weights are zero");
  }
  ControlSequence out = u;
  for (int n = 0; n < plan.samples(); ++n) {
    const double w = weights(n) / sum;
    if (w != 0.0) out.noalias() += w * plan.sample(n);
  }
  return out;
}

// Log of the unnormalized vanilla importance weight of a sampled control
// sequence V drawn around U:
//   -S / lambda - sum_t (v_t - u_t / 2)' Sigma^-1 u_t.
// exp of the second term is the Gaussian density ratio p(V) / q(V | U).
inline double is_log_weight(const ControlSequence& v, const ControlSequence& u,
                            const Matrix& sigma_inv, double lambda,
                            double cost) {
  require(v.rows() == u.rows() && v.cols() == u.cols(),
          "V and U must have the same shape");
  require(sigma_inv.rows() == u.rows(), "Sigma^-1 does not match controls");
  double correction = 0.0;
  for (Eigen::Index t = 0; t < u.cols(); ++t) {
    correction += (v.col(t) - 0.5 * u.col(t)).dot(sigma_inv * u.col(t));
  }
  return -cost / lambda - correction;
}

// Batch-normalized importance weights; they sum to one.
inline Vector is_weights(const std::vector<ControlSequence>& v,
                         const ControlSequence& u, const Matrix& sigma_inv,
                         double lambda, const ConstVectorRef& costs) {
  require(!v.empty() && costs.size() == static_cast<Eigen::Index>(v.size()),
          "one cost per sample required");
  Vector logw(costs.size());
  for (std::size_t n = 0; n < v.size(); ++n) {
    logw(static_cast<Eigen::Index>(n)) =
        is_log_weight(v[n], u, sigma_inv, lambda, costs(static_cast<Eigen::Index>(n)));
  }
  // exp(-(c)/1) with c = -logw reuses the stable softmax.
  return softmax_weights(-logw, 1.0);
}

inline double is_weight(const std::vector<ControlSequence>& v,
                        const ControlSequence& u, const Matrix& sigma_inv,
                        double lambda, const ConstVectorRef& costs,
                        std::size_t index) {
  require(index < v.size(), "sample index out of range");
  return is_weights(v, u, sigma_inv, lambda, costs)(static_cast<Eigen::Index>(index));
}

struct RolloutOptions {
  ControlCostScale control_scale = ControlCostScale::kFull;
  // Cost assigned to samples whose state blows up.
  double crash_cost = 1e6;
  unsigned workers = 1;
};

struct RolloutBatch {
  Vector state_costs;    // path_cost part
  Vector control_costs;  // sum of control_cost_term
  Vector costs;          // total
  std::vector<unsigned char> crashed;

  std::size_t crash_count() const {
    std::size_t c = 0;
    for (auto f : crashed) c += f;
    return c;
  }
};

namespace detail {

// Per-step Sigma^-1 u_t and u_t' Sigma^-1 u_t.
struct ControlTerms {
  Matrix si_u;
  Vector u_si_u;

  ControlTerms(const CostFunction& cost, const ControlSequence& u)
      : si_u(cost.sigma_inv * u), u_si_u(u.cols()) {
    for (Eigen::Index t = 0; t < u.cols(); ++t) u_si_u(t) = u.col(t).dot(si_u.col(t));
  }

  double at(Eigen::Index t, const ConstVectorRef& eps) const {
    return u_si_u(t) + 2.0 * eps.dot(si_u.col(t));
  }
};

inline double scale_factor(const CostFunction& cost, ControlCostScale scale) {
  return scale == ControlCostScale::kFull ? 0.5 * cost.lambda
                                          : 0.5 * cost.lambda * (1.0 - cost.beta);
}

}  // namespace detail

// Propagates x_0 under U + E^n for every sample and scores it with
// path_cost plus the control terms. Results do not depend on `workers`.
inline RolloutBatch rollout_batch(const SystemModel& model,
                                  const CostFunction& cost,
                                  const ConstVectorRef& x0,
                                  const ControlSequence& u,
                                  const NoisePlan& plan,
                                  const RolloutOptions& options = {}) {
  require_dims(x0, model.state_dim(), "rollout initial state");
  require(u.rows() == model.control_dim(), "control sequence has wrong n_u");
  require(u.cols() == plan.horizon() && plan.control_dim() == u.rows(),
          "control sequence does not match the noise plan");
  require(cost.control_dim() == model.control_dim(),
          "cost covariance does not match n_u");
  const int samples = plan.samples();
  const Eigen::Index horizon = u.cols();
  const detail::ControlTerms terms(cost, u);
  const double factor = detail::scale_factor(cost, options.control_scale);

  RolloutBatch batch;
  batch.state_costs.resize(samples);
  batch.control_costs.resize(samples);
  batch.costs.resize(samples);
  batch.crashed.assign(static_cast<std::size_t>(samples), 0);

  parallel_for(static_cast<std::size_t>(samples), options.workers, [&](std::size_t i) {
    const int n = static_cast<int>(i);
    const auto eps = plan.sample(n);
    Vector x = x0;
    Vector v(u.rows());
    Vector xdot(x0.size());
    double state = 0.0;
    double control = 0.0;
    bool crashed = false;
    for (Eigen::Index t = 0; t < horizon; ++t) {
      state += cost.state->running(x);
      control += terms.at(t, eps.col(t));
      v = u.col(t) + eps.col(t);
      model.step_inplace(x, v, xdot);
      if (!x.allFinite()) {
        crashed = true;
        break;
      }
    }
    if (!crashed) {
      state += cost.state->terminal(x);
      control *= factor;
    }
    if (crashed || !std::isfinite(state) || !std::isfinite(control)) {
      batch.crashed[i] = 1;
      batch.state_costs(n) = options.crash_cost;
      batch.control_costs(n) = 0.0;
      batch.costs(n) = options.crash_cost;
      return;
    }
    batch.state_costs(n) = state;
    batch.control_costs(n) = control;
    batch.costs(n) = state + control;
  });
  return batch;
}

// Local polynomial least-squares smoothing along time, one fit per step with
// the window clipped at the ends. window must be odd.
inline ControlSequence savitzky_golay(const ControlSequence& u, int window,
                                      int order) {
  require(window >= 1 && window % 2 == 1, "smoothing window must be odd");
  require(order >= 0 && order < window, "polynomial order must be < window");
  const Eigen::Index horizon = u.cols();
  const int half = window / 2;
  ControlSequence out(u.rows(), horizon);
  for (Eigen::Index t = 0; t < horizon; ++t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, t - half);
    const Eigen::Index hi = std::min<Eigen::Index>(horizon - 1, t + half);
    const Eigen::Index m = hi - lo + 1;
    const int degree = static_cast<int>(std::min<Eigen::Index>(order, m - 1));
    Matrix a(m, degree + 1);
    for (Eigen::Index r = 0; r < m; ++r) {
      const double s = static_cast<double>(lo + r - t);
      double p = 1.0;
      for (int c = 0; c <= degree; ++c, p *= s) a(r, c) = p;
    }
    const Matrix coeffs =
        a.colPivHouseholderQr().solve(u.middleCols(lo, m).transpose());
    out.col(t) = coeffs.row(0).transpose();
  }
  return out;
}

inline void write_batch_csv(std::ostream& os, const ConstVectorRef& costs,
                            const ConstVectorRef& weights) {
  require(costs.size() == weights.size(), "costs and weights differ in length");
  os << "sample,cost,weight\n";
  char buf[96];
  for (Eigen::Index n = 0; n < costs.size(); ++n) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g\n",
                  static_cast<long long>(n), costs(n), weights(n));
    os << buf;
  }
}

}  // namespace rmppi
