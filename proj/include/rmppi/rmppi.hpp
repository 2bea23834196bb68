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
#include <limits>
#include <numbers>
#include <vector>

#include "rmppi/core.hpp"
#include "rmppi/costs.hpp"
#include "rmppi/dynamics.hpp"
#include "rmppi/feedback.hpp"
#include "rmppi/sampling.hpp"

namespace rmppi {

// 1/2 S* + 1/2 max(min(S_hat, alpha), S*). Bounded by alpha exactly when
// S* is.
inline double mixed_cost(double s_star, double s_hat, double alpha) {
  return 0.5 * s_star + 0.5 * std::max(std::min(s_hat, alpha), s_star);
}

// S + lambda (1 - beta) / 2 sum_t k_t' Sigma^-1 k_t. Columns of `feedback`
// are the k_t.
inline double s_hat(double s_real_state, const Matrix& feedback,
                    const CostFunction& cost) {
  require(feedback.rows() == cost.control_dim(), "feedback has wrong n_u");
  double penalty = 0.0;
  for (Eigen::Index t = 0; t < feedback.cols(); ++t) {
    penalty += feedback.col(t).dot(cost.sigma_inv * feedback.col(t));
  }
  return s_real_state + 0.5 * cost.lambda * (1.0 - cost.beta) * penalty;
}

// exp(-1/2 sum_t (u_t + k_t)' Sigma^-1 (u_t + k_t + 2 eps_t)), the density
// ratio p(V) / q_A(V) of the real system's controls under the augmented
// sampler.
inline double augmented_is_log_weight(const ControlSequence& u,
                                      const Matrix& k, const Matrix& eps,
                                      const Matrix& sigma_inv) {
  require(u.rows() == k.rows() && u.rows() == eps.rows() &&
              u.cols() == k.cols() && u.cols() == eps.cols(),
          "u, k and eps must share one shape");
  require(sigma_inv.rows() == u.rows() && sigma_inv.cols() == u.rows(),
          "Sigma^-1 does not match controls");
  double exponent = 0.0;
  for (Eigen::Index t = 0; t < u.cols(); ++t) {
    const Vector uk = u.col(t) + k.col(t);
    exponent += uk.dot(sigma_inv * (uk + 2.0 * eps.col(t)));
  }
  return -0.5 * exponent;
}

inline double augmented_is_weight(const ControlSequence& u, const Matrix& k,
                                  const Matrix& eps, const Matrix& sigma_inv) {
  return std::exp(augmented_is_log_weight(u, k, eps, sigma_inv));
}

struct AugmentedRollout {
  Vector s_star;   // nominal state cost S_n
  Vector s_hat;    // real state cost plus feedback penalty
  Vector s_real;   // real state cost plus corrected control terms
  Vector s_nom;    // mixed cost plus nominal control terms
  std::vector<unsigned char> real_crashed;
  std::vector<unsigned char> nominal_crashed;
  double alpha = std::numeric_limits<double>::infinity();
};

// Co-propagates the real copy (with feedback toward the nominal copy) and
// the nominal copy under shared noise. Rollouts are disturbance-free.
inline AugmentedRollout augmented_is(const SystemModel& model,
                                     const CostFunction& cost,
                                     const ConstVectorRef& x0,
                                     const ConstVectorRef& x0_star,
                                     const ControlSequence& u,
                                     const FeedbackPolicy& policy,
                                     const NoisePlan& plan, double alpha,
                                     const RolloutOptions& options = {}) {
  require_dims(x0, model.state_dim(), "AIS real state");
  require_dims(x0_star, model.state_dim(), "AIS nominal state");
  require(u.rows() == model.control_dim() && u.cols() == plan.horizon() &&
              plan.control_dim() == u.rows(),
          "control sequence does not match the noise plan");
  require(policy.state_dim() == model.state_dim() &&
              policy.control_dim() == model.control_dim(),
          "feedback policy does not match the model");
  require(policy.kind() != FeedbackKind::kIlqg || policy.horizon() == u.cols(),
          "feedback gains do not cover the horizon");
  require(cost.control_dim() == model.control_dim(),
          "cost covariance does not match n_u");

  const int samples = plan.samples();
  const Eigen::Index horizon = u.cols();
  const detail::ControlTerms terms(cost, u);
  const double full = detail::scale_factor(cost, ControlCostScale::kFull);
  const double smoothed = detail::scale_factor(cost, ControlCostScale::kSmoothed);
  const StateCost& q = *cost.state;

  AugmentedRollout out;
  out.alpha = alpha;
  out.s_star.resize(samples);
  out.s_hat.resize(samples);
  out.s_real.resize(samples);
  out.s_nom.resize(samples);
  out.real_crashed.assign(static_cast<std::size_t>(samples), 0);
  out.nominal_crashed.assign(static_cast<std::size_t>(samples), 0);

  parallel_for(static_cast<std::size_t>(samples), options.workers, [&](std::size_t i) {
    const int n = static_cast<int>(i);
    const auto eps = plan.sample(n);
    const Eigen::Index n_u = u.rows();
    Vector x = x0, xs = x0_star, xdot(x0.size()), error(x0.size());
    Vector k(n_u), v(n_u), uk(n_u), si_k(n_u);
    double s = 0.0, sh = 0.0, sr = 0.0, ctrl = 0.0;
    bool real_ok = true, nominal_ok = true;
    for (Eigen::Index t = 0; t < horizon; ++t) {
      if (nominal_ok) s += q.running(xs);
      if (real_ok) {
        const double qx = q.running(x);
        sh += qx;
        sr += qx;
        error = x - xs;
        policy.apply_error(error, static_cast<int>(t), k);
        si_k.noalias() = cost.sigma_inv * k;
        sh += smoothed * k.dot(si_k);
        uk = u.col(t) + k;
        sr += smoothed * (uk.dot(terms.si_u.col(t)) + uk.dot(si_k) +
                          2.0 * eps.col(t).dot(terms.si_u.col(t) + si_k));
      }
      ctrl += terms.at(t, eps.col(t));
      if (real_ok) {
        v = u.col(t) + eps.col(t) + k;
        model.step_inplace(x, v, xdot);
        real_ok = x.allFinite();
      }
      if (nominal_ok) {
        v = u.col(t) + eps.col(t);
        model.step_inplace(xs, v, xdot);
        nominal_ok = xs.allFinite();
      }
    }
    if (nominal_ok) s += q.terminal(xs);
    if (real_ok) {
      const double phi = q.terminal(x);
      sh += phi;
      sr += phi;
    }
    if (!nominal_ok || !std::isfinite(s)) {
      out.nominal_crashed[i] = 1;
      s = options.crash_cost;
    }
    if (!real_ok || !std::isfinite(sh) || !std::isfinite(sr)) {
      out.real_crashed[i] = 1;
      sh = options.crash_cost;
      sr = options.crash_cost;
    }
    out.s_star(n) = s;
    out.s_hat(n) = sh;
    out.s_real(n) = sr;
    out.s_nom(n) = mixed_cost(s, sh, alpha) + full * ctrl;
  });
  return out;
}

struct NominalDecision {
  int chosen_index = 0;
  std::vector<State> candidates;
  std::vector<double> free_energies;
  std::vector<bool> feasible;
  ControlSequence u;
};

namespace detail {

inline double wrap_angle(double a) {
  return std::remainder(a, 2.0 * std::numbers::pi);
}

inline State interpolate(const State& a, const State& b, double s,
                         const std::vector<bool>& angular) {
  State out(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double d = b(i) - a(i);
    if (angular[static_cast<std::size_t>(i)]) d = wrap_angle(d);
    out(i) = a(i) + s * d;
  }
  return out;
}

// Euclidean distance with angular components wrapped.
inline double state_distance(const State& a, const State& b,
                             const std::vector<bool>& angular) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    double d = b(i) - a(i);
    if (angular[static_cast<std::size_t>(i)]) d = wrap_angle(d);
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace detail

// Candidates p_0..p_R along the polyline previous nominal -> propagated
// nominal -> real state; p_0, p_{R/2} (R even) and p_R hit the vertices
// exactly.
inline std::vector<State> nominal_candidates(const SystemModel& model,
                                             const State& x,
                                             const State& x_star_prev,
                                             const State& x_star_prop,
                                             int candidates) {
  require(candidates >= 2, "NSP needs R >= 2");
  std::vector<State> out;
  out.reserve(static_cast<std::size_t>(candidates) + 1);
  for (int i = 0; i <= candidates; ++i) {
    if (i == 0) {
      out.push_back(x_star_prev);
    } else if (i == candidates) {
      out.push_back(x);
    } else if (2 * i == candidates) {
      out.push_back(x_star_prop);
    } else {
      const double s = 2.0 * i / candidates;
      out.push_back(s < 1.0 ? detail::interpolate(x_star_prev, x_star_prop, s, model.angular())
                            : detail::interpolate(x_star_prop, x, s - 1.0, model.angular()));
    }
  }
  return out;
}

// Line search for the next nominal state: the candidate closest to x whose
// reduced-sample free energy is at most alpha; candidate 0 if none is. All
// candidates share `plan`.
inline NominalDecision nominal_state_propagation(
    const SystemModel& model, const CostFunction& cost, const State& x,
    const State& x_star_prev, const State& x_star_prop,
    const ControlSequence& u, int candidates, const NoisePlan& plan,
    double alpha, const RolloutOptions& options = {}) {
  require_dims(x, model.state_dim(), "NSP real state");
  require_dims(x_star_prev, model.state_dim(), "NSP previous nominal state");
  require_dims(x_star_prop, model.state_dim(), "NSP propagated nominal state");
  require(plan.samples() >= 1, "NSP needs at least one sample");
  NominalDecision decision;
  decision.candidates = nominal_candidates(model, x, x_star_prev, x_star_prop, candidates);
  const ControlSequence shifted = shift_left(u);
  RolloutOptions opts = options;
  opts.control_scale = ControlCostScale::kSmoothed;
  for (int i = 0; i <= candidates; ++i) {
    const ControlSequence& ui = i == 0 ? u : shifted;
    const RolloutBatch batch =
        rollout_batch(model, cost, decision.candidates[static_cast<std::size_t>(i)], ui, plan, opts);
    const double f = free_energy_mc(batch.costs, cost.lambda).value;
    decision.free_energies.push_back(f);
    decision.feasible.push_back(f <= alpha);
  }
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= candidates; ++i) {
    if (!decision.feasible[static_cast<std::size_t>(i)]) continue;
    const double d = detail::state_distance(decision.candidates[static_cast<std::size_t>(i)], x,
                                            model.angular());
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  decision.chosen_index = best < 0 ? 0 : best;
  decision.u = decision.chosen_index == 0 ? u : shifted;
  return decision;
}

// Every constant of the free-energy growth bound. `norm_weight` selects the
// norm ||v||_W = sqrt(v' W v) in which L_q, L_phi and gamma are expressed
// (empty = Euclidean); D is always a Euclidean radius.
struct BoundParams {
  double alpha = 0.0;
  double lambda = 1.0;
  double beta = 0.5;
  double gamma = 0.5;
  double lipschitz_q = 0.0;
  double lipschitz_phi = 0.0;
  double emv = 0.0;
  double w_bound = 0.0;
  int horizon = 1;
  Matrix norm_weight;

  void validate() const {
    require(std::isfinite(alpha) && alpha > 0.0, "bound: alpha must be finite and > 0");
    require(std::isfinite(lambda) && lambda > 0.0, "bound: lambda must be > 0");
    require(gamma > 0.0 && gamma < 1.0, "bound: gamma must lie in (0, 1)");
    require(std::isfinite(lipschitz_q) && lipschitz_q >= 0.0 &&
                std::isfinite(lipschitz_phi) && lipschitz_phi >= 0.0,
            "bound: Lipschitz constants must be finite and >= 0");
    require(std::isfinite(emv) && emv >= 0.0, "bound: E_M^V must be finite and >= 0");
    require(std::isfinite(w_bound) && w_bound >= 0.0, "bound: D must be finite and >= 0");
    require(horizon >= 1, "bound: horizon must be >= 1");
  }
};

// L_phi gamma^T + L_q (1 - gamma^T) / (1 - gamma).
inline double tracking_factor(const BoundParams& p) {
  const double gt = std::pow(p.gamma, p.horizon);
  return p.lipschitz_phi * gt + p.lipschitz_q * (1.0 - gt) / (1.0 - p.gamma);
}

struct BoundTerms {
  double value = 0.0;         // with +D in the distance
  double value_no_d = 0.0;    // distance without D
  double free_energy_margin = 0.0;
  double estimator = 0.0;     // 2 E_M^V
  double factor = 0.0;
  double distance = 0.0;      // D_F including D
};

inline BoundTerms growth_bound_terms(const BoundParams& params,
                                     const State& x0, const State& x0_star,
                                     const Control& u, double fe_nominal,
                                     const SystemModel& model) {
  params.validate();
  require(std::isfinite(fe_nominal), "bound: nominal free energy must be finite");
  const State next = model.step(x0, u);
  const Matrix& w = params.norm_weight;
  double d_scaled = params.w_bound;
  if (w.size() != 0) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(w);
    d_scaled *= std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
  }
  const double base = weighted_norm(next - x0, w) + weighted_norm(x0_star - x0, w);
  BoundTerms terms;
  terms.free_energy_margin = params.alpha - fe_nominal;
  terms.estimator = 2.0 * params.emv;
  terms.factor = tracking_factor(params);
  terms.distance = base + d_scaled;
  terms.value = terms.free_energy_margin + terms.estimator + terms.factor * terms.distance;
  terms.value_no_d = terms.free_energy_margin + terms.estimator + terms.factor * base;
  return terms;
}

inline double free_energy_growth_bound(const BoundParams& params,
                                       const State& x0, const State& x0_star,
                                       const Control& u, double fe_nominal,
                                       const SystemModel& model) {
  return growth_bound_terms(params, x0, x0_star, u, fe_nominal, model).value;
}

}  // namespace rmppi
