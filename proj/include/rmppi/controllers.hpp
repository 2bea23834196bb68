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
#include <deque>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "rmppi/core.hpp"
#include "rmppi/costs.hpp"
#include "rmppi/dynamics.hpp"
#include "rmppi/feedback.hpp"
#include "rmppi/rmppi.hpp"
#include "rmppi/sampling.hpp"

namespace rmppi {

enum class ControllerKind { kMppi, kTube, kRmppi };

inline const char* to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kMppi: return "mppi";
    case ControllerKind::kTube: return "tube";
    case ControllerKind::kRmppi: return "rmppi";
  }
  return "?";
}

inline ControllerKind parse_controller_kind(const std::string& s) {
  if (s == "mppi") return ControllerKind::kMppi;
  if (s == "tube") return ControllerKind::kTube;
  if (s == "rmppi") return ControllerKind::kRmppi;
  throw ContractViolation("unknown controller '" + s + "'");
}

struct SmoothingOptions {
  bool enabled = false;
  int window = 9;
  int order = 2;
};

struct ControllerSettings {
  int samples = 256;
  int horizon = 50;
  double alpha = 1e3;        // NSP free-energy threshold
  double tube_alpha = 1e3;   // Tube-MPPI reset threshold on F(x) - F(x*)
  double crash_cost = 1e6;
  int candidates = 8;        // R
  int nsp_samples = 32;
  int emv_repeats = 8;
  double emv_multiplier = 3.0;
  int gamma_window = 50;
  double gamma_floor = 1e-3; // gamma_hat is clamped to [eps, 1 - eps]
  unsigned workers = 1;
  std::uint64_t seed = 0;
  SmoothingOptions smoothing;
  FeedbackKind feedback = FeedbackKind::kContraction;
  TrackingWeights tracking;
  Matrix metric;
  double contraction_rate = 1.0;
  double w_bound = 0.0;      // D used by the bound monitor
  ControlSequence initial_u; // empty = zeros
};

struct Diagnostics {
  double fe_real = std::numeric_limits<double>::quiet_NaN();
  double fe_nom = std::numeric_limits<double>::quiet_NaN();
  double bound = std::numeric_limits<double>::quiet_NaN();
  double bound_no_d = std::numeric_limits<double>::quiet_NaN();
  int cand_idx = -1;
  double gamma_hat = std::numeric_limits<double>::quiet_NaN();
  double emv = std::numeric_limits<double>::quiet_NaN();
  State nominal;
  bool degenerate = false;
  bool reset = false;  // Tube-MPPI reset this step
  double contraction_margin = std::numeric_limits<double>::quiet_NaN();
};

struct MppiResult {
  ControlSequence u;
  Vector weights;
  RolloutBatch batch;
  double free_energy = 0.0;
};

// One vanilla MPPI update from x around U. Throws DegenerateSampling when
// every sample crashed.
inline MppiResult mppi_iteration(const SystemModel& model,
                                 const CostFunction& cost,
                                 const ConstVectorRef& x,
                                 const ControlSequence& u,
                                 const NoisePlan& plan,
                                 const RolloutOptions& options = {},
                                 const SmoothingOptions& smoothing = {}) {
  MppiResult r;
  r.batch = rollout_batch(model, cost, x, u, plan, options);
  if (r.batch.crash_count() == r.batch.crashed.size()) {
    throw DegenerateSampling("every rollout crashed");
  }
  r.weights = softmax_weights(r.batch.costs, cost.lambda);
  r.u = mppi_update(u, r.weights, plan);
  if (smoothing.enabled) r.u = savitzky_golay(r.u, smoothing.window, smoothing.order);
  r.free_energy = free_energy_mc(r.batch.costs, cost.lambda).value;
  return r;
}

struct RmppiResult {
  Control u_opt;
  ControlSequence u;
  Vector weights_real;
  Vector weights_nom;
  AugmentedRollout rollout;
};

// AIS followed by the two updates: the applied action under S_real weights
// and the importance sampler under S_nom weights.
inline RmppiResult rmppi_iteration(const SystemModel& model,
                                   const CostFunction& cost,
                                   const ConstVectorRef& x,
                                   const ConstVectorRef& x_star,
                                   const ControlSequence& u,
                                   const FeedbackPolicy& policy,
                                   const NoisePlan& plan, double alpha,
                                   const RolloutOptions& options = {},
                                   const SmoothingOptions& smoothing = {}) {
  RmppiResult r;
  r.rollout = augmented_is(model, cost, x, x_star, u, policy, plan, alpha, options);
  std::size_t crashed = 0;
  for (auto f : r.rollout.real_crashed) crashed += f;
  if (crashed == r.rollout.real_crashed.size()) {
    throw DegenerateSampling("every real rollout crashed");
  }
  r.weights_real = softmax_weights(r.rollout.s_real, cost.lambda);
  r.weights_nom = softmax_weights(r.rollout.s_nom, cost.lambda);
  Control correction = Control::Zero(u.rows());
  for (int n = 0; n < plan.samples(); ++n) {
    const double w = r.weights_real(n);
    if (w != 0.0) correction += w * plan.sample(n).col(0);
  }
  r.u_opt = u.col(0) + policy.apply(x, x_star, 0) + correction;
  r.u = mppi_update(u, r.weights_nom, plan);
  if (smoothing.enabled) r.u = savitzky_golay(r.u, smoothing.window, smoothing.order);
  return r;
}

// Noise-free nominal rollout, columns x_0..x_T.
inline Matrix nominal_trajectory(const SystemModel& model,
                                 const ConstVectorRef& x0,
                                 const ControlSequence& u) {
  Matrix traj(x0.size(), u.cols() + 1);
  traj.col(0) = x0;
  Vector x = x0, v(u.rows()), xdot(x0.size());
  for (Eigen::Index t = 0; t < u.cols(); ++t) {
    v = u.col(t);
    model.step_inplace(x, v, xdot);
    traj.col(t + 1) = x;
  }
  return traj;
}

class Controller {
 public:
  Controller(SystemPtr model, CostFunction cost, ControllerSettings settings)
      : model_(std::move(model)), cost_(std::move(cost)), s_(std::move(settings)) {
    require(model_ != nullptr, "controller needs a model");
    require(s_.samples >= 1 && s_.horizon >= 1, "N and T must be >= 1");
    require(cost_.control_dim() == model_->control_dim(),
            "cost covariance does not match n_u");
    options_.crash_cost = s_.crash_cost;
    options_.workers = s_.workers;
    reset();
  }
  virtual ~Controller() = default;

  virtual ControllerKind kind() const = 0;
  // Action for the measured state x. Advances the internal step counter.
  virtual Control compute(const State& x) = 0;

  virtual void reset() {
    step_ = 0;
    u_ = s_.initial_u.size() != 0
             ? s_.initial_u
             : ControlSequence::Zero(model_->control_dim(), s_.horizon);
    require(u_.rows() == model_->control_dim() && u_.cols() == s_.horizon,
            "initial control sequence has the wrong shape");
    diag_ = Diagnostics{};
  }

  const Diagnostics& diagnostics() const { return diag_; }
  const ControlSequence& control_sequence() const { return u_; }
  const ControllerSettings& settings() const { return s_; }
  const CostFunction& cost() const { return cost_; }
  const SystemModel& model() const { return *model_; }
  std::int64_t step_count() const { return step_; }

 protected:
  NoisePlan plan(StreamTag tag, std::uint64_t index, int samples) const {
    return NoisePlan(stream_seed(s_.seed, tag, index), samples, s_.horizon,
                     cost_.sigma_chol);
  }

  // Feedback toward the nominal trajectory from x_star under U.
  FeedbackPolicy build_policy(const State& x_star, const ControlSequence& u) const {
    switch (s_.feedback) {
      case FeedbackKind::kNone:
        return FeedbackPolicy::none(model_->state_dim(), model_->control_dim());
      case FeedbackKind::kIlqg:
        return ilqg_gains(*model_, nominal_trajectory(*model_, x_star, u), u, s_.tracking);
      case FeedbackKind::kContraction:
        if (!contraction_) {
          contraction_ = std::make_shared<FeedbackPolicy>(contraction_feedback(
              s_.metric, s_.contraction_rate, *model_, s_.tracking.r));
        }
        return *contraction_;
    }
    return FeedbackPolicy::none(model_->state_dim(), model_->control_dim());
  }

  SystemPtr model_;
  CostFunction cost_;
  ControllerSettings s_;
  RolloutOptions options_;
  ControlSequence u_;
  Diagnostics diag_;
  std::int64_t step_ = 0;
  mutable std::shared_ptr<FeedbackPolicy> contraction_;
};

class MppiController final : public Controller {
 public:
  using Controller::Controller;
  ControllerKind kind() const override { return ControllerKind::kMppi; }

  Control compute(const State& x) override {
    require_dims(x, model_->state_dim(), "controller state");
    diag_ = Diagnostics{};
    diag_.nominal = x;
    const NoisePlan p = plan(StreamTag::kRollout, static_cast<std::uint64_t>(step_), s_.samples);
    try {
      MppiResult r = mppi_iteration(*model_, cost_, x, u_, p, options_, s_.smoothing);
      u_ = std::move(r.u);
      diag_.fe_real = diag_.fe_nom = r.free_energy;
    } catch (const DegenerateSampling&) {
      diag_.degenerate = true;
    }
    const Control action = u_.col(0);
    u_ = shift_left(u_);
    ++step_;
    return action;
  }
};

class TubeMppiController final : public Controller {
 public:
  using Controller::Controller;
  ControllerKind kind() const override { return ControllerKind::kTube; }

  void reset() override {
    Controller::reset();
    has_nominal_ = false;
  }

  const State& nominal_state() const { return x_star_; }

  Control compute(const State& x) override {
    require_dims(x, model_->state_dim(), "controller state");
    diag_ = Diagnostics{};
    if (!has_nominal_) {
      x_star_ = x;
      has_nominal_ = true;
    }
    const NoisePlan p = plan(StreamTag::kRollout, static_cast<std::uint64_t>(step_), s_.samples);
    try {
      MppiResult nominal = mppi_iteration(*model_, cost_, x_star_, u_, p, options_, s_.smoothing);
      MppiResult real = mppi_iteration(*model_, cost_, x, u_, p, options_, s_.smoothing);
      diag_.fe_real = real.free_energy;
      diag_.fe_nom = nominal.free_energy;
      if (real.free_energy - nominal.free_energy < s_.tube_alpha) {
        x_star_ = x;
        u_ = std::move(real.u);
        diag_.reset = true;
        diag_.fe_nom = real.free_energy;
      } else {
        u_ = std::move(nominal.u);
      }
    } catch (const DegenerateSampling&) {
      diag_.degenerate = true;
    }
    Control action = u_.col(0);
    try {
      const FeedbackPolicy policy = build_policy(x_star_, u_);
      action += policy.apply(x, x_star_, 0);
    } catch (const RiccatiDivergence&) {
      diag_.degenerate = true;
    }
    diag_.nominal = x_star_;
    x_star_ = model_->step(x_star_, u_.col(0));
    u_ = shift_left(u_);
    ++step_;
    return action;
  }

 private:
  State x_star_;
  bool has_nominal_ = false;
};

class RmppiController final : public Controller {
 public:
  RmppiController(SystemPtr model, CostFunction cost, ControllerSettings settings)
      : Controller(std::move(model), std::move(cost), std::move(settings)) {
    require(s_.candidates >= 2, "NSP needs R >= 2");
    require(s_.nsp_samples >= 1, "NSP needs at least one sample");
    require(s_.emv_repeats >= 2, "E_M^V needs at least two repeats");
    reset();
  }

  ControllerKind kind() const override { return ControllerKind::kRmppi; }

  void reset() override {
    Controller::reset();
    has_nominal_ = false;
    ratios_.clear();
  }

  const State& nominal_state() const { return x_star_; }

  // Bound constants that do not change between steps.
  BoundParams bound_template() const {
    BoundParams p;
    p.alpha = s_.alpha;
    p.lambda = cost_.lambda;
    p.beta = cost_.beta;
    p.horizon = s_.horizon;
    p.w_bound = s_.w_bound;
    if (s_.feedback == FeedbackKind::kContraction) p.norm_weight = s_.metric;
    p.lipschitz_q = lipschitz_q_;
    p.lipschitz_phi = lipschitz_phi_;
    return p;
  }

  // Lipschitz constants in the tracking norm; set by the harness.
  void set_lipschitz(double lq, double lphi) {
    lipschitz_q_ = lq;
    lipschitz_phi_ = lphi;
  }

  Control compute(const State& x) override {
    require_dims(x, model_->state_dim(), "controller state");
    diag_ = Diagnostics{};
    const auto k = static_cast<std::uint64_t>(step_);
    const NoisePlan nsp_plan = plan(StreamTag::kNominalSearch, k, s_.nsp_samples);
    RolloutOptions nsp_options = options_;
    nsp_options.control_scale = ControlCostScale::kSmoothed;

    if (!has_nominal_) {
      x_star_ = x;
      has_nominal_ = true;
      const RolloutBatch b = rollout_batch(*model_, cost_, x, u_, nsp_plan, nsp_options);
      diag_.fe_real = diag_.fe_nom = free_energy_mc(b.costs, cost_.lambda).value;
      diag_.cand_idx = s_.candidates;
    } else {
      const double before = weighted_norm(x - x_prop_, tracking_weight());
      if (last_residual_ > 1e-9) record_ratio(before / last_residual_);
      const NominalDecision d = nominal_state_propagation(
          *model_, cost_, x, x_star_, x_prop_, u_, s_.candidates, nsp_plan, s_.alpha, options_);
      x_star_ = d.candidates[static_cast<std::size_t>(d.chosen_index)];
      u_ = d.u;
      diag_.cand_idx = d.chosen_index;
      diag_.fe_real = d.free_energies.back();
      diag_.fe_nom = d.free_energies[static_cast<std::size_t>(d.chosen_index)];
    }
    diag_.nominal = x_star_;
    diag_.emv = estimate_emv(k, nsp_options);

    Control action = u_.col(0);
    FeedbackPolicy policy = FeedbackPolicy::none(model_->state_dim(), model_->control_dim());
    bool have_policy = true;
    try {
      policy = build_policy(x_star_, u_);
    } catch (const RiccatiDivergence&) {
      have_policy = false;
      diag_.degenerate = true;
    }
    if (policy.kind() == FeedbackKind::kContraction) {
      diag_.contraction_margin = contraction_margin(
          *model_, policy.metric(), policy.contraction_rate(), policy.gain(0), x);
    }
    const NoisePlan p = plan(StreamTag::kRollout, k, s_.samples);
    try {
      RmppiResult r = rmppi_iteration(*model_, cost_, x, x_star_, u_, policy, p,
                                      s_.alpha, options_, s_.smoothing);
      action = r.u_opt;
      u_ = std::move(r.u);
    } catch (const DegenerateSampling&) {
      diag_.degenerate = true;
      if (have_policy) action += policy.apply(x, x_star_, 0);
    }

    diag_.gamma_hat = current_gamma(policy);
    if (std::isfinite(diag_.fe_nom) && s_.alpha > 0.0 && std::isfinite(s_.alpha) &&
        std::isfinite(lipschitz_q_) && std::isfinite(lipschitz_phi_)) {
      BoundParams params = bound_template();
      params.gamma = diag_.gamma_hat;
      params.emv = diag_.emv;
      const BoundTerms terms =
          growth_bound_terms(params, x, x_star_, action, diag_.fe_nom, *model_);
      diag_.bound = terms.value;
      diag_.bound_no_d = terms.value_no_d;
    }

    last_residual_ = weighted_norm(x - x_star_, tracking_weight());
    x_prop_ = model_->step(x_star_, u_.col(0));
    ++step_;
    return action;
  }

 private:
  const Matrix& tracking_weight() const {
    static const Matrix empty;
    return s_.feedback == FeedbackKind::kContraction ? s_.metric : empty;
  }

  void record_ratio(double r) {
    ratios_.push_back(r);
    while (static_cast<int>(ratios_.size()) > s_.gamma_window) ratios_.pop_front();
  }

  double current_gamma(const FeedbackPolicy& policy) const {
    if (policy.kind() == FeedbackKind::kContraction) return policy.gamma(model_->dt());
    double g = ratios_.empty() ? 1.0 : 0.0;
    for (double r : ratios_) g = std::max(g, r);
    return std::clamp(g, s_.gamma_floor, 1.0 - s_.gamma_floor);
  }

  // multiplier x sample std of repeated reduced-sample estimates at the
  // nominal state.
  double estimate_emv(std::uint64_t k, const RolloutOptions& options) const {
    const int m = s_.emv_repeats;
    std::vector<double> f(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      const NoisePlan p = plan(StreamTag::kEstimatorSpread,
                               k * static_cast<std::uint64_t>(m) + static_cast<std::uint64_t>(j),
                               s_.nsp_samples);
      const RolloutBatch b = rollout_batch(*model_, cost_, x_star_, u_, p, options);
      f[static_cast<std::size_t>(j)] = free_energy_mc(b.costs, cost_.lambda).value;
    }
    double mean = 0.0;
    for (double v : f) mean += v;
    mean /= m;
    double var = 0.0;
    for (double v : f) var += (v - mean) * (v - mean);
    var /= (m - 1);
    return s_.emv_multiplier * std::sqrt(var);
  }

  State x_star_;
  State x_prop_;
  bool has_nominal_ = false;
  double last_residual_ = 0.0;
  std::deque<double> ratios_;
  double lipschitz_q_ = std::numeric_limits<double>::infinity();
  double lipschitz_phi_ = std::numeric_limits<double>::infinity();
};

inline std::unique_ptr<Controller> make_controller(ControllerKind kind,
                                                   SystemPtr model,
                                                   CostFunction cost,
                                                   ControllerSettings settings) {
  switch (kind) {
    case ControllerKind::kMppi:
      return std::make_unique<MppiController>(std::move(model), std::move(cost), std::move(settings));
    case ControllerKind::kTube:
      return std::make_unique<TubeMppiController>(std::move(model), std::move(cost), std::move(settings));
    case ControllerKind::kRmppi:
      return std::make_unique<RmppiController>(std::move(model), std::move(cost), std::move(settings));
  }
  throw ContractViolation("unknown controller kind");
}

}  // namespace rmppi
