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
#include <string>
#include <utility>
#include <vector>

#include "rmppi/core.hpp"
#include "rmppi/dynamics.hpp"

namespace rmppi {

enum class FeedbackKind { kNone, kIlqg, kContraction };

inline const char* to_string(FeedbackKind kind) {
  switch (kind) {
    case FeedbackKind::kNone: return "none";
    case FeedbackKind::kIlqg: return "ilqg";
    case FeedbackKind::kContraction: return "contraction";
  }
  return "?";
}

inline FeedbackKind parse_feedback_kind(const std::string& s) {
  if (s == "none") return FeedbackKind::kNone;
  if (s == "ilqg") return FeedbackKind::kIlqg;
  if (s == "contraction") return FeedbackKind::kContraction;
  throw ContractViolation("unknown feedback kind '" + s + "'");
}

// Finite-horizon Riccati recursion failed at `timestep`.
class RiccatiDivergence : public std::runtime_error {
 public:
  RiccatiDivergence(int timestep, const std::string& what)
      : std::runtime_error("Riccati recursion diverged at t=" +
                           std::to_string(timestep) + ": " + what),
        timestep_(timestep) {}
  int timestep() const { return timestep_; }

 private:
  int timestep_;
};

// Tracking controller k(x, x*, t) = clamp(K_t (x - x*)). The contraction
// kind uses one constant gain and measures tracking error in the metric
// norm sqrt(e' M e); the other kinds use the Euclidean norm.
class FeedbackPolicy {
 public:
  static FeedbackPolicy none(int state_dim, int control_dim) {
    FeedbackPolicy p;
    p.kind_ = FeedbackKind::kNone;
    p.gains_.push_back(Matrix::Zero(control_dim, state_dim));
    p.lower_ = Vector::Constant(control_dim, -std::numeric_limits<double>::infinity());
    p.upper_ = Vector::Constant(control_dim, std::numeric_limits<double>::infinity());
    return p;
  }

  static FeedbackPolicy time_varying(std::vector<Matrix> gains, Vector lower,
                                     Vector upper) {
    require(!gains.empty(), "time-varying policy needs at least one gain");
    for (const auto& k : gains) {
      require(k.rows() == gains.front().rows() && k.cols() == gains.front().cols(),
              "gains must share one shape");
      require(k.allFinite(), "feedback gains must be finite");
    }
    FeedbackPolicy p;
    p.kind_ = FeedbackKind::kIlqg;
    p.gains_ = std::move(gains);
    p.set_limits(std::move(lower), std::move(upper));
    return p;
  }

  static FeedbackPolicy constant_metric(Matrix gain, Matrix metric, double rate,
                                        Vector lower, Vector upper) {
    require(gain.allFinite(), "feedback gain must be finite");
    require(metric.rows() == gain.cols() && metric.cols() == gain.cols(),
            "metric must be n_x x n_x");
    require(rate > 0.0 && std::isfinite(rate), "contraction rate must be > 0");
    FeedbackPolicy p;
    p.kind_ = FeedbackKind::kContraction;
    p.gains_.push_back(std::move(gain));
    p.metric_ = std::move(metric);
    p.rate_ = rate;
    p.set_limits(std::move(lower), std::move(upper));
    return p;
  }

  FeedbackKind kind() const { return kind_; }
  int state_dim() const { return static_cast<int>(gains_.front().cols()); }
  int control_dim() const { return static_cast<int>(gains_.front().rows()); }
  // Number of distinct gains; time indices past the end reuse the last one.
  int horizon() const { return static_cast<int>(gains_.size()); }

  const Matrix& gain(int t) const {
    require(t >= 0, "feedback time index must be >= 0");
    return gains_[std::min<std::size_t>(static_cast<std::size_t>(t), gains_.size() - 1)];
  }

  // Hot path: out = clamp(K_t e).
  void apply_error(const ConstVectorRef& error, int t, VectorRef out) const {
    if (kind_ == FeedbackKind::kNone) {
      out.setZero();
      return;
    }
    out.noalias() = gain(t) * error;
    out = out.cwiseMax(lower_).cwiseMin(upper_);
  }

  Control apply(const ConstVectorRef& x, const ConstVectorRef& x_star,
                int t) const {
    require_dims(x, state_dim(), "feedback state");
    require_dims(x_star, state_dim(), "feedback nominal state");
    Control out(control_dim());
    apply_error(x - x_star, t, out);
    return out;
  }

  Control apply_unclamped(const ConstVectorRef& x, const ConstVectorRef& x_star,
                          int t) const {
    require_dims(x, state_dim(), "feedback state");
    require_dims(x_star, state_dim(), "feedback nominal state");
    if (kind_ == FeedbackKind::kNone) return Control::Zero(control_dim());
    return gain(t) * (x - x_star);
  }

  // Weight of the norm used for tracking residuals; empty = Euclidean.
  const Matrix& norm_weight() const { return metric_; }

  double tracking_distance(const ConstVectorRef& x,
                           const ConstVectorRef& x_star) const {
    return weighted_norm(x - x_star, metric_);
  }

  const Matrix& metric() const { return metric_; }
  double contraction_rate() const { return rate_; }
  // exp(-lambda_c dt); NaN unless contraction kind.
  double gamma(double dt) const {
    if (kind_ != FeedbackKind::kContraction) return std::numeric_limits<double>::quiet_NaN();
    return std::exp(-rate_ * dt);
  }

  // Contraction kind bookkeeping, filled by contraction_feedback.
  double rho = 0.0;
  double worst_margin = std::numeric_limits<double>::quiet_NaN();
  bool certified = false;

 private:
  void set_limits(Vector lower, Vector upper) {
    require(lower.size() == gains_.front().rows() &&
                upper.size() == gains_.front().rows(),
            "feedback limits must have n_u entries");
    lower_ = std::move(lower);
    upper_ = std::move(upper);
  }

  FeedbackKind kind_ = FeedbackKind::kNone;
  std::vector<Matrix> gains_;
  Matrix metric_;
  double rate_ = 0.0;
  Vector lower_;
  Vector upper_;
};

struct TrackingWeights {
  Matrix q;        // running state weight
  Matrix r;        // control weight
  Matrix q_final;  // terminal weight; empty = q
};

// One backward Riccati pass on the Euler linearization about the nominal
// trajectory (columns x*_0..x*_T) and controls U.
inline FeedbackPolicy ilqg_gains(const SystemModel& model,
                                 const Matrix& nominal_trajectory,
                                 const ControlSequence& u,
                                 const TrackingWeights& weights) {
  const int n_x = model.state_dim();
  const int n_u = model.control_dim();
  const Eigen::Index horizon = u.cols();
  require(horizon >= 1, "ilqg_gains needs horizon >= 1");
  require(u.rows() == n_u, "control sequence has wrong n_u");
  require(nominal_trajectory.rows() == n_x &&
              nominal_trajectory.cols() == horizon + 1,
          "nominal trajectory must hold T + 1 states");
  require(weights.q.rows() == n_x && weights.q.cols() == n_x, "Q_track must be n_x x n_x");
  require(weights.r.rows() == n_u && weights.r.cols() == n_u, "R_track must be n_u x n_u");
  const Matrix& q_final = weights.q_final.size() == 0 ? weights.q : weights.q_final;
  require(q_final.rows() == n_x && q_final.cols() == n_x, "terminal weight must be n_x x n_x");

  const double dt = model.dt();
  const Matrix eye = Matrix::Identity(n_x, n_x);
  Matrix p = q_final;
  std::vector<Matrix> gains(static_cast<std::size_t>(horizon));
  for (Eigen::Index t = horizon - 1; t >= 0; --t) {
    const Jacobians jac = model.jacobians(nominal_trajectory.col(t), u.col(t));
    const Matrix a = eye + dt * jac.state;
    const Matrix b = dt * jac.control;
    const Matrix pb = p * b;
    const Matrix s = weights.r + b.transpose() * pb;
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) {
      throw RiccatiDivergence(static_cast<int>(t), "R + B'PB is not positive definite");
    }
    Matrix k = -llt.solve(pb.transpose() * a);
    Matrix next = weights.q + a.transpose() * p * (a + b * k);
    p = 0.5 * (next + next.transpose());
    if (!k.allFinite() || !p.allFinite()) {
      throw RiccatiDivergence(static_cast<int>(t), "non-finite cost-to-go");
    }
    gains[static_cast<std::size_t>(t)] = std::move(k);
  }
  return FeedbackPolicy::time_varying(std::move(gains), model.control_lower(),
                                      model.control_upper());
}

// -lambda_max(A_cl' M + M A_cl + 2 lambda_c M) at x, measured relative to M
// (generalized eigenvalue). Nonnegative means the differential Lyapunov
// decrease holds at x.
inline double contraction_margin(const SystemModel& model, const Matrix& metric,
                                 double rate, const Matrix& gain,
                                 const ConstVectorRef& x) {
  const Jacobians jac = model.jacobians(x, Control::Zero(model.control_dim()));
  const Matrix a_cl = jac.state + jac.control * gain;
  const Matrix c = a_cl.transpose() * metric + metric * a_cl + 2.0 * rate * metric;
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> es(0.5 * (c + c.transpose()), metric);
  return -es.eigenvalues().maxCoeff();
}

// Probe states for checking the contraction condition: the 3^n grid over
// the admissible box (corners, face centers, center) plus `extra` uniform
// draws.
inline std::vector<Vector> contraction_probes(const SystemModel& model,
                                              int extra = 64,
                                              std::uint64_t seed = 0) {
  const int n = model.state_dim();
  const StateBox& box = model.admissible();
  Vector lo = box.lower.size() ? box.lower : Vector::Constant(n, -1.0);
  Vector hi = box.upper.size() ? box.upper : Vector::Constant(n, 1.0);
  std::vector<Vector> probes;
  int total = 1;
  for (int i = 0; i < n; ++i) total *= 3;
  for (int code = 0; code < total; ++code) {
    Vector x(n);
    int c = code;
    for (int i = 0; i < n; ++i, c /= 3) {
      x(i) = lo(i) + 0.5 * (c % 3) * (hi(i) - lo(i));
    }
    probes.push_back(std::move(x));
  }
  Engine engine(stream_seed(seed, StreamTag::kDomain, 1));
  std::uniform_real_distribution<double> unit;
  for (int k = 0; k < extra; ++k) {
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = lo(i) + (hi(i) - lo(i)) * unit(engine);
    probes.push_back(std::move(x));
  }
  return probes;
}

// k = -rho R^-1 B' M (x - x*) with the smallest rho on a geometric ladder
// that satisfies the contraction condition at every probe state. Requires a
// constant input matrix. When no rung works the largest is kept and
// `certified` is false.
inline FeedbackPolicy contraction_feedback(const Matrix& metric, double rate,
                                           const SystemModel& model,
                                           const Matrix& r_track = Matrix(),
                                           std::vector<Vector> probes = {}) {
  const int n_x = model.state_dim();
  const int n_u = model.control_dim();
  require(metric.rows() == n_x && metric.cols() == n_x, "metric must be n_x x n_x");
  require(metric.allFinite() && metric.isApprox(metric.transpose(), 1e-12),
          "metric must be finite and symmetric");
  Eigen::LLT<Matrix> llt(metric);
  require(llt.info() == Eigen::Success, "metric must be positive definite");
  require(rate > 0.0 && std::isfinite(rate), "contraction rate must be > 0");
  require(model.constant_input_matrix(),
          "contraction feedback needs a constant input matrix");
  const Matrix r = r_track.size() == 0 ? Matrix(Matrix::Identity(n_u, n_u)) : r_track;
  require(r.rows() == n_u && r.cols() == n_u, "R_track must be n_u x n_u");
  if (probes.empty()) probes = contraction_probes(model);

  const Matrix b =
      model.jacobians(Vector::Zero(n_x), Control::Zero(n_u)).control;
  const Matrix base = -r.ldlt().solve(b.transpose() * metric);

  double rho = 0.25;
  double worst = -std::numeric_limits<double>::infinity();
  bool ok = false;
  for (; rho <= 1e4; rho *= 1.1) {
    worst = std::numeric_limits<double>::infinity();
    for (const auto& x : probes) {
      worst = std::min(worst, contraction_margin(model, metric, rate, rho * base, x));
    }
    if (worst >= -1e-12) {
      ok = true;
      break;
    }
  }
  if (!ok) rho /= 1.1;
  FeedbackPolicy p = FeedbackPolicy::constant_metric(
      rho * base, metric, rate, model.control_lower(), model.control_upper());
  p.rho = rho;
  p.worst_margin = worst;
  p.certified = ok;
  return p;
}

struct TrackingReport {
  double gamma_hat = 0.0;
  std::vector<double> residuals;
  bool satisfied = false;
  bool perfect = false;   // residuals vanish after the first entry
  bool boundary = false;  // gamma_hat == 1
};

// Smallest gamma in (0, 1] with residuals[t] <= gamma^t residuals[0].
inline TrackingReport fit_gamma(std::vector<double> residuals) {
  require(!residuals.empty() && residuals.front() > 0.0,
          "fit_gamma needs residuals[0] > 0");
  TrackingReport report;
  double gamma = 0.0;
  bool any_positive = false;
  for (std::size_t t = 1; t < residuals.size(); ++t) {
    require(residuals[t] >= 0.0 && std::isfinite(residuals[t]),
            "residuals must be finite and >= 0");
    if (residuals[t] > 0.0) any_positive = true;
    gamma = std::max(gamma, std::pow(residuals[t] / residuals[0],
                                     1.0 / static_cast<double>(t)));
  }
  gamma = std::min(gamma, 1.0);
  report.gamma_hat = gamma;
  report.perfect = !any_positive;
  report.boundary = gamma >= 1.0;
  report.satisfied = true;
  for (std::size_t t = 1; t < residuals.size(); ++t) {
    const double allowed = std::pow(gamma, static_cast<double>(t)) * residuals[0];
    if (residuals[t] > allowed * (1.0 + 1e-12)) report.satisfied = false;
  }
  report.residuals = std::move(residuals);
  return report;
}

}  // namespace rmppi
