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
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "rmppi/core.hpp"

namespace rmppi {

// Partial derivatives of the continuous-time field F(x, u).
struct Jacobians {
  Matrix state;    // dF/dx, n_x x n_x
  Matrix control;  // dF/du, n_x x n_u
};

// Axis-aligned box; infinite bounds are allowed.
struct StateBox {
  Vector lower;
  Vector upper;

  bool contains(const ConstVectorRef& x) const {
    if (lower.size() == 0) return true;
    return (x.array() >= lower.array()).all() &&
           (x.array() <= upper.array()).all();
  }
};

// Discrete-time system x_{t+1} = x_t + F(x_t, sat(u_t)) dt.
//
// Models are immutable after construction and may be shared by any number of
// rollout workers.
class SystemModel {
 public:
  SystemModel(std::string name, int state_dim, int control_dim, double dt,
              Vector control_lower, Vector control_upper, StateBox admissible)
      : name_(std::move(name)),
        state_dim_(state_dim),
        control_dim_(control_dim),
        dt_(dt),
        control_lower_(std::move(control_lower)),
        control_upper_(std::move(control_upper)),
        admissible_(std::move(admissible)),
        angular_(static_cast<std::size_t>(state_dim), false) {
    require(state_dim > 0 && control_dim > 0, "system dimensions must be > 0");
    require(dt >= 0.0 && std::isfinite(dt), "dt must be finite and >= 0");
    require(control_lower_.size() == control_dim &&
                control_upper_.size() == control_dim,
            "control limits must have n_u entries");
    require((control_lower_.array() <= control_upper_.array()).all(),
            "control lower limit exceeds upper limit");
    if (admissible_.lower.size() != 0) {
      require(admissible_.lower.size() == state_dim &&
                  admissible_.upper.size() == state_dim,
              "admissible box must have n_x entries");
    }
  }
  virtual ~SystemModel() = default;

  const std::string& name() const { return name_; }
  int state_dim() const { return state_dim_; }
  int control_dim() const { return control_dim_; }
  double dt() const { return dt_; }
  const Vector& control_lower() const { return control_lower_; }
  const Vector& control_upper() const { return control_upper_; }
  const StateBox& admissible() const { return admissible_; }
  // Components that live on the circle; interpolation wraps them.
  const std::vector<bool>& angular() const { return angular_; }

  // True when dF/du does not depend on x or u.
  virtual bool constant_input_matrix() const { return false; }

  // Continuous-time field. `u` has already been saturated.
  virtual void vector_field(const ConstVectorRef& x, const ConstVectorRef& u,
                            VectorRef xdot) const = 0;

  // Analytic models override this; the default is central differences.
  virtual Jacobians jacobians(const ConstVectorRef& x,
                              const ConstVectorRef& u) const {
    return finite_difference_jacobians(x, u);
  }

  Jacobians finite_difference_jacobians(const ConstVectorRef& x,
                                        const ConstVectorRef& u,
                                        double rel_step = 1e-6) const {
    Jacobians jac{Matrix(state_dim_, state_dim_),
                  Matrix(state_dim_, control_dim_)};
    Vector xp = x, xm = x, up = u, um = u;
    Vector fp(state_dim_), fm(state_dim_);
    for (int i = 0; i < state_dim_; ++i) {
      const double h = rel_step * std::max(1.0, std::abs(x(i)));
      xp(i) = x(i) + h;
      xm(i) = x(i) - h;
      vector_field(xp, u, fp);
      vector_field(xm, u, fm);
      jac.state.col(i) = (fp - fm) / (2.0 * h);
      xp(i) = xm(i) = x(i);
    }
    for (int j = 0; j < control_dim_; ++j) {
      const double h = rel_step * std::max(1.0, std::abs(u(j)));
      up(j) = u(j) + h;
      um(j) = u(j) - h;
      vector_field(x, up, fp);
      vector_field(x, um, fm);
      jac.control.col(j) = (fp - fm) / (2.0 * h);
      up(j) = um(j) = u(j);
    }
    return jac;
  }

  void saturate(VectorRef u) const {
    u = u.cwiseMax(control_lower_).cwiseMin(control_upper_);
  }

  Control saturated(const ConstVectorRef& u) const {
    require_dims(u, control_dim_, "control");
    Control out = u;
    saturate(out);
    return out;
  }

  // Hot-path step: saturates `u` in place and overwrites `x`. `xdot` is
  // scratch of size n_x.
  void step_inplace(VectorRef x, VectorRef u, VectorRef xdot) const {
    saturate(u);
    vector_field(x, u, xdot);
    x += dt_ * xdot;
  }

  State step(const ConstVectorRef& x, const ConstVectorRef& u) const {
    require_dims(x, state_dim_, "state");
    require_dims(u, control_dim_, "control");
    State next = x;
    Control us = u;
    Vector xdot(state_dim_);
    step_inplace(next, us, xdot);
    return next;
  }

  bool crashed(const ConstVectorRef& x) const {
    return !x.allFinite() || !admissible_.contains(x);
  }

 protected:
  void set_angular(std::size_t index) { angular_.at(index) = true; }

 private:
  std::string name_;
  int state_dim_;
  int control_dim_;
  double dt_;
  Vector control_lower_;
  Vector control_upper_;
  StateBox admissible_;
  std::vector<bool> angular_;
};

using SystemPtr = std::shared_ptr<const SystemModel>;

// Settings shared by the built-in systems. Empty boxes fall back to the
// system's own defaults.
struct SystemOptions {
  double dt = 0.02;
  double control_limit = 0.0;  // symmetric |u_i| <= limit; 0 = system default
  Vector box_lower;
  Vector box_upper;
};

// Position/velocity double integrator: xdot = (v, u).
class DoubleIntegrator final : public SystemModel {
 public:
  static constexpr double kDefaultControlLimit = 10.0;

  explicit DoubleIntegrator(const SystemOptions& options = {})
      : SystemModel("double_integrator", 2, 1, options.dt,
                    Vector::Constant(1, -limit(options)),
                    Vector::Constant(1, limit(options)),
                    box(options)) {}

  bool constant_input_matrix() const override { return true; }

  void vector_field(const ConstVectorRef& x, const ConstVectorRef& u,
                    VectorRef xdot) const override {
    xdot(0) = x(1);
    xdot(1) = u(0);
  }

  Jacobians jacobians(const ConstVectorRef&,
                      const ConstVectorRef&) const override {
    Jacobians jac{Matrix::Zero(2, 2), Matrix::Zero(2, 1)};
    jac.state(0, 1) = 1.0;
    jac.control(1, 0) = 1.0;
    return jac;
  }

 private:
  static double limit(const SystemOptions& o) {
    return o.control_limit > 0.0 ? o.control_limit : kDefaultControlLimit;
  }
  static StateBox box(const SystemOptions& o) {
    if (o.box_lower.size() != 0) return {o.box_lower, o.box_upper};
    return {Vector{{-2.0, -4.0}}, Vector{{2.0, 4.0}}};
  }
};

// Control-affine inverted pendulum with viscous friction,
//   xdot_0 = x_1
//   xdot_1 = a sin(x_0) - b x_1 + u.
// The input matrix is constant, so a constant contraction metric exists on
// any box where cos(x_0) is bounded (see configs/nonlinear_benchmark.ini).
class NonlinearBenchmark final : public SystemModel {
 public:
  static constexpr double kDefaultControlLimit = 12.0;

  explicit NonlinearBenchmark(const SystemOptions& options = {},
                              double gravity_gain = 2.0, double damping = 0.5)
      : SystemModel("nonlinear_benchmark", 2, 1, options.dt,
                    Vector::Constant(1, -limit(options)),
                    Vector::Constant(1, limit(options)), box(options)),
        gravity_gain_(gravity_gain),
        damping_(damping) {
    set_angular(0);
  }

  bool constant_input_matrix() const override { return true; }
  double gravity_gain() const { return gravity_gain_; }
  double damping() const { return damping_; }

  void vector_field(const ConstVectorRef& x, const ConstVectorRef& u,
                    VectorRef xdot) const override {
    xdot(0) = x(1);
    xdot(1) = gravity_gain_ * std::sin(x(0)) - damping_ * x(1) + u(0);
  }

  Jacobians jacobians(const ConstVectorRef& x,
                      const ConstVectorRef&) const override {
    Jacobians jac{Matrix::Zero(2, 2), Matrix::Zero(2, 1)};
    jac.state(0, 1) = 1.0;
    jac.state(1, 0) = gravity_gain_ * std::cos(x(0));
    jac.state(1, 1) = -damping_;
    jac.control(1, 0) = 1.0;
    return jac;
  }

 private:
  static double limit(const SystemOptions& o) {
    return o.control_limit > 0.0 ? o.control_limit : kDefaultControlLimit;
  }
  static StateBox box(const SystemOptions& o) {
    if (o.box_lower.size() != 0) return {o.box_lower, o.box_upper};
    return {Vector{{-1.2, -6.0}}, Vector{{1.2, 6.0}}};
  }

  double gravity_gain_;
  double damping_;
};

inline SystemPtr double_integrator(const SystemOptions& options = {}) {
  return std::make_shared<DoubleIntegrator>(options);
}

inline SystemPtr nonlinear_benchmark(const SystemOptions& options = {}) {
  return std::make_shared<NonlinearBenchmark>(options);
}

using SystemFactory = std::function<SystemPtr(const SystemOptions&)>;

// Name -> factory map used by the config layer. The two built-in systems are
// always present; applications may add their own.
class SystemRegistry {
 public:
  static SystemRegistry& instance() {
    static SystemRegistry registry;
    return registry;
  }

  void add(const std::string& name, SystemFactory factory) {
    std::lock_guard lock(mutex_);
    factories_[name] = std::move(factory);
  }

  bool contains(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return factories_.count(name) != 0;
  }

  SystemPtr make(const std::string& name, const SystemOptions& options) const {
    SystemFactory factory;
    {
      std::lock_guard lock(mutex_);
      auto it = factories_.find(name);
      if (it == factories_.end()) {
        throw ContractViolation("unknown system '" + name + "'");
      }
      factory = it->second;
    }
    return factory(options);
  }

 private:
  SystemRegistry() {
    factories_["double_integrator"] = [](const SystemOptions& o) {
      return double_integrator(o);
    };
    factories_["nonlinear_benchmark"] = [](const SystemOptions& o) {
      return nonlinear_benchmark(o);
    };
  }

  mutable std::mutex mutex_;
  std::map<std::string, SystemFactory> factories_;
};

// Plant-side uncertainty. Only the true plant sees it; controllers never do.
struct DisturbanceModel {
  // Multiplier on the controller's control-noise covariance.
  double noise_scale = 1.0;
  // Norm bound D on the additive state disturbance. w is drawn uniformly
  // from the D-ball.
  double w_bound = 0.0;
  std::uint64_t seed = 0;
};

// Seeded generator of plant noise. Each instance owns its engines, so
// concurrent plants never share RNG state.
class DisturbanceSampler {
 public:
  DisturbanceSampler(const DisturbanceModel& model, int state_dim,
                     const Matrix& control_covariance)
      : model_(model),
        state_dim_(state_dim),
        w_engine_(stream_seed(model.seed, StreamTag::kPlantDisturbance, 0)),
        noise_engine_(stream_seed(model.seed, StreamTag::kPlantNoise, 0)) {
    require(model.noise_scale >= 0.0 && std::isfinite(model.noise_scale),
            "noise_scale must be finite and >= 0");
    require(model.w_bound >= 0.0 && std::isfinite(model.w_bound),
            "w_bound must be finite and >= 0");
    require(control_covariance.rows() == control_covariance.cols(),
            "control covariance must be square");
    Eigen::LLT<Matrix> llt(control_covariance);
    require(llt.info() == Eigen::Success,
            "control covariance must be positive definite");
    noise_factor_ = std::sqrt(model.noise_scale) * Matrix(llt.matrixL());
  }

  const DisturbanceModel& model() const { return model_; }

  // Additive state disturbance with ||w|| <= D.
  Vector sample_w() {
    Vector w = Vector::Zero(state_dim_);
    if (model_.w_bound == 0.0) return w;
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> uniform;
    double norm = 0.0;
    do {
      for (int i = 0; i < state_dim_; ++i) w(i) = normal(w_engine_);
      norm = w.norm();
    } while (norm == 0.0);
    const double radius =
        model_.w_bound * std::pow(uniform(w_engine_), 1.0 / state_dim_);
    w *= radius / norm;
    const double n = w.norm();
    if (n > model_.w_bound) w *= model_.w_bound / n * (1.0 - 1e-15);
    return w;
  }

  // Control-channel noise drawn from N(0, noise_scale * Sigma).
  Vector sample_control_noise() {
    std::normal_distribution<double> normal;
    Vector z(noise_factor_.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(noise_engine_);
    return noise_factor_ * z;
  }

 private:
  DisturbanceModel model_;
  int state_dim_;
  Engine w_engine_;
  Engine noise_engine_;
  Matrix noise_factor_;
};

// x + F(x, sat(u + k_fb + eps)) dt + w.
inline State propagate_real(const SystemModel& model, const ConstVectorRef& x,
                            const ConstVectorRef& u, const ConstVectorRef& eps,
                            const ConstVectorRef& k_fb,
                            const ConstVectorRef& w) {
  require_dims(x, model.state_dim(), "propagate_real state");
  require_dims(u, model.control_dim(), "propagate_real control");
  require_dims(eps, model.control_dim(), "propagate_real noise");
  require_dims(k_fb, model.control_dim(), "propagate_real feedback");
  require_dims(w, model.state_dim(), "propagate_real disturbance");
  const Control total = u + k_fb + eps;
  State next = model.step(x, total);
  next += w;
  return next;
}

inline State propagate_real(const SystemModel& model,
                            DisturbanceSampler& disturbance,
                            const ConstVectorRef& x, const ConstVectorRef& u,
                            const ConstVectorRef& eps,
                            const ConstVectorRef& k_fb) {
  const Vector w = disturbance.sample_w();
  return propagate_real(model, x, u, eps, k_fb, w);
}

}  // namespace rmppi
