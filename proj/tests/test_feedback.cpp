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


#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rmppi/feedback.hpp"

namespace rmppi {
namespace {

const Matrix kDiMetric{{1.0, 0.39331989}, {0.39331989, 0.33873091}};
const Matrix kPendulumMetric{{1.0, 0.48059088}, {0.48059088, 0.27392688}};

// Kronecker solve of P = Q + A' P A.
Matrix discrete_lyapunov(const Matrix& a, const Matrix& q) {
  const Eigen::Index n = a.rows();
  Matrix kron(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) kron.block(i * n, j * n, n, n) = a(i, j) * a;
  }
  const Matrix lhs = Matrix::Identity(n * n, n * n) - kron.transpose();
  const Vector vec_q = Eigen::Map<const Vector>(q.data(), n * n);
  const Vector vec_p = lhs.fullPivLu().solve(vec_q);
  return Eigen::Map<const Matrix>(vec_p.data(), n, n);
}

// Hewer iteration for the stationary LQR gain.
Matrix dare_gain(const Matrix& a, const Matrix& b, const Matrix& q, const Matrix& r,
                 Matrix k) {
  for (int it = 0; it < 100; ++it) {
    const Matrix a_cl = a + b * k;
    const Matrix p = discrete_lyapunov(a_cl, q + k.transpose() * r * k);
    k = -(r + b.transpose() * p * b).ldlt().solve(b.transpose() * p * a);
  }
  return k;
}

// Tracks a nominal trajectory from a perturbed start with no disturbance
// and returns the residuals in the policy norm.
std::vector<double> track(const SystemModel& model, const FeedbackPolicy& policy,
                          const Vector& x0, const Vector& x0_star, int steps,
                          double u_nominal) {
  Vector x = x0, x_star = x0_star;
  const Control u = Control::Constant(1, u_nominal);
  std::vector<double> residuals{policy.tracking_distance(x, x_star)};
  for (int t = 0; t < steps; ++t) {
    x = model.step(x, u + policy.apply(x, x_star, t));
    x_star = model.step(x_star, u);
    residuals.push_back(policy.tracking_distance(x, x_star));
  }
  return residuals;
}

TEST(FitGamma, GeometricResiduals) {
  const TrackingReport r = fit_gamma({1.0, 0.5, 0.25, 0.125});
  EXPECT_NEAR(r.gamma_hat, 0.5, 1e-15);
  EXPECT_TRUE(r.satisfied);
  EXPECT_FALSE(r.perfect);
  EXPECT_FALSE(r.boundary);
}

TEST(FitGamma, FlatResidualsHitTheBoundary) {
  const TrackingReport r = fit_gamma({1.0, 1.0, 1.0});
  EXPECT_EQ(r.gamma_hat, 1.0);
  EXPECT_TRUE(r.boundary);
  EXPECT_TRUE(r.satisfied);
}

TEST(FitGamma, GrowingResidualsAreNotSatisfied) {
  const TrackingReport r = fit_gamma({1.0, 2.0});
  EXPECT_TRUE(r.boundary);
  EXPECT_FALSE(r.satisfied);
}

TEST(FitGamma, PerfectTracking) {
  const TrackingReport r = fit_gamma({1.0, 0.0});
  EXPECT_EQ(r.gamma_hat, 0.0);
  EXPECT_TRUE(r.perfect);
  EXPECT_TRUE(r.satisfied);
  EXPECT_THROW(fit_gamma({0.0, 1.0}), ContractViolation);
  EXPECT_THROW(fit_gamma({}), ContractViolation);
}

TEST(Policy, ZeroErrorGivesZeroFeedback) {
  const auto model = double_integrator();
  const FeedbackPolicy p = contraction_feedback(kDiMetric, 1.0, *model);
  const Vector x{{0.3, -1.1}};
  EXPECT_EQ(p.apply(x, x, 0), Control::Zero(1));
  EXPECT_EQ(FeedbackPolicy::none(2, 1).apply(x, Vector::Zero(2), 3), Control::Zero(1));
}

TEST(Policy, LinearBelowTheLimits) {
  const auto model = double_integrator();
  const FeedbackPolicy p = contraction_feedback(kDiMetric, 1.0, *model);
  const Vector x_star{{0.2, 0.1}};
  const Vector e1{{0.01, 0.02}}, e2{{-0.03, 0.05}};
  const Control sum = p.apply(x_star + e1 + e2, x_star, 0);
  const Control parts = p.apply(x_star + e1, x_star, 0) + p.apply(x_star + e2, x_star, 0);
  EXPECT_NEAR((sum - parts).norm(), 0.0, 1e-12);
  EXPECT_NEAR((p.apply(x_star + 2.0 * e1, x_star, 0) - 2.0 * p.apply(x_star + e1, x_star, 0)).norm(),
              0.0, 1e-12);
}

TEST(Policy, ClampsToControlLimits) {
  const FeedbackPolicy p = FeedbackPolicy::time_varying({Matrix{{-100.0, 0.0}}, Matrix{{1.0, 0.0}}},
                                                        Vector{{-2.0}}, Vector{{3.0}});
  EXPECT_EQ(p.apply(Vector{{1.0, 0.0}}, Vector::Zero(2), 0)(0), -2.0);
  EXPECT_EQ(p.apply_unclamped(Vector{{1.0, 0.0}}, Vector::Zero(2), 0)(0), -100.0);
  // Past the end the last gain is reused.
  EXPECT_EQ(p.apply(Vector{{1.0, 0.0}}, Vector::Zero(2), 7)(0), 1.0);
  EXPECT_EQ(p.apply(Vector{{5.0, 0.0}}, Vector::Zero(2), 1)(0), 3.0);
}

TEST(Ilqg, LongHorizonMatchesStationaryRiccati) {
  const auto model = double_integrator();
  const int horizon = 3000;
  const Matrix q = Matrix{{10.0, 0.0}, {0.0, 2.0}};
  const Matrix r = Matrix{{0.5}};
  const FeedbackPolicy p = ilqg_gains(*model, Matrix::Zero(2, horizon + 1),
                                      ControlSequence::Zero(1, horizon), {q, r, q});
  const double dt = model->dt();
  const Matrix a = Matrix{{1.0, dt}, {0.0, 1.0}};
  const Matrix b = Matrix{{0.0}, {dt}};
  const Matrix k = dare_gain(a, b, q, r, Matrix{{-1.0, -2.0}});
  EXPECT_LE((p.gain(0) - k).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Ilqg, ExpensiveControlGivesVanishingGains) {
  const auto model = nonlinear_benchmark();
  Matrix traj(2, 21);
  traj.setConstant(0.1);
  const FeedbackPolicy p = ilqg_gains(*model, traj, ControlSequence::Zero(1, 20),
                                      {Matrix::Identity(2, 2), Matrix{{1e12}}, Matrix()});
  for (int t = 0; t < 20; ++t) EXPECT_LE(p.gain(t).norm(), 1e-6);
}

TEST(Ilqg, IndefiniteWeightReportsTimestep) {
  const auto model = double_integrator();
  try {
    ilqg_gains(*model, Matrix::Zero(2, 11), ControlSequence::Zero(1, 10),
               {Matrix::Identity(2, 2), Matrix{{-1e6}}, Matrix()});
    FAIL() << "expected RiccatiDivergence";
  } catch (const RiccatiDivergence& e) {
    EXPECT_EQ(e.timestep(), 9);
  }
}

TEST(Ilqg, ShapeChecks) {
  const auto model = double_integrator();
  EXPECT_THROW(ilqg_gains(*model, Matrix::Zero(2, 10), ControlSequence::Zero(1, 10),
                          {Matrix::Identity(2, 2), Matrix::Identity(1, 1), Matrix()}),
               ContractViolation);
}

TEST(Ilqg, TrackingErrorNonincreasingAfterBurnIn) {
  const auto model = nonlinear_benchmark();
  const int horizon = 200;
  Matrix traj(2, horizon + 1);
  traj.col(0) = Vector{{0.3, 0.0}};
  const ControlSequence u = ControlSequence::Constant(1, horizon, 0.05 - 2.0 * std::sin(0.3));
  for (int t = 0; t < horizon; ++t) traj.col(t + 1) = model->step(traj.col(t), u.col(t));
  const FeedbackPolicy p = ilqg_gains(*model, traj, u,
                                      {Matrix{{10.0, 0.0}, {0.0, 10.0}}, Matrix{{1.0}}, Matrix()});
  Vector x = traj.col(0) + Vector{{0.05, -0.1}};
  std::vector<double> err{(x - traj.col(0)).norm()};
  for (int t = 0; t < horizon; ++t) {
    x = model->step(x, u.col(t) + p.apply(x, traj.col(t), t));
    err.push_back((x - traj.col(t + 1)).norm());
  }
  for (int t = 11; t <= horizon; ++t) EXPECT_LE(err[t], err[t - 1] * (1.0 + 1e-9)) << t;
  EXPECT_LT(err.back(), 0.05 * err.front());
}

TEST(Contraction, RejectsBadMetrics) {
  const auto model = double_integrator();
  EXPECT_THROW(contraction_feedback(Matrix{{1.0, 2.0}, {2.0, 1.0}}, 1.0, *model), ContractViolation);
  EXPECT_THROW(contraction_feedback(Matrix{{1.0, 0.5}, {0.0, 1.0}}, 1.0, *model), ContractViolation);
  EXPECT_THROW(contraction_feedback(kDiMetric, 0.0, *model), ContractViolation);
}

class ContractionSystems : public ::testing::TestWithParam<bool> {};

TEST_P(ContractionSystems, MetricDecreasesAtTheCertifiedRate) {
  const bool pendulum = GetParam();
  const SystemPtr model = pendulum ? nonlinear_benchmark() : double_integrator();
  const Matrix& metric = pendulum ? kPendulumMetric : kDiMetric;
  const FeedbackPolicy p = contraction_feedback(metric, 1.0, *model);
  EXPECT_TRUE(p.certified);
  EXPECT_GE(p.worst_margin, -1e-12);
  const double dt = model->dt();
  const Vector x_star0 = pendulum ? Vector{{0.5, 0.0}} : Vector{{1.0, 0.0}};
  const double u_nom = pendulum ? -2.0 * std::sin(0.5) : 0.0;
  const std::vector<double> res = track(*model, p, x_star0 + Vector{{0.05, -0.1}}, x_star0, 200, u_nom);
  // V = e' M e falls by at least exp(-2 lambda_c dt) per step up to the
  // Euler discretization error.
  const double rate = std::exp(-2.0 * dt) * (1.0 + 1e-3);
  for (std::size_t t = 1; t < res.size(); ++t) {
    EXPECT_LE(res[t] * res[t], rate * res[t - 1] * res[t - 1]) << t;
  }
  const TrackingReport report = fit_gamma(res);
  EXPECT_LT(report.gamma_hat, 1.0);
  EXPECT_LE(report.gamma_hat, 0.99);
  EXPECT_TRUE(report.satisfied);
}

INSTANTIATE_TEST_SUITE_P(BothSystems, ContractionSystems, ::testing::Values(false, true));

TEST(Contraction, GammaFromRate) {
  const auto model = double_integrator();
  const FeedbackPolicy p = contraction_feedback(kDiMetric, 1.0, *model);
  EXPECT_DOUBLE_EQ(p.gamma(0.02), std::exp(-0.02));
  EXPECT_TRUE(std::isnan(FeedbackPolicy::none(2, 1).gamma(0.02)));
}

TEST(FeedbackKindNames, RoundTrip) {
  for (auto k : {FeedbackKind::kNone, FeedbackKind::kIlqg, FeedbackKind::kContraction}) {
    EXPECT_EQ(parse_feedback_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_feedback_kind("lqr"), ContractViolation);
}

}  // namespace
}  // namespace rmppi
