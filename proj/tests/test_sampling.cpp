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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <sstream>

#include "rmppi/sampling.hpp"
#include "rmppi/selftest.hpp"

namespace rmppi {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

StateCostPtr quadratic_cost() {
  return std::make_shared<FunctionStateCost>(
      [](const ConstVectorRef& x) { return x.squaredNorm(); },
      [](const ConstVectorRef& x) { return 3.0 * x.squaredNorm(); });
}

TEST(NoisePlan, ReproducibleFromSeed) {
  const Matrix l = Matrix{{1.0, 0.0}, {0.5, 2.0}};
  const NoisePlan a(17, 64, 20, l), b(17, 64, 20, l), c(18, 64, 20, l);
  EXPECT_TRUE(bit_equal(a.draws(), b.draws()));
  EXPECT_FALSE(bit_equal(a.draws(), c.draws()));
}

TEST(NoisePlan, MomentsMatchCovariance) {
  const Matrix sigma{{2.0, 0.6}, {0.6, 1.0}};
  const Matrix l = Eigen::LLT<Matrix>(sigma).matrixL();
  const int n = 40000;
  const NoisePlan plan(5, n, 1, l);
  const Matrix& d = plan.draws();
  const Vector mean = d.rowwise().mean();
  const Matrix centered = d.colwise() - mean;
  const Matrix cov = centered * centered.transpose() / (n - 1);
  const double tol = 5.0 / std::sqrt(static_cast<double>(n));
  for (int i = 0; i < 2; ++i) {
    EXPECT_LE(std::abs(mean(i)) / std::sqrt(sigma(i, i)), tol);
    for (int j = 0; j < 2; ++j) {
      EXPECT_LE(std::abs(cov(i, j) - sigma(i, j)) / std::sqrt(sigma(i, i) * sigma(j, j)), tol);
    }
  }
}

TEST(FreeEnergy, ConstantCostsCollapse) {
  EXPECT_DOUBLE_EQ(free_energy_mc(Vector::Constant(50, 7.25), 0.3).value, 7.25);
}

TEST(FreeEnergy, TwoSampleClosedForm) {
  // F = -log((1 + exp(-L)) / 2) -> log 2.
  for (double large : {10.0, 100.0, 1e6}) {
    const double f = free_energy_mc(Vector{{0.0, large}}, 1.0).value;
    EXPECT_NEAR(f, -std::log((1.0 + std::exp(-large)) / 2.0), 1e-15);
  }
  EXPECT_DOUBLE_EQ(free_energy_mc(Vector{{0.0, 1e6}}, 1.0).value, std::log(2.0));
}

TEST(FreeEnergy, SingleSample) {
  const FreeEnergyEstimate f = free_energy_mc(Vector{{4.5}}, 2.0);
  EXPECT_EQ(f.value, 4.5);
  EXPECT_EQ(f.samples, 1u);
  EXPECT_EQ(f.min_cost, 4.5);
}

TEST(FreeEnergy, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(free_energy_mc(Vector(0), 1.0), ContractViolation);
  EXPECT_THROW(free_energy_mc(Vector{{1.0, kInf}}, 1.0), ContractViolation);
  EXPECT_THROW(free_energy_mc(Vector{{1.0, std::nan("")}}, 1.0), ContractViolation);
  EXPECT_THROW(free_energy_mc(Vector{{1.0}}, 0.0), ContractViolation);
}

TEST(FreeEnergy, SandwichProperty) {
  const auto r = selftest::free_energy_sandwich(10000, 11);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(FreeEnergy, MonotoneInEachCost) {
  Engine engine(9);
  std::uniform_real_distribution<double> unit(0.0, 20.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector costs(16);
    for (int i = 0; i < 16; ++i) costs(i) = unit(engine);
    const double before = free_energy_mc(costs, 1.5).value;
    costs(trial % 16) -= 0.5 * unit(engine);
    EXPECT_LE(free_energy_mc(costs, 1.5).value, before);
  }
}

TEST(Softmax, InfiniteCostsGetZeroWeight) {
  const Vector w = softmax_weights(Vector{{0.0, kInf, 1.0}}, 1.0);
  EXPECT_EQ(w(1), 0.0);
  EXPECT_NEAR(w.sum(), 1.0, 1e-15);
  EXPECT_THROW(softmax_weights(Vector{{kInf, kInf}}, 1.0), DegenerateSampling);
  EXPECT_THROW(softmax_weights(Vector{{0.0, std::nan("")}}, 1.0), DegenerateSampling);
}

TEST(MppiUpdate, UniformWeightsAddNoiseMean) {
  const NoisePlan plan(3, 10, 5, Matrix::Identity(2, 2));
  const ControlSequence u = ControlSequence::Random(2, 5);
  const Vector w = softmax_weights(Vector::Constant(10, 2.0), 1.0);
  ControlSequence mean = ControlSequence::Zero(2, 5);
  for (int n = 0; n < 10; ++n) mean += plan.sample(n);
  mean /= 10.0;
  EXPECT_LE((mppi_update(u, w, plan) - (u + mean)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(MppiUpdate, ZeroNoiseSingleSampleIsIdentity) {
  const NoisePlan plan = NoisePlan::zeros(1, 4, 1);
  const ControlSequence u = ControlSequence::Random(1, 4);
  EXPECT_EQ(mppi_update(u, Vector{{1.0}}, plan), u);
}

TEST(MppiUpdate, InfiniteCostSampleIsIgnored) {
  const NoisePlan plan(8, 2, 6, Matrix::Identity(1, 1));
  const ControlSequence u = ControlSequence::Zero(1, 6);
  const Vector w = softmax_weights(Vector{{0.0, kInf}}, 1.0);
  EXPECT_EQ(mppi_update(u, w, plan), u + plan.sample(0));
}

TEST(MppiUpdate, AllZeroWeightsAreDegenerate) {
  const NoisePlan plan(8, 2, 6, Matrix::Identity(1, 1));
  EXPECT_THROW(mppi_update(ControlSequence::Zero(1, 6), Vector::Zero(2), plan), DegenerateSampling);
  EXPECT_THROW(mppi_update(ControlSequence::Zero(1, 6), Vector{{1.0, -1.0}}, plan),
               ContractViolation);
}

TEST(IsWeight, ZeroMeanReducesToBoltzmann) {
  const Matrix sigma_inv = Matrix::Identity(2, 2);
  const ControlSequence u = ControlSequence::Zero(2, 3);
  std::vector<ControlSequence> v = {ControlSequence::Random(2, 3), ControlSequence::Random(2, 3),
                                    ControlSequence::Random(2, 3)};
  const Vector costs{{1.0, 2.0, 0.5}};
  const Vector w = is_weights(v, u, sigma_inv, 0.7, costs);
  const Vector expected = softmax_weights(costs, 0.7);
  EXPECT_LE((w - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(IsWeight, EqualSamplesAreUniform) {
  const ControlSequence u = ControlSequence::Random(1, 4);
  const ControlSequence v = ControlSequence::Random(1, 4);
  std::vector<ControlSequence> batch(5, v);
  const Vector w = is_weights(batch, u, Matrix::Identity(1, 1), 1.0, Vector::Constant(5, 3.0));
  for (int n = 0; n < 5; ++n) EXPECT_DOUBLE_EQ(w(n), 0.2);
  EXPECT_DOUBLE_EQ(is_weight(batch, u, Matrix::Identity(1, 1), 1.0, Vector::Constant(5, 3.0), 2), 0.2);
}

TEST(IsWeight, MatchesDensityRatioOracle) {
  const auto r = selftest::is_weight_oracle(2000, 21);
  EXPECT_TRUE(r.passed) << r.detail;
}

class RolloutTest : public ::testing::Test {
 protected:
  SystemPtr model = double_integrator();
  CostFunction cost = make_cost(quadratic_cost(), Matrix{{0.5}}, 2.0, 0.5);
  Vector x0 = Vector{{0.4, -0.3}};
};

TEST_F(RolloutTest, ZeroNoiseZeroCost) {
  const CostFunction zero = make_cost(
      std::make_shared<FunctionStateCost>([](const ConstVectorRef&) { return 0.0; },
                                          [](const ConstVectorRef&) { return 0.0; }),
      Matrix{{1.0}}, 1.0, 0.5);
  const RolloutBatch b = rollout_batch(*model, zero, x0, ControlSequence::Zero(1, 10),
                                       NoisePlan::zeros(4, 10, 1));
  EXPECT_EQ(b.costs, Vector::Zero(4));
}

TEST_F(RolloutTest, SingleDeterministicRolloutMatchesOracle) {
  ControlSequence u(1, 6);
  u << 1.0, -2.0, 0.5, 3.0, 0.0, -1.0;
  const RolloutBatch b = rollout_batch(*model, cost, x0, u, NoisePlan::zeros(1, 6, 1));
  Matrix traj(2, 7);
  traj.col(0) = x0;
  double control = 0.0;
  for (int t = 0; t < 6; ++t) {
    traj.col(t + 1) = model->step(traj.col(t), u.col(t));
    control += control_cost_term(cost, u.col(t), Vector::Zero(1));
  }
  EXPECT_NEAR(b.costs(0), path_cost(*cost.state, traj) + control, 1e-12);
  EXPECT_NEAR(b.state_costs(0), path_cost(*cost.state, traj), 1e-12);
}

TEST_F(RolloutTest, SmoothedScaleUsesOneMinusBeta) {
  const ControlSequence u = ControlSequence::Constant(1, 5, 1.5);
  const NoisePlan plan(4, 3, 5, cost.sigma_chol);
  RolloutOptions smoothed;
  smoothed.control_scale = ControlCostScale::kSmoothed;
  const RolloutBatch full = rollout_batch(*model, cost, x0, u, plan);
  const RolloutBatch half = rollout_batch(*model, cost, x0, u, plan, smoothed);
  for (int n = 0; n < 3; ++n) {
    EXPECT_NEAR(half.control_costs(n), (1.0 - cost.beta) * full.control_costs(n), 1e-12);
  }
}

TEST_F(RolloutTest, PermutingSamplesPermutesCosts) {
  const NoisePlan plan(12, 8, 10, cost.sigma_chol);
  Matrix permuted(plan.draws().rows(), plan.draws().cols());
  const std::vector<int> order = {3, 7, 0, 1, 6, 2, 5, 4};
  for (int n = 0; n < 8; ++n) permuted.middleCols(n * 10, 10) = plan.sample(order[n]);
  const NoisePlan other = NoisePlan::from_draws(permuted, 8, 10);
  const ControlSequence u = ControlSequence::Random(1, 10);
  const RolloutBatch a = rollout_batch(*model, cost, x0, u, plan);
  const RolloutBatch b = rollout_batch(*model, cost, x0, u, other);
  for (int n = 0; n < 8; ++n) EXPECT_EQ(b.costs(n), a.costs(order[n]));
}

TEST_F(RolloutTest, WorkerCountDoesNotChangeResults) {
  const NoisePlan plan(99, 101, 30, cost.sigma_chol);
  const ControlSequence u = ControlSequence::Random(1, 30);
  RolloutOptions one, many;
  many.workers = 4;
  const RolloutBatch a = rollout_batch(*model, cost, x0, u, plan, one);
  const RolloutBatch b = rollout_batch(*model, cost, x0, u, plan, many);
  EXPECT_TRUE(bit_equal(a.costs, b.costs));
  EXPECT_EQ(free_energy_mc(a.costs, 2.0).value, free_energy_mc(b.costs, 2.0).value);
  EXPECT_TRUE(bit_equal(mppi_update(u, softmax_weights(a.costs, 2.0), plan),
                        mppi_update(u, softmax_weights(b.costs, 2.0), plan)));
}

// xdot = x^3 from a large state overflows within a few steps.
class Exploding final : public SystemModel {
 public:
  Exploding()
      : SystemModel("exploding", 1, 1, 1.0, Vector{{-1.0}}, Vector{{1.0}}, StateBox{}) {}
  void vector_field(const ConstVectorRef& x, const ConstVectorRef&, VectorRef xdot) const override {
    xdot(0) = x(0) * x(0) * x(0);
  }
};

TEST(Rollout, BlowUpGetsCrashCost) {
  Exploding model;
  const CostFunction c = make_cost(quadratic_cost(), Matrix{{1.0}}, 1.0, 0.5);
  RolloutOptions o;
  o.crash_cost = 1234.0;
  const RolloutBatch b =
      rollout_batch(model, c, Vector{{1e10}}, ControlSequence::Zero(1, 10), NoisePlan::zeros(3, 10, 1), o);
  EXPECT_EQ(b.crash_count(), 3u);
  EXPECT_EQ(b.costs, Vector::Constant(3, 1234.0));
}

TEST(Rollout, ShapeMismatchRejected) {
  const auto model = double_integrator();
  const CostFunction c = make_cost(quadratic_cost(), Matrix{{1.0}}, 1.0, 0.5);
  EXPECT_THROW(rollout_batch(*model, c, Vector{{0.0, 0.0}}, ControlSequence::Zero(1, 5),
                             NoisePlan::zeros(2, 6, 1)),
               ContractViolation);
}

TEST(Smoothing, PreservesLowOrderPolynomials) {
  ControlSequence u(2, 20);
  for (int t = 0; t < 20; ++t) {
    u(0, t) = 0.5 * t * t - 3.0 * t + 1.0;
    u(1, t) = -2.0 * t + 4.0;
  }
  EXPECT_LE((savitzky_golay(u, 7, 2) - u).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_THROW(savitzky_golay(u, 6, 2), ContractViolation);
}

TEST(Smoothing, ReducesWhiteNoise) {
  const NoisePlan plan(4, 1, 200, Matrix::Identity(1, 1));
  const ControlSequence noisy = plan.sample(0);
  EXPECT_LT(savitzky_golay(noisy, 11, 2).squaredNorm(), 0.5 * noisy.squaredNorm());
}

TEST(BatchCsv, HeaderAndRows) {
  std::ostringstream os;
  write_batch_csv(os, Vector{{1.5, 2.0}}, Vector{{0.25, 0.75}});
  EXPECT_EQ(os.str(), "sample,cost,weight\n0,1.5,0.25\n1,2,0.75\n");
}

}  // namespace
}  // namespace rmppi
