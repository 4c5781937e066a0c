#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "lddmm/datasets.hpp"
#include "lddmm/registration.hpp"
#include "support/oracles.hpp"

using namespace lddmm;

namespace {

RegistrationSettings smoke_settings(SolverKind solver) {
  RegistrationSettings s;
  s.flow.kernel.sigma = 0.175;
  s.flow.lambda = 1e-8;
  s.flow.tau = 16;
  s.loss.kind = LossKind::sinkhorn_divergence;
  s.loss.epsilon = 1e-2;
  s.solver = solver;
  s.optimizer.max_iter = 15;
  return s;
}

struct Pair {
  Points source, target;
};

Pair small_blobs(Index n, std::uint64_t seed) {
  return {sample_blobs_2d(n, BlobSide::source, seed).points(), sample_blobs_2d(n, BlobSide::target, seed + 1).points()};
}

}  // namespace

TEST(Registration, PerfectMatchStaysPut) {
  std::mt19937_64 rng(1);
  const Points x = oracle::uniform_points(rng, 30, 2);
  RegistrationSettings s = smoke_settings(SolverKind::shooting);
  s.loss.epsilon = 0.1;
  s.loss.sinkhorn_tol = 1e-10;
  const RegistrationResult r = register_clouds(x, x, s);
  ASSERT_FALSE(r.loss_trace.empty());
  EXPECT_LE(r.final_fidelity, r.loss_trace.front() + 1e-12);
  EXPECT_LE(r.final_fidelity, 1e-6);
}

TEST(Registration, ObjectiveRecomposes) {
  const Pair p = small_blobs(60, 3);
  for (SolverKind solver : {SolverKind::shooting, SolverKind::gdm}) {
    RegistrationSettings s = smoke_settings(solver);
    s.flow.lambda = 1e-3;
    s.loss.sinkhorn_tol = 1e-10;
    const RegistrationResult r = register_clouds(p.source, p.target, s);
    EXPECT_NEAR(r.objective(), r.final_fidelity + s.flow.lambda * r.final_kinetic, 1e-10);
    EXPECT_LT(r.final_fidelity, r.loss_trace.front());
    if (solver == SolverKind::shooting) {
      EXPECT_NEAR(r.objective(), energy_shooting(r.initial_momentum(), p.source, p.target, s.loss, s.flow), 1e-8);
    } else {
      const MomentumField a = MomentumField::unflatten(r.parameters, s.flow.tau, 60, 2);
      EXPECT_NEAR(r.objective(), energy_gdm(a, p.source, p.target, s.loss, s.flow), 1e-8);
    }
    EXPECT_EQ(r.bundle.z.front(), p.source);
  }
}

TEST(Registration, LbfgsTraceIsNonIncreasing) {
  const Pair p = small_blobs(80, 5);
  const RegistrationResult r = register_clouds(p.source, p.target, smoke_settings(SolverKind::shooting));
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) EXPECT_LE(r.loss_trace[i], r.loss_trace[i - 1]);
  EXPECT_LT(r.loss_trace.back(), 0.5 * r.loss_trace.front());
}

TEST(Registration, GdmFixedStepIsMonotoneOnTheSmokeInstance) {
  const Pair p = small_blobs(200, 7);
  RegistrationSettings s = smoke_settings(SolverKind::gdm);
  s.optimizer.kind = OptimizerKind::fixed_step_gd;
  s.optimizer.step = 1e-2;
  s.optimizer.max_iter = 25;
  s.optimizer.grad_tol = 0.0;
  const RegistrationResult r = register_clouds(p.source, p.target, s);
  ASSERT_EQ(r.loss_trace.size(), 26u);
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) EXPECT_LE(r.loss_trace[i], r.loss_trace[i - 1]) << i;
  EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(Registration, Deterministic) {
  const Pair p = small_blobs(50, 9);
  const RegistrationSettings s = smoke_settings(SolverKind::shooting);
  const RegistrationResult a = register_clouds(p.source, p.target, s);
  const RegistrationResult b = register_clouds(p.source, p.target, s);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_EQ(a.parameters, b.parameters);
}

TEST(Registration, RestartFromOwnSolutionIsNearlyStationary) {
  // Small enough to reach grad_tol; a run stopped by max_iter keeps improving on restart.
  const Points source = sample_blobs_2d(10, BlobSide::source, 11).points();
  const Points target = sample_blobs_2d(13, BlobSide::target, 12).points();
  for (SolverKind solver : {SolverKind::shooting, SolverKind::gdm}) {
    RegistrationSettings s = smoke_settings(solver);
    s.flow.lambda = 1e-3;
    s.loss.epsilon = 0.05;
    s.loss.sinkhorn_tol = 1e-10;
    s.optimizer.max_iter = 2000;
    s.optimizer.grad_tol = 1e-7;
    const RegistrationResult first = register_clouds(source, target, s);
    ASSERT_EQ(first.status, OptimizerStatus::grad_tol) << to_string(solver);
    const Eigen::VectorXd init = first.parameters;
    const RegistrationResult again = register_clouds(source, target, s, &init);
    EXPECT_NEAR(again.loss_trace.front(), first.objective(), 1e-9 * first.objective());
    EXPECT_LE(std::abs(again.objective() - first.objective()), 0.01 * first.objective());
    if (solver == SolverKind::shooting) {
      EXPECT_EQ(parameters_from_initial_momentum(solver, first.initial_momentum(), s.flow.tau), first.parameters);
    }
  }
}

TEST(Registration, GdmParametersFromInitialMomentumRepeatSlices) {
  Points a0(2, 2);
  a0 << 1, 2, 3, 4;
  const Eigen::VectorXd x = parameters_from_initial_momentum(SolverKind::gdm, a0, 3);
  ASSERT_EQ(x.size(), 16);
  const MomentumField f = MomentumField::unflatten(x, 3, 2, 2);
  for (const auto& slice : f.a) EXPECT_EQ(slice, a0);
}

TEST(Registration, Errors) {
  const Pair p = small_blobs(10, 13);
  const RegistrationSettings s = smoke_settings(SolverKind::shooting);
  const Eigen::VectorXd wrong = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(register_clouds(p.source, p.target, s, &wrong), ConfigError);
  EXPECT_THROW(register_clouds(p.source, Points::Zero(4, 3), s), ConfigError);
  Eigen::VectorXd nan = Eigen::VectorXd::Zero(20);
  nan[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(register_clouds(p.source, p.target, s, &nan), RegistrationAborted);
  RegistrationSettings bad = s;
  bad.flow.tau = 0;
  EXPECT_THROW(register_clouds(p.source, p.target, bad), ConfigError);
  EXPECT_THROW(parse_solver_kind("euler"), ConfigError);
}
