#include <cmath>
#include <limits>
#include <string>

#include <gtest/gtest.h>

#include "lddmm/optimize.hpp"

using namespace lddmm;

namespace {

Objective quadratic(const Eigen::VectorXd& c) {
  return [c](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g != nullptr) *g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
}

double rosenbrock(const Eigen::VectorXd& x, Eigen::VectorXd* g) {
  if (g != nullptr) {
    g->resize(2);
    (*g)[0] = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
    (*g)[1] = 200.0 * (x[1] - x[0] * x[0]);
  }
  return (1.0 - x[0]) * (1.0 - x[0]) + 100.0 * std::pow(x[1] - x[0] * x[0], 2);
}

bool non_increasing(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] > trace[i - 1]) return false;
  }
  return true;
}

}  // namespace

TEST(Lbfgs, QuadraticMinimum) {
  Eigen::VectorXd c(5);
  c << 1, -2, 3, 0.5, 7;
  OptimizerConfig cfg;
  cfg.max_iter = 20;
  const OptimizerResult r = minimize(quadratic(c), Eigen::VectorXd::Zero(5), cfg);
  EXPECT_LT((r.x - c).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(r.iterations, 20);
}

TEST(Lbfgs, Rosenbrock) {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  OptimizerConfig cfg;
  const OptimizerResult r = minimize(rosenbrock, x0, cfg);
  EXPECT_LT(r.trace.back(), 1e-8);
  EXPECT_TRUE(non_increasing(r.trace));
}

TEST(Lbfgs, TraceNeverIncreases) {
  // Ill-conditioned quadratic plus a quartic term.
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    double v = 0.0;
    if (g != nullptr) g->resize(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double w = std::pow(10.0, static_cast<double>(i) / 2.0);
      v += w * x[i] * x[i] + x[i] * x[i] * x[i] * x[i];
      if (g != nullptr) (*g)[i] = 2.0 * w * x[i] + 4.0 * x[i] * x[i] * x[i];
    }
    return v;
  };
  OptimizerConfig cfg;
  cfg.max_iter = 100;
  const OptimizerResult r = minimize(f, Eigen::VectorXd::Ones(8), cfg);
  EXPECT_TRUE(non_increasing(r.trace));
  EXPECT_EQ(r.trace.size(), static_cast<std::size_t>(r.iterations + 1));
}

TEST(GradientDescent, GeometricContraction) {
  Eigen::VectorXd c(3);
  c << 1, 2, 3;
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::fixed_step_gd;
  cfg.step = 0.4;
  cfg.max_iter = 8;  // later ratios drown in roundoff of x − c
  cfg.grad_tol = 0.0;
  const OptimizerResult r = minimize(quadratic(c), Eigen::VectorXd::Zero(3), cfg);
  ASSERT_EQ(r.trace.size(), 9u);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    EXPECT_LT(r.trace[i], r.trace[i - 1]);
    EXPECT_NEAR(r.trace[i] / r.trace[i - 1], 0.04, 1e-9);  // contraction 0.2, squared
  }
  EXPECT_EQ(r.status, OptimizerStatus::max_iter);
}

TEST(Minimize, ZeroGradientReturnsImmediately) {
  for (OptimizerKind kind : {OptimizerKind::lbfgs, OptimizerKind::fixed_step_gd}) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    Eigen::VectorXd x0(2);
    x0 << 4, 5;
    const OptimizerResult r = minimize(quadratic(x0), x0, cfg);
    EXPECT_EQ(r.x, x0);
    EXPECT_EQ(r.status, OptimizerStatus::grad_tol);
    EXPECT_EQ(r.iterations, 0);
    EXPECT_EQ(r.trace.size(), 1u);
  }
}

TEST(Minimize, Deterministic) {
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  OptimizerConfig cfg;
  cfg.max_iter = 30;
  const OptimizerResult a = minimize(rosenbrock, x0, cfg);
  const OptimizerResult b = minimize(rosenbrock, x0, cfg);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(Minimize, NanAbortNamesTheIteration) {
  int calls = 0;
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    ++calls;
    if (g != nullptr) *g = 2.0 * x;
    return calls >= 4 ? std::numeric_limits<double>::quiet_NaN() : x.squaredNorm();
  };
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::fixed_step_gd;
  cfg.step = 0.1;
  try {
    minimize(f, Eigen::VectorXd::Ones(2), cfg);
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 3"), std::string::npos) << e.what();
  }
}

TEST(Lbfgs, UnconvergedTrialIsTreatedAsRejected) {
  // Evaluations far from the origin "fail to converge"; the line search must back off.
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (x.norm() > 3.0) throw ConvergenceError("too far");
    if (g != nullptr) *g = 2.0 * (x.array() - 1.0).matrix();
    return (x.array() - 1.0).matrix().squaredNorm();
  };
  OptimizerConfig cfg;
  cfg.initial_step = 100.0;
  const OptimizerResult r = minimize(f, Eigen::VectorXd::Zero(2), cfg);
  EXPECT_LT((r.x.array() - 1.0).abs().maxCoeff(), 1e-8);
}

TEST(Lbfgs, OverflowingTrialIsTreatedAsRejected) {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g != nullptr) *g = 2.0 * (x.array() - 1.0).matrix();
    if (x.norm() > 3.0) return std::numeric_limits<double>::infinity();
    return (x.array() - 1.0).matrix().squaredNorm();
  };
  OptimizerConfig cfg;
  cfg.initial_step = 100.0;
  const OptimizerResult r = minimize(f, Eigen::VectorXd::Zero(2), cfg);
  EXPECT_LT((r.x.array() - 1.0).abs().maxCoeff(), 1e-8);
  EXPECT_TRUE(non_increasing(r.trace));
}

TEST(Lbfgs, NanEverywhereAwayFromTheStartAborts) {
  const Eigen::VectorXd x0 = Eigen::VectorXd::Ones(2);
  auto f = [x0](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g != nullptr) *g = 2.0 * x;
    return x == x0 ? x.squaredNorm() : std::numeric_limits<double>::quiet_NaN();
  };
  try {
    minimize(f, x0, OptimizerConfig{});
    FAIL() << "expected a numeric error";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos) << e.what();
  }
}

TEST(OptimizerConfig, Validation) {
  OptimizerConfig cfg;
  cfg.step = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = OptimizerConfig{};
  cfg.max_iter = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = OptimizerConfig{};
  cfg.memory = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_THROW(parse_optimizer_kind("adam"), ConfigError);
  EXPECT_EQ(parse_optimizer_kind("gd"), OptimizerKind::fixed_step_gd);
}
