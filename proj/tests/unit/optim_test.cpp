#include <doctest.h>

#include "mixl/optim.hpp"

using mixl::bfgs_minimize;
using mixl::BfgsOptions;

TEST_CASE("bfgs on a quadratic recovers minimizer and inverse hessian") {
  Eigen::MatrixXd a(3, 3);
  a << 4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0;
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(3, 1.0);
  auto f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = a * x - b;
    return 0.5 * x.dot(a * x) - b.dot(x);
  };
  const auto res = bfgs_minimize(f, Eigen::VectorXd::Zero(3));
  CHECK(res.converged);
  const Eigen::VectorXd want = a.llt().solve(b);
  CHECK((res.x - want).cwiseAbs().maxCoeff() < 1e-6);
  // After convergence on a quadratic the BFGS metric approximates A^-1.
  const Eigen::MatrixXd a_inv = a.inverse();
  CHECK((res.inverse_hessian - a_inv).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("bfgs on rosenbrock") {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double a = 1.0 - x[0];
    const double b = x[1] - x[0] * x[0];
    g.resize(2);
    g[0] = -2.0 * a - 400.0 * x[0] * b;
    g[1] = 200.0 * b;
    return a * a + 100.0 * b * b;
  };
  BfgsOptions opts;
  opts.max_iterations = 500;
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  const auto res = bfgs_minimize(f, x0, opts);
  CHECK(res.converged);
  CHECK(std::abs(res.x[0] - 1.0) < 1e-5);
  CHECK(std::abs(res.x[1] - 1.0) < 1e-5);
}

TEST_CASE("bfgs is monotone and survives non-finite regions") {
  // The barrier makes a whole half-space infeasible; the line search must
  // back off rather than crash or accept a worse point.
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    if (x[0] >= 2.0) {
      g.setZero(1);
      return std::numeric_limits<double>::infinity();
    }
    g.resize(1);
    g[0] = 2.0 * x[0] + 1.0 / (2.0 - x[0]);
    return x[0] * x[0] - std::log(2.0 - x[0]);
  };
  Eigen::VectorXd x0(1);
  x0 << 1.9;
  const auto res = bfgs_minimize(f, x0);
  CHECK(res.converged);
  Eigen::VectorXd g0(1);
  const double f0 = f(x0, g0);
  CHECK(res.value <= f0);
  CHECK(res.x[0] < 2.0);
}

TEST_CASE("bfgs with zero iterations returns the start") {
  auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    g = 2.0 * x;
    return x.squaredNorm();
  };
  BfgsOptions opts;
  opts.max_iterations = 0;
  Eigen::VectorXd x0(2);
  x0 << 3.0, -1.0;
  const auto res = bfgs_minimize(f, x0, opts);
  CHECK((res.x - x0).cwiseAbs().maxCoeff() == 0.0);
}
