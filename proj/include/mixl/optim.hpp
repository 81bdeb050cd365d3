#pragma once

#include <functional>

#include <Eigen/Dense>

namespace mixl {

/// Objective callback: returns f(x) and fills grad (same size as x).
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct BfgsOptions {
  int max_iterations = 200;
  double gradient_tolerance = 1e-6;  // on max|g| / (1 + |f|)
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_line_search_steps = 40;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd inverse_hessian;  // final BFGS approximation
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Minimizes f via BFGS with a strong-Wolfe line search. The returned
/// point never has a larger objective value than the start point.
BfgsResult bfgs_minimize(const Objective& f, const Eigen::VectorXd& x0,
                         const BfgsOptions& options = {});

}  // namespace mixl
