#include "mixl/optim.hpp"

#include <cmath>
#include <limits>

namespace mixl {

namespace {

struct LinePoint {
  double step, value, slope;
};

// Cubic minimizer of the interpolant through two (step, value, slope)
// points, clamped inside the bracket.
double cubic_step(const LinePoint& a, const LinePoint& b) {
  const double d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
  const double disc = d1 * d1 - a.slope * b.slope;
  if (disc < 0.0) return 0.5 * (a.step + b.step);
  const double d2 = std::copysign(std::sqrt(disc), b.step - a.step);
  double t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
  const double lo = std::min(a.step, b.step), hi = std::max(a.step, b.step);
  if (!std::isfinite(t) || t <= lo || t >= hi) t = 0.5 * (lo + hi);
  // Keep a safe distance from the bracket ends.
  const double margin = 0.1 * (hi - lo);
  return std::min(std::max(t, lo + margin), hi - margin);
}

}  // namespace

BfgsResult bfgs_minimize(const Objective& f, const Eigen::VectorXd& x0,
                         const BfgsOptions& opt) {
  const Eigen::Index n = x0.size();
  BfgsResult res;
  res.x = x0;
  res.gradient.resize(n);
  res.value = f(res.x, res.gradient);
  res.inverse_hessian = Eigen::MatrixXd::Identity(n, n);
  if (n == 0) {
    res.converged = true;
    return res;
  }

  Eigen::VectorXd x_new(n), g_new(n);
  bool first_update = true;

  for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
    if (res.gradient.cwiseAbs().maxCoeff() <= opt.gradient_tolerance * (1.0 + std::abs(res.value))) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd dir = -(res.inverse_hessian * res.gradient);
    double slope0 = dir.dot(res.gradient);
    if (!(slope0 < 0.0)) {  // not a descent direction; reset to steepest descent
      res.inverse_hessian.setIdentity();
      dir = -res.gradient;
      slope0 = dir.dot(res.gradient);
      first_update = true;
    }

    // Strong-Wolfe line search: bracket then zoom with cubic interpolation.
    const double f0 = res.value;
    auto eval = [&](double step, LinePoint& p) {
      x_new = res.x + step * dir;
      p.step = step;
      p.value = f(x_new, g_new);
      p.slope = dir.dot(g_new);
    };

    LinePoint lo{0.0, f0, slope0}, cur{};
    double step = 1.0, step_prev = 0.0, f_prev = f0;
    bool found = false, bracketed = false;
    LinePoint bl{}, bh{};
    for (int ls = 0; ls < opt.max_line_search_steps; ++ls) {
      eval(step, cur);
      if (!std::isfinite(cur.value) || cur.value > f0 + opt.wolfe_c1 * step * slope0 ||
          (ls > 0 && cur.value >= f_prev)) {
        bl = LinePoint{step_prev, f_prev, lo.slope};
        bh = cur;
        bracketed = true;
        break;
      }
      if (std::abs(cur.slope) <= -opt.wolfe_c2 * slope0) {
        found = true;
        break;
      }
      if (cur.slope >= 0.0) {
        bl = cur;
        bh = LinePoint{step_prev, f_prev, lo.slope};
        bracketed = true;
        break;
      }
      step_prev = step;
      f_prev = cur.value;
      lo = cur;
      step *= 2.0;
    }
    if (bracketed) {
      for (int z = 0; z < opt.max_line_search_steps && !found; ++z) {
        const double trial = cubic_step(bl, bh);
        if (!(std::abs(bh.step - bl.step) > 1e-14)) break;
        eval(trial, cur);
        if (!std::isfinite(cur.value) || cur.value > f0 + opt.wolfe_c1 * trial * slope0 ||
            cur.value >= bl.value) {
          bh = cur;
        } else {
          if (std::abs(cur.slope) <= -opt.wolfe_c2 * slope0) {
            found = true;
            break;
          }
          if (cur.slope * (bh.step - bl.step) >= 0.0) bh = bl;
          bl = cur;
        }
      }
      if (!found && bl.step > 0.0 && bl.value < f0) {
        // Wolfe curvature not met but we still have a decrease: take it.
        eval(bl.step, cur);
        found = true;
      }
    }
    if (!found || !(cur.value < f0)) {
      res.line_search_failed = true;
      return res;  // res still holds the best (input) point
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - res.gradient;
    const double sy = s.dot(y);
    res.x = x_new;
    res.value = cur.value;
    res.gradient = g_new;
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first_update) {
        // Scale the initial metric before the first update (Nocedal 6.20).
        res.inverse_hessian *= sy / y.squaredNorm();
        first_update = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = res.inverse_hessian * y;
      // H <- (I - rho s y') H (I - rho y s') + rho s s'
      res.inverse_hessian -= rho * (s * hy.transpose() + hy * s.transpose());
      res.inverse_hessian += (rho * rho * y.dot(hy) + rho) * (s * s.transpose());
    }
  }
  return res;
}

}  // namespace mixl
