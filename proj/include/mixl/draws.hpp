#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace mixl {

enum class DrawKind { pseudo, mlhs };

/// A batch of standard-normal simulation draws, one row per draw.
struct DrawBatch {
  Eigen::MatrixXd draws;  // D x K
  DrawKind kind = DrawKind::pseudo;
  std::uint64_t seed = 0;

  Eigen::Index count() const { return draws.rows(); }
  Eigen::Index dim() const { return draws.cols(); }
};

/// Inverse standard-normal CDF. Absolute error < 1e-9 on
/// [1e-10, 1 - 1e-10]. Throws outside the open unit interval.
double normal_inverse_cdf(double u);

/// Modified Latin Hypercube Sampling: per dimension, the equidistant
/// points (i + s_k)/D with a single uniform shift s_k, independently
/// shuffled, then mapped through the inverse normal CDF.
DrawBatch mlhs_normal_draws(int num_draws, int dim, std::uint64_t seed);

/// Plain i.i.d. standard-normal draws.
DrawBatch pseudo_normal_draws(int num_draws, int dim, std::uint64_t seed);

}  // namespace mixl
