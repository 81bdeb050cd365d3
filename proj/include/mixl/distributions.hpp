#pragma once

#include <random>
#include <stdexcept>

#include <Eigen/Dense>

namespace mixl {

/// Draw from N(mean, cov) given the lower Cholesky factor of cov.
inline Eigen::VectorXd sample_mvn_chol(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol,
                                       std::mt19937_64& eng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = normal(eng);
  return mean + chol * z;
}

/// Wishart(dof, scale) draw via the Bartlett decomposition.
inline Eigen::MatrixXd sample_wishart(double dof, const Eigen::MatrixXd& scale,
                                      std::mt19937_64& eng) {
  const Eigen::Index k = scale.rows();
  if (dof <= static_cast<double>(k) - 1.0)
    throw std::invalid_argument("sample_wishart: dof too small");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("sample_wishart: scale not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < k; ++i) {
    std::chi_squared_distribution<double> chi2(dof - static_cast<double>(i));
    a(i, i) = std::sqrt(chi2(eng));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal(eng);
  }
  const Eigen::MatrixXd la = l * a;
  return la * la.transpose();
}

/// Inverse-Wishart(dof, scale) draw: the inverse of a Wishart draw with
/// the inverted scale. Requires dof > K + 1 so the mean scale/(dof-K-1)
/// exists.
inline Eigen::MatrixXd sample_inverse_wishart(double dof, const Eigen::MatrixXd& scale,
                                              std::mt19937_64& eng) {
  const Eigen::Index k = scale.rows();
  if (dof <= static_cast<double>(k) + 1.0)
    throw std::invalid_argument("sample_inverse_wishart: dof must exceed K + 1");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("sample_inverse_wishart: scale not positive definite");
  const Eigen::MatrixXd scale_inv =
      llt.solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd w = sample_wishart(dof, 0.5 * (scale_inv + scale_inv.transpose()), eng);
  Eigen::MatrixXd out = w.llt().solve(Eigen::MatrixXd::Identity(k, k));
  return 0.5 * (out + out.transpose());
}

}  // namespace mixl
