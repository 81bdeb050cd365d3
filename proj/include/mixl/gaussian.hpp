#pragma once

#include <stdexcept>

#include <Eigen/Dense>

namespace mixl {

/// A Gaussian variational factor (mean, covariance) with a cached
/// Cholesky factor. The covariance must be symmetric positive definite;
/// construction fails otherwise.
class GaussianFactor {
 public:
  GaussianFactor() = default;

  GaussianFactor(Eigen::VectorXd mean, Eigen::MatrixXd cov)
      : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size())
      throw std::invalid_argument("GaussianFactor: dimension mismatch");
    if (cov_.size() > 0) {
      if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("GaussianFactor: covariance not symmetric");
      llt_.compute(0.5 * (cov_ + cov_.transpose()));
      if (llt_.info() != Eigen::Success)
        throw std::invalid_argument("GaussianFactor: covariance not positive definite");
    }
  }

  Eigen::Index dim() const { return mean_.size(); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  Eigen::MatrixXd chol() const {
    return dim() == 0 ? Eigen::MatrixXd(0, 0) : Eigen::MatrixXd(llt_.matrixL());
  }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

}  // namespace mixl
