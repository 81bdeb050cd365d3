#pragma once

#include <Eigen/Dense>

#include "mixl/gaussian.hpp"

namespace mixl {

// Treatments of the expected log-sum-of-exponentials (E-LSE) term
// E_q{ ln sum_j exp(X_j Gamma) } under the Gaussian variational factors
// q(alpha) = N(mu_a, Sigma_a) and q(beta_n) = N(mu_b, Sigma_b). Each
// per-occasion function takes the occasion's attribute blocks xf (J x L)
// and xr (J x K). The fixed block may have zero columns.

/// Second-order Taylor (delta method) approximation together with its
/// gradients. grad_sigma_* are gradients with respect to the covariance
/// matrices treated as symmetric matrices; grad_mu_* include the
/// third-order chain terms through the softmax at the means.
struct DeltaEval {
  double value = 0.0;
  Eigen::VectorXd grad_mu_alpha;
  Eigen::VectorXd grad_mu_beta;
  Eigen::MatrixXd grad_sigma_alpha;
  Eigen::MatrixXd grad_sigma_beta;
};

DeltaEval elise_delta_eval(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                           const Eigen::Ref<const Eigen::MatrixXd>& xr,
                           const GaussianFactor& alpha, const GaussianFactor& beta);

double elise_delta(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                   const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                   const GaussianFactor& beta);

/// Simulation (QMC) approximation. xi_f (D x L) and xi_r (D x K) hold the
/// standard-normal quasi-random points for the two blocks.
double elise_qmc(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                 const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                 const GaussianFactor& beta, const Eigen::Ref<const Eigen::MatrixXd>& xi_f,
                 const Eigen::Ref<const Eigen::MatrixXd>& xi_r);

/// One block's simulated utilities x*mu + x*chol(Sigma)*xi_d for all draws,
/// returned as a J x D matrix. Used to hold one side fixed while the other
/// is optimized.
Eigen::MatrixXd qmc_side_utilities(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                   const GaussianFactor& factor,
                                   const Eigen::Ref<const Eigen::MatrixXd>& xi);

/// QMC value and gradients for the active block given the other block's
/// simulated utilities. grad_chol is taken directly with respect to the
/// lower-triangular Cholesky factor of the active covariance.
struct QmcEval {
  double value = 0.0;
  Eigen::VectorXd grad_mu;
  Eigen::MatrixXd grad_chol;
};

QmcEval elise_qmc_eval(const Eigen::Ref<const Eigen::MatrixXd>& x_active,
                       const GaussianFactor& active,
                       const Eigen::Ref<const Eigen::MatrixXd>& xi_active,
                       const Eigen::Ref<const Eigen::MatrixXd>& other_utilities);

/// Modified-Jensen alternative bound for one occasion. `aux` is the
/// occasion's auxiliary simplex vector a_(nt,1:J). Returns an upper bound
/// on the E-LSE term.
struct MjiEval {
  double value = 0.0;
  Eigen::VectorXd grad_mu_alpha;
  Eigen::VectorXd grad_mu_beta;
  Eigen::MatrixXd grad_sigma_alpha;
  Eigen::MatrixXd grad_sigma_beta;
};

MjiEval elise_mji_eval(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                       const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                       const GaussianFactor& beta, const Eigen::Ref<const Eigen::VectorXd>& aux);

double elise_mji_bound(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                       const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                       const GaussianFactor& beta, const Eigen::Ref<const Eigen::VectorXd>& aux);

/// Damped fixed-point refresh of the auxiliary simplex vector for one
/// occasion. Iterates until the sweep-to-sweep change falls below `tol`
/// or `max_sweeps` is reached; `converged`, when given, reports which.
Eigen::VectorXd mji_refresh_aux(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                                const Eigen::Ref<const Eigen::MatrixXd>& xr,
                                const GaussianFactor& alpha, const GaussianFactor& beta,
                                const Eigen::Ref<const Eigen::VectorXd>& aux_start,
                                bool* converged = nullptr, double tol = 1e-8,
                                int max_sweeps = 100);

/// Residual of the auxiliary fixed-point equation at `aux` (max absolute
/// difference between aux and one exact update step).
double mji_aux_residual(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                        const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                        const GaussianFactor& beta, const Eigen::Ref<const Eigen::VectorXd>& aux);

}  // namespace mixl
