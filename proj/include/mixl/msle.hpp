#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mixl/choice_data.hpp"
#include "mixl/draws.hpp"

namespace mixl {

/// Point estimate of {alpha, zeta, chol(Omega)} with the quasi-Newton
/// approximation of the asymptotic covariance. The Cholesky factor is
/// parameterized with log diagonals, so the packed vector phi is
/// unconstrained: [alpha; zeta; lower triangle row-major, log diagonal].
struct MslEstimate {
  Eigen::VectorXd phi;         // packed unconstrained parameters
  Eigen::MatrixXd var_phi;     // BFGS inverse-Hessian approximation
  Eigen::VectorXd alpha_hat;   // length L
  Eigen::VectorXd zeta_hat;    // length K
  Eigen::MatrixXd chol_omega;  // lower triangular, positive diagonal
  Eigen::MatrixXd omega_hat;   // chol * chol'
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  double wall_seconds = 0.0;
  int num_fixed = 0;
  int num_random = 0;
};

struct MsleConfig {
  int draws = 1000;  // MLHS simulation draws per individual
  std::uint64_t seed = 0;
  int max_iterations = 400;
  // Unit scale keeps the optimizer out of the degenerate small-variance
  // basin, where the simulated likelihood is flat in the log-diagonal
  // directions and pivot estimates can collapse at low draw counts.
  double start_chol_scale = 1.0;
  std::optional<Eigen::VectorXd> start;  // packed phi override
};

int msle_packed_size(int num_fixed, int num_random);
Eigen::VectorXd msle_pack(const Eigen::VectorXd& alpha, const Eigen::VectorXd& zeta,
                          const Eigen::MatrixXd& chol_omega);
void msle_unpack(const Eigen::Ref<const Eigen::VectorXd>& phi, int num_fixed, int num_random,
                 Eigen::VectorXd* alpha, Eigen::VectorXd* zeta, Eigen::MatrixXd* chol_omega);

/// Per-individual MLHS batches via the counter-based seed stream, so draws
/// are reproducible independent of evaluation order.
std::vector<DrawBatch> msle_draw_batches(int num_individuals, int num_random, int num_draws,
                                         std::uint64_t seed);

/// Simulated log-likelihood over the shared draw batches, with its
/// analytic gradient in the packed parameterization when grad is nonnull.
double simulated_loglik(const ChoiceDataset& dataset, const Eigen::Ref<const Eigen::VectorXd>& phi,
                        const std::vector<DrawBatch>& batches, Eigen::VectorXd* grad);

MslEstimate fit_msle(const ChoiceDataset& dataset, const MsleConfig& config);

/// Conditional individual-level estimates: posterior mean of beta_n given
/// the individual's choices under the estimated population distribution,
/// simulated with shared pseudo-random draws.
struct ConditionalBetas {
  Eigen::MatrixXd betas;            // N x K
  std::vector<int> degenerate;      // individuals with all-zero weights
};

ConditionalBetas conditional_betas(const ChoiceDataset& dataset, const MslEstimate& estimate,
                                   int num_draws, std::uint64_t seed);

}  // namespace mixl
