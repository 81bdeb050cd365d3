#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixl/choice_data.hpp"
#include "mixl/vb.hpp"

namespace mixl {

struct McmcConfig {
  int chains = 2;
  int iterations = 20000;
  int burn_in = 10000;
  int thin = 5;
  double rho_alpha = 0.01;      // fixed step size for the alpha walk
  double rho_beta_init = 0.1;   // adapted every iteration
  double rho_beta_floor = 1e-4;
  double target_acceptance = 0.3;
  double step_increment = 0.001;
  std::uint64_t seed = 0;
  bool keep_beta_draws = false;  // full beta draws are memory-heavy; the
                                 // running mean is always tracked
};

/// Retained (thinned, post-burn-in) draws across all chains, stored in
/// chain-major order. Omega draws are kept as full matrices.
struct McmcDraws {
  Eigen::MatrixXd alpha;              // R x L
  Eigen::MatrixXd zeta;               // R x K
  std::vector<Eigen::MatrixXd> omega; // R entries, K x K
  Eigen::MatrixXd beta_mean;          // N x K mean over retained draws
  std::vector<Eigen::MatrixXd> beta;  // optional full draws, R entries N x K
  int chains = 0;
  int iterations = 0;
  int burn_in = 0;
  int thin = 0;

  int retained() const { return static_cast<int>(zeta.rows()); }
  int per_chain() const { return chains > 0 ? retained() / chains : 0; }
};

struct McmcResult {
  McmcDraws draws;
  Eigen::VectorXd alpha_hat;  // means of retained draws
  Eigen::VectorXd zeta_hat;
  Eigen::MatrixXd omega_hat;
  Eigen::MatrixXd beta_hat;   // N x K
  double mean_acceptance_beta = 0.0;
  double mean_acceptance_alpha = 0.0;
  double final_rho_beta = 0.0;
  double wall_seconds = 0.0;
};

/// Blocked Gibbs sampler with random-walk Metropolis steps for the
/// utility parameters. Sweep order: zeta, Omega, a, beta_1:N, alpha.
/// Chains run independently and in parallel; results are deterministic
/// for a fixed (seed, chain count).
McmcResult run_mcmc(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                    const McmcConfig& config);

/// Writes one chain's retained draws as CSV (one row per draw; header
/// names the parameter layout and thinning metadata in comments).
void save_chain_draws(const std::string& path, const McmcDraws& draws, int chain);

// Individual sampler pieces, exposed for direct verification.
Eigen::VectorXd gibbs_zeta(const Hyperparameters& hyper, const Eigen::MatrixXd& betas,
                           const Eigen::MatrixXd& omega, std::mt19937_64& eng);
Eigen::MatrixXd gibbs_omega(const Hyperparameters& hyper, const Eigen::MatrixXd& betas,
                            const Eigen::VectorXd& zeta, const Eigen::VectorXd& a,
                            std::mt19937_64& eng);
Eigen::VectorXd gibbs_a(const Hyperparameters& hyper, const Eigen::MatrixXd& omega,
                        std::mt19937_64& eng);

/// One random-walk Metropolis sweep over all individuals' beta vectors.
/// Returns the average acceptance rate. rho_beta = 0 makes every proposal
/// equal to the current point (always accepted).
double rw_update_beta(const ChoiceDataset& dataset, const Eigen::VectorXd& alpha,
                      Eigen::MatrixXd& betas, const Eigen::VectorXd& zeta,
                      const Eigen::MatrixXd& omega, double rho_beta, std::mt19937_64& eng);

/// Random-walk Metropolis step for alpha (no-op when L = 0). Returns 1 on
/// acceptance, 0 on rejection.
int rw_update_alpha(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                    Eigen::VectorXd& alpha, const Eigen::MatrixXd& betas, double rho_alpha,
                    std::mt19937_64& eng);

/// Step-size tuning: +-increment around the target acceptance rate,
/// floored away from zero.
double adapt_step(double rho_beta, double acceptance, const McmcConfig& config);

}  // namespace mixl
