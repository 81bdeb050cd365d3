#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixl/choice_data.hpp"
#include "mixl/gaussian.hpp"

namespace mixl {

enum class VbVariant { ncvmp_delta, ncvmp_mji, qn_delta, qn_qmc, qn_mji };
enum class EliseTreatment { delta, qmc, mji };

EliseTreatment treatment_of(VbVariant variant);
bool uses_quasi_newton(VbVariant variant);
std::string to_string(VbVariant variant);

/// Parses names like "VB-NCVMP-DELTA" / "VB-QN-QMC". Rejects the
/// NCVMP-QMC combination (numerically unstable covariance updates) and
/// unknown names with a descriptive error.
VbVariant parse_vb_variant(const std::string& name);

/// Prior constants of the hierarchical model. The half-t prior on the
/// random-parameter covariance is induced by Gamma(1/2, A_k^-2)
/// auxiliaries and an inverse Wishart with nu + K - 1 degrees of freedom.
struct Hyperparameters {
  Eigen::VectorXd lambda0;  // fixed-parameter prior mean (length L)
  Eigen::MatrixXd xi0;      // fixed-parameter prior covariance
  Eigen::VectorXd mu0;      // zeta prior mean (length K)
  Eigen::MatrixXd sigma0;   // zeta prior covariance
  double nu = 2.0;
  Eigen::VectorXd a_scale;  // half-t scales A_k (length K)

  int num_fixed() const { return static_cast<int>(lambda0.size()); }
  int num_random() const { return static_cast<int>(mu0.size()); }
  double omega_prior_dof() const { return nu + num_random() - 1; }  // omega
  double gamma_shape() const { return 0.5; }                        // s
  Eigen::VectorXd gamma_rate() const;                               // r_k = A_k^-2

  void validate() const;

  /// Effectively noninformative defaults. The fixed-parameter prior
  /// covariance is the identity: it keeps the random-walk proposal of the
  /// MCMC sampler (scaled by chol of this matrix) usable while remaining
  /// negligible against the likelihood at the sample sizes studied here.
  static Hyperparameters noninformative(int num_fixed, int num_random);
};

struct VariationalPosterior {
  GaussianFactor alpha;
  GaussianFactor zeta;
  double w = 0.0;         // IW dof, nu + N + K - 1, constant after init
  Eigen::MatrixXd theta;  // IW scale
  double c = 0.0;         // Gamma shape, (nu + K) / 2, constant
  Eigen::VectorXd d;      // Gamma rates
  std::vector<GaussianFactor> beta;
  std::vector<Eigen::VectorXd> mji_aux;  // one simplex vector per occasion
};

/// Relative-change stopping rule on the monitored vector, smoothed by a
/// rolling average over the last `window` iterates.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(double tolerance = 0.005, int window = 5)
      : tolerance_(tolerance), window_(window) {}

  /// Pushes the next monitored vector and returns the relative change of
  /// the rolling average (infinity until two averages exist).
  double push(const Eigen::VectorXd& monitored);

  bool fired() const { return fired_; }
  double last_delta() const { return last_delta_; }

 private:
  double tolerance_;
  int window_;
  std::deque<Eigen::VectorXd> history_;
  std::optional<Eigen::VectorXd> previous_average_;
  double last_delta_ = std::numeric_limits<double>::infinity();
  bool fired_ = false;
};

struct QmcDrawSet {
  Eigen::MatrixXd xi_fixed;              // D x L
  std::vector<Eigen::MatrixXd> xi_random;  // per individual, D x K
};

QmcDrawSet make_qmc_draws(int num_fixed, int num_random, int num_individuals, int num_draws,
                          std::uint64_t seed);

struct VbConfig {
  VbVariant variant = VbVariant::ncvmp_delta;
  double tolerance = 0.005;
  int max_iterations = 500;
  int qmc_draws = 64;
  int qn_max_iterations = 40;  // BFGS cap per factor update
  std::uint64_t seed = 0;
  std::string trace_path;  // per-iteration CSV when nonempty
  std::optional<VariationalPosterior> init;
};

struct VbResult {
  VariationalPosterior posterior;
  int iterations = 0;
  bool converged = false;
  double wall_seconds = 0.0;
  std::vector<double> delta_trace;
  int safeguard_hits = 0;   // NCVMP covariance guard activations
  int aux_failures = 0;     // MJI auxiliary refreshes hitting the sweep cap
  int line_search_failures = 0;
  bool aborted = false;     // numerical failure in an update
  std::string diagnostic;
};

/// Coordinate ascent for the chosen variant: nonconjugate factor updates
/// first, then the conjugate zeta / Omega / a updates, then the MJI
/// auxiliary refresh where applicable.
VbResult run_vb(const ChoiceDataset& dataset, const Hyperparameters& hyper, const VbConfig& config);

struct VbPointEstimates {
  Eigen::VectorXd alpha;
  Eigen::VectorXd zeta;
  Eigen::MatrixXd omega;  // Theta / (w - K - 1)
  Eigen::MatrixXd betas;  // N x K
};

VbPointEstimates vb_point_estimates(const VariationalPosterior& posterior);

// Closed-form conjugate updates (exposed for direct verification).
GaussianFactor update_zeta_factor(const Hyperparameters& hyper, const VariationalPosterior& post);
Eigen::MatrixXd update_omega_factor(const Hyperparameters& hyper, const VariationalPosterior& post);
Eigen::VectorXd update_a_factors(const Hyperparameters& hyper, const VariationalPosterior& post);

struct FactorUpdateResult {
  GaussianFactor factor;
  double objective_before = 0.0;  // QN only
  double objective_after = 0.0;   // QN only
  bool line_search_failed = false;
  bool safeguarded = false;  // NCVMP covariance guard
};

FactorUpdateResult qn_update_alpha(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                   const VariationalPosterior& post, EliseTreatment treatment,
                                   const QmcDrawSet* qmc, int max_iterations);
FactorUpdateResult qn_update_beta(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                  const VariationalPosterior& post, int n,
                                  EliseTreatment treatment, const QmcDrawSet* qmc,
                                  int max_iterations);
FactorUpdateResult ncvmp_update_alpha(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                      const VariationalPosterior& post, EliseTreatment treatment);
FactorUpdateResult ncvmp_update_beta(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                     const VariationalPosterior& post, int n,
                                     EliseTreatment treatment);

// Unconstrained packing of a Gaussian factor: [mean; lower Cholesky in
// row-major order with the diagonal stored in logs]. Used by the QN
// updates and by the gradient test suites.
Eigen::VectorXd pack_factor(const GaussianFactor& factor);
GaussianFactor unpack_factor(const Eigen::Ref<const Eigen::VectorXd>& packed, int dim);
int packed_size(int dim);

/// Per-factor objective surfaces in packed coordinates (the quantities the
/// QN updates maximize, negated for minimization elsewhere). Gradients are
/// written into *grad when nonnull.
double qn_alpha_objective(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                          const VariationalPosterior& post, EliseTreatment treatment,
                          const QmcDrawSet* qmc, const Eigen::VectorXd& packed,
                          Eigen::VectorXd* grad);
double qn_beta_objective(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                         const VariationalPosterior& post, int n, EliseTreatment treatment,
                         const QmcDrawSet* qmc, const Eigen::VectorXd& packed,
                         Eigen::VectorXd* grad);

/// Expected log joint under the treatment's E-LSE surrogate, up to terms
/// constant in the alpha and beta factors. Value surface for the NCVMP
/// finite-difference checks.
double vb_expected_log_joint(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                             const VariationalPosterior& post, EliseTreatment treatment);

/// Analytic NCVMP gradients of the expected log joint with respect to the
/// factor mean and covariance (covariance gradient in symmetric-matrix
/// convention).
void ncvmp_alpha_gradients(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                           const VariationalPosterior& post, EliseTreatment treatment,
                           Eigen::VectorXd* grad_mu, Eigen::MatrixXd* grad_sigma);
void ncvmp_beta_gradients(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                          const VariationalPosterior& post, int n, EliseTreatment treatment,
                          Eigen::VectorXd* grad_mu, Eigen::MatrixXd* grad_sigma);

}  // namespace mixl
