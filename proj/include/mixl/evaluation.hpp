#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mixl/choice_data.hpp"
#include "mixl/mcmc.hpp"
#include "mixl/msle.hpp"
#include "mixl/vb.hpp"

namespace mixl {

/// Root mean square error over a parameter collection.
double rmse(const Eigen::Ref<const Eigen::VectorXd>& estimate,
            const Eigen::Ref<const Eigen::VectorXd>& truth);

/// Unique elements of a symmetric matrix: row-major lower triangle
/// including the diagonal. Fixes the coordinate order of RMSE(Omega_U).
Eigen::VectorXd lower_triangle_vector(const Eigen::Ref<const Eigen::MatrixXd>& m);

/// Total variation distance between two distributions on the same
/// alternative set. Inputs must lie on the simplex within 1e-6.
double tvd(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q);

/// Mean TVD across rows (choice occasions).
double mean_tvd(const Eigen::Ref<const Eigen::MatrixXd>& p,
                const Eigen::Ref<const Eigen::MatrixXd>& q);

/// Provides the s-th outer parameter draw (alpha, zeta, chol of Omega).
using ParamSampler =
    std::function<void(int s, std::mt19937_64& eng, Eigen::VectorXd* alpha, Eigen::VectorXd* zeta,
                       Eigen::MatrixXd* chol_omega)>;

/// Marginal predictive choice distribution over the validation occasions:
/// outer parameter draws from the sampler, inner mixing over beta draws
/// from N(zeta, Omega). Deterministic for fixed seeds and draw counts.
Eigen::MatrixXd predictive_distribution(const ChoiceDataset& validation,
                                        const ParamSampler& sampler, int outer, int inner,
                                        std::uint64_t seed);

/// The data-generating predictive distribution: fixed true parameters,
/// mixing simulated with `draws` pseudo-random beta draws.
Eigen::MatrixXd true_choice_distribution(const ChoiceDataset& validation,
                                         const TruePopulation& pop, int draws,
                                         std::uint64_t seed);

ParamSampler mcmc_param_sampler(const McmcDraws& draws, int outer);
ParamSampler vb_param_sampler(const VariationalPosterior& posterior);
/// Draws phi from N(phi_hat, var_phi) and maps through the Cholesky
/// parameterization; numerically singular Omega draws are rejected and
/// redrawn (at most 100 attempts each).
ParamSampler msle_param_sampler(const MslEstimate& estimate);

/// Per-replication, per-method metric record.
struct ReplicationMetrics {
  double wall_seconds = 0.0;
  std::optional<double> rmse_alpha;  // absent when the DGP has no fixed part
  double rmse_zeta = 0.0;
  double rmse_omega = 0.0;
  double rmse_beta = 0.0;
  double tvd_value = 0.0;  // fraction, not percent
};

struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;  // sample sd / sqrt(R); NaN when R < 2
};

struct MethodSummary {
  int replications = 0;
  MetricSummary wall_seconds;
  std::optional<MetricSummary> rmse_alpha;
  MetricSummary rmse_zeta;
  MetricSummary rmse_omega;
  MetricSummary rmse_beta;
  MetricSummary tvd_value;
};

/// Sample standard error of the mean; throws when fewer than two values.
double standard_error(const std::vector<double>& values);

MethodSummary summarize_replications(const std::vector<ReplicationMetrics>& reports);

}  // namespace mixl
