#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mixl {

/// Panel choice data in long format: N individuals, T_n occasions each,
/// a constant number of alternatives J per choice set. Attribute rows are
/// stored occasion-major: row (occasion * J + j) holds alternative j.
/// Choices are 0-based internally; file formats use 1-based indices.
struct ChoiceDataset {
  int num_individuals = 0;
  int num_alternatives = 0;
  std::vector<int> occasions_per_individual;  // length N
  std::vector<int> occasion_offsets;          // length N + 1, prefix sums
  Eigen::MatrixXd fixed_attrs;                // (total_occasions * J) x L
  Eigen::MatrixXd random_attrs;               // (total_occasions * J) x K
  std::vector<int> choices;                   // length total_occasions, 0-based

  int total_occasions() const { return occasion_offsets.empty() ? 0 : occasion_offsets.back(); }
  int num_fixed() const { return static_cast<int>(fixed_attrs.cols()); }
  int num_random() const { return static_cast<int>(random_attrs.cols()); }

  /// First attribute row of occasion `occ` (global occasion index).
  int row_of(int occ) const { return occ * num_alternatives; }

  /// Validates the structural invariants; throws std::invalid_argument.
  void validate() const;
};

/// Ground truth behind a semi-synthetic dataset.
struct TruePopulation {
  Eigen::VectorXd alpha;      // length L (empty when the DGP has no fixed part)
  Eigen::VectorXd zeta;       // length K
  Eigen::VectorXd sigma;      // length K
  Eigen::MatrixXd psi;        // K x K correlation
  Eigen::MatrixXd omega;      // diag(sigma) * psi * diag(sigma)
  Eigen::MatrixXd betas;      // N x K realized individual parameters
  Eigen::VectorXd zeta0;      // sample mean of betas
  Eigen::MatrixXd omega0;     // sample covariance of betas (1/N normalization)
};

struct ScenarioConfig {
  int scenario_id = 1;  // 1..4
  int num_individuals = 500;
  int occasions = 5;
  int num_alternatives = 7;
  std::uint64_t seed = 0;
  double noise_scale = 1.0;  // Gumbel scale; 0 disables the stochastic part
};

/// Population parameters for a scenario: the published true values plus
/// realized individual draws under the config seed.
TruePopulation build_true_population(const ScenarioConfig& config);

/// Semi-synthetic data generating process: linear-in-parameters utilities
/// with Gumbel noise; choices by utility maximization. Attribute columns
/// are synthetic (see attribute_scale) and deterministic given the seed.
ChoiceDataset generate_dataset(const ScenarioConfig& config, const TruePopulation& pop);

/// Fraction of occasions whose observed choice differs from the argmax of
/// the deterministic utility part under the true parameters.
double measure_error_rate(const ChoiceDataset& dataset, const TruePopulation& pop);

/// The per-scenario attribute scale used by generate_dataset, calibrated
/// once per scenario so the error rate of a pilot dataset is ~50%.
double attribute_scale(int scenario_id);

/// Dataset persistence: long-format CSV plus a JSON metadata sidecar
/// (written next to `path` with extension .meta.json). Ground truth is
/// stored in the sidecar when present and round-trips losslessly.
void save_dataset(const std::string& path, const ChoiceDataset& dataset,
                  const std::optional<TruePopulation>& truth,
                  const std::optional<ScenarioConfig>& config = std::nullopt);

struct LoadedDataset {
  ChoiceDataset dataset;
  std::optional<TruePopulation> truth;
  std::optional<ScenarioConfig> config;
};

LoadedDataset load_dataset(const std::string& path);

}  // namespace mixl
