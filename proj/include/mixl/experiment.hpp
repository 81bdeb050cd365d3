#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mixl/evaluation.hpp"
#include "mixl/mcmc.hpp"
#include "mixl/msle.hpp"
#include "mixl/vb.hpp"

namespace mixl {

enum class Method {
  msle,
  mcmc,
  vb_qn_delta,
  vb_qn_qmc,
  vb_qn_mji,
  vb_ncvmp_delta,
  vb_ncvmp_mji,
};

std::string to_string(Method method);
Method parse_method(const std::string& name);  // rejects VB-NCVMP-QMC with a reason
const std::vector<Method>& all_methods();      // paper table order

struct EvalSettings {
  int true_draws = 1000000;
  int outer_mcmc = 0;  // 0 means all retained draws
  int outer_vb = 500;
  int outer_msle = 500;
  int inner = 10000;
  int msle_conditional_draws = 10000;
  int validation_individuals = 25;
};

struct ExperimentConfig {
  std::vector<int> scenarios = {1};
  std::vector<std::pair<int, int>> grid = {{500, 5}};  // (N, T)
  int replications = 1;
  std::vector<Method> methods = all_methods();
  std::uint64_t base_seed = 20191212;
  std::string output_dir = "results";
  bool desk_scale = true;

  McmcConfig mcmc;
  double vb_tolerance = 0.005;
  int vb_max_iterations = 500;
  int vb_qmc_draws = 64;
  int vb_qn_max_iterations = 40;
  int msle_draws = 200;
  EvalSettings eval;

  void validate() const;
};

/// Paper-scale or desk-scale defaults for every knob that has both.
ExperimentConfig default_experiment_config(bool desk_scale);

/// Reads and validates a JSON config file; unspecified fields take the
/// defaults implied by the file's desk_scale flag.
ExperimentConfig load_experiment_config(const std::string& path);
void save_experiment_config(const ExperimentConfig& config, const std::string& path);

struct CellKey {
  int scenario = 1;
  int num_individuals = 500;
  int occasions = 5;
  int replication = 1;  // 1-based
};

std::uint64_t cell_seed(const ExperimentConfig& config, const CellKey& key);
std::string cell_file_name(const CellKey& key, Method method);

/// One method fitted on one replication's data, with metrics.
ReplicationMetrics run_cell_method(const ChoiceDataset& train, const TruePopulation& pop,
                                   const ChoiceDataset& validation,
                                   const Eigen::MatrixXd& true_predictive, Method method,
                                   const ExperimentConfig& config, std::uint64_t method_seed);

struct ExperimentOutcome {
  int cells_run = 0;
  int cells_skipped = 0;  // already present (resume)
  int cells_failed = 0;
};

/// Runs the full grid. Completed cell files are skipped, failures are
/// isolated per cell-method and recorded. Worker count comes from the
/// MIXL_WORKERS environment variable (default 1).
ExperimentOutcome run_experiment(const ExperimentConfig& config);

/// Generates and persists all datasets of the grid without estimating.
void generate_grid_datasets(const ExperimentConfig& config);

/// Aggregates stored per-cell results into metric tables: a deterministic
/// metrics CSV, a timing CSV, and an aligned text table per
/// (scenario, N, T) block.
void write_reports(const ExperimentConfig& config);

}  // namespace mixl
