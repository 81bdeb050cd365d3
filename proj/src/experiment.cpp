#include "mixl/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <cctype>
#include <thread>

#include <json.hpp>

#include "mixl/rng.hpp"

namespace mixl {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method method) {
  switch (method) {
    case Method::msle: return "MSLE";
    case Method::mcmc: return "MCMC";
    case Method::vb_qn_delta: return "VB-QN-DELTA";
    case Method::vb_qn_qmc: return "VB-QN-QMC";
    case Method::vb_qn_mji: return "VB-QN-MJI";
    case Method::vb_ncvmp_delta: return "VB-NCVMP-DELTA";
    case Method::vb_ncvmp_mji: return "VB-NCVMP-MJI";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  std::string u;
  for (char ch : name) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  if (u == "MSLE") return Method::msle;
  if (u == "MCMC") return Method::mcmc;
  for (Method m : all_methods())
    if (u == to_string(m)) return m;
  if (u == "VB-NCVMP-QMC" || u == "NCVMP-QMC")
    parse_vb_variant(u);  // throws with the documented reason
  throw std::invalid_argument("unknown method: " + name);
}

const std::vector<Method>& all_methods() {
  static const std::vector<Method> methods = {
      Method::msle,        Method::mcmc,          Method::vb_qn_delta, Method::vb_qn_qmc,
      Method::vb_qn_mji,   Method::vb_ncvmp_delta, Method::vb_ncvmp_mji};
  return methods;
}

void ExperimentConfig::validate() const {
  if (replications < 1) throw std::invalid_argument("config: replications must be >= 1");
  if (scenarios.empty()) throw std::invalid_argument("config: scenario list is empty");
  for (int s : scenarios)
    if (s < 1 || s > 4) throw std::invalid_argument("config: scenario_id must be in 1..4");
  if (grid.empty()) throw std::invalid_argument("config: (N, T) grid is empty");
  for (const auto& [n, t] : grid) {
    if (n < 1) throw std::invalid_argument("config: N must be >= 1");
    if (t < 1) throw std::invalid_argument("config: T must be >= 1");
  }
  if (methods.empty()) throw std::invalid_argument("config: method list is empty");
  if (output_dir.empty()) throw std::invalid_argument("config: output_dir is empty");
  if (mcmc.chains < 1 || mcmc.burn_in >= mcmc.iterations)
    throw std::invalid_argument("config: invalid MCMC chain settings");
  if (msle_draws < 1) throw std::invalid_argument("config: msle_draws must be >= 1");
  if (vb_qmc_draws < 1) throw std::invalid_argument("config: vb_qmc_draws must be >= 1");
}

ExperimentConfig default_experiment_config(bool desk_scale) {
  ExperimentConfig cfg;
  cfg.desk_scale = desk_scale;
  if (desk_scale) {
    cfg.mcmc.iterations = 20000;
    cfg.mcmc.burn_in = 10000;
    cfg.msle_draws = 200;
    cfg.eval.inner = 2000;
  } else {
    cfg.mcmc.iterations = 100000;
    cfg.mcmc.burn_in = 50000;
    cfg.msle_draws = 1000;
    cfg.eval.inner = 10000;
    cfg.replications = 20;
    cfg.grid = {{500, 5}, {500, 10}, {2000, 5}, {2000, 10}};
  }
  return cfg;
}

namespace {

std::vector<Method> methods_from_json(const json& j) {
  std::vector<Method> out;
  for (const auto& m : j) out.push_back(parse_method(m.get<std::string>()));
  return out;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("config: parse error: ") + e.what());
  }
  ExperimentConfig cfg = default_experiment_config(j.value("desk_scale", true));
  if (j.contains("scenarios")) cfg.scenarios = j["scenarios"].get<std::vector<int>>();
  if (j.contains("grid")) {
    cfg.grid.clear();
    for (const auto& cell : j["grid"])
      cfg.grid.emplace_back(cell.at("N").get<int>(), cell.at("T").get<int>());
  }
  if (j.contains("replications")) cfg.replications = j["replications"].get<int>();
  if (j.contains("methods")) cfg.methods = methods_from_json(j["methods"]);
  if (j.contains("base_seed")) cfg.base_seed = j["base_seed"].get<std::uint64_t>();
  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("mcmc")) {
    const json& m = j["mcmc"];
    cfg.mcmc.chains = m.value("chains", cfg.mcmc.chains);
    cfg.mcmc.iterations = m.value("iterations", cfg.mcmc.iterations);
    cfg.mcmc.burn_in = m.value("burn_in", cfg.mcmc.burn_in);
    cfg.mcmc.thin = m.value("thin", cfg.mcmc.thin);
  }
  if (j.contains("vb")) {
    const json& v = j["vb"];
    cfg.vb_tolerance = v.value("tolerance", cfg.vb_tolerance);
    cfg.vb_max_iterations = v.value("max_iterations", cfg.vb_max_iterations);
    cfg.vb_qmc_draws = v.value("qmc_draws", cfg.vb_qmc_draws);
    cfg.vb_qn_max_iterations = v.value("qn_max_iterations", cfg.vb_qn_max_iterations);
  }
  if (j.contains("msle")) cfg.msle_draws = j["msle"].value("draws", cfg.msle_draws);
  if (j.contains("eval")) {
    const json& e = j["eval"];
    cfg.eval.true_draws = e.value("true_draws", cfg.eval.true_draws);
    cfg.eval.outer_mcmc = e.value("outer_mcmc", cfg.eval.outer_mcmc);
    cfg.eval.outer_vb = e.value("outer_vb", cfg.eval.outer_vb);
    cfg.eval.outer_msle = e.value("outer_msle", cfg.eval.outer_msle);
    cfg.eval.inner = e.value("inner", cfg.eval.inner);
    cfg.eval.msle_conditional_draws =
        e.value("msle_conditional_draws", cfg.eval.msle_conditional_draws);
    cfg.eval.validation_individuals =
        e.value("validation_individuals", cfg.eval.validation_individuals);
  }
  cfg.validate();
  return cfg;
}

void save_experiment_config(const ExperimentConfig& config, const std::string& path) {
  json j;
  j["desk_scale"] = config.desk_scale;
  j["scenarios"] = config.scenarios;
  j["grid"] = json::array();
  for (const auto& [n, t] : config.grid) j["grid"].push_back({{"N", n}, {"T", t}});
  j["replications"] = config.replications;
  j["methods"] = json::array();
  for (Method m : config.methods) j["methods"].push_back(to_string(m));
  j["base_seed"] = config.base_seed;
  j["output_dir"] = config.output_dir;
  j["mcmc"] = {{"chains", config.mcmc.chains},
               {"iterations", config.mcmc.iterations},
               {"burn_in", config.mcmc.burn_in},
               {"thin", config.mcmc.thin}};
  j["vb"] = {{"tolerance", config.vb_tolerance},
             {"max_iterations", config.vb_max_iterations},
             {"qmc_draws", config.vb_qmc_draws},
             {"qn_max_iterations", config.vb_qn_max_iterations}};
  j["msle"] = {{"draws", config.msle_draws}};
  j["eval"] = {{"true_draws", config.eval.true_draws},
               {"outer_mcmc", config.eval.outer_mcmc},
               {"outer_vb", config.eval.outer_vb},
               {"outer_msle", config.eval.outer_msle},
               {"inner", config.eval.inner},
               {"msle_conditional_draws", config.eval.msle_conditional_draws},
               {"validation_individuals", config.eval.validation_individuals}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  out << j.dump(2) << "\n";
}

std::uint64_t cell_seed(const ExperimentConfig& config, const CellKey& key) {
  return derive_seed(config.base_seed, static_cast<std::uint64_t>(key.scenario),
                     static_cast<std::uint64_t>(key.num_individuals),
                     static_cast<std::uint64_t>(key.occasions),
                     static_cast<std::uint64_t>(key.replication));
}

std::string cell_file_name(const CellKey& key, Method method) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "s%d_n%d_t%d_r%03d_%s.json", key.scenario, key.num_individuals,
                key.occasions, key.replication, to_string(method).c_str());
  return buf;
}

namespace {

struct CellData {
  TruePopulation pop;
  ChoiceDataset train;
  ChoiceDataset validation;
  Eigen::MatrixXd true_predictive;
};

CellData prepare_cell(const ExperimentConfig& config, const CellKey& key) {
  const std::uint64_t seed = cell_seed(config, key);
  CellData cell;
  ScenarioConfig train_cfg;
  train_cfg.scenario_id = key.scenario;
  train_cfg.num_individuals = key.num_individuals;
  train_cfg.occasions = key.occasions;
  train_cfg.seed = derive_seed(seed, 0x747261);
  cell.pop = build_true_population(train_cfg);
  cell.train = generate_dataset(train_cfg, cell.pop);

  ScenarioConfig val_cfg;
  val_cfg.scenario_id = key.scenario;
  val_cfg.num_individuals = config.eval.validation_individuals;
  val_cfg.occasions = 1;
  val_cfg.seed = derive_seed(seed, 0x76616c);
  const TruePopulation val_pop = build_true_population(val_cfg);
  cell.validation = generate_dataset(val_cfg, val_pop);

  cell.true_predictive = true_choice_distribution(cell.validation, cell.pop,
                                                  config.eval.true_draws,
                                                  derive_seed(seed, 0x747665));
  return cell;
}

ReplicationMetrics finish_metrics(const CellData& cell, const Eigen::MatrixXd& predictive,
                                  double wall_seconds, const Eigen::VectorXd& alpha_hat,
                                  const Eigen::VectorXd& zeta_hat, const Eigen::MatrixXd& omega_hat,
                                  const Eigen::MatrixXd& beta_hat) {
  ReplicationMetrics m;
  m.wall_seconds = wall_seconds;
  if (cell.pop.alpha.size() > 0) m.rmse_alpha = rmse(alpha_hat, cell.pop.alpha);
  m.rmse_zeta = rmse(zeta_hat, cell.pop.zeta0);
  m.rmse_omega = rmse(lower_triangle_vector(omega_hat), lower_triangle_vector(cell.pop.omega0));
  const Eigen::Map<const Eigen::VectorXd> beta_est(beta_hat.data(), beta_hat.size());
  const Eigen::Map<const Eigen::VectorXd> beta_true(cell.pop.betas.data(), cell.pop.betas.size());
  m.rmse_beta = rmse(beta_est, beta_true);
  m.tvd_value = mean_tvd(cell.true_predictive, predictive);
  return m;
}

}  // namespace

ReplicationMetrics run_cell_method(const ChoiceDataset& train, const TruePopulation& pop,
                                   const ChoiceDataset& validation,
                                   const Eigen::MatrixXd& true_predictive, Method method,
                                   const ExperimentConfig& config, std::uint64_t method_seed) {
  CellData cell;
  cell.pop = pop;
  cell.train = train;
  cell.validation = validation;
  cell.true_predictive = true_predictive;
  const Hyperparameters hyper =
      Hyperparameters::noninformative(train.num_fixed(), train.num_random());
  const std::uint64_t pred_seed = derive_seed(method_seed, 0x7065);

  if (method == Method::mcmc) {
    McmcConfig mc = config.mcmc;
    mc.seed = method_seed;
    const McmcResult res = run_mcmc(train, hyper, mc);
    const int outer = config.eval.outer_mcmc > 0
                          ? std::min(config.eval.outer_mcmc, res.draws.retained())
                          : res.draws.retained();
    const Eigen::MatrixXd pred = predictive_distribution(
        validation, mcmc_param_sampler(res.draws, outer), outer, config.eval.inner, pred_seed);
    return finish_metrics(cell, pred, res.wall_seconds, res.alpha_hat, res.zeta_hat, res.omega_hat,
                          res.beta_hat);
  }
  if (method == Method::msle) {
    MsleConfig mc;
    mc.draws = config.msle_draws;
    mc.seed = method_seed;
    const MslEstimate est = fit_msle(train, mc);
    const ConditionalBetas cond = conditional_betas(
        train, est, config.eval.msle_conditional_draws, derive_seed(method_seed, 0x636f));
    const Eigen::MatrixXd pred =
        predictive_distribution(validation, msle_param_sampler(est), config.eval.outer_msle,
                                config.eval.inner, pred_seed);
    return finish_metrics(cell, pred, est.wall_seconds, est.alpha_hat, est.zeta_hat, est.omega_hat,
                          cond.betas);
  }

  VbConfig vc;
  switch (method) {
    case Method::vb_qn_delta: vc.variant = VbVariant::qn_delta; break;
    case Method::vb_qn_qmc: vc.variant = VbVariant::qn_qmc; break;
    case Method::vb_qn_mji: vc.variant = VbVariant::qn_mji; break;
    case Method::vb_ncvmp_delta: vc.variant = VbVariant::ncvmp_delta; break;
    default: vc.variant = VbVariant::ncvmp_mji; break;
  }
  vc.tolerance = config.vb_tolerance;
  vc.max_iterations = config.vb_max_iterations;
  vc.qmc_draws = config.vb_qmc_draws;
  vc.qn_max_iterations = config.vb_qn_max_iterations;
  vc.seed = method_seed;
  const VbResult res = run_vb(train, hyper, vc);
  if (res.aborted) throw std::runtime_error("VB aborted: " + res.diagnostic);
  const VbPointEstimates est = vb_point_estimates(res.posterior);
  const Eigen::MatrixXd pred =
      predictive_distribution(validation, vb_param_sampler(res.posterior), config.eval.outer_vb,
                              config.eval.inner, pred_seed);
  return finish_metrics(cell, pred, res.wall_seconds, est.alpha, est.zeta, est.omega, est.betas);
}

namespace {

json metrics_to_json(const ReplicationMetrics& m) {
  json j;
  j["wall_seconds"] = m.wall_seconds;
  if (m.rmse_alpha) j["rmse_alpha"] = *m.rmse_alpha;
  j["rmse_zeta"] = m.rmse_zeta;
  j["rmse_omega"] = m.rmse_omega;
  j["rmse_beta"] = m.rmse_beta;
  j["tvd"] = m.tvd_value;
  return j;
}

ReplicationMetrics metrics_from_json(const json& j) {
  ReplicationMetrics m;
  m.wall_seconds = j.at("wall_seconds").get<double>();
  if (j.contains("rmse_alpha")) m.rmse_alpha = j["rmse_alpha"].get<double>();
  m.rmse_zeta = j.at("rmse_zeta").get<double>();
  m.rmse_omega = j.at("rmse_omega").get<double>();
  m.rmse_beta = j.at("rmse_beta").get<double>();
  m.tvd_value = j.at("tvd").get<double>();
  return m;
}

int worker_count() {
  const char* env = std::getenv("MIXL_WORKERS");
  if (!env) return 1;
  const int v = std::atoi(env);
  return v >= 1 ? v : 1;
}

}  // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config) {
  config.validate();
  const fs::path out_dir(config.output_dir);
  const fs::path cells_dir = out_dir / "cells";
  fs::create_directories(cells_dir);
  save_experiment_config(config, (out_dir / "config.json").string());

  struct Task {
    CellKey key;
  };
  std::vector<Task> tasks;
  for (int scenario : config.scenarios)
    for (const auto& [n, t] : config.grid)
      for (int rep = 1; rep <= config.replications; ++rep)
        tasks.push_back(Task{CellKey{scenario, n, t, rep}});

  // Seed derivation must separate every cell; collisions would silently
  // correlate replications.
  {
    std::map<std::uint64_t, int> seen;
    for (const auto& task : tasks) {
      const auto seed = cell_seed(config, task.key);
      if (seen.count(seed))
        throw std::runtime_error("cell seed collision; choose a different base_seed");
      seen[seed] = 1;
    }
  }

  ExperimentOutcome outcome;
  std::mutex io_mutex;
  std::atomic<std::size_t> next{0};
  const int workers = std::min<int>(worker_count(), static_cast<int>(tasks.size()));

  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const CellKey& key = tasks[i].key;

      std::vector<Method> pending;
      for (Method m : config.methods) {
        if (!fs::exists(cells_dir / cell_file_name(key, m))) pending.push_back(m);
      }
      if (pending.empty()) {
        std::lock_guard<std::mutex> lock(io_mutex);
        outcome.cells_skipped += static_cast<int>(config.methods.size());
        continue;
      }
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        outcome.cells_skipped += static_cast<int>(config.methods.size() - pending.size());
      }

      CellData cell;
      try {
        cell = prepare_cell(config, key);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(io_mutex);
        outcome.cells_failed += static_cast<int>(pending.size());
        std::fprintf(stderr, "[cell s%d n%d t%d r%d] data generation failed: %s\n", key.scenario,
                     key.num_individuals, key.occasions, key.replication, e.what());
        continue;
      }

      for (Method m : pending) {
        const std::uint64_t method_seed =
            derive_seed(cell_seed(config, key), 0x6d65, static_cast<std::uint64_t>(m));
        try {
          const ReplicationMetrics metrics = run_cell_method(
              cell.train, cell.pop, cell.validation, cell.true_predictive, m, config, method_seed);
          json j;
          j["scenario"] = key.scenario;
          j["N"] = key.num_individuals;
          j["T"] = key.occasions;
          j["replication"] = key.replication;
          j["method"] = to_string(m);
          j["metrics"] = metrics_to_json(metrics);
          const fs::path path = cells_dir / cell_file_name(key, m);
          const fs::path tmp = path.string() + ".tmp";
          {
            std::ofstream out_file(tmp);
            out_file << j.dump(2) << "\n";
          }
          fs::rename(tmp, path);
          std::lock_guard<std::mutex> lock(io_mutex);
          ++outcome.cells_run;
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(io_mutex);
          ++outcome.cells_failed;
          std::fprintf(stderr, "[cell s%d n%d t%d r%d %s] failed: %s\n", key.scenario,
                       key.num_individuals, key.occasions, key.replication, to_string(m).c_str(),
                       e.what());
        }
      }
    }
  };

  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  write_reports(config);
  return outcome;
}

void generate_grid_datasets(const ExperimentConfig& config) {
  config.validate();
  const fs::path data_dir = fs::path(config.output_dir) / "datasets";
  fs::create_directories(data_dir);
  for (int scenario : config.scenarios)
    for (const auto& [n, t] : config.grid)
      for (int rep = 1; rep <= config.replications; ++rep) {
        const CellKey key{scenario, n, t, rep};
        const std::uint64_t seed = cell_seed(config, key);
        ScenarioConfig train_cfg;
        train_cfg.scenario_id = scenario;
        train_cfg.num_individuals = n;
        train_cfg.occasions = t;
        train_cfg.seed = derive_seed(seed, 0x747261);
        const TruePopulation pop = build_true_population(train_cfg);
        const ChoiceDataset train = generate_dataset(train_cfg, pop);
        char base[96];
        std::snprintf(base, sizeof(base), "s%d_n%d_t%d_r%03d", scenario, n, t, rep);
        save_dataset((data_dir / (std::string(base) + "_train.csv")).string(), train, pop,
                     train_cfg);

        ScenarioConfig val_cfg;
        val_cfg.scenario_id = scenario;
        val_cfg.num_individuals = config.eval.validation_individuals;
        val_cfg.occasions = 1;
        val_cfg.seed = derive_seed(seed, 0x76616c);
        const TruePopulation val_pop = build_true_population(val_cfg);
        save_dataset((data_dir / (std::string(base) + "_validation.csv")).string(),
                     generate_dataset(val_cfg, val_pop), val_pop, val_cfg);
      }
}

namespace {

std::string format_metric(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_reports(const ExperimentConfig& config) {
  const fs::path cells_dir = fs::path(config.output_dir) / "cells";
  const fs::path tables_dir = fs::path(config.output_dir) / "tables";
  fs::create_directories(tables_dir);

  for (int scenario : config.scenarios) {
    for (const auto& [n, t] : config.grid) {
      // Collect per-method replication records in replication order.
      std::map<std::string, std::vector<ReplicationMetrics>> per_method;
      for (Method m : config.methods) {
        std::vector<ReplicationMetrics> reps;
        for (int rep = 1; rep <= config.replications; ++rep) {
          const fs::path path = cells_dir / cell_file_name(CellKey{scenario, n, t, rep}, m);
          if (!fs::exists(path)) continue;
          std::ifstream in(path);
          const json j = json::parse(in);
          reps.push_back(metrics_from_json(j.at("metrics")));
        }
        if (!reps.empty()) per_method[to_string(m)] = std::move(reps);
      }
      if (per_method.empty()) continue;

      char stem[96];
      std::snprintf(stem, sizeof(stem), "s%d_n%d_t%d", scenario, n, t);

      std::ofstream metrics_csv(tables_dir / (std::string("metrics_") + stem + ".csv"));
      metrics_csv << "method,replications,rmse_alpha_mean,rmse_alpha_se,rmse_zeta_mean,"
                     "rmse_zeta_se,rmse_omega_mean,rmse_omega_se,rmse_beta_mean,rmse_beta_se,"
                     "tvd_pct_mean,tvd_pct_se\n";
      std::ofstream timing_csv(tables_dir / (std::string("timings_") + stem + ".csv"));
      timing_csv << "method,replications,time_mean_s,time_se_s\n";
      std::ofstream text(tables_dir / (std::string("table_") + stem + ".txt"));
      char line[512];
      std::snprintf(line, sizeof(line), "scenario %d, N = %d, T = %d (%s scale)\n", scenario, n, t,
                    config.desk_scale ? "desk" : "paper");
      text << line;
      std::snprintf(line, sizeof(line), "%-16s %10s %10s %11s %11s %11s %11s %11s %11s\n", "method",
                    "time[s]", "se", "RMSE(a)", "RMSE(zeta)", "RMSE(OmU)", "RMSE(beta)", "TVD[%]",
                    "se");
      text << line;

      for (Method m : config.methods) {
        const auto it = per_method.find(to_string(m));
        if (it == per_method.end()) continue;
        const MethodSummary s = summarize_replications(it->second);
        metrics_csv << to_string(m) << ',' << s.replications << ','
                    << (s.rmse_alpha ? format_metric(s.rmse_alpha->mean) : "") << ','
                    << (s.rmse_alpha ? format_metric(s.rmse_alpha->se) : "") << ','
                    << format_metric(s.rmse_zeta.mean) << ',' << format_metric(s.rmse_zeta.se)
                    << ',' << format_metric(s.rmse_omega.mean) << ','
                    << format_metric(s.rmse_omega.se) << ',' << format_metric(s.rmse_beta.mean)
                    << ',' << format_metric(s.rmse_beta.se) << ','
                    << format_metric(100.0 * s.tvd_value.mean) << ','
                    << format_metric(100.0 * s.tvd_value.se) << "\n";
        timing_csv << to_string(m) << ',' << s.replications << ','
                   << format_metric(s.wall_seconds.mean) << ','
                   << format_metric(s.wall_seconds.se) << "\n";
        std::snprintf(line, sizeof(line), "%-16s %10.2f %10.2f %11s %11.4f %11.4f %11.4f %11.4f %11.4f\n",
                      to_string(m).c_str(), s.wall_seconds.mean,
                      std::isnan(s.wall_seconds.se) ? 0.0 : s.wall_seconds.se,
                      s.rmse_alpha ? format_metric(s.rmse_alpha->mean).c_str() : "-",
                      s.rmse_zeta.mean, s.rmse_omega.mean, s.rmse_beta.mean,
                      100.0 * s.tvd_value.mean,
                      std::isnan(s.tvd_value.se) ? 0.0 : 100.0 * s.tvd_value.se);
        text << line;
      }
    }
  }
}

}  // namespace mixl
