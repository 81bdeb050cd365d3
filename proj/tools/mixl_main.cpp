#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mixl/experiment.hpp"
#include "mixl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json factor_to_json(const mixl::GaussianFactor& f) {
  json j;
  j["mean"] = std::vector<double>(f.mean().data(), f.mean().data() + f.mean().size());
  std::vector<double> cov;
  for (Eigen::Index i = 0; i < f.cov().rows(); ++i)
    for (Eigen::Index c = 0; c < f.cov().cols(); ++c) cov.push_back(f.cov()(i, c));
  j["cov"] = cov;
  return j;
}

mixl::GaussianFactor factor_from_json(const json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto cov = j.at("cov").get<std::vector<double>>();
  const Eigen::Index d = static_cast<Eigen::Index>(mean.size());
  Eigen::VectorXd m(d);
  for (Eigen::Index i = 0; i < d; ++i) m[i] = mean[static_cast<std::size_t>(i)];
  Eigen::MatrixXd c(d, d);
  std::size_t idx = 0;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index k = 0; k < d; ++k) c(i, k) = cov[idx++];
  return mixl::GaussianFactor(m, c);
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(i, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(i, c) = j[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)].get<double>();
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

int do_estimate(const std::string& data_path, const std::string& method_name,
                const std::string& out_path, std::uint64_t seed, const mixl::ExperimentConfig& cfg,
                const std::string& draws_prefix) {
  const mixl::Method method = mixl::parse_method(method_name);
  const mixl::LoadedDataset loaded = mixl::load_dataset(data_path);
  const mixl::ChoiceDataset& data = loaded.dataset;
  const mixl::Hyperparameters hyper =
      mixl::Hyperparameters::noninformative(data.num_fixed(), data.num_random());

  json out;
  out["method"] = mixl::to_string(method);
  out["dataset"] = data_path;
  out["seed"] = seed;

  if (method == mixl::Method::mcmc) {
    mixl::McmcConfig mc = cfg.mcmc;
    mc.seed = seed;
    const mixl::McmcResult res = mixl::run_mcmc(data, hyper, mc);
    out["wall_seconds"] = res.wall_seconds;
    out["alpha_hat"] = vector_to_json(res.alpha_hat);
    out["zeta_hat"] = vector_to_json(res.zeta_hat);
    out["omega_hat"] = matrix_to_json(res.omega_hat);
    out["beta_mean"] = matrix_to_json(res.draws.beta_mean);
    out["acceptance_beta"] = res.mean_acceptance_beta;
    out["acceptance_alpha"] = res.mean_acceptance_alpha;
    json draws;
    draws["chains"] = res.draws.chains;
    draws["iterations"] = res.draws.iterations;
    draws["burn_in"] = res.draws.burn_in;
    draws["thin"] = res.draws.thin;
    draws["alpha"] = matrix_to_json(res.draws.alpha);
    draws["zeta"] = matrix_to_json(res.draws.zeta);
    json omegas = json::array();
    for (const auto& om : res.draws.omega) omegas.push_back(matrix_to_json(om));
    draws["omega"] = omegas;
    out["draws"] = draws;
    if (!draws_prefix.empty())
      for (int c = 0; c < res.draws.chains; ++c)
        mixl::save_chain_draws(draws_prefix + "_chain" + std::to_string(c) + ".csv", res.draws, c);
  } else if (method == mixl::Method::msle) {
    mixl::MsleConfig mc;
    mc.draws = cfg.msle_draws;
    mc.seed = seed;
    const mixl::MslEstimate est = mixl::fit_msle(data, mc);
    out["wall_seconds"] = est.wall_seconds;
    out["phi"] = vector_to_json(est.phi);
    out["var_phi"] = matrix_to_json(est.var_phi);
    out["loglik"] = est.loglik;
    out["converged"] = est.converged;
    out["iterations"] = est.iterations;
    out["num_fixed"] = est.num_fixed;
    out["num_random"] = est.num_random;
    out["alpha_hat"] = vector_to_json(est.alpha_hat);
    out["zeta_hat"] = vector_to_json(est.zeta_hat);
    out["omega_hat"] = matrix_to_json(est.omega_hat);
  } else {
    mixl::VbConfig vc;
    switch (method) {
      case mixl::Method::vb_qn_delta: vc.variant = mixl::VbVariant::qn_delta; break;
      case mixl::Method::vb_qn_qmc: vc.variant = mixl::VbVariant::qn_qmc; break;
      case mixl::Method::vb_qn_mji: vc.variant = mixl::VbVariant::qn_mji; break;
      case mixl::Method::vb_ncvmp_delta: vc.variant = mixl::VbVariant::ncvmp_delta; break;
      default: vc.variant = mixl::VbVariant::ncvmp_mji; break;
    }
    vc.tolerance = cfg.vb_tolerance;
    vc.max_iterations = cfg.vb_max_iterations;
    vc.qmc_draws = cfg.vb_qmc_draws;
    vc.qn_max_iterations = cfg.vb_qn_max_iterations;
    vc.seed = seed;
    const mixl::VbResult res = mixl::run_vb(data, hyper, vc);
    if (res.aborted) {
      std::cerr << "VB aborted: " << res.diagnostic << "\n";
      return 2;
    }
    out["wall_seconds"] = res.wall_seconds;
    out["iterations"] = res.iterations;
    out["converged"] = res.converged;
    json post;
    post["alpha"] = factor_to_json(res.posterior.alpha);
    post["zeta"] = factor_to_json(res.posterior.zeta);
    post["w"] = res.posterior.w;
    post["theta"] = matrix_to_json(res.posterior.theta);
    post["c"] = res.posterior.c;
    post["d"] = vector_to_json(res.posterior.d);
    json betas = json::array();
    for (const auto& b : res.posterior.beta) betas.push_back(factor_to_json(b));
    post["beta"] = betas;
    out["posterior"] = post;
  }

  std::ofstream f(out_path);
  if (!f) {
    std::cerr << "cannot write " << out_path << "\n";
    return 1;
  }
  f << out.dump(2) << "\n";
  return 0;
}

int do_evaluate(const std::string& data_path, const std::string& validation_path,
                const std::string& result_path, const std::string& out_path,
                const mixl::ExperimentConfig& cfg) {
  const mixl::LoadedDataset train = mixl::load_dataset(data_path);
  if (!train.truth) {
    std::cerr << "evaluate: training dataset has no ground-truth block; parameter-recovery "
                 "metrics are unavailable\n";
    return 1;
  }
  const mixl::LoadedDataset validation = mixl::load_dataset(validation_path);
  std::ifstream rf(result_path);
  if (!rf) {
    std::cerr << "cannot read " << result_path << "\n";
    return 1;
  }
  const json res = json::parse(rf);
  const std::string method = res.at("method").get<std::string>();
  const std::uint64_t pred_seed = mixl::derive_seed(res.value("seed", 0ULL), 0x7065);

  const Eigen::MatrixXd true_pred = mixl::true_choice_distribution(
      validation.dataset, *train.truth, cfg.eval.true_draws, mixl::derive_seed(pred_seed, 0x74));

  Eigen::VectorXd alpha_hat, zeta_hat;
  Eigen::MatrixXd omega_hat, beta_hat, pred;
  const double wall = res.value("wall_seconds", 0.0);

  if (method == "MCMC") {
    mixl::McmcDraws draws;
    const json& dj = res.at("draws");
    draws.chains = dj.at("chains").get<int>();
    draws.iterations = dj.at("iterations").get<int>();
    draws.burn_in = dj.at("burn_in").get<int>();
    draws.thin = dj.at("thin").get<int>();
    draws.alpha = matrix_from_json(dj.at("alpha"));
    draws.zeta = matrix_from_json(dj.at("zeta"));
    for (const auto& om : dj.at("omega")) draws.omega.push_back(matrix_from_json(om));
    draws.beta_mean = matrix_from_json(res.at("beta_mean"));
    alpha_hat = vector_from_json(res.at("alpha_hat"));
    zeta_hat = vector_from_json(res.at("zeta_hat"));
    omega_hat = matrix_from_json(res.at("omega_hat"));
    beta_hat = draws.beta_mean;
    const int outer = cfg.eval.outer_mcmc > 0 ? std::min(cfg.eval.outer_mcmc, draws.retained())
                                              : draws.retained();
    pred = mixl::predictive_distribution(validation.dataset,
                                         mixl::mcmc_param_sampler(draws, outer), outer,
                                         cfg.eval.inner, pred_seed);
  } else if (method == "MSLE") {
    mixl::MslEstimate est;
    est.phi = vector_from_json(res.at("phi"));
    est.var_phi = matrix_from_json(res.at("var_phi"));
    est.num_fixed = res.at("num_fixed").get<int>();
    est.num_random = res.at("num_random").get<int>();
    mixl::msle_unpack(est.phi, est.num_fixed, est.num_random, &est.alpha_hat, &est.zeta_hat,
                      &est.chol_omega);
    est.omega_hat = est.chol_omega * est.chol_omega.transpose();
    alpha_hat = est.alpha_hat;
    zeta_hat = est.zeta_hat;
    omega_hat = est.omega_hat;
    const mixl::ConditionalBetas cond =
        mixl::conditional_betas(train.dataset, est, cfg.eval.msle_conditional_draws,
                                mixl::derive_seed(pred_seed, 0x636f));
    beta_hat = cond.betas;
    pred = mixl::predictive_distribution(validation.dataset, mixl::msle_param_sampler(est),
                                         cfg.eval.outer_msle, cfg.eval.inner, pred_seed);
  } else {
    mixl::parse_vb_variant(method);  // validates the name
    const json& pj = res.at("posterior");
    mixl::VariationalPosterior post;
    post.alpha = factor_from_json(pj.at("alpha"));
    post.zeta = factor_from_json(pj.at("zeta"));
    post.w = pj.at("w").get<double>();
    post.theta = matrix_from_json(pj.at("theta"));
    post.c = pj.at("c").get<double>();
    post.d = vector_from_json(pj.at("d"));
    for (const auto& b : pj.at("beta")) post.beta.push_back(factor_from_json(b));
    const mixl::VbPointEstimates est = mixl::vb_point_estimates(post);
    alpha_hat = est.alpha;
    zeta_hat = est.zeta;
    omega_hat = est.omega;
    beta_hat = est.betas;
    pred = mixl::predictive_distribution(validation.dataset, mixl::vb_param_sampler(post),
                                         cfg.eval.outer_vb, cfg.eval.inner, pred_seed);
  }

  const mixl::TruePopulation& pop = *train.truth;
  json out;
  out["method"] = method;
  out["wall_seconds"] = wall;
  if (pop.alpha.size() > 0) out["rmse_alpha"] = mixl::rmse(alpha_hat, pop.alpha);
  out["rmse_zeta"] = mixl::rmse(zeta_hat, pop.zeta0);
  out["rmse_omega"] = mixl::rmse(mixl::lower_triangle_vector(omega_hat),
                                 mixl::lower_triangle_vector(pop.omega0));
  const Eigen::Map<const Eigen::VectorXd> be(beta_hat.data(), beta_hat.size());
  const Eigen::Map<const Eigen::VectorXd> bt(pop.betas.data(), pop.betas.size());
  out["rmse_beta"] = mixl::rmse(be, bt);
  out["tvd"] = mixl::mean_tvd(true_pred, pred);
  out["tvd_pct"] = 100.0 * out["tvd"].get<double>();

  std::ofstream f(out_path);
  if (!f) {
    std::cerr << "cannot write " << out_path << "\n";
    return 1;
  }
  f << out.dump(2) << "\n";
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed multinomial logit estimation: MCMC, variational Bayes and MSLE"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_path, validation_path, result_path, out_path;
  std::string method_name, draws_prefix;
  std::uint64_t seed = 0;
  bool paper_scale = false;

  auto* gen = app.add_subcommand("generate", "Generate the configured grid's datasets");
  gen->add_option("--config", config_path, "Experiment config JSON");
  gen->add_option("--out", out_dir, "Output directory override");
  gen->add_flag("--paper-scale", paper_scale, "Use paper-scale defaults when no config is given");

  auto* est = app.add_subcommand("estimate", "Run one method on one dataset");
  est->add_option("--data", data_path, "Training dataset CSV")->required();
  est->add_option("--method", method_name,
                  "MSLE | MCMC | VB-QN-DELTA | VB-QN-QMC | VB-QN-MJI | VB-NCVMP-DELTA | "
                  "VB-NCVMP-MJI")
      ->required();
  est->add_option("--out", out_path, "Result JSON path")->required();
  est->add_option("--seed", seed, "Method seed");
  est->add_option("--config", config_path, "Experiment config JSON for method settings");
  est->add_option("--draws-out", draws_prefix, "Prefix for per-chain MCMC draw CSV files");

  auto* eval = app.add_subcommand("evaluate", "Compute metrics from stored outputs");
  eval->add_option("--data", data_path, "Training dataset CSV (with ground truth)")->required();
  eval->add_option("--validation", validation_path, "Validation dataset CSV")->required();
  eval->add_option("--result", result_path, "Stored estimate JSON")->required();
  eval->add_option("--out", out_path, "Metrics JSON path")->required();
  eval->add_option("--config", config_path, "Experiment config JSON for evaluation settings");

  auto* rep = app.add_subcommand("reproduce", "Run the full scenario grid");
  rep->add_option("--config", config_path, "Experiment config JSON");
  rep->add_option("--out", out_dir, "Output directory override");
  rep->add_flag("--paper-scale", paper_scale, "Use paper-scale defaults when no config is given");

  auto* report = app.add_subcommand("report", "Rebuild tables from stored results");
  report->add_option("--dir", out_dir, "Results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    mixl::ExperimentConfig cfg;
    if (!config_path.empty())
      cfg = mixl::load_experiment_config(config_path);
    else
      cfg = mixl::default_experiment_config(!paper_scale);
    if (!out_dir.empty()) cfg.output_dir = out_dir;

    if (gen->parsed()) {
      mixl::generate_grid_datasets(cfg);
      std::cout << "datasets written to " << cfg.output_dir << "/datasets\n";
      return 0;
    }
    if (est->parsed())
      return do_estimate(data_path, method_name, out_path, seed, cfg, draws_prefix);
    if (eval->parsed()) return do_evaluate(data_path, validation_path, result_path, out_path, cfg);
    if (rep->parsed()) {
      const mixl::ExperimentOutcome outcome = mixl::run_experiment(cfg);
      std::cout << "cells run: " << outcome.cells_run << ", skipped: " << outcome.cells_skipped
                << ", failed: " << outcome.cells_failed << "\n";
      return outcome.cells_failed > 0 ? 2 : 0;
    }
    if (report->parsed()) {
      // The stored config preserves the method list and grid that were run.
      mixl::ExperimentConfig rcfg = mixl::load_experiment_config(out_dir + "/config.json");
      rcfg.output_dir = out_dir;
      mixl::write_reports(rcfg);
      std::cout << "tables written to " << out_dir << "/tables\n";
      return 0;
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
