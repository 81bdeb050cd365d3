#include "mixl/mcmc.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "mixl/distributions.hpp"
#include "mixl/mnl.hpp"
#include "mixl/rng.hpp"

namespace mixl {

namespace {

double sequence_loglik(const ChoiceDataset& data, int n, const Eigen::VectorXd& alpha,
                       const Eigen::VectorXd& beta) {
  return sequence_log_likelihood(data, n, alpha, beta);
}

struct ChainAccumulator {
  Eigen::MatrixXd alpha;
  Eigen::MatrixXd zeta;
  std::vector<Eigen::MatrixXd> omega;
  std::vector<Eigen::MatrixXd> beta;
  Eigen::MatrixXd beta_sum;
  double acceptance_beta_sum = 0.0;
  double acceptance_alpha_sum = 0.0;
  double final_rho_beta = 0.0;
  int retained = 0;
};

}  // namespace

Eigen::VectorXd gibbs_zeta(const Hyperparameters& hyper, const Eigen::MatrixXd& betas,
                           const Eigen::MatrixXd& omega, std::mt19937_64& eng) {
  const int n = static_cast<int>(betas.rows());
  if (n < 1) throw std::invalid_argument("gibbs_zeta: need at least one individual");
  const Eigen::VectorXd beta_bar = betas.colwise().mean().transpose();
  // Proper conditional including the N(mu0, Sigma0) prior; collapses to
  // the textbook N(mean(beta), Omega/N) under the diffuse default.
  const Eigen::MatrixXd omega_inv =
      Eigen::LLT<Eigen::MatrixXd>(omega).solve(Eigen::MatrixXd::Identity(omega.rows(), omega.cols()));
  const Eigen::MatrixXd sigma0_inv = Eigen::LLT<Eigen::MatrixXd>(hyper.sigma0)
                                         .solve(Eigen::MatrixXd::Identity(omega.rows(), omega.cols()));
  const Eigen::MatrixXd prec = sigma0_inv + n * omega_inv;
  Eigen::LLT<Eigen::MatrixXd> prec_llt(prec);
  const Eigen::MatrixXd cov = prec_llt.solve(Eigen::MatrixXd::Identity(prec.rows(), prec.cols()));
  const Eigen::VectorXd mean =
      cov * (sigma0_inv * hyper.mu0 + static_cast<double>(n) * (omega_inv * beta_bar));
  const Eigen::MatrixXd cov_sym = 0.5 * (cov + cov.transpose());
  return sample_mvn_chol(mean, Eigen::LLT<Eigen::MatrixXd>(cov_sym).matrixL(), eng);
}

Eigen::MatrixXd gibbs_omega(const Hyperparameters& hyper, const Eigen::MatrixXd& betas,
                            const Eigen::VectorXd& zeta, const Eigen::VectorXd& a,
                            std::mt19937_64& eng) {
  const int k = static_cast<int>(zeta.size());
  const double dof = hyper.nu + betas.rows() + k - 1;
  Eigen::MatrixXd scale = (2.0 * hyper.nu) * a.asDiagonal();
  for (Eigen::Index n = 0; n < betas.rows(); ++n) {
    const Eigen::VectorXd dev = betas.row(n).transpose() - zeta;
    scale += dev * dev.transpose();
  }
  return sample_inverse_wishart(dof, scale, eng);
}

Eigen::VectorXd gibbs_a(const Hyperparameters& hyper, const Eigen::MatrixXd& omega,
                        std::mt19937_64& eng) {
  const int k = static_cast<int>(omega.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("gibbs_a: omega not PD");
  const Eigen::MatrixXd omega_inv = llt.solve(Eigen::MatrixXd::Identity(k, k));
  const double shape = 0.5 * (hyper.nu + k);
  const Eigen::VectorXd rate = hyper.gamma_rate() + hyper.nu * omega_inv.diagonal();
  Eigen::VectorXd a(k);
  for (int i = 0; i < k; ++i) {
    std::gamma_distribution<double> gamma(shape, 1.0 / rate[i]);
    a[i] = gamma(eng);
  }
  return a;
}

double rw_update_beta(const ChoiceDataset& dataset, const Eigen::VectorXd& alpha,
                      Eigen::MatrixXd& betas, const Eigen::VectorXd& zeta,
                      const Eigen::MatrixXd& omega, double rho_beta, std::mt19937_64& eng) {
  const int N = dataset.num_individuals;
  const int K = static_cast<int>(zeta.size());
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("rw_update_beta: omega not PD");
  const Eigen::MatrixXd chol = llt.matrixL();
  const Eigen::MatrixXd omega_inv = llt.solve(Eigen::MatrixXd::Identity(K, K));
  const double step = std::sqrt(rho_beta);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int accepted = 0;
  Eigen::VectorXd eta(K);
  for (int n = 0; n < N; ++n) {
    const Eigen::VectorXd current = betas.row(n).transpose();
    for (int k = 0; k < K; ++k) eta[k] = normal(eng);
    const Eigen::VectorXd proposal = current + step * (chol * eta);
    const Eigen::VectorXd dev_cur = current - zeta;
    const Eigen::VectorXd dev_new = proposal - zeta;
    const double log_ratio = sequence_loglik(dataset, n, alpha, proposal) -
                             sequence_loglik(dataset, n, alpha, current) -
                             0.5 * dev_new.dot(omega_inv * dev_new) +
                             0.5 * dev_cur.dot(omega_inv * dev_cur);
    if (log_ratio >= 0.0 || std::log(unif(eng)) <= log_ratio) {
      betas.row(n) = proposal.transpose();
      ++accepted;
    }
  }
  return static_cast<double>(accepted) / N;
}

int rw_update_alpha(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                    Eigen::VectorXd& alpha, const Eigen::MatrixXd& betas, double rho_alpha,
                    std::mt19937_64& eng) {
  const int L = static_cast<int>(alpha.size());
  if (L == 0) return 1;
  Eigen::LLT<Eigen::MatrixXd> llt(hyper.xi0);
  const Eigen::MatrixXd chol = llt.matrixL();
  const Eigen::MatrixXd xi0_inv = llt.solve(Eigen::MatrixXd::Identity(L, L));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd eta(L);
  for (int l = 0; l < L; ++l) eta[l] = normal(eng);
  const Eigen::VectorXd proposal = alpha + std::sqrt(rho_alpha) * (chol * eta);
  double log_ratio = 0.0;
  for (int n = 0; n < dataset.num_individuals; ++n) {
    const Eigen::VectorXd beta = betas.row(n).transpose();
    log_ratio += sequence_loglik(dataset, n, proposal, beta) -
                 sequence_loglik(dataset, n, alpha, beta);
  }
  const Eigen::VectorXd dev_new = proposal - hyper.lambda0;
  const Eigen::VectorXd dev_cur = alpha - hyper.lambda0;
  log_ratio += -0.5 * dev_new.dot(xi0_inv * dev_new) + 0.5 * dev_cur.dot(xi0_inv * dev_cur);
  if (log_ratio >= 0.0 || std::log(unif(eng)) <= log_ratio) {
    alpha = proposal;
    return 1;
  }
  return 0;
}

double adapt_step(double rho_beta, double acceptance, const McmcConfig& config) {
  if (acceptance < config.target_acceptance)
    rho_beta -= config.step_increment;
  else if (acceptance > config.target_acceptance)
    rho_beta += config.step_increment;
  return std::max(rho_beta, config.rho_beta_floor);
}

namespace {

void run_chain(const ChoiceDataset& dataset, const Hyperparameters& hyper,
               const McmcConfig& config, std::uint64_t chain_seed, ChainAccumulator& acc) {
  const int N = dataset.num_individuals;
  const int K = hyper.num_random();
  const int L = hyper.num_fixed();
  const int retained_target = (config.iterations - config.burn_in) / config.thin;

  auto eng = make_engine(chain_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(L);
  Eigen::VectorXd zeta = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd omega = Eigen::MatrixXd::Identity(K, K);
  // Dispersed start: betas drawn around zero at unit scale, and a at its
  // conditional mean given the initial Omega. Starting a at A^-2 instead
  // collapses the first Omega draws towards zero, which freezes the
  // random-walk updates for many thousands of sweeps.
  Eigen::MatrixXd betas(N, K);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) betas(n, k) = normal(eng);
  Eigen::VectorXd a = (0.5 * (hyper.nu + K)) *
                      (hyper.gamma_rate() + Eigen::VectorXd::Constant(K, hyper.nu))
                          .array()
                          .inverse()
                          .matrix();
  double rho_beta = config.rho_beta_init;

  const Eigen::MatrixXd xi0_chol =
      L > 0 ? Eigen::MatrixXd(Eigen::LLT<Eigen::MatrixXd>(hyper.xi0).matrixL())
            : Eigen::MatrixXd(0, 0);
  const Eigen::MatrixXd xi0_inv =
      L > 0 ? Eigen::MatrixXd(Eigen::LLT<Eigen::MatrixXd>(hyper.xi0)
                                  .solve(Eigen::MatrixXd::Identity(L, L)))
            : Eigen::MatrixXd(0, 0);

  // Choice-sequence log-likelihoods are cached per individual; proposals
  // are evaluated fresh and the cache swapped on acceptance.
  std::vector<double> loglik(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n)
    loglik[static_cast<std::size_t>(n)] =
        sequence_loglik(dataset, n, alpha, betas.row(n).transpose());

  acc.alpha.resize(retained_target, L);
  acc.zeta.resize(retained_target, K);
  acc.omega.reserve(static_cast<std::size_t>(retained_target));
  if (config.keep_beta_draws) acc.beta.reserve(static_cast<std::size_t>(retained_target));
  acc.beta_sum = Eigen::MatrixXd::Zero(N, K);

  Eigen::VectorXd eta(K);
  std::vector<double> prop_loglik(static_cast<std::size_t>(N));
  for (int it = 0; it < config.iterations; ++it) {
    zeta = gibbs_zeta(hyper, betas, omega, eng);
    omega = gibbs_omega(hyper, betas, zeta, a, eng);
    a = gibbs_a(hyper, omega, eng);

    // beta random-walk sweep.
    Eigen::LLT<Eigen::MatrixXd> omega_llt(omega);
    const Eigen::MatrixXd omega_chol = omega_llt.matrixL();
    const Eigen::MatrixXd omega_inv = omega_llt.solve(Eigen::MatrixXd::Identity(K, K));
    const double step = std::sqrt(rho_beta);
    int accepted = 0;
    for (int n = 0; n < N; ++n) {
      const Eigen::VectorXd current = betas.row(n).transpose();
      for (int k = 0; k < K; ++k) eta[k] = normal(eng);
      const Eigen::VectorXd proposal = current + step * (omega_chol * eta);
      const double ll_prop = sequence_loglik(dataset, n, alpha, proposal);
      const Eigen::VectorXd dev_cur = current - zeta;
      const Eigen::VectorXd dev_new = proposal - zeta;
      const double log_ratio = ll_prop - loglik[static_cast<std::size_t>(n)] -
                               0.5 * dev_new.dot(omega_inv * dev_new) +
                               0.5 * dev_cur.dot(omega_inv * dev_cur);
      if (log_ratio >= 0.0 || std::log(unif(eng)) <= log_ratio) {
        betas.row(n) = proposal.transpose();
        loglik[static_cast<std::size_t>(n)] = ll_prop;
        ++accepted;
      }
    }
    const double acc_beta = static_cast<double>(accepted) / N;

    // alpha random-walk step.
    int acc_alpha = 1;
    if (L > 0) {
      Eigen::VectorXd eta_a(L);
      for (int l = 0; l < L; ++l) eta_a[l] = normal(eng);
      const Eigen::VectorXd proposal = alpha + std::sqrt(config.rho_alpha) * (xi0_chol * eta_a);
      double log_ratio = 0.0;
      for (int n = 0; n < N; ++n) {
        prop_loglik[static_cast<std::size_t>(n)] =
            sequence_loglik(dataset, n, proposal, betas.row(n).transpose());
        log_ratio += prop_loglik[static_cast<std::size_t>(n)] - loglik[static_cast<std::size_t>(n)];
      }
      const Eigen::VectorXd dev_new = proposal - hyper.lambda0;
      const Eigen::VectorXd dev_cur = alpha - hyper.lambda0;
      log_ratio += -0.5 * dev_new.dot(xi0_inv * dev_new) + 0.5 * dev_cur.dot(xi0_inv * dev_cur);
      if (log_ratio >= 0.0 || std::log(unif(eng)) <= log_ratio) {
        alpha = proposal;
        loglik.swap(prop_loglik);
      } else {
        acc_alpha = 0;
      }
    }

    acc.acceptance_beta_sum += acc_beta;
    acc.acceptance_alpha_sum += acc_alpha;
    // Tuning stays active after burn-in as well.
    rho_beta = adapt_step(rho_beta, acc_beta, config);

    if (it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0 &&
        acc.retained < retained_target) {
      acc.alpha.row(acc.retained) = alpha.transpose();
      acc.zeta.row(acc.retained) = zeta.transpose();
      acc.omega.push_back(omega);
      if (config.keep_beta_draws) acc.beta.push_back(betas);
      acc.beta_sum += betas;
      ++acc.retained;
    }
  }
  acc.final_rho_beta = rho_beta;
}

}  // namespace

McmcResult run_mcmc(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                    const McmcConfig& config) {
  dataset.validate();
  hyper.validate();
  if (hyper.num_fixed() != dataset.num_fixed() || hyper.num_random() != dataset.num_random())
    throw std::invalid_argument("run_mcmc: hyperparameter dimensions do not match the dataset");
  if (config.chains < 1 || config.burn_in >= config.iterations || config.thin < 1)
    throw std::invalid_argument("run_mcmc: invalid chain configuration");

  const auto t_start = std::chrono::steady_clock::now();
  const int N = dataset.num_individuals;
  const int K = hyper.num_random();
  const int L = hyper.num_fixed();

  std::vector<ChainAccumulator> chains(static_cast<std::size_t>(config.chains));
  {
    std::vector<std::thread> workers;
    workers.reserve(chains.size());
    for (int c = 0; c < config.chains; ++c)
      workers.emplace_back([&, c]() {
        run_chain(dataset, hyper, config, derive_seed(config.seed, 0xc4a1, static_cast<std::uint64_t>(c)),
                  chains[static_cast<std::size_t>(c)]);
      });
    for (auto& w : workers) w.join();
  }

  McmcResult res;
  McmcDraws& draws = res.draws;
  const int per_chain = (config.iterations - config.burn_in) / config.thin;
  const int total = per_chain * config.chains;
  draws.alpha.resize(total, L);
  draws.zeta.resize(total, K);
  draws.omega.reserve(static_cast<std::size_t>(total));
  draws.beta_mean = Eigen::MatrixXd::Zero(N, K);
  draws.chains = config.chains;
  draws.iterations = config.iterations;
  draws.burn_in = config.burn_in;
  draws.thin = config.thin;

  int row = 0;
  for (const auto& acc : chains) {
    for (int r = 0; r < acc.retained; ++r, ++row) {
      draws.alpha.row(row) = acc.alpha.row(r);
      draws.zeta.row(row) = acc.zeta.row(r);
      draws.omega.push_back(acc.omega[static_cast<std::size_t>(r)]);
    }
    if (config.keep_beta_draws)
      for (const auto& b : acc.beta) draws.beta.push_back(b);
    draws.beta_mean += acc.beta_sum;
    res.mean_acceptance_beta += acc.acceptance_beta_sum / config.iterations;
    res.mean_acceptance_alpha += acc.acceptance_alpha_sum / config.iterations;
    res.final_rho_beta = acc.final_rho_beta;
  }
  draws.beta_mean /= static_cast<double>(total);
  res.mean_acceptance_beta /= config.chains;
  res.mean_acceptance_alpha /= config.chains;

  res.alpha_hat = draws.alpha.colwise().mean().transpose();
  res.zeta_hat = draws.zeta.colwise().mean().transpose();
  res.omega_hat = Eigen::MatrixXd::Zero(K, K);
  for (const auto& om : draws.omega) res.omega_hat += om;
  res.omega_hat /= static_cast<double>(total);
  res.beta_hat = draws.beta_mean;
  res.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

void save_chain_draws(const std::string& path, const McmcDraws& draws, int chain) {
  if (chain < 0 || chain >= draws.chains)
    throw std::invalid_argument("save_chain_draws: chain index out of range");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_chain_draws: cannot open " + path);
  const int per_chain = draws.per_chain();
  const int L = static_cast<int>(draws.alpha.cols());
  const int K = static_cast<int>(draws.zeta.cols());
  out << "# chain " << chain << " of " << draws.chains << "; iterations " << draws.iterations
      << "; burn_in " << draws.burn_in << "; thin " << draws.thin << "\n";
  out << "draw";
  for (int l = 0; l < L; ++l) out << ",alpha_" << (l + 1);
  for (int k = 0; k < K; ++k) out << ",zeta_" << (k + 1);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j <= i; ++j) out << ",omega_" << (i + 1) << "_" << (j + 1);
  out << "\n";
  char buf[32];
  for (int r = 0; r < per_chain; ++r) {
    const int row = chain * per_chain + r;
    out << r;
    for (int l = 0; l < L; ++l) {
      std::snprintf(buf, sizeof(buf), "%.17g", draws.alpha(row, l));
      out << ',' << buf;
    }
    for (int k = 0; k < K; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", draws.zeta(row, k));
      out << ',' << buf;
    }
    const Eigen::MatrixXd& om = draws.omega[static_cast<std::size_t>(row)];
    for (int i = 0; i < K; ++i)
      for (int j = 0; j <= i; ++j) {
        std::snprintf(buf, sizeof(buf), "%.17g", om(i, j));
        out << ',' << buf;
      }
    out << "\n";
  }
}

}  // namespace mixl
