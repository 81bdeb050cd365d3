#include "mixl/msle.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mixl/mnl.hpp"
#include "mixl/optim.hpp"
#include "mixl/rng.hpp"
#include "omp_guard.hpp"

namespace mixl {

int msle_packed_size(int num_fixed, int num_random) {
  return num_fixed + num_random + num_random * (num_random + 1) / 2;
}

Eigen::VectorXd msle_pack(const Eigen::VectorXd& alpha, const Eigen::VectorXd& zeta,
                          const Eigen::MatrixXd& chol_omega) {
  const int L = static_cast<int>(alpha.size());
  const int K = static_cast<int>(zeta.size());
  Eigen::VectorXd phi(msle_packed_size(L, K));
  phi.head(L) = alpha;
  phi.segment(L, K) = zeta;
  int idx = L + K;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j <= i; ++j, ++idx)
      phi[idx] = (i == j) ? std::log(chol_omega(i, i)) : chol_omega(i, j);
  return phi;
}

void msle_unpack(const Eigen::Ref<const Eigen::VectorXd>& phi, int num_fixed, int num_random,
                 Eigen::VectorXd* alpha, Eigen::VectorXd* zeta, Eigen::MatrixXd* chol_omega) {
  if (phi.size() != msle_packed_size(num_fixed, num_random))
    throw std::invalid_argument("msle_unpack: phi length mismatch");
  *alpha = phi.head(num_fixed);
  *zeta = phi.segment(num_fixed, num_random);
  chol_omega->setZero(num_random, num_random);
  int idx = num_fixed + num_random;
  for (int i = 0; i < num_random; ++i)
    for (int j = 0; j <= i; ++j, ++idx)
      (*chol_omega)(i, j) = (i == j) ? std::exp(phi[idx]) : phi[idx];
}

std::vector<DrawBatch> msle_draw_batches(int num_individuals, int num_random, int num_draws,
                                         std::uint64_t seed) {
  std::vector<DrawBatch> batches;
  batches.reserve(static_cast<std::size_t>(num_individuals));
  for (int n = 0; n < num_individuals; ++n)
    batches.push_back(mlhs_normal_draws(num_draws, num_random,
                                        derive_seed(seed, 0x6d6c, static_cast<std::uint64_t>(n))));
  return batches;
}

double simulated_loglik(const ChoiceDataset& dataset, const Eigen::Ref<const Eigen::VectorXd>& phi,
                        const std::vector<DrawBatch>& batches, Eigen::VectorXd* grad) {
  const int L = dataset.num_fixed();
  const int K = dataset.num_random();
  const int J = dataset.num_alternatives;
  const int N = dataset.num_individuals;
  if (static_cast<int>(batches.size()) != N)
    throw std::invalid_argument("simulated_loglik: one draw batch per individual required");

  Eigen::VectorXd alpha, zeta;
  Eigen::MatrixXd chol;
  msle_unpack(phi, L, K, &alpha, &zeta, &chol);

  const int P = static_cast<int>(phi.size());
  std::vector<double> value_parts(static_cast<std::size_t>(N), 0.0);
  std::vector<Eigen::VectorXd> grad_parts;
  if (grad) grad_parts.assign(static_cast<std::size_t>(N), Eigen::VectorXd::Zero(P));

  OmpExceptionGuard omp_guard;
#pragma omp parallel for schedule(dynamic)
  for (int n = 0; n < N; ++n) {
    omp_guard.run([&, n]() {
    const Eigen::MatrixXd& xi = batches[static_cast<std::size_t>(n)].draws;  // D x K
    const int D = static_cast<int>(xi.rows());
    const int t0 = dataset.occasion_offsets[n];
    const int t1 = dataset.occasion_offsets[n + 1];

    // Sequence log-likelihood per draw; log-space throughout.
    Eigen::VectorXd seq_ll = Eigen::VectorXd::Zero(D);
    // Score of each draw's sequence w.r.t. beta, and the alpha part.
    Eigen::MatrixXd score_beta;
    Eigen::VectorXd score_alpha_acc;
    std::vector<Eigen::VectorXd> score_alpha;
    if (grad) {
      score_beta = Eigen::MatrixXd::Zero(D, K);
      score_alpha.assign(static_cast<std::size_t>(D), Eigen::VectorXd::Zero(L));
    }

    Eigen::MatrixXd beta_draws = xi * chol.transpose();  // D x K
    beta_draws.rowwise() += zeta.transpose();

    Eigen::VectorXd v(J);
    for (int occ = t0; occ < t1; ++occ) {
      const int r0 = occ * J;
      const auto xr = dataset.random_attrs.middleRows(r0, J);
      const auto xf = dataset.fixed_attrs.middleRows(r0, J);
      Eigen::VectorXd base = Eigen::VectorXd::Zero(J);
      if (L > 0) base = xf * alpha;
      const int y = dataset.choices[occ];
      for (int d = 0; d < D; ++d) {
        v = base + xr * beta_draws.row(d).transpose();
        const double lse = log_sum_exp(v);
        seq_ll[d] += v[y] - lse;
        if (grad) {
          Eigen::VectorXd resid = -choice_probabilities(v);
          resid[y] += 1.0;
          score_beta.row(d) += (xr.transpose() * resid).transpose();
          if (L > 0) score_alpha[static_cast<std::size_t>(d)] += xf.transpose() * resid;
        }
      }
    }

    const double m = seq_ll.maxCoeff();
    const Eigen::VectorXd ex = (seq_ll.array() - m).exp();
    const double sum_ex = ex.sum();
    value_parts[static_cast<std::size_t>(n)] = m + std::log(sum_ex / D);

    if (grad) {
      const Eigen::VectorXd wts = ex / sum_ex;  // posterior weights over draws
      Eigen::VectorXd g = Eigen::VectorXd::Zero(P);
      Eigen::VectorXd gz = Eigen::VectorXd::Zero(K);
      Eigen::MatrixXd gc = Eigen::MatrixXd::Zero(K, K);
      for (int d = 0; d < D; ++d) {
        const Eigen::VectorXd sb = score_beta.row(d).transpose();
        gz += wts[d] * sb;
        gc += wts[d] * sb * xi.row(d);  // d beta / d chol = xi
        if (L > 0) g.head(L) += wts[d] * score_alpha[static_cast<std::size_t>(d)];
      }
      g.segment(L, K) = gz;
      int idx = L + K;
      for (int i = 0; i < K; ++i)
        for (int j = 0; j <= i; ++j, ++idx)
          g[idx] = (i == j) ? gc(i, i) * chol(i, i) : gc(i, j);
      grad_parts[static_cast<std::size_t>(n)] = g;
    }
    });
  }
  omp_guard.rethrow();

  double total = 0.0;
  for (int n = 0; n < N; ++n) total += value_parts[static_cast<std::size_t>(n)];
  if (grad) {
    grad->setZero(P);
    for (int n = 0; n < N; ++n) *grad += grad_parts[static_cast<std::size_t>(n)];
  }
  return total;
}

MslEstimate fit_msle(const ChoiceDataset& dataset, const MsleConfig& config) {
  dataset.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int L = dataset.num_fixed();
  const int K = dataset.num_random();
  const std::vector<DrawBatch> batches =
      msle_draw_batches(dataset.num_individuals, K, config.draws, config.seed);

  Eigen::VectorXd start;
  if (config.start) {
    start = *config.start;
    if (start.size() != msle_packed_size(L, K))
      throw std::invalid_argument("fit_msle: start vector has wrong length");
  } else {
    start = msle_pack(Eigen::VectorXd::Zero(L), Eigen::VectorXd::Zero(K),
                      config.start_chol_scale * Eigen::MatrixXd::Identity(K, K));
  }

  Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    try {
      Eigen::VectorXd grad;
      const double v = simulated_loglik(dataset, x, batches, &grad);
      if (!std::isfinite(v)) {
        g.setZero(x.size());
        return std::numeric_limits<double>::infinity();
      }
      g = -grad;
      return -v;
    } catch (const std::exception&) {
      g.setZero(x.size());
      return std::numeric_limits<double>::infinity();
    }
  };
  BfgsOptions opts;
  opts.max_iterations = config.max_iterations;
  const BfgsResult res = bfgs_minimize(objective, start, opts);

  MslEstimate est;
  est.phi = res.x;
  est.var_phi = res.inverse_hessian;
  est.loglik = -res.value;
  est.converged = res.converged;
  est.iterations = res.iterations;
  est.num_fixed = L;
  est.num_random = K;
  msle_unpack(est.phi, L, K, &est.alpha_hat, &est.zeta_hat, &est.chol_omega);
  est.omega_hat = est.chol_omega * est.chol_omega.transpose();
  est.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return est;
}

ConditionalBetas conditional_betas(const ChoiceDataset& dataset, const MslEstimate& estimate,
                                   int num_draws, std::uint64_t seed) {
  const int K = estimate.num_random;
  const int L = estimate.num_fixed;
  const int J = dataset.num_alternatives;
  const int N = dataset.num_individuals;
  if (dataset.num_random() != K || dataset.num_fixed() != L)
    throw std::invalid_argument("conditional_betas: estimate does not match dataset");

  // One shared batch across individuals.
  const Eigen::MatrixXd xi = pseudo_normal_draws(num_draws, K, derive_seed(seed, 0xcb)).draws;
  Eigen::MatrixXd beta_draws = xi * estimate.chol_omega.transpose();
  beta_draws.rowwise() += estimate.zeta_hat.transpose();

  ConditionalBetas out;
  out.betas.resize(N, K);
  std::vector<int> degenerate_flag(static_cast<std::size_t>(N), 0);

  OmpExceptionGuard omp_guard;
#pragma omp parallel for schedule(dynamic)
  for (int n = 0; n < N; ++n) {
    omp_guard.run([&, n]() {
    Eigen::VectorXd seq_ll = Eigen::VectorXd::Zero(num_draws);
    Eigen::VectorXd v(J);
    for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1]; ++occ) {
      const int r0 = occ * J;
      const auto xr = dataset.random_attrs.middleRows(r0, J);
      Eigen::VectorXd base = Eigen::VectorXd::Zero(J);
      if (L > 0) base = dataset.fixed_attrs.middleRows(r0, J) * estimate.alpha_hat;
      const int y = dataset.choices[occ];
      for (int d = 0; d < num_draws; ++d) {
        v = base + xr * beta_draws.row(d).transpose();
        seq_ll[d] += v[y] - log_sum_exp(v);
      }
    }
    const double m = seq_ll.maxCoeff();
    const Eigen::VectorXd w = (seq_ll.array() - m).exp();
    const double ws = w.sum();
    if (!(ws > 0.0) || !std::isfinite(ws)) {
      out.betas.row(n) = estimate.zeta_hat.transpose();
      degenerate_flag[static_cast<std::size_t>(n)] = 1;
    } else {
      out.betas.row(n) = (w.transpose() * beta_draws) / ws;
    }
    });
  }
  omp_guard.rethrow();
  for (int n = 0; n < N; ++n)
    if (degenerate_flag[static_cast<std::size_t>(n)]) out.degenerate.push_back(n);
  return out;
}

}  // namespace mixl
