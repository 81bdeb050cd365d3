#include "mixl/evaluation.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "mixl/distributions.hpp"
#include "mixl/mnl.hpp"
#include "mixl/rng.hpp"
#include "omp_guard.hpp"

namespace mixl {

double rmse(const Eigen::Ref<const Eigen::VectorXd>& estimate,
            const Eigen::Ref<const Eigen::VectorXd>& truth) {
  if (estimate.size() != truth.size() || estimate.size() == 0)
    throw std::invalid_argument("rmse: length mismatch or empty input");
  return std::sqrt((estimate - truth).squaredNorm() / static_cast<double>(estimate.size()));
}

Eigen::VectorXd lower_triangle_vector(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("lower_triangle_vector: square input required");
  const Eigen::Index k = m.rows();
  Eigen::VectorXd v(k * (k + 1) / 2);
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++idx) v[idx] = m(i, j);
  return v;
}

namespace {

void check_simplex_row(const Eigen::Ref<const Eigen::VectorXd>& p) {
  if (p.minCoeff() < -1e-6 || std::abs(p.sum() - 1.0) > 1e-6)
    throw std::invalid_argument("tvd: input is not on the simplex");
}

}  // namespace

double tvd(const Eigen::Ref<const Eigen::VectorXd>& p, const Eigen::Ref<const Eigen::VectorXd>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("tvd: alternative sets differ");
  check_simplex_row(p);
  check_simplex_row(q);
  return 0.5 * (p - q).cwiseAbs().sum();
}

double mean_tvd(const Eigen::Ref<const Eigen::MatrixXd>& p,
                const Eigen::Ref<const Eigen::MatrixXd>& q) {
  if (p.rows() != q.rows() || p.cols() != q.cols())
    throw std::invalid_argument("mean_tvd: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) acc += tvd(p.row(i), q.row(i));
  return acc / static_cast<double>(p.rows());
}

Eigen::MatrixXd predictive_distribution(const ChoiceDataset& validation,
                                        const ParamSampler& sampler, int outer, int inner,
                                        std::uint64_t seed) {
  if (outer < 1 || inner < 1)
    throw std::invalid_argument("predictive_distribution: draw counts must be positive");
  const int J = validation.num_alternatives;
  const int K = validation.num_random();
  const int L = validation.num_fixed();
  const int occasions = validation.total_occasions();
  constexpr int kInnerBlock = 4096;

  // Deterministic parallelism: each outer draw s has its own engine, and
  // per-chunk partial sums are combined in chunk order.
  const int chunks = std::min(outer, 16);
  std::vector<Eigen::MatrixXd> partial(static_cast<std::size_t>(chunks),
                                       Eigen::MatrixXd::Zero(occasions, J));

  OmpExceptionGuard omp_guard;
#pragma omp parallel for schedule(dynamic)
  for (int c = 0; c < chunks; ++c) {
    omp_guard.run([&, c]() {
    const int s_begin = static_cast<int>(static_cast<long long>(outer) * c / chunks);
    const int s_end = static_cast<int>(static_cast<long long>(outer) * (c + 1) / chunks);
    Eigen::MatrixXd& acc = partial[static_cast<std::size_t>(c)];
    Eigen::VectorXd alpha, zeta;
    Eigen::MatrixXd chol;
    Eigen::MatrixXd occ_acc(occasions, J);
    for (int s = s_begin; s < s_end; ++s) {
      auto eng = make_engine(derive_seed(seed, 0x707264, static_cast<std::uint64_t>(s)));
      sampler(s, eng, &alpha, &zeta, &chol);
      occ_acc.setZero();
      std::normal_distribution<double> normal(0.0, 1.0);
      int remaining = inner;
      while (remaining > 0) {
        const int block = std::min(remaining, kInnerBlock);
        Eigen::MatrixXd xi(block, K);
        for (int d = 0; d < block; ++d)
          for (int k = 0; k < K; ++k) xi(d, k) = normal(eng);
        Eigen::MatrixXd betas = xi * chol.transpose();
        betas.rowwise() += zeta.transpose();
        for (int occ = 0; occ < occasions; ++occ) {
          const int r0 = occ * J;
          Eigen::VectorXd base = Eigen::VectorXd::Zero(J);
          if (L > 0 && alpha.size() > 0)
            base = validation.fixed_attrs.middleRows(r0, J) * alpha;
          const Eigen::MatrixXd util =
              (validation.random_attrs.middleRows(r0, J) * betas.transpose()).colwise() + base;
          for (int d = 0; d < block; ++d)
            occ_acc.row(occ) += choice_probabilities(util.col(d)).transpose();
        }
        remaining -= block;
      }
      acc += occ_acc / static_cast<double>(inner);
    }
    });
  }
  omp_guard.rethrow();

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(occasions, J);
  for (const auto& p : partial) out += p;
  return out / static_cast<double>(outer);
}

Eigen::MatrixXd true_choice_distribution(const ChoiceDataset& validation,
                                         const TruePopulation& pop, int draws,
                                         std::uint64_t seed) {
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(pop.omega).matrixL();
  ParamSampler point = [&](int, std::mt19937_64&, Eigen::VectorXd* alpha, Eigen::VectorXd* zeta,
                           Eigen::MatrixXd* chol_omega) {
    *alpha = pop.alpha;
    *zeta = pop.zeta;
    *chol_omega = chol;
  };
  return predictive_distribution(validation, point, 1, draws, seed);
}

ParamSampler mcmc_param_sampler(const McmcDraws& draws, int outer) {
  const int retained = draws.retained();
  if (retained < 1) throw std::invalid_argument("mcmc_param_sampler: no retained draws");
  if (outer > retained)
    throw std::invalid_argument("mcmc_param_sampler: more outer draws than retained draws");
  return [&draws, retained, outer](int s, std::mt19937_64&, Eigen::VectorXd* alpha,
                                   Eigen::VectorXd* zeta, Eigen::MatrixXd* chol_omega) {
    const int idx = static_cast<int>(static_cast<long long>(s) * retained / outer);
    *alpha = draws.alpha.row(idx).transpose();
    *zeta = draws.zeta.row(idx).transpose();
    *chol_omega = Eigen::LLT<Eigen::MatrixXd>(draws.omega[static_cast<std::size_t>(idx)]).matrixL();
  };
}

ParamSampler vb_param_sampler(const VariationalPosterior& posterior) {
  return [&posterior](int, std::mt19937_64& eng, Eigen::VectorXd* alpha, Eigen::VectorXd* zeta,
                      Eigen::MatrixXd* chol_omega) {
    *alpha = posterior.alpha.dim() > 0
                 ? sample_mvn_chol(posterior.alpha.mean(), posterior.alpha.chol(), eng)
                 : Eigen::VectorXd(0);
    *zeta = sample_mvn_chol(posterior.zeta.mean(), posterior.zeta.chol(), eng);
    const Eigen::MatrixXd omega = sample_inverse_wishart(posterior.w, posterior.theta, eng);
    *chol_omega = Eigen::LLT<Eigen::MatrixXd>(omega).matrixL();
  };
}

ParamSampler msle_param_sampler(const MslEstimate& estimate) {
  Eigen::MatrixXd var = 0.5 * (estimate.var_phi + estimate.var_phi.transpose());
  Eigen::LLT<Eigen::MatrixXd> llt(var);
  if (llt.info() != Eigen::Success) {
    // Ridge the asymptotic covariance just enough to factor it.
    const double ridge = 1e-10 * std::max(1.0, var.diagonal().maxCoeff());
    var += ridge * Eigen::MatrixXd::Identity(var.rows(), var.cols());
    llt.compute(var);
    if (llt.info() != Eigen::Success)
      throw std::invalid_argument("msle_param_sampler: var_phi not positive semi-definite");
  }
  const Eigen::MatrixXd chol_var = llt.matrixL();
  const int L = estimate.num_fixed;
  const int K = estimate.num_random;
  return [estimate, chol_var, L, K](int, std::mt19937_64& eng, Eigen::VectorXd* alpha,
                                    Eigen::VectorXd* zeta, Eigen::MatrixXd* chol_omega) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Eigen::VectorXd phi = sample_mvn_chol(estimate.phi, chol_var, eng);
      Eigen::VectorXd a, z;
      Eigen::MatrixXd c;
      msle_unpack(phi, L, K, &a, &z, &c);
      const Eigen::MatrixXd omega = c * c.transpose();
      if (!omega.allFinite()) continue;
      Eigen::LLT<Eigen::MatrixXd> ollt(omega);
      if (ollt.info() != Eigen::Success) continue;
      *alpha = a;
      *zeta = z;
      *chol_omega = ollt.matrixL();
      return;
    }
    throw std::runtime_error("msle_param_sampler: no positive-definite draw in 100 attempts");
  };
}

double standard_error(const std::vector<double>& values) {
  const std::size_t r = values.size();
  if (r < 2) throw std::invalid_argument("standard_error: need at least two replications");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(r);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(r - 1)) / std::sqrt(static_cast<double>(r));
}

namespace {

MetricSummary summarize_metric(const std::vector<double>& values) {
  MetricSummary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  s.se = values.size() >= 2 ? standard_error(values) : std::numeric_limits<double>::quiet_NaN();
  return s;
}

}  // namespace

MethodSummary summarize_replications(const std::vector<ReplicationMetrics>& reports) {
  if (reports.empty()) throw std::invalid_argument("summarize_replications: no reports");
  MethodSummary out;
  out.replications = static_cast<int>(reports.size());
  auto collect = [&](auto getter) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const auto& r : reports) v.push_back(getter(r));
    return v;
  };
  out.wall_seconds = summarize_metric(collect([](const auto& r) { return r.wall_seconds; }));
  out.rmse_zeta = summarize_metric(collect([](const auto& r) { return r.rmse_zeta; }));
  out.rmse_omega = summarize_metric(collect([](const auto& r) { return r.rmse_omega; }));
  out.rmse_beta = summarize_metric(collect([](const auto& r) { return r.rmse_beta; }));
  out.tvd_value = summarize_metric(collect([](const auto& r) { return r.tvd_value; }));
  if (reports.front().rmse_alpha) {
    std::vector<double> v;
    for (const auto& r : reports) {
      if (!r.rmse_alpha)
        throw std::invalid_argument("summarize_replications: inconsistent alpha metrics");
      v.push_back(*r.rmse_alpha);
    }
    out.rmse_alpha = summarize_metric(v);
  }
  return out;
}

}  // namespace mixl
