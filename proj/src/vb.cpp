#include "mixl/vb.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "mixl/draws.hpp"
#include "mixl/elise.hpp"
#include "mixl/mnl.hpp"
#include "mixl/optim.hpp"
#include "mixl/rng.hpp"
#include "omp_guard.hpp"

namespace mixl {

namespace {

constexpr double kSafeguardEigenFloor = 1e-8;

struct OccasionRef {
  Eigen::Block<const Eigen::MatrixXd> xf;
  Eigen::Block<const Eigen::MatrixXd> xr;
  int chosen;
};

OccasionRef occasion_ref(const ChoiceDataset& data, int occ) {
  const int J = data.num_alternatives;
  return OccasionRef{data.fixed_attrs.middleRows(occ * J, J),
                     data.random_attrs.middleRows(occ * J, J), data.choices[occ]};
}

Eigen::MatrixXd solve_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + ": matrix not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

// Maps a gradient in symmetric-covariance convention onto the packed
// Cholesky coordinates (lower triangle row-major, log diagonal).
void fold_sigma_grad(const Eigen::MatrixXd& grad_sigma, const Eigen::MatrixXd& chol,
                     Eigen::Ref<Eigen::VectorXd> packed_grad) {
  const Eigen::Index dim = chol.rows();
  const Eigen::MatrixXd gc = 2.0 * grad_sigma * chol;
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++idx)
      packed_grad[idx] += (i == j) ? gc(i, i) * chol(i, i) : gc(i, j);
}

// Same for a gradient already taken with respect to the Cholesky factor.
void fold_chol_grad(const Eigen::MatrixXd& grad_chol, const Eigen::MatrixXd& chol,
                    Eigen::Ref<Eigen::VectorXd> packed_grad) {
  const Eigen::Index dim = chol.rows();
  Eigen::Index idx = 0;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++idx)
      packed_grad[idx] += (i == j) ? grad_chol(i, i) * chol(i, i) : grad_chol(i, j);
}

}  // namespace

EliseTreatment treatment_of(VbVariant variant) {
  switch (variant) {
    case VbVariant::ncvmp_delta:
    case VbVariant::qn_delta:
      return EliseTreatment::delta;
    case VbVariant::qn_qmc:
      return EliseTreatment::qmc;
    default:
      return EliseTreatment::mji;
  }
}

bool uses_quasi_newton(VbVariant variant) {
  return variant == VbVariant::qn_delta || variant == VbVariant::qn_qmc ||
         variant == VbVariant::qn_mji;
}

std::string to_string(VbVariant variant) {
  switch (variant) {
    case VbVariant::ncvmp_delta: return "VB-NCVMP-DELTA";
    case VbVariant::ncvmp_mji: return "VB-NCVMP-MJI";
    case VbVariant::qn_delta: return "VB-QN-DELTA";
    case VbVariant::qn_qmc: return "VB-QN-QMC";
    case VbVariant::qn_mji: return "VB-QN-MJI";
  }
  return "?";
}

VbVariant parse_vb_variant(const std::string& name) {
  std::string u;
  for (char ch : name) u.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
  auto matches = [&](const char* a, const char* b) { return u == a || u == b; };
  if (matches("VB-NCVMP-DELTA", "NCVMP-DELTA")) return VbVariant::ncvmp_delta;
  if (matches("VB-NCVMP-MJI", "NCVMP-MJI")) return VbVariant::ncvmp_mji;
  if (matches("VB-QN-DELTA", "QN-DELTA")) return VbVariant::qn_delta;
  if (matches("VB-QN-QMC", "QN-QMC")) return VbVariant::qn_qmc;
  if (matches("VB-QN-MJI", "QN-MJI")) return VbVariant::qn_mji;
  if (matches("VB-NCVMP-QMC", "NCVMP-QMC"))
    throw std::invalid_argument(
        "unsupported variant VB-NCVMP-QMC: the covariance fixed-point updates are numerically "
        "unstable under simulated E-LSE gradients");
  throw std::invalid_argument("unknown VB variant: " + name);
}

Eigen::VectorXd Hyperparameters::gamma_rate() const {
  return a_scale.array().square().inverse();
}

void Hyperparameters::validate() const {
  if (xi0.rows() != lambda0.size() || xi0.cols() != lambda0.size())
    throw std::invalid_argument("hyperparameters: Xi0 shape mismatch");
  if (sigma0.rows() != mu0.size() || sigma0.cols() != mu0.size())
    throw std::invalid_argument("hyperparameters: Sigma0 shape mismatch");
  if (a_scale.size() != mu0.size())
    throw std::invalid_argument("hyperparameters: A scale length mismatch");
  if (!(nu > 0.0)) throw std::invalid_argument("hyperparameters: nu must be positive");
  if (a_scale.size() == 0 || a_scale.minCoeff() <= 0.0)
    throw std::invalid_argument("hyperparameters: A_k must be positive");
}

Hyperparameters Hyperparameters::noninformative(int num_fixed, int num_random) {
  Hyperparameters h;
  h.lambda0 = Eigen::VectorXd::Zero(num_fixed);
  h.xi0 = Eigen::MatrixXd::Identity(num_fixed, num_fixed);
  h.mu0 = Eigen::VectorXd::Zero(num_random);
  h.sigma0 = 1e3 * Eigen::MatrixXd::Identity(num_random, num_random);
  h.nu = 2.0;
  h.a_scale = Eigen::VectorXd::Constant(num_random, 1e3);
  return h;
}

double ConvergenceMonitor::push(const Eigen::VectorXd& monitored) {
  history_.push_back(monitored);
  if (static_cast<int>(history_.size()) > window_) history_.pop_front();
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(monitored.size());
  for (const auto& v : history_) avg += v;
  avg /= static_cast<double>(history_.size());
  if (previous_average_) {
    double delta = 0.0;
    for (Eigen::Index i = 0; i < avg.size(); ++i) {
      const double denom = std::max(std::abs((*previous_average_)[i]), 1e-12);
      delta = std::max(delta, std::abs(avg[i] - (*previous_average_)[i]) / denom);
    }
    last_delta_ = delta;
    if (delta < tolerance_) fired_ = true;
  }
  previous_average_ = avg;
  return last_delta_;
}

QmcDrawSet make_qmc_draws(int num_fixed, int num_random, int num_individuals, int num_draws,
                          std::uint64_t seed) {
  QmcDrawSet set;
  set.xi_fixed = num_fixed > 0
                     ? mlhs_normal_draws(num_draws, num_fixed, derive_seed(seed, 0xf1)).draws
                     : Eigen::MatrixXd(num_draws, 0);
  set.xi_random.reserve(static_cast<std::size_t>(num_individuals));
  for (int n = 0; n < num_individuals; ++n)
    set.xi_random.push_back(
        mlhs_normal_draws(num_draws, num_random, derive_seed(seed, 0xd1, static_cast<std::uint64_t>(n)))
            .draws);
  return set;
}

int packed_size(int dim) { return dim + dim * (dim + 1) / 2; }

Eigen::VectorXd pack_factor(const GaussianFactor& factor) {
  const Eigen::Index dim = factor.dim();
  Eigen::VectorXd packed(packed_size(static_cast<int>(dim)));
  packed.head(dim) = factor.mean();
  const Eigen::MatrixXd c = factor.chol();
  Eigen::Index idx = dim;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++idx)
      packed[idx] = (i == j) ? std::log(c(i, i)) : c(i, j);
  return packed;
}

GaussianFactor unpack_factor(const Eigen::Ref<const Eigen::VectorXd>& packed, int dim) {
  if (packed.size() != packed_size(dim))
    throw std::invalid_argument("unpack_factor: packed length mismatch");
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::Index idx = dim;
  for (Eigen::Index i = 0; i < dim; ++i)
    for (Eigen::Index j = 0; j <= i; ++j, ++idx)
      c(i, j) = (i == j) ? std::exp(packed[idx]) : packed[idx];
  return GaussianFactor(packed.head(dim), c * c.transpose());
}

GaussianFactor update_zeta_factor(const Hyperparameters& hyper, const VariationalPosterior& post) {
  const int N = static_cast<int>(post.beta.size());
  const Eigen::MatrixXd theta_inv = solve_spd(post.theta, "update_zeta_factor");
  const Eigen::MatrixXd sigma0_inv = solve_spd(hyper.sigma0, "update_zeta_factor");
  const Eigen::MatrixXd prec = sigma0_inv + N * post.w * theta_inv;
  const Eigen::MatrixXd cov = solve_spd(0.5 * (prec + prec.transpose()), "update_zeta_factor");
  Eigen::VectorXd mu_sum = Eigen::VectorXd::Zero(hyper.num_random());
  for (const auto& b : post.beta) mu_sum += b.mean();
  const Eigen::VectorXd mean = cov * (sigma0_inv * hyper.mu0 + post.w * theta_inv * mu_sum);
  return GaussianFactor(mean, 0.5 * (cov + cov.transpose()));
}

Eigen::MatrixXd update_omega_factor(const Hyperparameters& hyper,
                                    const VariationalPosterior& post) {
  const int N = static_cast<int>(post.beta.size());
  Eigen::MatrixXd theta =
      (2.0 * hyper.nu * post.c) * post.d.array().inverse().matrix().asDiagonal();
  theta += static_cast<double>(N) * post.zeta.cov();
  for (const auto& b : post.beta) {
    const Eigen::VectorXd dev = b.mean() - post.zeta.mean();
    theta += b.cov() + dev * dev.transpose();
  }
  return 0.5 * (theta + theta.transpose());
}

Eigen::VectorXd update_a_factors(const Hyperparameters& hyper, const VariationalPosterior& post) {
  const Eigen::MatrixXd theta_inv = solve_spd(post.theta, "update_a_factors");
  return hyper.gamma_rate() + hyper.nu * post.w * theta_inv.diagonal();
}

namespace {

// --- per-factor objective assembly -------------------------------------

// E-LSE sum and gradients for the alpha subproblem at trial parameters,
// all other factors held at their current values. Returns the summed
// surrogate value; accumulates packed-coordinate gradients when grad is
// nonnull.
double alpha_else_sum(const ChoiceDataset& data, const VariationalPosterior& post,
                      EliseTreatment treatment, const QmcDrawSet* qmc,
                      const GaussianFactor& alpha_trial, Eigen::VectorXd* grad,
                      const std::vector<Eigen::MatrixXd>* qmc_other = nullptr) {
  const int L = static_cast<int>(alpha_trial.dim());
  const Eigen::MatrixXd chol = alpha_trial.chol();
  double total = 0.0;
  const int N = data.num_individuals;
  std::vector<double> partial_value(static_cast<std::size_t>(N), 0.0);
  std::vector<Eigen::VectorXd> partial_grad;
  if (grad) partial_grad.assign(static_cast<std::size_t>(N), Eigen::VectorXd::Zero(grad->size()));

  OmpExceptionGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int n = 0; n < N; ++n) {
    guard.run([&, n]() {
    Eigen::VectorXd local_mu = Eigen::VectorXd::Zero(L);
    Eigen::MatrixXd local_sigma = Eigen::MatrixXd::Zero(L, L);
    Eigen::MatrixXd local_chol = Eigen::MatrixXd::Zero(L, L);
    bool have_sigma = false, have_chol = false;
    double value = 0.0;
    for (int occ = data.occasion_offsets[n]; occ < data.occasion_offsets[n + 1]; ++occ) {
      const OccasionRef o = occasion_ref(data, occ);
      switch (treatment) {
        case EliseTreatment::delta: {
          if (grad) {
            const DeltaEval e = elise_delta_eval(o.xf, o.xr, alpha_trial, post.beta[n]);
            value += e.value;
            local_mu += e.grad_mu_alpha;
            local_sigma += e.grad_sigma_alpha;
            have_sigma = true;
          } else {
            value += elise_delta(o.xf, o.xr, alpha_trial, post.beta[n]);
          }
          break;
        }
        case EliseTreatment::qmc: {
          const Eigen::MatrixXd beta_side =
              qmc_other ? (*qmc_other)[static_cast<std::size_t>(occ)]
                        : qmc_side_utilities(o.xr, post.beta[n],
                                             qmc->xi_random[static_cast<std::size_t>(n)]);
          const QmcEval e = elise_qmc_eval(o.xf, alpha_trial, qmc->xi_fixed, beta_side);
          value += e.value;
          if (grad) {
            local_mu += e.grad_mu;
            local_chol += e.grad_chol;
            have_chol = true;
          }
          break;
        }
        case EliseTreatment::mji: {
          const MjiEval e =
              elise_mji_eval(o.xf, o.xr, alpha_trial, post.beta[n], post.mji_aux[occ]);
          value += e.value;
          if (grad) {
            local_mu += e.grad_mu_alpha;
            local_sigma += e.grad_sigma_alpha;
            have_sigma = true;
          }
          break;
        }
      }
    }
    partial_value[static_cast<std::size_t>(n)] = value;
    if (grad) {
      Eigen::VectorXd& pg = partial_grad[static_cast<std::size_t>(n)];
      pg.head(L) = local_mu;
      if (have_sigma) fold_sigma_grad(local_sigma, chol, pg.tail(pg.size() - L));
      if (have_chol) fold_chol_grad(local_chol, chol, pg.tail(pg.size() - L));
    }
    });
  }
  guard.rethrow();
  for (int n = 0; n < N; ++n) total += partial_value[static_cast<std::size_t>(n)];
  if (grad)
    for (int n = 0; n < N; ++n) *grad += partial_grad[static_cast<std::size_t>(n)];
  return total;
}

double beta_else_sum(const ChoiceDataset& data, const VariationalPosterior& post, int n,
                     EliseTreatment treatment, const QmcDrawSet* qmc,
                     const GaussianFactor& beta_trial, Eigen::VectorXd* grad,
                     const std::vector<Eigen::MatrixXd>* qmc_other = nullptr) {
  const int K = static_cast<int>(beta_trial.dim());
  const Eigen::MatrixXd chol = beta_trial.chol();
  double total = 0.0;
  Eigen::VectorXd local_mu = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd local_sigma = Eigen::MatrixXd::Zero(K, K);
  Eigen::MatrixXd local_chol = Eigen::MatrixXd::Zero(K, K);
  bool have_sigma = false, have_chol = false;
  for (int occ = data.occasion_offsets[n]; occ < data.occasion_offsets[n + 1]; ++occ) {
    const OccasionRef o = occasion_ref(data, occ);
    switch (treatment) {
      case EliseTreatment::delta: {
        if (grad) {
          const DeltaEval e = elise_delta_eval(o.xf, o.xr, post.alpha, beta_trial);
          total += e.value;
          local_mu += e.grad_mu_beta;
          local_sigma += e.grad_sigma_beta;
          have_sigma = true;
        } else {
          total += elise_delta(o.xf, o.xr, post.alpha, beta_trial);
        }
        break;
      }
      case EliseTreatment::qmc: {
        const int local = occ - data.occasion_offsets[n];
        const Eigen::MatrixXd alpha_side =
            qmc_other ? (*qmc_other)[static_cast<std::size_t>(local)]
                      : qmc_side_utilities(o.xf, post.alpha, qmc->xi_fixed);
        const QmcEval e = elise_qmc_eval(o.xr, beta_trial,
                                         qmc->xi_random[static_cast<std::size_t>(n)], alpha_side);
        total += e.value;
        if (grad) {
          local_mu += e.grad_mu;
          local_chol += e.grad_chol;
          have_chol = true;
        }
        break;
      }
      case EliseTreatment::mji: {
        const MjiEval e = elise_mji_eval(o.xf, o.xr, post.alpha, beta_trial, post.mji_aux[occ]);
        total += e.value;
        local_mu += e.grad_mu_beta;
        local_sigma += e.grad_sigma_beta;
        have_sigma = true;
        break;
      }
    }
  }
  if (grad) {
    grad->head(K) += local_mu;
    if (have_sigma) fold_sigma_grad(local_sigma, chol, grad->tail(grad->size() - K));
    if (have_chol) fold_chol_grad(local_chol, chol, grad->tail(grad->size() - K));
  }
  return total;
}

// Gaussian-prior-plus-entropy tail shared by both subproblems:
//   -0.5 (mu - m)' P (mu - m) - 0.5 tr(P Sigma) + 0.5 ln |Sigma|
double prior_entropy_terms(const GaussianFactor& trial, const Eigen::VectorXd& prior_mean,
                           const Eigen::MatrixXd& prior_precision, Eigen::VectorXd* grad) {
  const Eigen::Index dim = trial.dim();
  const Eigen::VectorXd dev = trial.mean() - prior_mean;
  const Eigen::MatrixXd chol = trial.chol();
  double logdet_half = 0.0;
  for (Eigen::Index i = 0; i < dim; ++i) logdet_half += std::log(chol(i, i));
  const double value = -0.5 * dev.dot(prior_precision * dev) -
                       0.5 * (prior_precision * trial.cov()).trace() + logdet_half;
  if (grad) {
    grad->head(dim) -= prior_precision * dev;
    fold_sigma_grad(Eigen::MatrixXd(-0.5 * prior_precision), chol,
                    grad->tail(grad->size() - dim));
    // Entropy: d/d(log C_ii) of sum_i ln C_ii is exactly one.
    Eigen::Index idx = dim;
    for (Eigen::Index i = 0; i < dim; ++i)
      for (Eigen::Index j = 0; j <= i; ++j, ++idx)
        if (i == j) (*grad)[idx] += 1.0;
  }
  return value;
}

Eigen::VectorXd chosen_attr_sum_fixed(const ChoiceDataset& data) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(data.num_fixed());
  for (int occ = 0; occ < data.total_occasions(); ++occ) {
    const int row = occ * data.num_alternatives + data.choices[occ];
    s += data.fixed_attrs.row(row);
  }
  return s;
}

Eigen::VectorXd chosen_attr_sum_random(const ChoiceDataset& data, int n) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(data.num_random());
  for (int occ = data.occasion_offsets[n]; occ < data.occasion_offsets[n + 1]; ++occ) {
    const int row = occ * data.num_alternatives + data.choices[occ];
    s += data.random_attrs.row(row);
  }
  return s;
}

}  // namespace

namespace {

double qn_alpha_objective_impl(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                               const VariationalPosterior& post, EliseTreatment treatment,
                               const QmcDrawSet* qmc, const Eigen::VectorXd& packed,
                               Eigen::VectorXd* grad,
                               const std::vector<Eigen::MatrixXd>* qmc_other) {
  const int L = hyper.num_fixed();
  const GaussianFactor trial = unpack_factor(packed, L);
  if (grad) grad->setZero(packed.size());
  const Eigen::VectorXd ysum = chosen_attr_sum_fixed(dataset);
  double value = ysum.dot(trial.mean());
  if (grad) grad->head(L) += ysum;
  Eigen::VectorXd else_grad;
  if (grad) else_grad.setZero(packed.size());
  value -= alpha_else_sum(dataset, post, treatment, qmc, trial, grad ? &else_grad : nullptr,
                          qmc_other);
  if (grad) *grad -= else_grad;
  const Eigen::MatrixXd xi0_inv = solve_spd(hyper.xi0, "qn_alpha_objective");
  value += prior_entropy_terms(trial, hyper.lambda0, xi0_inv, grad);
  return value;
}

double qn_beta_objective_impl(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                              const VariationalPosterior& post, int n, EliseTreatment treatment,
                              const QmcDrawSet* qmc, const Eigen::VectorXd& packed,
                              Eigen::VectorXd* grad,
                              const std::vector<Eigen::MatrixXd>* qmc_other) {
  const int K = hyper.num_random();
  const GaussianFactor trial = unpack_factor(packed, K);
  if (grad) grad->setZero(packed.size());
  const Eigen::VectorXd ysum = chosen_attr_sum_random(dataset, n);
  double value = ysum.dot(trial.mean());
  if (grad) grad->head(K) += ysum;
  Eigen::VectorXd else_grad;
  if (grad) else_grad.setZero(packed.size());
  value -= beta_else_sum(dataset, post, n, treatment, qmc, trial, grad ? &else_grad : nullptr,
                         qmc_other);
  if (grad) *grad -= else_grad;
  const Eigen::MatrixXd prior_prec = post.w * solve_spd(post.theta, "qn_beta_objective");
  value += prior_entropy_terms(trial, post.zeta.mean(), prior_prec, grad);
  return value;
}

// Guard for line-search trial points: overflow in the log-diagonal
// parameterization surfaces as an exception or a non-finite value, which
// the line search treats as "step too far".
Objective guarded_negation(std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)> fn) {
  return [fn](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    try {
      Eigen::VectorXd grad;
      const double v = fn(x, &grad);
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
}

}  // namespace

double qn_alpha_objective(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                          const VariationalPosterior& post, EliseTreatment treatment,
                          const QmcDrawSet* qmc, const Eigen::VectorXd& packed,
                          Eigen::VectorXd* grad) {
  return qn_alpha_objective_impl(dataset, hyper, post, treatment, qmc, packed, grad, nullptr);
}

double qn_beta_objective(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                         const VariationalPosterior& post, int n, EliseTreatment treatment,
                         const QmcDrawSet* qmc, const Eigen::VectorXd& packed,
                         Eigen::VectorXd* grad) {
  return qn_beta_objective_impl(dataset, hyper, post, n, treatment, qmc, packed, grad, nullptr);
}

FactorUpdateResult qn_update_alpha(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                   const VariationalPosterior& post, EliseTreatment treatment,
                                   const QmcDrawSet* qmc, int max_iterations) {
  FactorUpdateResult out;
  if (hyper.num_fixed() == 0) {
    out.factor = post.alpha;
    return out;
  }
  // The beta-side simulated utilities are constant during this update.
  std::vector<Eigen::MatrixXd> cache;
  const std::vector<Eigen::MatrixXd>* cache_ptr = nullptr;
  if (treatment == EliseTreatment::qmc) {
    cache.resize(static_cast<std::size_t>(dataset.total_occasions()));
    for (int n = 0; n < dataset.num_individuals; ++n)
      for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1]; ++occ)
        cache[static_cast<std::size_t>(occ)] = qmc_side_utilities(
            occasion_ref(dataset, occ).xr, post.beta[static_cast<std::size_t>(n)],
            qmc->xi_random[static_cast<std::size_t>(n)]);
    cache_ptr = &cache;
  }
  Objective objective = guarded_negation([&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return qn_alpha_objective_impl(dataset, hyper, post, treatment, qmc, x, g, cache_ptr);
  });
  BfgsOptions opts;
  opts.max_iterations = max_iterations;
  const Eigen::VectorXd start = pack_factor(post.alpha);
  const BfgsResult res = bfgs_minimize(objective, start, opts);
  out.factor = unpack_factor(res.x, hyper.num_fixed());
  out.objective_before =
      qn_alpha_objective_impl(dataset, hyper, post, treatment, qmc, start, nullptr, cache_ptr);
  out.objective_after = -res.value;
  out.line_search_failed = res.line_search_failed && res.iterations == 0;
  return out;
}

FactorUpdateResult qn_update_beta(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                  const VariationalPosterior& post, int n,
                                  EliseTreatment treatment, const QmcDrawSet* qmc,
                                  int max_iterations) {
  FactorUpdateResult out;
  std::vector<Eigen::MatrixXd> cache;
  const std::vector<Eigen::MatrixXd>* cache_ptr = nullptr;
  if (treatment == EliseTreatment::qmc) {
    for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1]; ++occ)
      cache.push_back(qmc_side_utilities(occasion_ref(dataset, occ).xf, post.alpha, qmc->xi_fixed));
    cache_ptr = &cache;
  }
  Objective objective = guarded_negation([&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return qn_beta_objective_impl(dataset, hyper, post, n, treatment, qmc, x, g, cache_ptr);
  });
  BfgsOptions opts;
  opts.max_iterations = max_iterations;
  const Eigen::VectorXd start = pack_factor(post.beta[static_cast<std::size_t>(n)]);
  const BfgsResult res = bfgs_minimize(objective, start, opts);
  out.factor = unpack_factor(res.x, hyper.num_random());
  out.objective_before =
      qn_beta_objective_impl(dataset, hyper, post, n, treatment, qmc, start, nullptr, cache_ptr);
  out.objective_after = -res.value;
  out.line_search_failed = res.line_search_failed && res.iterations == 0;
  return out;
}

void ncvmp_alpha_gradients(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                           const VariationalPosterior& post, EliseTreatment treatment,
                           Eigen::VectorXd* grad_mu, Eigen::MatrixXd* grad_sigma) {
  const int L = hyper.num_fixed();
  const int N = dataset.num_individuals;
  Eigen::VectorXd mu_acc = Eigen::VectorXd::Zero(L);
  Eigen::MatrixXd sigma_acc = Eigen::MatrixXd::Zero(L, L);
  std::vector<Eigen::VectorXd> pmu(static_cast<std::size_t>(N), Eigen::VectorXd::Zero(L));
  std::vector<Eigen::MatrixXd> psig(static_cast<std::size_t>(N), Eigen::MatrixXd::Zero(L, L));
  OmpExceptionGuard guard;
#pragma omp parallel for schedule(dynamic)
  for (int n = 0; n < N; ++n) {
    guard.run([&, n]() {
    for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1]; ++occ) {
      const OccasionRef o = occasion_ref(dataset, occ);
      if (treatment == EliseTreatment::delta) {
        const DeltaEval e = elise_delta_eval(o.xf, o.xr, post.alpha, post.beta[n]);
        pmu[static_cast<std::size_t>(n)] += e.grad_mu_alpha;
        psig[static_cast<std::size_t>(n)] += e.grad_sigma_alpha;
      } else {
        const MjiEval e = elise_mji_eval(o.xf, o.xr, post.alpha, post.beta[n], post.mji_aux[occ]);
        pmu[static_cast<std::size_t>(n)] += e.grad_mu_alpha;
        psig[static_cast<std::size_t>(n)] += e.grad_sigma_alpha;
      }
    }
    });
  }
  guard.rethrow();
  for (int n = 0; n < N; ++n) {
    mu_acc += pmu[static_cast<std::size_t>(n)];
    sigma_acc += psig[static_cast<std::size_t>(n)];
  }
  const Eigen::MatrixXd xi0_inv = solve_spd(hyper.xi0, "ncvmp_alpha_gradients");
  *grad_mu = chosen_attr_sum_fixed(dataset) - mu_acc - xi0_inv * (post.alpha.mean() - hyper.lambda0);
  *grad_sigma = -sigma_acc - 0.5 * xi0_inv;
}

void ncvmp_beta_gradients(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                          const VariationalPosterior& post, int n, EliseTreatment treatment,
                          Eigen::VectorXd* grad_mu, Eigen::MatrixXd* grad_sigma) {
  const int K = hyper.num_random();
  Eigen::VectorXd mu_acc = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd sigma_acc = Eigen::MatrixXd::Zero(K, K);
  const auto& bn = post.beta[static_cast<std::size_t>(n)];
  for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1]; ++occ) {
    const OccasionRef o = occasion_ref(dataset, occ);
    if (treatment == EliseTreatment::delta) {
      const DeltaEval e = elise_delta_eval(o.xf, o.xr, post.alpha, bn);
      mu_acc += e.grad_mu_beta;
      sigma_acc += e.grad_sigma_beta;
    } else {
      const MjiEval e = elise_mji_eval(o.xf, o.xr, post.alpha, bn, post.mji_aux[occ]);
      mu_acc += e.grad_mu_beta;
      sigma_acc += e.grad_sigma_beta;
    }
  }
  const Eigen::MatrixXd theta_inv = solve_spd(post.theta, "ncvmp_beta_gradients");
  *grad_mu = chosen_attr_sum_random(dataset, n) - mu_acc -
             post.w * theta_inv * (bn.mean() - post.zeta.mean());
  *grad_sigma = -sigma_acc - 0.5 * post.w * theta_inv;
}

namespace {

// Shared NCVMP fixed-point step: new Sigma from the covariance gradient,
// then a mean step preconditioned by the new Sigma. The eigenvalue guard
// keeps the previous covariance when the fixed point leaves the PD cone.
FactorUpdateResult ncvmp_step(const GaussianFactor& current, const Eigen::VectorXd& grad_mu,
                              const Eigen::MatrixXd& grad_sigma) {
  FactorUpdateResult out;
  const Eigen::MatrixXd neg2g = -2.0 * grad_sigma;
  const Eigen::MatrixXd precision = 0.5 * (neg2g + neg2g.transpose());
  Eigen::MatrixXd sigma_new;
  bool ok = false;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() == Eigen::Success) {
    const Eigen::MatrixXd inv =
        llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols()));
    sigma_new = 0.5 * (inv + inv.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_new);
    ok = es.info() == Eigen::Success && es.eigenvalues().minCoeff() >= kSafeguardEigenFloor;
  }
  if (!ok) {
    sigma_new = current.cov();
    out.safeguarded = true;
  }
  const Eigen::VectorXd mean_new = current.mean() + sigma_new * grad_mu;
  out.factor = GaussianFactor(mean_new, sigma_new);
  return out;
}

}  // namespace

FactorUpdateResult ncvmp_update_alpha(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                      const VariationalPosterior& post, EliseTreatment treatment) {
  if (hyper.num_fixed() == 0) return FactorUpdateResult{post.alpha, 0.0, 0.0, false, false};
  Eigen::VectorXd grad_mu;
  Eigen::MatrixXd grad_sigma;
  ncvmp_alpha_gradients(dataset, hyper, post, treatment, &grad_mu, &grad_sigma);
  return ncvmp_step(post.alpha, grad_mu, grad_sigma);
}

FactorUpdateResult ncvmp_update_beta(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                                     const VariationalPosterior& post, int n,
                                     EliseTreatment treatment) {
  Eigen::VectorXd grad_mu;
  Eigen::MatrixXd grad_sigma;
  ncvmp_beta_gradients(dataset, hyper, post, n, treatment, &grad_mu, &grad_sigma);
  return ncvmp_step(post.beta[static_cast<std::size_t>(n)], grad_mu, grad_sigma);
}

double vb_expected_log_joint(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                             const VariationalPosterior& post, EliseTreatment treatment) {
  if (treatment == EliseTreatment::qmc)
    throw std::invalid_argument("vb_expected_log_joint: not defined for the QMC treatment");
  double value = 0.0;
  for (int n = 0; n < dataset.num_individuals; ++n) {
    const auto& bn = post.beta[static_cast<std::size_t>(n)];
    for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1]; ++occ) {
      const OccasionRef o = occasion_ref(dataset, occ);
      const int row = occ * dataset.num_alternatives + o.chosen;
      value += dataset.random_attrs.row(row).dot(bn.mean());
      if (hyper.num_fixed() > 0) value += dataset.fixed_attrs.row(row).dot(post.alpha.mean());
      value -= treatment == EliseTreatment::delta
                   ? elise_delta(o.xf, o.xr, post.alpha, bn)
                   : elise_mji_bound(o.xf, o.xr, post.alpha, bn, post.mji_aux[occ]);
    }
  }
  if (hyper.num_fixed() > 0) {
    const Eigen::MatrixXd xi0_inv = solve_spd(hyper.xi0, "vb_expected_log_joint");
    const Eigen::VectorXd dev = post.alpha.mean() - hyper.lambda0;
    value += -0.5 * dev.dot(xi0_inv * dev) - 0.5 * (xi0_inv * post.alpha.cov()).trace();
  }
  const Eigen::MatrixXd theta_inv = solve_spd(post.theta, "vb_expected_log_joint");
  for (const auto& bn : post.beta) {
    const Eigen::VectorXd dev = bn.mean() - post.zeta.mean();
    value += -0.5 * post.w * dev.dot(theta_inv * dev) -
             0.5 * post.w * (theta_inv * bn.cov()).trace();
  }
  return value;
}

VbPointEstimates vb_point_estimates(const VariationalPosterior& posterior) {
  const int K = static_cast<int>(posterior.theta.rows());
  if (!(posterior.w > K + 1))
    throw std::invalid_argument("vb_point_estimates: w must exceed K + 1");
  VbPointEstimates est;
  est.alpha = posterior.alpha.mean();
  est.zeta = posterior.zeta.mean();
  est.omega = posterior.theta / (posterior.w - K - 1);
  est.betas.resize(static_cast<Eigen::Index>(posterior.beta.size()), K);
  for (std::size_t n = 0; n < posterior.beta.size(); ++n)
    est.betas.row(static_cast<Eigen::Index>(n)) = posterior.beta[n].mean().transpose();
  return est;
}

VbResult run_vb(const ChoiceDataset& dataset, const Hyperparameters& hyper,
                const VbConfig& config) {
  dataset.validate();
  hyper.validate();
  if (hyper.num_fixed() != dataset.num_fixed() || hyper.num_random() != dataset.num_random())
    throw std::invalid_argument("run_vb: hyperparameter dimensions do not match the dataset");

  const auto t_start = std::chrono::steady_clock::now();
  const int N = dataset.num_individuals;
  const int K = hyper.num_random();
  const int L = hyper.num_fixed();
  const EliseTreatment treatment = treatment_of(config.variant);
  const bool qn = uses_quasi_newton(config.variant);

  VbResult res;
  VariationalPosterior& post = res.posterior;
  if (config.init) {
    post = *config.init;
    if (static_cast<int>(post.beta.size()) != N)
      throw std::invalid_argument("run_vb: init state has wrong number of beta factors");
    if (post.d.size() != K)
      throw std::invalid_argument("run_vb: init state has wrong gamma-rate length");
  } else {
    post.alpha = GaussianFactor(Eigen::VectorXd::Zero(L), Eigen::MatrixXd::Identity(L, L));
    post.zeta = GaussianFactor(Eigen::VectorXd::Zero(K), Eigen::MatrixXd::Identity(K, K));
    post.beta.assign(static_cast<std::size_t>(N),
                     GaussianFactor(Eigen::VectorXd::Zero(K), Eigen::MatrixXd::Identity(K, K)));
  }
  post.w = hyper.nu + N + K - 1;
  post.c = 0.5 * (hyper.nu + K);
  if (!config.init)
    post.d = hyper.gamma_rate() + Eigen::VectorXd::Constant(K, hyper.nu * post.w);
  post.theta = update_omega_factor(hyper, post);

  if (treatment == EliseTreatment::mji) {
    if (post.mji_aux.empty())
      post.mji_aux.assign(static_cast<std::size_t>(dataset.total_occasions()),
                          Eigen::VectorXd::Constant(dataset.num_alternatives,
                                                    1.0 / dataset.num_alternatives));
  }
  QmcDrawSet qmc;
  if (treatment == EliseTreatment::qmc)
    qmc = make_qmc_draws(L, K, N, config.qmc_draws, derive_seed(config.seed, 0x716d63));

  std::ofstream trace;
  if (!config.trace_path.empty()) {
    trace.open(config.trace_path);
    trace << "iteration,delta,alpha_ms,beta_ms,conjugate_ms,aux_ms";
    for (int i = 0; i < L; ++i) trace << ",mu_alpha_" << i;
    for (int i = 0; i < K; ++i) trace << ",mu_zeta_" << i;
    for (int i = 0; i < K; ++i) trace << ",theta_diag_" << i;
    for (int i = 0; i < K; ++i) trace << ",d_" << i;
    trace << "\n";
  }

  ConvergenceMonitor monitor(config.tolerance);
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  try {
    for (int iter = 1; iter <= config.max_iterations; ++iter) {
      // Nonconjugate factor updates first, per the coordinate ascent order.
      auto t0 = clock::now();
      if (L > 0) {
        const FactorUpdateResult up =
            qn ? qn_update_alpha(dataset, hyper, post, treatment, &qmc, config.qn_max_iterations)
               : ncvmp_update_alpha(dataset, hyper, post, treatment);
        post.alpha = up.factor;
        res.safeguard_hits += up.safeguarded ? 1 : 0;
        res.line_search_failures += up.line_search_failed ? 1 : 0;
      }
      const double alpha_ms = ms_since(t0);

      t0 = clock::now();
      std::vector<GaussianFactor> next_beta(static_cast<std::size_t>(N));
      std::vector<int> flags(static_cast<std::size_t>(N), 0);
      OmpExceptionGuard beta_guard;
#pragma omp parallel for schedule(dynamic)
      for (int n = 0; n < N; ++n) {
        beta_guard.run([&, n]() {
          const FactorUpdateResult up =
              qn ? qn_update_beta(dataset, hyper, post, n, treatment, &qmc,
                                  config.qn_max_iterations)
                 : ncvmp_update_beta(dataset, hyper, post, n, treatment);
          next_beta[static_cast<std::size_t>(n)] = up.factor;
          flags[static_cast<std::size_t>(n)] =
              (up.safeguarded ? 1 : 0) | (up.line_search_failed ? 2 : 0);
        });
      }
      beta_guard.rethrow();
      post.beta = std::move(next_beta);
      for (int f : flags) {
        res.safeguard_hits += f & 1;
        res.line_search_failures += (f >> 1) & 1;
      }
      const double beta_ms = ms_since(t0);

      t0 = clock::now();
      post.zeta = update_zeta_factor(hyper, post);
      post.theta = update_omega_factor(hyper, post);
      post.d = update_a_factors(hyper, post);
      const double conj_ms = ms_since(t0);

      t0 = clock::now();
      if (treatment == EliseTreatment::mji) {
        std::vector<int> aux_flags(static_cast<std::size_t>(dataset.total_occasions()), 0);
        OmpExceptionGuard aux_guard;
#pragma omp parallel for schedule(dynamic)
        for (int n = 0; n < N; ++n) {
          aux_guard.run([&, n]() {
            for (int occ = dataset.occasion_offsets[n]; occ < dataset.occasion_offsets[n + 1];
                 ++occ) {
              const OccasionRef o = occasion_ref(dataset, occ);
              bool ok = true;
              post.mji_aux[static_cast<std::size_t>(occ)] =
                  mji_refresh_aux(o.xf, o.xr, post.alpha, post.beta[static_cast<std::size_t>(n)],
                                  post.mji_aux[static_cast<std::size_t>(occ)], &ok);
              aux_flags[static_cast<std::size_t>(occ)] = ok ? 0 : 1;
            }
          });
        }
        aux_guard.rethrow();
        for (int f : aux_flags) res.aux_failures += f;
      }
      const double aux_ms = ms_since(t0);

      Eigen::VectorXd monitored(L + 3 * K);
      monitored.head(L) = post.alpha.mean();
      monitored.segment(L, K) = post.zeta.mean();
      monitored.segment(L + K, K) = post.theta.diagonal();
      monitored.tail(K) = post.d;
      const double delta = monitor.push(monitored);
      res.delta_trace.push_back(delta);
      res.iterations = iter;

      if (trace.is_open()) {
        trace << iter << ',' << delta << ',' << alpha_ms << ',' << beta_ms << ',' << conj_ms << ','
              << aux_ms;
        for (Eigen::Index i = 0; i < monitored.size(); ++i) trace << ',' << monitored[i];
        trace << "\n";
      }
      if (monitor.fired()) {
        res.converged = true;
        break;
      }
    }
  } catch (const std::exception& e) {
    res.aborted = true;
    res.diagnostic = e.what();
  }
  res.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  return res;
}

}  // namespace mixl
