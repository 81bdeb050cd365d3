#include "mixl/elise.hpp"

#include <cmath>
#include <stdexcept>

#include "mixl/mnl.hpp"

namespace mixl {

namespace {

void check_occasion(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                    const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                    const GaussianFactor& beta) {
  if (xf.rows() != xr.rows()) throw std::invalid_argument("elise: attribute row mismatch");
  if (xf.cols() != alpha.dim() || xr.cols() != beta.dim())
    throw std::invalid_argument("elise: factor dimension mismatch");
  if (xr.rows() < 1) throw std::invalid_argument("elise: empty choice set");
}

Eigen::VectorXd mean_utilities(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                               const Eigen::Ref<const Eigen::MatrixXd>& xr,
                               const GaussianFactor& alpha, const GaussianFactor& beta) {
  Eigen::VectorXd v = xr * beta.mean();
  if (alpha.dim() > 0) v += xf * alpha.mean();
  return v;
}

void check_simplex(const Eigen::Ref<const Eigen::VectorXd>& a, Eigen::Index J) {
  if (a.size() != J) throw std::invalid_argument("elise: auxiliary vector length mismatch");
  if (a.minCoeff() < -1e-12 || std::abs(a.sum() - 1.0) > 1e-10)
    throw std::invalid_argument("elise: auxiliary vector is not on the simplex");
}

// Exponent of the auxiliary fixed-point map:
//   X_j Gamma0 + 0.5 * (X_j - 2 xbar) V X_j'
// with the block structure of X and V spelled out.
Eigen::VectorXd aux_map_exponents(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                                  const Eigen::Ref<const Eigen::MatrixXd>& xr,
                                  const GaussianFactor& alpha, const GaussianFactor& beta,
                                  const Eigen::Ref<const Eigen::VectorXd>& a) {
  const Eigen::Index J = xr.rows();
  Eigen::VectorXd e = mean_utilities(xf, xr, alpha, beta);
  const Eigen::RowVectorXd xbar_r = a.transpose() * xr;
  Eigen::MatrixXd sr = xr * beta.cov();  // J x K, rows X_jR * Sigma_b
  for (Eigen::Index j = 0; j < J; ++j)
    e[j] += 0.5 * (xr.row(j) - 2.0 * xbar_r).dot(sr.row(j));
  if (alpha.dim() > 0) {
    const Eigen::RowVectorXd xbar_f = a.transpose() * xf;
    Eigen::MatrixXd sf = xf * alpha.cov();
    for (Eigen::Index j = 0; j < J; ++j)
      e[j] += 0.5 * (xf.row(j) - 2.0 * xbar_f).dot(sf.row(j));
  }
  return e;
}

}  // namespace

DeltaEval elise_delta_eval(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                           const Eigen::Ref<const Eigen::MatrixXd>& xr,
                           const GaussianFactor& alpha, const GaussianFactor& beta) {
  check_occasion(xf, xr, alpha, beta);
  const Eigen::Index J = xr.rows();
  const Eigen::VectorXd v = mean_utilities(xf, xr, alpha, beta);
  const Eigen::VectorXd p = choice_probabilities(v);

  // M = X_R Sigma_b X_R' + X_F Sigma_a X_F' collects both covariance
  // blocks; the curvature term is 0.5 tr(H M) with H = diag(p) - p p'.
  Eigen::MatrixXd m = xr * beta.cov() * xr.transpose();
  if (alpha.dim() > 0) m += xf * alpha.cov() * xf.transpose();

  const Eigen::VectorXd mdiag = m.diagonal();
  const Eigen::VectorXd mp = m * p;
  const double p_mdiag = p.dot(mdiag);
  const double pmp = p.dot(mp);

  DeltaEval out;
  out.value = log_sum_exp(v) + 0.5 * (p_mdiag - pmp);

  // d/dv of tr(H M): third-order term entering the mean gradients.
  Eigen::VectorXd u(J);
  for (Eigen::Index j = 0; j < J; ++j)
    u[j] = p[j] * (mdiag[j] - p_mdiag - 2.0 * mp[j] + 2.0 * pmp);

  const Eigen::VectorXd g = p + 0.5 * u;
  out.grad_mu_beta = xr.transpose() * g;
  out.grad_mu_alpha = alpha.dim() > 0 ? Eigen::VectorXd(xf.transpose() * g) : Eigen::VectorXd(0);

  Eigen::MatrixXd h = softmax_curvature(p);
  out.grad_sigma_beta = 0.5 * xr.transpose() * h * xr;
  out.grad_sigma_alpha = alpha.dim() > 0 ? Eigen::MatrixXd(0.5 * xf.transpose() * h * xf)
                                         : Eigen::MatrixXd(0, 0);
  return out;
}

double elise_delta(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                   const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                   const GaussianFactor& beta) {
  check_occasion(xf, xr, alpha, beta);
  const Eigen::VectorXd v = mean_utilities(xf, xr, alpha, beta);
  const Eigen::VectorXd p = choice_probabilities(v);
  Eigen::MatrixXd m = xr * beta.cov() * xr.transpose();
  if (alpha.dim() > 0) m += xf * alpha.cov() * xf.transpose();
  return log_sum_exp(v) + 0.5 * (p.dot(m.diagonal()) - p.dot(m * p));
}

Eigen::MatrixXd qmc_side_utilities(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                   const GaussianFactor& factor,
                                   const Eigen::Ref<const Eigen::MatrixXd>& xi) {
  const Eigen::Index J = x.rows();
  const Eigen::Index D = xi.rows();
  if (x.cols() != factor.dim() || xi.cols() != factor.dim())
    throw std::invalid_argument("qmc_side_utilities: dimension mismatch");
  if (factor.dim() == 0) return Eigen::MatrixXd::Zero(J, D);
  Eigen::MatrixXd u = (x * factor.mean()).replicate(1, D);
  u.noalias() += (x * factor.chol()) * xi.transpose();
  return u;
}

QmcEval elise_qmc_eval(const Eigen::Ref<const Eigen::MatrixXd>& x_active,
                       const GaussianFactor& active,
                       const Eigen::Ref<const Eigen::MatrixXd>& xi_active,
                       const Eigen::Ref<const Eigen::MatrixXd>& other_utilities) {
  const Eigen::Index D = xi_active.rows();
  if (other_utilities.cols() != D || other_utilities.rows() != x_active.rows())
    throw std::invalid_argument("elise_qmc_eval: draw count mismatch");
  const Eigen::Index dim = active.dim();
  QmcEval out;
  out.grad_mu = Eigen::VectorXd::Zero(dim);
  out.grad_chol = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::MatrixXd util = other_utilities;
  if (dim > 0) {
    util.colwise() += x_active * active.mean();
    util.noalias() += (x_active * active.chol()) * xi_active.transpose();
  }
  double acc = 0.0;
  for (Eigen::Index d = 0; d < D; ++d) {
    acc += log_sum_exp(util.col(d));
    if (dim > 0) {
      const Eigen::VectorXd p = choice_probabilities(util.col(d));
      const Eigen::VectorXd xp = x_active.transpose() * p;
      out.grad_mu += xp;
      out.grad_chol += xp * xi_active.row(d);
    }
  }
  out.value = acc / static_cast<double>(D);
  if (dim > 0) {
    out.grad_mu /= static_cast<double>(D);
    out.grad_chol /= static_cast<double>(D);
    out.grad_chol = out.grad_chol.triangularView<Eigen::Lower>();
  }
  return out;
}

double elise_qmc(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                 const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                 const GaussianFactor& beta, const Eigen::Ref<const Eigen::MatrixXd>& xi_f,
                 const Eigen::Ref<const Eigen::MatrixXd>& xi_r) {
  check_occasion(xf, xr, alpha, beta);
  if (xi_f.rows() != xi_r.rows()) throw std::invalid_argument("elise_qmc: draw count mismatch");
  const Eigen::MatrixXd alpha_side = qmc_side_utilities(xf, alpha, xi_f);
  return elise_qmc_eval(xr, beta, xi_r, alpha_side).value;
}

MjiEval elise_mji_eval(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                       const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                       const GaussianFactor& beta, const Eigen::Ref<const Eigen::VectorXd>& aux) {
  check_occasion(xf, xr, alpha, beta);
  const Eigen::Index J = xr.rows();
  check_simplex(aux, J);
  const Eigen::Index L = alpha.dim();
  const Eigen::Index K = beta.dim();

  const Eigen::RowVectorXd xbar_r = aux.transpose() * xr;
  const Eigen::MatrixXd cr = xr.rowwise() - xbar_r;  // centered random block
  Eigen::MatrixXd cf(J, L);
  if (L > 0) cf = xf.rowwise() - Eigen::RowVectorXd(aux.transpose() * xf);

  // Exponents z_j + q_j / 2 of the bound's log-sum term.
  Eigen::VectorXd e = cr * beta.mean();
  const Eigen::MatrixXd cr_sig = cr * beta.cov();
  for (Eigen::Index j = 0; j < J; ++j) e[j] += 0.5 * cr.row(j).dot(cr_sig.row(j));
  Eigen::MatrixXd cf_sig;
  if (L > 0) {
    e += cf * alpha.mean();
    cf_sig = cf * alpha.cov();
    for (Eigen::Index j = 0; j < J; ++j) e[j] += 0.5 * cf.row(j).dot(cf_sig.row(j));
  }

  MjiEval out;
  double anchor = aux.dot(xr * beta.mean());
  if (L > 0) anchor += aux.dot(xf * alpha.mean());
  out.value = anchor + log_sum_exp(e);

  const Eigen::VectorXd s = choice_probabilities(e);
  out.grad_mu_beta = xr.transpose() * aux + cr.transpose() * s;
  out.grad_sigma_beta = 0.5 * cr.transpose() * s.asDiagonal() * cr;
  if (L > 0) {
    out.grad_mu_alpha = xf.transpose() * aux + cf.transpose() * s;
    out.grad_sigma_alpha = 0.5 * cf.transpose() * s.asDiagonal() * cf;
  } else {
    out.grad_mu_alpha.resize(0);
    out.grad_sigma_alpha.resize(0, 0);
  }
  return out;
}

double elise_mji_bound(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                       const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                       const GaussianFactor& beta, const Eigen::Ref<const Eigen::VectorXd>& aux) {
  return elise_mji_eval(xf, xr, alpha, beta, aux).value;
}

Eigen::VectorXd mji_refresh_aux(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                                const Eigen::Ref<const Eigen::MatrixXd>& xr,
                                const GaussianFactor& alpha, const GaussianFactor& beta,
                                const Eigen::Ref<const Eigen::VectorXd>& aux_start,
                                bool* converged, double tol, int max_sweeps) {
  check_occasion(xf, xr, alpha, beta);
  check_simplex(aux_start, xr.rows());
  Eigen::VectorXd a = aux_start;
  bool ok = false;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    const Eigen::VectorXd target = choice_probabilities(aux_map_exponents(xf, xr, alpha, beta, a));
    // Damped step: plain substitution can oscillate on near-symmetric sets.
    Eigen::VectorXd next = 0.5 * (a + target);
    const double change = (next - a).cwiseAbs().maxCoeff();
    a = next;
    if (change < tol) {
      ok = true;
      break;
    }
  }
  if (converged) *converged = ok;
  return a;
}

double mji_aux_residual(const Eigen::Ref<const Eigen::MatrixXd>& xf,
                        const Eigen::Ref<const Eigen::MatrixXd>& xr, const GaussianFactor& alpha,
                        const GaussianFactor& beta, const Eigen::Ref<const Eigen::VectorXd>& aux) {
  const Eigen::VectorXd target = choice_probabilities(aux_map_exponents(xf, xr, alpha, beta, aux));
  return (target - aux).cwiseAbs().maxCoeff();
}

}  // namespace mixl
