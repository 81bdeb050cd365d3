#include <doctest.h>

#include "mixl/draws.hpp"
#include "mixl/elise.hpp"
#include "mixl/mnl.hpp"
#include "support/elise_fixtures.hpp"
#include "support/testutil.hpp"

using namespace mixl;

namespace {

GaussianFactor zero_cov_factor(const Eigen::VectorXd& mean) {
  return GaussianFactor(mean, 1e-14 * Eigen::MatrixXd::Identity(mean.size(), mean.size()));
}

GaussianFactor empty_factor() { return GaussianFactor(Eigen::VectorXd(0), Eigen::MatrixXd(0, 0)); }

}  // namespace

TEST_CASE("delta reduces to plain LSE at zero variance") {
  std::mt19937_64 eng(1);
  const Eigen::MatrixXd xr = Eigen::MatrixXd::Random(3, 2);
  const Eigen::MatrixXd xf = Eigen::MatrixXd::Random(3, 2);
  const Eigen::VectorXd mu_b = testutil::random_vector(2, eng);
  const Eigen::VectorXd mu_a = testutil::random_vector(2, eng);
  const double got = elise_delta(xf, xr, zero_cov_factor(mu_a), zero_cov_factor(mu_b));
  CHECK(got == doctest::Approx(log_sum_exp(xf * mu_a + xr * mu_b)).epsilon(1e-10));
}

TEST_CASE("all treatments are exact for a single alternative") {
  std::mt19937_64 eng(2);
  const Eigen::MatrixXd xr = Eigen::MatrixXd::Random(1, 3);
  const Eigen::MatrixXd xf(1, 0);
  const GaussianFactor beta = testutil::random_factor(3, eng);
  const GaussianFactor alpha = empty_factor();
  const double mean_util = (xr * beta.mean())[0];
  CHECK(elise_delta(xf, xr, alpha, beta) == doctest::Approx(mean_util).epsilon(1e-12));
  Eigen::VectorXd aux(1);
  aux << 1.0;
  CHECK(elise_mji_bound(xf, xr, alpha, beta, aux) == doctest::Approx(mean_util).epsilon(1e-12));
}

TEST_CASE("qmc degenerate checks") {
  std::mt19937_64 eng(3);
  const Eigen::MatrixXd xr = Eigen::MatrixXd::Random(4, 2);
  const Eigen::MatrixXd xf(4, 0);
  const GaussianFactor alpha = empty_factor();
  const Eigen::VectorXd mu_b = testutil::random_vector(2, eng);
  const Eigen::MatrixXd xi_r = Eigen::MatrixXd::Random(32, 2);
  const Eigen::MatrixXd xi_f(32, 0);
  // Zero covariances collapse every draw onto the mean utility.
  const double got = elise_qmc(xf, xr, alpha, zero_cov_factor(mu_b), xi_f, xi_r);
  CHECK(got == doctest::Approx(log_sum_exp(xr * mu_b)).epsilon(1e-6));

  // Single alternative: linearity makes the average exact.
  const Eigen::MatrixXd xr1 = Eigen::MatrixXd::Random(1, 2);
  const Eigen::MatrixXd xf1(1, 0);
  const GaussianFactor beta = testutil::random_factor(2, eng);
  Eigen::MatrixXd xi_sym(4, 2);
  xi_sym << 1.0, 0.5, -1.0, -0.5, 0.25, -1.5, -0.25, 1.5;  // column means zero
  const double got1 = elise_qmc(xf1, xr1, alpha, beta, Eigen::MatrixXd(4, 0), xi_sym);
  CHECK(got1 == doctest::Approx((xr1 * beta.mean())[0]).epsilon(1e-12));
}

TEST_CASE("mji auxiliary fixed point") {
  std::mt19937_64 eng(4);
  // Identical alternatives: the fixed point is uniform.
  Eigen::MatrixXd xr_same(3, 2);
  xr_same << 1.0, -0.5, 1.0, -0.5, 1.0, -0.5;
  const GaussianFactor beta = testutil::random_factor(2, eng);
  Eigen::VectorXd start(3);
  start << 0.7, 0.2, 0.1;
  bool ok = false;
  const Eigen::VectorXd fixed =
      mji_refresh_aux(Eigen::MatrixXd(3, 0), xr_same, empty_factor(), beta, start, &ok);
  CHECK(ok);
  for (int j = 0; j < 3; ++j) CHECK(fixed[j] == doctest::Approx(1.0 / 3).epsilon(1e-7));

  // Zero covariance: the fixed point is the softmax at the means.
  const Eigen::MatrixXd xr = Eigen::MatrixXd::Random(4, 2);
  const Eigen::VectorXd mu = testutil::random_vector(2, eng);
  const GaussianFactor point = zero_cov_factor(mu);
  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);
  const Eigen::VectorXd got =
      mji_refresh_aux(Eigen::MatrixXd(4, 0), xr, empty_factor(), point, uniform, &ok);
  CHECK(ok);
  const Eigen::VectorXd want = choice_probabilities(xr * mu);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mji fixed point: multistart agreement and residual") {
  const auto fixtures = testutil::elise_fixtures();
  const auto& f = fixtures[6];  // J=7, K=4, L=2
  Eigen::VectorXd starts[3];
  starts[0] = Eigen::VectorXd::Constant(7, 1.0 / 7);
  starts[1] = Eigen::VectorXd::Zero(7);
  starts[1][0] = 0.9;
  for (int j = 1; j < 7; ++j) starts[1][j] = 0.1 / 6;
  starts[2] = Eigen::VectorXd::LinSpaced(7, 1.0, 7.0);
  starts[2] /= starts[2].sum();

  Eigen::VectorXd results[3];
  for (int s = 0; s < 3; ++s) {
    bool ok = false;
    results[s] = mji_refresh_aux(f.xf, f.xr, f.alpha, f.beta, starts[s], &ok);
    CHECK(ok);
    CHECK(mji_aux_residual(f.xf, f.xr, f.alpha, f.beta, results[s]) < 1e-7);
    CHECK(results[s].sum() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(results[s].minCoeff() >= 0.0);
  }
  CHECK((results[0] - results[1]).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((results[0] - results[2]).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("mji bound dominates the exact value at zero covariance") {
  std::mt19937_64 eng(5);
  const Eigen::MatrixXd xr = Eigen::MatrixXd::Random(5, 3);
  const Eigen::VectorXd mu = testutil::random_vector(3, eng);
  const GaussianFactor point = zero_cov_factor(mu);
  const double exact = log_sum_exp(xr * mu);
  // At the softmax point the bound is tight.
  const Eigen::VectorXd softmax_aux = choice_probabilities(xr * mu);
  const double tight =
      elise_mji_bound(Eigen::MatrixXd(5, 0), xr, empty_factor(), point, softmax_aux);
  CHECK(tight == doctest::Approx(exact).epsilon(1e-8));
  // Elsewhere it does not fall below the exact value.
  Eigen::VectorXd other = Eigen::VectorXd::Constant(5, 0.2);
  const double loose = elise_mji_bound(Eigen::MatrixXd(5, 0), xr, empty_factor(), point, other);
  CHECK(loose >= exact - 1e-10);
}

TEST_CASE("delta gradients match finite differences") {
  const auto fixtures = testutil::elise_fixtures();
  for (const auto& f : {fixtures[1], fixtures[5]}) {
    const int l = static_cast<int>(f.alpha.dim());
    const int k = static_cast<int>(f.beta.dim());
    const DeltaEval eval = elise_delta_eval(f.xf, f.xr, f.alpha, f.beta);

    const Eigen::VectorXd fd_mu_b = testutil::central_difference(
        [&](const Eigen::VectorXd& m) {
          return elise_delta(f.xf, f.xr, f.alpha, GaussianFactor(m, f.beta.cov()));
        },
        f.beta.mean(), 1e-5);
    CHECK(testutil::max_rel_error(eval.grad_mu_beta, fd_mu_b) < 1e-6);

    if (l > 0) {
      const Eigen::VectorXd fd_mu_a = testutil::central_difference(
          [&](const Eigen::VectorXd& m) {
            return elise_delta(f.xf, f.xr, GaussianFactor(m, f.alpha.cov()), f.beta);
          },
          f.alpha.mean(), 1e-5);
      CHECK(testutil::max_rel_error(eval.grad_mu_alpha, fd_mu_a) < 1e-6);
    }

    // Symmetric covariance perturbations: directional derivative along
    // E_ij + E_ji equals g_ij + g_ji.
    for (int i = 0; i < k; ++i)
      for (int j = 0; j <= i; ++j) {
        const double h = 1e-6;
        Eigen::MatrixXd up = f.beta.cov(), dn = f.beta.cov();
        up(i, j) += h;
        up(j, i) = up(i, j);
        dn(i, j) -= h;
        dn(j, i) = dn(i, j);
        const double fd = (elise_delta(f.xf, f.xr, f.alpha, GaussianFactor(f.beta.mean(), up)) -
                           elise_delta(f.xf, f.xr, f.alpha, GaussianFactor(f.beta.mean(), dn))) /
                          (2.0 * h);
        const double want = i == j ? eval.grad_sigma_beta(i, i)
                                   : eval.grad_sigma_beta(i, j) + eval.grad_sigma_beta(j, i);
        CHECK(std::abs(fd - want) < 1e-6 * std::max(1.0, std::abs(want)));
      }
  }
}

TEST_CASE("mji gradients match finite differences") {
  const auto fixtures = testutil::elise_fixtures();
  const auto& f = fixtures[4];  // J=3, K=4, L=2
  Eigen::VectorXd aux = Eigen::VectorXd::Constant(3, 1.0 / 3);
  const MjiEval eval = elise_mji_eval(f.xf, f.xr, f.alpha, f.beta, aux);

  const Eigen::VectorXd fd_mu_b = testutil::central_difference(
      [&](const Eigen::VectorXd& m) {
        return elise_mji_bound(f.xf, f.xr, f.alpha, GaussianFactor(m, f.beta.cov()), aux);
      },
      f.beta.mean(), 1e-5);
  CHECK(testutil::max_rel_error(eval.grad_mu_beta, fd_mu_b) < 1e-6);

  const Eigen::VectorXd fd_mu_a = testutil::central_difference(
      [&](const Eigen::VectorXd& m) {
        return elise_mji_bound(f.xf, f.xr, GaussianFactor(m, f.alpha.cov()), f.beta, aux);
      },
      f.alpha.mean(), 1e-5);
  CHECK(testutil::max_rel_error(eval.grad_mu_alpha, fd_mu_a) < 1e-6);

  const int k = static_cast<int>(f.beta.dim());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j <= i; ++j) {
      const double h = 1e-6;
      Eigen::MatrixXd up = f.beta.cov(), dn = f.beta.cov();
      up(i, j) += h;
      up(j, i) = up(i, j);
      dn(i, j) -= h;
      dn(j, i) = dn(i, j);
      const double fd =
          (elise_mji_bound(f.xf, f.xr, f.alpha, GaussianFactor(f.beta.mean(), up), aux) -
           elise_mji_bound(f.xf, f.xr, f.alpha, GaussianFactor(f.beta.mean(), dn), aux)) /
          (2.0 * h);
      const double want = i == j ? eval.grad_sigma_beta(i, i)
                                 : eval.grad_sigma_beta(i, j) + eval.grad_sigma_beta(j, i);
      CHECK(std::abs(fd - want) < 1e-6 * std::max(1.0, std::abs(want)));
    }
}

TEST_CASE("qmc gradients match finite differences") {
  const auto fixtures = testutil::elise_fixtures();
  const auto& f = fixtures[4];
  const Eigen::MatrixXd xi_r = mixl::mlhs_normal_draws(32, 4, 1).draws;
  const Eigen::MatrixXd xi_f = mixl::mlhs_normal_draws(32, 2, 2).draws;
  const Eigen::MatrixXd other = qmc_side_utilities(f.xf, f.alpha, xi_f);
  const QmcEval eval = elise_qmc_eval(f.xr, f.beta, xi_r, other);

  const Eigen::VectorXd fd_mu = testutil::central_difference(
      [&](const Eigen::VectorXd& m) {
        return elise_qmc_eval(f.xr, GaussianFactor(m, f.beta.cov()), xi_r, other).value;
      },
      f.beta.mean(), 1e-5);
  CHECK(testutil::max_rel_error(eval.grad_mu, fd_mu) < 1e-6);

  // Cholesky-space gradient via perturbations of the factor.
  const Eigen::MatrixXd c0 = f.beta.chol();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) {
      const double h = 1e-6;
      Eigen::MatrixXd up = c0, dn = c0;
      up(i, j) += h;
      dn(i, j) -= h;
      const double fd =
          (elise_qmc_eval(f.xr, GaussianFactor(f.beta.mean(), up * up.transpose()), xi_r, other)
               .value -
           elise_qmc_eval(f.xr, GaussianFactor(f.beta.mean(), dn * dn.transpose()), xi_r, other)
               .value) /
          (2.0 * h);
      CHECK(std::abs(fd - eval.grad_chol(i, j)) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("delta shift invariance through a constant utility column") {
  const auto fixtures = testutil::elise_fixtures();
  const auto& f = fixtures[1];  // J=2, K=2, L=2
  const int j = 2;
  // Append a fixed column of ones whose coefficient shifts all utilities.
  Eigen::MatrixXd xf_ext(j, 3);
  xf_ext.leftCols(2) = f.xf;
  xf_ext.col(2).setOnes();
  const double shift = 0.37;
  Eigen::VectorXd mu_ext(3);
  mu_ext << f.alpha.mean()[0], f.alpha.mean()[1], shift;
  Eigen::MatrixXd cov_ext = Eigen::MatrixXd::Zero(3, 3);
  cov_ext.topLeftCorner(2, 2) = f.alpha.cov();
  cov_ext(2, 2) = 1e-12;
  const double base = elise_delta(f.xf, f.xr, f.alpha, f.beta);
  const double shifted = elise_delta(xf_ext, f.xr, GaussianFactor(mu_ext, cov_ext), f.beta);
  CHECK(shifted == doctest::Approx(base + shift).epsilon(1e-9));
}

TEST_CASE("treatment values against the committed oracle fixtures") {
  // Spot check two fixtures here; the full committed-oracle sweep runs in
  // the acceptance suite.
  const auto fixtures = testutil::elise_fixtures();
  for (int idx : {0, 6}) {
    const auto& f = fixtures[static_cast<std::size_t>(idx)];
    const testutil::OracleValue oracle = testutil::elise_mc_oracle(f, 200000, 777);
    CHECK(std::abs(elise_delta(f.xf, f.xr, f.alpha, f.beta) - oracle.mean) < 0.02);
    const int k = static_cast<int>(f.beta.dim());
    const int l = static_cast<int>(f.alpha.dim());
    const Eigen::MatrixXd xi_r = mixl::mlhs_normal_draws(64, k, 10).draws;
    const Eigen::MatrixXd xi_f =
        l > 0 ? mixl::mlhs_normal_draws(64, l, 11).draws : Eigen::MatrixXd(64, 0);
    CHECK(std::abs(elise_qmc(f.xf, f.xr, f.alpha, f.beta, xi_f, xi_r) - oracle.mean) < 0.02);
    bool ok = false;
    const int jj = static_cast<int>(f.xr.rows());
    const Eigen::VectorXd aux = mji_refresh_aux(
        f.xf, f.xr, f.alpha, f.beta, Eigen::VectorXd::Constant(jj, 1.0 / jj), &ok);
    CHECK(ok);
    const double bound = elise_mji_bound(f.xf, f.xr, f.alpha, f.beta, aux);
    CHECK(bound >= oracle.mean - 3.0 * oracle.se);
  }
}

TEST_CASE("input validation") {
  std::mt19937_64 eng(9);
  const GaussianFactor beta = testutil::random_factor(2, eng);
  const Eigen::MatrixXd xr = Eigen::MatrixXd::Random(3, 2);
  Eigen::VectorXd bad_aux(3);
  bad_aux << 0.5, 0.2, 0.2;  // does not sum to one
  CHECK_THROWS_AS(elise_mji_bound(Eigen::MatrixXd(3, 0), xr, empty_factor(), beta, bad_aux),
                  std::invalid_argument);
  CHECK_THROWS_AS(elise_delta(Eigen::MatrixXd(2, 0), xr, empty_factor(), beta),
                  std::invalid_argument);
}
