#include <doctest.h>

#include <random>

#include "mixl/mnl.hpp"
#include "mixl/msle.hpp"
#include "support/testutil.hpp"

using namespace mixl;

TEST_CASE("packed parameter round trip") {
  std::mt19937_64 eng(1);
  const Eigen::VectorXd alpha = testutil::random_vector(2, eng);
  const Eigen::VectorXd zeta = testutil::random_vector(3, eng);
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(3, 3);
  chol << 0.9, 0.0, 0.0, 0.2, 1.1, 0.0, -0.3, 0.4, 0.7;
  const Eigen::VectorXd phi = msle_pack(alpha, zeta, chol);
  CHECK(phi.size() == msle_packed_size(2, 3));
  Eigen::VectorXd a2, z2;
  Eigen::MatrixXd c2;
  msle_unpack(phi, 2, 3, &a2, &z2, &c2);
  CHECK((a2 - alpha).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((z2 - zeta).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((c2 - chol).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("degenerate mixing equals the plain MNL log-likelihood") {
  const ChoiceDataset data = testutil::tiny_dataset(6, 3, 3, 1, 2, 2, 0.8);
  std::mt19937_64 eng(3);
  const Eigen::VectorXd alpha = testutil::random_vector(1, eng);
  const Eigen::VectorXd zeta = testutil::random_vector(2, eng);
  // log-diagonal of -40 makes chol(Omega) numerically zero
  Eigen::VectorXd phi = msle_pack(alpha, zeta, 1e-40 * Eigen::MatrixXd::Identity(2, 2));
  const auto batches = msle_draw_batches(6, 2, 16, 7);
  const double sll = simulated_loglik(data, phi, batches, nullptr);
  double want = 0.0;
  for (int n = 0; n < 6; ++n) want += sequence_log_likelihood(data, n, alpha, zeta);
  CHECK(sll == doctest::Approx(want).epsilon(1e-9));
  CHECK(sll <= 0.0);
}

TEST_CASE("simulated log-likelihood is draw-permutation invariant and nonpositive") {
  const ChoiceDataset data = testutil::tiny_dataset(4, 3, 3, 0, 2, 4, 0.8);
  std::mt19937_64 eng(5);
  Eigen::MatrixXd chol(2, 2);
  chol << 0.8, 0.0, 0.3, 0.6;
  const Eigen::VectorXd phi =
      msle_pack(Eigen::VectorXd(0), testutil::random_vector(2, eng), chol);
  auto batches = msle_draw_batches(4, 2, 32, 11);
  const double base = simulated_loglik(data, phi, batches, nullptr);
  CHECK(base <= 0.0);
  // Reverse the draw order within each individual's batch.
  for (auto& b : batches) b.draws = b.draws.colwise().reverse().eval();
  const double permuted = simulated_loglik(data, phi, batches, nullptr);
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("analytic gradient matches finite differences") {
  const ChoiceDataset data = testutil::tiny_dataset(20, 3, 3, 1, 2, 6, 0.8);
  const auto batches = msle_draw_batches(20, 2, 32, 13);
  std::mt19937_64 eng(7);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd phi = 0.3 * testutil::random_vector(msle_packed_size(1, 2), eng, 1.0);
    Eigen::VectorXd grad;
    simulated_loglik(data, phi, batches, &grad);
    const Eigen::VectorXd fd = testutil::central_difference(
        [&](const Eigen::VectorXd& p) { return simulated_loglik(data, p, batches, nullptr); },
        phi, 1e-6);
    CHECK(testutil::max_rel_error(grad, fd) < 1e-5);
  }
}

TEST_CASE("fit improves the objective and returns a PD covariance") {
  const ChoiceDataset data = testutil::tiny_dataset(30, 4, 3, 0, 2, 8, 0.8);
  MsleConfig cfg;
  cfg.draws = 32;
  cfg.seed = 15;
  cfg.max_iterations = 150;
  const MslEstimate est = fit_msle(data, cfg);
  const auto batches = msle_draw_batches(30, 2, 32, 15);
  const Eigen::VectorXd start =
      msle_pack(Eigen::VectorXd(0), Eigen::VectorXd::Zero(2), 0.1 * Eigen::MatrixXd::Identity(2, 2));
  CHECK(est.loglik >= simulated_loglik(data, start, batches, nullptr));
  const Eigen::LLT<Eigen::MatrixXd> llt(est.omega_hat);
  CHECK(llt.info() == Eigen::Success);
  for (int i = 0; i < 2; ++i) CHECK(est.chol_omega(i, i) > 0.0);
  CHECK((est.var_phi - est.var_phi.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("conditional betas: flat and degenerate limits") {
  // T = 0: weights are flat, the estimate is the draw mean (near zeta_hat).
  const ChoiceDataset empty = testutil::empty_panel(3, 3, 0, 2);
  MslEstimate est;
  est.num_fixed = 0;
  est.num_random = 2;
  est.alpha_hat.resize(0);
  est.zeta_hat = Eigen::VectorXd::Constant(2, 0.8);
  est.chol_omega = 0.5 * Eigen::MatrixXd::Identity(2, 2);
  est.omega_hat = est.chol_omega * est.chol_omega.transpose();
  const ConditionalBetas flat = conditional_betas(empty, est, 20000, 21);
  for (int n = 0; n < 3; ++n)
    for (int k = 0; k < 2; ++k)
      CHECK(std::abs(flat.betas(n, k) - 0.8) < 3.0 * 0.5 / std::sqrt(20000.0));

  // Omega -> 0: the conditional estimate is exactly zeta_hat.
  const ChoiceDataset data = testutil::tiny_dataset(3, 2, 3, 0, 2, 9, 0.8);
  est.chol_omega = 1e-12 * Eigen::MatrixXd::Identity(2, 2);
  est.omega_hat = est.chol_omega * est.chol_omega.transpose();
  const ConditionalBetas point = conditional_betas(data, est, 500, 22);
  for (int n = 0; n < 3; ++n)
    CHECK((point.betas.row(n).transpose() - est.zeta_hat).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("conditional betas against a high-draw oracle (N=1, K=1)") {
  // Single individual, strong signal: compare the weighted-draw estimate
  // against an independent 10^6-draw simulation of the same functional.
  const ChoiceDataset data = testutil::tiny_dataset(1, 5, 3, 0, 1, 10, 1.0);
  MslEstimate est;
  est.num_fixed = 0;
  est.num_random = 1;
  est.alpha_hat.resize(0);
  est.zeta_hat = Eigen::VectorXd::Constant(1, 0.3);
  est.chol_omega = Eigen::MatrixXd::Constant(1, 1, 0.9);
  est.omega_hat = est.chol_omega * est.chol_omega.transpose();
  const ConditionalBetas got = conditional_betas(data, est, 200000, 23);

  std::mt19937_64 eng(24);
  std::normal_distribution<double> normal(0.0, 1.0);
  double num = 0.0, den = 0.0;
  for (int d = 0; d < 1000000; ++d) {
    const double beta = 0.3 + 0.9 * normal(eng);
    const double w =
        std::exp(sequence_log_likelihood(data, 0, Eigen::VectorXd(0),
                                         Eigen::VectorXd::Constant(1, beta)));
    num += w * beta;
    den += w;
  }
  CHECK(std::abs(got.betas(0, 0) - num / den) < 0.01);
}
