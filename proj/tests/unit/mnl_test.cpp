#include <doctest.h>

#include <random>

#include "mixl/mnl.hpp"
#include "support/testutil.hpp"

using mixl::choice_probabilities;
using mixl::log_sum_exp;
using mixl::softmax_curvature;

TEST_CASE("log_sum_exp basic values") {
  Eigen::VectorXd v(2);
  v << 0.0, 0.0;
  CHECK(log_sum_exp(v) == doctest::Approx(0.6931471805599453).epsilon(1e-12));
  v << 1000.0, 1000.0;
  CHECK(log_sum_exp(v) == doctest::Approx(1000.0 + 0.6931471805599453).epsilon(1e-12));
  Eigen::VectorXd w(3);
  w << 1.0, 2.0, 3.0;
  CHECK(log_sum_exp(w) == doctest::Approx(3.4076059644443806).epsilon(1e-12));
  CHECK_THROWS_AS(log_sum_exp(Eigen::VectorXd(0)), std::invalid_argument);
}

TEST_CASE("log_sum_exp shift invariance") {
  std::mt19937_64 eng(7);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd v(5);
    for (int i = 0; i < 5; ++i) v[i] = normal(eng);
    const double c = normal(eng);
    const double shifted = log_sum_exp(Eigen::VectorXd(v.array() + c));
    CHECK(shifted == doctest::Approx(log_sum_exp(v) + c).epsilon(1e-12));
    const Eigen::VectorXd p1 = choice_probabilities(v);
    const Eigen::VectorXd p2 = choice_probabilities(Eigen::VectorXd(v.array() + c));
    CHECK((p1 - p2).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("choice probabilities") {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(7);
  const Eigen::VectorXd p = choice_probabilities(v);
  for (int j = 0; j < 7; ++j) CHECK(p[j] == doctest::Approx(1.0 / 7).epsilon(1e-14));

  Eigen::VectorXd u(2);
  u << std::log(2.0), 0.0;
  const Eigen::VectorXd q = choice_probabilities(u);
  CHECK(q[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(1.0 / 3).epsilon(1e-14));

  std::mt19937_64 eng(11);
  std::normal_distribution<double> normal(0.0, 3.0);
  Eigen::VectorXd r(5);
  for (int i = 0; i < 5; ++i) r[i] = normal(eng);
  const Eigen::VectorXd pr = choice_probabilities(r);
  CHECK(pr.sum() == doctest::Approx(1.0).epsilon(1e-12));
  // Extended-precision oracle.
  long double denom = 0.0L;
  for (int i = 0; i < 5; ++i) denom += expl(static_cast<long double>(r[i]));
  for (int i = 0; i < 5; ++i) {
    const double want = static_cast<double>(expl(static_cast<long double>(r[i])) / denom);
    CHECK(std::abs(pr[i] - want) < 1e-12);
  }
}

TEST_CASE("gradient and curvature identities of LSE") {
  std::mt19937_64 eng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(4);
  for (int i = 0; i < 4; ++i) v[i] = normal(eng);

  const Eigen::VectorXd p = choice_probabilities(v);
  const Eigen::VectorXd fd_grad = testutil::central_difference(
      [](const Eigen::VectorXd& x) { return log_sum_exp(x); }, v, 1e-6);
  CHECK(testutil::max_rel_error(fd_grad, p) < 1e-6);

  const Eigen::MatrixXd h = softmax_curvature(p);
  for (int i = 0; i < 4; ++i) {
    const Eigen::VectorXd fd_row = testutil::central_difference(
        [i](const Eigen::VectorXd& x) { return choice_probabilities(x)[i]; }, v, 1e-6);
    CHECK(testutil::max_rel_error(fd_row, h.row(i).transpose()) < 1e-6);
  }
  // Rows sum to zero; PSD within tolerance.
  CHECK(h.rowwise().sum().cwiseAbs().maxCoeff() < 1e-14);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  CHECK(es.eigenvalues().minCoeff() > -1e-12);
}

TEST_CASE("softmax_curvature closed forms and validation") {
  Eigen::VectorXd p(2);
  p << 0.5, 0.5;
  const Eigen::MatrixXd h = softmax_curvature(p);
  CHECK(h(0, 0) == doctest::Approx(0.25));
  CHECK(h(0, 1) == doctest::Approx(-0.25));

  Eigen::VectorXd degenerate(2);
  degenerate << 1.0, 0.0;
  CHECK(softmax_curvature(degenerate).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  Eigen::VectorXd bad(2);
  bad << 0.6, 0.6;
  CHECK_THROWS_AS(softmax_curvature(bad), std::invalid_argument);
}
