#include <doctest.h>

#include <random>

#include "mixl/evaluation.hpp"
#include "mixl/mnl.hpp"
#include "support/testutil.hpp"

using namespace mixl;

TEST_CASE("rmse") {
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 1.0;
  b << 0.0, 0.0;
  CHECK(rmse(a, a) == doctest::Approx(0.0));
  CHECK(rmse(a, b) == doctest::Approx(1.0));
  CHECK(rmse(Eigen::VectorXd::Constant(1, 3.0), Eigen::VectorXd::Zero(1)) == doctest::Approx(3.0));
  CHECK_THROWS_AS(rmse(a, Eigen::VectorXd::Zero(3)), std::invalid_argument);

  // Invariant to a joint permutation of coordinates.
  std::mt19937_64 eng(1);
  Eigen::VectorXd x = testutil::random_vector(5, eng), y = testutil::random_vector(5, eng);
  Eigen::VectorXd xp(5), yp(5);
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) {
    xp[i] = x[perm[i]];
    yp[i] = y[perm[i]];
  }
  CHECK(rmse(x, y) == doctest::Approx(rmse(xp, yp)).epsilon(1e-14));
}

TEST_CASE("lower triangle ordering") {
  Eigen::MatrixXd m(3, 3);
  m << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  const Eigen::VectorXd v = lower_triangle_vector(m);
  REQUIRE(v.size() == 6);
  CHECK(v[0] == 1);  // (0,0)
  CHECK(v[1] == 2);  // (1,0)
  CHECK(v[2] == 4);  // (1,1)
  CHECK(v[3] == 3);  // (2,0)
  CHECK(v[4] == 5);  // (2,1)
  CHECK(v[5] == 6);  // (2,2)
}

TEST_CASE("tvd") {
  Eigen::VectorXd p(2), q(2);
  p << 0.7, 0.3;
  q << 0.5, 0.5;
  CHECK(tvd(p, q) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(tvd(p, p) == doctest::Approx(0.0));
  Eigen::VectorXd e1(2), e2(2);
  e1 << 1.0, 0.0;
  e2 << 0.0, 1.0;
  CHECK(tvd(e1, e2) == doctest::Approx(1.0));
  Eigen::VectorXd bad(2);
  bad << 0.7, 0.4;
  CHECK_THROWS_AS(tvd(p, bad), std::invalid_argument);

  // Symmetry and triangle inequality on random simplex triples.
  std::mt19937_64 eng(2);
  std::uniform_real_distribution<double> unif(0.01, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    Eigen::VectorXd x(4), y(4), z(4);
    for (int i = 0; i < 4; ++i) {
      x[i] = unif(eng);
      y[i] = unif(eng);
      z[i] = unif(eng);
    }
    x /= x.sum();
    y /= y.sum();
    z /= z.sum();
    CHECK(tvd(x, y) == doctest::Approx(tvd(y, x)).epsilon(1e-14));
    CHECK(tvd(x, z) <= tvd(x, y) + tvd(y, z) + 1e-14);
  }
}

namespace {

ChoiceDataset two_alt_validation(double x0, double x1) {
  ChoiceDataset v;
  v.num_individuals = 1;
  v.num_alternatives = 2;
  v.occasions_per_individual = {1};
  v.occasion_offsets = {0, 1};
  v.fixed_attrs.resize(2, 0);
  v.random_attrs.resize(2, 1);
  v.random_attrs(0, 0) = x0;
  v.random_attrs(1, 0) = x1;
  v.choices = {0};
  return v;
}

}  // namespace

TEST_CASE("true choice distribution: degenerate and symmetric cases") {
  // Omega -> 0 gives plain MNL probabilities at the population mean.
  ChoiceDataset v = two_alt_validation(1.0, -0.5);
  TruePopulation pop;
  pop.alpha.resize(0);
  pop.zeta = Eigen::VectorXd::Constant(1, 0.4);
  pop.omega = Eigen::MatrixXd::Constant(1, 1, 1e-16);
  pop.sigma = Eigen::VectorXd::Constant(1, 1e-8);
  pop.psi = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd p = true_choice_distribution(v, pop, 200, 1);
  Eigen::VectorXd util(2);
  util << 0.4, -0.2;
  const Eigen::VectorXd want = choice_probabilities(util);
  CHECK(std::abs(p(0, 0) - want[0]) < 1e-8);

  // Identical alternatives: uniform regardless of the mixing distribution.
  ChoiceDataset same = two_alt_validation(0.7, 0.7);
  pop.omega = Eigen::MatrixXd::Constant(1, 1, 1.5);
  const Eigen::MatrixXd u = true_choice_distribution(same, pop, 5000, 2);
  CHECK(u(0, 0) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("true choice distribution matches a quadrature oracle (J=2, K=1)") {
  ChoiceDataset v = two_alt_validation(1.0, -0.5);
  TruePopulation pop;
  pop.alpha.resize(0);
  pop.zeta = Eigen::VectorXd::Constant(1, 0.4);
  pop.omega = Eigen::MatrixXd::Constant(1, 1, 0.81);
  pop.sigma = Eigen::VectorXd::Constant(1, 0.9);
  pop.psi = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd p = true_choice_distribution(v, pop, 400000, 3);

  // Midpoint quadrature of E[logistic(1.5 beta)] over beta ~ N(0.4, 0.81).
  const int nodes = 20001;
  const double lo = 0.4 - 10.0 * 0.9, hi = 0.4 + 10.0 * 0.9;
  const double h = (hi - lo) / nodes;
  double acc = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double beta = lo + (i + 0.5) * h;
    const double pdf = std::exp(-0.5 * std::pow((beta - 0.4) / 0.9, 2)) /
                       (0.9 * std::sqrt(2.0 * M_PI));
    acc += h * pdf / (1.0 + std::exp(-1.5 * beta));
  }
  CHECK(std::abs(p(0, 0) - acc) < 0.002);
}

TEST_CASE("predictive distribution rows are stochastic for every sampler") {
  std::mt19937_64 eng(4);
  ChoiceDataset v = testutil::tiny_dataset(5, 1, 3, 0, 2, 6, 0.8);

  VariationalPosterior post;
  post.alpha = GaussianFactor(Eigen::VectorXd(0), Eigen::MatrixXd(0, 0));
  post.zeta = testutil::random_factor(2, eng);
  post.w = 12.0;
  post.theta = 8.0 * testutil::random_spd(2, eng);
  post.c = 2.0;
  post.d = Eigen::VectorXd::Constant(2, 1.0);
  const Eigen::MatrixXd pv = predictive_distribution(v, vb_param_sampler(post), 40, 200, 7);
  for (int i = 0; i < pv.rows(); ++i) {
    CHECK(pv.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(pv.row(i).minCoeff() >= 0.0);
  }

  McmcDraws draws;
  draws.chains = 1;
  draws.alpha.resize(10, 0);
  draws.zeta.resize(10, 2);
  for (int i = 0; i < 10; ++i) draws.zeta.row(i) = testutil::random_vector(2, eng).transpose();
  for (int i = 0; i < 10; ++i) draws.omega.push_back(testutil::random_spd(2, eng));
  const Eigen::MatrixXd pm = predictive_distribution(v, mcmc_param_sampler(draws, 10), 10, 200, 8);
  for (int i = 0; i < pm.rows(); ++i)
    CHECK(pm.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));

  MslEstimate est;
  est.num_fixed = 0;
  est.num_random = 2;
  est.phi = msle_pack(Eigen::VectorXd(0), testutil::random_vector(2, eng),
                      0.5 * Eigen::MatrixXd::Identity(2, 2));
  est.var_phi = 0.01 * Eigen::MatrixXd::Identity(5, 5);
  const Eigen::MatrixXd ps = predictive_distribution(v, msle_param_sampler(est), 40, 200, 9);
  for (int i = 0; i < ps.rows(); ++i)
    CHECK(ps.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("degenerate posterior matches the true distribution at its parameters") {
  // Tight factors around fixed values behave like a deterministic
  // mixed logit: compare against true_choice_distribution at the same
  // parameters.
  ChoiceDataset v = two_alt_validation(0.8, -0.3);
  const Eigen::VectorXd zeta = Eigen::VectorXd::Constant(1, 0.4);
  const Eigen::MatrixXd omega = Eigen::MatrixXd::Constant(1, 1, 0.49);

  VariationalPosterior post;
  post.alpha = GaussianFactor(Eigen::VectorXd(0), Eigen::MatrixXd(0, 0));
  post.zeta = GaussianFactor(zeta, 1e-12 * Eigen::MatrixXd::Identity(1, 1));
  post.w = 5000.0;  // IW concentrates near theta / w
  post.theta = (post.w - 2.0) * omega;
  post.c = 1.5;
  post.d = Eigen::VectorXd::Constant(1, 1.0);
  const Eigen::MatrixXd got = predictive_distribution(v, vb_param_sampler(post), 300, 4000, 10);

  TruePopulation pop;
  pop.alpha.resize(0);
  pop.zeta = zeta;
  pop.omega = omega;
  pop.sigma = Eigen::VectorXd::Constant(1, 0.7);
  pop.psi = Eigen::MatrixXd::Identity(1, 1);
  const Eigen::MatrixXd want = true_choice_distribution(v, pop, 400000, 11);
  CHECK(std::abs(got(0, 0) - want(0, 0)) < 0.01);
}

TEST_CASE("summaries") {
  std::vector<ReplicationMetrics> reps(2);
  reps[0].wall_seconds = 0.0;
  reps[1].wall_seconds = 2.0;
  reps[0].rmse_zeta = reps[1].rmse_zeta = 0.5;
  reps[0].tvd_value = reps[1].tvd_value = 0.01;
  const MethodSummary s = summarize_replications(reps);
  CHECK(s.wall_seconds.mean == doctest::Approx(1.0));
  CHECK(s.wall_seconds.se == doctest::Approx(1.0));
  CHECK(s.rmse_zeta.se == doctest::Approx(0.0));
  CHECK_FALSE(s.rmse_alpha.has_value());

  CHECK_THROWS_AS(standard_error({1.0}), std::invalid_argument);
  CHECK(standard_error({0.0, 2.0}) == doctest::Approx(1.0));

  // Five synthetic reports against a hand-computed summary.
  std::vector<ReplicationMetrics> five(5);
  const double vals[5] = {0.1, 0.2, 0.3, 0.4, 0.5};
  for (int i = 0; i < 5; ++i) five[static_cast<std::size_t>(i)].rmse_zeta = vals[i];
  const MethodSummary s5 = summarize_replications(five);
  CHECK(s5.rmse_zeta.mean == doctest::Approx(0.3));
  // sd = sqrt(0.025), se = sd / sqrt(5)
  CHECK(s5.rmse_zeta.se == doctest::Approx(std::sqrt(0.025) / std::sqrt(5.0)).epsilon(1e-12));
}
