#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>

#include "dipw/hte.hpp"
#include "dipw/simgen.hpp"

using namespace dipw;

namespace {

Dataset make_data(RandomStream& rng, int n, int q) {
  Dataset d;
  d.X = Mat(n, q + 1);
  d.X.col(0).setOnes();
  for (int i = 0; i < n; ++i)
    for (int j = 1; j <= q; ++j) d.X(i, j) = rng.normal();
  d.Y = Vec(n);
  d.T = IVec(n);
  for (int i = 0; i < n; ++i) {
    d.Y(i) = rng.normal();
    d.T(i) = rng.bernoulli(0.5) ? 1 : 0;
  }
  if (d.T.sum() == 0) d.T(0) = 1;
  if (d.T.sum() == static_cast<int>(n)) d.T(0) = 0;
  return d;
}

}  // namespace

TEST_CASE("projection onto the intercept recovers the basic debiased value") {
  RandomStream rng(401, "hte");
  const Dataset d = make_data(rng, 40, 3);
  Vec pi(40), mu(40);
  for (int i = 0; i < 40; ++i) {
    pi(i) = 0.2 + 0.6 * rng.uniform();
    mu(i) = rng.normal();
  }
  const PropensityFit pf = force_propensity(pi, 1e-9);
  const HteProjection proj = project_hte(d, pf, mu, Mat::Ones(40, 1));
  CHECK(proj.beta_hat.size() == 1);
  CHECK(proj.beta_hat(0) == Catch::Approx(estimate_dipw_basic(d, pf, mu)).margin(1e-12));
}

TEST_CASE("exactly linear pseudo-outcomes are interpolated") {
  RandomStream rng(409, "hte-lin");
  const int n = 50;
  Dataset d = make_data(rng, n, 4);
  Mat W(n, 2);
  W.col(0).setOnes();
  W.col(1) = d.X.col(2);
  const Vec pi = Vec::Constant(n, 0.5);
  const PropensityFit pf = force_propensity(pi, 1e-9);

  // choose Y so the corrected contrast is exactly 2 - 3 W_2
  Vec mu = Vec::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double target = 2.0 - 3.0 * W(i, 1);
    d.Y(i) = d.T(i) == 1 ? target * pi(i) : -target * (1.0 - pi(i));
  }
  const HteProjection proj = project_hte(d, pf, mu, W);
  CHECK(proj.beta_hat(0) == Catch::Approx(2.0).margin(1e-10));
  CHECK(proj.beta_hat(1) == Catch::Approx(-3.0).margin(1e-10));
  const Vec resid = corrected_contrast(d, pf, mu) - W * proj.beta_hat;
  CHECK(resid.lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("random instance matches the normal equations") {
  RandomStream rng(419, "hte-ne");
  const int n = 60;
  const Dataset d = make_data(rng, n, 5);
  Mat W(n, 3);
  W.col(0).setOnes();
  W.col(1) = d.X.col(1);
  W.col(2) = d.X.col(4);
  Vec pi(n), mu(n);
  for (int i = 0; i < n; ++i) {
    pi(i) = 0.1 + 0.8 * rng.uniform();
    mu(i) = rng.normal();
  }
  const PropensityFit pf = force_propensity(pi, 1e-9);
  const HteProjection proj = project_hte(d, pf, mu, W);
  const Vec D = corrected_contrast(d, pf, mu);
  const Vec ref = (W.transpose() * W).ldlt().solve(W.transpose() * D);
  CHECK((proj.beta_hat - ref).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("rank-deficient projection matrix names the dependent columns") {
  RandomStream rng(421, "hte-rank");
  const Dataset d = make_data(rng, 30, 3);
  Mat W(30, 3);
  W.col(0).setOnes();
  W.col(1) = d.X.col(1);
  W.col(2) = 2.0 * d.X.col(1);  // collinear
  const PropensityFit pf = force_propensity(Vec::Constant(30, 0.5), 1e-9);
  CHECK_THROWS_AS(project_hte(d, pf, Vec::Zero(30), W), DataError);
  CHECK_THROWS_WITH(project_hte(d, pf, Vec::Zero(30), W),
                    Catch::Matchers::ContainsSubstring("dependent columns"));
}

TEST_CASE("lasso variant at lambda = 0 matches least squares on X") {
  RandomStream rng(431, "hte-lasso");
  const int n = 50;
  const Dataset d = make_data(rng, n, 4);
  Vec pi(n);
  for (int i = 0; i < n; ++i) pi(i) = 0.25 + 0.5 * rng.uniform();
  const PropensityFit pf = force_propensity(pi, 1e-9);
  const Vec mu = Vec::Zero(n);

  const HteProjection proj = project_hte_lasso(d, pf, mu, 0.0);
  const Vec D = corrected_contrast(d, pf, mu);
  const Vec ref = (d.X.transpose() * d.X).ldlt().solve(d.X.transpose() * D);
  CHECK((proj.beta_hat - ref).lpNorm<Eigen::Infinity>() < 1e-6);
  CHECK(proj.lambda.has_value());
}

TEST_CASE("multi-split projection pipeline runs deterministically") {
  SimulationDesign sd;
  sd.n = 60;
  sd.p = 50;
  sd.d_gamma = 5;
  sd.seed = 47;
  const SimulatedData sim = simulate(sd);

  Mat W(sd.n, 2);
  W.col(0).setOnes();
  W.col(1) = sim.data.X.col(1);

  HteConfig cfg;
  cfg.mdipw.B = 2;
  cfg.mdipw.seed = 10;
  cfg.mdipw.cv_folds = 5;
  const HteProjection a = run_hte(sim.data, W, cfg);
  const HteProjection b = run_hte(sim.data, W, cfg);
  REQUIRE(a.beta_hat.size() == 2);
  CHECK(a.beta_hat == b.beta_hat);
  CHECK(a.beta_hat.allFinite());
}
