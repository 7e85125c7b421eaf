#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>
#include <cmath>

#include "dipw/logistic_lasso.hpp"
#include "dipw/rng.hpp"

using namespace dipw;

namespace {

Mat random_design(RandomStream& rng, int n, int p) {
  Mat X(n, p);
  X.col(0).setOnes();
  for (int i = 0; i < n; ++i)
    for (int j = 1; j < p; ++j) X(i, j) = rng.normal();
  return X;
}

IVec random_treatment(RandomStream& rng, const Mat& X, const Vec& gamma) {
  IVec T(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    T(i) = rng.bernoulli(logistic(X.row(i).dot(gamma))) ? 1 : 0;
  return T;
}

/// Test-only oracle: unpenalised logistic regression by full-Hessian
/// Newton iteration.
Vec irls_reference(const Mat& X, const IVec& T, int iters = 200) {
  const Eigen::Index n = X.rows(), p = X.cols();
  Vec b = Vec::Zero(p);
  for (int it = 0; it < iters; ++it) {
    Vec mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = logistic(X.row(i).dot(b));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Mat H = X.transpose() * w.asDiagonal() * X;
    const Vec g = X.transpose() * (T.cast<double>() - mu);
    const Vec step = H.ldlt().solve(g);
    b += step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-14) break;
  }
  return b;
}

}  // namespace

TEST_CASE("large lambda reduces to the Bernoulli intercept MLE") {
  RandomStream rng(3, "loglasso");
  const int n = 80, p = 6;
  const Mat X = random_design(rng, n, p);
  Vec gamma = Vec::Zero(p);
  gamma(1) = 1.0;
  const IVec T = random_treatment(rng, X, gamma);

  const double lmax = lambda_max_binomial(X, T);
  const LassoFit fit = fit_logistic_lasso(X, T, lmax * 1.000001);
  const double tbar = T.cast<double>().mean();
  CHECK(fit.beta(0) == Catch::Approx(std::log(tbar / (1.0 - tbar))).margin(1e-6));
  for (int j = 1; j < p; ++j) CHECK(fit.beta(j) == 0.0);
}

TEST_CASE("lambda = 0 matches the IRLS reference") {
  RandomStream rng(13, "loglasso-irls");
  const int n = 50, p = 3;
  const Mat X = random_design(rng, n, p);
  Vec gamma(p);
  gamma << 0.3, -0.8, 0.5;
  const IVec T = random_treatment(rng, X, gamma);

  LogisticLassoOptions opts;
  opts.tol = 1e-10;
  const LassoFit fit = fit_logistic_lasso(X, T, 0.0, opts);
  const Vec ref = irls_reference(X, T);
  CHECK((fit.beta - ref).norm() / ref.norm() < 1e-6);
}

TEST_CASE("sign-flip symmetry of the objective") {
  // flipping X (intercept excluded) and T together negates the linear
  // predictor: the refit has a negated intercept while the penalised
  // coordinates (taken against the flipped columns) are unchanged, i.e.
  // against the original covariates every coefficient negates
  RandomStream rng(29, "loglasso-flip");
  const int n = 70, p = 5;
  const Mat X = random_design(rng, n, p);
  Vec gamma(p);
  gamma << 0.2, 0.9, -0.6, 0.0, 0.4;
  const IVec T = random_treatment(rng, X, gamma);

  Mat Xf = X;
  Xf.rightCols(p - 1) *= -1.0;
  IVec Tf(n);
  for (int i = 0; i < n; ++i) Tf(i) = 1 - T(i);

  const double lambda = 0.3 * lambda_max_binomial(X, T);
  LogisticLassoOptions opts;
  opts.tol = 1e-9;
  const LassoFit f = fit_logistic_lasso(X, T, lambda, opts);
  const LassoFit ff = fit_logistic_lasso(Xf, Tf, lambda, opts);

  CHECK(ff.beta(0) == Catch::Approx(-f.beta(0)).margin(1e-6));
  for (int j = 1; j < p; ++j) CHECK(ff.beta(j) == Catch::Approx(f.beta(j)).margin(1e-6));
}

TEST_CASE("fitted probabilities recomputable and inside (0,1)") {
  RandomStream rng(47, "loglasso-prob");
  const int n = 60, p = 8;
  const Mat X = random_design(rng, n, p);
  Vec gamma = Vec::Zero(p);
  gamma(2) = 1.5;
  const IVec T = random_treatment(rng, X, gamma);

  const LassoFit fit = fit_logistic_lasso(X, T, 0.05 * lambda_max_binomial(X, T));
  for (int i = 0; i < n; ++i) {
    const double pr = logistic(X.row(i).dot(fit.beta));
    CHECK(pr > 0.0);
    CHECK(pr < 1.0);
  }
}

TEST_CASE("subgradient optimality at exit across the path") {
  RandomStream rng(53, "loglasso-kkt");
  const int n = 90, p = 10;
  const Mat X = random_design(rng, n, p);
  Vec gamma = Vec::Zero(p);
  gamma(1) = 1.0;
  gamma(4) = -1.0;
  const IVec T = random_treatment(rng, X, gamma);
  const auto ps = detail::penalty_scale(X, true);

  for (double frac : {0.8, 0.4, 0.1}) {
    const double lambda = frac * lambda_max_binomial(X, T);
    const LassoFit fit = fit_logistic_lasso(X, T, lambda);
    CHECK(fit.kkt <= 1e-7);

    Vec mu(n);
    for (int i = 0; i < n; ++i) mu(i) = logistic(X.row(i).dot(fit.beta));
    const Vec g = X.transpose() * (mu - T.cast<double>()) / static_cast<double>(n);
    for (int j = 1; j < p; ++j) {
      if (fit.beta(j) != 0.0)
        CHECK(std::abs(g(j) + lambda * ps.weight(j) * (fit.beta(j) > 0 ? 1 : -1)) < 1e-6);
      else
        CHECK(std::abs(g(j)) < lambda * ps.weight(j) + 1e-6);
    }
  }
}

TEST_CASE("perfect separation hits the norm guard instead of diverging") {
  const int n = 40;
  Mat X(n, 2);
  X.col(0).setOnes();
  IVec T(n);
  for (int i = 0; i < n; ++i) {
    X(i, 1) = (i < n / 2) ? -1.0 - 0.05 * i : 1.0 + 0.05 * i;
    T(i) = (i < n / 2) ? 0 : 1;
  }
  LogisticLassoOptions opts;
  opts.coef_norm_guard = 8.0;
  opts.tol = 1e-14;
  opts.max_newton = 500;
  const LassoFit fit = fit_logistic_lasso(X, T, 0.0, opts);
  CHECK(fit.diverged);
  CHECK(fit.beta.norm() >= 8.0);
}

TEST_CASE("single-class input is rejected") {
  Mat X = Mat::Ones(10, 2);
  IVec T = IVec::Ones(10);
  CHECK_THROWS_AS(fit_logistic_lasso(X, T, 0.1), DegenerateTreatmentError);
}
