#include <catch2/catch_amalgamated.hpp>
#include <Eigen/Dense>
#include <cmath>

#include "dipw/balance.hpp"
#include "dipw/rng.hpp"
#include "support/balance_oracles.hpp"

using namespace dipw;

namespace {

BalanceProblem random_constrained(RandomStream& rng, int n, int p, double eta) {
  BalanceProblem prob;
  prob.X_main = Mat(n, p);
  prob.X_main.col(0).setOnes();
  for (int i = 0; i < n; ++i)
    for (int j = 1; j < p; ++j) prob.X_main(i, j) = rng.normal();
  prob.f_main = Vec(n);
  for (int i = 0; i < n; ++i) prob.f_main(i) = rng.normal();
  // target near the range of the moment map so the polyhedron is nonempty
  Vec w0(n);
  for (int i = 0; i < n; ++i) w0(i) = rng.normal();
  prob.target = prob.X_main.transpose() * w0 / static_cast<double>(n);
  for (int j = 0; j < p; ++j) prob.target(j) += 0.5 * eta * (2.0 * rng.uniform() - 1.0);
  prob.eta = eta;
  return prob;
}

BalanceProblem random_lagrangian(RandomStream& rng, int n, int p, double kappa) {
  BalanceProblem prob;
  prob.X_main = Mat(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) prob.X_main(i, j) = rng.normal();
  prob.f_main = Vec(n);
  for (int i = 0; i < n; ++i) prob.f_main(i) = rng.normal();
  prob.target = Vec(p);
  for (int j = 0; j < p; ++j) prob.target(j) = rng.normal();
  prob.kappa = kappa;
  return prob;
}

}  // namespace

TEST_CASE("constrained: interior point projects to itself") {
  RandomStream rng(303, "bal");
  BalanceProblem prob = random_constrained(rng, 8, 4, 0.5);
  prob.target = Vec::Constant(4, 0.1);  // ||target||_inf <= eta: f feasible
  const BalanceSolution sol = solve_constrained(prob);
  CHECK(sol.mu_hat == prob.f_main);  // exact
  CHECK(sol.objective == 0.0);
  CHECK_FALSE(sol.fallback_zero);
}

TEST_CASE("constrained: scalar closed form") {
  // n = 1, p = 1 intercept-only instance: |v - mu| <= eta, minimise mu^2
  const auto closed_form = [](double v, double eta) {
    if (v > eta) return v - eta;
    if (v < -eta) return v + eta;
    return 0.0;
  };
  for (double v : {3.0, 0.4, -2.5, -0.1}) {
    for (double eta : {1.0, 0.5}) {
      BalanceProblem prob;
      prob.X_main = Mat::Ones(1, 1);
      prob.f_main = Vec::Zero(1);
      prob.target = Vec::Constant(1, v);
      prob.eta = eta;
      const BalanceSolution sol = solve_constrained(prob);
      CHECK(sol.mu_hat(0) == Catch::Approx(closed_form(v, eta)).margin(1e-8));
      CHECK(sol.feasibility_residual <= 1e-7 * (1.0 + std::abs(v)));
    }
  }
}

TEST_CASE("constrained: matches the long-run dual reference on random instances") {
  RandomStream rng(311, "bal-ref");
  for (int trial = 0; trial < 10; ++trial) {
    const BalanceProblem prob = random_constrained(rng, 6, 4, 0.2);
    const auto ref = testing::fista_dual_constrained(prob, 200000);
    REQUIRE(ref.gap() < 1e-9);  // the reference certifies itself
    REQUIRE(ref.feasibility < 1e-9);

    const BalanceSolution sol = solve_constrained(prob);
    CHECK_FALSE(sol.fallback_zero);
    CHECK(std::abs(sol.objective - ref.primal) <= 1e-5 * (1.0 + std::abs(ref.primal)));
    CHECK((sol.mu_hat - ref.mu).lpNorm<Eigen::Infinity>() < 1e-5);

    // cross-check path: coordinate descent on the dual
    const BalanceSolution dual = solve_constrained_dual(prob);
    CHECK((dual.mu_hat - ref.mu).lpNorm<Eigen::Infinity>() < 1e-5);
  }
}

TEST_CASE("constrained: translation equivariance") {
  RandomStream rng(317, "bal-shift");
  const BalanceProblem prob = random_constrained(rng, 7, 3, 0.3);
  const double c = 1.75;
  BalanceProblem shifted = prob;
  shifted.f_main = prob.f_main.array() + c;

  const BalanceSolution a = solve_constrained(prob);
  const BalanceSolution b = solve_constrained(shifted);
  CHECK((b.mu_hat - a.mu_hat - Vec::Constant(7, c)).lpNorm<Eigen::Infinity>() < 1e-6);

  // residual moments X'(mu - f)/n are invariant under the shift
  const Vec ra = prob.X_main.transpose() * (a.mu_hat - prob.f_main) / 7.0;
  const Vec rb = shifted.X_main.transpose() * (b.mu_hat - shifted.f_main) / 7.0;
  CHECK((ra - rb).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("constrained: feasible pseudo-outcome start never falls back") {
  // when y~ itself satisfies the constraint the set is nonempty
  RandomStream rng(331, "bal-feas");
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 6, p = 5;
    BalanceProblem prob;
    prob.X_main = Mat(n, p);
    prob.X_main.col(0).setOnes();
    for (int i = 0; i < n; ++i)
      for (int j = 1; j < p; ++j) prob.X_main(i, j) = rng.normal();
    prob.f_main = Vec(n);
    Vec ytilde(n);
    for (int i = 0; i < n; ++i) {
      prob.f_main(i) = rng.normal();
      ytilde(i) = rng.normal();
    }
    const double eta = 0.4;
    prob.eta = eta;
    prob.target = prob.X_main.transpose() * (ytilde - prob.f_main) / static_cast<double>(n);
    for (int j = 0; j < p; ++j) prob.target(j) += 0.9 * eta * (2.0 * rng.uniform() - 1.0);

    const BalanceSolution sol = solve_constrained(prob);
    CHECK_FALSE(sol.fallback_zero);
    CHECK(sol.feasibility_residual <= 1e-7 * (1.0 + prob.target.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("constrained: infeasible program falls back to mu = 0") {
  // a zero column with |target_j| > eta admits no feasible mu
  BalanceProblem prob;
  prob.X_main = Mat::Zero(3, 2);
  prob.X_main.col(0).setOnes();
  prob.f_main = Vec::Constant(3, 1.0);
  prob.target = Vec(2);
  prob.target << 0.0, 5.0;
  prob.eta = 0.5;

  BalanceOptions opts;
  opts.max_iter = 30000;
  const BalanceSolution sol = solve_constrained(prob, opts);
  CHECK(sol.fallback_zero);
  CHECK(sol.mu_hat == Vec::Zero(3));

  const BalanceSolution dual = solve_constrained_dual(prob);
  CHECK(dual.fallback_zero);
  CHECK(dual.mu_hat == Vec::Zero(3));
}

TEST_CASE("lagrangian: vanishing target and f gives zero objective") {
  RandomStream rng(337, "bal-lag0");
  BalanceProblem prob = random_lagrangian(rng, 6, 4, 0.5);
  prob.target = Vec::Zero(4);  // complement side vanishes when y~ = f there
  const BalanceSolution sol = solve_lagrangian(prob);
  // mu = f zeroes both terms, and the quadratic term makes it unique
  CHECK(sol.objective < 1e-12);
  CHECK((sol.mu_hat - prob.f_main).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("lagrangian: kappa near 1 against exhaustive grid search") {
  // 2-variable instance, grid over mu in [-3,3]^2 at step 1e-3
  RandomStream rng(347, "bal-grid");
  BalanceProblem prob;
  prob.X_main = Mat(2, 2);
  prob.X_main << 1.0, 0.4, -0.3, 1.1;
  prob.f_main = Vec::Zero(2);
  prob.target = Vec(2);
  prob.target << 0.8, -0.5;
  prob.kappa = 0.999;

  const BalanceSolution sol = solve_lagrangian(prob);
  const double grid_best = testing::grid_search_lagrangian_2d(prob, -3.0, 3.0, 1e-3);
  CHECK(sol.objective <= grid_best + 1e-6);   // grid value is an upper bound
  CHECK(grid_best - sol.objective <= 1e-4);   // and a tight one at this step
}

TEST_CASE("lagrangian: matches the certified dual reference on random instances") {
  RandomStream rng(353, "bal-lagref");
  for (int trial = 0; trial < 10; ++trial) {
    const BalanceProblem prob = random_lagrangian(rng, 5, 3, 0.5);
    const auto ref = testing::fista_dual_lagrangian(prob, 200000);
    REQUIRE(ref.gap() < 1e-9 * (1.0 + std::abs(ref.primal)));

    const BalanceSolution sol = solve_lagrangian(prob);
    CHECK(std::abs(sol.objective - ref.primal) <= 1e-5 * (1.0 + std::abs(ref.primal)));
    // kappa < 1 makes the minimiser unique: coordinates comparable
    CHECK((sol.mu_hat - ref.mu).lpNorm<Eigen::Infinity>() < 1e-4);

    // the spec's named reference: subgradient with diminishing steps is an
    // upper bound the solver must not exceed
    const auto sub = testing::subgradient_lagrangian(prob, 1000000);
    CHECK(sol.objective <= sub.primal + 1e-5 * (1.0 + std::abs(sub.primal)));
  }
}

TEST_CASE("lagrangian: reported objective trace is nonincreasing") {
  RandomStream rng(359, "bal-trace");
  const BalanceProblem prob = random_lagrangian(rng, 8, 5, 0.5);
  BalanceOptions opts;
  opts.record_trace = true;
  const BalanceSolution sol = solve_lagrangian(prob, opts);
  REQUIRE(sol.trace.size() > 2);
  for (std::size_t i = 2; i < sol.trace.size(); ++i)
    CHECK(sol.trace[i] <= sol.trace[i - 1] + 1e-15);
}

TEST_CASE("certify: exact scalar solution has a ~zero gap, perturbation grows it") {
  BalanceProblem prob;
  prob.X_main = Mat::Ones(1, 1);
  prob.f_main = Vec::Zero(1);
  prob.target = Vec::Constant(1, 3.0);
  prob.eta = 1.0;

  BalanceSolution exact;
  exact.mu_hat = Vec::Constant(1, 2.0);  // analytic solution v - eta
  const double gap0 = certify(prob, exact);
  CHECK(gap0 < 1e-9);

  BalanceSolution off = exact;
  off.mu_hat(0) += 0.1;
  const double gap1 = certify(prob, off);
  CHECK(gap1 > gap0);
  CHECK(gap1 > 1e-3);
}

TEST_CASE("certify: small gap implies closeness to the reference optimum") {
  RandomStream rng(367, "bal-cert");
  for (int trial = 0; trial < 8; ++trial) {
    const BalanceProblem prob = random_constrained(rng, 6, 4, 0.25);
    const auto ref = testing::fista_dual_constrained(prob, 200000);
    REQUIRE(ref.gap() < 1e-9);
    BalanceOptions opts;
    opts.eps_abs = 1e-12;
    opts.eps_rel = 1e-12;
    opts.max_iter = 100000;
    const BalanceSolution sol = solve_constrained(prob, opts);
    const double gap = certify(prob, sol);
    if (gap < 1e-6) CHECK((sol.mu_hat - ref.mu).lpNorm<Eigen::Infinity>() < 1e-4);
  }
}

TEST_CASE("certify: lagrangian subgradient norm at the solution is small") {
  RandomStream rng(373, "bal-certlag");
  const BalanceProblem prob = random_lagrangian(rng, 5, 3, 0.5);
  const BalanceSolution sol = solve_lagrangian(prob);
  CHECK(certify(prob, sol) < 1e-5);

  BalanceSolution off = sol;
  off.mu_hat(2) += 0.1;
  CHECK(certify(prob, off) > certify(prob, sol));
}

TEST_CASE("problem validation") {
  BalanceProblem prob;
  prob.X_main = Mat::Ones(3, 2);
  prob.f_main = Vec::Zero(2);  // wrong length
  prob.target = Vec::Zero(2);
  prob.eta = 0.1;
  CHECK_THROWS_AS(prob.validate(), DimensionError);
  prob.f_main = Vec::Zero(3);
  prob.kappa = 0.5;  // both set
  CHECK_THROWS_AS(prob.validate(), ConfigError);
  prob.kappa.reset();
  prob.eta = -1.0;
  CHECK_THROWS_AS(prob.validate(), ConfigError);
}
