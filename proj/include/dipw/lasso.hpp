#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dipw/dataset.hpp"
#include "dipw/error.hpp"
#include "dipw/math.hpp"

namespace dipw {

struct LassoOptions {
  double tol = 1e-7;      // max KKT violation at exit, relative to the
                          // null-gradient scale max(1, 2||X'(y-ybar)||_inf/n)
  int max_iter = 100000;  // full coordinate sweeps
  bool standardize = true;
  bool throw_on_nonconvergence = true;
};

/// Fit of the l1-penalised squared-error objective
///   ||y - X b||^2 / n + lambda * sum_{j>=2} s_j |b_j|
/// where s_j is the empirical sd of column j when standardising (1
/// otherwise) and the intercept (column 1) is never penalised.
struct LassoFit {
  Vec beta;            // length p, original scale
  double lambda = 0.0;
  double objective = 0.0;
  int n_iter = 0;      // coordinate sweeps used
  double kkt = 0.0;    // max KKT violation at exit
  bool diverged = false;

  double predict_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return x.dot(beta); }
  Vec predict(const Mat& X) const { return X * beta; }
};

namespace detail {

/// Per-column penalty multipliers: 0 for the intercept, the column sd when
/// standardising, else 1. Zero-variance penalised columns are flagged
/// excluded (coefficient pinned at 0) since they are collinear with the
/// intercept.
struct PenaltyScale {
  Vec weight;
  std::vector<char> excluded;
};

inline PenaltyScale penalty_scale(const Mat& X, bool standardize) {
  const Eigen::Index n = X.rows(), p = X.cols();
  PenaltyScale ps;
  ps.weight = Vec::Ones(p);
  ps.excluded.assign(static_cast<std::size_t>(p), 0);
  ps.weight(0) = 0.0;
  for (Eigen::Index j = 1; j < p; ++j) {
    const double m = X.col(j).mean();
    const double var = X.col(j).squaredNorm() / static_cast<double>(n) - m * m;
    const double sd = std::sqrt(std::max(var, 0.0));
    if (sd <= 0.0) {
      ps.excluded[static_cast<std::size_t>(j)] = 1;
      ps.weight(j) = 1.0;
    } else if (standardize) {
      ps.weight(j) = sd;
    }
  }
  return ps;
}

}  // namespace detail

/// Smallest lambda for which every penalised coefficient of fit_lasso is 0.
inline double lambda_max_gaussian(const Mat& X, const Vec& y, bool standardize = true) {
  const Eigen::Index n = X.rows(), p = X.cols();
  const auto ps = detail::penalty_scale(X, standardize);
  const double ybar = y.mean();
  double lmax = 0.0;
  for (Eigen::Index j = 1; j < p; ++j) {
    if (ps.excluded[static_cast<std::size_t>(j)]) continue;
    const double g =
        2.0 * std::abs(X.col(j).dot(y - Vec::Constant(n, ybar))) / static_cast<double>(n);
    lmax = std::max(lmax, g / ps.weight(j));
  }
  return lmax;
}

namespace detail {

/// Covariance statistics shared by every fit along a lambda path on the
/// same data.
struct LassoWorkspace {
  const Mat& X;
  const Vec& y;
  PenaltyScale ps;
  Mat G;
  Vec xty;
  double grad0 = 0.0;  // null-model gradient scale

  LassoWorkspace(const Mat& X_, const Vec& y_, bool standardize)
      : X(X_), y(y_), ps(penalty_scale(X_, standardize)) {
    const Eigen::Index n = X.rows(), p = X.cols();
    if (y.size() != n) throw DimensionError("fit_lasso: X rows != y length");
    if (n < 1 || p < 1) throw DimensionError("fit_lasso: empty problem");
    G = X.transpose() * X;
    xty = X.transpose() * y;
    const double ybar = y.mean();
    for (Eigen::Index j = 0; j < p; ++j)
      grad0 = std::max(grad0, 2.0 / static_cast<double>(n) *
                                  std::abs(xty(j) - X.col(j).sum() * ybar));
  }
};

}  // namespace detail

/// Cyclic coordinate descent with covariance updates. Iterates on the
/// active set until stable, then verifies the KKT conditions on a full
/// sweep; repeats until no violation above tol remains. KKT residuals are
/// gradient-scale quantities, so the tolerance is measured against the
/// gradient at the null model: huge responses (e.g. inverse propensity
/// transforms) must not demand absolute precision beyond rounding.
inline LassoFit fit_lasso_ws(const detail::LassoWorkspace& ws, double lambda,
                             const LassoOptions& opts = {}, const Vec* warm = nullptr) {
  const Mat& X = ws.X;
  const Vec& y = ws.y;
  const Eigen::Index n = X.rows(), p = X.cols();
  if (lambda < 0.0) throw ConfigError("fit_lasso: lambda must be nonnegative");

  const auto& ps = ws.ps;
  const Mat& G = ws.G;
  const Vec& xty = ws.xty;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double tol_eff = opts.tol * std::max(1.0, ws.grad0);

  Vec beta = (warm && warm->size() == p) ? *warm : Vec::Zero(p);
  Vec u = xty - G * beta;  // u_j = X_j' (y - X beta), kept incrementally

  const auto update_coord = [&](Eigen::Index j) -> double {
    if (ps.excluded[static_cast<std::size_t>(j)]) return 0.0;
    const double gjj = G(j, j);
    if (gjj <= 0.0) return 0.0;
    const double cj = u(j) + gjj * beta(j);  // X_j' (partial residual)
    double bnew;
    if (j == 0) {
      bnew = cj / gjj;
    } else {
      bnew = soft_threshold(2.0 * inv_n * cj, lambda * ps.weight(j)) / (2.0 * inv_n * gjj);
    }
    const double delta = bnew - beta(j);
    if (delta != 0.0) {
      beta(j) = bnew;
      u -= G.col(j) * delta;
    }
    return std::abs(delta);
  };

  const auto kkt_violation = [&]() -> double {
    double viol = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (ps.excluded[static_cast<std::size_t>(j)]) continue;
      const double g = 2.0 * inv_n * u(j);
      if (j == 0) {
        viol = std::max(viol, std::abs(g));
      } else if (beta(j) != 0.0) {
        viol = std::max(viol, std::abs(g - lambda * ps.weight(j) * (beta(j) > 0 ? 1.0 : -1.0)));
      } else {
        viol = std::max(viol, std::max(0.0, std::abs(g) - lambda * ps.weight(j)));
      }
    }
    return viol;
  };

  // convert the gradient-scale tolerance to a coordinate-change scale for
  // the inner active-set loop
  double gmax = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) gmax = std::max(gmax, G(j, j));
  const double inner_eps = 0.05 * tol_eff / std::max(2.0 * inv_n * gmax, 1e-300);

  // once the sign pattern settles, the restricted problem is linear:
  // (G b)_A = (X'y)_A - (n/2) lambda (w . s)_A. Solving it exactly finishes
  // off the slow dense-path regime coordinate descent crawls through.
  const auto solve_restricted = [&](const std::vector<Eigen::Index>& A, Vec& out) {
    const Eigen::Index m = static_cast<Eigen::Index>(A.size());
    Mat Gaa(m, m);
    Vec rhs(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index k = 0; k < m; ++k) Gaa(i, k) = G(A[i], A[k]);
      rhs(i) = xty(A[i]);
      if (A[i] != 0)
        rhs(i) -= 0.5 * static_cast<double>(n) * lambda * ps.weight(A[i]) *
                  (beta(A[i]) > 0 ? 1.0 : -1.0);
    }
    // saturated active sets make Gaa singular but the system consistent; a
    // whisper of ridge picks a stable representative
    Gaa.diagonal().array() += 1e-12 * (1.0 + Gaa.trace() / static_cast<double>(m));
    out = Gaa.ldlt().solve(rhs);
    return out.allFinite();
  };

  // applies the restricted solution on A (zeroing everything in orig) when
  // it keeps the sign pattern and improves the KKT residual
  const auto apply_if_better = [&](const std::vector<Eigen::Index>& orig,
                                   std::vector<Eigen::Index> A) {
    Vec sol;
    if (A.empty() || !solve_restricted(A, sol)) return false;
    // a crossed sign means the pattern is not settled; drop the offenders
    // once and retry the restricted solve
    std::vector<Eigen::Index> kept;
    for (std::size_t i = 0; i < A.size(); ++i)
      if (A[i] == 0 || sol(static_cast<Eigen::Index>(i)) * beta(A[i]) > 0.0) kept.push_back(A[i]);
    if (kept.size() != A.size()) {
      if (kept.empty() || !solve_restricted(kept, sol)) return false;
      for (std::size_t i = 0; i < kept.size(); ++i)
        if (kept[i] != 0 && sol(static_cast<Eigen::Index>(i)) * beta(kept[i]) <= 0.0) return false;
      A = std::move(kept);
    }
    const Vec beta_old = beta;
    const double kkt_old = kkt_violation();
    for (Eigen::Index j : orig) beta(j) = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) beta(A[i]) = sol(static_cast<Eigen::Index>(i));
    u = xty - G * beta;
    if (kkt_violation() >= kkt_old) {
      beta = beta_old;
      u = xty - G * beta;
      return false;
    }
    return true;
  };

  const auto try_polish = [&]() {
    std::vector<Eigen::Index> A;
    for (Eigen::Index j = 0; j < p; ++j)
      if ((j == 0 || beta(j) != 0.0) && !ps.excluded[static_cast<std::size_t>(j)] &&
          G(j, j) > 0.0)
        A.push_back(j);
    if (A.empty()) return;
    if (apply_if_better(A, A)) return;
    // oversaturated pattern (more actives than rows): some solution exists
    // on at most n columns, so retry with the smallest coefficients dropped
    if (static_cast<Eigen::Index>(A.size()) > n) {
      std::vector<Eigen::Index> trimmed = A;
      std::sort(trimmed.begin(), trimmed.end(), [&](Eigen::Index a, Eigen::Index b) {
        const double va = a == 0 ? std::numeric_limits<double>::infinity() : std::abs(beta(a));
        const double vb = b == 0 ? std::numeric_limits<double>::infinity() : std::abs(beta(b));
        return va > vb;
      });
      trimmed.resize(static_cast<std::size_t>(n));
      std::sort(trimmed.begin(), trimmed.end());
      apply_if_better(A, trimmed);
    }
  };

  int sweeps = 0;
  double kkt = kkt_violation();
  Vec beta_best = beta;
  double kkt_best = kkt;
  int stalled = 0;
  bool restarted = false;
  while (kkt > tol_eff && sweeps < opts.max_iter) {
    // full sweep
    for (Eigen::Index j = 0; j < p; ++j) update_coord(j);
    ++sweeps;
    // inner loop on the current active set; capped so the restricted-solve
    // polish gets a chance before the budget is gone
    std::vector<Eigen::Index> active;
    for (Eigen::Index j = 0; j < p; ++j)
      if (j == 0 || beta(j) != 0.0) active.push_back(j);
    int inner = 0;
    for (; sweeps < opts.max_iter && inner < 256; ++sweeps, ++inner) {
      double maxd = 0.0;
      for (Eigen::Index j : active) maxd = std::max(maxd, update_coord(j));
      if (maxd <= inner_eps) break;
      if (inner % 128 == 127) u = xty - G * beta;  // drop accumulated drift
    }
    u = xty - G * beta;  // exact gradient before deciding optimality
    try_polish();
    kkt = kkt_violation();
    if (kkt < 0.97 * kkt_best) {
      stalled = 0;
    } else if (++stalled >= 5 && !restarted) {
      // a warm start can trap the sign pattern; escape once from cold
      restarted = true;
      stalled = 0;
      beta.setZero();
      u = xty;
      kkt = kkt_violation();
    }
    if (kkt < kkt_best) {
      kkt_best = kkt;
      beta_best = beta;
    }
  }
  if (kkt_best < kkt) {
    beta = beta_best;
    kkt = kkt_best;
  }

  LassoFit fit;
  fit.beta = beta;
  fit.lambda = lambda;
  fit.n_iter = sweeps;
  fit.kkt = kkt;
  double l1 = 0.0;
  for (Eigen::Index j = 1; j < p; ++j) l1 += ps.weight(j) * std::abs(beta(j));
  fit.objective = (y - X * beta).squaredNorm() * inv_n + lambda * l1;
  if (kkt > tol_eff && opts.throw_on_nonconvergence)
    throw ConvergenceError("fit_lasso: KKT violation " + std::to_string(kkt) + " after " +
                           std::to_string(sweeps) + " sweeps");
  return fit;
}

inline LassoFit fit_lasso(const Mat& X, const Vec& y, double lambda,
                          const LassoOptions& opts = {}, const Vec* warm = nullptr) {
  const detail::LassoWorkspace ws(X, y, opts.standardize);
  return fit_lasso_ws(ws, lambda, opts, warm);
}

}  // namespace dipw
