#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "dipw/lasso.hpp"
#include "dipw/math.hpp"

namespace dipw {

struct LogisticLassoOptions {
  double tol = 1e-7;        // max subgradient violation accepted at exit
  int max_newton = 100;     // outer quadratic approximations
  int max_inner = 2000;     // coordinate sweeps per approximation
  bool standardize = true;
  double coef_norm_guard = 1e4;  // separation guard on ||beta||_2
  bool throw_on_nonconvergence = true;
};

/// Smallest lambda for which every penalised coefficient of
/// fit_logistic_lasso is 0.
inline double lambda_max_binomial(const Mat& X, const IVec& T, bool standardize = true) {
  const Eigen::Index n = X.rows(), p = X.cols();
  const auto ps = detail::penalty_scale(X, standardize);
  const double tbar = T.cast<double>().mean();
  double lmax = 0.0;
  for (Eigen::Index j = 1; j < p; ++j) {
    if (ps.excluded[static_cast<std::size_t>(j)]) continue;
    const double g =
        std::abs(X.col(j).dot(T.cast<double>() - Vec::Constant(n, tbar))) / static_cast<double>(n);
    lmax = std::max(lmax, g / ps.weight(j));
  }
  return lmax;
}

/// Proximal Newton for the l1-penalised logistic objective
///   (1/n) sum_i [ log{1 + exp(X_i'b)} - T_i X_i'b ] + lambda sum_{j>=2} s_j |b_j|.
/// Each outer step forms the IRLS quadratic model at the current iterate and
/// minimises it with cyclic coordinate descent; a halving line search on the
/// true objective guards the step. Perfect separation is caught by a bound
/// on ||b||_2, in which case the fit at the guard is returned with
/// `diverged` set.
inline LassoFit fit_logistic_lasso(const Mat& X, const IVec& T, double lambda,
                                   const LogisticLassoOptions& opts = {},
                                   const Vec* warm = nullptr) {
  const Eigen::Index n = X.rows(), p = X.cols();
  if (T.size() != n) throw DimensionError("fit_logistic_lasso: X rows != T length");
  if (lambda < 0.0) throw ConfigError("fit_logistic_lasso: lambda must be nonnegative");
  const int n1 = T.sum();
  if (n1 == 0 || n1 == n)
    throw DegenerateTreatmentError("fit_logistic_lasso: both classes must be present");

  const auto ps = detail::penalty_scale(X, opts.standardize);
  const double inv_n = 1.0 / static_cast<double>(n);
  const Vec t = T.cast<double>();

  const auto objective = [&](const Vec& b, const Vec& eta) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = eta(i);
      // log(1 + exp(e)) without overflow
      ll += (e > 0.0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - t(i) * e;
    }
    double l1 = 0.0;
    for (Eigen::Index j = 1; j < p; ++j) l1 += ps.weight(j) * std::abs(b(j));
    return ll * inv_n + lambda * l1;
  };

  Vec beta = (warm && warm->size() == p) ? *warm : Vec::Zero(p);
  Vec eta = X * beta;

  const auto subgrad_violation = [&](const Vec& b, const Vec& lin) {
    const Vec mu = lin.unaryExpr([](double e) { return logistic(e); });
    const Vec g = X.transpose() * (mu - t) * inv_n;
    double viol = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (ps.excluded[static_cast<std::size_t>(j)]) continue;
      if (j == 0) {
        viol = std::max(viol, std::abs(g(j)));
      } else if (b(j) != 0.0) {
        viol = std::max(viol, std::abs(g(j) + lambda * ps.weight(j) * (b(j) > 0 ? 1.0 : -1.0)));
      } else {
        viol = std::max(viol, std::max(0.0, std::abs(g(j)) - lambda * ps.weight(j)));
      }
    }
    return viol;
  };

  LassoFit fit;
  fit.lambda = lambda;

  double kkt = subgrad_violation(beta, eta);
  int outer = 0;
  Mat Xw(n, p);  // sqrt(w)-scaled design, rebuilt per quadratic model
  for (; kkt > opts.tol && outer < opts.max_newton; ++outer) {
    // IRLS weights and working residual r_i = z_i - X_i'b with
    // z_i = eta_i + (t_i - mu_i)/w_i, so r_i = (t_i - mu_i)/w_i. In the
    // sqrt(w)-scaled variables the quadratic model is a plain lasso.
    Vec w(n), rs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = logistic(eta(i));
      const double wi = std::max(mu * (1.0 - mu), 1e-10);
      w(i) = wi;
      rs(i) = (t(i) - mu) / std::sqrt(wi);
    }
    const Vec sw = w.array().sqrt();
    Xw = sw.asDiagonal() * X;
    Vec h(p);  // (1/n) sum_i w_i X_ij^2
    for (Eigen::Index j = 0; j < p; ++j) h(j) = Xw.col(j).squaredNorm() * inv_n;

    // inexact inner solve: the quadratic model only needs enough accuracy
    // to keep the outer Newton iteration progressing
    const double inner_gtol = std::max(0.25 * opts.tol, 0.05 * kkt);
    const double inner_eps = inner_gtol / std::max(h.maxCoeff(), 1e-300);
    Vec bq = beta;
    const auto inner_update = [&](Eigen::Index j) -> double {
      if (ps.excluded[static_cast<std::size_t>(j)] || h(j) <= 0.0) return 0.0;
      const double cj = Xw.col(j).dot(rs) * inv_n + h(j) * bq(j);
      double bnew;
      if (j == 0) {
        bnew = cj / h(j);
      } else {
        bnew = soft_threshold(cj, lambda * ps.weight(j)) / h(j);
      }
      const double delta = bnew - bq(j);
      if (delta != 0.0) {
        bq(j) = bnew;
        rs -= Xw.col(j) * delta;
      }
      return std::abs(delta);
    };
    const auto quad_kkt = [&]() {
      double viol = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (ps.excluded[static_cast<std::size_t>(j)] || h(j) <= 0.0) continue;
        const double g = -Xw.col(j).dot(rs) * inv_n;
        if (j == 0)
          viol = std::max(viol, std::abs(g));
        else if (bq(j) != 0.0)
          viol = std::max(viol, std::abs(g + lambda * ps.weight(j) * (bq(j) > 0 ? 1.0 : -1.0)));
        else
          viol = std::max(viol, std::max(0.0, std::abs(g) - lambda * ps.weight(j)));
      }
      return viol;
    };
    // restricted solve on the settled sign pattern of the quadratic model
    const auto quad_polish = [&]() {
      std::vector<Eigen::Index> A;
      for (Eigen::Index j = 0; j < p; ++j)
        if ((j == 0 || bq(j) != 0.0) && !ps.excluded[static_cast<std::size_t>(j)] && h(j) > 0.0)
          A.push_back(j);
      const Eigen::Index m = static_cast<Eigen::Index>(A.size());
      if (m == 0 || m > n) return;
      Mat Xa(n, m);
      for (Eigen::Index i = 0; i < m; ++i) Xa.col(i) = Xw.col(A[static_cast<std::size_t>(i)]);
      const Vec z = Xa * Eigen::VectorXd::NullaryExpr(m, [&](Eigen::Index i) {
                      return bq(A[static_cast<std::size_t>(i)]);
                    }) + rs;
      Vec rhs = Xa.transpose() * z;
      for (Eigen::Index i = 0; i < m; ++i) {
        const Eigen::Index j = A[static_cast<std::size_t>(i)];
        if (j != 0)
          rhs(i) -= static_cast<double>(n) * lambda * ps.weight(j) * (bq(j) > 0 ? 1.0 : -1.0);
      }
      const Vec sol = (Xa.transpose() * Xa).ldlt().solve(rhs);
      if (!sol.allFinite()) return;
      for (Eigen::Index i = 0; i < m; ++i)
        if (A[static_cast<std::size_t>(i)] != 0 && sol(i) * bq(A[static_cast<std::size_t>(i)]) <= 0.0)
          return;
      const Vec bq_old = bq;
      const Vec rs_old = rs;
      const double kkt_old = quad_kkt();
      for (Eigen::Index i = 0; i < m; ++i) bq(A[static_cast<std::size_t>(i)]) = sol(i);
      rs = z - Xa * sol;
      if (quad_kkt() >= kkt_old) {
        bq = bq_old;
        rs = rs_old;
      }
    };
    int sweeps = 0;
    while (sweeps < opts.max_inner) {
      double maxd = 0.0;
      for (Eigen::Index j = 0; j < p; ++j) maxd = std::max(maxd, inner_update(j));
      ++sweeps;
      std::vector<Eigen::Index> active;
      for (Eigen::Index j = 0; j < p; ++j)
        if (j == 0 || bq(j) != 0.0) active.push_back(j);
      for (int cap = 0; sweeps < opts.max_inner && cap < 64; ++sweeps, ++cap) {
        double d = 0.0;
        for (Eigen::Index j : active) d = std::max(d, inner_update(j));
        if (d <= inner_eps) break;
      }
      quad_polish();
      if (quad_kkt() <= inner_gtol) break;
    }

    // halving line search on the true objective
    const Vec dir = bq - beta;
    const Vec deta = X * dir;
    const double f0 = objective(beta, eta);
    double step = 1.0;
    Vec bnext = bq, enext = eta + deta;
    for (int ls = 0; ls < 30 && objective(bnext, enext) > f0 + 1e-12; ++ls) {
      step *= 0.5;
      bnext = beta + step * dir;
      enext = eta + step * deta;
    }
    beta = bnext;
    eta = enext;

    if (beta.norm() > opts.coef_norm_guard) {
      fit.diverged = true;  // perfect separation: return the guarded fit
      break;
    }
    kkt = subgrad_violation(beta, eta);
  }

  fit.beta = beta;
  fit.n_iter = outer;
  fit.kkt = kkt;
  fit.objective = objective(beta, eta);
  if (!fit.diverged && kkt > opts.tol && opts.throw_on_nonconvergence)
    throw ConvergenceError("fit_logistic_lasso: subgradient violation " + std::to_string(kkt) +
                           " after " + std::to_string(outer) + " Newton steps");
  return fit;
}

}  // namespace dipw
