#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "dipw/dataset.hpp"
#include "dipw/error.hpp"

namespace dipw {

/// Bias-correction program data. X_main holds the rows being corrected
/// (already mean-centred by the caller when the Lagrangian form of the
/// multi-split algorithm asks for it), f_main the regression values on
/// those rows, and target the auxiliary-side moment vector. Exactly one of
/// eta (constrained form) / kappa (Lagrangian form) is set.
struct BalanceProblem {
  Mat X_main;   // n_k x p
  Vec f_main;   // n_k
  Vec target;   // p
  std::optional<double> eta;
  std::optional<double> kappa;

  void validate() const {
    if (f_main.size() != X_main.rows())
      throw DimensionError("BalanceProblem: f_main length != X_main rows");
    if (target.size() != X_main.cols())
      throw DimensionError("BalanceProblem: target length != X_main cols");
    if (eta.has_value() == kappa.has_value())
      throw ConfigError("BalanceProblem: exactly one of eta/kappa must be set");
    if (eta && *eta < 0.0) throw ConfigError("BalanceProblem: eta must be nonnegative");
    if (kappa && !(*kappa > 0.0 && *kappa < 1.0))
      throw ConfigError("BalanceProblem: kappa must lie in (0,1)");
  }
};

struct BalanceSolution {
  Vec mu_hat;
  double objective = 0.0;
  double feasibility_residual = 0.0;  // constrained form: max violation beyond eta
  double certificate_gap = 0.0;       // cheap internal certificate; certify() recomputes
  bool fallback_zero = false;
  int iterations = 0;
  std::vector<double> trace;  // best-so-far objective per iteration, when recorded
};

struct BalanceOptions {
  int max_iter = 20000;
  double rho = 1.0;
  bool adaptive_rho = true;
  double eps_abs = 1e-10;
  double eps_rel = 1e-9;
  double tol_feas_scale = 1e-7;  // tol_feas = scale * (1 + ||target||_inf)
  int stall_window = 1000;       // infeasibility: no progress over this window ...
  double stall_factor = 1e3;     // ... while residual > tol_feas * factor
  bool record_trace = false;
};

namespace detail {

/// Solves (alpha I + beta X X') w = rhs repeatedly for fixed X. Uses the
/// n x n factorisation when n <= p, otherwise the Woodbury form with a
/// p x p factorisation.
class RidgeSolver {
public:
  void init(const Mat& X, double alpha, double beta) {
    X_ = &X;
    alpha_ = alpha;
    beta_ = beta;
    const Eigen::Index n = X.rows(), p = X.cols();
    direct_ = n <= p;
    if (direct_) {
      Mat M = beta * (X * X.transpose());
      M.diagonal().array() += alpha;
      llt_.compute(M);
    } else {
      Mat K = X.transpose() * X;
      K.diagonal().array() += alpha / beta;
      llt_.compute(K);
    }
    if (llt_.info() != Eigen::Success)
      throw ConvergenceError("RidgeSolver: Cholesky factorisation failed");
  }

  Vec solve(const Vec& rhs) const {
    if (direct_) return llt_.solve(rhs);
    // Woodbury: (aI + bXX')^{-1} r = (r - X (a/b I + X'X)^{-1} X' r) / a
    return (rhs - (*X_) * llt_.solve(X_->transpose() * rhs)) / alpha_;
  }

private:
  const Mat* X_ = nullptr;
  double alpha_ = 1.0, beta_ = 1.0;
  bool direct_ = true;
  Eigen::LLT<Mat> llt_;
};

/// Exact prox of z -> ||z||_inf^2 with weight 1/rho:
///   argmin_z ||z||_inf^2 + (rho/2) ||z - q||^2.
/// Clamps q to [-m*, m*] where m* is the root of the monotone stationarity
/// condition 2m = rho * sum_i (|q_i| - m)_+, found by bisection.
inline Vec prox_linf_squared(const Vec& q, double rho) {
  const Eigen::Index p = q.size();
  const double qmax = q.lpNorm<Eigen::Infinity>();
  if (qmax == 0.0) return Vec::Zero(p);

  const auto slope = [&](double m) {
    double acc = 2.0 * m;
    for (Eigen::Index i = 0; i < p; ++i) acc -= rho * std::max(std::abs(q(i)) - m, 0.0);
    return acc;
  };
  double lo = 0.0, hi = qmax;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) >= 0.0 ? hi : lo) = mid;
  }
  const double m = 0.5 * (lo + hi);
  Vec z(p);
  for (Eigen::Index i = 0; i < p; ++i) z(i) = std::clamp(q(i), -m, m);
  return z;
}

/// Euclidean projection onto the probability simplex.
inline Vec project_simplex(const Vec& y) {
  const Eigen::Index m = y.size();
  std::vector<double> u(y.data(), y.data() + m);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int k = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    css += u[static_cast<std::size_t>(i)];
    const double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) {
      theta = t;
      k = static_cast<int>(i) + 1;
    }
  }
  (void)k;
  Vec out(m);
  for (Eigen::Index i = 0; i < m; ++i) out(i) = std::max(y(i) - theta, 0.0);
  return out;
}

/// min_{alpha >= 0} || g0 + D alpha ||_2 by projected FISTA; returns the
/// achieved norm. Small dense problems only.
inline double nnls_residual_norm(const Vec& g0, const Mat& D, int iters = 5000) {
  if (D.cols() == 0) return g0.norm();
  const Mat G = D.transpose() * D;
  const Vec b = D.transpose() * g0;
  double L = G.norm();  // Frobenius upper-bounds the spectral norm
  if (L <= 0.0) return g0.norm();
  Vec a = Vec::Zero(D.cols()), av = a;
  double tk = 1.0;
  for (int it = 0; it < iters; ++it) {
    const Vec grad = G * av + b;
    Vec anew = (av - grad / L).cwiseMax(0.0);
    const double tnew = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    av = anew + ((tk - 1.0) / tnew) * (anew - a);
    a = anew;
    tk = tnew;
  }
  return (g0 + D * a).norm();
}

}  // namespace detail

/// Euclidean projection of f onto the moment polyhedron (the constrained
/// bias-correction program):
///   min (1/n) ||f - mu||^2   s.t.  || target - X'(mu - f)/n ||_inf <= eta.
/// ADMM on the box splitting z = target - X'(mu-f)/n; when the polyhedron
/// is judged empty (feasibility restoration stalls, confirmed by a Farkas
/// direction when one emerges), returns mu = 0 with fallback_zero set.
inline BalanceSolution solve_constrained(const BalanceProblem& prob,
                                         const BalanceOptions& opts = {}) {
  prob.validate();
  if (!prob.eta) throw ConfigError("solve_constrained: eta must be set");
  const Mat& X = prob.X_main;
  const Vec& v = prob.target;
  const Vec& f = prob.f_main;
  const double eta = *prob.eta;
  const Eigen::Index n = X.rows();
  const double dn = static_cast<double>(n);
  const double tol_feas = opts.tol_feas_scale * (1.0 + v.lpNorm<Eigen::Infinity>());

  BalanceSolution sol;

  // interior shortcut: mu = f is feasible iff ||v||_inf <= eta
  if (v.lpNorm<Eigen::Infinity>() <= eta) {
    sol.mu_hat = f;
    sol.objective = 0.0;
    sol.feasibility_residual = 0.0;
    sol.certificate_gap = 0.0;
    return sol;
  }

  double rho = opts.rho;
  detail::RidgeSolver ridge;
  ridge.init(X, 2.0 / dn, rho / (dn * dn));

  Vec w = Vec::Zero(n);
  Vec Aw = Vec::Zero(v.size());  // X' w / n
  Vec z = v.cwiseMax(-eta).cwiseMin(eta);
  Vec u = Vec::Zero(v.size());

  const auto feas_of = [&](const Vec& aw) {
    return std::max(0.0, (v - aw).lpNorm<Eigen::Infinity>() - eta);
  };

  double best_feas = feas_of(Aw);
  double window_best = best_feas;
  int since_window = 0;
  bool infeasible = false;

  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vec rhs = (rho / dn) * (X * (v - z - u));
    w = ridge.solve(rhs);
    Aw = X.transpose() * w / dn;
    z = (v - Aw - u).cwiseMax(-eta).cwiseMin(eta);
    const Vec r_pri = Aw + z - v;
    u += r_pri;

    const double pri = r_pri.lpNorm<Eigen::Infinity>();
    const double feas = feas_of(Aw);
    best_feas = std::min(best_feas, feas);

    if (opts.record_trace) sol.trace.push_back(w.squaredNorm() / dn);

    // stall-based infeasibility detection, confirmed by a Farkas direction
    if (++since_window >= opts.stall_window) {
      if (best_feas > tol_feas * opts.stall_factor &&
          best_feas > (1.0 - 1e-3) * window_best) {
        const Vec d = u;  // accumulated dual direction
        const double d1 = d.lpNorm<1>();
        if (d1 > 0.0) {
          const double null_res = (X * d).lpNorm<Eigen::Infinity>() / dn;
          const double margin = std::abs(v.dot(d)) - eta * d1;
          if (null_res <= 1e-6 * d.lpNorm<Eigen::Infinity>() && margin > 0.0) {
            infeasible = true;
            break;
          }
        }
        if (best_feas > tol_feas * opts.stall_factor * 10.0) {
          infeasible = true;  // hard stall without certificate
          break;
        }
      }
      window_best = best_feas;
      since_window = 0;
    }

    const double eps_pri = opts.eps_abs + opts.eps_rel * std::max({Aw.lpNorm<Eigen::Infinity>(),
                                                                   z.lpNorm<Eigen::Infinity>(),
                                                                   v.lpNorm<Eigen::Infinity>()});
    if (pri <= eps_pri && feas <= tol_feas) {
      const Vec r_dual = (rho / dn) * (X * r_pri);  // dual residual proxy
      if (r_dual.lpNorm<Eigen::Infinity>() <= opts.eps_abs + opts.eps_rel * rho) break;
    }

    if (opts.adaptive_rho && it > 0 && it % 200 == 0) {
      const double dual = ((rho / dn) * (X * (z - (v - Aw - u)))).norm();
      if (pri > 10.0 * std::max(dual, 1e-16) && rho < 1e6) {
        rho *= 2.0;
        u /= 2.0;
        ridge.init(X, 2.0 / dn, rho / (dn * dn));
      } else if (dual > 10.0 * std::max(pri, 1e-16) && rho > 1e-6) {
        rho /= 2.0;
        u *= 2.0;
        ridge.init(X, 2.0 / dn, rho / (dn * dn));
      }
    }
  }

  sol.iterations = it;
  if (infeasible) {
    sol.fallback_zero = true;
    sol.mu_hat = Vec::Zero(n);
    sol.objective = f.squaredNorm() / dn;
    sol.feasibility_residual =
        std::max(0.0, (v + X.transpose() * f / dn).lpNorm<Eigen::Infinity>() - eta);
    sol.certificate_gap = std::numeric_limits<double>::infinity();
    return sol;
  }

  sol.mu_hat = f + w;
  sol.objective = w.squaredNorm() / dn;
  sol.feasibility_residual = feas_of(Aw);
  // duality gap from the ADMM multiplier y = rho * u
  const Vec y = rho * u;
  const double qdual =
      -(dn / 4.0) * (X * y / dn).squaredNorm() - eta * y.lpNorm<1>() - y.dot(v);
  sol.certificate_gap = sol.feasibility_residual + std::max(0.0, sol.objective - qdual);
  return sol;
}

/// Cross-check path for the constrained program: coordinate descent on its
/// dual, an l1-penalised quadratic in theta,
///   min ||X theta||^2/(4n) - target' theta + eta ||theta||_1,
/// with mu reconstructed as f + X theta / 2. Unbounded descent certifies
/// primal infeasibility.
inline BalanceSolution solve_constrained_dual(const BalanceProblem& prob, double tol = 1e-12,
                                              int max_sweeps = 200000) {
  prob.validate();
  if (!prob.eta) throw ConfigError("solve_constrained_dual: eta must be set");
  const Mat& X = prob.X_main;
  const Vec& v = prob.target;
  const double eta = *prob.eta;
  const Eigen::Index n = X.rows(), p = X.cols();
  const double dn = static_cast<double>(n);

  BalanceSolution sol;

  Vec colsq(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    colsq(j) = X.col(j).squaredNorm();
    if (colsq(j) == 0.0 && std::abs(v(j)) > eta) {
      // constraint |v_j| <= eta cannot be met by any mu
      sol.fallback_zero = true;
      sol.mu_hat = Vec::Zero(n);
      sol.objective = prob.f_main.squaredNorm() / dn;
      sol.feasibility_residual = std::abs(v(j)) - eta;
      sol.certificate_gap = std::numeric_limits<double>::infinity();
      return sol;
    }
  }

  Vec theta = Vec::Zero(p);
  Vec q = Vec::Zero(n);  // X theta
  int sweeps = 0;
  for (; sweeps < max_sweeps; ++sweeps) {
    double maxd = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (colsq(j) == 0.0) continue;
      const double h = colsq(j) / (2.0 * dn);
      const double c = v(j) - X.col(j).dot(q) / (2.0 * dn) + h * theta(j);
      const double tnew = (std::abs(c) <= eta) ? 0.0 : (c > 0 ? (c - eta) / h : (c + eta) / h);
      const double delta = tnew - theta(j);
      if (delta != 0.0) {
        theta(j) = tnew;
        q += X.col(j) * delta;
        maxd = std::max(maxd, std::abs(delta) * std::sqrt(colsq(j)));
      }
    }
    if (maxd <= tol * (1.0 + theta.lpNorm<Eigen::Infinity>())) break;
    if (theta.lpNorm<1>() > 1e12) {  // unbounded dual => empty polyhedron
      sol.fallback_zero = true;
      sol.mu_hat = Vec::Zero(n);
      sol.objective = prob.f_main.squaredNorm() / dn;
      sol.feasibility_residual =
          std::max(0.0, (v + X.transpose() * prob.f_main / dn).lpNorm<Eigen::Infinity>() - eta);
      sol.certificate_gap = std::numeric_limits<double>::infinity();
      return sol;
    }
  }

  const Vec w = q / 2.0;
  sol.mu_hat = prob.f_main + w;
  sol.objective = w.squaredNorm() / dn;
  sol.feasibility_residual =
      std::max(0.0, (v - X.transpose() * w / dn).lpNorm<Eigen::Infinity>() - eta);
  const double qdual = -q.squaredNorm() / (4.0 * dn) + v.dot(theta) - eta * theta.lpNorm<1>();
  sol.certificate_gap = sol.feasibility_residual + std::max(0.0, sol.objective - qdual);
  sol.iterations = sweeps;
  return sol;
}

/// Lagrangian bias-correction program of the multi-split algorithm:
///   min_mu  (1-kappa)/(kappa n^2) ||f - mu||^2
///           + max_j | X_j'(mu - f)/n - target_j |^2,
/// i.e. a ||w||^2 + ||Aw - c||_inf^2 with w = mu - f. ADMM with the exact
/// prox of the squared l-infinity norm; the returned iterate is the best
/// objective value seen, so the reported objective sequence is
/// nonincreasing after the first iteration.
inline BalanceSolution solve_lagrangian(const BalanceProblem& prob,
                                        const BalanceOptions& opts = {}) {
  prob.validate();
  if (!prob.kappa) throw ConfigError("solve_lagrangian: kappa must be set");
  const Mat& X = prob.X_main;
  const Vec& c = prob.target;
  const Vec& f = prob.f_main;
  const Eigen::Index n = X.rows();
  const double dn = static_cast<double>(n);
  const double kappa = *prob.kappa;
  const double a = (1.0 - kappa) / (kappa * dn * dn);

  const auto objective_of = [&](const Vec& w, const Vec& Aw) {
    return a * w.squaredNorm() + std::pow((Aw - c).lpNorm<Eigen::Infinity>(), 2);
  };

  double rho = opts.rho;
  detail::RidgeSolver ridge;
  ridge.init(X, 2.0 * a, rho / (dn * dn));

  Vec w = Vec::Zero(n);
  Vec Aw = Vec::Zero(c.size());
  Vec z = detail::prox_linf_squared(-c, rho);
  Vec u = Vec::Zero(c.size());

  BalanceSolution sol;
  Vec w_best = w;
  double obj_best = objective_of(w, Aw);
  if (opts.record_trace) sol.trace.push_back(obj_best);

  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Vec rhs = (rho / dn) * (X * (c + z - u));
    w = ridge.solve(rhs);
    Aw = X.transpose() * w / dn;
    const Vec zold = z;
    z = detail::prox_linf_squared(Aw - c + u, rho);
    const Vec r_pri = Aw - c - z;
    u += r_pri;

    const double obj = objective_of(w, Aw);
    if (obj < obj_best) {
      obj_best = obj;
      w_best = w;
    }
    if (opts.record_trace) sol.trace.push_back(obj_best);

    const double pri = r_pri.lpNorm<Eigen::Infinity>();
    const double dual = ((rho / dn) * (X * (z - zold))).lpNorm<Eigen::Infinity>();
    const double eps_pri =
        opts.eps_abs + opts.eps_rel * std::max({Aw.lpNorm<Eigen::Infinity>(),
                                                z.lpNorm<Eigen::Infinity>(),
                                                c.lpNorm<Eigen::Infinity>()});
    const double eps_dual = opts.eps_abs + opts.eps_rel * rho * u.lpNorm<Eigen::Infinity>();
    if (pri <= eps_pri && dual <= eps_dual) {
      ++it;
      break;
    }

    if (opts.adaptive_rho && it > 0 && it % 200 == 0) {
      if (pri > 10.0 * std::max(dual, 1e-16) && rho < 1e6) {
        rho *= 2.0;
        u /= 2.0;
        ridge.init(X, 2.0 * a, rho / (dn * dn));
      } else if (dual > 10.0 * std::max(pri, 1e-16) && rho > 1e-6) {
        rho /= 2.0;
        u *= 2.0;
        ridge.init(X, 2.0 * a, rho / (dn * dn));
      }
    }
  }

  sol.iterations = it;
  sol.mu_hat = f + w_best;
  sol.objective = obj_best;
  sol.feasibility_residual = 0.0;  // unconstrained form
  // duality gap from y = rho * u:
  //   q(y) = -||X y / n||^2/(4a) - ||y||_1^2/4 - y'c
  const Vec y = rho * u;
  const double qdual = -(X * y / dn).squaredNorm() / (4.0 * a) -
                       std::pow(y.lpNorm<1>(), 2) / 4.0 - y.dot(c);
  sol.certificate_gap = std::max(0.0, obj_best - qdual);
  return sol;
}

/// Rigorous post-hoc certificate. Constrained form: feasibility violation
/// plus the norm of the minimum-norm KKT residual over near-active
/// constraint gradients (nonnegative least squares). Lagrangian form: the
/// norm of the minimum-norm subgradient at mu_hat.
inline double certify(const BalanceProblem& prob, const BalanceSolution& sol) {
  prob.validate();
  const Mat& X = prob.X_main;
  const Eigen::Index n = X.rows(), p = X.cols();
  const double dn = static_cast<double>(n);
  const Vec w = sol.mu_hat - prob.f_main;
  const Vec Aw = X.transpose() * w / dn;

  if (prob.eta) {
    const double eta = *prob.eta;
    const Vec slack = prob.target - Aw;
    const double feas = std::max(0.0, slack.lpNorm<Eigen::Infinity>() - eta);
    const Vec g0 = (2.0 / dn) * w;
    const double act_tol = std::max(1e-9, 1e-7 * (1.0 + eta));
    std::vector<Eigen::Index> up, lo;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (slack(j) >= eta - act_tol) up.push_back(j);    // grad -X_j/n
      if (slack(j) <= -eta + act_tol) lo.push_back(j);   // grad +X_j/n
    }
    Mat D(n, static_cast<Eigen::Index>(up.size() + lo.size()));
    Eigen::Index col = 0;
    for (Eigen::Index j : up) D.col(col++) = -X.col(j) / dn;
    for (Eigen::Index j : lo) D.col(col++) = X.col(j) / dn;
    return feas + detail::nnls_residual_norm(g0, D);
  }

  const double kappa = *prob.kappa;
  const double a = (1.0 - kappa) / (kappa * dn * dn);
  const Vec zhat = Aw - prob.target;
  const double m = zhat.lpNorm<Eigen::Infinity>();
  const Vec g0 = 2.0 * a * w;
  if (m == 0.0) return g0.norm();

  const double act_tol = 1e-7 * (1.0 + m);
  std::vector<Eigen::Index> act;
  for (Eigen::Index j = 0; j < p; ++j)
    if (std::abs(zhat(j)) >= m - act_tol) act.push_back(j);

  // min over the simplex of || g0 + 2m * sum_j lambda_j sign(z_j) X_j / n ||
  Mat D(n, static_cast<Eigen::Index>(act.size()));
  for (std::size_t k = 0; k < act.size(); ++k)
    D.col(static_cast<Eigen::Index>(k)) =
        2.0 * m * (zhat(act[k]) > 0 ? 1.0 : -1.0) * X.col(act[k]) / dn;
  const Mat G = D.transpose() * D;
  const Vec b = D.transpose() * g0;
  double L = std::max(G.norm(), 1e-30);
  Vec lam = Vec::Constant(D.cols(), 1.0 / static_cast<double>(D.cols()));
  Vec lv = lam;
  double tk = 1.0;
  for (int itn = 0; itn < 5000; ++itn) {
    const Vec grad = G * lv + b;
    Vec lnew = detail::project_simplex(lv - grad / L);
    const double tnew = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    lv = lnew + ((tk - 1.0) / tnew) * (lnew - lam);
    lam = lnew;
    tk = tnew;
  }
  return (g0 + D * lam).norm();
}

}  // namespace dipw
