#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "dipw/balance.hpp"
#include "dipw/mdipw.hpp"

namespace dipw {

/// Linear projection of the heterogeneous treatment effect onto features
/// W = g(X); beta_hat has length d (or p for the Lasso variant over W = X).
struct HteProjection {
  Mat W;
  Vec beta_hat;
  std::optional<double> lambda;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["beta_hat"] = std::vector<double>(beta_hat.data(), beta_hat.data() + beta_hat.size());
    if (lambda) j["lambda"] = *lambda;
    j["d"] = W.cols();
    return j;
  }
};

/// Corrected pseudo-outcome D_i = T_i(Y_i-mu_i)/pi_i - (1-T_i)(Y_i-mu_i)/(1-pi_i).
inline Vec corrected_contrast(const Dataset& d, const PropensityFit& fit, const Vec& mu) {
  if (mu.size() != d.n()) throw DimensionError("corrected_contrast: mu length != n");
  Vec out(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    const double r = d.Y(i) - mu(i);
    out(i) = d.T(i) == 1 ? r / pi : -r / (1.0 - pi);
  }
  return out;
}

/// Least-squares projection of the corrected pseudo-outcomes onto W.
/// With W an intercept column only this recovers the basic debiased IPW
/// value. Rank-deficient W raises an error naming the dependent columns.
inline HteProjection project_hte(const Dataset& d, const PropensityFit& fit, const Vec& mu,
                                 const Mat& W) {
  if (W.rows() != d.n()) throw DimensionError("project_hte: W rows != n");
  const Eigen::Index dd = W.cols();
  if (dd < 1) throw DimensionError("project_hte: W must have at least one column");

  Eigen::ColPivHouseholderQR<Mat> qr(W);
  qr.setThreshold(1e-10);
  if (qr.rank() < dd) {
    const auto perm = qr.colsPermutation().indices();
    std::string cols;
    for (Eigen::Index k = qr.rank(); k < dd; ++k)
      cols += (cols.empty() ? "" : ", ") + std::to_string(perm(k));
    throw DataError("project_hte: W'W is singular; dependent columns: " + cols);
  }

  const Vec D = corrected_contrast(d, fit, mu);
  HteProjection out;
  out.W = W;
  out.beta_hat = qr.solve(D);
  return out;
}

/// Sparse variant with W = X: l1-penalised regression of the corrected
/// pseudo-outcomes on X (intercept unpenalised), lambda by cross-validation
/// with the 1-SE rule when not supplied.
inline HteProjection project_hte_lasso(const Dataset& d, const PropensityFit& fit, const Vec& mu,
                                       std::optional<double> lambda = std::nullopt,
                                       const CvOptions& cv = {}) {
  const Vec D = corrected_contrast(d, fit, mu);
  double lam;
  if (lambda) {
    lam = *lambda;
  } else {
    const CvReport rep = cv_select(d.X, D, Family::gaussian, cv);
    lam = rep.lambda_1se;
  }
  LassoOptions lo;
  lo.standardize = cv.standardize;
  const LassoFit f = fit_lasso(d.X, D, lam, lo);
  HteProjection out;
  out.W = d.X;
  out.beta_hat = f.beta;
  out.lambda = lam;
  return out;
}

struct HteConfig {
  MdipwConfig mdipw;      // shared step-1/2 settings and splits
  double c_eta = 1.0;     // eta = c_eta * sqrt(log(p)/n)
  bool lasso_variant = false;
};

namespace detail {

/// Per-fold constrained correction with the weighted-moment constraints:
/// the effective design has one column per (projection feature j, covariate
/// l) holding W_ij * X_il, and the auxiliary side is the complement fold.
inline Vec hte_fold_mu(const Mat& X, const Mat& W, const Vec& y_tilde, const Vec& f_vals,
                       const std::vector<int>& I_k, const std::vector<int>& I_kc, double eta,
                       const BalanceOptions& bopts, int* fallback_count) {
  const Eigen::Index p = X.cols(), dd = W.cols();
  const Eigen::Index nk = static_cast<Eigen::Index>(I_k.size());

  BalanceProblem prob;
  prob.eta = eta;
  prob.X_main = Mat(nk, dd * p);
  prob.f_main = Vec(nk);
  for (Eigen::Index r = 0; r < nk; ++r) {
    const int i = I_k[static_cast<std::size_t>(r)];
    prob.f_main(r) = f_vals(i);
    for (Eigen::Index j = 0; j < dd; ++j)
      prob.X_main.row(r).segment(j * p, p) = W(i, j) * X.row(i);
  }
  prob.target = Vec::Zero(dd * p);
  for (int i : I_kc) {
    const double resid = y_tilde(i) - f_vals(i);
    for (Eigen::Index j = 0; j < dd; ++j)
      prob.target.segment(j * p, p) += W(i, j) * resid * X.row(i).transpose();
  }
  prob.target /= static_cast<double>(I_kc.size());

  const BalanceSolution sol = solve_constrained(prob, bopts);
  if (sol.fallback_zero && fallback_count) ++(*fallback_count);
  return sol.mu_hat;
}

}  // namespace detail

/// Multi-split estimation of the linear projection of the heterogeneous
/// effect onto W: steps 1-2 as in the ATE algorithm, then per fold the
/// constrained program with weighted moments (complement fold as the
/// auxiliary side), least squares per split, and averaging over splits.
inline HteProjection run_hte(const Dataset& d, const Mat& W, const HteConfig& cfg = {}) {
  d.validate_for_estimation();
  if (W.rows() != d.n()) throw DimensionError("run_hte: W rows != n");
  const MdipwConfig& mc = cfg.mdipw;

  PropensityFit pf;
  if (mc.forced_pi) {
    pf = force_propensity(*mc.forced_pi, mc.clip);
  } else {
    CvOptions cv;
    cv.folds = mc.cv_folds;
    cv.grid_size = mc.cv_grid;
    cv.standardize = mc.standardize;
    cv.seed = detail::derive_seed(mc.seed, "cv-gamma");
    pf = fit_propensity(d, cv, mc.clip);
  }

  const PseudoOutcome ps = transform_tilde_y(d, pf);
  CvOptions cvf;
  cvf.folds = mc.cv_folds;
  cvf.grid_size = mc.cv_grid;
  cvf.standardize = mc.standardize;
  cvf.seed = detail::derive_seed(mc.seed, "cv-ftilde");
  const LassoFit ftilde = cv_fit_gaussian(d.X, ps.y_tilde, cvf);
  const Vec f_vals = d.X * ftilde.beta;

  const double eta =
      cfg.c_eta * std::sqrt(std::log(static_cast<double>(d.p())) / static_cast<double>(d.n()));

  RandomStream split_rng(mc.seed, "splits");
  const std::vector<FoldPair> pairs =
      detail::draw_pairs(d.T, split_rng, mc.B, mc.deterministic_splits, mc.max_resplit);

  int fallbacks = 0;
  Mat betas;
  for (int b = 0; b < mc.B; ++b) {
    const auto& pr = pairs[static_cast<std::size_t>(b)];
    Vec mu = Vec::Zero(d.n());
    for (int side = 0; side < 2; ++side) {
      const auto& I_k = side == 0 ? pr.first : pr.second;
      const auto& I_kc = side == 0 ? pr.second : pr.first;
      const Vec mu_k = detail::hte_fold_mu(d.X, W, ps.y_tilde, f_vals, I_k, I_kc, eta,
                                           mc.balance, &fallbacks);
      for (std::size_t r = 0; r < I_k.size(); ++r)
        mu(I_k[r]) = mu_k(static_cast<Eigen::Index>(r));
    }
    const HteProjection proj = cfg.lasso_variant
                                   ? project_hte_lasso(d, pf, mu, std::nullopt,
                                                       CvOptions{mc.cv_folds, mc.cv_grid, 1e-3,
                                                                 mc.standardize,
                                                                 detail::derive_seed(mc.seed,
                                                                                     "cv-hte")})
                                   : project_hte(d, pf, mu, W);
    if (betas.size() == 0) betas = Mat(proj.beta_hat.size(), mc.B);
    betas.col(b) = proj.beta_hat;
  }

  HteProjection out;
  out.W = cfg.lasso_variant ? d.X : W;
  out.beta_hat = betas.rowwise().mean();
  return out;
}

}  // namespace dipw
