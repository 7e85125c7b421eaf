#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dipw/lasso.hpp"
#include "dipw/logistic_lasso.hpp"
#include "dipw/rng.hpp"

namespace dipw {

enum class Family { gaussian, binomial };

struct CvOptions {
  int folds = 10;
  int grid_size = 100;
  double lambda_min_ratio = 1e-3;
  bool standardize = true;
  std::uint64_t seed = 0;
};

/// Cross-validation summary over a decreasing lambda grid.
struct CvReport {
  Vec lambda_grid;  // decreasing
  Vec cv_mean;
  Vec cv_se;
  double lambda_min = 0.0;
  double lambda_1se = 0.0;
  int folds = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["lambda_grid"] = std::vector<double>(lambda_grid.data(), lambda_grid.data() + lambda_grid.size());
    j["cv_mean"] = std::vector<double>(cv_mean.data(), cv_mean.data() + cv_mean.size());
    j["cv_se"] = std::vector<double>(cv_se.data(), cv_se.data() + cv_se.size());
    j["lambda_min"] = lambda_min;
    j["lambda_1se"] = lambda_1se;
    j["folds"] = folds;
    return j;
  }
};

namespace detail {

/// Fold labels in [0, folds) from a seeded random permutation; for the
/// binomial family the permutation is applied within each class so every
/// fold keeps the class balance (stratified assignment).
inline std::vector<int> assign_folds(const IVec* strata, Eigen::Index n, int folds,
                                     std::uint64_t seed) {
  RandomStream rng(seed, "cv-folds");
  std::vector<int> label(static_cast<std::size_t>(n), 0);
  if (strata == nullptr) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    for (std::size_t pos = 0; pos < idx.size(); ++pos)
      label[static_cast<std::size_t>(idx[pos])] = static_cast<int>(pos % folds);
  } else {
    for (int cls = 0; cls <= 1; ++cls) {
      std::vector<int> idx;
      for (Eigen::Index i = 0; i < n; ++i)
        if ((*strata)(i) == cls) idx.push_back(static_cast<int>(i));
      if (static_cast<int>(idx.size()) < 2)
        throw DegenerateTreatmentError(
            "cv_select: a class has fewer than 2 members; stratified folds impossible");
      rng.shuffle(idx);
      for (std::size_t pos = 0; pos < idx.size(); ++pos)
        label[static_cast<std::size_t>(idx[pos])] = static_cast<int>(pos % folds);
    }
  }
  return label;
}

inline Vec make_grid(double lmax, int grid_size, double ratio) {
  lmax = std::max(lmax, 1e-12);
  Vec grid(grid_size);
  for (int g = 0; g < grid_size; ++g)
    grid(g) = lmax * std::pow(ratio, static_cast<double>(g) / std::max(grid_size - 1, 1));
  return grid;
}

inline double bernoulli_deviance(double t, double phat) {
  const double p = std::min(std::max(phat, 1e-10), 1.0 - 1e-10);
  return -2.0 * (t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
}

}  // namespace detail

/// 10-fold cross-validation over a log-spaced lambda grid (lambda_max down
/// to lambda_min_ratio * lambda_max), fitting each fold's path with warm
/// starts. cv error is mean squared error (gaussian) or mean deviance
/// (binomial); lambda_1se is the largest grid value whose cv_mean is within
/// one standard error of the minimum.
inline CvReport cv_select(const Mat& X, const Vec& y, Family family, const CvOptions& opts = {}) {
  const Eigen::Index n = X.rows();
  if (opts.folds < 2 || n < opts.folds)
    throw ConfigError("cv_select: need n >= folds >= 2");

  IVec t;
  if (family == Family::binomial) {
    t.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (y(i) != 0.0 && y(i) != 1.0)
        throw DegenerateTreatmentError("cv_select: binomial response must be in {0,1}");
      t(i) = static_cast<int>(y(i));
    }
  }

  const double lmax = (family == Family::gaussian)
                          ? lambda_max_gaussian(X, y, opts.standardize)
                          : lambda_max_binomial(X, t, opts.standardize);
  const Vec grid = detail::make_grid(lmax, opts.grid_size, opts.lambda_min_ratio);

  const auto label = detail::assign_folds(family == Family::binomial ? &t : nullptr, n,
                                          opts.folds, opts.seed);

  Mat fold_err(opts.folds, grid.size());
  for (int k = 0; k < opts.folds; ++k) {
    std::vector<int> tr, va;
    for (Eigen::Index i = 0; i < n; ++i)
      (label[static_cast<std::size_t>(i)] == k ? va : tr).push_back(static_cast<int>(i));
    Mat Xtr(tr.size(), X.cols()), Xva(va.size(), X.cols());
    Vec ytr(tr.size()), yva(va.size());
    for (std::size_t r = 0; r < tr.size(); ++r) {
      Xtr.row(static_cast<Eigen::Index>(r)) = X.row(tr[r]);
      ytr(static_cast<Eigen::Index>(r)) = y(tr[r]);
    }
    for (std::size_t r = 0; r < va.size(); ++r) {
      Xva.row(static_cast<Eigen::Index>(r)) = X.row(va[r]);
      yva(static_cast<Eigen::Index>(r)) = y(va[r]);
    }

    Vec warm = Vec::Zero(X.cols());
    if (family == Family::gaussian) {
      LassoOptions lo;
      lo.standardize = opts.standardize;
      const detail::LassoWorkspace ws(Xtr, ytr, opts.standardize);
      for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const LassoFit f = fit_lasso_ws(ws, grid(g), lo, &warm);
        warm = f.beta;
        fold_err(k, g) = (yva - Xva * f.beta).squaredNorm() / static_cast<double>(va.size());
      }
    } else {
      IVec ttr(tr.size());
      for (std::size_t r = 0; r < tr.size(); ++r)
        ttr(static_cast<Eigen::Index>(r)) = t(tr[r]);
      LogisticLassoOptions lo;
      lo.standardize = opts.standardize;
      for (Eigen::Index g = 0; g < grid.size(); ++g) {
        const LassoFit f = fit_logistic_lasso(Xtr, ttr, grid(g), lo, &warm);
        warm = f.beta;
        const Vec eta = Xva * f.beta;
        double dev = 0.0;
        for (Eigen::Index r = 0; r < eta.size(); ++r)
          dev += detail::bernoulli_deviance(yva(r), logistic(eta(r)));
        fold_err(k, g) = dev / static_cast<double>(va.size());
      }
    }
  }

  CvReport rep;
  rep.folds = opts.folds;
  rep.lambda_grid = grid;
  rep.cv_mean = fold_err.colwise().mean();
  rep.cv_se = Vec(grid.size());
  for (Eigen::Index g = 0; g < grid.size(); ++g) {
    const double m = rep.cv_mean(g);
    double ss = 0.0;
    for (int k = 0; k < opts.folds; ++k) ss += (fold_err(k, g) - m) * (fold_err(k, g) - m);
    rep.cv_se(g) = std::sqrt(ss / (opts.folds - 1)) / std::sqrt(static_cast<double>(opts.folds));
  }

  Eigen::Index gmin = 0;
  rep.cv_mean.minCoeff(&gmin);  // ties resolve to the largest lambda
  rep.lambda_min = rep.lambda_grid(gmin);
  const double cutoff = rep.cv_mean(gmin) + rep.cv_se(gmin);
  Eigen::Index g1se = gmin;
  for (Eigen::Index g = 0; g <= gmin; ++g) {
    if (rep.cv_mean(g) <= cutoff) {
      g1se = g;
      break;
    }
  }
  rep.lambda_1se = rep.lambda_grid(g1se);
  return rep;
}

/// cv_select followed by a full-data refit at lambda_1se.
inline LassoFit cv_fit_gaussian(const Mat& X, const Vec& y, const CvOptions& opts = {},
                                CvReport* report = nullptr) {
  const CvReport rep = cv_select(X, y, Family::gaussian, opts);
  if (report) *report = rep;
  LassoOptions lo;
  lo.standardize = opts.standardize;
  return fit_lasso(X, y, rep.lambda_1se, lo);
}

inline LassoFit cv_fit_binomial(const Mat& X, const IVec& T, const CvOptions& opts = {},
                                CvReport* report = nullptr) {
  const CvReport rep = cv_select(X, T.cast<double>(), Family::binomial, opts);
  if (report) *report = rep;
  LogisticLassoOptions lo;
  lo.standardize = opts.standardize;
  return fit_logistic_lasso(X, T, rep.lambda_1se, lo);
}

}  // namespace dipw
