#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <utility>

#include "dipw/cross_validation.hpp"
#include "dipw/dataset.hpp"
#include "dipw/math.hpp"
#include "dipw/propensity.hpp"

namespace dipw {

enum class Method { IPW, DIPW_basic, mDIPW, AIPW, ORACLE };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::IPW: return "ipw";
    case Method::DIPW_basic: return "dipw-basic";
    case Method::mDIPW: return "mdipw";
    case Method::AIPW: return "aipw";
    case Method::ORACLE: return "oracle";
  }
  return "?";
}

/// Point estimate with per-split values, variance estimate, and a symmetric
/// normal confidence interval.
struct EstimateReport {
  double tau_hat = 0.0;
  Vec per_split;          // length B (empty for single-shot methods)
  double sigma_sq = 0.0;  // single-split sigma^2, or the multi-split average
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double alpha = 0.05;
  Method method = Method::mDIPW;
  std::map<std::string, double> diagnostics;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["method"] = method_name(method);
    j["tau_hat"] = tau_hat;
    j["per_split"] = std::vector<double>(per_split.data(), per_split.data() + per_split.size());
    j["sigma_m_sq"] = sigma_sq;
    j["ci"] = {{"lo", ci_lo}, {"hi", ci_hi}, {"alpha", alpha}};
    j["diagnostics"] = diagnostics;
    return j;
  }
};

/// Pseudo-outcome Y~_i = T_i Y_i (1-pi_i)/pi_i + (1-T_i) Y_i pi_i/(1-pi_i),
/// the quantity whose covariate-moment imbalance drives the bias term.
struct PseudoOutcome {
  Vec y_tilde;
};

inline PseudoOutcome transform_tilde_y(const Dataset& d, const PropensityFit& fit) {
  if (fit.pi_hat.size() != d.n()) throw DimensionError("transform_tilde_y: pi_hat length != n");
  PseudoOutcome ps;
  ps.y_tilde = Vec(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    ps.y_tilde(i) = d.T(i) == 1 ? d.Y(i) * (1.0 - pi) / pi : d.Y(i) * pi / (1.0 - pi);
  }
  return ps;
}

/// Standard IPW estimator.
inline double estimate_ipw(const Dataset& d, const PropensityFit& fit) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    acc += d.T(i) == 1 ? d.Y(i) / pi : -d.Y(i) / (1.0 - pi);
  }
  return acc / static_cast<double>(d.n());
}

/// Debiased IPW with correction vector mu (reduces to estimate_ipw at
/// mu = 0).
inline double estimate_dipw_basic(const Dataset& d, const PropensityFit& fit, const Vec& mu) {
  if (mu.size() != d.n()) throw DimensionError("estimate_dipw_basic: mu length != n");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    const double r = d.Y(i) - mu(i);
    acc += d.T(i) == 1 ? r / pi : -r / (1.0 - pi);
  }
  return acc / static_cast<double>(d.n());
}

/// Hajek form: inverse-propensity weights renormalised to sum 1 within each
/// arm, which makes the estimate invariant to adding a constant to mu.
inline double estimate_hajek_split(const Dataset& d, const PropensityFit& fit, const Vec& mu) {
  if (mu.size() != d.n()) throw DimensionError("estimate_hajek_split: mu length != n");
  double s1 = 0.0, s0 = 0.0, a1 = 0.0, a0 = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    const double r = d.Y(i) - mu(i);
    if (d.T(i) == 1) {
      const double w = 1.0 / pi;
      s1 += w;
      a1 += w * r;
    } else {
      const double w = 1.0 / (1.0 - pi);
      s0 += w;
      a0 += w * r;
    }
  }
  if (s1 == 0.0 || s0 == 0.0)
    throw DegenerateTreatmentError("estimate_hajek_split: an arm is empty");
  return a1 / s1 - a0 / s0;
}

/// Empirical variance of the DIPW summands about tau_hat.
inline double estimate_sigma_sq(const Dataset& d, const PropensityFit& fit, const Vec& mu,
                                double tau_hat) {
  if (mu.size() != d.n()) throw DimensionError("estimate_sigma_sq: mu length != n");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    const double r = d.Y(i) - mu(i);
    const double s = (d.T(i) == 1 ? r / pi : -r / (1.0 - pi)) - tau_hat;
    acc += s * s;
  }
  return acc / static_cast<double>(d.n());
}

/// [tau_hat -+ z_alpha * sigma / sqrt(n)].
inline std::pair<double, double> confidence_interval(double tau_hat, double sigma_sq,
                                                     Eigen::Index n, double alpha) {
  if (sigma_sq < 0.0) throw ConfigError("confidence_interval: sigma_sq must be nonnegative");
  const double half = z_alpha(alpha) * std::sqrt(sigma_sq / static_cast<double>(n));
  return {tau_hat - half, tau_hat + half};
}

/// Doubly robust AIPW with fitted outcome values r0(X_i), r1(X_i).
inline double estimate_aipw(const Dataset& d, const PropensityFit& fit, const Vec& r0_hat,
                            const Vec& r1_hat) {
  if (r0_hat.size() != d.n() || r1_hat.size() != d.n())
    throw DimensionError("estimate_aipw: outcome-model lengths != n");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = fit.pi_hat(i);
    acc += r1_hat(i) - r0_hat(i);
    if (d.T(i) == 1)
      acc += (d.Y(i) - r1_hat(i)) / pi;
    else
      acc -= (d.Y(i) - r0_hat(i)) / (1.0 - pi);
  }
  return acc / static_cast<double>(d.n());
}

/// Per-arm cross-validated Lasso outcome models evaluated on all rows;
/// the regression inputs for AIPW.
inline std::pair<Vec, Vec> fit_outcome_models(const Dataset& d, const CvOptions& cv = {}) {
  Vec r0, r1;
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<int> rows;
    for (Eigen::Index i = 0; i < d.n(); ++i)
      if (d.T(i) == arm) rows.push_back(static_cast<int>(i));
    Mat Xa(rows.size(), d.p());
    Vec ya(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Xa.row(static_cast<Eigen::Index>(r)) = d.X.row(rows[r]);
      ya(static_cast<Eigen::Index>(r)) = d.Y(rows[r]);
    }
    CvOptions cva = cv;
    cva.folds = std::min<int>(cv.folds, std::max<int>(2, static_cast<int>(rows.size())));
    const LassoFit f = cv_fit_gaussian(Xa, ya, cva);
    (arm == 0 ? r0 : r1) = d.X * f.beta;
  }
  return {r0, r1};
}

/// Variance-optimal oracle correction mu_ORA(x) = r1(x)(1-pi) + r0(x)pi.
inline double oracle_mu(double r0x, double r1x, double pix) {
  return r1x * (1.0 - pix) + r0x * pix;
}

/// Oracle estimator: the modified IPW sum evaluated with the true
/// propensities (simulation-only; mu must not depend on T given X).
inline double estimate_oracle_dipw(const Dataset& d, const Vec& pi_true, const Vec& mu) {
  if (pi_true.size() != d.n() || mu.size() != d.n())
    throw DimensionError("estimate_oracle_dipw: input lengths != n");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double r = d.Y(i) - mu(i);
    acc += d.T(i) == 1 ? r / pi_true(i) : -r / (1.0 - pi_true(i));
  }
  return acc / static_cast<double>(d.n());
}

}  // namespace dipw
