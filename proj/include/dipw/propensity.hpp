#pragma once

#include <Eigen/Dense>
#include <optional>

#include "dipw/cross_validation.hpp"
#include "dipw/dataset.hpp"
#include "dipw/math.hpp"

namespace dipw {

/// Fitted propensity model pi(x) = psi(x'gamma), probabilities clipped into
/// [clip, 1-clip]. A forced fit carries injected probabilities and no
/// coefficient vector (test-only configuration for isolating estimator
/// algebra from solver noise).
struct PropensityFit {
  Vec gamma_hat;  // empty when forced
  Vec pi_hat;
  double lambda = 0.0;
  double clip = 0.01;
  bool forced = false;
  int clip_events = 0;  // entries that hit the clipping bound

  /// Recomputes pi_hat from gamma_hat on the given dataset; bit-for-bit
  /// equal to the stored values for an unforced fit.
  Vec recompute(const Dataset& d) const {
    if (forced) return pi_hat;
    Vec out(d.n());
    for (Eigen::Index i = 0; i < d.n(); ++i)
      out(i) = clamp01(logistic(d.X.row(i).dot(gamma_hat)), clip);
    return out;
  }
};

/// Step 1 of the multi-split algorithm: cross-validated l1-penalised
/// logistic regression of T on X (1-SE rule), probabilities clipped.
inline PropensityFit fit_propensity(const Dataset& d, const CvOptions& cv = {},
                                    double clip = 0.01, CvReport* report = nullptr) {
  d.validate_for_estimation();
  if (!(clip > 0.0 && clip < 0.5)) throw ConfigError("fit_propensity: clip must lie in (0,0.5)");
  const LassoFit fit = cv_fit_binomial(d.X, d.T, cv, report);
  PropensityFit pf;
  pf.gamma_hat = fit.beta;
  pf.lambda = fit.lambda;
  pf.clip = clip;
  pf.pi_hat = Vec(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double raw = logistic(d.X.row(i).dot(fit.beta));
    pf.pi_hat(i) = clamp01(raw, clip);
    if (pf.pi_hat(i) != raw) ++pf.clip_events;
  }
  return pf;
}

/// Injects a fixed probability vector, bypassing estimation.
inline PropensityFit force_propensity(const Vec& pi, double clip = 0.01) {
  PropensityFit pf;
  pf.forced = true;
  pf.clip = clip;
  pf.pi_hat = Vec(pi.size());
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    pf.pi_hat(i) = clamp01(pi(i), clip);
    if (pf.pi_hat(i) != pi(i)) ++pf.clip_events;
  }
  return pf;
}

inline PropensityFit force_propensity_constant(Eigen::Index n, double pi, double clip = 0.01) {
  return force_propensity(Vec::Constant(n, pi), clip);
}

}  // namespace dipw
