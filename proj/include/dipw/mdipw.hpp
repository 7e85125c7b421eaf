#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <vector>

#include "dipw/balance.hpp"
#include "dipw/estimators.hpp"
#include "dipw/folds.hpp"
#include "dipw/propensity.hpp"

namespace dipw {

struct MdipwConfig {
  int B = 3;
  double kappa = 0.5;
  std::uint64_t seed = 0;
  int cv_folds = 10;
  int cv_grid = 100;
  double clip = 0.01;
  double alpha = 0.05;
  bool standardize = true;
  bool deterministic_splits = false;
  int threads = 1;
  int max_resplit = 20;
  std::optional<Vec> forced_pi;  // test-only: bypass step 1
  bool force_mu_zero = false;    // test-only: bypass step 3
  BalanceOptions balance;
};

namespace detail {

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view role) {
  return splitmix64(seed ^ fnv1a64(role));
}

inline bool fold_has_both_classes(const IVec& T, const std::vector<int>& idx) {
  int ones = 0;
  for (int i : idx) ones += T(i);
  return ones > 0 && ones < static_cast<int>(idx.size());
}

/// The B complementary pairs of step 3: uniformly random with redraws until
/// both folds of a pair contain both classes, or the deterministic rotated
/// half-blocks (which cannot be redrawn).
inline std::vector<FoldPair> draw_pairs(const IVec& T, RandomStream& rng, int B,
                                        bool deterministic, int max_resplit) {
  const int n = static_cast<int>(T.size());
  std::vector<FoldPair> out;
  if (deterministic) {
    FoldPlan plan = make_fold_plan(n, B, rng, true);
    for (auto& pr : plan.pairs) {
      if (!fold_has_both_classes(T, pr.first) || !fold_has_both_classes(T, pr.second))
        throw DegenerateTreatmentError("run_mdipw: deterministic split has a single-class fold");
      out.push_back(std::move(pr));
    }
    return out;
  }
  for (int b = 0; b < B; ++b) {
    bool ok = false;
    for (int attempt = 0; attempt < std::max(1, max_resplit); ++attempt) {
      FoldPlan plan = make_fold_plan(n, 1, rng, false);
      FoldPair pr = std::move(plan.pairs.front());
      if (fold_has_both_classes(T, pr.first) && fold_has_both_classes(T, pr.second)) {
        out.push_back(std::move(pr));
        ok = true;
        break;
      }
    }
    if (!ok)
      throw DegenerateTreatmentError(
          "run_mdipw: could not draw a split with both classes in both folds");
  }
  return out;
}

/// Step 3 for one fold I_k: centre, solve the Lagrangian program, recentre.
/// Returns the corrected vector mu_check indexed by elements of I_k.
struct FoldCorrection {
  Vec mu_check;
  int iterations = 0;
  double certificate_gap = 0.0;
};

inline FoldCorrection correct_fold(const Mat& X, const Vec& y_tilde, const Vec& f_vals,
                                   const std::vector<int>& I_k, const std::vector<int>& I_kc,
                                   double kappa, const BalanceOptions& bopts) {
  const Eigen::Index p = X.cols();
  const Eigen::Index nk = static_cast<Eigen::Index>(I_k.size());
  const Eigen::Index nkc = static_cast<Eigen::Index>(I_kc.size());

  // fold means m_{k,j} and complement means m^c_{k,j}
  Vec m = Vec::Zero(p), mc = Vec::Zero(p);
  for (int i : I_k) m += X.row(i).transpose();
  for (int i : I_kc) mc += X.row(i).transpose();
  m /= static_cast<double>(nk);
  mc /= static_cast<double>(nkc);

  BalanceProblem prob;
  prob.kappa = kappa;
  prob.X_main = Mat(nk, p);
  prob.f_main = Vec(nk);
  for (Eigen::Index r = 0; r < nk; ++r) {
    prob.X_main.row(r) = X.row(I_k[static_cast<std::size_t>(r)]) - m.transpose();
    prob.f_main(r) = f_vals(I_k[static_cast<std::size_t>(r)]);
  }
  prob.target = Vec::Zero(p);
  for (int i : I_kc)
    prob.target += (X.row(i).transpose() - mc) * (y_tilde(i) - f_vals(i));
  prob.target /= static_cast<double>(nkc);

  const BalanceSolution sol = solve_lagrangian(prob, bopts);

  // recentring: mu_check = mu_tilde + mean over I_k of (y_tilde - f)
  double shift = 0.0;
  for (int i : I_k) shift += y_tilde(i) - f_vals(i);
  shift /= static_cast<double>(nk);

  FoldCorrection out;
  out.mu_check = sol.mu_hat.array() + shift;
  out.iterations = sol.iterations;
  out.certificate_gap = sol.certificate_gap;
  return out;
}

}  // namespace detail

/// Intermediate state of the multi-split algorithm: the shared step-1/2
/// fits plus one assembled correction vector per split.
struct MdipwParts {
  PropensityFit pf;
  PseudoOutcome ps;
  Vec f_vals;
  std::vector<Vec> mu_b;
  double lambda_gamma = 0.0;
  double lambda_ftilde = 0.0;
  double max_certificate_gap = 0.0;
  long solver_iterations = 0;
};

/// Steps 1-3: cross-validated penalised logistic regression for the
/// propensities, pseudo-outcomes and the cross-validated Lasso f~, and per
/// complementary fold pair the centred Lagrangian correction plus
/// recentring. Deterministic given the seed.
inline MdipwParts mdipw_pipeline(const Dataset& d, const MdipwConfig& cfg) {
  d.validate_for_estimation();
  if (cfg.B < 1) throw ConfigError("run_mdipw: B must be >= 1");
  if (!(cfg.kappa > 0.0 && cfg.kappa < 1.0)) throw ConfigError("run_mdipw: kappa must be in (0,1)");

  MdipwParts parts;

  // step 1
  if (cfg.forced_pi) {
    if (cfg.forced_pi->size() != d.n())
      throw DimensionError("run_mdipw: forced_pi length != n");
    parts.pf = force_propensity(*cfg.forced_pi, cfg.clip);
  } else {
    CvOptions cv;
    cv.folds = cfg.cv_folds;
    cv.grid_size = cfg.cv_grid;
    cv.standardize = cfg.standardize;
    cv.seed = detail::derive_seed(cfg.seed, "cv-gamma");
    parts.pf = fit_propensity(d, cv, cfg.clip);
    parts.lambda_gamma = parts.pf.lambda;
  }

  // step 2
  parts.ps = transform_tilde_y(d, parts.pf);
  parts.f_vals = Vec::Zero(d.n());
  if (!cfg.force_mu_zero) {
    CvOptions cv;
    cv.folds = cfg.cv_folds;
    cv.grid_size = cfg.cv_grid;
    cv.standardize = cfg.standardize;
    cv.seed = detail::derive_seed(cfg.seed, "cv-ftilde");
    const LassoFit ftilde = cv_fit_gaussian(d.X, parts.ps.y_tilde, cv);
    parts.f_vals = d.X * ftilde.beta;
    parts.lambda_ftilde = ftilde.lambda;
  }

  // step 3: B complementary pairs, 2B fold corrections
  RandomStream split_rng(cfg.seed, "splits");
  const std::vector<FoldPair> pairs =
      detail::draw_pairs(d.T, split_rng, cfg.B, cfg.deterministic_splits, cfg.max_resplit);

  parts.mu_b.assign(static_cast<std::size_t>(cfg.B), Vec::Zero(d.n()));
  if (cfg.force_mu_zero) return parts;

  struct FoldTask {
    int b;
    const std::vector<int>* I_k;
    const std::vector<int>* I_kc;
  };
  std::vector<FoldTask> tasks;
  for (int b = 0; b < cfg.B; ++b) {
    tasks.push_back({b, &pairs[static_cast<std::size_t>(b)].first,
                     &pairs[static_cast<std::size_t>(b)].second});
    tasks.push_back({b, &pairs[static_cast<std::size_t>(b)].second,
                     &pairs[static_cast<std::size_t>(b)].first});
  }

  std::vector<detail::FoldCorrection> results(tasks.size());
  const auto run_task = [&](std::size_t t) {
    results[t] = detail::correct_fold(d.X, parts.ps.y_tilde, parts.f_vals, *tasks[t].I_k,
                                      *tasks[t].I_kc, cfg.kappa, cfg.balance);
  };
  if (cfg.threads > 1) {
    std::vector<std::future<void>> futs;
    std::atomic<std::size_t> next{0};
    const int nw = std::min<int>(cfg.threads, static_cast<int>(tasks.size()));
    for (int w = 0; w < nw; ++w)
      futs.push_back(std::async(std::launch::async, [&]() {
        for (std::size_t t = next.fetch_add(1); t < tasks.size(); t = next.fetch_add(1))
          run_task(t);
      }));
    for (auto& f : futs) f.get();
  } else {
    for (std::size_t t = 0; t < tasks.size(); ++t) run_task(t);
  }

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto& idx = *tasks[t].I_k;
    for (std::size_t r = 0; r < idx.size(); ++r)
      parts.mu_b[static_cast<std::size_t>(tasks[t].b)](idx[r]) =
          results[t].mu_check(static_cast<Eigen::Index>(r));
    parts.solver_iterations += results[t].iterations;
    parts.max_certificate_gap = std::max(parts.max_certificate_gap, results[t].certificate_gap);
  }
  return parts;
}

/// DIPW with multiple sample splitting: the pipeline above followed by
/// step 4, Hajek aggregation per split and averaging over the B splits.
inline EstimateReport run_mdipw(const Dataset& d, const MdipwConfig& cfg = {}) {
  const MdipwParts parts = mdipw_pipeline(d, cfg);

  EstimateReport rep;
  rep.method = Method::mDIPW;
  rep.alpha = cfg.alpha;
  rep.per_split = Vec(cfg.B);
  Vec sigma_b(cfg.B);
  double max_mu_inf = 0.0;
  for (int b = 0; b < cfg.B; ++b) {
    const Vec& mu = parts.mu_b[static_cast<std::size_t>(b)];
    rep.per_split(b) = estimate_hajek_split(d, parts.pf, mu);
    sigma_b(b) = estimate_sigma_sq(d, parts.pf, mu, rep.per_split(b));
    max_mu_inf = std::max(max_mu_inf, mu.lpNorm<Eigen::Infinity>());
  }
  rep.tau_hat = rep.per_split.mean();
  rep.sigma_sq = sigma_b.mean();
  std::tie(rep.ci_lo, rep.ci_hi) = confidence_interval(rep.tau_hat, rep.sigma_sq, d.n(), cfg.alpha);

  rep.diagnostics["clip_events"] = parts.pf.clip_events;
  rep.diagnostics["mu_inf_norm"] = max_mu_inf;
  rep.diagnostics["mu_inf_over_sqrt_n"] = max_mu_inf / std::sqrt(static_cast<double>(d.n()));
  rep.diagnostics["lambda_gamma"] = parts.lambda_gamma;
  rep.diagnostics["lambda_ftilde"] = parts.lambda_ftilde;
  rep.diagnostics["solver_iterations"] = static_cast<double>(parts.solver_iterations);
  rep.diagnostics["max_certificate_gap"] = parts.max_certificate_gap;
  return rep;
}

/// IPW with a cross-validated propensity fit (or the forced one), variance
/// and interval from the empirical summand variance at mu = 0.
inline EstimateReport run_ipw(const Dataset& d, const MdipwConfig& cfg = {}) {
  MdipwConfig c = cfg;
  c.B = 1;
  c.force_mu_zero = true;
  const MdipwParts parts = mdipw_pipeline(d, c);
  EstimateReport rep;
  rep.method = Method::IPW;
  rep.alpha = cfg.alpha;
  rep.tau_hat = estimate_ipw(d, parts.pf);
  rep.sigma_sq = estimate_sigma_sq(d, parts.pf, Vec::Zero(d.n()), rep.tau_hat);
  std::tie(rep.ci_lo, rep.ci_hi) = confidence_interval(rep.tau_hat, rep.sigma_sq, d.n(), cfg.alpha);
  rep.diagnostics["clip_events"] = parts.pf.clip_events;
  rep.diagnostics["lambda_gamma"] = parts.lambda_gamma;
  return rep;
}

/// Basic (non-Hajek) debiased estimator. The correction vector comes from a
/// single split of the multi-split machinery unless force_mu_zero is set.
inline EstimateReport run_dipw_basic(const Dataset& d, const MdipwConfig& cfg = {}) {
  MdipwConfig c = cfg;
  c.B = 1;
  const MdipwParts parts = mdipw_pipeline(d, c);
  const Vec& mu = parts.mu_b.front();
  EstimateReport rep;
  rep.method = Method::DIPW_basic;
  rep.alpha = cfg.alpha;
  rep.tau_hat = estimate_dipw_basic(d, parts.pf, mu);
  rep.sigma_sq = estimate_sigma_sq(d, parts.pf, mu, rep.tau_hat);
  std::tie(rep.ci_lo, rep.ci_hi) = confidence_interval(rep.tau_hat, rep.sigma_sq, d.n(), cfg.alpha);
  rep.diagnostics["clip_events"] = parts.pf.clip_events;
  rep.diagnostics["lambda_gamma"] = parts.lambda_gamma;
  rep.diagnostics["lambda_ftilde"] = parts.lambda_ftilde;
  rep.diagnostics["mu_inf_norm"] = mu.lpNorm<Eigen::Infinity>();
  return rep;
}

/// AIPW with per-arm cross-validated Lasso outcome models; the interval
/// comes from the empirical variance of the influence summands.
inline EstimateReport run_aipw(const Dataset& d, const MdipwConfig& cfg = {}) {
  MdipwConfig c = cfg;
  c.B = 1;
  c.force_mu_zero = true;
  const MdipwParts parts = mdipw_pipeline(d, c);

  CvOptions cv;
  cv.folds = cfg.cv_folds;
  cv.grid_size = cfg.cv_grid;
  cv.standardize = cfg.standardize;
  cv.seed = detail::derive_seed(cfg.seed, "cv-outcome");
  const auto [r0, r1] = fit_outcome_models(d, cv);

  EstimateReport rep;
  rep.method = Method::AIPW;
  rep.alpha = cfg.alpha;
  rep.tau_hat = estimate_aipw(d, parts.pf, r0, r1);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double pi = parts.pf.pi_hat(i);
    double phi = r1(i) - r0(i);
    if (d.T(i) == 1)
      phi += (d.Y(i) - r1(i)) / pi;
    else
      phi -= (d.Y(i) - r0(i)) / (1.0 - pi);
    acc += (phi - rep.tau_hat) * (phi - rep.tau_hat);
  }
  rep.sigma_sq = acc / static_cast<double>(d.n());
  std::tie(rep.ci_lo, rep.ci_hi) = confidence_interval(rep.tau_hat, rep.sigma_sq, d.n(), cfg.alpha);
  rep.diagnostics["clip_events"] = parts.pf.clip_events;
  rep.diagnostics["lambda_gamma"] = parts.lambda_gamma;
  return rep;
}

/// Two-stage potential-outcome variance pipeline: stage 1 estimates
/// E Y(1) from outcomes Y*T, stage 2 estimates Var(Y(1)) from outcomes
/// (Y - tau1)^2 * T with the stage-1 point estimate plugged in.
inline EstimateReport estimate_potential_variance(const Dataset& d, const MdipwConfig& cfg = {}) {
  d.validate_for_estimation();

  Dataset d1 = d;
  for (Eigen::Index i = 0; i < d.n(); ++i) d1.Y(i) = d.Y(i) * d.T(i);
  MdipwConfig c1 = cfg;
  c1.seed = detail::derive_seed(cfg.seed, "var-stage1");
  const EstimateReport r1 = run_mdipw(d1, c1);
  const double tau1 = r1.tau_hat;

  Dataset d2 = d;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const double c = d.Y(i) - tau1;
    d2.Y(i) = c * c * d.T(i);
  }
  MdipwConfig c2 = cfg;
  c2.seed = detail::derive_seed(cfg.seed, "var-stage2");
  EstimateReport r2 = run_mdipw(d2, c2);
  r2.diagnostics["tau1_hat"] = tau1;
  return r2;
}

}  // namespace dipw
