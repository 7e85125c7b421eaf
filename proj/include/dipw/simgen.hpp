#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dipw/dataset.hpp"
#include "dipw/math.hpp"
#include "dipw/rng.hpp"

namespace dipw {

enum class CovFamily { Toeplitz, ExpDecayInverse, UserCsv };
enum class FunctionKind { DenseLinear, Nonlinear };
enum class NoiseKind { Homoscedastic, Heteroscedastic };

struct SimulationDesign {
  int n = 100;
  int p = 400;
  CovFamily cov = CovFamily::Toeplitz;
  double rho = 0.9;
  std::string user_csv;  // covariate rows, used with CovFamily::UserCsv
  FunctionKind response = FunctionKind::DenseLinear;
  FunctionKind effect = FunctionKind::DenseLinear;
  int d_gamma = 5;
  NoiseKind noise = NoiseKind::Homoscedastic;
  double sigma = 1.0;  // homoscedastic noise sd (test hook: 0 disables noise)
  std::uint64_t seed = 0;
  int support_size = 50;  // nonzero components of beta and delta

  void validate() const {
    if (n < 4) throw ConfigError("SimulationDesign: n must be >= 4");
    if (!(d_gamma >= 1 && d_gamma <= support_size && support_size <= p))
      throw ConfigError("SimulationDesign: need 1 <= d_gamma <= support <= p");
    if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("SimulationDesign: |rho| must be < 1");
    if (sigma < 0.0) throw ConfigError("SimulationDesign: sigma must be nonnegative");
  }
};

/// Coefficient vectors with their evaluable truth functions. Covariate rows
/// here carry no intercept column; the estimation pipeline prepends it.
struct GroundTruth {
  Vec beta;   // ||beta||_2 = 2
  Vec delta;  // ||delta||_2 = 1
  Vec gamma;  // ||gamma||_2 = 1, support inside beta's support
  FunctionKind response = FunctionKind::DenseLinear;
  FunctionKind effect = FunctionKind::DenseLinear;

  double b(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    if (response == FunctionKind::DenseLinear) return x.dot(beta);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j)
      acc += (2.0 * logistic(x(j)) - 1.0) * beta(j);
    return 3.0 * acc;
  }

  /// Delta(x) = {1 + exp(x'delta)}^{-1} - 0.5 in the nonlinear case.
  double treatment_effect(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    if (effect == FunctionKind::DenseLinear) return x.dot(delta);
    return logistic(-x.dot(delta)) - 0.5;
  }

  double pi(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return logistic(x.dot(gamma));
  }

  double r0(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return b(x); }
  double r1(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return b(x) + treatment_effect(x);
  }
};

/// Covariance model with its Cholesky factor, built once per design and
/// reused across replications.
class CovarianceSampler {
public:
  explicit CovarianceSampler(const SimulationDesign& design) : design_(design) {
    design.validate();
    const Eigen::Index p = design.p;
    if (design.cov == CovFamily::UserCsv) {
      load_user_rows();
      return;
    }
    Mat K(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
      for (Eigen::Index j = 0; j < p; ++j)
        K(i, j) = std::pow(design.rho, std::abs(static_cast<double>(i - j)));
    if (design.cov == CovFamily::Toeplitz) {
      sigma_ = K;
    } else {
      // Sigma^{-1} is the Toeplitz matrix; invert by Cholesky, symmetrise,
      // and rescale to unit diagonal
      Eigen::LLT<Mat> llt(K);
      if (llt.info() != Eigen::Success)
        throw ConvergenceError("CovarianceSampler: Toeplitz inverse not positive definite");
      Mat S = llt.solve(Mat::Identity(p, p));
      S = 0.5 * (S + S.transpose());
      const Vec dinv = S.diagonal().array().sqrt().inverse();
      sigma_ = dinv.asDiagonal() * S * dinv.asDiagonal();
      sigma_.diagonal().setOnes();
    }
    Eigen::LLT<Mat> llt(sigma_);
    if (llt.info() != Eigen::Success)
      throw ConvergenceError("CovarianceSampler: covariance not positive definite");
    chol_ = llt.matrixL();
  }

  const Mat& sigma() const {
    if (design_.cov == CovFamily::UserCsv)
      throw ConfigError("CovarianceSampler: no model covariance for a user design");
    return sigma_;
  }

  /// n i.i.d. rows (UserCsv: the leading file rows verbatim).
  Mat draw(int n, RandomStream& rng) const {
    if (design_.cov == CovFamily::UserCsv) {
      if (n > user_rows_.rows())
        throw ConfigError("CovarianceSampler: user file has fewer than n rows");
      return user_rows_.topRows(n);
    }
    Mat Z(n, design_.p);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < design_.p; ++j) Z(i, j) = rng.normal();
    return Z * chol_.transpose();
  }

private:
  void load_user_rows() {
    std::ifstream in(design_.user_csv);
    if (!in) throw SchemaError("CovarianceSampler: cannot open '" + design_.user_csv + "'");
    std::string line;
    if (!std::getline(in, line))
      throw SchemaError("CovarianceSampler: empty covariate file");
    const auto header = detail::split_csv_line(line);
    if (static_cast<int>(header.size()) != design_.p)
      throw SchemaError("CovarianceSampler: covariate file has " +
                        std::to_string(header.size()) + " columns, design says p = " +
                        std::to_string(design_.p));
    std::vector<std::vector<double>> rows;
    std::size_t rownum = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ++rownum;
      const auto toks = detail::split_csv_line(line);
      if (toks.size() != header.size())
        throw SchemaError("CovarianceSampler: ragged row " + std::to_string(rownum));
      std::vector<double> r;
      for (std::size_t j = 0; j < toks.size(); ++j)
        r.push_back(detail::parse_double(toks[j], rownum, header[j]));
      rows.push_back(std::move(r));
    }
    user_rows_ = Mat(rows.size(), design_.p);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (int j = 0; j < design_.p; ++j)
        user_rows_(static_cast<Eigen::Index>(i), j) = rows[i][static_cast<std::size_t>(j)];
  }

  SimulationDesign design_;
  Mat sigma_;
  Mat chol_;
  Mat user_rows_;
};

/// Covariate matrix for one replication (no intercept column).
inline Mat gen_covariates(const SimulationDesign& design, std::uint64_t rep = 0) {
  const CovarianceSampler sampler(design);
  RandomStream rng(design.seed, "covariates", rep);
  return sampler.draw(design.n, rng);
}

/// beta, delta, gamma drawn per the experimental protocol: uniform values
/// on a random support, renormalised to norms 2, 1 and 1; gamma's support
/// is a subset of beta's.
inline GroundTruth gen_coefficients(const SimulationDesign& design, std::uint64_t rep = 0) {
  design.validate();
  RandomStream rng(design.seed, "coefficients", rep);
  GroundTruth gt;
  gt.response = design.response;
  gt.effect = design.effect;

  const auto draw_sparse = [&](int nnz, double norm) {
    Vec v = Vec::Zero(design.p);
    const auto support = rng.sample_without_replacement(design.p, nnz);
    for (int j : support) v(j) = rng.uniform();
    v *= norm / v.norm();
    return std::make_pair(v, support);
  };

  auto [beta, bsupp] = draw_sparse(design.support_size, 2.0);
  gt.beta = beta;
  gt.delta = draw_sparse(design.support_size, 1.0).first;

  // gamma: d_gamma indices drawn from beta's support
  const auto pos = rng.sample_without_replacement(design.support_size, design.d_gamma);
  gt.gamma = Vec::Zero(design.p);
  for (int k : pos) gt.gamma(bsupp[static_cast<std::size_t>(k)]) = rng.uniform();
  gt.gamma /= gt.gamma.norm();
  return gt;
}

/// T ~ Bernoulli(psi(x'gamma)) and Y = b(X) + T Delta(X) + eps. The
/// heteroscedastic noise has variance 0.5 where pi(X) >= 0.5 and 2 below.
inline std::pair<Vec, IVec> gen_outcomes(const Mat& X, const GroundTruth& truth,
                                         const SimulationDesign& design, std::uint64_t rep = 0) {
  const Eigen::Index n = X.rows();
  RandomStream trng(design.seed, "treatment", rep);
  RandomStream nrng(design.seed, "noise", rep);
  Vec Y(n);
  IVec T(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pi = truth.pi(X.row(i));
    T(i) = trng.bernoulli(pi) ? 1 : 0;
    double eps;
    if (design.noise == NoiseKind::Homoscedastic) {
      eps = design.sigma == 0.0 ? 0.0 : design.sigma * nrng.normal();
    } else {
      eps = (pi >= 0.5 ? std::sqrt(0.5) : std::sqrt(2.0)) * nrng.normal();
    }
    Y(i) = truth.b(X.row(i)) + T(i) * truth.treatment_effect(X.row(i)) + eps;
  }
  return {Y, T};
}

/// Population average treatment effect. The dense linear effect with
/// mean-zero covariates gives 0 analytically; the nonlinear effect is
/// averaged over fresh covariate draws (standard error reported).
struct TrueTau {
  double value = 0.0;
  double se = 0.0;
};

inline TrueTau true_tau(const GroundTruth& truth, const SimulationDesign& design,
                        std::int64_t mc_draws = 1000000) {
  if (truth.effect == FunctionKind::DenseLinear && design.cov != CovFamily::UserCsv)
    return {0.0, 0.0};
  const CovarianceSampler sampler(design);
  RandomStream rng(design.seed, "true-tau");
  double s = 0.0, s2 = 0.0;
  const int block = design.n;
  std::int64_t done = 0;
  while (done < mc_draws) {
    const Mat X = sampler.draw(block, rng);
    for (Eigen::Index i = 0; i < X.rows() && done < mc_draws; ++i, ++done) {
      const double v = truth.treatment_effect(X.row(i));
      s += v;
      s2 += v * v;
    }
  }
  TrueTau out;
  const double m = s / static_cast<double>(mc_draws);
  out.value = m;
  out.se = std::sqrt(std::max(s2 / static_cast<double>(mc_draws) - m * m, 0.0) /
                     static_cast<double>(mc_draws));
  return out;
}

/// (1/n) sum_i Delta(X_i) on a generated covariate matrix.
inline double tau_bar(const GroundTruth& truth, const Mat& X) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) s += truth.treatment_effect(X.row(i));
  return s / static_cast<double>(X.rows());
}

/// Analytic Var(Y(1)) for the linear-response linear-effect design:
/// (beta+delta)' Sigma (beta+delta) plus the noise variance (the
/// heteroscedastic mixture has variance 0.5/2 split evenly since
/// P(pi(X) >= 1/2) = 1/2 under the symmetric covariate law).
inline double true_var_y1(const GroundTruth& truth, const SimulationDesign& design) {
  if (truth.response != FunctionKind::DenseLinear || truth.effect != FunctionKind::DenseLinear)
    throw ConfigError("true_var_y1: analytic value needs linear response and effect");
  const CovarianceSampler sampler(design);
  const Vec bd = truth.beta + truth.delta;
  const double signal = bd.dot(sampler.sigma() * bd);
  const double noise =
      design.noise == NoiseKind::Homoscedastic ? design.sigma * design.sigma : 1.25;
  return signal + noise;
}

/// Full replication bundle: dataset with intercept prepended, the truth,
/// and the true propensities on the drawn rows.
struct SimulatedData {
  Dataset data;
  GroundTruth truth;
  Mat X_raw;    // n x p, no intercept
  Vec pi_true;  // on the drawn rows
};

inline SimulatedData simulate(const SimulationDesign& design, std::uint64_t rep = 0) {
  SimulatedData out;
  const CovarianceSampler sampler(design);
  RandomStream crng(design.seed, "covariates", rep);
  out.X_raw = sampler.draw(design.n, crng);
  out.truth = gen_coefficients(design, rep);
  auto [Y, T] = gen_outcomes(out.X_raw, out.truth, design, rep);

  out.data.X = Mat(design.n, design.p + 1);
  out.data.X.col(0).setOnes();
  out.data.X.rightCols(design.p) = out.X_raw;
  out.data.Y = Y;
  out.data.T = T;
  out.pi_true = Vec(design.n);
  for (Eigen::Index i = 0; i < design.n; ++i) out.pi_true(i) = out.truth.pi(out.X_raw.row(i));
  return out;
}

}  // namespace dipw
