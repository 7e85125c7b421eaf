// Command-line interface: ATE estimation on user data, dataset simulation,
// and replication benchmarks emitting boxplot-ready CSV.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "dipw/dipw.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

/// Write-to-temp-then-rename so readers never observe a partial file.
void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw dipw::SchemaError("cannot open '" + tmp + "' for writing");
    out << content;
  }
  std::filesystem::rename(tmp, path);
}

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-")
    std::cout << content;
  else
    atomic_write(out_path, content);
}

/// Deterministic manifest core embedded in result files; wall-clock
/// timestamps go only to the sidecar manifest.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::string started, finished;

  json core() const {
    json j;
    j["command"] = command;
    j["config"] = config;
    j["seed"] = seed;
    j["version"] = dipw::kVersion;
    return j;
  }

  json full() const {
    json j = core();
    j["started"] = started;
    j["finished"] = finished;
    return j;
  }
};

void write_manifest_sidecar(const RunManifest& m, const std::string& out_path) {
  if (out_path.empty() || out_path == "-") return;
  atomic_write(out_path + ".manifest.json", m.full().dump(2) + "\n");
}

int threads_from_env() {
  if (const char* env = std::getenv("DIPW_THREADS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

struct DesignFlags {
  std::string cov = "toeplitz";
  std::string response = "linear";
  std::string effect = "linear";
  std::string noise = "homo";
  int n = 100, p = 400, d_gamma = 5;
  double sigma = 1.0, rho = 0.9;

  dipw::SimulationDesign build(std::uint64_t seed) const {
    dipw::SimulationDesign d;
    d.n = n;
    d.p = p;
    d.d_gamma = d_gamma;
    d.sigma = sigma;
    d.rho = rho;
    d.seed = seed;
    if (cov == "toeplitz") {
      d.cov = dipw::CovFamily::Toeplitz;
    } else if (cov == "expdecay") {
      d.cov = dipw::CovFamily::ExpDecayInverse;
    } else if (cov.rfind("user:", 0) == 0) {
      d.cov = dipw::CovFamily::UserCsv;
      d.user_csv = cov.substr(5);
    } else {
      throw dipw::ConfigError("--cov must be toeplitz, expdecay or user:<path>");
    }
    const auto kind = [](const std::string& s, const char* flag) {
      if (s == "linear") return dipw::FunctionKind::DenseLinear;
      if (s == "nonlinear") return dipw::FunctionKind::Nonlinear;
      throw dipw::ConfigError(std::string(flag) + " must be linear or nonlinear");
    };
    d.response = kind(response, "--response");
    d.effect = kind(effect, "--effect");
    if (noise == "homo") {
      d.noise = dipw::NoiseKind::Homoscedastic;
    } else if (noise == "hetero") {
      d.noise = dipw::NoiseKind::Heteroscedastic;
    } else {
      throw dipw::ConfigError("--noise must be homo or hetero");
    }
    // benchmarking at p < support needs a smaller support
    d.support_size = std::min(50, p);
    if (d.d_gamma > d.support_size)
      throw dipw::ConfigError("--d-gamma exceeds the coefficient support size");
    return d;
  }

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--cov", cov, "Covariate design: toeplitz | expdecay | user:<path>");
    cmd->add_option("--response", response, "Response function: linear | nonlinear");
    cmd->add_option("--effect", effect, "Effect function: linear | nonlinear");
    cmd->add_option("--noise", noise, "Noise model: homo | hetero");
    cmd->add_option("--n", n, "Sample size");
    cmd->add_option("--p", p, "Covariate dimension (before intercept)");
    cmd->add_option("--d-gamma", d_gamma, "Propensity sparsity");
    cmd->add_option("--sigma", sigma, "Homoscedastic noise sd");
    cmd->add_option("--rho", rho, "Covariance decay parameter");
  }

  std::map<std::string, std::string> as_config() const {
    return {{"cov", cov},           {"response", response},
            {"effect", effect},     {"noise", noise},
            {"n", std::to_string(n)}, {"p", std::to_string(p)},
            {"d_gamma", std::to_string(d_gamma)}, {"sigma", std::to_string(sigma)},
            {"rho", std::to_string(rho)}};
  }
};

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string data, y_col = "y", t_col = "t";
  std::string method = "mdipw";
  std::string target = "ate";
  std::string hte_cols;
  std::string out;
  int B = 3;
  double kappa = 0.5;
  double alpha = 0.05;
  double clip = 0.01;
  int cv_folds = 10;
  std::uint64_t seed = 1;
  double force_pi = -1.0;  // test-only; <0 disables
  bool mu_zero = false;
  bool no_standardize = false;
  int threads = 0;
};

int cmd_estimate(const EstimateArgs& a) {
  RunManifest man;
  man.command = "estimate";
  man.seed = a.seed;
  man.started = now_iso8601();
  man.config = {{"data", a.data},       {"y", a.y_col},
                {"t", a.t_col},         {"method", a.method},
                {"target", a.target},   {"B", std::to_string(a.B)},
                {"kappa", format_double(a.kappa)}, {"alpha", format_double(a.alpha)},
                {"clip", format_double(a.clip)},   {"cv_folds", std::to_string(a.cv_folds)},
                {"hte_cols", a.hte_cols},
                {"mu_zero", a.mu_zero ? "1" : "0"},
                {"standardize", a.no_standardize ? "0" : "1"},
                {"force_pi", a.force_pi >= 0 ? format_double(a.force_pi) : ""}};

  const dipw::Dataset d = dipw::load_csv(a.data, a.y_col, a.t_col, true);

  dipw::MdipwConfig cfg;
  cfg.B = a.B;
  cfg.kappa = a.kappa;
  cfg.alpha = a.alpha;
  cfg.clip = a.clip;
  cfg.cv_folds = a.cv_folds;
  cfg.seed = a.seed;
  cfg.standardize = !a.no_standardize;
  cfg.force_mu_zero = a.mu_zero;
  cfg.threads = a.threads > 0 ? a.threads : threads_from_env();
  if (a.force_pi >= 0.0) cfg.forced_pi = dipw::Vec::Constant(d.n(), a.force_pi);

  json out;
  if (a.target == "hte") {
    dipw::Mat W;
    if (a.hte_cols.empty()) {
      W = d.X.col(0);
    } else {
      std::vector<int> cols;
      std::stringstream ss(a.hte_cols);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        bool found = false;
        for (std::size_t j = 0; j < d.feature_names.size(); ++j)
          if (d.feature_names[j] == tok) {
            cols.push_back(static_cast<int>(j));
            found = true;
          }
        if (!found) throw dipw::ConfigError("--hte-cols: unknown column '" + tok + "'");
      }
      W = dipw::Mat(d.n(), 1 + cols.size());
      W.col(0).setOnes();
      for (std::size_t k = 0; k < cols.size(); ++k) W.col(1 + k) = d.X.col(cols[k]);
    }
    dipw::HteConfig hc;
    hc.mdipw = cfg;
    const dipw::HteProjection proj = dipw::run_hte(d, W, hc);
    out = proj.to_json();
    out["target"] = "hte";
  } else {
    dipw::EstimateReport rep;
    if (a.target == "var-y1") {
      rep = dipw::estimate_potential_variance(d, cfg);
      out = rep.to_json();
      out["target"] = "var-y1";
    } else if (a.target == "ate") {
      if (a.method == "mdipw")
        rep = dipw::run_mdipw(d, cfg);
      else if (a.method == "ipw")
        rep = dipw::run_ipw(d, cfg);
      else if (a.method == "aipw")
        rep = dipw::run_aipw(d, cfg);
      else if (a.method == "dipw-basic")
        rep = dipw::run_dipw_basic(d, cfg);
      else
        throw dipw::ConfigError("--method must be mdipw, ipw, aipw or dipw-basic");
      out = rep.to_json();
      out["target"] = "ate";
    } else {
      throw dipw::ConfigError("--target must be ate, var-y1 or hte");
    }
  }
  man.finished = now_iso8601();
  out["manifest"] = man.core();
  emit(a.out, out.dump(2) + "\n");
  write_manifest_sidecar(man, a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  DesignFlags design;
  std::uint64_t seed = 1;
  std::uint64_t rep = 0;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  RunManifest man;
  man.command = "simulate";
  man.seed = a.seed;
  man.started = now_iso8601();
  man.config = a.design.as_config();
  man.config["rep"] = std::to_string(a.rep);

  const dipw::SimulationDesign design = a.design.build(a.seed);
  const dipw::SimulatedData sim = dipw::simulate(design, a.rep);

  std::ostringstream csv;
  csv << "y,t";
  for (int j = 1; j <= design.p; ++j) csv << ",x" << j;
  csv << "\n";
  for (Eigen::Index i = 0; i < sim.data.n(); ++i) {
    csv << format_double(sim.data.Y(i)) << "," << sim.data.T(i);
    for (int j = 1; j <= design.p; ++j) csv << "," << format_double(sim.data.X(i, j));
    csv << "\n";
  }
  man.finished = now_iso8601();
  emit(a.out, csv.str());
  write_manifest_sidecar(man, a.out);
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkArgs {
  DesignFlags design;
  std::string methods = "mdipw,ipw,aipw";
  std::string target = "ate";
  std::string out = "benchmark";
  int reps = 250;
  int B = 3;
  double kappa = 0.5;
  double alpha = 0.05;
  double clip = 0.01;
  int cv_folds = 10;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool timing = false;
};

struct RepRow {
  int rep;
  std::string method;
  double tau_hat, abs_err, sigma_m_sq, ci_lo, ci_hi;
  int covered;
  long runtime_ms;
};

int cmd_benchmark(const BenchmarkArgs& a) {
  if (!a.seed_given)
    throw dipw::ConfigError("--seed is required in benchmark mode (reproducibility by default)");

  std::vector<std::string> methods;
  {
    std::stringstream ss(a.methods);
    std::string tok;
    while (std::getline(ss, tok, ',')) methods.push_back(tok);
  }
  for (const auto& m : methods) {
    const bool ate_ok = m == "mdipw" || m == "ipw" || m == "aipw" || m == "dipw-basic" ||
                        m == "oracle";
    const bool var_ok = m == "mdipw" || m == "naive";
    if ((a.target == "ate" && !ate_ok) || (a.target == "var-y1" && !var_ok))
      throw dipw::ConfigError("--methods: '" + m + "' is not available for target " + a.target);
  }
  if (a.target != "ate" && a.target != "var-y1")
    throw dipw::ConfigError("--target must be ate or var-y1 in benchmark mode");

  RunManifest man;
  man.command = "benchmark";
  man.seed = a.seed;
  man.started = now_iso8601();
  man.config = a.design.as_config();
  man.config["methods"] = a.methods;
  man.config["target"] = a.target;
  man.config["reps"] = std::to_string(a.reps);
  man.config["B"] = std::to_string(a.B);
  man.config["kappa"] = format_double(a.kappa);
  man.config["alpha"] = format_double(a.alpha);
  man.config["clip"] = format_double(a.clip);
  man.config["cv_folds"] = std::to_string(a.cv_folds);
  man.config["timing"] = a.timing ? "1" : "0";

  const dipw::SimulationDesign design = a.design.build(a.seed);
  if (a.target == "var-y1" &&
      (design.response != dipw::FunctionKind::DenseLinear ||
       design.effect != dipw::FunctionKind::DenseLinear))
    throw dipw::ConfigError(
        "--target var-y1 benchmarking needs linear response and effect (analytic truth)");

  dipw::MdipwConfig base;
  base.B = a.B;
  base.kappa = a.kappa;
  base.alpha = a.alpha;
  base.clip = a.clip;
  base.cv_folds = a.cv_folds;
  base.threads = 1;  // the pool parallelises over replications

  std::vector<RepRow> rows(static_cast<std::size_t>(a.reps) * methods.size());

  const auto run_rep = [&](int rep) {
    const dipw::SimulatedData sim = dipw::simulate(design, static_cast<std::uint64_t>(rep));
    double truth;
    if (a.target == "ate") {
      // mean-zero Gaussian designs have tau = 0 for both effect kinds (the
      // nonlinear effect is odd in x'delta); user designs target tau_bar
      truth = design.cov == dipw::CovFamily::UserCsv ? dipw::tau_bar(sim.truth, sim.X_raw) : 0.0;
    } else {
      truth = dipw::true_var_y1(sim.truth, design);
    }

    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const std::string& m = methods[mi];
      dipw::MdipwConfig cfg = base;
      cfg.seed = dipw::detail::derive_seed(a.seed, "rep-" + std::to_string(rep));

      const auto t0 = std::chrono::steady_clock::now();
      dipw::EstimateReport er;
      if (a.target == "var-y1") {
        if (m == "mdipw") {
          er = dipw::estimate_potential_variance(sim.data, cfg);
        } else {  // naive: sample variance of Y among the treated
          double s = 0.0, ss = 0.0;
          int n1 = 0;
          for (Eigen::Index i = 0; i < sim.data.n(); ++i)
            if (sim.data.T(i) == 1) {
              s += sim.data.Y(i);
              ++n1;
            }
          const double mean1 = s / n1;
          for (Eigen::Index i = 0; i < sim.data.n(); ++i)
            if (sim.data.T(i) == 1) ss += (sim.data.Y(i) - mean1) * (sim.data.Y(i) - mean1);
          er.method = dipw::Method::mDIPW;
          er.tau_hat = ss / std::max(n1 - 1, 1);
          er.ci_lo = er.ci_hi = er.tau_hat;
          er.sigma_sq = 0.0;
        }
      } else if (m == "mdipw") {
        er = dipw::run_mdipw(sim.data, cfg);
      } else if (m == "ipw") {
        er = dipw::run_ipw(sim.data, cfg);
      } else if (m == "aipw") {
        er = dipw::run_aipw(sim.data, cfg);
      } else if (m == "dipw-basic") {
        er = dipw::run_dipw_basic(sim.data, cfg);
      } else {  // oracle: true propensities and the variance-optimal mu
        dipw::Vec mu(sim.data.n());
        for (Eigen::Index i = 0; i < sim.data.n(); ++i)
          mu(i) = dipw::oracle_mu(sim.truth.r0(sim.X_raw.row(i)), sim.truth.r1(sim.X_raw.row(i)),
                                  sim.pi_true(i));
        er.method = dipw::Method::ORACLE;
        er.tau_hat = dipw::estimate_oracle_dipw(sim.data, sim.pi_true, mu);
        const dipw::PropensityFit pf = dipw::force_propensity(sim.pi_true, 1e-12);
        er.sigma_sq = dipw::estimate_sigma_sq(sim.data, pf, mu, er.tau_hat);
        std::tie(er.ci_lo, er.ci_hi) =
            dipw::confidence_interval(er.tau_hat, er.sigma_sq, sim.data.n(), a.alpha);
      }
      const auto t1 = std::chrono::steady_clock::now();

      RepRow& row = rows[static_cast<std::size_t>(rep) * methods.size() + mi];
      row.rep = rep;
      row.method = m;
      row.tau_hat = er.tau_hat;
      row.abs_err = std::abs(er.tau_hat - truth);
      row.sigma_m_sq = er.sigma_sq;
      row.ci_lo = er.ci_lo;
      row.ci_hi = er.ci_hi;
      row.covered = (er.ci_lo <= truth && truth <= er.ci_hi) ? 1 : 0;
      row.runtime_ms =
          a.timing
              ? std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()
              : -1;
    }
  };

  const int pool = std::min(threads_from_env(), a.reps);
  if (pool > 1) {
    std::atomic<int> next{0};
    std::vector<std::future<void>> futs;
    for (int w = 0; w < pool; ++w)
      futs.push_back(std::async(std::launch::async, [&]() {
        for (int r = next.fetch_add(1); r < a.reps; r = next.fetch_add(1)) run_rep(r);
      }));
    for (auto& f : futs) f.get();
  } else {
    for (int r = 0; r < a.reps; ++r) run_rep(r);
  }

  // per-replication CSV, written in replication order
  std::ostringstream csv;
  csv << "rep,method,tau_hat,abs_err,sigma_m_sq,ci_lo,ci_hi,covered,runtime_ms\n";
  for (const auto& row : rows) {
    csv << row.rep << "," << row.method << "," << format_double(row.tau_hat) << ","
        << format_double(row.abs_err) << "," << format_double(row.sigma_m_sq) << ","
        << format_double(row.ci_lo) << "," << format_double(row.ci_hi) << "," << row.covered
        << "," << row.runtime_ms << "\n";
  }

  // per-method summary
  json summary;
  for (const auto& m : methods) {
    std::vector<double> errs;
    double sum_err = 0.0;
    int covered = 0, cnt = 0;
    for (const auto& row : rows)
      if (row.method == m) {
        errs.push_back(row.abs_err);
        sum_err += row.abs_err;
        covered += row.covered;
        ++cnt;
      }
    std::sort(errs.begin(), errs.end());
    const double median = errs.size() % 2 == 1
                              ? errs[errs.size() / 2]
                              : 0.5 * (errs[errs.size() / 2 - 1] + errs[errs.size() / 2]);
    summary["methods"][m] = {{"median_abs_err", median},
                             {"mean_abs_err", sum_err / cnt},
                             {"coverage", static_cast<double>(covered) / cnt}};
  }
  man.finished = now_iso8601();
  summary["manifest"] = man.core();

  const std::string csv_path = a.out + ".csv";
  const std::string sum_path = a.out + ".summary.json";
  atomic_write(csv_path, csv.str());
  atomic_write(sum_path, summary.dump(2) + "\n");
  write_manifest_sidecar(man, a.out);
  std::cerr << "wrote " << csv_path << " and " << sum_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased inverse propensity weighting for high-dimensional ATE estimation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Plain key=value config file (flags take precedence)");

  EstimateArgs ea;
  auto* est = app.add_subcommand("estimate", "Estimate effects from a CSV dataset");
  est->add_option("--data", ea.data, "Input CSV path")->required();
  est->add_option("--y", ea.y_col, "Outcome column name");
  est->add_option("--t", ea.t_col, "Treatment column name");
  est->add_option("--method", ea.method, "mdipw | ipw | aipw | dipw-basic");
  est->add_option("--target", ea.target, "ate | var-y1 | hte");
  est->add_option("--hte-cols", ea.hte_cols, "Comma-separated projection columns (hte target)");
  est->add_option("--B", ea.B, "Number of sample splits");
  est->add_option("--kappa", ea.kappa, "Lagrangian weight in (0,1)");
  est->add_option("--alpha", ea.alpha, "Interval level");
  est->add_option("--clip", ea.clip, "Propensity clipping bound");
  est->add_option("--cv-folds", ea.cv_folds, "Cross-validation folds");
  est->add_option("--seed", ea.seed, "Master seed");
  est->add_option("--out", ea.out, "Output JSON path (default stdout)");
  est->add_option("--force-pi", ea.force_pi, "Test-only: inject a constant propensity");
  est->add_flag("--mu-zero", ea.mu_zero, "Test-only: force mu = 0");
  est->add_flag("--no-standardize", ea.no_standardize, "Disable internal standardisation");
  est->add_option("--threads", ea.threads, "Fold-solver threads (default DIPW_THREADS)");

  SimulateArgs sa;
  auto* sim = app.add_subcommand("simulate", "Generate a dataset from a simulation design");
  sa.design.add_flags(sim);
  sim->add_option("--seed", sa.seed, "Design seed")->required();
  sim->add_option("--rep", sa.rep, "Replication index");
  sim->add_option("--out", sa.out, "Output CSV path (default stdout)");

  BenchmarkArgs ba;
  auto* ben = app.add_subcommand("benchmark", "Run seeded replications and emit results CSV");
  ba.design.add_flags(ben);
  ben->add_option("--methods", ba.methods, "Comma-separated methods");
  ben->add_option("--target", ba.target, "ate | var-y1");
  ben->add_option("--reps", ba.reps, "Replication count");
  ben->add_option("--B", ba.B, "Number of sample splits");
  ben->add_option("--kappa", ba.kappa, "Lagrangian weight in (0,1)");
  ben->add_option("--alpha", ba.alpha, "Interval level");
  ben->add_option("--clip", ba.clip, "Propensity clipping bound");
  ben->add_option("--cv-folds", ba.cv_folds, "Cross-validation folds");
  auto* seed_opt = ben->add_option("--seed", ba.seed, "Master seed (required)");
  ben->add_option("--out", ba.out, "Output path prefix");
  ben->add_flag("--timing", ba.timing,
                "Record wall-clock runtime_ms (breaks byte-identical reruns)");

  try {
    app.parse(argc, argv);
    if (est->parsed()) return cmd_estimate(ea);
    if (sim->parsed()) return cmd_simulate(sa);
    ba.seed_given = seed_opt->count() > 0;
    return cmd_benchmark(ba);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  } catch (const dipw::ConvergenceError& e) {
    json diag;
    diag["error"] = e.what();
    diag["kind"] = "solver";
    const std::string path = "dipw_diagnostics.json";
    try {
      atomic_write(path, diag.dump(2) + "\n");
      std::cerr << "solver failure: " << e.what() << "\ndiagnostics: " << path << "\n";
    } catch (...) {
      std::cerr << "solver failure: " << e.what() << "\n";
    }
    return kExitSolver;
  } catch (const dipw::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
