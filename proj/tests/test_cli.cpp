#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace {

const std::string kCli = DIPW_CLI_PATH;
const std::string kTmp = DIPW_TEST_TMPDIR;
const std::string kData = DIPW_DATA_DIR;

int run(const std::string& args, const std::string& stdout_to = "/dev/null") {
  const std::string cmd = kCli + " " + args + " > " + stdout_to + " 2> /dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("estimate: minimal invocation emits a valid report") {
  const std::string out = kTmp + "/est.json";
  const int rc = run("estimate --data " + kData + "/example.csv --y y --t t --seed 4 --out " + out);
  REQUIRE(rc == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j["method"] == "mdipw");
  CHECK(j["ci"]["lo"].get<double>() < j["tau_hat"].get<double>());
  CHECK(j["tau_hat"].get<double>() < j["ci"]["hi"].get<double>());
  CHECK(j["per_split"].size() == 3);
  CHECK(j["manifest"]["command"] == "estimate");
  CHECK(j["manifest"]["seed"] == 4);
  CHECK(j["manifest"].contains("started") == false);  // deterministic core only
}

TEST_CASE("estimate: ipw equals dipw-basic under the forced mu = 0 flag") {
  const std::string a = kTmp + "/ipw.json", b = kTmp + "/basic.json";
  REQUIRE(run("estimate --data " + kData + "/example.csv --y y --t t --seed 4 --method ipw --out " +
              a) == 0);
  REQUIRE(run("estimate --data " + kData +
              "/example.csv --y y --t t --seed 4 --method dipw-basic --mu-zero --out " + b) == 0);
  const auto ja = nlohmann::json::parse(slurp(a));
  const auto jb = nlohmann::json::parse(slurp(b));
  CHECK(ja["tau_hat"].get<double>() == jb["tau_hat"].get<double>());
}

TEST_CASE("estimate: same flags and seed give byte-identical output") {
  const std::string a = kTmp + "/det1.json", b = kTmp + "/det2.json";
  const std::string flags =
      "estimate --data " + kData + "/example.csv --y y --t t --seed 17 --B 2 --out ";
  REQUIRE(run(flags + a) == 0);
  REQUIRE(run(flags + b) == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(!slurp(a).empty());
}

TEST_CASE("estimate: validation failures exit 2") {
  CHECK(run("estimate --data /nonexistent.csv --y y --t t") == 2);
  CHECK(run("estimate --data " + kData + "/example.csv --y nope --t t") == 2);
  CHECK(run("estimate --data " + kData + "/example.csv --y y --t t --method bogus") == 2);
  CHECK(run("estimate --data " + kData + "/example.csv --y y --t t --target bogus") == 2);
}

TEST_CASE("simulate: writes the requested number of rows") {
  const std::string out = kTmp + "/sim.csv";
  REQUIRE(run("simulate --n 30 --p 20 --d-gamma 3 --seed 12 --out " + out) == 0);
  const std::string body = slurp(out);
  CHECK(count_lines(body) == 31);  // header + 30 rows
  CHECK(body.rfind("y,t,x1,", 0) == 0);
}

TEST_CASE("benchmark: row counts, summary consistency, determinism") {
  const std::string pre1 = kTmp + "/bench1", pre2 = kTmp + "/bench2";
  const std::string flags =
      "benchmark --n 40 --p 20 --d-gamma 3 --reps 2 --methods ipw,oracle --cv-folds 4 --seed 9 "
      "--out ";
  REQUIRE(run(flags + pre1) == 0);
  const std::string csv = slurp(pre1 + ".csv");
  CHECK(count_lines(csv) == 5);  // header + reps * methods
  CHECK(csv.rfind("rep,method,tau_hat,abs_err,sigma_m_sq,ci_lo,ci_hi,covered,runtime_ms\n", 0) ==
        0);

  const auto sum = nlohmann::json::parse(slurp(pre1 + ".summary.json"));
  for (const auto& m : {"ipw", "oracle"}) {
    const double cov = sum["methods"][m]["coverage"].get<double>();
    CHECK(cov >= 0.0);
    CHECK(cov <= 1.0);
  }
  // coverage equals the mean of the covered column for each method
  {
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    std::map<std::string, std::pair<int, int>> acc;
    while (std::getline(lines, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) f.push_back(tok);
      acc[f[1]].first += std::stoi(f[7]);
      acc[f[1]].second += 1;
    }
    for (auto& [m, c] : acc)
      CHECK(sum["methods"][m]["coverage"].get<double>() ==
            Catch::Approx(static_cast<double>(c.first) / c.second).margin(1e-12));
  }

  // byte-identical rerun (default: no timing)
  REQUIRE(run(flags + pre2) == 0);
  CHECK(slurp(pre1 + ".csv") == slurp(pre2 + ".csv"));
  CHECK(slurp(pre1 + ".summary.json") == slurp(pre2 + ".summary.json"));
}

TEST_CASE("benchmark: seed is mandatory") {
  CHECK(run("benchmark --n 40 --p 20 --reps 1 --methods ipw --out " + kTmp + "/nope") == 2);
}
