#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dipw/error.hpp"
#include "json.hpp"

namespace dipw {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using IVec = Eigen::VectorXi;

/// Observational dataset. Column 1 of X is the all-ones intercept; this
/// convention is relied on by every penalised fit (penalties skip index 1)
/// and by the balance programs.
struct Dataset {
  Mat X;                                   // n x p, X(:,0) == 1
  Vec Y;                                   // n
  IVec T;                                  // n, entries in {0,1}
  std::vector<std::string> feature_names;  // optional, length p when present

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  int n_treated() const { return T.sum(); }
  int n_control() const { return static_cast<int>(T.size()) - T.sum(); }

  /// Throws unless all invariants hold. Idempotent: a valid Dataset is
  /// left untouched.
  void validate() const {
    if (n() < 2 || p() < 2) throw DataError("Dataset: need n >= 2 and p >= 2");
    if (Y.size() != n() || T.size() != n())
      throw DimensionError("Dataset: X, Y, T row counts disagree");
    if (!X.allFinite()) throw DataError("Dataset: X contains a non-finite entry");
    if (!Y.allFinite()) throw DataError("Dataset: Y contains a non-finite entry");
    for (Eigen::Index i = 0; i < n(); ++i) {
      if (T(i) != 0 && T(i) != 1)
        throw DegenerateTreatmentError("Dataset: T[" + std::to_string(i) +
                                       "] = " + std::to_string(T(i)) + ", expected 0 or 1");
      if (X(i, 0) != 1.0)
        throw DataError("Dataset: X[" + std::to_string(i) + ",0] != 1 (intercept column)");
    }
    if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != p())
      throw DimensionError("Dataset: feature_names length != p");
  }

  /// Additional requirement for estimation: both arms nonempty.
  void validate_for_estimation() const {
    validate();
    if (n_treated() < 1 || n_control() < 1)
      throw DegenerateTreatmentError("Dataset: both treatment groups must be nonempty");
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_double(const std::string& tok, std::size_t row, const std::string& col) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t')) --e;
  double v = 0.0;
  const auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    throw DataError("CSV parse failure at row " + std::to_string(row) + ", column '" + col +
                    "': '" + tok + "'");
  if (!std::isfinite(v))
    throw DataError("CSV non-finite value at row " + std::to_string(row) + ", column '" + col +
                    "'");
  return v;
}

}  // namespace detail

/// Loads a comma-separated file with a header row. y_col and t_col name the
/// outcome and treatment columns; every other column becomes a covariate in
/// file order. Data rows are numbered from 1.
inline Dataset load_csv(const std::string& path, const std::string& y_col,
                        const std::string& t_col, bool add_intercept = true) {
  std::ifstream in(path);
  if (!in) throw SchemaError("load_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("load_csv: empty file '" + path + "'");
  const auto header = detail::split_csv_line(line);

  int y_idx = -1, t_idx = -1;
  std::vector<int> cov_idx;
  std::vector<std::string> cov_names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == y_col) {
      y_idx = static_cast<int>(j);
    } else if (header[j] == t_col) {
      t_idx = static_cast<int>(j);
    } else {
      cov_idx.push_back(static_cast<int>(j));
      cov_names.push_back(header[j]);
    }
  }
  if (y_idx < 0) throw SchemaError("load_csv: missing outcome column '" + y_col + "'");
  if (t_idx < 0) throw SchemaError("load_csv: missing treatment column '" + t_col + "'");

  std::vector<double> ys;
  std::vector<int> ts;
  std::vector<std::vector<double>> rows;
  std::size_t rownum = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++rownum;
    const auto toks = detail::split_csv_line(line);
    if (toks.size() != header.size())
      throw SchemaError("load_csv: row " + std::to_string(rownum) + " has " +
                        std::to_string(toks.size()) + " fields, header has " +
                        std::to_string(header.size()));
    ys.push_back(detail::parse_double(toks[static_cast<std::size_t>(y_idx)], rownum, y_col));
    const double tv = detail::parse_double(toks[static_cast<std::size_t>(t_idx)], rownum, t_col);
    if (tv != 0.0 && tv != 1.0)
      throw DegenerateTreatmentError("load_csv: treatment value " + std::to_string(tv) +
                                     " at row " + std::to_string(rownum) + " is not in {0,1}");
    ts.push_back(static_cast<int>(tv));
    std::vector<double> r;
    r.reserve(cov_idx.size());
    for (std::size_t k = 0; k < cov_idx.size(); ++k)
      r.push_back(detail::parse_double(toks[static_cast<std::size_t>(cov_idx[k])], rownum,
                                       cov_names[k]));
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw SchemaError("load_csv: no data rows in '" + path + "'");

  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index q = static_cast<Eigen::Index>(cov_idx.size());
  const Eigen::Index off = add_intercept ? 1 : 0;

  Dataset d;
  d.X = Mat(n, q + off);
  if (add_intercept) d.X.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < q; ++j)
      d.X(i, j + off) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  d.Y = Eigen::Map<Vec>(ys.data(), n);
  d.T = Eigen::Map<IVec>(ts.data(), n);
  if (add_intercept) d.feature_names.push_back("(intercept)");
  for (auto& nm : cov_names) d.feature_names.push_back(nm);

  d.validate_for_estimation();
  return d;
}

/// Writes the dataset back out in the load_csv schema (intercept column is
/// dropped). Values are printed with enough digits to round-trip exactly.
inline void write_csv(const Dataset& d, const std::string& path, const std::string& y_col = "y",
                      const std::string& t_col = "t") {
  std::ofstream out(path);
  if (!out) throw SchemaError("write_csv: cannot open '" + path + "' for writing");
  out << y_col << "," << t_col;
  for (Eigen::Index j = 1; j < d.p(); ++j) {
    if (static_cast<Eigen::Index>(d.feature_names.size()) == d.p())
      out << "," << d.feature_names[static_cast<std::size_t>(j)];
    else
      out << ",x" << j;
  }
  out << "\n";
  char buf[64];
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", d.Y(i));
    out << buf << "," << d.T(i);
    for (Eigen::Index j = 1; j < d.p(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", d.X(i, j));
      out << "," << buf;
    }
    out << "\n";
  }
}

/// JSON test-fixture form: {n, p, feature_names, X (row-major), Y, T}.
inline nlohmann::json dataset_to_json(const Dataset& d) {
  nlohmann::json j;
  j["n"] = d.n();
  j["p"] = d.p();
  j["feature_names"] = d.feature_names;
  std::vector<double> x;
  x.reserve(static_cast<std::size_t>(d.n() * d.p()));
  for (Eigen::Index i = 0; i < d.n(); ++i)
    for (Eigen::Index c = 0; c < d.p(); ++c) x.push_back(d.X(i, c));
  j["X"] = x;
  j["Y"] = std::vector<double>(d.Y.data(), d.Y.data() + d.Y.size());
  j["T"] = std::vector<int>(d.T.data(), d.T.data() + d.T.size());
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  Dataset d;
  const Eigen::Index n = j.at("n").get<Eigen::Index>();
  const Eigen::Index p = j.at("p").get<Eigen::Index>();
  const auto x = j.at("X").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(x.size()) != n * p)
    throw SchemaError("dataset_from_json: X length != n*p");
  d.X = Mat(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < p; ++c) d.X(i, c) = x[static_cast<std::size_t>(i * p + c)];
  const auto y = j.at("Y").get<std::vector<double>>();
  const auto t = j.at("T").get<std::vector<int>>();
  if (static_cast<Eigen::Index>(y.size()) != n || static_cast<Eigen::Index>(t.size()) != n)
    throw SchemaError("dataset_from_json: Y/T length != n");
  d.Y = Eigen::Map<const Vec>(y.data(), n);
  d.T = Eigen::Map<const IVec>(t.data(), n);
  if (j.contains("feature_names")) d.feature_names = j["feature_names"].get<std::vector<std::string>>();
  d.validate();
  return d;
}

}  // namespace dipw
