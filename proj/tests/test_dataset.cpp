#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>
#include <string>

#include "dipw/dataset.hpp"
#include "dipw/rng.hpp"

using namespace dipw;

namespace {

std::string tmp_path(const std::string& name) {
  return std::string(DIPW_TEST_TMPDIR) + "/" + name;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

}  // namespace

TEST_CASE("load_csv basic construction") {
  const auto path = tmp_path("basic.csv");
  write_file(path, "y,t,x1\n1.5,1,0.2\n-0.5,0,0.4\n2.0,0,-1.0\n");
  const Dataset d = load_csv(path, "y", "t", true);
  CHECK(d.n() == 3);
  CHECK(d.p() == 2);
  CHECK(d.X.col(0).isOnes());
  CHECK(d.X(0, 1) == 0.2);
  CHECK(d.Y(0) == 1.5);
  CHECK(d.T(0) == 1);
  CHECK(d.feature_names[0] == "(intercept)");
  CHECK(d.feature_names[1] == "x1");
}

TEST_CASE("load_csv errors") {
  const auto bad_t = tmp_path("bad_t.csv");
  write_file(bad_t, "y,t,x1\n1.0,1,0.2\n2.0,2,0.3\n");
  CHECK_THROWS_WITH(load_csv(bad_t, "y", "t"), Catch::Matchers::ContainsSubstring("row 2"));
  CHECK_THROWS_AS(load_csv(bad_t, "y", "t"), DegenerateTreatmentError);

  const auto missing = tmp_path("missing.csv");
  write_file(missing, "y,x1\n1.0,0.2\n");
  CHECK_THROWS_AS(load_csv(missing, "y", "t"), SchemaError);

  const auto unparsable = tmp_path("unparsable.csv");
  write_file(unparsable, "y,t,x1\n1.0,1,abc\n0.0,0,0.1\n");
  CHECK_THROWS_WITH(load_csv(unparsable, "y", "t"),
                    Catch::Matchers::ContainsSubstring("x1"));
  CHECK_THROWS_AS(load_csv(unparsable, "y", "t"), DataError);

  const auto single_class = tmp_path("single_class.csv");
  write_file(single_class, "y,t,x1\n1.0,1,0.2\n2.0,1,0.3\n");
  CHECK_THROWS_AS(load_csv(single_class, "y", "t"), DegenerateTreatmentError);

  CHECK_THROWS_AS(load_csv(tmp_path("does_not_exist.csv"), "y", "t"), SchemaError);
}

TEST_CASE("csv round trip reproduces numeric content exactly") {
  // property: write_csv(load_csv(f)) == f numerically, random files
  RandomStream rng(2024, "csv-roundtrip");
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(20));
    const int q = 1 + static_cast<int>(rng.below(5));
    Dataset d;
    d.X = Mat(n, q + 1);
    d.X.col(0).setOnes();
    for (int i = 0; i < n; ++i)
      for (int j = 1; j <= q; ++j) d.X(i, j) = rng.normal() * std::pow(10.0, rng.below(7)) - 3.0;
    d.Y = Vec(n);
    d.T = IVec(n);
    for (int i = 0; i < n; ++i) {
      d.Y(i) = rng.normal() * 1e3;
      d.T(i) = i < n / 2 ? 1 : 0;  // both classes present for n >= 2
    }
    if (d.T.sum() == 0 || d.T.sum() == n) continue;

    const auto p1 = tmp_path("rt1.csv");
    const auto p2 = tmp_path("rt2.csv");
    write_csv(d, p1);
    const Dataset d1 = load_csv(p1, "y", "t");
    write_csv(d1, p2);
    const Dataset d2 = load_csv(p2, "y", "t");
    CHECK(d1.X == d2.X);
    CHECK(d1.Y == d2.Y);
    CHECK(d1.T == d2.T);
    CHECK((d1.X - d.X).lpNorm<Eigen::Infinity>() == 0.0);
    CHECK((d1.Y - d.Y).lpNorm<Eigen::Infinity>() == 0.0);
  }
}

TEST_CASE("dataset validation is idempotent and catches violations") {
  Dataset d;
  d.X = Mat::Ones(3, 2);
  d.X(0, 1) = 0.5;
  d.Y = Vec::Zero(3);
  d.T = IVec::Zero(3);
  d.T(0) = 1;
  const Mat xcopy = d.X;
  d.validate();
  d.validate();  // idempotent: no state change, no throw
  CHECK(d.X == xcopy);

  Dataset bad = d;
  bad.X(1, 0) = 2.0;  // intercept violated
  CHECK_THROWS_AS(bad.validate(), DataError);

  Dataset nan = d;
  nan.Y(2) = std::nan("");
  CHECK_THROWS_AS(nan.validate(), DataError);

  Dataset onearm = d;
  onearm.T.setZero();
  CHECK_THROWS_AS(onearm.validate_for_estimation(), DegenerateTreatmentError);
}

TEST_CASE("json fixture round trip") {
  Dataset d;
  d.X = Mat(2, 2);
  d.X << 1, 0.5, 1, -0.25;
  d.Y = Vec(2);
  d.Y << 1.25, -3.5;
  d.T = IVec(2);
  d.T << 1, 0;
  d.feature_names = {"(intercept)", "x1"};
  const Dataset back = dataset_from_json(dataset_to_json(d));
  CHECK(back.X == d.X);
  CHECK(back.Y == d.Y);
  CHECK(back.T == d.T);
  CHECK(back.feature_names == d.feature_names);
}
