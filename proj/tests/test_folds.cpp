#include <catch2/catch_amalgamated.hpp>
#include <set>

#include "dipw/folds.hpp"

using namespace dipw;

TEST_CASE("fold pairs partition exactly") {
  RandomStream rng(5, "folds");
  for (int n : {2, 3, 10, 101}) {
    const FoldPlan plan = make_fold_plan(n, 4, rng);
    plan.validate();
    for (const auto& pr : plan.pairs) {
      CHECK(static_cast<int>(pr.second.size()) == n / 2);
      CHECK(static_cast<int>(pr.first.size()) == n - n / 2);
      std::set<int> all(pr.first.begin(), pr.first.end());
      all.insert(pr.second.begin(), pr.second.end());
      CHECK(static_cast<int>(all.size()) == n);  // union is {0..n-1}, intersection empty
      CHECK(*all.begin() == 0);
      CHECK(*all.rbegin() == n - 1);
    }
  }
}

TEST_CASE("deterministic option consumes no randomness") {
  RandomStream r1(9, "folds"), r2(9, "folds");
  const FoldPlan a = make_fold_plan(20, 3, r1, true);
  const FoldPlan b = make_fold_plan(20, 3, r2, true);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.pairs[i].second == b.pairs[i].second);
  }
  CHECK(r1.next_u64() == r2.next_u64());
  // pairs differ across b
  CHECK(a.pairs[0].second != a.pairs[1].second);
}

TEST_CASE("random plans are seed-reproducible") {
  RandomStream r1(11, "folds"), r2(11, "folds");
  const FoldPlan a = make_fold_plan(33, 2, r1);
  const FoldPlan b = make_fold_plan(33, 2, r2);
  for (int i = 0; i < 2; ++i) CHECK(a.pairs[i].second == b.pairs[i].second);
}
