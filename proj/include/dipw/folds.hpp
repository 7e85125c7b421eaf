#pragma once

#include <vector>

#include "dipw/error.hpp"
#include "dipw/rng.hpp"

namespace dipw {

/// One complementary pair of index sets. `second` has floor(n/2) elements,
/// `first` is its complement in {0,...,n-1}; both sorted and duplicate-free.
struct FoldPair {
  std::vector<int> first;   // I_{2b-1}
  std::vector<int> second;  // I_{2b}
};

/// The B complementary split pairs used by the multi-split estimator.
struct FoldPlan {
  std::vector<FoldPair> pairs;
  int n = 0;

  void validate() const {
    for (const auto& pr : pairs) {
      if (static_cast<int>(pr.second.size()) != n / 2)
        throw DimensionError("FoldPlan: |I_2b| != floor(n/2)");
      std::vector<char> seen(static_cast<std::size_t>(n), 0);
      for (int i : pr.first) seen[static_cast<std::size_t>(i)] += 1;
      for (int i : pr.second) seen[static_cast<std::size_t>(i)] += 1;
      for (int i = 0; i < n; ++i)
        if (seen[static_cast<std::size_t>(i)] != 1)
          throw DimensionError("FoldPlan: pair does not partition {1..n}");
    }
  }
};

/// Draws B uniformly random complementary pairs. With `deterministic` set,
/// uses rotated half-blocks instead (no randomness consumed).
inline FoldPlan make_fold_plan(int n, int B, RandomStream& rng, bool deterministic = false) {
  if (n < 2 || B < 1) throw ConfigError("make_fold_plan: need n >= 2 and B >= 1");
  FoldPlan plan;
  plan.n = n;
  const int half = n / 2;
  for (int b = 0; b < B; ++b) {
    FoldPair pr;
    if (deterministic) {
      const int start = (b * (n / (B + 1) + 1)) % n;
      std::vector<char> in_second(static_cast<std::size_t>(n), 0);
      for (int j = 0; j < half; ++j) in_second[static_cast<std::size_t>((start + j) % n)] = 1;
      for (int i = 0; i < n; ++i)
        (in_second[static_cast<std::size_t>(i)] ? pr.second : pr.first).push_back(i);
    } else {
      pr.second = rng.sample_without_replacement(n, half);
      std::vector<char> in_second(static_cast<std::size_t>(n), 0);
      for (int i : pr.second) in_second[static_cast<std::size_t>(i)] = 1;
      for (int i = 0; i < n; ++i)
        if (!in_second[static_cast<std::size_t>(i)]) pr.first.push_back(i);
    }
    plan.pairs.push_back(std::move(pr));
  }
  return plan;
}

}  // namespace dipw
