#pragma once

// Brute-force reference implementations of the two matchers.

#include <algorithm>
#include <numeric>
#include <random>
#include <tuple>
#include <vector>

#include "radarvel/eval.hpp"
#include "radarvel/selfsup.hpp"

namespace radarvel::testing {

/// Enumerates every matching of size min(|a|, |b|) and keeps the one whose
/// (distance, a, b) tuples, sorted ascending, are lexicographically smallest;
/// that matching is what global greedy selection produces. Pairs beyond
/// max_distance are then cut from the tail.
inline MatchSet brute_force_match(const std::vector<OBB>& a, const std::vector<OBB>& b,
                                  double max_distance = std::numeric_limits<double>::infinity()) {
  MatchSet out;
  if (a.empty() || b.empty()) return out;
  const bool swap = a.size() > b.size();
  const auto& small = swap ? b : a;
  const auto& large = swap ? a : b;
  std::vector<int> perm(large.size());
  std::iota(perm.begin(), perm.end(), 0);
  using Key = std::vector<std::tuple<double, int, int>>;
  Key best;
  bool have = false;
  // Each permutation prefix assigns small[i] -> large[perm[i]]; permutations
  // sharing a prefix repeat work but the sets are tiny.
  do {
    Key k;
    for (std::size_t i = 0; i < small.size(); ++i) {
      const int ia = swap ? perm[i] : static_cast<int>(i);
      const int ib = swap ? static_cast<int>(i) : perm[i];
      k.emplace_back(bev_distance(a[ia], b[ib]), ia, ib);
    }
    std::sort(k.begin(), k.end());
    if (!have || k < best) {
      best = k;
      have = true;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (const auto& [d, ia, ib] : best) {
    if (d > max_distance) break;
    out.pairs.push_back({ia, ib, d});
  }
  return out;
}

/// Repeatedly takes the highest-scoring unprocessed prediction (lowest index
/// on ties) and gives it the nearest unclaimed ground truth (lowest index on
/// ties) strictly inside the threshold.
inline EvalMatch brute_force_eval_match(const std::vector<OBB>& preds, const std::vector<OBB>& gts,
                                        double threshold) {
  EvalMatch m;
  std::vector<char> done(preds.size(), 0), claimed(gts.size(), 0);
  for (std::size_t step = 0; step < preds.size(); ++step) {
    int p = -1;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (!done[i] && (p < 0 || preds[i].score_fg > preds[p].score_fg)) p = static_cast<int>(i);
    done[p] = 1;
    int g = -1;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (claimed[j]) continue;
      const double d = bev_distance(preds[p], gts[j]);
      if (d < threshold && (g < 0 || d < bev_distance(preds[p], gts[g]))) g = static_cast<int>(j);
    }
    if (g < 0) {
      m.fp.push_back(p);
    } else {
      claimed[g] = 1;
      m.tp.emplace_back(p, g);
    }
  }
  for (std::size_t j = 0; j < gts.size(); ++j)
    if (!claimed[j]) m.fn.push_back(static_cast<int>(j));
  return m;
}

inline bool same_eval_match(const EvalMatch& x, const EvalMatch& y) {
  return x.tp == y.tp && x.fp == y.fp && x.fn == y.fn;
}

/// Random box lists of up to six boxes per side. Centers sit on a coarse
/// lattice about half the time so equal distances and equal scores occur.
struct MatchInstance {
  std::vector<OBB> a, b;
};

inline MatchInstance random_match_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 6), lattice(-3, 3), coin(0, 1), score_step(1, 4);
  std::uniform_real_distribution<double> u(-6.0, 6.0), score(0.01, 0.99);
  const bool on_lattice = coin(rng) == 1;
  auto box = [&]() {
    const double x = on_lattice ? lattice(rng) : u(rng), y = on_lattice ? lattice(rng) : u(rng);
    const double s = on_lattice ? 0.2 * score_step(rng) : score(rng);
    return make_obb(Vec3(x, y, 0.0), 4.0, 2.0, 1.5, 0.0, Vec2::Zero(), s);
  };
  MatchInstance inst;
  const int na = count(rng), nb = count(rng);
  for (int i = 0; i < na; ++i) inst.a.push_back(box());
  for (int i = 0; i < nb; ++i) inst.b.push_back(box());
  return inst;
}

}  // namespace radarvel::testing
