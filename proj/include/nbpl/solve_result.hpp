#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "nbpl/policy.hpp"
#include "nbpl/policy_class.hpp"

namespace nbpl {

struct SolveResult {
  Policy policy;
  double value = 0.0;          // weighted welfare of `policy`
  std::vector<double> shares;  // weighted share per arm
  bool exact = true;           // search provably covers the class (relative to its grid)
  std::size_t candidates_evaluated = 0;

  double treated_share() const {
    double t = 0.0;
    for (std::size_t j = 1; j < shares.size(); ++j) t += shares[j];
    return t;
  }
};

inline nlohmann::json to_json_value(const SolveResult& r) {
  return {{"policy", policy_to_json(r.policy)},
          {"value", r.value},
          {"shares", r.shares},
          {"exact", r.exact},
          {"candidates_evaluated", r.candidates_evaluated}};
}

struct SolverOptions {
  /// Largest n for which the two-covariate linear class is solved exactly.
  std::size_t n_exact = 2000;
  /// Random directions tried by the linear local search (besides the axes).
  std::size_t heuristic_starts = 16;
  std::size_t heuristic_rounds = 8;
  std::uint64_t heuristic_seed = 0x5EEDULL;
};

/// Ties in welfare closer than this are broken by the smaller treated share.
inline constexpr double kTieTolerance = 1e-12;

namespace detail {

/// Welfare, weight and count of a set of rows.
struct Acc {
  double v = 0.0;
  double w = 0.0;
  double c = 0.0;

  Acc& operator+=(const Acc& o) {
    v += o.v;
    w += o.w;
    c += o.c;
    return *this;
  }
  Acc& operator-=(const Acc& o) {
    v -= o.v;
    w -= o.w;
    c -= o.c;
    return *this;
  }
  friend Acc operator+(Acc a, const Acc& b) { return a += b; }
  friend Acc operator-(Acc a, const Acc& b) { return a -= b; }
};

/// Share measured on the capacity basis, and the capacity test.
struct CapacityRule {
  std::optional<double> q;
  CapacityBasis basis = CapacityBasis::uniform;
  double n = 1.0;

  double share(const Acc& treated) const {
    return basis == CapacityBasis::uniform ? treated.c / n : treated.w;
  }
  bool feasible(double share) const { return !q || share <= *q + kTieTolerance; }
  bool feasible(const Acc& treated) const { return feasible(share(treated)); }
};

/// Strictly better under the deterministic tie rule: higher welfare, then
/// smaller treated share. Equal candidates keep the earlier one.
inline bool better(double v, double share, double best_v, double best_share) {
  if (v > best_v + kTieTolerance) return true;
  if (v < best_v - kTieTolerance) return false;
  return share < best_share - kTieTolerance;
}

}  // namespace detail

}  // namespace nbpl
