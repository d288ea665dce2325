#pragma once

// Brute-force reference solvers. They share no search code with the library:
// every candidate assignment is built explicitly and scored by a plain sum.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <nbpl/nbpl.hpp>

namespace oracle {

struct Instance {
  std::size_t n = 0, d = 0, arms = 2;
  std::vector<double> x;  // n x d
  std::vector<double> g;  // n x arms, column 0 is zero
  std::vector<double> w;

  nbpl::ScoreTable table() const { return nbpl::ScoreTable::from_contrasts(g, x, arms, d); }
  double xv(std::size_t i, std::size_t k) const { return x[i * d + k]; }
};

/// Value and capacity share of an explicit assignment (arm per row).
inline double value_of(const Instance& in, const std::vector<int>& a) {
  double v = 0.0;
  for (std::size_t i = 0; i < in.n; ++i) v += in.w[i] * in.g[i * in.arms + static_cast<std::size_t>(a[i])];
  return v;
}

inline double share_of(const Instance& in, const std::vector<int>& a, bool weighted) {
  double s = 0.0;
  for (std::size_t i = 0; i < in.n; ++i)
    if (a[i] != 0) s += weighted ? in.w[i] : 1.0 / static_cast<double>(in.n);
  return s;
}

struct Best {
  double value = -std::numeric_limits<double>::infinity();
  std::size_t candidates = 0;

  void offer(const Instance& in, const std::vector<int>& a, std::optional<double> cap, bool weighted) {
    ++candidates;
    if (cap && share_of(in, a, weighted) > *cap + 1e-12) return;
    value = std::max(value, value_of(in, a));
  }
};

/// Every tree of depth <= depth over the given per-coordinate thresholds,
/// with every labelling of its leaves.
inline double tree_enumeration(const Instance& in, const std::vector<std::vector<double>>& grid, int depth,
                               std::optional<double> cap = std::nullopt, bool weighted = false) {
  // A tree is evaluated as a function row -> arm; enumerate node by node.
  using Fn = std::function<int(std::size_t)>;
  std::function<std::vector<Fn>(int)> build = [&](int dep) {
    std::vector<Fn> out;
    for (int a = 0; a < static_cast<int>(in.arms); ++a) out.push_back([a](std::size_t) { return a; });
    if (dep == 0) return out;
    const auto sub = build(dep - 1);
    for (std::size_t k = 0; k < grid.size(); ++k)
      for (double t : grid[k])
        for (const auto& l : sub)
          for (const auto& r : sub)
            out.push_back([&in, k, t, l, r](std::size_t i) { return in.xv(i, k) <= t ? l(i) : r(i); });
    return out;
  };
  Best best;
  std::vector<int> a(in.n);
  for (const auto& f : build(depth)) {
    for (std::size_t i = 0; i < in.n; ++i) a[i] = f(i);
    best.offer(in, a, cap, weighted);
  }
  return best.value;
}

/// One covariate, rules {x >= v}, {x <= v} for every observed v, plus all and none.
inline double threshold_scan_1d(const Instance& in) {
  Best best;
  std::vector<int> a(in.n);
  auto offer_if = [&](auto pred) {
    for (std::size_t i = 0; i < in.n; ++i) a[i] = pred(in.x[i]) ? 1 : 0;
    best.offer(in, a, std::nullopt, false);
  };
  offer_if([](double) { return false; });
  offer_if([](double) { return true; });
  for (std::size_t j = 0; j < in.n; ++j) {
    const double v = in.x[j];
    offer_if([v](double u) { return u >= v; });
    offer_if([v](double u) { return u <= v; });
  }
  return best.value;
}

/// Two covariates in general position, rules beta . x >= c. Every halfplane
/// subset is reached by moving the boundary until it meets two points; for each
/// pair the four ways of placing those two points are realized by a small shift
/// or rotation of the line through them.
inline double halfplane_scan_2d(const Instance& in) {
  Best best;
  std::vector<int> a(in.n);
  auto offer_score = [&](auto score) {
    for (std::size_t i = 0; i < in.n; ++i) a[i] = score(i) >= 0.0 ? 1 : 0;
    best.offer(in, a, std::nullopt, false);
    for (std::size_t i = 0; i < in.n; ++i) a[i] = -score(i) >= 0.0 ? 1 : 0;
    best.offer(in, a, std::nullopt, false);
  };
  std::fill(a.begin(), a.end(), 0);
  best.offer(in, a, std::nullopt, false);
  std::fill(a.begin(), a.end(), 1);
  best.offer(in, a, std::nullopt, false);
  for (std::size_t p = 0; p < in.n; ++p)
    for (std::size_t q = p + 1; q < in.n; ++q) {
      const double ux = in.xv(q, 0) - in.xv(p, 0), uy = in.xv(q, 1) - in.xv(p, 1);
      const double len = std::hypot(ux, uy);
      const double nx = -uy / len, ny = ux / len;
      const double mx = 0.5 * (in.xv(p, 0) + in.xv(q, 0)), my = 0.5 * (in.xv(p, 1) + in.xv(q, 1));
      double gap = std::numeric_limits<double>::infinity(), reach = len;
      for (std::size_t i = 0; i < in.n; ++i) {
        const double sx = in.xv(i, 0) - mx, sy = in.xv(i, 1) - my;
        reach = std::max(reach, std::hypot(sx, sy));
        if (i != p && i != q) gap = std::min(gap, std::abs(nx * sx + ny * sy));
      }
      if (!std::isfinite(gap)) gap = len;
      const double shift = gap / 4.0;
      const double theta = gap / (4.0 * reach);
      auto signed_dist = [&](double cx, double cy, std::size_t i) {
        return cx * (in.xv(i, 0) - mx) + cy * (in.xv(i, 1) - my);
      };
      offer_score([&](std::size_t i) { return signed_dist(nx, ny, i) + shift; });
      offer_score([&](std::size_t i) { return signed_dist(nx, ny, i) - shift; });
      for (double th : {theta, -theta}) {
        const double cx = nx * std::cos(th) - ny * std::sin(th), cy = nx * std::sin(th) + ny * std::cos(th);
        offer_score([&](std::size_t i) { return signed_dist(cx, cy, i); });
      }
    }
  return best.value;
}

inline std::vector<double> dirichlet(std::size_t n, std::mt19937_64& gen) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> w(n);
  double s = 0.0;
  for (auto& v : w) s += (v = e(gen));
  for (auto& v : w) v /= s;
  return w;
}

/// Random instance: continuous covariates, or values on a small lattice when
/// `lattice` > 0 (so split grids hit data values and ties occur).
inline Instance random_instance(std::mt19937_64& gen, std::size_t n, std::size_t d, std::size_t arms,
                                int lattice = 0) {
  Instance in;
  in.n = n;
  in.d = d;
  in.arms = arms;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t i = 0; i < n * d; ++i)
    in.x.push_back(lattice > 0 ? std::floor(u(gen) * lattice) / lattice : u(gen));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < arms; ++j) in.g.push_back(j == 0 ? 0.0 : z(gen));
  in.w = dirichlet(n, gen);
  return in;
}

}  // namespace oracle
