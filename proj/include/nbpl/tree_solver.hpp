#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "nbpl/data.hpp"
#include "nbpl/policy.hpp"
#include "nbpl/policy_class.hpp"
#include "nbpl/solve_result.hpp"

namespace nbpl::detail {

/// Exact welfare maximization over trees of depth <= 2 whose thresholds come
/// from a fixed grid, for any number of arms.
///
/// Every point is binned once per coordinate (bin b holds x with
/// grid[b-1] < x <= grid[b]). For each root axis the points are moved from
/// the right child to the left child in threshold order, keeping per-bin
/// histograms of both children on every coordinate; each child split is then
/// a prefix over bins. Without a capacity limit each leaf takes its best arm
/// independently. With a limit, each child contributes its Pareto front of
/// (treated share, welfare) over all splits and labelings, and the two
/// fronts are merged per root.
class TreeSolver {
 public:
  struct Outcome {
    TreeRule rule;
    bool exact;
    std::size_t candidates;
  };

  TreeSolver(const ScoreTable& scores, const TreeClass& cls, CapacityRule cap)
      : n_(scores.size()), arms_(scores.n_arms()), depth_(cls.max_depth), grid_(cls.split_grid),
        cap_(cap) {
    if (depth_ > 2) throw SolverError("trees deeper than 2 are not supported");
    if (n_ == 0) throw SolverError("empty dataset");
    if (grid_.size() > scores.dim()) throw SolverError("split grid coordinate out of range");
    stride_ = arms_ + 2;
    contrast_.resize(n_ * arms_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < arms_; ++j) contrast_[i * arms_ + j] = scores.contrast(i, j);
    bins_.resize(grid_.size());
    for (std::size_t c = 0; c < grid_.size(); ++c) {
      if (grid_[c].empty()) continue;
      coords_.push_back(c);
      bins_[c].resize(n_);
      for (std::size_t i = 0; i < n_; ++i) {
        const double x = scores.x(i)[c];
        bins_[c][i] = static_cast<std::uint32_t>(
            std::lower_bound(grid_[c].begin(), grid_[c].end(), x) - grid_[c].begin());
      }
    }
    order_.resize(grid_.size());
    for (auto c : coords_) {
      order_[c].resize(n_);
      std::iota(order_[c].begin(), order_[c].end(), std::size_t{0});
      std::stable_sort(order_[c].begin(), order_[c].end(),
                       [&](std::size_t x, std::size_t y) { return bins_[c][x] < bins_[c][y]; });
    }
  }

  Outcome solve(std::span<const double> w) const {
    std::vector<double> pt(n_ * stride_);
    for (std::size_t i = 0; i < n_; ++i) {
      double* row = pt.data() + i * stride_;
      for (std::size_t j = 0; j < arms_; ++j) row[j] = w[i] * contrast_[i * arms_ + j];
      row[arms_] = w[i];
      row[arms_ + 1] = 1.0;
    }
    return cap_.q ? solve_capacity(pt) : solve_free(pt);
  }

 private:
  using Stats = std::vector<double>;  // per-arm welfare, weight, count

  double basis_share(const double* s) const {
    return cap_.basis == CapacityBasis::uniform ? s[arms_ + 1] / cap_.n : s[arms_];
  }

  struct Leaf {
    int arm;
    double v;
    double share;
  };

  /// Best arm for one leaf: ties prefer control, then the lower arm index.
  Leaf best_leaf(const double* s) const {
    Leaf best{0, s[0], 0.0};
    const double share = basis_share(s);
    for (std::size_t j = 1; j < arms_; ++j)
      if (better(s[j], share, best.v, best.share)) best = {static_cast<int>(j), s[j], share};
    return best;
  }

  /// A child of the root: a leaf (axis < 0) or one split with two labels.
  struct Child {
    int axis = -1;
    std::uint32_t bin = 0;
    int left_arm = 0;
    int right_arm = 0;
    double v = 0.0;
    double share = 0.0;
  };

  TreeRule child_rule(const Child& c) const {
    if (c.axis < 0) return TreeRule::leaf(c.left_arm);
    return TreeRule::split(c.axis, grid_[c.axis][c.bin], TreeRule::leaf(c.left_arm),
                           TreeRule::leaf(c.right_arm));
  }

  /// Per-coordinate histograms of one child, indexed [coordinate][bin * stride + field].
  struct Histograms {
    std::vector<Stats> by_coord;
    Stats total;
  };

  Histograms empty_histograms() const {
    Histograms h;
    h.by_coord.resize(grid_.size());
    for (auto c : coords_) h.by_coord[c].assign((grid_[c].size() + 1) * stride_, 0.0);
    h.total.assign(stride_, 0.0);
    return h;
  }

  void add_point(Histograms& h, const double* row, std::size_t i, double sign) const {
    for (std::size_t f = 0; f < stride_; ++f) h.total[f] += sign * row[f];
    for (auto c : coords_) {
      double* cell = h.by_coord[c].data() + bins_[c][i] * stride_;
      for (std::size_t f = 0; f < stride_; ++f) cell[f] += sign * row[f];
    }
  }

  /// Calls fn(axis, bin, left_stats, right_stats) for every grid split of a child.
  template <class Fn>
  void for_each_split(const Histograms& h, Fn&& fn) const {
    Stats left(stride_), right(stride_);
    for (auto c : coords_) {
      std::fill(left.begin(), left.end(), 0.0);
      const auto& hist = h.by_coord[c];
      for (std::size_t m = 0; m < grid_[c].size(); ++m) {
        for (std::size_t f = 0; f < stride_; ++f) left[f] += hist[m * stride_ + f];
        for (std::size_t f = 0; f < stride_; ++f) right[f] = h.total[f] - left[f];
        fn(static_cast<int>(c), static_cast<std::uint32_t>(m), left.data(), right.data());
      }
    }
  }

  /// Enumerates roots in (axis, threshold) order; fn(axis, bin, left, right).
  template <class Fn>
  void for_each_root(std::span<const double> pt, Fn&& fn) const {
    for (auto a : coords_) {
      Histograms left = empty_histograms(), right = empty_histograms();
      const auto& order = order_[a];
      for (std::size_t i = 0; i < n_; ++i) add_point(right, pt.data() + i * stride_, i, 1.0);
      std::size_t r = 0;
      for (std::size_t k = 0; k < grid_[a].size(); ++k) {
        for (; r < n_ && bins_[a][order[r]] <= k; ++r) {
          const double* row = pt.data() + order[r] * stride_;
          add_point(left, row, order[r], 1.0);
          add_point(right, row, order[r], -1.0);
        }
        fn(static_cast<int>(a), static_cast<std::uint32_t>(k), left, right);
      }
    }
  }

  Stats totals(std::span<const double> pt) const {
    Stats t(stride_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t f = 0; f < stride_; ++f) t[f] += pt[i * stride_ + f];
    return t;
  }

  // -------------------------------------------------------------------------
  // No capacity limit.

  Child best_child(const Histograms& h, std::size_t& count) const {
    const Leaf leaf = best_leaf(h.total.data());
    Child best{-1, 0, leaf.arm, leaf.arm, leaf.v, leaf.share};
    ++count;
    if (depth_ < 2) return best;
    for_each_split(h, [&](int axis, std::uint32_t bin, const double* l, const double* r) {
      ++count;
      const Leaf a = best_leaf(l), b = best_leaf(r);
      if (better(a.v + b.v, a.share + b.share, best.v, best.share))
        best = {axis, bin, a.arm, b.arm, a.v + b.v, a.share + b.share};
    });
    return best;
  }

  Outcome solve_free(std::span<const double> pt) const {
    std::size_t count = 1;
    const Leaf root_leaf = best_leaf(totals(pt).data());
    TreeRule best_rule = TreeRule::leaf(root_leaf.arm);
    double best_v = root_leaf.v, best_s = root_leaf.share;
    if (depth_ >= 1) {
      for_each_root(pt, [&](int a, std::uint32_t k, const Histograms& l, const Histograms& r) {
        const Child cl = best_child(l, count), cr = best_child(r, count);
        if (better(cl.v + cr.v, cl.share + cr.share, best_v, best_s)) {
          best_v = cl.v + cr.v;
          best_s = cl.share + cr.share;
          best_rule = TreeRule::split(a, grid_[a][k], child_rule(cl), child_rule(cr));
        }
      });
    }
    return {best_rule.pruned(), true, count};
  }

  // -------------------------------------------------------------------------
  // Capacity limit: Pareto fronts of (share, welfare).

  /// Options sorted by share with strictly increasing welfare.
  static std::vector<Child> pareto(std::vector<Child> opts) {
    std::stable_sort(opts.begin(), opts.end(), [](const Child& a, const Child& b) {
      if (a.share != b.share) return a.share < b.share;
      return a.v > b.v;
    });
    std::vector<Child> front;
    for (const auto& o : opts)
      if (front.empty() || o.v > front.back().v + kTieTolerance) front.push_back(o);
    return front;
  }

  void leaf_options(const double* s, std::vector<Child>& out) const {
    const double share = basis_share(s);
    for (std::size_t j = 0; j < arms_; ++j)
      out.push_back({-1, 0, static_cast<int>(j), static_cast<int>(j), s[j], j == 0 ? 0.0 : share});
  }

  std::vector<Child> child_front(const Histograms& h, std::size_t& count) const {
    std::vector<Child> opts;
    leaf_options(h.total.data(), opts);
    if (depth_ >= 2) {
      for_each_split(h, [&](int axis, std::uint32_t bin, const double* l, const double* r) {
        const double sl = basis_share(l), sr = basis_share(r);
        for (std::size_t jl = 0; jl < arms_; ++jl)
          for (std::size_t jr = 0; jr < arms_; ++jr)
            opts.push_back({axis, bin, static_cast<int>(jl), static_cast<int>(jr), l[jl] + r[jr],
                            (jl == 0 ? 0.0 : sl) + (jr == 0 ? 0.0 : sr)});
      });
    }
    count += opts.size();
    return pareto(std::move(opts));
  }

  Outcome solve_capacity(std::span<const double> pt) const {
    std::size_t count = 0;
    bool have = false;
    double best_v = 0.0, best_s = 0.0;
    TreeRule best_rule = TreeRule::leaf(0);
    auto consider = [&](double v, double s, auto make_rule) {
      if (!cap_.feasible(s)) return;
      if (!have || better(v, s, best_v, best_s)) {
        have = true;
        best_v = v;
        best_s = s;
        best_rule = make_rule();
      }
    };
    std::vector<Child> root_leaves;
    const Stats all = totals(pt);
    leaf_options(all.data(), root_leaves);
    count += root_leaves.size();
    for (const auto& o : root_leaves)
      consider(o.v, o.share, [&] { return TreeRule::leaf(o.left_arm); });

    if (depth_ >= 1) {
      for_each_root(pt, [&](int a, std::uint32_t k, const Histograms& l, const Histograms& r) {
        const auto fl = child_front(l, count), fr = child_front(r, count);
        for (const auto& cl : fl) {
          // Largest-welfare right option with share <= q - share(left).
          const double room = *cap_.q + kTieTolerance - cl.share;
          auto it = std::upper_bound(fr.begin(), fr.end(), room,
                                     [](double x, const Child& c) { return x < c.share; });
          while (it != fr.begin() && !cap_.feasible(cl.share + std::prev(it)->share)) --it;
          if (it == fr.begin()) continue;
          const Child& cr = *std::prev(it);
          consider(cl.v + cr.v, cl.share + cr.share, [&] {
            return TreeRule::split(a, grid_[a][k], child_rule(cl), child_rule(cr));
          });
        }
      });
    }
    return {best_rule.pruned(), true, count};
  }

  std::size_t n_, arms_;
  int depth_;
  std::vector<std::vector<double>> grid_;
  CapacityRule cap_;
  std::size_t stride_ = 0;
  std::vector<double> contrast_;
  std::vector<std::size_t> coords_;
  std::vector<std::vector<std::uint32_t>> bins_;
  std::vector<std::vector<std::size_t>> order_;
};

}  // namespace nbpl::detail
