#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "nbpl/data.hpp"
#include "nbpl/policy.hpp"
#include "nbpl/policy_class.hpp"
#include "nbpl/random.hpp"
#include "nbpl/solve_result.hpp"

namespace nbpl::detail {

/// Keeps the candidates whose approximate welfare lies within 1e-9 of the
/// best seen so far. Sweeps accumulate sums incrementally; the survivors are
/// re-evaluated exactly before the final choice.
template <class Desc>
class Shortlist {
 public:
  struct Item {
    double v;
    double share;
    std::size_t seq;
    Desc desc;
  };

  explicit Shortlist(std::size_t cap = 16) : cap_(cap) {}

  void offer(double v, double share, const Desc& d) {
    ++seq_;
    if (v < best_ - 1e-9) return;
    best_ = std::max(best_, v);
    items_.push_back({v, share, seq_, d});
    if (items_.size() > 8 * cap_) compact();
  }

  std::vector<Item> finish() {
    compact();
    return std::move(items_);
  }

 private:
  void compact() {
    std::erase_if(items_, [&](const Item& it) { return it.v < best_ - 1e-9; });
    std::sort(items_.begin(), items_.end(), [](const Item& a, const Item& b) {
      if (a.v != b.v) return a.v > b.v;
      if (a.share != b.share) return a.share < b.share;
      return a.seq < b.seq;
    });
    if (items_.size() > cap_) items_.resize(cap_);
  }

  std::size_t cap_;
  std::size_t seq_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
  std::vector<Item> items_;
};

/// Exact (or, when flagged, heuristic) welfare maximization over binary
/// linear rules 1{beta . x >= c} restricted to a subset of coordinates.
///
///  * one coordinate: every threshold / orientation, exact;
///  * two coordinates, n <= n_exact: rotating-line sweep around every data
///    point (lines through the origin without an intercept), exact;
///  * otherwise: multi-start coordinate ascent with exact line searches.
class LinearSolver {
 public:
  struct Outcome {
    LinearRule rule;
    bool exact;
    std::size_t candidates;
  };

  LinearSolver(const ScoreTable& scores, const LinearClass& cls, CapacityRule cap,
               SolverOptions opt)
      : n_(scores.size()), d_(scores.dim()), dims_(cls.dims), intercept_(cls.include_intercept),
        cap_(cap), opt_(opt) {
    if (scores.n_arms() != 2)
      throw SolverError("linear rules are supported for binary treatment only");
    if (n_ == 0) throw SolverError("empty dataset");
    std::sort(dims_.begin(), dims_.end());
    k_ = dims_.size();
    g_ = scores.binary();
    px_.resize(n_ * k_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < k_; ++j) px_[i * k_ + j] = scores.x(i)[dims_[j]];
    if (k_ == 1) {
      order_.resize(n_);
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::stable_sort(order_.begin(), order_.end(),
                       [&](std::size_t a, std::size_t b) { return px_[a] < px_[b]; });
    }
    if (k_ == 2 && intercept_) {
      // First occurrence of each distinct point serves as a pivot.
      std::vector<std::size_t> idx(n_);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return std::pair(px_[2 * a], px_[2 * a + 1]) < std::pair(px_[2 * b], px_[2 * b + 1]);
      });
      for (std::size_t r = 0; r < n_; ++r)
        if (r == 0 || px_[2 * idx[r]] != px_[2 * idx[r - 1]] ||
            px_[2 * idx[r] + 1] != px_[2 * idx[r - 1] + 1])
          pivots_.push_back(idx[r]);
      std::sort(pivots_.begin(), pivots_.end());
    }
  }

  bool exact_for_size() const {
    return k_ == 1 || (k_ == 2 && (!intercept_ || n_ <= opt_.n_exact));
  }

  Outcome solve(std::span<const double> w) const {
    std::vector<Acc> acc(n_);
    for (std::size_t i = 0; i < n_; ++i) acc[i] = {w[i] * g_[i], w[i], 1.0};
    if (k_ == 1) return intercept_ ? threshold_1d(acc) : origin_1d(acc);
    if (k_ == 2 && (!intercept_ || n_ <= opt_.n_exact)) return sweep_2d(acc);
    return local_search(acc);
  }

 private:
  using Params = std::vector<double>;  // projected beta followed by c

  LinearRule to_rule(const Params& p) const {
    LinearRule r{std::vector<double>(d_, 0.0), p[k_], 1};
    for (std::size_t j = 0; j < k_; ++j) r.beta[dims_[j]] = p[j];
    return r;
  }

  static Params never_params(std::size_t k) {
    Params p(k + 1, 0.0);
    p[k] = 1.0;
    return p;
  }
  static Params all_params(std::size_t k) { return Params(k + 1, 0.0); }

  /// Treated-set totals of a rule, evaluated as beta . x >= c in coordinate order.
  Acc evaluate(const Params& p, std::span<const Acc> acc) const {
    Acc t;
    for (std::size_t i = 0; i < n_; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < k_; ++j) s += p[j] * px_[i * k_ + j];
      if (s >= p[k_]) t += acc[i];
    }
    return t;
  }

  template <class Desc, class Realize>
  Outcome choose(Shortlist<Desc>& list, std::span<const Acc> acc, Realize realize, bool exact,
                 std::size_t candidates) const {
    Params best;
    double best_v = 0.0, best_s = 0.0;
    bool have = false;
    for (const auto& item : list.finish()) {
      Params p = realize(item.desc);
      const Acc t = evaluate(p, acc);
      if (!cap_.feasible(t)) continue;
      if (!have || better(t.v, cap_.share(t), best_v, best_s)) {
        best = std::move(p);
        best_v = t.v;
        best_s = cap_.share(t);
        have = true;
      }
    }
    if (!have) best = never_params(k_);
    return {to_rule(best), exact, candidates};
  }

  Outcome threshold_1d(std::span<const Acc> acc) const {
    Shortlist<Params> list;
    std::size_t count = 0;
    Acc total;
    for (const auto& a : acc) total += a;
    auto offer = [&](const Acc& t, Params p) {
      ++count;
      if (cap_.feasible(t)) list.offer(t.v, cap_.share(t), p);
    };
    offer(Acc{}, never_params(1));
    offer(total, all_params(1));
    // Distinct values v_0 < ... < v_{m-1}; upper sets {x >= v_k}, lower sets {x <= v_k}.
    std::vector<double> values;
    std::vector<Acc> prefix{Acc{}};  // prefix[k] = rows with x < v_k
    for (std::size_t r = 0; r < n_;) {
      const double v = px_[order_[r]];
      Acc group;
      for (; r < n_ && px_[order_[r]] == v; ++r) group += acc[order_[r]];
      values.push_back(v);
      prefix.push_back(prefix.back() + group);
    }
    const std::size_t m = values.size();
    for (std::size_t k = 1; k < m; ++k) offer(total - prefix[k], Params{1.0, values[k]});
    for (std::size_t k = 0; k + 1 < m; ++k) offer(prefix[k + 1], Params{-1.0, -values[k]});
    return choose(list, acc, [](const Params& p) { return p; }, true, count);
  }

  Outcome origin_1d(std::span<const Acc> acc) const {
    Shortlist<Params> list;
    std::size_t count = 0;
    for (Params p : {never_params(1), all_params(1), Params{1.0, 0.0}, Params{-1.0, 0.0}}) {
      ++count;
      const Acc t = evaluate(p, acc);
      if (cap_.feasible(t)) list.offer(t.v, cap_.share(t), p);
    }
    return choose(list, acc, [](const Params& p) { return p; }, true, count);
  }

  // -------------------------------------------------------------------------
  // Two coordinates: rotating-line sweep.
  //
  // Every dichotomy cut out by a closed half-plane is attained by a line
  // through a pivot point p and a direction u where the treated set is the
  // open left side plus one of: nothing, the whole line, the forward ray
  // (with or without p), or the backward ray (with or without p). Sweeping u
  // around p keeps the open left side as a running sum.

  enum Option : int { kNone, kAll, kForwardWithPivot, kForward, kBackwardWithPivot, kBackward };

  struct LineDesc {
    double px, py, ux, uy;
    int option;
  };

  struct Entry {
    double angle;
    double dx, dy;
    std::uint32_t q;
    bool forward;
  };

  void sweep_pivot(double px, double py, bool origin, std::span<const Acc> acc,
                   Shortlist<LineDesc>& list, std::size_t& count, std::vector<Entry>& entries,
                   std::vector<std::uint32_t>& group_plus,
                   std::vector<std::uint32_t>& group_minus) const {
    entries.clear();
    Acc pivot_acc;
    for (std::size_t q = 0; q < n_; ++q) {
      const double dx = px_[2 * q] - px, dy = px_[2 * q + 1] - py;
      if (dx == 0.0 && dy == 0.0) {
        pivot_acc += acc[q];
        continue;
      }
      auto angle = [](double x, double y) {
        double a = std::atan2(y, x);
        return a < 0.0 ? a + 2.0 * M_PI : a;
      };
      entries.push_back({angle(dx, dy), dx, dy, static_cast<std::uint32_t>(q), true});
      entries.push_back({angle(-dx, -dy), -dx, -dy, static_cast<std::uint32_t>(q), false});
    }
    if (entries.empty()) return;
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.angle != b.angle) return a.angle < b.angle;
      if (a.q != b.q) return a.q < b.q;
      return a.forward && !b.forward;
    });

    // Group entries sharing a direction.
    std::vector<std::size_t> starts;
    for (std::size_t e = 0; e < entries.size(); ++e) {
      const auto& a = entries[starts.empty() ? 0 : starts.back()];
      const auto& b = entries[e];
      const bool same = !starts.empty() && a.dx * b.dy - a.dy * b.dx == 0.0 &&
                        a.dx * b.dx + a.dy * b.dy > 0.0;
      if (!same) starts.push_back(e);
      (b.forward ? group_plus : group_minus)[b.q] = static_cast<std::uint32_t>(starts.size() - 1);
    }
    const std::size_t m = starts.size();
    std::vector<Acc> plus(m), minus(m);
    for (std::size_t gi = 0; gi < m; ++gi) {
      const std::size_t end = gi + 1 < m ? starts[gi + 1] : entries.size();
      for (std::size_t e = starts[gi]; e < end; ++e)
        (entries[e].forward ? plus[gi] : minus[gi]) += acc[entries[e].q];
    }
    // A point is strictly left of direction 0 iff, moving counterclockwise,
    // its forward entry comes before its backward entry.
    Acc left;
    for (std::size_t q = 0; q < n_; ++q) {
      const double dx = px_[2 * q] - px, dy = px_[2 * q + 1] - py;
      if (dx == 0.0 && dy == 0.0) continue;
      if (group_plus[q] != 0 && group_minus[q] != 0 && group_plus[q] < group_minus[q]) left += acc[q];
    }

    for (std::size_t gi = 0; gi < m; ++gi) {
      const auto& rep = entries[starts[gi]];
      auto offer = [&](const Acc& t, int option) {
        ++count;
        if (cap_.feasible(t)) list.offer(t.v, cap_.share(t), LineDesc{px, py, rep.dx, rep.dy, option});
      };
      const Acc& fw = plus[gi];
      const Acc& bw = minus[gi];
      if (!origin) {
        offer(left, kNone);
        offer(left + fw, kForward);
        offer(left + bw, kBackward);
      }
      offer(left + fw + bw + pivot_acc, kAll);
      offer(left + fw + pivot_acc, kForwardWithPivot);
      offer(left + bw + pivot_acc, kBackwardWithPivot);
      left += minus[gi];
      if (gi + 1 < m) left -= plus[gi + 1];
    }
  }

  /// Concrete (beta, c) realizing a swept candidate: the line is tilted by a
  /// small epsilon along u and shifted by gamma, both below the smallest
  /// off-line distance so off-line points keep their side.
  Params realize_line(const LineDesc& l, bool origin) const {
    const double ux = l.ux, uy = l.uy;
    double f_min = std::numeric_limits<double>::infinity();
    double s_min = std::numeric_limits<double>::infinity();
    double s_max = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const double dx = px_[2 * i] - l.px, dy = px_[2 * i + 1] - l.py;
      const double f = ux * dy - uy * dx;
      const double s = ux * dx + uy * dy;
      s_max = std::max(s_max, std::abs(s));
      if (f != 0.0) {
        f_min = std::min(f_min, std::abs(f));
      } else if (dx != 0.0 || dy != 0.0) {
        s_min = std::min(s_min, std::abs(s));
      }
    }
    if (!std::isfinite(f_min)) f_min = 1.0;
    if (!std::isfinite(s_min)) s_min = std::max(s_max, 1.0);
    const double e = f_min / (4.0 * (s_max + s_min));
    double eps = 0.0, gamma = 0.0;
    switch (l.option) {
      case kNone: gamma = -f_min / 2; break;
      case kAll: gamma = origin ? 0.0 : f_min / 2; break;
      case kForwardWithPivot: eps = e; gamma = origin ? 0.0 : e * s_min / 2; break;
      case kForward: eps = e; gamma = -e * s_min / 2; break;
      case kBackwardWithPivot: eps = -e; gamma = origin ? 0.0 : e * s_min / 2; break;
      case kBackward: eps = -e; gamma = -e * s_min / 2; break;
    }
    // g(x) = nu . (x - p) + eps * u . (x - p) + gamma with nu = (-uy, ux).
    const double b0 = -uy + eps * ux, b1 = ux + eps * uy;
    const double c = origin ? 0.0 : b0 * l.px + b1 * l.py - gamma;
    return Params{b0, b1, c};
  }

  Outcome sweep_2d(std::span<const Acc> acc) const {
    Shortlist<LineDesc> list;
    std::size_t count = 0;
    Acc total;
    for (const auto& a : acc) total += a;
    // The degenerate rules first so they win exact ties.
    for (const Acc& t : {Acc{}, total}) {
      ++count;
      if (cap_.feasible(t))
        list.offer(t.v, cap_.share(t), LineDesc{0, 0, 0, 0, t.c == 0.0 ? -1 : -2});
    }
    std::vector<Entry> entries;
    entries.reserve(2 * n_);
    std::vector<std::uint32_t> gp(n_), gm(n_);
    const bool origin = !intercept_;
    if (origin) {
      sweep_pivot(0.0, 0.0, true, acc, list, count, entries, gp, gm);
    } else {
      for (auto p : pivots_)
        sweep_pivot(px_[2 * p], px_[2 * p + 1], false, acc, list, count, entries, gp, gm);
    }
    auto realize = [&](const LineDesc& l) {
      if (l.option == -1) return never_params(2);
      if (l.option == -2) return all_params(2);
      return realize_line(l, origin);
    };
    return choose(list, acc, realize, true, count);
  }

  // -------------------------------------------------------------------------
  // Local search: exact line searches over one parameter at a time.

  /// Best t for the family "treated iff a_i + t * b_i >= 0", by approximate
  /// running sums. Returns false when no feasible t exists.
  bool line_search(std::span<const double> a, std::span<const double> b, std::span<const Acc> acc,
                   double& t_out, std::size_t& count) const {
    struct Event {
      double r;
      std::uint32_t i;
      bool enter;
    };
    std::vector<Event> events;
    events.reserve(n_);
    Acc cur;
    for (std::size_t i = 0; i < n_; ++i) {
      if (b[i] == 0.0) {
        if (a[i] >= 0.0) cur += acc[i];
      } else if (b[i] > 0.0) {
        events.push_back({-a[i] / b[i], static_cast<std::uint32_t>(i), true});
      } else {
        cur += acc[i];
        events.push_back({-a[i] / b[i], static_cast<std::uint32_t>(i), false});
      }
    }
    std::sort(events.begin(), events.end(), [](const Event& x, const Event& y) {
      return x.r < y.r || (x.r == y.r && x.i < y.i);
    });
    bool have = false;
    double best_v = 0.0, best_s = 0.0;
    auto consider = [&](double t) {
      ++count;
      if (!std::isfinite(t) || !cap_.feasible(cur)) return;
      const double s = cap_.share(cur);
      if (!have || better(cur.v, s, best_v, best_s)) {
        have = true;
        best_v = cur.v;
        best_s = s;
        t_out = t;
      }
    };
    if (events.empty()) {
      consider(0.0);
      return have;
    }
    consider(events.front().r - (std::abs(events.front().r) + 1.0));
    for (std::size_t e = 0; e < events.size();) {
      const double r = events[e].r;
      std::size_t end = e;
      for (; end < events.size() && events[end].r == r; ++end)
        if (events[end].enter) cur += acc[events[end].i];
      consider(r);
      for (std::size_t k = e; k < end; ++k)
        if (!events[k].enter) cur -= acc[events[k].i];
      consider(end < events.size() ? r + (events[end].r - r) / 2 : r + (std::abs(r) + 1.0));
      e = end;
    }
    return have;
  }

  Outcome local_search(std::span<const Acc> acc) const {
    std::size_t count = 0;
    Params best = never_params(k_);
    Acc best_t = evaluate(best, acc);
    auto consider = [&](const Params& p, const Acc& t) {
      if (cap_.feasible(t) && better(t.v, cap_.share(t), best_t.v, cap_.share(best_t))) {
        best = p;
        best_t = t;
      }
    };
    consider(all_params(k_), evaluate(all_params(k_), acc));
    count += 2;

    std::vector<Params> starts;
    for (std::size_t j = 0; j < k_; ++j)
      for (double sgn : {1.0, -1.0}) {
        Params p(k_ + 1, 0.0);
        p[j] = sgn;
        starts.push_back(p);
      }
    Rng rng(opt_.heuristic_seed);
    for (std::size_t s = 0; s < opt_.heuristic_starts; ++s) {
      Params p(k_ + 1, 0.0);
      for (std::size_t j = 0; j < k_; ++j) p[j] = rng.normal();
      starts.push_back(p);
    }

    std::vector<double> a(n_), b(n_);
    for (Params p : starts) {
      auto proj = [&](std::size_t i, std::size_t skip) {
        double s = 0.0;
        for (std::size_t j = 0; j < k_; ++j)
          if (j != skip) s += p[j] * px_[i * k_ + j];
        return s;
      };
      // Re-optimize one parameter; keep the move only if the exact value improves.
      auto refine = [&](std::size_t j, Acc& cur) {
        for (std::size_t i = 0; i < n_; ++i) {
          if (j == k_) {
            a[i] = proj(i, k_);
            b[i] = -1.0;
          } else {
            a[i] = proj(i, j) - p[k_];
            b[i] = px_[i * k_ + j];
          }
        }
        double t = 0.0;
        if (!line_search(a, b, acc, t, count)) return false;
        Params trial = p;
        trial[j] = t;
        const Acc tt = evaluate(trial, acc);
        if (cap_.feasible(tt) &&
            (!cap_.feasible(cur) || better(tt.v, cap_.share(tt), cur.v, cap_.share(cur)))) {
          p = std::move(trial);
          cur = tt;
          return true;
        }
        return false;
      };
      Acc cur = evaluate(p, acc);
      if (intercept_) refine(k_, cur);
      for (std::size_t round = 0; round < opt_.heuristic_rounds; ++round) {
        bool improved = false;
        for (std::size_t j = 0; j < k_; ++j) improved |= refine(j, cur);
        if (intercept_) improved |= refine(k_, cur);
        if (!improved) break;
      }
      consider(p, cur);
    }
    return {to_rule(best), false, count};
  }

  std::size_t n_, d_, k_ = 0;
  std::vector<std::size_t> dims_;
  bool intercept_;
  CapacityRule cap_;
  SolverOptions opt_;
  std::vector<double> g_;
  std::vector<double> px_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> pivots_;
};

}  // namespace nbpl::detail
