#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "nbpl/data.hpp"
#include "nbpl/linear_solver.hpp"
#include "nbpl/policy.hpp"
#include "nbpl/policy_class.hpp"
#include "nbpl/solve_result.hpp"
#include "nbpl/tree_solver.hpp"

namespace nbpl {

namespace detail {

/// Exhaustive scan over an explicit list of policies. Assignments are
/// computed once; each solve is one pass per policy.
class FiniteSolver {
 public:
  FiniteSolver(const ScoreTable& scores, const FiniteClass& cls, CapacityRule cap)
      : n_(scores.size()), arms_(scores.n_arms()), policies_(cls.policies), cap_(cap) {
    if (policies_.empty()) throw SolverError("finite class is empty");
    contrast_.resize(n_ * arms_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < arms_; ++j) contrast_[i * arms_ + j] = scores.contrast(i, j);
    assigned_.resize(policies_.size() * n_);
    for (std::size_t k = 0; k < policies_.size(); ++k) {
      check_dims(policies_[k], scores.dim());
      for (std::size_t i = 0; i < n_; ++i) {
        const int a = assign_unchecked(policies_[k], scores.x(i));
        if (a < 0 || static_cast<std::size_t>(a) >= arms_)
          throw SolverError("finite-class policy assigns an arm outside the data");
        assigned_[k * n_ + i] = static_cast<unsigned char>(a);
      }
    }
  }

  const std::vector<Policy>& policies() const noexcept { return policies_; }

  /// Welfare and basis share of member k.
  Acc evaluate(std::size_t k, std::span<const double> w) const {
    Acc t;
    const unsigned char* a = assigned_.data() + k * n_;
    for (std::size_t i = 0; i < n_; ++i) {
      t.v += w[i] * contrast_[i * arms_ + a[i]];
      if (a[i] != 0) {
        t.w += w[i];
        t.c += 1.0;
      }
    }
    return t;
  }

  /// Weighted welfare of every member, in class order.
  std::vector<double> values(std::span<const double> w) const {
    std::vector<double> v(policies_.size());
    for (std::size_t k = 0; k < policies_.size(); ++k) v[k] = evaluate(k, w).v;
    return v;
  }

  struct Outcome {
    Policy policy;
    bool exact;
    std::size_t candidates;
  };

  Outcome solve(std::span<const double> w, std::size_t d) const {
    bool have = false;
    double best_v = 0.0, best_s = 0.0;
    std::size_t best = 0;
    for (std::size_t k = 0; k < policies_.size(); ++k) {
      const Acc t = evaluate(k, w);
      if (!cap_.feasible(t)) continue;
      if (!have || better(t.v, cap_.share(t), best_v, best_s)) {
        have = true;
        best = k;
        best_v = t.v;
        best_s = cap_.share(t);
      }
    }
    // Treating nobody always satisfies the capacity limit.
    if (!have) return {never_treat(d), true, policies_.size()};
    return {policies_[best], true, policies_.size()};
  }

 private:
  std::size_t n_, arms_;
  std::vector<Policy> policies_;
  CapacityRule cap_;
  std::vector<double> contrast_;
  std::vector<unsigned char> assigned_;
};

}  // namespace detail

/// A policy class prepared against one score table. Preparation (sorting,
/// binning, assignment tables) happens once; solve() can then be called for
/// many weight vectors, concurrently, since it does not mutate the solver.
class ClassSolver {
 public:
  ClassSolver(const ScoreTable& scores, PolicyClassSpec spec, SolverOptions opt = {})
      : scores_(&scores), spec_(std::move(spec)) {
    try {
      spec_.validate(scores.dim());
    } catch (const ConfigError& e) {
      throw SolverError(e.what());
    }
    const detail::CapacityRule cap{spec_.capacity, spec_.capacity_basis,
                                   static_cast<double>(scores.size())};
    if (scores.size() == 0) throw SolverError("empty dataset");
    if (const auto* lin = std::get_if<LinearClass>(&spec_.kind)) {
      impl_.emplace<detail::LinearSolver>(scores, *lin, cap, opt);
    } else if (const auto* tree = std::get_if<TreeClass>(&spec_.kind)) {
      impl_.emplace<detail::TreeSolver>(scores, *tree, cap);
    } else {
      impl_.emplace<detail::FiniteSolver>(scores, std::get<FiniteClass>(spec_.kind), cap);
    }
  }

  const PolicyClassSpec& spec() const noexcept { return spec_; }
  const ScoreTable& scores() const noexcept { return *scores_; }

  /// The finite-class scanner, or nullptr for other kinds.
  const detail::FiniteSolver* finite() const { return std::get_if<detail::FiniteSolver>(&impl_); }

  SolveResult solve(std::span<const double> w) const {
    try {
      detail::check_weights(w, scores_->size());
    } catch (const std::invalid_argument& e) {
      throw SolverError(e.what());
    }
    return solve_unchecked(w);
  }

  /// solve() without the weight validation pass (weights from draw_bb_weights).
  SolveResult solve_unchecked(std::span<const double> w) const {
    SolveResult r;
    std::visit(
        [&](const auto& impl) {
          using T = std::decay_t<decltype(impl)>;
          if constexpr (std::is_same_v<T, std::monostate>) {
            throw SolverError("solver not initialized");
          } else if constexpr (std::is_same_v<T, detail::FiniteSolver>) {
            auto o = impl.solve(w, scores_->dim());
            r.policy = std::move(o.policy);
            r.exact = o.exact;
            r.candidates_evaluated = o.candidates;
          } else {
            auto o = impl.solve(w);
            r.policy = std::move(o.rule);
            r.exact = o.exact;
            r.candidates_evaluated = o.candidates;
          }
        },
        impl_);
    r.value = detail::welfare_unchecked(*scores_, w, r.policy);
    r.shares = weighted_shares(w, *scores_, r.policy);
    return r;
  }

 private:
  const ScoreTable* scores_;
  PolicyClassSpec spec_;
  std::variant<std::monostate, detail::LinearSolver, detail::TreeSolver, detail::FiniteSolver> impl_;
};

inline SolveResult solve_class(const ScoreTable& scores, std::span<const double> w,
                               const PolicyClassSpec& spec, SolverOptions opt = {}) {
  return ClassSolver(scores, spec, opt).solve(w);
}

inline SolveResult solve_linear(const ScoreTable& scores, std::span<const double> w,
                                const PolicyClassSpec& spec, SolverOptions opt = {}) {
  if (!std::holds_alternative<LinearClass>(spec.kind)) throw SolverError("not a linear class");
  return solve_class(scores, w, spec, opt);
}

inline SolveResult solve_tree(const ScoreTable& scores, std::span<const double> w,
                              const PolicyClassSpec& spec) {
  if (!std::holds_alternative<TreeClass>(spec.kind)) throw SolverError("not a tree class");
  return solve_class(scores, w, spec);
}

/// Share of a policy on the class's capacity basis, recomputed from scratch.
inline double capacity_share(const ScoreTable& scores, std::span<const double> w,
                             const PolicyClassSpec& spec, const Policy& p) {
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (detail::assign_unchecked(p, scores.x(i)) != 0)
      s += spec.capacity_basis == CapacityBasis::uniform ? 1.0 / static_cast<double>(scores.size())
                                                          : w[i];
  return s;
}

}  // namespace nbpl
