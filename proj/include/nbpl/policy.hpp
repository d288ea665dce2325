#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nbpl/data.hpp"
#include "nbpl/error.hpp"

namespace nbpl {

/// Treats (assigns `treat_arm`) iff beta . x >= c. The boundary is included,
/// so beta = 0, c = 0 treats everyone.
struct LinearRule {
  std::vector<double> beta;
  double c = 0.0;
  int treat_arm = 1;

  bool treats(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < beta.size(); ++k) s += beta[k] * x[k];
    return s >= c;
  }

  friend bool operator==(const LinearRule&, const LinearRule&) = default;
};

/// Axis-aligned decision tree. Internal nodes send x left iff
/// x[axis] <= threshold; leaves carry an arm label.
class TreeRule {
 public:
  struct Node {
    int axis = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int arm = 0;

    bool is_leaf() const noexcept { return axis < 0; }
    friend bool operator==(const Node&, const Node&) = default;
  };

  TreeRule() : nodes_{Node{}} {}

  static TreeRule leaf(int arm) {
    TreeRule t;
    t.nodes_[0].arm = arm;
    return t;
  }

  static TreeRule split(int axis, double threshold, const TreeRule& left, const TreeRule& right) {
    TreeRule t;
    t.nodes_[0] = Node{axis, threshold, 1, 0, 0};
    t.append(left);
    t.nodes_[0].right = static_cast<int>(t.nodes_.size());
    t.append(right);
    return t;
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& root() const { return nodes_[0]; }

  int assign(std::span<const double> x) const {
    int k = 0;
    while (!nodes_[k].is_leaf())
      k = x[nodes_[k].axis] <= nodes_[k].threshold ? nodes_[k].left : nodes_[k].right;
    return nodes_[k].arm;
  }

  int depth() const { return depth_of(0); }

  /// Largest axis index used, or -1 for a single leaf.
  int max_axis() const {
    int m = -1;
    for (const auto& nd : nodes_)
      if (!nd.is_leaf()) m = std::max(m, nd.axis);
    return m;
  }

  /// Collapses every internal node whose two children are leaves with the
  /// same label, repeatedly, so equivalent trees share one representation.
  TreeRule pruned() const { return rebuild(0); }

  TreeRule subtree(int k) const {
    const Node& nd = nodes_[k];
    if (nd.is_leaf()) return leaf(nd.arm);
    return split(nd.axis, nd.threshold, subtree(nd.left), subtree(nd.right));
  }

  friend bool operator==(const TreeRule&, const TreeRule&) = default;

 private:
  void append(const TreeRule& sub) {
    const int offset = static_cast<int>(nodes_.size());
    for (Node nd : sub.nodes_) {
      if (!nd.is_leaf()) {
        nd.left += offset;
        nd.right += offset;
      }
      nodes_.push_back(nd);
    }
  }

  int depth_of(int k) const {
    const Node& nd = nodes_[k];
    if (nd.is_leaf()) return 0;
    return 1 + std::max(depth_of(nd.left), depth_of(nd.right));
  }

  TreeRule rebuild(int k) const {
    const Node& nd = nodes_[k];
    if (nd.is_leaf()) return leaf(nd.arm);
    TreeRule l = rebuild(nd.left), r = rebuild(nd.right);
    if (l.nodes_.size() == 1 && r.nodes_.size() == 1 && l.nodes_[0].arm == r.nodes_[0].arm) return l;
    return split(nd.axis, nd.threshold, l, r);
  }

  std::vector<Node> nodes_;
};

using Policy = std::variant<LinearRule, TreeRule>;

inline Policy never_treat(std::size_t d) { return LinearRule{std::vector<double>(d, 0.0), 1.0, 1}; }
inline Policy treat_all(std::size_t d, int arm = 1) {
  return LinearRule{std::vector<double>(d, 0.0), 0.0, arm};
}

/// Number of covariates the policy reads (lower bound for trees).
inline std::size_t policy_dim(const Policy& p) {
  if (const auto* lin = std::get_if<LinearRule>(&p)) return lin->beta.size();
  return static_cast<std::size_t>(std::get<TreeRule>(p).max_axis() + 1);
}

namespace detail {

inline int assign_unchecked(const Policy& p, std::span<const double> x) {
  if (const auto* lin = std::get_if<LinearRule>(&p)) return lin->treats(x) ? lin->treat_arm : 0;
  return std::get<TreeRule>(p).assign(x);
}

inline void check_dims(const Policy& p, std::size_t d) {
  if (const auto* lin = std::get_if<LinearRule>(&p)) {
    if (lin->beta.size() != d)
      throw std::invalid_argument("linear rule has " + std::to_string(lin->beta.size()) +
                                  " coefficients for " + std::to_string(d) + " covariates");
  } else if (policy_dim(p) > d) {
    throw std::invalid_argument("tree splits on a coordinate beyond the covariate dimension");
  }
}

inline void check_weights(std::span<const double> w, std::size_t n) {
  if (w.size() != n)
    throw std::invalid_argument("weight vector has length " + std::to_string(w.size()) +
                                ", expected " + std::to_string(n));
  double sum = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw std::invalid_argument("weights must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1");
}

inline double welfare_unchecked(const ScoreTable& s, std::span<const double> w, const Policy& p) {
  double v = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) v += w[i] * s.contrast(i, assign_unchecked(p, s.x(i)));
  return v;
}

}  // namespace detail

/// Arm assigned to covariate vector x.
inline int assign(const Policy& p, std::span<const double> x) {
  detail::check_dims(p, x.size());
  return detail::assign_unchecked(p, x);
}

/// sum_i w_i * contrast(i, assign(p, x_i)): welfare relative to treating nobody.
inline double weighted_welfare(const ScoreTable& scores, std::span<const double> w, const Policy& p) {
  detail::check_weights(w, scores.size());
  detail::check_dims(p, scores.dim());
  return detail::welfare_unchecked(scores, w, p);
}

/// sum_i w_i * 1{assign(p, x_i) = arm} over a row-major covariate matrix.
inline double weighted_share(std::span<const double> w, std::span<const double> xs, std::size_t d,
                             const Policy& p, int arm) {
  if (d == 0 || xs.size() % d != 0) throw std::invalid_argument("bad covariate matrix");
  const std::size_t n = xs.size() / d;
  detail::check_weights(w, n);
  detail::check_dims(p, d);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (detail::assign_unchecked(p, xs.subspan(i * d, d)) == arm) s += w[i];
  return s;
}

inline double weighted_share(std::span<const double> w, const ScoreTable& scores, const Policy& p,
                             int arm) {
  return weighted_share(w, scores.covariates(), scores.dim(), p, arm);
}

/// Per-arm weighted shares; entries sum to one.
inline std::vector<double> weighted_shares(std::span<const double> w, const ScoreTable& scores,
                                           const Policy& p) {
  std::vector<double> shares(scores.n_arms(), 0.0);
  for (std::size_t i = 0; i < scores.size(); ++i)
    shares[detail::assign_unchecked(p, scores.x(i))] += w[i];
  return shares;
}

// ---------------------------------------------------------------------------
// JSON: linear rules as {"beta": [...], "c": c} (plus "arm" when the treated
// arm is not 1); trees as nested {"axis", "threshold", "left", "right"} with
// leaves {"arm"}.

inline nlohmann::json tree_node_json(const TreeRule& t, int k) {
  const auto& nd = t.nodes()[k];
  if (nd.is_leaf()) return {{"arm", nd.arm}};
  return {{"axis", nd.axis},
          {"threshold", nd.threshold},
          {"left", tree_node_json(t, nd.left)},
          {"right", tree_node_json(t, nd.right)}};
}

inline nlohmann::json policy_to_json(const Policy& p) {
  if (const auto* lin = std::get_if<LinearRule>(&p)) {
    nlohmann::json j{{"beta", lin->beta}, {"c", lin->c}};
    if (lin->treat_arm != 1) j["arm"] = lin->treat_arm;
    return j;
  }
  return tree_node_json(std::get<TreeRule>(p), 0);
}

inline TreeRule tree_from_json(const nlohmann::json& j) {
  if (j.contains("axis")) {
    const int axis = j.at("axis").get<int>();
    if (axis < 0) throw std::invalid_argument("negative tree axis");
    return TreeRule::split(axis, j.at("threshold").get<double>(), tree_from_json(j.at("left")),
                           tree_from_json(j.at("right")));
  }
  return TreeRule::leaf(j.at("arm").get<int>());
}

inline Policy policy_from_json(const nlohmann::json& j) {
  if (j.contains("beta"))
    return LinearRule{j.at("beta").get<std::vector<double>>(), j.at("c").get<double>(),
                      j.value("arm", 1)};
  if (j.contains("axis") || j.contains("arm")) return tree_from_json(j);
  throw std::invalid_argument("unrecognized policy JSON");
}

}  // namespace nbpl
