#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nbpl/error.hpp"
#include "nbpl/policy.hpp"

namespace nbpl {

/// Which share a capacity limit constrains: the unweighted sample share
/// (count / n) or the share under the solve weights.
enum class CapacityBasis { uniform, weighted };

/// Rules 1{beta . x >= c} with beta supported on `dims`. Without an intercept
/// the threshold is fixed at c = 0.
struct LinearClass {
  std::vector<std::size_t> dims;
  bool include_intercept = true;
};

/// Trees of depth <= max_depth whose thresholds come from split_grid.
/// split_grid[k] lists the candidate thresholds on coordinate k (strictly
/// increasing); an empty list means coordinate k is never split on.
struct TreeClass {
  int max_depth = 2;
  std::vector<std::vector<double>> split_grid;
};

struct FiniteClass {
  std::vector<Policy> policies;
};

struct PolicyClassSpec {
  std::variant<LinearClass, TreeClass, FiniteClass> kind;
  std::optional<double> capacity;
  CapacityBasis capacity_basis = CapacityBasis::uniform;

  void validate(std::size_t d) const {
    if (capacity && !(*capacity > 0.0 && *capacity <= 1.0))
      throw ConfigError("capacity must lie in (0, 1]");
    if (const auto* lin = std::get_if<LinearClass>(&kind)) {
      if (lin->dims.empty()) throw ConfigError("linear class needs at least one coordinate");
      std::set<std::size_t> seen;
      for (auto k : lin->dims) {
        if (k >= d) throw ConfigError("linear class coordinate " + std::to_string(k) + " out of range");
        if (!seen.insert(k).second) throw ConfigError("linear class lists a coordinate twice");
      }
    } else if (const auto* tree = std::get_if<TreeClass>(&kind)) {
      if (tree->max_depth < 0) throw ConfigError("negative tree depth");
      if (tree->split_grid.size() > d) throw ConfigError("split grid has more coordinates than the data");
      for (const auto& g : tree->split_grid)
        for (std::size_t k = 1; k < g.size(); ++k)
          if (!(g[k - 1] < g[k])) throw ConfigError("split grid thresholds must be strictly increasing");
    } else {
      const auto& fin = std::get<FiniteClass>(kind);
      if (fin.policies.empty()) throw ConfigError("finite class is empty");
      for (const auto& p : fin.policies) {
        if (const auto* lr = std::get_if<LinearRule>(&p); lr && lr->beta.size() != d)
          throw ConfigError("finite-class linear rule has the wrong dimension");
        if (policy_dim(p) > d) throw ConfigError("finite-class tree splits beyond the covariate dimension");
      }
    }
  }
};

/// Candidate thresholds per coordinate: all distinct observed values when a
/// coordinate has at most `max_per_coord` of them, otherwise the empirical
/// quantiles at levels k / (max_per_coord + 1), k = 1..max_per_coord
/// (order statistic of rank ceil(level * n)), deduplicated.
inline std::vector<std::vector<double>> quantile_split_grid(std::span<const double> xs, std::size_t d,
                                                            std::size_t max_per_coord = 64,
                                                            std::vector<std::size_t> coords = {}) {
  if (d == 0 || xs.size() % d != 0) throw std::invalid_argument("bad covariate matrix");
  const std::size_t n = xs.size() / d;
  if (coords.empty())
    for (std::size_t k = 0; k < d; ++k) coords.push_back(k);
  std::vector<std::vector<double>> grid(d);
  for (auto k : coords) {
    if (k >= d) throw ConfigError("split coordinate out of range");
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = xs[i * d + k];
    std::sort(col.begin(), col.end());
    std::vector<double> distinct = col;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() <= max_per_coord) {
      grid[k] = std::move(distinct);
      continue;
    }
    std::vector<double> g;
    for (std::size_t q = 1; q <= max_per_coord; ++q) {
      const double level = static_cast<double>(q) / static_cast<double>(max_per_coord + 1);
      auto rank = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n)));
      rank = std::clamp<std::size_t>(rank, 1, n);
      g.push_back(col[rank - 1]);
    }
    g.erase(std::unique(g.begin(), g.end()), g.end());
    grid[k] = std::move(g);
  }
  return grid;
}

inline nlohmann::json class_to_json(const PolicyClassSpec& spec) {
  nlohmann::json j;
  if (const auto* lin = std::get_if<LinearClass>(&spec.kind)) {
    j = {{"kind", "linear"}, {"dims", lin->dims}, {"intercept", lin->include_intercept}};
  } else if (const auto* tree = std::get_if<TreeClass>(&spec.kind)) {
    j = {{"kind", "tree"}, {"max_depth", tree->max_depth}, {"split_grid", tree->split_grid}};
  } else {
    j = {{"kind", "finite"}, {"policies", nlohmann::json::array()}};
    for (const auto& p : std::get<FiniteClass>(spec.kind).policies)
      j["policies"].push_back(policy_to_json(p));
  }
  if (spec.capacity) {
    j["capacity"] = *spec.capacity;
    j["capacity_basis"] = spec.capacity_basis == CapacityBasis::uniform ? "uniform" : "weighted";
  }
  return j;
}

inline PolicyClassSpec class_from_json(const nlohmann::json& j) {
  PolicyClassSpec spec;
  try {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "linear") {
      spec.kind = LinearClass{j.at("dims").get<std::vector<std::size_t>>(), j.value("intercept", true)};
    } else if (kind == "tree") {
      spec.kind = TreeClass{j.value("max_depth", 2),
                            j.at("split_grid").get<std::vector<std::vector<double>>>()};
    } else if (kind == "finite") {
      FiniteClass fin;
      for (const auto& p : j.at("policies")) fin.policies.push_back(policy_from_json(p));
      spec.kind = std::move(fin);
    } else {
      throw ConfigError("unknown class kind '" + kind + "'");
    }
    if (j.contains("capacity")) spec.capacity = j.at("capacity").get<double>();
    const auto basis = j.value("capacity_basis", std::string("uniform"));
    if (basis == "weighted")
      spec.capacity_basis = CapacityBasis::weighted;
    else if (basis != "uniform")
      throw ConfigError("unknown capacity basis '" + basis + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad class description: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad class description: ") + e.what());
  }
  return spec;
}

}  // namespace nbpl
