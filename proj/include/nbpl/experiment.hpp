#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbpl/error.hpp"
#include "nbpl/inference.hpp"
#include "nbpl/policy_class.hpp"
#include "nbpl/simlab.hpp"

// Experiment files (JSON).
//
// {
//   "name": "rate_smoke",
//   "experiment": "regret" | "selection",
//   "dgp": {
//     "covariates": {"grid_1d": 64}
//                 | {"grid": {"points": [[x..], ...], "probs": [p, ...]}}
//                 | {"uniform_box": {"lo": [..], "hi": [..]}},
//     "effect": FN,              (binary) or "effects": [FN, ...] (one per treated arm)
//     "baseline": FN,            default 0
//     "noise_sd": 1.0,
//     "propensity": 0.5 | [e0, e1, ...]
//   },
//   "class": CLASS,              regret experiments
//   "class_a": CLASS, "class_b": CLASS,   selection experiments
//   "ns": [250, 1000], "reps": 3, "S": 100,
//   "seed": 1,                   optional; --seed takes precedence
//   "uniform_weights": false, "epsilon": 2.2e-15, "holdout": 1000000
// }
//
// FN    := number | {"constant": v}
//        | {"linear": {"coef": [..], "intercept": c}}
//        | {"power": {"axis": k, "center": c, "exponent": a, "scale": s}}
//             s * sign(x_k - c) * |x_k - c|^a
//        | {"values": [..]}   one value per grid point, grid laws only
// CLASS := any class JSON ({"kind": "linear" | "tree" | "finite", ...})
//        | {"kind": "grid_thresholds", "axis": k}   rules x_k >= v over grid values v
//        | a tree class with "split_grid": "grid"   thresholds at the grid values

namespace nbpl {

enum class ExperimentKind { regret, selection };

struct Experiment {
  std::string name;
  ExperimentKind kind = ExperimentKind::regret;
  sim::DgpSpec dgp;
  PolicyClassSpec class_a, class_b;
  sim::ExperimentOptions options;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
};

namespace detail {

using ScalarFn = std::function<double(std::span<const double>)>;

inline ScalarFn parse_fn(const nlohmann::json& j, const sim::CovariateLaw& law) {
  if (j.is_number()) {
    const double v = j.get<double>();
    return [v](std::span<const double>) { return v; };
  }
  if (!j.is_object() || j.size() != 1) throw ConfigError("function must be a number or a one-key object");
  const auto& [key, body] = *j.items().begin();
  if (key == "constant") {
    const double v = body.get<double>();
    return [v](std::span<const double>) { return v; };
  }
  if (key == "linear") {
    auto coef = body.at("coef").get<std::vector<double>>();
    const double c = body.value("intercept", 0.0);
    return [coef, c](std::span<const double> x) {
      if (x.size() != coef.size()) throw ConfigError("linear function has the wrong number of coefficients");
      double s = c;
      for (std::size_t k = 0; k < coef.size(); ++k) s += coef[k] * x[k];
      return s;
    };
  }
  if (key == "power") {
    const auto axis = body.value("axis", std::size_t{0});
    const double center = body.value("center", 0.0), a = body.value("exponent", 1.0),
                 scale = body.value("scale", 1.0);
    return [=](std::span<const double> x) {
      if (axis >= x.size()) throw ConfigError("power function axis out of range");
      const double u = x[axis] - center;
      return scale * (u < 0 ? -1.0 : 1.0) * std::pow(std::abs(u), a);
    };
  }
  if (key == "values") {
    const auto* g = std::get_if<sim::FiniteGrid>(&law);
    if (!g) throw ConfigError("\"values\" needs a grid covariate law");
    const auto vals = body.get<std::vector<double>>();
    if (vals.size() != g->size()) throw ConfigError("\"values\" needs one entry per grid point");
    std::map<std::vector<double>, double> table;
    for (std::size_t k = 0; k < g->size(); ++k)
      table[std::vector<double>(g->points.begin() + static_cast<long>(k * g->d),
                                g->points.begin() + static_cast<long>((k + 1) * g->d))] = vals[k];
    return [table = std::move(table)](std::span<const double> x) {
      auto it = table.find(std::vector<double>(x.begin(), x.end()));
      if (it == table.end()) throw ConfigError("\"values\" function evaluated off the grid");
      return it->second;
    };
  }
  throw ConfigError("unknown function form '" + key + "'");
}

inline sim::CovariateLaw parse_law(const nlohmann::json& j) {
  if (j.contains("grid_1d")) return sim::uniform_grid_1d(j.at("grid_1d").get<std::size_t>());
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    sim::FiniteGrid out;
    const auto pts = g.at("points").get<std::vector<std::vector<double>>>();
    if (pts.empty()) throw ConfigError("grid has no points");
    out.d = pts[0].size();
    for (const auto& p : pts) {
      if (p.size() != out.d) throw ConfigError("grid points differ in dimension");
      out.points.insert(out.points.end(), p.begin(), p.end());
    }
    out.probs = g.contains("probs") ? g.at("probs").get<std::vector<double>>()
                                    : std::vector<double>(pts.size(), 1.0 / static_cast<double>(pts.size()));
    return out;
  }
  if (j.contains("uniform_box")) {
    const auto& b = j.at("uniform_box");
    return sim::UniformBox{b.at("lo").get<std::vector<double>>(), b.at("hi").get<std::vector<double>>()};
  }
  throw ConfigError("unknown covariate law");
}

inline PolicyClassSpec parse_experiment_class(const nlohmann::json& j, const sim::DgpSpec& dgp) {
  const auto kind = j.at("kind").get<std::string>();
  const auto* grid = std::get_if<sim::FiniteGrid>(&dgp.covariates);
  PolicyClassSpec spec;
  if (kind == "grid_thresholds") {
    if (!grid) throw ConfigError("grid_thresholds needs a grid covariate law");
    spec = sim::grid_threshold_class(*grid, j.value("axis", std::size_t{0}));
  } else if (kind == "tree" && j.contains("split_grid") && j.at("split_grid").is_string()) {
    if (j.at("split_grid").get<std::string>() != "grid") throw ConfigError("split_grid must be \"grid\" or a list");
    if (!grid) throw ConfigError("split_grid \"grid\" needs a grid covariate law");
    TreeClass t;
    t.max_depth = j.value("max_depth", 2);
    t.split_grid = quantile_split_grid(grid->points, grid->d, grid->size());
    spec.kind = std::move(t);
  } else {
    return class_from_json(j);
  }
  if (j.contains("capacity")) spec.capacity = j.at("capacity").get<double>();
  if (j.value("capacity_basis", std::string("uniform")) == "weighted") spec.capacity_basis = CapacityBasis::weighted;
  return spec;
}

}  // namespace detail

inline Experiment parse_experiment(const nlohmann::json& j) {
  Experiment e;
  try {
    e.name = j.value("name", std::string("experiment"));
    const auto kind = j.at("experiment").get<std::string>();
    if (kind == "regret")
      e.kind = ExperimentKind::regret;
    else if (kind == "selection")
      e.kind = ExperimentKind::selection;
    else
      throw ConfigError("experiment must be \"regret\" or \"selection\"");

    const auto& d = j.at("dgp");
    e.dgp.covariates = detail::parse_law(d.at("covariates"));
    if (d.contains("propensity")) {
      const auto& p = d.at("propensity");
      e.dgp.propensity = p.is_number() ? std::vector<double>{1.0 - p.get<double>(), p.get<double>()}
                                       : p.get<std::vector<double>>();
    }
    std::vector<detail::ScalarFn> fns;
    if (d.contains("effects")) {
      for (const auto& f : d.at("effects")) fns.push_back(detail::parse_fn(f, e.dgp.covariates));
    } else {
      fns.push_back(detail::parse_fn(d.at("effect"), e.dgp.covariates));
    }
    e.dgp.effects = [fns](std::span<const double> x) {
      std::vector<double> t;
      for (const auto& f : fns) t.push_back(f(x));
      return t;
    };
    if (d.contains("baseline")) e.dgp.baseline = detail::parse_fn(d.at("baseline"), e.dgp.covariates);
    e.dgp.noise_sd = d.value("noise_sd", 1.0);
    e.dgp.validate();

    if (e.kind == ExperimentKind::regret) {
      e.class_a = detail::parse_experiment_class(j.at("class"), e.dgp);
    } else {
      e.class_a = detail::parse_experiment_class(j.at("class_a"), e.dgp);
      e.class_b = detail::parse_experiment_class(j.at("class_b"), e.dgp);
    }
    e.class_a.validate(e.dgp.dim());
    if (e.kind == ExperimentKind::selection) e.class_b.validate(e.dgp.dim());

    auto count = [&](const char* key, std::size_t def) {
      if (!j.contains(key)) return def;
      const auto& v = j.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 0)
        throw ConfigError(std::string(key) + " must be a nonnegative integer");
      return v.get<std::size_t>();
    };
    e.options.ns = j.at("ns").get<std::vector<std::size_t>>();
    e.options.reps = count("reps", 20);
    e.options.S = count("S", 200);
    e.options.uniform_weights = j.value("uniform_weights", false);
    e.options.oracle.holdout = count("holdout", e.options.oracle.holdout);
    if (j.contains("seed")) e.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("epsilon")) e.epsilon = j.at("epsilon").get<double>();
    e.options.validate();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("experiment file: ") + ex.what());
  }
  return e;
}

/// Per-n Markdown table of an experiment report (JSON form).
inline std::string experiment_markdown(const nlohmann::json& report) {
  std::ostringstream os;
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::string("-") : detail::fmt(v.get<double>(), 6); };
  if (report.at("experiment") == "regret") {
    os << "| n | median regret | mean of run medians | q90 regret | mean regret |\n|---|---|---|---|---|\n";
    for (const auto& r : report.at("rows"))
      os << "| " << r.at("n").get<std::size_t>() << " | " << num(r.at("median_regret")) << " | "
         << num(r.at("mean_median_regret")) << " | " << num(r.at("q90_regret")) << " | "
         << num(r.at("mean_regret")) << " |\n";
    os << "\nslope: " << num(report.at("slope")) << '\n';
  } else {
    os << "| n | correct-sign fraction | Pr(|diff| < eps) | mean abs diff |\n|---|---|---|---|\n";
    for (const auto& r : report.at("rows"))
      os << "| " << r.at("n").get<std::size_t>() << " | " << num(r.at("correct_sign_fraction")) << " | "
         << num(r.at("within_eps")) << " | " << num(r.at("mean_abs_diff")) << " |\n";
    os << "\ngap: " << num(report.at("gap")) << '\n';
  }
  return os.str();
}

}  // namespace nbpl
