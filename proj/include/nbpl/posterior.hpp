#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbpl/data.hpp"
#include "nbpl/error.hpp"
#include "nbpl/parallel.hpp"
#include "nbpl/policy.hpp"
#include "nbpl/policy_class.hpp"
#include "nbpl/random.hpp"
#include "nbpl/solve_result.hpp"
#include "nbpl/solver.hpp"

namespace nbpl {

// ---------------------------------------------------------------------------
// Bayesian bootstrap

struct WeightDraw {
  std::vector<double> w;
  std::size_t draw_index = 0;
  std::vector<std::uint64_t> seed_path;  // (seed, draw) the generator was derived from
};

/// w_i = e_i / sum_j e_j with e_j i.i.d. unit exponentials taken from `rng`.
inline WeightDraw draw_bb_weights(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("draw_bb_weights: n must be positive");
  WeightDraw d;
  d.w.resize(n);
  double sum = 0.0;
  for (auto& v : d.w) {
    v = rng.exponential();
    sum += v;
  }
  for (auto& v : d.w) v /= sum;
  return d;
}

/// Weight draw number s (0-based) of the run seeded with `seed`.
inline WeightDraw draw_bb_weights(std::size_t n, std::uint64_t seed, std::size_t s) {
  Rng rng(derive_seed(seed, s));
  WeightDraw d = draw_bb_weights(n, rng);
  d.draw_index = s;
  d.seed_path = {seed, s};
  return d;
}

// ---------------------------------------------------------------------------
// Dirichlet process posterior, truncated stick-breaking

/// One reduced-form point: per-arm IPW scores z and covariates x.
struct ScoredPoint {
  std::vector<double> z;
  std::vector<double> x;
};

/// An observation (y, t, x) with its assignment probabilities.
struct ObservedRow {
  double y = 0.0;
  int arm = 0;
  std::vector<double> x;
  std::vector<double> propensity;
};

inline ScoredPoint score_row(const ObservedRow& r) {
  if (r.arm < 0 || static_cast<std::size_t>(r.arm) >= r.propensity.size())
    throw DataError("base-measure row has an arm outside its propensity vector");
  const double e = r.propensity[r.arm];
  if (!(e > 0.0)) throw DataError("base-measure row has a zero propensity");
  ScoredPoint p{std::vector<double>(r.propensity.size(), 0.0), r.x};
  p.z[r.arm] = r.y / e;
  return p;
}

/// Prior base measure alpha: its total mass and a sampler for alpha / |alpha|.
struct BaseMeasure {
  double total_mass = 0.0;
  std::function<ScoredPoint(Rng&)> sample;

  /// Base measure spread uniformly over the given scored points.
  static BaseMeasure from_points(double mass, std::vector<ScoredPoint> points) {
    if (points.empty()) throw ConfigError("base measure needs at least one point");
    return {mass, [pts = std::move(points)](Rng& rng) { return pts[rng.index(pts.size())]; }};
  }

  /// Base measure given by a sampler of raw rows, scored on the fly.
  static BaseMeasure from_rows(double mass, std::function<ObservedRow(Rng&)> rows) {
    return {mass, [rows = std::move(rows)](Rng& rng) { return score_row(rows(rng)); }};
  }
};

struct StickBreakAtom {
  ScoredPoint point;
  double mass = 0.0;
  std::optional<std::size_t> data_row;  // set when the atom is an observed row
};

struct StickBreakDraw {
  std::vector<StickBreakAtom> atoms;
  std::size_t K = 0;
  double residual_bound = 0.0;  // (M / (M + 1))^(K - 1), M = |alpha| + n
};

/// Smallest K with (M / (M + 1))^(K - 1) < eps.
inline std::size_t default_truncation(double total_mass, std::size_t n, double eps = 1e-3) {
  const double m = total_mass + static_cast<double>(n);
  if (!(m > 0.0)) throw ConfigError("total mass plus sample size must be positive");
  return static_cast<std::size_t>(std::ceil(1.0 + std::log(eps) / std::log(m / (m + 1.0))));
}

/// K atoms of DP(alpha + n P_n): masses from Beta(1, M) sticks with the last
/// mass set to one minus the others; each location is a uniformly chosen data
/// row with probability n / M and a base-measure draw otherwise.
inline StickBreakDraw draw_stick_breaking(const ScoreTable& data, const BaseMeasure& base,
                                          std::size_t K, Rng& rng) {
  if (K == 0) throw ConfigError("truncation K must be at least 1");
  if (!(base.total_mass >= 0.0)) throw ConfigError("base-measure mass must be nonnegative");
  const std::size_t n = data.size();
  const double m = base.total_mass + static_cast<double>(n);
  if (!(m > 0.0)) throw ConfigError("empty data and zero base-measure mass");
  if (base.total_mass > 0.0 && !base.sample) throw ConfigError("base measure has no sampler");

  StickBreakDraw d;
  d.K = K;
  d.residual_bound = std::pow(m / (m + 1.0), static_cast<double>(K - 1));
  d.atoms.resize(K);
  double rest = 1.0, sum = 0.0;
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double v = rng.beta_one(m);
    d.atoms[k].mass = rest * v;
    sum += d.atoms[k].mass;
    rest *= 1.0 - v;
  }
  d.atoms[K - 1].mass = 1.0 - sum;
  if (!(d.atoms[K - 1].mass > 0.0)) d.atoms[K - 1].mass = rest;

  const double p_data = static_cast<double>(n) / m;
  for (auto& a : d.atoms) {
    if (n > 0 && (base.total_mass == 0.0 || rng.uniform() < p_data)) {
      const std::size_t i = rng.index(n);
      a.data_row = i;
      const auto xi = data.x(i);
      a.point.x.assign(xi.begin(), xi.end());
      a.point.z.resize(data.n_arms());
      for (std::size_t j = 0; j < data.n_arms(); ++j) a.point.z[j] = data.z(i, j);
    } else {
      a.point = base.sample(rng);
      if (a.point.z.size() != data.n_arms() || a.point.x.size() != data.dim())
        throw DataError("base-measure point has the wrong shape");
    }
  }
  return d;
}

/// The draw as a weighted table: observed rows first (masses summed per
/// row, zero for rows never drawn), then one row per base-measure atom.
/// `scores` is only built when base-measure atoms are present; otherwise
/// the weights apply to the data table itself.
struct AtomTable {
  std::optional<ScoreTable> scores;
  std::vector<double> w;
  std::size_t base_atoms = 0;
};

inline AtomTable atom_table(const ScoreTable& data, const StickBreakDraw& d) {
  const std::size_t n = data.size(), a = data.n_arms(), dim = data.dim();
  std::vector<double> w(n, 0.0);
  std::size_t extra = 0;
  for (const auto& at : d.atoms) {
    if (at.data_row)
      w[*at.data_row] += at.mass;
    else
      ++extra;
  }
  AtomTable t;
  t.base_atoms = extra;
  if (extra == 0) {
    t.w = std::move(w);
    return t;
  }
  std::vector<double> z, x = data.covariates();
  z.reserve((n + extra) * a);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < a; ++j) z.push_back(data.z(i, j));
  for (const auto& at : d.atoms) {
    if (at.data_row) continue;
    z.insert(z.end(), at.point.z.begin(), at.point.z.end());
    x.insert(x.end(), at.point.x.begin(), at.point.x.end());
    w.push_back(at.mass);
  }
  t.scores = ScoreTable(std::move(z), std::move(x), a, dim);
  t.w = std::move(w);
  return t;
}

// ---------------------------------------------------------------------------
// The NBPL loop

struct NamedClass {
  std::string label;
  PolicyClassSpec spec;
};

struct ClassDraw {
  Policy policy;
  double value = 0.0;
  std::vector<double> shares;
  bool exact = true;
};

struct NbplOptions {
  std::size_t S = 1000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Replace every weight draw by 1/n (every draw is then the EWM fit).
  bool uniform_weights = false;
  bool keep_weights = false;
  SolverOptions solver;
};

/// Settings of the Dirichlet-process variant.
struct DpOptions {
  BaseMeasure base;
  std::optional<std::size_t> K;  // default_truncation() when absent
};

struct NbplRun {
  std::size_t S = 0;
  std::uint64_t seed = 0;
  std::string sampler = "bayesian_bootstrap";
  bool uniform_weights = false;
  double base_mass = 0.0;
  std::size_t K = 0;
  std::size_t n = 0;
  std::vector<NamedClass> classes;
  std::vector<std::vector<ClassDraw>> draws;  // [class][s]
  std::vector<std::vector<double>> weights;   // [s], when kept

  std::size_t index_of(const std::string& label) const {
    for (std::size_t k = 0; k < classes.size(); ++k)
      if (classes[k].label == label) return k;
    throw ConfigError("no class labelled '" + label + "'");
  }

  std::vector<double> values(std::size_t k) const {
    std::vector<double> v;
    v.reserve(draws[k].size());
    for (const auto& d : draws[k]) v.push_back(d.value);
    return v;
  }
  std::vector<double> values(const std::string& label) const { return values(index_of(label)); }

  std::vector<double> treated_shares(std::size_t k) const {
    std::vector<double> v;
    v.reserve(draws[k].size());
    for (const auto& d : draws[k]) {
      double t = 0.0;
      for (std::size_t j = 1; j < d.shares.size(); ++j) t += d.shares[j];
      v.push_back(t);
    }
    return v;
  }
};

namespace detail {

inline void check_run_inputs(std::size_t S, const std::vector<NamedClass>& classes) {
  if (S == 0) throw ConfigError("number of draws S must be at least 1");
  if (classes.empty()) throw ConfigError("at least one policy class is required");
  for (std::size_t a = 0; a < classes.size(); ++a)
    for (std::size_t b = a + 1; b < classes.size(); ++b)
      if (classes[a].label == classes[b].label)
        throw ConfigError("duplicate class label '" + classes[a].label + "'");
}

inline ClassDraw to_draw(SolveResult r) {
  return {std::move(r.policy), r.value, std::move(r.shares), r.exact};
}

[[noreturn]] inline void rethrow_at(std::size_t s, const std::string& label, const std::exception& e) {
  throw SolverError("draw " + std::to_string(s + 1) + ", class '" + label + "': " + e.what());
}

inline std::vector<ClassSolver> prepare(const ScoreTable& scores, const std::vector<NamedClass>& classes,
                                        const SolverOptions& opt) {
  std::vector<ClassSolver> solvers;
  solvers.reserve(classes.size());
  for (const auto& c : classes) {
    try {
      solvers.emplace_back(scores, c.spec, opt);
    } catch (const SolverError& e) {
      throw SolverError("class '" + c.label + "': " + e.what());
    }
  }
  return solvers;
}

}  // namespace detail

/// Bayesian-bootstrap NBPL: for each draw s one weight vector, shared by all
/// classes, and one welfare maximization per class under it.
inline NbplRun run_nbpl(const ScoreTable& scores, const std::vector<NamedClass>& classes,
                        const NbplOptions& opt) {
  detail::check_run_inputs(opt.S, classes);
  const std::size_t n = scores.size();
  const auto solvers = detail::prepare(scores, classes, opt.solver);

  NbplRun run;
  run.S = opt.S;
  run.seed = opt.seed;
  run.uniform_weights = opt.uniform_weights;
  run.n = n;
  run.classes = classes;
  run.draws.assign(classes.size(), std::vector<ClassDraw>(opt.S));
  if (opt.keep_weights) run.weights.resize(opt.S);

  parallel_for(opt.S, opt.workers, [&](std::size_t s) {
    std::vector<double> w = opt.uniform_weights
                                ? std::vector<double>(n, 1.0 / static_cast<double>(n))
                                : draw_bb_weights(n, opt.seed, s).w;
    for (std::size_t k = 0; k < classes.size(); ++k) {
      try {
        run.draws[k][s] = detail::to_draw(solvers[k].solve_unchecked(w));
      } catch (const std::exception& e) {
        detail::rethrow_at(s, classes[k].label, e);
      }
    }
    if (opt.keep_weights) run.weights[s] = std::move(w);
  });
  return run;
}

inline NbplRun run_nbpl(const Dataset& ds, const std::vector<NamedClass>& classes,
                        const NbplOptions& opt) {
  return run_nbpl(compute_scores(ds), classes, opt);
}

/// Dirichlet-process NBPL via truncated stick-breaking. Draws whose atoms
/// are all observed rows reuse the prepared solvers; draws with base-measure
/// atoms solve on the combined table. Kept weights cover observed rows only.
inline NbplRun run_nbpl_dp(const ScoreTable& scores, const std::vector<NamedClass>& classes,
                           const NbplOptions& opt, const DpOptions& dp) {
  detail::check_run_inputs(opt.S, classes);
  const std::size_t n = scores.size();
  const std::size_t K = dp.K ? *dp.K : default_truncation(dp.base.total_mass, n);
  if (K == 0) throw ConfigError("truncation K must be at least 1");
  const auto solvers = detail::prepare(scores, classes, opt.solver);

  NbplRun run;
  run.S = opt.S;
  run.seed = opt.seed;
  run.sampler = "stick_breaking";
  run.base_mass = dp.base.total_mass;
  run.K = K;
  run.n = n;
  run.classes = classes;
  run.draws.assign(classes.size(), std::vector<ClassDraw>(opt.S));
  if (opt.keep_weights) run.weights.resize(opt.S);

  parallel_for(opt.S, opt.workers, [&](std::size_t s) {
    Rng rng(derive_seed(opt.seed, s));
    const StickBreakDraw draw = draw_stick_breaking(scores, dp.base, K, rng);
    AtomTable t = atom_table(scores, draw);
    for (std::size_t k = 0; k < classes.size(); ++k) {
      try {
        if (t.base_atoms == 0) {
          run.draws[k][s] = detail::to_draw(solvers[k].solve_unchecked(t.w));
        } else {
          const ClassSolver local(*t.scores, classes[k].spec, opt.solver);
          run.draws[k][s] = detail::to_draw(local.solve_unchecked(t.w));
        }
      } catch (const std::exception& e) {
        detail::rethrow_at(s, classes[k].label, e);
      }
    }
    if (opt.keep_weights) run.weights[s].assign(t.w.begin(), t.w.begin() + static_cast<long>(n));
  });
  return run;
}

// ---------------------------------------------------------------------------
// JSON-lines persistence
//
// Line 1: {"type": "header", "S", "seed", "sampler", "uniform_weights", "n",
//          "classes": [{"label", "spec"}], ...}
// Then one line per (draw, class), draws outermost:
//          {"s": 1-based draw, "class": label, "value", "shares", "policy"}
// A draw computed by a heuristic solver carries "exact": false.

inline nlohmann::json run_header(const NbplRun& run) {
  nlohmann::json h{{"type", "header"},       {"S", run.S},
                   {"seed", run.seed},       {"sampler", run.sampler},
                   {"uniform_weights", run.uniform_weights}, {"n", run.n}};
  if (run.sampler == "stick_breaking") {
    h["base_mass"] = run.base_mass;
    h["K"] = run.K;
  }
  h["classes"] = nlohmann::json::array();
  for (const auto& c : run.classes) h["classes"].push_back({{"label", c.label}, {"spec", class_to_json(c.spec)}});
  return h;
}

inline void write_run_jsonl(std::ostream& out, const NbplRun& run) {
  out << run_header(run).dump() << '\n';
  for (std::size_t s = 0; s < run.S; ++s)
    for (std::size_t k = 0; k < run.classes.size(); ++k) {
      const auto& d = run.draws[k][s];
      nlohmann::json r{{"s", s + 1},
                       {"class", run.classes[k].label},
                       {"value", d.value},
                       {"shares", d.shares},
                       {"policy", policy_to_json(d.policy)}};
      if (!d.exact) r["exact"] = false;
      out << r.dump() << '\n';
    }
}

inline NbplRun read_run_jsonl(std::istream& in) {
  NbplRun run;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("draw file line " + std::to_string(line_no) + ": " + what);
  };
  try {
    if (!std::getline(in, line)) throw DataError("draw file is empty");
    ++line_no;
    const auto h = nlohmann::json::parse(line);
    if (h.value("type", "") != "header") throw fail("missing header record");
    run.S = h.at("S").get<std::size_t>();
    run.seed = h.at("seed").get<std::uint64_t>();
    run.sampler = h.value("sampler", "bayesian_bootstrap");
    run.uniform_weights = h.value("uniform_weights", false);
    run.n = h.value("n", std::size_t{0});
    run.base_mass = h.value("base_mass", 0.0);
    run.K = h.value("K", std::size_t{0});
    for (const auto& c : h.at("classes"))
      run.classes.push_back({c.at("label").get<std::string>(), class_from_json(c.at("spec"))});
    run.draws.assign(run.classes.size(), std::vector<ClassDraw>(run.S));
    std::map<std::string, std::size_t> index;
    for (std::size_t k = 0; k < run.classes.size(); ++k) index[run.classes[k].label] = k;
    std::vector<std::vector<bool>> seen(run.classes.size(), std::vector<bool>(run.S, false));
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto r = nlohmann::json::parse(line);
      const auto s = r.at("s").get<std::size_t>();
      if (s == 0 || s > run.S) throw fail("draw index out of range");
      auto it = index.find(r.at("class").get<std::string>());
      if (it == index.end()) throw fail("unknown class label");
      if (seen[it->second][s - 1]) throw fail("duplicate record");
      seen[it->second][s - 1] = true;
      run.draws[it->second][s - 1] = {policy_from_json(r.at("policy")), r.at("value").get<double>(),
                                      r.at("shares").get<std::vector<double>>(), r.value("exact", true)};
    }
    for (const auto& row : seen)
      for (bool b : row)
        if (!b) throw DataError("draw file is missing records");
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  return run;
}

}  // namespace nbpl
