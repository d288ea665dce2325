#pragma once

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nbpl/data.hpp"
#include "nbpl/error.hpp"
#include "nbpl/inference.hpp"
#include "nbpl/parallel.hpp"
#include "nbpl/posterior.hpp"
#include "nbpl/random.hpp"
#include "nbpl/solver.hpp"

namespace nbpl::sim {

// ---------------------------------------------------------------------------
// Data-generating processes

/// Finitely many support points (row-major, d columns) with probabilities.
struct FiniteGrid {
  std::vector<double> points;
  std::size_t d = 1;
  std::vector<double> probs;

  std::size_t size() const { return d == 0 ? 0 : points.size() / d; }
};

/// Independent uniforms on [lo_k, hi_k].
struct UniformBox {
  std::vector<double> lo, hi;
};

using CovariateLaw = std::variant<FiniteGrid, UniformBox>;
using Effects = std::function<std::vector<double>(std::span<const double>)>;
using Baseline = std::function<double(std::span<const double>)>;

/// Y = baseline(X) + tau_T(X) + noise_sd * N(0, 1), T ~ propensity, with
/// tau_0 = 0 and effects(x) = (tau_1(x), ..., tau_J(x)).
struct DgpSpec {
  CovariateLaw covariates;
  Effects effects;
  Baseline baseline;
  double noise_sd = 1.0;
  std::vector<double> propensity{0.5, 0.5};
  double kappa = 0.01;

  std::size_t n_arms() const { return propensity.size(); }

  std::size_t dim() const {
    if (const auto* g = std::get_if<FiniteGrid>(&covariates)) return g->d;
    return std::get<UniformBox>(covariates).lo.size();
  }

  bool finite() const { return std::holds_alternative<FiniteGrid>(covariates); }

  void validate() const {
    if (!effects) throw ConfigError("DGP has no effect function");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw ConfigError("noise scale must be >= 0");
    if (propensity.size() < 2) throw ConfigError("DGP needs at least two arms");
    double sum = 0.0;
    for (double e : propensity) {
      if (!(e >= kappa && e <= 1.0 - kappa)) throw ConfigError("DGP propensity violates overlap");
      sum += e;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("DGP propensities do not sum to 1");
    if (const auto* g = std::get_if<FiniteGrid>(&covariates)) {
      if (g->d == 0 || g->points.empty() || g->points.size() % g->d != 0)
        throw ConfigError("covariate grid has the wrong shape");
      if (g->probs.size() != g->size()) throw ConfigError("grid probabilities do not match the points");
      double ps = 0.0;
      for (double p : g->probs) {
        if (!(p >= 0.0)) throw ConfigError("negative grid probability");
        ps += p;
      }
      if (std::abs(ps - 1.0) > 1e-9) throw ConfigError("grid probabilities do not sum to 1");
    } else {
      const auto& b = std::get<UniformBox>(covariates);
      if (b.lo.empty() || b.lo.size() != b.hi.size()) throw ConfigError("uniform box has the wrong shape");
      for (std::size_t k = 0; k < b.lo.size(); ++k)
        if (!(b.lo[k] <= b.hi[k])) throw ConfigError("uniform box has lo > hi");
    }
  }

  std::vector<double> tau(std::span<const double> x) const {
    auto t = effects(x);
    if (t.size() != n_arms() - 1) throw ConfigError("effect function returns the wrong number of arms");
    return t;
  }

  double base(std::span<const double> x) const { return baseline ? baseline(x) : 0.0; }

  void draw_x(Rng& rng, std::vector<double>& out) const {
    if (const auto* g = std::get_if<FiniteGrid>(&covariates)) {
      const std::size_t k = rng.categorical(g->probs);
      out.insert(out.end(), g->points.begin() + static_cast<long>(k * g->d),
                 g->points.begin() + static_cast<long>((k + 1) * g->d));
    } else {
      const auto& b = std::get<UniformBox>(covariates);
      for (std::size_t k = 0; k < b.lo.size(); ++k) out.push_back(rng.uniform(b.lo[k], b.hi[k]));
    }
  }
};

/// Grid {(k + 0.5) / m : k = 0..m-1} on one coordinate, uniform probabilities.
inline FiniteGrid uniform_grid_1d(std::size_t m) {
  FiniteGrid g;
  g.d = 1;
  for (std::size_t k = 0; k < m; ++k) g.points.push_back((static_cast<double>(k) + 0.5) / static_cast<double>(m));
  g.probs.assign(m, 1.0 / static_cast<double>(m));
  return g;
}

/// Binary-treatment effect x -> {f(x)}.
inline Effects binary_effect(std::function<double(std::span<const double>)> f) {
  return [f = std::move(f)](std::span<const double> x) { return std::vector<double>{f(x)}; };
}

/// n i.i.d. rows; deterministic in `seed`.
inline Dataset make_dataset(const DgpSpec& spec, std::size_t n, std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw ConfigError("sample size must be at least 1");
  Rng rng(seed);
  const std::size_t d = spec.dim();
  std::vector<double> y(n), x;
  std::vector<int> t(n);
  x.reserve(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    spec.draw_x(rng, x);
    const std::span<const double> xi(x.data() + i * d, d);
    t[i] = static_cast<int>(rng.categorical(spec.propensity));
    const double noise = spec.noise_sd > 0.0 ? spec.noise_sd * rng.normal() : 0.0;
    y[i] = spec.base(xi) + (t[i] == 0 ? 0.0 : spec.tau(xi)[t[i] - 1]) + noise;
  }
  return Dataset(std::move(y), std::move(t), std::move(x), d, spec.n_arms(), spec.propensity, false);
}

// ---------------------------------------------------------------------------
// Truth

struct OracleOptions {
  std::size_t holdout = 1'000'000;  // covariate draws for a continuous law
  std::uint64_t seed = 0x0AC1EULL;
  SolverOptions solver;
};

/// Population welfare W(P0; G) = E[tau_G(X)(X)] relative to treating nobody,
/// and the class optimum. Exact for a finite grid (a p-weighted sum over the
/// support points); for a continuous law the expectation is replaced by an
/// average over held-out covariate draws and approximate() is true.
/// A capacity limit is applied to the population share of the rule.
class TruthOracle {
 public:
  TruthOracle(const DgpSpec& spec, PolicyClassSpec cls, OracleOptions opt = {})
      : cls_(std::move(cls)) {
    spec.validate();
    d_ = spec.dim();
    const std::size_t arms = spec.n_arms();
    std::vector<double> pts;
    if (const auto* g = std::get_if<FiniteGrid>(&spec.covariates)) {
      pts = g->points;
      w_ = g->probs;
    } else {
      if (opt.holdout == 0) throw ConfigError("held-out sample size must be positive");
      approximate_ = true;
      Rng rng(opt.seed);
      pts.reserve(opt.holdout * d_);
      for (std::size_t i = 0; i < opt.holdout; ++i) spec.draw_x(rng, pts);
      w_.assign(opt.holdout, 1.0 / static_cast<double>(opt.holdout));
    }
    const std::size_t m = pts.size() / d_;
    std::vector<double> c(m * arms, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      const auto t = spec.tau(std::span<const double>(pts.data() + k * d_, d_));
      for (std::size_t j = 1; j < arms; ++j) c[k * arms + j] = t[j - 1];
    }
    table_ = ScoreTable::from_contrasts(std::move(c), std::move(pts), arms, d_);
    PolicyClassSpec pop = cls_;
    pop.capacity_basis = CapacityBasis::weighted;
    solver_.emplace(table_, pop, opt.solver);
    best_ = solver_->solve(w_);
    if (const auto* f = solver_->finite()) class_values_ = f->values(w_);
  }

  TruthOracle(const TruthOracle&) = delete;
  TruthOracle& operator=(const TruthOracle&) = delete;

  bool approximate() const noexcept { return approximate_; }
  double optimum() const noexcept { return best_.value; }
  const Policy& optimal_policy() const noexcept { return best_.policy; }
  bool exact_optimum() const noexcept { return best_.exact; }
  const PolicyClassSpec& policy_class() const noexcept { return cls_; }

  double welfare(const Policy& p) const {
    try {
      detail::check_dims(p, d_);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return detail::welfare_unchecked(table_, w_, p);
  }

  /// W*(P0) - W(P0; p).
  double regret(const Policy& p) const { return best_.value - welfare(p); }

  /// Population welfare of every member of a finite class, in class order.
  const std::vector<double>& class_values() const {
    if (class_values_.empty()) throw ConfigError("class values need a finite policy class");
    return class_values_;
  }

 private:
  PolicyClassSpec cls_;
  std::size_t d_ = 0;
  bool approximate_ = false;
  ScoreTable table_;
  std::vector<double> w_;
  std::optional<ClassSolver> solver_;
  SolveResult best_;
  std::vector<double> class_values_;
};

inline double true_regret(const TruthOracle& oracle, const Policy& p) { return oracle.regret(p); }

/// Finite class {x_axis >= v} over the distinct grid values v of one
/// coordinate, in increasing order of v.
inline PolicyClassSpec grid_threshold_class(const FiniteGrid& g, std::size_t axis = 0) {
  if (axis >= g.d) throw ConfigError("threshold axis out of range");
  std::vector<double> v;
  for (std::size_t k = 0; k < g.size(); ++k) v.push_back(g.points[k * g.d + axis]);
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  FiniteClass fin;
  for (double t : v) {
    LinearRule r{std::vector<double>(g.d, 0.0), t, 1};
    r.beta[axis] = 1.0;
    fin.policies.emplace_back(std::move(r));
  }
  return PolicyClassSpec{std::move(fin), std::nullopt, CapacityBasis::uniform};
}

// ---------------------------------------------------------------------------
// Regret experiment

struct ExperimentOptions {
  std::vector<std::size_t> ns;
  std::size_t S = 200;
  std::size_t reps = 20;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool uniform_weights = false;
  SolverOptions solver;
  OracleOptions oracle;

  void validate() const {
    if (ns.empty()) throw ConfigError("no sample sizes given");
    for (std::size_t k = 0; k < ns.size(); ++k) {
      if (ns[k] == 0) throw ConfigError("sample sizes must be positive");
      if (k > 0 && ns[k] <= ns[k - 1]) throw ConfigError("sample sizes must be increasing");
    }
    if (S == 0) throw ConfigError("S must be at least 1");
    if (reps == 0) throw ConfigError("reps must be at least 1");
  }
};

struct RegretRow {
  std::size_t n = 0;
  double median_regret = 0.0;  // median over reps of the per-run posterior median
  double mean_median_regret = 0.0;  // mean over reps of the per-run posterior median
  double q90_regret = 0.0;     // median over reps of the per-run posterior 0.9-quantile
  double mean_regret = 0.0;    // mean over reps and draws
  double pooled_median = 0.0;  // median over all reps and draws
  std::vector<double> rep_median, rep_q90;
};

/// Regret bound check per draw P: R(P0; P) against
/// rho(P0, P_n) + rho(P_n, P) and twice that, rho(A, B) being
/// max over the class of |W(A; G) - W(B; G)|.
struct DecompositionCheck {
  std::size_t draws = 0;
  std::size_t violations = 0;          // R > rho(P0,Pn) + rho(Pn,P)
  std::size_t violations_doubled = 0;  // R > 2 (rho(P0,Pn) + rho(Pn,P))
  double max_excess = -std::numeric_limits<double>::infinity();  // max of R - bound
  double max_ratio = 0.0;                                         // max of R / bound
};

struct RegretReport {
  std::vector<RegretRow> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();  // fitted on mean_median_regret
  double optimum = 0.0;
  bool approximate = false;
  std::optional<DecompositionCheck> decomposition;  // finite classes only
};

/// Least-squares slope of log(y) on log(x); NaN when some y <= 0.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  const double k = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    mx += std::log(x[i]) / k;
    my += std::log(y[i]) / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

inline RegretReport regret_experiment(const DgpSpec& spec, const PolicyClassSpec& cls,
                                      const ExperimentOptions& opt) {
  opt.validate();
  spec.validate();
  const TruthOracle oracle(spec, cls, opt.oracle);
  const bool finite = std::holds_alternative<FiniteClass>(cls.kind);
  const std::size_t N = opt.ns.size(), R = opt.reps;

  struct RunResult {
    double median = 0.0, q90 = 0.0, mean = 0.0;
    std::vector<double> regrets;
    DecompositionCheck check;
  };
  std::vector<RunResult> results(N * R);

  parallel_for(N * R, opt.workers, [&](std::size_t task) {
    const std::size_t ni = task / R, r = task % R;
    const Dataset ds = make_dataset(spec, opt.ns[ni], derive_seed(opt.seed, {r, ni, 0}));
    const ScoreTable scores = compute_scores(ds);
    NbplOptions nopt;
    nopt.S = opt.S;
    nopt.seed = derive_seed(opt.seed, {r, ni, 1});
    nopt.workers = 1;
    nopt.uniform_weights = opt.uniform_weights;
    nopt.keep_weights = finite;
    nopt.solver = opt.solver;
    const NbplRun run = run_nbpl(scores, {{"class", cls}}, nopt);

    std::vector<double> reg(opt.S);
    for (std::size_t s = 0; s < opt.S; ++s) reg[s] = std::max(0.0, oracle.regret(run.draws[0][s].policy));
    RunResult& out = results[task];
    for (double v : reg) out.mean += v / static_cast<double>(opt.S);
    std::sort(reg.begin(), reg.end());
    out.median = quantile_sorted(reg, 0.5);
    out.q90 = quantile_sorted(reg, 0.9);
    out.regrets = std::move(reg);

    if (finite) {
      const ClassSolver solver(scores, cls, opt.solver);
      const auto& fs = *solver.finite();
      const auto& w0 = oracle.class_values();
      const std::vector<double> uniform(scores.size(), 1.0 / static_cast<double>(scores.size()));
      const auto wn = fs.values(uniform);
      double rho0n = 0.0;
      for (std::size_t g = 0; g < w0.size(); ++g) rho0n = std::max(rho0n, std::abs(w0[g] - wn[g]));
      for (std::size_t s = 0; s < opt.S; ++s) {
        const auto wp = fs.values(run.weights[s]);
        double rhonp = 0.0;
        for (std::size_t g = 0; g < wn.size(); ++g) rhonp = std::max(rhonp, std::abs(wn[g] - wp[g]));
        const double regret = oracle.regret(run.draws[0][s].policy);
        const double bound = rho0n + rhonp;
        auto& c = out.check;
        ++c.draws;
        if (regret > bound + kTieTolerance) ++c.violations;
        if (regret > 2.0 * bound + kTieTolerance) ++c.violations_doubled;
        c.max_excess = std::max(c.max_excess, regret - bound);
        if (bound > 0.0) c.max_ratio = std::max(c.max_ratio, regret / bound);
      }
    }
  });

  RegretReport rep;
  rep.optimum = oracle.optimum();
  rep.approximate = oracle.approximate();
  if (finite) rep.decomposition = DecompositionCheck{};
  std::vector<double> xs, ys;
  for (std::size_t ni = 0; ni < N; ++ni) {
    RegretRow row;
    row.n = opt.ns[ni];
    std::vector<double> pooled;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& res = results[ni * R + r];
      pooled.insert(pooled.end(), res.regrets.begin(), res.regrets.end());
      row.rep_median.push_back(res.median);
      row.mean_median_regret += res.median / static_cast<double>(R);
      row.rep_q90.push_back(res.q90);
      row.mean_regret += res.mean / static_cast<double>(R);
      if (finite) {
        auto& c = *rep.decomposition;
        c.draws += res.check.draws;
        c.violations += res.check.violations;
        c.violations_doubled += res.check.violations_doubled;
        c.max_excess = std::max(c.max_excess, res.check.max_excess);
        c.max_ratio = std::max(c.max_ratio, res.check.max_ratio);
      }
    }
    row.median_regret = quantile(row.rep_median, 0.5);
    row.q90_regret = quantile(row.rep_q90, 0.5);
    row.pooled_median = quantile(std::move(pooled), 0.5);
    xs.push_back(static_cast<double>(row.n));
    ys.push_back(row.mean_median_regret);
    rep.rows.push_back(std::move(row));
  }
  rep.slope = loglog_slope(xs, ys);
  return rep;
}

// ---------------------------------------------------------------------------
// Selection experiment

struct SelectionOptions : ExperimentOptions {
  /// |W_a - W_b| counts as zero below epsilon * max(1, |W_a|, |W_b|).
  double epsilon = 10.0 * DBL_EPSILON;
};

struct SelectionRow {
  std::size_t n = 0;
  std::vector<double> rep_correct;  // empty when the true gap is zero
  std::optional<double> mean_correct;
  std::size_t reps_at_least_95 = 0;
  std::vector<double> rep_within_eps;  // Pr(|W_a - W_b| < eps | D) per rep
  double mean_within_eps = 0.0;
  double mean_abs_diff = 0.0;
};

struct SelectionReport {
  double gap = 0.0;  // W*_a(P0) - W*_b(P0)
  bool gap_zero = false;
  bool approximate = false;
  std::vector<SelectionRow> rows;
};

inline SelectionReport selection_experiment(const DgpSpec& spec, const PolicyClassSpec& a,
                                            const PolicyClassSpec& b, const SelectionOptions& opt) {
  opt.validate();
  spec.validate();
  if (!(opt.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  SelectionReport rep;
  {
    const TruthOracle oa(spec, a, opt.oracle), ob(spec, b, opt.oracle);
    rep.gap = oa.optimum() - ob.optimum();
    rep.approximate = oa.approximate();
  }
  rep.gap_zero = std::abs(rep.gap) <= kCompareTolerance;
  const std::size_t N = opt.ns.size(), R = opt.reps;
  struct RunResult {
    double correct = 0.0, within = 0.0, abs_diff = 0.0;
  };
  std::vector<RunResult> results(N * R);

  parallel_for(N * R, opt.workers, [&](std::size_t task) {
    const std::size_t ni = task / R, r = task % R;
    const Dataset ds = make_dataset(spec, opt.ns[ni], derive_seed(opt.seed, {r, ni, 0}));
    NbplOptions nopt;
    nopt.S = opt.S;
    nopt.seed = derive_seed(opt.seed, {r, ni, 1});
    nopt.uniform_weights = opt.uniform_weights;
    nopt.solver = opt.solver;
    const NbplRun run = run_nbpl(compute_scores(ds), {{"a", a}, {"b", b}}, nopt);
    const auto va = run.values(0), vb = run.values(1);
    RunResult& out = results[task];
    std::size_t correct = 0, within = 0;
    for (std::size_t s = 0; s < opt.S; ++s) {
      const double diff = va[s] - vb[s];
      if (rep.gap > 0 ? diff > kCompareTolerance : diff < -kCompareTolerance) ++correct;
      const double scale = std::max({1.0, std::abs(va[s]), std::abs(vb[s])});
      if (std::abs(diff) < opt.epsilon * scale) ++within;
      out.abs_diff += std::abs(diff) / static_cast<double>(opt.S);
    }
    out.correct = static_cast<double>(correct) / static_cast<double>(opt.S);
    out.within = static_cast<double>(within) / static_cast<double>(opt.S);
  });

  for (std::size_t ni = 0; ni < N; ++ni) {
    SelectionRow row;
    row.n = opt.ns[ni];
    double sum = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const auto& res = results[ni * R + r];
      if (!rep.gap_zero) {
        row.rep_correct.push_back(res.correct);
        sum += res.correct;
        if (res.correct >= 0.95) ++row.reps_at_least_95;
      }
      row.rep_within_eps.push_back(res.within);
      row.mean_within_eps += res.within / static_cast<double>(R);
      row.mean_abs_diff += res.abs_diff / static_cast<double>(R);
    }
    if (!rep.gap_zero) row.mean_correct = sum / static_cast<double>(R);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

inline nlohmann::json to_json_value(const RegretReport& r) {
  nlohmann::json j{{"experiment", "regret"},
                   {"optimum", r.optimum},
                   {"approximate", r.approximate},
                   {"slope", std::isnan(r.slope) ? nlohmann::json(nullptr) : nlohmann::json(r.slope)},
                   {"rows", nlohmann::json::array()}};
  for (const auto& row : r.rows)
    j["rows"].push_back({{"n", row.n},
                         {"median_regret", row.median_regret},
                         {"mean_median_regret", row.mean_median_regret},
                         {"q90_regret", row.q90_regret},
                         {"mean_regret", row.mean_regret},
                         {"rep_median", row.rep_median},
                         {"rep_q90", row.rep_q90}});
  if (r.decomposition) {
    const auto& c = *r.decomposition;
    j["decomposition"] = {{"draws", c.draws},
                          {"violations", c.violations},
                          {"violations_doubled", c.violations_doubled},
                          {"max_excess", c.draws ? nlohmann::json(c.max_excess) : nlohmann::json(nullptr)},
                          {"max_ratio", c.max_ratio}};
  }
  return j;
}

inline nlohmann::json to_json_value(const SelectionReport& r) {
  nlohmann::json j{{"experiment", "selection"},
                   {"gap", r.gap},
                   {"gap_zero", r.gap_zero},
                   {"approximate", r.approximate},
                   {"rows", nlohmann::json::array()}};
  for (const auto& row : r.rows)
    j["rows"].push_back(
        {{"n", row.n},
         {"correct_sign_fraction", row.mean_correct ? nlohmann::json(*row.mean_correct) : nlohmann::json(nullptr)},
         {"rep_correct", row.rep_correct},
         {"reps_at_least_95", row.reps_at_least_95},
         {"within_eps", row.mean_within_eps},
         {"rep_within_eps", row.rep_within_eps},
         {"mean_abs_diff", row.mean_abs_diff}});
  return j;
}

/// Per-n CSV rows: n, median_regret, q90_regret, correct_sign_fraction.
inline std::string to_csv(const RegretReport& r) {
  std::ostringstream os;
  os << "n,median_regret,q90_regret,correct_sign_fraction\n";
  for (const auto& row : r.rows)
    os << row.n << ',' << detail::fmt_exact(row.median_regret) << ',' << detail::fmt_exact(row.q90_regret)
       << ",\n";
  return os.str();
}

inline std::string to_csv(const SelectionReport& r) {
  std::ostringstream os;
  os << "n,median_regret,q90_regret,correct_sign_fraction\n";
  for (const auto& row : r.rows) {
    os << row.n << ",,,";
    if (row.mean_correct) os << detail::fmt_exact(*row.mean_correct);
    os << '\n';
  }
  return os.str();
}

}  // namespace nbpl::sim
