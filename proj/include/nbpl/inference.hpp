#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nbpl/data.hpp"
#include "nbpl/error.hpp"
#include "nbpl/parallel.hpp"
#include "nbpl/posterior.hpp"
#include "nbpl/random.hpp"
#include "nbpl/solver.hpp"

namespace nbpl {

/// Tolerance below which two welfare values count as equal in comparisons.
inline constexpr double kCompareTolerance = 1e-12;

// ---------------------------------------------------------------------------
// Quantiles and empirical CDFs

/// Quantile of sorted data by linear interpolation between order statistics:
/// with h = (n - 1) p + 1 (1-based rank), Q(p) = x[floor h] + (h - floor h)
/// (x[floor h + 1] - x[floor h]).
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile level outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  return quantile_sorted(xs, p);
}

struct CdfPoint {
  double value;
  double cdf;
};

/// Empirical CDF evaluated at every distinct value.
inline std::vector<CdfPoint> empirical_cdf(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  std::vector<CdfPoint> out;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (i + 1 == xs.size() || xs[i + 1] != xs[i])
      out.push_back({xs[i], static_cast<double>(i + 1) / n});
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct Comparison {
  std::string a, b;
  std::size_t S = 0;
  double greater = 0.0;  // Pr(W_a > W_b)
  double equal = 0.0;
  double less = 0.0;
  std::vector<CdfPoint> diff_cdf;  // of W_a - W_b
};

struct EwmBlock {
  Policy policy;
  double welfare = 0.0;
  double treated_share = 0.0;
  std::optional<Interval> ci;
  double posterior_percentile = 0.0;  // fraction of posterior draws below `welfare`
};

struct ClassSummary {
  std::string label;
  double median = 0.0;
  Interval ci;
  double share_median = 0.0;
  Interval share_ci;
  std::vector<CdfPoint> cdf;
  std::optional<EwmBlock> ewm;
};

struct SummaryReport {
  double alpha = 0.05;
  std::size_t S = 0;
  std::vector<ClassSummary> classes;
  std::vector<Comparison> comparisons;

  ClassSummary& at(const std::string& label) {
    for (auto& c : classes)
      if (c.label == label) return c;
    throw ConfigError("no class labelled '" + label + "'");
  }
};

/// Tie-aware comparison of two coupled draw vectors.
inline Comparison compare_draws(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ConfigError("compared classes have different draw counts");
  if (a.empty()) throw ConfigError("no draws to compare");
  Comparison c;
  c.S = a.size();
  std::size_t gt = 0, lt = 0;
  std::vector<double> diff(a.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (a[s] > b[s] + kCompareTolerance)
      ++gt;
    else if (b[s] > a[s] + kCompareTolerance)
      ++lt;
    diff[s] = a[s] - b[s];
  }
  const double S = static_cast<double>(a.size());
  c.greater = static_cast<double>(gt) / S;
  c.less = static_cast<double>(lt) / S;
  c.equal = static_cast<double>(a.size() - gt - lt) / S;
  c.diff_cdf = empirical_cdf(std::move(diff));
  return c;
}

inline Comparison compare_classes(const NbplRun& run, const std::string& a, const std::string& b) {
  Comparison c = compare_draws(run.values(a), run.values(b));
  c.a = a;
  c.b = b;
  return c;
}

/// Posterior median, equal-tailed (alpha/2, 1 - alpha/2) interval, treated
/// share quantiles and CDF per class; comparisons for every class pair in
/// label order of the run.
inline SummaryReport summarize(const NbplRun& run, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (run.S == 0 || run.classes.empty()) throw ConfigError("empty run");
  SummaryReport r;
  r.alpha = alpha;
  r.S = run.S;
  for (std::size_t k = 0; k < run.classes.size(); ++k) {
    ClassSummary cs;
    cs.label = run.classes[k].label;
    auto v = run.values(k);
    std::sort(v.begin(), v.end());
    cs.median = quantile_sorted(v, 0.5);
    cs.ci = {quantile_sorted(v, alpha / 2), quantile_sorted(v, 1 - alpha / 2)};
    auto sh = run.treated_shares(k);
    std::sort(sh.begin(), sh.end());
    cs.share_median = quantile_sorted(sh, 0.5);
    cs.share_ci = {quantile_sorted(sh, alpha / 2), quantile_sorted(sh, 1 - alpha / 2)};
    cs.cdf = empirical_cdf(std::move(v));
    r.classes.push_back(std::move(cs));
  }
  for (std::size_t a = 0; a < run.classes.size(); ++a)
    for (std::size_t b = a + 1; b < run.classes.size(); ++b)
      r.comparisons.push_back(compare_classes(run, run.classes[a].label, run.classes[b].label));
  return r;
}

/// Fraction of draws strictly below `value`.
inline double posterior_percentile(const std::vector<double>& draws, double value) {
  if (draws.empty()) throw ConfigError("no draws");
  const auto below = std::count_if(draws.begin(), draws.end(), [&](double v) { return v < value; });
  return static_cast<double>(below) / static_cast<double>(draws.size());
}

// ---------------------------------------------------------------------------
// Empirical welfare maximization

inline SolveResult ewm_fit(const ScoreTable& scores, const PolicyClassSpec& spec, SolverOptions opt = {}) {
  if (scores.size() == 0) throw SolverError("empty dataset");
  const std::vector<double> w(scores.size(), 1.0 / static_cast<double>(scores.size()));
  return solve_class(scores, w, spec, opt);
}

inline SolveResult ewm_fit(const Dataset& ds, const PolicyClassSpec& spec, SolverOptions opt = {}) {
  return ewm_fit(compute_scores(ds), spec, opt);
}

struct BootstrapOptions {
  std::size_t B = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  SolverOptions solver;
};

struct BootstrapInterval {
  Interval ci;
  std::size_t replicates = 0;  // successful replicates
  std::size_t skipped = 0;     // replicates drawing a single arm only
  std::vector<double> values;  // per replicate, NaN when skipped
};

/// Percentile pairs bootstrap for the EWM welfare. Replicate b resamples n
/// rows with replacement (generator derive_seed(seed, b)), refits EWM on the
/// resample and records the refit rule's welfare on the resample. A
/// resample is represented by multinomial count weights c_i / n on the
/// original rows, with the capacity share measured on those weights.
inline BootstrapInterval ewm_bootstrap_ci(const Dataset& ds, const PolicyClassSpec& spec,
                                          const BootstrapOptions& opt) {
  if (opt.B < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const ScoreTable scores = compute_scores(ds);
  const std::size_t n = ds.size();
  PolicyClassSpec rep_spec = spec;
  rep_spec.capacity_basis = CapacityBasis::weighted;
  const ClassSolver solver(scores, rep_spec, opt.solver);

  BootstrapInterval out;
  out.values.assign(opt.B, std::nan(""));
  std::vector<char> skipped(opt.B, 0);
  parallel_for(opt.B, opt.workers, [&](std::size_t b) {
    Rng rng(derive_seed(opt.seed, b));
    std::vector<double> w(n, 0.0);
    const double unit = 1.0 / static_cast<double>(n);
    int first_arm = -1;
    bool mixed = false;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = rng.index(n);
      w[i] += unit;
      if (first_arm < 0)
        first_arm = ds.arm(i);
      else if (ds.arm(i) != first_arm)
        mixed = true;
    }
    if (!mixed) {
      skipped[b] = 1;
      return;
    }
    // Renormalize the accumulated 1/n steps exactly.
    double sum = 0.0;
    for (double v : w) sum += v;
    for (double& v : w) v /= sum;
    out.values[b] = solver.solve_unchecked(w).value;
  });
  out.skipped = static_cast<std::size_t>(std::count(skipped.begin(), skipped.end(), 1));
  if (static_cast<double>(out.skipped) > 0.1 * static_cast<double>(opt.B))
    throw DataError(std::to_string(out.skipped) + " of " + std::to_string(opt.B) +
                    " bootstrap resamples contain a single arm");
  std::vector<double> ok;
  for (double v : out.values)
    if (!std::isnan(v)) ok.push_back(v);
  out.replicates = ok.size();
  std::sort(ok.begin(), ok.end());
  out.ci = {quantile_sorted(ok, opt.alpha / 2), quantile_sorted(ok, 1 - opt.alpha / 2)};
  return out;
}

/// Attaches the EWM fit (and optional bootstrap interval) to a class summary.
inline void attach_ewm(SummaryReport& report, const NbplRun& run, const std::string& label,
                       const SolveResult& fit, std::optional<Interval> ci = std::nullopt) {
  EwmBlock e{fit.policy, fit.value, fit.treated_share(), ci,
             posterior_percentile(run.values(label), fit.value)};
  report.at(label).ewm = std::move(e);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json cdf_json(const std::vector<CdfPoint>& cdf) {
  auto j = nlohmann::json::array();
  for (const auto& p : cdf) j.push_back({p.value, p.cdf});
  return j;
}

inline nlohmann::json to_json_value(const Comparison& c) {
  return {{"a", c.a},         {"b", c.b},         {"S", c.S},
          {"pr_greater", c.greater}, {"pr_equal", c.equal}, {"pr_less", c.less},
          {"diff_cdf", cdf_json(c.diff_cdf)}};
}

inline nlohmann::json to_json_value(const SummaryReport& r) {
  nlohmann::json j{{"alpha", r.alpha}, {"S", r.S}, {"classes", nlohmann::json::array()},
                   {"comparisons", nlohmann::json::array()}};
  for (const auto& c : r.classes) {
    nlohmann::json cj{{"label", c.label},
                      {"median", c.median},
                      {"ci", {c.ci.lo, c.ci.hi}},
                      {"share_median", c.share_median},
                      {"share_ci", {c.share_ci.lo, c.share_ci.hi}},
                      {"cdf", cdf_json(c.cdf)}};
    if (c.ewm) {
      cj["ewm"] = {{"policy", policy_to_json(c.ewm->policy)},
                   {"welfare", c.ewm->welfare},
                   {"treated_share", c.ewm->treated_share},
                   {"posterior_percentile", c.ewm->posterior_percentile}};
      if (c.ewm->ci) cj["ewm"]["ci"] = {c.ewm->ci->lo, c.ewm->ci->hi};
    }
    j["classes"].push_back(std::move(cj));
  }
  for (const auto& c : r.comparisons) j["comparisons"].push_back(to_json_value(c));
  return j;
}

namespace detail {

inline std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// Full round-trip precision for data files.
inline std::string fmt_exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

inline void write_cdf_csv(const std::filesystem::path& p, const std::string& col,
                          const std::vector<CdfPoint>& cdf) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << col << ",cdf\n";
  for (const auto& pt : cdf) out << fmt_exact(pt.value) << ',' << fmt_exact(pt.cdf) << '\n';
  if (!out) throw DataError("write failed: " + p.string());
}

}  // namespace detail

/// Writes cdf_<label>.csv (value,cdf) per class and diff_<a>__<b>.csv
/// (diff_value,cdf) per comparison into `dir`. Returns the paths written.
inline std::vector<std::filesystem::path> export_figure_data(const SummaryReport& r,
                                                             const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  for (const auto& c : r.classes) {
    auto p = dir / ("cdf_" + detail::safe_name(c.label) + ".csv");
    detail::write_cdf_csv(p, "value", c.cdf);
    written.push_back(p);
  }
  for (const auto& c : r.comparisons) {
    auto p = dir / ("diff_" + detail::safe_name(c.a) + "__" + detail::safe_name(c.b) + ".csv");
    detail::write_cdf_csv(p, "diff_value", c.diff_cdf);
    written.push_back(p);
  }
  return written;
}

/// Markdown table with one row per (method, class): treated share, welfare,
/// interval. NBPL rows report posterior medians and credible intervals; EWM
/// rows the empirical fit and its bootstrap interval when present.
inline std::string markdown_table(const SummaryReport& r) {
  std::ostringstream os;
  const auto pct = detail::fmt(100 * (1 - r.alpha), 0);
  os << "| method | class | share | welfare | " << pct << "% interval |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& c : r.classes)
    if (c.ewm) {
      os << "| EWM | " << c.label << " | " << detail::fmt(c.ewm->treated_share, 2) << " | "
         << detail::fmt(c.ewm->welfare) << " | ";
      if (c.ewm->ci)
        os << "(" << detail::fmt(c.ewm->ci->lo) << ", " << detail::fmt(c.ewm->ci->hi) << ")";
      else
        os << "-";
      os << " |\n";
    }
  for (const auto& c : r.classes)
    os << "| NBPL | " << c.label << " | " << detail::fmt(c.share_median, 2) << " | "
       << detail::fmt(c.median) << " | (" << detail::fmt(c.ci.lo) << ", " << detail::fmt(c.ci.hi)
       << ") |\n";
  if (!r.comparisons.empty()) {
    os << "\n| comparison | Pr(>) | Pr(=) | Pr(<) |\n|---|---|---|---|\n";
    for (const auto& c : r.comparisons)
      os << "| " << c.a << " vs " << c.b << " | " << detail::fmt(c.greater, 3) << " | "
         << detail::fmt(c.equal, 3) << " | " << detail::fmt(c.less, 3) << " |\n";
  }
  return os.str();
}

}  // namespace nbpl
