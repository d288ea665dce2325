#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nbpl/data.hpp"
#include "nbpl/error.hpp"
#include "nbpl/experiment.hpp"
#include "nbpl/inference.hpp"
#include "nbpl/parallel.hpp"
#include "nbpl/posterior.hpp"
#include "nbpl/simlab.hpp"
#include "nbpl/solver.hpp"

namespace nbpl::cli {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, solver_error = 4 };

enum class Format { json, csv, md };

struct GlobalArgs {
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::string out = ".";
  Format format = Format::json;
};

struct DataArgs {
  std::string path;
  std::string outcome;
  std::string arm = "treat";
  std::vector<std::string> covariates;
  std::vector<double> propensity;
  std::vector<std::string> propensity_cols;
  double kappa = 0.01;
  bool warn_only = false;
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline double to_real(const std::string& s, const std::string& what) {
  auto v = nbpl::detail::parse_real(s);
  if (!v) throw ConfigError(what + ": '" + s + "' is not a number");
  return *v;
}

inline std::size_t to_count(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(what + ": '" + s + "' is not a nonnegative integer");
  return v;
}

inline std::size_t covariate_index(const Dataset& ds, const std::string& name) {
  const auto& names = ds.covariate_names();
  for (std::size_t k = 0; k < names.size(); ++k)
    if (names[k] == name) return k;
  if (!name.empty() && std::all_of(name.begin(), name.end(), ::isdigit)) {
    const auto k = to_count(name, "covariate index");
    if (k < ds.dim()) return k;
  }
  throw ConfigError("unknown covariate '" + name + "'");
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline std::string format_name(Format f) {
  switch (f) {
    case Format::csv: return "csv";
    case Format::md: return "md";
    default: return "json";
  }
}

}  // namespace detail

/// Class description `label=kind[:key=value]...`:
///   linear:dims=a+b[:intercept=0|1]
///   tree[:depth=2][:grid-max=64][:split-on=a+b]
///   finite:file=policies.json  |  finite:policies=never+all
/// with optional `capacity=q` and `basis=uniform|weighted` on any kind.
inline NamedClass parse_class(const std::string& arg, const Dataset& ds) {
  const auto eq = arg.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("class '" + arg + "' needs the form label=kind[:opts]");
  NamedClass nc;
  nc.label = arg.substr(0, eq);
  const auto parts = detail::split(arg.substr(eq + 1), ':');
  const std::string& kind = parts[0];
  std::map<std::string, std::string> kv;
  for (std::size_t k = 1; k < parts.size(); ++k) {
    const auto p = parts[k].find('=');
    if (p == std::string::npos) throw ConfigError("class option '" + parts[k] + "' needs key=value");
    kv[parts[k].substr(0, p)] = parts[k].substr(p + 1);
  }
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto coords = [&](const std::string& list) {
    std::vector<std::size_t> out;
    for (const auto& name : detail::split(list, '+')) out.push_back(detail::covariate_index(ds, name));
    return out;
  };

  if (kind == "linear") {
    LinearClass lin;
    if (auto v = take("dims"))
      lin.dims = coords(*v);
    else
      for (std::size_t k = 0; k < ds.dim(); ++k) lin.dims.push_back(k);
    if (auto v = take("intercept")) lin.include_intercept = *v != "0" && *v != "false";
    nc.spec.kind = std::move(lin);
  } else if (kind == "tree") {
    TreeClass tree;
    if (auto v = take("depth")) tree.max_depth = static_cast<int>(detail::to_count(*v, "tree depth"));
    std::size_t grid_max = 64;
    if (auto v = take("grid-max")) grid_max = detail::to_count(*v, "grid-max");
    if (grid_max == 0) throw ConfigError("grid-max must be positive");
    std::vector<std::size_t> on;
    if (auto v = take("split-on")) on = coords(*v);
    tree.split_grid = quantile_split_grid(ds.covariates(), ds.dim(), grid_max, on);
    nc.spec.kind = std::move(tree);
  } else if (kind == "finite") {
    FiniteClass fin;
    if (auto v = take("file")) {
      const auto j = detail::read_json_file(*v);
      const auto& arr = j.is_array() ? j : j.at("policies");
      try {
        for (const auto& p : arr) fin.policies.push_back(policy_from_json(p));
      } catch (const std::exception& e) {
        throw ConfigError(*v + ": " + e.what());
      }
    }
    if (auto v = take("policies")) {
      for (const auto& name : detail::split(*v, '+')) {
        if (name == "never")
          fin.policies.push_back(never_treat(ds.dim()));
        else if (name == "all")
          fin.policies.push_back(treat_all(ds.dim()));
        else
          throw ConfigError("unknown built-in policy '" + name + "' (use never or all)");
      }
    }
    nc.spec.kind = std::move(fin);
  } else {
    throw ConfigError("unknown class kind '" + kind + "' (use linear, tree or finite)");
  }
  if (auto v = take("capacity")) nc.spec.capacity = detail::to_real(*v, "capacity");
  if (auto v = take("basis")) {
    if (*v == "weighted")
      nc.spec.capacity_basis = CapacityBasis::weighted;
    else if (*v != "uniform")
      throw ConfigError("unknown capacity basis '" + *v + "'");
  }
  if (!kv.empty()) throw ConfigError("unknown class option '" + kv.begin()->first + "'");
  nc.spec.validate(ds.dim());
  return nc;
}

inline Dataset load_data(const DataArgs& a, std::ostream& err) {
  if (a.path.empty()) throw ConfigError("--data is required");
  if (a.outcome.empty()) throw ConfigError("--outcome is required");
  if (a.covariates.empty()) throw ConfigError("--covariates is required");
  if (a.propensity.empty() == a.propensity_cols.empty())
    throw ConfigError("give exactly one of --propensity and --propensity-cols");
  OverlapConfig oc{a.kappa, !a.warn_only};
  oc.check();
  PropensitySpec ps = a.propensity.empty() ? PropensitySpec{PropensityColumns{a.propensity_cols}}
                                           : PropensitySpec{ConstantPropensity{a.propensity}};
  Dataset ds = load_dataset(a.path, Schema{a.outcome, a.arm, a.covariates}, ps);
  const auto report = validate_overlap(ds, oc);
  if (!report.violations.empty()) {
    const std::string msg = std::to_string(report.violations.size()) +
                            " propensities outside [" + std::to_string(a.kappa) + ", " +
                            std::to_string(1 - a.kappa) + "]";
    if (!report.passed) throw DataError(msg);
    err << "warning: " << msg << '\n';
  }
  return ds;
}

namespace detail {

class Output {
 public:
  explicit Output(const std::string& dir) : dir_(dir) {}

  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  void ensure() const {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw DataError("cannot create " + dir_.string() + ": " + ec.message());
  }

  void write(const std::string& name, const std::string& content) const {
    ensure();
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) throw DataError("cannot write " + (dir_ / name).string());
    f << content;
    if (!f) throw DataError("write failed: " + (dir_ / name).string());
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

using nbpl::detail::fmt;
using nbpl::detail::fmt_exact;

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

inline std::uint64_t require_seed(const GlobalArgs& g, const std::string& cmd) {
  if (!g.seed) throw ConfigError(cmd + " is stochastic: --seed is required");
  return *g.seed;
}

inline std::size_t workers(const GlobalArgs& g) { return g.workers == 0 ? default_workers() : g.workers; }

inline std::string ewm_csv(const std::vector<std::pair<NamedClass, SolveResult>>& fits,
                           const std::vector<std::optional<BootstrapInterval>>& cis) {
  std::ostringstream os;
  os << "class,treated_share,welfare,ci_lo,ci_hi,exact\n";
  for (std::size_t k = 0; k < fits.size(); ++k) {
    os << fits[k].first.label << ',' << fmt_exact(fits[k].second.treated_share()) << ','
       << fmt_exact(fits[k].second.value) << ',';
    if (cis[k]) os << fmt_exact(cis[k]->ci.lo) << ',' << fmt_exact(cis[k]->ci.hi);
    else os << ',';
    os << ',' << (fits[k].second.exact ? "true" : "false") << '\n';
  }
  return os.str();
}

inline std::string ewm_md(const std::vector<std::pair<NamedClass, SolveResult>>& fits,
                          const std::vector<std::optional<BootstrapInterval>>& cis, double alpha) {
  std::ostringstream os;
  os << "| class | share | welfare | " << fmt(100 * (1 - alpha), 0) << "% bootstrap CI | exact |\n";
  os << "|---|---|---|---|---|\n";
  for (std::size_t k = 0; k < fits.size(); ++k) {
    os << "| " << fits[k].first.label << " | " << fmt(fits[k].second.treated_share(), 2) << " | "
       << fmt(fits[k].second.value) << " | ";
    if (cis[k]) os << "(" << fmt(cis[k]->ci.lo) << ", " << fmt(cis[k]->ci.hi) << ")";
    else os << "-";
    os << " | " << (fits[k].second.exact ? "yes" : "no") << " |\n";
  }
  return os.str();
}

inline std::string summary_csv(const SummaryReport& r) {
  std::ostringstream os;
  os << "class,median,ci_lo,ci_hi,share_median,share_ci_lo,share_ci_hi\n";
  for (const auto& c : r.classes)
    os << c.label << ',' << fmt_exact(c.median) << ',' << fmt_exact(c.ci.lo) << ',' << fmt_exact(c.ci.hi)
       << ',' << fmt_exact(c.share_median) << ',' << fmt_exact(c.share_ci.lo) << ','
       << fmt_exact(c.share_ci.hi) << '\n';
  return os.str();
}

inline std::string comparison_csv(const Comparison& c) {
  std::ostringstream os;
  os << "a,b,S,pr_greater,pr_equal,pr_less\n"
     << c.a << ',' << c.b << ',' << c.S << ',' << fmt_exact(c.greater) << ',' << fmt_exact(c.equal) << ','
     << fmt_exact(c.less) << '\n';
  return os.str();
}

inline std::string comparison_md(const Comparison& c) {
  std::ostringstream os;
  os << "| comparison | Pr(>) | Pr(=) | Pr(<) |\n|---|---|---|---|\n"
     << "| " << c.a << " vs " << c.b << " | " << fmt(c.greater, 3) << " | " << fmt(c.equal, 3) << " | "
     << fmt(c.less, 3) << " |\n";
  return os.str();
}

inline NbplRun read_draws(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_run_jsonl(in);
}

}  // namespace detail

/// Runs the command line `args` (args[0] is the program name). Results go
/// to `out`, diagnostics to `err`; the return value is the exit code.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Nonparametric Bayesian policy learning"};
  app.set_config("--config", "", "Read options from a TOML/INI file (flags take precedence)");
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every stochastic step");
  app.add_option("--workers", g.workers, "Worker threads (0 = all cores)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  const std::map<std::string, Format> formats{{"json", Format::json}, {"csv", Format::csv}, {"md", Format::md}};
  app.add_option("--format", g.format, "Report format")
      ->transform(CLI::CheckedTransformer(formats, CLI::ignore_case))
      ->default_str("json");

  DataArgs data;
  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", data.path, "CSV file with a header row");
    sub->add_option("--outcome", data.outcome, "Outcome column");
    sub->add_option("--arm", data.arm, "Arm column (0 = control)")->capture_default_str();
    sub->add_option("--covariates", data.covariates, "Covariate columns")->delimiter(',');
    sub->add_option("--propensity", data.propensity,
                    "Constant propensity: P(T=1), or one value per arm")
        ->delimiter(',');
    sub->add_option("--propensity-cols", data.propensity_cols,
                    "Per-row propensity columns: P(T=1), or one per arm")
        ->delimiter(',');
    sub->add_option("--kappa", data.kappa, "Overlap bound")->capture_default_str();
    sub->add_flag("--warn-only", data.warn_only, "Warn instead of failing on overlap violations");
  };

  std::vector<std::string> class_args;
  double alpha = 0.05;
  std::size_t bootstrap = 0;

  auto* validate = app.add_subcommand("validate", "Check a dataset and its overlap");
  add_data(validate);

  auto* scores = app.add_subcommand("scores", "Write per-row IPW scores");
  add_data(scores);

  auto* ewm = app.add_subcommand("ewm", "Empirical welfare maximization");
  add_data(ewm);
  ewm->add_option("--class", class_args, "label=kind[:opts], repeatable");
  ewm->add_option("--bootstrap", bootstrap, "Bootstrap replicates for the welfare CI (0 = none)");
  ewm->add_option("--alpha", alpha, "Interval level is 1 - alpha")->capture_default_str();

  std::size_t draws = 1000;
  bool uniform_weights = false, with_ewm = false;
  std::string sampler = "bb";
  double base_mass = 0.0;
  std::string base_data;
  std::size_t truncation = 0;
  auto* nbpl = app.add_subcommand("nbpl", "Posterior draws of optimal rules and welfare");
  add_data(nbpl);
  nbpl->add_option("--class", class_args, "label=kind[:opts], repeatable");
  nbpl->add_option("--draws,-S", draws, "Posterior draws")->capture_default_str();
  nbpl->add_option("--alpha", alpha, "Credible level is 1 - alpha")->capture_default_str();
  nbpl->add_flag("--uniform-weights", uniform_weights, "Use weights 1/n in every draw");
  nbpl->add_flag("--ewm", with_ewm, "Also report the EWM fit per class");
  nbpl->add_option("--bootstrap", bootstrap, "Bootstrap replicates for the EWM CI (with --ewm)");
  nbpl->add_option("--sampler", sampler, "bb (Bayesian bootstrap) or dp (stick-breaking)")
      ->check(CLI::IsMember({"bb", "dp"}));
  nbpl->add_option("--base-mass", base_mass, "Prior mass |alpha| for --sampler dp");
  nbpl->add_option("--base-data", base_data, "CSV (same schema) whose rows form the base measure");
  nbpl->add_option("--truncation", truncation, "Stick-breaking K (0 = residual rule)");

  std::string draws_path, label_a, label_b;
  auto* compare = app.add_subcommand("compare", "Compare two classes of a saved run");
  compare->add_option("--draws", draws_path, "draws.jsonl written by nbpl")->required();
  compare->add_option("--a", label_a, "First class label")->required();
  compare->add_option("--b", label_b, "Second class label")->required();

  std::string experiment_path;
  auto* simulate = app.add_subcommand("simulate", "Run a regret or selection experiment");
  simulate->add_option("--experiment", experiment_path, "Experiment JSON file")->required();

  auto* figures = app.add_subcommand("export-figures", "Write CDF tables of a saved run");
  figures->add_option("--draws", draws_path, "draws.jsonl written by nbpl")->required();
  figures->add_option("--alpha", alpha, "Credible level is 1 - alpha")->capture_default_str();

  std::vector<std::string> argv_store = args.empty() ? std::vector<std::string>{"nbpl"} : args;
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return config_error;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  const detail::Output output(g.out);
  try {
    if (validate->parsed()) {
      DataArgs a = data;
      a.warn_only = true;
      const Dataset ds = load_data(a, err);
      const auto report = validate_overlap(ds, OverlapConfig{data.kappa, !data.warn_only});
      nlohmann::json j = report;
      j["rows"] = ds.size();
      j["arms"] = ds.n_arms();
      j["covariates"] = ds.covariate_names();
      std::string text;
      if (g.format == Format::csv) {
        std::ostringstream os;
        os << "row,arm,value\n";
        for (const auto& v : report.violations)
          os << v.row + 1 << ',' << v.arm << ',' << nbpl::detail::fmt_exact(v.value) << '\n';
        text = os.str();
      } else if (g.format == Format::md) {
        std::ostringstream os;
        os << "| rows | arms | violations | passed |\n|---|---|---|---|\n| " << ds.size() << " | "
           << ds.n_arms() << " | " << report.violations.size() << " | " << (report.passed ? "yes" : "no")
           << " |\n";
        text = os.str();
      } else {
        text = detail::dump(j);
      }
      output.write("validation." + detail::format_name(g.format), text);
      out << text;
      return report.passed ? ok : data_error;
    }

    if (scores->parsed()) {
      const Dataset ds = load_data(data, err);
      const ScoreTable st = compute_scores(ds);
      std::string text;
      if (g.format == Format::json) {
        nlohmann::json j = nlohmann::json::array();
        for (std::size_t i = 0; i < st.size(); ++i) {
          std::vector<double> z(st.n_arms());
          for (std::size_t k = 0; k < st.n_arms(); ++k) z[k] = st.z(i, k);
          j.push_back({{"row", i + 1}, {"z", z}, {"contrast", std::vector<double>(st.contrasts(i).begin(), st.contrasts(i).end())}});
        }
        text = detail::dump(j);
      } else {
        std::ostringstream os;
        const bool md = g.format == Format::md;
        std::vector<std::string> cols{"row"};
        for (std::size_t k = 0; k < st.n_arms(); ++k) cols.push_back("z" + std::to_string(k));
        if (st.n_arms() == 2) cols.push_back("g");
        else
          for (std::size_t k = 1; k < st.n_arms(); ++k) cols.push_back("g" + std::to_string(k));
        const std::string sep = md ? " | " : ",";
        if (md) os << "| ";
        for (std::size_t c = 0; c < cols.size(); ++c) os << (c ? sep : "") << cols[c];
        os << (md ? " |\n|" : "\n");
        if (md) {
          for (std::size_t c = 0; c < cols.size(); ++c) os << "---|";
          os << '\n';
        }
        for (std::size_t i = 0; i < st.size(); ++i) {
          if (md) os << "| ";
          os << i + 1;
          for (std::size_t k = 0; k < st.n_arms(); ++k) os << sep << nbpl::detail::fmt_exact(st.z(i, k));
          for (std::size_t k = 1; k < st.n_arms(); ++k) os << sep << nbpl::detail::fmt_exact(st.contrast(i, k));
          os << (md ? " |\n" : "\n");
        }
        text = os.str();
      }
      output.write("scores." + detail::format_name(g.format), text);
      out << text;
      return ok;
    }

    if (ewm->parsed()) {
      if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
      const Dataset ds = load_data(data, err);
      if (class_args.empty()) throw ConfigError("at least one --class is required");
      std::uint64_t seed = 0;
      if (bootstrap > 0) seed = detail::require_seed(g, "ewm --bootstrap");
      const ScoreTable st = compute_scores(ds);
      std::vector<std::pair<NamedClass, SolveResult>> fits;
      std::vector<std::optional<BootstrapInterval>> cis;
      for (const auto& c : class_args) {
        NamedClass nc = parse_class(c, ds);
        SolveResult r = ewm_fit(st, nc.spec);
        std::optional<BootstrapInterval> ci;
        if (bootstrap > 0)
          ci = ewm_bootstrap_ci(ds, nc.spec, BootstrapOptions{bootstrap, alpha, seed, detail::workers(g), {}});
        fits.emplace_back(std::move(nc), std::move(r));
        cis.push_back(std::move(ci));
      }
      std::string text;
      if (g.format == Format::csv) {
        text = detail::ewm_csv(fits, cis);
      } else if (g.format == Format::md) {
        text = detail::ewm_md(fits, cis, alpha);
      } else {
        nlohmann::json j = nlohmann::json::array();
        for (std::size_t k = 0; k < fits.size(); ++k) {
          nlohmann::json e = to_json_value(fits[k].second);
          e = {{"class", fits[k].first.label}, {"spec", class_to_json(fits[k].first.spec)}, {"result", e},
               {"treated_share", fits[k].second.treated_share()}};
          if (cis[k])
            e["bootstrap"] = {{"B", bootstrap},
                              {"alpha", alpha},
                              {"ci", {cis[k]->ci.lo, cis[k]->ci.hi}},
                              {"replicates", cis[k]->replicates},
                              {"skipped", cis[k]->skipped}};
          j.push_back(std::move(e));
        }
        text = detail::dump(j);
      }
      output.write("ewm." + detail::format_name(g.format), text);
      out << text;
      return ok;
    }

    if (nbpl->parsed()) {
      if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
      if (draws == 0) throw ConfigError("--draws must be at least 1");
      const std::uint64_t seed = detail::require_seed(g, "nbpl");
      const Dataset ds = load_data(data, err);
      if (class_args.empty()) throw ConfigError("at least one --class is required");
      std::vector<NamedClass> classes;
      for (const auto& c : class_args) classes.push_back(parse_class(c, ds));
      const ScoreTable st = compute_scores(ds);
      NbplOptions opt;
      opt.S = draws;
      opt.seed = seed;
      opt.workers = detail::workers(g);
      opt.uniform_weights = uniform_weights;
      NbplRun run;
      if (sampler == "dp") {
        if (uniform_weights) throw ConfigError("--uniform-weights applies to the Bayesian bootstrap only");
        if (!(base_mass >= 0.0)) throw ConfigError("--base-mass must be nonnegative");
        DpOptions dp;
        dp.base.total_mass = base_mass;
        if (base_mass > 0.0) {
          if (base_data.empty()) throw ConfigError("--base-mass > 0 needs --base-data");
          DataArgs b = data;
          b.path = base_data;
          const ScoreTable bs = compute_scores(load_data(b, err));
          std::vector<ScoredPoint> pts;
          for (std::size_t i = 0; i < bs.size(); ++i) {
            ScoredPoint p;
            for (std::size_t k = 0; k < bs.n_arms(); ++k) p.z.push_back(bs.z(i, k));
            p.x.assign(bs.x(i).begin(), bs.x(i).end());
            pts.push_back(std::move(p));
          }
          dp.base = BaseMeasure::from_points(base_mass, std::move(pts));
        }
        if (truncation > 0) dp.K = truncation;
        run = run_nbpl_dp(st, classes, opt, dp);
      } else {
        run = run_nbpl(st, classes, opt);
      }
      SummaryReport report = summarize(run, alpha);
      if (with_ewm) {
        for (const auto& c : classes) {
          const SolveResult fit = ewm_fit(st, c.spec);
          std::optional<Interval> ci;
          if (bootstrap > 0)
            ci = ewm_bootstrap_ci(ds, c.spec,
                                  BootstrapOptions{bootstrap, alpha, derive_seed(seed, {1, 0}),
                                                   detail::workers(g), {}})
                     .ci;
          attach_ewm(report, run, c.label, fit, ci);
        }
      }
      output.ensure();
      {
        std::ostringstream os;
        write_run_jsonl(os, run);
        output.write("draws.jsonl", os.str());
      }
      output.write("summary.json", detail::dump(to_json_value(report)));
      nlohmann::json comps = nlohmann::json::array();
      for (const auto& c : report.comparisons) comps.push_back(to_json_value(c));
      output.write("comparisons.json", detail::dump(comps));
      export_figure_data(report, output.path("figures"));
      std::string text;
      if (g.format == Format::csv) {
        text = detail::summary_csv(report);
        output.write("summary.csv", text);
      } else if (g.format == Format::md) {
        text = markdown_table(report);
        output.write("summary.md", text);
      } else {
        text = detail::dump(to_json_value(report));
      }
      out << text;
      return ok;
    }

    if (compare->parsed()) {
      const NbplRun run = detail::read_draws(draws_path);
      const Comparison c = compare_classes(run, label_a, label_b);
      std::string text;
      if (g.format == Format::csv) text = detail::comparison_csv(c);
      else if (g.format == Format::md) text = detail::comparison_md(c);
      else text = detail::dump(to_json_value(c));
      output.write("comparison_" + nbpl::detail::safe_name(c.a) + "__" + nbpl::detail::safe_name(c.b) + "." +
                       detail::format_name(g.format),
                   text);
      SummaryReport only;
      only.comparisons.push_back(c);
      export_figure_data(only, output.path("figures"));
      out << text;
      return ok;
    }

    if (simulate->parsed()) {
      const auto exp = parse_experiment(detail::read_json_file(experiment_path));
      const std::uint64_t seed = g.seed ? *g.seed : exp.seed ? *exp.seed : detail::require_seed(g, "simulate");
      nlohmann::json j;
      std::string csv;
      if (exp.kind == ExperimentKind::regret) {
        auto opt = exp.options;
        opt.seed = seed;
        opt.workers = detail::workers(g);
        const auto rep = sim::regret_experiment(exp.dgp, exp.class_a, opt);
        j = sim::to_json_value(rep);
        csv = sim::to_csv(rep);
      } else {
        sim::SelectionOptions opt;
        static_cast<sim::ExperimentOptions&>(opt) = exp.options;
        opt.seed = seed;
        opt.workers = detail::workers(g);
        if (exp.epsilon) opt.epsilon = *exp.epsilon;
        const auto rep = sim::selection_experiment(exp.dgp, exp.class_a, exp.class_b, opt);
        j = sim::to_json_value(rep);
        csv = sim::to_csv(rep);
      }
      j["name"] = exp.name;
      j["seed"] = seed;
      output.write("report.json", detail::dump(j));
      output.write("report.csv", csv);
      std::string text = g.format == Format::csv ? csv : detail::dump(j);
      if (g.format == Format::md) text = experiment_markdown(j);
      out << text;
      return ok;
    }

    if (figures->parsed()) {
      const NbplRun run = detail::read_draws(draws_path);
      const SummaryReport report = summarize(run, alpha);
      const auto files = export_figure_data(report, output.path("figures"));
      for (const auto& f : files) out << f.string() << '\n';
      return ok;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return config_error;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return data_error;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << '\n';
    return solver_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return failure;
  }
  return config_error;
}

}  // namespace nbpl::cli
