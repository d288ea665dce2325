#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "nbpl/error.hpp"

namespace nbpl {

/// Experimental data: rows (y, t, x) with known assignment probabilities.
///
/// Arms are indexed 0..n_arms-1, arm 0 being the status quo (control).
/// Propensities are either one vector shared by all rows or an n x n_arms
/// row-major matrix. Construction enforces every structural invariant; the
/// overlap bound kappa is checked separately by validate_overlap().
class Dataset {
 public:
  Dataset(std::vector<double> y, std::vector<int> arm, std::vector<double> x, std::size_t d,
          std::size_t n_arms, std::vector<double> propensity, bool per_row_propensity,
          std::vector<std::string> covariate_names = {})
      : y_(std::move(y)),
        arm_(std::move(arm)),
        x_(std::move(x)),
        d_(d),
        n_arms_(n_arms),
        propensity_(std::move(propensity)),
        per_row_(per_row_propensity),
        names_(std::move(covariate_names)) {
    check();
  }

  std::size_t size() const noexcept { return y_.size(); }
  std::size_t dim() const noexcept { return d_; }
  std::size_t n_arms() const noexcept { return n_arms_; }
  bool per_row_propensity() const noexcept { return per_row_; }

  double y(std::size_t i) const { return y_[i]; }
  int arm(std::size_t i) const { return arm_[i]; }
  std::span<const double> x(std::size_t i) const { return {x_.data() + i * d_, d_}; }
  const std::vector<double>& covariates() const noexcept { return x_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }

  double propensity(std::size_t i, std::size_t j) const {
    return per_row_ ? propensity_[i * n_arms_ + j] : propensity_[j];
  }

  /// Rows selected by index (with repetition), propensities carried along.
  Dataset subset(std::span<const std::size_t> rows) const {
    std::vector<double> ys, xs, p;
    std::vector<int> t;
    ys.reserve(rows.size());
    t.reserve(rows.size());
    xs.reserve(rows.size() * d_);
    for (auto r : rows) {
      ys.push_back(y_[r]);
      t.push_back(arm_[r]);
      auto xr = x(r);
      xs.insert(xs.end(), xr.begin(), xr.end());
      if (per_row_)
        for (std::size_t j = 0; j < n_arms_; ++j) p.push_back(propensity(r, j));
    }
    if (!per_row_) p = propensity_;
    return Dataset(std::move(ys), std::move(t), std::move(xs), d_, n_arms_, std::move(p), per_row_,
                   names_);
  }

 private:
  void check() const {
    const std::size_t n = y_.size();
    if (n == 0) throw DataError("no data rows");
    if (d_ == 0) throw DataError("at least one covariate is required");
    if (n_arms_ < 2) throw DataError("at least two arms are required");
    if (arm_.size() != n) throw DataError("arm column length differs from outcome length");
    if (x_.size() != n * d_) throw DataError("covariate matrix has the wrong size");
    if (!names_.empty() && names_.size() != d_)
      throw DataError("covariate name count differs from covariate dimension");
    const std::size_t rows = per_row_ ? n : 1;
    if (propensity_.size() != rows * n_arms_) throw DataError("propensity table has the wrong size");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(y_[i])) throw DataError("row " + std::to_string(i + 1) + ": non-finite outcome");
      if (arm_[i] < 0 || static_cast<std::size_t>(arm_[i]) >= n_arms_)
        throw DataError("row " + std::to_string(i + 1) + ": arm index " + std::to_string(arm_[i]) +
                        " out of range 0.." + std::to_string(n_arms_ - 1));
      for (std::size_t k = 0; k < d_; ++k)
        if (!std::isfinite(x_[i * d_ + k]))
          throw DataError("row " + std::to_string(i + 1) + ": non-finite covariate");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < n_arms_; ++j) {
        const double e = propensity_[r * n_arms_ + j];
        if (!std::isfinite(e) || e <= 0.0 || e >= 1.0)
          throw DataError("propensity outside (0,1) at row " + std::to_string(r + 1) + ", arm " +
                          std::to_string(j));
        sum += e;
      }
      if (std::abs(sum - 1.0) > 1e-9)
        throw DataError("propensities at row " + std::to_string(r + 1) + " do not sum to 1");
    }
  }

  std::vector<double> y_;
  std::vector<int> arm_;
  std::vector<double> x_;
  std::size_t d_;
  std::size_t n_arms_;
  std::vector<double> propensity_;
  bool per_row_;
  std::vector<std::string> names_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

struct Schema {
  std::string outcome;
  std::string arm;
  std::vector<std::string> covariates;
};

/// Constant propensities. A single value e means binary treatment with
/// P(T=1) = e; otherwise one probability per arm.
struct ConstantPropensity {
  std::vector<double> values;
};

/// Per-row propensities read from columns. A single column holds P(T=1) for
/// binary treatment; otherwise one column per arm.
struct PropensityColumns {
  std::vector<std::string> columns;
};

using PropensitySpec = std::variant<ConstantPropensity, PropensityColumns>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.emplace_back(trim(cur));
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

inline std::optional<int> parse_arm(std::string_view s) {
  s = trim(s);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (!s.empty() && ec == std::errc() && ptr == s.data() + s.size()) return v;
  // Accept integral reals such as "1.0".
  if (auto r = parse_real(s); r && *r == std::floor(*r) && std::abs(*r) < 1e9)
    return static_cast<int>(*r);
  return std::nullopt;
}

}  // namespace detail

/// Reads a UTF-8, comma-separated file with a header row.
inline Dataset load_dataset(const std::string& path, const Schema& schema,
                            const PropensitySpec& propensity) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = detail::split_csv_line(line);

  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };

  const std::size_t y_col = column(schema.outcome);
  const std::size_t t_col = column(schema.arm);
  if (schema.covariates.empty()) throw DataError("no covariate columns given");
  std::vector<std::size_t> x_cols;
  for (const auto& c : schema.covariates) x_cols.push_back(column(c));

  std::vector<std::size_t> e_cols;
  std::vector<double> constant;
  std::size_t n_arms = 0;
  if (const auto* cp = std::get_if<ConstantPropensity>(&propensity)) {
    if (cp->values.empty()) throw DataError("empty constant propensity");
    constant = cp->values.size() == 1 ? std::vector<double>{1.0 - cp->values[0], cp->values[0]}
                                      : cp->values;
    n_arms = constant.size();
  } else {
    const auto& pc = std::get<PropensityColumns>(propensity);
    if (pc.columns.empty()) throw DataError("empty propensity column list");
    for (const auto& c : pc.columns) e_cols.push_back(column(c));
    n_arms = pc.columns.size() == 1 ? 2 : pc.columns.size();
  }

  std::vector<double> y, x, e;
  std::vector<int> t;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, found " +
                      std::to_string(cells.size()));
    auto real = [&](std::size_t col) {
      auto v = detail::parse_real(cells[col]);
      if (!v)
        throw DataError("line " + std::to_string(line_no) + ", column '" + header[col] +
                        "': cannot parse '" + cells[col] + "' as a finite number");
      return *v;
    };
    y.push_back(real(y_col));
    auto arm = detail::parse_arm(cells[t_col]);
    if (!arm || *arm < 0)
      throw DataError("line " + std::to_string(line_no) + ", column '" + header[t_col] +
                      "': cannot parse '" + cells[t_col] + "' as a nonnegative arm index");
    if (static_cast<std::size_t>(*arm) >= n_arms)
      throw DataError("line " + std::to_string(line_no) + ": arm index " + std::to_string(*arm) +
                      " out of range 0.." + std::to_string(n_arms - 1));
    t.push_back(*arm);
    for (auto c : x_cols) x.push_back(real(c));
    if (!e_cols.empty()) {
      if (e_cols.size() == 1) {
        const double p1 = real(e_cols[0]);
        e.push_back(1.0 - p1);
        e.push_back(p1);
      } else {
        for (auto c : e_cols) e.push_back(real(c));
      }
      for (std::size_t j = e.size() - n_arms; j < e.size(); ++j)
        if (e[j] <= 0.0 || e[j] >= 1.0)
          throw DataError("line " + std::to_string(line_no) + ": propensity outside (0,1)");
    }
  }
  if (y.empty()) throw DataError(path + ": no data rows");
  const bool per_row = !e_cols.empty();
  return Dataset(std::move(y), std::move(t), std::move(x), x_cols.size(), n_arms,
                 per_row ? std::move(e) : std::move(constant), per_row, schema.covariates);
}

// ---------------------------------------------------------------------------
// Overlap validation

struct OverlapConfig {
  double kappa = 0.01;
  bool strict = true;

  void check() const {
    if (!(kappa > 0.0 && kappa < 0.5)) throw ConfigError("kappa must lie in (0, 0.5)");
  }
};

struct OverlapViolation {
  std::size_t row;
  std::size_t arm;
  double value;
};

struct ValidationReport {
  bool passed = true;
  std::vector<OverlapViolation> violations;
};

/// Lists every (row, arm) propensity outside [kappa, 1 - kappa]. Never throws
/// on bad data; a strict configuration marks the report failing instead.
inline ValidationReport validate_overlap(const Dataset& ds, const OverlapConfig& cfg) {
  ValidationReport report;
  const double lo = cfg.kappa, hi = 1.0 - cfg.kappa;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.n_arms(); ++j) {
      const double e = ds.propensity(i, j);
      if (e < lo || e > hi) report.violations.push_back({i, j, e});
    }
  report.passed = !(cfg.strict && !report.violations.empty());
  return report;
}

inline void to_json(nlohmann::json& j, const ValidationReport& r) {
  j = nlohmann::json{{"passed", r.passed}, {"violations", nlohmann::json::array()}};
  for (const auto& v : r.violations)
    j["violations"].push_back({{"row", v.row}, {"arm", v.arm}, {"value", v.value}});
}

// ---------------------------------------------------------------------------
// IPW scores

/// Per-row inverse-propensity-weighted scores.
///
///   z(i, j)        = y_i * 1{t_i = j} / e_j(x_i)
///   contrast(i, j) = z(i, j) - z(i, 0)          (contrast(i, 0) == 0)
///
/// With two arms, contrast(i, 1) is the binary score
/// y t / e(x) - y (1 - t) / (1 - e(x)). Weighted sums of contrasts give welfare
/// relative to treating nobody.
class ScoreTable {
 public:
  ScoreTable() = default;

  /// Builds a table from raw per-arm scores z (n x n_arms) and covariates x (n x d).
  ScoreTable(std::vector<double> z, std::vector<double> x, std::size_t n_arms, std::size_t d)
      : n_arms_(n_arms), d_(d), z_(std::move(z)), x_(std::move(x)) {
    if (n_arms_ < 2 || d_ == 0) throw DataError("score table needs >= 2 arms and >= 1 covariate");
    if (z_.size() % n_arms_ != 0) throw DataError("score matrix has the wrong size");
    n_ = z_.size() / n_arms_;
    if (x_.size() != n_ * d_) throw DataError("covariate matrix has the wrong size");
    contrast_.resize(z_.size());
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_arms_; ++j)
        contrast_[i * n_arms_ + j] = j == 0 ? 0.0 : z_[i * n_arms_ + j] - z_[i * n_arms_];
  }

  /// Table whose contrasts are given directly (z(i, 0) = 0).
  static ScoreTable from_contrasts(std::vector<double> contrasts, std::vector<double> x,
                                   std::size_t n_arms, std::size_t d) {
    return ScoreTable(std::move(contrasts), std::move(x), n_arms, d);
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t n_arms() const noexcept { return n_arms_; }
  std::size_t dim() const noexcept { return d_; }

  double z(std::size_t i, std::size_t j) const { return z_[i * n_arms_ + j]; }
  double contrast(std::size_t i, std::size_t j) const { return contrast_[i * n_arms_ + j]; }
  std::span<const double> contrasts(std::size_t i) const {
    return {contrast_.data() + i * n_arms_, n_arms_};
  }
  std::span<const double> x(std::size_t i) const { return {x_.data() + i * d_, d_}; }
  const std::vector<double>& covariates() const noexcept { return x_; }

  /// Binary score vector g (requires two arms).
  std::vector<double> binary() const {
    if (n_arms_ != 2) throw SolverError("binary scores requested for a multi-arm table");
    std::vector<double> g(n_);
    for (std::size_t i = 0; i < n_; ++i) g[i] = contrast_[i * 2 + 1];
    return g;
  }

 private:
  std::size_t n_ = 0;
  std::size_t n_arms_ = 2;
  std::size_t d_ = 1;
  std::vector<double> z_;
  std::vector<double> x_;
  std::vector<double> contrast_;
};

inline ScoreTable compute_scores(const Dataset& ds) {
  const std::size_t n = ds.size(), a = ds.n_arms();
  std::vector<double> z(n * a, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = static_cast<std::size_t>(ds.arm(i));
    const double e = ds.propensity(i, t);
    if (!(e > 0.0)) throw DataError("zero propensity at row " + std::to_string(i + 1));
    z[i * a + t] = ds.y(i) / e;
  }
  return ScoreTable(std::move(z), ds.covariates(), a, ds.dim());
}

}  // namespace nbpl
