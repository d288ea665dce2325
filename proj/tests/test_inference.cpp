#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include <nbpl/nbpl.hpp>

#include "test_util.hpp"

using namespace nbpl;

namespace {

/// A run whose class k has the given draw values (policies are placeholders).
NbplRun fake_run(const std::vector<std::vector<double>>& values) {
  NbplRun run;
  run.S = values.at(0).size();
  run.n = 1;
  for (std::size_t k = 0; k < values.size(); ++k) {
    run.classes.push_back({"c" + std::to_string(k), PolicyClassSpec{FiniteClass{{never_treat(1)}}, {}, {}}});
    std::vector<ClassDraw> d;
    for (double v : values[k]) d.push_back({never_treat(1), v, {1.0, 0.0}, true});
    run.draws.push_back(std::move(d));
  }
  return run;
}

std::vector<double> one_to(std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<double>(i + 1);
  return v;
}

/// Hand evaluation of the 1-based-rank interpolation rule.
double by_hand(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1) * p + 1;
  const auto lo = static_cast<std::size_t>(h);
  if (lo >= sorted.size()) return sorted.back();
  return sorted[lo - 1] + (h - static_cast<double>(lo)) * (sorted[lo] - sorted[lo - 1]);
}

Dataset toy() { return Dataset({1, 2, 3}, {1, 0, 1}, {0.1, 0.5, 0.9}, 1, 2, {0.5, 0.5}, false, {"x"}); }

}  // namespace

TEST(Summarize, ConstantDraws) {
  const auto r = summarize(fake_run({std::vector<double>(50, 0.7)}), 0.05);
  EXPECT_EQ(r.classes[0].median, 0.7);
  EXPECT_EQ(r.classes[0].ci.lo, 0.7);
  EXPECT_EQ(r.classes[0].ci.hi, 0.7);
  ASSERT_EQ(r.classes[0].cdf.size(), 1u);
  EXPECT_EQ(r.classes[0].cdf[0].cdf, 1.0);
}

TEST(Summarize, OneToHundred) {
  const auto v = one_to(100);
  const auto r = summarize(fake_run({v}), 0.05);
  EXPECT_DOUBLE_EQ(r.classes[0].median, 50.5);
  EXPECT_DOUBLE_EQ(r.classes[0].ci.lo, by_hand(v, 0.025));
  EXPECT_DOUBLE_EQ(r.classes[0].ci.hi, by_hand(v, 0.975));
  EXPECT_DOUBLE_EQ(r.classes[0].ci.lo, 3.475);
  EXPECT_DOUBLE_EQ(r.classes[0].ci.hi, 97.525);
}

TEST(Summarize, OrderInvariant) {
  auto v = one_to(37);
  for (auto& x : v) x = std::sin(x);
  auto w = v;
  std::mt19937_64 gen(1);
  std::shuffle(w.begin(), w.end(), gen);
  const auto a = to_json_value(summarize(fake_run({v}), 0.1));
  const auto b = to_json_value(summarize(fake_run({w}), 0.1));
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Summarize, RejectsBadAlpha) {
  EXPECT_THROW(summarize(fake_run({{1.0}}), 0.0), ConfigError);
  EXPECT_THROW(summarize(fake_run({{1.0}}), 1.0), ConfigError);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Compare, IdenticalShiftedAndSymmetric) {
  const auto v = one_to(20);
  auto up = v;
  for (auto& x : up) x += 1.0;
  const auto same = compare_draws(v, v);
  EXPECT_EQ(same.equal, 1.0);
  EXPECT_EQ(same.greater, 0.0);
  EXPECT_EQ(same.less, 0.0);
  EXPECT_EQ(compare_draws(up, v).greater, 1.0);

  std::mt19937_64 gen(2);
  std::normal_distribution<double> z;
  std::vector<double> a(300), b(300);
  for (std::size_t i = 0; i < 300; ++i) {
    a[i] = z(gen);
    b[i] = i % 5 == 0 ? a[i] : z(gen);
  }
  const auto ab = compare_draws(a, b), ba = compare_draws(b, a);
  EXPECT_EQ(ab.greater, ba.less);
  EXPECT_EQ(ab.less, ba.greater);
  EXPECT_NEAR(ab.greater + ab.equal + ab.less, 1.0, 1e-15);
  EXPECT_THROW(compare_draws(a, {1.0}), ConfigError);
}

TEST(Compare, NestedClassesNeverLose) {
  sim::DgpSpec dgp;
  dgp.covariates = sim::UniformBox{{0, 0}, {1, 1}};
  dgp.effects = sim::binary_effect([](std::span<const double> x) { return x[1] - 0.5; });
  const auto s = compute_scores(sim::make_dataset(dgp, 150, 3));
  const auto grid = quantile_split_grid(s.covariates(), 2, 8);
  NbplOptions opt;
  opt.S = 200;
  opt.seed = 4;
  const auto run = run_nbpl(s,
                            {{"deep", {TreeClass{2, grid}, std::nullopt, CapacityBasis::uniform}},
                             {"stump", {TreeClass{1, grid}, std::nullopt, CapacityBasis::uniform}}},
                            opt);
  EXPECT_EQ(compare_classes(run, "deep", "stump").less, 0.0);
  EXPECT_THROW(compare_classes(run, "deep", "missing"), ConfigError);
}

TEST(PosteriorPercentile, StrictlyBelow) {
  const auto v = one_to(10);
  EXPECT_EQ(posterior_percentile(v, 3.0), 0.2);
  EXPECT_EQ(posterior_percentile(v, 0.0), 0.0);
  EXPECT_EQ(posterior_percentile(v, 11.0), 1.0);
}

TEST(Ewm, ToyAndAllNegative) {
  const PolicyClassSpec lin{LinearClass{{0}, true}, std::nullopt, CapacityBasis::uniform};
  const auto fit = ewm_fit(toy(), lin);
  EXPECT_DOUBLE_EQ(fit.value, 2.0);
  EXPECT_EQ(assign(fit.policy, std::vector<double>{0.9}), 1);
  EXPECT_EQ(assign(fit.policy, std::vector<double>{0.5}), 0);
  const auto neg = ScoreTable::from_contrasts({0, -1, 0, -2}, {0.0, 1.0}, 2, 1);
  EXPECT_EQ(ewm_fit(neg, lin).value, 0.0);
}

TEST(EwmBootstrap, ConstantScoresGiveDegenerateInterval) {
  const std::size_t n = 40;
  std::vector<double> y(n, 2.0), x(n);
  std::vector<int> t(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<double>(i);
    if (i % 2 == 0) {
      t[i] = 0;
      y[i] = -2.0;
    }
  }
  // Treated y = 2 and control y = -2 at e = 0.5: every contrast is 4.
  const Dataset ds(y, t, x, 1, 2, {0.5, 0.5}, false);
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(compute_scores(ds).contrast(i, 1), 4.0);
  const PolicyClassSpec cls{TreeClass{1, {{5.0, 20.0}}}, std::nullopt, CapacityBasis::uniform};
  for (std::size_t B : {10u, 200u}) {
    BootstrapOptions opt;
    opt.B = B;
    opt.seed = 1;
    const auto ci = ewm_bootstrap_ci(ds, cls, opt);
    EXPECT_NEAR(ci.ci.lo, 4.0, 1e-12);
    EXPECT_NEAR(ci.ci.hi, 4.0, 1e-12);
  }
}

TEST(EwmBootstrap, ReproducibleAndWorkerFree) {
  sim::DgpSpec dgp;
  dgp.covariates = sim::UniformBox{{0}, {1}};
  dgp.effects = sim::binary_effect([](std::span<const double> x) { return x[0] - 0.3; });
  const auto ds = sim::make_dataset(dgp, 120, 5);
  const PolicyClassSpec lin{LinearClass{{0}, true}, 0.6, CapacityBasis::uniform};
  BootstrapOptions opt;
  opt.B = 100;
  opt.seed = 9;
  const auto a = ewm_bootstrap_ci(ds, lin, opt);
  opt.workers = 4;
  const auto b = ewm_bootstrap_ci(ds, lin, opt);
  EXPECT_EQ(a.ci.lo, b.ci.lo);
  EXPECT_EQ(a.ci.hi, b.ci.hi);
  EXPECT_LE(a.ci.lo, a.ci.hi);
  EXPECT_EQ(a.replicates + a.skipped, 100u);
  opt.B = 1;
  EXPECT_THROW(ewm_bootstrap_ci(ds, lin, opt), ConfigError);
}

TEST(EwmBootstrap, TinySampleWithOneArmResamplesFails) {
  BootstrapOptions opt;
  opt.B = 50;
  opt.seed = 1;
  EXPECT_THROW(ewm_bootstrap_ci(toy(), {LinearClass{{0}, true}, std::nullopt, CapacityBasis::uniform}, opt),
               DataError);
}

TEST(FigureData, CdfRowsAndComparisons) {
  testutil::TempDir dir;
  const auto single = summarize(fake_run({{1.0, 2.0, 2.0, 3.0}}), 0.05);
  const auto files = export_figure_data(single, dir.path() / "one");
  ASSERT_EQ(files.size(), 1u);
  const auto text = testutil::read_file(files[0]);
  EXPECT_EQ(text.substr(0, text.find('\n')), "value,cdf");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(text.find("3,1\n"), std::string::npos);

  const auto pair = summarize(fake_run({{1.0, 2.0}, {0.5, 2.0}}), 0.05);
  const auto two = export_figure_data(pair, dir.path() / "two");
  ASSERT_EQ(two.size(), 3u);
  EXPECT_EQ(two[2].filename(), "diff_c0__c1.csv");
}

TEST(Reports, JsonAndMarkdownCarryEwm) {
  auto run = fake_run({one_to(10), one_to(10)});
  auto rep = summarize(run, 0.1);
  SolveResult fit;
  fit.policy = never_treat(1);
  fit.value = 4.0;
  fit.shares = {1.0, 0.0};
  attach_ewm(rep, run, "c0", fit, Interval{1.0, 6.0});
  const auto j = to_json_value(rep);
  EXPECT_EQ(j["classes"][0]["ewm"]["posterior_percentile"], 0.3);
  EXPECT_EQ(j["comparisons"][0]["pr_equal"], 1.0);
  const auto md = markdown_table(rep);
  EXPECT_NE(md.find("| EWM | c0 |"), std::string::npos);
  EXPECT_NE(md.find("90% interval"), std::string::npos);
}
