#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <nbpl/experiment.hpp>
#include <nbpl/nbpl.hpp>

using namespace nbpl;
using namespace nbpl::sim;

namespace {

DgpSpec constant_effect(double tau, double noise) {
  DgpSpec d;
  d.covariates = uniform_grid_1d(8);
  d.effects = binary_effect([tau](std::span<const double>) { return tau; });
  d.noise_sd = noise;
  return d;
}

DgpSpec linear_grid(std::size_t m = 16) {
  DgpSpec d;
  d.covariates = uniform_grid_1d(m);
  d.effects = binary_effect([](std::span<const double> x) { return x[0] - 0.5; });
  return d;
}

PolicyClassSpec singleton(Policy p) { return {FiniteClass{{std::move(p)}}, std::nullopt, CapacityBasis::uniform}; }

}  // namespace

TEST(MakeDataset, NoiselessOutcomes) {
  auto dgp = constant_effect(1.0, 0.0);
  const auto ds = make_dataset(dgp, 200, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(ds.y(i), ds.arm(i) == 1 ? 1.0 : 0.0);
}

TEST(MakeDataset, SeedDetermines) {
  const auto dgp = linear_grid();
  const auto a = make_dataset(dgp, 50, 3), b = make_dataset(dgp, 50, 3), c = make_dataset(dgp, 50, 4);
  bool differ = false;
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(a.y(i), b.y(i));
    EXPECT_EQ(a.arm(i), b.arm(i));
    EXPECT_EQ(a.x(i)[0], b.x(i)[0]);
    differ = differ || a.y(i) != c.y(i);
  }
  EXPECT_TRUE(differ);
  EXPECT_THROW(make_dataset(dgp, 0, 1), ConfigError);
}

TEST(MakeDataset, HorvitzThompsonUnbiased) {
  const auto s = compute_scores(make_dataset(constant_effect(2.0, 1.0), 10000, 8));
  const auto g = s.binary();
  double mean = 0.0, sq = 0.0;
  for (double v : g) {
    mean += v;
    sq += v * v;
  }
  mean /= g.size();
  const double se = std::sqrt((sq / g.size() - mean * mean) / g.size());
  EXPECT_NEAR(mean, 2.0, 3 * se);
}

TEST(MakeDataset, InvalidSpecs) {
  auto d = linear_grid();
  d.propensity = {0.999, 0.001};
  EXPECT_THROW(d.validate(), ConfigError);
  d = linear_grid();
  d.effects = nullptr;
  EXPECT_THROW(d.validate(), ConfigError);
  d = linear_grid();
  std::get<FiniteGrid>(d.covariates).probs[0] = 0.5;
  EXPECT_THROW(d.validate(), ConfigError);
}

TEST(TrueRegret, Examples) {
  const auto dgp = linear_grid();
  const auto cls = grid_threshold_class(std::get<FiniteGrid>(dgp.covariates));
  const TruthOracle oracle(dgp, cls);
  EXPECT_FALSE(oracle.approximate());
  EXPECT_EQ(true_regret(oracle, oracle.optimal_policy()), 0.0);

  auto positive = dgp;
  positive.effects = binary_effect([](std::span<const double> x) { return 1.0 + x[0]; });
  const TruthOracle pos(positive, PolicyClassSpec{FiniteClass{{never_treat(1), treat_all(1)}}, {}, {}});
  EXPECT_EQ(true_regret(pos, treat_all(1)), 0.0);
}

TEST(TrueRegret, TwoPointGridAllSubsets) {
  DgpSpec d;
  d.covariates = FiniteGrid{{0.0, 1.0}, 1, {0.5, 0.5}};
  d.effects = binary_effect([](std::span<const double> x) { return x[0] == 0.0 ? 1.0 : -1.0; });
  FiniteClass all;
  for (int a : {0, 1})
    for (int b : {0, 1}) all.policies.push_back(TreeRule::split(0, 0.5, TreeRule::leaf(a), TreeRule::leaf(b)));
  const TruthOracle oracle(d, {all, std::nullopt, CapacityBasis::uniform});
  EXPECT_DOUBLE_EQ(oracle.optimum(), 0.5);
  EXPECT_DOUBLE_EQ(true_regret(oracle, treat_all(1)), 0.5);
  const auto& vals = oracle.class_values();
  ASSERT_EQ(vals.size(), 4u);
  EXPECT_DOUBLE_EQ(vals[3], 0.0);
}

TEST(TrueRegret, BaselineDoesNotMatter) {
  auto a = linear_grid(), b = linear_grid();
  b.baseline = [](std::span<const double> x) { return 17.0 + x[0]; };
  const auto cls = grid_threshold_class(std::get<FiniteGrid>(a.covariates));
  const TruthOracle oa(a, cls), ob(b, cls);
  for (double c : {0.0, 0.3, 0.71}) {
    const Policy p = LinearRule{{1.0}, c, 1};
    EXPECT_EQ(true_regret(oa, p), true_regret(ob, p));
  }
}

TEST(TrueRegret, ContinuousLawIsApproximate) {
  DgpSpec d;
  d.covariates = UniformBox{{0.0}, {1.0}};
  d.effects = binary_effect([](std::span<const double> x) { return x[0] - 0.25; });
  OracleOptions opt;
  opt.holdout = 200000;
  const TruthOracle oracle(d, {LinearClass{{0}, true}, std::nullopt, CapacityBasis::uniform}, opt);
  EXPECT_TRUE(oracle.approximate());
  // E[(x - 1/4) 1{x >= 1/4}] = (3/4)^2 / 2.
  EXPECT_NEAR(oracle.optimum(), 0.28125, 0.005);
}

TEST(RegretExperiment, SingletonHasNoRegret) {
  ExperimentOptions opt;
  opt.ns = {50, 200};
  opt.reps = 2;
  opt.S = 20;
  opt.seed = 1;
  const auto rep = regret_experiment(linear_grid(), singleton(treat_all(1)), opt);
  for (const auto& row : rep.rows) {
    EXPECT_EQ(row.median_regret, 0.0);
    EXPECT_EQ(row.mean_regret, 0.0);
  }
  EXPECT_TRUE(std::isnan(rep.slope));
  ASSERT_TRUE(rep.decomposition.has_value());
  EXPECT_EQ(rep.decomposition->violations, 0u);
}

TEST(RegretExperiment, UniformWeightsGiveEwmRegret) {
  const auto dgp = linear_grid();
  const auto cls = grid_threshold_class(std::get<FiniteGrid>(dgp.covariates));
  ExperimentOptions opt;
  opt.ns = {100, 400};
  opt.reps = 3;
  opt.S = 1;
  opt.seed = 12;
  opt.uniform_weights = true;
  const auto rep = regret_experiment(dgp, cls, opt);
  const TruthOracle oracle(dgp, cls);
  for (std::size_t ni = 0; ni < opt.ns.size(); ++ni)
    for (std::size_t r = 0; r < opt.reps; ++r) {
      const auto ds = make_dataset(dgp, opt.ns[ni], derive_seed(opt.seed, {r, ni, 0}));
      const double ewm = std::max(0.0, true_regret(oracle, ewm_fit(ds, cls).policy));
      EXPECT_EQ(rep.rows[ni].rep_median[r], ewm);
    }
}

TEST(RegretExperiment, WorkersDoNotChangeReport) {
  const auto dgp = linear_grid();
  const auto cls = grid_threshold_class(std::get<FiniteGrid>(dgp.covariates));
  ExperimentOptions opt;
  opt.ns = {60, 240};
  opt.reps = 3;
  opt.S = 30;
  opt.seed = 5;
  const auto a = to_json_value(regret_experiment(dgp, cls, opt)).dump();
  opt.workers = 4;
  EXPECT_EQ(to_json_value(regret_experiment(dgp, cls, opt)).dump(), a);
}

TEST(RegretExperiment, ZeroRepsIsConfigError) {
  ExperimentOptions opt;
  opt.ns = {10};
  opt.reps = 0;
  EXPECT_THROW(regret_experiment(linear_grid(), singleton(treat_all(1)), opt), ConfigError);
  opt.reps = 1;
  opt.ns = {};
  EXPECT_THROW(regret_experiment(linear_grid(), singleton(treat_all(1)), opt), ConfigError);
}

TEST(RegretExperiment, LogLogSlope) {
  const std::vector<double> x{10, 100, 1000};
  std::vector<double> y;
  for (double v : x) y.push_back(3.0 / std::sqrt(v));
  EXPECT_NEAR(loglog_slope(x, y), -0.5, 1e-12);
  EXPECT_TRUE(std::isnan(loglog_slope(x, {1.0, 0.0, 2.0})));
}

TEST(SelectionExperiment, IdenticalClasses) {
  SelectionOptions opt;
  opt.ns = {100};
  opt.reps = 2;
  opt.S = 50;
  opt.seed = 3;
  const auto cls = grid_threshold_class(std::get<FiniteGrid>(linear_grid().covariates));
  const auto rep = selection_experiment(linear_grid(), cls, cls, opt);
  EXPECT_TRUE(rep.gap_zero);
  EXPECT_FALSE(rep.rows[0].mean_correct.has_value());
  EXPECT_EQ(rep.rows[0].mean_within_eps, 1.0);
  EXPECT_EQ(rep.rows[0].mean_abs_diff, 0.0);
  EXPECT_TRUE(to_json_value(rep)["rows"][0]["correct_sign_fraction"].is_null());
}

TEST(SelectionExperiment, SignOfGapIsRespected) {
  SelectionOptions opt;
  opt.ns = {2000};
  opt.reps = 2;
  opt.S = 100;
  opt.seed = 4;
  const auto dgp = constant_effect(1.0, 1.0);
  const auto all = singleton(treat_all(1)), none = singleton(never_treat(1));
  const auto pos = selection_experiment(dgp, all, none, opt);
  const auto neg = selection_experiment(dgp, none, all, opt);
  EXPECT_DOUBLE_EQ(pos.gap, 1.0);
  EXPECT_DOUBLE_EQ(neg.gap, -1.0);
  EXPECT_GE(*pos.rows[0].mean_correct, 0.95);
  EXPECT_GE(*neg.rows[0].mean_correct, 0.95);
}

TEST(ExperimentFile, BundledSmokeParses) {
  std::ifstream in(std::string(NBPL_SOURCE_DIR) + "/experiments/rate_smoke.json");
  ASSERT_TRUE(in.good());
  const auto e = parse_experiment(nlohmann::json::parse(in));
  EXPECT_EQ(e.kind, ExperimentKind::regret);
  EXPECT_EQ(e.options.ns, (std::vector<std::size_t>{250, 1000}));
  EXPECT_EQ(e.options.reps, 3u);
  EXPECT_EQ(e.options.S, 100u);
  EXPECT_EQ(std::get<FiniteClass>(e.class_a.kind).policies.size(), 64u);
  EXPECT_DOUBLE_EQ(e.dgp.tau(std::vector<double>{0.75})[0], 0.25);
  EXPECT_DOUBLE_EQ(e.dgp.tau(std::vector<double>{0.25})[0], -0.25);
}

TEST(ExperimentFile, Errors) {
  auto base = nlohmann::json::parse(R"({
    "experiment": "regret",
    "dgp": {"covariates": {"grid_1d": 4}, "effect": 1.0},
    "class": {"kind": "grid_thresholds"},
    "ns": [10], "reps": 1, "S": 2})");
  EXPECT_NO_THROW(parse_experiment(base));
  for (auto [key, value] : std::vector<std::pair<std::string, nlohmann::json>>{
           {"reps", 0}, {"reps", -1}, {"S", 0}, {"experiment", "other"}, {"ns", "x"}}) {
    auto j = base;
    j[key] = value;
    EXPECT_THROW(parse_experiment(j), ConfigError) << key;
  }
  auto j = base;
  j["dgp"]["effect"] = {{"mystery", 1}};
  EXPECT_THROW(parse_experiment(j), ConfigError);
  j = base;
  j["dgp"]["covariates"] = {{"uniform_box", {{"lo", {0}}, {"hi", {1}}}}};
  EXPECT_THROW(parse_experiment(j), ConfigError);
}

TEST(Reports, RegretCsvColumns) {
  RegretReport r;
  RegretRow row;
  row.n = 10;
  row.median_regret = 0.5;
  row.q90_regret = 1.0;
  r.rows.push_back(row);
  EXPECT_EQ(to_csv(r), "n,median_regret,q90_regret,correct_sign_fraction\n10,0.5,1,\n");
}
