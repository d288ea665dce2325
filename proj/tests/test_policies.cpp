#include <gtest/gtest.h>

#include <random>

#include <nbpl/nbpl.hpp>

#include "oracles.hpp"

using namespace nbpl;

namespace {

ScoreTable toy_scores() { return ScoreTable::from_contrasts({0, 2, 0, -4, 0, 6}, {0.1, 0.5, 0.9}, 2, 1); }

std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

}  // namespace

TEST(Assign, LinearBoundaryIsInclusive) {
  const std::vector<double> x{0.5, 9.0};
  EXPECT_EQ(assign(LinearRule{{1, 0}, 0.5, 1}, x), 1);
  EXPECT_EQ(assign(LinearRule{{0, 0}, 0.0, 1}, x), 1);
  EXPECT_EQ(assign(never_treat(2), x), 0);
  EXPECT_THROW(assign(LinearRule{{1}, 0.5, 1}, x), std::invalid_argument);
}

TEST(Assign, TreeLessOrEqualGoesLeft) {
  const auto t = TreeRule::split(0, 0.4, TreeRule::leaf(0), TreeRule::leaf(1));
  EXPECT_EQ(assign(t, std::vector<double>{0.3}), 0);
  EXPECT_EQ(assign(t, std::vector<double>{0.4}), 0);
  EXPECT_EQ(assign(t, std::vector<double>{0.41}), 1);
  EXPECT_THROW(assign(TreeRule::split(1, 0.0, TreeRule::leaf(0), TreeRule::leaf(1)), std::vector<double>{0.3}),
               std::invalid_argument);
}

TEST(Assign, ScalingLinearRuleKeepsAssignments) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 200; ++rep) {
    LinearRule r{{z(gen), z(gen)}, z(gen), 1};
    const double lambda = std::exp(z(gen));
    LinearRule s{{lambda * r.beta[0], lambda * r.beta[1]}, lambda * r.c, 1};
    for (int k = 0; k < 20; ++k) {
      const std::vector<double> x{z(gen), z(gen)};
      // Scaling is exact for lambda a power of two; otherwise only points away from the boundary are compared.
      const double margin = r.beta[0] * x[0] + r.beta[1] * x[1] - r.c;
      if (std::abs(margin) > 1e-9) {
        EXPECT_EQ(assign(r, x), assign(s, x));
      }
    }
    LinearRule p{{4 * r.beta[0], 4 * r.beta[1]}, 4 * r.c, 1};
    for (int k = 0; k < 20; ++k) {
      const std::vector<double> x{z(gen), z(gen)};
      EXPECT_EQ(assign(r, x), assign(p, x));
    }
  }
}

TEST(Assign, PointsInOneLeafGetThatLeafsArm) {
  const auto t = TreeRule::split(0, 0.5, TreeRule::split(1, 0.2, TreeRule::leaf(2), TreeRule::leaf(0)),
                                 TreeRule::split(1, 0.8, TreeRule::leaf(1), TreeRule::leaf(0)));
  for (double a : {0.0, 0.1, 0.49})
    for (double b : {-1.0, 0.0, 0.2}) EXPECT_EQ(assign(t, std::vector<double>{a, b}), 2);
  EXPECT_EQ(t.depth(), 2);
}

TEST(Welfare, Examples) {
  const auto s = toy_scores();
  const auto w = uniform(3);
  EXPECT_NEAR(weighted_welfare(s, w, LinearRule{{1}, 0.4, 1}), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(weighted_welfare(s, w, never_treat(1)), 0.0);
  const auto zero = ScoreTable::from_contrasts({0, 0, 0, 0}, {0.1, 0.2}, 2, 1);
  EXPECT_EQ(weighted_welfare(zero, uniform(2), treat_all(1)), 0.0);
  EXPECT_THROW(weighted_welfare(s, uniform(2), never_treat(1)), std::invalid_argument);
  EXPECT_THROW(weighted_welfare(s, std::vector<double>{0.5, 0.5, 0.5}, never_treat(1)), std::invalid_argument);
}

TEST(Welfare, SharesExamples) {
  const std::vector<double> xs{0.1, 0.2, 0.3, 0.4};
  const auto w = uniform(4);
  EXPECT_EQ(weighted_share(w, xs, 1, treat_all(1), 1), 1.0);
  EXPECT_EQ(weighted_share(w, xs, 1, never_treat(1), 1), 0.0);
  EXPECT_EQ(weighted_share(w, xs, 1, LinearRule{{1}, 0.2, 1}, 1), 0.75);
}

TEST(Welfare, LinearInWeights) {
  std::mt19937_64 gen(5);
  for (int rep = 0; rep < 50; ++rep) {
    const auto in = oracle::random_instance(gen, 30, 2, 3);
    const auto s = in.table();
    const auto w2 = oracle::dirichlet(in.n, gen);
    const double a = std::uniform_real_distribution<double>(0, 1)(gen);
    std::vector<double> mix(in.n);
    for (std::size_t i = 0; i < in.n; ++i) mix[i] = a * in.w[i] + (1 - a) * w2[i];
    const auto t = TreeRule::split(0, 0.5, TreeRule::leaf(1), TreeRule::leaf(2));
    for (const Policy& p : {Policy(t), Policy(LinearRule{{1, -1}, 0.1, 2})}) {
      EXPECT_NEAR(weighted_welfare(s, mix, p),
                  a * weighted_welfare(s, in.w, p) + (1 - a) * weighted_welfare(s, w2, p), 1e-12);
      const auto sh = weighted_shares(in.w, s, p);
      EXPECT_NEAR(sh[0] + sh[1] + sh[2], 1.0, 1e-12);
    }
  }
}

TEST(PolicyJson, RoundTrip) {
  const auto t = TreeRule::split(1, 0.25, TreeRule::leaf(0), TreeRule::split(0, -2, TreeRule::leaf(1), TreeRule::leaf(2)));
  EXPECT_EQ(std::get<TreeRule>(policy_from_json(policy_to_json(t))), t);
  const LinearRule r{{1.5, -2}, 0.75, 2};
  EXPECT_EQ(std::get<LinearRule>(policy_from_json(policy_to_json(r))), r);
  EXPECT_THROW(policy_from_json(nlohmann::json{{"foo", 1}}), std::invalid_argument);
}

TEST(PolicyClass, FromJsonAndValidation) {
  const auto spec = class_from_json(nlohmann::json::parse(
      R"({"kind":"tree","max_depth":1,"split_grid":[[0.2,0.4]],"capacity":0.5,"capacity_basis":"weighted"})"));
  EXPECT_TRUE(std::holds_alternative<TreeClass>(spec.kind));
  EXPECT_EQ(*spec.capacity, 0.5);
  EXPECT_EQ(spec.capacity_basis, CapacityBasis::weighted);
  EXPECT_THROW(class_from_json(nlohmann::json::parse(R"({"kind":"forest"})")), ConfigError);
  EXPECT_THROW(class_from_json(nlohmann::json::parse(R"({"kind":"linear"})")), ConfigError);
  EXPECT_THROW((PolicyClassSpec{LinearClass{{0}, true}, 1.5, CapacityBasis::uniform}.validate(1)), ConfigError);
  EXPECT_THROW((PolicyClassSpec{LinearClass{{3}, true}, std::nullopt, CapacityBasis::uniform}.validate(2)),
               ConfigError);
  EXPECT_THROW((PolicyClassSpec{TreeClass{1, {{0.4, 0.2}}}, std::nullopt, CapacityBasis::uniform}.validate(1)),
               ConfigError);
  const auto back = class_from_json(class_to_json(spec));
  EXPECT_EQ(std::get<TreeClass>(back.kind).split_grid, std::get<TreeClass>(spec.kind).split_grid);
}

TEST(PolicyClass, QuantileSplitGrid) {
  const std::vector<double> xs{3, 1, 2, 2, 1};
  EXPECT_EQ(quantile_split_grid(xs, 1, 64)[0], (std::vector<double>{1, 2, 3}));
  std::vector<double> many(1000);
  for (std::size_t i = 0; i < many.size(); ++i) many[i] = static_cast<double>(i);
  const auto g = quantile_split_grid(many, 1, 4)[0];
  EXPECT_LE(g.size(), 4u);
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
}
