#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include <nbpl/nbpl.hpp>

#include "test_util.hpp"

using namespace nbpl;

namespace {

Dataset toy() {
  return Dataset({1, 2, 3}, {1, 0, 1}, {0.1, 0.5, 0.9}, 1, 2, {0.5, 0.5}, false, {"x"});
}

}  // namespace

TEST(Dataset, LoadsCsvRoundTrip) {
  testutil::TempDir dir;
  const auto path = dir.write("toy.csv", "y,t,x\n1,1,0.1\n2,0,0.5\n3,1,0.9\n");
  const auto ds = load_dataset(path, Schema{"y", "t", {"x"}}, ConstantPropensity{{0.5}});
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 1u);
  EXPECT_EQ(ds.n_arms(), 2u);
  const double y[] = {1, 2, 3}, x[] = {0.1, 0.5, 0.9};
  const int t[] = {1, 0, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ds.y(i), y[i]);
    EXPECT_EQ(ds.arm(i), t[i]);
    EXPECT_EQ(ds.x(i)[0], x[i]);
    EXPECT_EQ(ds.propensity(i, 1), 0.5);
  }
}

TEST(Dataset, JtpaShapedFile) {
  testutil::TempDir dir;
  const auto path = dir.write("jtpa.csv",
                              "earnings,treat,prevearn,edu\n"
                              "12000,1,3000,12\n"
                              "0,0,0,9\n"
                              "\"8,500\",1,1500,11\n");
  EXPECT_THROW(load_dataset(path, Schema{"earnings", "treat", {"prevearn", "edu"}},
                            ConstantPropensity{{2.0 / 3.0}}),
               DataError);
  dir.write("jtpa.csv", "earnings,treat,prevearn,edu\n12000,1,3000,12\n0,0,0,9\n8500,1,1500,11\n");
  const auto ds =
      load_dataset(path, Schema{"earnings", "treat", {"prevearn", "edu"}}, ConstantPropensity{{2.0 / 3.0}});
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.dim(), 2u);
  EXPECT_EQ(ds.n_arms() - 1, 1u);
  EXPECT_DOUBLE_EQ(ds.propensity(0, 0), 1.0 / 3.0);
  EXPECT_TRUE(validate_overlap(ds, {}).violations.empty());
}

TEST(Dataset, HeaderOnlyFileHasNoRows) {
  testutil::TempDir dir;
  const auto path = dir.write("empty.csv", "y,t,x\n");
  try {
    load_dataset(path, Schema{"y", "t", {"x"}}, ConstantPropensity{{0.5}});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("no data rows"), std::string::npos);
  }
}

TEST(Dataset, RejectsBadCells) {
  testutil::TempDir dir;
  const Schema schema{"y", "t", {"x"}};
  const ConstantPropensity e{{0.5}};
  EXPECT_THROW(load_dataset(dir.file("missing.csv"), schema, e), DataError);
  EXPECT_THROW(load_dataset(dir.write("a.csv", "y,t,x\n1,1,\n"), schema, e), DataError);
  EXPECT_THROW(load_dataset(dir.write("b.csv", "y,t,x\nnan,1,0.2\n"), schema, e), DataError);
  EXPECT_THROW(load_dataset(dir.write("c.csv", "y,t,x\n1,2,0.2\n"), schema, e), DataError);
  EXPECT_THROW(load_dataset(dir.write("d.csv", "y,t\n1,1\n"), schema, e), DataError);
  EXPECT_THROW(load_dataset(dir.write("e.csv", "y,t,x\n1,1,0.2,4\n"), schema, e), DataError);
  EXPECT_THROW(load_dataset(dir.write("f.csv", "y,t,x,p\n1,1,0.2,1.0\n"), schema, PropensityColumns{{"p"}}),
               DataError);
}

TEST(Dataset, PerRowPropensityColumns) {
  testutil::TempDir dir;
  const auto path = dir.write("p.csv", "y,t,x,p0,p1,p2\n1,2,0.3,0.2,0.3,0.5\n0,0,0.4,0.6,0.2,0.2\n");
  const auto ds = load_dataset(path, Schema{"y", "t", {"x"}}, PropensityColumns{{"p0", "p1", "p2"}});
  EXPECT_TRUE(ds.per_row_propensity());
  EXPECT_EQ(ds.n_arms(), 3u);
  EXPECT_EQ(ds.propensity(0, 2), 0.5);
  EXPECT_EQ(ds.propensity(1, 0), 0.6);
  const auto s = compute_scores(ds);
  EXPECT_DOUBLE_EQ(s.z(0, 2), 2.0);
}

TEST(Overlap, ConstantTwoThirdsPasses) {
  const Dataset ds({1, 2}, {1, 0}, {0.0, 1.0}, 1, 2, {1.0 / 3.0, 2.0 / 3.0}, false);
  const auto r = validate_overlap(ds, {0.01, true});
  EXPECT_TRUE(r.passed);
  EXPECT_TRUE(r.violations.empty());
}

TEST(Overlap, SingleLowRowIsFlagged) {
  const Dataset ds({1, 2, 3}, {1, 0, 1}, {0.1, 0.2, 0.3}, 1, 2, {0.5, 0.5, 0.995, 0.005, 0.5, 0.5}, true);
  const auto r = validate_overlap(ds, {0.01, true});
  EXPECT_FALSE(r.passed);
  ASSERT_EQ(r.violations.size(), 2u);  // arm 1 at 0.005 and arm 0 at 0.995
  for (const auto& v : r.violations) EXPECT_EQ(v.row, 1u);
  EXPECT_TRUE(validate_overlap(ds, {0.01, false}).passed);
}

TEST(Overlap, MultiArmKappa) {
  const Dataset ds({1, 2}, {2, 0}, {0.1, 0.2}, 1, 3, {0.1, 0.1, 0.8}, false);
  const auto r = validate_overlap(ds, {0.15, true});
  ASSERT_EQ(r.violations.size(), 4u);
  for (const auto& v : r.violations) EXPECT_LT(v.arm, 2u);
  EXPECT_THROW((OverlapConfig{0.6, true}.check()), ConfigError);
}

TEST(Scores, BinaryExamples) {
  const Dataset ds({1, 2, 0, 0}, {1, 0, 1, 0}, {0, 0, 0, 0}, 1, 2, {0.5, 0.5}, false);
  const auto s = compute_scores(ds);
  EXPECT_EQ(s.contrast(0, 1), 2.0);
  EXPECT_EQ(s.contrast(1, 1), -4.0);
  for (std::size_t i : {2u, 3u})
    for (std::size_t j = 0; j < 2; ++j) {
      EXPECT_EQ(s.z(i, j), 0.0);
      EXPECT_EQ(s.contrast(i, j), 0.0);
    }
}

TEST(Scores, ToyContrasts) {
  const auto g = compute_scores(toy()).binary();
  EXPECT_EQ(g, (std::vector<double>{2, -4, 6}));
}

TEST(Scores, OneNonzeroPerRowAndHorvitzThompson) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd(1.0, 2.0);
  const std::size_t n = 50;
  std::vector<double> y(n), x(n), e{0.2, 0.3, 0.5};
  std::vector<int> t(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = nd(gen);
    t[i] = static_cast<int>(i % 3);
    x[i] = static_cast<double>(i);
  }
  const Dataset ds(y, t, x, 1, 3, e, false);
  const auto s = compute_scores(ds);
  for (std::size_t j = 1; j < 3; ++j) {
    double sum = 0.0, ht1 = 0.0, ht0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int nonzero = 0;
      for (std::size_t a = 0; a < 3; ++a) nonzero += s.z(i, a) != 0.0;
      EXPECT_LE(nonzero, 1);
      sum += s.contrast(i, j);
      if (t[i] == static_cast<int>(j)) ht1 += y[i] / e[j];
      if (t[i] == 0) ht0 += y[i] / e[0];
    }
    EXPECT_NEAR(sum / n, (ht1 - ht0) / n, 1e-12);
  }
}

TEST(Scores, RowPermutationPermutesScores) {
  const auto ds = toy();
  std::vector<std::size_t> perm{2, 0, 1};
  const auto a = compute_scores(ds), b = compute_scores(ds.subset(perm));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(b.z(k, j), a.z(perm[k], j));
}

TEST(Scores, BinaryMatchesContrastColumn) {
  const auto s = compute_scores(toy());
  const auto g = s.binary();
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(g[i], s.contrast(i, 1), 1e-12);
  const Dataset three({1}, {2}, {0.0}, 1, 3, {0.2, 0.3, 0.5}, false);
  EXPECT_THROW(compute_scores(three).binary(), SolverError);
}

TEST(Dataset, ConstructorChecks) {
  EXPECT_THROW(Dataset({}, {}, {}, 1, 2, {0.5, 0.5}, false), DataError);
  EXPECT_THROW(Dataset({1}, {3}, {0.0}, 1, 2, {0.5, 0.5}, false), DataError);
  EXPECT_THROW(Dataset({1}, {1}, {0.0}, 1, 2, {0.5, 0.6}, false), DataError);
  EXPECT_THROW(Dataset({1}, {1}, {0.0}, 1, 2, {0.0, 1.0}, false), DataError);
}
