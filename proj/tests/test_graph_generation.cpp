#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mgdpr/graph_generation.hpp"
#include "support/oracles.hpp"
#include "support/random_tensor.hpp"
#include "support/temp_dir.hpp"

using namespace mgdpr;
using mgdpr::testing::histogram_entropy;

namespace {

std::vector<double> as_doubles(const std::vector<long long>& v) { return {v.begin(), v.end()}; }

MarketPanel synthetic_panel(std::size_t N, std::size_t T, std::mt19937_64& rng) {
  MarketPanel p;
  std::uniform_real_distribution<double> u(1.0, 50.0);
  for (std::size_t i = 0; i < N; ++i) {
    p.tickers.push_back("S" + std::to_string(i));
    p.fill_counts.push_back(0);
  }
  for (std::size_t t = 0; t < T; ++t) p.calendar.push_back(Date(2021, 1 + static_cast<unsigned>(t / 28), 1 + static_cast<unsigned>(t % 28)));
  p.data.resize(N * kNumIndicators * T);
  for (double& v : p.data) v = std::round(u(rng));
  return p;
}

}  // namespace

TEST(SignalEnergy, Examples) {
  EXPECT_EQ(signal_energy(std::vector<double>{3, 4}), 25.0);
  EXPECT_EQ(signal_energy(std::vector<double>{0, 0, 0}), 0.0);
  EXPECT_EQ(signal_energy(std::vector<double>(21, 1.0)), 21.0);
  EXPECT_THROW(signal_energy(std::vector<double>{}), UsageError);
}

TEST(InformationEntropy, Examples) {
  EXPECT_EQ(information_entropy(std::vector<double>{5, 5, 5}), 0.0);
  EXPECT_NEAR(information_entropy(std::vector<double>{1, 2}), std::log(2.0), 1e-15);
  // -(1/2 ln 1/2 + 2 * 1/4 ln 1/4)
  const double expected = -(0.5 * std::log(0.5) + 0.5 * std::log(0.25));
  EXPECT_NEAR(expected, 1.039721, 1e-6);
  EXPECT_NEAR(information_entropy(std::vector<double>{1, 1, 2, 3}), expected, 1e-15);
}

TEST(InformationEntropy, QuantizesBeforeCounting) {
  // differ below the ninth decimal -> one symbol
  EXPECT_EQ(information_entropy(std::vector<double>{1.0, 1.0 + 1e-12}), 0.0);
  EXPECT_NEAR(information_entropy(std::vector<double>{1.0, 1.0 + 1e-6}), std::log(2.0), 1e-15);
}

TEST(InformationEntropy, MatchesHistogramOracleOnIntegers) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    std::uniform_int_distribution<long long> len(1, 30), val(-5, 5);
    std::vector<long long> xs(static_cast<std::size_t>(len(rng)));
    for (auto& x : xs) x = val(rng);
    ASSERT_EQ(information_entropy(as_doubles(xs)), histogram_entropy(xs));
  }
}

TEST(InformationEntropy, Bounds) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 1000; ++trial) {
    std::uniform_int_distribution<int> len(1, 25), val(0, 6);
    std::vector<double> xs(static_cast<std::size_t>(len(rng)));
    for (auto& x : xs) x = val(rng) * 0.5;
    const double h = information_entropy(xs);
    ASSERT_GE(h, 0.0);
    ASSERT_LE(h, std::log(static_cast<double>(xs.size())) + 1e-15);
    const bool constant = std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs[0]; });
    ASSERT_EQ(h == 0.0, constant);
  }
}

TEST(BuildAdjacency, HandWorkedPair) {
  auto a = build_adjacency(Tensor::matrix({{1, 1}, {1, 2}}));
  EXPECT_EQ(a.at(0, 0), 1.0);
  EXPECT_EQ(a.at(1, 1), 1.0);
  // E0=2, E1=5, H0=0, H1=ln2
  EXPECT_NEAR(a.at(0, 1), 0.2, 1e-15);
  EXPECT_NEAR(a.at(1, 0), 5.0, 1e-14);
}

TEST(BuildAdjacency, ReciprocityDiagonalAndAntisymmetricLog) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = mgdpr::testing::random_tensor(rng, Shape{6, 10}, 0.5, 100.0);
    auto a = build_adjacency(x);
    for (std::size_t i = 0; i < 6; ++i) {
      ASSERT_EQ(a.at(i, i), 1.0);
      for (std::size_t j = 0; j < 6; ++j) {
        ASSERT_GT(a.at(i, j), 0.0);
        ASSERT_NEAR(a.at(i, j) * a.at(j, i), 1.0, 1e-9);
        ASSERT_NEAR(std::log(a.at(i, j)), -std::log(a.at(j, i)), 1e-9);
      }
    }
  }
}

TEST(BuildAdjacency, DegenerateRowNamesStock) {
  try {
    build_adjacency(Tensor::matrix({{1, 1}, {0, 0}}));
    FAIL();
  } catch (const DegenerateSeriesError& e) {
    EXPECT_NE(std::string(e.what()).find("stock 1"), std::string::npos);
  }
}

TEST(RowNormalize, Examples) {
  auto n = row_normalize(Tensor::matrix({{1, 1}, {1, 1}}));
  EXPECT_EQ(n, Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}}));
  auto m = row_normalize(Tensor::matrix({{1, 5, 2}, {0.1, 0.3, 0.2}}));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(m.at(i, 0) + m.at(i, 1) + m.at(i, 2), 1.0, 1e-12);
  }
  EXPECT_LT(m.at(0, 0), m.at(0, 2));
  EXPECT_LT(m.at(0, 2), m.at(0, 1));
}

TEST(BuildDayGraphs, ShapeAndOracle) {
  std::mt19937_64 rng(24);
  auto panel = synthetic_panel(3, 12, rng);
  auto g = build_day_graphs(panel, 6, 5);
  ASSERT_EQ(g.raw.size(), kNumIndicators);
  for (std::size_t r = 0; r < kNumIndicators; ++r) {
    EXPECT_EQ(g.raw[r].shape(), (Shape{3, 3}));
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<long long> xi, xj;
        for (std::size_t o = 2; o <= 6; ++o) {
          xi.push_back(static_cast<long long>(panel.value(i, r, o)));
          xj.push_back(static_cast<long long>(panel.value(j, r, o)));
        }
        EXPECT_NEAR(g.raw[r].at(i, j), mgdpr::testing::edge_weight_oracle(xi, xj), 1e-12 * std::max(1.0, g.raw[r].at(i, j)));
      }
  }
}

TEST(BuildDayGraphs, IdenticalRelationsGiveIdenticalMatrices) {
  std::mt19937_64 rng(25);
  auto panel = synthetic_panel(4, 10, rng);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t t = 0; t < 10; ++t) panel.value(i, Indicator::High, t) = panel.value(i, Indicator::Open, t);
  auto g = build_day_graphs(panel, 9, 5);
  EXPECT_EQ(g.raw[0], g.raw[1]);
}

TEST(BuildDayGraphs, ShiftingTheDayChangesMatrices) {
  std::mt19937_64 rng(26);
  auto panel = synthetic_panel(3, 12, rng);
  auto g6 = build_day_graphs(panel, 6, 5);
  auto g7 = build_day_graphs(panel, 7, 5);
  for (std::size_t r = 0; r < kNumIndicators; ++r) {
    EXPECT_NE(g6.raw[r], g7.raw[r]);
    // recompute day 7 with the oracle
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        std::vector<long long> xi, xj;
        for (std::size_t o = 3; o <= 7; ++o) {
          xi.push_back(static_cast<long long>(panel.value(i, r, o)));
          xj.push_back(static_cast<long long>(panel.value(j, r, o)));
        }
        EXPECT_NEAR(g7.raw[r].at(i, j), mgdpr::testing::edge_weight_oracle(xi, xj), 1e-12 * std::max(1.0, g7.raw[r].at(i, j)));
      }
  }
}

TEST(BuildDayGraphs, OutOfRangeDayAndDegenerateStock) {
  std::mt19937_64 rng(27);
  auto panel = synthetic_panel(3, 12, rng);
  EXPECT_THROW(build_day_graphs(panel, 3, 5), GraphError);
  EXPECT_THROW(build_day_graphs(panel, 12, 5), GraphError);
  for (std::size_t t = 0; t < 12; ++t) panel.value(1, Indicator::Low, t) = 0.0;
  try {
    build_day_graphs(panel, 8, 5);
    FAIL();
  } catch (const DegenerateSeriesError& e) {
    EXPECT_NE(std::string(e.what()).find("S1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("day 8"), std::string::npos) << e.what();
  }
}

TEST(GraphCache, ReloadIsBitExact) {
  std::mt19937_64 rng(28);
  auto panel = synthetic_panel(4, 10, rng);
  for (double& v : panel.data) v *= 1.0 / 3.0;  // non-terminating decimals
  auto g = build_day_graphs(panel, 8, 5);
  mgdpr::testing::TempDir dir;
  write_day_graphs(g, dir.path());
  auto back = read_day_graphs(dir.path(), 8, 4);
  for (std::size_t r = 0; r < kNumIndicators; ++r) {
    EXPECT_EQ(back.raw[r], g.raw[r]);
    EXPECT_EQ(back.normalized[r], g.normalized[r]);
  }
}
