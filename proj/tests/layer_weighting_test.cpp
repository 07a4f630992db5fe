#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "tedlast/layer_weighting.hpp"
#include "test_support.hpp"

using namespace tedlast;

namespace {

using EdgeList = std::vector<std::pair<std::uint32_t, std::uint32_t>>;

LayerGraph make_graph(std::size_t n, EdgeList edges) {
  std::vector<std::vector<std::uint32_t>> nb(n);
  for (auto [a, b] : edges) nb[a].push_back(b);
  return detail::graph_from_neighbours(n, nb);
}

EdgeList clique(std::uint32_t first, std::uint32_t size) {
  EdgeList e;
  for (std::uint32_t i = first; i < first + size; ++i) {
    for (std::uint32_t j = i + 1; j < first + size; ++j) e.emplace_back(i, j);
  }
  return e;
}

}  // namespace

TEST(CommunityLabels, MarksPredictedClassZero) {
  const std::vector<std::uint32_t> labels{0, 1, 0, 2};
  EXPECT_EQ(community_labels(labels, 0), (std::vector<std::uint8_t>{0, 1, 0, 1}));
  EXPECT_EQ(community_labels(labels, 5), (std::vector<std::uint8_t>{1, 1, 1, 1}));
}

TEST(Modularity, PathGraphFixture) {
  const auto g = make_graph(4, {{0, 1}, {1, 2}, {2, 3}});
  const std::vector<std::uint8_t> c{0, 0, 1, 1};
  EXPECT_NEAR(modularity(g, c), 1.0 / 6.0, 1e-9);
  EXPECT_NEAR(modularity(g, c), 0.1667, 5e-5);
}

TEST(Modularity, TwoCliqueFixture) {
  auto edges = clique(0, 4);
  const auto second = clique(4, 4);
  edges.insert(edges.end(), second.begin(), second.end());
  const auto g = make_graph(8, edges);
  const std::vector<std::uint8_t> c{0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_NEAR(modularity(g, c), 0.5, 1e-9);
}

TEST(Modularity, SingleCommunityIsOneMinusGamma) {
  const auto g = make_graph(4, {{0, 1}, {1, 2}, {2, 3}});
  const std::vector<std::uint8_t> c(4, 1);
  EXPECT_NEAR(modularity(g, c, 1.0), 0.0, 1e-12);
  EXPECT_NEAR(modularity(g, c, 0.5), 0.5, 1e-12);
}

TEST(Modularity, EmptyGraphAndSizeMismatchFail) {
  const auto g = make_graph(3, {});
  const std::vector<std::uint8_t> c{0, 1, 0};
  EXPECT_THROW(modularity(g, c), Error);
  const auto g2 = make_graph(3, {{0, 1}});
  const std::vector<std::uint8_t> short_c{0, 1};
  EXPECT_THROW(modularity(g2, short_c), Error);
}

TEST(Modularity, RandomGraphsMatchPairwiseOracleSymmetricAndBounded) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    std::bernoulli_distribution coin(0.05 + 0.9 * static_cast<double>(rng() % 100) / 100.0);
    EdgeList edges;
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        if (coin(rng)) edges.emplace_back(i, j);
      }
    }
    if (edges.empty()) edges.emplace_back(0, 1);
    const auto g = make_graph(n, edges);
    std::vector<std::uint8_t> c(n), swapped(n);
    for (std::size_t i = 0; i < n; ++i) {
      c[i] = rng() % 2;
      swapped[i] = 1 - c[i];
    }
    const double q = modularity(g, c);
    EXPECT_NEAR(q, oracle::modularity(n, g.edges, c, 1.0), 1e-12);
    EXPECT_DOUBLE_EQ(q, modularity(g, swapped));
    EXPECT_GE(q, -1.0);
    EXPECT_LE(q, 1.0);
    EXPECT_GE(q, -0.5 - 1e-12);
    EXPECT_LT(q, 1.0);
  }
}

TEST(LayerWeights, MinMaxExamples) {
  const std::vector<double> q{0.1, 0.4, 0.25};
  const auto w = layer_weights(q);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_DOUBLE_EQ(w[1], 1.0);
  EXPECT_NEAR(w[2], 0.5, 1e-12);
  const std::vector<double> flat{0.3, 0.3};
  EXPECT_EQ(layer_weights(flat), (std::vector<double>{1.0, 1.0}));
  const std::vector<double> bad{0.1, std::numeric_limits<double>::quiet_NaN()};
  EXPECT_THROW(layer_weights(bad), Error);
}

TEST(LayerWeights, BoundedOrderPreservingAndAffineInvariant) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-0.5, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> q(1 + rng() % 12);
    for (auto& v : q) v = u(rng);
    const auto w = layer_weights(q);
    std::vector<double> scaled(q.size());
    const double a = 0.1 + 3.0 * static_cast<double>(rng() % 100) / 100.0;
    for (std::size_t l = 0; l < q.size(); ++l) scaled[l] = a * q[l] + 0.25;
    const auto ws = layer_weights(scaled);
    for (std::size_t l = 0; l < q.size(); ++l) {
      EXPECT_GE(w[l], 0.0);
      EXPECT_LE(w[l], 1.0);
      EXPECT_NEAR(ws[l], w[l], 1e-9);
      for (std::size_t m = 0; m < q.size(); ++m) {
        if (q[l] < q[m]) {
          EXPECT_LE(w[l], w[m]);
        }
      }
    }
  }
}

TEST(WeightedProfile, ElementwiseProduct) {
  const auto p = make_profile({2, 3, 4});
  const std::vector<double> w{0.0, 0.5, 1.0};
  EXPECT_EQ(weighted_profile(p, w), (std::vector<double>{0.0, 1.5, 4.0}));
  const std::vector<double> ones(3, 1.0);
  EXPECT_EQ(weighted_profile(p, ones), (std::vector<double>{2.0, 3.0, 4.0}));
  const std::vector<double> wrong(2, 1.0);
  EXPECT_THROW(weighted_profile(p, wrong), Error);
}

namespace {

// Two classes that overlap completely at layer 0, partially at layer 1 and
// separate cleanly at layer 2.
ActivationDump separating_dump(std::mt19937_64& rng) {
  const std::size_t per = 40;
  const std::vector<float> offsets{0.0f, 1.0f, 20.0f};
  std::normal_distribution<float> noise(0.0f, 1.0f);
  ActivationDump d;
  d.num_samples = 2 * per;
  d.num_classes = 2;
  for (std::size_t l = 0; l < 3; ++l) {
    d.layers.push_back({"l" + std::to_string(l), 2});
    FloatMatrix m(2 * per, 2);
    for (std::size_t i = 0; i < 2 * per; ++i) {
      const float shift = i < per ? 0.0f : offsets[l];
      m(i, 0) = shift + noise(rng);
      m(i, 1) = noise(rng);
    }
    d.activations.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < 2 * per; ++i) d.predicted_labels.push_back(i < per ? 0 : 1);
  return d;
}

}  // namespace

TEST(WeightTable, SeparatingLayerGetsWeightOneMixedLayerZero) {
  std::mt19937_64 rng(23);
  const auto d = separating_dump(rng);
  const auto table = fit_weight_table(d);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_DOUBLE_EQ(table.row(c)[2], 1.0);
    EXPECT_DOUBLE_EQ(table.row(c)[0], 0.0);
    EXPECT_GT(table.raw_row(c)[2], table.raw_row(c)[1]);
  }
}

TEST(WeightTable, SingleLayerGivesUnitWeights) {
  std::mt19937_64 rng(24);
  auto d = test_util::random_dump(rng, 30, 1, 3, 3);
  const auto table = fit_weight_table(d);
  for (double w : table.weights) EXPECT_EQ(w, 1.0);
}

TEST(WeightTable, InvariantUnderSampleShuffle) {
  std::mt19937_64 rng(25);
  const auto d = separating_dump(rng);
  std::vector<std::size_t> perm(d.num_samples);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto a = fit_weight_table(d);
  const auto b = fit_weight_table(select_rows(d, perm));
  for (std::size_t i = 0; i < a.weights.size(); ++i) {
    EXPECT_NEAR(a.weights[i], b.weights[i], 1e-12);
    EXPECT_NEAR(a.modularity_raw[i], b.modularity_raw[i], 1e-12);
  }
}

TEST(WeightTable, SparseClassGetsUnitRowAndWarning) {
  std::mt19937_64 rng(26);
  auto d = separating_dump(rng);
  d.num_classes = 3;
  d.predicted_labels[0] = 2;
  const auto table = fit_weight_table(d);
  for (double w : table.row(2)) EXPECT_EQ(w, 1.0);
  ASSERT_EQ(table.warnings.size(), 1u);
  EXPECT_NE(table.warnings[0].find("class 2"), std::string::npos);
}

TEST(WeightTable, RejectsNonPositiveResolution) {
  std::mt19937_64 rng(27);
  const auto d = separating_dump(rng);
  EXPECT_THROW(fit_weight_table(d, std::nullopt, 0.0), Error);
}
