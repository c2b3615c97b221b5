#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "curl_lab/bounds.hpp"
#include "curl_lab/synth.hpp"

using namespace curl;

TEST(GenCircle, Radii) {
  const auto d = gen_circle(10, 200, 3);
  ASSERT_EQ(d.size(), 2000u);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = d.point(i);
    const double r = std::hypot(p[0], p[1]);
    EXPECT_NEAR(r, (d.label(i) + 2) / 2.0, 1e-12);
  }
  EXPECT_NEAR(std::hypot(d.point(d.members(0)[0])[0], d.point(d.members(0)[0])[1]), 1.0, 1e-12);
  EXPECT_NEAR(std::hypot(d.point(d.members(9)[5])[0], d.point(d.members(9)[5])[1]), 5.5, 1e-12);
}

TEST(GenCircle, ValidationAndDeterminism) {
  EXPECT_THROW(gen_circle(10, 0, 1), DomainError);
  EXPECT_THROW(gen_circle(0, 5, 1), DomainError);
  const auto a = gen_circle(3, 20, 9);
  const auto b = gen_circle(3, 20, 9);
  EXPECT_TRUE(std::equal(a.raw_points().begin(), a.raw_points().end(), b.raw_points().begin()));
  const auto c = gen_circle(3, 20, 10);
  EXPECT_FALSE(std::equal(a.raw_points().begin(), a.raw_points().end(), c.raw_points().begin()));
}

TEST(Split, StratifiedCounts) {
  const auto d = gen_circle(10, 1000, 1);
  const auto s = stratified_split(d, 0.6, 2);
  EXPECT_EQ(s.train.size(), 6000u);
  EXPECT_EQ(s.test.size(), 4000u);
  for (int c = 0; c < 10; ++c) {
    EXPECT_EQ(s.train.class_size(c), 600u);
    EXPECT_EQ(s.test.class_size(c), 400u);
  }
  std::set<std::size_t> all(s.train_indices.begin(), s.train_indices.end());
  all.insert(s.test_indices.begin(), s.test_indices.end());
  EXPECT_EQ(all.size(), d.size());
  const auto tiny = stratified_split(gen_circle(2, 2, 1), 0.99, 2);
  EXPECT_EQ(tiny.test.class_size(0), 1u);
}

TEST(BatchNegatives, OnePerPairAndNeverOwnPair) {
  Rng rng = make_substream(5, 0);
  const int b = 20;
  for (int k : {1, 5, 19}) {
    const auto neg = sample_batch_negatives(rng, b, k);
    ASSERT_EQ(neg.size(), static_cast<std::size_t>(2 * b * k));
    for (int a = 0; a < 2 * b; ++a) {
      std::set<int> pairs;
      for (int j = 0; j < k; ++j) {
        const int v = neg[static_cast<std::size_t>(a * k + j)];
        ASSERT_GE(v, 0);
        ASSERT_LT(v, 2 * b);
        EXPECT_NE(v % b, a % b);
        pairs.insert(v % b);
      }
      EXPECT_EQ(pairs.size(), static_cast<std::size_t>(k));
    }
  }
}

TEST(BatchNegatives, BeyondOnePerPairStaysWithoutReplacement) {
  Rng rng = make_substream(6, 0);
  const int b = 8;
  const int k = 2 * b - 2;
  const auto neg = sample_batch_negatives(rng, b, k);
  for (int a = 0; a < 2 * b; ++a) {
    std::set<int> seen;
    for (int j = 0; j < k; ++j) {
      const int v = neg[static_cast<std::size_t>(a * k + j)];
      EXPECT_NE(v % b, a % b);
      seen.insert(v);
    }
    EXPECT_EQ(seen.size(), static_cast<std::size_t>(k));
  }
  EXPECT_THROW(sample_batch_negatives(rng, b, k + 1), DomainError);
}

TEST(Mlp, OutputsAreUnitNorm) {
  const ContrastiveMlp net({2, 256, 256, 256}, 1);
  const auto d = gen_circle(10, 30, 2);
  const auto f = net.features(d);
  for (std::size_t i = 0; i < f.size(); ++i) {
    double n = 0.0;
    for (double v : f(i)) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-9);
  }
}

TEST(Mlp, ParameterRoundTrip) {
  ContrastiveMlp net({2, 5, 3}, 4, 1.0);
  EXPECT_EQ(net.num_parameters(), 2u * 5 + 5 + 5 * 3 + 3);
  auto p = net.parameters();
  p[0] = 0.123;
  net.set_parameters(p);
  EXPECT_EQ(net.parameters(), p);
  p.pop_back();
  EXPECT_THROW(net.set_parameters(p), DomainError);
}

TEST(GradientCheck, BelowTolerance) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) EXPECT_LT(mlp_gradient_check(seed), 1e-5) << seed;
}

static double batch_gradient_error(int b, int k) {
  ContrastiveMlp net({2, 6, 4}, 8, 1.0);
  const auto d = gen_circle(3, 2 * b, 1);
  std::vector<double> anchors, positives;
  for (int i = 0; i < b; ++i) {
    for (int j = 0; j < 2; ++j) {
      anchors.push_back(d.point(static_cast<std::size_t>(2 * i))[static_cast<std::size_t>(j)]);
      positives.push_back(d.point(static_cast<std::size_t>(2 * i + 1))[static_cast<std::size_t>(j)]);
    }
  }
  Rng rng = make_substream(3, 0);
  const auto neg = sample_batch_negatives(rng, b, k);
  std::vector<double> grad;
  net.minibatch_loss(anchors, positives, b, neg, k, &grad);
  auto p = net.parameters();
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + 1e-5;
    net.set_parameters(p);
    const double up = net.minibatch_loss(anchors, positives, b, neg, k, nullptr);
    p[i] = keep - 1e-5;
    net.set_parameters(p);
    const double down = net.minibatch_loss(anchors, positives, b, neg, k, nullptr);
    p[i] = keep;
    const double num = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(num - grad[i]) / std::max({std::abs(num), std::abs(grad[i]), 1e-4}));
  }
  return worst;
}

TEST(GradientCheck, LargeNegativeCountAgainstFiniteDifferences) {
  // many negatives per anchor, repeated indices across anchors
  EXPECT_LT(batch_gradient_error(12, 20), 1e-5);
}

TEST(GradientCheck, FewNegativesLargeBatch) {
  EXPECT_LT(batch_gradient_error(48, 3), 1e-5);
}

TEST(Mlp, ZeroNetworkGradientIsFinite) {
  ContrastiveMlp net({2, 5, 5, 4}, 1, 1.0);
  net.set_zero();
  const std::vector<double> a{0.3, -0.2, 1.0, 0.5};
  const std::vector<double> p{0.1, 0.1, -1.0, 2.0};
  Rng rng = make_substream(1, 0);
  const auto neg = sample_batch_negatives(rng, 2, 2);
  std::vector<double> grad;
  const double loss = net.minibatch_loss(a, p, 2, neg, 2, &grad);
  EXPECT_NEAR(loss, std::log(3.0), 1e-15);
  for (double g : grad) {
    EXPECT_TRUE(std::isfinite(g));
    EXPECT_EQ(g, 0.0);
  }
}

TEST(Mlp, LinearFirstLayerScaleInvariance) {
  ContrastiveMlp net({2, 4}, 5, 1.0);
  net.zero_biases();
  const std::vector<double> a{0.3, -0.2, 1.0, 0.5};
  const std::vector<double> p{0.1, 0.4, -1.0, 2.0};
  std::vector<double> a2 = a, p2 = p;
  for (double& v : a2) v *= 2;
  for (double& v : p2) v *= 2;
  Rng rng = make_substream(2, 0);
  const auto neg = sample_batch_negatives(rng, 2, 2);
  EXPECT_NEAR(net.minibatch_loss(a, p, 2, neg, 2, nullptr), net.minibatch_loss(a2, p2, 2, neg, 2, nullptr), 1e-14);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_per_class = 0;
  EXPECT_THROW(c.validate(), DomainError);
  c = TrainConfig{};
  c.num_negatives = 2 * c.batch_size - 1;
  EXPECT_THROW(c.validate(), DomainError);
  c = TrainConfig{};
  c.train_fraction = 1.0;
  EXPECT_THROW(c.validate(), DomainError);
}

TEST(Train, SmallestBatchLimitsNegatives) {
  TrainConfig c;
  c.num_classes = 2;
  c.n_per_class = 10;
  c.batch_size = 8;
  c.num_negatives = 12;
  c.epochs = 2;
  // 12 training pairs in two batches of 6 allow at most 10 negatives.
  EXPECT_THROW(train_contrastive(c), DomainError);
  c.num_negatives = 10;
  EXPECT_NO_THROW(train_contrastive(c));
}

TEST(Train, EpochZeroNearZeroMapPoint) {
  for (int k : {1, 16}) {
    TrainConfig c;
    c.num_negatives = k;
    c.epochs = 1;
    const auto r = train_contrastive(c);
    ASSERT_EQ(r.size(), 1u);
    EXPECT_EQ(r[0].epoch, 0);
    EXPECT_NEAR(r[0].l_cont.value, std::log1p(static_cast<double>(k)), 0.05);
    EXPECT_NEAR(r[0].l_sup, std::log(10.0), 0.05);
    EXPECT_TRUE(std::isnan(r[0].train_loss));
  }
}

TEST(Train, DeterministicAndInsideRegion) {
  TrainConfig c;
  c.num_classes = 4;
  c.n_per_class = 150;
  c.batch_size = 64;
  c.num_negatives = 8;
  c.epochs = 6;
  c.seed = 3;
  const auto a = train_contrastive(c);
  c.threads = 3;
  const auto b = train_contrastive(c);
  ASSERT_EQ(a.size(), 6u);
  const auto p = BoundParams::uniform(4, 8, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].epoch, static_cast<int>(i));
    EXPECT_EQ(a[i].l_cont.value, b[i].l_cont.value);
    EXPECT_EQ(a[i].l_sup, b[i].l_sup);
    EXPECT_EQ(a[i].accuracy, b[i].accuracy);
    EXPECT_TRUE(feasible_region_contains(p, a[i].l_cont.value, a[i].l_sup, 3 * a[i].l_cont.std_error).inside) << i;
  }
  EXPECT_LT(a.back().l_cont.value, a.front().l_cont.value);
}

TEST(Train, LearningRateDropsOnPlateau) {
  TrainConfig c;
  c.num_classes = 2;
  c.n_per_class = 40;
  c.batch_size = 16;
  c.num_negatives = 2;
  c.epochs = 12;
  c.lr_patience = 1;
  c.learning_rate = 1e-9;
  const auto r = train_contrastive(c);
  // Steps this small never beat the 1e-4 relative threshold.
  EXPECT_EQ(r.front().lr, 1e-9);
  for (std::size_t i = 1; i < r.size(); ++i) {
    EXPECT_LE(r[i].lr, r[i - 1].lr);
    const double ratio = r[i].lr / r[i - 1].lr;
    EXPECT_TRUE(ratio == 1.0 || std::abs(ratio - 0.1) < 1e-12);
  }
  EXPECT_LT(r.back().lr, 1e-11);
}
