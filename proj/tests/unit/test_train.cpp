#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <set>

#include "oracles.hpp"
#include "pidi/train.hpp"

using namespace pidi;
using train::LossParams;

namespace {

nn::NetworkSpec tiny_spec() {
  nn::NetworkSpec s;
  s.base_channels = 4;
  return s;
}

}  // namespace

TEST(EdgeLoss, DeadBandContributesNothing) {
  // y = 0.2 < η: loss is the same for any prediction there.
  Tensor64 gt({1, 1, 1, 3}, std::vector<double>{0.0, 0.2, 1.0});
  Tensor64 a({1, 1, 1, 3}, std::vector<double>{0.3, 0.01, 0.6});
  Tensor64 b = a;
  b(0, 0, 0, 1) = 0.99;
  EXPECT_EQ(train::edge_loss(a, gt, LossParams{}), train::edge_loss(b, gt, LossParams{}));
}

TEST(EdgeLoss, PerfectPositiveContributesNothing) {
  Tensor64 gt({1, 1, 1, 2}, std::vector<double>{1.0, 0.2});
  Tensor64 p({1, 1, 1, 2}, std::vector<double>{1.0, 0.5});
  LossParams params;
  params.eps = 1e-15;
  EXPECT_NEAR(train::edge_loss(p, gt, params), 0.0, 1e-10);
}

TEST(EdgeLoss, HandValueBetaPointEight) {
  // Eight negatives and two dead-band pixels: β = 0.8, α = 1.1·0.2 = 0.22.
  Tensor64 gt({1, 1, 1, 10});
  gt(0, 0, 0, 8) = 0.2;
  gt(0, 0, 0, 9) = 0.1;
  const Tensor64 p({1, 1, 1, 10}, 0.5);
  const double per_pixel = train::edge_loss(p, gt, LossParams{}) / 8.0;
  EXPECT_NEAR(per_pixel, 0.22 * std::numbers::ln2, 1e-10);
  EXPECT_NEAR(per_pixel, 0.152492, 1e-6);
}

TEST(EdgeLoss, MatchesOracleAndSumsOverImages) {
  std::mt19937_64 rng(1);
  const std::vector<double> levels{0, 0, 0, 0, 0.25, 0.5, 0.75, 1};
  for (int trial = 0; trial < 20; ++trial) {
    Tensor64 gt({3, 1, 6, 7});
    for (double& v : gt.values()) v = levels[rng() % levels.size()];
    const Tensor64 p = random_uniform<double>(gt.shape(), 0.01, 0.99, rng);
    double want = 0;
    for (int n = 0; n < 3; ++n) {
      const Tensor64 pn = slice_channels(p.reshaped({1, 3, 6, 7}), n, n + 1);
      const Tensor64 gn = slice_channels(gt.reshaped({1, 3, 6, 7}), n, n + 1);
      want += oracle::edge_loss(oracle::as_vector(pn), oracle::as_vector(gn), 1.1, 0.3);
    }
    EXPECT_NEAR(train::edge_loss(p, gt, LossParams{}), want, 1e-10);
  }
}

TEST(EdgeLoss, DeadBandGradientIsExactlyZero) {
  std::mt19937_64 rng(2);
  Tensor64 gt({1, 1, 8, 8});
  for (double& v : gt.values()) v = std::array{0.0, 0.25, 1.0}[rng() % 3];
  const Tensor64 p = random_uniform<double>(gt.shape(), 0.05, 0.95, rng);
  Tensor64 g;
  train::edge_loss(p, gt, LossParams{}, &g);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.data()[i] > 0 && gt.data()[i] < 0.3) {
      EXPECT_EQ(g.data()[i], 0.0);
    } else {
      EXPECT_NE(g.data()[i], 0.0);
    }
  }
}

TEST(EdgeLoss, PixelClassesPartitionEachImage) {
  const auto data = train::synth_edge_dataset(3, 20, 32);
  for (const auto& s : data) {
    double neg = 0, pos = 0, band = 0;
    for (float y : s.gt.values()) {
      if (y == 0) {
        ++neg;
      } else if (y >= 0.3f) {
        ++pos;
      } else {
        ++band;
      }
    }
    EXPECT_EQ(neg + pos + band, static_cast<double>(s.gt.size()));
  }
}

TEST(EdgeLoss, ParameterValidation) {
  LossParams p;
  p.eta = 1.0;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  p = {};
  p.lambda = -1;
  EXPECT_THROW(p.validate(), std::invalid_argument);
  EXPECT_THROW(train::edge_loss(Tensor({1, 1, 2, 2}, 0.5f), Tensor({1, 1, 2, 3}), LossParams{}), ShapeError);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const Tensor64 z({3, 7, 1, 1}, 0.4);
  const std::vector<int> labels{0, 3, 6};
  EXPECT_NEAR(train::cross_entropy(z, labels), std::log(7.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectLogitTendsToZero) {
  Tensor64 z({1, 4, 1, 1});
  z(0, 2, 0, 0) = 200.0;
  const std::vector<int> labels{2};
  EXPECT_NEAR(train::cross_entropy(z, labels), 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesLogSumExpOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor64 z = random_normal<double>({5, 6, 1, 1}, 0, 4, rng);
    std::vector<int> labels(5);
    for (int& l : labels) l = static_cast<int>(rng() % 6);
    std::vector<std::vector<double>> rows(5, std::vector<double>(6));
    for (int n = 0; n < 5; ++n)
      for (int k = 0; k < 6; ++k) rows[n][k] = z(n, k, 0, 0);
    EXPECT_NEAR(train::cross_entropy(z, labels), oracle::cross_entropy(rows, labels), 1e-10);
  }
  const std::vector<int> bad{7};
  EXPECT_THROW(train::cross_entropy(Tensor64({1, 6, 1, 1}), bad), std::invalid_argument);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor v({1, 1, 1, 3}, std::vector<float>{1, 2, 3});
  Tensor g({1, 1, 1, 3});
  const Tensor before = v;
  train::Adam<float> opt({{"v", &v, &g, false}}, train::AdamConfig{0.1});
  for (int i = 0; i < 5; ++i) opt.step();
  EXPECT_EQ(v, before);
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor64 v({1, 1, 1, 2}, std::vector<double>{0.0, 1.0});
  Tensor64 g({1, 1, 1, 2}, std::vector<double>{0.5, -3.0});
  train::Adam<double> opt({{"v", &v, &g, false}}, train::AdamConfig{0.01});
  opt.step();
  // m̂ = g, v̂ = g², update = lr·g/(|g| + ε).
  EXPECT_NEAR(v(0, 0, 0, 0), -0.01 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(v(0, 0, 0, 1), 1.0 + 0.01 * 3.0 / (3.0 + 1e-8), 1e-12);
}

TEST(MultiStep, DecaysAtMilestones) {
  const train::MultiStep s{0.005, {10, 16}, 0.1};
  EXPECT_DOUBLE_EQ(s.at(0), 0.005);
  EXPECT_DOUBLE_EQ(s.at(9), 0.005);
  EXPECT_NEAR(s.at(10), 0.1 * s.at(9), 1e-18);
  EXPECT_NEAR(s.at(16), 0.01 * 0.005, 1e-18);
}

TEST(EdgeDataset, DeterministicAndOnTheVoteGrid) {
  const auto a = train::synth_edge_dataset(9, 6, 48);
  const auto b = train::synth_edge_dataset(9, 6, 48);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].gt, b[i].gt);
    for (float v : a[i].image.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    const std::set<float> grid{0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
    for (float v : a[i].gt.values()) EXPECT_TRUE(grid.count(v)) << v;
  }
  EXPECT_NE(train::synth_edge_dataset(10, 1, 48)[0].image, a[0].image);
  EXPECT_THROW(train::synth_edge_dataset(1, 1, 4), std::invalid_argument);
}

TEST(EdgeDataset, PositiveFractionWithinBounds) {
  const auto data = train::synth_edge_dataset(11, 1000, 64);
  double pos = 0, total = 0;
  for (const auto& s : data) {
    double here = 0;
    for (float v : s.gt.values()) here += v >= 0.3f ? 1 : 0;
    EXPECT_GT(here, 0) << "every image shows at least one boundary";
    pos += here;
    total += static_cast<double>(s.gt.size());
  }
  EXPECT_GE(pos / total, 0.005);
  EXPECT_LE(pos / total, 0.15);
}

TEST(ClassDataset, DeterministicBalancedAndInRange) {
  const auto a = train::synth_cls_dataset(5, 1000, 32);
  const auto b = train::synth_cls_dataset(5, 1000, 32);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  std::vector<int> counts(10, 0);
  for (int l : a.labels) ++counts[l];
  for (int c : counts) EXPECT_NEAR(c, 100, 10);
  for (float v : a.images.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(train::shape_class_names().size(), 10u);
}

TEST(History, CsvLayout) {
  train::History h;
  h.rows.push_back({0, 0, 2.5, 0.1, 0.005});
  h.rows.push_back({1, 64, 1.25, 0.5, 0.005});
  EXPECT_EQ(h.csv(), "epoch,step,loss,metric,lr\n0,0,2.5,0.1,0.005\n1,64,1.25,0.5,0.005\n");
}

TEST(EdgeF1, CountsAgainstConsensusThreshold) {
  train::EdgeSample s{Tensor({1, 3, 1, 4}), Tensor({1, 1, 1, 4}, std::vector<float>{1, 0, 0.25f, 0.5f})};
  const std::vector<train::EdgeSample> data{s};
  const std::vector<Tensor> fused{Tensor({1, 1, 1, 4}, std::vector<float>{0.9f, 0.8f, 0.9f, 0.1f})};
  // TP 1, FP 1, FN 1; the 0.25 pixel is ignored.
  EXPECT_NEAR(train::edge_f1(fused, data), 0.5, 1e-12);
}

TEST(TrainEdge, SmokeRunIsFastAndDeterministic) {
  const auto data = train::synth_edge_dataset(12, 8, 32);
  auto run = [&] {
    std::mt19937_64 rng(3);
    nn::PiDiNet<float> net(tiny_spec(), rng);
    train::EdgeTrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch = 4;
    return train::train_edge(net, data, data, cfg);
  };
  const auto t0 = std::chrono::steady_clock::now();
  const train::History a = run();
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  const train::History b = run();
  ASSERT_EQ(a.rows.size(), 2u);
  EXPECT_EQ(a.csv(), b.csv());
  for (const auto& r : a.rows) EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_EQ(a.rows[1].step, 2);
}

TEST(TrainEdge, NonFiniteParameterAbortsWithName) {
  const auto data = train::synth_edge_dataset(13, 4, 16);
  std::mt19937_64 rng(4);
  nn::PiDiNet<float> net(tiny_spec(), rng);
  for (auto& p : net.parameters())
    if (p.name == "fuse.weight") p.value->data()[0] = std::numeric_limits<float>::quiet_NaN();
  train::EdgeTrainConfig cfg;
  cfg.epochs = 1;
  try {
    train::train_edge(net, data, data, cfg);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("fused"), std::string::npos) << e.what();
  }
}

TEST(TrainClassifier, SmokeRunReducesLoss) {
  const auto train_set = train::synth_cls_dataset(14, 256, 16);
  const auto test_set = train::synth_cls_dataset(15, 64, 16);
  nn::NetworkSpec s;
  s.task = nn::Task::classify;
  s.stem_channels = 8;
  s.stage_widths = {8, 16};
  s.units_per_stage = 1;
  std::mt19937_64 rng(5);
  auto net = nn::build_bipidinet<float>(s, rng);
  train::ClassTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch = 32;
  cfg.lr = 0.005;
  const train::History h = train::train_classifier(*net, train_set, test_set, cfg);
  ASSERT_EQ(h.rows.size(), 4u);
  EXPECT_LT(h.rows.back().loss, h.rows.front().loss);
  for (const auto& r : h.rows) {
    EXPECT_GE(r.metric, 0.0);
    EXPECT_LE(r.metric, 1.0);
  }
}
