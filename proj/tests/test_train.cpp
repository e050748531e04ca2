#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "spherehead/data.hpp"
#include "spherehead/train.hpp"

using namespace spherehead;
using namespace spherehead::train;

namespace {

ModelConfig small_model(heads::Family family, bool projection = true) {
  ModelConfig cfg;
  cfg.hidden = {16, 8};
  cfg.feature_dim = 4;
  cfg.projection = projection;
  cfg.margin = heads::MarginConfig::defaults(family);
  return cfg;
}

OptimConfig quick_optim(std::size_t epochs) {
  OptimConfig opt;
  opt.learning_rate = 0.01;
  opt.batch_size = 32;
  opt.epochs = epochs;
  opt.plateau_window = 0;
  return opt;
}

std::vector<double> flatten(Model& model) {
  std::vector<double> out;
  for (nd::Tensor* p : model.parameters()) out.insert(out.end(), p->values().begin(), p->values().end());
  return out;
}

}  // namespace

TEST(BuildModel, LayerShapes) {
  auto cfg = small_model(heads::Family::cosface);
  Model model = build_model(cfg, 3, 5, 1);
  ASSERT_EQ(model.layers().size(), 3u);
  EXPECT_EQ(model.layers()[0].weight.shape(), (nd::Shape{3, 16}));
  EXPECT_EQ(model.layers()[1].weight.shape(), (nd::Shape{16, 8}));
  EXPECT_EQ(model.layers()[2].weight.shape(), (nd::Shape{8, 4}));
  EXPECT_EQ(model.layers()[2].bias.shape(), (nd::Shape{4}));
  EXPECT_EQ(model.head().W.shape(), (nd::Shape{5, 5}));
  EXPECT_EQ(model.parameters().size(), 7u);

  cfg.projection = false;
  EXPECT_EQ(build_model(cfg, 3, 5, 1).head().W.shape(), (nd::Shape{4, 5}));
}

TEST(BuildModel, SeedDeterminesWeights) {
  const auto cfg = small_model(heads::Family::cce);
  Model a = build_model(cfg, 2, 2, 7), b = build_model(cfg, 2, 2, 7), c = build_model(cfg, 2, 2, 8);
  EXPECT_EQ(flatten(a), flatten(b));
  EXPECT_NE(flatten(a), flatten(c));
}

TEST(BuildModel, NoHiddenLayers) {
  auto cfg = small_model(heads::Family::cce);
  cfg.hidden.clear();
  Model model = build_model(cfg, 2, 3, 0);
  ASSERT_EQ(model.layers().size(), 1u);
  EXPECT_EQ(model.embed(nd::Tensor(nd::Shape{4, 2}, std::vector<double>(8, 0.5))).shape(), (nd::Shape{4, 5}));
}

TEST(BuildModel, RejectsBadConfig) {
  auto cfg = small_model(heads::Family::cce);
  cfg.hidden = {4, 0};
  EXPECT_THROW(build_model(cfg, 2, 2, 0), ConfigError);
  cfg = small_model(heads::Family::sphereface);
  cfg.margin.m = 1.5;
  EXPECT_THROW(build_model(cfg, 2, 2, 0), ConfigError);
}

TEST(SgdStep, PlainGradientStepWithoutMomentum) {
  nd::Tensor p(nd::Shape{3}, {1.0, 2.0, 3.0});
  const std::vector<double> g{0.5, -1.0, 2.0};
  p.accumulate_grad(g);
  nd::Tensor* params[] = {&p};
  MomentumState state;
  OptimConfig opt;
  opt.learning_rate = 0.1;
  opt.momentum = 0.0;
  sgd_step(params, state, opt);
  EXPECT_EQ(p.values(), (std::vector<double>{1.0 - 0.1 * 0.5, 2.0 + 0.1, 3.0 - 0.1 * 2.0}));
}

TEST(SgdStep, TwoStepsWithMomentum) {
  nd::Tensor p(nd::Shape{2}, {0.0, 0.0});
  const std::vector<double> g{1.0, -2.0};
  nd::Tensor* params[] = {&p};
  MomentumState state;
  OptimConfig opt;
  opt.learning_rate = 1.0;
  opt.momentum = 0.5;
  for (int i = 0; i < 2; ++i) {
    p.clear_grad();
    p.accumulate_grad(g);
    sgd_step(params, state, opt);
  }
  EXPECT_EQ(p.values(), (std::vector<double>{-2.5, 5.0}));
}

TEST(SgdStep, VelocityDecaysWithoutGradient) {
  nd::Tensor p(nd::Shape{1}, {0.0});
  nd::Tensor* params[] = {&p};
  MomentumState state;
  OptimConfig opt;
  opt.learning_rate = 1.0;
  opt.momentum = 0.5;
  p.accumulate_grad(std::vector<double>{1.0});
  sgd_step(params, state, opt);
  p.clear_grad();
  sgd_step(params, state, opt);
  sgd_step(params, state, opt);
  EXPECT_EQ(p[0], -1.75);
  EXPECT_EQ(state.velocity[0][0], 0.25);
}

TEST(SgdStep, MismatchedStateRejected) {
  nd::Tensor a(nd::Shape{1}, {0.0}), b(nd::Shape{1}, {0.0});
  MomentumState state;
  nd::Tensor* one[] = {&a};
  nd::Tensor* two[] = {&a, &b};
  OptimConfig opt;
  sgd_step(one, state, opt);
  EXPECT_THROW(sgd_step(two, state, opt), StateError);
}

TEST(Fit, ZeroLearningRateLeavesParameters) {
  const auto ds = data::gen_gaussian_blobs(3, 40, 0.2, 1.0, 0);
  Model model = build_model(small_model(heads::Family::arcface), 2, 3, 0);
  const auto before = flatten(model);
  auto opt = quick_optim(3);
  opt.learning_rate = 0.0;
  fit(model, ds, opt);
  EXPECT_EQ(flatten(model), before);
}

TEST(Fit, SeparableBlobsAreLearned) {
  for (heads::Family family : heads::kAllFamilies) {
    const auto ds = data::gen_gaussian_blobs(3, 50, 0.05, 1.0, 2);
    Model model = build_model(small_model(family), 2, 3, 1);
    const History h = fit(model, ds, quick_optim(60));
    EXPECT_EQ(evaluate(model, ds), 1.0) << heads::to_string(family);
    EXPECT_EQ(h.epochs.size(), 61u);
    EXPECT_FALSE(h.early_stopped);
  }
}

TEST(Fit, HistoryIsDeterministic) {
  const auto ds = data::gen_two_spirals(60, 0.1, 0);
  auto run = [&] {
    Model model = build_model(small_model(heads::Family::broadface), 2, 2, 3);
    History h = fit(model, ds, quick_optim(5));
    return std::make_pair(h, flatten(model));
  };
  const auto [h1, p1] = run();
  const auto [h2, p2] = run();
  ASSERT_EQ(h1.epochs.size(), h2.epochs.size());
  for (std::size_t e = 0; e < h1.epochs.size(); ++e) {
    EXPECT_EQ(h1.epochs[e].loss, h2.epochs[e].loss);
    EXPECT_EQ(h1.epochs[e].train_accuracy, h2.epochs[e].train_accuracy);
  }
  EXPECT_EQ(p1, p2);
}

TEST(Fit, PlateauStopsEarly) {
  const auto ds = data::gen_gaussian_blobs(2, 20, 0.1, 1.0, 0);
  Model model = build_model(small_model(heads::Family::cce), 2, 2, 0);
  auto opt = quick_optim(100);
  opt.learning_rate = 0.0;
  opt.plateau_window = 3;
  const History h = fit(model, ds, opt);
  EXPECT_TRUE(h.early_stopped);
  EXPECT_EQ(h.epochs.size(), 4u);
}

TEST(Fit, DivergenceRaisesTrainingError) {
  const auto ds = data::gen_gaussian_blobs(2, 20, 0.1, 1.0, 0);
  Model model = build_model(small_model(heads::Family::cce, false), 2, 2, 0);
  auto opt = quick_optim(50);
  opt.learning_rate = 1e300;
  EXPECT_THROW(fit(model, ds, opt), TrainingError);
}

TEST(Fit, DatasetShapeMismatch) {
  const auto ds = data::gen_gaussian_blobs(4, 5, 0.1, 1.0, 0);
  Model wrong_dim = build_model(small_model(heads::Family::cce), 3, 4, 0);
  EXPECT_THROW(fit(wrong_dim, ds, quick_optim(1)), DimensionError);
  Model too_few = build_model(small_model(heads::Family::cce), 2, 3, 0);
  EXPECT_THROW(evaluate(too_few, ds), DimensionError);
}

TEST(Fit, ProjectedFeaturesStayOnSphere) {
  const auto ds = data::gen_two_spirals(50, 0.1, 1);
  Model model = build_model(small_model(heads::Family::cosface), 2, 2, 0);
  std::size_t calls = 0;
  double worst = 0.0;
  fit(model, ds, quick_optim(4), [&](std::size_t, std::size_t, const nd::Tensor& f) {
    ++calls;
    EXPECT_EQ(f.shape()[1], 5u);
    for (std::size_t r = 0; r < f.shape()[0]; ++r) {
      double sq = 0;
      for (double v : f.row(r)) sq += v * v;
      worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
    }
  });
  EXPECT_EQ(calls, 4u * 4);
  EXPECT_LE(worst, 1e-12);
}

TEST(Fit, FirstEpochImprovesOnInitialLoss) {
  const auto ds = data::gen_two_spirals(100, 0.1, 5);
  for (heads::Family family : heads::kAllFamilies) {
    for (bool projection : {true, false}) {
      Model model = build_model(small_model(family, projection), 2, 2, 4);
      const History h = fit(model, ds, quick_optim(1));
      EXPECT_LT(h.epochs[1].loss, h.epochs[0].loss) << heads::to_string(family) << " projection=" << projection;
    }
  }
}

TEST(Evaluate, MarginDoesNotChangePredictions) {
  const auto ds = data::gen_two_spirals(80, 0.1, 0);
  auto cfg = small_model(heads::Family::arcface);
  cfg.margin.m = 0.0;
  Model plain = build_model(cfg, 2, 2, 9);
  cfg.margin.m = 0.9;
  Model wide = build_model(cfg, 2, 2, 9);
  EXPECT_EQ(evaluate(plain, ds), evaluate(wide, ds));
  cfg.margin = heads::MarginConfig::defaults(heads::Family::cosface);
  EXPECT_EQ(evaluate(build_model(cfg, 2, 2, 9), ds), evaluate(plain, ds));
}

TEST(Evaluate, RandomLabelsScoreNearChance) {
  auto ds = data::gen_gaussian_blobs(2, 2000, 0.1, 1.0, 0);
  Model model = build_model(small_model(heads::Family::cosface), 2, 2, 0);
  fit(model, ds, quick_optim(2));
  Rng rng(11);
  for (auto& l : ds.labels) l = rng.uniform() < 0.5 ? 0 : 1;
  EXPECT_NEAR(evaluate(model, ds), 0.5, 5 * 0.5 / std::sqrt(4000.0));
}
