#include "grad_check.hpp"
#include "test_util.hpp"

#include "lgnet/backbones.hpp"

#include <gtest/gtest.h>

using namespace lgnet;
using lgnet::testing::random_image;
using lgnet::testing::tiny_config;

class LearnedShapes : public ::testing::TestWithParam<int> {};

TEST_P(LearnedShapes, LevelsAtQuarterToThirtySecond) {
  const int side = GetParam();
  const ModelConfig cfg = tiny_config();
  ParameterStore<float> store;
  CounterRng rng(1, 0);
  LearnedBackbone<float> backbone(store, cfg.learned, rng);
  Binding<float> b;
  const auto feats = backbone.forward(random_image<float>(side, side, 2), b);
  for (std::size_t i = 0; i < 4; ++i) {
    const int stride = 4 << i;
    EXPECT_EQ(feats.levels[i].height, side / stride);
    EXPECT_EQ(feats.levels[i].width, side / stride);
    EXPECT_EQ(feats.levels[i].scale, stride);
    EXPECT_EQ(feats.levels[i].channels(), cfg.learned.stage_channels[i]);
  }
  EXPECT_NO_THROW(feats.validate());
}

INSTANTIATE_TEST_SUITE_P(Sides, LearnedShapes, ::testing::Values(64, 128, 512));

TEST(LearnedBackbone, NonRectangularInput) {
  ParameterStore<float> store;
  CounterRng rng(1, 0);
  LearnedBackbone<float> backbone(store, tiny_config().learned, rng);
  Binding<float> b;
  const auto feats = backbone.forward(random_image<float>(64, 96, 2), b);
  EXPECT_EQ(feats.levels[3].height, 2);
  EXPECT_EQ(feats.levels[3].width, 3);
}

TEST(LearnedBackbone, RejectsSidesNotDivisibleBy32) {
  ParameterStore<float> store;
  CounterRng rng(1, 0);
  LearnedBackbone<float> backbone(store, tiny_config().learned, rng);
  Binding<float> b;
  EXPECT_THROW(backbone.forward(random_image<float>(48, 64, 2), b), std::invalid_argument);
  EXPECT_THROW(check_input_size(0, 32), std::invalid_argument);
  EXPECT_NO_THROW(check_input_size(32, 96));
}

TEST(LearnedBackbone, ConfigValidation) {
  LearnedBackboneConfig cfg;
  cfg.stage_channels = {8, 0, 16, 16};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg.stage_channels = {8, 8, 16, 16};
  cfg.blocks_per_stage = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(LearnedBackbone, GradientCheck) {
  ParameterStore<double> store;
  CounterRng rng(3, 0);
  LearnedBackboneConfig cfg;
  cfg.stage_channels = {8, 8, 8, 8};
  LearnedBackbone<double> backbone(store, cfg, rng);
  const auto image = random_image<double>(32, 32, 4);
  CounterRng wrng(5, 0);
  std::array<Matrix<double>, 4> weights;
  {
    Binding<double> b;
    const auto feats = backbone.forward(image, b);
    for (std::size_t i = 0; i < 4; ++i)
      weights[i] = init::normal<double>(feats.levels[i].data.rows(), feats.levels[i].data.cols(), 1.0, wrng);
  }
  auto loss = [&](Binding<double>& b) {
    const auto feats = backbone.forward(image, b);
    Var<double> total = sum(mul(feats.levels[0].data, Var<double>(weights[0])));
    for (std::size_t i = 1; i < 4; ++i) total = add(total, sum(mul(feats.levels[i].data, Var<double>(weights[i]))));
    return total;
  };
  const auto r = lgnet::testing::check_parameter_gradients(store, loss, 20, 6, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-3) << r.worst;
}

TEST(Taps, DefaultTapsAreEvenlySpaced) {
  EXPECT_EQ(default_taps(24), (std::array<int, 4>{6, 12, 18, 24}));
  EXPECT_EQ(default_taps(12), (std::array<int, 4>{3, 6, 9, 12}));
  EXPECT_EQ(default_taps(8), (std::array<int, 4>{2, 4, 6, 8}));
  EXPECT_THROW(default_taps(6), std::invalid_argument);
  EXPECT_THROW(default_taps(0), std::invalid_argument);
}

TEST(GeneralBackbone, TapShapesAndDeterminism) {
  const ModelConfig cfg = tiny_config();
  ParameterStore<float> a;
  ParameterStore<float> b;
  GeneralBackbone<float> ga(a, cfg.general);
  GeneralBackbone<float> gb(b, cfg.general);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(a[i].frozen) << a[i].name;
    EXPECT_EQ(a[i].value, b[i].value) << a[i].name;
  }
  Binding<float> bind;
  const auto taps = ga.forward(random_image<float>(64, 96, 1), bind);
  for (const auto& t : taps) {
    EXPECT_EQ(t.height, 4);
    EXPECT_EQ(t.width, 6);
    EXPECT_EQ(t.scale, cfg.general.patch_size);
    EXPECT_EQ(t.channels(), cfg.general.embed_dim);
    EXPECT_FALSE(t.data.requires_grad());
  }
  // Successive taps come from successively deeper blocks.
  EXPECT_NE(taps[0].values(), taps[1].values());
  EXPECT_NE(taps[2].values(), taps[3].values());
}

TEST(GeneralBackbone, RejectsBadConfig) {
  GeneralBackboneConfig g;
  g.tap_indices = {2, 2, 6, 8};
  EXPECT_THROW(g.validate(), std::invalid_argument);
  g.tap_indices = {2, 4, 6, 9};
  EXPECT_THROW(g.validate(), std::out_of_range);
  g = GeneralBackboneConfig{};
  g.num_heads = 3;
  EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST(GeneralBackbone, RejectsSizeNotDivisibleByPatch) {
  ParameterStore<float> store;
  GeneralBackbone<float> g(store, tiny_config().general);
  Binding<float> b;
  EXPECT_THROW(g.forward(random_image<float>(40, 64, 1), b), std::invalid_argument);
}

TEST(Adapters, ResizeToEachPyramidStride) {
  ParameterStore<double> store;
  CounterRng rng(8, 0);
  CounterRng in_rng(9, 0);
  const FeatureMap<double> hidden{Var<double>(init::normal<double>(6, 16, 1.0, in_rng)), 4, 4, 16};
  Binding<double> b;
  for (int target : {4, 8, 16, 32}) {
    const auto y = adapt_resize(hidden, target, store, rng, b);
    EXPECT_EQ(y.scale, target);
    EXPECT_EQ(y.height, 64 / target);
    EXPECT_EQ(y.width, 64 / target);
    EXPECT_EQ(y.channels(), 6);
  }
  EXPECT_THROW(adapt_resize(hidden, 64, store, rng, b), std::invalid_argument);
  EXPECT_THROW(adapt_resize(hidden, 12, store, rng, b), std::invalid_argument);
  EXPECT_THROW(ResizeAdapter<double>(store, "bad", 6, 16, 64, rng), std::invalid_argument);
}

TEST(Adapters, GradientCheck) {
  ParameterStore<double> store;
  CounterRng rng(10, 0);
  std::vector<ResizeAdapter<double>> adapters;
  for (int target : {4, 8, 16, 32}) adapters.emplace_back(store, "a" + std::to_string(target), 4, 16, target, rng);
  CounterRng in_rng(11, 0);
  const FeatureMap<double> hidden{Var<double>(init::normal<double>(4, 9, 1.0, in_rng)), 3, 3, 16};
  auto loss = [&](Binding<double>& b) {
    Var<double> total;
    bool first = true;
    for (const auto& a : adapters) {
      const auto y = a(hidden, b);
      const Var<double> s = sum(mul(y.data, y.data));
      total = first ? s : add(total, s);
      first = false;
    }
    return total;
  };
  const auto r = lgnet::testing::check_parameter_gradients(store, loss, 20, 12, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(FreezeCheck, DetectsAnyChange) {
  ParameterStore<float> store;
  GeneralBackbone<float> g(store, tiny_config().general);
  const auto before = snapshot(store, "general");
  EXPECT_FALSE(before.empty());
  EXPECT_TRUE(freeze_check(before, snapshot(store, "general")));
  store[3].value(0) = std::nextafter(store[3].value(0), 1e9f);
  EXPECT_FALSE(freeze_check(before, snapshot(store, "general")));
}
