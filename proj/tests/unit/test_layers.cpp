#include <gtest/gtest.h>

#include <cmath>

#include "layers.hpp"
#include "test_util.hpp"

using namespace cvs;

namespace {

std::unique_ptr<Module<double>> build(const LayerSpec& l, FeatureShape in, std::mt19937_64& rng) {
  auto m = make_module<double>(l, in, "m");
  std::vector<StateRef<double>> p, b;
  m->collect(p, b);
  for (auto& ref : p)
    for (auto& v : ref.value->storage()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  return m;
}

Tensor<double>& param(Module<double>& m, const std::string& name) {
  std::vector<StateRef<double>> p, b;
  m.collect(p, b);
  for (auto& r : p)
    if (r.name == "m." + name) return *r.value;
  throw std::runtime_error("no param " + name);
}

}  // namespace

TEST(Conv2d, MatchesDirectCorrelation) {
  std::mt19937_64 rng(1);
  for (auto [k, s, p, d] : {std::array{3, 1, 1, 1}, {3, 2, 1, 1}, {1, 2, 0, 1}, {3, 1, 2, 2}, {5, 2, 2, 1}}) {
    const FeatureShape in = FeatureShape::spatial(2, 7, 6);
    const auto spec = LayerSpec::conv(3, k, s, p, d, true);
    auto m = build(spec, in, rng);
    const auto out = infer_shape(spec, in);
    auto x = test::random_tensor<double>({2, 2, 7, 6}, rng);
    ForwardContext ctx;
    const auto y = m->forward(x, ctx);
    const auto& w = param(*m, "weight");
    const auto& b = param(*m, "bias");
    for (int n = 0; n < 2; ++n)
      for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < out.height; ++oy)
          for (int ox = 0; ox < out.width; ++ox) {
            double acc = b[co];
            for (int ci = 0; ci < 2; ++ci)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int iy = oy * s - p + ky * d, ix = ox * s - p + kx * d;
                  if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                  acc += w[((co * 2 + ci) * k + ky) * k + kx] * x.at(n, ci, iy, ix);
                }
            EXPECT_NEAR(y.at(n, co, oy, ox), acc, 1e-12);
          }
  }
}

TEST(TransposedConv2d, ScattersEachInputIntoItsBlock) {
  std::mt19937_64 rng(2);
  for (auto [k, s] : {std::pair{4, 4}, {2, 2}, {3, 2}}) {
    const FeatureShape in = FeatureShape::spatial(3, 3, 4);
    const auto spec = LayerSpec::transposed_conv(2, k, s);
    auto m = build(spec, in, rng);
    const auto out = infer_shape(spec, in);
    auto x = test::random_tensor<double>({1, 3, 3, 4}, rng);
    ForwardContext ctx;
    const auto y = m->forward(x, ctx);
    const auto& w = param(*m, "weight");
    const auto& b = param(*m, "bias");
    Tensor<double> want({1, 2, out.height, out.width});
    for (int co = 0; co < 2; ++co)
      for (int oy = 0; oy < out.height; ++oy)
        for (int ox = 0; ox < out.width; ++ox) want.at(0, co, oy, ox) = b[co];
    for (int ci = 0; ci < 3; ++ci)
      for (int iy = 0; iy < 3; ++iy)
        for (int ix = 0; ix < 4; ++ix)
          for (int co = 0; co < 2; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx)
                want.at(0, co, iy * s + ky, ix * s + kx) += x.at(0, ci, iy, ix) * w[((ci * 2 + co) * k + ky) * k + kx];
    ASSERT_EQ(y.shape(), want.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], want[i], 1e-12);
  }
}

TEST(MaxPool, WindowMaximum) {
  std::mt19937_64 rng(3);
  const FeatureShape in = FeatureShape::spatial(2, 5, 5);
  auto m = build(LayerSpec::max_pool(3, 2, 1), in, rng);
  auto x = test::random_tensor<double>({1, 2, 5, 5}, rng);
  ForwardContext ctx;
  const auto y = m->forward(x, ctx);
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 3; ++ox) {
        double best = -1e300;
        for (int iy = oy * 2 - 1; iy <= oy * 2 + 1; ++iy)
          for (int ix = ox * 2 - 1; ix <= ox * 2 + 1; ++ix)
            if (iy >= 0 && iy < 5 && ix >= 0 && ix < 5) best = std::max(best, x.at(0, c, iy, ix));
        EXPECT_EQ(y.at(0, c, oy, ox), best);
      }
}

TEST(AvgPoolAndLinear, ReduceThenProject) {
  std::mt19937_64 rng(4);
  auto pool = build(LayerSpec::avg_pool(), FeatureShape::spatial(3, 2, 2), rng);
  auto x = test::random_tensor<double>({2, 3, 2, 2}, rng);
  ForwardContext ctx;
  const auto y = pool->forward(x, ctx);
  ASSERT_EQ(y.shape(), (std::vector<int>{2, 3}));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      EXPECT_NEAR(y[n * 3 + c], (x.at(n, c, 0, 0) + x.at(n, c, 0, 1) + x.at(n, c, 1, 0) + x.at(n, c, 1, 1)) / 4, 1e-15);
  auto lin = build(LayerSpec::linear(2), FeatureShape::vector(3), rng);
  const auto z = lin->forward(y, ctx);
  const auto& w = param(*lin, "weight");
  const auto& b = param(*lin, "bias");
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 2; ++o) {
      double acc = b[o];
      for (int i = 0; i < 3; ++i) acc += w[o * 3 + i] * y[n * 3 + i];
      EXPECT_NEAR(z[n * 2 + o], acc, 1e-12);
    }
}

TEST(Upsample, BilinearHalfPixelCenters) {
  std::mt19937_64 rng(5);
  auto m = build(LayerSpec::upsample(2, 4, 4), FeatureShape::spatial(1, 2, 2), rng);
  Tensor<double> x({1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  ForwardContext ctx;
  const auto y = m->forward(x, ctx);
  // row 0: source y = -0.25 clamps to 0; column weights 0, 0.25, 0.75, 1
  EXPECT_NEAR(y.at(0, 0, 0, 0), 0.0, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 0, 1), 0.25, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 0, 2), 0.75, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 3, 3), 3.0, 1e-15);
  EXPECT_NEAR(y.at(0, 0, 1, 1), 0.25 * 2 + 0.25, 1e-15);
}

TEST(BatchNorm, TrainingUsesBatchStatisticsAndUpdatesRunning) {
  std::mt19937_64 rng(6);
  auto m = make_module<double>(LayerSpec::batch_norm(), FeatureShape::spatial(2, 3, 3), "m");
  std::vector<StateRef<double>> p, b;
  m->collect(p, b);
  m->initialize(rng);
  auto x = test::random_tensor<double>({4, 2, 3, 3}, rng, 1, 3);
  Rng r(0);
  ForwardContext train{true, &r};
  const auto y = m->forward(x, train);
  for (int c = 0; c < 2; ++c) {
    double mean = 0, sq = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) mean += y[(n * 2 + c) * 9 + i];
    mean /= 36;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) sq += std::pow(y[(n * 2 + c) * 9 + i] - mean, 2);
    EXPECT_NEAR(mean, 0.0, 1e-12);
    EXPECT_NEAR(sq / 36, 1.0, 1e-3);
  }
  for (auto& ref : b) {
    if (ref.name == "m.running_mean") {
      EXPECT_GT((*ref.value)[0], 0.1);
      EXPECT_LT((*ref.value)[0], 0.3);
    }
  }
  ForwardContext eval;
  const auto a = m->forward(x, eval);
  const auto again = m->forward(x, eval);
  EXPECT_EQ(a.storage(), again.storage());
}

TEST(BatchNorm, InitializeResetsStatistics) {
  std::mt19937_64 rng(7);
  auto m = make_module<double>(LayerSpec::batch_norm(), FeatureShape::spatial(3, 1, 1), "m");
  m->initialize(rng);
  std::vector<StateRef<double>> p, b;
  m->collect(p, b);
  for (auto& ref : p) {
    if (ref.name == "m.weight") EXPECT_EQ(ref.value->storage(), std::vector<double>(3, 1.0));
    if (ref.name == "m.bias") EXPECT_EQ(ref.value->storage(), std::vector<double>(3, 0.0));
  }
  for (auto& ref : b) {
    if (ref.name == "m.running_var") EXPECT_EQ(ref.value->storage(), std::vector<double>(3, 1.0));
    if (ref.name == "m.running_mean") EXPECT_EQ(ref.value->storage(), std::vector<double>(3, 0.0));
  }
}

TEST(Dropout, InvertedScalingAndIdentityAtEval) {
  std::mt19937_64 rng(8);
  auto m = make_module<double>(LayerSpec::dropout(0.25), FeatureShape::spatial(1, 40, 40), "m");
  Tensor<double> x({1, 1, 40, 40}, 1.0);
  Rng r(3);
  ForwardContext train{true, &r};
  const auto y = m->forward(x, train);
  int zeros = 0;
  for (double v : y.storage()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1 / 0.75) < 1e-12);
    zeros += v == 0.0;
  }
  EXPECT_NEAR(zeros / 1600.0, 0.25, 0.05);
  ForwardContext eval;
  EXPECT_EQ(m->forward(x, eval).storage(), x.storage());
}
