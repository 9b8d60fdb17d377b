#include <gtest/gtest.h>

#include <set>

#include "cvs/augment.hpp"
#include "test_util.hpp"

using namespace cvs;

namespace {

LabeledSample random_sample(std::mt19937_64& rng, int h = 9, int w = 9, int c = 3) {
  LabeledSample s;
  s.id = "x";
  s.label = 2;
  s.image = Image(h, w, c);
  for (auto& p : s.image.pixels) p = std::uniform_real_distribution<float>(0, 1)(rng);
  SegMask m(h, w, 4);
  for (auto& v : m.values) v = static_cast<std::uint8_t>(rng() % 5);
  s.mask = m;
  return s;
}

AugmentationPolicy only(Transform t) { return AugmentationPolicy{{t}}; }

std::vector<TransformKind> kinds(const AugmentationPolicy& p) {
  std::vector<TransformKind> k;
  for (const auto& t : p.transforms) k.push_back(t.kind);
  return k;
}

}  // namespace

TEST(Augment, FlipMirrorsImageAndMask) {
  std::mt19937_64 rng(1);
  const auto s = random_sample(rng, 5, 7);
  const auto f = augment(s, only(Transform::horizontal_flip(1.0)), 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      EXPECT_EQ(f.mask->at(y, x), s.mask->at(y, 6 - x));
      for (int c = 0; c < 3; ++c) EXPECT_EQ(f.image.at(y, x, c), s.image.at(y, 6 - x, c));
    }
  EXPECT_EQ(augment(s, only(Transform::horizontal_flip(0.0)), 3).image, s.image);
}

TEST(Augment, QuarterTurnIsExact) {
  std::mt19937_64 rng(2);
  const auto s = random_sample(rng, 6, 6);
  const auto r = augment(s, only(Transform::rotate_exact(1)), 0);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      EXPECT_EQ(r.mask->at(y, x), s.mask->at(x, 5 - y));
      EXPECT_EQ(r.image.at(y, x, 1), s.image.at(x, 5 - y, 1));
    }
  const auto full = augment(s, only(Transform::rotate_exact(4)), 0);
  EXPECT_EQ(full.image, s.image);
  EXPECT_EQ(*full.mask, *s.mask);
  AugmentationPolicy twice{{Transform::rotate_exact(1), Transform::rotate_exact(1)}};
  EXPECT_EQ(augment(s, twice, 0).image, augment(s, only(Transform::rotate_exact(2)), 0).image);
  EXPECT_THROW(augment(random_sample(rng, 4, 5), only(Transform::rotate_exact(1)), 0), ShapeError);
}

TEST(Augment, ZeroMagnitudeWarpsAreIdentity) {
  std::mt19937_64 rng(3);
  const auto s = random_sample(rng);
  const auto r = augment(s, only(Transform::rotate(0.0)), 5);
  EXPECT_EQ(*r.mask, *s.mask);
  for (std::size_t i = 0; i < s.image.pixels.size(); ++i) EXPECT_NEAR(r.image.pixels[i], s.image.pixels[i], 1e-5);
  const auto z = augment(s, only(Transform::shift_zoom(0.0, 1.0, 1.0)), 5);
  EXPECT_EQ(*z.mask, *s.mask);
}

TEST(Augment, MaskValuesStayClassIds) {
  std::mt19937_64 rng(4);
  const AugmentationPolicy every{{Transform::rotate(30), Transform::shift_zoom(0.2, 0.8, 1.2),
                                  Transform::crop_resize(0.5, 1.0), Transform::horizontal_flip(),
                                  Transform::color_distort(0.5), Transform::gaussian_noise(0.1)}};
  for (int t = 0; t < 30; ++t) {
    auto s = random_sample(rng, 12, 12);
    for (auto& v : s.mask->values) v = v % 2 ? 3 : 0;
    const auto a = augment(s, every, t);
    EXPECT_EQ(a.label, s.label);
    EXPECT_EQ(a.id, s.id);
    for (auto v : a.mask->values) EXPECT_TRUE(v == 0 || v == 3);
    for (float p : a.image.pixels) {
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
    }
  }
}

TEST(Augment, PhotometricLeavesMask) {
  std::mt19937_64 rng(5);
  const auto s = random_sample(rng);
  for (auto t : {Transform::gaussian_noise(0.2), Transform::color_distort(0.8)}) {
    const auto a = augment(s, only(t), 9);
    EXPECT_EQ(*a.mask, *s.mask);
    EXPECT_NE(a.image, s.image);
  }
}

TEST(Augment, SeedDeterminesResult) {
  std::mt19937_64 rng(6);
  const auto s = random_sample(rng);
  const auto p = default_policy("cifar10", Method::cvs);
  EXPECT_EQ(augment(s, p, 11).image, augment(s, p, 11).image);
  EXPECT_NE(augment(s, p, 11).image, augment(s, p, 12).image);
}

TEST(Augment, UnmaskedSampleStaysUnmasked) {
  std::mt19937_64 rng(7);
  auto s = random_sample(rng);
  s.mask.reset();
  EXPECT_FALSE(augment(s, default_policy("mnist", Method::cvs), 1).mask);
}

TEST(Policy, PerDatasetAndMethod) {
  using K = TransformKind;
  EXPECT_EQ(kinds(default_policy("mnist", Method::cvs)), (std::vector{K::rotate, K::shift_zoom, K::gaussian_noise}));
  EXPECT_EQ(kinds(default_policy("cifar10", Method::cvs)), (std::vector{K::rotate, K::color_distort, K::horizontal_flip}));
  EXPECT_EQ(kinds(default_policy("cifar100", Method::cvs)),
            (std::vector{K::color_distort, K::shift_zoom, K::horizontal_flip}));
  for (const char* ds : {"mnist", "cifar10", "cifar100"})
    for (auto m : {Method::classification, Method::multitask})
      EXPECT_EQ(kinds(default_policy(ds, m)), (std::vector{K::crop_resize, K::horizontal_flip})) << ds;
  for (auto m : {Method::cvs, Method::classification, Method::multitask})
    EXPECT_EQ(kinds(default_policy("hrf", m)), (std::vector{K::horizontal_flip, K::rotate}));
}

TEST(Policy, ValidationAndJson) {
  EXPECT_THROW(Transform::horizontal_flip(1.5).validate(), ConfigError);
  EXPECT_THROW(Transform::shift_zoom(0.1, 1.2, 1.1).validate(), ConfigError);
  EXPECT_THROW(Transform::gaussian_noise(-1).validate(), ConfigError);
  EXPECT_THROW(Transform::crop_resize(0.0, 1.0).validate(), ConfigError);
  const auto p = default_policy("cifar100", Method::cvs);
  nlohmann::json j = p;
  EXPECT_EQ(j.get<AugmentationPolicy>(), p);
  nlohmann::json bad = nlohmann::json::parse(R"([{"kind": "rotate", "degrees": 10}])");
  EXPECT_THROW(bad.get<AugmentationPolicy>(), ConfigError);
  nlohmann::json unknown = nlohmann::json::parse(R"([{"kind": "shear"}])");
  EXPECT_THROW(unknown.get<AugmentationPolicy>(), ConfigError);
}
