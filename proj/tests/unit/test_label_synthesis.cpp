#include <gtest/gtest.h>

#include "cvs/label_synthesis.hpp"
#include "test_util.hpp"

using namespace cvs;

namespace {

// Mostly-black strokes like handwritten digits: exact zeros plus a band of positive values.
Image digit_like(std::mt19937_64& rng) {
  Image im(28, 28, 1);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& p : im.pixels) {
    const float r = u(rng);
    p = r < 0.7f ? 0.0f : (r < 0.75f ? 1e-7f : u(rng));
  }
  return im;
}

}  // namespace

TEST(Binarize, ExhaustiveContract) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> lab(1, 10);
  for (int i = 0; i < 50; ++i) {
    const Image im = digit_like(rng);
    const int y = lab(rng);
    const SegMask m = binarize_to_mask(im, y, 10);
    ASSERT_EQ(m.height, 28);
    ASSERT_EQ(m.width, 28);
    int fg = 0, positive = 0;
    for (int r = 0; r < 28; ++r) {
      for (int c = 0; c < 28; ++c) {
        const auto v = m.at(r, c);
        ASSERT_TRUE(v == 0 || v == y);
        EXPECT_EQ(v == y, im.at(r, c, 0) > 0.0f);
        fg += v == y;
        positive += im.at(r, c, 0) > 0.0f;
      }
    }
    EXPECT_EQ(fg, positive);
  }
}

TEST(Binarize, ThresholdIsStrict) {
  Image im(1, 3, 1);
  im.pixels = {0.5f, 0.50001f, 0.2f};
  const auto m = binarize_to_mask(im, 2, 3, 0.5);
  EXPECT_EQ(m.values, (std::vector<std::uint8_t>{0, 2, 0}));
}

TEST(Binarize, RejectsColourAndBadLabels) {
  EXPECT_THROW(binarize_to_mask(Image(4, 4, 3), 1, 2), ShapeError);
  EXPECT_THROW(binarize_to_mask(Image(4, 4, 1), 3, 2), ValidationError);
  EXPECT_THROW(binarize_to_mask(Image(4, 4, 1), 0, 2), ValidationError);
}

TEST(Binarize, DatasetKeepsIdsAndLabels) {
  std::mt19937_64 rng(8);
  std::vector<LabeledSample> s;
  for (int i = 0; i < 6; ++i) s.push_back({"d" + std::to_string(i), digit_like(rng), std::nullopt, i % 3 + 1});
  const Dataset ds({"toy", 3}, s);
  const Dataset b = binarize_dataset(ds);
  ASSERT_EQ(b.size(), ds.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(b[i].id, ds[i].id);
    EXPECT_EQ(b[i].label, ds[i].label);
    ASSERT_TRUE(b[i].mask);
    EXPECT_EQ(*b[i].mask, binarize_to_mask(ds[i].image, ds[i].label, 3));
  }
}

TEST(ArgmaxMask, LowestChannelWinsTies) {
  Tensor<float> t({2, 3, 1, 2}, 0.0f);
  t.at(1, 2, 0, 0) = 1.0f;
  t.at(1, 1, 0, 1) = 2.0f;
  t.at(1, 2, 0, 1) = 2.0f;
  EXPECT_EQ(argmax_mask(t, 0).values, (std::vector<std::uint8_t>{0, 0}));
  EXPECT_EQ(argmax_mask(t, 1).values, (std::vector<std::uint8_t>{2, 1}));
  EXPECT_EQ(argmax_mask(t, 1).num_classes, 2);
}

TEST(PropagationReport, TextRoundTrip) {
  PropagationReport r;
  r.num_propagated = 97;
  r.num_kept_manual = 3;
  r.source_model_id = "seg-5";
  r.foreground_fraction = {0.125, 0.3, 1.0 / 3.0};
  const auto back = PropagationReport::parse(r.to_text());
  EXPECT_EQ(back.num_propagated, 97u);
  EXPECT_EQ(back.num_kept_manual, 3u);
  EXPECT_EQ(back.source_model_id, "seg-5");
  EXPECT_EQ(back.foreground_fraction, r.foreground_fraction);
}

TEST(Propagate, MasksAreArgmaxOfSegmentation) {
  BackboneOptions o;
  o.wrn_depth = 10;
  o.wrn_width = 1;
  Model<float> model(build_network(Method::segmentation_only, o, FeatureShape::spatial(3, 32, 32), 3), 4);
  const Dataset ds = generate_synthetic_shapes(7, 3);
  std::vector<const Image*> imgs;
  for (const auto& s : ds) imgs.push_back(&s.image);
  const auto prop = propagate_labels(model, "seg-x", imgs, 3);
  ForwardContext ctx;
  const auto seg = model.forward(to_batch<float>(imgs), ctx).seg;
  ASSERT_EQ(prop.masks.size(), 7u);
  for (int i = 0; i < 7; ++i) EXPECT_EQ(prop.masks[i], argmax_mask(seg, i));
  EXPECT_EQ(prop.report.num_propagated, 7u);
  EXPECT_EQ(prop.report.source_model_id, "seg-x");
  ASSERT_EQ(prop.report.foreground_fraction.size(), 3u);
  double total = 0;
  for (double f : prop.report.foreground_fraction) {
    EXPECT_GE(f, 0.0);
    total += f;
  }
  EXPECT_LE(total, 1.0 + 1e-12);
}

TEST(Propagate, KeepsManualMasksWhenAsked) {
  BackboneOptions o;
  o.wrn_depth = 10;
  o.wrn_width = 1;
  Model<float> model(build_network(Method::cvs, o, FeatureShape::spatial(3, 32, 32), 3), 4);
  const Dataset full = generate_synthetic_shapes(6, 3);
  std::vector<LabeledSample> s = full.samples();
  for (std::size_t i = 3; i < s.size(); ++i) s[i].mask.reset();
  const Dataset partial(full.spec(), s);
  PropagationReport rep;
  const Dataset kept = propagate_dataset(model, "seg-1", partial, true, &rep);
  EXPECT_EQ(rep.num_kept_manual, 3u);
  EXPECT_EQ(rep.num_propagated, 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(*kept[i].mask, *full[i].mask);
  for (const auto& x : kept) EXPECT_TRUE(x.mask);
  const Dataset all = propagate_dataset(model, "seg-1", partial, false, &rep);
  EXPECT_EQ(rep.num_propagated, 6u);
  EXPECT_EQ(rep.num_kept_manual, 0u);
}

TEST(Propagate, RejectsMismatchedImages) {
  BackboneOptions o;
  o.wrn_depth = 10;
  o.wrn_width = 1;
  Model<float> model(build_network(Method::cvs, o, FeatureShape::spatial(3, 32, 32), 3), 4);
  Image im(28, 28, 1);
  EXPECT_THROW(propagate_labels(model, "x", {&im}), ShapeError);
}

TEST(SegM, RequiresMasksOnSubset) {
  const Dataset full = generate_synthetic_shapes(12, 5);
  std::vector<LabeledSample> s = full.samples();
  s[0].mask.reset();
  const Dataset partial(full.spec(), s);
  BackboneOptions o;
  o.wrn_depth = 10;
  o.wrn_width = 1;
  const auto net = build_network(Method::segmentation_only, o, FeatureShape::spatial(3, 32, 32), 3);
  TrainConfig cfg;
  cfg.method = Method::segmentation_only;
  cfg.epochs = 1;
  try {
    build_seg_m(partial, SubsetSpec::all(), net, cfg);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(s[0].id), std::string::npos);
  }
  EXPECT_EQ(seg_model_id(SubsetSpec::of(5, 0)), "seg-5");
  EXPECT_EQ(seg_model_id(SubsetSpec::all()), "seg-all");
}

TEST(SegM, TrainsAndNamesModel) {
  const Dataset ds = generate_synthetic_shapes(30, 5);
  BackboneOptions o;
  o.wrn_depth = 10;
  o.wrn_width = 1;
  const auto net = build_network(Method::segmentation_only, o, FeatureShape::spatial(3, 32, 32), 3);
  TrainConfig cfg;
  cfg.method = Method::segmentation_only;
  cfg.epochs = 2;
  const auto seg = build_seg_m(ds, SubsetSpec::of(2, 1), net, cfg);
  EXPECT_EQ(seg.id, "seg-2");
  EXPECT_EQ(seg.checkpoint.params.epoch, 2);
  EXPECT_EQ(seg.log.series("train", "loss").size(), 2u);
}
