#include <gtest/gtest.h>

#include <set>

#include "cvs/evaluation.hpp"
#include "test_util.hpp"

using namespace cvs;

namespace {

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("img" + std::to_string(i));
  return ids;
}

void expect_partition(const FoldPlan& plan, const std::vector<std::string>& ids) {
  const int n = static_cast<int>(ids.size()), k = plan.k;
  ASSERT_EQ(static_cast<int>(plan.folds.size()), k);
  std::multiset<std::string> covered;
  for (const auto& f : plan.folds) {
    const int sz = static_cast<int>(f.test_ids.size());
    EXPECT_TRUE(sz == n / k || sz == n / k + 1);
    EXPECT_EQ(static_cast<int>(f.train_ids.size()), n - sz);
    std::set<std::string> test(f.test_ids.begin(), f.test_ids.end()), train(f.train_ids.begin(), f.train_ids.end());
    EXPECT_EQ(test.size(), f.test_ids.size());
    EXPECT_EQ(train.size(), f.train_ids.size());
    for (const auto& id : f.test_ids) EXPECT_FALSE(train.contains(id));
    covered.insert(f.test_ids.begin(), f.test_ids.end());
  }
  EXPECT_EQ(covered, std::multiset<std::string>(ids.begin(), ids.end()));
}

}  // namespace

TEST(KFold, FortyFiveImagesFiveFolds) {
  const auto ids = make_ids(45);
  const auto plan = kfold_split(ids, 5, 0);
  expect_partition(plan, ids);
  for (const auto& f : plan.folds) {
    EXPECT_EQ(f.test_ids.size(), 9u);
    EXPECT_EQ(f.train_ids.size(), 36u);
  }
}

TEST(KFold, RandomTriples) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 100; ++t) {
    const int k = std::uniform_int_distribution<int>(2, 10)(rng);
    const int n = std::uniform_int_distribution<int>(k, 200)(rng);
    const auto seed = rng();
    const auto ids = make_ids(n);
    const auto plan = kfold_split(ids, k, seed);
    expect_partition(plan, ids);
    const auto again = kfold_split(ids, k, seed);
    for (int f = 0; f < k; ++f) EXPECT_EQ(plan.folds[f].test_ids, again.folds[f].test_ids);
  }
}

TEST(KFold, SeedChangesAssignment) {
  const auto ids = make_ids(45);
  EXPECT_NE(kfold_split(ids, 5, 1).folds[0].test_ids, kfold_split(ids, 5, 2).folds[0].test_ids);
}

TEST(KFold, RejectsBadArguments) {
  EXPECT_THROW(kfold_split(make_ids(4), 5, 0), ConfigError);
  EXPECT_THROW(kfold_split(make_ids(10), 1, 0), ConfigError);
  auto dup = make_ids(10);
  dup[3] = dup[4];
  EXPECT_THROW(kfold_split(dup, 2, 0), ValidationError);
}

TEST(Accuracy, Basics) {
  EXPECT_DOUBLE_EQ(accuracy({1, 2, 3, 3}, {1, 2, 2, 3}), 0.75);
  EXPECT_THROW(accuracy({}, {}), ValidationError);
  EXPECT_THROW(accuracy({1}, {1, 2}), ValidationError);
  const auto pc = per_class_accuracy({1, 2, 1}, {1, 2, 2}, 3);
  ASSERT_EQ(pc.size(), 3u);
  EXPECT_DOUBLE_EQ(*pc[0], 1.0);
  EXPECT_DOUBLE_EQ(*pc[1], 0.5);
  EXPECT_FALSE(pc[2]);
}

TEST(MeanIoU, HandWorkedExample) {
  SegMask gt(2, 3, 2), pred(2, 3, 2);
  gt.values = {0, 1, 1, 0, 2, 2};
  pred.values = {0, 1, 0, 0, 2, 1};
  const auto r = mean_iou(pred, gt, 2);
  // background: I=2 U=3; class 1: I=1 U=3; class 2: I=1 U=2
  EXPECT_DOUBLE_EQ(*r.per_class[0], 2.0 / 3);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 1.0 / 3);
  EXPECT_DOUBLE_EQ(*r.per_class[2], 0.5);
  EXPECT_DOUBLE_EQ(r.mean, (2.0 / 3 + 1.0 / 3 + 0.5) / 3);
  EXPECT_DOUBLE_EQ(r.foreground_mean, (1.0 / 3 + 0.5) / 2);
}

TEST(MeanIoU, AbsentClassesExcludedAndPooled) {
  SegMask a(1, 2, 3), b(1, 2, 3);
  a.values = {0, 1};
  b.values = {0, 1};
  const auto single = mean_iou(a, b, 3);
  EXPECT_FALSE(single.per_class[2]);
  EXPECT_DOUBLE_EQ(single.mean, 1.0);
  SegMask c(1, 2, 3), d(1, 2, 3);
  c.values = {1, 1};
  d.values = {1, 0};
  const auto pooled = mean_iou({&a, &c}, {&b, &d}, 3);
  // class 1 over both pairs: I = 1 + 1, U = 1 + 2
  EXPECT_DOUBLE_EQ(*pooled.per_class[1], 2.0 / 3);
  EXPECT_THROW(mean_iou(a, SegMask(2, 1, 3), 3), ShapeError);
}

TEST(ResultsTable, RoundTrip) {
  EvalReport a;
  a.dataset = "mnist";
  a.method = "cvs";
  a.backbone = "wide-resnet";
  a.m = "10";
  a.seed = 3;
  a.top1 = 0.912345678901234;
  a.per_class = {0.5, std::nullopt, 1.0};
  a.mean_iou = 0.7;
  a.seconds = 12.5;
  a.n_class_labeled = 100;
  a.n_seg_labeled = 100;
  a.compute_marker = 1.5e12;
  EvalReport b;
  b.dataset = "cifar10";
  b.method = "classification";
  b.backbone = "resnet101";
  b.ok = false;
  b.error = "diverged at epoch 3";
  const auto back = parse_results_table(format_results_table({a, b}));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0], a);
  EXPECT_EQ(back[1], b);
  EXPECT_THROW(parse_results_table("nonsense\n"), ValidationError);
}

TEST(ResultsTable, MeanOverSeeds) {
  std::vector<EvalReport> r(4);
  for (int i = 0; i < 4; ++i) {
    r[i].dataset = "d";
    r[i].method = i < 3 ? "cvs" : "classification";
    r[i].backbone = "wide-resnet";
    r[i].m = "5";
    r[i].seed = i;
  }
  r[0].top1 = 0.5;
  r[1].top1 = 0.7;
  r[2].ok = false;
  r[3].top1 = 0.2;
  const auto rows = mean_over_seeds(r);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].method, "cvs");
  EXPECT_EQ(rows[0].seeds, 2);
  EXPECT_EQ(rows[0].failed, 1);
  EXPECT_DOUBLE_EQ(rows[0].mean_top1, 0.6);
  EXPECT_NEAR(rows[0].std_top1, 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(rows[1].std_top1, 0.0);
}

TEST(RunCell, FailedCellIsReportedNotThrown) {
  const Dataset ds = generate_synthetic_shapes(12, 1);
  CellSpec cell;
  cell.dataset_name = "synthetic-shapes";
  cell.backbone.wrn_depth = 10;
  cell.backbone.wrn_width = 1;
  cell.train.epochs = 1;
  const auto r = run_cell(ds, ds, cell, Method::cvs, 50, 0);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.error.find("class"), std::string::npos);
}

TEST(RunCell, LabellingCounts) {
  const Dataset train = generate_synthetic_shapes(30, 1);
  const Dataset test = generate_synthetic_shapes(9, 2, 3, "test");
  CellSpec cell;
  cell.dataset_name = "synthetic-shapes";
  cell.backbone.wrn_depth = 10;
  cell.backbone.wrn_width = 1;
  cell.train.epochs = 1;
  cell.mask_source = MaskSource::manual;
  const auto cvs = run_cell(train, test, cell, Method::cvs, 2, 0);
  ASSERT_TRUE(cvs.ok) << cvs.error;
  EXPECT_EQ(*cvs.n_class_labeled, 6);
  EXPECT_EQ(*cvs.n_seg_labeled, 6);
  EXPECT_TRUE(cvs.mean_iou);
  const auto clf = run_cell(train, test, cell, Method::classification, 2, 0);
  EXPECT_EQ(*clf.n_seg_labeled, 0);
  EXPECT_FALSE(clf.mean_iou);
  cell.mask_source = MaskSource::binarized;
  EXPECT_EQ(*run_cell(train, test, cell, Method::cvs, 2, 0).n_seg_labeled, 0);
  cell.mask_source = MaskSource::propagated;
  cell.propagated_seg_count = 15;
  EXPECT_EQ(*run_cell(train, test, cell, Method::cvs, 2, 0).n_seg_labeled, 15);
}

TEST(CrossValidate, OneReportPerFold) {
  const Dataset ds = generate_synthetic_shapes(20, 1);
  CellSpec cell;
  cell.dataset_name = "synthetic-shapes";
  cell.backbone.wrn_depth = 10;
  cell.backbone.wrn_width = 1;
  cell.train.epochs = 1;
  cell.mask_source = MaskSource::manual;
  const auto r = cross_validate(ds, cell, Method::cvs, 4, 0);
  ASSERT_EQ(r.size(), 4u);
  for (const auto& x : r) {
    EXPECT_TRUE(x.ok) << x.error;
    EXPECT_EQ(*x.n_class_labeled, 15);
  }
}
