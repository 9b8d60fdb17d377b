#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "cvs/run_config.hpp"
#include "test_util.hpp"

using namespace cvs;
using nlohmann::json;

TEST(RunConfig, DatasetDefaults) {
  const auto mnist = resolve_run_config({{"dataset", {{"name", "mnist"}}}});
  EXPECT_EQ(mnist.labels.mode, LabelMode::binarize);
  EXPECT_EQ(mnist.labels.threshold, 0.0);
  const auto shapes = resolve_run_config(json::object());
  EXPECT_EQ(shapes.dataset.name, "synthetic-shapes");
  EXPECT_EQ(shapes.labels.mode, LabelMode::manual);
  EXPECT_EQ(shapes.dataset.train_size, 300u);
  EXPECT_EQ(shapes.dataset.test_size, 100u);
  EXPECT_EQ(shapes.train.momentum, 0.9);
  EXPECT_EQ(shapes.train.lr, 0.1);
  EXPECT_EQ(shapes.network.wrn_depth, 28);
  EXPECT_EQ(shapes.network.wrn_width, 10);
}

TEST(RunConfig, DerivedValues) {
  auto rc = resolve_run_config({{"seed", 4}, {"subset", {{"m", 10}}}});
  EXPECT_EQ(rc.m, 10);
  EXPECT_EQ(rc.subset_seed, 4u);
  EXPECT_EQ(rc.train.seed, 4u);
  EXPECT_EQ(rc.train.epochs, 600);
  ASSERT_TRUE(rc.train.augmentation);
  EXPECT_EQ(*rc.train.augmentation, default_policy("synthetic-shapes", Method::cvs));
  rc = resolve_run_config({{"subset", {{"m", "all"}}}});
  EXPECT_FALSE(rc.m);
  EXPECT_EQ(rc.train.epochs, 200);
  rc = resolve_run_config({{"train", {{"epochs", 3}, {"augmentation", nullptr}}}});
  EXPECT_EQ(rc.train.epochs, 3);
  EXPECT_FALSE(rc.train.augmentation);
  EXPECT_FALSE(rc.grid.per_method_augmentation);
  rc = resolve_run_config({{"network", {{"backbone", "resnet101"}}}});
  EXPECT_EQ(rc.network.input_size, 128);
  EXPECT_EQ(rc.network.input_channels, 3);
}

TEST(RunConfig, RejectsUnknownAndInvalid) {
  EXPECT_THROW(resolve_run_config({{"sed", 1}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"network", {{"depth", 16}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"train", {{"lr", -1}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"subset", {{"m", 0}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"subset", {{"m", "some"}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"labels", {{"mode", "guess"}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"network", {{"backbone", "vgg"}}}}), ConfigError);
  EXPECT_THROW(resolve_run_config({{"network", {{"pretrained", true}}}}), ConfigError);
}

TEST(RunConfig, JsonRoundTripAndHash) {
  const auto rc = resolve_run_config({{"seed", 2}, {"subset", {{"m", 5}}}, {"output_dir", "a"}});
  const auto again = resolve_run_config(to_json(rc));
  EXPECT_EQ(to_json(again), to_json(rc));
  EXPECT_EQ(config_hash(again), config_hash(rc));
  EXPECT_EQ(config_hash(rc).size(), 16u);
  auto moved = rc;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(rc));
  auto changed = rc;
  changed.train.lr = 0.05;
  EXPECT_NE(config_hash(changed), config_hash(rc));
}

TEST(RunConfig, OutputRootAndMetadata) {
  test::TempDir dir("root");
  setenv("CVS_OUTPUT_ROOT", dir.path().c_str(), 1);
  EXPECT_EQ(resolve_output_dir("run"), dir / "run");
  EXPECT_EQ(resolve_output_dir("/abs/run"), std::filesystem::path("/abs/run"));
  unsetenv("CVS_OUTPUT_ROOT");
  EXPECT_EQ(resolve_output_dir("run"), std::filesystem::path("run"));
  const auto rc = resolve_run_config(json::object());
  write_run_metadata(dir.path(), rc);
  std::ifstream f(dir / "config.json");
  const auto j = json::parse(f);
  EXPECT_EQ(j["format"], kRunFormat);
  EXPECT_EQ(j["config_hash"], config_hash(rc));
}

TEST(DirectoryLock, ExclusiveAndStaleTakeover) {
  test::TempDir dir("lock");
  {
    DirectoryLock a(dir.path());
    EXPECT_THROW(DirectoryLock b(dir.path()), Error);
  }
  EXPECT_NO_THROW(DirectoryLock c(dir.path()));
  // pid far beyond pid_max: no such process
  std::ofstream(dir / ".lock") << "999999999\n";
  EXPECT_NO_THROW(DirectoryLock d(dir.path()));
}
