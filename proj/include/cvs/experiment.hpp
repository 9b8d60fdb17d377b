#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cvs/cost_analysis.hpp"
#include "cvs/datasets.hpp"
#include "cvs/evaluation.hpp"
#include "cvs/label_synthesis.hpp"
#include "cvs/run_config.hpp"
#include "cvs/training.hpp"

namespace cvs {

/// Raw split ("train" or "test") as configured, at its native resolution.
Dataset load_split(const RunConfig& config, std::string_view split);

/// Network input shape for a dataset under the configured resize and channel settings.
FeatureShape network_input(const RunConfig& config, const Dataset& dataset);

/// Attaches masks according to the label mode. Propagation runs the configured Seg-M model and
/// fills `report` when given.
Dataset attach_labels(const RunConfig& config, const Dataset& dataset, PropagationReport* report = nullptr);

/// Loads a trained segmentation model directory written by train-seg.
struct LoadedSegModel {
  std::string id;
  Checkpoint checkpoint;
  std::int64_t n_seg_labeled = 0;
};
LoadedSegModel load_seg_model(const std::filesystem::path& dir);

struct PrepareSummary {
  std::size_t samples = 0;
  std::size_t masks = 0;
  std::filesystem::path manifest;
  std::optional<PropagationReport> report;
};

/// Writes images, masks and manifest.tsv for one split into the output directory.
PrepareSummary prepare_labels(const RunConfig& config, std::string_view split);

/// Trains Seg-M on the configured subset and writes it to the output directory.
SegModel train_seg_model(const RunConfig& config);

/// Trains the configured method on the configured subset; checkpoint, metrics.tsv and
/// train_info.json land in the output directory.
TrainResult train_model(const RunConfig& config, bool resume = false);

/// Evaluates a checkpoint directory on the configured test split and writes report.tsv into the
/// output directory.
EvalReport evaluate_checkpoint(const RunConfig& config, const std::filesystem::path& checkpoint_dir);

/// Runs the configured grid (or k-fold protocol) and writes results.tsv and results_mean.tsv.
std::vector<EvalReport> run_grid(const RunConfig& config, const std::function<void(const EvalReport&)>& on_report = {});

/// Reads a results table and writes cost rows to `output`.
std::vector<CostPoint> cost_report(const std::filesystem::path& results, const AnnotationRates& rates,
                                   const std::filesystem::path& output);

}  // namespace cvs
