#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cvs/datasets.hpp"
#include "cvs/image.hpp"
#include "cvs/network.hpp"
#include "cvs/training.hpp"

namespace cvs {

/// Fraction of exact matches. Throws on empty or unequal inputs.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

/// Accuracy restricted to each class 1..P (nullopt for classes without samples).
std::vector<std::optional<double>> per_class_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                                                      int num_classes);

struct IoUResult {
  std::vector<std::optional<double>> per_class;  // index 0 is background; nullopt when absent from both
  double mean = 0.0;                             // over present classes, background included
  double foreground_mean = 0.0;                  // over present classes 1..P
};

/// Intersections and unions are pooled over all mask pairs.
IoUResult mean_iou(const std::vector<const SegMask*>& pred, const std::vector<const SegMask*>& gt, int num_classes);
IoUResult mean_iou(const SegMask& pred, const SegMask& gt, int num_classes);

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

/// Seeded shuffle, then k contiguous chunks whose sizes differ by at most one.
FoldPlan kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct EvalReport {
  std::string dataset;
  std::string method;
  std::string backbone;
  std::string m = "all";  // samples per class, or "all"
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;  // diagnostic for a failed cell
  double top1 = 0.0;
  std::vector<std::optional<double>> per_class;
  std::optional<double> mean_iou;  // foreground mean IoU on the test masks when available
  double seconds = 0.0;
  std::optional<std::int64_t> n_class_labeled;
  std::optional<std::int64_t> n_seg_labeled;
  double compute_marker = 0.0;  // forward FLOPs x samples processed

  bool operator==(const EvalReport&) const = default;
};

/// Tab-separated, header row first; `-` marks missing values.
std::string format_results_table(const std::vector<EvalReport>& reports);
std::vector<EvalReport> parse_results_table(const std::string& text);

struct MeanRow {
  std::string dataset, method, backbone, m;
  int seeds = 0;         // successful cells averaged
  int failed = 0;
  double mean_top1 = 0.0;
  double std_top1 = 0.0;  // population standard deviation
};

/// Mean over seeds per (dataset, method, backbone, M), preserving first-appearance order.
std::vector<MeanRow> mean_over_seeds(const std::vector<EvalReport>& reports);
std::string format_mean_table(const std::vector<MeanRow>& rows);

/// Where segmentation labels of the training set come from; decides the manual-mask count.
enum class MaskSource { binarized, manual, propagated };

std::string_view to_string(MaskSource s);
MaskSource mask_source_from_string(std::string_view name);

struct CellSpec {
  std::string dataset_name;
  BackboneOptions backbone;
  TrainConfig train;
  MaskSource mask_source = MaskSource::binarized;
  std::int64_t propagated_seg_count = 0;  // manual masks behind the Seg-M model when propagated
  bool default_augmentation = true;       // use the per-dataset policy when train.augmentation is unset
};

/// Trains one (method, M, seed) cell and evaluates on `test`. Never throws for training
/// failures: the report carries ok=false and the diagnostic instead.
EvalReport run_cell(const Dataset& train_set, const Dataset& test_set, const CellSpec& cell, Method method,
                    std::optional<int> m, std::uint64_t seed, const std::filesystem::path& checkpoint_dir = {});

struct GridSpec {
  CellSpec cell;
  std::vector<Method> methods;
  std::vector<std::optional<int>> m_values;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir;  // per-cell checkpoints when non-empty
};

/// One report per (method, M, seed), method-major.
std::vector<EvalReport> run_experiment_grid(const Dataset& train_set, const Dataset& test_set, const GridSpec& grid,
                                            const std::function<void(const EvalReport&)>& on_report = {});

/// k-fold cross-validation of one method over the whole dataset.
std::vector<EvalReport> cross_validate(const Dataset& dataset, const CellSpec& cell, Method method, int k,
                                       std::uint64_t seed);

}  // namespace cvs
