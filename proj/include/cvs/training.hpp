#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvs/augment.hpp"
#include "cvs/checkpoint.hpp"
#include "cvs/datasets.hpp"
#include "cvs/model.hpp"
#include "cvs/network.hpp"

namespace cvs {

enum class LrSchedule { constant, cosine };

std::string_view to_string(LrSchedule s);
LrSchedule lr_schedule_from_string(std::string_view name);

struct TrainConfig {
  Method method = Method::cvs;
  int epochs = 30;
  int batch_size = 0;  // 0 picks from {8, 16, 32, 128} by training-set size
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule lr_schedule = LrSchedule::cosine;
  double mtl_lambda = 1.0;
  std::uint64_t seed = 0;
  std::optional<AugmentationPolicy> augmentation;  // nullopt: no augmentation
  double validation_fraction = 0.1;                // held out when M * P >= 50
  int eval_batch_size = 64;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::json& j, TrainConfig& c);

int default_batch_size(std::size_t train_size);

/// Learning rate at optimizer step `step` of `total_steps`.
double learning_rate(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

/// Momentum SGD: v <- momentum * v + (g + weight_decay * w); w <- w - lr * v.
template <typename T>
void sgd_step(std::vector<StateRef<T>>& params, std::map<std::string, Tensor<T>>& velocity, double lr, double momentum,
              double weight_decay);

// ---------------------------------------------------------------------------
// Metric log: epoch<TAB>split<TAB>metric<TAB>value

struct MetricRecord {
  int epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;

  bool operator==(const MetricRecord&) const = default;
};

class MetricLog {
 public:
  void add(MetricRecord r) { records_.push_back(std::move(r)); }
  const std::vector<MetricRecord>& records() const { return records_; }
  /// Last value recorded for (split, metric), if any.
  std::optional<double> last(const std::string& split, const std::string& metric) const;
  std::vector<double> series(const std::string& split, const std::string& metric) const;

  std::string to_text() const;
  static MetricLog parse(const std::string& text);
  void write(const std::filesystem::path& path) const;
  static MetricLog read(const std::filesystem::path& path);

 private:
  std::vector<MetricRecord> records_;
};

// ---------------------------------------------------------------------------

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: nothing written
  bool resume = false;                   // continue from checkpoint_dir when it holds a checkpoint
  int stop_after_epoch = 0;              // > 0 stops early, leaving a resumable checkpoint
  const ModelParams* pretrained = nullptr;
  std::string config_hash;
  std::function<void(const MetricRecord&)> on_metric;
};

struct TrainResult {
  Checkpoint checkpoint;
  MetricLog log;
  std::int64_t steps = 0;
  double seconds = 0.0;
};

/// Trains `network` on `train_set` with the method's loss and reports validation accuracy per
/// epoch when `val_set` is non-empty. Missing labels throw before the first step; a non-finite
/// loss throws DivergenceError.
TrainResult train(const NetworkSpec& network, const std::vector<LabeledSample>& train_set,
                  const std::vector<LabeledSample>& val_set, const TrainConfig& config, const TrainOptions& options = {});

/// Splits subset ids into (train, validation): the validation share is taken per class when
/// M * P >= 50, otherwise validation is empty.
std::pair<std::vector<std::string>, std::vector<std::string>> validation_split(const Dataset& dataset,
                                                                               const std::vector<std::string>& ids,
                                                                               double fraction, std::uint64_t seed);

/// Top-1 accuracy of `model` on labelled samples.
double evaluate_accuracy(Model<float>& model, const std::vector<LabeledSample>& samples, int batch_size = 64);

}  // namespace cvs
