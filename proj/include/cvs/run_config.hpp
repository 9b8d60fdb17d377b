#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvs/network.hpp"
#include "cvs/training.hpp"

namespace cvs {

inline constexpr const char* kRunFormat = "cvs-run/1";

struct DatasetSection {
  std::string name = "synthetic-shapes";  // built-in identifier, or a label for manifest data
  std::string train_source;               // manifest path; empty uses the built-in loader
  std::string test_source;
  std::filesystem::path data_root;
  std::size_t train_size = 0;  // 0 keeps everything (synthetic-shapes: 300)
  std::size_t test_size = 0;   // 0 keeps everything (synthetic-shapes: 100)
  int num_classes = 0;         // 0 infers
};

struct NetworkSection {
  BackboneKind backbone = BackboneKind::wide_resnet;
  int wrn_depth = 28;
  int wrn_width = 10;
  double dropout_rate = 0.3;
  bool pretrained = false;
  std::filesystem::path pretrained_weights;  // tensor archive, required when pretrained
  int input_size = 0;                        // square side fed to the network; 0 keeps the native size
  int input_channels = 0;                    // 0 keeps the native count
};

enum class LabelMode { none, binarize, manual, propagate };

std::string_view to_string(LabelMode m);
LabelMode label_mode_from_string(std::string_view name);

struct LabelSection {
  LabelMode mode = LabelMode::binarize;
  double threshold = 0.0;
  std::filesystem::path seg_model;  // train-seg output directory, for propagate
  bool keep_manual_masks = true;
  bool relabel_foreground = false;  // propagated foreground takes the image's own class
};

struct GridSection {
  std::vector<Method> methods{Method::cvs, Method::classification};
  std::vector<std::optional<int>> m_values{1, 5, 10};
  std::vector<std::uint64_t> seeds{0};
  int kfold = 0;  // > 0 runs k-fold cross-validation instead of the M grid
  bool per_method_augmentation = true;  // each method gets its dataset default policy
};

/// Fully resolved configuration of one command invocation.
struct RunConfig {
  std::uint64_t seed = 0;
  DatasetSection dataset;
  std::optional<int> m;  // samples per class; nullopt is "all"
  std::uint64_t subset_seed = 0;
  NetworkSection network;
  TrainConfig train;
  LabelSection labels;
  GridSection grid;
  std::filesystem::path output_dir;

  BackboneOptions backbone_options() const;
};

/// Built-in defaults for a dataset as a JSON document (lowest precedence layer).
nlohmann::json dataset_defaults(const std::string& dataset);

/// Merges defaults < `document` and resolves every derived value. Unknown keys anywhere throw
/// ConfigError.
RunConfig resolve_run_config(const nlohmann::json& document);

nlohmann::json to_json(const RunConfig& config);

/// Stable 16-hex-digit hash of the resolved config.
std::string config_hash(const RunConfig& config);

/// Relative output directories are placed under $CVS_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_dir(const std::filesystem::path& dir);

/// Writes config.json (format tag, hash, resolved config) into the directory.
void write_run_metadata(const std::filesystem::path& dir, const RunConfig& config);

/// Exclusive ownership of an output directory through a lock file holding the owner's pid.
/// A lock left by a process that no longer exists is taken over.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path path_;
};

}  // namespace cvs
