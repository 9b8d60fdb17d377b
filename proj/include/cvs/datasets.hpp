#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cvs/image.hpp"

namespace cvs {

struct ImageShape {
  int height = 0;
  int width = 0;
  int channels = 0;

  bool operator==(const ImageShape&) const = default;
};

/// Where a dataset comes from and what it must look like. Zero-valued fields are inferred.
struct DatasetSpec {
  std::string name;
  int num_classes = 0;
  ImageShape image_shape{};
  std::size_t size = 0;  // expected N; 0 accepts whatever the source holds
  std::string source;    // built-in identifier or path to a manifest file
  std::string split = "train";
  std::filesystem::path data_root;  // directory holding built-in dataset files
  std::uint64_t seed = 0;           // generator seed for synthetic-shapes
};

struct LabeledSample {
  std::string id;
  Image image;
  std::optional<SegMask> mask;
  int label = 0;  // 1-based class
};

/// Immutable collection of samples ordered by id.
class Dataset {
 public:
  Dataset() = default;
  /// Validates every sample against the spec and sorts by id.
  Dataset(DatasetSpec spec, std::vector<LabeledSample> samples);

  const DatasetSpec& spec() const { return spec_; }
  int num_classes() const { return spec_.num_classes; }
  ImageShape image_shape() const { return spec_.image_shape; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }

  const LabeledSample& operator[](std::size_t i) const { return samples_[i]; }
  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }
  const std::vector<LabeledSample>& samples() const { return samples_; }

  const LabeledSample& by_id(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.contains(id); }

  /// counts[c] for c in 1..P (index 0 unused).
  std::vector<std::size_t> class_counts() const;

  /// Samples with the given ids, in the order given.
  std::vector<LabeledSample> select(const std::vector<std::string>& ids) const;

 private:
  DatasetSpec spec_;
  std::vector<LabeledSample> samples_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Fills name, class count and image shape for `mnist`, `cifar10`, `cifar100` or `synthetic-shapes`.
DatasetSpec builtin_spec(std::string_view id, std::string_view split = "train",
                         const std::filesystem::path& data_root = {});

bool is_builtin_dataset(std::string_view id);

/// Loads a built-in dataset (IDX / CIFAR binary files or the shape generator) or a manifest.
Dataset load_dataset(const DatasetSpec& spec);

/// Procedural 32x32x3 images of filled shapes (disk, square, triangle, ...); sample i has class
/// (i mod P) + 1 and carries a ground-truth mask.
Dataset generate_synthetic_shapes(std::size_t count, std::uint64_t seed, int num_classes = 3,
                                  std::string_view split = "train");

// ---------------------------------------------------------------------------
// Manifests: id <TAB> image_path <TAB> label <TAB> mask_path_or_dash

struct ManifestRecord {
  std::string id;
  std::filesystem::path image_path;
  int label = 0;
  std::optional<std::filesystem::path> mask_path;
};

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
/// Paths under the manifest's directory are written relative to it.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

/// Writes every sample as PNG files under `dir` and returns the manifest records.
std::vector<ManifestRecord> export_samples(const std::vector<LabeledSample>& samples, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Subsets

struct SubsetSpec {
  std::optional<int> per_class;  // nullopt selects every sample
  std::uint64_t seed = 0;

  static SubsetSpec all(std::uint64_t seed = 0) { return {std::nullopt, seed}; }
  static SubsetSpec of(int m, std::uint64_t seed) { return {m, seed}; }
};

/// Exactly M randomly chosen ids per class, grouped by class; deterministic for a fixed seed.
std::vector<std::string> sample_per_class(const Dataset& dataset, const SubsetSpec& subset);

/// Copy of the dataset resized to (height, width) with `channels` channels. Masks use
/// nearest-neighbour resampling; single-channel images are replicated.
Dataset adapt_dataset(const Dataset& dataset, int height, int width, int channels);

}  // namespace cvs
