#pragma once

#include <string>
#include <vector>

#include "cvs/datasets.hpp"
#include "cvs/image.hpp"
#include "cvs/model.hpp"
#include "cvs/tensor.hpp"
#include "cvs/training.hpp"

namespace cvs {

/// Foreground (intensity strictly above `threshold`) receives `label`; the rest is background.
SegMask binarize_to_mask(const Image& image, int label, int num_classes, double threshold = 0.0);

/// Copy of the dataset with every sample's mask replaced by its binarization.
Dataset binarize_dataset(const Dataset& dataset, double threshold = 0.0);

/// Per-pixel argmax over the channels of sample `n` of an N x (P+1) x H x W tensor; ties go to
/// the lowest channel.
template <typename T>
SegMask argmax_mask(const Tensor<T>& logits, int n = 0);

struct PropagationReport {
  std::size_t num_propagated = 0;
  std::vector<double> foreground_fraction;  // index c-1 holds the share of pixels labelled c
  std::string source_model_id;
  std::size_t num_kept_manual = 0;

  /// Newline-delimited key=value lines.
  std::string to_text() const;
  static PropagationReport parse(const std::string& text);
};

struct Propagation {
  std::vector<SegMask> masks;
  PropagationReport report;
};

/// Runs the segmentation model on each image and keeps the per-pixel argmax.
Propagation propagate_labels(Model<float>& seg_model, const std::string& model_id, const std::vector<const Image*>& images,
                             int batch_size = 64);

/// Fills masks for every sample of `dataset`. With `keep_manual_masks`, samples that already carry
/// a mask keep it (and are not counted as propagated).
Dataset propagate_dataset(Model<float>& seg_model, const std::string& model_id, const Dataset& dataset,
                          bool keep_manual_masks = true, PropagationReport* report = nullptr, int batch_size = 64);

struct SegModel {
  std::string id;  // seg-<M>
  Checkpoint checkpoint;
  MetricLog log;
};

/// Trains the segmentation network on the M-per-class subset. Every subset sample needs a mask.
SegModel build_seg_m(const Dataset& dataset, const SubsetSpec& subset, const NetworkSpec& network,
                     const TrainConfig& config, const TrainOptions& options = {});

std::string seg_model_id(const SubsetSpec& subset);

}  // namespace cvs
