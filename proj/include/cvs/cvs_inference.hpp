#pragma once

#include <vector>

#include "cvs/image.hpp"
#include "cvs/model.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

struct ClassScores {
  std::vector<double> logits;         // length P
  std::vector<double> probabilities;  // softmax(logits)
  int predicted = 0;                  // 1-based, lowest index on ties
};

/// Softmax + argmax over a score vector (classes 1..P).
ClassScores scores_from_logits(std::vector<double> logits);

/// Segmentation logits of one image stored channel-major: (P+1) x H x W, channel 0 background.
/// Each foreground channel is averaged over all positions, then softmaxed.
template <typename T>
ClassScores class_scores_from_seg(const T* logits, int channels, int height, int width);

/// Accepts a (P+1) x H x W tensor or a 1 x (P+1) x H x W batch.
template <typename T>
ClassScores class_scores_from_seg(const Tensor<T>& logits);

/// One ClassScores per sample of an N x (P+1) x H x W batch.
template <typename T>
std::vector<ClassScores> class_scores_batch(const Tensor<T>& logits);

/// Inference-mode forward in chunks of `batch_size`, then the label-derivation rule on the
/// segmentation head.
std::vector<ClassScores> predict_batch(Model<float>& model, const std::vector<const Image*>& images, int batch_size = 64);

/// Class scores from whichever head the method classifies with: segmentation for cvs and
/// segmentation-only, the linear head for classification and multitask.
std::vector<ClassScores> predict(Model<float>& model, const std::vector<const Image*>& images, int batch_size = 64);

/// Inference-mode segmentation logits (N x (P+1) x H x W) in chunks.
Tensor<float> segment(Model<float>& model, const std::vector<const Image*>& images, int batch_size = 64);

}  // namespace cvs
