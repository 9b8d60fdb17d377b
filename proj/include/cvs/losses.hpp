#pragma once

#include <vector>

#include "cvs/image.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

/// Mean over every pixel of every sample of -log softmax(logits)[target], with the background
/// channel part of both the softmax and the targets. `logits` is N x (P+1) x H x W (or
/// (P+1) x H x W with a single target). When `grad` is given it receives dLoss/dlogits.
template <typename T>
double pixel_cross_entropy(const Tensor<T>& logits, const std::vector<const SegMask*>& targets, Tensor<T>* grad = nullptr);

template <typename T>
double pixel_cross_entropy(const Tensor<T>& logits, const SegMask& target, Tensor<T>* grad = nullptr);

/// Mean over the batch of -log softmax(scores)[label]; `scores` is N x P, labels are 1-based.
template <typename T>
double class_cross_entropy(const Tensor<T>& scores, const std::vector<int>& labels, Tensor<T>* grad = nullptr);

/// Single score vector.
double class_cross_entropy(const std::vector<double>& scores, int label);

inline double multitask_loss(double seg_loss, double clf_loss, double lambda) { return seg_loss + lambda * clf_loss; }

}  // namespace cvs
