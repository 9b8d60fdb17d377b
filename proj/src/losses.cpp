#include "cvs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cvs/error.hpp"

namespace cvs {

template <typename T>
double pixel_cross_entropy(const Tensor<T>& logits, const std::vector<const SegMask*>& targets, Tensor<T>* grad) {
  if (logits.rank() != 4) throw ShapeError("pixel loss expects N x (P+1) x H x W logits, got " + logits.shape_string());
  const int n = logits.dim(0);
  const int c = logits.dim(1);
  const int h = logits.dim(2);
  const int w = logits.dim(3);
  if (static_cast<int>(targets.size()) != n) throw ShapeError("pixel loss: batch and target counts differ");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double scale = 1.0 / (static_cast<double>(n) * plane);
  if (grad) *grad = Tensor<T>(logits.shape());

  double total = 0;
  std::vector<double> prob(c);
  for (int i = 0; i < n; ++i) {
    const SegMask& mask = *targets[i];
    if (mask.height != h || mask.width != w)
      throw ShapeError("pixel loss: mask " + std::to_string(i) + " does not match the logit resolution");
    const T* base = logits.data() + static_cast<std::size_t>(i) * c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      const int target = mask.values[p];
      if (target >= c)
        throw ValidationError("pixel loss: target " + std::to_string(target) + " exceeds class count " + std::to_string(c - 1));
      double peak = base[p];
      for (int k = 1; k < c; ++k) peak = std::max(peak, static_cast<double>(base[k * plane + p]));
      double sum = 0;
      for (int k = 0; k < c; ++k) sum += prob[k] = std::exp(base[k * plane + p] - peak);
      total += std::log(sum) - (base[target * plane + p] - peak);
      if (grad) {
        T* g = grad->data() + static_cast<std::size_t>(i) * c * plane;
        for (int k = 0; k < c; ++k) g[k * plane + p] = static_cast<T>((prob[k] / sum - (k == target)) * scale);
      }
    }
  }
  return total * scale;
}

template <typename T>
double pixel_cross_entropy(const Tensor<T>& logits, const SegMask& target, Tensor<T>* grad) {
  if (logits.rank() != 3) return pixel_cross_entropy(logits, std::vector<const SegMask*>{&target}, grad);
  Tensor<T> batch = logits;
  batch.reshape({1, logits.dim(0), logits.dim(1), logits.dim(2)});
  const double loss = pixel_cross_entropy(batch, std::vector<const SegMask*>{&target}, grad);
  if (grad) grad->reshape(logits.shape());
  return loss;
}

template <typename T>
double class_cross_entropy(const Tensor<T>& scores, const std::vector<int>& labels, Tensor<T>* grad) {
  if (scores.rank() != 2) throw ShapeError("class loss expects N x P scores, got " + scores.shape_string());
  const int n = scores.dim(0);
  const int p = scores.dim(1);
  if (static_cast<int>(labels.size()) != n) throw ShapeError("class loss: batch and label counts differ");
  if (grad) *grad = Tensor<T>(scores.shape());
  double total = 0;
  std::vector<double> prob(p);
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 1 || y > p) throw ValidationError("class loss: label " + std::to_string(y) + " outside 1.." + std::to_string(p));
    const T* row = scores.data() + static_cast<std::size_t>(i) * p;
    const double peak = *std::max_element(row, row + p);
    double sum = 0;
    for (int k = 0; k < p; ++k) sum += prob[k] = std::exp(row[k] - peak);
    total += std::log(sum) - (row[y - 1] - peak);
    if (grad)
      for (int k = 0; k < p; ++k) (*grad)[static_cast<std::size_t>(i) * p + k] = static_cast<T>((prob[k] / sum - (k == y - 1)) / n);
  }
  return total / n;
}

double class_cross_entropy(const std::vector<double>& scores, int label) {
  Tensor<double> t({1, static_cast<int>(scores.size())}, scores);
  return class_cross_entropy(t, {label});
}

template double pixel_cross_entropy<float>(const Tensor<float>&, const std::vector<const SegMask*>&, Tensor<float>*);
template double pixel_cross_entropy<double>(const Tensor<double>&, const std::vector<const SegMask*>&, Tensor<double>*);
template double pixel_cross_entropy<float>(const Tensor<float>&, const SegMask&, Tensor<float>*);
template double pixel_cross_entropy<double>(const Tensor<double>&, const SegMask&, Tensor<double>*);
template double class_cross_entropy<float>(const Tensor<float>&, const std::vector<int>&, Tensor<float>*);
template double class_cross_entropy<double>(const Tensor<double>&, const std::vector<int>&, Tensor<double>*);

}  // namespace cvs
