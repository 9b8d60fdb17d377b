#include "cvs/cvs_inference.hpp"

#include <algorithm>
#include <cmath>

#include "cvs/error.hpp"

namespace cvs {

ClassScores scores_from_logits(std::vector<double> logits) {
  if (logits.empty()) throw ValidationError("no foreground classes to score");
  ClassScores out;
  out.logits = std::move(logits);
  const double peak = *std::max_element(out.logits.begin(), out.logits.end());
  out.probabilities.resize(out.logits.size());
  double total = 0;
  for (std::size_t i = 0; i < out.logits.size(); ++i) total += out.probabilities[i] = std::exp(out.logits[i] - peak);
  for (auto& p : out.probabilities) p /= total;
  out.predicted = 1;
  for (std::size_t i = 1; i < out.probabilities.size(); ++i)
    if (out.probabilities[i] > out.probabilities[out.predicted - 1]) out.predicted = static_cast<int>(i) + 1;
  return out;
}

template <typename T>
ClassScores class_scores_from_seg(const T* logits, int channels, int height, int width) {
  if (channels < 2) throw ValidationError("segmentation logits need a background and at least one class channel");
  if (height < 1 || width < 1) throw ShapeError("segmentation logits have an empty spatial shape");
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<double> means(static_cast<std::size_t>(channels) - 1);
  for (int c = 1; c < channels; ++c) {
    const T* p = logits + static_cast<std::size_t>(c) * plane;
    double sum = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!std::isfinite(static_cast<double>(p[i]))) throw ValidationError("segmentation logits are not finite");
      sum += p[i];
    }
    means[c - 1] = sum / static_cast<double>(plane);
  }
  for (std::size_t i = 0; i < plane; ++i)
    if (!std::isfinite(static_cast<double>(logits[i]))) throw ValidationError("segmentation logits are not finite");
  return scores_from_logits(std::move(means));
}

template <typename T>
ClassScores class_scores_from_seg(const Tensor<T>& logits) {
  if (logits.rank() == 3) return class_scores_from_seg(logits.data(), logits.dim(0), logits.dim(1), logits.dim(2));
  if (logits.rank() == 4 && logits.dim(0) == 1)
    return class_scores_from_seg(logits.data(), logits.dim(1), logits.dim(2), logits.dim(3));
  throw ShapeError("expected (P+1) x H x W logits, got " + logits.shape_string());
}

template <typename T>
std::vector<ClassScores> class_scores_batch(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("expected N x (P+1) x H x W logits, got " + logits.shape_string());
  const std::size_t per = Tensor<T>::count({logits.dim(1), logits.dim(2), logits.dim(3)});
  std::vector<ClassScores> out;
  out.reserve(logits.dim(0));
  for (int n = 0; n < logits.dim(0); ++n)
    out.push_back(class_scores_from_seg(logits.data() + n * per, logits.dim(1), logits.dim(2), logits.dim(3)));
  return out;
}

template ClassScores class_scores_from_seg<float>(const float*, int, int, int);
template ClassScores class_scores_from_seg<double>(const double*, int, int, int);
template ClassScores class_scores_from_seg<float>(const Tensor<float>&);
template ClassScores class_scores_from_seg<double>(const Tensor<double>&);
template std::vector<ClassScores> class_scores_batch<float>(const Tensor<float>&);
template std::vector<ClassScores> class_scores_batch<double>(const Tensor<double>&);

namespace {

template <typename Fn>
void for_chunks(const std::vector<const Image*>& images, int batch_size, Fn&& fn) {
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    fn(std::vector<const Image*>(images.begin() + start, images.begin() + end));
  }
}

}  // namespace

std::vector<ClassScores> predict_batch(Model<float>& model, const std::vector<const Image*>& images, int batch_size) {
  if (!uses_segmentation(model.spec().method)) throw ConfigError("model has no segmentation head");
  std::vector<ClassScores> out;
  out.reserve(images.size());
  ForwardContext ctx;
  for_chunks(images, batch_size, [&](const std::vector<const Image*>& chunk) {
    const auto result = model.forward(to_batch<float>(chunk), ctx);
    for (auto& s : class_scores_batch(result.seg)) out.push_back(std::move(s));
  });
  return out;
}

std::vector<ClassScores> predict(Model<float>& model, const std::vector<const Image*>& images, int batch_size) {
  const Method m = model.spec().method;
  if (m == Method::cvs || m == Method::segmentation_only) return predict_batch(model, images, batch_size);
  std::vector<ClassScores> out;
  out.reserve(images.size());
  ForwardContext ctx;
  for_chunks(images, batch_size, [&](const std::vector<const Image*>& chunk) {
    const auto result = model.forward(to_batch<float>(chunk), ctx);
    const int p = result.clf.dim(1);
    for (int n = 0; n < result.clf.dim(0); ++n)
      out.push_back(scores_from_logits(std::vector<double>(result.clf.data() + n * p, result.clf.data() + (n + 1) * p)));
  });
  return out;
}

Tensor<float> segment(Model<float>& model, const std::vector<const Image*>& images, int batch_size) {
  if (!uses_segmentation(model.spec().method)) throw ConfigError("model has no segmentation head");
  if (images.empty()) throw ShapeError("no images to segment");
  Tensor<float> out;
  std::vector<float> data;
  std::vector<int> shape;
  ForwardContext ctx;
  for_chunks(images, batch_size, [&](const std::vector<const Image*>& chunk) {
    auto result = model.forward(to_batch<float>(chunk), ctx);
    if (shape.empty()) shape = result.seg.shape();
    data.insert(data.end(), result.seg.storage().begin(), result.seg.storage().end());
  });
  shape[0] = static_cast<int>(images.size());
  return Tensor<float>(shape, std::move(data));
}

}  // namespace cvs
