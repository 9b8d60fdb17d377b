#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "cvs/network.hpp"
#include "cvs/rng.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

struct ForwardContext {
  bool training = false;  // batch statistics, dropout, and activation caching for backward
  Rng* rng = nullptr;     // dropout masks; required when training with dropout
};

/// Named view of a tensor owned by a module. `grad` is null for non-trainable buffers.
template <typename T>
struct StateRef {
  std::string name;
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
};

/// Flat named weights (parameters and running statistics) plus checkpoint metadata.
struct ModelParams {
  std::map<std::string, Tensor<float>> tensors;
  int epoch = 0;
  std::string config_hash;
};

template <typename T>
class Module;

/// Executable instance of a NetworkSpec: the backbone feeds every head.
template <typename T>
class Model {
 public:
  struct Output {
    Tensor<T> seg;  // N x (P+1) x H x W, empty when the method has no segmentation head
    Tensor<T> clf;  // N x P, empty when the method has no classification head
  };

  /// Weights are drawn from `seed`. A graph flagged pretrained needs `pretrained` weights for the
  /// backbone; a null pointer in that case is an error.
  Model(NetworkSpec spec, std::uint64_t seed, const ModelParams* pretrained = nullptr);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;

  const NetworkSpec& spec() const { return spec_; }

  Output forward(const Tensor<T>& images, ForwardContext& ctx);

  /// Backpropagates head-output gradients; parameter gradients accumulate until zero_grad().
  void backward(const Tensor<T>* seg_grad, const Tensor<T>* clf_grad);

  std::vector<StateRef<T>> parameters();
  std::vector<StateRef<T>> buffers();
  void zero_grad();

  ModelParams export_params() const;
  /// Copies every matching tensor; throws ValidationError on missing entries or shape mismatch
  /// unless `allow_partial` is set (then only present names are loaded).
  void import_params(const ModelParams& params, bool allow_partial = false);

 private:
  NetworkSpec spec_;
  std::unique_ptr<Module<T>> backbone_;
  std::unique_ptr<Module<T>> seg_head_;
  std::unique_ptr<Module<T>> clf_head_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace cvs
