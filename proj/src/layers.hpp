#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cvs/model.hpp"
#include "cvs/network.hpp"
#include "cvs/tensor.hpp"

namespace cvs {

/// A differentiable layer. forward() caches what backward() needs when ctx.training is set;
/// backward() returns the input gradient and accumulates parameter gradients.
template <typename T>
class Module {
 public:
  Module(std::string id, FeatureShape in, FeatureShape out) : id_(std::move(id)), in_(in), out_(out) {}
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  virtual Tensor<T> forward(const Tensor<T>& x, ForwardContext& ctx) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad) = 0;
  virtual void collect(std::vector<StateRef<T>>& params, std::vector<StateRef<T>>& buffers) {
    (void)params;
    (void)buffers;
  }
  virtual void initialize(Rng& rng) { (void)rng; }

  const std::string& id() const { return id_; }
  const FeatureShape& input_shape() const { return in_; }
  const FeatureShape& output_shape() const { return out_; }

 protected:
  /// Throws ShapeError naming this layer when x does not match the declared input.
  void check_input(const Tensor<T>& x) const;

  std::string id_;
  FeatureShape in_;
  FeatureShape out_;
};

/// Builds the module for one layer descriptor.
template <typename T>
std::unique_ptr<Module<T>> make_module(const LayerSpec& layer, const FeatureShape& in, const std::string& id);

/// Builds a chain module for a whole graph (or a nested layer list).
template <typename T>
std::unique_ptr<Module<T>> make_sequential(const std::vector<LayerSpec>& layers, const FeatureShape& in,
                                           const std::string& id);

}  // namespace cvs
