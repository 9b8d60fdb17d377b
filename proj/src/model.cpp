#include "cvs/model.hpp"

#include "cvs/error.hpp"
#include "layers.hpp"

namespace cvs {

template <typename T>
Model<T>::Model(NetworkSpec spec, std::uint64_t seed, const ModelParams* pretrained) : spec_(std::move(spec)) {
  infer_shape(spec_.backbone);
  backbone_ = make_sequential<T>(spec_.backbone.layers, spec_.backbone.input, "backbone");
  if (spec_.seg_head) {
    if (spec_.seg_head->input != spec_.backbone.output)
      throw ShapeError("seg_head: input " + spec_.seg_head->input.to_string() + " does not match backbone output " +
                       spec_.backbone.output.to_string());
    seg_head_ = make_sequential<T>(spec_.seg_head->layers, spec_.seg_head->input, "seg_head");
  }
  if (spec_.clf_head) {
    if (spec_.clf_head->input != spec_.backbone.output)
      throw ShapeError("clf_head: input " + spec_.clf_head->input.to_string() + " does not match backbone output " +
                       spec_.backbone.output.to_string());
    clf_head_ = make_sequential<T>(spec_.clf_head->layers, spec_.clf_head->input, "clf_head");
  }

  Rng rng = make_rng(seed, "init");
  backbone_->initialize(rng);
  if (seg_head_) seg_head_->initialize(rng);
  if (clf_head_) clf_head_->initialize(rng);

  if (spec_.backbone.pretrained) {
    if (pretrained == nullptr)
      throw ConfigError("pretrained weights requested for " + spec_.backbone.name + " but none are available");
    ModelParams backbone_only;
    for (const auto& [name, t] : pretrained->tensors)
      if (name.rfind("backbone.", 0) == 0) backbone_only.tensors.emplace(name, t);
    std::vector<StateRef<T>> params, buffers;
    backbone_->collect(params, buffers);
    for (const auto& ref : params)
      if (!backbone_only.tensors.contains(ref.name))
        throw ValidationError("pretrained weights lack '" + ref.name + "'");
    import_params(backbone_only, true);
  }
}

template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

template <typename T>
typename Model<T>::Output Model<T>::forward(const Tensor<T>& images, ForwardContext& ctx) {
  const FeatureShape& in = spec_.backbone.input;
  if (images.rank() != 4 || images.dim(0) < 1 || images.dim(1) != in.channels || images.dim(2) != in.height ||
      images.dim(3) != in.width)
    throw ShapeError("input: expected batch of " + in.to_string() + " images, got tensor " + images.shape_string());
  Output out;
  const Tensor<T> features = backbone_->forward(images, ctx);
  if (seg_head_) out.seg = seg_head_->forward(features, ctx);
  if (clf_head_) out.clf = clf_head_->forward(features, ctx);
  return out;
}

template <typename T>
void Model<T>::backward(const Tensor<T>* seg_grad, const Tensor<T>* clf_grad) {
  Tensor<T> trunk_grad;
  auto accumulate = [&](Tensor<T> g) {
    if (trunk_grad.empty()) {
      trunk_grad = std::move(g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) trunk_grad[i] += g[i];
    }
  };
  if (seg_grad != nullptr) {
    if (!seg_head_) throw Error("backward: network has no segmentation head");
    accumulate(seg_head_->backward(*seg_grad));
  }
  if (clf_grad != nullptr) {
    if (!clf_head_) throw Error("backward: network has no classification head");
    accumulate(clf_head_->backward(*clf_grad));
  }
  if (trunk_grad.empty()) return;
  backbone_->backward(trunk_grad);
}

template <typename T>
std::vector<StateRef<T>> Model<T>::parameters() {
  std::vector<StateRef<T>> params, buffers;
  backbone_->collect(params, buffers);
  if (seg_head_) seg_head_->collect(params, buffers);
  if (clf_head_) clf_head_->collect(params, buffers);
  return params;
}

template <typename T>
std::vector<StateRef<T>> Model<T>::buffers() {
  std::vector<StateRef<T>> params, buffers;
  backbone_->collect(params, buffers);
  if (seg_head_) seg_head_->collect(params, buffers);
  if (clf_head_) clf_head_->collect(params, buffers);
  return buffers;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : parameters()) p.grad->fill(T(0));
}

template <typename T>
ModelParams Model<T>::export_params() const {
  auto& self = const_cast<Model<T>&>(*this);
  ModelParams out;
  for (const auto& ref : self.parameters()) out.tensors.emplace(ref.name, ref.value->template cast<float>());
  for (const auto& ref : self.buffers()) out.tensors.emplace(ref.name, ref.value->template cast<float>());
  return out;
}

template <typename T>
void Model<T>::import_params(const ModelParams& params, bool allow_partial) {
  auto load = [&](const std::vector<StateRef<T>>& refs) {
    for (const auto& ref : refs) {
      const auto it = params.tensors.find(ref.name);
      if (it == params.tensors.end()) {
        if (allow_partial) continue;
        throw ValidationError("model parameters lack '" + ref.name + "'");
      }
      if (it->second.shape() != ref.value->shape())
        throw ValidationError("parameter '" + ref.name + "' has shape " + it->second.shape_string() + ", expected " +
                              ref.value->shape_string());
      *ref.value = it->second.template cast<T>();
    }
  };
  load(parameters());
  load(buffers());
}

template class Model<float>;
template class Model<double>;

}  // namespace cvs
