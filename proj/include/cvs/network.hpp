#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace cvs {

enum class LayerKind {
  conv,
  batch_norm,
  relu,
  dropout,
  transposed_conv,
  avg_pool,  // global average pooling, flattens to a feature vector
  max_pool,
  linear,
  residual,
  upsample,  // bilinear
  atrous_pyramid,
};

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// One entry of a declarative layer chain. Only the fields relevant to `kind` are read.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int channels = 0;  // output channels (conv, transposed_conv, atrous_pyramid) or features (linear)
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  bool bias = false;
  double rate = 0.0;       // dropout probability
  std::vector<int> rates;  // atrous_pyramid dilation rates
  int factor = 1;          // upsample nominal factor
  int target_height = 0;   // upsample output size; 0 means factor * input
  int target_width = 0;
  bool relu_after = false;  // residual: apply ReLU after the sum
  std::vector<LayerSpec> body;
  std::vector<LayerSpec> shortcut;  // empty means identity

  static LayerSpec conv(int channels, int kernel, int stride = 1, int padding = 0, int dilation = 1, bool bias = false);
  static LayerSpec batch_norm();
  static LayerSpec relu();
  static LayerSpec dropout(double rate);
  static LayerSpec transposed_conv(int channels, int kernel, int stride, int padding = 0, bool bias = true);
  static LayerSpec avg_pool();
  static LayerSpec max_pool(int kernel, int stride, int padding);
  static LayerSpec linear(int features);
  static LayerSpec residual(std::vector<LayerSpec> body, std::vector<LayerSpec> shortcut, bool relu_after);
  static LayerSpec upsample(int factor, int target_height = 0, int target_width = 0);
  static LayerSpec atrous_pyramid(std::vector<int> rates, int channels);

  bool operator==(const LayerSpec&) const = default;
};

/// Activation shape of a single sample. `flat` marks a feature vector (after pooling).
struct FeatureShape {
  int channels = 0;
  int height = 0;
  int width = 0;
  bool flat = false;

  static FeatureShape spatial(int c, int h, int w) { return {c, h, w, false}; }
  static FeatureShape vector(int features) { return {features, 1, 1, true}; }
  std::string to_string() const;
  bool operator==(const FeatureShape&) const = default;
};

struct NetworkGraph {
  std::string name;
  FeatureShape input;
  std::vector<LayerSpec> layers;
  FeatureShape output;
  bool pretrained = false;

  bool operator==(const NetworkGraph&) const = default;
};

/// Output shape of a single layer, or ShapeError naming `where`.
FeatureShape infer_shape(const LayerSpec& layer, const FeatureShape& in, const std::string& where = "layer");

/// Runs shape inference over the chain and checks the declared output.
FeatureShape infer_shape(const NetworkGraph& graph);

/// Number of trainable scalars.
std::int64_t parameter_count(const NetworkGraph& graph);
std::int64_t parameter_count(const LayerSpec& layer, const FeatureShape& in);

/// Multiply-accumulate count of one forward pass for a single sample.
std::int64_t forward_macs(const NetworkGraph& graph);

// ---------------------------------------------------------------------------
// Backbones and heads

enum class BackboneKind { wide_resnet, resnet };

std::string_view to_string(BackboneKind kind);
BackboneKind backbone_from_string(std::string_view name);

/// Pre-activation wide residual network. Requires (depth - 4) % 6 == 0.
NetworkGraph build_wide_resnet(int depth, int width, double dropout_rate, FeatureShape input);

struct ResNetOptions {
  std::vector<int> blocks{3, 4, 23, 3};
  int base_width = 64;
  bool dilated = false;  // output stride 8 instead of 32
  bool pretrained = false;
};

/// Bottleneck residual network in the TorchVision layout.
NetworkGraph build_resnet(const ResNetOptions& options, FeatureShape input);
NetworkGraph build_resnet101(bool pretrained, bool dilated, FeatureShape input);

/// Segmentation head producing (P+1) x H x W logits.
NetworkGraph build_cvs_head(BackboneKind backbone, FeatureShape features, int num_classes, int height, int width);

/// batch_norm -> relu -> global avg_pool -> linear(P).
NetworkGraph build_linear_head(FeatureShape features, int num_classes);

struct MultitaskHeads {
  NetworkGraph segmentation;
  NetworkGraph classification;
};
MultitaskHeads build_multitask_heads(BackboneKind backbone, FeatureShape features, int num_classes, int height,
                                     int width);

// ---------------------------------------------------------------------------
// Full networks per training method

enum class Method { cvs, classification, multitask, segmentation_only };

std::string_view to_string(Method method);
Method method_from_string(std::string_view name);
bool uses_segmentation(Method method);
bool uses_classification(Method method);

struct BackboneOptions {
  BackboneKind kind = BackboneKind::wide_resnet;
  int wrn_depth = 28;
  int wrn_width = 10;
  double dropout_rate = 0.3;
  ResNetOptions resnet{};
};

/// Backbone plus the heads a method needs; the trunk output feeds every head.
struct NetworkSpec {
  Method method = Method::cvs;
  int num_classes = 0;
  NetworkGraph backbone;
  std::optional<NetworkGraph> seg_head;
  std::optional<NetworkGraph> clf_head;

  bool operator==(const NetworkSpec&) const = default;
};

NetworkSpec build_network(Method method, const BackboneOptions& options, FeatureShape input, int num_classes);

std::int64_t parameter_count(const NetworkSpec& spec);
std::int64_t forward_macs(const NetworkSpec& spec);

void to_json(nlohmann::json& j, const LayerSpec& layer);
void from_json(const nlohmann::json& j, LayerSpec& layer);
void to_json(nlohmann::json& j, const FeatureShape& shape);
void from_json(const nlohmann::json& j, FeatureShape& shape);
void to_json(nlohmann::json& j, const NetworkGraph& graph);
void from_json(const nlohmann::json& j, NetworkGraph& graph);
void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);

}  // namespace cvs
