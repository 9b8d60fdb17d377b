#include "cvs/network.hpp"

#include <array>
#include <utility>

#include "cvs/error.hpp"

namespace cvs {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 11> kLayerNames{{
    {LayerKind::conv, "conv"},
    {LayerKind::batch_norm, "batch_norm"},
    {LayerKind::relu, "relu"},
    {LayerKind::dropout, "dropout"},
    {LayerKind::transposed_conv, "transposed_conv"},
    {LayerKind::avg_pool, "avg_pool"},
    {LayerKind::max_pool, "max_pool"},
    {LayerKind::linear, "linear"},
    {LayerKind::residual, "residual"},
    {LayerKind::upsample, "upsample"},
    {LayerKind::atrous_pyramid, "atrous_pyramid"},
}};

int conv_out(int size, int kernel, int stride, int padding, int dilation) {
  return (size + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

void require_spatial(const FeatureShape& in, const std::string& where) {
  if (in.flat) throw ShapeError(where + ": expects a spatial input, got " + in.to_string());
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& [k, name] : kLayerNames)
    if (k == kind) return name;
  return "unknown";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kLayerNames)
    if (n == name) return k;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(int channels, int kernel, int stride, int padding, int dilation, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::conv;
  l.channels = channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.dilation = dilation;
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::batch_norm() {
  LayerSpec l;
  l.kind = LayerKind::batch_norm;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::relu;
  return l;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec l;
  l.kind = LayerKind::dropout;
  l.rate = rate;
  return l;
}

LayerSpec LayerSpec::transposed_conv(int channels, int kernel, int stride, int padding, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::transposed_conv;
  l.channels = channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::avg_pool() {
  LayerSpec l;
  l.kind = LayerKind::avg_pool;
  return l;
}

LayerSpec LayerSpec::max_pool(int kernel, int stride, int padding) {
  LayerSpec l;
  l.kind = LayerKind::max_pool;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::linear(int features) {
  LayerSpec l;
  l.kind = LayerKind::linear;
  l.channels = features;
  l.bias = true;
  return l;
}

LayerSpec LayerSpec::residual(std::vector<LayerSpec> body, std::vector<LayerSpec> shortcut, bool relu_after) {
  LayerSpec l;
  l.kind = LayerKind::residual;
  l.body = std::move(body);
  l.shortcut = std::move(shortcut);
  l.relu_after = relu_after;
  return l;
}

LayerSpec LayerSpec::upsample(int factor, int target_height, int target_width) {
  LayerSpec l;
  l.kind = LayerKind::upsample;
  l.factor = factor;
  l.target_height = target_height;
  l.target_width = target_width;
  return l;
}

LayerSpec LayerSpec::atrous_pyramid(std::vector<int> rates, int channels) {
  LayerSpec l;
  l.kind = LayerKind::atrous_pyramid;
  l.rates = std::move(rates);
  l.channels = channels;
  return l;
}

std::string FeatureShape::to_string() const {
  if (flat) return "[" + std::to_string(channels) + "]";
  return "[" + std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels) + "]";
}

namespace {

FeatureShape infer_chain(const std::vector<LayerSpec>& layers, FeatureShape shape, const std::string& prefix) {
  for (std::size_t i = 0; i < layers.size(); ++i)
    shape = infer_shape(layers[i], shape, prefix + "." + std::to_string(i));
  return shape;
}

}  // namespace

FeatureShape infer_shape(const LayerSpec& layer, const FeatureShape& in, const std::string& where) {
  const std::string tag = where + " (" + std::string(to_string(layer.kind)) + ")";
  if (in.channels < 1 || in.height < 1 || in.width < 1) throw ShapeError(tag + ": empty input " + in.to_string());
  switch (layer.kind) {
    case LayerKind::conv:
    case LayerKind::max_pool: {
      require_spatial(in, tag);
      if (layer.kernel < 1 || layer.stride < 1 || layer.dilation < 1 || layer.padding < 0)
        throw ShapeError(tag + ": invalid kernel geometry");
      const int h = conv_out(in.height, layer.kernel, layer.stride, layer.padding, layer.dilation);
      const int w = conv_out(in.width, layer.kernel, layer.stride, layer.padding, layer.dilation);
      if (h < 1 || w < 1) throw ShapeError(tag + ": input " + in.to_string() + " too small for kernel");
      const int c = layer.kind == LayerKind::conv ? layer.channels : in.channels;
      if (c < 1) throw ShapeError(tag + ": channel count must be positive");
      return FeatureShape::spatial(c, h, w);
    }
    case LayerKind::transposed_conv: {
      require_spatial(in, tag);
      if (layer.kernel < 1 || layer.stride < 1 || layer.channels < 1) throw ShapeError(tag + ": invalid geometry");
      const int h = (in.height - 1) * layer.stride - 2 * layer.padding + layer.kernel;
      const int w = (in.width - 1) * layer.stride - 2 * layer.padding + layer.kernel;
      if (h < 1 || w < 1) throw ShapeError(tag + ": empty output");
      return FeatureShape::spatial(layer.channels, h, w);
    }
    case LayerKind::batch_norm:
    case LayerKind::relu:
    case LayerKind::dropout:
      return in;
    case LayerKind::avg_pool:
      require_spatial(in, tag);
      return FeatureShape::vector(in.channels);
    case LayerKind::linear:
      if (!in.flat) throw ShapeError(tag + ": expects a pooled feature vector, got " + in.to_string());
      if (layer.channels < 1) throw ShapeError(tag + ": feature count must be positive");
      return FeatureShape::vector(layer.channels);
    case LayerKind::residual: {
      const FeatureShape body = infer_chain(layer.body, in, where + ".body");
      const FeatureShape skip = infer_chain(layer.shortcut, in, where + ".shortcut");
      if (body != skip)
        throw ShapeError(tag + ": body output " + body.to_string() + " does not match shortcut " + skip.to_string());
      return body;
    }
    case LayerKind::upsample:
      require_spatial(in, tag);
      if (layer.target_height > 0 && layer.target_width > 0)
        return FeatureShape::spatial(in.channels, layer.target_height, layer.target_width);
      if (layer.factor < 1) throw ShapeError(tag + ": factor must be positive");
      return FeatureShape::spatial(in.channels, in.height * layer.factor, in.width * layer.factor);
    case LayerKind::atrous_pyramid:
      require_spatial(in, tag);
      if (layer.channels < 1) throw ShapeError(tag + ": channel count must be positive");
      for (int r : layer.rates)
        if (r < 1) throw ShapeError(tag + ": atrous rates must be positive");
      return FeatureShape::spatial(layer.channels, in.height, in.width);
  }
  throw ShapeError(tag + ": unhandled layer kind");
}

FeatureShape infer_shape(const NetworkGraph& graph) {
  const FeatureShape out = infer_chain(graph.layers, graph.input, graph.name);
  if (graph.output.channels != 0 && out != graph.output)
    throw ShapeError(graph.name + ": declared output " + graph.output.to_string() + " but inferred " + out.to_string());
  return out;
}

namespace {

std::int64_t chain_params(const std::vector<LayerSpec>& layers, FeatureShape shape) {
  std::int64_t total = 0;
  for (const auto& l : layers) {
    total += parameter_count(l, shape);
    shape = infer_shape(l, shape);
  }
  return total;
}

std::int64_t chain_macs(const std::vector<LayerSpec>& layers, FeatureShape shape);

std::int64_t layer_macs(const LayerSpec& l, const FeatureShape& in) {
  const FeatureShape out = infer_shape(l, in);
  const std::int64_t k2 = std::int64_t{l.kernel} * l.kernel;
  switch (l.kind) {
    case LayerKind::conv:
      return std::int64_t{out.height} * out.width * out.channels * in.channels * k2;
    case LayerKind::transposed_conv:
      return std::int64_t{in.height} * in.width * in.channels * out.channels * k2;
    case LayerKind::linear:
      return std::int64_t{in.channels} * out.channels;
    case LayerKind::residual:
      return chain_macs(l.body, in) + chain_macs(l.shortcut, in);
    case LayerKind::atrous_pyramid: {
      const std::int64_t hw = std::int64_t{in.height} * in.width;
      const std::int64_t c = l.channels;
      const auto branches = static_cast<std::int64_t>(l.rates.size()) + 2;
      return hw * c * in.channels * (1 + 9 * static_cast<std::int64_t>(l.rates.size())) + c * in.channels +
             hw * branches * c * c;
    }
    default:
      return 0;
  }
}

std::int64_t chain_macs(const std::vector<LayerSpec>& layers, FeatureShape shape) {
  std::int64_t total = 0;
  for (const auto& l : layers) {
    total += layer_macs(l, shape);
    shape = infer_shape(l, shape);
  }
  return total;
}

}  // namespace

std::int64_t parameter_count(const LayerSpec& l, const FeatureShape& in) {
  const std::int64_t k2 = std::int64_t{l.kernel} * l.kernel;
  switch (l.kind) {
    case LayerKind::conv:
      return in.channels * k2 * l.channels + (l.bias ? l.channels : 0);
    case LayerKind::transposed_conv:
      return in.channels * k2 * l.channels + (l.bias ? l.channels : 0);
    case LayerKind::batch_norm:
      return 2 * std::int64_t{in.channels};
    case LayerKind::linear:
      return std::int64_t{in.channels} * l.channels + l.channels;
    case LayerKind::residual:
      return chain_params(l.body, in) + chain_params(l.shortcut, in);
    case LayerKind::atrous_pyramid: {
      const std::int64_t c = l.channels;
      const auto r = static_cast<std::int64_t>(l.rates.size());
      const std::int64_t branches = (in.channels * c + 2 * c) * 2 + (in.channels * c * 9 + 2 * c) * r;
      return branches + (r + 2) * c * c + 2 * c;
    }
    default:
      return 0;
  }
}

std::int64_t parameter_count(const NetworkGraph& graph) { return chain_params(graph.layers, graph.input); }

std::int64_t forward_macs(const NetworkGraph& graph) { return chain_macs(graph.layers, graph.input); }

// ---------------------------------------------------------------------------

std::string_view to_string(BackboneKind kind) {
  return kind == BackboneKind::wide_resnet ? "wide-resnet" : "resnet101";
}

BackboneKind backbone_from_string(std::string_view name) {
  if (name == "wide-resnet") return BackboneKind::wide_resnet;
  if (name == "resnet101" || name == "resnet") return BackboneKind::resnet;
  throw ConfigError("unknown backbone '" + std::string(name) + "' (expected wide-resnet or resnet101)");
}

NetworkGraph build_wide_resnet(int depth, int width, double dropout_rate, FeatureShape input) {
  if (depth < 10 || (depth - 4) % 6 != 0)
    throw ConfigError("wide-resnet depth must satisfy (depth - 4) % 6 == 0 and depth >= 10, got " +
                      std::to_string(depth));
  if (width < 1) throw ConfigError("wide-resnet width must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");

  const int blocks = (depth - 4) / 6;
  NetworkGraph g;
  g.name = "wide_resnet_" + std::to_string(depth) + "_" + std::to_string(width);
  g.input = input;
  g.layers.push_back(LayerSpec::conv(16, 3, 1, 1, 1, true));

  int in_planes = 16;
  constexpr std::array<int, 3> kBase{16, 32, 64};
  constexpr std::array<int, 3> kStride{1, 2, 2};
  for (int group = 0; group < 3; ++group) {
    const int planes = kBase[group] * width;
    for (int b = 0; b < blocks; ++b) {
      const int stride = b == 0 ? kStride[group] : 1;
      std::vector<LayerSpec> body{
          LayerSpec::batch_norm(),
          LayerSpec::relu(),
          LayerSpec::conv(planes, 3, 1, 1, 1, true),
          LayerSpec::dropout(dropout_rate),
          LayerSpec::batch_norm(),
          LayerSpec::relu(),
          LayerSpec::conv(planes, 3, stride, 1, 1, true),
      };
      std::vector<LayerSpec> shortcut;
      if (stride != 1 || in_planes != planes) shortcut.push_back(LayerSpec::conv(planes, 1, stride, 0, 1, true));
      g.layers.push_back(LayerSpec::residual(std::move(body), std::move(shortcut), false));
      in_planes = planes;
    }
  }
  g.output = infer_shape(g);
  return g;
}

NetworkGraph build_resnet(const ResNetOptions& options, FeatureShape input) {
  if (options.blocks.size() != 4) throw ConfigError("resnet needs four stage block counts");
  for (int b : options.blocks)
    if (b < 1) throw ConfigError("resnet stage block counts must be positive");
  if (options.base_width < 1) throw ConfigError("resnet base width must be positive");

  NetworkGraph g;
  g.name = options.blocks == std::vector<int>{3, 4, 23, 3} && options.base_width == 64 ? "resnet101" : "resnet";
  if (options.dilated) g.name += "_dilated";
  g.input = input;
  g.pretrained = options.pretrained;
  const int base = options.base_width;
  g.layers = {LayerSpec::conv(base, 7, 2, 3), LayerSpec::batch_norm(), LayerSpec::relu(), LayerSpec::max_pool(3, 2, 1)};

  constexpr int kExpansion = 4;
  int in_planes = base;
  int dilation = 1;
  for (int stage = 0; stage < 4; ++stage) {
    const int planes = base << stage;
    int stride = stage == 0 ? 1 : 2;
    const int previous_dilation = dilation;
    if (options.dilated && stage >= 2) {
      dilation *= stride;
      stride = 1;
    }
    for (int b = 0; b < options.blocks[stage]; ++b) {
      const int s = b == 0 ? stride : 1;
      const int d = b == 0 ? previous_dilation : dilation;
      std::vector<LayerSpec> body{
          LayerSpec::conv(planes, 1),        LayerSpec::batch_norm(), LayerSpec::relu(),
          LayerSpec::conv(planes, 3, s, d, d), LayerSpec::batch_norm(), LayerSpec::relu(),
          LayerSpec::conv(planes * kExpansion, 1), LayerSpec::batch_norm(),
      };
      std::vector<LayerSpec> shortcut;
      if (b == 0 && (s != 1 || in_planes != planes * kExpansion))
        shortcut = {LayerSpec::conv(planes * kExpansion, 1, s), LayerSpec::batch_norm()};
      g.layers.push_back(LayerSpec::residual(std::move(body), std::move(shortcut), true));
      in_planes = planes * kExpansion;
    }
  }
  g.output = infer_shape(g);
  return g;
}

NetworkGraph build_resnet101(bool pretrained, bool dilated, FeatureShape input) {
  ResNetOptions options;
  options.pretrained = pretrained;
  options.dilated = dilated;
  return build_resnet(options, input);
}

namespace {

void check_classes(int num_classes) {
  if (num_classes < 1) throw ConfigError("number of classes must be at least 1");
}

// Wide-ResNet features are exactly a quarter of the input resolution.
void check_wrn_reach(FeatureShape features, int height, int width) {
  if (features.height * 4 != height || features.width * 4 != width)
    throw ShapeError("target " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not reachable from features " + features.to_string() + " with x4 upsampling");
}

// Dilated ResNet features have ceil(H/8) rows; bilinear upsampling resizes to the exact target.
void check_resnet_reach(FeatureShape features, int height, int width) {
  if (ceil_div(height, 8) != features.height || ceil_div(width, 8) != features.width)
    throw ShapeError("target " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not reachable from features " + features.to_string() + " with x8 upsampling");
}

NetworkGraph finish(std::string name, FeatureShape features, std::vector<LayerSpec> layers) {
  NetworkGraph g;
  g.name = std::move(name);
  g.input = features;
  g.layers = std::move(layers);
  g.output = infer_shape(g);
  return g;
}

}  // namespace

NetworkGraph build_cvs_head(BackboneKind backbone, FeatureShape features, int num_classes, int height, int width) {
  check_classes(num_classes);
  if (features.flat) throw ShapeError("cvs head needs spatial features, got " + features.to_string());
  const int out = num_classes + 1;
  if (backbone == BackboneKind::wide_resnet) {
    check_wrn_reach(features, height, width);
    return finish("cvs_head", features,
                  {LayerSpec::batch_norm(), LayerSpec::relu(), LayerSpec::transposed_conv(out, 4, 4)});
  }
  check_resnet_reach(features, height, width);
  return finish("cvs_head", features,
                {LayerSpec::atrous_pyramid({12, 24, 36}, 256), LayerSpec::conv(256, 3, 1, 1), LayerSpec::batch_norm(),
                 LayerSpec::relu(), LayerSpec::conv(out, 1, 1, 0, 1, true), LayerSpec::upsample(8, height, width)});
}

NetworkGraph build_linear_head(FeatureShape features, int num_classes) {
  check_classes(num_classes);
  return finish("linear_head", features,
                {LayerSpec::batch_norm(), LayerSpec::relu(), LayerSpec::avg_pool(), LayerSpec::linear(num_classes)});
}

MultitaskHeads build_multitask_heads(BackboneKind backbone, FeatureShape features, int num_classes, int height,
                                     int width) {
  check_classes(num_classes);
  if (backbone == BackboneKind::wide_resnet) {
    check_wrn_reach(features, height, width);
    return {finish("mtl_seg_head", features,
                   {LayerSpec::batch_norm(), LayerSpec::relu(), LayerSpec::transposed_conv(num_classes + 1, 4, 4)}),
            build_linear_head(features, num_classes)};
  }
  check_resnet_reach(features, height, width);
  std::vector<LayerSpec> seg{
      LayerSpec::transposed_conv(256, 2, 2), LayerSpec::relu(), LayerSpec::batch_norm(),
      LayerSpec::transposed_conv(128, 2, 2), LayerSpec::relu(), LayerSpec::batch_norm(),
      LayerSpec::transposed_conv(num_classes + 1, 2, 2),
  };
  if (features.height * 8 != height || features.width * 8 != width) seg.push_back(LayerSpec::upsample(1, height, width));
  return {finish("mtl_seg_head", features, std::move(seg)),
          finish("mtl_clf_head", features, {LayerSpec::avg_pool(), LayerSpec::linear(num_classes)})};
}

// ---------------------------------------------------------------------------

std::string_view to_string(Method method) {
  switch (method) {
    case Method::cvs: return "cvs";
    case Method::classification: return "classification";
    case Method::multitask: return "multitask";
    case Method::segmentation_only: return "segmentation-only";
  }
  return "unknown";
}

Method method_from_string(std::string_view name) {
  if (name == "cvs") return Method::cvs;
  if (name == "classification") return Method::classification;
  if (name == "multitask") return Method::multitask;
  if (name == "segmentation-only") return Method::segmentation_only;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected cvs, classification, multitask or segmentation-only)");
}

bool uses_segmentation(Method method) { return method != Method::classification; }
bool uses_classification(Method method) { return method == Method::classification || method == Method::multitask; }

NetworkSpec build_network(Method method, const BackboneOptions& options, FeatureShape input, int num_classes) {
  check_classes(num_classes);
  NetworkSpec spec;
  spec.method = method;
  spec.num_classes = num_classes;
  if (options.kind == BackboneKind::wide_resnet) {
    spec.backbone = build_wide_resnet(options.wrn_depth, options.wrn_width, options.dropout_rate, input);
  } else {
    ResNetOptions r = options.resnet;
    r.dilated = uses_segmentation(method);
    spec.backbone = build_resnet(r, input);
  }
  const FeatureShape features = spec.backbone.output;
  switch (method) {
    case Method::cvs:
    case Method::segmentation_only:
      spec.seg_head = build_cvs_head(options.kind, features, num_classes, input.height, input.width);
      break;
    case Method::classification:
      spec.clf_head = build_linear_head(features, num_classes);
      break;
    case Method::multitask: {
      auto heads = build_multitask_heads(options.kind, features, num_classes, input.height, input.width);
      spec.seg_head = std::move(heads.segmentation);
      spec.clf_head = std::move(heads.classification);
      break;
    }
  }
  return spec;
}

std::int64_t parameter_count(const NetworkSpec& spec) {
  std::int64_t n = parameter_count(spec.backbone);
  if (spec.seg_head) n += parameter_count(*spec.seg_head);
  if (spec.clf_head) n += parameter_count(*spec.clf_head);
  return n;
}

std::int64_t forward_macs(const NetworkSpec& spec) {
  std::int64_t n = forward_macs(spec.backbone);
  if (spec.seg_head) n += forward_macs(*spec.seg_head);
  if (spec.clf_head) n += forward_macs(*spec.clf_head);
  return n;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(nlohmann::json& j, const LayerSpec& l) {
  static const LayerSpec defaults;
  j = nlohmann::json{{"kind", to_string(l.kind)}};
  if (l.channels != defaults.channels) j["channels"] = l.channels;
  if (l.kernel != defaults.kernel) j["kernel"] = l.kernel;
  if (l.stride != defaults.stride) j["stride"] = l.stride;
  if (l.padding != defaults.padding) j["padding"] = l.padding;
  if (l.dilation != defaults.dilation) j["dilation"] = l.dilation;
  if (l.bias) j["bias"] = true;
  if (l.rate != defaults.rate) j["rate"] = l.rate;
  if (!l.rates.empty()) j["rates"] = l.rates;
  if (l.factor != defaults.factor) j["factor"] = l.factor;
  if (l.target_height) j["target_height"] = l.target_height;
  if (l.target_width) j["target_width"] = l.target_width;
  if (l.relu_after) j["relu_after"] = true;
  if (!l.body.empty()) j["body"] = l.body;
  if (!l.shortcut.empty()) j["shortcut"] = l.shortcut;
}

void from_json(const nlohmann::json& j, LayerSpec& l) {
  l = LayerSpec{};
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.channels = j.value("channels", 0);
  l.kernel = j.value("kernel", 1);
  l.stride = j.value("stride", 1);
  l.padding = j.value("padding", 0);
  l.dilation = j.value("dilation", 1);
  l.bias = j.value("bias", false);
  l.rate = j.value("rate", 0.0);
  l.rates = j.value("rates", std::vector<int>{});
  l.factor = j.value("factor", 1);
  l.target_height = j.value("target_height", 0);
  l.target_width = j.value("target_width", 0);
  l.relu_after = j.value("relu_after", false);
  l.body = j.value("body", std::vector<LayerSpec>{});
  l.shortcut = j.value("shortcut", std::vector<LayerSpec>{});
}

void to_json(nlohmann::json& j, const FeatureShape& s) {
  j = {{"channels", s.channels}, {"height", s.height}, {"width", s.width}, {"flat", s.flat}};
}

void from_json(const nlohmann::json& j, FeatureShape& s) {
  s.channels = j.at("channels").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.flat = j.value("flat", false);
}

void to_json(nlohmann::json& j, const NetworkGraph& g) {
  j = {{"name", g.name}, {"input", g.input}, {"output", g.output}, {"pretrained", g.pretrained}, {"layers", g.layers}};
}

void from_json(const nlohmann::json& j, NetworkGraph& g) {
  g.name = j.at("name").get<std::string>();
  g.input = j.at("input").get<FeatureShape>();
  g.output = j.at("output").get<FeatureShape>();
  g.pretrained = j.value("pretrained", false);
  g.layers = j.at("layers").get<std::vector<LayerSpec>>();
  infer_shape(g);
}

void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = {{"method", to_string(s.method)}, {"num_classes", s.num_classes}, {"backbone", s.backbone}};
  if (s.seg_head) j["seg_head"] = *s.seg_head;
  if (s.clf_head) j["clf_head"] = *s.clf_head;
}

void from_json(const nlohmann::json& j, NetworkSpec& s) {
  s.method = method_from_string(j.at("method").get<std::string>());
  s.num_classes = j.at("num_classes").get<int>();
  s.backbone = j.at("backbone").get<NetworkGraph>();
  s.seg_head.reset();
  s.clf_head.reset();
  if (j.contains("seg_head")) s.seg_head = j.at("seg_head").get<NetworkGraph>();
  if (j.contains("clf_head")) s.clf_head = j.at("clf_head").get<NetworkGraph>();
}

}  // namespace cvs
