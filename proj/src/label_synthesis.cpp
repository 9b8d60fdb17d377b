#include "cvs/label_synthesis.hpp"

#include <cstdio>
#include <sstream>

#include "cvs/cvs_inference.hpp"
#include "cvs/error.hpp"

namespace cvs {

SegMask binarize_to_mask(const Image& image, int label, int num_classes, double threshold) {
  if (image.channels != 1) throw ShapeError("binarization needs a single-channel image, got " + std::to_string(image.channels) + " channels");
  if (label < 1 || label > num_classes)
    throw ValidationError("label " + std::to_string(label) + " outside 1.." + std::to_string(num_classes));
  SegMask mask(image.height, image.width, num_classes);
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    if (image.pixels[i] > threshold) mask.values[i] = static_cast<std::uint8_t>(label);
  return mask;
}

Dataset binarize_dataset(const Dataset& dataset, double threshold) {
  std::vector<LabeledSample> out(dataset.samples());
  for (auto& s : out) s.mask = binarize_to_mask(s.image, s.label, dataset.num_classes(), threshold);
  return Dataset(dataset.spec(), std::move(out));
}

template <typename T>
SegMask argmax_mask(const Tensor<T>& logits, int n) {
  if (logits.rank() != 4 || n < 0 || n >= logits.dim(0)) throw ShapeError("argmax expects N x (P+1) x H x W logits");
  const int c = logits.dim(1);
  const int h = logits.dim(2);
  const int w = logits.dim(3);
  if (c < 2 || c - 1 > kMaxClasses) throw ShapeError("logits need between 2 and " + std::to_string(kMaxClasses + 1) + " channels");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T* base = logits.data() + static_cast<std::size_t>(n) * c * plane;
  SegMask mask(h, w, c - 1);
  for (std::size_t p = 0; p < plane; ++p) {
    int best = 0;
    for (int k = 1; k < c; ++k)
      if (base[k * plane + p] > base[best * plane + p]) best = k;
    mask.values[p] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

template SegMask argmax_mask<float>(const Tensor<float>&, int);
template SegMask argmax_mask<double>(const Tensor<double>&, int);

std::string PropagationReport::to_text() const {
  std::string out = "source_model_id=" + source_model_id + "\n";
  out += "num_propagated=" + std::to_string(num_propagated) + "\n";
  out += "num_kept_manual=" + std::to_string(num_kept_manual) + "\n";
  out += "num_classes=" + std::to_string(foreground_fraction.size()) + "\n";
  char buf[64];
  for (std::size_t c = 0; c < foreground_fraction.size(); ++c) {
    std::snprintf(buf, sizeof buf, "%.17g", foreground_fraction[c]);
    out += "foreground_fraction_" + std::to_string(c + 1) + "=" + buf + "\n";
  }
  return out;
}

PropagationReport PropagationReport::parse(const std::string& text) {
  PropagationReport r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("report line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "source_model_id") {
        r.source_model_id = value;
      } else if (key == "num_propagated") {
        r.num_propagated = std::stoull(value);
      } else if (key == "num_kept_manual") {
        r.num_kept_manual = std::stoull(value);
      } else if (key == "num_classes") {
        r.foreground_fraction.resize(std::stoull(value));
      } else if (key.rfind("foreground_fraction_", 0) == 0) {
        const std::size_t c = std::stoull(key.substr(20));
        if (c < 1 || c > r.foreground_fraction.size()) throw ValidationError("class index out of range in '" + key + "'");
        r.foreground_fraction[c - 1] = std::stod(value);
      } else {
        throw ValidationError("unknown report key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ValidationError("bad value in report line: " + line);
    }
  }
  return r;
}

Propagation propagate_labels(Model<float>& seg_model, const std::string& model_id, const std::vector<const Image*>& images,
                             int batch_size) {
  Propagation out;
  out.report.source_model_id = model_id;
  const int p = seg_model.spec().num_classes;
  out.report.foreground_fraction.assign(static_cast<std::size_t>(p), 0.0);
  if (images.empty()) return out;
  const FeatureShape& in = seg_model.spec().backbone.input;
  for (const Image* img : images)
    if (img->height != in.height || img->width != in.width || img->channels != in.channels)
      throw ShapeError("image of " + std::to_string(img->height) + "x" + std::to_string(img->width) + "x" +
                       std::to_string(img->channels) + " does not match the segmentation model input " + in.to_string());

  std::vector<std::size_t> counts(static_cast<std::size_t>(p) + 1, 0);
  std::size_t pixels = 0;
  for (std::size_t start = 0; start < images.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    const std::vector<const Image*> chunk(images.begin() + start, images.begin() + end);
    const Tensor<float> logits = segment(seg_model, chunk, batch_size);
    for (int n = 0; n < logits.dim(0); ++n) {
      SegMask m = argmax_mask(logits, n);
      for (auto v : m.values) ++counts[v];
      pixels += m.values.size();
      out.masks.push_back(std::move(m));
    }
  }
  out.report.num_propagated = out.masks.size();
  for (int c = 1; c <= p; ++c) out.report.foreground_fraction[c - 1] = static_cast<double>(counts[c]) / pixels;
  return out;
}

Dataset propagate_dataset(Model<float>& seg_model, const std::string& model_id, const Dataset& dataset,
                          bool keep_manual_masks, PropagationReport* report, int batch_size) {
  if (seg_model.spec().num_classes > kMaxClasses) throw ValidationError("too many classes for a mask");
  std::vector<LabeledSample> out(dataset.samples());
  std::vector<std::size_t> todo;
  std::vector<const Image*> images;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (keep_manual_masks && out[i].mask) continue;
    todo.push_back(i);
    images.push_back(&out[i].image);
  }
  Propagation prop = propagate_labels(seg_model, model_id, images, batch_size);
  for (std::size_t k = 0; k < todo.size(); ++k) out[todo[k]].mask = std::move(prop.masks[k]);
  prop.report.num_kept_manual = out.size() - todo.size();
  if (report) *report = prop.report;

  DatasetSpec spec = dataset.spec();
  spec.num_classes = std::max(spec.num_classes, seg_model.spec().num_classes);
  for (auto& s : out) s.mask->num_classes = spec.num_classes;
  return Dataset(spec, std::move(out));
}

std::string seg_model_id(const SubsetSpec& subset) {
  return "seg-" + (subset.per_class ? std::to_string(*subset.per_class) : std::string("all"));
}

SegModel build_seg_m(const Dataset& dataset, const SubsetSpec& subset, const NetworkSpec& network, const TrainConfig& config,
                     const TrainOptions& options) {
  if (!uses_segmentation(network.method) || uses_classification(network.method))
    throw ConfigError("a segmentation network (cvs or segmentation-only) is required to build Seg-M");
  const auto ids = sample_per_class(dataset, subset);
  std::vector<std::string> missing;
  for (const auto& id : ids)
    if (!dataset.by_id(id).mask) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "Seg-M subset samples without a mask:";
    for (const auto& id : missing) msg += " " + id;
    throw ValidationError(msg);
  }
  TrainConfig cfg = config;
  cfg.method = network.method;
  const auto trained = train(network, dataset.select(ids), {}, cfg, options);
  return SegModel{seg_model_id(subset), trained.checkpoint, trained.log};
}

}  // namespace cvs
