#include "cvs/experiment.hpp"

#include <algorithm>
#include <chrono>

#include "cvs/checkpoint.hpp"
#include "cvs/cvs_inference.hpp"
#include "cvs/error.hpp"
#include "cvs/image_io.hpp"

namespace cvs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path& require_output(const RunConfig& config) {
  if (config.output_dir.empty()) throw ConfigError("an output directory is required");
  return config.output_dir;
}

Dataset adapt_to(const Dataset& dataset, const FeatureShape& input) {
  return adapt_dataset(dataset, input.height, input.width, input.channels);
}

bool any_segmentation(const std::vector<Method>& methods) {
  return std::any_of(methods.begin(), methods.end(), [](Method m) { return uses_segmentation(m); });
}

}  // namespace

Dataset load_split(const RunConfig& config, std::string_view split) {
  const auto& ds = config.dataset;
  const std::string& manifest = split == "test" ? ds.test_source : ds.train_source;
  const std::size_t size = split == "test" ? ds.test_size : ds.train_size;
  DatasetSpec spec;
  if (!manifest.empty()) {
    spec.name = ds.name;
    spec.source = manifest;
    spec.split = std::string(split);
    spec.num_classes = ds.num_classes;
  } else {
    if (!is_builtin_dataset(ds.name))
      throw ConfigError("dataset '" + ds.name + "' has no " + std::string(split) + " manifest");
    const fs::path root = ds.data_root.empty() ? fs::path("data") / ds.name : ds.data_root;
    spec = builtin_spec(ds.name, split, root);
  }
  if (size != 0) spec.size = size;
  return load_dataset(spec);
}

FeatureShape network_input(const RunConfig& config, const Dataset& dataset) {
  const ImageShape native = dataset.image_shape();
  const int side_h = config.network.input_size > 0 ? config.network.input_size : native.height;
  const int side_w = config.network.input_size > 0 ? config.network.input_size : native.width;
  const int channels = config.network.input_channels > 0 ? config.network.input_channels : native.channels;
  return FeatureShape::spatial(channels, side_h, side_w);
}

LoadedSegModel load_seg_model(const fs::path& dir) {
  LoadedSegModel out;
  out.checkpoint = load_checkpoint(dir);
  if (!uses_segmentation(out.checkpoint.network.method))
    throw ValidationError("'" + dir.string() + "' does not hold a segmentation model");
  out.id = dir.filename().string();
  if (fs::exists(dir / "seg_model.json")) {
    const json j = json::parse(read_text_file(dir / "seg_model.json"));
    out.id = j.value("id", out.id);
    out.n_seg_labeled = j.value("n_seg_labeled", std::int64_t{0});
  }
  return out;
}

Dataset attach_labels(const RunConfig& config, const Dataset& dataset, PropagationReport* report) {
  switch (config.labels.mode) {
    case LabelMode::none:
    case LabelMode::manual:
      return dataset;
    case LabelMode::binarize:
      return binarize_dataset(dataset, config.labels.threshold);
    case LabelMode::propagate:
      break;
  }
  if (config.labels.seg_model.empty()) throw ConfigError("propagation needs a segmentation model directory");
  const LoadedSegModel seg = load_seg_model(config.labels.seg_model);
  Model<float> model(seg.checkpoint.network, 0);
  model.import_params(seg.checkpoint.params);

  const FeatureShape& in = seg.checkpoint.network.backbone.input;
  const ImageShape native = dataset.image_shape();
  const Dataset adapted = adapt_dataset(dataset, in.height, in.width, in.channels);
  PropagationReport rep;
  const Dataset propagated = propagate_dataset(model, seg.id, adapted, config.labels.keep_manual_masks, &rep);

  std::vector<LabeledSample> out(dataset.samples());
  const int p = std::max(dataset.num_classes(), config.labels.relabel_foreground ? 0 : seg.checkpoint.network.num_classes);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const LabeledSample& src = propagated.by_id(out[i].id);
    SegMask mask = resize_nearest(*src.mask, native.height, native.width);
    if (config.labels.relabel_foreground && !(config.labels.keep_manual_masks && out[i].mask))
      for (auto& v : mask.values)
        if (v != 0) v = static_cast<std::uint8_t>(out[i].label);
    if (config.labels.keep_manual_masks && out[i].mask) mask = *out[i].mask;
    mask.num_classes = p;
    out[i].mask = std::move(mask);
  }
  if (report) *report = rep;
  DatasetSpec spec = dataset.spec();
  spec.num_classes = p;
  return Dataset(spec, std::move(out));
}

PrepareSummary prepare_labels(const RunConfig& config, std::string_view split) {
  const fs::path& out_dir = require_output(config);
  PrepareSummary summary;
  PropagationReport report;
  const Dataset labelled = attach_labels(config, load_split(config, split), &report);
  const auto records = export_samples(labelled.samples(), out_dir);
  summary.samples = records.size();
  summary.masks = static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.mask_path.has_value(); }));
  summary.manifest = out_dir / "manifest.tsv";
  write_manifest(summary.manifest, records);
  if (config.labels.mode == LabelMode::propagate) {
    write_file_atomic(out_dir / "propagation_report.txt", report.to_text());
    summary.report = report;
  }
  write_run_metadata(out_dir, config);
  return summary;
}

SegModel train_seg_model(const RunConfig& config) {
  const fs::path& out_dir = require_output(config);
  Dataset train_set = attach_labels(config, load_split(config, "train"));
  const FeatureShape input = network_input(config, train_set);
  train_set = adapt_to(train_set, input);
  const Method method = config.train.method == Method::segmentation_only ? Method::segmentation_only : Method::cvs;
  const NetworkSpec network = build_network(method, config.backbone_options(), input, train_set.num_classes());

  TrainConfig cfg = config.train;
  cfg.method = method;
  TrainOptions opts;
  opts.checkpoint_dir = out_dir;
  opts.config_hash = config_hash(config);
  write_run_metadata(out_dir, config);
  SegModel seg = build_seg_m(train_set, SubsetSpec{config.m, config.subset_seed}, network, cfg, opts);
  const std::int64_t n = static_cast<std::int64_t>(sample_per_class(train_set, SubsetSpec{config.m, config.subset_seed}).size());
  const std::int64_t manual = config.labels.mode == LabelMode::manual ? n : 0;
  write_file_atomic(out_dir / "seg_model.json",
                    json{{"id", seg.id}, {"n_seg_labeled", manual}, {"n_class_labeled", n}}.dump(1) + "\n");
  return seg;
}

TrainResult train_model(const RunConfig& config, bool resume) {
  const fs::path& out_dir = require_output(config);
  Dataset train_set = load_split(config, "train");
  std::int64_t n_seg = 0;
  if (uses_segmentation(config.train.method)) {
    train_set = attach_labels(config, train_set);
    if (config.labels.mode == LabelMode::propagate) n_seg = load_seg_model(config.labels.seg_model).n_seg_labeled;
  }
  const FeatureShape input = network_input(config, train_set);
  train_set = adapt_to(train_set, input);

  const auto ids = sample_per_class(train_set, SubsetSpec{config.m, config.subset_seed});
  if (config.labels.mode == LabelMode::manual && uses_segmentation(config.train.method))
    n_seg = static_cast<std::int64_t>(ids.size());
  const auto [train_ids, val_ids] = validation_split(train_set, ids, config.train.validation_fraction, config.subset_seed);
  const NetworkSpec network = build_network(config.train.method, config.backbone_options(), input, train_set.num_classes());

  ModelParams pretrained;
  TrainOptions opts;
  if (config.network.pretrained) {
    pretrained.tensors = read_tensor_archive(config.network.pretrained_weights);
    opts.pretrained = &pretrained;
  }
  opts.checkpoint_dir = out_dir;
  opts.resume = resume;
  opts.config_hash = config_hash(config);
  write_run_metadata(out_dir, config);
  TrainResult result = train(network, train_set.select(train_ids), train_set.select(val_ids), config.train, opts);
  result.log.write(out_dir / "metrics.tsv");
  const double marker = 2.0 * static_cast<double>(forward_macs(network)) * config.train.epochs * train_ids.size();
  write_file_atomic(out_dir / "train_info.json", json{{"n_class_labeled", ids.size()},
                                                      {"n_seg_labeled", n_seg},
                                                      {"compute_marker", marker},
                                                      {"m", config.m ? json(*config.m) : json("all")},
                                                      {"seed", config.train.seed},
                                                      {"dataset", config.dataset.name}}
                                                         .dump(1) +
                                                     "\n");
  return result;
}

EvalReport evaluate_checkpoint(const RunConfig& config, const fs::path& checkpoint_dir) {
  const fs::path& out_dir = require_output(config);
  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  const NetworkSpec& network = ck.network;
  Model<float> model(network, 0);
  model.import_params(ck.params);

  Dataset test_set = load_split(config, "test");
  if (config.labels.mode == LabelMode::binarize) test_set = binarize_dataset(test_set, config.labels.threshold);
  const FeatureShape& in = network.backbone.input;
  test_set = adapt_dataset(test_set, in.height, in.width, in.channels);
  if (test_set.num_classes() != network.num_classes)
    throw ValidationError("test set has " + std::to_string(test_set.num_classes()) + " classes, the model predicts " +
                          std::to_string(network.num_classes));

  EvalReport report;
  report.dataset = config.dataset.name;
  report.method = std::string(to_string(network.method));
  report.backbone = network.backbone.name.rfind("resnet", 0) == 0 ? "resnet101" : "wide-resnet";
  report.seed = ck.train_config.value("seed", std::uint64_t{0});
  if (fs::exists(checkpoint_dir / "train_info.json")) {
    const json info = json::parse(read_text_file(checkpoint_dir / "train_info.json"));
    report.m = info.at("m").is_string() ? info.at("m").get<std::string>() : std::to_string(info.at("m").get<int>());
    report.n_class_labeled = info.at("n_class_labeled").get<std::int64_t>();
    report.n_seg_labeled = info.at("n_seg_labeled").get<std::int64_t>();
    report.compute_marker = info.at("compute_marker").get<double>();
    report.dataset = info.value("dataset", report.dataset);
  }

  const auto started = std::chrono::steady_clock::now();
  std::vector<const Image*> images;
  std::vector<int> labels;
  for (const auto& s : test_set) {
    images.push_back(&s.image);
    labels.push_back(s.label);
  }
  std::vector<int> preds;
  for (const auto& s : predict(model, images, config.train.eval_batch_size)) preds.push_back(s.predicted);
  report.top1 = accuracy(preds, labels);
  report.per_class = per_class_accuracy(preds, labels, network.num_classes);
  const bool masked = std::all_of(test_set.begin(), test_set.end(), [](const auto& s) { return s.mask.has_value(); });
  if (uses_segmentation(network.method) && masked) {
    const Tensor<float> logits = segment(model, images, config.train.eval_batch_size);
    std::vector<SegMask> pred;
    std::vector<const SegMask*> p, g;
    for (int n = 0; n < logits.dim(0); ++n) pred.push_back(argmax_mask(logits, n));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      p.push_back(&pred[i]);
      g.push_back(&*test_set[i].mask);
    }
    report.mean_iou = mean_iou(p, g, network.num_classes).foreground_mean;
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  write_run_metadata(out_dir, config);
  write_file_atomic(out_dir / "report.tsv", format_results_table({report}));
  return report;
}

std::vector<EvalReport> run_grid(const RunConfig& config, const std::function<void(const EvalReport&)>& on_report) {
  const fs::path& out_dir = require_output(config);
  Dataset train_set = load_split(config, "train");
  Dataset test_set = load_split(config, "test");
  CellSpec cell;
  cell.dataset_name = config.dataset.name;
  cell.backbone = config.backbone_options();
  cell.train = config.train;
  cell.default_augmentation = config.grid.per_method_augmentation;
  if (config.grid.per_method_augmentation) cell.train.augmentation.reset();

  if (any_segmentation(config.grid.methods)) {
    train_set = attach_labels(config, train_set);
    if (config.labels.mode == LabelMode::binarize) test_set = binarize_dataset(test_set, config.labels.threshold);
    switch (config.labels.mode) {
      case LabelMode::manual: cell.mask_source = MaskSource::manual; break;
      case LabelMode::propagate:
        cell.mask_source = MaskSource::propagated;
        cell.propagated_seg_count = load_seg_model(config.labels.seg_model).n_seg_labeled;
        break;
      default: cell.mask_source = MaskSource::binarized; break;
    }
  }
  const FeatureShape input = network_input(config, train_set);
  train_set = adapt_to(train_set, input);
  test_set = adapt_to(test_set, input);

  write_run_metadata(out_dir, config);
  std::vector<EvalReport> reports;
  auto record = [&](const EvalReport& r) {
    reports.push_back(r);
    write_file_atomic(out_dir / "results.tsv", format_results_table(reports));
    if (on_report) on_report(r);
  };
  if (config.grid.kfold > 0) {
    for (Method method : config.grid.methods)
      for (std::uint64_t seed : config.grid.seeds)
        for (auto& r : cross_validate(train_set, cell, method, config.grid.kfold, seed)) record(r);
  } else {
    GridSpec grid{cell, config.grid.methods, config.grid.m_values, config.grid.seeds, {}};
    run_experiment_grid(train_set, test_set, grid, record);
  }
  write_file_atomic(out_dir / "results_mean.tsv", format_mean_table(mean_over_seeds(reports)));
  return reports;
}

std::vector<CostPoint> cost_report(const fs::path& results, const AnnotationRates& rates, const fs::path& output) {
  const auto reports = parse_results_table(read_text_file(results));
  const auto points = emit_cost_curve(reports, rates);
  write_file_atomic(output, format_cost_rows(points));
  return points;
}

}  // namespace cvs
