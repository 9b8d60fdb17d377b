#include "cvs/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "cvs/augment.hpp"
#include "cvs/cvs_inference.hpp"
#include "cvs/error.hpp"
#include "cvs/label_synthesis.hpp"
#include "cvs/rng.hpp"

namespace cvs {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) throw ValidationError("accuracy of an empty prediction list");
  if (predictions.size() != labels.size()) throw ValidationError("prediction and label counts differ");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<std::optional<double>> per_class_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels,
                                                      int num_classes) {
  if (predictions.size() != labels.size()) throw ValidationError("prediction and label counts differ");
  std::vector<std::size_t> hits(num_classes + 1, 0), totals(num_classes + 1, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > num_classes) throw ValidationError("label outside 1.." + std::to_string(num_classes));
    ++totals[labels[i]];
    hits[labels[i]] += predictions[i] == labels[i];
  }
  std::vector<std::optional<double>> out(num_classes);
  for (int c = 1; c <= num_classes; ++c)
    if (totals[c] > 0) out[c - 1] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
  return out;
}

IoUResult mean_iou(const std::vector<const SegMask*>& pred, const std::vector<const SegMask*>& gt, int num_classes) {
  if (pred.size() != gt.size()) throw ShapeError("IoU: mask counts differ");
  if (num_classes < 1) throw ValidationError("IoU needs at least one class");
  std::vector<std::size_t> inter(num_classes + 1, 0), uni(num_classes + 1, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const SegMask& a = *pred[i];
    const SegMask& b = *gt[i];
    if (a.height != b.height || a.width != b.width) throw ShapeError("IoU: mask " + std::to_string(i) + " shapes differ");
    for (std::size_t p = 0; p < a.values.size(); ++p) {
      const int x = a.values[p];
      const int y = b.values[p];
      if (x > num_classes || y > num_classes) throw ValidationError("IoU: mask value exceeds the class count");
      if (x == y) {
        ++inter[x];
        ++uni[x];
      } else {
        ++uni[x];
        ++uni[y];
      }
    }
  }
  IoUResult r;
  r.per_class.resize(num_classes + 1);
  double sum = 0, fg_sum = 0;
  int present = 0, fg_present = 0;
  for (int c = 0; c <= num_classes; ++c) {
    if (uni[c] == 0) continue;
    const double iou = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    r.per_class[c] = iou;
    sum += iou;
    ++present;
    if (c > 0) {
      fg_sum += iou;
      ++fg_present;
    }
  }
  r.mean = present ? sum / present : 0.0;
  r.foreground_mean = fg_present ? fg_sum / fg_present : 0.0;
  return r;
}

IoUResult mean_iou(const SegMask& pred, const SegMask& gt, int num_classes) {
  return mean_iou(std::vector<const SegMask*>{&pred}, std::vector<const SegMask*>{&gt}, num_classes);
}

FoldPlan kfold_split(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  if (static_cast<std::size_t>(k) > ids.size())
    throw ConfigError("k = " + std::to_string(k) + " exceeds the " + std::to_string(ids.size()) + " available ids");
  std::vector<std::string> order = ids;
  {
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
    if (dup != sorted.end()) throw ValidationError("k-fold: duplicate id '" + *dup + "'");
  }
  Rng rng = make_rng(seed, "kfold");
  shuffle(order.begin(), order.end(), rng);

  FoldPlan plan{k, seed, {}};
  const std::size_t n = order.size();
  std::size_t start = 0;
  for (int f = 0; f < k; ++f) {
    const std::size_t len = n / k + (static_cast<std::size_t>(f) < n % k ? 1 : 0);
    Fold fold;
    fold.test_ids.assign(order.begin() + start, order.begin() + start + len);
    fold.train_ids.assign(order.begin(), order.begin() + start);
    fold.train_ids.insert(fold.train_ids.end(), order.begin() + start + len, order.end());
    plan.folds.push_back(std::move(fold));
    start += len;
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Results tables

namespace {

constexpr const char* kTableHeader =
    "dataset\tmethod\tbackbone\tm\tseed\tstatus\ttop1\tmean_iou\tseconds\tn_class_labeled\tn_seg_labeled\tcompute_"
    "marker\tper_class\terror";

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string clean(std::string s) {
  for (char& ch : s)
    if (ch == '\t' || ch == '\n' || ch == '\r') ch = ' ';
  return s.empty() ? "-" : s;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string format_results_table(const std::vector<EvalReport>& reports) {
  std::string out = std::string(kTableHeader) + "\n";
  for (const auto& r : reports) {
    std::string per_class;
    for (std::size_t i = 0; i < r.per_class.size(); ++i)
      per_class += (i ? "," : "") + (r.per_class[i] ? num(*r.per_class[i]) : std::string("-"));
    out += clean(r.dataset) + '\t' + clean(r.method) + '\t' + clean(r.backbone) + '\t' + clean(r.m) + '\t' +
           std::to_string(r.seed) + '\t' + (r.ok ? "ok" : "failed") + '\t' + num(r.top1) + '\t' +
           (r.mean_iou ? num(*r.mean_iou) : "-") + '\t' + num(r.seconds) + '\t' +
           (r.n_class_labeled ? std::to_string(*r.n_class_labeled) : "-") + '\t' +
           (r.n_seg_labeled ? std::to_string(*r.n_seg_labeled) : "-") + '\t' + num(r.compute_marker) + '\t' +
           (per_class.empty() ? "-" : per_class) + '\t' + (r.error.empty() ? "-" : clean(r.error)) + '\n';
  }
  return out;
}

std::vector<EvalReport> parse_results_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTableHeader) throw ValidationError("results table header is missing or unknown");
  std::vector<EvalReport> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, '\t');
    if (f.size() != 14) throw ValidationError("results table line " + std::to_string(lineno) + ": expected 14 fields");
    auto text_field = [](const std::string& s) { return s == "-" ? std::string() : s; };
    EvalReport r;
    try {
      r.dataset = text_field(f[0]);
      r.method = text_field(f[1]);
      r.backbone = text_field(f[2]);
      r.m = f[3];
      r.seed = std::stoull(f[4]);
      if (f[5] != "ok" && f[5] != "failed") throw ValidationError("bad status '" + f[5] + "'");
      r.ok = f[5] == "ok";
      r.top1 = std::stod(f[6]);
      if (f[7] != "-") r.mean_iou = std::stod(f[7]);
      r.seconds = std::stod(f[8]);
      if (f[9] != "-") r.n_class_labeled = std::stoll(f[9]);
      if (f[10] != "-") r.n_seg_labeled = std::stoll(f[10]);
      r.compute_marker = std::stod(f[11]);
      if (f[12] != "-")
        for (const auto& v : split(f[12], ',')) r.per_class.push_back(v == "-" ? std::nullopt : std::optional(std::stod(v)));
      r.error = text_field(f[13]);
    } catch (const std::logic_error&) {
      throw ValidationError("results table line " + std::to_string(lineno) + ": bad number");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MeanRow> mean_over_seeds(const std::vector<EvalReport>& reports) {
  std::vector<MeanRow> rows;
  std::vector<std::vector<double>> values;
  for (const auto& r : reports) {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const MeanRow& row) {
      return row.dataset == r.dataset && row.method == r.method && row.backbone == r.backbone && row.m == r.m;
    });
    if (it == rows.end()) {
      rows.push_back({r.dataset, r.method, r.backbone, r.m});
      values.emplace_back();
      it = rows.end() - 1;
    }
    auto& vals = values[it - rows.begin()];
    if (r.ok) {
      vals.push_back(r.top1);
    } else {
      ++it->failed;
    }
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& v = values[i];
    rows[i].seeds = static_cast<int>(v.size());
    if (v.empty()) continue;
    double mean = 0;
    for (double x : v) mean += x;
    mean /= v.size();
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    rows[i].mean_top1 = mean;
    rows[i].std_top1 = std::sqrt(var / v.size());
  }
  return rows;
}

std::string format_mean_table(const std::vector<MeanRow>& rows) {
  std::string out = "dataset\tmethod\tbackbone\tm\tseeds\tfailed\tmean_top1\tstd_top1\n";
  for (const auto& r : rows)
    out += clean(r.dataset) + '\t' + clean(r.method) + '\t' + clean(r.backbone) + '\t' + clean(r.m) + '\t' +
           std::to_string(r.seeds) + '\t' + std::to_string(r.failed) + '\t' + (r.seeds ? num(r.mean_top1) : "-") +
           '\t' + (r.seeds ? num(r.std_top1) : "-") + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Experiment cells

std::string_view to_string(MaskSource s) {
  switch (s) {
    case MaskSource::binarized: return "binarized";
    case MaskSource::manual: return "manual";
    case MaskSource::propagated: return "propagated";
  }
  return "binarized";
}

MaskSource mask_source_from_string(std::string_view name) {
  if (name == "binarized") return MaskSource::binarized;
  if (name == "manual") return MaskSource::manual;
  if (name == "propagated") return MaskSource::propagated;
  throw ConfigError("unknown mask source '" + std::string(name) + "'");
}

namespace {

EvalReport evaluate_on(const std::vector<LabeledSample>& train_samples, const std::vector<LabeledSample>& val_samples,
                       const std::vector<LabeledSample>& test_samples, const CellSpec& cell, Method method,
                       int num_classes, std::uint64_t seed, EvalReport report,
                       const std::filesystem::path& checkpoint_dir) {
  const auto started = std::chrono::steady_clock::now();
  try {
    const Image& first = train_samples.at(0).image;
    const NetworkSpec network =
        build_network(method, cell.backbone, FeatureShape::spatial(first.channels, first.height, first.width), num_classes);
    TrainConfig cfg = cell.train;
    cfg.method = method;
    cfg.seed = seed;
    if (!cfg.augmentation && cell.default_augmentation) cfg.augmentation = default_policy(cell.dataset_name, method);

    TrainOptions opts;
    opts.checkpoint_dir = checkpoint_dir;
    const TrainResult trained = train(network, train_samples, val_samples, cfg, opts);

    Model<float> model(network, 0);
    model.import_params(trained.checkpoint.params);
    std::vector<const Image*> images;
    std::vector<int> labels;
    for (const auto& s : test_samples) {
      images.push_back(&s.image);
      labels.push_back(s.label);
    }
    std::vector<int> preds;
    for (const auto& s : predict(model, images, cfg.eval_batch_size)) preds.push_back(s.predicted);
    report.top1 = accuracy(preds, labels);
    report.per_class = per_class_accuracy(preds, labels, num_classes);

    const bool masked = std::all_of(test_samples.begin(), test_samples.end(), [](const auto& s) { return s.mask.has_value(); });
    if (uses_segmentation(method) && masked) {
      const Tensor<float> logits = segment(model, images, cfg.eval_batch_size);
      std::vector<SegMask> pred_masks;
      for (int n = 0; n < logits.dim(0); ++n) pred_masks.push_back(argmax_mask(logits, n));
      std::vector<const SegMask*> p, g;
      for (std::size_t i = 0; i < test_samples.size(); ++i) {
        p.push_back(&pred_masks[i]);
        g.push_back(&*test_samples[i].mask);
      }
      report.mean_iou = mean_iou(p, g, num_classes).foreground_mean;
    }

    const auto n_train = static_cast<std::int64_t>(train_samples.size() + val_samples.size());
    report.n_class_labeled = n_train;
    if (!uses_segmentation(method)) {
      report.n_seg_labeled = 0;
    } else if (cell.mask_source == MaskSource::manual) {
      report.n_seg_labeled = n_train;
    } else if (cell.mask_source == MaskSource::propagated) {
      report.n_seg_labeled = cell.propagated_seg_count;
    } else {
      report.n_seg_labeled = 0;
    }
    report.compute_marker = 2.0 * static_cast<double>(forward_macs(network)) * static_cast<double>(cfg.epochs) *
                            static_cast<double>(train_samples.size());
  } catch (const std::exception& e) {
    report.ok = false;
    report.error = e.what();
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace

EvalReport run_cell(const Dataset& train_set, const Dataset& test_set, const CellSpec& cell, Method method,
                    std::optional<int> m, std::uint64_t seed, const std::filesystem::path& checkpoint_dir) {
  EvalReport report;
  report.dataset = cell.dataset_name;
  report.method = std::string(to_string(method));
  report.backbone = std::string(to_string(cell.backbone.kind));
  report.m = m ? std::to_string(*m) : "all";
  report.seed = seed;
  std::vector<LabeledSample> train_samples, val_samples;
  try {
    const auto ids = sample_per_class(train_set, SubsetSpec{m, seed});
    const auto [train_ids, val_ids] = validation_split(train_set, ids, cell.train.validation_fraction, seed);
    train_samples = train_set.select(train_ids);
    val_samples = train_set.select(val_ids);
  } catch (const std::exception& e) {
    report.ok = false;
    report.error = e.what();
    return report;
  }
  return evaluate_on(train_samples, val_samples, test_set.samples(), cell, method, train_set.num_classes(), seed,
                     std::move(report), checkpoint_dir);
}

std::vector<EvalReport> run_experiment_grid(const Dataset& train_set, const Dataset& test_set, const GridSpec& grid,
                                            const std::function<void(const EvalReport&)>& on_report) {
  std::vector<EvalReport> out;
  for (Method method : grid.methods)
    for (const auto& m : grid.m_values)
      for (std::uint64_t seed : grid.seeds) {
        std::filesystem::path dir;
        if (!grid.output_dir.empty())
          dir = grid.output_dir / "cells" /
                (std::string(to_string(method)) + "-m" + (m ? std::to_string(*m) : "all") + "-s" + std::to_string(seed));
        out.push_back(run_cell(train_set, test_set, grid.cell, method, m, seed, dir));
        if (on_report) on_report(out.back());
      }
  return out;
}

std::vector<EvalReport> cross_validate(const Dataset& dataset, const CellSpec& cell, Method method, int k,
                                       std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : dataset) ids.push_back(s.id);
  const FoldPlan plan = kfold_split(ids, k, seed);
  std::vector<EvalReport> out;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    EvalReport report;
    report.dataset = cell.dataset_name;
    report.method = std::string(to_string(method));
    report.backbone = std::string(to_string(cell.backbone.kind));
    report.m = "fold" + std::to_string(f + 1);
    report.seed = seed;
    out.push_back(evaluate_on(dataset.select(plan.folds[f].train_ids), {}, dataset.select(plan.folds[f].test_ids), cell,
                              method, dataset.num_classes(), derive_seed(seed, "fold", f), std::move(report), {}));
  }
  return out;
}

}  // namespace cvs
