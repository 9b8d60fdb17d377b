#include "cvs/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cvs/cvs_inference.hpp"
#include "cvs/error.hpp"
#include "cvs/losses.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace fs = std::filesystem;

std::string_view to_string(LrSchedule s) { return s == LrSchedule::cosine ? "cosine" : "constant"; }

LrSchedule lr_schedule_from_string(std::string_view name) {
  if (name == "cosine") return LrSchedule::cosine;
  if (name == "constant") return LrSchedule::constant;
  throw ConfigError("unknown learning-rate schedule '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 0) throw ConfigError("batch_size must be positive (or 0 for the default)");
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("lr must be a finite non-negative number");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(mtl_lambda >= 0)) throw ConfigError("mtl_lambda must be non-negative");
  if (!(validation_fraction >= 0 && validation_fraction < 1)) throw ConfigError("validation_fraction must be in [0, 1)");
  if (eval_batch_size < 1) throw ConfigError("eval_batch_size must be positive");
  if (augmentation) augmentation->validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"method", std::string(to_string(c.method))},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"momentum", c.momentum},
                     {"weight_decay", c.weight_decay},
                     {"lr_schedule", std::string(to_string(c.lr_schedule))},
                     {"mtl_lambda", c.mtl_lambda},
                     {"seed", c.seed},
                     {"augmentation", c.augmentation ? nlohmann::json(*c.augmentation) : nlohmann::json(nullptr)},
                     {"validation_fraction", c.validation_fraction},
                     {"eval_batch_size", c.eval_batch_size}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  c = TrainConfig{};
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "method") c.method = method_from_string(v.get<std::string>());
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "momentum") c.momentum = v.get<double>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "lr_schedule") c.lr_schedule = lr_schedule_from_string(v.get<std::string>());
      else if (key == "mtl_lambda") c.mtl_lambda = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "augmentation") c.augmentation = v.is_null() ? std::nullopt : std::optional(v.get<AugmentationPolicy>());
      else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
      else if (key == "eval_batch_size") c.eval_batch_size = v.get<int>();
      else throw ConfigError("unknown training key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("training key '" + key + "': " + e.what());
    }
  }
  c.validate();
}

int default_batch_size(std::size_t n) {
  // small subsets learn far better with small batches (many more steps per epoch)
  if (n <= 1000) return 8;
  if (n <= 5000) return 16;
  if (n <= 20000) return 32;
  return 128;
}

double learning_rate(const TrainConfig& config, std::int64_t step, std::int64_t total_steps) {
  if (config.lr_schedule == LrSchedule::constant || total_steps <= 0) return config.lr;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 0.5 * config.lr * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
void sgd_step(std::vector<StateRef<T>>& params, std::map<std::string, Tensor<T>>& velocity, double lr, double momentum,
              double weight_decay) {
  for (auto& p : params) {
    auto it = velocity.find(p.name);
    if (it == velocity.end()) it = velocity.emplace(p.name, Tensor<T>(p.value->shape())).first;
    Tensor<T>& v = it->second;
    if (v.shape() != p.value->shape()) throw ShapeError("optimizer state for '" + p.name + "' has the wrong shape");
    T* w = p.value->data();
    const T* g = p.grad->data();
    T* vel = v.data();
    const T mu = static_cast<T>(momentum);
    const T wd = static_cast<T>(weight_decay);
    const T step = static_cast<T>(lr);
    for (std::size_t i = 0; i < v.size(); ++i) {
      vel[i] = mu * vel[i] + (g[i] + wd * w[i]);
      w[i] -= step * vel[i];
    }
  }
}

template void sgd_step<float>(std::vector<StateRef<float>>&, std::map<std::string, Tensor<float>>&, double, double, double);
template void sgd_step<double>(std::vector<StateRef<double>>&, std::map<std::string, Tensor<double>>&, double, double,
                               double);

// ---------------------------------------------------------------------------

std::optional<double> MetricLog::last(const std::string& split, const std::string& metric) const {
  for (auto it = records_.rbegin(); it != records_.rend(); ++it)
    if (it->split == split && it->metric == metric) return it->value;
  return std::nullopt;
}

std::vector<double> MetricLog::series(const std::string& split, const std::string& metric) const {
  std::vector<double> out;
  for (const auto& r : records_)
    if (r.split == split && r.metric == metric) out.push_back(r.value);
  return out;
}

std::string MetricLog::to_text() const {
  std::string out;
  char buf[64];
  for (const auto& r : records_) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out += std::to_string(r.epoch) + '\t' + r.split + '\t' + r.metric + '\t' + buf + '\n';
  }
  return out;
}

MetricLog MetricLog::parse(const std::string& text) {
  MetricLog log;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 4) throw ValidationError("metric log line " + std::to_string(lineno) + ": expected 4 fields");
    try {
      log.add({std::stoi(f[0]), f[1], f[2], std::stod(f[3])});
    } catch (const std::exception&) {
      throw ValidationError("metric log line " + std::to_string(lineno) + ": bad number");
    }
  }
  return log;
}

void MetricLog::write(const fs::path& path) const { write_file_atomic(path, to_text()); }

MetricLog MetricLog::read(const fs::path& path) { return parse(read_text_file(path)); }

// ---------------------------------------------------------------------------

namespace {

void check_labels(const std::vector<LabeledSample>& samples, Method method, int num_classes) {
  if (samples.empty()) throw ValidationError("training set is empty");
  std::vector<std::string> unmasked;
  for (const auto& s : samples) {
    if (s.label < 1 || s.label > num_classes)
      throw ValidationError("sample '" + s.id + "' has label " + std::to_string(s.label) + " outside 1.." +
                            std::to_string(num_classes));
    if (uses_segmentation(method)) {
      if (!s.mask) {
        unmasked.push_back(s.id);
      } else if (s.mask->num_classes > num_classes) {
        throw ValidationError("mask of '" + s.id + "' uses more classes than the network predicts");
      }
    }
  }
  if (!unmasked.empty()) {
    std::string msg = std::string(to_string(method)) + " training needs masks; " + std::to_string(unmasked.size()) +
                      " samples lack one:";
    for (std::size_t i = 0; i < unmasked.size() && i < 10; ++i) msg += " " + unmasked[i];
    if (unmasked.size() > 10) msg += " ...";
    throw ValidationError(msg);
  }
}

// Batch boundaries; a trailing batch of one sample joins the previous batch so batch
// normalisation always sees at least two samples.
std::vector<std::size_t> batch_bounds(std::size_t n, std::size_t bs) {
  std::vector<std::size_t> bounds{0};
  for (std::size_t s = bs; s < n; s += bs) bounds.push_back(s);
  bounds.push_back(n);
  if (bounds.size() > 2 && n - bounds[bounds.size() - 2] == 1) bounds.erase(bounds.end() - 2);
  return bounds;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

TrainResult train(const NetworkSpec& network, const std::vector<LabeledSample>& train_set,
                  const std::vector<LabeledSample>& val_set, const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (config.method != network.method)
    throw ConfigError("training method " + std::string(to_string(config.method)) + " does not match the network's " +
                      std::string(to_string(network.method)));
  check_labels(train_set, config.method, network.num_classes);
  if (!val_set.empty()) check_labels(val_set, Method::classification, network.num_classes);

  const auto started = std::chrono::steady_clock::now();
  Model<float> model(network, derive_seed(config.seed, "model"), options.pretrained);
  std::map<std::string, Tensor<float>> velocity;
  MetricLog log;
  double best = 0.0;
  int start_epoch = 0;
  const nlohmann::json config_json = config;

  if (options.resume && !options.checkpoint_dir.empty() && checkpoint_exists(options.checkpoint_dir)) {
    Checkpoint ck = load_checkpoint(options.checkpoint_dir);
    if (!(ck.network == network)) throw ConfigError("checkpoint network differs from the requested network");
    if (!options.config_hash.empty() && ck.params.config_hash != options.config_hash)
      throw ConfigError("checkpoint was written by a different configuration (hash " + ck.params.config_hash + ")");
    model.import_params(ck.params);
    velocity = std::move(ck.velocity);
    start_epoch = ck.params.epoch;
    best = ck.best_metric;
    if (fs::exists(options.checkpoint_dir / "metrics.tsv")) log = MetricLog::read(options.checkpoint_dir / "metrics.tsv");
  }

  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(config.batch_size > 0 ? config.batch_size : default_batch_size(n));
  const auto bounds = batch_bounds(n, std::min(bs, n));
  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(bounds.size()) - 1;
  const std::int64_t total_steps = steps_per_epoch * config.epochs;
  const bool seg = uses_segmentation(config.method);
  const bool clf = uses_classification(config.method);

  auto emit = [&](MetricRecord r) {
    if (options.on_metric) options.on_metric(r);
    log.add(std::move(r));
  };

  TrainResult result;
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(config.seed, "shuffle", epoch);
    shuffle(order.begin(), order.end(), shuffle_rng);
    Rng dropout_rng = make_rng(config.seed, "dropout", epoch);
    ForwardContext ctx{true, &dropout_rng};

    double loss_sum = 0, seg_sum = 0, clf_sum = 0;
    for (std::int64_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t lo = bounds[b];
      const std::size_t hi = bounds[b + 1];
      std::vector<LabeledSample> batch;
      batch.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) {
        const LabeledSample& s = train_set[order[i]];
        batch.push_back(config.augmentation ? augment(s, *config.augmentation, derive_seed(config.seed, "augment", epoch, i))
                                            : s);
      }
      std::vector<const Image*> images;
      std::vector<const SegMask*> masks;
      std::vector<int> labels;
      for (const auto& s : batch) {
        images.push_back(&s.image);
        labels.push_back(s.label);
        if (seg) masks.push_back(&*s.mask);
      }

      model.zero_grad();
      auto out = model.forward(to_batch<float>(images), ctx);
      Tensor<float> seg_grad, clf_grad;
      const double seg_loss = seg ? pixel_cross_entropy(out.seg, masks, &seg_grad) : 0.0;
      const double clf_loss = clf ? class_cross_entropy(out.clf, labels, &clf_grad) : 0.0;
      double loss = seg ? seg_loss : clf_loss;
      if (config.method == Method::multitask) {
        loss = multitask_loss(seg_loss, clf_loss, config.mtl_lambda);
        for (auto& g : clf_grad.storage()) g *= static_cast<float>(config.mtl_lambda);
      }
      if (!finite(loss))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(b + 1) +
                              " (lr " + std::to_string(learning_rate(config, epoch * steps_per_epoch + b, total_steps)) +
                              ")");
      const bool skip_clf = config.method == Method::multitask && config.mtl_lambda == 0.0;
      model.backward(seg ? &seg_grad : nullptr, clf && !skip_clf ? &clf_grad : nullptr);
      auto params = model.parameters();
      sgd_step(params, velocity, learning_rate(config, epoch * steps_per_epoch + b, total_steps), config.momentum,
               config.weight_decay);
      ++result.steps;

      const double w = static_cast<double>(hi - lo);
      loss_sum += loss * w;
      seg_sum += seg_loss * w;
      clf_sum += clf_loss * w;
    }

    const int reported = epoch + 1;
    emit({reported, "train", "loss", loss_sum / n});
    if (config.method == Method::multitask) {
      emit({reported, "train", "pixel_ce", seg_sum / n});
      emit({reported, "train", "class_ce", clf_sum / n});
    }
    emit({reported, "train", "lr", learning_rate(config, epoch * steps_per_epoch, total_steps)});
    if (!val_set.empty()) {
      const double acc = evaluate_accuracy(model, val_set, config.eval_batch_size);
      best = std::max(best, acc);
      emit({reported, "val", "accuracy", acc});
    }

    if (!options.checkpoint_dir.empty()) {
      Checkpoint ck{network, model.export_params(), velocity, best, config_json};
      ck.params.epoch = reported;
      ck.params.config_hash = options.config_hash;
      save_checkpoint(options.checkpoint_dir, ck);
      log.write(options.checkpoint_dir / "metrics.tsv");
    }
    if (options.stop_after_epoch > 0 && reported >= options.stop_after_epoch) break;
  }

  result.checkpoint = Checkpoint{network, model.export_params(), velocity, best, config_json};
  result.checkpoint.params.epoch = log.records().empty() ? start_epoch : log.records().back().epoch;
  result.checkpoint.params.config_hash = options.config_hash;
  result.log = std::move(log);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

std::pair<std::vector<std::string>, std::vector<std::string>> validation_split(const Dataset& dataset,
                                                                               const std::vector<std::string>& ids,
                                                                               double fraction, std::uint64_t seed) {
  if (ids.size() < 50 || fraction <= 0) return {ids, {}};
  std::map<int, std::vector<std::string>> by_class;
  for (const auto& id : ids) by_class[dataset.by_id(id).label].push_back(id);
  std::vector<std::string> train_ids, val_ids;
  for (auto& [label, members] : by_class) {
    Rng rng = make_rng(seed, "validation", static_cast<std::uint64_t>(label));
    shuffle(members.begin(), members.end(), rng);
    const auto k = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
    const std::size_t take = std::min(k, members.size() - 1);
    val_ids.insert(val_ids.end(), members.begin(), members.begin() + take);
    train_ids.insert(train_ids.end(), members.begin() + take, members.end());
  }
  return {train_ids, val_ids};
}

double evaluate_accuracy(Model<float>& model, const std::vector<LabeledSample>& samples, int batch_size) {
  if (samples.empty()) throw ValidationError("cannot evaluate on an empty set");
  std::vector<const Image*> images;
  for (const auto& s : samples) images.push_back(&s.image);
  const auto scores = predict(model, images, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += scores[i].predicted == samples[i].label;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace cvs
