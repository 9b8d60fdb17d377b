#include "cvs/run_config.hpp"

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include <fcntl.h>
#include <unistd.h>

#include "cvs/augment.hpp"
#include "cvs/checkpoint.hpp"
#include "cvs/error.hpp"
#include "cvs/rng.hpp"

namespace cvs {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(LabelMode m) {
  switch (m) {
    case LabelMode::none: return "none";
    case LabelMode::binarize: return "binarize";
    case LabelMode::manual: return "manual";
    case LabelMode::propagate: return "propagate";
  }
  return "none";
}

LabelMode label_mode_from_string(std::string_view name) {
  if (name == "none") return LabelMode::none;
  if (name == "binarize") return LabelMode::binarize;
  if (name == "manual") return LabelMode::manual;
  if (name == "propagate") return LabelMode::propagate;
  throw ConfigError("unknown label mode '" + std::string(name) + "'");
}

BackboneOptions RunConfig::backbone_options() const {
  BackboneOptions b;
  b.kind = network.backbone;
  b.wrn_depth = network.wrn_depth;
  b.wrn_width = network.wrn_width;
  b.dropout_rate = network.dropout_rate;
  b.resnet.pretrained = network.pretrained;
  return b;
}

json dataset_defaults(const std::string& dataset) {
  json d = json::object();
  d["dataset"]["name"] = dataset;
  d["labels"]["mode"] = dataset == "mnist" ? "binarize" : "manual";
  if (dataset == "synthetic-shapes") {
    d["dataset"]["train_size"] = 300;
    d["dataset"]["test_size"] = 100;
  }
  return d;
}

namespace {

// Objects merge key by key; any other value (null included) replaces the base.
void deep_merge(json& base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) {
    base = patch;
    return;
  }
  for (const auto& [key, value] : patch.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      deep_merge(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

std::optional<int> parse_m(const json& v) {
  if (v.is_string()) {
    if (v.get<std::string>() == "all") return std::nullopt;
    throw ConfigError("m must be a positive integer or \"all\"");
  }
  const int m = v.get<int>();
  if (m < 1) throw ConfigError("m must be a positive integer or \"all\"");
  return m;
}

json m_to_json(const std::optional<int>& m) { return m ? json(*m) : json("all"); }

template <typename T>
T get(const json& obj, const char* key, T fallback) {
  return obj.contains(key) ? obj.at(key).get<T>() : fallback;
}

}  // namespace

RunConfig resolve_run_config(const json& document) {
  if (!document.is_object()) throw ConfigError("configuration must be a JSON object");
  reject_unknown(document, {"seed", "dataset", "subset", "network", "train", "labels", "grid", "output_dir"},
                 "configuration");
  std::string name = "synthetic-shapes";
  if (document.contains("dataset") && document["dataset"].contains("name"))
    name = document["dataset"]["name"].get<std::string>();
  json doc = dataset_defaults(name);
  deep_merge(doc, document);

  RunConfig rc;
  try {
    rc.seed = get<std::uint64_t>(doc, "seed", 0);

    const json ds = doc.value("dataset", json::object());
    reject_unknown(ds, {"name", "train_source", "test_source", "data_root", "train_size", "test_size", "num_classes"},
                   "dataset");
    rc.dataset.name = get<std::string>(ds, "name", "synthetic-shapes");
    rc.dataset.train_source = get<std::string>(ds, "train_source", "");
    rc.dataset.test_source = get<std::string>(ds, "test_source", "");
    rc.dataset.data_root = get<std::string>(ds, "data_root", "");
    rc.dataset.train_size = get<std::size_t>(ds, "train_size", 0);
    rc.dataset.test_size = get<std::size_t>(ds, "test_size", 0);
    rc.dataset.num_classes = get<int>(ds, "num_classes", 0);
    if (rc.dataset.train_source.empty() && !is_builtin_dataset(rc.dataset.name))
      throw ConfigError("dataset '" + rc.dataset.name + "' is not built in and has no train_source manifest");

    const json sub = doc.value("subset", json::object());
    reject_unknown(sub, {"m", "seed"}, "subset");
    rc.m = sub.contains("m") ? parse_m(sub["m"]) : std::nullopt;
    rc.subset_seed = get<std::uint64_t>(sub, "seed", rc.seed);

    const json net = doc.value("network", json::object());
    reject_unknown(net, {"backbone", "wrn_depth", "wrn_width", "dropout_rate", "pretrained", "pretrained_weights",
                         "input_size", "input_channels"},
                   "network");
    rc.network.backbone = backbone_from_string(get<std::string>(net, "backbone", "wide-resnet"));
    rc.network.wrn_depth = get<int>(net, "wrn_depth", 28);
    rc.network.wrn_width = get<int>(net, "wrn_width", 10);
    rc.network.dropout_rate = get<double>(net, "dropout_rate", 0.3);
    rc.network.pretrained = get<bool>(net, "pretrained", false);
    rc.network.pretrained_weights = get<std::string>(net, "pretrained_weights", "");
    const bool resnet = rc.network.backbone == BackboneKind::resnet;
    rc.network.input_size = get<int>(net, "input_size", resnet ? 128 : 0);
    rc.network.input_channels = get<int>(net, "input_channels", resnet ? 3 : 0);
    if (rc.network.input_size < 0 || rc.network.input_channels < 0)
      throw ConfigError("network input size and channels must be non-negative");
    if (rc.network.dropout_rate < 0 || rc.network.dropout_rate >= 1) throw ConfigError("dropout_rate must be in [0, 1)");
    if (rc.network.pretrained && rc.network.pretrained_weights.empty())
      throw ConfigError("pretrained backbone requested but no pretrained_weights archive given");

    json tr = doc.value("train", json::object());
    if (!tr.contains("seed")) tr["seed"] = rc.seed;
    const bool explicit_epochs = tr.contains("epochs");
    const bool explicit_aug = tr.contains("augmentation");
    rc.train = tr.get<TrainConfig>();
    if (!explicit_epochs) rc.train.epochs = rc.m && *rc.m <= 100 ? 600 : 200;
    if (!explicit_aug) rc.train.augmentation = default_policy(rc.dataset.name, rc.train.method);

    const json lab = doc.value("labels", json::object());
    reject_unknown(lab, {"mode", "threshold", "seg_model", "keep_manual_masks", "relabel_foreground"}, "labels");
    rc.labels.mode = label_mode_from_string(get<std::string>(lab, "mode", "none"));
    rc.labels.threshold = get<double>(lab, "threshold", 0.0);
    rc.labels.seg_model = get<std::string>(lab, "seg_model", "");
    rc.labels.keep_manual_masks = get<bool>(lab, "keep_manual_masks", true);
    rc.labels.relabel_foreground = get<bool>(lab, "relabel_foreground", false);

    const json grid = doc.value("grid", json::object());
    reject_unknown(grid, {"methods", "m_values", "seeds", "kfold", "per_method_augmentation"}, "grid");
    if (grid.contains("methods")) {
      rc.grid.methods.clear();
      for (const auto& m : grid["methods"]) rc.grid.methods.push_back(method_from_string(m.get<std::string>()));
    }
    if (grid.contains("m_values")) {
      rc.grid.m_values.clear();
      for (const auto& m : grid["m_values"]) rc.grid.m_values.push_back(parse_m(m));
    }
    if (grid.contains("seeds")) rc.grid.seeds = grid["seeds"].get<std::vector<std::uint64_t>>();
    rc.grid.kfold = get<int>(grid, "kfold", 0);
    rc.grid.per_method_augmentation = get<bool>(grid, "per_method_augmentation", !explicit_aug);
    if (rc.grid.methods.empty() || rc.grid.seeds.empty() || (rc.grid.m_values.empty() && rc.grid.kfold == 0))
      throw ConfigError("grid needs at least one method, seed and M value");

    rc.output_dir = get<std::string>(doc, "output_dir", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid configuration value: ") + e.what());
  }
  return rc;
}

json to_json(const RunConfig& rc) {
  json j;
  j["seed"] = rc.seed;
  j["dataset"] = {{"name", rc.dataset.name},
                  {"train_source", rc.dataset.train_source},
                  {"test_source", rc.dataset.test_source},
                  {"data_root", rc.dataset.data_root.generic_string()},
                  {"train_size", rc.dataset.train_size},
                  {"test_size", rc.dataset.test_size},
                  {"num_classes", rc.dataset.num_classes}};
  j["subset"] = {{"m", m_to_json(rc.m)}, {"seed", rc.subset_seed}};
  j["network"] = {{"backbone", std::string(to_string(rc.network.backbone))},
                  {"wrn_depth", rc.network.wrn_depth},
                  {"wrn_width", rc.network.wrn_width},
                  {"dropout_rate", rc.network.dropout_rate},
                  {"pretrained", rc.network.pretrained},
                  {"pretrained_weights", rc.network.pretrained_weights.generic_string()},
                  {"input_size", rc.network.input_size},
                  {"input_channels", rc.network.input_channels}};
  j["train"] = rc.train;
  j["labels"] = {{"mode", std::string(to_string(rc.labels.mode))},
                 {"threshold", rc.labels.threshold},
                 {"seg_model", rc.labels.seg_model.generic_string()},
                 {"keep_manual_masks", rc.labels.keep_manual_masks},
                 {"relabel_foreground", rc.labels.relabel_foreground}};
  json methods = json::array(), ms = json::array();
  for (Method m : rc.grid.methods) methods.push_back(std::string(to_string(m)));
  for (const auto& m : rc.grid.m_values) ms.push_back(m_to_json(m));
  j["grid"] = {{"methods", methods}, {"m_values", ms}, {"seeds", rc.grid.seeds}, {"kfold", rc.grid.kfold},
               {"per_method_augmentation", rc.grid.per_method_augmentation}};
  j["output_dir"] = rc.output_dir.generic_string();
  return j;
}

std::string config_hash(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_tag(j.dump())));
  return buf;
}

fs::path resolve_output_dir(const fs::path& dir) {
  if (dir.empty()) throw ConfigError("an output directory is required");
  if (dir.is_absolute()) return dir;
  if (const char* root = std::getenv("CVS_OUTPUT_ROOT"); root != nullptr && *root != '\0') return fs::path(root) / dir;
  return dir;
}

void write_run_metadata(const fs::path& dir, const RunConfig& config) {
  const json meta{{"format", kRunFormat}, {"config_hash", config_hash(config)}, {"config", to_json(config)}};
  write_file_atomic(dir / "config.json", meta.dump(2) + "\n");
}

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    long owner = 0;
    {
      std::ifstream in(path_);
      in >> owner;
    }
    const bool alive = owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM);
    if (alive) throw Error("output directory '" + dir.string() + "' is locked by process " + std::to_string(owner));
    std::error_code ec;
    fs::remove(path_, ec);
  }
  throw Error("could not lock output directory '" + dir.string() + "'");
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

}  // namespace cvs
