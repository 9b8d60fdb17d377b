#include "cvs/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "cvs/checkpoint.hpp"
#include "cvs/error.hpp"
#include "cvs/experiment.hpp"

namespace cvs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> dataset, data_root, train_manifest, test_manifest, output, m, backbone, method, schedule,
      label_mode, seg_model;
  std::optional<std::size_t> train_size, test_size;
  std::optional<std::uint64_t> seed;
  std::optional<int> wrn_depth, wrn_width, input_size, input_channels, epochs, batch_size, kfold;
  std::optional<double> dropout, lr, momentum, weight_decay, mtl_lambda, threshold;
  std::optional<bool> keep_manual, relabel;
  bool no_augment = false;
  std::vector<std::string> methods, ms;
  std::vector<std::uint64_t> seeds;
  // subcommand specific
  std::string mode;
  std::string split = "train";
  bool resume = false;
  std::string checkpoint;
  std::string results;
  std::optional<double> t_class, t_seg;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--dataset", f.dataset, "mnist, cifar10, cifar100, synthetic-shapes, or a name for manifest data");
  app->add_option("--data-root", f.data_root, "directory holding the built-in dataset files");
  app->add_option("--train-manifest", f.train_manifest, "manifest of the training split");
  app->add_option("--test-manifest", f.test_manifest, "manifest of the test split");
  app->add_option("--train-size", f.train_size, "keep the first N training samples");
  app->add_option("--test-size", f.test_size, "keep the first N test samples");
  app->add_option("-o,--output", f.output, "output directory (relative paths go under $CVS_OUTPUT_ROOT)");
  app->add_option("--seed", f.seed, "root seed");
  app->add_option("--m", f.m, "samples per class, or 'all'");
  app->add_option("--backbone", f.backbone, "wide-resnet or resnet101");
  app->add_option("--wrn-depth", f.wrn_depth, "wide-resnet depth");
  app->add_option("--wrn-width", f.wrn_width, "wide-resnet widening factor");
  app->add_option("--dropout", f.dropout, "dropout rate inside residual blocks");
  app->add_option("--input-size", f.input_size, "resize images to this square side");
  app->add_option("--input-channels", f.input_channels, "replicate single-channel images to this many channels");
  app->add_option("--method", f.method, "cvs, classification, multitask or segmentation-only");
  app->add_option("--epochs", f.epochs, "training epochs");
  app->add_option("--batch-size", f.batch_size, "mini-batch size (0 picks by dataset size)");
  app->add_option("--lr", f.lr, "initial learning rate");
  app->add_option("--momentum", f.momentum, "SGD momentum");
  app->add_option("--weight-decay", f.weight_decay, "L2 weight decay");
  app->add_option("--mtl-lambda", f.mtl_lambda, "weight of the classification loss in multitask training");
  app->add_option("--schedule", f.schedule, "cosine or constant");
  app->add_flag("--no-augment", f.no_augment, "disable data augmentation");
  app->add_option("--label-mode", f.label_mode, "none, binarize, manual or propagate");
  app->add_option("--threshold", f.threshold, "binarization threshold");
  app->add_option("--seg-model", f.seg_model, "Seg-M directory written by train-seg");
  app->add_option("--keep-manual-masks", f.keep_manual, "keep existing masks when propagating (true/false)");
  app->add_option("--relabel-foreground", f.relabel, "give propagated foreground the image's own class (true/false)");
}

json flags_to_patch(const Flags& f) {
  json p = json::object();
  if (f.seed) p["seed"] = *f.seed;
  if (f.dataset) p["dataset"]["name"] = *f.dataset;
  if (f.data_root) p["dataset"]["data_root"] = *f.data_root;
  if (f.train_manifest) p["dataset"]["train_source"] = *f.train_manifest;
  if (f.test_manifest) p["dataset"]["test_source"] = *f.test_manifest;
  if (f.train_size) p["dataset"]["train_size"] = *f.train_size;
  if (f.test_size) p["dataset"]["test_size"] = *f.test_size;
  if (f.m) {
    if (*f.m == "all") {
      p["subset"]["m"] = "all";
    } else {
      int m = 0;
      try {
        std::size_t used = 0;
        m = std::stoi(*f.m, &used);
        if (used != f.m->size()) throw ConfigError("");
      } catch (const std::exception&) {
        throw ConfigError("--m must be a positive integer or 'all'");
      }
      if (m < 1) throw ConfigError("--m must be a positive integer or 'all'");
      p["subset"]["m"] = m;
    }
  }
  if (f.backbone) p["network"]["backbone"] = *f.backbone;
  if (f.wrn_depth) p["network"]["wrn_depth"] = *f.wrn_depth;
  if (f.wrn_width) p["network"]["wrn_width"] = *f.wrn_width;
  if (f.dropout) p["network"]["dropout_rate"] = *f.dropout;
  if (f.input_size) p["network"]["input_size"] = *f.input_size;
  if (f.input_channels) p["network"]["input_channels"] = *f.input_channels;
  if (f.method) p["train"]["method"] = *f.method;
  if (f.epochs) p["train"]["epochs"] = *f.epochs;
  if (f.batch_size) p["train"]["batch_size"] = *f.batch_size;
  if (f.lr) p["train"]["lr"] = *f.lr;
  if (f.momentum) p["train"]["momentum"] = *f.momentum;
  if (f.weight_decay) p["train"]["weight_decay"] = *f.weight_decay;
  if (f.mtl_lambda) p["train"]["mtl_lambda"] = *f.mtl_lambda;
  if (f.schedule) p["train"]["lr_schedule"] = *f.schedule;
  if (f.no_augment) {
    p["train"]["augmentation"] = nullptr;
    p["grid"]["per_method_augmentation"] = false;
  }
  if (f.label_mode) p["labels"]["mode"] = *f.label_mode;
  if (f.threshold) p["labels"]["threshold"] = *f.threshold;
  if (f.seg_model) p["labels"]["seg_model"] = *f.seg_model;
  if (f.keep_manual) p["labels"]["keep_manual_masks"] = *f.keep_manual;
  if (f.relabel) p["labels"]["relabel_foreground"] = *f.relabel;
  if (!f.methods.empty()) p["grid"]["methods"] = f.methods;
  if (!f.ms.empty()) {
    json ms = json::array();
    for (const auto& m : f.ms) {
      if (m == "all") {
        ms.push_back("all");
        continue;
      }
      try {
        ms.push_back(std::stoi(m));
      } catch (const std::exception&) {
        throw ConfigError("--ms values must be integers or 'all'");
      }
    }
    p["grid"]["m_values"] = ms;
  }
  if (!f.seeds.empty()) p["grid"]["seeds"] = f.seeds;
  if (f.kfold) p["grid"]["kfold"] = *f.kfold;
  if (f.output) p["output_dir"] = *f.output;
  return p;
}

// Config precedence: flags > config file > dataset defaults.
RunConfig build_config(const Flags& f, const json& extra = json::object()) {
  json doc = json::object();
  if (!f.config.empty()) {
    try {
      doc = json::parse(read_text_file(f.config));
    } catch (const json::exception& e) {
      throw ConfigError("cannot parse '" + f.config + "': " + e.what());
    }
    if (!doc.is_object()) throw ConfigError("'" + f.config + "' must hold a JSON object");
  }
  auto merge = [](json& base, const json& patch, auto& self) -> void {
    for (const auto& [k, v] : patch.items()) {
      if (v.is_object() && base.contains(k) && base[k].is_object()) {
        self(base[k], v, self);
      } else {
        base[k] = v;
      }
    }
  };
  merge(doc, flags_to_patch(f), merge);
  merge(doc, extra, merge);
  RunConfig rc = resolve_run_config(doc);
  rc.output_dir = resolve_output_dir(rc.output_dir);
  return rc;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Classification via segmentation: label synthesis, training, evaluation and cost analysis", "cvs"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  Flags f;

  auto* prep = app.add_subcommand("prepare-labels", "write masks and a manifest for a dataset split");
  add_common(prep, f);
  prep->add_option("--mode", f.mode, "binarize or propagate")->required()->check(CLI::IsMember({"binarize", "propagate"}));
  prep->add_option("--split", f.split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* train_seg = app.add_subcommand("train-seg", "train the Seg-M network on M masked samples per class");
  add_common(train_seg, f);

  auto* train_cmd = app.add_subcommand("train", "train one method on an M-per-class subset");
  add_common(train_cmd, f);
  train_cmd->add_flag("--resume", f.resume, "continue from the checkpoint in the output directory");

  auto* prop = app.add_subcommand("propagate", "propagate Seg-M masks to every image of a split");
  add_common(prop, f);
  prop->add_option("--split", f.split, "train or test")->check(CLI::IsMember({"train", "test"}));

  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on the test split");
  add_common(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint directory")->required();

  auto* grid = app.add_subcommand("grid", "run a (method, M, seed) experiment grid");
  add_common(grid, f);
  grid->add_option("--methods", f.methods, "methods to compare");
  grid->add_option("--ms", f.ms, "M values (integers or 'all')");
  grid->add_option("--seeds", f.seeds, "seeds");
  grid->add_option("--kfold", f.kfold, "run k-fold cross-validation instead of the M grid");

  auto* cost = app.add_subcommand("cost-report", "annotation cost vs accuracy rows from a results table");
  cost->add_option("--results", f.results, "results.tsv written by grid or evaluate")->required()->check(CLI::ExistingFile);
  cost->add_option("--dataset", f.dataset, "dataset whose measured annotation rates apply");
  cost->add_option("--t-class", f.t_class, "seconds per class label (overrides the dataset rate)");
  cost->add_option("--t-seg", f.t_seg, "seconds per manual segmentation (overrides the dataset rate)");
  cost->add_option("-o,--output", f.output, "output file for the cost rows")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (prep->parsed()) {
      json extra;
      extra["labels"]["mode"] = f.mode;
      if (f.mode == "propagate" && !f.seg_model) {
        err << "prepare-labels: --mode propagate requires --seg-model\n";
        return kExitUsage;
      }
      const RunConfig rc = build_config(f, extra);
      DirectoryLock lock(rc.output_dir);
      const auto s = prepare_labels(rc, f.split);
      out << "samples=" << s.samples << "\nmasks=" << s.masks << "\nmanifest=" << s.manifest.string() << "\n";
      if (s.report) out << s.report->to_text();
      return kExitOk;
    }
    if (prop->parsed()) {
      if (!f.seg_model) {
        err << "propagate: --seg-model is required\n";
        return kExitUsage;
      }
      json extra;
      extra["labels"]["mode"] = "propagate";
      const RunConfig rc = build_config(f, extra);
      DirectoryLock lock(rc.output_dir);
      const auto s = prepare_labels(rc, f.split);
      out << s.report->to_text() << "manifest=" << s.manifest.string() << "\n";
      return kExitOk;
    }
    if (train_seg->parsed()) {
      const RunConfig rc = build_config(f);
      DirectoryLock lock(rc.output_dir);
      const auto seg = train_seg_model(rc);
      out << "model_id=" << seg.id << "\nepochs=" << seg.checkpoint.params.epoch
          << "\nfinal_loss=" << fmt(seg.log.last("train", "loss").value_or(0.0))
          << "\ncheckpoint=" << rc.output_dir.string() << "\n";
      return kExitOk;
    }
    if (train_cmd->parsed()) {
      const RunConfig rc = build_config(f);
      DirectoryLock lock(rc.output_dir);
      const auto result = train_model(rc, f.resume);
      out << "method=" << to_string(rc.train.method) << "\nepochs=" << result.checkpoint.params.epoch
          << "\nfinal_loss=" << fmt(result.log.last("train", "loss").value_or(0.0));
      if (auto acc = result.log.last("val", "accuracy")) out << "\nval_accuracy=" << fmt(*acc);
      out << "\ncheckpoint=" << rc.output_dir.string() << "\n";
      return kExitOk;
    }
    if (eval->parsed()) {
      if (!checkpoint_exists(f.checkpoint)) {
        err << "evaluate: no checkpoint in '" << f.checkpoint << "'\n";
        return kExitUsage;
      }
      const RunConfig rc = build_config(f);
      DirectoryLock lock(rc.output_dir);
      const auto r = evaluate_checkpoint(rc, f.checkpoint);
      out << "top1=" << fmt(r.top1) << "\n";
      if (r.mean_iou) out << "mean_iou=" << fmt(*r.mean_iou) << "\n";
      out << "report=" << (rc.output_dir / "report.tsv").string() << "\n";
      return kExitOk;
    }
    if (grid->parsed()) {
      const RunConfig rc = build_config(f);
      DirectoryLock lock(rc.output_dir);
      const auto reports = run_grid(rc, [&](const EvalReport& r) {
        out << r.method << " m=" << r.m << " seed=" << r.seed << " "
            << (r.ok ? "top1=" + fmt(r.top1) : "failed: " + r.error) << "\n";
        out.flush();
      });
      out << format_mean_table(mean_over_seeds(reports));
      out << "results=" << (rc.output_dir / "results.tsv").string() << "\n";
      return kExitOk;
    }
    if (cost->parsed()) {
      AnnotationRates rates = rates_for(f.dataset.value_or("cifar10"));
      if (f.t_class) rates.t_class = *f.t_class;
      if (f.t_seg) rates.t_seg = *f.t_seg;
      rates.validate();
      const fs::path output = resolve_output_dir(*f.output);
      const fs::path dir = output.has_parent_path() ? output.parent_path() : fs::path(".");
      DirectoryLock lock(dir);
      const auto points = cost_report(f.results, rates, output);
      out << "rows=" << points.size() << "\noutput=" << output.string() << "\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cvs
