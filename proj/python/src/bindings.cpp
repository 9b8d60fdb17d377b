#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cvs/checkpoint.hpp"
#include "cvs/cli.hpp"
#include "cvs/cost_analysis.hpp"
#include "cvs/cvs_inference.hpp"
#include "cvs/evaluation.hpp"
#include "cvs/label_synthesis.hpp"
#include "cvs/losses.hpp"

namespace py = pybind11;
using namespace cvs;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
Tensor<T> to_tensor(const A& a) {
  std::vector<int> shape(a.shape(), a.shape() + a.ndim());
  return Tensor<T>(shape, std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_to_numpy(const SegMask& m) {
  py::array_t<std::uint8_t> out({m.height, m.width});
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

SegMask mask_from_numpy(const U8& a, int num_classes) {
  if (a.ndim() != 2) throw ShapeError("mask must be a 2-d array");
  SegMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), num_classes);
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

// HxW or HxWxC float array in [0,1]
Image image_from_numpy(const F32& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw ShapeError("image must be HxW or HxWxC");
  Image im(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1);
  std::copy(a.data(), a.data() + a.size(), im.pixels.begin());
  return im;
}

std::vector<SegMask> masks_from_batch(const U8& a, int num_classes) {
  if (a.ndim() != 3) throw ShapeError("masks must be N x H x W");
  std::vector<SegMask> out;
  const auto plane = static_cast<std::size_t>(a.shape(1) * a.shape(2));
  for (py::ssize_t n = 0; n < a.shape(0); ++n) {
    SegMask m(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)), num_classes);
    std::copy(a.data() + n * plane, a.data() + (n + 1) * plane, m.values.begin());
    out.push_back(std::move(m));
  }
  return out;
}

py::dict scores_dict(const ClassScores& s) {
  py::dict d;
  d["logits"] = s.logits;
  d["probabilities"] = s.probabilities;
  d["predicted"] = s.predicted;
  return d;
}

class PyModel {
 public:
  PyModel(NetworkSpec spec, std::uint64_t seed) : model_(std::move(spec), seed) {}

  py::dict forward(const F32& x) {
    ForwardContext ctx;
    const auto out = model_.forward(to_tensor<float>(x), ctx);
    py::dict d;
    d["seg"] = out.seg.empty() ? py::object(py::none()) : py::object(to_numpy(out.seg));
    d["clf"] = out.clf.empty() ? py::object(py::none()) : py::object(to_numpy(out.clf));
    return d;
  }

  std::map<std::string, py::array_t<float>> state() const {
    std::map<std::string, py::array_t<float>> out;
    for (const auto& [k, v] : model_.export_params().tensors) out.emplace(k, to_numpy(v));
    return out;
  }

  void load_state(const std::map<std::string, F32>& tensors, bool allow_partial) {
    ModelParams p;
    for (const auto& [k, v] : tensors) p.tensors.emplace(k, to_tensor<float>(v));
    model_.import_params(p, allow_partial);
  }

  std::string graph_json() const { return nlohmann::json(model_.spec()).dump(); }
  std::int64_t num_parameters() const { return parameter_count(model_.spec()); }
  Model<float>& model() { return model_; }

 private:
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Classification via segmentation: core routines";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<LoadError>(m, "LoadError", PyExc_OSError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

  m.def(
      "class_scores_from_seg", [](const F64& h) { return scores_dict(class_scores_from_seg(to_tensor<double>(h))); },
      py::arg("logits"), "Class scores from (P+1) x H x W segmentation logits.");
  m.def(
      "class_scores_batch",
      [](const F64& h) {
        py::list out;
        for (const auto& s : class_scores_batch(to_tensor<double>(h))) out.append(scores_dict(s));
        return out;
      },
      py::arg("logits"));

  m.def(
      "binarize",
      [](const F32& image, int label, int num_classes, double threshold) {
        return mask_to_numpy(binarize_to_mask(image_from_numpy(image), label, num_classes, threshold));
      },
      py::arg("image"), py::arg("label"), py::arg("num_classes"), py::arg("threshold") = 0.0);

  m.def(
      "argmax_mask", [](const F64& logits, int n) { return mask_to_numpy(argmax_mask(to_tensor<double>(logits), n)); },
      py::arg("logits"), py::arg("n") = 0);

  m.def(
      "pixel_cross_entropy",
      [](const F64& logits, const U8& masks) {
        const auto t = to_tensor<double>(logits);
        if (t.rank() != 4) throw ShapeError("logits must be N x (P+1) x H x W");
        const auto ms = masks_from_batch(masks, t.dim(1) - 1);
        std::vector<const SegMask*> ptrs;
        for (const auto& x : ms) ptrs.push_back(&x);
        Tensor<double> grad;
        const double loss = pixel_cross_entropy(t, ptrs, &grad);
        return py::make_tuple(loss, to_numpy(grad));
      },
      py::arg("logits"), py::arg("masks"), "Mean per-pixel cross entropy and its gradient.");

  m.def(
      "class_cross_entropy",
      [](const F64& scores, const std::vector<int>& labels) {
        Tensor<double> grad;
        const double loss = class_cross_entropy(to_tensor<double>(scores), labels, &grad);
        return py::make_tuple(loss, to_numpy(grad));
      },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "mean_iou",
      [](const U8& pred, const U8& gt, int num_classes) {
        const auto p = masks_from_batch(pred, num_classes), g = masks_from_batch(gt, num_classes);
        std::vector<const SegMask*> pp, gp;
        for (std::size_t i = 0; i < p.size(); ++i) {
          pp.push_back(&p[i]);
          gp.push_back(&g[i]);
        }
        const auto r = mean_iou(pp, gp, num_classes);
        py::dict d;
        d["per_class"] = r.per_class;
        d["mean"] = r.mean;
        d["foreground_mean"] = r.foreground_mean;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"));

  m.def(
      "kfold_split",
      [](const std::vector<std::string>& ids, int k, std::uint64_t seed) {
        std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> out;
        for (const auto& f : kfold_split(ids, k, seed).folds) out.emplace_back(f.train_ids, f.test_ids);
        return out;
      },
      py::arg("ids"), py::arg("k"), py::arg("seed") = 0, "List of (train_ids, test_ids) per fold.");

  m.def(
      "annotation_cost",
      [](const std::string& method, std::int64_t n_class, std::int64_t n_seg, std::optional<double> t_class,
         std::optional<double> t_seg, const std::string& dataset) {
        AnnotationRates r = rates_for(dataset);
        if (t_class) r.t_class = *t_class;
        if (t_seg) r.t_seg = *t_seg;
        return annotation_cost(method_from_string(method), n_class, n_seg, r);
      },
      py::arg("method"), py::arg("n_class_labeled"), py::arg("n_seg_labeled"), py::arg("t_class") = py::none(),
      py::arg("t_seg") = py::none(), py::arg("dataset") = "cifar10");
  m.def("annotation_rates", [](const std::string& dataset) {
    const auto r = rates_for(dataset);
    return py::make_tuple(r.t_class, r.t_seg);
  });

  m.def(
      "synthetic_shapes",
      [](std::size_t count, std::uint64_t seed, int num_classes) {
        const Dataset ds = generate_synthetic_shapes(count, seed, num_classes);
        const auto shape = ds.image_shape();
        py::array_t<float> images({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(shape.height),
                                   static_cast<py::ssize_t>(shape.width), static_cast<py::ssize_t>(shape.channels)});
        py::array_t<std::uint8_t> masks({static_cast<py::ssize_t>(ds.size()), static_cast<py::ssize_t>(shape.height),
                                         static_cast<py::ssize_t>(shape.width)});
        std::vector<int> labels;
        float* ip = images.mutable_data();
        std::uint8_t* mp = masks.mutable_data();
        for (const auto& s : ds) {
          ip = std::copy(s.image.pixels.begin(), s.image.pixels.end(), ip);
          mp = std::copy(s.mask->values.begin(), s.mask->values.end(), mp);
          labels.push_back(s.label);
        }
        return py::make_tuple(images, labels, masks);
      },
      py::arg("count"), py::arg("seed") = 0, py::arg("num_classes") = 3, "(images NxHxWxC, labels, masks NxHxW)");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& method, const std::string& backbone, std::vector<int> input, int num_classes,
                       int wrn_depth, int wrn_width, double dropout, std::uint64_t seed) {
             if (input.size() != 3) throw ShapeError("input must be (C, H, W)");
             BackboneOptions o;
             o.kind = backbone_from_string(backbone);
             o.wrn_depth = wrn_depth;
             o.wrn_width = wrn_width;
             o.dropout_rate = dropout;
             o.resnet.dilated = true;
             return std::make_unique<PyModel>(
                 build_network(method_from_string(method), o, FeatureShape::spatial(input[0], input[1], input[2]),
                               num_classes),
                 seed);
           }),
           py::arg("method"), py::arg("backbone") = "wide-resnet", py::arg("input") = std::vector<int>{1, 28, 28},
           py::arg("num_classes") = 10, py::arg("wrn_depth") = 16, py::arg("wrn_width") = 2, py::arg("dropout") = 0.0,
           py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::filesystem::path& dir) {
            const auto ck = load_checkpoint(dir);
            auto pm = std::make_unique<PyModel>(ck.network, 0);
            pm->model().import_params(ck.params);
            return pm;
          },
          py::arg("checkpoint_dir"))
      .def("forward", &PyModel::forward, py::arg("images"), "Inference forward of an N x C x H x W batch.")
      .def(
          "predict",
          [](PyModel& self, const F32& x) {
            const auto t = to_tensor<float>(x);
            if (t.rank() != 4) throw ShapeError("images must be N x C x H x W");
            std::vector<Image> imgs;
            const int n = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
            for (int i = 0; i < n; ++i) {
              Image im(h, w, c);
              for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                  for (int xx = 0; xx < w; ++xx) im.at(y, xx, ch) = t.at(i, ch, y, xx);
              imgs.push_back(std::move(im));
            }
            std::vector<const Image*> ptrs;
            for (const auto& im : imgs) ptrs.push_back(&im);
            std::vector<int> out;
            for (const auto& s : predict(self.model(), ptrs)) out.push_back(s.predicted);
            return out;
          },
          py::arg("images"), "1-based predicted classes.")
      .def("state_dict", &PyModel::state)
      .def("load_state_dict", &PyModel::load_state, py::arg("state"), py::arg("allow_partial") = false)
      .def_property_readonly("graph_json", &PyModel::graph_json)
      .def_property_readonly("num_parameters", &PyModel::num_parameters);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line interface in-process; returns (exit_code, stdout, stderr).");
}
