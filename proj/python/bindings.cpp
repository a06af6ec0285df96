// Python extension module usdrl._core. Configs and reports cross the boundary
// as JSON text; the pure-Python wrapper turns them into dicts.

#include "usdrl/checkpoint.hpp"
#include "usdrl/error.hpp"
#include "usdrl/eval.hpp"
#include "usdrl/gradcheck.hpp"
#include "usdrl/train.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace usdrl;

namespace {

using Sequences = std::vector<SkeletonSequence>;

py::array_t<double> sequence_array(const SkeletonSequence& s) {
  const auto& sh = s.shape;
  py::array_t<double> out({sh.channels, sh.frames, sh.joints, sh.persons});
  auto a = out.mutable_unchecked<4>();
  for (int c = 0; c < sh.channels; ++c)
    for (int t = 0; t < sh.frames; ++t)
      for (int v = 0; v < sh.joints; ++v)
        for (int m = 0; m < sh.persons; ++m) a(c, t, v, m) = s.at(c, t, v, m);
  return out;
}

SkeletonSequence sequence_from_array(py::array_t<double, py::array::c_style | py::array::forcecast> x,
                                     std::optional<int> label, std::string source_id) {
  if (x.ndim() != 4) throw ShapeError("expected a [C, T, V, M] array");
  SkeletonSequence s;
  s.shape = {int(x.shape(0)), int(x.shape(1)), int(x.shape(2)), int(x.shape(3))};
  s.data.resize(std::size_t(x.size()));
  auto a = x.unchecked<4>();
  for (int c = 0; c < s.shape.channels; ++c)
    for (int t = 0; t < s.shape.frames; ++t)
      for (int v = 0; v < s.shape.joints; ++v)
        for (int m = 0; m < s.shape.persons; ++m) s.at(c, t, v, m) = a(c, t, v, m);
  s.label = label;
  s.source_id = std::move(source_id);
  s.validate();
  return s;
}

ExperimentConfig parse_config(const std::string& text) {
  return experiment_from_json(text.empty() ? Json::object() : Json::parse(text));
}

py::dict domain_dict(const DomainLoss& d) {
  py::dict out;
  out["similarity"] = d.similarity;
  out["invariance"] = d.invariance;
  out["variance"] = d.variance;
  out["autocov"] = d.autocov;
  out["xcorr"] = d.xcorr;
  out["total"] = d.total;
  return out;
}

LossConfig loss_config(const std::string& text) { return parse_config(text).loss; }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of usdrl";

  py::class_<SkeletonSequence>(m, "Sequence")
      .def(py::init(&sequence_from_array), py::arg("data"), py::arg("label") = std::nullopt,
           py::arg("source_id") = "")
      .def_property_readonly("data", &sequence_array)
      .def_readwrite("label", &SkeletonSequence::label)
      .def_readwrite("frame_labels", &SkeletonSequence::frame_labels)
      .def_readwrite("source_id", &SkeletonSequence::source_id)
      .def_property_readonly("shape",
                             [](const SkeletonSequence& s) {
                               return py::make_tuple(s.shape.channels, s.shape.frames, s.shape.joints,
                                                     s.shape.persons);
                             })
      .def("__repr__", [](const SkeletonSequence& s) {
        return "<Sequence " + s.source_id + " frames=" + std::to_string(s.shape.frames) + ">";
      });

  m.def(
      "synthetic_dataset",
      [](int classes, int per_class, int frames, int joints, int persons, std::uint64_t seed, double separation,
         double shear) {
        SynthOptions o;
        o.class_separation = separation;
        o.shear_jitter = shear;
        return generate_synthetic_dataset(classes, per_class, frames, joints, persons, seed, o);
      },
      py::arg("classes"), py::arg("per_class"), py::arg("frames"), py::arg("joints"), py::arg("persons") = 1,
      py::arg("seed") = 0, py::arg("class_separation") = 1.0, py::arg("shear_jitter") = 0.0);
  m.def("detection_clips", [](int classes, int clips, int frames, int joints,
                              std::uint64_t seed) { return generate_detection_clips(classes, clips, frames, joints, seed); },
        py::arg("classes"), py::arg("clips"), py::arg("frames"), py::arg("joints"), py::arg("seed") = 0);
  m.def("load_dataset", [](const std::filesystem::path& dir) { return load_dataset(dir); });
  m.def("save_dataset", [](const Sequences& s, const std::filesystem::path& dir) { save_dataset(s, dir); });

  m.def("default_config", [] { return to_json(ExperimentConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& text) { return to_json(parse_config(text)).dump(); });

  m.def("standardize_columns", py::overload_cast<const Matrix&>(&standardize_columns));
  m.def("variance_term", py::overload_cast<const Matrix&, double, double>(&variance_term), py::arg("z"),
        py::arg("gamma") = 1.0, py::arg("epsilon") = 1e-4);
  m.def("autocov_term", py::overload_cast<const Matrix&>(&autocov_term));
  m.def("xcorr_term", py::overload_cast<const Matrix&, const Matrix&>(&xcorr_term));
  m.def("fd_loss", [](const std::vector<Matrix>& views, const std::string& cfg) {
    return domain_dict(fd_loss(views, loss_config(cfg)));
  });
  m.def("total_loss", [](const std::vector<Matrix>& inst, const std::vector<Matrix>& spat,
                         const std::vector<Matrix>& temp, const std::string& cfg) {
    const auto b = total_loss(inst, spat, temp, loss_config(cfg));
    py::dict out;
    out["instance"] = domain_dict(b.instance);
    out["spatial"] = domain_dict(b.spatial);
    out["temporal"] = domain_dict(b.temporal);
    out["total"] = b.total;
    return out;
  });
  m.def("effective_rank", &effective_rank);

  py::class_<Model>(m, "Model")
      .def_property_readonly("config", [](const Model& md) { return to_json(md.config).dump(); })
      .def("features", [](const Model& md, const Sequences& s) { return extract_features(md, s); })
      .def("digest", &model_digest)
      .def("save", [](const Model& md, const std::filesystem::path& p) { save_model(p, md); });
  m.def("build_model", [](const std::string& cfg) { return build_model(parse_config(cfg)); });
  m.def("load_model", [](const std::filesystem::path& p) { return load_model(p); });

  m.def(
      "pretrain",
      [](const Sequences& data, const std::string& cfg, std::optional<std::filesystem::path> out_dir) {
        PretrainOptions o;
        o.out_dir = std::move(out_dir);
        PretrainResult r;
        {
          py::gil_scoped_release release;
          r = pretrain(data, parse_config(cfg), o);
        }
        std::vector<double> totals;
        for (const auto& h : r.history) totals.push_back(h.total);
        return py::make_tuple(std::move(r.model), totals);
      },
      py::arg("data"), py::arg("config") = "", py::arg("out_dir") = std::nullopt);

  m.def(
      "linear_probe",
      [](const Model& md, const Sequences& tr, const Sequences& te, int epochs) {
        ProbeOptions o;
        o.epochs = epochs;
        return linear_probe(md, tr, te, o).to_json().dump();
      },
      py::arg("model"), py::arg("train"), py::arg("test"), py::arg("epochs") = 300);
  m.def(
      "knn_retrieve",
      [](const Model& md, const Sequences& g, const Sequences& q, int k) {
        KnnOptions o;
        o.k = k;
        return knn_retrieve(md, g, q, o).to_json().dump();
      },
      py::arg("model"), py::arg("gallery"), py::arg("queries"), py::arg("k") = 1);

  m.def("gradient_check_components", &gradient_check_components);
  m.def("gradient_check", [](const std::string& name, double tolerance) {
    GradCheckOptions o;
    o.tolerance = tolerance;
    const auto r = gradient_check(name, o);
    return py::make_tuple(r.passed(), r.max_rel_error(), r.to_string());
  }, py::arg("component"), py::arg("tolerance") = 1e-4);
}
