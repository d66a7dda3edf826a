#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "fpba/attacks.hpp"
#include "fpba/bayes.hpp"
#include "fpba/checkpoint.hpp"
#include "fpba/config.hpp"
#include "fpba/data.hpp"
#include "fpba/error.hpp"
#include "fpba/eval.hpp"
#include "fpba/frequency.hpp"
#include "fpba/train.hpp"

namespace py = pybind11;
using namespace fpba;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 4) throw InvalidInput("expected an NCHW array, got " + std::to_string(a.ndim()) + " dimensions");
  const Shape s{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
                static_cast<std::size_t>(a.shape(2)), static_cast<std::size_t>(a.shape(3))};
  return Tensor(s, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.n, s.c, s.h, s.w});
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

// Python dicts go through the JSON config types so keys and validation match the CLI.
template <typename T>
T from_dict(const py::object& obj) {
  T value{};
  if (obj.is_none()) return value;
  const auto text = py::module_::import("json").attr("dumps")(obj).cast<std::string>();
  from_json(nlohmann::json::parse(text), value);
  return value;
}

template <typename T>
py::object to_dict(const T& value) {
  nlohmann::json j;
  to_json(j, value);
  return py::module_::import("json").attr("loads")(j.dump());
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict dataset_dict(const LabeledDataset& ds) {
  py::dict d;
  d["images"] = to_array(ds.images);
  d["labels"] = ds.labels;
  std::vector<std::string> splits;
  for (Split s : ds.splits) splits.push_back(to_string(s));
  d["splits"] = splits;
  d["families"] = ds.families;
  return d;
}

py::dict attack_dict(const AttackResult& r) {
  py::dict d;
  d["adversarial"] = to_array(r.adversarial);
  d["success"] = std::vector<bool>(r.success.begin(), r.success.end());
  d["linf"] = r.linf;
  d["success_rate"] = r.success_fraction();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Frequency-based post-train Bayesian attacks on AI-generated image detectors";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
  py::register_exception<InvalidParameter>(m, "InvalidParameter", base.ptr());
  py::register_exception<CapabilityError>(m, "CapabilityError", base.ptr());
  py::register_exception<InvalidDataset>(m, "InvalidDataset", base.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", base.ptr());

  m.def("dct2", [](const Array& x) { return to_array(dct2(to_tensor(x))); }, py::arg("x"),
        "Orthonormal 2-D DCT-II over the last two axes of an NCHW array.");
  m.def("idct2", [](const Array& x) { return to_array(idct2(to_tensor(x))); }, py::arg("spectrum"));
  m.def(
      "spectrum_transform",
      [](const Array& x, double rho, double sigma, std::uint64_t seed) {
        return to_array(spectrum_transform(to_tensor(x), SpectrumTransformParams{rho, sigma, seed}));
      },
      py::arg("x"), py::arg("rho") = 0.5, py::arg("sigma_noise") = 8.0 / 255.0, py::arg("seed") = 0);

  m.def(
      "synth_dataset", [](const py::object& cfg) { return dataset_dict(synth_dataset(from_dict<SynthConfig>(cfg))); },
      py::arg("config") = py::none(), "Synthetic real/fake dataset; config keys follow the CLI's data section.");
  m.def(
      "load_dataset", [](const std::filesystem::path& p) { return dataset_dict(LabeledDataset::load(p)); },
      py::arg("path"));

  py::class_<Detector>(m, "Detector")
      .def_static(
          "train",
          [](const std::string& data_path, const std::string& arch, const py::object& train, const py::object& augment) {
            const auto data = LabeledDataset::load(data_path);
            return train_detector(parse_arch(arch), data, from_dict<AugmentConfig>(augment),
                                  from_dict<TrainConfig>(train));
          },
          py::arg("data"), py::arg("arch") = "spatial-cnn", py::arg("train") = py::none(),
          py::arg("augment") = py::none(), "Trains on a dataset .npz written by gen-data or save_dataset.")
      .def_static("load", [](const std::filesystem::path& p) { return load_detector(p); }, py::arg("path"))
      .def("save", [](const Detector& d, const std::filesystem::path& p) { save_detector(p, d); }, py::arg("path"))
      .def_property_readonly("arch", &Detector::arch_tag)
      .def_property_readonly("checksum", &Detector::checksum)
      .def_property_readonly("val_accuracy", [](const Detector& d) { return d.record.val_accuracy; })
      .def("logits", [](const Detector& d, const Array& x) { return d.logits(to_tensor(x)); }, py::arg("x"))
      .def(
          "loss_gradient",
          [](const Detector& d, const Array& x, const std::vector<int>& y) {
            return to_array(d.loss_gradient(to_tensor(x), y));
          },
          py::arg("x"), py::arg("labels"));

  py::class_<BayesEnsemble>(m, "BayesEnsemble")
      .def_static(
          "post_train",
          [](const Detector& det, const std::string& data_path, const py::object& cfg) {
            return post_train(det, LabeledDataset::load(data_path), from_dict<PostTrainConfig>(cfg));
          },
          py::arg("detector"), py::arg("data"), py::arg("config") = py::none())
      .def_static(
          "load", [](const std::filesystem::path& p, const Detector& det) { return BayesEnsemble::load(p, det); },
          py::arg("path"), py::arg("base"))
      .def("save", &BayesEnsemble::save, py::arg("path"))
      .def("__len__", &BayesEnsemble::size)
      .def_property_readonly("base_checksum", &BayesEnsemble::base_checksum)
      .def_property_readonly("sampler_manifest", [](const BayesEnsemble& e) { return json_to_py(e.sampler_manifest()); })
      .def(
          "combined_logits", [](const BayesEnsemble& e, std::size_t k, const Array& x) {
            return e.combined_logits(k, to_tensor(x));
          },
          py::arg("head"), py::arg("x"))
      .def("bma_predict", [](const BayesEnsemble& e, const Array& x) { return e.bma_predict(to_tensor(x)); },
           py::arg("x"));

  m.def(
      "attack",
      [](const std::string& method, const Detector& det, const Array& x, const std::vector<int>& y,
         const py::object& cfg, const BayesEnsemble* ensemble) {
        AttackTargets t;
        t.model = &det;
        t.bayes = ensemble;
        const Method mth = parse_method(method);
        const AttackConfig config = from_dict<AttackConfig>(cfg);
        const Tensor input = to_tensor(x);
        AttackResult r;
        {
          py::gil_scoped_release release;
          r = run_attack(mth, t, input, y, config);
        }
        return attack_dict(r);
      },
      py::arg("method"), py::arg("detector"), py::arg("x"), py::arg("labels"), py::arg("config") = py::none(),
      py::arg("ensemble") = nullptr,
      "Runs ifgsm, mifgsm, pgd, spectrum or fpba (fpba needs an ensemble over the same detector).");

  m.def(
      "image_quality",
      [](const Array& x, const Array& adv) {
        const QualityReport q = image_quality(to_tensor(x), to_tensor(adv));
        return py::dict(py::arg("mse") = q.mse, py::arg("psnr") = q.psnr, py::arg("ssim") = q.ssim);
      },
      py::arg("x"), py::arg("x_adv"));
  m.def(
      "gradient_diagnostic",
      [](const Detector& det, const Array& x, const std::vector<int>& y, std::size_t coords, double threshold,
         std::uint64_t seed) { return json_to_py(to_json(gradient_diagnostic(det, to_tensor(x), y, coords, threshold, seed), true)); },
      py::arg("detector"), py::arg("x"), py::arg("labels"), py::arg("coords_per_image") = 150,
      py::arg("threshold") = 1e-6, py::arg("seed") = 0);
  m.def(
      "spectrum_saliency",
      [](const Detector& det, const Array& x, const std::vector<int>& y) {
        const SaliencyMap s = spectrum_saliency(det, to_tensor(x), y);
        Array out({s.channels, s.height, s.width});
        std::copy(s.values.begin(), s.values.end(), out.mutable_data());
        return out;
      },
      py::arg("detector"), py::arg("x"), py::arg("labels"));

  m.def("default_attack_config", [] { return to_dict(AttackConfig{}); });
  m.def("default_post_train_config", [] { return to_dict(PostTrainConfig{}); });

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli::dispatch(args);
      },
      py::arg("args"), "Runs one CLI subcommand in-process and returns its exit code.");
}
