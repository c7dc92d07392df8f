#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "douap/attack.hpp"
#include "douap/config.hpp"
#include "douap/dataset_io.hpp"
#include "douap/error.hpp"
#include "douap/eval.hpp"
#include "douap/toyvlp.hpp"
#include "douap/uap_io.hpp"

namespace py = pybind11;
using namespace douap;

namespace {

py::array_t<double> image_array(const Image& im) {
  py::array_t<double> out({kImageH, kImageW, kImageC});
  std::copy(im.begin(), im.end(), out.mutable_data());
  return out;
}

Image image_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.size() != static_cast<py::ssize_t>(kImageSize)) {
    throw Error(ErrorCode::kShapeMismatch, "image", "expected 16x16x3 values");
  }
  Image im;
  std::copy(a.data(), a.data() + kImageSize, im.begin());
  return im;
}

py::array_t<double> tensor_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::object json_to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_douap, m) {
  m.doc() = "Universal image + token perturbations against a toy dual encoder";

  py::register_exception<Error>(m, "DouapError", PyExc_RuntimeError);

  py::class_<PairSample>(m, "PairSample")
      .def_property_readonly("image", [](const PairSample& s) { return image_array(s.image); })
      .def_property_readonly("tokens", [](const PairSample& s) { return std::vector<int>(s.tokens.begin(), s.tokens.end()); })
      .def_property_readonly("key", [](const PairSample& s) { return s.key.str(); });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("seed", &Dataset::seed)
      .def_readonly("train", &Dataset::train)
      .def_readonly("test", &Dataset::test)
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(d, p); })
      .def("to_bytes", [](const Dataset& d) { return py::bytes(serialize_dataset(d)); });

  m.def("generate_dataset", &generate_dataset, py::arg("seed") = 42, py::arg("n_train") = 2048,
        py::arg("n_test") = kTestPoolSize);
  m.def("load_dataset", &load_dataset, py::arg("path"));

  py::class_<DualEncoderParams>(m, "Model")
      .def_static("init", &DualEncoderParams::init, py::arg("seed"))
      .def("checksum", &DualEncoderParams::checksum)
      .def("save", [](const DualEncoderParams& p, const std::filesystem::path& path) { save_checkpoint(p, path); })
      .def("to_bytes", [](const DualEncoderParams& p) { return py::bytes(serialize_checkpoint(p)); })
      .def("encode_images",
           [](const DualEncoderParams& p, const std::vector<py::array_t<double, py::array::c_style | py::array::forcecast>>& ims) {
             std::vector<Image> images;
             for (const auto& a : ims) images.push_back(image_from(a));
             return tensor_array(encode_images(p, images));
           })
      .def("encode_texts", [](const DualEncoderParams& p, const std::vector<std::vector<int>>& toks) {
        std::vector<TokenSeq> seqs;
        for (const auto& t : toks) {
          if (t.size() != kSeqLen) throw Error(ErrorCode::kShapeMismatch, "encode_texts", "expected 8 tokens");
          TokenSeq s;
          std::copy(t.begin(), t.end(), s.begin());
          seqs.push_back(s);
        }
        return tensor_array(encode_texts(p, seqs));
      })
      .def("__eq__", &DualEncoderParams::operator==);
  m.def("load_model", &load_checkpoint, py::arg("path"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lr", &TrainConfig::lr)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("batch", &TrainConfig::batch)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("seed", &TrainConfig::seed);

  m.def(
      "train",
      [](const Dataset& data, const TrainConfig& cfg, std::optional<DualEncoderParams> init) {
        TrainResult r = train(init ? *init : DualEncoderParams::init(cfg.seed), data.train, cfg);
        return py::make_tuple(r.params, r.epoch_loss);
      },
      py::arg("data"), py::arg("config") = TrainConfig{}, py::arg("init") = std::nullopt,
      "Returns (model, per-epoch loss).");

  py::class_<AttackConfig>(m, "AttackConfig")
      .def(py::init<>())
      .def_readwrite("eps_v", &AttackConfig::eps_v)
      .def_readwrite("alpha", &AttackConfig::alpha)
      .def_readwrite("beta", &AttackConfig::beta)
      .def_readwrite("epochs", &AttackConfig::epochs)
      .def_readwrite("batch", &AttackConfig::batch)
      .def_readwrite("seed", &AttackConfig::seed)
      .def_readwrite("text_step_scale", &AttackConfig::text_step_scale)
      .def_readwrite("generator_lr", &AttackConfig::generator_lr)
      .def_readwrite("record_wallclock", &AttackConfig::record_wallclock)
      .def_property(
          "aug", [](const AttackConfig& c) { return std::string(to_string(c.aug.kind)); },
          [](AttackConfig& c, const std::string& kind) {
            const AugSpec defaults = AttackConfig{}.aug;
            c.aug = AugSpec::of(parse_aug_kind(kind));
            c.aug.brightness_lo = defaults.brightness_lo;
            c.aug.brightness_hi = defaults.brightness_hi;
          })
      .def("validate", &AttackConfig::validate);

  py::class_<UapArtifact>(m, "Uap")
      .def_readonly("method", &UapArtifact::method)
      .def_readonly("config", &UapArtifact::config)
      .def_readonly("iterations", &UapArtifact::iterations)
      .def_readonly("wallclock_seconds", &UapArtifact::wallclock_seconds)
      .def_readonly("seconds_per_iteration", &UapArtifact::seconds_per_iteration)
      .def_property_readonly("delta_v", [](const UapArtifact& a) { return image_array(a.uap.delta_v); })
      .def_property_readonly("delta_t_embed", [](const UapArtifact& a) { return a.uap.delta_t_embed; })
      .def_property_readonly("token", [](const UapArtifact& a) { return a.uap.delta_t_token; })
      .def_property_readonly("linf", [](const UapArtifact& a) { return a.uap.linf(); })
      .def("save", [](const UapArtifact& a, const std::filesystem::path& p) { save_uap(a, p); })
      .def("to_json", [](const UapArtifact& a) { return serialize_uap(a); });
  m.def("load_uap", &load_uap, py::arg("path"));
  m.def("zero_uap", [] {
    UapArtifact a;
    a.uap = Uap::zero();
    return a;
  });

  m.def(
      "attack",
      [](const DualEncoderParams& p, const Dataset& data, const AttackConfig& cfg, const std::string& method) {
        if (method == "do-uap") return to_artifact(do_uap(p, data.train, cfg));
        if (method == "generator") return to_artifact(generator_baseline(p, data.train, cfg));
        throw Error(ErrorCode::kInvalidArgument, "attack", "method must be do-uap or generator");
      },
      py::arg("model"), py::arg("data"), py::arg("config") = AttackConfig{}, py::arg("method") = "do-uap",
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "recall_at_k",
      [](const DualEncoderParams& p, const std::vector<PairSample>& samples, std::size_t k,
         const UapArtifact* uap) {
        const RecallRates r = recall_at_k(p, samples, uap ? &uap->uap : nullptr, k);
        return py::make_tuple(r.tr, r.ir);
      },
      py::arg("model"), py::arg("samples"), py::arg("k") = 1, py::arg("uap") = nullptr, "Returns (TR, IR).");
  m.def(
      "asr_at_k",
      [](const DualEncoderParams& p, const std::vector<PairSample>& samples, const UapArtifact& uap, std::size_t k) {
        const AsrResult a = asr_at_k(p, samples, uap.uap, k);
        return py::make_tuple(a.tr, a.ir);
      },
      py::arg("model"), py::arg("samples"), py::arg("uap"), py::arg("k") = 1,
      "Returns (TR, IR); None where no query was correct before the attack.");
  m.def(
      "pair_similarity",
      [](const DualEncoderParams& p, const std::vector<PairSample>& samples, const std::string& aug,
         std::uint64_t seed) {
        AugSpec spec = AugSpec::of(parse_aug_kind(aug));
        if (spec.kind == AugKind::kBrightness) spec = AttackConfig{}.aug;
        return pair_similarity_probe(p, samples, spec, seed);
      },
      py::arg("model"), py::arg("samples"), py::arg("aug") = "none", py::arg("seed") = 0);
  m.def(
      "evaluate",
      [](const DualEncoderParams& p, const Dataset& data, const UapArtifact& uap, std::uint64_t probe_seed) {
        return json_to_py(report_to_json(evaluate(p, data, uap, EvalConfig{probe_seed})));
      },
      py::arg("model"), py::arg("data"), py::arg("uap"), py::arg("probe_seed") = 0);
}
