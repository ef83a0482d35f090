// Python access to volumes, phantoms, morphology, metrics, training
// hyper-parameters, checkpoints and the cascade. Volumes cross the boundary
// as float32 arrays indexed [z, y, x].

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "lsseg/cascade.hpp"
#include "lsseg/cli.hpp"
#include "lsseg/config.hpp"
#include "lsseg/metrics.hpp"
#include "lsseg/morpho.hpp"
#include "lsseg/trainer.hpp"

namespace py = pybind11;
using namespace lsseg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Volume& v) {
    const Dims3 d = v.dims();
    py::array_t<float> a({d.z, d.y, d.x});
    std::copy(v.data().begin(), v.data().end(), a.mutable_data());
    return a;
}

Volume from_numpy(FloatArray a, std::tuple<double, double, double> spacing, VolumeKind kind, ScalarType dtype) {
    if (a.ndim() != 3) throw ShapeError("expected a 3-d array indexed [z, y, x]");
    const Dims3 d{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))};
    std::vector<float> data(a.data(), a.data() + a.size());
    auto [sx, sy, sz] = spacing;
    return Volume(d, {sx, sy, sz}, kind, dtype, std::move(data));
}

std::tuple<double, double, double> spacing_tuple(const Spacing3& s) { return {s.x, s.y, s.z}; }
std::tuple<int, int, int> dims_tuple(const Dims3& d) { return {d.x, d.y, d.z}; }

py::dict report_dict(const CaseReport& r) {
    py::dict d;
    d["dice"] = r.dice;
    d["voe"] = r.voe;
    d["rvd"] = r.rvd;
    d["assd_mm"] = r.assd_mm;
    d["mssd_mm"] = r.mssd_mm;
    return d;
}

}  // namespace

PYBIND11_MODULE(_lsseg, m) {
    m.doc() = "Cascaded liver and lesion segmentation core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<UsageError>(m, "UsageError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
    py::register_exception<PipelineError>(m, "PipelineError", base.ptr());
    py::register_exception<IoError>(m, "IoError", base.ptr());

    py::enum_<VolumeKind>(m, "VolumeKind").value("INTENSITY", VolumeKind::Intensity).value("LABELS", VolumeKind::Labels);
    py::enum_<ScalarType>(m, "ScalarType")
        .value("I16", ScalarType::I16)
        .value("F32", ScalarType::F32)
        .value("U8", ScalarType::U8);

    py::class_<Volume>(m, "Volume")
        .def(py::init(&from_numpy), py::arg("array"), py::arg("spacing") = std::make_tuple(1.0, 1.0, 1.0),
             py::arg("kind") = VolumeKind::Intensity, py::arg("dtype") = ScalarType::F32)
        .def_property_readonly("dims", [](const Volume& v) { return dims_tuple(v.dims()); }, "(x, y, z)")
        .def_property_readonly("spacing", [](const Volume& v) { return spacing_tuple(v.spacing()); }, "(x, y, z) in mm")
        .def_property_readonly("kind", &Volume::kind)
        .def_property_readonly("dtype", &Volume::dtype)
        .def("to_numpy", &to_numpy, "Copy of the voxels as float32 [z, y, x]")
        .def("__eq__", [](const Volume& a, const Volume& b) { return a == b; });

    m.def("load_volume", &load_volume, py::arg("path"), py::arg("kind") = VolumeKind::Intensity);
    m.def("save_mvol", &save_mvol, py::arg("volume"), py::arg("path"));
    m.def("clip_hu", &clip_hu);
    m.def("normalize_hu", &normalize_hu);
    m.def(
        "resample",
        [](const Volume& v, std::tuple<double, double, double> s) {
            auto [x, y, z] = s;
            return resample_trilinear(v, {x, y, z});
        },
        py::arg("volume"), py::arg("spacing"));

    m.def(
        "generate_phantom",
        [](std::uint64_t seed, const std::string& config_text) {
            const PhantomConfig cfg = parse_run_config(config_text).phantom;
            Phantom p = generate_phantom(seed, cfg);
            return py::make_tuple(std::move(p.image), std::move(p.labels));
        },
        py::arg("seed"), py::arg("config") = "", "Returns (image, labels); `config` holds phantom.* lines");

    m.def(
        "connected_components",
        [](const Volume& mask, int connectivity) {
            const ComponentMap cm = connected_components_3d(mask, connectivity);
            Volume out(cm.dims, cm.spacing, VolumeKind::Intensity, ScalarType::F32);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(cm.labels[i]);
            return py::make_tuple(to_numpy(out), cm.sizes);
        },
        py::arg("mask"), py::arg("connectivity") = 26,
        "Returns (labels [z, y, x], sizes) with components numbered in scan order from 1");
    m.def("largest_component", [](const Volume& mask, int connectivity) { return largest_component(connected_components_3d(mask, connectivity)); },
          py::arg("mask"), py::arg("connectivity") = 26);

    m.def("dice", &dice);
    m.def("voe", &voe);
    m.def("rvd", &rvd);
    m.def(
        "evaluate_case",
        [](const Volume& pred, const Volume& ref, bool undefined_as_nan) {
            return report_dict(evaluate_case(pred, ref, ref.spacing(), undefined_as_nan));
        },
        py::arg("pred"), py::arg("ref"), py::arg("undefined_as_nan") = false);

    m.def(
        "lr_at_epoch",
        [](int epoch, double lr0, double gamma, int epochs) {
            TrainConfig cfg;
            cfg.lr0 = lr0;
            cfg.lr_gamma = gamma;
            cfg.epochs = epochs;
            return lr_at_epoch(cfg, epoch);
        },
        py::arg("epoch"), py::arg("lr0") = 0.001, py::arg("gamma") = 0.9, py::arg("epochs") = 50);

    m.def(
        "weighted_ce_loss",
        [](FloatArray logits, py::array_t<int, py::array::c_style | py::array::forcecast> labels,
           std::vector<double> weights) {
            if (logits.ndim() != 4 || labels.ndim() != 3) throw ShapeError("logits must be (n, c, h, w), labels (n, h, w)");
            Tensor<double> t({static_cast<int>(logits.shape(0)), static_cast<int>(logits.shape(1)),
                              static_cast<int>(logits.shape(2)), static_cast<int>(logits.shape(3))});
            std::copy(logits.data(), logits.data() + logits.size(), t.data().begin());
            LabelMap lm(static_cast<int>(labels.shape(0)), static_cast<int>(labels.shape(1)),
                        static_cast<int>(labels.shape(2)));
            std::copy(labels.data(), labels.data() + labels.size(), lm.labels.begin());
            return ops::weighted_ce_loss(ops::softmax_channels(t), lm, ClassWeights(std::move(weights))).loss;
        },
        py::arg("logits"), py::arg("labels"), py::arg("weights") = std::vector<double>{0.2, 1.2, 2.2});

    m.def(
        "weighted_layer_count",
        [](const std::string& config_text) { return weighted_layer_count(parse_run_config(config_text).net); },
        py::arg("config") = "");

    m.def("format_run_config", [](const std::string& text) { return format_run_config(parse_run_config(text)); },
          py::arg("config") = "", "Parses config text and returns every key with its effective value");

    m.def(
        "run_cascade",
        [](const std::filesystem::path& liver_ckpt, const std::filesystem::path& lesion_ckpt, const Volume& raw,
           const std::string& config_text) {
            const RunConfig cfg = parse_run_config(config_text);
            const auto a = load_checkpoint<float>(liver_ckpt);
            const auto b = load_checkpoint<float>(lesion_ckpt);
            CascadeResult r;
            {
                py::gil_scoped_release release;
                r = run_cascade(a, b, raw, cfg.cascade);
            }
            return py::make_tuple(std::move(r.liver), std::move(r.lesion), r.probs.channel(kLesion));
        },
        py::arg("liver_ckpt"), py::arg("lesion_ckpt"), py::arg("volume"), py::arg("config") = "",
        "Returns (liver mask, lesion mask, lesion probability) on the input grid");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs an lsseg command; returns (exit code, stdout, stderr)");
}
