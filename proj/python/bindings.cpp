#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "subbench/bench.hpp"
#include "subbench/classify.hpp"
#include "subbench/container.hpp"
#include "subbench/error.hpp"
#include "subbench/features.hpp"
#include "subbench/gan.hpp"
#include "subbench/pipeline.hpp"
#include "subbench/png_io.hpp"
#include "subbench/preprocess.hpp"
#include "subbench/triage.hpp"

namespace py = pybind11;
using namespace subbench;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (H, W) or (H, W, C) unit-range array.
PixelGrid to_grid(const FloatArray& a) {
    if (a.ndim() != 2 && a.ndim() != 3) throw DataError("expected an (H, W) or (H, W, C) array");
    const int h = static_cast<int>(a.shape(0));
    const int w = static_cast<int>(a.shape(1));
    const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
    std::vector<float> values(a.data(), a.data() + a.size());
    return PixelGrid(h, w, c, Range::Unit, std::move(values));
}

FloatArray from_grid(const PixelGrid& g) {
    std::vector<py::ssize_t> shape{g.height(), g.width()};
    if (g.channels() > 1) shape.push_back(g.channels());
    FloatArray out(shape);
    std::copy(g.values().begin(), g.values().end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Synthetic-for-real substitution benchmark";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<LeakageError>(m, "LeakageError", PyExc_RuntimeError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);

    m.def("accuracy", &accuracy, py::arg("predictions"), py::arg("truth"));
    m.def("round_half_even", &round_half_even, py::arg("value"), py::arg("decimals"));
    m.def("relative_drop", &relative_drop, py::arg("acc_real"), py::arg("acc_synth"),
          "100 * (acc_real - acc_synth) / acc_real, rounded half-even to 2 decimals.");

    m.def("nearest_rank_percentile", &nearest_rank_percentile, py::arg("values"), py::arg("pct"));
    m.def("resize", [](const FloatArray& img, int h, int w) { return from_grid(resize(to_grid(img), h, w)); },
          py::arg("image"), py::arg("height"), py::arg("width"));

    m.def(
        "lbp_histogram",
        [](const FloatArray& img, int radius, int points) {
            LbpConfig cfg{radius, points};
            return lbp_histogram(to_grid(img), cfg);
        },
        py::arg("image"), py::arg("radius") = 2, py::arg("points") = 8);
    m.def(
        "combined_descriptor",
        [](const FloatArray& img, const std::vector<int>& radii, int points) {
            return combined_descriptor(to_grid(img), radii, points);
        },
        py::arg("image"), py::arg("radii") = std::vector<int>{2, 3, 4}, py::arg("points") = 8);

    m.def(
        "average_hash", [](const FloatArray& img, int h) { return average_hash(to_grid(img), h).to_hex(); },
        py::arg("image"), py::arg("hash_size") = 16, "Average hash as a hex string, first bit most significant.");
    m.def(
        "hamming",
        [](const std::string& a, const std::string& b) {
            return hamming(HashSignature::from_hex(a), HashSignature::from_hex(b));
        },
        py::arg("a"), py::arg("b"));

    m.def(
        "kfold_partition",
        [](std::size_t n, int k, std::uint64_t seed, std::optional<std::vector<int>> labels) {
            return kfold_partition(n, k, seed, labels ? &*labels : nullptr);
        },
        py::arg("n"), py::arg("k"), py::arg("seed"), py::arg("labels") = py::none());

    m.def(
        "gan_losses",
        [](const std::vector<double>& d_real, const std::vector<double>& d_fake) {
            const auto l = gan_losses(d_real, d_fake);
            return py::make_tuple(l.d_loss, l.g_loss);
        },
        py::arg("d_real"), py::arg("d_fake"), "Returns (d_loss, g_loss).");
    m.def("fade_alpha", &fade_alpha, py::arg("stage_index"), py::arg("step"), py::arg("steps_in_stage"),
          py::arg("fade_fraction") = 0.5);
    m.def(
        "progressive_resolutions",
        [](int base, int image_size) {
            GanConfig c;
            c.arch = GanArch::Pggan;
            c.pggan_base = base;
            c.image_size = image_size;
            std::vector<int> out;
            for (const auto& s : progressive_schedule(c)) out.push_back(s.resolution);
            return out;
        },
        py::arg("base"), py::arg("image_size"));

    m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); }, py::arg("data"));
    m.def(
        "read_png", [](const std::string& path) { return from_grid(read_png(path).grid); }, py::arg("path"));
    m.def(
        "write_png", [](const std::string& path, const FloatArray& img, int bit_depth) {
            write_png(path, to_grid(img), bit_depth);
        },
        py::arg("path"), py::arg("image"), py::arg("bit_depth") = 8);

    m.def(
        "preset_config", [](const std::string& preset) { return preset_config(preset).to_json().dump(); },
        py::arg("preset"), "Preset experiment configuration as a JSON string.");
    m.def(
        "run_pipeline",
        [](const std::string& out_dir, std::optional<std::string> preset, std::optional<std::string> config) {
            const ExperimentConfig cfg = config ? load_experiment_config(*config, preset.value_or(""))
                                                : preset_config(preset.value_or("desk"));
            Diagnostics diag;
            Report report;
            {
                py::gil_scoped_release release;
                report = run_pipeline(cfg, out_dir, diag);
            }
            return py::make_tuple(render_report(report, ReportFormat::Markdown), diag.warnings());
        },
        py::arg("out_dir"), py::arg("preset") = py::none(), py::arg("config") = py::none(),
        "Runs every stage; returns (markdown report, warnings).");
}
