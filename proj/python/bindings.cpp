#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tabsynth/harness.hpp"

namespace py = pybind11;
using namespace tabsynth;

namespace {

nlohmann::json parse(const std::string& s) {
    try {
        return nlohmann::json::parse(s);
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("invalid JSON: ") + e.what());
    }
}

}  // namespace

PYBIND11_MODULE(_tabsynth, m) {
    m.doc() = "Native core of the tabsynth tabular synthesizer";

    py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    py::class_<Schema>(m, "Schema")
        .def_static("load", &Schema::load, py::arg("path"))
        .def_static("from_json", [](const std::string& s) { return Schema::from_json(parse(s)); })
        .def("to_json", [](const Schema& s) { return s.to_json().dump(); })
        .def_property_readonly("names",
                               [](const Schema& s) {
                                   std::vector<std::string> out;
                                   for (const auto& c : s.columns()) out.push_back(c.name);
                                   return out;
                               })
        .def("__len__", &Schema::size);

    py::class_<Table>(m, "Table")
        .def_property_readonly("schema", &Table::schema)
        .def_property_readonly("rows", &Table::rows)
        .def_property_readonly("numerical", [](const Table& t) { return Matrix(t.numerical()); })
        .def_property_readonly("categorical", [](const Table& t) { return IndexMatrix(t.categorical()); })
        .def("column", [](const Table& t, std::size_t i) { return Vector(t.column_values(i)); })
        .def("__len__", &Table::rows);

    m.def("load_csv", py::overload_cast<const std::filesystem::path&, const std::filesystem::path&>(&load_csv),
          py::arg("path"), py::arg("schema"));
    m.def("write_csv", py::overload_cast<const std::filesystem::path&, const Table&>(&write_csv), py::arg("path"),
          py::arg("table"));
    m.def("toy_dataset", [](std::size_t n, std::uint64_t seed) { return toy_dataset(default_toy_spec(), n, seed); },
          py::arg("n"), py::arg("seed") = 0);
    m.def("split", &split, py::arg("table"), py::arg("test_fraction"), py::arg("seed") = 0);
    m.def("subsample", &subsample, py::arg("table"), py::arg("n"), py::arg("seed") = 0);

    py::class_<SynthModel>(m, "SynthModel")
        .def_property_readonly("config", [](const SynthModel& s) { return s.config.to_json().dump(); })
        .def_property_readonly("diagnostics", [](const SynthModel& s) { return s.diagnostics; })
        .def_property_readonly("loss_trace",
                               [](const SynthModel& s) {
                                   std::vector<std::map<std::string, double>> out;
                                   for (const auto& l : s.trace)
                                       out.push_back({{"critic", l.critic},
                                                      {"wasserstein", l.wasserstein},
                                                      {"penalty", l.penalty},
                                                      {"adversarial", l.adversarial},
                                                      {"cond", l.cond},
                                                      {"marg", l.marg}});
                                   return out;
                               })
        .def("save", [](const SynthModel& s, const std::filesystem::path& p) { save(s, p); });

    m.def(
        "fit",
        [](const Table& t, const std::string& config) {
            auto cfg = TrainConfig::from_json(parse(config));
            py::gil_scoped_release release;
            return train(t, cfg);
        },
        py::arg("table"), py::arg("config_json"));
    m.def("load_model", [](const std::filesystem::path& p) { return load(p); }, py::arg("path"));
    m.def(
        "sample",
        [](const SynthModel& model, std::size_t n, std::uint64_t seed) {
            Rng rng(seed);
            py::gil_scoped_release release;
            return sample(model, n, rng);
        },
        py::arg("model"), py::arg("n"), py::arg("seed") = 0);

    m.def(
        "evaluate",
        [](const Table& train_t, const Table& test_t, const Table& synth, const std::vector<std::string>& metrics,
           std::uint64_t seed) {
            EvalOptions opt;
            opt.metrics.insert(metrics.begin(), metrics.end());
            opt.seed = seed;
            py::gil_scoped_release release;
            return evaluate(train_t, test_t, synth, opt).to_json().dump();
        },
        py::arg("train"), py::arg("test"), py::arg("synth"), py::arg("metrics") = std::vector<std::string>{},
        py::arg("seed") = 0);
    m.def("all_metrics", &all_metrics);
    m.def("relative_error", &relative_error, py::arg("score"), py::arg("reference"));

    m.def(
        "run_sweep",
        [](const std::string& spec_json) {
            auto spec = SweepSpec::from_json(parse(spec_json));
            py::gil_scoped_release release;
            auto outcome = run_sweep(spec);
            return std::map<std::string, std::size_t>{{"cells", outcome.cells.size()},
                                                      {"trained", outcome.trained},
                                                      {"evaluated", outcome.evaluated},
                                                      {"reused", outcome.reused},
                                                      {"failed", outcome.failed}};
        },
        py::arg("spec_json"));
    m.def(
        "write_report",
        [](const std::filesystem::path& cells, const std::string& format, const std::filesystem::path& out) {
            auto written = write_report(load_cells(cells), parse_report_format(format), out);
            std::vector<std::string> names;
            for (const auto& p : written) names.push_back(p.generic_string());
            return names;
        },
        py::arg("cells"), py::arg("format"), py::arg("out"));
}
