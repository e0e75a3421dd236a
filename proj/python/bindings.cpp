// Python bindings: configs travel as JSON text, results come back as JSON or plain lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "protofed/commands.hpp"
#include "protofed/errors.hpp"
#include "protofed/metrics.hpp"

namespace py = pybind11;
using namespace protofed;

namespace {

ExperimentConfig config_from(const std::string& json_text, const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg = parse_config(json_text.empty() ? "{}" : json_text);
  return apply_overrides(cfg, {overrides.begin(), overrides.end()});
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multimodal federated prototype learning simulator";

  static py::exception<Error> base(m, "ProtofedError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(base, (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.def("config_keys", &config_keys);
  m.def(
      "resolve_config",
      [](const std::string& json_text, const std::map<std::string, std::string>& overrides) {
        return config_to_json(config_from(json_text, overrides));
      },
      py::arg("json_text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Validated config JSON with defaults filled in.");
  m.def(
      "run",
      [](const std::string& json_text, const std::map<std::string, std::string>& overrides) {
        const ExperimentConfig cfg = config_from(json_text, overrides);
        py::gil_scoped_release release;
        return cmd_run(cfg);
      },
      py::arg("json_text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
      "Runs every seed; returns the output directory.");
  m.def(
      "gen_data",
      [](const std::string& json_text, const std::string& out_dir) {
        return cmd_gen_data(config_from(json_text, {}), out_dir);
      },
      py::arg("json_text"), py::arg("out_dir"), "Writes the synthetic dataset; returns the manifest path.");
  m.def(
      "sweep",
      [](const std::string& json_text, const std::string& axis, std::vector<std::string> values) {
        const ExperimentConfig cfg = config_from(json_text, {});
        py::gil_scoped_release release;
        return cmd_sweep(cfg, axis, std::move(values));
      },
      py::arg("json_text"), py::arg("axis"), py::arg("values") = std::vector<std::string>{});
  m.def("payload_sizes", [](const std::string& json_text) { return payload_sizes(config_from(json_text, {})); },
        py::arg("json_text") = "");

  m.def("macro_f1", [](std::vector<int> pred, std::vector<int> y, std::size_t K) { return macro_f1(pred, y, K); });
  m.def("uar", [](std::vector<int> pred, std::vector<int> y, std::size_t K) { return uar(pred, y, K); });
  m.def("auc_binary", [](std::vector<double> scores, std::vector<int> y) { return auc_binary(scores, y); });

  m.def(
      "assign_missing_modalities",
      [](std::size_t clients, std::size_t modalities, double q, std::uint64_t seed) {
        Rng rng = stream(seed, Purpose::Missingness);
        return assign_missing_modalities(clients, modalities, q, rng);
      },
      py::arg("clients"), py::arg("modalities"), py::arg("q"), py::arg("seed") = 0);
  m.def(
      "dirichlet_partition",
      [](std::vector<int> labels, std::size_t clients, double beta, std::uint64_t seed, std::size_t min_samples) {
        Rng rng = stream(seed, Purpose::Partition);
        return dirichlet_partition(labels, clients, beta, rng, min_samples);
      },
      py::arg("labels"), py::arg("clients"), py::arg("beta"), py::arg("seed") = 0, py::arg("min_samples") = 1);
}
