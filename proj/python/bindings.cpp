// SPDX-License-Identifier: Apache-2.0
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>

#include "contamlab/cli_io.hpp"
#include "contamlab/experiments.hpp"

namespace py = pybind11;
using namespace contamlab;

namespace {

// Structured values cross the boundary as JSON text; the Python package decodes them.
std::string resolve_json(const std::string& config_json) {
  ExperimentConfig c = config_from_json(nlohmann::json::parse(config_json));
  c.resolve();
  return config_to_json(c).dump();
}

nlohmann::json record_json(const MetricRecord& r) {
  return {{"iteration", r.iteration},
          {"id_risk", r.risk.id_risk},
          {"ood_risk", r.risk.ood_risk},
          {"id_error", r.risk.id_error},
          {"ood_error", r.risk.ood_error},
          {"mean_core_corr", r.mean_core_corr},
          {"mean_bg_corr", r.mean_bg_corr},
          {"members_pos", r.members_pos},
          {"members_neg", r.members_neg},
          {"act_gap", r.act_gap},
          {"mean_selectivity", r.mean_selectivity},
          {"mean_abs_bg_corr", r.mean_abs_bg_corr},
          {"max_abs_bg_projection", r.max_abs_bg_projection},
          {"asymmetric_fraction", r.asymmetric_fraction}};
}

py::tuple run(const std::string& config_json, const std::string& out_dir) {
  ExperimentConfig c = config_from_json(nlohmann::json::parse(config_json));
  c.resolve();
  RunResult r;
  {
    py::gil_scoped_release release;
    if (out_dir.empty()) {
      r = run_experiment(c);
    } else {
      CsvRunSink sink(std::filesystem::path(out_dir) / c.run_id());
      r = run_experiment(c, &sink);
    }
  }
  nlohmann::json records = nlohmann::json::array();
  for (const auto& rec : r.series.records) records.push_back(record_json(rec));
  const nlohmann::json doc = {{"manifest", manifest_to_json(r.manifest)}, {"records", records}};
  const ProjectionMatrix proj = projections(r.final_net, r.dict);
  return py::make_tuple(doc.dump(), proj.P, r.final_net.hidden, r.final_net.output);
}

std::string verify(const std::string& config_json) {
  ExperimentConfig c = config_from_json(nlohmann::json::parse(config_json));
  c.resolve();
  VerificationReport report;
  {
    py::gil_scoped_release release;
    report = verify_suite(c);
  }
  return report_to_json(report).dump();
}

DataModel linear_model(int d, int n_core, int n_bg, std::uint64_t seed) {
  DataModel data;
  data.dict = build_dictionary(d, n_core, n_bg, seed);
  data.dist = default_distribution(data.dict);
  return data;
}

Regime regime_from(const std::string& s) {
  if (s == "id") return Regime::ID;
  if (s == "ood") return Regime::OOD;
  throw ConfigError("regime: expected 'id' or 'ood'");
}

py::tuple sample(int d, int n_core, int n_bg, std::uint64_t dict_seed, const std::string& regime, int n,
                 std::uint64_t seed) {
  const DataModel data = linear_model(d, n_core, n_bg, dict_seed);
  Rng rng(seed);
  const Batch b = data.sample(regime_from(regime), n, rng);
  return py::make_tuple(b.x, b.y, b.z);
}

TwoLayerNet fixed_net(const Eigen::MatrixXd& w, const Eigen::VectorXd& a, const std::string& activation) {
  TwoLayerNet net;
  net.activation = activation_from_string(activation);
  net.hidden = w;
  net.output = a.transpose();
  net.validate();
  return net;
}

}  // namespace

PYBIND11_MODULE(_contamlab, m) {
  m.doc() = "Feature contamination lab: data model, two-layer networks and experiment runner";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.attr("__version__") = CONTAMLAB_VERSION;
  m.attr("csv_schema_version") = kCsvSchemaVersion;
  m.attr("metrics_columns") = kMetricsColumns;
  m.attr("neuron_columns") = kNeuronColumns;
  m.attr("trace_columns") = kTraceColumns;

  m.def("presets", [] {
    std::vector<std::string> names;
    for (const auto& p : builtin_presets()) names.push_back(p.name);
    return names;
  });
  m.def(
      "load_config_json",
      [](const std::string& preset_or_path, const std::map<std::string, std::string>& overrides) {
        return config_to_json(load_config(preset_or_path, overrides)).dump();
      },
      py::arg("preset_or_path"), py::arg("overrides") = std::map<std::string, std::string>{});
  m.def("resolve_json", &resolve_json);
  m.def("run_json", &run, py::arg("config_json"), py::arg("out_dir") = "");
  m.def("verify_json", &verify);
  m.def("export_run_json", [](const std::string& dir) { return export_run(dir).dump(); });

  m.def(
      "build_dictionary",
      [](int d, int n_core, int n_bg, std::uint64_t seed) { return build_dictionary(d, n_core, n_bg, seed).columns; },
      py::arg("d"), py::arg("n_core"), py::arg("n_bg"), py::arg("seed"));
  m.def("sample", &sample, py::arg("d"), py::arg("n_core"), py::arg("n_bg"), py::arg("dict_seed"),
        py::arg("regime"), py::arg("n"), py::arg("seed"));
  m.def(
      "init_classification_net",
      [](int d, int width, std::uint64_t seed, const std::string& activation) {
        const TwoLayerNet net = init_classification_net(d, width, seed, activation_from_string(activation));
        return py::make_tuple(net.hidden, Eigen::VectorXd(net.output.row(0).transpose()));
      },
      py::arg("d"), py::arg("m"), py::arg("seed"), py::arg("activation") = "relu");
  m.def(
      "forward",
      [](const Eigen::MatrixXd& w, const Eigen::VectorXd& a, const Eigen::MatrixXd& x, const std::string& act) {
        return Eigen::VectorXd(forward_batch(fixed_net(w, a, act), x).col(0));
      },
      py::arg("w"), py::arg("a"), py::arg("x"), py::arg("activation") = "relu");
  m.def(
      "hinge_gradient",
      [](const Eigen::MatrixXd& w, const Eigen::VectorXd& a, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
         const std::string& act) { return grad_hinge_fixed_output(fixed_net(w, a, act), x, y); },
      py::arg("w"), py::arg("a"), py::arg("x"), py::arg("y"), py::arg("activation") = "relu");
  m.def(
      "sgd_update",
      [](Eigen::MatrixXd param, const Eigen::MatrixXd& grad, double eta, double lambda) {
        sgd_update(param, grad, eta, lambda);
        return param;
      },
      py::arg("param"), py::arg("grad"), py::arg("eta"), py::arg("lambda_"));
  m.def(
      "berry_esseen_rate",
      [](const Eigen::VectorXd& projection_row, int n_core, int y) {
        FeatureDictionary dict;
        dict.d0 = static_cast<int>(projection_row.size());
        dict.n_core = n_core;
        const FeatureDistribution dist = default_distribution(dict);
        return berry_esseen_rate({projection_row.data(), static_cast<size_t>(projection_row.size())}, dist, y).rate;
      },
      py::arg("projection_row"), py::arg("n_core"), py::arg("y"));
}
