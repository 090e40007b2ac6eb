// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "contamlab/experiments.hpp"

namespace contamlab {

// Column orders are part of schema version 1 and never change within it.
inline constexpr int kCsvSchemaVersion = 1;
inline const std::vector<std::string> kMetricsColumns = {
    "iteration",     "id_risk",     "ood_risk",    "id_error", "ood_error",       "mean_core_corr",
    "mean_bg_corr",  "members_pos", "members_neg", "act_gap",  "mean_selectivity"};
inline const std::vector<std::string> kNeuronColumns = {"neuron",   "output_sign", "core_corr",
                                                        "bg_corr",  "rate_pos",    "rate_neg",
                                                        "be_pos",   "be_neg",      "residual_norm"};
inline const std::vector<std::string> kTraceColumns = {"iteration", "neuron", "corr_pos", "corr_neg"};

/// Nine significant digits, "nan"/"inf" for non-finite values.
std::string format_real(double v);

std::string csv_header(const std::vector<std::string>& columns);
std::string metrics_row(const MetricRecord& r);
std::string trace_row(const TraceRow& r);
std::string neuron_row(const NeuronSummary& n, const ActivationStats& st, double residual_norm);

nlohmann::json config_to_json(const ExperimentConfig& c);
/// Strict parse: every key must be known and correctly typed. Missing keys
/// keep their defaults. Throws ConfigError naming the offending key path.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Applies dotted-key overrides such as {"train.eta", "0.01"}.
void apply_overrides(ExperimentConfig& c, const std::map<std::string, std::string>& overrides);
/// Loads a preset by name or a JSON file by path, applies overrides and resolves.
ExperimentConfig load_config(const std::string& preset_or_path, const std::map<std::string, std::string>& overrides);

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json report_to_json(const VerificationReport& r);

/// Writes manifest.json, metrics.csv, neurons_final.csv and traces.csv under
/// `dir`. Re-emitting the same inputs produces identical bytes.
void emit(const MetricSeries& series, const RunManifest& manifest, const std::filesystem::path& dir);

/// Incremental writer used during a run: headers up front, one flushed line
/// per record, final tables and manifest at the end.
class CsvRunSink : public RunSink {
 public:
  explicit CsvRunSink(std::filesystem::path dir);
  void begin(const RunManifest& manifest) override;
  void record(const MetricRecord& record, const std::vector<TraceRow>& traces) override;
  void finish(const RunResult& result) override;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::ofstream metrics_;
  std::ofstream traces_;
};

/// Reads a run directory back into one JSON document.
nlohmann::json export_run(const std::filesystem::path& dir);

/// Output root: $CONTAMLAB_OUT if set, else "runs".
std::filesystem::path default_output_root();

/// Command-line entry point. Returns 0 on success, 1 on validation errors and
/// 2 on runtime aborts.
int cli_main(int argc, char** argv);

}  // namespace contamlab
