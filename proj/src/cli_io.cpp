// SPDX-License-Identifier: Apache-2.0
#include "contamlab/cli_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

namespace contamlab {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string csv_header(const std::vector<std::string>& columns) {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) out += ',';
    out += columns[i];
  }
  return out + '\n';
}

std::string metrics_row(const MetricRecord& r) {
  std::ostringstream os;
  os << r.iteration << ',' << format_real(r.risk.id_risk) << ',' << format_real(r.risk.ood_risk) << ','
     << format_real(r.risk.id_error) << ',' << format_real(r.risk.ood_error) << ',' << format_real(r.mean_core_corr)
     << ',' << format_real(r.mean_bg_corr) << ',' << r.members_pos << ',' << r.members_neg << ','
     << format_real(r.act_gap) << ',' << format_real(r.mean_selectivity) << '\n';
  return os.str();
}

std::string trace_row(const TraceRow& r) {
  std::ostringstream os;
  os << r.iteration << ',' << r.neuron << ',' << format_real(r.corr_pos) << ',' << format_real(r.corr_neg) << '\n';
  return os.str();
}

std::string neuron_row(const NeuronSummary& n, const ActivationStats& st, double residual_norm) {
  const int k = n.neuron;
  std::ostringstream os;
  os << k << ',' << n.output_sign << ',' << format_real(n.core_corr) << ',' << format_real(n.bg_corr) << ','
     << format_real(st.rate_pos(k)) << ',' << format_real(st.rate_neg(k)) << ',' << format_real(st.be_pos(k)) << ','
     << format_real(st.be_neg(k)) << ',' << format_real(residual_norm) << '\n';
  return os.str();
}

// Config <-> JSON ---------------------------------------------------------------

namespace {

json law_json(const LawConfig& l) { return {{"kind", "uniform"}, {"lo", l.lo}, {"hi", l.hi}}; }

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["scenario"] = to_string(c.scenario);
  j["activation"] = to_string(c.activation);
  j["seed"] = c.seed;
  j["engine"] = to_string(c.engine);
  j["out_dir"] = c.out_dir;
  j["dims"] = {{"d", c.dims.d}, {"n_core", c.dims.n_core}, {"n_bg", c.dims.n_bg}, {"m", c.dims.m}};
  j["id_law"] = law_json(c.id_law);
  j["ood_bg_law"] = law_json(c.ood_bg_law);
  j["nonlinear"] = {{"radius_neg", c.nonlinear.radius_neg},
                    {"radius_pos", c.nonlinear.radius_pos},
                    {"mode", c.nonlinear.mode}};
  j["train"] = {{"eta", c.train.eta},
                {"lambda", c.train.lambda},
                {"batch_size", c.train.batch_size},
                {"T", c.train.iterations},
                {"optimizer", to_string(c.train.optimizer)},
                {"loss", to_string(c.train.loss)},
                {"eval_every", c.train.eval_every},
                {"n_eval", c.train.n_eval},
                {"adamw", {{"beta1", c.train.adamw.beta1}, {"beta2", c.train.adamw.beta2}, {"eps", c.train.adamw.eps}}}};
  j["convergence"] = {{"enabled", c.convergence.enabled}, {"window", c.convergence.window}, {"tol", c.convergence.tol}};
  j["probe_count"] = c.probe_count;
  j["n_rate_per_class"] = c.n_rate_per_class;
  j["membership_c"] = c.membership_c;
  j["fault"] = {{"nan_at_iteration", c.nan_at_iteration}};
  return j;
}

namespace {

bool same_kind(const json& ref, const json& v) {
  if (ref.is_object()) return v.is_object();
  if (ref.is_string()) return v.is_string();
  if (ref.is_boolean()) return v.is_boolean();
  if (ref.is_number_integer()) {
    if (v.is_number_integer()) return true;
    return v.is_number_float() && std::floor(v.get<double>()) == v.get<double>();
  }
  if (ref.is_number()) return v.is_number();
  return false;
}

// Overlays `src` onto `dst`, rejecting keys that `dst` does not have.
void merge_strict(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError((path.empty() ? "<root>" : path) + ": expected an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError(key + ": unknown key");
    json& slot = dst[it.key()];
    if (!same_kind(slot, it.value())) throw ConfigError(key + ": type mismatch (expected " + slot.type_name() + ")");
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else if (slot.is_number_integer() && it.value().is_number_float()) {
      slot = static_cast<long long>(it.value().get<double>());
    } else {
      slot = it.value();
    }
  }
}

template <class T, class F>
T parse_enum(const json& j, const char* key, F&& from_string) {
  try {
    return from_string(j.at(key).get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

LawConfig law_from(const json& j, const std::string& key) {
  if (j.at("kind").get<std::string>() != "uniform") throw ConfigError(key + ".kind: only 'uniform' is supported");
  return {j.at("lo").get<double>(), j.at("hi").get<double>()};
}

}  // namespace

ExperimentConfig config_from_json(const json& input) {
  json full = config_to_json(ExperimentConfig{});
  merge_strict(full, input, "");

  ExperimentConfig c;
  c.name = full["name"].get<std::string>();
  c.scenario = parse_enum<ScenarioKind>(full, "scenario", scenario_from_string);
  c.activation = parse_enum<Activation>(full, "activation", activation_from_string);
  c.seed = full["seed"].get<std::uint64_t>();
  c.engine = parse_enum<Engine>(full, "engine", engine_from_string);
  c.out_dir = full["out_dir"].get<std::string>();
  const json& dims = full["dims"];
  c.dims = {dims["d"].get<int>(), dims["n_core"].get<int>(), dims["n_bg"].get<int>(), dims["m"].get<int>()};
  c.id_law = law_from(full["id_law"], "id_law");
  c.ood_bg_law = law_from(full["ood_bg_law"], "ood_bg_law");
  const json& nl = full["nonlinear"];
  c.nonlinear = {nl["radius_neg"].get<double>(), nl["radius_pos"].get<double>(), nl["mode"].get<std::string>()};
  const json& tr = full["train"];
  c.train.eta = tr["eta"].get<double>();
  c.train.lambda = tr["lambda"].get<double>();
  c.train.batch_size = tr["batch_size"].get<int>();
  c.train.iterations = tr["T"].get<long>();
  c.train.optimizer = parse_enum<OptimizerKind>(tr, "optimizer", optimizer_from_string);
  c.train.loss = parse_enum<LossKind>(tr, "loss", loss_from_string);
  c.train.eval_every = tr["eval_every"].get<long>();
  c.train.n_eval = tr["n_eval"].get<int>();
  c.train.adamw = {tr["adamw"]["beta1"].get<double>(), tr["adamw"]["beta2"].get<double>(),
                   tr["adamw"]["eps"].get<double>()};
  const json& cv = full["convergence"];
  c.convergence = {cv["enabled"].get<bool>(), cv["window"].get<int>(), cv["tol"].get<double>()};
  c.probe_count = full["probe_count"].get<int>();
  c.n_rate_per_class = full["n_rate_per_class"].get<int>();
  c.membership_c = full["membership_c"].get<double>();
  c.nan_at_iteration = full["fault"]["nan_at_iteration"].get<long>();
  return c;
}

namespace {

json parse_override_value(const json& ref, const std::string& key, const std::string& text) {
  try {
    if (ref.is_string()) return text;
    if (ref.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError(key + ": expected true or false, got '" + text + "'");
    }
    std::size_t used = 0;
    if (ref.is_number_unsigned() || ref.is_number_integer()) {
      const double v = std::stod(text, &used);
      if (used != text.size() || std::floor(v) != v) throw ConfigError(key + ": expected an integer, got '" + text + "'");
      if (ref.is_number_unsigned()) return std::stoull(text);
      return static_cast<long long>(v);
    }
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError(key + ": expected a number, got '" + text + "'");
    return v;
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(key + ": cannot parse '" + text + "'");
  }
}

}  // namespace

void apply_overrides(ExperimentConfig& c, const std::map<std::string, std::string>& overrides) {
  if (overrides.empty()) return;
  json full = config_to_json(c);
  for (const auto& [key, text] : overrides) {
    json* slot = &full;
    std::string part;
    std::istringstream parts(key);
    while (std::getline(parts, part, '.')) {
      if (!slot->is_object() || !slot->contains(part)) throw ConfigError(key + ": unknown key");
      slot = &(*slot)[part];
    }
    if (slot->is_object()) throw ConfigError(key + ": cannot override a whole section");
    *slot = parse_override_value(*slot, key, text);
  }
  c = config_from_json(full);
}

ExperimentConfig load_config(const std::string& preset_or_path, const std::map<std::string, std::string>& overrides) {
  ExperimentConfig c;
  if (auto preset = find_preset(preset_or_path)) {
    c = *preset;
  } else {
    std::ifstream in(preset_or_path);
    if (!in) throw ConfigError("config: no preset or readable file named '" + preset_or_path + "'");
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw ConfigError("config: " + preset_or_path + ": " + e.what());
    }
    c = config_from_json(j);
  }
  apply_overrides(c, overrides);
  c.resolve();
  return c;
}

// Manifest ------------------------------------------------------------------------

json manifest_to_json(const RunManifest& m) {
  json j;
  j["schema_version"] = kCsvSchemaVersion;
  j["run_id"] = m.config.run_id();
  j["config"] = config_to_json(m.config);
  j["rng"] = {{"algorithm", m.rng_algorithm}, {"seed", m.config.seed}};
  j["version"] = m.version;
  j["engine"] = m.engine;
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["stop_reason"] = to_string(m.stop_reason);
  j["iterations_run"] = m.iterations_run;
  if (m.stop_reason == StopReason::Aborted)
    j["abort"] = {{"iteration", m.abort_iteration}, {"message", m.abort_message}};
  return j;
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.config = config_from_json(j.at("config"));
  m.rng_algorithm = j.at("rng").at("algorithm").get<std::string>();
  m.version = j.at("version").get<std::string>();
  m.engine = j.at("engine").get<std::string>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.at("finished_at").get<std::string>();
  const std::string reason = j.at("stop_reason").get<std::string>();
  for (auto r : {StopReason::HorizonReached, StopReason::Converged, StopReason::Aborted})
    if (reason == to_string(r)) m.stop_reason = r;
  m.iterations_run = j.at("iterations_run").get<long>();
  if (j.contains("abort")) {
    m.abort_iteration = j["abort"].at("iteration").get<long>();
    m.abort_message = j["abort"].at("message").get<std::string>();
  }
  return m;
}

json report_to_json(const VerificationReport& r) {
  json checks = json::array();
  for (const auto& c : r.checks)
    checks.push_back({{"name", c.name},
                      {"passed", c.passed},
                      {"measured", c.measured},
                      {"threshold", c.threshold},
                      {"detail", c.detail}});
  return {{"all_passed", r.all_passed()}, {"checks", checks}};
}

// Files -----------------------------------------------------------------------------

namespace {

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream f(p, std::ios::out | std::ios::binary | mode);
  if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
  return f;
}

void write_text(const fs::path& p, const std::string& text) {
  auto f = open_out(p);
  f << text;
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

std::string neurons_table(const MetricSeries& s) {
  std::string out = csv_header(kNeuronColumns);
  for (const auto& n : s.final_neurons) {
    const double res = n.neuron < s.final_residual_norms.size() ? s.final_residual_norms[n.neuron] : 0.0;
    out += neuron_row(n, s.final_stats, res);
  }
  return out;
}

}  // namespace

void emit(const MetricSeries& series, const RunManifest& manifest, const fs::path& dir) {
  make_dirs(dir);
  std::string metrics = csv_header(kMetricsColumns);
  for (const auto& r : series.records) metrics += metrics_row(r);
  write_text(dir / "metrics.csv", metrics);
  std::string traces = csv_header(kTraceColumns);
  for (const auto& r : series.traces) traces += trace_row(r);
  write_text(dir / "traces.csv", traces);
  write_text(dir / "neurons_final.csv", neurons_table(series));
  write_text(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
}

CsvRunSink::CsvRunSink(fs::path dir) : dir_(std::move(dir)) {}

void CsvRunSink::begin(const RunManifest& manifest) {
  make_dirs(dir_);
  write_text(dir_ / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
  metrics_ = open_out(dir_ / "metrics.csv");
  metrics_ << csv_header(kMetricsColumns) << std::flush;
  traces_ = open_out(dir_ / "traces.csv");
  traces_ << csv_header(kTraceColumns) << std::flush;
  write_text(dir_ / "neurons_final.csv", csv_header(kNeuronColumns));
}

void CsvRunSink::record(const MetricRecord& record, const std::vector<TraceRow>& traces) {
  metrics_ << metrics_row(record) << std::flush;
  std::string rows;
  for (const auto& t : traces) rows += trace_row(t);
  traces_ << rows << std::flush;
  if (!metrics_ || !traces_) throw std::runtime_error("write failed under " + dir_.string());
}

void CsvRunSink::finish(const RunResult& result) {
  metrics_.close();
  traces_.close();
  write_text(dir_ / "neurons_final.csv", neurons_table(result.series));
  write_text(dir_ / "manifest.json", manifest_to_json(result.manifest).dump(2) + "\n");
}

namespace {

json read_csv(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::string line;
  std::vector<std::string> cols;
  json rows = json::array();
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(s);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    return out;
  };
  if (std::getline(in, line)) cols = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    json row;
    for (std::size_t i = 0; i < cols.size() && i < cells.size(); ++i) {
      const std::string& c = cells[i];
      if (c == "nan" || c == "inf" || c == "-inf")
        row[cols[i]] = nullptr;
      else
        row[cols[i]] = std::stod(c);
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

json export_run(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("not a run directory (missing manifest.json): " + dir.string());
  json out;
  in >> out["manifest"];
  out["metrics"] = read_csv(dir / "metrics.csv");
  out["neurons_final"] = read_csv(dir / "neurons_final.csv");
  out["traces"] = read_csv(dir / "traces.csv");
  if (fs::exists(dir / "verify.json")) {
    std::ifstream v(dir / "verify.json");
    v >> out["verify"];
  }
  return out;
}

fs::path default_output_root() {
  if (const char* env = std::getenv("CONTAMLAB_OUT"); env && *env) return env;
  return "runs";
}

// CLI -------------------------------------------------------------------------------

namespace {

std::map<std::string, std::string> parse_sets(const std::vector<std::string>& sets) {
  std::map<std::string, std::string> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    out[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return out;
}

void print_report(const VerificationReport& rep, std::ostream& os) {
  for (const auto& c : rep.checks)
    os << (c.passed ? "PASS " : "FAIL ") << c.name << "  measured=" << format_real(c.measured)
       << " threshold=" << format_real(c.threshold) << "  " << c.detail << "\n";
  os << (rep.all_passed() ? "all checks passed" : "some checks failed") << "\n";
}

void print_summary(const RunResult& r, const fs::path& dir, std::ostream& os) {
  const auto& m = r.manifest;
  os << m.config.run_id() << ": " << to_string(m.stop_reason) << " after " << m.iterations_run << " iterations";
  if (!r.series.records.empty()) {
    const auto& last = r.series.records.back();
    os << ", id_risk=" << format_real(last.risk.id_risk) << " ood_risk=" << format_real(last.risk.ood_risk);
  }
  os << " -> " << dir.string() << "\n";
  if (r.aborted()) os << "abort: " << m.abort_message << "\n";
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("--seeds: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("--seeds: empty list");
  return out;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"contamlab: feature-contamination numerical laboratory"};
  app.require_subcommand(1);

  auto* presets_cmd = app.add_subcommand("presets", "List the built-in experiment presets");

  std::string preset, config_path, out_dir;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false, with_verify = false;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment");
  auto* run_src = run_cmd->add_option_group("source");
  run_src->add_option("--preset", preset, "Preset name");
  run_src->add_option("--config", config_path, "JSON configuration file");
  run_src->require_option(1);
  run_cmd->add_option("--set", sets, "Override, key=value (repeatable)");
  run_cmd->add_option("--out", out_dir, "Output root directory");
  run_cmd->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });
  run_cmd->add_flag("--verify", with_verify, "Also run the verification suite and write verify.json");

  std::string seeds_text;
  int parallel = 1;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a preset over several seeds");
  sweep_cmd->add_option("--preset", preset, "Preset name")->required();
  sweep_cmd->add_option("--seeds", seeds_text, "Comma-separated seeds")->required();
  sweep_cmd->add_option("--set", sets, "Override, key=value (repeatable)");
  sweep_cmd->add_option("--out", out_dir, "Output root directory");
  sweep_cmd->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);

  std::string report_path;
  auto* verify_cmd = app.add_subcommand("verify", "Run the verification suite");
  verify_cmd->add_option("--preset", preset, "Preset providing dimensions");
  verify_cmd->add_option("--seed", seed, "Seed")->each([&](const std::string&) { seed_given = true; });
  verify_cmd->add_option("--json", report_path, "Also write the report as JSON");

  std::string run_dir, format = "json";
  auto* export_cmd = app.add_subcommand("export", "Export a run directory");
  export_cmd->add_option("--run", run_dir, "Run directory")->required();
  export_cmd->add_option("--format", format, "Output format")->check(CLI::IsMember({"json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*presets_cmd) {
      for (const auto& p : builtin_presets())
        std::cout << p.name << "  " << to_string(p.scenario) << " activation=" << to_string(p.activation)
                  << " optimizer=" << to_string(p.train.optimizer) << " T=" << p.train.iterations << "\n";
      return 0;
    }
    const auto overrides = parse_sets(sets);
    const fs::path root = out_dir.empty() ? default_output_root() : fs::path(out_dir);

    if (*run_cmd) {
      ExperimentConfig cfg = load_config(preset.empty() ? config_path : preset, overrides);
      if (seed_given) cfg.seed = seed;
      cfg.out_dir = root.string();
      cfg.resolve();
      const fs::path dir = root / cfg.run_id();
      CsvRunSink sink(dir);
      const RunResult result = run_experiment(cfg, &sink);
      if (with_verify) write_text(dir / "verify.json", report_to_json(verify_suite(cfg)).dump(2) + "\n");
      print_summary(result, dir, std::cout);
      return result.aborted() ? 2 : 0;
    }

    if (*sweep_cmd) {
      ExperimentConfig base = load_config(preset, overrides);
      base.out_dir = root.string();
      std::vector<ConfigPatch> patches;
      for (auto s : parse_seeds(seeds_text)) patches.push_back({{"seed", std::to_string(s)}});
      auto entries = run_sweep(base, patches, parallel,
                               [&](const ExperimentConfig& c) { return std::make_unique<CsvRunSink>(root / c.run_id()); });
      int status = 0;
      for (const auto& e : entries) {
        if (!e.error.empty()) {
          std::cerr << "seed " << e.patch.at("seed") << ": " << e.error << "\n";
          status = std::max(status, 2);
        } else {
          print_summary(*e.result, root / e.result->manifest.config.run_id(), std::cout);
          if (e.result->aborted()) status = 2;
        }
      }
      return status;
    }

    if (*verify_cmd) {
      ExperimentConfig cfg = preset.empty() ? *find_preset("fig3-classification-relu") : load_config(preset, {});
      if (seed_given) cfg.seed = seed;
      const VerificationReport rep = verify_suite(cfg);
      print_report(rep, std::cout);
      if (!report_path.empty()) write_text(report_path, report_to_json(rep).dump(2) + "\n");
      return rep.all_passed() ? 0 : 1;
    }

    if (*export_cmd) {
      std::cout << export_run(run_dir).dump(2) << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace contamlab
