// SPDX-License-Identifier: Apache-2.0
#include "contamlab/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "contamlab/cli_io.hpp"
#include "contamlab/rng.hpp"

namespace contamlab {

const char* to_string(ScenarioKind s) {
  switch (s) {
    case ScenarioKind::ClassificationReLU: return "classification-relu";
    case ScenarioKind::ClassificationLinear: return "classification-linear";
    case ScenarioKind::RegressionReLU: return "regression-relu";
    case ScenarioKind::RegressionLinear: return "regression-linear";
    case ScenarioKind::ActivationSuite: return "activation-suite";
    case ScenarioKind::NonlinearClassification: return "nonlinear-classification";
  }
  return "?";
}

ScenarioKind scenario_from_string(const std::string& name) {
  for (auto s : {ScenarioKind::ClassificationReLU, ScenarioKind::ClassificationLinear, ScenarioKind::RegressionReLU,
                 ScenarioKind::RegressionLinear, ScenarioKind::ActivationSuite,
                 ScenarioKind::NonlinearClassification})
    if (name == to_string(s)) return s;
  throw std::invalid_argument("unknown scenario '" + name + "'");
}

const char* to_string(Engine e) {
  switch (e) {
    case Engine::Auto: return "auto";
    case Engine::Latent: return "latent";
    case Engine::Full: return "full";
  }
  return "?";
}

Engine engine_from_string(const std::string& name) {
  if (name == "auto") return Engine::Auto;
  if (name == "latent") return Engine::Latent;
  if (name == "full") return Engine::Full;
  throw std::invalid_argument("unknown engine '" + name + "'");
}

const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::HorizonReached: return "horizon_reached";
    case StopReason::Converged: return "converged";
    case StopReason::Aborted: return "aborted";
  }
  return "?";
}

bool ExperimentConfig::classification() const {
  return scenario == ScenarioKind::ClassificationReLU || scenario == ScenarioKind::ClassificationLinear;
}

bool ExperimentConfig::general_mode() const { return !classification(); }

CoreMode ExperimentConfig::core_mode() const {
  return (scenario == ScenarioKind::ActivationSuite || scenario == ScenarioKind::NonlinearClassification)
             ? CoreMode::Nonlinear
             : CoreMode::Linear;
}

Engine ExperimentConfig::resolved_engine() const {
  if (engine != Engine::Auto) return engine;
  return train.optimizer == OptimizerKind::SGD ? Engine::Latent : Engine::Full;
}

namespace {

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

void ExperimentConfig::resolve() {
  switch (scenario) {
    case ScenarioKind::ClassificationReLU:
      activation = Activation::ReLU;
      train.loss = LossKind::Hinge;
      break;
    case ScenarioKind::ClassificationLinear:
      activation = Activation::Identity;
      train.loss = LossKind::Hinge;
      break;
    case ScenarioKind::RegressionReLU:
      activation = Activation::ReLU;
      train.loss = LossKind::MSE;
      break;
    case ScenarioKind::RegressionLinear:
      activation = Activation::Identity;
      train.loss = LossKind::MSE;
      break;
    case ScenarioKind::ActivationSuite:
      train.optimizer = OptimizerKind::AdamW;
      train.loss = LossKind::Hinge;
      break;
    case ScenarioKind::NonlinearClassification:
      train.loss = LossKind::Hinge;
      break;
  }

  require(dims.n_core >= 1, "dims.n_core", "must be at least 1");
  require(dims.n_bg >= 0, "dims.n_bg", "must be non-negative");
  require(dims.d0() >= 2, "dims", "need at least two features");
  require(dims.d >= dims.d0(), "dims.d",
          "ambient dimension " + std::to_string(dims.d) + " is smaller than d0=" + std::to_string(dims.d0()));
  require(dims.m >= 1, "dims.m", "must be at least 1");
  require(id_law.lo <= id_law.hi && id_law.lo >= 0.0 && id_law.hi <= 1.0, "id_law", "support must lie in [0,1]");
  require(ood_bg_law.lo <= ood_bg_law.hi && ood_bg_law.lo >= -1.0 && ood_bg_law.hi <= 0.0, "ood_bg_law",
          "support must lie in [-1,0]");
  require(train.eta > 0.0, "train.eta", "must be positive");
  require(train.lambda >= 0.0, "train.lambda", "must be non-negative");
  require(train.batch_size >= 1, "train.batch_size", "must be at least 1");
  require(train.iterations >= 0, "train.iterations", "must be non-negative");
  require(train.eval_every >= 1, "train.eval_every", "must be at least 1");
  require(train.n_eval >= 1, "train.n_eval", "must be at least 1");
  require(convergence.window >= 2, "convergence.window", "must be at least 2");
  require(convergence.tol >= 0.0, "convergence.tol", "must be non-negative");
  require(probe_count >= 0 && probe_count <= dims.m, "probe_count", "must lie in [0, m]");
  require(n_rate_per_class >= 1, "n_rate_per_class", "must be at least 1");
  require(membership_c >= 0.0, "membership_c", "must be non-negative");
  if (core_mode() == CoreMode::Nonlinear) {
    require(dims.n_core >= 2, "dims.n_core", "hyperball data needs at least two core features");
    try {
      nonlinear.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("nonlinear: ") + e.what());
    }
  }
  if (!general_mode()) {
    require(train.loss == LossKind::Hinge, "train.loss", "fixed-output classification trains with hinge");
  }
  if (resolved_engine() == Engine::Latent)
    require(train.optimizer == OptimizerKind::SGD, "engine", "the latent engine is exact only for SGD");
}

std::string ExperimentConfig::run_id() const { return name + "-seed" + std::to_string(seed); }

std::vector<ExperimentConfig> builtin_presets() {
  std::vector<ExperimentConfig> out;
  auto base = [](std::string name, ScenarioKind kind) {
    ExperimentConfig c;
    c.name = std::move(name);
    c.scenario = kind;
    c.dims = {256, 32, 32, 256};
    c.train.eta = 0.001;
    c.train.lambda = 0.001;
    c.train.batch_size = 1000;
    return c;
  };
  {
    auto c = base("fig3-classification-relu", ScenarioKind::ClassificationReLU);
    c.train.iterations = 150000;
    out.push_back(c);
  }
  {
    auto c = base("fig-classification-linear", ScenarioKind::ClassificationLinear);
    c.train.iterations = 150000;
    out.push_back(c);
  }
  {
    auto c = base("fig-regression-relu", ScenarioKind::RegressionReLU);
    c.train.iterations = 250000;
    c.convergence.enabled = false;
    out.push_back(c);
  }
  {
    auto c = base("fig-regression-linear", ScenarioKind::RegressionLinear);
    c.train.iterations = 250000;
    c.convergence.enabled = false;
    out.push_back(c);
  }
  for (Activation a : {Activation::ReLU, Activation::GELU, Activation::Sigmoid, Activation::Tanh}) {
    auto c = base(std::string("fig-activations-") + to_string(a), ScenarioKind::ActivationSuite);
    c.activation = a;
    c.train.optimizer = OptimizerKind::AdamW;
    c.nonlinear = {1.0, 2.0, "sphere-surface"};
    c.train.iterations = 10000;
    out.push_back(c);
  }
  for (auto& c : out) c.resolve();
  return out;
}

std::optional<ExperimentConfig> find_preset(const std::string& name) {
  for (auto& c : builtin_presets())
    if (c.name == name) return c;
  return std::nullopt;
}

bool convergence_stop(const std::vector<MetricRecord>& records, int window, double tol) {
  if (window < 2) throw std::invalid_argument("convergence window needs at least two records");
  if (static_cast<int>(records.size()) < window) return false;
  const int half = window / 2;
  const auto first = records.end() - window;
  double a = 0.0, b = 0.0;
  for (int i = 0; i < half; ++i) a += first[i].risk.id_risk;
  for (int i = window - half; i < window; ++i) b += first[i].risk.id_risk;
  return std::abs(b / half - a / half) < tol;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

// Owns the trainable state. In the latent engine the working net's hidden layer
// is P = W M (m x d0) and the part of W outside span(M) only decays, so
//   W_t = P_t M^T + (1 - eta lambda)^t R_0.
class Trainer {
 public:
  Trainer(const TwoLayerNet& init, const DataModel& data, const ExperimentConfig& cfg)
      : data_(data), cfg_(cfg), engine_(cfg.resolved_engine()), work_(init) {
    state_ = OptimizerState::for_net(cfg.train.optimizer, init, cfg.train.adamw);
    if (engine_ == Engine::Latent) {
      const Eigen::MatrixXd& M = data.dict.columns;
      work_.hidden = init.hidden * M;
      residual_ = init.hidden - work_.hidden * M.transpose();
      state_ = OptimizerState::for_net(cfg.train.optimizer, work_, cfg.train.adamw);
    }
  }

  void step(Rng& rng) {
    const bool latent = engine_ == Engine::Latent;
    const Batch b = data_.sample(Regime::ID, cfg_.train.batch_size, rng, !latent);
    const Eigen::MatrixXd targets = loss_targets(b, cfg_.train.loss, data_.dist.n_core);
    const Gradients g = compute_gradients(work_, latent ? b.coords : b.x, targets, cfg_.train.loss);
    optimizer_step(state_, work_, g, cfg_.train.eta, cfg_.train.lambda);
    if (latent) decay_ *= 1.0 - cfg_.train.eta * cfg_.train.lambda;
  }

  TwoLayerNet materialize() const {
    if (engine_ != Engine::Latent) return work_;
    TwoLayerNet net = work_;
    net.hidden = work_.hidden * data_.dict.columns.transpose() + decay_ * residual_;
    return net;
  }

  bool finite() const {
    return work_.hidden.allFinite() && work_.output.allFinite() && work_.hidden_bias.allFinite() &&
           work_.output_bias.allFinite();
  }

  void poison() { work_.hidden(0, 0) = std::numeric_limits<double>::quiet_NaN(); }

 private:
  const DataModel& data_;
  const ExperimentConfig& cfg_;
  Engine engine_;
  TwoLayerNet work_;
  OptimizerState state_;
  Eigen::MatrixXd residual_;
  double decay_ = 1.0;
};

std::vector<int> choose_probes(int m, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> idx(m);
  for (int i = 0; i < m; ++i) idx[i] = i;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, m - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Batch temporaries are a few MB; keep them on the heap instead of fresh mmaps.
void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

bool record_finite(const MetricRecord& r) {
  return std::isfinite(r.risk.id_risk) && std::isfinite(r.risk.ood_risk);
}

}  // namespace

RunResult run_experiment(ExperimentConfig config, RunSink* sink) {
  tune_allocator();
  config.resolve();
  RunResult result;
  RunManifest& manifest = result.manifest;
  manifest.config = config;
  manifest.rng_algorithm = std::string(kRngAlgorithm);
  manifest.version = CONTAMLAB_VERSION;
  manifest.engine = to_string(config.resolved_engine());
  manifest.started_at = utc_now();

  DataModel data;
  data.dict = build_dictionary(config.dims.d, config.dims.n_core, config.dims.n_bg,
                               split_seed(config.seed, streams::kDictionary));
  data.dist = default_distribution(data.dict);
  for (auto& law : data.dist.id_laws) law = {LawKind::Uniform, config.id_law.lo, config.id_law.hi};
  for (auto& law : data.dist.ood_bg_laws) law = {LawKind::Uniform, config.ood_bg_law.lo, config.ood_bg_law.hi};
  data.dist.refresh();
  data.mode = config.core_mode();
  data.nonlinear = config.nonlinear;

  const std::uint64_t init_seed = split_seed(config.seed, streams::kInit);
  const int out_dim = config.train.loss == LossKind::MSE ? config.dims.n_core : 1;
  TwoLayerNet init = config.general_mode()
                         ? init_general_net(config.dims.d, config.dims.m, out_dim, config.activation, init_seed)
                         : init_classification_net(config.dims.d, config.dims.m, init_seed, config.activation);

  Rng train_rng(split_seed(config.seed, streams::kTrain));
  Rng eval_rng(split_seed(config.seed, streams::kEval));
  MetricSeries& series = result.series;
  series.probe_neurons = choose_probes(config.dims.m, config.probe_count, split_seed(config.seed, streams::kProbe));

  SnapshotOptions snap_opts;
  snap_opts.loss = config.train.loss;
  snap_opts.n_eval = config.train.n_eval;
  snap_opts.n_rate_per_class = config.n_rate_per_class;
  snap_opts.membership_c = config.membership_c;

  if (sink) sink->begin(manifest);

  Trainer trainer(init, data, config);
  Snapshot last;
  auto snapshot = [&](long t) {
    last = take_snapshot(t, trainer.materialize(), data, snap_opts, eval_rng);
    std::vector<TraceRow> rows;
    const auto pos = class_correlation_trace(last.proj, data.dist, series.probe_neurons, 1);
    const auto neg = class_correlation_trace(last.proj, data.dist, series.probe_neurons, -1);
    for (std::size_t i = 0; i < series.probe_neurons.size(); ++i)
      rows.push_back({t, series.probe_neurons[i], pos[i], neg[i]});
    if (!record_finite(last.record)) return false;
    series.records.push_back(last.record);
    series.traces.insert(series.traces.end(), rows.begin(), rows.end());
    if (sink) sink->record(last.record, rows);
    return true;
  };

  auto abort_run = [&](long t, const std::string& why) {
    manifest.stop_reason = StopReason::Aborted;
    manifest.abort_iteration = t;
    manifest.abort_message = why;
  };

  long t = 0;
  if (!snapshot(0)) abort_run(0, "non-finite metrics at initialization");
  while (manifest.stop_reason != StopReason::Aborted && t < config.train.iterations) {
    trainer.step(train_rng);
    ++t;
    if (t == config.nan_at_iteration) trainer.poison();
    if (!trainer.finite()) {
      abort_run(t, "non-finite parameter after iteration " + std::to_string(t));
      break;
    }
    const bool last_iter = t == config.train.iterations;
    if (t % config.train.eval_every == 0 || last_iter) {
      if (!snapshot(t)) {
        abort_run(t, "non-finite loss at iteration " + std::to_string(t));
        break;
      }
      if (config.convergence.enabled && !last_iter &&
          convergence_stop(series.records, config.convergence.window, config.convergence.tol)) {
        manifest.stop_reason = StopReason::Converged;
        break;
      }
    }
  }
  manifest.iterations_run = t;
  if (manifest.stop_reason != StopReason::Aborted && t == config.train.iterations &&
      manifest.stop_reason != StopReason::Converged)
    manifest.stop_reason = StopReason::HorizonReached;

  result.final_net = trainer.materialize();
  result.dict = data.dict;
  series.final_neurons = last.neurons;
  series.final_stats = last.stats;
  series.final_residual_norms = last.proj.residual_norms;
  manifest.finished_at = utc_now();
  if (sink) sink->finish(result);
  return result;
}

std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, const std::vector<ConfigPatch>& patches,
                                  int max_parallel, const SinkFactory& sinks) {
  std::vector<ConfigPatch> work = patches;
  if (work.empty()) work.emplace_back();
  std::vector<SweepEntry> entries(work.size());
  std::vector<ExperimentConfig> configs(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) {
    entries[i].patch = work[i];
    try {
      ExperimentConfig c = base;
      if (!patches.empty() && !work[i].count("seed")) c.seed = split_seed(base.seed, i);
      apply_overrides(c, work[i]);
      c.resolve();
      configs[i] = c;
    } catch (const std::exception& e) {
      entries[i].error = e.what();
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) {
      if (!entries[i].error.empty()) continue;
      try {
        std::unique_ptr<RunSink> sink = sinks ? sinks(configs[i]) : nullptr;
        entries[i].result = run_experiment(configs[i], sink.get());
      } catch (const std::exception& e) {
        entries[i].error = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(max_parallel, static_cast<int>(work.size())));
  std::vector<std::thread> pool;
  for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return entries;
}

}  // namespace contamlab
