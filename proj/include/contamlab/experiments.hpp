// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "contamlab/feature_model.hpp"
#include "contamlab/metrics.hpp"
#include "contamlab/network.hpp"

namespace contamlab {

enum class ScenarioKind {
  ClassificationReLU,
  ClassificationLinear,
  RegressionReLU,
  RegressionLinear,
  ActivationSuite,          // general net, hyperball data, AdamW
  NonlinearClassification,  // general net, hyperball data, any optimizer
};

const char* to_string(ScenarioKind s);
ScenarioKind scenario_from_string(const std::string& name);

/// Training engine. `latent` trains on dictionary coordinates and is exact for
/// SGD (every gradient lies in the span of the dictionary); `full` trains on
/// materialized inputs. `auto` picks latent for SGD and full otherwise.
enum class Engine { Auto, Latent, Full };

const char* to_string(Engine e);
Engine engine_from_string(const std::string& name);

struct Dims {
  int d = 256;
  int n_core = 32;
  int n_bg = 32;
  int m = 256;

  int d0() const { return n_core + n_bg; }
};

struct LawConfig {
  double lo = 0.0;
  double hi = 1.0;
};

struct TrainConfig {
  double eta = 0.001;
  double lambda = 0.001;
  int batch_size = 1000;
  long iterations = 150000;
  OptimizerKind optimizer = OptimizerKind::SGD;
  LossKind loss = LossKind::Hinge;
  long eval_every = 100;
  int n_eval = 2000;
  AdamWHyper adamw;
};

struct ConvergenceConfig {
  bool enabled = true;
  int window = 20;
  double tol = 1e-3;
};

struct ExperimentConfig {
  std::string name = "custom";
  ScenarioKind scenario = ScenarioKind::ClassificationReLU;
  Activation activation = Activation::ReLU;
  Dims dims;
  LawConfig id_law{0.0, 1.0};
  LawConfig ood_bg_law{-1.0, 0.0};
  NonlinearCoreSpec nonlinear;
  TrainConfig train;
  ConvergenceConfig convergence;
  Engine engine = Engine::Auto;
  int probe_count = 10;
  int n_rate_per_class = 1000;
  double membership_c = 1.0;
  std::uint64_t seed = 0;
  std::string out_dir;
  long nan_at_iteration = -1;  // fault injection: poison parameters after this step

  bool classification() const;
  bool general_mode() const;
  CoreMode core_mode() const;
  Engine resolved_engine() const;
  /// Forces the scenario's implied settings and checks every invariant.
  /// Throws ConfigError naming the offending key.
  void resolve();
  std::string run_id() const;
};

/// The eight built-in presets.
std::vector<ExperimentConfig> builtin_presets();
std::optional<ExperimentConfig> find_preset(const std::string& name);

struct TraceRow {
  long iteration = 0;
  int neuron = 0;
  double corr_pos = 0.0;  // E[<w_k, x> | y = +1]
  double corr_neg = 0.0;  // E[<w_k, x> | y = -1]
};

struct MetricSeries {
  std::vector<MetricRecord> records;
  std::vector<TraceRow> traces;
  std::vector<int> probe_neurons;
  // Final-state tables.
  std::vector<NeuronSummary> final_neurons;
  ActivationStats final_stats;
  Eigen::VectorXd final_residual_norms;
};

enum class StopReason { HorizonReached, Converged, Aborted };
const char* to_string(StopReason r);

struct RunManifest {
  ExperimentConfig config;  // resolved
  std::string rng_algorithm;
  std::string version;
  std::string engine;
  std::string started_at;
  std::string finished_at;
  StopReason stop_reason = StopReason::HorizonReached;
  long iterations_run = 0;
  long abort_iteration = -1;
  std::string abort_message;
};

struct RunResult {
  MetricSeries series;
  RunManifest manifest;
  TwoLayerNet final_net;
  FeatureDictionary dict;

  bool aborted() const { return manifest.stop_reason == StopReason::Aborted; }
};

/// Receives the run as it progresses; the CSV writers implement this.
class RunSink {
 public:
  virtual ~RunSink() = default;
  virtual void begin(const RunManifest& manifest) = 0;
  virtual void record(const MetricRecord& record, const std::vector<TraceRow>& traces) = 0;
  virtual void finish(const RunResult& result) = 0;
};

/// Stop when the mean ID risk of the second half of the last `window`
/// records differs from the first half's mean by less than `tol`.
bool convergence_stop(const std::vector<MetricRecord>& records, int window, double tol);

RunResult run_experiment(ExperimentConfig config, RunSink* sink = nullptr);

using ConfigPatch = std::map<std::string, std::string>;

struct SweepEntry {
  ConfigPatch patch;
  std::optional<RunResult> result;
  std::string error;
};

/// Builds the sink for one sweep member, or returns null for none.
using SinkFactory = std::function<std::unique_ptr<RunSink>(const ExperimentConfig&)>;

/// Runs `base` once per patch (once if `patches` is empty). Patches that do not
/// set `seed` get split_seed(base.seed, index). Failures are recorded per entry.
std::vector<SweepEntry> run_sweep(const ExperimentConfig& base, const std::vector<ConfigPatch>& patches,
                                  int max_parallel, const SinkFactory& sinks = {});

// Verification suite ----------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string detail;
};

struct VerificationReport {
  std::vector<CheckResult> checks;
  bool all_passed() const;
};

/// Central-difference check of both gradient routes on `n_configs` random
/// kink-free configurations at (d, m). Relative error threshold 1e-5.
CheckResult check_gradients(int d, int m, int n_configs, std::uint64_t seed);
CheckResult check_orthonormality(const FeatureDictionary& dict, double tol = 1e-9);
/// Member fraction per class over `n_seeds` inits must stay within the frozen band.
CheckResult check_init_membership(const Dims& dims, int n_seeds, std::uint64_t seed);
/// max |h(x)| over 100 ID samples per init seed must stay below c / sqrt(d0).
CheckResult check_init_output_magnitude(const Dims& dims, int n_seeds, std::uint64_t seed);
/// Berry-Esseen vs Monte Carlo on random neurons; also compares d0 = 16 and 128.
CheckResult check_berry_esseen(int n_neurons, int n_samples, std::uint64_t seed);
/// Every background-feature projection of the population gradient must lie
/// within 3 standard errors of zero.
CheckResult check_background_cancellation(const TwoLayerNet& net, const DataModel& data, int n, std::uint64_t seed);
/// Batch-vs-population gradient projection gap must shrink along a batch ladder.
CheckResult check_gradient_gap_ladder(const Dims& dims, std::uint64_t seed);

VerificationReport verify_suite(const ExperimentConfig& config);

/// Frozen calibration constants (see README, "Calibrated thresholds").
namespace calibration {
/// Centre of the init member-fraction band per class for threshold
/// coefficient c: P[a_k = y] * P[N(0, 1/4 d0/d) >= c sqrt(d0/d)].
double expected_member_fraction(double c);
inline constexpr double kMemberFractionHalfWidth = 0.1;
/// c in max |h(x)| <= c / sqrt(d0) at initialization.
extern const double kInitOutputConstant;
}  // namespace calibration

}  // namespace contamlab
