// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "contamlab/feature_model.hpp"
#include "contamlab/network.hpp"

namespace contamlab {

/// P(k, j) = <w_k, m_j> and the norm of the part of w_k outside the span of
/// the dictionary.
struct ProjectionMatrix {
  Eigen::MatrixXd P;               // m x d0
  Eigen::VectorXd residual_norms;  // m
};

ProjectionMatrix projections(const TwoLayerNet& net, const FeatureDictionary& dict);

struct NeuronSummary {
  int neuron = 0;
  int output_sign = 1;
  double core_corr = 0.0;  // sum_core mu_j1 P(k, j)
  double bg_corr = 0.0;    // sum_bg mu_j1 P(k, j)
  bool member_pos = false;
  bool member_neg = false;

  bool member() const { return member_pos || member_neg; }
};

/// Membership in N_y requires sign(a_k) = y and y core_corr + bg_corr >= c sqrt(d0/d).
std::vector<NeuronSummary> neuron_summaries(const ProjectionMatrix& proj, const FeatureDistribution& dist,
                                            const TwoLayerNet& net, double c = 1.0);

double membership_threshold(int d0, int d, double c);

/// Per-neuron activation statistics. "pos"/"neg" refer to the neuron's
/// positive and negative examples, i.e. labels equal to / opposite to
/// sign(a_k). Class-indexed arrays use index 0 for y=+1 and 1 for y=-1.
struct ActivationStats {
  Eigen::MatrixXd rate;           // m x 2, fraction of samples with pre-activation >= 0
  Eigen::MatrixXd mean_preact;    // m x 2
  Eigen::MatrixXd mean_activation;// m x 2, after the nonlinearity
  Eigen::MatrixXd berry_esseen;   // m x 2, analytic estimate (NaN if unavailable)
  std::vector<int> output_sign;   // m

  double rate_pos(int k) const { return rate(k, output_sign[k] > 0 ? 0 : 1); }
  double rate_neg(int k) const { return rate(k, output_sign[k] > 0 ? 1 : 0); }
  double be_pos(int k) const { return berry_esseen(k, output_sign[k] > 0 ? 0 : 1); }
  double be_neg(int k) const { return berry_esseen(k, output_sign[k] > 0 ? 1 : 0); }
};

/// Monte Carlo rates over fresh class-conditional samples (n_per_class per
/// class). Berry-Esseen estimates are filled when the data model is linear.
ActivationStats empirical_activation_rates(const TwoLayerNet& net, const DataModel& data, Regime regime,
                                           int n_per_class, Rng& rng);

struct RateEstimate {
  double rate = 0.5;
  bool degenerate = false;  // all projections zero
};

/// Gaussian-CDF approximation of P[<w, x> >= 0 | y] from one projection row.
RateEstimate berry_esseen_rate(std::span<const double> projection_row, const FeatureDistribution& dist, int y);

/// Analytic E[<w_k, x> | y] = y sum_core mu_j1 P(k,j) + sum_bg mu_j1 P(k,j).
double class_mean_preactivation(std::span<const double> projection_row, const FeatureDistribution& dist, int y);

std::vector<double> class_correlation_trace(const ProjectionMatrix& proj, const FeatureDistribution& dist,
                                            std::span<const int> probe_neurons, int y);

struct RiskReport {
  double id_risk = 0.0;
  double ood_risk = 0.0;
  double id_error = 0.0;   // classification only
  double ood_error = 0.0;  // classification only
  int n_eval = 0;
  double id_risk_stderr = 0.0;
  double ood_risk_stderr = 0.0;
};

/// Targets for the loss: labels (Hinge) or the core coordinates <x, m_j> (MSE).
Eigen::MatrixXd loss_targets(const Batch& batch, LossKind kind, int n_core);

RiskReport risk_report(const TwoLayerNet& net, const DataModel& data, LossKind kind, int n_eval, Rng& rng);

/// (mu_max - mean) / (|mu_max| + |mean| + eps).
double selectivity(std::span<const double> class_means, double eps = 1e-6);

/// Equal-width bin counts over [0, 1]; a rate of exactly 1 lands in the last bin.
std::vector<int> activation_rate_histogram(std::span<const double> rates, int n_bins);

struct GradientProjection {
  Eigen::VectorXd estimate;  // per neuron, E[<-grad_{w_k} loss, m_j>]
  Eigen::VectorXd stderr_;   // per neuron
  int n = 0;
};

/// Monte Carlo estimate of the population negative-gradient projection of the
/// hinge data term onto feature j, for each neuron of a fixed-output net.
GradientProjection population_gradient_projection(const TwoLayerNet& net, const DataModel& data, int j, int n,
                                                  Rng& rng);

/// All features at once: estimate and stderr are m x d0.
struct GradientProjectionAll {
  Eigen::MatrixXd estimate;
  Eigen::MatrixXd stderr_;
  int n = 0;
};
GradientProjectionAll population_gradient_projections(const TwoLayerNet& net, const DataModel& data, int n, Rng& rng);

/// The same projection computed on a given batch (empirical gradient).
Eigen::VectorXd batch_gradient_projection(const TwoLayerNet& net, const DataModel& data, const Batch& batch, int j);

struct MetricRecord {
  long iteration = 0;
  RiskReport risk;
  double mean_core_corr = 0.0;  // mean of y core_corr over members
  double mean_bg_corr = 0.0;    // mean of bg_corr over members
  int members_pos = 0;
  int members_neg = 0;
  double act_gap = 0.0;          // mean rate_pos - rate_neg over members
  double mean_selectivity = 0.0; // over all neurons
  // Aggregates over every neuron, not emitted to metrics.csv.
  double mean_abs_bg_corr = 0.0;
  double max_abs_bg_projection = 0.0;
  double asymmetric_fraction = 0.0;  // rate_pos >= 0.9 and rate_neg <= 0.1
};

struct SnapshotOptions {
  LossKind loss = LossKind::Hinge;
  int n_eval = 2000;
  int n_rate_per_class = 1000;
  double membership_c = 1.0;
};

struct Snapshot {
  MetricRecord record;
  ProjectionMatrix proj;
  std::vector<NeuronSummary> neurons;
  ActivationStats stats;
};

/// Computes every metric for one state of the net, drawing fresh samples from `rng`.
Snapshot take_snapshot(long iteration, const TwoLayerNet& net, const DataModel& data, const SnapshotOptions& opts,
                       Rng& rng);

}  // namespace contamlab
