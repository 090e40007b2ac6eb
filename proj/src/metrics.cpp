// SPDX-License-Identifier: Apache-2.0
#include "contamlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace contamlab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }

int class_index(int y) { return y > 0 ? 0 : 1; }

// Berry-Esseen estimate with an additive pre-activation offset (hidden bias).
RateEstimate gaussian_rate(std::span<const double> row, const FeatureDistribution& dist, int y, double offset) {
  double var = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) var += dist.moments[j].variance * row[j] * row[j];
  RateEstimate est;
  if (var <= 0.0) {
    est.degenerate = true;
    est.rate = 0.5;
    return est;
  }
  est.rate = normal_cdf((class_mean_preactivation(row, dist, y) + offset) / std::sqrt(var));
  return est;
}

std::span<const double> row_span(const Eigen::MatrixXd& rowmajor_source, int k, std::vector<double>& buf) {
  buf.resize(rowmajor_source.cols());
  for (Eigen::Index j = 0; j < rowmajor_source.cols(); ++j) buf[j] = rowmajor_source(k, j);
  return buf;
}

}  // namespace

ProjectionMatrix projections(const TwoLayerNet& net, const FeatureDictionary& dict) {
  if (net.input_dim() != dict.d) throw std::invalid_argument("net input dimension does not match dictionary");
  ProjectionMatrix out;
  out.P = net.hidden * dict.columns;
  out.residual_norms.resize(net.width());
  for (int k = 0; k < net.width(); ++k) {
    const double r2 = net.hidden.row(k).squaredNorm() - out.P.row(k).squaredNorm();
    out.residual_norms[k] = std::sqrt(std::max(r2, 0.0));
  }
  return out;
}

double membership_threshold(int d0, int d, double c) {
  return c * std::sqrt(static_cast<double>(d0) / static_cast<double>(d));
}

std::vector<NeuronSummary> neuron_summaries(const ProjectionMatrix& proj, const FeatureDistribution& dist,
                                            const TwoLayerNet& net, double c) {
  const int m = static_cast<int>(proj.P.rows());
  const int d0 = static_cast<int>(proj.P.cols());
  if (d0 != dist.d0()) throw std::invalid_argument("projection width does not match distribution");
  const double threshold = membership_threshold(d0, net.input_dim(), c);
  std::vector<NeuronSummary> out(m);
  for (int k = 0; k < m; ++k) {
    NeuronSummary& s = out[k];
    s.neuron = k;
    s.output_sign = net.output_sign(k);
    for (int j = 0; j < d0; ++j) {
      const double v = dist.moments[j].mu1 * proj.P(k, j);
      (j < dist.n_core ? s.core_corr : s.bg_corr) += v;
    }
    const bool above = s.output_sign * s.core_corr + s.bg_corr >= threshold;
    s.member_pos = above && s.output_sign > 0;
    s.member_neg = above && s.output_sign < 0;
  }
  return out;
}

double class_mean_preactivation(std::span<const double> row, const FeatureDistribution& dist, int y) {
  double core = 0.0, bg = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double v = dist.moments[j].mu1 * row[j];
    (static_cast<int>(j) < dist.n_core ? core : bg) += v;
  }
  return y * core + bg;
}

RateEstimate berry_esseen_rate(std::span<const double> row, const FeatureDistribution& dist, int y) {
  if (static_cast<int>(row.size()) != dist.d0()) throw std::invalid_argument("projection row length mismatch");
  return gaussian_rate(row, dist, y, 0.0);
}

std::vector<double> class_correlation_trace(const ProjectionMatrix& proj, const FeatureDistribution& dist,
                                            std::span<const int> probe_neurons, int y) {
  std::vector<double> out;
  out.reserve(probe_neurons.size());
  std::vector<double> buf;
  for (int k : probe_neurons) {
    if (k < 0 || k >= proj.P.rows()) throw std::out_of_range("probe neuron index out of range");
    out.push_back(class_mean_preactivation(row_span(proj.P, k, buf), dist, y));
  }
  return out;
}

ActivationStats empirical_activation_rates(const TwoLayerNet& net, const DataModel& data, Regime regime,
                                           int n_per_class, Rng& rng) {
  if (n_per_class < 1) throw std::invalid_argument("n_per_class must be at least 1");
  const int m = net.width();
  ActivationStats st;
  st.rate.resize(m, 2);
  st.mean_preact.resize(m, 2);
  st.mean_activation.resize(m, 2);
  st.berry_esseen.setConstant(m, 2, kNaN);
  st.output_sign.resize(m);
  for (int k = 0; k < m; ++k) st.output_sign[k] = net.output_sign(k);

  for (int y : {1, -1}) {
    const Batch b = data.sample_class(regime, y, n_per_class, rng);
    const Eigen::MatrixXd u = pre_activations(net, b.x);
    const int c = class_index(y);
    st.rate.col(c) = (u.array() >= 0.0).cast<double>().colwise().mean().transpose();
    st.mean_preact.col(c) = u.colwise().mean().transpose();
    st.mean_activation.col(c) =
        u.unaryExpr([&](double v) { return activate(net.activation, v); }).colwise().mean().transpose();
  }

  if (data.mode == CoreMode::Linear && regime == Regime::ID) {
    const Eigen::MatrixXd P = net.hidden * data.dict.columns;
    std::vector<double> buf;
    for (int k = 0; k < m; ++k) {
      const double offset = net.has_biases() ? net.hidden_bias[k] : 0.0;
      auto row = row_span(P, k, buf);
      for (int y : {1, -1}) st.berry_esseen(k, class_index(y)) = gaussian_rate(row, data.dist, y, offset).rate;
    }
  }
  return st;
}

Eigen::MatrixXd loss_targets(const Batch& batch, LossKind kind, int n_core) {
  if (kind == LossKind::Hinge) return batch.y;
  return batch.coords.leftCols(n_core);
}

RiskReport risk_report(const TwoLayerNet& net, const DataModel& data, LossKind kind, int n_eval, Rng& rng) {
  if (n_eval < 1) throw std::invalid_argument("n_eval must be at least 1");
  RiskReport r;
  r.n_eval = n_eval;
  for (Regime regime : {Regime::ID, Regime::OOD}) {
    const Batch b = data.sample(regime, n_eval, rng);
    const Eigen::MatrixXd out = forward_batch(net, b.x);
    const Eigen::MatrixXd targets = loss_targets(b, kind, data.dist.n_core);
    Eigen::VectorXd per(n_eval);
    for (int i = 0; i < n_eval; ++i) per[i] = loss(kind, out.row(i).transpose(), targets.row(i).transpose());
    const double mean = per.mean();
    const double var = n_eval > 1 ? (per.array() - mean).square().sum() / (n_eval - 1) : 0.0;
    double error = 0.0;
    if (kind == LossKind::Hinge)
      for (int i = 0; i < n_eval; ++i) error += (b.y[i] * out(i, 0) <= 0.0) ? 1.0 : 0.0;
    error /= n_eval;
    if (regime == Regime::ID) {
      r.id_risk = mean;
      r.id_risk_stderr = std::sqrt(var / n_eval);
      r.id_error = error;
    } else {
      r.ood_risk = mean;
      r.ood_risk_stderr = std::sqrt(var / n_eval);
      r.ood_error = error;
    }
  }
  return r;
}

double selectivity(std::span<const double> class_means, double eps) {
  if (class_means.empty()) throw std::invalid_argument("selectivity needs at least one class");
  const double mu_max = *std::max_element(class_means.begin(), class_means.end());
  const double mu_bar =
      std::accumulate(class_means.begin(), class_means.end(), 0.0) / static_cast<double>(class_means.size());
  return (mu_max - mu_bar) / (std::abs(mu_max) + std::abs(mu_bar) + eps);
}

std::vector<int> activation_rate_histogram(std::span<const double> rates, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("histogram needs at least one bin");
  std::vector<int> counts(n_bins, 0);
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("activation rates must lie in [0, 1]");
    const int bin = std::min(static_cast<int>(r * n_bins), n_bins - 1);
    ++counts[bin];
  }
  return counts;
}

namespace {

// Per-example factors r(i, k) with -grad_{w_k} = r(i, k) x_i, n x m. The
// pre-activations come from the coordinates: <w_k, x> = (W M s)_k.
Eigen::MatrixXd example_gradient_factors(const TwoLayerNet& net, const Eigen::MatrixXd& P, const Batch& b) {
  if (net.mode != NetMode::FixedOutput)
    throw std::invalid_argument("gradient projection requires a fixed-output net");
  Eigen::MatrixXd u = b.coords * P.transpose();
  if (net.has_biases()) u.rowwise() += net.hidden_bias.transpose();
  Eigen::MatrixXd act(u.rows(), u.cols()), deriv(u.rows(), u.cols());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    act(i) = activate(net.activation, u(i));
    deriv(i) = activate_derivative(net.activation, u(i));
  }
  const Eigen::VectorXd h = act * net.output.row(0).transpose();
  Eigen::VectorXd row_scale(b.size());
  for (int i = 0; i < b.size(); ++i) row_scale[i] = (b.y[i] * h[i] <= 1.0) ? b.y[i] : 0.0;
  deriv.array().colwise() *= row_scale.array();
  deriv.array().rowwise() *= net.output.row(0).array();
  return deriv;
}

}  // namespace

GradientProjectionAll population_gradient_projections(const TwoLayerNet& net, const DataModel& data, int n,
                                                      Rng& rng) {
  if (n < 2) throw std::invalid_argument("population estimate needs at least two samples");
  const int m = net.width(), d0 = data.dist.d0();
  const Eigen::MatrixXd P = net.hidden * data.dict.columns;
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, d0), sum_sq = Eigen::MatrixXd::Zero(m, d0);
  constexpr int kChunk = 10000;
  for (int done = 0; done < n;) {
    const int take = std::min(kChunk, n - done);
    const Batch b = data.sample(Regime::ID, take, rng, false);
    const Eigen::MatrixXd r = example_gradient_factors(net, P, b);
    sum.noalias() += r.transpose() * b.coords;
    sum_sq.noalias() += r.array().square().matrix().transpose() * b.coords.array().square().matrix();
    done += take;
  }
  GradientProjectionAll out;
  out.n = n;
  out.estimate = sum / n;
  const Eigen::ArrayXXd var = ((sum_sq.array() - n * out.estimate.array().square()) / (n - 1)).max(0.0);
  out.stderr_ = (var / n).sqrt().matrix();
  return out;
}

GradientProjection population_gradient_projection(const TwoLayerNet& net, const DataModel& data, int j, int n,
                                                  Rng& rng) {
  if (j < 0 || j >= data.dist.d0()) throw std::out_of_range("feature index out of range");
  const GradientProjectionAll all = population_gradient_projections(net, data, n, rng);
  return {all.estimate.col(j), all.stderr_.col(j), all.n};
}

Eigen::VectorXd batch_gradient_projection(const TwoLayerNet& net, const DataModel& data, const Batch& batch, int j) {
  if (j < 0 || j >= data.dist.d0()) throw std::out_of_range("feature index out of range");
  const Eigen::MatrixXd P = net.hidden * data.dict.columns;
  const Eigen::MatrixXd r = example_gradient_factors(net, P, batch);
  return (r.transpose() * batch.coords.col(j)) / static_cast<double>(batch.size());
}

Snapshot take_snapshot(long iteration, const TwoLayerNet& net, const DataModel& data, const SnapshotOptions& opts,
                       Rng& rng) {
  Snapshot s;
  s.proj = projections(net, data.dict);
  s.neurons = neuron_summaries(s.proj, data.dist, net, opts.membership_c);
  s.record.iteration = iteration;
  s.record.risk = risk_report(net, data, opts.loss, opts.n_eval, rng);
  s.stats = empirical_activation_rates(net, data, Regime::ID, opts.n_rate_per_class, rng);

  MetricRecord& r = s.record;
  const int m = net.width();
  double core_sum = 0.0, bg_sum = 0.0, gap_sum = 0.0, abs_bg = 0.0, sel_sum = 0.0;
  int members = 0, asym = 0;
  for (int k = 0; k < m; ++k) {
    const NeuronSummary& n = s.neurons[k];
    abs_bg += std::abs(n.bg_corr);
    const double rp = s.stats.rate_pos(k), rn = s.stats.rate_neg(k);
    if (rp >= 0.9 && rn <= 0.1) ++asym;
    const double means[2] = {s.stats.mean_activation(k, 0), s.stats.mean_activation(k, 1)};
    sel_sum += selectivity(means);
    if (!n.member()) continue;
    ++members;
    r.members_pos += n.member_pos;
    r.members_neg += n.member_neg;
    core_sum += n.output_sign * n.core_corr;
    bg_sum += n.bg_corr;
    gap_sum += rp - rn;
  }
  r.mean_core_corr = members ? core_sum / members : kNaN;
  r.mean_bg_corr = members ? bg_sum / members : kNaN;
  r.act_gap = members ? gap_sum / members : kNaN;
  r.mean_selectivity = sel_sum / m;
  r.mean_abs_bg_corr = abs_bg / m;
  r.asymmetric_fraction = static_cast<double>(asym) / m;
  r.max_abs_bg_projection =
      data.dist.n_core < s.proj.P.cols() ? s.proj.P.rightCols(s.proj.P.cols() - data.dist.n_core).cwiseAbs().maxCoeff()
                                         : 0.0;
  return s;
}

}  // namespace contamlab
