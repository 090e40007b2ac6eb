// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "contamlab/experiments.hpp"
#include "contamlab/rng.hpp"

namespace contamlab {

namespace calibration {

double expected_member_fraction(double c) {
  // y core_corr + bg_corr is a sum of d0 terms with variance mu^2 / d each.
  return 0.5 * 0.5 * std::erfc(2.0 * c / std::numbers::sqrt2);
}

// Pilot: 3 x 10 init seeds (base seeds 101, 202, 303) at d=256, d0=64, m=256
// gave a largest sqrt(d0) max |h| of 0.345.
const double kInitOutputConstant = 0.6;

}  // namespace calibration

bool VerificationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

namespace {

constexpr double kFdStep = 1e-5;
constexpr double kKinkMargin = 1e-3;
constexpr double kGradientTolerance = 1e-5;
constexpr int kMaxCoordinates = 200;

// Parameter view for the finite-difference walk: (block, flat index).
struct ParamRef {
  int block;
  Eigen::Index index;
};

double& param_at(TwoLayerNet& net, const ParamRef& r) {
  switch (r.block) {
    case 0: return net.hidden(r.index);
    case 1: return net.output(r.index);
    case 2: return net.hidden_bias(r.index);
    default: return net.output_bias(r.index);
  }
}

double grad_at(const Gradients& g, const ParamRef& r) {
  switch (r.block) {
    case 0: return g.hidden(r.index);
    case 1: return g.output(r.index);
    case 2: return g.hidden_bias(r.index);
    default: return g.output_bias(r.index);
  }
}

bool kink_free(const TwoLayerNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets, LossKind kind) {
  const Eigen::MatrixXd u = pre_activations(net, x);
  if (net.activation == Activation::ReLU && (u.array().abs() <= kKinkMargin).any()) return false;
  if (kind == LossKind::Hinge) {
    const Eigen::MatrixXd out = forward_batch(net, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (std::abs(1.0 - targets(i, 0) * out(i, 0)) <= kKinkMargin) return false;
  }
  return true;
}

double relative_fd_error(TwoLayerNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                         LossKind kind, const Gradients& g, Rng& rng) {
  std::vector<ParamRef> refs;
  for (Eigen::Index i = 0; i < net.hidden.size(); ++i) refs.push_back({0, i});
  if (net.mode == NetMode::General) {
    for (Eigen::Index i = 0; i < net.output.size(); ++i) refs.push_back({1, i});
    for (Eigen::Index i = 0; i < net.hidden_bias.size(); ++i) refs.push_back({2, i});
    for (Eigen::Index i = 0; i < net.output_bias.size(); ++i) refs.push_back({3, i});
  }
  if (static_cast<int>(refs.size()) > kMaxCoordinates) {
    std::shuffle(refs.begin(), refs.end(), rng);
    refs.resize(kMaxCoordinates);
  }
  double diff2 = 0.0, g2 = 0.0, fd2 = 0.0;
  for (const ParamRef& r : refs) {
    double& p = param_at(net, r);
    const double saved = p;
    p = saved + kFdStep;
    const double up = mean_loss(kind, forward_batch(net, x), targets);
    p = saved - kFdStep;
    const double down = mean_loss(kind, forward_batch(net, x), targets);
    p = saved;
    const double fd = (up - down) / (2.0 * kFdStep);
    const double an = grad_at(g, r);
    diff2 += (an - fd) * (an - fd);
    g2 += an * an;
    fd2 += fd * fd;
  }
  const double scale = std::max({std::sqrt(g2), std::sqrt(fd2), 1e-12});
  return std::sqrt(diff2) / scale;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

CheckResult check_gradients(int d, int m, int n_configs, std::uint64_t seed) {
  CheckResult res{"gradient-finite-difference", true, 0.0, kGradientTolerance, ""};
  Rng rng(split_seed(seed, streams::kVerify));
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr Activation kActs[] = {Activation::ReLU, Activation::Identity, Activation::GELU, Activation::Sigmoid,
                                  Activation::Tanh};
  int checked = 0, skipped = 0;
  for (int c = 0; c < n_configs; ++c) {
    const std::uint64_t cseed = rng();
    const bool fixed = c % 2 == 0;
    const int batch = 2 + c % 3;
    bool done = false;
    for (int attempt = 0; attempt < 200 && !done; ++attempt) {
      TwoLayerNet net;
      LossKind kind;
      Eigen::MatrixXd targets;
      const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(batch, d, [&] { return normal(rng); });
      if (fixed) {
        net = init_classification_net(d, m, cseed + attempt, (c / 2) % 2 ? Activation::Identity : Activation::ReLU);
        kind = LossKind::Hinge;
        targets.resize(batch, 1);
        for (int i = 0; i < batch; ++i) targets(i, 0) = normal(rng) >= 0 ? 1.0 : -1.0;
      } else {
        kind = (c / 2) % 2 ? LossKind::MSE : LossKind::Hinge;
        const int out_dim = kind == LossKind::Hinge ? 1 : 1 + c % 3;
        net = init_general_net(d, m, out_dim, kActs[(c / 2) % 5], cseed + attempt);
        for (Eigen::Index i = 0; i < net.hidden_bias.size(); ++i) net.hidden_bias[i] = 0.1 * normal(rng);
        for (Eigen::Index i = 0; i < net.output_bias.size(); ++i) net.output_bias[i] = 0.1 * normal(rng);
        targets.resize(batch, out_dim);
        for (Eigen::Index i = 0; i < targets.size(); ++i)
          targets(i) = kind == LossKind::Hinge ? (normal(rng) >= 0 ? 1.0 : -1.0) : normal(rng);
      }
      if (!kink_free(net, x, targets, kind)) {
        ++skipped;
        continue;
      }
      const Gradients g = compute_gradients(net, x, targets, kind);
      const double err = relative_fd_error(net, x, targets, kind, g, rng);
      res.measured = std::max(res.measured, err);
      ++checked;
      done = true;
    }
  }
  res.passed = checked == n_configs && res.measured <= res.threshold;
  res.detail = "d=" + std::to_string(d) + " m=" + std::to_string(m) + " configs=" + std::to_string(checked) + "/" +
               std::to_string(n_configs) + " rejected=" + std::to_string(skipped);
  return res;
}

CheckResult check_orthonormality(const FeatureDictionary& dict, double tol) {
  const OrthonormalityError e = orthonormality_error(dict);
  CheckResult res{"dictionary-orthonormality", false, std::max(e.max_norm_deviation, e.max_cross_product), tol, ""};
  res.passed = res.measured <= tol;
  res.detail = "norm dev " + fmt(e.max_norm_deviation) + ", cross " + fmt(e.max_cross_product);
  return res;
}

CheckResult check_init_membership(const Dims& dims, int n_seeds, std::uint64_t seed) {
  const double centre = calibration::expected_member_fraction(1.0);
  CheckResult res{"init-member-fraction", true, 0.0, calibration::kMemberFractionHalfWidth, ""};
  double lo = 1.0, hi = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t run = split_seed(seed, 1000 + s);
    const FeatureDictionary dict =
        build_dictionary(dims.d, dims.n_core, dims.n_bg, split_seed(run, streams::kDictionary));
    const FeatureDistribution dist = default_distribution(dict);
    const TwoLayerNet net = init_classification_net(dims.d, dims.m, split_seed(run, streams::kInit));
    const auto neurons = neuron_summaries(projections(net, dict), dist, net, 1.0);
    int pos = 0, neg = 0;
    for (const auto& n : neurons) {
      pos += n.member_pos;
      neg += n.member_neg;
    }
    for (int count : {pos, neg}) {
      const double f = static_cast<double>(count) / dims.m;
      lo = std::min(lo, f);
      hi = std::max(hi, f);
      res.measured = std::max(res.measured, std::abs(f - centre));
    }
  }
  res.passed = res.measured <= res.threshold;
  res.detail = "centre " + fmt(centre) + ", per-class fractions in [" + fmt(lo) + ", " + fmt(hi) + "]";
  return res;
}

CheckResult check_init_output_magnitude(const Dims& dims, int n_seeds, std::uint64_t seed) {
  CheckResult res{"init-output-magnitude", true, 0.0, calibration::kInitOutputConstant, ""};
  for (int s = 0; s < n_seeds; ++s) {
    const std::uint64_t run = split_seed(seed, 2000 + s);
    DataModel data;
    data.dict = build_dictionary(dims.d, dims.n_core, dims.n_bg, split_seed(run, streams::kDictionary));
    data.dist = default_distribution(data.dict);
    const TwoLayerNet net = init_classification_net(dims.d, dims.m, split_seed(run, streams::kInit));
    Rng rng(split_seed(run, streams::kEval));
    const Batch b = data.sample(Regime::ID, 100, rng);
    const double max_h = forward_batch(net, b.x).cwiseAbs().maxCoeff();
    res.measured = std::max(res.measured, max_h * std::sqrt(static_cast<double>(dims.d0())));
  }
  res.passed = res.measured <= res.threshold;
  res.detail = "max |h| sqrt(d0) over " + std::to_string(n_seeds) + " seeds";
  return res;
}

CheckResult check_berry_esseen(int n_neurons, int n_samples, std::uint64_t seed) {
  constexpr double kTolerance = 0.1;
  constexpr int kD = 256;
  CheckResult res{"berry-esseen-vs-monte-carlo", false, 0.0, kTolerance, ""};
  double mean_dev[3] = {0, 0, 0};
  const int d0s[3] = {16, 64, 128};
  for (int t = 0; t < 3; ++t) {
    const int d0 = d0s[t];
    const std::uint64_t run = split_seed(seed, 3000 + d0);
    DataModel data;
    data.dict = build_dictionary(kD, d0 / 2, d0 / 2, split_seed(run, streams::kDictionary));
    data.dist = default_distribution(data.dict);
    const TwoLayerNet net = init_classification_net(kD, n_neurons, split_seed(run, streams::kInit));
    const Eigen::MatrixXd P = net.hidden * data.dict.columns;
    Rng rng(split_seed(run, streams::kVerify));
    double max_dev = 0.0, sum_dev = 0.0;
    std::vector<double> row(d0);
    for (int y : {1, -1}) {
      const Batch b = data.sample_class(Regime::ID, y, n_samples, rng);
      const Eigen::MatrixXd u = pre_activations(net, b.x);
      for (int k = 0; k < n_neurons; ++k) {
        const double mc = (u.col(k).array() >= 0.0).cast<double>().mean();
        for (int j = 0; j < d0; ++j) row[j] = P(k, j);
        const double dev = std::abs(mc - berry_esseen_rate(row, data.dist, y).rate);
        max_dev = std::max(max_dev, dev);
        sum_dev += dev;
      }
    }
    mean_dev[t] = sum_dev / (2.0 * n_neurons);
    if (d0 == 64) res.measured = max_dev;
  }
  const bool shrinks = mean_dev[2] < mean_dev[0];
  res.passed = res.measured <= kTolerance && shrinks;
  res.detail = "mean deviation d0=16: " + fmt(mean_dev[0]) + ", d0=64: " + fmt(mean_dev[1]) +
               ", d0=128: " + fmt(mean_dev[2]) + (shrinks ? "" : " (does not shrink with d0)");
  return res;
}

CheckResult check_background_cancellation(const TwoLayerNet& net, const DataModel& data, int n,
                                          std::uint64_t seed) {
  constexpr double kSigmas = 3.0;
  CheckResult res{"background-gradient-cancellation", true, 0.0, kSigmas, ""};
  Rng rng(split_seed(seed, streams::kVerify));
  const GradientProjectionAll g = population_gradient_projections(net, data, n, rng);
  int worst_j = -1;
  for (int j : data.dict.bg_indices) {
    for (int k = 0; k < net.width(); ++k) {
      const double est = g.estimate(k, j), se = g.stderr_(k, j);
      const double z = se > 0.0 ? std::abs(est) / se : (est == 0.0 ? 0.0 : INFINITY);
      if (z > res.measured) {
        res.measured = z;
        worst_j = j;
      }
    }
  }
  res.passed = res.measured <= kSigmas;
  res.detail = "n=" + std::to_string(n) + ", worst feature " + std::to_string(worst_j);
  return res;
}

CheckResult check_gradient_gap_ladder(const Dims& dims, std::uint64_t seed) {
  constexpr int kBatches[] = {10, 100, 1000, 10000};
  constexpr int kRepeats = 20;
  constexpr int kPopulation = 1000000;
  CheckResult res{"batch-gradient-gap-ladder", false, 0.0, 1.0, ""};
  const std::uint64_t run = split_seed(seed, 4000);
  DataModel data;
  data.dict = build_dictionary(dims.d, dims.n_core, dims.n_bg, split_seed(run, streams::kDictionary));
  data.dist = default_distribution(data.dict);
  const TwoLayerNet net = init_classification_net(dims.d, dims.m, split_seed(run, streams::kInit));
  const int j = data.dict.bg_indices.front();
  Rng rng(split_seed(run, streams::kVerify));
  const Eigen::VectorXd pop = population_gradient_projection(net, data, j, kPopulation, rng).estimate;
  std::vector<double> gaps;
  for (int b : kBatches) {
    double sum = 0.0;
    for (int r = 0; r < kRepeats; ++r) {
      const Batch batch = data.sample(Regime::ID, b, rng, false);
      sum += (batch_gradient_projection(net, data, batch, j) - pop).norm();
    }
    gaps.push_back(sum / kRepeats);
  }
  std::ostringstream os;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    if (i) {
      res.measured = std::max(res.measured, gaps[i] / gaps[i - 1]);
      os << ", ";
    }
    os << "B=" << kBatches[i] << ": " << fmt(gaps[i]);
  }
  res.passed = res.measured < res.threshold;
  res.detail = os.str();
  return res;
}

VerificationReport verify_suite(const ExperimentConfig& config) {
  const Dims& dims = config.dims;
  const std::uint64_t seed = config.seed;
  VerificationReport report;
  report.checks.push_back(check_gradients(6, 4, 100, seed));
  CheckResult big = check_gradients(dims.d, dims.m, 100, split_seed(seed, 1));
  big.name += "-full-size";
  report.checks.push_back(big);
  report.checks.push_back(check_orthonormality(
      build_dictionary(dims.d, dims.n_core, dims.n_bg, split_seed(seed, streams::kDictionary))));
  report.checks.push_back(check_init_membership(dims, 20, seed));
  report.checks.push_back(check_init_output_magnitude(dims, 20, seed));
  report.checks.push_back(check_berry_esseen(100, 100000, seed));
  {
    DataModel data;
    data.dict = build_dictionary(dims.d, dims.n_core, dims.n_bg, split_seed(seed, streams::kDictionary));
    data.dist = default_distribution(data.dict);
    const TwoLayerNet net =
        init_classification_net(dims.d, dims.m, split_seed(seed, streams::kInit), Activation::Identity);
    report.checks.push_back(check_background_cancellation(net, data, 100000, seed));
  }
  report.checks.push_back(check_gradient_gap_ladder(dims, seed));
  return report;
}

}  // namespace contamlab
