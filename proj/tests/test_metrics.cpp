// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "contamlab/metrics.hpp"
#include "oracles.hpp"

using namespace contamlab;

namespace {

DataModel model(int d, int n_core, int n_bg, std::uint64_t seed) {
  DataModel data;
  data.dict = build_dictionary(d, n_core, n_bg, seed);
  data.dist = default_distribution(data.dict);
  return data;
}

// Fixed-output net whose hidden rows are the given dictionary combinations.
TwoLayerNet net_from_projections(const DataModel& data, const Eigen::MatrixXd& P, const Eigen::VectorXd& a,
                                 Activation act = Activation::ReLU) {
  TwoLayerNet net = init_classification_net(data.dict.d, static_cast<int>(P.rows()), 0, act);
  net.hidden = P * data.dict.columns.transpose();
  net.output.row(0) = a.transpose();
  return net;
}

}  // namespace

TEST(Projections, RecoverCoefficientsAndResidual) {
  const DataModel data = model(30, 3, 3, 1);
  Eigen::MatrixXd P(2, 6);
  P << 1, 2, 3, 4, 5, 6, -1, 0, 0, 0, 0, 0.5;
  TwoLayerNet net = net_from_projections(data, P, Eigen::VectorXd::Constant(2, 0.5));
  // A direction orthogonal to the dictionary.
  Eigen::VectorXd r = Eigen::VectorXd::Unit(30, 0);
  r -= data.dict.columns * (data.dict.columns.transpose() * r);
  r *= 0.7 / r.norm();
  net.hidden.row(1) += r.transpose();
  const ProjectionMatrix pm = projections(net, data.dict);
  EXPECT_LT((pm.P - P).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(pm.residual_norms[0], 0.0, 1e-6);
  EXPECT_NEAR(pm.residual_norms[1], 0.7, 1e-12);
}

TEST(Membership, ThresholdAndSummaries) {
  EXPECT_DOUBLE_EQ(membership_threshold(64, 256, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(membership_threshold(16, 64, 2.0), 1.0);
  const DataModel data = model(40, 2, 2, 3);
  // threshold sqrt(4/40) = 0.316
  Eigen::MatrixXd P(4, 4);
  P << 1.0, 0.0, 0.0, 0.0,  // core_corr 0.5
      -1.0, 0.0, 0.0, 0.0,  // core_corr -0.5
      0.0, 0.0, 1.0, 0.0,   // bg_corr 0.5
      0.1, 0.0, 0.0, 0.0;   // core_corr 0.05
  Eigen::VectorXd a(4);
  a << 0.25, -0.25, -0.25, 0.25;
  const TwoLayerNet net = net_from_projections(data, P, a);
  const auto s = neuron_summaries(projections(net, data.dict), data.dist, net, 1.0);
  EXPECT_NEAR(s[0].core_corr, 0.5, 1e-12);
  EXPECT_NEAR(s[2].bg_corr, 0.5, 1e-12);
  EXPECT_TRUE(s[0].member_pos);
  EXPECT_FALSE(s[0].member_neg);
  EXPECT_TRUE(s[1].member_neg);  // y = -1: -(-0.5) + 0 >= 0.316
  EXPECT_FALSE(s[2].member_pos);
  EXPECT_TRUE(s[2].member_neg);  // -0 + 0.5 >= 0.316 with a < 0
  EXPECT_FALSE(s[3].member());
}

TEST(BerryEsseen, ClosedFormExamples) {
  const DataModel data = model(16, 2, 2, 0);
  const std::vector<double> row = {1.0, 0.0, 0.0, 0.0};
  // mean y/2, sd sqrt(1/12)
  EXPECT_NEAR(berry_esseen_rate(row, data.dist, 1).rate, 0.958368, 1e-6);
  EXPECT_NEAR(berry_esseen_rate(row, data.dist, -1).rate, 1 - 0.958368, 1e-6);
  const std::vector<double> bal = {1.0, 0.0, 1.0, 0.0};
  EXPECT_NEAR(berry_esseen_rate(bal, data.dist, -1).rate, 0.5, 1e-15);
  const std::vector<double> zero(4, 0.0);
  const RateEstimate z = berry_esseen_rate(zero, data.dist, 1);
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.rate, 0.5);
  EXPECT_NEAR(class_mean_preactivation(bal, data.dist, 1), 1.0, 1e-15);
  EXPECT_NEAR(class_mean_preactivation(bal, data.dist, -1), 0.0, 1e-15);
}

TEST(BerryEsseen, AgreesWithMonteCarloOnWideNeurons) {
  const DataModel data = model(128, 32, 32, 2);
  const TwoLayerNet net = init_classification_net(128, 20, 4);
  Rng rng(5);
  const ActivationStats st = empirical_activation_rates(net, data, Regime::ID, 20000, rng);
  for (int k = 0; k < 20; ++k)
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(st.rate(k, c), st.berry_esseen(k, c), 0.03);
}

TEST(ActivationStats, PositiveExamplesFollowOutputSign) {
  const DataModel data = model(40, 4, 4, 3);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(2, 8);
  P.row(0).head(4).setConstant(1.0);   // fires on y = +1 only
  P.row(1).head(4).setConstant(-1.0);  // fires on y = -1 only
  Eigen::VectorXd a(2);
  a << 0.5, -0.5;
  const TwoLayerNet net = net_from_projections(data, P, a);
  Rng rng(1);
  const ActivationStats st = empirical_activation_rates(net, data, Regime::ID, 500, rng);
  for (int k = 0; k < 2; ++k) {
    EXPECT_DOUBLE_EQ(st.rate_pos(k), 1.0);
    EXPECT_DOUBLE_EQ(st.rate_neg(k), 0.0);
    EXPECT_GT(st.be_pos(k), 0.999);
    EXPECT_LT(st.be_neg(k), 0.001);
  }
  EXPECT_DOUBLE_EQ(st.rate(1, 0), 0.0);
}

TEST(ActivationStats, BerryEsseenOnlyForLinearId) {
  DataModel data = model(40, 4, 4, 3);
  const TwoLayerNet net = init_classification_net(40, 3, 0);
  Rng rng(1);
  EXPECT_TRUE(empirical_activation_rates(net, data, Regime::OOD, 10, rng).berry_esseen.array().isNaN().all());
  data.mode = CoreMode::Nonlinear;
  EXPECT_TRUE(empirical_activation_rates(net, data, Regime::ID, 10, rng).berry_esseen.array().isNaN().all());
}

TEST(Selectivity, Examples) {
  const std::vector<double> one_hot = {2.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(selectivity(one_hot), 1.5 / (2.5 + 1e-6), 1e-15);
  EXPECT_NEAR(selectivity(one_hot), 0.5999998, 1e-7);
  const std::vector<double> flat = {0.3, 0.3};
  EXPECT_EQ(selectivity(flat), 0.0);
  const std::vector<double> two = {1.0, 0.0};
  EXPECT_NEAR(selectivity(two), 0.5 / 1.5, 1e-6);
  EXPECT_THROW(selectivity(std::vector<double>{}), std::invalid_argument);
}

TEST(Histogram, BinsAndEdges) {
  const std::vector<double> rates = {0.0, 0.05, 0.1, 0.5, 0.99, 1.0};
  const std::vector<int> h = activation_rate_histogram(rates, 10);
  const std::vector<int> expect = {2, 1, 0, 0, 0, 1, 0, 0, 0, 2};
  EXPECT_EQ(h, expect);
  EXPECT_THROW(activation_rate_histogram(std::vector<double>{1.2}, 4), std::invalid_argument);
  EXPECT_THROW(activation_rate_histogram(rates, 0), std::invalid_argument);
}

TEST(Risk, ZeroNetHasUnitHingeRisk) {
  const DataModel data = model(32, 4, 4, 1);
  TwoLayerNet net = init_classification_net(32, 8, 0);
  net.hidden.setZero();
  Rng rng(2);
  const RiskReport r = risk_report(net, data, LossKind::Hinge, 500, rng);
  EXPECT_DOUBLE_EQ(r.id_risk, 1.0);
  EXPECT_DOUBLE_EQ(r.ood_risk, 1.0);
  EXPECT_DOUBLE_EQ(r.id_error, 1.0);
  EXPECT_EQ(r.id_risk_stderr, 0.0);
  EXPECT_EQ(r.n_eval, 500);
}

TEST(Risk, RegressionTargetsAreSignedCoreCoordinates) {
  const DataModel data = model(32, 4, 4, 1);
  Rng rng(3);
  const Batch b = data.sample(Regime::ID, 20, rng);
  const Eigen::MatrixXd t = loss_targets(b, LossKind::MSE, 4);
  ASSERT_EQ(t.cols(), 4);
  EXPECT_LT((t - b.x * data.dict.columns.leftCols(4)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_EQ(loss_targets(b, LossKind::Hinge, 4), Eigen::MatrixXd(b.y));
}

TEST(Risk, ZeroRegressorRiskIsSecondMoment) {
  const DataModel data = model(32, 4, 4, 1);
  TwoLayerNet net = init_general_net(32, 8, 4, Activation::ReLU, 0);
  net.output.setZero();
  Rng rng(4);
  const RiskReport r = risk_report(net, data, LossKind::MSE, 20000, rng);
  EXPECT_NEAR(r.id_risk, 1.0 / 3.0, 4 * r.id_risk_stderr);
  EXPECT_NEAR(r.ood_risk, 1.0 / 3.0, 4 * r.ood_risk_stderr);
}

TEST(GradientProjection, BatchMatchesClosedFormGradient) {
  const DataModel data = model(48, 4, 4, 2);
  TwoLayerNet net = init_classification_net(48, 10, 3);
  net.output *= 30.0;
  Rng rng(6);
  const Batch b = data.sample(Regime::ID, 64, rng);
  const Eigen::MatrixXd g = oracle::hinge_gradient(net, b.x, b.y);
  for (int j = 0; j < 8; ++j) {
    const Eigen::VectorXd expect = -g * data.dict.columns.col(j);
    EXPECT_LT((batch_gradient_projection(net, data, b, j) - expect).cwiseAbs().maxCoeff(), 1e-13);
  }
  EXPECT_THROW(batch_gradient_projection(net, data, b, 8), std::out_of_range);
}

TEST(GradientProjection, IdentityCancelsAndAsymmetricReluContaminates) {
  const DataModel data = model(64, 4, 4, 7);
  Rng rng(8);
  const TwoLayerNet linear = init_classification_net(64, 6, 2, Activation::Identity);
  const GradientProjectionAll lin = population_gradient_projections(linear, data, 40000, rng);
  for (int j = 4; j < 8; ++j)
    for (int k = 0; k < 6; ++k) EXPECT_LT(std::abs(lin.estimate(k, j)), 4 * lin.stderr_(k, j));

  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(1, 8);
  P.row(0).head(4).setConstant(1.0);
  const TwoLayerNet relu = net_from_projections(data, P, Eigen::VectorXd::Constant(1, 0.1));
  const GradientProjectionAll rel = population_gradient_projections(relu, data, 40000, rng);
  for (int j = 4; j < 8; ++j) EXPECT_GT(rel.estimate(0, j), 10 * rel.stderr_(0, j));
  const GradientProjection one = population_gradient_projection(relu, data, 5, 1000, rng);
  EXPECT_EQ(one.estimate.size(), 1);
  EXPECT_EQ(one.n, 1000);
}

TEST(Snapshot, EmptyMemberSetGivesNaNAggregates) {
  const DataModel data = model(32, 4, 4, 1);
  TwoLayerNet net = init_classification_net(32, 8, 0);
  net.hidden.setZero();
  Rng rng(2);
  const Snapshot s = take_snapshot(0, net, data, {LossKind::Hinge, 200, 100, 1.0}, rng);
  EXPECT_EQ(s.record.members_pos + s.record.members_neg, 0);
  EXPECT_TRUE(std::isnan(s.record.mean_core_corr));
  EXPECT_TRUE(std::isnan(s.record.mean_bg_corr));
  EXPECT_TRUE(std::isnan(s.record.act_gap));
  EXPECT_EQ(s.record.mean_selectivity, 0.0);
}

TEST(Snapshot, TraceMatchesClassMeans) {
  const DataModel data = model(32, 4, 4, 1);
  const TwoLayerNet net = init_classification_net(32, 8, 5);
  const ProjectionMatrix pm = projections(net, data.dict);
  const std::vector<int> probes = {1, 6};
  const auto trace = class_correlation_trace(pm, data.dist, probes, -1);
  for (int i = 0; i < 2; ++i) {
    double expect = 0.0;
    for (int j = 0; j < 8; ++j) expect += (j < 4 ? -0.5 : 0.5) * pm.P(probes[i], j);
    EXPECT_NEAR(trace[i], expect, 1e-14);
  }
  const std::vector<int> bad = {8};
  EXPECT_THROW(class_correlation_trace(pm, data.dist, bad, 1), std::out_of_range);
}
