// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "contamlab/network.hpp"
#include "oracles.hpp"

using namespace contamlab;

namespace {

constexpr Activation kAll[] = {Activation::ReLU, Activation::Identity, Activation::GELU, Activation::Sigmoid,
                               Activation::Tanh};

Eigen::MatrixXd gaussian(int r, int c, std::mt19937_64& g, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  return Eigen::MatrixXd::NullaryExpr(r, c, [&] { return n(g); });
}

Eigen::VectorXd labels(int n, std::mt19937_64& g) {
  std::bernoulli_distribution b(0.5);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = b(g) ? 1.0 : -1.0;
  return y;
}

double mean_hinge(const TwoLayerNet& net, const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  double s = 0.0;
  for (int i = 0; i < X.rows(); ++i) s += oracle::hinge(y[i], oracle::forward(net, oracle::row(X, i))[0]);
  return s / X.rows();
}

double mean_mse(const TwoLayerNet& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& T) {
  double s = 0.0;
  for (int i = 0; i < X.rows(); ++i) {
    const auto out = oracle::forward(net, oracle::row(X, i));
    for (int o = 0; o < T.cols(); ++o) s += (out[o] - T(i, o)) * (out[o] - T(i, o)) / T.cols();
  }
  return s / X.rows();
}

}  // namespace

TEST(Activation, NamesRoundTrip) {
  for (Activation a : kAll) EXPECT_EQ(activation_from_string(to_string(a)), a);
  EXPECT_THROW(activation_from_string("swish"), std::invalid_argument);
}

TEST(Activation, ValuesAndDerivatives) {
  for (Activation a : kAll) {
    for (double u : {-2.3, -0.4, 0.3, 1.7}) {
      EXPECT_NEAR(activate(a, u), oracle::act(a, u), 1e-14);
      const double fd = (oracle::act(a, u + 1e-6) - oracle::act(a, u - 1e-6)) / 2e-6;
      EXPECT_NEAR(activate_derivative(a, u), fd, 1e-8) << to_string(a) << " at " << u;
    }
  }
  EXPECT_EQ(activate_derivative(Activation::ReLU, 0.0), 1.0);
  EXPECT_EQ(activate_derivative(Activation::ReLU, -1e-300), 0.0);
}

TEST(Init, ClassificationNetStatistics) {
  const int d = 200, m = 400;
  const TwoLayerNet net = init_classification_net(d, m, 3);
  EXPECT_EQ(net.mode, NetMode::FixedOutput);
  EXPECT_FALSE(net.has_biases());
  EXPECT_NEAR(net.hidden.array().square().mean(), 1.0 / d, 0.03 / d);
  EXPECT_NEAR(net.hidden.mean(), 0.0, 5.0 / std::sqrt(d * m) / std::sqrt(d));
  int pos = 0;
  for (int k = 0; k < m; ++k) {
    EXPECT_DOUBLE_EQ(std::abs(net.output(0, k)), 1.0 / m);
    pos += net.output(0, k) > 0;
  }
  EXPECT_NEAR(pos, m / 2, 4 * std::sqrt(m / 4.0));
  EXPECT_EQ(init_classification_net(d, m, 3).hidden, net.hidden);
}

TEST(Init, GeneralNetStatistics) {
  const TwoLayerNet net = init_general_net(128, 300, 4, Activation::Tanh, 9);
  EXPECT_EQ(net.mode, NetMode::General);
  EXPECT_EQ(net.output_dim(), 4);
  EXPECT_NEAR(net.output.array().square().mean(), 1.0 / 300, 0.1 / 300);
  EXPECT_TRUE((net.hidden_bias.array() == 0.0).all());
  EXPECT_TRUE((net.output_bias.array() == 0.0).all());
}

TEST(Forward, MatchesLoopOracle) {
  std::mt19937_64 g(1);
  for (Activation a : kAll) {
    TwoLayerNet net = init_general_net(7, 5, 3, a, 2);
    net.hidden_bias = gaussian(5, 1, g);
    net.output_bias = gaussian(3, 1, g);
    const Eigen::MatrixXd X = gaussian(6, 7, g);
    const Eigen::MatrixXd out = forward_batch(net, X);
    for (int i = 0; i < 6; ++i) {
      const auto expect = oracle::forward(net, oracle::row(X, i));
      const Eigen::VectorXd single = forward(net, X.row(i).transpose());
      for (int o = 0; o < 3; ++o) {
        EXPECT_NEAR(out(i, o), expect[o], 1e-13);
        EXPECT_NEAR(single[o], expect[o], 1e-13);
      }
    }
  }
}

TEST(Forward, RejectsWrongInputWidth) {
  const TwoLayerNet net = init_classification_net(5, 3, 0);
  EXPECT_THROW(forward_batch(net, Eigen::MatrixXd::Zero(2, 4)), std::invalid_argument);
}

TEST(Loss, HingeAndMseExamples) {
  Eigen::VectorXd p(1), t(1);
  p << 0.3;
  t << 1.0;
  EXPECT_DOUBLE_EQ(loss(LossKind::Hinge, p, t), 0.7);
  p << 2.0;
  EXPECT_DOUBLE_EQ(loss(LossKind::Hinge, p, t), 0.0);
  t << -1.0;
  EXPECT_DOUBLE_EQ(loss(LossKind::Hinge, p, t), 3.0);
  Eigen::VectorXd a(2), b(2);
  a << 1.0, 3.0;
  b << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(loss(LossKind::MSE, a, b), 2.5);
}

TEST(HingeGradient, ClosedFormMatchesLoopOracle) {
  std::mt19937_64 g(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Activation a = trial % 2 ? Activation::Identity : Activation::ReLU;
    TwoLayerNet net = init_classification_net(9, 6, trial, a);
    if (trial % 3 == 0) net.output *= 200.0;  // puts some examples past the margin
    const Eigen::MatrixXd X = gaussian(12, 9, g);
    const Eigen::VectorXd y = labels(12, g);
    const Eigen::MatrixXd got = grad_hinge_fixed_output(net, X, y);
    EXPECT_LT((got - oracle::hinge_gradient(net, X, y)).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(HingeGradient, MatchesFiniteDifferences) {
  std::mt19937_64 g(5);
  int checked = 0;
  for (int trial = 0; trial < 40 && checked < 20; ++trial) {
    TwoLayerNet net = init_classification_net(6, 4, trial, trial % 2 ? Activation::Identity : Activation::ReLU);
    net.output *= 4.0;
    const Eigen::MatrixXd X = gaussian(3, 6, g);
    const Eigen::VectorXd y = labels(3, g);
    const Eigen::MatrixXd U = X * net.hidden.transpose();
    bool kink = net.activation == Activation::ReLU && (U.array().abs() < 1e-3).any();
    for (int i = 0; i < 3; ++i) kink |= std::abs(1 - y[i] * oracle::forward(net, oracle::row(X, i))[0]) < 1e-3;
    if (kink) continue;
    const Eigen::MatrixXd analytic = grad_hinge_fixed_output(net, X, y);
    const Eigen::MatrixXd fd = oracle::central_difference(net.hidden, [&] { return mean_hinge(net, X, y); });
    EXPECT_LE((analytic - fd).norm(), 1e-6 * std::max(1.0, fd.norm()));
    ++checked;
  }
  EXPECT_EQ(checked, 20);
}

TEST(HingeGradient, RejectsUnsupportedNets) {
  const TwoLayerNet general = init_general_net(4, 3, 1, Activation::ReLU, 0);
  EXPECT_THROW(grad_hinge_fixed_output(general, Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Ones(2)),
               std::invalid_argument);
  const TwoLayerNet tanh_net = init_classification_net(4, 3, 0, Activation::Tanh);
  EXPECT_THROW(grad_hinge_fixed_output(tanh_net, Eigen::MatrixXd::Zero(2, 4), Eigen::VectorXd::Ones(2)),
               std::invalid_argument);
}

TEST(Backprop, MatchesFiniteDifferencesForEveryActivationAndLoss) {
  std::mt19937_64 g(6);
  for (Activation a : kAll) {
    for (LossKind kind : {LossKind::Hinge, LossKind::MSE}) {
      const int out_dim = kind == LossKind::Hinge ? 1 : 3;
      TwoLayerNet net = init_general_net(5, 4, out_dim, a, 11);
      net.hidden_bias = gaussian(4, 1, g, 0.3);
      net.output_bias = gaussian(out_dim, 1, g, 0.3);
      const Eigen::MatrixXd X = gaussian(4, 5, g);
      Eigen::MatrixXd T = kind == LossKind::Hinge ? Eigen::MatrixXd(labels(4, g)) : gaussian(4, out_dim, g);
      if (a == Activation::ReLU && ((X * net.hidden.transpose()).rowwise() + net.hidden_bias.transpose())
                                           .array()
                                           .abs()
                                           .minCoeff() < 1e-3)
        continue;
      auto f = [&] { return kind == LossKind::Hinge ? mean_hinge(net, X, T.col(0)) : mean_mse(net, X, T); };
      const Gradients an = backprop_general(net, X, T, kind);
      const Eigen::MatrixXd fd_w = oracle::central_difference(net.hidden, f);
      const Eigen::MatrixXd fd_a = oracle::central_difference(net.output, f);
      Eigen::MatrixXd hb = net.hidden_bias, ob = net.output_bias;
      auto f_hb = [&] {
        net.hidden_bias = hb;
        return f();
      };
      const Eigen::MatrixXd fd_hb = oracle::central_difference(hb, f_hb);
      net.hidden_bias = hb;
      auto f_ob = [&] {
        net.output_bias = ob;
        return f();
      };
      const Eigen::MatrixXd fd_ob = oracle::central_difference(ob, f_ob);
      net.output_bias = ob;
      const std::string tag = std::string(to_string(a)) + "/" + to_string(kind);
      EXPECT_LT((an.hidden - fd_w).cwiseAbs().maxCoeff(), 1e-7) << tag;
      EXPECT_LT((an.output - fd_a).cwiseAbs().maxCoeff(), 1e-7) << tag;
      EXPECT_LT((an.hidden_bias - fd_hb).cwiseAbs().maxCoeff(), 1e-7) << tag;
      EXPECT_LT((an.output_bias - fd_ob).cwiseAbs().maxCoeff(), 1e-7) << tag;
    }
  }
}

TEST(Backprop, AgreesWithClosedFormOnFixedHead) {
  std::mt19937_64 g(7);
  for (Activation a : {Activation::ReLU, Activation::Identity}) {
    const TwoLayerNet fixed = init_classification_net(8, 6, 3, a);
    TwoLayerNet general = fixed;
    general.mode = NetMode::General;
    general.hidden_bias = Eigen::VectorXd::Zero(6);
    general.output_bias = Eigen::VectorXd::Zero(1);
    const Eigen::MatrixXd X = gaussian(10, 8, g);
    const Eigen::VectorXd y = labels(10, g);
    const Gradients gg = backprop_general(general, X, y, LossKind::Hinge);
    EXPECT_LT((gg.hidden - grad_hinge_fixed_output(fixed, X, y)).cwiseAbs().maxCoeff(), 1e-15);
    const Gradients cg = compute_gradients(fixed, X, y, LossKind::Hinge);
    EXPECT_EQ(cg.output.size(), 0);
  }
}

TEST(Sgd, UpdateRuleExample) {
  Eigen::MatrixXd w(1, 2), g(1, 2);
  w << 1.0, -2.0;
  g << 0.5, 0.0;
  sgd_update(w, g, 0.1, 0.01);
  EXPECT_NEAR(w(0, 0), 0.999 - 0.05, 1e-15);
  EXPECT_NEAR(w(0, 1), -2.0 * 0.999, 1e-15);
  EXPECT_THROW(sgd_update(w, Eigen::MatrixXd::Zero(2, 1), 0.1, 0.0), std::invalid_argument);
}

TEST(Sgd, FixedOutputHeadNeverMoves) {
  TwoLayerNet net = init_classification_net(5, 4, 1);
  const Eigen::MatrixXd head = net.output;
  Gradients g;
  g.hidden = Eigen::MatrixXd::Ones(4, 5);
  OptimizerState st = OptimizerState::for_net(OptimizerKind::SGD, net);
  optimizer_step(st, net, g, 0.1, 0.1);
  EXPECT_EQ(net.output, head);
}

TEST(AdamW, FiveStepScalarTrace) {
  const double eta = 0.01, lambda = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[5] = {0.5, -1.0, 2.0, 0.0, 0.3};
  double w = 1.5, m = 0.0, v = 0.0;
  Eigen::MatrixXd p(1, 1), M = Eigen::MatrixXd::Zero(1, 1), V = Eigen::MatrixXd::Zero(1, 1), G(1, 1);
  p(0, 0) = w;
  for (int t = 1; t <= 5; ++t) {
    const double gt = grads[t - 1];
    m = b1 * m + (1 - b1) * gt;
    v = b2 * v + (1 - b2) * gt * gt;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    w = w - eta * lambda * w - eta * mh / (std::sqrt(vh) + eps);
    G(0, 0) = gt;
    adamw_update(p, G, M, V, t, eta, lambda, {b1, b2, eps});
    EXPECT_NEAR(p(0, 0), w, 1e-14) << "step " << t;
  }
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Constant(2, 2, 3.0), z = Eigen::MatrixXd::Zero(2, 2);
  Eigen::MatrixXd M = z, V = z;
  adamw_update(p, z, M, V, 1, 0.1, 0.5, {});
  EXPECT_TRUE((p.array() == 3.0 * (1 - 0.05)).all());
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
  // With bias correction the first step has magnitude eta (up to eps).
  TwoLayerNet net = init_general_net(3, 2, 1, Activation::Tanh, 0);
  const TwoLayerNet before = net;
  Gradients g;
  g.hidden = Eigen::MatrixXd::Constant(2, 3, -4.0);
  g.output = Eigen::MatrixXd::Constant(1, 2, 0.25);
  g.hidden_bias = Eigen::VectorXd::Constant(2, 1e-3);
  g.output_bias = Eigen::VectorXd::Constant(1, -2.0);
  OptimizerState st = OptimizerState::for_net(OptimizerKind::AdamW, net);
  optimizer_step(st, net, g, 0.01, 0.0);
  EXPECT_EQ(st.step, 1);
  EXPECT_LT((net.hidden - before.hidden - Eigen::MatrixXd::Constant(2, 3, 0.01)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((net.output - before.output + Eigen::MatrixXd::Constant(1, 2, 0.01)).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_NEAR(net.output_bias[0], 0.01, 1e-9);
}
