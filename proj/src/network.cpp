// SPDX-License-Identifier: Apache-2.0
#include "contamlab/network.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "contamlab/rng.hpp"

namespace contamlab {

namespace {

double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::numbers::sqrt2); }
double normal_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

[[noreturn]] void dimension_error(const char* what, long got, long expected) {
  std::ostringstream os;
  os << what << ": got dimension " << got << ", expected " << expected;
  throw std::invalid_argument(os.str());
}

}  // namespace

const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::GELU: return "gelu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "identity" || name == "linear") return Activation::Identity;
  if (name == "gelu") return Activation::GELU;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

double activate(Activation a, double u) {
  switch (a) {
    case Activation::ReLU: return u > 0.0 ? u : 0.0;
    case Activation::Identity: return u;
    case Activation::GELU: return u * normal_cdf(u);
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-u));
    case Activation::Tanh: return std::tanh(u);
  }
  return 0.0;
}

double activate_derivative(Activation a, double u) {
  switch (a) {
    case Activation::ReLU: return u >= 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
    case Activation::GELU: return normal_cdf(u) + u * normal_pdf(u);
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-u));
      return s * (1.0 - s);
    }
    case Activation::Tanh: {
      const double t = std::tanh(u);
      return 1.0 - t * t;
    }
  }
  return 0.0;
}

void TwoLayerNet::validate() const {
  if (output.cols() != hidden.rows()) dimension_error("output layer width", output.cols(), hidden.rows());
  if (mode == NetMode::FixedOutput) {
    if (output.rows() != 1) dimension_error("fixed-output head", output.rows(), 1);
    if (has_biases() || output_bias.size() > 0)
      throw std::invalid_argument("fixed-output nets carry no biases");
  } else {
    if (hidden_bias.size() != hidden.rows()) dimension_error("hidden bias", hidden_bias.size(), hidden.rows());
    if (output_bias.size() != output.rows()) dimension_error("output bias", output_bias.size(), output.rows());
  }
}

TwoLayerNet init_classification_net(int d, int m, std::uint64_t seed, Activation activation) {
  if (d < 1 || m < 1) throw std::invalid_argument("network dimensions must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  std::bernoulli_distribution coin(0.5);
  TwoLayerNet net;
  net.mode = NetMode::FixedOutput;
  net.activation = activation;
  net.hidden.resize(m, d);
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < d; ++i) net.hidden(k, i) = normal(rng);
  net.output.resize(1, m);
  for (int k = 0; k < m; ++k) net.output(0, k) = (coin(rng) ? 1.0 : -1.0) / m;
  return net;
}

TwoLayerNet init_general_net(int d, int m, int out_dim, Activation activation, std::uint64_t seed) {
  if (d < 1 || m < 1 || out_dim < 1) throw std::invalid_argument("network dimensions must be positive");
  Rng rng(seed);
  std::normal_distribution<double> hidden_dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  std::normal_distribution<double> output_dist(0.0, 1.0 / std::sqrt(static_cast<double>(m)));
  TwoLayerNet net;
  net.mode = NetMode::General;
  net.activation = activation;
  net.hidden.resize(m, d);
  for (int k = 0; k < m; ++k)
    for (int i = 0; i < d; ++i) net.hidden(k, i) = hidden_dist(rng);
  net.output.resize(out_dim, m);
  for (int o = 0; o < out_dim; ++o)
    for (int k = 0; k < m; ++k) net.output(o, k) = output_dist(rng);
  net.hidden_bias = Eigen::VectorXd::Zero(m);
  net.output_bias = Eigen::VectorXd::Zero(out_dim);
  return net;
}

Eigen::MatrixXd pre_activations(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  if (x.cols() != net.input_dim()) dimension_error("input", x.cols(), net.input_dim());
  Eigen::MatrixXd u = x * net.hidden.transpose();
  if (net.has_biases()) u.rowwise() += net.hidden_bias.transpose();
  return u;
}

namespace {

Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& u) {
  switch (a) {
    case Activation::ReLU: return u.cwiseMax(0.0);
    case Activation::Identity: return u;
    default: return u.unaryExpr([a](double v) { return activate(a, v); });
  }
}

Eigen::MatrixXd apply_derivative(Activation a, const Eigen::MatrixXd& u) {
  switch (a) {
    case Activation::ReLU: return (u.array() >= 0.0).cast<double>().matrix();
    case Activation::Identity: return Eigen::MatrixXd::Ones(u.rows(), u.cols());
    default: return u.unaryExpr([a](double v) { return activate_derivative(a, v); });
  }
}

Eigen::MatrixXd head(const TwoLayerNet& net, const Eigen::MatrixXd& hidden_out) {
  Eigen::MatrixXd out = hidden_out * net.output.transpose();
  if (net.output_bias.size() > 0) out.rowwise() += net.output_bias.transpose();
  return out;
}

// dLoss/dOutput for each row, already divided by the batch size.
Eigen::MatrixXd output_delta(LossKind kind, const Eigen::MatrixXd& out, const Eigen::Ref<const Eigen::MatrixXd>& targets) {
  const double n = static_cast<double>(out.rows());
  Eigen::MatrixXd delta(out.rows(), out.cols());
  if (kind == LossKind::Hinge) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double y = targets(i, 0);
      delta(i, 0) = (y * out(i, 0) <= 1.0) ? -y / n : 0.0;
    }
  } else {
    delta = (out - targets) * (2.0 / (n * static_cast<double>(out.cols())));
  }
  return delta;
}

}  // namespace

Eigen::MatrixXd forward_batch(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x) {
  return head(net, apply_activation(net.activation, pre_activations(net, x)));
}

Eigen::VectorXd forward(const TwoLayerNet& net, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != net.input_dim()) dimension_error("input", x.size(), net.input_dim());
  Eigen::VectorXd u = net.hidden * x;
  if (net.has_biases()) u += net.hidden_bias;
  Eigen::VectorXd h = u.unaryExpr([&](double v) { return activate(net.activation, v); });
  Eigen::VectorXd out = net.output * h;
  if (net.output_bias.size() > 0) out += net.output_bias;
  return out;
}

const char* to_string(LossKind l) { return l == LossKind::Hinge ? "hinge" : "mse"; }

LossKind loss_from_string(const std::string& name) {
  if (name == "hinge") return LossKind::Hinge;
  if (name == "mse") return LossKind::MSE;
  throw std::invalid_argument("unknown loss '" + name + "'");
}

double loss(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& prediction,
            const Eigen::Ref<const Eigen::VectorXd>& target) {
  if (kind == LossKind::Hinge) {
    if (prediction.size() != 1 || target.size() != 1)
      throw std::invalid_argument("hinge loss needs a scalar prediction and label");
    return std::max(1.0 - target[0] * prediction[0], 0.0);
  }
  if (prediction.size() != target.size()) dimension_error("MSE target", target.size(), prediction.size());
  return (prediction - target).squaredNorm() / static_cast<double>(prediction.size());
}

double mean_loss(LossKind kind, const Eigen::Ref<const Eigen::MatrixXd>& predictions,
                 const Eigen::Ref<const Eigen::MatrixXd>& targets) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    dimension_error("target rows", targets.rows(), predictions.rows());
  const double n = static_cast<double>(predictions.rows());
  if (kind == LossKind::Hinge) {
    if (predictions.cols() != 1) throw std::invalid_argument("hinge loss needs a scalar prediction");
    return (1.0 - targets.col(0).array() * predictions.col(0).array()).cwiseMax(0.0).sum() / n;
  }
  return (predictions - targets).squaredNorm() / (n * static_cast<double>(predictions.cols()));
}

Eigen::MatrixXd grad_hinge_fixed_output(const TwoLayerNet& net,
                                        const Eigen::Ref<const Eigen::MatrixXd>& x,
                                        const Eigen::Ref<const Eigen::VectorXd>& y) {
  if (net.mode != NetMode::FixedOutput)
    throw std::invalid_argument("closed-form hinge gradient requires a fixed-output net");
  if (net.activation != Activation::ReLU && net.activation != Activation::Identity)
    throw std::invalid_argument("closed-form hinge gradient supports ReLU and Identity only");
  if (y.size() != x.rows()) dimension_error("labels", y.size(), x.rows());

  Eigen::MatrixXd u = pre_activations(net, x);
  const Eigen::RowVectorXd a = net.output.row(0);
  const bool relu = net.activation == Activation::ReLU;
  Eigen::VectorXd h;
  if (relu)
    h.noalias() = u.cwiseMax(0.0) * a.transpose();
  else
    h.noalias() = u * a.transpose();
  const double n = static_cast<double>(x.rows());
  // coef(i,k) = -a_k y_i 1{y_i h(x_i) <= 1} 1{<w_k, x_i> >= 0} / n, built in place of u.
  Eigen::ArrayXd row_scale(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) row_scale[i] = (y[i] * h[i] <= 1.0) ? -y[i] / n : 0.0;
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    if (relu)
      u.col(k).array() = (u.col(k).array() >= 0.0).cast<double>() * row_scale * a[k];
    else
      u.col(k) = row_scale * a[k];
  }
  Eigen::MatrixXd grad(u.cols(), x.cols());
  grad.noalias() = u.transpose() * x;
  return grad;
}

Gradients backprop_general(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           const Eigen::Ref<const Eigen::MatrixXd>& targets, LossKind kind) {
  if (net.mode != NetMode::General) throw std::invalid_argument("backprop_general requires a general-mode net");
  if (kind == LossKind::Hinge && net.output_dim() != 1)
    throw std::invalid_argument("hinge loss requires a scalar output");
  if (targets.cols() != net.output_dim()) dimension_error("target width", targets.cols(), net.output_dim());

  const Eigen::MatrixXd u = pre_activations(net, x);
  const Eigen::MatrixXd hidden_out = apply_activation(net.activation, u);
  const Eigen::MatrixXd out = head(net, hidden_out);
  const Eigen::MatrixXd delta_out = output_delta(kind, out, targets);

  Gradients g;
  g.output = delta_out.transpose() * hidden_out;
  g.output_bias = delta_out.colwise().sum().transpose();
  Eigen::MatrixXd delta_hidden = delta_out * net.output;
  delta_hidden.array() *= apply_derivative(net.activation, u).array();
  g.hidden = delta_hidden.transpose() * x;
  g.hidden_bias = delta_hidden.colwise().sum().transpose();
  return g;
}

Gradients compute_gradients(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const Eigen::Ref<const Eigen::MatrixXd>& targets, LossKind kind) {
  if (net.mode == NetMode::FixedOutput) {
    if (kind != LossKind::Hinge) throw std::invalid_argument("fixed-output nets train with the hinge loss");
    Gradients g;
    g.hidden = grad_hinge_fixed_output(net, x, targets.col(0));
    return g;
  }
  return backprop_general(net, x, targets, kind);
}

const char* to_string(OptimizerKind o) { return o == OptimizerKind::SGD ? "sgd" : "adamw"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::SGD;
  if (name == "adamw") return OptimizerKind::AdamW;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

void sgd_update(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::Ref<const Eigen::MatrixXd>& grad,
                double eta, double lambda) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw std::invalid_argument("gradient shape does not match parameter shape");
  param = (1.0 - eta * lambda) * param - eta * grad;
}

void adamw_update(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::Ref<const Eigen::MatrixXd>& grad,
                  Eigen::Ref<Eigen::MatrixXd> first_moment, Eigen::Ref<Eigen::MatrixXd> second_moment,
                  long step, double eta, double lambda, const AdamWHyper& hyper) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      first_moment.rows() != grad.rows() || first_moment.cols() != grad.cols() ||
      second_moment.rows() != grad.rows() || second_moment.cols() != grad.cols())
    throw std::invalid_argument("AdamW state shape does not match parameter shape");
  if (step < 1) throw std::invalid_argument("AdamW step index is 1-based");
  first_moment = hyper.beta1 * first_moment + (1.0 - hyper.beta1) * grad;
  second_moment = hyper.beta2 * second_moment + (1.0 - hyper.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  param.array() = param.array() * (1.0 - eta * lambda) -
                  eta * (first_moment.array() / c1) / ((second_moment.array() / c2).sqrt() + hyper.eps);
}

OptimizerState OptimizerState::for_net(OptimizerKind kind, const TwoLayerNet& net, AdamWHyper hyper) {
  OptimizerState s;
  s.kind = kind;
  s.hyper = hyper;
  if (kind == OptimizerKind::AdamW) {
    for (Gradients* g : {&s.first_moment, &s.second_moment}) {
      g->hidden = Eigen::MatrixXd::Zero(net.hidden.rows(), net.hidden.cols());
      if (net.mode == NetMode::General) {
        g->output = Eigen::MatrixXd::Zero(net.output.rows(), net.output.cols());
        g->hidden_bias = Eigen::VectorXd::Zero(net.hidden_bias.size());
        g->output_bias = Eigen::VectorXd::Zero(net.output_bias.size());
      }
    }
  }
  return s;
}

void sgd_step(TwoLayerNet& net, const Gradients& grads, double eta, double lambda) {
  sgd_update(net.hidden, grads.hidden, eta, lambda);
  if (net.mode == NetMode::General) {
    sgd_update(net.output, grads.output, eta, lambda);
    sgd_update(net.hidden_bias, grads.hidden_bias, eta, lambda);
    sgd_update(net.output_bias, grads.output_bias, eta, lambda);
  }
}

void adamw_step(OptimizerState& state, TwoLayerNet& net, const Gradients& grads, double eta,
                double lambda) {
  if (state.kind != OptimizerKind::AdamW) throw std::invalid_argument("optimizer state is not AdamW");
  const long t = ++state.step;
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  adamw_update(net.hidden, grads.hidden, m.hidden, v.hidden, t, eta, lambda, state.hyper);
  if (net.mode == NetMode::General) {
    adamw_update(net.output, grads.output, m.output, v.output, t, eta, lambda, state.hyper);
    adamw_update(net.hidden_bias, grads.hidden_bias, m.hidden_bias, v.hidden_bias, t, eta, lambda, state.hyper);
    adamw_update(net.output_bias, grads.output_bias, m.output_bias, v.output_bias, t, eta, lambda, state.hyper);
  }
}

void optimizer_step(OptimizerState& state, TwoLayerNet& net, const Gradients& grads, double eta,
                    double lambda) {
  if (state.kind == OptimizerKind::AdamW) {
    adamw_step(state, net, grads, eta, lambda);
  } else {
    ++state.step;
    sgd_step(net, grads, eta, lambda);
  }
}

}  // namespace contamlab
