// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace contamlab {

enum class Activation { ReLU, Identity, GELU, Sigmoid, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

double activate(Activation a, double u);
/// Derivative of the activation. ReLU'(0) is 1, matching the >= 0 indicator.
double activate_derivative(Activation a, double u);

enum class NetMode { FixedOutput, General };

/// Two-layer network  h(x) = A sigma(W x + b) + b_out.
///
/// In FixedOutput (classification) mode A is a single row of +-1/m entries
/// that never changes, and there are no biases. In General mode every
/// parameter is trainable.
struct TwoLayerNet {
  NetMode mode = NetMode::FixedOutput;
  Activation activation = Activation::ReLU;
  Eigen::MatrixXd hidden;       // m x d, row k is w_k
  Eigen::MatrixXd output;       // out_dim x m
  Eigen::VectorXd hidden_bias;  // m (General mode only, else empty)
  Eigen::VectorXd output_bias;  // out_dim (General mode only, else empty)

  int width() const { return static_cast<int>(hidden.rows()); }
  int input_dim() const { return static_cast<int>(hidden.cols()); }
  int output_dim() const { return static_cast<int>(output.rows()); }
  bool has_biases() const { return hidden_bias.size() > 0; }
  /// Sign of the output weight of neuron k (first output row).
  int output_sign(int k) const { return output(0, k) >= 0 ? 1 : -1; }
  void validate() const;
};

/// Hidden rows i.i.d. N(0, 1/d); a_k uniform on {-1/m, +1/m}; fixed output.
TwoLayerNet init_classification_net(int d, int m, std::uint64_t seed,
                                    Activation activation = Activation::ReLU);
/// Hidden N(0, 1/d), output N(0, 1/m), zero biases, everything trainable.
TwoLayerNet init_general_net(int d, int m, int out_dim, Activation activation, std::uint64_t seed);

Eigen::VectorXd forward(const TwoLayerNet& net, const Eigen::Ref<const Eigen::VectorXd>& x);
/// Rows of `x` are inputs; returns n x out_dim.
Eigen::MatrixXd forward_batch(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x);
/// Rows are examples: n x m pre-activations W x + b.
Eigen::MatrixXd pre_activations(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x);

enum class LossKind { Hinge, MSE };

const char* to_string(LossKind l);
LossKind loss_from_string(const std::string& name);

/// Hinge: max{1 - y yhat, 0} with scalar output and target {y}. MSE: mean
/// squared coordinate error.
double loss(LossKind kind, const Eigen::Ref<const Eigen::VectorXd>& prediction,
            const Eigen::Ref<const Eigen::VectorXd>& target);
/// Mean loss over the rows of predictions/targets.
double mean_loss(LossKind kind, const Eigen::Ref<const Eigen::MatrixXd>& predictions,
                 const Eigen::Ref<const Eigen::MatrixXd>& targets);

/// Batch-mean gradient of the hinge data term with respect to each w_k, in
/// closed form  -a_k y 1{y h(x) <= 1} sigma'(<w_k, x>) x.  Requires
/// FixedOutput mode with ReLU or Identity activation. Rows of `x` are inputs.
Eigen::MatrixXd grad_hinge_fixed_output(const TwoLayerNet& net,
                                        const Eigen::Ref<const Eigen::MatrixXd>& x,
                                        const Eigen::Ref<const Eigen::VectorXd>& y);

/// Gradients shaped like the trainable parameters. Members that are not
/// trainable in the net's mode are left empty.
struct Gradients {
  Eigen::MatrixXd hidden;
  Eigen::MatrixXd output;
  Eigen::VectorXd hidden_bias;
  Eigen::VectorXd output_bias;
};

/// Exact gradient of the mean batch loss (data term only) for General-mode
/// nets. Targets are n x out_dim (labels in a single column for Hinge).
Gradients backprop_general(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           const Eigen::Ref<const Eigen::MatrixXd>& targets, LossKind kind);

/// Dispatches to the closed form for FixedOutput nets (hidden gradient only)
/// and to backprop otherwise.
Gradients compute_gradients(const TwoLayerNet& net, const Eigen::Ref<const Eigen::MatrixXd>& x,
                            const Eigen::Ref<const Eigen::MatrixXd>& targets, LossKind kind);

enum class OptimizerKind { SGD, AdamW };

const char* to_string(OptimizerKind o);
OptimizerKind optimizer_from_string(const std::string& name);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// w <- (1 - eta*lambda) w - eta g, elementwise.
void sgd_update(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::Ref<const Eigen::MatrixXd>& grad,
                double eta, double lambda);

/// One decoupled-weight-decay adaptive update of a single parameter block.
/// `step` is the 1-based step index used for bias correction.
void adamw_update(Eigen::Ref<Eigen::MatrixXd> param, const Eigen::Ref<const Eigen::MatrixXd>& grad,
                  Eigen::Ref<Eigen::MatrixXd> first_moment, Eigen::Ref<Eigen::MatrixXd> second_moment,
                  long step, double eta, double lambda, const AdamWHyper& hyper);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  AdamWHyper hyper;
  long step = 0;
  Gradients first_moment;
  Gradients second_moment;

  static OptimizerState for_net(OptimizerKind kind, const TwoLayerNet& net, AdamWHyper hyper = {});
};

/// Applies one SGD step to every trainable parameter of `net`. In FixedOutput
/// mode only the hidden weights move.
void sgd_step(TwoLayerNet& net, const Gradients& grads, double eta, double lambda);
void adamw_step(OptimizerState& state, TwoLayerNet& net, const Gradients& grads, double eta,
                double lambda);
/// Dispatches on state.kind.
void optimizer_step(OptimizerState& state, TwoLayerNet& net, const Gradients& grads, double eta,
                    double lambda);

}  // namespace contamlab
