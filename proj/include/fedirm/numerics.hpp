#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedirm/matrix.hpp"

namespace fedirm {

struct LayerShape {
  std::size_t out = 0;
  std::size_t in = 0;
  bool operator==(const LayerShape&) const = default;
};

/// One affine layer: weight is out x in, bias has length out.
struct Layer {
  Matrix weight;
  std::vector<double> bias;
};

/// Ordered collection of all trainable weights of a model. Two sets combine
/// (add, average, ...) only when their shape signatures are identical.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(std::vector<Layer> layers) : layers_(std::move(layers)) {}

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t layer_count() const { return layers_.size(); }

  std::vector<LayerShape> shape_signature() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  /// Zero-valued set with the same shape signature.
  ParameterSet zeros_like() const;

  /// this += alpha * other. Shape signatures must match.
  void add_scaled(const ParameterSet& other, double alpha);
  void scale(double alpha);
  void fill(double value);

  /// Flat row-major view (layer order, weight then bias). Used by the
  /// finite-difference harness and by checkpoints.
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
  double get_flat(std::size_t index) const;
  void set_flat(std::size_t index, double value);

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Layer> layers_;
};

enum class Activation { ReLU, Tanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// A multilayer perceptron classifier: configurable hidden widths, one
/// dropout layer before the output affine layer, softmax head.
struct Network {
  ParameterSet params;
  Activation activation = Activation::ReLU;
  double dropout_rate = 0.3;
  std::size_t class_count = 0;

  std::size_t input_dim() const {
    return params.layers().empty() ? 0 : params.layers().front().weight.cols();
  }
};

/// Fan-in scaled uniform init, seeded. hidden must contain at least one width.
Network make_network(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                     std::size_t classes, Activation activation, double dropout_rate,
                     std::uint64_t init_seed);

enum class Pass { Train, Eval };

struct ForwardOutput {
  Matrix logits;
  Matrix probs;
};

/// Everything the reverse pass needs. `pre[l]` are pre-activation values of
/// affine layer l (the last entry is the logits), `act[l]` the values fed into
/// affine layer l+1 (post activation, post dropout for the last hidden layer).
struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;
  std::vector<Matrix> act;
  Matrix dropout_mask;  // empty in eval mode or when rate == 0
  Matrix probs;

  const Matrix& logits() const { return pre.back(); }
};

/// Forward pass. In eval mode dropout is the identity; in train mode the
/// dropout mask is a pure function of `dropout_seed` (inverted dropout, so
/// eval needs no rescaling). Throws InvalidInput on a shape mismatch.
ForwardOutput forward(const Network& net, const Matrix& batch, Pass pass,
                      std::uint64_t dropout_seed = 0);

ForwardTrace forward_trace(const Network& net, const Matrix& batch, Pass pass,
                           std::uint64_t dropout_seed = 0);

/// Reverse pass: gradient of a scalar loss w.r.t. every parameter, given the
/// loss gradient w.r.t. the logits.
ParameterSet backprop(const Network& net, const ForwardTrace& trace,
                      const Matrix& logit_grad);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

/// d(loss)/d(logits row) from d(loss)/d(probs row), for probs = softmax(logits).
void softmax_vjp_row(const double* probs, const double* prob_grad, double* logit_grad,
                     std::size_t n);

/// Softened softmax: s_j = exp(v_j / tau) / sum_k exp(v_k / tau), computed with
/// max subtraction. Requires tau > 0 and finite v.
std::vector<double> temperature_softmax(const std::vector<double>& v, double tau);

/// Gradient of a scalar loss w.r.t. v given s = temperature_softmax(v, tau)
/// and d(loss)/ds.
std::vector<double> temperature_softmax_vjp(const std::vector<double>& s,
                                            const std::vector<double>& s_grad, double tau);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  bool operator==(const AdamConfig&) const = default;
};

/// Adam accumulators shaped like the parameters they update.
class OptimizerState {
 public:
  OptimizerState(const ParameterSet& like, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  long step() const { return step_; }
  const ParameterSet& first_moment() const { return m_; }
  const ParameterSet& second_moment() const { return v_; }

  friend void adam_step(ParameterSet& params, const ParameterSet& grads,
                        OptimizerState& state);

 private:
  ParameterSet m_;
  ParameterSet v_;
  long step_ = 0;
  AdamConfig config_;
};

/// Standard Adam update with bias correction. Increments the step counter.
void adam_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state);

}  // namespace fedirm
