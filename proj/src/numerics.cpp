#include "fedirm/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "fedirm/rng.hpp"

namespace fedirm {

std::vector<LayerShape> ParameterSet::shape_signature() const {
  std::vector<LayerShape> sig;
  sig.reserve(layers_.size());
  for (const auto& l : layers_) sig.push_back({l.weight.rows(), l.weight.cols()});
  return sig;
}

std::size_t ParameterSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool ParameterSet::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.all_finite()) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

ParameterSet ParameterSet::zeros_like() const {
  std::vector<Layer> layers;
  layers.reserve(layers_.size());
  for (const auto& l : layers_) {
    layers.push_back({Matrix(l.weight.rows(), l.weight.cols()),
                      std::vector<double>(l.bias.size(), 0.0)});
  }
  return ParameterSet(std::move(layers));
}

void ParameterSet::add_scaled(const ParameterSet& other, double alpha) {
  if (shape_signature() != other.shape_signature())
    throw InvalidInput("ParameterSet::add_scaled: shape signature mismatch");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& dst = layers_[i];
    const auto& src = other.layers_[i];
    for (std::size_t k = 0; k < dst.weight.size(); ++k)
      dst.weight.data()[k] += alpha * src.weight.data()[k];
    for (std::size_t k = 0; k < dst.bias.size(); ++k) dst.bias[k] += alpha * src.bias[k];
  }
}

void ParameterSet::scale(double alpha) {
  for (auto& l : layers_) {
    for (double& v : l.weight.data()) v *= alpha;
    for (double& b : l.bias) b *= alpha;
  }
}

void ParameterSet::fill(double value) {
  for (auto& l : layers_) {
    for (double& v : l.weight.data()) v = value;
    for (double& b : l.bias) b = value;
  }
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& l : layers_) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void ParameterSet::unflatten(const std::vector<double>& flat) {
  if (flat.size() != parameter_count())
    throw InvalidInput("ParameterSet::unflatten: size mismatch");
  std::size_t pos = 0;
  for (auto& l : layers_) {
    std::copy(flat.begin() + pos, flat.begin() + pos + l.weight.size(),
              l.weight.data().begin());
    pos += l.weight.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
}

double ParameterSet::get_flat(std::size_t index) const {
  for (const auto& l : layers_) {
    if (index < l.weight.size()) return l.weight.data()[index];
    index -= l.weight.size();
    if (index < l.bias.size()) return l.bias[index];
    index -= l.bias.size();
  }
  throw InvalidInput("ParameterSet::get_flat: index out of range");
}

void ParameterSet::set_flat(std::size_t index, double value) {
  for (auto& l : layers_) {
    if (index < l.weight.size()) {
      l.weight.data()[index] = value;
      return;
    }
    index -= l.weight.size();
    if (index < l.bias.size()) {
      l.bias[index] = value;
      return;
    }
    index -= l.bias.size();
  }
  throw InvalidInput("ParameterSet::set_flat: index out of range");
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!(layers_[i].weight == other.layers_[i].weight)) return false;
    if (layers_[i].bias != other.layers_[i].bias) return false;
  }
  return true;
}

std::string to_string(Activation a) {
  return a == Activation::ReLU ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "tanh") return Activation::Tanh;
  throw InvalidInput("unknown activation: " + name);
}

Network make_network(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                     std::size_t classes, Activation activation, double dropout_rate,
                     std::uint64_t init_seed) {
  if (input_dim == 0 || classes == 0) throw InvalidInput("make_network: zero dimension");
  if (hidden.empty()) throw InvalidInput("make_network: at least one hidden layer required");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw InvalidInput("make_network: dropout rate must be in [0, 1)");

  Rng rng(mix_seed(init_seed, 0x1717));
  std::vector<Layer> layers;
  std::size_t fan_in = input_dim;
  auto push_layer = [&](std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer l{Matrix(out, fan_in), std::vector<double>(out)};
    for (double& v : l.weight.data()) v = rng.uniform(-bound, bound);
    for (double& b : l.bias) b = rng.uniform(-bound, bound);
    layers.push_back(std::move(l));
    fan_in = out;
  };
  for (std::size_t width : hidden) push_layer(width);
  push_layer(classes);

  Network net;
  net.params = ParameterSet(std::move(layers));
  net.activation = activation;
  net.dropout_rate = dropout_rate;
  net.class_count = classes;
  return net;
}

namespace {

double activate(Activation a, double x) {
  return a == Activation::ReLU ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

double activate_grad(Activation a, double pre, double post) {
  return a == Activation::ReLU ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

// out = in (B x fan_in) * W^T (fan_in x fan_out) + b
Matrix affine(const Matrix& in, const Layer& layer) {
  const std::size_t b = in.rows();
  const std::size_t fan_in = layer.weight.cols();
  const std::size_t fan_out = layer.weight.rows();
  Matrix out(b, fan_out);
  for (std::size_t i = 0; i < b; ++i) {
    const double* x = in.row(i);
    double* y = out.row(i);
    for (std::size_t o = 0; o < fan_out; ++o) {
      const double* w = layer.weight.row(o);
      double acc = layer.bias[o];
      for (std::size_t k = 0; k < fan_in; ++k) acc += w[k] * x[k];
      y[o] = acc;
    }
  }
  return out;
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const double* z = logits.row(i);
    double* p = probs.row(i);
    double m = z[0];
    for (std::size_t c = 1; c < logits.cols(); ++c) m = std::max(m, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      p[c] = std::exp(z[c] - m);
      sum += p[c];
    }
    for (std::size_t c = 0; c < logits.cols(); ++c) p[c] /= sum;
  }
  return probs;
}

void softmax_vjp_row(const double* probs, const double* prob_grad, double* logit_grad,
                     std::size_t n) {
  double dot = 0.0;
  for (std::size_t c = 0; c < n; ++c) dot += probs[c] * prob_grad[c];
  for (std::size_t c = 0; c < n; ++c) logit_grad[c] = probs[c] * (prob_grad[c] - dot);
}

std::vector<double> temperature_softmax(const std::vector<double>& v, double tau) {
  if (tau <= 0.0) throw InvalidInput("temperature_softmax: tau must be positive");
  if (v.empty()) throw InvalidInput("temperature_softmax: empty input");
  for (double x : v)
    if (!std::isfinite(x)) throw InvalidInput("temperature_softmax: non-finite input");

  double m = v[0] / tau;
  for (double x : v) m = std::max(m, x / tau);
  std::vector<double> s(v.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    s[j] = std::exp(v[j] / tau - m);
    sum += s[j];
  }
  for (double& x : s) x /= sum;
  return s;
}

std::vector<double> temperature_softmax_vjp(const std::vector<double>& s,
                                            const std::vector<double>& s_grad, double tau) {
  double dot = 0.0;
  for (std::size_t j = 0; j < s.size(); ++j) dot += s[j] * s_grad[j];
  std::vector<double> v_grad(s.size());
  for (std::size_t j = 0; j < s.size(); ++j)
    v_grad[j] = s[j] * (s_grad[j] - dot) / tau;
  return v_grad;
}

ForwardTrace forward_trace(const Network& net, const Matrix& batch, Pass pass,
                           std::uint64_t dropout_seed) {
  const auto& layers = net.params.layers();
  if (layers.empty()) throw InvalidInput("forward: network has no layers");
  if (batch.rows() == 0) throw InvalidInput("forward: empty batch");
  if (batch.cols() != net.input_dim())
    throw InvalidInput("forward: batch width does not match network input dimension");

  ForwardTrace trace;
  trace.input = batch;
  const std::size_t affine_count = layers.size();
  const Matrix* current = &trace.input;

  for (std::size_t l = 0; l < affine_count; ++l) {
    trace.pre.push_back(affine(*current, layers[l]));
    if (l + 1 == affine_count) break;
    Matrix post(trace.pre[l].rows(), trace.pre[l].cols());
    for (std::size_t k = 0; k < post.size(); ++k)
      post.data()[k] = activate(net.activation, trace.pre[l].data()[k]);

    const bool last_hidden = (l + 2 == affine_count);
    if (last_hidden && pass == Pass::Train && net.dropout_rate > 0.0) {
      Rng rng(mix_seed(dropout_seed, 0xD120));
      const double keep_scale = 1.0 / (1.0 - net.dropout_rate);
      trace.dropout_mask = Matrix(post.rows(), post.cols());
      for (std::size_t k = 0; k < post.size(); ++k) {
        const double keep = rng.uniform() >= net.dropout_rate ? keep_scale : 0.0;
        trace.dropout_mask.data()[k] = keep;
        post.data()[k] *= keep;
      }
    }
    trace.act.push_back(std::move(post));
    current = &trace.act[l];
  }

  trace.probs = softmax_rows(trace.pre.back());
  return trace;
}

ForwardOutput forward(const Network& net, const Matrix& batch, Pass pass,
                      std::uint64_t dropout_seed) {
  ForwardTrace trace = forward_trace(net, batch, pass, dropout_seed);
  return {std::move(trace.pre.back()), std::move(trace.probs)};
}

ParameterSet backprop(const Network& net, const ForwardTrace& trace,
                      const Matrix& logit_grad) {
  const auto& layers = net.params.layers();
  if (!logit_grad.same_shape(trace.pre.back()))
    throw InvalidInput("backprop: logit gradient shape mismatch");

  ParameterSet grads = net.params.zeros_like();
  Matrix delta = logit_grad;  // d loss / d pre[l]

  for (std::size_t l = layers.size(); l-- > 0;) {
    const Matrix& in = (l == 0) ? trace.input : trace.act[l - 1];
    Layer& g = grads.layers()[l];
    const std::size_t b = delta.rows();
    const std::size_t fan_out = layers[l].weight.rows();
    const std::size_t fan_in = layers[l].weight.cols();

    for (std::size_t i = 0; i < b; ++i) {
      const double* d = delta.row(i);
      const double* x = in.row(i);
      for (std::size_t o = 0; o < fan_out; ++o) {
        if (d[o] == 0.0) continue;
        double* gw = g.weight.row(o);
        for (std::size_t k = 0; k < fan_in; ++k) gw[k] += d[o] * x[k];
        g.bias[o] += d[o];
      }
    }
    if (l == 0) break;

    Matrix prev(b, fan_in);
    for (std::size_t i = 0; i < b; ++i) {
      const double* d = delta.row(i);
      double* p = prev.row(i);
      for (std::size_t k = 0; k < fan_in; ++k) p[k] = 0.0;
      for (std::size_t o = 0; o < fan_out; ++o) {
        if (d[o] == 0.0) continue;
        const double* w = layers[l].weight.row(o);
        for (std::size_t k = 0; k < fan_in; ++k) p[k] += d[o] * w[k];
      }
    }

    const bool last_hidden = (l == layers.size() - 1);
    if (last_hidden && !trace.dropout_mask.empty()) {
      for (std::size_t k = 0; k < prev.size(); ++k)
        prev.data()[k] *= trace.dropout_mask.data()[k];
    }
    for (std::size_t k = 0; k < prev.size(); ++k) {
      const double pre = trace.pre[l - 1].data()[k];
      // act holds post-dropout values for the last hidden layer, so recompute
      // the activation output from pre where needed.
      const double post = activate(net.activation, pre);
      prev.data()[k] *= activate_grad(net.activation, pre, post);
    }
    delta = std::move(prev);
  }
  return grads;
}

OptimizerState::OptimizerState(const ParameterSet& like, AdamConfig config)
    : m_(like.zeros_like()), v_(like.zeros_like()), step_(0), config_(config) {}

void adam_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state) {
  const auto sig = params.shape_signature();
  if (sig != grads.shape_signature() || sig != state.m_.shape_signature())
    throw InvalidInput("adam_step: shape signature mismatch");

  state.step_ += 1;
  const AdamConfig& cfg = state.config_;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_));

  for (std::size_t l = 0; l < params.layers().size(); ++l) {
    auto update = [&](double& p, double& m, double& v, double g) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      p -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    };
    auto& pl = params.layers()[l];
    const auto& gl = grads.layers()[l];
    auto& ml = state.m_.layers()[l];
    auto& vl = state.v_.layers()[l];
    for (std::size_t k = 0; k < pl.weight.size(); ++k)
      update(pl.weight.data()[k], ml.weight.data()[k], vl.weight.data()[k],
             gl.weight.data()[k]);
    for (std::size_t k = 0; k < pl.bias.size(); ++k)
      update(pl.bias[k], ml.bias[k], vl.bias[k], gl.bias[k]);
  }

  if (!params.all_finite())
    throw NumericalFailure("adam_step: parameters became non-finite");
}

}  // namespace fedirm
