#include "galore/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "galore/error.hpp"

namespace galore::models {

namespace {

double activate(double z, Activation act, double slope) {
  if (act == Activation::Identity || z >= 0.0) return z;
  return slope * z;
}

double activate_grad(double z, Activation act, double slope) {
  if (act == Activation::Identity || z >= 0.0) return 1.0;
  return slope;
}

void check_batch(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets) {
  net.validate();
  if (inputs.rows() != net.input_dim()) {
    throw InvalidInput("input dimension " + std::to_string(inputs.rows()) + " does not match " +
                       std::to_string(net.input_dim()));
  }
  if (targets.rows() != net.output_dim() || targets.cols() != inputs.cols()) {
    throw InvalidInput("targets must be " + std::to_string(net.output_dim()) + "x" +
                       std::to_string(inputs.cols()));
  }
  if (net.loss == LossKind::LogSoftmax) {
    for (std::size_t c = 0; c < targets.cols(); ++c) {
      std::size_t ones = 0;
      for (std::size_t r = 0; r < targets.rows(); ++r) {
        const double v = targets(r, c);
        if (v == 1.0) {
          ++ones;
        } else if (v != 0.0) {
          throw InvalidInput("logsoftmax targets must be one-hot");
        }
      }
      if (ones != 1) throw InvalidInput("logsoftmax targets must be one-hot");
    }
  }
}

std::vector<double> softmax(std::span<const double> f) {
  const double mx = *std::max_element(f.begin(), f.end());
  std::vector<double> p(f.size());
  double z = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    p[i] = std::exp(f[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

double sample_loss(LossKind kind, const Matrix& out, const Matrix& targets, std::size_t c) {
  const std::size_t k = out.rows();
  if (kind == LossKind::L2) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double d = targets(i, c) - out(i, c);
      s += d * d;
    }
    return 0.5 * s;
  }
  double mx = out(0, c);
  for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, out(i, c));
  double z = 0.0;
  double yf = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    z += std::exp(out(i, c) - mx);
    yf += targets(i, c) * out(i, c);
  }
  return mx + std::log(z) - yf;
}

// −∂φ/∂f_L for every column.
Matrix output_error(LossKind kind, const Matrix& out, const Matrix& targets) {
  Matrix delta = targets - out;
  if (kind == LossKind::L2) return delta;
  std::vector<double> col(out.rows());
  for (std::size_t c = 0; c < out.cols(); ++c) {
    for (std::size_t i = 0; i < out.rows(); ++i) col[i] = out(i, c);
    const auto p = softmax(col);
    for (std::size_t i = 0; i < out.rows(); ++i) delta(i, c) = targets(i, c) - p[i];
  }
  return delta;
}

double mean_loss(LossKind kind, const Matrix& out, const Matrix& targets) {
  double s = 0.0;
  for (std::size_t c = 0; c < out.cols(); ++c) s += sample_loss(kind, out, targets, c);
  return s / static_cast<double>(out.cols());
}

}  // namespace

void ReversibleNet::validate() const {
  if (layers.empty()) throw InvalidInput("network needs at least one layer");
  for (std::size_t l = 1; l < layers.size(); ++l) {
    if (layers[l].cols() != layers[l - 1].rows()) {
      throw InvalidInput("layer " + std::to_string(l) + " expects input dimension " +
                         std::to_string(layers[l].cols()) + " but layer " +
                         std::to_string(l - 1) + " outputs " + std::to_string(layers[l - 1].rows()));
    }
  }
}

ForwardCache forward(const ReversibleNet& net, const Matrix& inputs) {
  net.validate();
  if (inputs.rows() != net.input_dim()) {
    throw InvalidInput("input dimension " + std::to_string(inputs.rows()) + " does not match " +
                       std::to_string(net.input_dim()));
  }
  ForwardCache cache;
  cache.activations.reserve(net.depth() + 1);
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Matrix z = matmul(net.layers[l], cache.activations.back());
    Matrix f = z;
    if (l + 1 < net.depth() && net.activation != Activation::Identity) {
      for (double& v : f.data()) v = activate(v, net.activation, net.leaky_slope);
    }
    cache.pre_activations.push_back(std::move(z));
    cache.activations.push_back(std::move(f));
  }
  return cache;
}

std::vector<double> forward(const ReversibleNet& net, std::span<const double> x) {
  const auto out = forward(net, Matrix::column(x)).output();
  return out.col(0);
}

double loss(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets) {
  check_batch(net, inputs, targets);
  return mean_loss(net.loss, forward(net, inputs).output(), targets);
}

namespace {

// Reads net.layers[l] before handing layer l to the sink, so a sink that
// updates the layer through another reference sees a consistent sweep.
double sweep(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets,
             const LayerGradSink& sink) {
  check_batch(net, inputs, targets);
  const ForwardCache cache = forward(net, inputs);
  const double value = mean_loss(net.loss, cache.output(), targets);
  const double inv_batch = 1.0 / static_cast<double>(inputs.cols());

  Matrix delta = output_error(net.loss, cache.output(), targets);
  for (std::size_t l = net.depth(); l-- > 0;) {
    Matrix grad = matmul_nt(delta, cache.activations[l]);
    grad *= inv_batch;
    if (l > 0) {
      Matrix next = matmul_tn(net.layers[l], delta);
      const Matrix& z = cache.pre_activations[l - 1];
      if (net.activation != Activation::Identity) {
        for (std::size_t i = 0; i < next.size(); ++i) {
          next.data()[i] *= activate_grad(z.data()[i], net.activation, net.leaky_slope);
        }
      }
      delta = std::move(next);
    }
    sink(l, grad);
  }
  return value;
}

}  // namespace

double backward_sweep(ReversibleNet& net, const Matrix& inputs, const Matrix& targets,
                      const LayerGradSink& sink) {
  return sweep(net, inputs, targets, sink);
}

GradReport backward(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets) {
  GradReport report;
  report.grads.resize(net.depth());
  report.loss = sweep(net, inputs, targets,
                      [&](std::size_t l, const Matrix& g) { report.grads[l] = g; });
  return report;
}

Matrix closed_form_grad_l2(const ReversibleNet& net, std::span<const double> x,
                           std::span<const double> y, std::size_t layer) {
  net.validate();
  if (net.activation != Activation::Identity || net.loss != LossKind::L2) {
    throw UnsupportedConfiguration(
        "closed-form gradient requires identity activation and L2 loss");
  }
  if (layer >= net.depth()) throw InvalidInput("layer index out of range");
  if (x.size() != net.input_dim() || y.size() != net.output_dim()) {
    throw InvalidInput("closed_form_grad_l2: input/target dimensions do not match the network");
  }

  Matrix f_prev = Matrix::column(x);
  for (std::size_t l = 0; l < layer; ++l) f_prev = matmul(net.layers[l], f_prev);
  Matrix jac = Matrix::identity(net.output_dim());
  for (std::size_t l = net.depth() - 1; l > layer; --l) jac = matmul(jac, net.layers[l]);

  const Matrix target = Matrix::column(y);
  const Matrix wf = matmul(net.layers[layer], f_prev);
  Matrix left = matmul_tn(jac, target) - matmul_tn(jac, matmul(jac, wf));
  return matmul_nt(left, f_prev);
}

SoftmaxGradComparison softmax_grad_approx(std::span<const double> logits,
                                          std::span<const double> label) {
  if (logits.empty() || logits.size() != label.size()) {
    throw InvalidInput("softmax_grad_approx: logits and label must have equal, positive length");
  }
  const std::size_t k = logits.size();
  const double kd = static_cast<double>(k);
  std::size_t ones = 0;
  for (double v : label) {
    if (v == 1.0) {
      ++ones;
    } else if (v != 0.0) {
      ones = 2;
      break;
    }
  }
  if (ones != 1) throw InvalidInput("softmax_grad_approx: label must be one-hot");
  double mean_f = 0.0;
  double mean_y = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    mean_f += logits[i];
    mean_y += label[i];
  }
  mean_f /= kd;
  mean_y /= kd;
  std::vector<double> centered(k);
  double sq = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    centered[i] = logits[i] - mean_f;
    sq += centered[i] * centered[i];
  }

  SoftmaxGradComparison out;
  out.gamma = 1.0 / (1.0 + sq / (2.0 * kd));
  const auto p = softmax(logits);
  out.exact.resize(k);
  out.approx.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    out.exact[i] = label[i] - p[i];
    out.approx[i] = (label[i] - mean_y) - out.gamma * centered[i] / kd;
    out.max_abs_diff = std::max(out.max_abs_diff, std::abs(out.exact[i] - out.approx[i]));
  }
  return out;
}

GradReport finite_diff_grad(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets,
                            double h) {
  if (!(h > 0.0)) throw InvalidInput("finite difference step must be positive");
  check_batch(net, inputs, targets);
  GradReport report;
  report.loss = loss(net, inputs, targets);
  ReversibleNet probe = net;
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Matrix g(net.layers[l].rows(), net.layers[l].cols());
    for (std::size_t i = 0; i < g.size(); ++i) {
      double& w = probe.layers[l].data()[i];
      const double saved = w;
      w = saved + h;
      const double up = loss(probe, inputs, targets);
      w = saved - h;
      const double down = loss(probe, inputs, targets);
      w = saved;
      g.data()[i] = -(up - down) / (2.0 * h);
    }
    report.grads.push_back(std::move(g));
  }
  return report;
}

double relative_grad_error(const Matrix& a, const Matrix& b) {
  return frobenius_distance(a, b) / std::max(1.0, b.frobenius_norm());
}

}  // namespace galore::models
