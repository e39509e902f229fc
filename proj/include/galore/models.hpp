#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "galore/matrix.hpp"

namespace galore::models {

enum class Activation { Identity, LeakyRelu };
enum class LossKind { L2, LogSoftmax };

inline constexpr double kDefaultLeakySlope = 0.01;

/// Bias-free chain f_l = act(W_l f_{l-1}); no activation after the last layer.
///
/// Batches are matrices with one sample per column. L2 targets are real
/// vectors; LogSoftmax targets are strict one-hot columns.
struct ReversibleNet {
  std::vector<Matrix> layers;  // layers[l] maps dim l to dim l+1
  Activation activation = Activation::Identity;
  double leaky_slope = kDefaultLeakySlope;
  LossKind loss = LossKind::L2;

  std::size_t depth() const noexcept { return layers.size(); }
  std::size_t input_dim() const { return layers.front().cols(); }
  std::size_t output_dim() const { return layers.back().rows(); }
  /// Throws InvalidInput when adjacent shapes do not compose.
  void validate() const;
};

struct ForwardCache {
  std::vector<Matrix> activations;      // f_0 .. f_L
  std::vector<Matrix> pre_activations;  // W_l f_{l-1}, l = 1..L
  const Matrix& output() const { return activations.back(); }
};

/// Negative gradients of the batch-mean loss with respect to each layer.
struct GradReport {
  std::vector<Matrix> grads;
  double loss = 0.0;
};

ForwardCache forward(const ReversibleNet& net, const Matrix& inputs);
std::vector<double> forward(const ReversibleNet& net, std::span<const double> x);

/// Mean loss over the batch columns.
double loss(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets);

/// Called once per layer, last layer first, as soon as that layer's gradient
/// is final. The error signal for earlier layers has already been propagated
/// through the current weights, so the callback may update layer `index`.
using LayerGradSink = std::function<void(std::size_t index, const Matrix& grad)>;

GradReport backward(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets);
/// Same gradients as backward(), streamed to `sink` instead of collected.
/// `net` is taken by non-const reference because the sink may modify its layers.
double backward_sweep(ReversibleNet& net, const Matrix& inputs, const Matrix& targets,
                      const LayerGradSink& sink);

/// G_l = (J_lᵀy − J_lᵀJ_l W_l f_{l−1}) f_{l−1}ᵀ with J_l the product of the
/// downstream weights. Identity activation and L2 loss only; `layer` is 0-based.
Matrix closed_form_grad_l2(const ReversibleNet& net, std::span<const double> x,
                           std::span<const double> y, std::size_t layer);

struct SoftmaxGradComparison {
  std::vector<double> exact;   // y − softmax(f)
  std::vector<double> approx;  // P⊥y − γ·f̂/K, γ = 1/(1 + f̂ᵀf̂/2K)
  double gamma = 1.0;
  double max_abs_diff = 0.0;
};

/// Small-logit expansion of the logsoftmax gradient against the exact value.
SoftmaxGradComparison softmax_grad_approx(std::span<const double> logits,
                                          std::span<const double> label);

/// Central differences of the batch-mean loss on every weight entry.
GradReport finite_diff_grad(const ReversibleNet& net, const Matrix& inputs, const Matrix& targets,
                            double h = 1e-5);

/// ‖a − b‖_F / max(1, ‖b‖_F).
double relative_grad_error(const Matrix& a, const Matrix& b);

}  // namespace galore::models
