#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "galore/matrix.hpp"
#include "galore/projector.hpp"
#include "galore/quant8.hpp"

namespace galore {

// Sign convention throughout: gradients are *negative* loss gradients, so every
// step returns an increment that is added to the weights.

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Matrix m;  // first moment
  Matrix v;  // second moment, entrywise >= 0
  std::int64_t t = 0;
  AdamHyper hyper;

  static AdamState zeros(std::size_t rows, std::size_t cols, AdamHyper hyper = {});
};

/// Advances the moments and returns the normalized direction M̂/(√V̂ + ε).
Matrix adam_direction(AdamState& state, const Matrix& grad);
/// One Adam step: returns ΔW = eta·M̂/(√V̂ + ε).
Matrix adam_step(AdamState& state, const Matrix& grad, double eta);

struct AdafactorHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;  // decay of the factored accumulators
  double eps = 1e-8;
};

/// First-order Adafactor: full first moment, rank-1 factored second moment.
struct AdafactorState {
  Matrix m;
  std::vector<double> row_acc;
  std::vector<double> col_acc;
  std::int64_t t = 0;
  AdafactorHyper hyper;

  static AdafactorState zeros(std::size_t rows, std::size_t cols, AdafactorHyper hyper = {});
};

/// Row/column accumulators track EMAs of the row and column means of G².
/// The bias-corrected second-moment estimate is row_i·col_j / mean(row).
Matrix adafactor_direction(AdafactorState& state, const Matrix& grad);
Matrix adafactor_step(AdafactorState& state, const Matrix& grad, double eta);

enum class InnerRule { Adam, Adafactor, Identity };
enum class SwitchPolicy { Carry, Reset, Rotate };
enum class StateStorage { Float64, Int8Blockwise };

struct GaLoreOptions {
  ProjectorOptions projector;
  double alpha = 0.25;
  InnerRule rule = InnerRule::Adam;
  AdamHyper adam;
  AdafactorHyper adafactor;
  SwitchPolicy switch_policy = SwitchPolicy::Carry;
  StateStorage storage = StateStorage::Float64;
  std::size_t quant_block = kDefaultQuantBlock;
};

/// Optimizer state of one GaLore-wrapped weight matrix. The inner moments are
/// shaped like the compact gradient produced by the projector.
class GaLoreState {
 public:
  GaLoreState(std::size_t rows, std::size_t cols, GaLoreOptions options);

  const Projector& projector() const noexcept { return projector_; }
  const GaLoreOptions& options() const noexcept { return options_; }
  double alpha() const noexcept { return options_.alpha; }

  /// Null unless the inner rule matches.
  const AdamState* adam() const noexcept { return std::get_if<AdamState>(&inner_); }
  const AdafactorState* adafactor() const noexcept { return std::get_if<AdafactorState>(&inner_); }

  /// Projection factors plus inner moments.
  std::size_t state_entries() const noexcept;

  friend Matrix galore_step(Matrix& weights, const Matrix& grad, GaLoreState& state, double eta,
                            std::int64_t step);

 private:
  void on_subspace_switch(const Matrix& old_left, const Matrix& old_right);
  void store_quantized();

  GaLoreOptions options_;
  Projector projector_;
  std::variant<std::monostate, AdamState, AdafactorState> inner_;
};

/// One GaLore update of `weights` in place: refresh the projector if due,
/// project the gradient, run the inner rule on the compact gradient, project
/// back scaled by alpha and add eta times the result. Returns the increment.
Matrix galore_step(Matrix& weights, const Matrix& grad, GaLoreState& state, double eta,
                   std::int64_t step);

/// LoRA adaptor around a frozen base weight: W = W0 + s·B·A with s = lora_alpha / r.
struct LoraState {
  Matrix w0;
  Matrix b;  // rows × r, starts at zero
  Matrix a;  // r × cols, small random
  double scaling = 1.0;
  AdamState adam_b;
  AdamState adam_a;

  static LoraState init(const Matrix& w0, std::size_t rank, double lora_alpha, std::mt19937_64& rng,
                        AdamHyper hyper = {});
  Matrix effective() const;
  std::size_t state_entries() const noexcept;
};

/// Chain rule through W = W0 + s·B·A, then an Adam step on each factor.
void lora_adam_step(LoraState& state, const Matrix& grad_w, double eta);

}  // namespace galore
