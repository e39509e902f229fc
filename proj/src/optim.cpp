#include "galore/optim.hpp"

#include <cmath>
#include <string>
#include <type_traits>

#include "galore/error.hpp"

namespace galore {

namespace {

void require_shape(const Matrix& state, const Matrix& grad, const char* op) {
  if (!state.same_shape(grad)) {
    throw InvalidInput(std::string(op) + ": gradient shape " + std::to_string(grad.rows()) + "x" +
                       std::to_string(grad.cols()) + " does not match state " +
                       std::to_string(state.rows()) + "x" + std::to_string(state.cols()));
  }
}

void require_beta(double beta, const char* name) {
  if (!(beta >= 0.0 && beta < 1.0)) throw InvalidInput(std::string(name) + " must lie in [0, 1)");
}

Matrix quantize_through(const Matrix& x, std::size_t block) {
  return q8_roundtrip(x, block).dequantized;
}

}  // namespace

AdamState AdamState::zeros(std::size_t rows, std::size_t cols, AdamHyper hyper) {
  require_beta(hyper.beta1, "beta1");
  require_beta(hyper.beta2, "beta2");
  if (!(hyper.eps > 0.0)) throw InvalidInput("eps must be positive");
  return AdamState{Matrix(rows, cols), Matrix(rows, cols), 0, hyper};
}

Matrix adam_direction(AdamState& state, const Matrix& grad) {
  require_shape(state.m, grad, "adam_step");
  const auto& h = state.hyper;
  state.t += 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  Matrix dir(grad.rows(), grad.cols());
  auto m = state.m.data();
  auto v = state.v.data();
  auto g = grad.data();
  auto d = dir.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    d[i] = m_hat / (std::sqrt(v_hat) + h.eps);
  }
  return dir;
}

Matrix adam_step(AdamState& state, const Matrix& grad, double eta) {
  Matrix dir = adam_direction(state, grad);
  dir *= eta;
  return dir;
}

AdafactorState AdafactorState::zeros(std::size_t rows, std::size_t cols, AdafactorHyper hyper) {
  require_beta(hyper.beta1, "beta1");
  require_beta(hyper.beta2, "beta2");
  if (!(hyper.eps > 0.0)) throw InvalidInput("eps must be positive");
  return AdafactorState{Matrix(rows, cols), std::vector<double>(rows, 0.0),
                        std::vector<double>(cols, 0.0), 0, hyper};
}

Matrix adafactor_direction(AdafactorState& state, const Matrix& grad) {
  require_shape(state.m, grad, "adafactor_step");
  const auto& h = state.hyper;
  const std::size_t rows = grad.rows();
  const std::size_t cols = grad.cols();
  state.t += 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));

  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += grad(i, j) * grad(i, j);
    state.row_acc[i] = h.beta2 * state.row_acc[i] + (1.0 - h.beta2) * (s / static_cast<double>(cols));
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += grad(i, j) * grad(i, j);
    state.col_acc[j] = h.beta2 * state.col_acc[j] + (1.0 - h.beta2) * (s / static_cast<double>(rows));
  }
  double row_mean = 0.0;
  for (double r : state.row_acc) row_mean += r;
  row_mean /= static_cast<double>(rows);

  Matrix dir(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double& m = state.m(i, j);
      m = h.beta1 * m + (1.0 - h.beta1) * grad(i, j);
      const double v_hat =
          row_mean > 0.0 ? state.row_acc[i] * state.col_acc[j] / row_mean / c2 : 0.0;
      dir(i, j) = (m / c1) / (std::sqrt(v_hat) + h.eps);
    }
  }
  return dir;
}

Matrix adafactor_step(AdafactorState& state, const Matrix& grad, double eta) {
  Matrix dir = adafactor_direction(state, grad);
  dir *= eta;
  return dir;
}

GaLoreState::GaLoreState(std::size_t rows, std::size_t cols, GaLoreOptions options)
    : options_(options), projector_(rows, cols, options.projector) {
  if (!(options.alpha > 0.0)) throw InvalidInput("galore: alpha must be positive");
  if (options.quant_block == 0) throw InvalidInput("galore: quant_block must be positive");
  const std::size_t cr = projector_.compact_rows();
  const std::size_t cc = projector_.compact_cols();
  switch (options.rule) {
    case InnerRule::Adam:
      inner_ = AdamState::zeros(cr, cc, options.adam);
      break;
    case InnerRule::Adafactor:
      inner_ = AdafactorState::zeros(cr, cc, options.adafactor);
      break;
    case InnerRule::Identity:
      break;
  }
}

std::size_t GaLoreState::state_entries() const noexcept {
  std::size_t n = projector_.factor_entries();
  if (const auto* a = adam()) n += a->m.size() + a->v.size();
  if (const auto* f = adafactor()) n += f->m.size() + f->row_acc.size() + f->col_acc.size();
  return n;
}

void GaLoreState::on_subspace_switch(const Matrix& old_left, const Matrix& old_right) {
  switch (options_.switch_policy) {
    case SwitchPolicy::Carry:
      return;
    case SwitchPolicy::Reset:
      if (auto* a = std::get_if<AdamState>(&inner_)) {
        *a = AdamState::zeros(a->m.rows(), a->m.cols(), a->hyper);
      } else if (auto* f = std::get_if<AdafactorState>(&inner_)) {
        *f = AdafactorState::zeros(f->m.rows(), f->m.cols(), f->hyper);
      }
      return;
    case SwitchPolicy::Rotate:
      break;
  }

  // Re-express the compact moments in the new basis. The second moment is
  // rotated in the square-root domain and squared again, a heuristic since an
  // entrywise variance has no exact counterpart after a change of basis.
  const bool left = projector_.has_left();
  const bool right = projector_.has_right();
  const Matrix rot_left = left ? matmul_tn(projector_.left(), old_left) : Matrix();
  const Matrix rot_right = right ? matmul_tn(old_right, projector_.right()) : Matrix();
  auto rotate = [&](const Matrix& x) {
    Matrix y = left ? matmul(rot_left, x) : x;
    return right ? matmul(y, rot_right) : y;
  };
  if (auto* a = std::get_if<AdamState>(&inner_)) {
    a->m = rotate(a->m);
    Matrix root = a->v;
    for (double& x : root.data()) x = std::sqrt(x);
    root = rotate(root);
    for (double& x : root.data()) x = x * x;
    a->v = std::move(root);
  } else if (auto* f = std::get_if<AdafactorState>(&inner_)) {
    f->m = rotate(f->m);
  }
}

void GaLoreState::store_quantized() {
  const std::size_t block = options_.quant_block;
  if (auto* a = std::get_if<AdamState>(&inner_)) {
    a->m = quantize_through(a->m, block);
    // Second moment is stored as √V codes and squared on decode.
    Matrix root = a->v;
    for (double& x : root.data()) x = std::sqrt(x);
    root = quantize_through(root, block);
    for (double& x : root.data()) x = x * x;
    a->v = std::move(root);
  } else if (auto* f = std::get_if<AdafactorState>(&inner_)) {
    f->m = quantize_through(f->m, block);
  }
}

Matrix galore_step(Matrix& weights, const Matrix& grad, GaLoreState& state, double eta,
                   std::int64_t step) {
  Projector& proj = state.projector_;
  if (!weights.same_shape(grad) || grad.rows() != proj.rows() || grad.cols() != proj.cols()) {
    throw InvalidInput("galore_step: weight/gradient shapes do not match the projector");
  }
  const bool was_initialized = proj.initialized();
  const Matrix old_left = proj.left();
  const Matrix old_right = proj.right();
  const bool refreshed = proj.maybe_refresh(grad, step);
  if (refreshed && was_initialized) state.on_subspace_switch(old_left, old_right);

  const Matrix compact = proj.project(grad);
  Matrix normalized = std::visit(
      [&](auto& inner) -> Matrix {
        using T = std::decay_t<decltype(inner)>;
        if constexpr (std::is_same_v<T, AdamState>) {
          return adam_direction(inner, compact);
        } else if constexpr (std::is_same_v<T, AdafactorState>) {
          return adafactor_direction(inner, compact);
        } else {
          return compact;
        }
      },
      state.inner_);
  if (state.options_.storage == StateStorage::Int8Blockwise) state.store_quantized();

  Matrix delta = proj.project_back(normalized, state.options_.alpha);
  delta *= eta;
  weights += delta;
  return delta;
}

LoraState LoraState::init(const Matrix& w0, std::size_t rank, double lora_alpha,
                          std::mt19937_64& rng, AdamHyper hyper) {
  if (rank == 0) throw InvalidInput("lora: rank must be positive");
  if (!(lora_alpha > 0.0)) throw InvalidInput("lora: lora_alpha must be positive");
  const std::size_t rows = w0.rows();
  const std::size_t cols = w0.cols();
  LoraState s{w0, Matrix(rows, rank), Matrix(rank, cols), lora_alpha / static_cast<double>(rank),
              AdamState::zeros(rows, rank, hyper), AdamState::zeros(rank, cols, hyper)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : s.a.data()) x = dist(rng);
  return s;
}

Matrix LoraState::effective() const {
  Matrix ba = matmul(b, a);
  ba *= scaling;
  return w0 + ba;
}

std::size_t LoraState::state_entries() const noexcept {
  return adam_b.m.size() + adam_b.v.size() + adam_a.m.size() + adam_a.v.size();
}

void lora_adam_step(LoraState& state, const Matrix& grad_w, double eta) {
  if (!grad_w.same_shape(state.w0)) {
    throw InvalidInput("lora_adam_step: gradient shape does not match the base weight");
  }
  Matrix grad_b = matmul_nt(grad_w, state.a);
  grad_b *= state.scaling;
  Matrix grad_a = matmul_tn(state.b, grad_w);
  grad_a *= state.scaling;
  state.b += adam_step(state.adam_b, grad_b, eta);
  state.a += adam_step(state.adam_a, grad_a, eta);
}

}  // namespace galore
