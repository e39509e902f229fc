#include "galore/projector.hpp"

#include <algorithm>
#include <string>

#include "galore/error.hpp"
#include "galore/linalg.hpp"

namespace galore {

namespace {

Matrix canonical_basis(std::size_t n, std::size_t r) {
  Matrix out(n, r);
  for (std::size_t j = 0; j < r; ++j) out(j, j) = 1.0;
  return out;
}

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

Projector::Projector(std::size_t rows, std::size_t cols, ProjectorOptions options)
    : rows_(rows),
      cols_(cols),
      rank_(options.rank),
      mode_(options.mode),
      side_(options.side.value_or(rows <= cols ? ProjectionSide::Left : ProjectionSide::Right)),
      switch_freq_(options.switch_freq) {
  if (rows == 0 || cols == 0) throw InvalidInput("projector: shape must be positive");
  if (options.rank == 0) throw InvalidInput("projector: rank must be positive");
  if (options.switch_freq <= 0) throw InvalidInput("projector: switch_freq must be positive");
  const std::size_t cap = std::min(rows, cols);
  if (rank_ > cap) {
    rank_ = cap;
    rank_clamped_ = true;
  }
}

bool Projector::maybe_refresh(const Matrix& grad, std::int64_t step) {
  if (grad.rows() != rows_ || grad.cols() != cols_) {
    throw InvalidInput("projector: gradient shape " + shape_str(grad.rows(), grad.cols()) +
                       " does not match " + shape_str(rows_, cols_));
  }
  if (step < 0) throw InvalidInput("projector: step must be non-negative");
  if (step % switch_freq_ != 0) return false;

  if (grad.max_abs() == 0.0) {
    if (!initialized()) {
      if (has_left()) left_ = canonical_basis(rows_, rank_);
      if (has_right()) right_ = canonical_basis(cols_, rank_);
    }
    ++degenerate_refreshes_;
  } else {
    const linalg::SvdResult svd = linalg::svd_thin(grad);
    if (has_left()) left_ = svd.U.leading_cols(rank_);
    if (has_right()) right_ = svd.V.leading_cols(rank_);
  }
  last_refresh_step_ = step;
  ++refresh_count_;
  return true;
}

void Projector::require_initialized() const {
  if (!initialized()) throw UninitializedProjector("projector used before its first refresh");
}

Matrix Projector::project(const Matrix& grad) const {
  require_initialized();
  if (grad.rows() != rows_ || grad.cols() != cols_) {
    throw InvalidInput("project: gradient shape " + shape_str(grad.rows(), grad.cols()) +
                       " does not match " + shape_str(rows_, cols_));
  }
  if (mode_ == ProjectionMode::TwoSided) return matmul(matmul_tn(left_, grad), right_);
  if (side_ == ProjectionSide::Left) return matmul_tn(left_, grad);
  return matmul(grad, right_);
}

Matrix Projector::project_back(const Matrix& compact, double alpha) const {
  require_initialized();
  if (compact.rows() != compact_rows() || compact.cols() != compact_cols()) {
    throw InvalidInput("project_back: compact shape " + shape_str(compact.rows(), compact.cols()) +
                       " does not match " + shape_str(compact_rows(), compact_cols()));
  }
  Matrix out = [&] {
    if (mode_ == ProjectionMode::TwoSided) return matmul_nt(matmul(left_, compact), right_);
    if (side_ == ProjectionSide::Left) return matmul(left_, compact);
    return matmul_nt(compact, right_);
  }();
  out *= alpha;
  return out;
}

std::size_t Projector::compact_rows() const noexcept {
  if (mode_ == ProjectionMode::TwoSided || side_ == ProjectionSide::Left) return rank_;
  return rows_;
}

std::size_t Projector::compact_cols() const noexcept {
  if (mode_ == ProjectionMode::TwoSided || side_ == ProjectionSide::Right) return rank_;
  return cols_;
}

std::size_t Projector::factor_entries() const noexcept {
  std::size_t n = 0;
  if (has_left()) n += rows_ * rank_;
  if (has_right()) n += cols_ * rank_;
  return n;
}

}  // namespace galore
