#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>

#include "galore/matrix.hpp"

namespace galore {

enum class ProjectionMode { OneSided, TwoSided };
enum class ProjectionSide { Left, Right };

/// Subspace switch frequency that never refreshes after the initial step.
inline constexpr std::int64_t kNeverSwitch = std::numeric_limits<std::int64_t>::max();

struct ProjectorOptions {
  std::size_t rank = 128;
  std::int64_t switch_freq = 200;
  ProjectionMode mode = ProjectionMode::OneSided;
  /// One-sided only. Unset means left when rows <= cols, right otherwise.
  std::optional<ProjectionSide> side;
};

/// Low-rank subspace tracker for one weight matrix of shape rows × cols.
///
/// One-sided left keeps P (rows × r) and projects G to PᵀG; one-sided right
/// keeps Q (cols × r) and projects to G·Q; two-sided keeps both and projects
/// to PᵀG·Q. Factors come from the leading singular vectors of the gradient
/// seen at a refresh step (every `switch_freq` global steps, starting at 0).
class Projector {
 public:
  Projector(std::size_t rows, std::size_t cols, ProjectorOptions options);

  /// Refreshes the factors when `step % switch_freq == 0`; otherwise leaves
  /// them untouched. Returns true when a refresh happened. A zero gradient at
  /// a refresh step keeps the previous factors (canonical basis columns if
  /// there are none yet) and counts as a degenerate refresh.
  bool maybe_refresh(const Matrix& grad, std::int64_t step);

  Matrix project(const Matrix& grad) const;
  Matrix project_back(const Matrix& compact, double alpha) const;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t rank() const noexcept { return rank_; }
  bool rank_clamped() const noexcept { return rank_clamped_; }
  ProjectionMode mode() const noexcept { return mode_; }
  ProjectionSide side() const noexcept { return side_; }
  std::int64_t switch_freq() const noexcept { return switch_freq_; }
  std::int64_t last_refresh_step() const noexcept { return last_refresh_step_; }
  std::int64_t refresh_count() const noexcept { return refresh_count_; }
  std::int64_t degenerate_refreshes() const noexcept { return degenerate_refreshes_; }
  bool initialized() const noexcept { return last_refresh_step_ >= 0; }

  bool has_left() const noexcept { return mode_ == ProjectionMode::TwoSided || side_ == ProjectionSide::Left; }
  bool has_right() const noexcept { return mode_ == ProjectionMode::TwoSided || side_ == ProjectionSide::Right; }
  /// P, rows × r. Only meaningful when has_left().
  const Matrix& left() const noexcept { return left_; }
  /// Q, cols × r. Only meaningful when has_right().
  const Matrix& right() const noexcept { return right_; }

  std::size_t compact_rows() const noexcept;
  std::size_t compact_cols() const noexcept;
  /// Entries held by the projection factors.
  std::size_t factor_entries() const noexcept;

 private:
  void require_initialized() const;

  std::size_t rows_;
  std::size_t cols_;
  std::size_t rank_;
  bool rank_clamped_ = false;
  ProjectionMode mode_;
  ProjectionSide side_;
  std::int64_t switch_freq_;
  std::int64_t last_refresh_step_ = -1;
  std::int64_t refresh_count_ = 0;
  std::int64_t degenerate_refreshes_ = 0;
  Matrix left_;
  Matrix right_;
};

}  // namespace galore
