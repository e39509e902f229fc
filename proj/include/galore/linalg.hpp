#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "galore/matrix.hpp"

namespace galore::linalg {

/// Thin SVD A = U·diag(S)·Vᵀ with k = min(rows, cols).
struct SvdResult {
  Matrix U;               // rows × k, orthonormal columns
  std::vector<double> S;  // non-increasing, non-negative
  Matrix V;               // cols × k, orthonormal columns
};

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
struct EigResult {
  std::vector<double> values;
  Matrix vectors;  // column i pairs with values[i]
};

inline constexpr std::size_t kDefaultKronCap = 4096;

/// One-sided Jacobi SVD. Deterministic: in each column of U the entry of
/// largest magnitude (lowest index on ties) is non-negative and V follows.
/// Throws InvalidInput on non-finite input.
SvdResult svd_thin(const Matrix& a);

/// Cyclic Jacobi on (S + Sᵀ)/2. Stops once the off-diagonal Frobenius norm
/// drops to 1e-12·‖S‖_F or after 100 sweeps. Eigenvectors use the same sign
/// rule as svd_thin.
EigResult sym_eig(const Matrix& s);

/// Kronecker product; throws SizeLimit when either result dimension exceeds `cap`.
Matrix kron(const Matrix& b, const Matrix& c, std::size_t cap = kDefaultKronCap);

/// Column-major stacking.
std::vector<double> vec(const Matrix& a);
Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols);

/// ‖A‖_2, the largest singular value.
double spectral_norm(const Matrix& a);

/// ‖A‖_F² / ‖A‖_2². Throws UndefinedStableRank for the zero matrix.
double stable_rank(const Matrix& a);
double stable_rank(const SvdResult& svd);

/// Count of singular values above rel_tol·s₁ (0 for the zero matrix).
std::size_t numerical_rank(const Matrix& a, double rel_tol = 1e-10);

/// Matrix–vector product.
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

}  // namespace galore::linalg
