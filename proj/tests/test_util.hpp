#pragma once

#include <cstdint>
#include <random>

#include "galore/matrix.hpp"

namespace galore::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix x(rows, cols);
  for (double& v : x.data()) v = normal(rng);
  return x;
}

inline Matrix random_psd(std::size_t n, std::mt19937_64& rng) {
  const Matrix m = random_matrix(n, n, rng);
  Matrix s = matmul_nt(m, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) s(j, i) = s(i, j);
  }
  return s;
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  const double denom = b.frobenius_norm();
  return frobenius_distance(a, b) / (denom > 0.0 ? denom : 1.0);
}

}  // namespace galore::testing
