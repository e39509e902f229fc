#include "galore/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "galore/error.hpp"

namespace galore::linalg {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kMaxSvdSweeps = 100;
constexpr int kMaxEigSweeps = 100;
constexpr double kEigOffTol = 1e-12;

void require_finite(const Matrix& a, const char* op) {
  if (!a.all_finite()) throw InvalidInput(std::string(op) + ": input has non-finite entries");
}

// Flip column j of `primary` (and of `follower`, if given) so that the entry of
// largest magnitude in that column of `primary` is non-negative.
void fix_column_sign(Matrix& primary, Matrix* follower, std::size_t j) {
  std::size_t best = 0;
  double best_abs = -1.0;
  for (std::size_t i = 0; i < primary.rows(); ++i) {
    const double v = std::abs(primary(i, j));
    if (v > best_abs) {
      best_abs = v;
      best = i;
    }
  }
  if (primary(best, j) >= 0.0) return;
  for (std::size_t i = 0; i < primary.rows(); ++i) primary(i, j) = -primary(i, j);
  if (follower != nullptr) {
    for (std::size_t i = 0; i < follower->rows(); ++i) (*follower)(i, j) = -(*follower)(i, j);
  }
}

double column_norm(const Matrix& a, std::size_t j) {
  double scale = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) scale = std::max(scale, std::abs(a(i, j)));
  if (scale == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double x = a(i, j) / scale;
    s += x * x;
  }
  return scale * std::sqrt(s);
}

// Fills the missing columns from the canonical basis vector with the largest
// residual after projecting out the columns already present.
void complete_orthonormal(Matrix& u, const std::vector<bool>& missing) {
  const std::size_t m = u.rows();
  const std::size_t k = u.cols();
  std::vector<bool> have(k);
  for (std::size_t j = 0; j < k; ++j) have[j] = !missing[j];
  std::vector<double> cand(m);
  std::vector<double> best(m);
  for (std::size_t j = 0; j < k; ++j) {
    if (have[j]) continue;
    double best_norm = 0.0;
    for (std::size_t e = 0; e < m; ++e) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < k; ++c) {
          if (!have[c]) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += u(i, c) * cand[i];
          for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * u(i, c);
        }
      }
      double nrm = 0.0;
      for (double v : cand) nrm += v * v;
      nrm = std::sqrt(nrm);
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = cand;
      }
    }
    if (best_norm < 1e-6) throw Error("svd_thin: failed to complete orthonormal basis");
    for (std::size_t i = 0; i < m; ++i) u(i, j) = best[i] / best_norm;
    have[j] = true;
  }
}

// One-sided Jacobi on a tall (rows >= cols) matrix.
SvdResult jacobi_svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix work = a;
  Matrix v = Matrix::identity(n);
  const double tol = static_cast<double>(m) * kEps;

  for (int sweep = 0; sweep < kMaxSvdSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = work(i, p);
          const double aq = work(i, q);
          alpha += ap * ap;
          beta += aq * aq;
          gamma += ap * aq;
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ap = work(i, p);
          const double aq = work(i, q);
          work(i, p) = c * ap - s * aq;
          work(i, q) = s * ap + c * aq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = column_norm(work, j);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double smax = sigma[order[0]];
  const double zero_cut = smax * static_cast<double>(std::max(m, n)) * kEps;
  std::vector<bool> missing(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    out.S[k] = sigma[src];
    for (std::size_t i = 0; i < n; ++i) out.V(i, k) = v(i, src);
    if (sigma[src] <= zero_cut || sigma[src] == 0.0) {
      missing[k] = true;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) out.U(i, k) = work(i, src) / sigma[src];
  }
  if (std::any_of(missing.begin(), missing.end(), [](bool b) { return b; })) {
    complete_orthonormal(out.U, missing);
  }
  return out;
}

}  // namespace

SvdResult svd_thin(const Matrix& a) {
  require_finite(a, "svd_thin");
  SvdResult out;
  if (a.rows() >= a.cols()) {
    out = jacobi_svd_tall(a);
  } else {
    SvdResult t = jacobi_svd_tall(a.transpose());
    out = SvdResult{std::move(t.V), std::move(t.S), std::move(t.U)};
  }
  for (std::size_t j = 0; j < out.U.cols(); ++j) fix_column_sign(out.U, &out.V, j);
  return out;
}

EigResult sym_eig(const Matrix& s) {
  if (s.rows() != s.cols()) {
    throw InvalidInput("sym_eig: matrix must be square, got " + std::to_string(s.rows()) + "x" +
                       std::to_string(s.cols()));
  }
  require_finite(s, "sym_eig");
  const std::size_t n = s.rows();
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (s(i, j) + s(j, i));
  Matrix v = Matrix::identity(n);
  const double target = kEigOffTol * a.frobenius_norm();

  auto off_norm = [&] {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) acc += a(i, j) * a(i, j);
    return std::sqrt(acc);
  };

  for (int sweep = 0; sweep < kMaxEigSweeps; ++sweep) {
    if (off_norm() <= target) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t =
            std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - sn * akq;
          a(k, q) = sn * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - sn * aqk;
          a(q, k) = sn * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  EigResult out{std::vector<double>(n), Matrix(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    fix_column_sign(out.vectors, nullptr, k);
  }
  return out;
}

Matrix kron(const Matrix& b, const Matrix& c, std::size_t cap) {
  require_finite(b, "kron");
  require_finite(c, "kron");
  const std::size_t rows = b.rows() * c.rows();
  const std::size_t cols = b.cols() * c.cols();
  if (rows > cap || cols > cap) {
    throw SizeLimit("kron: result " + std::to_string(rows) + "x" + std::to_string(cols) +
                    " exceeds cap " + std::to_string(cap));
  }
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      const double bij = b(i, j);
      for (std::size_t k = 0; k < c.rows(); ++k)
        for (std::size_t l = 0; l < c.cols(); ++l)
          out(i * c.rows() + k, j * c.cols() + l) = bij * c(k, l);
    }
  return out;
}

std::vector<double> vec(const Matrix& a) {
  std::vector<double> out;
  out.reserve(a.size());
  for (std::size_t j = 0; j < a.cols(); ++j)
    for (std::size_t i = 0; i < a.rows(); ++i) out.push_back(a(i, j));
  return out;
}

Matrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) {
    throw InvalidInput("unvec: length " + std::to_string(v.size()) + " does not match " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out(rows, cols);
  for (std::size_t j = 0; j < cols; ++j)
    for (std::size_t i = 0; i < rows; ++i) out(i, j) = v[j * rows + i];
  if (!out.all_finite()) throw InvalidInput("unvec: non-finite entries");
  return out;
}

double spectral_norm(const Matrix& a) { return svd_thin(a).S.front(); }

double stable_rank(const SvdResult& svd) {
  const double s1 = svd.S.front();
  if (s1 == 0.0) throw UndefinedStableRank("stable rank of the zero matrix is undefined");
  double acc = 0.0;
  for (double s : svd.S) {
    const double x = s / s1;
    acc += x * x;
  }
  return acc;
}

double stable_rank(const Matrix& a) {
  if (a.max_abs() == 0.0) throw UndefinedStableRank("stable rank of the zero matrix is undefined");
  return stable_rank(svd_thin(a));
}

std::size_t numerical_rank(const Matrix& a, double rel_tol) {
  const SvdResult svd = svd_thin(a);
  const double s1 = svd.S.front();
  if (s1 == 0.0) return 0;
  return static_cast<std::size_t>(
      std::count_if(svd.S.begin(), svd.S.end(), [&](double s) { return s > rel_tol * s1; }));
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (x.size() != a.cols()) {
    throw InvalidInput("matvec: vector length " + std::to_string(x.size()) +
                       " does not match " + std::to_string(a.cols()) + " columns");
  }
  std::vector<double> y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

}  // namespace galore::linalg
