#include "galore/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <string>

#include "galore/error.hpp"
#include "galore/linalg.hpp"

namespace galore::theory {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZeroParallelRel = 1e-12;

void require_psd(const Matrix& x, std::size_t dim, const std::string& name) {
  if (x.rows() != dim || x.cols() != dim) {
    throw InvalidInput(name + " must be " + std::to_string(dim) + "x" + std::to_string(dim));
  }
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i + 1; j < dim; ++j) {
      if (std::abs(x(i, j) - x(j, i)) > kPsdTolerance) throw InvalidInput(name + " is not symmetric");
    }
  }
  if (linalg::sym_eig(x).values.front() < -kPsdTolerance) throw InvalidInput(name + " is not PSD");
}

double lambda_min(const Matrix& x) { return linalg::sym_eig(x).values.front(); }

double safe_stable_rank(const Matrix& g) {
  return g.frobenius_norm_sq() > 0.0 ? linalg::stable_rank(g) : kNaN;
}

double rank_one_gap(const Matrix& g) {
  const auto sv = linalg::svd_thin(g).S;
  if (!(sv.front() > 0.0)) return kNaN;
  double tail = 0.0;
  for (std::size_t i = sv.size(); i-- > 1;) tail += (sv[i] / sv.front()) * (sv[i] / sv.front());
  return tail;
}

Matrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix g(n, n);
  for (double& x : g.data()) x = normal(rng);
  return linalg::svd_thin(g).U;
}

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix g(rows, cols);
  for (double& x : g.data()) x = normal(rng);
  return g;
}

// U·diag(d)·Uᵀ, symmetrized against round-off.
Matrix spectral_matrix(const Matrix& u, const std::vector<double>& d) {
  Matrix ud = u;
  for (std::size_t i = 0; i < u.rows(); ++i) {
    for (std::size_t j = 0; j < u.cols(); ++j) ud(i, j) *= d[j];
  }
  Matrix out = matmul_nt(ud, u);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = i + 1; j < out.cols(); ++j) {
      const double avg = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = avg;
      out(j, i) = avg;
    }
  }
  return out;
}

Matrix random_psd(std::size_t n, std::mt19937_64& rng, double shift) {
  Matrix x = gaussian(n, n, rng);
  Matrix out = matmul_nt(x, x);
  out *= 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) += shift;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out(j, i) = out(i, j);
  }
  return out;
}

void set_stable_eta(DynamicsSpec& spec) {
  const double lmax = linalg::sym_eig(coefficient_operator(spec)).values.back();
  if (!(lmax > 0.0)) throw InvalidInput("generated spec has a zero coefficient operator");
  spec.eta = 0.5 / lmax;
}

}  // namespace

void DynamicsSpec::validate() const {
  const std::size_t n_batches = a.size();
  if (n_batches == 0) throw InvalidInput("dynamics spec needs at least one batch");
  if (b.size() != n_batches || c.size() != n_batches) {
    throw InvalidInput("A, B and C must have the same number of batches");
  }
  if (w0.empty()) throw InvalidInput("W0 must be non-empty");
  const std::size_t m = rows();
  const std::size_t n = cols();
  if (m > kMaxDynamicsDim || n > kMaxDynamicsDim) {
    throw SizeLimit("dynamics dimensions are capped at " + std::to_string(kMaxDynamicsDim));
  }
  for (std::size_t i = 0; i < n_batches; ++i) {
    if (a[i].rows() != m || a[i].cols() != n) {
      throw InvalidInput("A[" + std::to_string(i) + "] must match W0's shape");
    }
    require_psd(b[i], m, "B[" + std::to_string(i) + "]");
    require_psd(c[i], n, "C[" + std::to_string(i) + "]");
  }
  if (!(eta > 0.0) || !std::isfinite(eta)) throw InvalidInput("eta must be positive and finite");
  if (t0 > steps) throw InvalidInput("t0 must not exceed steps");
  const double lmax = linalg::sym_eig(coefficient_operator(*this)).values.back();
  if (eta * lmax >= 1.0) {
    throw UnstableStepSize("eta * lambda_max(S) = " + std::to_string(eta * lmax) +
                           " must be below 1");
  }
}

Matrix coefficient_operator(const DynamicsSpec& spec) {
  const std::size_t mn = spec.rows() * spec.cols();
  Matrix s(mn, mn);
  for (std::size_t i = 0; i < spec.batches(); ++i) s += linalg::kron(spec.c[i], spec.b[i]);
  s *= 1.0 / static_cast<double>(spec.batches());
  return s;
}

Matrix dynamics_gradient(const DynamicsSpec& spec, const Matrix& w) {
  Matrix g(spec.rows(), spec.cols());
  for (std::size_t i = 0; i < spec.batches(); ++i) {
    g += spec.a[i];
    g -= matmul(matmul(spec.b[i], w), spec.c[i]);
  }
  g *= 1.0 / static_cast<double>(spec.batches());
  return g;
}

DynamicsTrace simulate_dynamics(const DynamicsSpec& spec) {
  spec.validate();
  DynamicsTrace trace;
  trace.t0 = spec.t0;
  trace.eta = spec.eta;
  trace.s = coefficient_operator(spec);

  const auto eig = linalg::sym_eig(trace.s);
  trace.lambda1 = eig.values.front();
  std::size_t dim_v1 = 0;
  while (dim_v1 < eig.values.size() && eig.values[dim_v1] <= trace.lambda1 + kEigenTolerance) {
    ++dim_v1;
  }
  trace.lambda2_undefined = dim_v1 == eig.values.size();
  trace.lambda2 = trace.lambda2_undefined ? kNaN : eig.values[dim_v1];
  trace.v1_basis = eig.vectors.leading_cols(dim_v1);
  trace.decay_ratio =
      trace.lambda2_undefined
          ? kNaN
          : std::pow((1.0 - spec.eta * trace.lambda2) / (1.0 - spec.eta * trace.lambda1), 2.0);

  Matrix w = spec.w0;
  trace.steps.reserve(spec.steps + 1);
  for (std::size_t t = 0; t <= spec.steps; ++t) {
    DynamicsStep step;
    step.grad = dynamics_gradient(spec, w);
    step.fro_norm = step.grad.frobenius_norm();
    step.spec_norm = linalg::spectral_norm(step.grad);
    step.stable_rank = safe_stable_rank(step.grad);
    step.rank_one_gap = rank_one_gap(step.grad);
    if (t < spec.steps) {
      Matrix inc = step.grad;
      inc *= spec.eta;
      w += inc;
    }
    trace.steps.push_back(std::move(step));
  }

  const Matrix& g_t0 = trace.steps[spec.t0].grad;
  const auto g_vec = linalg::vec(g_t0);
  const auto coeff = linalg::matvec(trace.v1_basis.transpose(), g_vec);
  const auto par = linalg::matvec(trace.v1_basis, coeff);
  trace.g_parallel = linalg::unvec(par, spec.rows(), spec.cols());
  trace.parallel_zero =
      trace.g_parallel.frobenius_norm() <= kZeroParallelRel * g_t0.frobenius_norm();
  if (trace.parallel_zero) {
    trace.parallel_stable_rank = kNaN;
    trace.parallel_rank_one_gap = kNaN;
    trace.parallel_spec_norm_sq = 0.0;
  } else {
    trace.parallel_stable_rank = linalg::stable_rank(trace.g_parallel);
    trace.parallel_rank_one_gap = rank_one_gap(trace.g_parallel);
    const double s1 = linalg::spectral_norm(trace.g_parallel);
    trace.parallel_spec_norm_sq = s1 * s1;
  }
  trace.residual_fro_sq = (trace.steps.front().grad - trace.g_parallel).frobenius_norm_sq();

  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    trace.steps[t].bound_rhs =
        (t < trace.t0 || trace.parallel_zero) ? kNaN : stable_rank_bound_rhs(trace, t);
  }
  return trace;
}

double stable_rank_bound_rhs(const DynamicsTrace& trace, std::size_t t) {
  if (t < trace.t0) throw InvalidInput("bound is only defined for t >= t0");
  if (trace.parallel_zero) {
    throw UndefinedBound("G_t0 has no component in the bottom eigenspace of S");
  }
  if (trace.lambda2_undefined) return trace.parallel_stable_rank;
  const double factor = std::pow(trace.decay_ratio, static_cast<double>(t - trace.t0));
  return trace.parallel_stable_rank + factor * trace.residual_fro_sq / trace.parallel_spec_norm_sq;
}

ExcessFit fit_excess_decay(const DynamicsTrace& trace, double lo, double hi) {
  ExcessFit fit;
  if (trace.parallel_zero) return fit;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t t = trace.t0; t < trace.steps.size(); ++t) {
    const double excess = trace.steps[t].rank_one_gap - trace.parallel_rank_one_gap;
    if (!(excess >= lo && excess <= hi)) continue;
    const double x = static_cast<double>(t);
    const double y = std::log(excess);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++fit.points;
  }
  if (fit.points < 3) return fit;
  const double np = static_cast<double>(fit.points);
  const double denom = np * sxx - sx * sx;
  if (denom <= 0.0) return fit;
  fit.ratio = std::exp((np * sxy - sx * sy) / denom);
  fit.ok = true;
  return fit;
}

void write_trace_csv(std::ostream& out, const DynamicsTrace& trace) {
  const auto prec = out.precision(17);
  out << "t,fro_norm,spec_norm,stable_rank,bound_rhs,ratio\n";
  auto cell = [&](double v) {
    if (std::isfinite(v)) out << v;
  };
  double prev_excess = kNaN;
  for (std::size_t t = 0; t < trace.steps.size(); ++t) {
    const auto& s = trace.steps[t];
    out << t << ',';
    cell(s.fro_norm);
    out << ',';
    cell(s.spec_norm);
    out << ',';
    cell(s.stable_rank);
    out << ',';
    cell(s.bound_rhs);
    out << ',';
    const double excess = s.rank_one_gap - trace.parallel_rank_one_gap;
    if (t > trace.t0 && prev_excess > 0.0) cell(excess / prev_excess);
    out << '\n';
    prev_excess = t >= trace.t0 ? excess : kNaN;
  }
  out.precision(prec);
}

ContractionReport contraction_check(const DynamicsSpec& spec, const Matrix& p, const Matrix& q,
                                    std::size_t steps) {
  spec.validate();
  if (p.rows() != spec.rows() || q.rows() != spec.cols()) {
    throw InvalidInput("P must have m rows and Q must have n rows");
  }
  auto require_orthonormal = [](const Matrix& x, const char* name) {
    const Matrix gram = matmul_tn(x, x);
    if (max_abs_diff(gram, Matrix::identity(x.cols())) > 1e-10) {
      throw InvalidInput(std::string(name) + " must have orthonormal columns");
    }
  };
  require_orthonormal(p, "P");
  require_orthonormal(q, "Q");

  ContractionReport report;
  for (std::size_t i = 0; i < spec.batches(); ++i) {
    const double lb = lambda_min(matmul_tn(p, matmul(spec.b[i], p)));
    const double lc = lambda_min(matmul_tn(q, matmul(spec.c[i], q)));
    report.kappa += lb * lc;
  }
  report.kappa /= static_cast<double>(spec.batches());
  report.bound = 1.0 - spec.eta * report.kappa;
  report.no_guarantee = report.kappa <= 0.0;

  auto compact = [&](const Matrix& w) { return matmul(matmul_tn(p, dynamics_gradient(spec, w)), q); };
  Matrix w = spec.w0;
  Matrix r = compact(w);
  report.r_norms.push_back(r.frobenius_norm());
  const double floor = kRatioFloorRel * report.r_norms.front();
  for (std::size_t t = 1; t <= steps; ++t) {
    Matrix inc = matmul_nt(matmul(p, r), q);
    inc *= spec.eta;
    w += inc;
    r = compact(w);
    const double prev = report.r_norms.back();
    const double cur = r.frobenius_norm();
    report.r_norms.push_back(cur);
    report.ratios.push_back(prev > floor ? cur / prev : 0.0);
    report.kappas.push_back(report.kappa);
  }
  return report;
}

std::size_t predicted_contraction_steps(double r0, double eta, double kappa, double threshold) {
  if (r0 <= threshold) return 0;
  const double rate = 1.0 - eta * kappa;
  if (!(rate > 0.0 && rate < 1.0)) throw InvalidInput("contraction rate must lie in (0, 1)");
  return static_cast<std::size_t>(std::ceil(std::log(threshold / r0) / std::log(rate)));
}

ContractionInstance generate_contraction_instance(std::uint64_t seed, std::size_t dim,
                                                  std::size_t rank, double eta) {
  if (dim == 0 || dim > kMaxDynamicsDim || rank == 0 || rank > dim) {
    throw InvalidInput("contraction instance needs 1 <= rank <= dim <= " +
                       std::to_string(kMaxDynamicsDim));
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> spread(0.5, 3.0);
  auto draw = [&]() {
    const Matrix u = random_orthogonal(dim, rng);
    std::vector<double> d(dim);
    for (double& x : d) x = spread(rng);
    return spectral_matrix(u, d);
  };
  ContractionInstance inst;
  inst.spec.b.push_back(draw());
  inst.spec.c.push_back(draw());
  inst.spec.a.push_back(gaussian(dim, dim, rng));
  inst.spec.w0 = Matrix(dim, dim);
  inst.spec.eta = eta;
  inst.spec.steps = 200;
  auto top = [&](const Matrix& x) {
    const auto eig = linalg::sym_eig(x);
    Matrix out(dim, rank);
    for (std::size_t j = 0; j < rank; ++j) {
      for (std::size_t i = 0; i < dim; ++i) out(i, j) = eig.vectors(i, dim - 1 - j);
    }
    return out;
  };
  inst.p = top(inst.spec.b.front());
  inst.q = top(inst.spec.c.front());
  return inst;
}

DynamicsSpec generate_spec(const SpecRequest& req) {
  const std::size_t m = req.rows;
  const std::size_t n = req.cols;
  const std::size_t nb = req.batches;
  if (m == 0 || n == 0 || nb == 0) throw InvalidInput("spec dimensions must be positive");
  if (m > kMaxDynamicsDim || n > kMaxDynamicsDim) {
    throw SizeLimit("dynamics dimensions are capped at " + std::to_string(kMaxDynamicsDim));
  }
  std::mt19937_64 rng(req.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  DynamicsSpec spec;
  spec.w0 = Matrix(m, n);
  switch (req.family) {
    case SpecFamily::NullDirection:
    case SpecFamily::SimpleBottom: {
      const bool null_dir = req.family == SpecFamily::NullDirection;
      const Matrix ub = random_orthogonal(m, rng);
      const Matrix uc = random_orthogonal(n, rng);
      for (std::size_t i = 0; i < nb; ++i) {
        std::vector<double> beta(m);
        std::vector<double> gamma(n);
        for (std::size_t k = 0; k < m; ++k) {
          if (k == 0) {
            beta[k] = null_dir ? 0.0 : uniform(0.2, 0.25);
          } else if (k == 1 && null_dir) {
            beta[k] = uniform(1.0, 1.2);
          } else {
            beta[k] = uniform(3.0, 4.0);
          }
        }
        for (std::size_t k = 0; k < n; ++k) gamma[k] = k == 0 ? uniform(1.0, 1.2) : uniform(3.0, 4.0);
        spec.b.push_back(spectral_matrix(ub, beta));
        spec.c.push_back(spectral_matrix(uc, gamma));
        spec.a.push_back(gaussian(m, n, rng));
      }
      spec.steps = req.steps ? req.steps : (null_dir ? 1000 : 2000);
      break;
    }
    case SpecFamily::LowRankFeatures: {
      if (n < 2) throw InvalidInput("low-rank features need at least two columns");
      const std::size_t k = req.feature_rank ? req.feature_rank : std::min(nb, n - 1);
      if (k > nb || k >= n) {
        throw InvalidInput("feature_rank must not exceed batches and must be below cols");
      }
      const Matrix basis = gaussian(n, k, rng);
      for (std::size_t i = 0; i < nb; ++i) {
        std::vector<double> f(n, 0.0);
        if (i < k) {
          for (std::size_t r = 0; r < n; ++r) f[r] = basis(r, i);
        } else {
          std::normal_distribution<double> normal;
          for (std::size_t j = 0; j < k; ++j) {
            const double w = normal(rng);
            for (std::size_t r = 0; r < n; ++r) f[r] += w * basis(r, j);
          }
        }
        double norm = 0.0;
        for (double v : f) norm += v * v;
        const double scale = uniform(1.0, 2.0) / std::sqrt(norm);
        for (double& v : f) v *= scale;
        const Matrix fcol = Matrix::column(f);
        Matrix a_vec = gaussian(m, 1, rng);
        spec.c.push_back(matmul_nt(fcol, fcol));
        spec.a.push_back(matmul_nt(a_vec, fcol));
        spec.b.push_back(random_psd(m, rng, 0.5));
      }
      spec.w0 = gaussian(m, n, rng);
      spec.steps = req.steps ? req.steps : 200;
      break;
    }
    case SpecFamily::Generic: {
      for (std::size_t i = 0; i < nb; ++i) {
        spec.b.push_back(random_psd(m, rng, 0.0));
        spec.c.push_back(random_psd(n, rng, 0.0));
        spec.a.push_back(gaussian(m, n, rng));
      }
      spec.steps = req.steps ? req.steps : 400;
      break;
    }
  }
  set_stable_eta(spec);
  return spec;
}

const char* family_name(SpecFamily family) {
  switch (family) {
    case SpecFamily::NullDirection:
      return "null-direction";
    case SpecFamily::SimpleBottom:
      return "simple-bottom";
    case SpecFamily::LowRankFeatures:
      return "low-rank-features";
    case SpecFamily::Generic:
      return "generic";
  }
  return "unknown";
}

SpecFamily parse_family(const std::string& name) {
  for (auto f : {SpecFamily::NullDirection, SpecFamily::SimpleBottom, SpecFamily::LowRankFeatures,
                 SpecFamily::Generic}) {
    if (name == family_name(f)) return f;
  }
  throw InvalidInput("unknown spec family '" + name + "'");
}

}  // namespace galore::theory
