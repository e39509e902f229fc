#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "galore/matrix.hpp"

namespace galore::theory {

inline constexpr double kEigenTolerance = 1e-9;
inline constexpr double kPsdTolerance = 1e-10;
inline constexpr std::size_t kMaxDynamicsDim = 32;
/// Step ratios of the compact residual are reported only while ‖R‖_F exceeds
/// this fraction of ‖R_0‖_F; below it absolute round-off in G dominates.
inline constexpr double kRatioFloorRel = 1e-6;

/// Constant-coefficient gradient dynamics G_t = (1/N)Σ (A_i − B_i W_t C_i)
/// under W_t = W_{t−1} + η·G_{t−1}.
struct DynamicsSpec {
  std::vector<Matrix> a;  // m × n each
  std::vector<Matrix> b;  // m × m, symmetric PSD
  std::vector<Matrix> c;  // n × n, symmetric PSD
  Matrix w0;              // m × n
  double eta = 0.0;
  std::size_t steps = 0;
  std::size_t t0 = 0;

  std::size_t batches() const noexcept { return a.size(); }
  std::size_t rows() const { return w0.rows(); }
  std::size_t cols() const { return w0.cols(); }

  /// Throws InvalidInput on shape, symmetry or PSD violations and
  /// UnstableStepSize when η·λmax(S) ≥ 1.
  void validate() const;
};

/// S = (1/N)Σ C_i ⊗ B_i, acting on column-major vec(W).
Matrix coefficient_operator(const DynamicsSpec& spec);

/// G_t for the given weights.
Matrix dynamics_gradient(const DynamicsSpec& spec, const Matrix& w);

struct DynamicsStep {
  Matrix grad;
  double fro_norm = 0.0;
  double spec_norm = 0.0;
  double stable_rank = 0.0;  // NaN when G_t = 0
  double rank_one_gap = 0.0; // Σ_{i≥2} σ_i²/σ_1² = sr − 1 without cancellation
  double bound_rhs = 0.0;    // NaN before t0 or when the bound is undefined
};

struct DynamicsTrace {
  std::vector<DynamicsStep> steps;  // t = 0 .. spec.steps
  std::size_t t0 = 0;
  double eta = 0.0;
  Matrix s;
  double lambda1 = 0.0;
  double lambda2 = 0.0;  // NaN when S has a single distinct eigenvalue
  bool lambda2_undefined = false;
  Matrix v1_basis;  // mn × dim(𝒱1)
  Matrix g_parallel;
  bool parallel_zero = false;
  double parallel_stable_rank = 0.0;  // NaN when parallel_zero
  double parallel_rank_one_gap = 0.0;
  double parallel_spec_norm_sq = 0.0;
  double residual_fro_sq = 0.0;  // ‖G_0 − G_{t0}∥‖_F²
  double decay_ratio = 0.0;      // ((1 − ηλ2)/(1 − ηλ1))², NaN when λ2 is undefined
};

/// Validates the spec, then iterates it for spec.steps updates.
DynamicsTrace simulate_dynamics(const DynamicsSpec& spec);

/// sr(G_{t0}∥) + decay_ratio^{t−t0}·‖G_0 − G_{t0}∥‖_F²/‖G_{t0}∥‖_2².
/// Throws UndefinedBound when G_{t0}∥ = 0 and InvalidInput when t < t0.
/// With a single distinct eigenvalue 𝒱1 is the whole space and the
/// residual term vanishes, so the bound reduces to sr(G_{t0}∥).
double stable_rank_bound_rhs(const DynamicsTrace& trace, std::size_t t);

/// Least-squares slope of log(sr(G_t) − sr(G_{t0}∥)) against t over the
/// steps whose excess lies in [lo, hi]; ratio = exp(slope). The excess is
/// formed from the rank-one gaps so it keeps relative accuracy near zero.
struct ExcessFit {
  double ratio = 0.0;
  std::size_t points = 0;
  bool ok = false;
};
ExcessFit fit_excess_decay(const DynamicsTrace& trace, double lo = 1e-18, double hi = 1e-12);

/// Columns t, fro_norm, spec_norm, stable_rank, bound_rhs, ratio. `ratio` is the
/// observed one-step shrinkage of the excess over sr(G_{t0}∥); undefined cells are empty.
void write_trace_csv(std::ostream& out, const DynamicsTrace& trace);

struct ContractionReport {
  std::vector<double> r_norms;  // ‖R_t‖_F, t = 0 .. steps
  std::vector<double> ratios;   // ‖R_t‖_F/‖R_{t−1}‖_F, 0 once ‖R_{t−1}‖_F ≤ kRatioFloorRel·‖R_0‖_F
  std::vector<double> kappas;   // κ_t per step
  double kappa = 0.0;
  double bound = 0.0;  // 1 − ηκ
  bool no_guarantee = false;  // κ ≤ 0
};

/// Two-sided GaLore with identity inner rule on constant coefficients:
/// W_t = W_{t−1} + η·P·R_{t−1}·Qᵀ with R_t = PᵀG_tQ. P and Q must have
/// orthonormal columns.
ContractionReport contraction_check(const DynamicsSpec& spec, const Matrix& p, const Matrix& q,
                                    std::size_t steps);

/// ⌈log(threshold/r0)/log(1 − ηκ)⌉, or 0 when r0 ≤ threshold.
std::size_t predicted_contraction_steps(double r0, double eta, double kappa,
                                        double threshold = 1e-12);

/// Single-batch constant coefficients with B, C = U·diag(U(0.5, 3))·Uᵀ, random
/// A, W0 = 0, and P, Q spanning the top-`rank` eigenvectors of B and C.
struct ContractionInstance {
  DynamicsSpec spec;
  Matrix p;
  Matrix q;
};
ContractionInstance generate_contraction_instance(std::uint64_t seed, std::size_t dim = 4,
                                                  std::size_t rank = 2, double eta = 0.05);

enum class SpecFamily {
  NullDirection,    // shared null vector of every B_i: λ1 = 0, G∥ rank 1
  SimpleBottom,     // commuting coefficients with a simple, decomposable bottom eigenvector
  LowRankFeatures,  // C_i = f_i f_iᵀ, A_i = a_i f_iᵀ with rank{f_i} = feature_rank
  Generic,          // independent random PSD coefficients
};

struct SpecRequest {
  SpecFamily family = SpecFamily::NullDirection;
  std::uint64_t seed = 0;
  std::size_t rows = 4;
  std::size_t cols = 5;
  std::size_t batches = 2;
  std::size_t feature_rank = 0;  // LowRankFeatures only; 0 picks min(batches, cols − 1)
  std::size_t steps = 0;         // 0 picks a family default
};

/// Seeded spec drawn from mt19937_64. η is set to 0.5/λmax(S).
DynamicsSpec generate_spec(const SpecRequest& request);

const char* family_name(SpecFamily family);
SpecFamily parse_family(const std::string& name);

}  // namespace galore::theory
