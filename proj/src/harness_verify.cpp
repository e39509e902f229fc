#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <string>

#include "galore/error.hpp"
#include "galore/harness.hpp"
#include "galore/linalg.hpp"
#include "galore/models.hpp"
#include "galore/projector.hpp"
#include "galore/quant8.hpp"
#include "galore/theory.hpp"

namespace galore::harness {

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix g(rows, cols);
  for (double& x : g.data()) x = normal(rng);
  return g;
}

CheckResult at_most(std::string name, std::string anchor, double value, double tolerance,
                    std::string detail = {}) {
  CheckResult c{std::move(name), std::move(anchor), value, tolerance, value <= tolerance, false,
                std::move(detail)};
  return c;
}

// Moments written as explicit geometric sums rather than recursions.
CheckResult check_adam(const VerifyHooks& hooks, std::mt19937_64& rng) {
  const AdamHyper h;
  const std::size_t steps = 6;
  std::vector<Matrix> grads;
  for (std::size_t t = 0; t < steps; ++t) grads.push_back(gaussian(3, 4, rng));
  AdamState state = AdamState::zeros(3, 4, h);
  double worst = 0.0;
  for (std::size_t t = 1; t <= steps; ++t) {
    const Matrix dir = hooks.adam_direction ? hooks.adam_direction(state, grads[t - 1])
                                            : adam_direction(state, grads[t - 1]);
    for (std::size_t i = 0; i < dir.size(); ++i) {
      double m = 0.0, v = 0.0;
      for (std::size_t k = 1; k <= t; ++k) {
        const double g = grads[k - 1].data()[i];
        m += (1.0 - h.beta1) * std::pow(h.beta1, static_cast<double>(t - k)) * g;
        v += (1.0 - h.beta2) * std::pow(h.beta2, static_cast<double>(t - k)) * g * g;
      }
      const double m_hat = m / (1.0 - std::pow(h.beta1, static_cast<double>(t)));
      const double v_hat = v / (1.0 - std::pow(h.beta2, static_cast<double>(t)));
      const double expect = m_hat / (std::sqrt(v_hat) + h.eps);
      worst = std::max(worst, std::abs(dir.data()[i] - expect) / std::max(1.0, std::abs(expect)));
    }
  }
  return at_most("adam-bias-correction", "bias-corrected Adam moments", worst, 1e-12);
}

CheckResult check_eckart_young(std::mt19937_64& rng) {
  double worst = 0.0;
  std::size_t cases = 0;
  std::uniform_int_distribution<std::size_t> dim(2, 32);
  for (int k = 0; k < 20; ++k) {
    const Matrix g = gaussian(dim(rng), dim(rng), rng);
    // Oracle spectrum from the Gram matrix, independent of the SVD.
    const Matrix gram = g.rows() <= g.cols() ? matmul_nt(g, g) : matmul_tn(g, g);
    auto eig = linalg::sym_eig(gram).values;
    std::sort(eig.begin(), eig.end(), std::greater<>());
    const double total = g.frobenius_norm_sq();
    for (std::size_t r = 1; r <= std::min(g.rows(), g.cols()); ++r) {
      Projector p(g.rows(), g.cols(), ProjectorOptions{r, 1, ProjectionMode::OneSided, {}});
      p.maybe_refresh(g, 0);
      const double residual = (g - p.project_back(p.project(g), 1.0)).frobenius_norm_sq();
      double tail = 0.0;
      for (std::size_t i = r; i < eig.size(); ++i) tail += std::max(0.0, eig[i]);
      worst = std::max(worst, std::abs(residual - tail) / total);
      ++cases;
    }
  }
  return at_most("eckart-young", "truncated SVD is the best rank-r projection", worst, 1e-8,
                 std::to_string(cases) + " (matrix, rank) pairs");
}

CheckResult check_exact_trajectory(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int k = 0; k < 5; ++k) {
    RunConfig c;
    c.seed = rng();
    c.task = Task::LinearRegression;
    c.input_dim = 8;
    c.output_dim = 6;
    c.depth = 1;
    c.rank = 6;
    c.alpha = 1.0;
    c.rho = Rho::Identity;
    c.eta = 0.05;
    c.steps = 100;
    c.batch_size = 16;
    c.train_size = 64;
    c.eval_size = 16;
    c.switch_freq = 10;
    std::vector<std::vector<Matrix>> plain;
    c.optimizer = OptimizerKind::Adam;
    run_train(c, [&](std::size_t, const std::vector<Matrix>& w) { plain.push_back(w); });
    c.optimizer = OptimizerKind::GaLoreAdam;
    std::size_t t = 0;
    run_train(c, [&](std::size_t, const std::vector<Matrix>& w) {
      for (std::size_t l = 0; l < w.size(); ++l) {
        const double err = frobenius_distance(w[l], plain[t][l]) /
                           std::max(1e-300, plain[t][l].frobenius_norm());
        worst = std::max(worst, err);
      }
      ++t;
    });
  }
  return at_most("galore-full-rank-trajectory", "full-rank GaLore with identity rule is gradient ascent",
                 worst, 1e-10, "5 problems x 100 steps");
}

CheckResult check_closed_form(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> depth(1, 4);
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    models::ReversibleNet net;
    const std::size_t layers = depth(rng);
    std::size_t in = dim(rng);
    const std::size_t input = in;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t out = dim(rng);
      Matrix w = gaussian(out, in, rng);
      w *= 1.0 / std::sqrt(static_cast<double>(in));
      net.layers.push_back(std::move(w));
      in = out;
    }
    const Matrix x = gaussian(input, 1, rng);
    const Matrix y = gaussian(in, 1, rng);
    const auto report = models::backward(net, x, y);
    for (std::size_t l = 0; l < layers; ++l) {
      const Matrix closed = models::closed_form_grad_l2(net, x.col(0), y.col(0), l);
      worst = std::max(worst, models::relative_grad_error(report.grads[l], closed));
    }
  }
  return at_most("closed-form-gradient", "reversible-network gradient has the closed form", worst,
                 1e-10, "20 chained-linear nets");
}

CheckResult check_finite_difference(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> depth(1, 3);
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    models::ReversibleNet net;
    net.activation = models::Activation::LeakyRelu;
    net.loss = k % 2 == 0 ? models::LossKind::L2 : models::LossKind::LogSoftmax;
    const std::size_t layers = depth(rng);
    std::size_t in = dim(rng);
    const std::size_t input = in;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t out = dim(rng);
      net.layers.push_back(gaussian(out, in, rng));
      in = out;
    }
    const Matrix x = gaussian(input, 4, rng);
    Matrix y = gaussian(in, 4, rng);
    if (net.loss == models::LossKind::LogSoftmax) {
      y = Matrix(in, 4);
      for (std::size_t s = 0; s < 4; ++s) y(rng() % in, s) = 1.0;
    }
    const auto exact = models::backward(net, x, y);
    const auto numeric = models::finite_diff_grad(net, x, y);
    for (std::size_t l = 0; l < layers; ++l) {
      worst = std::max(worst, models::relative_grad_error(exact.grads[l], numeric.grads[l]));
    }
  }
  return at_most("finite-difference-gradient", "backprop through leaky-ReLU networks", worst, 1e-5,
                 "10 nets, central differences h = 1e-5");
}

// The expansion error is second order: |exact − approx| ≤ ‖f̂‖²/K up to third-order terms.
CheckResult check_softmax_expansion(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t classes = 2 + rng() % 9;
    std::vector<double> logits(classes);
    std::normal_distribution<double> normal(0.0, 1e-2);
    for (double& f : logits) f = normal(rng);
    std::vector<double> label(classes, 0.0);
    label[rng() % classes] = 1.0;
    const auto cmp = models::softmax_grad_approx(logits, label);
    double mean = 0.0;
    for (double f : logits) mean += f;
    mean /= static_cast<double>(classes);
    double sq = 0.0;
    for (double f : logits) sq += (f - mean) * (f - mean);
    worst = std::max(worst, cmp.max_abs_diff * static_cast<double>(classes) / sq);
  }
  return at_most("softmax-gradient-expansion", "logsoftmax gradient near zero logits", worst, 1.0,
                 "max |exact - approx| * K / |f_hat|^2");
}

std::vector<theory::DynamicsSpec> bound_suite(std::mt19937_64& rng) {
  std::vector<theory::DynamicsSpec> specs;
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  std::uniform_int_distribution<std::size_t> batches(1, 4);
  const theory::SpecFamily families[] = {theory::SpecFamily::NullDirection,
                                         theory::SpecFamily::SimpleBottom,
                                         theory::SpecFamily::Generic};
  for (int k = 0; k < 24; ++k) {
    theory::SpecRequest req;
    req.family = families[k % 3];
    req.seed = rng();
    req.rows = dim(rng);
    req.cols = dim(rng);
    req.batches = batches(rng);
    specs.push_back(theory::generate_spec(req));
  }
  return specs;
}

CheckResult check_lemma_bound(const std::vector<theory::DynamicsTrace>& traces) {
  double worst = -1e300;
  for (const auto& tr : traces) {
    for (const auto& s : tr.steps) {
      if (std::isfinite(s.bound_rhs)) worst = std::max(worst, s.stable_rank - s.bound_rhs);
    }
  }
  return at_most("stable-rank-bound", "stable rank of the gradient decays toward the bottom eigenspace",
                 worst, 1e-9, std::to_string(traces.size()) + " specs, max sr - rhs");
}

CheckResult check_excess_fit(std::mt19937_64& rng) {
  double worst = 0.0;
  std::uniform_int_distribution<std::size_t> dim(2, 8);
  std::uniform_int_distribution<std::size_t> batches(1, 4);
  std::size_t failed = 0;
  for (int k = 0; k < 20; ++k) {
    theory::SpecRequest req;
    req.seed = rng();
    req.rows = dim(rng);
    req.cols = dim(rng);
    req.batches = batches(rng);
    const auto tr = theory::simulate_dynamics(theory::generate_spec(req));
    const auto fit = theory::fit_excess_decay(tr);
    if (!fit.ok) {
      ++failed;
      continue;
    }
    worst = std::max(worst, std::abs(fit.ratio - tr.decay_ratio));
  }
  if (failed > 0) worst = std::max(worst, 1.0);
  return at_most("stable-rank-excess-decay", "excess stable rank shrinks at the squared eigen-ratio",
                 worst, 1e-6, "20 specs with a shared null direction");
}

CheckResult check_low_rank_corollary(std::mt19937_64& rng) {
  double worst = -1e300;
  bool parallel_nonzero_violation = false;
  for (int k = 0; k < 6; ++k) {
    theory::SpecRequest req;
    req.family = theory::SpecFamily::LowRankFeatures;
    req.seed = rng();
    req.rows = 3 + static_cast<std::size_t>(k % 4);
    req.cols = 4 + static_cast<std::size_t>(k % 5);
    req.batches = 1 + static_cast<std::size_t>(k % 4);
    const auto spec = theory::generate_spec(req);
    const std::size_t feature_rank = std::min(req.batches, req.cols - 1);
    const auto tr = theory::simulate_dynamics(spec);
    // Once G_t itself sinks to round-off the 1e-10 relative rank cut counts noise.
    const double floor = 1e-6 * tr.steps.front().fro_norm;
    for (const auto& s : tr.steps) {
      if (s.fro_norm < floor) break;
      worst = std::max(worst, static_cast<double>(linalg::numerical_rank(s.grad, 1e-10)) -
                                  static_cast<double>(feature_rank));
    }
    if (!tr.parallel_zero &&
        tr.parallel_stable_rank > static_cast<double>(req.cols - feature_rank) + 1e-9) {
      parallel_nonzero_violation = true;
    }
  }
  if (parallel_nonzero_violation) worst = std::max(worst, 1.0);
  return at_most("low-rank-gradient-corollary", "gradient rank is capped by the feature rank",
                 worst, 0.0, "max rank(G_t) - N'");
}

CheckResult check_decomposable(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int k = 0; k < 6; ++k) {
    theory::SpecRequest req;
    req.family = theory::SpecFamily::SimpleBottom;
    req.seed = rng();
    req.rows = 2 + static_cast<std::size_t>(k % 3);
    req.cols = 2 + static_cast<std::size_t>(k % 4);
    req.batches = 1 + static_cast<std::size_t>(k % 4);
    const auto tr = theory::simulate_dynamics(theory::generate_spec(req));
    worst = std::max(worst, std::abs(tr.steps.back().stable_rank - 1.0));
  }
  return at_most("decomposable-bottom-eigenvector", "a rank-one bottom eigenvector drives sr to 1",
                 worst, 1e-6, "6 commuting specs");
}

CheckResult check_vec_space(const std::vector<theory::DynamicsSpec>& specs,
                            const std::vector<theory::DynamicsTrace>& traces) {
  double worst = 0.0;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const auto& tr = traces[k];
    const std::size_t mn = tr.s.rows();
    Matrix step_op = Matrix::identity(mn);
    Matrix scaled = tr.s;
    scaled *= tr.eta;
    step_op -= scaled;
    auto g = linalg::vec(tr.steps.front().grad);
    const double g0 = tr.steps.front().fro_norm;
    const std::size_t horizon = std::min<std::size_t>(tr.steps.size(), 200);
    for (std::size_t t = 1; t < horizon; ++t) {
      g = linalg::matvec(step_op, g);
      const auto actual = linalg::vec(tr.steps[t].grad);
      double diff = 0.0;
      for (std::size_t i = 0; i < mn; ++i) diff = std::max(diff, std::abs(actual[i] - g[i]));
      worst = std::max(worst, diff / std::max(1.0, g0));
    }
  }
  return at_most("vec-space-dynamics", "vectorized gradient follows (I - eta S)^t", worst, 1e-9,
                 "first 200 steps of every bound spec");
}

void check_contraction(std::mt19937_64& rng, std::vector<CheckResult>& out) {
  double worst_ratio = -1e300;
  double worst_tail = 0.0;
  for (int k = 0; k < 10; ++k) {
    const auto inst = theory::generate_contraction_instance(rng());
    const auto rep = theory::contraction_check(inst.spec, inst.p, inst.q, 200);
    for (double r : rep.ratios) worst_ratio = std::max(worst_ratio, r - rep.bound);
    const std::size_t need =
        theory::predicted_contraction_steps(rep.r_norms.front(), inst.spec.eta, rep.kappa);
    const auto longer = theory::contraction_check(inst.spec, inst.p, inst.q, need);
    worst_tail = std::max(worst_tail, longer.r_norms.back());
  }
  out.push_back(at_most("compact-residual-contraction", "projected residual contracts by 1 - eta kappa",
                        worst_ratio, 1e-9, "10 instances x 200 steps, max ratio - bound"));
  out.push_back(at_most("compact-residual-vanishes", "residual reaches 1e-12 within the predicted steps",
                        worst_tail, 1e-12, "max ||R|| at the predicted step"));
}

void check_memory(std::vector<CheckResult>& out) {
  using memory::Method;
  std::size_t violations = 0;
  std::size_t cases = 0;
  const std::uint64_t dims[] = {1, 2, 3, 7, 16, 64, 100, 512, 1376, 2048, 4096};
  for (std::uint64_t m : dims) {
    for (std::uint64_t n : dims) {
      if (m > n) continue;
      for (std::uint64_t r : {std::uint64_t{1}, m / 4, m / 2, m - 1, m}) {
        if (r < 1 || r > m) continue;
        const auto d = memory::LayerDims::make(m, n, r);
        const auto ga = memory::estimate_layer(d, Method::GaLore);
        const auto lo = memory::estimate_layer(d, Method::LoRA);
        const auto fu = memory::estimate_layer(d, Method::Full);
        ++cases;
        if (!(ga.total_params() < lo.total_params())) ++violations;
        // r(m + 2n) < 2mn, the integer form of r < mn/(m/2 + n).
        if (r * (m + 2 * n) < 2 * m * n && !(ga.optimizer_params < fu.optimizer_params)) ++violations;
      }
    }
  }
  out.push_back(at_most("memory-algebra-grid", "GaLore stores less than LoRA and than Adam below the rank threshold",
                        static_cast<double>(violations), 0.0, std::to_string(cases) + " grid points"));

  const auto ex = memory::estimate_layer(memory::LayerDims::make(512, 1376, 128), Method::GaLore);
  out.push_back(at_most("memory-galore-example", "GaLore optimizer entries m r + 2 n r",
                        std::abs(static_cast<double>(ex.optimizer_params) - 417792.0), 0.0,
                        std::to_string(ex.optimizer_params) + " entries"));

  struct Fixture {
    const char* label;
    memory::ModelConfig model;
    Method method;
    std::uint64_t rank;
    bool weights;
    double target_gb;
  };
  const auto m60 = memory::llama_config("llama-60m", 512, 1376, 8);
  const auto m1b = memory::llama_config("llama-1b", 2048, 5461, 32);
  const Fixture fixtures[] = {
      {"table6-60m-weights", m60, Method::Full, 128, true, 0.12},
      {"table6-60m-full-optimizer", m60, Method::Full, 128, false, 0.23},
      {"table6-60m-galore-optimizer", m60, Method::GaLore, 128, false, 0.13},
      {"table6-1b-full-optimizer", m1b, Method::Full, 512, false, 5.20},
      {"table6-1b-galore-optimizer", m1b, Method::GaLore, 512, false, 1.78},
  };
  for (const auto& f : fixtures) {
    const auto rep = memory::estimate_model(f.model, f.method, f.rank);
    const double gb = static_cast<double>(f.weights ? rep.weight_bytes : rep.optimizer_bytes) /
                      memory::kGigabyte;
    const double rel = std::abs(gb - f.target_gb) / f.target_gb;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.3fG vs published %.2fG", gb, f.target_gb);
    CheckResult c = at_most(f.label, "published per-model memory estimate", rel, 0.10, buf);
    c.informational = true;
    out.push_back(std::move(c));
  }
}

CheckResult check_q8(std::mt19937_64& rng) {
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    Matrix x = gaussian(17 + 13 * k, 11, rng);
    x *= std::pow(10.0, static_cast<double>(k % 5) - 2.0);
    const auto rt = q8_roundtrip(x, kDefaultQuantBlock);
    for (std::size_t b = 0; b < rt.blocks.size(); ++b) {
      const double scale = rt.blocks[b].scale;
      const std::size_t start = b * kDefaultQuantBlock;
      for (std::size_t i = 0; i < rt.blocks[b].codes.size(); ++i) {
        const double err = std::abs(x.data()[start + i] - rt.dequantized.data()[start + i]);
        if (scale > 0.0) worst = std::max(worst, err / (scale / 127.0));
      }
    }
  }
  return at_most("q8-roundtrip", "blockwise absmax quantization error", worst, 1.0,
                 "max error in units of absmax/127");
}

}  // namespace

bool VerifyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const CheckResult& c) { return c.passed || c.informational; });
}

std::vector<CheckResult> run_check_group(CheckGroup group, const VerifyHooks& hooks,
                                         std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(group)};
  std::mt19937_64 rng(seq);
  std::vector<CheckResult> out;
  switch (group) {
    case CheckGroup::Optimizer:
      out.push_back(check_adam(hooks, rng));
      break;
    case CheckGroup::Trajectory:
      out.push_back(check_exact_trajectory(rng));
      break;
    case CheckGroup::Projector:
      out.push_back(check_eckart_young(rng));
      break;
    case CheckGroup::Gradients:
      out.push_back(check_closed_form(rng));
      out.push_back(check_finite_difference(rng));
      out.push_back(check_softmax_expansion(rng));
      break;
    case CheckGroup::StableRank: {
      const auto specs = bound_suite(rng);
      std::vector<theory::DynamicsTrace> traces;
      for (const auto& s : specs) traces.push_back(theory::simulate_dynamics(s));
      out.push_back(check_lemma_bound(traces));
      out.push_back(check_excess_fit(rng));
      out.push_back(check_low_rank_corollary(rng));
      out.push_back(check_decomposable(rng));
      out.push_back(check_vec_space(specs, traces));
      break;
    }
    case CheckGroup::Contraction:
      check_contraction(rng, out);
      break;
    case CheckGroup::Memory:
      check_memory(out);
      break;
    case CheckGroup::Quantization:
      out.push_back(check_q8(rng));
      break;
  }
  return out;
}

VerifyReport run_verify(const VerifyHooks& hooks, std::uint64_t seed) {
  VerifyReport report;
  for (CheckGroup g : kAllCheckGroups) {
    auto part = run_check_group(g, hooks, seed);
    report.checks.insert(report.checks.end(), part.begin(), part.end());
  }
  return report;
}

void print_verify_table(std::ostream& out, const VerifyReport& report) {
  char line[512];
  std::snprintf(line, sizeof line, "%-32s %-6s %-14s %-10s %s\n", "check", "status", "value",
                "tolerance", "anchor");
  out << line;
  for (const auto& c : report.checks) {
    const char* status = c.informational ? (c.passed ? "info" : "info!") : (c.passed ? "pass" : "FAIL");
    std::snprintf(line, sizeof line, "%-32s %-6s %-14.6e %-10.1e %s", c.name.c_str(), status,
                  c.value, c.tolerance, c.anchor.c_str());
    out << line;
    if (!c.detail.empty()) out << " [" << c.detail << ']';
    out << '\n';
  }
  out << (report.all_passed() ? "verify: all checks passed\n" : "verify: FAILED\n");
}

}  // namespace galore::harness
