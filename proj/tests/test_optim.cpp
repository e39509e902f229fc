#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include <doctest.h>

#include "galore/error.hpp"
#include "galore/linalg.hpp"
#include "galore/optim.hpp"
#include "galore/quant8.hpp"
#include "test_util.hpp"

using namespace galore;
using galore::testing::random_matrix;

namespace {

// Entrywise Adam written out from the recurrences, independent of optim.cpp.
struct ScalarAdam {
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  int t = 0;
  explicit ScalarAdam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  std::vector<double> direction(std::span<const double> g) {
    ++t;
    std::vector<double> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      out[i] = mh / (std::sqrt(vh) + eps);
    }
    return out;
  }
};

Matrix as_matrix(std::vector<double> v, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, std::move(v));
}

GaLoreOptions galore_opts(std::size_t rank, std::int64_t freq, double alpha, InnerRule rule) {
  GaLoreOptions o;
  o.projector.rank = rank;
  o.projector.switch_freq = freq;
  o.alpha = alpha;
  o.rule = rule;
  return o;
}

}  // namespace

TEST_CASE("adam: zero gradient on a fresh state gives a zero step") {
  auto s = AdamState::zeros(3, 4);
  CHECK(adam_step(s, Matrix(3, 4), 0.1).max_abs() == 0.0);
}

TEST_CASE("adam: bias correction makes the first step eta/(1 + eps)") {
  auto s = AdamState::zeros(2, 3);
  const double eta = 0.01;
  const Matrix d = adam_step(s, Matrix::filled(2, 3, 1.0), eta);
  for (double x : d.data()) CHECK(x == doctest::Approx(eta / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam: two scalar steps match the hand-rolled oracle") {
  auto s = AdamState::zeros(1, 1);
  adam_step(s, Matrix{{1}}, 0.1);
  const double d2 = adam_step(s, Matrix{{-1}}, 0.1)(0, 0);
  // m2 = 0.9·0.1 − 0.1 = −0.01, v2 = 0.999·0.001 + 0.001 = 0.001999.
  const double mh = -0.01 / (1 - 0.81);
  const double vh = 0.001999 / (1 - 0.998001);
  CHECK(std::abs(d2 - 0.1 * mh / (std::sqrt(vh) + 1e-8)) <= 1e-12);
}

TEST_CASE("adam: matches the entrywise oracle over a random stream") {
  std::mt19937_64 rng(1);
  auto s = AdamState::zeros(3, 5);
  ScalarAdam oracle(15);
  for (int t = 0; t < 50; ++t) {
    const Matrix g = random_matrix(3, 5, rng);
    const Matrix d = adam_direction(s, g);
    CHECK(max_abs_diff(d, as_matrix(oracle.direction(g.data()), 3, 5)) <= 1e-12);
  }
}

TEST_CASE("adam: second moment stays non-negative") {
  std::mt19937_64 rng(2);
  auto s = AdamState::zeros(4, 4);
  std::cauchy_distribution<double> heavy;
  for (int t = 0; t < 1000; ++t) {
    Matrix g(4, 4);
    for (double& x : g.data()) x = heavy(rng);
    adam_direction(s, g);
    for (double v : s.v.data()) REQUIRE(v >= 0.0);
  }
}

TEST_CASE("adam: shape mismatch throws") {
  auto s = AdamState::zeros(2, 2);
  CHECK_THROWS_AS(adam_step(s, Matrix(2, 3), 0.1), InvalidInput);
}

TEST_CASE("adafactor: zero gradient gives zero step") {
  auto s = AdafactorState::zeros(3, 3);
  CHECK(adafactor_step(s, Matrix(3, 3), 0.1).max_abs() == 0.0);
}

TEST_CASE("adafactor: constant gradient is reproduced exactly by the factored moment") {
  auto s = AdafactorState::zeros(3, 4);
  const double c = -2.5;
  const Matrix d = adafactor_direction(s, Matrix::filled(3, 4, c));
  for (double x : d.data()) CHECK(x == doctest::Approx(c / (std::abs(c) + 1e-8)).epsilon(1e-14));
}

TEST_CASE("adafactor: two steps match the recurrence oracle") {
  std::mt19937_64 rng(3);
  const Matrix g1 = random_matrix(3, 3, rng);
  const Matrix g2 = random_matrix(3, 3, rng);
  auto s = AdafactorState::zeros(3, 3);
  adafactor_direction(s, g1);
  const Matrix d2 = adafactor_direction(s, g2);

  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> row(3, 0.0), col(3, 0.0);
  Matrix m(3, 3);
  Matrix expect(3, 3);
  int t = 0;
  for (const Matrix* g : {&g1, &g2}) {
    ++t;
    for (int i = 0; i < 3; ++i) {
      double rs = 0, cs = 0;
      for (int j = 0; j < 3; ++j) {
        rs += (*g)(i, j) * (*g)(i, j);
        cs += (*g)(j, i) * (*g)(j, i);
      }
      row[i] = b2 * row[i] + (1 - b2) * rs / 3;
      col[i] = b2 * col[i] + (1 - b2) * cs / 3;
    }
    const double rmean = (row[0] + row[1] + row[2]) / 3;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        m(i, j) = b1 * m(i, j) + (1 - b1) * (*g)(i, j);
        const double vh = row[i] * col[j] / rmean / (1 - std::pow(b2, t));
        expect(i, j) = (m(i, j) / (1 - std::pow(b1, t))) / (std::sqrt(vh) + eps);
      }
    }
  }
  CHECK(max_abs_diff(d2, expect) <= 1e-12);
}

TEST_CASE("galore: full rank with identity rule and unit alpha is gradient ascent") {
  std::mt19937_64 rng(4);
  for (auto [m, n] : {std::pair{4, 6}, {6, 4}, {5, 5}}) {
    GaLoreState state(m, n, galore_opts(std::min(m, n), 10, 1.0, InnerRule::Identity));
    Matrix w = random_matrix(m, n, rng);
    for (std::int64_t t = 0; t < 100; ++t) {
      const Matrix g = random_matrix(m, n, rng);
      const Matrix before = w;
      galore_step(w, g, state, 0.05, t);
      const Matrix expected = before + 0.05 * g;
      REQUIRE(galore::testing::relative_error(w, expected) <= 1e-10);
    }
  }
}

TEST_CASE("galore: zero gradients leave weights and moments at zero") {
  GaLoreState state(3, 5, galore_opts(2, 2, 0.25, InnerRule::Adam));
  Matrix w = Matrix::filled(3, 5, 0.7);
  const Matrix w0 = w;
  for (std::int64_t t = 0; t < 5; ++t) galore_step(w, Matrix(3, 5), state, 0.1, t);
  CHECK(w == w0);
  CHECK(state.adam()->m.max_abs() == 0.0);
  CHECK(state.adam()->v.max_abs() == 0.0);
}

TEST_CASE("galore: three steps with T = 1 compose refresh, project, Adam and project_back") {
  std::mt19937_64 rng(5);
  const double eta = 0.1, alpha = 0.25;
  GaLoreState state(4, 6, galore_opts(2, 1, alpha, InnerRule::Adam));
  Matrix w = random_matrix(4, 6, rng);
  Matrix w_oracle = w;
  ScalarAdam adam(2 * 6);
  for (std::int64_t t = 0; t < 3; ++t) {
    const Matrix g = random_matrix(4, 6, rng);
    galore_step(w, g, state, eta, t);
    const Matrix p = linalg::svd_thin(g).U.leading_cols(2);
    const Matrix r = matmul_tn(p, g);
    const Matrix n = as_matrix(adam.direction(r.data()), 2, 6);
    w_oracle += (eta * alpha) * matmul(p, n);
    CHECK(max_abs_diff(state.projector().left(), p) == 0.0);
    CHECK(max_abs_diff(w, w_oracle) <= 1e-12);
  }
}

TEST_CASE("galore: switch policies agree while the subspace never changes") {
  std::mt19937_64 rng(6);
  std::vector<Matrix> grads;
  for (int t = 0; t < 40; ++t) grads.push_back(random_matrix(5, 7, rng));
  std::vector<Matrix> finals;
  for (auto policy : {SwitchPolicy::Carry, SwitchPolicy::Reset, SwitchPolicy::Rotate}) {
    auto o = galore_opts(2, 100, 0.25, InnerRule::Adam);
    o.switch_policy = policy;
    GaLoreState state(5, 7, o);
    Matrix w(5, 7);
    for (std::int64_t t = 0; t < 40; ++t) galore_step(w, grads[t], state, 0.01, t);
    finals.push_back(w);
  }
  CHECK(finals[0] == finals[1]);
  CHECK(finals[0] == finals[2]);
}

TEST_CASE("galore: reset policy zeroes moments at a switch") {
  std::mt19937_64 rng(7);
  auto o = galore_opts(2, 3, 0.25, InnerRule::Adam);
  o.switch_policy = SwitchPolicy::Reset;
  GaLoreState state(4, 6, o);
  Matrix w(4, 6);
  for (std::int64_t t = 0; t < 3; ++t) galore_step(w, random_matrix(4, 6, rng), state, 0.01, t);
  galore_step(w, random_matrix(4, 6, rng), state, 0.01, 3);
  CHECK(state.adam()->t == 1);
}

TEST_CASE("galore: state entries follow r·max(m,n)·2 + min(m,n)·r") {
  for (auto [m, n, r] : {std::tuple{4, 10, 2}, {10, 4, 3}, {8, 8, 8}}) {
    GaLoreState state(m, n, galore_opts(r, 200, 0.25, InnerRule::Adam));
    const std::size_t big = std::max(m, n), small = std::min(m, n);
    CHECK(state.state_entries() == static_cast<std::size_t>(2 * r * big + small * r));
  }
  GaLoreState ada(4, 10, galore_opts(2, 200, 0.25, InnerRule::Adafactor));
  CHECK(ada.state_entries() == static_cast<std::size_t>(4 * 2 + 2 * 10 + 2 + 10));
  GaLoreState id(4, 10, galore_opts(2, 200, 0.25, InnerRule::Identity));
  CHECK(id.state_entries() == static_cast<std::size_t>(4 * 2));
}

TEST_CASE("galore: 8-bit storage stays close to float storage") {
  std::mt19937_64 rng(8);
  auto o = galore_opts(3, 10, 0.25, InnerRule::Adam);
  GaLoreState fstate(6, 9, o);
  o.storage = StateStorage::Int8Blockwise;
  o.quant_block = 16;
  GaLoreState qstate(6, 9, o);
  Matrix wf(6, 9), wq(6, 9);
  double step_norm = 0.0;
  for (std::int64_t t = 0; t < 30; ++t) {
    const Matrix g = random_matrix(6, 9, rng);
    step_norm += galore_step(wf, g, fstate, 0.01, t).frobenius_norm();
    galore_step(wq, g, qstate, 0.01, t);
  }
  CHECK(wq.all_finite());
  CHECK(frobenius_distance(wf, wq) <= 0.1 * step_norm);
  CHECK(wf != wq);
}

TEST_CASE("galore: errors") {
  GaLoreState state(3, 4, galore_opts(2, 10, 0.25, InnerRule::Adam));
  Matrix w(3, 4);
  CHECK_THROWS_AS(galore_step(w, Matrix(4, 3), state, 0.1, 0), InvalidInput);
  CHECK_THROWS_AS(GaLoreState(3, 4, galore_opts(2, 10, 0.0, InnerRule::Adam)), InvalidInput);
}

TEST_CASE("lora: first step moves only B") {
  std::mt19937_64 rng(9);
  auto s = LoraState::init(random_matrix(4, 4, rng), 2, 4.0, rng);
  const Matrix a0 = s.a;
  lora_adam_step(s, random_matrix(4, 4, rng), 0.01);
  CHECK(s.a == a0);
  CHECK(s.b.max_abs() > 0.0);
}

TEST_CASE("lora: zero gradient leaves everything unchanged") {
  std::mt19937_64 rng(10);
  auto s = LoraState::init(random_matrix(3, 5, rng), 2, 4.0, rng);
  const Matrix eff = s.effective();
  lora_adam_step(s, Matrix(3, 5), 0.01);
  CHECK(s.effective() == eff);
}

TEST_CASE("lora: two steps match a recomputed effective weight") {
  std::mt19937_64 rng(11);
  const Matrix w0 = random_matrix(4, 4, rng);
  auto s = LoraState::init(w0, 2, 4.0, rng);
  const double scale = 4.0 / 2.0;
  Matrix b = s.b, a = s.a;
  ScalarAdam adam_b(8), adam_a(8);
  for (int t = 0; t < 2; ++t) {
    const Matrix g = random_matrix(4, 4, rng);
    lora_adam_step(s, g, 0.05);
    const Matrix gb = scale * matmul_nt(g, a);
    const Matrix ga = scale * matmul_tn(b, g);
    b += 0.05 * as_matrix(adam_b.direction(gb.data()), 4, 2);
    a += 0.05 * as_matrix(adam_a.direction(ga.data()), 2, 4);
  }
  const Matrix expected = w0 + scale * matmul(b, a);
  CHECK(max_abs_diff(s.effective(), expected) <= 1e-12);
  CHECK(s.state_entries() == 2 * (4 * 2) + 2 * (2 * 4));
  CHECK_THROWS_AS(lora_adam_step(s, Matrix(4, 3), 0.1), InvalidInput);
}

TEST_CASE("q8: zero block and absmax entries") {
  const std::vector<double> zeros(10, 0.0);
  const auto enc = q8_encode(zeros);
  for (auto c : enc.front().codes) CHECK(c == 0);
  for (double x : q8_decode(enc)) CHECK(x == 0.0);

  const std::vector<double> v{0.3, -1.7, 0.9, 1.7};
  const auto dec = q8_decode(q8_encode(v));
  CHECK(dec[1] == -1.7);
  CHECK(dec[3] == 1.7);
}

TEST_CASE("q8: brute-force error bound per block") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> v(1000);
  for (double& x : v) x = u(rng);
  for (std::size_t block : {std::size_t{256}, std::size_t{64}, std::size_t{7}}) {
    const auto enc = q8_encode(v, block);
    CHECK(enc.size() == (v.size() + block - 1) / block);
    const auto dec = q8_decode(enc);
    for (std::size_t b = 0; b * block < v.size(); ++b) {
      double absmax = 0.0;
      const std::size_t end = std::min(v.size(), (b + 1) * block);
      for (std::size_t i = b * block; i < end; ++i) absmax = std::max(absmax, std::abs(v[i]));
      for (std::size_t i = b * block; i < end; ++i) REQUIRE(std::abs(v[i] - dec[i]) <= absmax / 127.0);
    }
  }
}

TEST_CASE("q8: matrix round trip keeps shape") {
  std::mt19937_64 rng(13);
  const Matrix x = random_matrix(5, 7, rng);
  const auto rt = q8_roundtrip(x, 16);
  CHECK(rt.dequantized.same_shape(x));
  CHECK(rt.blocks.size() == 3);
}
