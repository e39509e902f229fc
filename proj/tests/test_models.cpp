#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <doctest.h>

#include "galore/error.hpp"
#include "galore/models.hpp"
#include "test_util.hpp"

using namespace galore;
using namespace galore::models;
using galore::testing::random_matrix;

namespace {

ReversibleNet random_net(const std::vector<std::size_t>& dims, std::mt19937_64& rng,
                         Activation act = Activation::Identity, LossKind loss = LossKind::L2) {
  ReversibleNet net;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    net.layers.push_back(random_matrix(dims[l + 1], dims[l], rng, 1.0 / std::sqrt(static_cast<double>(dims[l]))));
  }
  net.activation = act;
  net.loss = loss;
  return net;
}

Matrix one_hot(std::size_t classes, std::size_t batch, std::mt19937_64& rng) {
  Matrix y(classes, batch);
  for (std::size_t j = 0; j < batch; ++j) y(rng() % classes, j) = 1.0;
  return y;
}

Matrix column_of(const Matrix& x, std::size_t j) { return Matrix::column(x.col(j)); }

}  // namespace

TEST_CASE("forward examples") {
  ReversibleNet one{{Matrix::identity(3)}};
  const std::vector<double> x{1.5, -2.0, 0.25};
  CHECK(forward(one, x) == x);

  ReversibleNet two{{Matrix{{2}}, Matrix{{2}}}};
  const std::vector<double> s{0.75};
  CHECK(forward(two, s).front() == 3.0);
}

TEST_CASE("identity-activation forward is the product of layer maps") {
  std::mt19937_64 rng(1);
  const auto net = random_net({4, 6, 5, 3}, rng);
  const Matrix x = random_matrix(4, 7, rng);
  const Matrix chain = matmul(net.layers[2], matmul(net.layers[1], net.layers[0]));
  CHECK(max_abs_diff(forward(net, x).output(), matmul(chain, x)) <= 1e-12);
}

TEST_CASE("single-layer L2 gradient example") {
  ReversibleNet net{{Matrix{{0}}}};
  const auto rep = backward(net, Matrix{{1}}, Matrix{{2}});
  CHECK(rep.grads.front() == Matrix{{2}});
}

TEST_CASE("uniform softmax gradient example") {
  const std::vector<double> f{0, 0, 0};
  const std::vector<double> y{1, 0, 0};
  const auto cmp = softmax_grad_approx(f, y);
  CHECK(cmp.exact[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(cmp.exact[1] == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
  CHECK(cmp.exact[2] == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));

  ReversibleNet net{{Matrix(3, 2)}};
  net.loss = LossKind::LogSoftmax;
  const auto rep = backward(net, Matrix{{1}, {0}}, Matrix{{1}, {0}, {0}});
  CHECK(rep.grads.front()(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(rep.grads.front()(1, 0) == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("backprop matches finite differences on leaky-ReLU nets") {
  std::mt19937_64 rng(2);
  for (auto loss_kind : {LossKind::L2, LossKind::LogSoftmax}) {
    const auto net = random_net({5, 7, 4}, rng, Activation::LeakyRelu, loss_kind);
    const Matrix x = random_matrix(5, 6, rng);
    const Matrix y = loss_kind == LossKind::L2 ? random_matrix(4, 6, rng) : one_hot(4, 6, rng);
    const auto bp = backward(net, x, y);
    const auto fd = finite_diff_grad(net, x, y);
    for (std::size_t l = 0; l < net.depth(); ++l) CHECK(relative_grad_error(bp.grads[l], fd.grads[l]) <= 1e-5);
  }
}

TEST_CASE("closed-form gradient equals backprop on chained linear nets") {
  std::mt19937_64 rng(3);
  const auto net = random_net({4, 5, 6, 3}, rng);
  const Matrix x = random_matrix(4, 1, rng);
  const Matrix y = random_matrix(3, 1, rng);
  const auto bp = backward(net, x, y);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const Matrix cf = closed_form_grad_l2(net, x.col(0), y.col(0), l);
    CHECK(relative_grad_error(cf, bp.grads[l]) <= 1e-10);
  }
}

TEST_CASE("closed-form gradient special cases") {
  std::mt19937_64 rng(4);
  const auto one = random_net({3, 2}, rng);
  const std::vector<double> x{0.5, -1.0, 2.0};
  const std::vector<double> y{1.0, 0.0};
  const Matrix g = closed_form_grad_l2(one, x, y, 0);
  const auto wx = forward(one, x);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(g(i, j) == doctest::Approx((y[i] - wx[i]) * x[j]).epsilon(1e-14));
  }

  const auto deep = random_net({3, 4, 2}, rng);
  const std::vector<double> zero(3, 0.0);
  for (std::size_t l = 0; l < 2; ++l) CHECK(closed_form_grad_l2(deep, zero, y, l).max_abs() == 0.0);

  auto leaky = deep;
  leaky.activation = Activation::LeakyRelu;
  CHECK_THROWS_AS(closed_form_grad_l2(leaky, x, y, 0), UnsupportedConfiguration);
}

TEST_CASE("batch gradient is the mean of per-sample gradients") {
  std::mt19937_64 rng(5);
  const auto net = random_net({4, 5, 3}, rng, Activation::LeakyRelu);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix y = random_matrix(3, 5, rng);
  const auto batch = backward(net, x, y);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    Matrix mean(batch.grads[l].rows(), batch.grads[l].cols());
    for (std::size_t j = 0; j < 5; ++j) mean += backward(net, column_of(x, j), column_of(y, j)).grads[l];
    mean *= 0.2;
    CHECK(max_abs_diff(mean, batch.grads[l]) <= 1e-12);
  }
}

TEST_CASE("backward_sweep streams the same gradients last layer first") {
  std::mt19937_64 rng(6);
  auto net = random_net({3, 4, 4, 2}, rng, Activation::LeakyRelu);
  const Matrix x = random_matrix(3, 8, rng);
  const Matrix y = random_matrix(2, 8, rng);
  const auto ref = backward(net, x, y);
  std::vector<std::size_t> order;
  const double l = backward_sweep(net, x, y, [&](std::size_t idx, const Matrix& g) {
    order.push_back(idx);
    CHECK(g == ref.grads[idx]);
  });
  CHECK(order == std::vector<std::size_t>{2, 1, 0});
  CHECK(l == ref.loss);
}

TEST_CASE("softmax expansion: constants and uniform labels") {
  const std::vector<double> f(4, 3.7);
  const std::vector<double> y{0, 0, 1, 0};
  const auto cmp = softmax_grad_approx(f, y);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expect = y[i] - 0.25;
    CHECK(cmp.exact[i] == doctest::Approx(expect).epsilon(1e-14));
    CHECK(cmp.approx[i] == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK(cmp.gamma == 1.0);
}

TEST_CASE("softmax expansion residual is quadratic in the logit scale") {
  std::mt19937_64 rng(7);
  const std::size_t k = 8;
  std::vector<double> dir(k);
  std::normal_distribution<double> normal;
  for (double& d : dir) d = normal(rng);
  double mean = 0.0;
  for (double d : dir) mean += d / k;
  double inf = 0.0;
  for (double& d : dir) {
    d -= mean;
    inf = std::max(inf, std::abs(d));
  }
  std::vector<double> y(k, 0.0);
  y[3] = 1.0;

  // At ‖f̂‖_∞ = 0.01 the residual stays within 2‖f̂‖²_∞/K.
  std::vector<double> f(k);
  for (std::size_t i = 0; i < k; ++i) f[i] = 0.01 * dir[i] / inf;
  CHECK(softmax_grad_approx(f, y).max_abs_diff <= 2.0 * 1e-4 / k);

  // Least-squares slope of log residual against log scale over 1e-1 .. 1e-4.
  std::vector<double> lx, ly;
  for (double scale = 1e-1; scale >= 1e-4; scale /= std::sqrt(10.0)) {
    for (std::size_t i = 0; i < k; ++i) f[i] = scale * dir[i] / inf;
    lx.push_back(std::log(scale));
    ly.push_back(std::log(softmax_grad_approx(f, y).max_abs_diff));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / lx.size();
    my += ly[i] / ly.size();
  }
  double num = 0, den = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  CHECK(num / den == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("finite differences at a stationary point and on a quadratic") {
  ReversibleNet net{{Matrix{{1, 2}, {3, 4}}}};
  const Matrix x{{1}, {-1}};
  const Matrix y = forward(net, x).output();
  const auto flat = finite_diff_grad(net, x, y);
  for (double g : flat.grads.front().data()) CHECK(std::abs(g) <= 1e-9);

  std::mt19937_64 rng(8);
  const Matrix y2 = random_matrix(2, 1, rng);
  const auto fd = finite_diff_grad(net, x, y2);
  const auto bp = backward(net, x, y2);
  CHECK(max_abs_diff(fd.grads.front(), bp.grads.front()) <= 1e-9);
}

TEST_CASE("model errors") {
  ReversibleNet bad{{Matrix(3, 2), Matrix(2, 4)}};
  CHECK_THROWS_AS(bad.validate(), InvalidInput);
  ReversibleNet net{{Matrix(2, 3)}};
  CHECK_THROWS_AS(backward(net, Matrix(4, 1), Matrix(2, 1)), InvalidInput);
  CHECK_THROWS_AS(backward(net, Matrix(3, 1), Matrix(3, 1)), InvalidInput);
  net.loss = LossKind::LogSoftmax;
  CHECK_THROWS_AS(backward(net, Matrix(3, 1), Matrix{{0.5}, {0.5}}), InvalidInput);
}
