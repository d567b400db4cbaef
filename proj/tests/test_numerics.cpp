#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "meepo/grad_check.hpp"
#include "meepo/tape.hpp"
#include "meepo/tensor.hpp"

using meepo::num::ConvMode;
using meepo::num::Tape;
using meepo::num::Tensor;
using meepo::num::Var;
namespace num = meepo::num;

namespace {

Tensor<double> randn(std::vector<std::int64_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  num::fill_normal(t, seed, 0.0, scale);
  return t;
}

// Scalarizes a matrix output against fixed generic weights so the check
// exercises every Jacobian entry.
Var<double> weighted_sum(Tape<double>& t, Var<double> y, std::uint64_t seed) {
  Tensor<double> w(y.val().shape);
  num::fill_normal(w, seed, 0.0, 1.0);
  return num::sum_all(num::mul(y, num::make_const(t, std::move(w))));
}

}  // namespace

TEST_CASE("tensor shape and matmul basics") {
  auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
  auto b = Tensor<double>::matrix({{5, 6}, {7, 8}});
  auto c = num::matmul(a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(1, 1) == 50);
  auto ct = num::matmul(a, b, false, true);  // a b^T
  CHECK(ct.at(0, 0) == 17);
  CHECK_THROWS_AS(num::matmul(a, Tensor<double>({3, 2})), num::DimensionError);
  CHECK_THROWS_AS(Tensor<double>({2, -1}), num::DimensionError);
}

TEST_CASE("linear matches the worked example") {
  Tape<double> t;
  auto x = num::make_leaf(t, Tensor<double>::matrix({{1, 1}}));
  auto W = num::make_leaf(t, Tensor<double>::matrix({{2}, {3}}));
  auto b = num::make_leaf(t, Tensor<double>({1}, {1.0}));
  auto y = num::linear(x, W, b);
  CHECK(y.val().numel() == 1);
  CHECK(y.val()[0] == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("causal depthwise conv matches the worked example") {
  Tape<double> t;
  auto x = num::make_leaf(t, Tensor<double>({3, 1}, {1, 2, 3}));
  auto k = num::make_leaf(t, Tensor<double>({2, 1}, {1, 1}));
  auto y = num::depthwise_conv1d(x, k, ConvMode::causal);
  CHECK(y.val()[0] == 1);
  CHECK(y.val()[1] == 3);
  CHECK(y.val()[2] == 5);
}

TEST_CASE("symmetric even-K conv pads the extra tap to the past") {
  Tape<double> t;
  auto x = num::make_leaf(t, Tensor<double>({3, 1}, {1, 2, 3}));
  auto k = num::make_leaf(t, Tensor<double>({2, 1}, {1, 1}));
  auto y = num::depthwise_conv1d(x, k, ConvMode::symmetric);
  CHECK(y.val()[0] == 1);
  CHECK(y.val()[1] == 3);
  CHECK(y.val()[2] == 5);
}

TEST_CASE("symmetric odd-K conv is centered") {
  Tape<double> t;
  auto x = num::make_leaf(t, Tensor<double>({3, 1}, {1, 2, 3}));
  auto k = num::make_leaf(t, Tensor<double>({3, 1}, {1, 1, 1}));
  auto y = num::depthwise_conv1d(x, k, ConvMode::symmetric);
  CHECK(y.val()[0] == 3);  // 0+1+2
  CHECK(y.val()[1] == 6);
  CHECK(y.val()[2] == 5);  // 2+3+0
}

TEST_CASE("causal conv output is invariant to future perturbations") {
  const std::int64_t L = 8, C = 3;
  auto x = randn({L, C}, 11);
  auto k = randn({3, C}, 12);
  for (std::int64_t cut = 0; cut < L - 1; ++cut) {
    Tape<double> t;
    auto xv = num::make_leaf(t, x, false);
    auto kv = num::make_leaf(t, k, false);
    auto y0 = num::depthwise_conv1d(xv, kv, ConvMode::causal).val();
    auto xp = x;
    for (std::int64_t s = cut + 1; s < L; ++s)
      for (std::int64_t c = 0; c < C; ++c) xp.at(s, c) += 7.0;
    Tape<double> t2;
    auto y1 = num::depthwise_conv1d(num::make_leaf(t2, xp, false), num::make_leaf(t2, k, false),
                                    ConvMode::causal)
                  .val();
    for (std::int64_t s = 0; s <= cut; ++s)
      for (std::int64_t c = 0; c < C; ++c) CHECK(y0.at(s, c) == y1.at(s, c));
  }
}

TEST_CASE("symmetric conv sees the future") {
  auto x = randn({8, 2}, 21);
  auto k = randn({3, 2}, 22);
  Tape<double> t;
  auto y0 = num::depthwise_conv1d(num::make_leaf(t, x, false), num::make_leaf(t, k, false),
                                  ConvMode::symmetric)
                .val();
  auto xp = x;
  xp.at(5, 0) += 1.0;
  Tape<double> t2;
  auto y1 = num::depthwise_conv1d(num::make_leaf(t2, xp, false), num::make_leaf(t2, k, false),
                                  ConvMode::symmetric)
                .val();
  CHECK(y0.at(4, 0) != y1.at(4, 0));
}

TEST_CASE("layer_norm rows are standardized before the affine") {
  auto x = randn({5, 16}, 31, 3.0);
  Tape<double> t;
  auto y = num::layer_norm(num::make_leaf(t, x, false),
                           num::make_const(t, Tensor<double>::full({16}, 1.0)),
                           num::make_const(t, Tensor<double>::zeros({16})));
  for (std::int64_t i = 0; i < 5; ++i) {
    double mu = 0, var = 0;
    for (std::int64_t j = 0; j < 16; ++j) mu += y.val().at(i, j);
    mu /= 16;
    for (std::int64_t j = 0; j < 16; ++j) var += (y.val().at(i, j) - mu) * (y.val().at(i, j) - mu);
    var /= 16;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("softmax rows sum to one") {
  auto x = randn({6, 9}, 41, 4.0);
  Tape<double> t;
  auto p = num::softmax_rows(num::make_leaf(t, x, false));
  for (std::int64_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::int64_t j = 0; j < 9; ++j) s += p.val().at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("cross entropy closed forms") {
  {
    Tape<double> t;
    auto l = num::make_leaf(t, Tensor<double>::matrix({{0, 0}}), false);
    CHECK(num::cross_entropy(l, {0}, -1).val()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    Tape<double> t;
    auto l = num::make_leaf(t, Tensor<double>::matrix({{10, -10}}), false);
    const double expected = std::log1p(std::exp(-20.0));  // -ln sigmoid(20)
    CHECK(num::cross_entropy(l, {0}, -1).val()[0] == doctest::Approx(expected).epsilon(1e-6));
    CHECK(num::cross_entropy(l, {0}, -1).val()[0] < 1e-8);
  }
  {
    Tape<double> t;
    auto l = num::make_leaf(t, Tensor<double>::matrix({{1, 2}, {3, 4}}), false);
    CHECK(num::cross_entropy(l, {-1, -1}, -1).val()[0] == 0.0);
  }
  {
    Tape<double> t;
    auto l = num::make_leaf(t, Tensor<double>::matrix({{1, 2}}), false);
    CHECK_THROWS_AS(num::cross_entropy(l, {5}, -1), num::DataError);
  }
}

TEST_CASE("grad_check worked examples") {
  SUBCASE("sum of squares") {
    Tensor<double> x({3}, {1, 2, 3});
    double err = num::grad_check(
        [](Tape<double>& t, Var<double> v) { return num::sum_all(num::mul(v, v)); }, x, 1e-5);
    CHECK(err < 1e-6);
  }
  SUBCASE("cross entropy after linear") {
    auto x = randn({3, 4}, 51);
    auto W = randn({4, 3}, 52);
    double err = num::grad_check_inputs<double>(
        [](Tape<double>& t, const std::vector<Var<double>>& v) {
          return num::cross_entropy(num::linear(v[0], v[1]), {0, 2, 1}, -1);
        },
        {x, W}, 1e-5);
    CHECK(err < 1e-4);
  }
  SUBCASE("silu") {
    Tensor<double> x({3}, {-1, 0, 1});
    double err = num::grad_check(
        [](Tape<double>& t, Var<double> v) { return num::sum_all(num::silu(v)); }, x, 1e-5);
    CHECK(err < 1e-6);
  }
}

TEST_CASE("every primitive passes finite-difference checks") {
  const double h = 1e-5, tol = 1e-4;
  auto a = randn({4, 3}, 61);
  auto b = randn({4, 3}, 62);

  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::add(v[0], v[1]), 100);
            },
            {a, b}, h) < tol);
  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::mul(v[0], v[1]), 101);
            },
            {a, b}, h) < tol);
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) { return weighted_sum(t, num::scale(v, 2.5), 102); },
            a, h) < tol);
  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::linear(v[0], v[1], v[2]), 103);
            },
            {randn({3, 4}, 63), randn({4, 2}, 64), randn({2}, 65)}, h) < tol);
  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::matmul_op(v[0], v[1]), 104);
            },
            {randn({3, 4}, 66), randn({4, 2}, 67)}, h) < tol);
  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::matmul_op(v[0], v[1], true), 105);
            },
            {randn({3, 4}, 68), randn({5, 4}, 69)}, h) < tol);
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) { return weighted_sum(t, num::silu(v), 106); }, a,
            h) < tol);
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) { return weighted_sum(t, num::softplus(v), 107); },
            a, h) < tol);
  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::layer_norm(v[0], v[1], v[2]), 108);
            },
            {randn({4, 6}, 70, 2.0), randn({6}, 71), randn({6}, 72)}, h) < tol);
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) {
              return weighted_sum(t, num::softmax_rows(v), 109);
            },
            randn({4, 5}, 73), h) < tol);
  for (auto mode : {ConvMode::causal, ConvMode::symmetric}) {
    CHECK(num::grad_check_inputs<double>(
              [mode](Tape<double>& t, const std::vector<Var<double>>& v) {
                return weighted_sum(t, num::depthwise_conv1d(v[0], v[1], mode), 110);
              },
              {randn({7, 2}, 74), randn({4, 2}, 75)}, h) < tol);
  }
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) {
              return weighted_sum(t, num::gather_rows(v, {2, 0, 0, 3}), 111);
            },
            randn({4, 3}, 76), h) < tol);
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) {
              return weighted_sum(t, num::segment_mean(v, {0, 1, 0, 2, 1}, 3), 112);
            },
            randn({5, 3}, 77), h) < tol);
  CHECK(num::grad_check(
            [](Tape<double>& t, Var<double> v) {
              return weighted_sum(t, num::slice_cols(v, 1, 2), 113);
            },
            randn({4, 5}, 78), h) < tol);
  CHECK(num::grad_check_inputs<double>(
            [](Tape<double>& t, const std::vector<Var<double>>& v) {
              return weighted_sum(t, num::concat_cols<double>({v[0], v[1]}), 114);
            },
            {randn({4, 2}, 79), randn({4, 3}, 80)}, h) < tol);
}

TEST_CASE("shared subexpressions accumulate gradients") {
  // d/dx sum(x*x + x) = 2x + 1
  Tensor<double> x({3}, {1, -2, 0.5});
  Tape<double> t;
  auto v = num::make_leaf(t, x, true);
  auto y = num::sum_all(num::add(num::mul(v, v), v));
  t.backward(y.id);
  for (int i = 0; i < 3; ++i) CHECK(t.grad(v.id)[i] == doctest::Approx(2 * x[i] + 1).epsilon(1e-12));
}

TEST_CASE("float instantiation runs the same graph") {
  Tape<float> t;
  auto x = num::make_leaf(t, Tensor<float>::matrix({{1.f, 1.f}}));
  auto W = num::make_leaf(t, Tensor<float>::matrix({{2.f}, {3.f}}));
  auto y = num::sum_all(num::silu(num::linear(x, W)));
  t.backward(y.id);
  CHECK(std::isfinite(y.val()[0]));
  CHECK(t.grad(W.id).numel() == 2);
}
