#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

#include "meepo/tape.hpp"
#include "meepo/tensor.hpp"

namespace meepo::num {

// Central-difference check of the tape gradient for a scalar-valued build
// function f(tape, xs...) -> Var. Returns the max relative error with
// denominator max(|analytic|, |numeric|, 1e-8). Meaningful in 64-bit only.
template <class T, class F>
double grad_check_inputs(F f, std::vector<Tensor<T>> xs, T h) {
  Tape<T> tape;
  std::vector<Var<T>> vars;
  vars.reserve(xs.size());
  for (const auto& x : xs) vars.push_back(make_leaf(tape, x, true));
  Var<T> out = f(tape, vars);
  tape.backward(out.id);
  std::vector<Tensor<T>> analytic;
  analytic.reserve(xs.size());
  for (const auto& v : vars) analytic.push_back(tape.grad(v.id));

  auto eval = [&](const std::vector<Tensor<T>>& pts) -> double {
    Tape<T> t2;
    std::vector<Var<T>> vs;
    vs.reserve(pts.size());
    for (const auto& p : pts) vs.push_back(make_leaf(t2, p, false));
    return static_cast<double>(f(t2, vs).val()[0]);
  };

  double worst = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::int64_t i = 0; i < xs[k].numel(); ++i) {
      const T keep = xs[k][i];
      xs[k][i] = keep + h;
      const double fp = eval(xs);
      xs[k][i] = keep - h;
      const double fm = eval(xs);
      xs[k][i] = keep;
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[k][i]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

template <class T, class F>
double grad_check(F f, const Tensor<T>& x, T h) {
  return grad_check_inputs<T>(
      [&f](Tape<T>& t, const std::vector<Var<T>>& vs) { return f(t, vs[0]); }, {x}, h);
}

}  // namespace meepo::num
