#pragma once
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "meepo/errors.hpp"

namespace meepo::num {

// Dense row-major tensor. T is float for training runs, double for the
// gradient/property test paths.
template <class T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::vector<std::int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto e : s) {
      if (e < 1) throw DimensionError("tensor extent must be >= 1, got " + std::to_string(e));
      n *= e;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::int64_t> s, T v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  // 2-D convenience; most of the library works on [rows x cols] matrices.
  static Tensor matrix(std::int64_t r, std::int64_t c) { return Tensor({r, c}); }
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::int64_t r = static_cast<std::int64_t>(rows.size());
    const std::int64_t c = r ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    std::int64_t i = 0;
    for (const auto& row : rows) {
      if (static_cast<std::int64_t>(row.size()) != c)
        throw DimensionError("matrix: ragged initializer");
      for (T v : row) t.data[static_cast<std::size_t>(i++)] = v;
    }
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  std::int64_t rows() const { return shape.at(0); }
  std::int64_t cols() const { return shape.at(1); }

  T& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * cols() + j)]; }
  T at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * cols() + j)]; }
  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static std::string shape_str(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
  }
  std::string shape_str() const { return shape_str(shape); }
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <class T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.ndim() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + a.shape_str());
}

// C += A * B  (optionally transposing either operand). Plain loops, ordered
// for row-major locality; desk-scale sizes only.
template <class T>
void gemm_acc(const Tensor<T>& A, bool ta, const Tensor<T>& B, bool tb, Tensor<T>& C) {
  const std::int64_t m = ta ? A.cols() : A.rows();
  const std::int64_t k = ta ? A.rows() : A.cols();
  const std::int64_t kb = tb ? B.cols() : B.rows();
  const std::int64_t n = tb ? B.rows() : B.cols();
  if (k != kb || C.rows() != m || C.cols() != n)
    throw DimensionError("gemm: inner/output extents do not match: " + A.shape_str() + (ta ? "^T" : "") +
                         " * " + B.shape_str() + (tb ? "^T" : "") + " -> " + C.shape_str());
  if (!ta && !tb) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t p = 0; p < k; ++p) {
        const T a = A.at(i, p);
        if (a == T(0)) continue;
        const T* brow = &B.data[static_cast<std::size_t>(p * n)];
        T* crow = &C.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else if (!ta && tb) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        const T* arow = &A.data[static_cast<std::size_t>(i * k)];
        const T* brow = &B.data[static_cast<std::size_t>(j * k)];
        T acc = 0;
        for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        C.at(i, j) += acc;
      }
  } else if (ta && !tb) {
    for (std::int64_t p = 0; p < k; ++p)
      for (std::int64_t i = 0; i < m; ++i) {
        const T a = A.at(p, i);
        if (a == T(0)) continue;
        const T* brow = &B.data[static_cast<std::size_t>(p * n)];
        T* crow = &C.data[static_cast<std::size_t>(i * n)];
        for (std::int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
      }
  } else {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        T acc = 0;
        for (std::int64_t p = 0; p < k; ++p) acc += A.at(p, i) * B.at(j, p);
        C.at(i, j) += acc;
      }
  }
}

template <class T>
Tensor<T> matmul(const Tensor<T>& A, const Tensor<T>& B, bool ta = false, bool tb = false) {
  Tensor<T> C({ta ? A.cols() : A.rows(), tb ? B.rows() : B.cols()});
  gemm_acc(A, ta, B, tb, C);
  return C;
}

// Uniform fill in [lo, hi) from the given engine.
template <class T>
void fill_uniform(Tensor<T>& t, std::mt19937_64& rng, T lo, T hi) {
  std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.data) v = static_cast<T>(d(rng));
}

template <class T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, T mean, T stddev) {
  std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
  for (auto& v : t.data) v = static_cast<T>(d(rng));
}

template <class T>
void fill_uniform(Tensor<T>& t, std::uint64_t seed, T lo, T hi) {
  std::mt19937_64 rng(seed);
  fill_uniform(t, rng, lo, hi);
}

template <class T>
void fill_normal(Tensor<T>& t, std::uint64_t seed, T mean, T stddev) {
  std::mt19937_64 rng(seed);
  fill_normal(t, rng, mean, stddev);
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (auto v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace meepo::num
