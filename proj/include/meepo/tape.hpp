#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/tensor.hpp"

namespace meepo::num {

enum class ConvMode { causal, symmetric };

// Reverse-mode tape. Nodes are coarse tensor operations; each records the
// ids of its operands and a closure computing the adjoint. Entries are in
// topological order by construction, and backward() visits each exactly once
// in reverse. Single-writer: one tape per forward pass.
template <class T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  int leaf(Tensor<T> v, bool requires_grad) {
    nodes_.push_back(Node{std::move(v), {}, nullptr, requires_grad});
    return static_cast<int>(nodes_.size()) - 1;
  }

  int record(Tensor<T> out, std::vector<int> inputs, BackFn bw) {
    bool req = false;
    for (int i : inputs) req = req || nodes_[static_cast<std::size_t>(i)].req;
    nodes_.push_back(Node{std::move(out), std::move(inputs), req ? std::move(bw) : nullptr, req});
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].req; }
  std::size_t size() const { return nodes_.size(); }

  // Valid between backward() and the next recording.
  Tensor<T>& grad(int id) {
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.data.empty()) g = Tensor<T>::zeros(nodes_[static_cast<std::size_t>(id)].value.shape);
    return g;
  }

  void backward(int root) {
    if (nodes_[static_cast<std::size_t>(root)].value.numel() != 1)
      throw DimensionError("backward: root must be a scalar, got " +
                           nodes_[static_cast<std::size_t>(root)].value.shape_str());
    grads_.assign(nodes_.size(), Tensor<T>{});
    grad(root)[0] = T(1);
    for (int id = root; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.bw) continue;
      if (grads_[static_cast<std::size_t>(id)].data.empty()) continue;  // no incoming adjoint
      n.bw(*this, id);
    }
  }

  const std::vector<int>& inputs(int id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<int> inputs;
    BackFn bw;
    bool req;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr; }
  const Tensor<T>& val() const { return tape->val(id); }
  const Tensor<T>& grad() const { return tape->grad(id); }
};

template <class T>
Var<T> make_leaf(Tape<T>& tape, Tensor<T> v, bool requires_grad = true) {
  return {&tape, tape.leaf(std::move(v), requires_grad)};
}

template <class T>
Var<T> make_const(Tape<T>& tape, Tensor<T> v) {
  return {&tape, tape.leaf(std::move(v), false)};
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra primitives
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape(a.val(), b.val(), "add");
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
  int id = a.tape->record(std::move(out), {a.id, b.id}, [](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    for (int which = 0; which < 2; ++which) {
      auto& gi = t.grad(in[static_cast<std::size_t>(which)]);
      for (std::int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
    }
  });
  return {a.tape, id};
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape(a.val(), b.val(), "mul");
  Tensor<T> out = a.val();
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
  int id = a.tape->record(std::move(out), {a.id, b.id}, [](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    const auto& av = t.val(in[0]);
    const auto& bv = t.val(in[1]);
    auto& ga = t.grad(in[0]);
    auto& gb = t.grad(in[1]);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      ga[i] += g[i] * bv[i];
      gb[i] += g[i] * av[i];
    }
  });
  return {a.tape, id};
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.val();
  for (auto& v : out.data) v *= c;
  int id = a.tape->record(std::move(out), {a.id}, [c](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(t.inputs(self)[0]);
    for (std::int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * c;
  });
  return {a.tape, id};
}

// y = x W (+ b broadcast over rows)
template <class T>
Var<T> linear(Var<T> x, Var<T> W, std::optional<Var<T>> b = std::nullopt) {
  require_matrix(x.val(), "linear");
  require_matrix(W.val(), "linear");
  if (x.val().cols() != W.val().rows())
    throw DimensionError("linear: inner extents do not match: x " + x.val().shape_str() + " vs W " +
                         W.val().shape_str());
  Tensor<T> out = matmul(x.val(), W.val());
  if (b) {
    const auto& bv = b->val();
    if (bv.numel() != out.cols())
      throw DimensionError("linear: bias length " + bv.shape_str() + " does not match output width " +
                           out.shape_str());
    for (std::int64_t i = 0; i < out.rows(); ++i)
      for (std::int64_t j = 0; j < out.cols(); ++j) out.at(i, j) += bv[j];
  }
  std::vector<int> ins = {x.id, W.id};
  if (b) ins.push_back(b->id);
  int id = x.tape->record(std::move(out), std::move(ins), [](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    gemm_acc(g, false, t.val(in[1]), true, t.grad(in[0]));  // dX += G W^T
    gemm_acc(t.val(in[0]), true, g, false, t.grad(in[1]));  // dW += X^T G
    if (in.size() == 3) {
      auto& gb = t.grad(in[2]);
      for (std::int64_t i = 0; i < g.rows(); ++i)
        for (std::int64_t j = 0; j < g.cols(); ++j) gb[j] += g.at(i, j);
    }
  });
  return {x.tape, id};
}

template <class T>
Var<T> linear(Var<T> x, Var<T> W, Var<T> b) {
  return linear(x, W, std::optional<Var<T>>(b));
}

template <class T>
Var<T> matmul_op(Var<T> a, Var<T> b, bool tb = false) {
  Tensor<T> out = matmul(a.val(), b.val(), false, tb);
  int id = a.tape->record(std::move(out), {a.id, b.id}, [tb](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    if (!tb) {
      gemm_acc(g, false, t.val(in[1]), true, t.grad(in[0]));
      gemm_acc(t.val(in[0]), true, g, false, t.grad(in[1]));
    } else {  // C = A B^T
      gemm_acc(g, false, t.val(in[1]), false, t.grad(in[0]));
      gemm_acc(g, true, t.val(in[0]), false, t.grad(in[1]));
    }
  });
  return {a.tape, id};
}

template <class T>
Var<T> silu(Var<T> x) {
  Tensor<T> out = x.val();
  for (auto& v : out.data) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
    v = static_cast<T>(static_cast<double>(v) * s);
  }
  int id = x.tape->record(std::move(out), {x.id}, [](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.val(t.inputs(self)[0]);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double xd = static_cast<double>(xv[i]);
      const double s = 1.0 / (1.0 + std::exp(-xd));
      gx[i] += g[i] * static_cast<T>(s * (1.0 + xd * (1.0 - s)));
    }
  });
  return {x.tape, id};
}

inline double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

template <class T>
Var<T> softplus(Var<T> x) {
  Tensor<T> out = x.val();
  for (auto& v : out.data) v = static_cast<T>(softplus_scalar(static_cast<double>(v)));
  int id = x.tape->record(std::move(out), {x.id}, [](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.val(t.inputs(self)[0]);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::int64_t i = 0; i < g.numel(); ++i)
      gx[i] += g[i] * static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(xv[i]))));
  });
  return {x.tape, id};
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise normalization to zero mean / unit variance, then affine.
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
  require_matrix(x.val(), "layer_norm");
  const std::int64_t L = x.val().rows(), C = x.val().cols();
  if (gain.val().numel() != C || bias.val().numel() != C)
    throw DimensionError("layer_norm: affine extents " + gain.val().shape_str() + "/" + bias.val().shape_str() +
                         " do not match width " + std::to_string(C));
  Tensor<T> out({L, C});
  auto norm = std::make_shared<Tensor<T>>(Tensor<T>({L, C}));  // (x-mu)/sigma, reused in backward
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(L));
  for (std::int64_t i = 0; i < L; ++i) {
    double mu = 0;
    for (std::int64_t j = 0; j < C; ++j) mu += x.val().at(i, j);
    mu /= static_cast<double>(C);
    double var = 0;
    for (std::int64_t j = 0; j < C; ++j) {
      const double d = x.val().at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(C);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_sigma)[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < C; ++j) {
      const double y = (x.val().at(i, j) - mu) * is;
      norm->at(i, j) = static_cast<T>(y);
      out.at(i, j) = static_cast<T>(y * gain.val()[j] + bias.val()[j]);
    }
  }
  int id = x.tape->record(std::move(out), {x.id, gain.id, bias.id},
                          [norm, inv_sigma](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    const auto& gainv = t.val(in[1]);
    auto& gx = t.grad(in[0]);
    auto& gg = t.grad(in[1]);
    auto& gb = t.grad(in[2]);
    const std::int64_t L = g.rows(), C = g.cols();
    for (std::int64_t i = 0; i < L; ++i) {
      double m1 = 0, m2 = 0;  // mean(dy), mean(dy*y)
      for (std::int64_t j = 0; j < C; ++j) {
        const double dy = static_cast<double>(g.at(i, j)) * gainv[j];
        const double y = norm->at(i, j);
        m1 += dy;
        m2 += dy * y;
        gg[j] += g.at(i, j) * norm->at(i, j);
        gb[j] += g.at(i, j);
      }
      m1 /= static_cast<double>(C);
      m2 /= static_cast<double>(C);
      const double is = (*inv_sigma)[static_cast<std::size_t>(i)];
      for (std::int64_t j = 0; j < C; ++j) {
        const double dy = static_cast<double>(g.at(i, j)) * gainv[j];
        const double y = norm->at(i, j);
        gx.at(i, j) += static_cast<T>((dy - m1 - y * m2) * is);
      }
    }
  });
  return {x.tape, id};
}

template <class T>
Var<T> softmax_rows(Var<T> x) {
  require_matrix(x.val(), "softmax_rows");
  const std::int64_t L = x.val().rows(), C = x.val().cols();
  Tensor<T> out({L, C});
  for (std::int64_t i = 0; i < L; ++i) {
    double mx = -HUGE_VAL;
    for (std::int64_t j = 0; j < C; ++j) mx = std::max(mx, static_cast<double>(x.val().at(i, j)));
    double z = 0;
    for (std::int64_t j = 0; j < C; ++j) z += std::exp(static_cast<double>(x.val().at(i, j)) - mx);
    for (std::int64_t j = 0; j < C; ++j)
      out.at(i, j) = static_cast<T>(std::exp(static_cast<double>(x.val().at(i, j)) - mx) / z);
  }
  auto probs = std::make_shared<Tensor<T>>(out);
  int id = x.tape->record(std::move(out), {x.id}, [probs](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    const std::int64_t L = g.rows(), C = g.cols();
    for (std::int64_t i = 0; i < L; ++i) {
      double dot = 0;
      for (std::int64_t j = 0; j < C; ++j) dot += static_cast<double>(g.at(i, j)) * probs->at(i, j);
      for (std::int64_t j = 0; j < C; ++j)
        gx.at(i, j) += static_cast<T>(probs->at(i, j) * (static_cast<double>(g.at(i, j)) - dot));
    }
  });
  return {x.tape, id};
}

// Mean negative log-softmax over rows whose label is not ignore_label.
// Returns a scalar; 0 when every row is ignored.
template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels, int ignore_label) {
  require_matrix(logits.val(), "cross_entropy");
  const std::int64_t L = logits.val().rows(), K = logits.val().cols();
  if (static_cast<std::int64_t>(labels.size()) != L)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(L) + " rows");
  auto probs = std::make_shared<Tensor<T>>(Tensor<T>({L, K}));
  std::int64_t valid = 0;
  double loss = 0;
  for (std::int64_t i = 0; i < L; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y == ignore_label) continue;
    if (y < 0 || y >= K)
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                      std::to_string(K) + ") at row " + std::to_string(i));
    double mx = -HUGE_VAL;
    for (std::int64_t j = 0; j < K; ++j) mx = std::max(mx, static_cast<double>(logits.val().at(i, j)));
    double z = 0;
    for (std::int64_t j = 0; j < K; ++j) z += std::exp(static_cast<double>(logits.val().at(i, j)) - mx);
    for (std::int64_t j = 0; j < K; ++j)
      probs->at(i, j) = static_cast<T>(std::exp(static_cast<double>(logits.val().at(i, j)) - mx) / z);
    loss += -(static_cast<double>(logits.val().at(i, y)) - mx - std::log(z));
    ++valid;
  }
  if (valid > 0) loss /= static_cast<double>(valid);
  auto lab = std::make_shared<std::vector<int>>(labels);
  int id = logits.tape->record(Tensor<T>::scalar(static_cast<T>(loss)), {logits.id},
                               [probs, lab, ignore_label, valid](Tape<T>& t, int self) {
    if (valid == 0) return;
    const T g = t.grad(self)[0];
    auto& gx = t.grad(t.inputs(self)[0]);
    const std::int64_t L = gx.rows(), K = gx.cols();
    const T inv = static_cast<T>(1.0 / static_cast<double>(valid));
    for (std::int64_t i = 0; i < L; ++i) {
      const int y = (*lab)[static_cast<std::size_t>(i)];
      if (y == ignore_label) continue;
      for (std::int64_t j = 0; j < K; ++j) {
        T p = probs->at(i, j);
        if (j == y) p -= T(1);
        gx.at(i, j) += g * inv * p;
      }
    }
  });
  return {logits.tape, id};
}

// Per-channel 1-D convolution along the sequence axis. causal pads K-1 zeros
// on the left; symmetric pads ceil((K-1)/2) left / floor((K-1)/2) right, so
// an even K takes one extra tap from the past.
template <class T>
Var<T> depthwise_conv1d(Var<T> x, Var<T> k, ConvMode mode) {
  require_matrix(x.val(), "depthwise_conv1d");
  require_matrix(k.val(), "depthwise_conv1d");
  const std::int64_t L = x.val().rows(), C = x.val().cols(), K = k.val().rows();
  if (K < 1) throw ParameterError("depthwise_conv1d: kernel size must be >= 1");
  if (k.val().cols() != C)
    throw DimensionError("depthwise_conv1d: kernel channels " + k.val().shape_str() +
                         " do not match input " + x.val().shape_str());
  const std::int64_t pad_left = (mode == ConvMode::causal) ? K - 1 : K / 2;
  Tensor<T> out({L, C});
  for (std::int64_t t = 0; t < L; ++t)
    for (std::int64_t j = 0; j < K; ++j) {
      const std::int64_t s = t + j - pad_left;
      if (s < 0 || s >= L) continue;
      for (std::int64_t c = 0; c < C; ++c) out.at(t, c) += k.val().at(j, c) * x.val().at(s, c);
    }
  int id = x.tape->record(std::move(out), {x.id, k.id}, [pad_left, K](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    const auto& xv = t.val(in[0]);
    const auto& kv = t.val(in[1]);
    auto& gx = t.grad(in[0]);
    auto& gk = t.grad(in[1]);
    const std::int64_t L = g.rows(), C = g.cols();
    for (std::int64_t tt = 0; tt < L; ++tt)
      for (std::int64_t j = 0; j < K; ++j) {
        const std::int64_t s = tt + j - pad_left;
        if (s < 0 || s >= L) continue;
        for (std::int64_t c = 0; c < C; ++c) {
          gx.at(s, c) += g.at(tt, c) * kv.at(j, c);
          gk.at(j, c) += g.at(tt, c) * xv.at(s, c);
        }
      }
  });
  return {x.tape, id};
}

// ---------------------------------------------------------------------------
// Structural primitives (gather/scatter family)
// ---------------------------------------------------------------------------

// out[i] = x[idx[i]]
template <class T>
Var<T> gather_rows(Var<T> x, std::vector<std::int64_t> idx) {
  require_matrix(x.val(), "gather_rows");
  const std::int64_t C = x.val().cols();
  Tensor<T> out({static_cast<std::int64_t>(idx.size()), C});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= x.val().rows())
      throw DimensionError("gather_rows: index " + std::to_string(idx[i]) + " out of range");
    for (std::int64_t j = 0; j < C; ++j) out.at(static_cast<std::int64_t>(i), j) = x.val().at(idx[i], j);
  }
  auto ix = std::make_shared<std::vector<std::int64_t>>(std::move(idx));
  int id = x.tape->record(std::move(out), {x.id}, [ix](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    const std::int64_t C = g.cols();
    for (std::size_t i = 0; i < ix->size(); ++i)
      for (std::int64_t j = 0; j < C; ++j)
        gx.at((*ix)[i], j) += g.at(static_cast<std::int64_t>(i), j);
  });
  return {x.tape, id};
}

// out[s] = mean over rows i with seg[i] == s. Every segment in [0, n_seg)
// must receive at least one row.
template <class T>
Var<T> segment_mean(Var<T> x, const std::vector<std::int64_t>& seg, std::int64_t n_seg) {
  require_matrix(x.val(), "segment_mean");
  const std::int64_t L = x.val().rows(), C = x.val().cols();
  if (static_cast<std::int64_t>(seg.size()) != L)
    throw DimensionError("segment_mean: segment list length does not match rows");
  auto counts = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(n_seg), 0);
  Tensor<T> out({n_seg, C});
  for (std::int64_t i = 0; i < L; ++i) {
    const std::int64_t s = seg[static_cast<std::size_t>(i)];
    if (s < 0 || s >= n_seg) throw DimensionError("segment_mean: segment id out of range");
    ++(*counts)[static_cast<std::size_t>(s)];
    for (std::int64_t j = 0; j < C; ++j) out.at(s, j) += x.val().at(i, j);
  }
  for (std::int64_t s = 0; s < n_seg; ++s) {
    if ((*counts)[static_cast<std::size_t>(s)] == 0)
      throw DataError("segment_mean: empty segment " + std::to_string(s));
    for (std::int64_t j = 0; j < C; ++j) out.at(s, j) /= static_cast<T>((*counts)[static_cast<std::size_t>(s)]);
  }
  auto sg = std::make_shared<std::vector<std::int64_t>>(seg);
  int id = x.tape->record(std::move(out), {x.id}, [sg, counts](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    const std::int64_t C = g.cols();
    for (std::size_t i = 0; i < sg->size(); ++i) {
      const std::int64_t s = (*sg)[i];
      const T inv = static_cast<T>(1.0 / static_cast<double>((*counts)[static_cast<std::size_t>(s)]));
      for (std::int64_t j = 0; j < C; ++j) gx.at(static_cast<std::int64_t>(i), j) += g.at(s, j) * inv;
    }
  });
  return {x.tape, id};
}

template <class T>
Var<T> slice_cols(Var<T> x, std::int64_t start, std::int64_t n) {
  require_matrix(x.val(), "slice_cols");
  if (start < 0 || n < 1 || start + n > x.val().cols())
    throw DimensionError("slice_cols: [" + std::to_string(start) + "," + std::to_string(start + n) +
                         ") out of width " + std::to_string(x.val().cols()));
  const std::int64_t L = x.val().rows();
  Tensor<T> out({L, n});
  for (std::int64_t i = 0; i < L; ++i)
    for (std::int64_t j = 0; j < n; ++j) out.at(i, j) = x.val().at(i, start + j);
  int id = x.tape->record(std::move(out), {x.id}, [start, n](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::int64_t i = 0; i < g.rows(); ++i)
      for (std::int64_t j = 0; j < n; ++j) gx.at(i, start + j) += g.at(i, j);
  });
  return {x.tape, id};
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ParameterError("concat_cols: no parts");
  const std::int64_t L = parts[0].val().rows();
  std::int64_t width = 0;
  std::vector<int> ins;
  std::vector<std::int64_t> widths;
  for (const auto& p : parts) {
    require_matrix(p.val(), "concat_cols");
    if (p.val().rows() != L) throw DimensionError("concat_cols: row mismatch");
    widths.push_back(p.val().cols());
    width += p.val().cols();
    ins.push_back(p.id);
  }
  Tensor<T> out({L, width});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    for (std::int64_t i = 0; i < L; ++i)
      for (std::int64_t j = 0; j < p.val().cols(); ++j) out.at(i, off + j) = p.val().at(i, j);
    off += p.val().cols();
  }
  auto ws = std::make_shared<std::vector<std::int64_t>>(std::move(widths));
  int id = parts[0].tape->record(std::move(out), std::move(ins), [ws](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    std::int64_t off = 0;
    for (std::size_t p = 0; p < in.size(); ++p) {
      auto& gp = t.grad(in[p]);
      for (std::int64_t i = 0; i < g.rows(); ++i)
        for (std::int64_t j = 0; j < (*ws)[p]; ++j) gp.at(i, j) += g.at(i, off + j);
      off += (*ws)[p];
    }
  });
  return {parts[0].tape, id};
}

template <class T>
Var<T> sum_all(Var<T> x) {
  double s = 0;
  for (auto v : x.val().data) s += static_cast<double>(v);
  int id = x.tape->record(Tensor<T>::scalar(static_cast<T>(s)), {x.id}, [](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
  return {x.tape, id};
}

}  // namespace meepo::num
