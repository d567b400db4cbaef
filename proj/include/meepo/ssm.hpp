#pragma once
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/tape.hpp"
#include "meepo/tensor.hpp"

namespace meepo::ssm {

using num::ConvMode;
using num::Tape;
using num::Tensor;
using num::Var;

// Below this magnitude of delta*a the discretized input matrix uses its
// series limit delta*B; the exact form divides by a and loses digits.
inline constexpr double kZohTaylorCutoff = 1e-8;

struct Zoh {
  double a_bar;
  double b_bar;
};

// Zero-order-hold discretization of dh/dt = a h + B u over a step of length
// delta: a_bar = exp(delta a), b_bar = ((exp(delta a) - 1)/a) B.
inline Zoh zoh_discretize(double delta, double a, double b) {
  const double x = delta * a;
  const double a_bar = std::exp(x);
  const double b_bar = (std::abs(x) < kZohTaylorCutoff) ? delta * b : ((a_bar - 1.0) / a) * b;
  return {a_bar, b_bar};
}

// Input-dependent linear recurrence h_t = a_bar h_{t-1} + b_bar u_t,
// y_t = <C_t, h_t>, run over rows in forward or reverse order. Shapes:
// u, delta [L x C]; a [C x N]; B, Cm [L x N]; y [L x C]. When h_store is
// non-null it receives the full state trajectory in scan-step order,
// h_store[(s*C + c)*N + n], which the tape backward replays.
template <class T>
void selective_scan_kernel(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& a,
                           const Tensor<T>& B, const Tensor<T>& Cm, bool reverse, Tensor<T>& y,
                           std::vector<T>* h_store = nullptr) {
  num::require_same_shape(u, delta, "selective_scan");
  num::require_matrix(a, "selective_scan");
  num::require_same_shape(B, Cm, "selective_scan");
  const std::int64_t L = u.rows(), C = u.cols(), N = a.cols();
  if (a.rows() != C)
    throw num::DimensionError("selective_scan: state matrix " + a.shape_str() +
                              " does not match channel count " + std::to_string(C));
  if (B.rows() != L || B.cols() != N)
    throw num::DimensionError("selective_scan: input projection " + B.shape_str() + " expected [" +
                              std::to_string(L) + " x " + std::to_string(N) + "]");
  y = Tensor<T>({L, C});
  if (h_store) h_store->assign(static_cast<std::size_t>(L * C * N), T(0));
  std::vector<T> h(static_cast<std::size_t>(C * N), T(0));
  for (std::int64_t s = 0; s < L; ++s) {
    const std::int64_t r = reverse ? (L - 1 - s) : s;
    double h_acc = 0;
    for (std::int64_t c = 0; c < C; ++c) {
      const double d = static_cast<double>(delta.at(r, c));
      const double uu = static_cast<double>(u.at(r, c));
      double yv = 0;
      T* hc = h.data() + static_cast<std::size_t>(c * N);
      for (std::int64_t n = 0; n < N; ++n) {
        const Zoh z = zoh_discretize(d, static_cast<double>(a.at(c, n)), static_cast<double>(B.at(r, n)));
        const double hn = z.a_bar * static_cast<double>(hc[n]) + z.b_bar * uu;
        hc[n] = static_cast<T>(hn);
        h_acc += hn;
        yv += static_cast<double>(Cm.at(r, n)) * hn;
      }
      y.at(r, c) = static_cast<T>(yv);
      if (!std::isfinite(yv))
        throw num::NumericError("selective_scan: non-finite output at sequence position " +
                                std::to_string(r) + ", channel " + std::to_string(c));
    }
    if (!std::isfinite(h_acc))
      throw num::NumericError("selective_scan: non-finite state at sequence position " +
                              std::to_string(reverse ? (L - 1 - s) : s));
    if (h_store)
      std::copy(h.begin(), h.end(), h_store->begin() + static_cast<std::ptrdiff_t>(s * C * N));
  }
}

// Tape wrapper around the kernel. One fused node: the adjoint runs the
// recurrence in reverse with an accumulator lambda = dL/dh_s, re-deriving
// the discretization partials per step instead of storing them.
template <class T>
Var<T> selective_scan_core(Var<T> u, Var<T> delta, Var<T> a, Var<T> B, Var<T> Cm, bool reverse) {
  Tensor<T> y;
  auto h_store = std::make_shared<std::vector<T>>();
  selective_scan_kernel(u.val(), delta.val(), a.val(), B.val(), Cm.val(), reverse, y, h_store.get());
  int id = u.tape->record(std::move(y), {u.id, delta.id, a.id, B.id, Cm.id},
                          [h_store, reverse](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    const auto& uv = t.val(in[0]);
    const auto& dv = t.val(in[1]);
    const auto& av = t.val(in[2]);
    const auto& Bv = t.val(in[3]);
    const auto& Cv = t.val(in[4]);
    auto& gu = t.grad(in[0]);
    auto& gd = t.grad(in[1]);
    auto& ga = t.grad(in[2]);
    auto& gB = t.grad(in[3]);
    auto& gC = t.grad(in[4]);
    const std::int64_t L = uv.rows(), C = uv.cols(), N = av.cols();
    std::vector<double> lam(static_cast<std::size_t>(C * N), 0.0);
    const std::vector<T>& hs = *h_store;
    for (std::int64_t s = L - 1; s >= 0; --s) {
      const std::int64_t r = reverse ? (L - 1 - s) : s;
      for (std::int64_t c = 0; c < C; ++c) {
        const double gy = static_cast<double>(g.at(r, c));
        const double d = static_cast<double>(dv.at(r, c));
        const double uu = static_cast<double>(uv.at(r, c));
        double gu_acc = 0, gd_acc = 0;
        double* lc = lam.data() + static_cast<std::size_t>(c * N);
        const T* h_cur = hs.data() + static_cast<std::size_t>((s * C + c) * N);
        const T* h_prev = (s > 0) ? hs.data() + static_cast<std::size_t>(((s - 1) * C + c) * N) : nullptr;
        for (std::int64_t n = 0; n < N; ++n) {
          const double an = static_cast<double>(av.at(c, n));
          const double bn = static_cast<double>(Bv.at(r, n));
          const double cn = static_cast<double>(Cv.at(r, n));
          double l = lc[n] + gy * cn;                       // full dL/dh at this step
          gC.at(r, n) += static_cast<T>(gy * static_cast<double>(h_cur[n]));
          const double hp = h_prev ? static_cast<double>(h_prev[n]) : 0.0;
          const double x = d * an;
          const double a_bar = std::exp(x);
          double b_bar, db_dd, db_dB, db_da;
          if (std::abs(x) < kZohTaylorCutoff) {
            b_bar = d * bn;
            db_dd = bn;
            db_dB = d;
            db_da = 0.0;
          } else {
            const double e = (a_bar - 1.0) / an;
            b_bar = e * bn;
            db_dd = bn * a_bar;
            db_dB = e;
            db_da = bn * (d * a_bar * an - (a_bar - 1.0)) / (an * an);
          }
          gu_acc += l * b_bar;
          gd_acc += l * (hp * an * a_bar + uu * db_dd);
          ga.at(c, n) += static_cast<T>(l * (hp * d * a_bar + uu * db_da));
          gB.at(r, n) += static_cast<T>(l * uu * db_dB);
          lc[n] = l * a_bar;
        }
        gu.at(r, c) += static_cast<T>(gu_acc);
        gd.at(r, c) += static_cast<T>(gd_acc);
      }
    }
  });
  return {u.tape, id};
}

// out[i][j] = x[i][j] * d[j], the per-channel skip path.
template <class T>
Var<T> colwise_scale(Var<T> x, Var<T> d) {
  num::require_matrix(x.val(), "colwise_scale");
  if (d.val().numel() != x.val().cols())
    throw num::DimensionError("colwise_scale: scale length " + d.val().shape_str() +
                              " does not match width " + x.val().shape_str());
  const std::int64_t L = x.val().rows(), C = x.val().cols();
  Tensor<T> out({L, C});
  for (std::int64_t i = 0; i < L; ++i)
    for (std::int64_t j = 0; j < C; ++j) out.at(i, j) = x.val().at(i, j) * d.val()[j];
  int id = x.tape->record(std::move(out), {x.id, d.id}, [](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    const auto& xv = t.val(in[0]);
    const auto& dv = t.val(in[1]);
    auto& gx = t.grad(in[0]);
    auto& gd = t.grad(in[1]);
    for (std::int64_t i = 0; i < g.rows(); ++i)
      for (std::int64_t j = 0; j < g.cols(); ++j) {
        gx.at(i, j) += g.at(i, j) * dv[j];
        gd[j] += g.at(i, j) * xv.at(i, j);
      }
  });
  return {x.tape, id};
}

// -exp(x), elementwise. Keeps the recurrence pole strictly negative for any
// real parameter value.
template <class T>
Var<T> neg_exp(Var<T> x) {
  Tensor<T> out = x.val();
  for (auto& v : out.data) v = static_cast<T>(-std::exp(static_cast<double>(v)));
  auto saved = std::make_shared<Tensor<T>>(out);
  int id = x.tape->record(std::move(out), {x.id}, [saved](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(t.inputs(self)[0]);
    for (std::int64_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * (*saved)[i];
  });
  return {x.tape, id};
}

// Interleaving read order: all positions congruent to 0 mod n first, then
// 1 mod n, and so on. L=6, n=2 gives [0 2 4 1 3 5].
inline std::vector<std::int64_t> strided_permutation(std::int64_t length, std::int64_t stride) {
  if (stride < 1) throw num::ParameterError("strided_permutation: stride must be >= 1");
  if (length < 0) throw num::ParameterError("strided_permutation: negative length");
  std::vector<std::int64_t> perm;
  perm.reserve(static_cast<std::size_t>(length));
  for (std::int64_t s = 0; s < stride && s < length; ++s)
    for (std::int64_t i = s; i < length; i += stride) perm.push_back(i);
  return perm;
}

inline std::vector<std::int64_t> inverse_permutation(const std::vector<std::int64_t>& perm) {
  std::vector<std::int64_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[static_cast<std::size_t>(perm[i])] = static_cast<std::int64_t>(i);
  return inv;
}

struct SsmConfig {
  int state_dim = 16;       // N
  int expand = 2;           // E
  int conv_kernel = 4;      // K
  ConvMode conv_mode = ConvMode::symmetric;
  int stride = 2;           // n for the interleaved directions
  int directions = 4;       // 1 forward, 2 +backward, 4 +both interleaved
  bool share_params = false;
  bool d_skip = true;
  int dt_rank(int channels) const { return std::max(1, channels / 16); }
};

// Per-direction scan parameters. a_log parameterizes the pole as -exp(a_log).
template <class T>
struct SsmDirVars {
  Var<T> w_dt_down;  // [C x R]
  Var<T> w_dt_up;    // [R x C]
  Var<T> dt_bias;    // [C]
  Var<T> a_log;      // [C x N]
  Var<T> w_b;        // [C x N]
  Var<T> w_c;        // [C x N]
  Var<T> d_skip;     // [C]
};

template <class T>
struct MambaVars {
  Var<T> w_in;    // [C x 2EC], no bias
  Var<T> conv_k;  // [K x EC]
  Var<T> w_out;   // [EC x C], no bias
  std::vector<SsmDirVars<T>> dirs;  // one entry when share_params
};

// One direction of the scan over an already activated sequence u [L x EC].
template <class T>
Var<T> ssm_direction(Var<T> u, const SsmDirVars<T>& p, const SsmConfig& cfg, bool reverse) {
  Var<T> dt = num::linear(num::linear(u, p.w_dt_down), p.w_dt_up, p.dt_bias);
  Var<T> delta = num::softplus(dt);
  Var<T> a = neg_exp(p.a_log);
  Var<T> B = num::linear(u, p.w_b);
  Var<T> C = num::linear(u, p.w_c);
  Var<T> y = selective_scan_core(u, delta, a, B, C, reverse);
  if (cfg.d_skip) y = num::add(y, colwise_scale(u, p.d_skip));
  return y;
}

// Mean of up to four scan directions: forward, backward, and the same pair
// over the stride-interleaved ordering. Outputs are realigned to the input
// order before merging, so the result is order-equivariant across directions.
template <class T>
Var<T> bidirectional_strided_ssm(Var<T> u, const MambaVars<T>& m, const SsmConfig& cfg) {
  if (cfg.directions != 1 && cfg.directions != 2 && cfg.directions != 4)
    throw num::ParameterError("ssm: directions must be 1, 2 or 4, got " + std::to_string(cfg.directions));
  const std::int64_t L = u.val().rows();
  const auto& dir_params = [&](int d) -> const SsmDirVars<T>& {
    return cfg.share_params ? m.dirs.front() : m.dirs[static_cast<std::size_t>(d)];
  };
  std::vector<Var<T>> outs;
  outs.push_back(ssm_direction(u, dir_params(0), cfg, /*reverse=*/false));
  if (cfg.directions >= 2) outs.push_back(ssm_direction(u, dir_params(1), cfg, /*reverse=*/true));
  if (cfg.directions == 4) {
    const auto perm = strided_permutation(L, cfg.stride);
    const auto inv = inverse_permutation(perm);
    Var<T> up = num::gather_rows(u, perm);
    Var<T> y2 = ssm_direction(up, dir_params(2), cfg, /*reverse=*/false);
    Var<T> y3 = ssm_direction(up, dir_params(3), cfg, /*reverse=*/true);
    outs.push_back(num::gather_rows(y2, inv));
    outs.push_back(num::gather_rows(y3, inv));
  }
  Var<T> acc = outs[0];
  for (std::size_t i = 1; i < outs.size(); ++i) acc = num::add(acc, outs[i]);
  return num::scale(acc, static_cast<T>(1.0 / static_cast<double>(outs.size())));
}

// Gated state-space block: project to 2EC, run the activated half through a
// non-causal depthwise conv and the multi-direction scan, gate with the other
// half, project back. No biases on either projection.
template <class T>
Var<T> mamba_module(Var<T> x, const MambaVars<T>& m, const SsmConfig& cfg) {
  const std::int64_t C = x.val().cols();
  const std::int64_t EC = C * cfg.expand;
  if (m.w_in.val().rows() != C || m.w_in.val().cols() != 2 * EC)
    throw num::DimensionError("mamba: input projection " + m.w_in.val().shape_str() + " expected [" +
                              std::to_string(C) + " x " + std::to_string(2 * EC) + "]");
  Var<T> proj = num::linear(x, m.w_in);
  Var<T> a = num::slice_cols(proj, 0, EC);
  Var<T> z = num::slice_cols(proj, EC, EC);
  a = num::silu(num::depthwise_conv1d(a, m.conv_k, cfg.conv_mode));
  Var<T> y = bidirectional_strided_ssm(a, m, cfg);
  Var<T> gated = num::mul(y, num::silu(z));
  return num::linear(gated, m.w_out);
}

}  // namespace meepo::ssm
