#pragma once
// Analytic multiply-accumulate models for the three core blocks, parameter
// counts matching the builder's tensor shapes, and log-log slope fitting for
// the empirical scaling benchmarks.

#include <cstdint>
#include <string>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/ssm.hpp"
#include "meepo/errors.hpp"

namespace meepo::analysis {

using u128 = unsigned __int128;

std::string u128_str(u128 v);

struct FlopParams {
  std::int64_t L = 1024;
  std::int64_t C = 64;
  std::int64_t C_in = 64;
  std::int64_t C_out = 64;
  std::int64_t N = 16;   // SSM state dimension
  std::int64_t E = 2;    // Mamba expansion
  std::int64_t K = 4;    // Mamba conv kernel
  std::int64_t k = 3;    // sparse conv spatial kernel
};

inline void require_positive(std::int64_t v, const char* name) {
  if (v <= 0) throw ParameterError(std::string("flops: ") + name + " must be positive, got " +
                                   std::to_string(v));
}

// qkv + output projections plus the two L x L attention products.
inline u128 flops_transformer(const FlopParams& p) {
  require_positive(p.L, "L");
  require_positive(p.C, "C");
  const u128 L = static_cast<u128>(p.L), C = static_cast<u128>(p.C);
  return 4 * L * C * C + 2 * L * L * C;
}

// Selective scan + depthwise conv1d + input/output projections, single scan
// direction (the multi-direction module repeats only the scan term).
inline u128 flops_mamba(const FlopParams& p) {
  require_positive(p.L, "L");
  require_positive(p.C, "C");
  require_positive(p.N, "N");
  require_positive(p.E, "E");
  require_positive(p.K, "K");
  const u128 L = static_cast<u128>(p.L), C = static_cast<u128>(p.C);
  const u128 N = static_cast<u128>(p.N), E = static_cast<u128>(p.E), K = static_cast<u128>(p.K);
  return 9 * L * C * N + L * C * K + 3 * L * C * C * E;
}

// As flops_mamba but with the scan term repeated per direction.
inline u128 flops_mamba_multi(const FlopParams& p, int directions) {
  require_positive(directions, "directions");
  const u128 L = static_cast<u128>(p.L), C = static_cast<u128>(p.C);
  const u128 N = static_cast<u128>(p.N);
  return flops_mamba(p) + (static_cast<u128>(directions) - 1) * 9 * L * C * N;
}

// Dense 3D convolution products plus bias additions.
inline u128 flops_cnn(const FlopParams& p) {
  require_positive(p.L, "L");
  require_positive(p.C_in, "C_in");
  require_positive(p.C_out, "C_out");
  require_positive(p.k, "k");
  const u128 L = static_cast<u128>(p.L);
  const u128 ci = static_cast<u128>(p.C_in), co = static_cast<u128>(p.C_out);
  const u128 k3 = static_cast<u128>(p.k) * static_cast<u128>(p.k) * static_cast<u128>(p.k);
  return 2 * ci * co * k3 * L + L * ci * co;
}

// ---------------------------------------------------------------------------
// Parameter counts per residual branch, matching init_params tensor shapes.
// ---------------------------------------------------------------------------

inline std::int64_t params_attention_branch(std::int64_t c) { return 4 * c * c; }

inline std::int64_t params_mamba_branch(std::int64_t c, const ssm::SsmConfig& ssm) {
  const std::int64_t ec = c * ssm.expand;
  const std::int64_t r = ssm.dt_rank(static_cast<int>(c));
  const std::int64_t n = ssm.state_dim;
  std::int64_t per_dir = ec * r + r * ec + ec + 3 * ec * n;  // dt path, a_log, w_b, w_c
  if (ssm.d_skip) per_dir += ec;
  const std::int64_t dir_sets = ssm.share_params ? 1 : ssm.directions;
  return c * 2 * ec + ssm.conv_kernel * ec + ec * c + dir_sets * per_dir;
}

inline std::int64_t params_conv_branch(std::int64_t c, std::int64_t k) {
  return k * k * k * c * c + c;
}

inline std::int64_t params_mlp_branch(std::int64_t c, std::int64_t ratio) {
  const std::int64_t h = c * ratio;
  return c * h + h + h * c + c;
}

// ---------------------------------------------------------------------------
// Empirical scaling
// ---------------------------------------------------------------------------

struct ScalingReport {
  std::string arch;
  std::vector<std::int64_t> lengths;       // strictly increasing
  std::vector<u128> analytic_ops;          // flops_* evaluated at each L
  std::vector<double> median_seconds;
  double slope = 0.0;                      // fitted log-log slope
  double analytic_exponent = 0.0;          // 1 for mamba/conv, 2 for attention
  bool high_variance = false;              // any L with spread > 50% of median
  std::string to_csv() const;              // "L,analytic_ops,median_seconds,slope"
};

// Least-squares slope of ln(y) against ln(x). Sizes must match, >= 2 points.
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Times one architecture kernel at each L (median of `reps` runs, single
// thread): mamba = raw selective scan (C=32, N=16); attention = row-streaming
// softmax attention (C=8, float32, O(L) memory); sparse_conv = gather-GEMM
// forward over a prebuilt kernel map (C_in=C_out=16).
ScalingReport scaling_bench(const std::string& arch, const std::vector<std::int64_t>& lengths,
                            int reps);

}  // namespace meepo::analysis
