#include "meepo/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <sstream>

#include "meepo/morton.hpp"
#include "meepo/sparseconv.hpp"
#include "meepo/tensor.hpp"

namespace meepo::analysis {

std::string u128_str(u128 v) {
  if (v == 0) return "0";
  std::string s;
  while (v > 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(s.begin(), s.end());
  return s;
}

double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ParameterError("slope fit needs matching vectors with at least 2 points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] <= 0.0 || y[i] <= 0.0) throw ParameterError("slope fit needs positive values");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= static_cast<double>(lx.size());
  my /= static_cast<double>(ly.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    num += (lx[i] - mx) * (ly[i] - my);
    den += (lx[i] - mx) * (lx[i] - mx);
  }
  if (den == 0.0) throw ParameterError("slope fit needs at least two distinct x values");
  return num / den;
}

std::string ScalingReport::to_csv() const {
  std::ostringstream o;
  o << "L,analytic_ops,median_seconds,slope\n";
  for (std::size_t i = 0; i < lengths.size(); ++i)
    o << lengths[i] << "," << u128_str(analytic_ops[i]) << "," << median_seconds[i] << ","
      << slope << "\n";
  return o.str();
}

namespace {

using clock_type = std::chrono::steady_clock;

double time_once(const std::function<void()>& fn) {
  const auto t0 = clock_type::now();
  fn();
  const auto t1 = clock_type::now();
  return std::chrono::duration<double>(t1 - t0).count();
}

// Raw selective scan, no tape. Same arithmetic shape as the training kernel.
struct ScanBench {
  std::int64_t c = 32, n = 16;
  num::Tensor<double> u, delta, a, b, cm, y;
  explicit ScanBench(std::int64_t length) {
    u = num::Tensor<double>({length, c});
    delta = num::Tensor<double>({length, c});
    a = num::Tensor<double>({c, n});
    b = num::Tensor<double>({length, n});
    cm = num::Tensor<double>({length, n});
    y = num::Tensor<double>({length, c});
    std::mt19937_64 rng(7 + static_cast<std::uint64_t>(length));
    num::fill_uniform(u, rng, -1.0, 1.0);
    num::fill_uniform(delta, rng, 0.01, 0.2);
    num::fill_uniform(a, rng, -2.0, -0.1);
    num::fill_uniform(b, rng, -1.0, 1.0);
    num::fill_uniform(cm, rng, -1.0, 1.0);
  }
  void run() { ssm::selective_scan_kernel(u, delta, a, b, cm, /*reverse=*/false, y); }
};

// Row-streaming softmax attention: scores for one query row at a time, two
// passes (max, then exp-weighted sum). O(L) extra memory.
struct AttentionBench {
  std::int64_t c = 8;
  std::vector<float> q, k, v, out, scores;
  std::int64_t length;
  explicit AttentionBench(std::int64_t len) : length(len) {
    const std::size_t n = static_cast<std::size_t>(len * c);
    q.resize(n);
    k.resize(n);
    v.resize(n);
    out.resize(n);
    scores.resize(static_cast<std::size_t>(len));
    std::mt19937_64 rng(11 + static_cast<std::uint64_t>(len));
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (auto& x : q) x = dist(rng);
    for (auto& x : k) x = dist(rng);
    for (auto& x : v) x = dist(rng);
  }
  void run() {
    const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(c));
    for (std::int64_t i = 0; i < length; ++i) {
      const float* qi = &q[static_cast<std::size_t>(i * c)];
      float mx = -1e30f;
      for (std::int64_t j = 0; j < length; ++j) {
        const float* kj = &k[static_cast<std::size_t>(j * c)];
        float s = 0;
        for (std::int64_t d = 0; d < c; ++d) s += qi[d] * kj[d];
        s *= inv_sqrt;
        scores[static_cast<std::size_t>(j)] = s;
        mx = std::max(mx, s);
      }
      float denom = 0;
      float acc[64] = {0};
      for (std::int64_t j = 0; j < length; ++j) {
        const float w = std::exp(scores[static_cast<std::size_t>(j)] - mx);
        denom += w;
        const float* vj = &v[static_cast<std::size_t>(j * c)];
        for (std::int64_t d = 0; d < c; ++d) acc[d] += w * vj[d];
      }
      float* oi = &out[static_cast<std::size_t>(i * c)];
      for (std::int64_t d = 0; d < c; ++d) oi[d] = acc[d] / denom;
    }
  }
};

// Gather-multiply-scatter over a prebuilt kernel map, no tape.
struct SparseConvBench {
  std::int64_t c = 16;
  sp::VoxelStructure st;
  const sp::KernelMap* km;
  num::Tensor<double> x, w, y;

  static sp::VoxelStructure build(std::int64_t length) {
    std::uint32_t side = 2;
    while (static_cast<std::int64_t>(side) * side * side < 2 * length) ++side;
    std::vector<std::array<std::uint32_t, 3>> all;
    for (std::uint32_t z = 0; z < side; ++z)
      for (std::uint32_t y = 0; y < side; ++y)
        for (std::uint32_t x = 0; x < side; ++x) all.push_back({x, y, z});
    std::mt19937_64 rng(13 + static_cast<std::uint64_t>(length));
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(length));
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return pc::morton_encode(a[0], a[1], a[2]) < pc::morton_encode(b[0], b[1], b[2]);
    });
    std::vector<std::uint64_t> keys;
    for (const auto& cd : all) keys.push_back(pc::morton_encode(cd[0], cd[1], cd[2]));
    return sp::VoxelStructure(std::move(all), std::move(keys));
  }

  explicit SparseConvBench(std::int64_t length) : st(build(length)), km(&st.kernel_map(3)) {
    x = num::Tensor<double>({length, c});
    w = num::Tensor<double>({27 * c * c});
    y = num::Tensor<double>({length, c});
    std::mt19937_64 rng(17 + static_cast<std::uint64_t>(length));
    num::fill_uniform(x, rng, -1.0, 1.0);
    num::fill_uniform(w, rng, -0.1, 0.1);
  }

  void run() {
    std::fill(y.data.begin(), y.data.end(), 0.0);
    for (int oi = 0; oi < 27; ++oi) {
      const double* wo = &w.data[static_cast<std::size_t>(oi) * c * c];
      for (const auto& pr : km->pairs[static_cast<std::size_t>(oi)]) {
        const double* xin = &x.data[static_cast<std::size_t>(pr.first * c)];
        double* yout = &y.data[static_cast<std::size_t>(pr.second * c)];
        for (std::int64_t co = 0; co < c; ++co) {
          double acc = 0;
          for (std::int64_t ci = 0; ci < c; ++ci) acc += xin[ci] * wo[ci * c + co];
          yout[co] += acc;
        }
      }
    }
  }
};

struct BenchRun {
  std::vector<double> medians;
  bool high_variance = false;
};

BenchRun run_arch(const std::string& arch, const std::vector<std::int64_t>& lengths, int reps) {
  BenchRun out;
  for (std::int64_t length : lengths) {
    std::function<void()> fn;
    std::shared_ptr<void> holder;
    if (arch == "mamba") {
      auto b = std::make_shared<ScanBench>(length);
      holder = b;
      fn = [b] { b->run(); };
    } else if (arch == "attention") {
      auto b = std::make_shared<AttentionBench>(length);
      holder = b;
      fn = [b] { b->run(); };
    } else if (arch == "sparse_conv") {
      auto b = std::make_shared<SparseConvBench>(length);
      holder = b;
      fn = [b] { b->run(); };
    } else {
      throw ParameterError("scaling bench: unknown arch '" + arch + "'");
    }
    fn();  // warmup
    std::vector<double> times;
    for (int r = 0; r < reps; ++r) times.push_back(time_once(fn));
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    if ((times.back() - times.front()) > 0.5 * median) out.high_variance = true;
    out.medians.push_back(median);
  }
  return out;
}

}  // namespace

ScalingReport scaling_bench(const std::string& arch, const std::vector<std::int64_t>& lengths,
                            int reps) {
  if (lengths.size() < 3) throw ParameterError("scaling bench: need at least 3 lengths");
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1])
      throw ParameterError("scaling bench: lengths must be strictly increasing");
  if (reps < 1) throw ParameterError("scaling bench: reps must be >= 1");

  ScalingReport rep;
  rep.arch = arch;
  rep.lengths = lengths;
  for (std::int64_t length : lengths) {
    FlopParams p;
    p.L = length;
    if (arch == "mamba") {
      p.C = 32;
      p.N = 16;
      rep.analytic_ops.push_back(flops_mamba(p));
    } else if (arch == "attention") {
      p.C = 8;
      rep.analytic_ops.push_back(flops_transformer(p));
    } else if (arch == "sparse_conv") {
      p.C_in = p.C_out = 16;
      p.k = 3;
      rep.analytic_ops.push_back(flops_cnn(p));
    } else {
      throw ParameterError("scaling bench: unknown arch '" + arch + "'");
    }
  }
  rep.analytic_exponent = arch == "attention" ? 2.0 : 1.0;

  auto run = run_arch(arch, lengths, reps);
  if (run.high_variance) run = run_arch(arch, lengths, 2 * reps);  // one retry, then report as-is
  rep.high_variance = run.high_variance;
  rep.median_seconds = run.medians;

  std::vector<double> ls;
  for (std::int64_t length : lengths) ls.push_back(static_cast<double>(length));
  rep.slope = fit_loglog_slope(ls, rep.median_seconds);
  return rep;
}

}  // namespace meepo::analysis
