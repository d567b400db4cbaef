// Acceptance gate: eleven go/no-go checks covering serialization, the state
// space core, gradients, causality, the sparse convolution, complexity
// accounting, empirical scaling, and desk-scale training behavior. Prints one
// [PASS]/[FAIL] line per criterion; exit code is the number of failures.
// `--only N` runs a single criterion.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "meepo/analysis.hpp"
#include "meepo/grad_check.hpp"
#include "meepo/model.hpp"
#include "meepo/morton.hpp"
#include "meepo/pointcloud.hpp"
#include "meepo/sparseconv.hpp"
#include "meepo/ssm.hpp"
#include "meepo/train.hpp"

using namespace meepo;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor<double> randn(std::vector<std::int64_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  num::fill_normal(t, seed, 0.0, scale);
  return t;
}

Tensor<double> randu(std::vector<std::int64_t> shape, std::uint64_t seed, double lo, double hi) {
  Tensor<double> t(std::move(shape));
  num::fill_uniform(t, seed, lo, hi);
  return t;
}

Var<double> weighted_sum(Tape<double>& t, Var<double> y, std::uint64_t seed) {
  Tensor<double> w(y.val().shape);
  num::fill_normal(w, seed, 0.0, 1.0);
  return num::sum_all(num::mul(y, num::make_const(t, std::move(w))));
}

// ---------------------------------------------------------------------------
// 1. Strided interleaving: worked example plus exhaustive bijectivity.
// ---------------------------------------------------------------------------
Outcome criterion1() {
  const auto p = ssm::strided_permutation(6, 2);
  const std::vector<std::int64_t> expect{0, 2, 4, 1, 3, 5};  // tokens 1,3,5,2,4,6
  if (p != expect) return {false, "stride-2 worked example mismatch"};
  for (std::int64_t L = 1; L <= 256; ++L) {
    for (std::int64_t n = 1; n <= L; ++n) {
      const auto perm = ssm::strided_permutation(L, n);
      if (static_cast<std::int64_t>(perm.size()) != L)
        return {false, "length changed at L=" + std::to_string(L) + " n=" + std::to_string(n)};
      std::vector<char> seen(static_cast<std::size_t>(L), 0);
      for (auto v : perm) {
        if (v < 0 || v >= L || seen[static_cast<std::size_t>(v)])
          return {false, "not a bijection at L=" + std::to_string(L) + " n=" + std::to_string(n)};
        seen[static_cast<std::size_t>(v)] = 1;
      }
      const auto inv = ssm::inverse_permutation(perm);
      for (std::int64_t i = 0; i < L; ++i)
        if (inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] != i)
          return {false, "inverse broken at L=" + std::to_string(L)};
    }
  }
  return {true, "stride-2 order 1,3,5,2,4,6; bijective for all 1 <= n <= L <= 256"};
}

// ---------------------------------------------------------------------------
// 2. Zero-order hold: closed form and the small-pole limit branch.
// ---------------------------------------------------------------------------
Outcome criterion2() {
  const auto z = ssm::zoh_discretize(std::log(2.0), -1.0, 1.0);
  const double e1 = std::abs(z.a_bar - 0.5), e2 = std::abs(z.b_bar - 0.5);
  if (e1 > 1e-12 || e2 > 1e-12)
    return {false, "closed form off by " + fmt(std::max(e1, e2))};
  double worst = 0.0;
  for (double a : {1e-12, -1e-12, 1e-10, -1e-10, 1e-9, -1e-9}) {
    for (double delta : {0.05, 0.3, 1.7}) {
      const double b = 2.0;
      const auto got = ssm::zoh_discretize(delta, a, b);
      const double truth = std::expm1(delta * a) / a * b;
      worst = std::max(worst, std::abs(got.b_bar - truth) / std::abs(truth));
    }
  }
  if (worst > 1e-9) return {false, "limit branch rel err " + fmt(worst)};
  return {true, "closed form to 1e-12, small-pole branch rel err " + fmt(worst)};
}

// ---------------------------------------------------------------------------
// 3. Gradient suite: every differentiable operation against central
// differences, then whole blocks and the full model on a small scene.
// ---------------------------------------------------------------------------

// Shared with the ssm tests: parameter bundle in a fixed order.
struct MambaBuild {
  ssm::SsmConfig cfg;
  int channels;
  int dir_count() const { return cfg.share_params ? 1 : cfg.directions; }
  std::vector<Tensor<double>> init(std::uint64_t seed) const {
    const std::int64_t C = channels, EC = C * cfg.expand, N = cfg.state_dim;
    const std::int64_t R = cfg.dt_rank(static_cast<int>(EC));
    std::vector<Tensor<double>> xs;
    xs.push_back(randn({C, 2 * EC}, seed + 1, 0.4));
    xs.push_back(randn({cfg.conv_kernel, EC}, seed + 2, 0.4));
    xs.push_back(randn({EC, C}, seed + 3, 0.4));
    for (int d = 0; d < dir_count(); ++d) {
      const std::uint64_t s = seed + 10 + 10 * static_cast<std::uint64_t>(d);
      xs.push_back(randn({EC, R}, s + 1, 0.4));
      xs.push_back(randn({R, EC}, s + 2, 0.4));
      xs.push_back(randu({EC}, s + 3, -1.0, 0.5));
      xs.push_back(randu({EC, N}, s + 4, -0.5, 0.5));
      xs.push_back(randn({EC, N}, s + 5, 0.4));
      xs.push_back(randn({EC, N}, s + 6, 0.4));
      xs.push_back(randu({EC}, s + 7, 0.5, 1.5));
    }
    return xs;
  }
  ssm::MambaVars<double> bind(const std::vector<Var<double>>& vs) const {
    ssm::MambaVars<double> m;
    m.w_in = vs[1];
    m.conv_k = vs[2];
    m.w_out = vs[3];
    std::size_t k = 4;
    for (int d = 0; d < dir_count(); ++d) {
      ssm::SsmDirVars<double> p;
      p.w_dt_down = vs[k++];
      p.w_dt_up = vs[k++];
      p.dt_bias = vs[k++];
      p.a_log = vs[k++];
      p.w_b = vs[k++];
      p.w_c = vs[k++];
      p.d_skip = vs[k++];
      m.dirs.push_back(p);
    }
    return m;
  }
};

model::ModelConfig tiny_model_config() {
  model::ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.in_channels = 3;
  cfg.embedding_depth = 1;
  cfg.embedding_channels = 4;
  cfg.encoder_depths = {1, 1};
  cfg.encoder_channels = {8, 8};
  cfg.decoder_depths = {1, 1};
  cfg.decoder_channels = {6, 8};
  cfg.down_strides = {2, 2};
  cfg.drop_path_rate = 0.0;
  cfg.mlp_ratio = 2;
  cfg.ssm.state_dim = 4;
  cfg.ssm.expand = 2;
  cfg.ssm.conv_kernel = 3;
  return cfg;
}

// 18 points in distinct cells of a 3x3x2 lattice; exact float cell assignment.
pc::PointCloud lattice_cloud(int num_classes) {
  pc::PointCloud cloud;
  const int nx = 3, ny = 3, nz = 2, n = nx * ny * nz;
  cloud.positions = Tensor<float>({n, 3});
  cloud.features = Tensor<float>({n, 3});
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  int row = 0;
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i, ++row) {
        cloud.positions.at(row, 0) = (float(i) + 0.5f) * 0.25f;
        cloud.positions.at(row, 1) = (float(j) + 0.5f) * 0.25f;
        cloud.positions.at(row, 2) = (float(k) + 0.5f) * 0.25f;
        for (int c = 0; c < 3; ++c) cloud.features.at(row, c) = u(rng);
        cloud.labels.push_back((i + j + k) % num_classes);
      }
  return cloud;
}

void perturb_all(model::ParamStore& store, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, stddev);
  for (auto& [name, p] : store.items())
    for (auto& v : p.value.data) v += n(rng);
}

// Fourth-order central-difference check of store-parameter gradients.
double fd_check_store(model::ParamStore& store,
                      const std::function<double(model::ParamStore&)>& loss_value,
                      const std::function<void(model::ParamStore&)>& backward_into, int per_param,
                      double h, std::uint64_t seed) {
  store.zero_grad();
  backward_into(store);
  std::mt19937_64 rng(seed);
  double max_err = 0.0;
  for (auto& [name, p] : store.items()) {
    for (int s = 0; s < per_param; ++s) {
      const std::int64_t idx =
          static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(p.value.numel()));
      const double keep = p.value[idx];
      const double hh = h * std::max(1.0, std::abs(keep));
      auto eval_at = [&](double v) {
        p.value[idx] = v;
        return loss_value(store);
      };
      const double f1 = eval_at(keep + hh), f0 = eval_at(keep - hh);
      const double f2 = eval_at(keep + 2 * hh), fm2 = eval_at(keep - 2 * hh);
      p.value[idx] = keep;
      const double fd = (8 * (f1 - f0) - (f2 - fm2)) / (12 * hh);
      const double an_g = p.grad[idx];
      const double err = std::abs(an_g - fd) / std::max({std::abs(an_g), std::abs(fd), 1e-8});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

sp::VoxelStructure make_structure(std::vector<std::array<std::uint32_t, 3>> coords) {
  std::sort(coords.begin(), coords.end(), [](const auto& a, const auto& b) {
    return pc::morton_encode(a[0], a[1], a[2]) < pc::morton_encode(b[0], b[1], b[2]);
  });
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  std::vector<std::uint64_t> keys;
  for (const auto& c : coords) keys.push_back(pc::morton_encode(c[0], c[1], c[2]));
  return sp::VoxelStructure(std::move(coords), std::move(keys));
}

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> errs;

  errs.emplace_back("linear", num::grad_check_inputs<double>(
      [](Tape<double>& t, const std::vector<Var<double>>& v) {
        return weighted_sum(t, num::linear(v[0], v[1], v[2]), 50);
      },
      {randn({5, 3}, 1), randn({3, 4}, 2), randn({4}, 3)}, 1e-5));

  for (auto mode : {num::ConvMode::causal, num::ConvMode::symmetric}) {
    errs.emplace_back(mode == num::ConvMode::causal ? "conv1d_causal" : "conv1d_symmetric",
                      num::grad_check_inputs<double>(
                          [mode](Tape<double>& t, const std::vector<Var<double>>& v) {
                            return weighted_sum(t, num::depthwise_conv1d(v[0], v[1], mode), 51);
                          },
                          {randn({7, 3}, 4), randn({4, 3}, 5)}, 1e-5));
  }

  {
    // One scan direction, all parameter tensors free.
    ssm::SsmConfig cfg;
    cfg.state_dim = 3;
    cfg.directions = 1;
    const std::int64_t L = 6, C = 4, R = cfg.dt_rank(static_cast<int>(C));
    errs.emplace_back("selective_scan", num::grad_check_inputs<double>(
        [&cfg](Tape<double>& t, const std::vector<Var<double>>& v) {
          ssm::SsmDirVars<double> p{v[1], v[2], v[3], v[4], v[5], v[6], v[7]};
          return weighted_sum(t, ssm::ssm_direction(v[0], p, cfg, false), 52);
        },
        {randn({L, C}, 6, 0.5), randn({C, R}, 7, 0.4), randn({R, C}, 8, 0.4),
         randu({C}, 9, -1.0, 0.5), randu({C, cfg.state_dim}, 10, -0.5, 0.5),
         randn({C, cfg.state_dim}, 11, 0.4), randn({C, cfg.state_dim}, 12, 0.4),
         randu({C}, 13, 0.5, 1.5)},
        1e-5));
  }

  {
    ssm::SsmConfig cfg;
    cfg.state_dim = 2;
    cfg.conv_kernel = 3;
    cfg.directions = 4;
    MambaBuild mb{cfg, 2};
    std::vector<Tensor<double>> xs;
    xs.push_back(randn({6, 2}, 100));
    for (auto& p : mb.init(101)) xs.push_back(std::move(p));
    errs.emplace_back("bidirectional_strided_module", num::grad_check_inputs<double>(
        [&mb](Tape<double>& t, const std::vector<Var<double>>& v) {
          return weighted_sum(t, ssm::mamba_module(v[0], mb.bind(v), mb.cfg), 53);
        },
        xs, 1e-5));
  }

  {
    auto st = make_structure({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {5, 5, 5}, {2, 1, 0}});
    const auto& km = st.kernel_map(3);
    errs.emplace_back("submanifold_conv", num::grad_check_inputs<double>(
        [&km](Tape<double>& t, const std::vector<Var<double>>& v) {
          return weighted_sum(t, sp::submanifold_conv(v[0], v[1], v[2], km), 54);
        },
        {randn({st.size(), 2}, 14), randn({27, 2, 3}, 15, 0.5), randn({3}, 16)}, 1e-5));
  }

  // Whole blocks, every type, on a real voxel structure.
  std::vector<std::array<std::uint32_t, 3>> line;
  for (std::uint32_t i = 0; i < 6; ++i) line.push_back({i, 0, 0});
  auto st = make_structure(line);
  for (auto bt : {model::BlockType::cnn_mamba, model::BlockType::cnn_transformer,
                  model::BlockType::cnn_only, model::BlockType::mamba_only,
                  model::BlockType::transformer_only}) {
    auto cfg = tiny_model_config();
    cfg.block_type = bt;
    model::ParamStore store;
    // Stage-0 encoder block parameters only.
    model::init_params(cfg, store, 20);
    perturb_all(store, 21, 0.05);
    std::mt19937_64 rng(1);
    auto x = randn({st.size(), cfg.encoder_channels[0]}, 22, 0.5);
    auto loss_value = [&](model::ParamStore& s) {
      Tape<double> t;
      model::Binder bind(t, s, false);
      auto xv = num::make_leaf(t, x, false);
      auto y = model::apply_block(xv, "enc0.block0", bind, cfg, cfg.encoder_channels[0], st,
                                  false, rng);
      Tensor<double> w(y.val().shape);
      num::fill_normal(w, 55u, 0.0, 1.0);
      return num::sum_all(num::mul(y, num::make_const(t, std::move(w)))).val()[0];
    };
    auto backward_into = [&](model::ParamStore& s) {
      Tape<double> t;
      model::Binder bind(t, s, true);
      auto xv = num::make_leaf(t, x, false);
      auto y = model::apply_block(xv, "enc0.block0", bind, cfg, cfg.encoder_channels[0], st,
                                  false, rng);
      Tensor<double> w(y.val().shape);
      num::fill_normal(w, 55u, 0.0, 1.0);
      auto loss = num::sum_all(num::mul(y, num::make_const(t, std::move(w))));
      t.backward(loss.id);
      bind.harvest();
    };
    errs.emplace_back("block_" + model::block_type_name(bt),
                      fd_check_store(store, loss_value, backward_into, 1, 1e-3, 1234));
  }

  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& [name, err] : errs) {
    if (err > worst_op) {
      worst_op = err;
      worst_name = name;
    }
    if (err >= 1e-4) return {false, name + " rel err " + fmt(err) + " >= 1e-4"};
  }

  // Full model, cross-entropy loss, 18 voxels.
  auto cfg = tiny_model_config();
  model::ParamStore store;
  model::init_params(cfg, store, 6);
  perturb_all(store, 10, 0.05);
  auto cloud = lattice_cloud(cfg.num_classes);
  std::mt19937_64 rng(1);
  auto loss_value = [&](model::ParamStore& s) {
    Tape<double> tape;
    auto res = model::meepo_forward(tape, cloud, 0.25, cfg, s, false, rng);
    return num::cross_entropy(res.logits, res.voxel_labels, -1).val()[0];
  };
  auto backward_into = [&](model::ParamStore& s) {
    Tape<double> tape;
    auto res = model::meepo_forward(tape, cloud, 0.25, cfg, s, false, rng);
    auto loss = num::cross_entropy(res.logits, res.voxel_labels, -1);
    tape.backward(loss.id);
    res.binder->harvest();
  };
  const double model_err = fd_check_store(store, loss_value, backward_into, 1, 1e-3, 777);
  if (model_err >= 1e-3) return {false, "full model rel err " + fmt(model_err) + " >= 1e-3"};

  return {true, "ops worst " + worst_name + " " + fmt(worst_op) + " < 1e-4; full model " +
                    fmt(model_err) + " < 1e-3; " + fmt(seconds_since(t0)) + "s"};
}

// ---------------------------------------------------------------------------
// 4. Causality contract on the sequence module.
// ---------------------------------------------------------------------------
Outcome criterion4() {
  const std::int64_t L = 9, C = 2;
  auto run = [&](const ssm::SsmConfig& cfg, const MambaBuild& mb,
                 const std::vector<Tensor<double>>& params, const Tensor<double>& in) {
    Tape<double> t;
    std::vector<Var<double>> vs;
    vs.push_back(num::make_leaf(t, in, false));
    for (const auto& p : params) vs.push_back(num::make_leaf(t, p, false));
    return ssm::mamba_module(vs[0], mb.bind(vs), cfg).val();
  };

  ssm::SsmConfig causal;
  causal.state_dim = 2;
  causal.conv_kernel = 4;
  causal.conv_mode = num::ConvMode::causal;
  causal.directions = 1;
  MambaBuild mc{causal, static_cast<int>(C)};
  auto params_c = mc.init(800);
  auto x = randn({L, C}, 801);
  auto y0 = run(causal, mc, params_c, x);
  for (std::int64_t cut = 0; cut < L - 1; ++cut) {
    auto xp = x;
    for (std::int64_t s = cut + 1; s < L; ++s)
      for (std::int64_t c = 0; c < C; ++c) xp.at(s, c) -= 3.5;
    auto y1 = run(causal, mc, params_c, xp);
    for (std::int64_t s = 0; s <= cut; ++s)
      for (std::int64_t c = 0; c < C; ++c)
        if (y0.at(s, c) != y1.at(s, c))
          return {false, "causal prefix changed at cut " + std::to_string(cut)};
  }

  ssm::SsmConfig free_cfg;
  free_cfg.state_dim = 2;
  free_cfg.conv_kernel = 3;
  free_cfg.conv_mode = num::ConvMode::symmetric;
  free_cfg.directions = 4;
  MambaBuild mf{free_cfg, static_cast<int>(C)};
  auto params_f = mf.init(900);
  auto z0 = run(free_cfg, mf, params_f, x);
  auto xp = x;
  xp.at(L - 1, 0) += 1.0;
  auto z1 = run(free_cfg, mf, params_f, xp);
  double sensitivity = 0.0;
  for (std::int64_t s = 0; s < L - 1; ++s)
    for (std::int64_t c = 0; c < C; ++c)
      sensitivity = std::max(sensitivity, std::abs(z0.at(s, c) - z1.at(s, c)));
  if (sensitivity <= 0.0) return {false, "causal-free module blind to the future"};
  return {true, "causal prefixes bit-exact; causal-free future sensitivity " + fmt(sensitivity)};
}

// ---------------------------------------------------------------------------
// 5. Forget-gate bound on the discretized transition.
// ---------------------------------------------------------------------------
Outcome criterion5() {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> n(0.0, 1.0);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = -std::exp(n(rng));                      // pole always negative
    const double delta = std::log1p(std::exp(n(rng)));       // softplus, always positive
    const double b = n(rng);
    const auto z = ssm::zoh_discretize(delta, a, b);
    if (!(z.a_bar > 0.0 && z.a_bar < 1.0))
      return {false, "a_bar " + fmt(z.a_bar) + " outside (0,1) at draw " + std::to_string(i)};
    lo = std::min(lo, z.a_bar);
    hi = std::max(hi, z.a_bar);
  }
  return {true, "1000 draws, a_bar in [" + fmt(lo) + ", " + fmt(hi) + "] subset of (0,1)"};
}

// ---------------------------------------------------------------------------
// 6. Sparse convolution against a masked dense oracle.
// ---------------------------------------------------------------------------
Tensor<double> dense_oracle(const sp::VoxelStructure& st, const Tensor<double>& x,
                            const Tensor<double>& w, const Tensor<double>& bias, int k) {
  const int r = (k - 1) / 2;
  const std::int64_t c_in = x.cols(), c_out = w.shape[2];
  Tensor<double> out({st.size(), c_out});
  for (std::int64_t q = 0; q < st.size(); ++q) {
    const auto& c = st.coords()[static_cast<std::size_t>(q)];
    for (std::int64_t co = 0; co < c_out; ++co) out.at(q, co) = bias[co];
    int oi = 0;
    for (int dz = -r; dz <= r; ++dz)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx, ++oi) {
          const std::int64_t nx = static_cast<std::int64_t>(c[0]) - dx;
          const std::int64_t ny = static_cast<std::int64_t>(c[1]) - dy;
          const std::int64_t nz = static_cast<std::int64_t>(c[2]) - dz;
          if (nx < 0 || ny < 0 || nz < 0) continue;
          const std::int64_t p = st.find(
              pc::morton_encode(static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                                static_cast<std::uint32_t>(nz)));
          if (p < 0) continue;
          for (std::int64_t co = 0; co < c_out; ++co)
            for (std::int64_t ci = 0; ci < c_in; ++ci)
              out.at(q, co) +=
                  w.data[static_cast<std::size_t>((oi * c_in + ci) * c_out + co)] * x.at(p, ci);
        }
  }
  return out;
}

Outcome criterion6() {
  std::mt19937_64 rng(66);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int box = 2 + static_cast<int>(rng() % 5);  // up to 6^3
    const int want = 1 + static_cast<int>(rng() % std::min<std::uint64_t>(30, box * box * box));
    std::vector<std::array<std::uint32_t, 3>> all;
    for (std::uint32_t z = 0; z < static_cast<std::uint32_t>(box); ++z)
      for (std::uint32_t y = 0; y < static_cast<std::uint32_t>(box); ++y)
        for (std::uint32_t x = 0; x < static_cast<std::uint32_t>(box); ++x)
          all.push_back({x, y, z});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(static_cast<std::size_t>(want));
    auto st = make_structure(all);
    const std::int64_t cin = 2, cout = 3;
    auto x = randn({st.size(), cin}, 1000 + trial);
    auto w = randn({27, cin, cout}, 2000 + trial, 0.5);
    auto bias = randn({cout}, 3000 + trial);

    Tape<double> t;
    auto y = sp::submanifold_conv(num::make_leaf(t, x, false), num::make_leaf(t, w, false),
                                  num::make_leaf(t, bias, false), st.kernel_map(3));
    if (y.val().rows() != st.size())
      return {false, "active set changed on trial " + std::to_string(trial)};
    auto ref = dense_oracle(st, x, w, bias, 3);
    for (std::int64_t i = 0; i < ref.numel(); ++i)
      worst = std::max(worst, std::abs(y.val()[i] - ref[i]));
  }
  if (worst > 1e-9) return {false, "dense-oracle deviation " + fmt(worst) + " > 1e-9"};
  return {true, "100 random instances, max abs deviation " + fmt(worst) + ", active sets kept"};
}

// ---------------------------------------------------------------------------
// 7. Analytic op counts: pinned values and the linear-vs-quadratic ratio.
// ---------------------------------------------------------------------------
Outcome criterion7() {
  analysis::FlopParams p;
  if (analysis::flops_mamba(p) != static_cast<analysis::u128>(34865152))
    return {false, "mamba reference count mismatch"};
  if (analysis::flops_transformer(p) != static_cast<analysis::u128>(150994944))
    return {false, "transformer reference count mismatch"};
  if (analysis::flops_cnn(p) != static_cast<analysis::u128>(230686720))
    return {false, "cnn reference count mismatch"};
  analysis::FlopParams big;
  big.L = 1LL << 20;
  if (!(analysis::flops_mamba(big) * 1000 < analysis::flops_transformer(big)))
    return {false, "linear/quadratic ratio not vanishing at L=2^20"};
  const double ratio = 34048.0 * static_cast<double>(big.L) /
                       (16384.0 * static_cast<double>(big.L) +
                        128.0 * static_cast<double>(big.L) * static_cast<double>(big.L));
  return {true, "34865152 / 150994944 / 230686720 pinned; ratio at 2^20 = " + fmt(ratio)};
}

// ---------------------------------------------------------------------------
// 8. Empirical scaling slopes.
// ---------------------------------------------------------------------------
Outcome criterion8() {
  const std::vector<std::int64_t> lengths{1 << 12, 1 << 13, 1 << 14, 1 << 15};
  auto scan = analysis::scaling_bench("mamba", lengths, 5);
  if (scan.slope < 0.8 || scan.slope > 1.3)
    return {false, "scan slope " + fmt(scan.slope) + " outside [0.8, 1.3]"};
  auto attn = analysis::scaling_bench("attention", lengths, 5);
  if (attn.slope < 1.7 || attn.slope > 2.3)
    return {false, "attention slope " + fmt(attn.slope) + " outside [1.7, 2.3]"};
  std::string note;
  if (scan.high_variance || attn.high_variance) note = " (high variance flagged)";
  return {true, "scan slope " + fmt(scan.slope) + " in [0.8,1.3], attention slope " +
                    fmt(attn.slope) + " in [1.7,2.3]" + note};
}

// ---------------------------------------------------------------------------
// 9. Optimization correctness: overfit one ~512-voxel scene.
// ---------------------------------------------------------------------------
Outcome criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  pc::SceneSpec spec;
  spec.points = 4000;
  auto cloud = pc::generate_scene(9, spec);
  double grid = 0.0;
  std::int64_t count = 0;
  for (double g : {0.35, 0.3, 0.26, 0.22, 0.2, 0.18, 0.16, 0.14, 0.12}) {
    count = pc::voxelize(cloud, g).size();
    if (count >= 400 && count <= 640) {
      grid = g;
      break;
    }
  }
  if (grid == 0.0) return {false, "no grid size lands near 512 voxels"};

  model::ModelConfig mcfg;
  mcfg.embedding_depth = 1;
  mcfg.embedding_channels = 16;
  mcfg.encoder_depths = {1, 1};
  mcfg.encoder_channels = {32, 64};
  mcfg.decoder_depths = {1, 1};
  mcfg.decoder_channels = {16, 32};
  mcfg.down_strides = {2, 2};
  mcfg.drop_path_rate = 0.0;
  mcfg.mlp_ratio = 2;
  mcfg.ssm.state_dim = 8;

  train::TrainConfig tcfg;
  tcfg.learning_rate = 3e-3;
  tcfg.weight_decay = 0.0;
  tcfg.steps = 500;
  tcfg.batch_size = 1;
  tcfg.warmup_fraction = 0.05;
  tcfg.seed = 9;
  tcfg.eval_every = 50;

  train::Dataset data;
  data.grid_size = grid;
  data.scenes = {cloud};
  model::ParamStore store;
  auto res = train::train_loop(mcfg, tcfg, data, store);
  double best = 0.0;
  std::int64_t best_step = 0;
  for (const auto& r : res.reports)
    if (r.miou > best) {
      best = r.miou;
      best_step = r.step;
    }
  const double secs = seconds_since(t0);
  if (secs > 600) return {false, "overran the 10 minute budget: " + fmt(secs) + "s"};
  if (best < 0.95)
    return {false, std::to_string(count) + " voxels: train miou peaked at " + fmt(best) +
                       " < 0.95 in " + std::to_string(res.steps_run) + " steps"};
  return {true, std::to_string(count) + " voxels overfit to miou " + fmt(best) + " by step " +
                    std::to_string(best_step) + " (" + fmt(secs) + "s)"};
}

// ---------------------------------------------------------------------------
// 10. Right-context probe: causal-free vs causal unidirectional.
// ---------------------------------------------------------------------------
Outcome criterion10() {
  const auto t0 = std::chrono::steady_clock::now();
  model::ModelConfig base;
  base.num_classes = 2;
  base.in_channels = 3;
  base.embedding_depth = 1;
  base.embedding_channels = 8;
  base.encoder_depths = {2};
  base.encoder_channels = {16};
  base.decoder_depths = {1};
  base.decoder_channels = {8};
  base.down_strides = {2};
  base.drop_path_rate = 0.0;
  base.block_type = model::BlockType::mamba_only;
  base.mlp_ratio = 2;
  base.ssm.state_dim = 8;

  auto free_cfg = base;
  free_cfg.ssm.conv_mode = num::ConvMode::symmetric;
  free_cfg.ssm.directions = 4;
  auto causal_cfg = base;
  causal_cfg.ssm.conv_mode = num::ConvMode::causal;
  causal_cfg.ssm.directions = 1;

  auto train_data = train::probe_dataset(6, 64, 300);
  auto val_data = train::probe_dataset(3, 64, 400);

  auto run = [&](const model::ModelConfig& mcfg, std::uint64_t seed) {
    train::TrainConfig tcfg;
    tcfg.learning_rate = 3e-3;
    tcfg.weight_decay = 1e-2;
    tcfg.steps = 250;
    tcfg.batch_size = 2;
    tcfg.warmup_fraction = 0.1;
    tcfg.seed = seed;
    tcfg.eval_every = 0;
    model::ParamStore store;
    train::train_loop(mcfg, tcfg, train_data, store);
    return train::evaluate(mcfg, val_data, store).miou;
  };

  double free_mean = 0.0, causal_mean = 0.0;
  std::vector<double> free_runs, causal_runs;
  for (std::uint64_t seed : {1, 2, 3}) {
    free_runs.push_back(run(free_cfg, seed));
    causal_runs.push_back(run(causal_cfg, seed));
    free_mean += free_runs.back() / 3.0;
    causal_mean += causal_runs.back() / 3.0;
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "free " << fmt(free_mean) << " vs causal " << fmt(causal_mean) << " (gap "
     << fmt(free_mean - causal_mean) << ", " << fmt(secs) << "s)";
  if (secs > 1800) return {false, "overran the 30 minute budget: " + fmt(secs) + "s"};
  if (free_mean < 0.9) return {false, "causal-free mean below 0.9: " + os.str()};
  if (free_mean - causal_mean < 0.15) return {false, "gap below 0.15: " + os.str()};
  return {true, os.str()};
}

// ---------------------------------------------------------------------------
// 11. Ablation direction: the combined block beats either half.
// ---------------------------------------------------------------------------
Outcome criterion11() {
  const auto t0 = std::chrono::steady_clock::now();
  train::AblationConfig acfg;
  acfg.train.steps = 300;
  acfg.train.batch_size = 2;
  acfg.train.learning_rate = 2e-3;
  acfg.scene_ambiguity = 0.25;  // recolored objects punish purely local cues
  auto rows = train::ablation_suite("block_type", {"cnn_only", "mamba_only", "cnn_mamba"},
                                    {1, 2, 3}, acfg);
  const double cnn = rows[0].mean, mamba = rows[1].mean, both = rows[2].mean;
  const double secs = seconds_since(t0);

  std::ostringstream rep;
  rep.setf(std::ios::fixed);
  rep.precision(4);
  rep << "\n  component ablation (3 seeds, mean val mIoU +- spread/2):\n";
  rep << "    cnn_only              " << cnn << " +- " << rows[0].spread / 2 << "\n";
  rep << "    mamba_only            " << mamba << " +- " << rows[1].spread / 2 << "\n";
  rep << "    cnn_only  + mamba  -> " << both << " (" << (both >= cnn ? "+" : "")
      << both - cnn << ")\n";
  rep << "    mamba_only + cnn   -> " << both << " (" << (both >= mamba ? "+" : "")
      << both - mamba << ")\n";
  std::cout << rep.str();

  if (secs > 3600) return {false, "overran the 1 hour budget: " + fmt(secs) + "s"};
  if (both < cnn)
    return {false, "cnn_mamba " + fmt(both) + " < cnn_only " + fmt(cnn)};
  if (both < mamba)
    return {false, "cnn_mamba " + fmt(both) + " < mamba_only " + fmt(mamba)};
  return {true, "cnn_mamba " + fmt(both) + " >= cnn_only " + fmt(cnn) + " and >= mamba_only " +
                    fmt(mamba) + " (" + fmt(secs) + "s)"};
}

const char* kNames[11] = {
    "strided-scan fidelity",        "zero-order-hold oracle",
    "gradient suite",               "causality contract",
    "forget-gate bound",            "sparse convolution oracle",
    "complexity formulas",          "empirical scaling slopes",
    "optimization correctness",     "right-context probe",
    "component ablation direction",
};

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      std::cerr << "usage: acceptance [--only N]\n";
      return 1;
    }
  }
  if (only < 0 || only > 11) {
    std::cerr << "usage: acceptance [--only N] with 1 <= N <= 11\n";
    return 1;
  }

  Outcome (*criteria[11])() = {criterion1, criterion2, criterion3, criterion4,
                               criterion5, criterion6, criterion7, criterion8,
                               criterion9, criterion10, criterion11};
  int failures = 0;
  for (int n = 1; n <= 11; ++n) {
    if (only != 0 && n != only) continue;
    Outcome out;
    try {
      out = criteria[n - 1]();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (out.pass ? "[PASS]" : "[FAIL]") << " criterion " << n << " (" << kNames[n - 1]
              << "): " << out.detail << std::endl;
    if (!out.pass) ++failures;
  }
  return failures;
}
