#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <array>
#include <map>
#include <random>
#include <vector>

#include "doctest.h"
#include "meepo/grad_check.hpp"
#include "meepo/morton.hpp"
#include "meepo/sparseconv.hpp"

using meepo::num::Tape;
using meepo::num::Tensor;
using meepo::num::Var;
namespace num = meepo::num;
namespace sp = meepo::sp;
namespace pc = meepo::pc;

namespace {

using Coord = std::array<std::uint32_t, 3>;

sp::VoxelStructure make_structure(std::vector<Coord> coords) {
  std::sort(coords.begin(), coords.end(), [](const Coord& a, const Coord& b) {
    return pc::morton_encode(a[0], a[1], a[2]) < pc::morton_encode(b[0], b[1], b[2]);
  });
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  std::vector<std::uint64_t> keys;
  for (const auto& c : coords) keys.push_back(pc::morton_encode(c[0], c[1], c[2]));
  return sp::VoxelStructure(std::move(coords), std::move(keys));
}

std::vector<Coord> random_coords(std::mt19937_64& rng, int box, int count) {
  std::vector<Coord> all;
  for (std::uint32_t z = 0; z < static_cast<std::uint32_t>(box); ++z)
    for (std::uint32_t y = 0; y < static_cast<std::uint32_t>(box); ++y)
      for (std::uint32_t x = 0; x < static_cast<std::uint32_t>(box); ++x) all.push_back({x, y, z});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(count));
  return all;
}

Tensor<double> randn(std::vector<std::int64_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  num::fill_normal(t, seed, 0.0, scale);
  return t;
}

// Independent brute-force oracle: dense convolution over the bounding box,
// masked to active sites. out[q] = bias + sum_o W[o]^T in[q-o].
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
          const std::int64_t p = st.find(pc::morton_encode(
              static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny), static_cast<std::uint32_t>(nz)));
          if (p < 0) continue;
          for (std::int64_t co = 0; co < c_out; ++co)
            for (std::int64_t ci = 0; ci < c_in; ++ci)
              out.at(q, co) += w.data[static_cast<std::size_t>((oi * c_in + ci) * c_out + co)] * x.at(p, ci);
        }
  }
  return out;
}

}  // namespace

TEST_CASE("kernel map sizes on worked examples") {
  auto single = make_structure({{2, 2, 2}});
  CHECK(single.kernel_map(3).triples() == 1);
  CHECK(single.kernel_map(1).triples() == 1);

  auto pair = make_structure({{0, 0, 0}, {1, 0, 0}});
  const auto& km = pair.kernel_map(3);
  CHECK(km.triples() == 4);
  // Center bucket carries both self-pairs.
  CHECK(km.pairs[13].size() == 2);
  CHECK(pair.kernel_map(1).triples() == 2);

  CHECK_THROWS_AS(sp::build_kernel_map(single, 2), meepo::ParameterError);
}

TEST_CASE("absent coordinates report absence") {
  auto st = make_structure({{0, 0, 0}, {3, 1, 4}});
  CHECK(st.find(pc::morton_encode(3, 1, 4)) >= 0);
  CHECK(st.find(pc::morton_encode(1, 1, 1)) == -1);
  CHECK(st.find(pc::morton_encode(500, 500, 500)) == -1);
}

TEST_CASE("k=1 identity kernel is the identity") {
  std::mt19937_64 rng(17);
  auto st = make_structure(random_coords(rng, 5, 9));
  auto x = randn({st.size(), 3}, 18);
  Tensor<double> w({1, 3, 3});
  for (int i = 0; i < 3; ++i) w.data[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  Tape<double> t;
  auto y = sp::submanifold_conv(num::make_leaf(t, x, false), num::make_leaf(t, w, false),
                                num::make_leaf(t, Tensor<double>::zeros({3}), false), st.kernel_map(1));
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.val()[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("isolated voxel sees only the center tap") {
  auto st = make_structure({{4, 4, 4}});
  auto x = randn({1, 2}, 19);
  auto w = randn({27, 2, 3}, 20);
  auto bias = randn({3}, 21);
  Tape<double> t;
  auto y = sp::submanifold_conv(num::make_leaf(t, x, false), num::make_leaf(t, w, false),
                                num::make_leaf(t, bias, false), st.kernel_map(3));
  for (std::int64_t co = 0; co < 3; ++co) {
    double want = bias[co];
    for (std::int64_t ci = 0; ci < 2; ++ci)
      want += w.data[static_cast<std::size_t>((13 * 2 + ci) * 3 + co)] * x[ci];
    CHECK(y.val().at(0, co) == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("two adjacent voxels with an all-ones kernel") {
  auto st = make_structure({{0, 0, 0}, {1, 0, 0}});
  Tensor<double> x({2, 1}, {1, 2});
  auto w = Tensor<double>::full({27, 1, 1}, 1.0);
  Tape<double> t;
  auto y = sp::submanifold_conv(num::make_leaf(t, x, false), num::make_leaf(t, w, false),
                                num::make_leaf(t, Tensor<double>::zeros({1}), false), st.kernel_map(3));
  CHECK(y.val()[0] == doctest::Approx(3.0));
  CHECK(y.val()[1] == doctest::Approx(3.0));
}

TEST_CASE("matches the dense oracle on random instances") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const int count = 5 + static_cast<int>(rng() % 26);
    auto st = make_structure(random_coords(rng, 6, count));
    auto x = randn({st.size(), 2}, 100 + static_cast<std::uint64_t>(trial));
    auto w = randn({27, 2, 3}, 200 + static_cast<std::uint64_t>(trial));
    auto bias = randn({3}, 300 + static_cast<std::uint64_t>(trial));
    Tape<double> t;
    auto y = sp::submanifold_conv(num::make_leaf(t, x, false), num::make_leaf(t, w, false),
                                  num::make_leaf(t, bias, false), st.kernel_map(3));
    auto want = dense_oracle(st, x, w, bias, 3);
    REQUIRE(y.val().rows() == st.size());  // submanifold: active set preserved
    for (std::int64_t i = 0; i < want.numel(); ++i)
      CHECK(y.val()[i] == doctest::Approx(want[i]).epsilon(1e-9));
  }
}

TEST_CASE("translation equivariance up to key reordering") {
  std::mt19937_64 rng(29);
  auto base = random_coords(rng, 6, 14);
  auto st = make_structure(base);
  auto x = randn({st.size(), 2}, 30);
  auto w = randn({27, 2, 2}, 31);
  auto bias = randn({2}, 32);

  const Coord shift = {9, 5, 12};
  std::vector<Coord> shifted;
  for (const auto& c : st.coords()) shifted.push_back({c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]});
  auto st2 = make_structure(shifted);
  // Re-align features to the shifted serialization order.
  Tensor<double> x2({st2.size(), 2});
  for (std::int64_t j = 0; j < st2.size(); ++j) {
    const auto& c2 = st2.coords()[static_cast<std::size_t>(j)];
    const std::int64_t i = st.find(pc::morton_encode(c2[0] - shift[0], c2[1] - shift[1], c2[2] - shift[2]));
    REQUIRE(i >= 0);
    for (std::int64_t k = 0; k < 2; ++k) x2.at(j, k) = x.at(i, k);
  }
  Tape<double> t;
  auto y1 = sp::submanifold_conv(num::make_leaf(t, x, false), num::make_leaf(t, w, false),
                                 num::make_leaf(t, bias, false), st.kernel_map(3));
  auto y2 = sp::submanifold_conv(num::make_leaf(t, x2, false), num::make_leaf(t, w, false),
                                 num::make_leaf(t, bias, false), st2.kernel_map(3));
  for (std::int64_t j = 0; j < st2.size(); ++j) {
    const auto& c2 = st2.coords()[static_cast<std::size_t>(j)];
    const std::int64_t i = st.find(pc::morton_encode(c2[0] - shift[0], c2[1] - shift[1], c2[2] - shift[2]));
    for (std::int64_t k = 0; k < 2; ++k)
      CHECK(y2.val().at(j, k) == doctest::Approx(y1.val().at(i, k)).epsilon(1e-12));
  }
}

TEST_CASE("gradients match finite differences on 5-voxel instances") {
  std::mt19937_64 rng(37);
  auto st = make_structure(random_coords(rng, 4, 5));
  const auto& km = st.kernel_map(3);
  double err = num::grad_check_inputs<double>(
      [&km](Tape<double>& t, const std::vector<Var<double>>& v) {
        auto y = sp::submanifold_conv(v[0], v[1], v[2], km);
        Tensor<double> wts(y.val().shape);
        num::fill_normal(wts, 77u, 0.0, 1.0);
        return num::sum_all(num::mul(y, num::make_const(t, std::move(wts))));
      },
      {randn({st.size(), 2}, 38), randn({27, 2, 2}, 39), randn({2}, 40)}, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("multiply count equals the occupancy-scaled dense bound") {
  std::mt19937_64 rng(41);
  auto st = make_structure(random_coords(rng, 6, 20));
  const auto& km = st.kernel_map(3);
  // Independent probe count: all voxel/offset pairs whose neighbor is active.
  std::int64_t probes = 0;
  for (const auto& c : st.coords())
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::int64_t nx = static_cast<std::int64_t>(c[0]) + dx;
          const std::int64_t ny = static_cast<std::int64_t>(c[1]) + dy;
          const std::int64_t nz = static_cast<std::int64_t>(c[2]) + dz;
          if (nx < 0 || ny < 0 || nz < 0) continue;
          if (st.find(pc::morton_encode(static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny),
                                        static_cast<std::uint32_t>(nz))) >= 0)
            ++probes;
        }
  CHECK(km.triples() == probes);
  const std::int64_t c_in = 4, c_out = 6;
  const double occupancy = static_cast<double>(probes) / static_cast<double>(27 * st.size());
  const double dense_bound = static_cast<double>(c_in * c_out * 27 * st.size());
  CHECK(static_cast<double>(km.multiplies(c_in, c_out)) ==
        doctest::Approx(dense_bound * occupancy).epsilon(1e-12));
}

TEST_CASE("width mismatch is a shape error") {
  auto st = make_structure({{0, 0, 0}});
  Tape<double> t;
  auto x = num::make_leaf(t, randn({1, 3}, 50), false);
  auto w = num::make_leaf(t, randn({27, 2, 2}, 51), false);
  auto b = num::make_leaf(t, randn({2}, 52), false);
  CHECK_THROWS_AS(sp::submanifold_conv(x, w, b, st.kernel_map(3)), meepo::DimensionError);
}
