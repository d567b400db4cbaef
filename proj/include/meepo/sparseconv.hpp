#pragma once
#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/morton.hpp"
#include "meepo/tape.hpp"
#include "meepo/tensor.hpp"

namespace meepo::sp {

using num::Tensor;
using num::Var;

// Open-addressing map from Morton key to voxel row. Keys occupy 63 bits, so
// all-ones marks an empty slot.
class VoxelHash {
 public:
  explicit VoxelHash(const std::vector<std::uint64_t>& keys);
  std::int64_t find(std::uint64_t key) const;  // -1 when absent

 private:
  std::vector<std::uint64_t> slot_key_;
  std::vector<std::int64_t> slot_row_;
  std::uint64_t mask_ = 0;
};

// Per-offset (input_row, output_row) pairs: weight slice o couples input p to
// output p+o, so the op computes out[q] = sum_o W[o]^T in[q-o].
struct KernelMap {
  int k = 0;
  std::vector<std::vector<std::pair<std::int64_t, std::int64_t>>> pairs;  // k^3 buckets
  std::int64_t triples() const {
    std::int64_t n = 0;
    for (const auto& b : pairs) n += static_cast<std::int64_t>(b.size());
    return n;
  }
  // Multiply count of one conv layer over this map.
  std::int64_t multiplies(std::int64_t c_in, std::int64_t c_out) const {
    return triples() * c_in * c_out;
  }
};

// Immutable geometry of one resolution level: serialized coords/keys plus the
// key lookup and cached kernel maps, shared by every conv at that level.
class VoxelStructure {
 public:
  VoxelStructure(std::vector<std::array<std::uint32_t, 3>> coords, std::vector<std::uint64_t> keys);

  std::int64_t size() const { return static_cast<std::int64_t>(keys_.size()); }
  const std::vector<std::array<std::uint32_t, 3>>& coords() const { return coords_; }
  const std::vector<std::uint64_t>& keys() const { return keys_; }
  std::int64_t find(std::uint64_t key) const { return hash_.find(key); }
  const KernelMap& kernel_map(int k) const;

 private:
  std::vector<std::array<std::uint32_t, 3>> coords_;
  std::vector<std::uint64_t> keys_;
  VoxelHash hash_;
  mutable std::map<int, KernelMap> kernel_maps_;
};

KernelMap build_kernel_map(const VoxelStructure& st, int k);

// Submanifold convolution: the active set is preserved, absent neighbors
// contribute nothing, every output row starts from the bias. One fused tape
// node running gather-GEMM-scatter per offset bucket.
// x: [M x Cin], w: [k^3, Cin, Cout], bias: [Cout].
template <class T>
Var<T> submanifold_conv(Var<T> x, Var<T> w, Var<T> bias, const KernelMap& km) {
  num::require_matrix(x.val(), "submanifold_conv");
  if (w.val().ndim() != 3)
    throw num::DimensionError("submanifold_conv: weights must be [k^3, Cin, Cout], got " +
                              w.val().shape_str());
  const std::int64_t m = x.val().rows(), c_in = x.val().cols();
  const std::int64_t k3 = w.val().shape[0], c_out = w.val().shape[2];
  if (w.val().shape[1] != c_in)
    throw num::DimensionError("submanifold_conv: weights expect " + std::to_string(w.val().shape[1]) +
                              " input channels, features have " + std::to_string(c_in));
  if (k3 != static_cast<std::int64_t>(km.pairs.size()))
    throw num::DimensionError("submanifold_conv: kernel map has " + std::to_string(km.pairs.size()) +
                              " offsets, weights " + std::to_string(k3));
  if (bias.val().numel() != c_out)
    throw num::DimensionError("submanifold_conv: bias length " + bias.val().shape_str() +
                              " does not match " + std::to_string(c_out) + " output channels");

  Tensor<T> out({m, c_out});
  for (std::int64_t q = 0; q < m; ++q)
    for (std::int64_t j = 0; j < c_out; ++j) out.at(q, j) = bias.val()[j];
  for (std::int64_t o = 0; o < k3; ++o) {
    const auto& bucket = km.pairs[static_cast<std::size_t>(o)];
    if (bucket.empty()) continue;
    const std::int64_t p = static_cast<std::int64_t>(bucket.size());
    Tensor<T> gathered({p, c_in});
    for (std::int64_t r = 0; r < p; ++r)
      for (std::int64_t ci = 0; ci < c_in; ++ci)
        gathered.at(r, ci) = x.val().at(bucket[static_cast<std::size_t>(r)].first, ci);
    Tensor<T> wo({c_in, c_out});
    std::copy_n(w.val().data.begin() + o * c_in * c_out, c_in * c_out, wo.data.begin());
    Tensor<T> prod = num::matmul(gathered, wo);
    for (std::int64_t r = 0; r < p; ++r)
      for (std::int64_t co = 0; co < c_out; ++co)
        out.at(bucket[static_cast<std::size_t>(r)].second, co) += prod.at(r, co);
  }

  const KernelMap* kmp = &km;
  int id = x.tape->record(std::move(out), {x.id, w.id, bias.id}, [kmp](num::Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto in = t.inputs(self);
    const auto& xv = t.val(in[0]);
    const auto& wv = t.val(in[1]);
    auto& gx = t.grad(in[0]);
    auto& gw = t.grad(in[1]);
    auto& gb = t.grad(in[2]);
    const std::int64_t c_in = xv.cols(), c_out = g.cols();
    for (std::int64_t q = 0; q < g.rows(); ++q)
      for (std::int64_t co = 0; co < c_out; ++co) gb[co] += g.at(q, co);
    for (std::int64_t o = 0; o < static_cast<std::int64_t>(kmp->pairs.size()); ++o) {
      const auto& bucket = kmp->pairs[static_cast<std::size_t>(o)];
      if (bucket.empty()) continue;
      const std::int64_t p = static_cast<std::int64_t>(bucket.size());
      Tensor<T> gathered_x({p, c_in}), gathered_g({p, c_out});
      for (std::int64_t r = 0; r < p; ++r) {
        const auto [ir, qr] = bucket[static_cast<std::size_t>(r)];
        for (std::int64_t ci = 0; ci < c_in; ++ci) gathered_x.at(r, ci) = xv.at(ir, ci);
        for (std::int64_t co = 0; co < c_out; ++co) gathered_g.at(r, co) = g.at(qr, co);
      }
      Tensor<T> wo({c_in, c_out});
      std::copy_n(wv.data.begin() + o * c_in * c_out, c_in * c_out, wo.data.begin());
      // dX_bucket = G_bucket Wo^T, scattered back to input rows
      Tensor<T> dx = num::matmul(gathered_g, wo, false, true);
      for (std::int64_t r = 0; r < p; ++r)
        for (std::int64_t ci = 0; ci < c_in; ++ci)
          gx.at(bucket[static_cast<std::size_t>(r)].first, ci) += dx.at(r, ci);
      // dWo = X_bucket^T G_bucket
      Tensor<T> dw({c_in, c_out});
      num::gemm_acc(gathered_x, true, gathered_g, false, dw);
      for (std::int64_t i = 0; i < c_in * c_out; ++i) gw.data[static_cast<std::size_t>(o * c_in * c_out + i)] += dw.data[static_cast<std::size_t>(i)];
    }
  });
  return {x.tape, id};
}

}  // namespace meepo::sp
