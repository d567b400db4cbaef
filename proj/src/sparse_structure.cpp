#include <algorithm>

#include "meepo/errors.hpp"
#include "meepo/sparseconv.hpp"

namespace meepo::sp {
namespace {

constexpr std::uint64_t kEmptySlot = ~0ull;  // not a valid 63-bit key

std::uint64_t mix(std::uint64_t h) {
  h += 0x9e3779b97f4a7c15ull;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

}  // namespace

VoxelHash::VoxelHash(const std::vector<std::uint64_t>& keys) {
  std::uint64_t cap = 8;
  while (cap < 2 * keys.size()) cap <<= 1;
  slot_key_.assign(cap, kEmptySlot);
  slot_row_.assign(cap, -1);
  mask_ = cap - 1;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    std::uint64_t s = mix(keys[i]) & mask_;
    while (slot_key_[s] != kEmptySlot) {
      if (slot_key_[s] == keys[i])
        throw DataError("voxel hash: duplicate key " + std::to_string(keys[i]));
      s = (s + 1) & mask_;
    }
    slot_key_[s] = keys[i];
    slot_row_[s] = static_cast<std::int64_t>(i);
  }
}

std::int64_t VoxelHash::find(std::uint64_t key) const {
  std::uint64_t s = mix(key) & mask_;
  while (slot_key_[s] != kEmptySlot) {
    if (slot_key_[s] == key) return slot_row_[s];
    s = (s + 1) & mask_;
  }
  return -1;
}

VoxelStructure::VoxelStructure(std::vector<std::array<std::uint32_t, 3>> coords,
                               std::vector<std::uint64_t> keys)
    : coords_(std::move(coords)), keys_(std::move(keys)), hash_(keys_) {
  if (coords_.size() != keys_.size())
    throw DimensionError("voxel structure: " + std::to_string(coords_.size()) + " coords for " +
                         std::to_string(keys_.size()) + " keys");
}

const KernelMap& VoxelStructure::kernel_map(int k) const {
  auto it = kernel_maps_.find(k);
  if (it == kernel_maps_.end()) it = kernel_maps_.emplace(k, build_kernel_map(*this, k)).first;
  return it->second;
}

KernelMap build_kernel_map(const VoxelStructure& st, int k) {
  if (k < 1 || k % 2 == 0) throw ParameterError("kernel map: k must be odd >= 1, got " + std::to_string(k));
  const int r = (k - 1) / 2;
  KernelMap km;
  km.k = k;
  km.pairs.resize(static_cast<std::size_t>(k) * k * k);
  const auto& coords = st.coords();
  for (std::int64_t p = 0; p < st.size(); ++p) {
    const auto& c = coords[static_cast<std::size_t>(p)];
    // Offsets in lexicographic (z, y, x) order, z slowest.
    for (int dz = -r; dz <= r; ++dz)
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const std::int64_t nx = static_cast<std::int64_t>(c[0]) + dx;
          const std::int64_t ny = static_cast<std::int64_t>(c[1]) + dy;
          const std::int64_t nz = static_cast<std::int64_t>(c[2]) + dz;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= pc::kMortonCoordLimit ||
              ny >= pc::kMortonCoordLimit || nz >= pc::kMortonCoordLimit)
            continue;
          const std::int64_t q = st.find(pc::morton_encode(
              static_cast<std::uint32_t>(nx), static_cast<std::uint32_t>(ny), static_cast<std::uint32_t>(nz)));
          if (q < 0) continue;
          const std::size_t offset_index =
              (static_cast<std::size_t>(dz + r) * static_cast<std::size_t>(k) +
               static_cast<std::size_t>(dy + r)) *
                  static_cast<std::size_t>(k) +
              static_cast<std::size_t>(dx + r);
          km.pairs[offset_index].push_back({p, q});
        }
  }
  return km;
}

}  // namespace meepo::sp
