#pragma once
#include <cstdint>

namespace meepo::pc {

// 21 bits per axis interleave into a 63-bit key; bit i of x lands at key bit
// 3i, y at 3i+1, z at 3i+2, so sorting keys walks a Z-order curve and key>>3
// is the parent cell at twice the spacing.
inline constexpr std::uint32_t kMortonCoordBits = 21;
inline constexpr std::uint32_t kMortonCoordLimit = 1u << kMortonCoordBits;

std::uint64_t morton_encode(std::uint32_t x, std::uint32_t y, std::uint32_t z);
void morton_decode(std::uint64_t key, std::uint32_t& x, std::uint32_t& y, std::uint32_t& z);

}  // namespace meepo::pc
