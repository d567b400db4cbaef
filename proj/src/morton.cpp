#include "meepo/morton.hpp"

#include <string>

#include "meepo/errors.hpp"

namespace meepo::pc {
namespace {

// Spreads the low 21 bits of a so that bit i moves to bit 3i.
std::uint64_t split3(std::uint64_t a) {
  a &= 0x1fffff;
  a = (a | a << 32) & 0x1f00000000ffffULL;
  a = (a | a << 16) & 0x1f0000ff0000ffULL;
  a = (a | a << 8) & 0x100f00f00f00f00fULL;
  a = (a | a << 4) & 0x10c30c30c30c30c3ULL;
  a = (a | a << 2) & 0x1249249249249249ULL;
  return a;
}

// Inverse of split3: compacts every third bit back into the low 21.
std::uint64_t compact3(std::uint64_t a) {
  a &= 0x1249249249249249ULL;
  a = (a ^ (a >> 2)) & 0x10c30c30c30c30c3ULL;
  a = (a ^ (a >> 4)) & 0x100f00f00f00f00fULL;
  a = (a ^ (a >> 8)) & 0x1f0000ff0000ffULL;
  a = (a ^ (a >> 16)) & 0x1f00000000ffffULL;
  a = (a ^ (a >> 32)) & 0x1fffff;
  return a;
}

void check_coord(std::uint32_t v, const char* axis) {
  if (v >= kMortonCoordLimit)
    throw num::RangeError(std::string("morton_encode: ") + axis + " coordinate " + std::to_string(v) +
                          " exceeds " + std::to_string(kMortonCoordLimit - 1));
}

}  // namespace

std::uint64_t morton_encode(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
  check_coord(x, "x");
  check_coord(y, "y");
  check_coord(z, "z");
  return split3(x) | (split3(y) << 1) | (split3(z) << 2);
}

void morton_decode(std::uint64_t key, std::uint32_t& x, std::uint32_t& y, std::uint32_t& z) {
  x = static_cast<std::uint32_t>(compact3(key));
  y = static_cast<std::uint32_t>(compact3(key >> 1));
  z = static_cast<std::uint32_t>(compact3(key >> 2));
}

}  // namespace meepo::pc
