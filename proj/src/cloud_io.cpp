#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/pointcloud.hpp"

namespace meepo::pc {
namespace {

constexpr char kMagic[4] = {'M', 'P', 'C', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kHeaderBytes = 21;  // magic + version + N + C + has_labels

template <class T>
void put(std::ofstream& f, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(const std::vector<char>& buf, std::uint64_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

}  // namespace

void write_cloud(const PointCloud& pc, const std::string& path) {
  if (pc.size() < 1) throw DataError("write_cloud: empty cloud");
  if (pc.features.rows() != pc.size())
    throw DimensionError("write_cloud: feature rows do not match point count");
  if (pc.has_labels() && static_cast<std::int64_t>(pc.labels.size()) != pc.size())
    throw DimensionError("write_cloud: label count does not match point count");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_cloud: cannot open " + path);
  f.write(kMagic, 4);
  put(f, kVersion);
  put(f, static_cast<std::uint64_t>(pc.size()));
  put(f, static_cast<std::uint32_t>(pc.features.cols()));
  put(f, static_cast<std::uint8_t>(pc.has_labels() ? 1 : 0));
  f.write(reinterpret_cast<const char*>(pc.positions.data.data()),
          static_cast<std::streamsize>(pc.positions.data.size() * sizeof(float)));
  f.write(reinterpret_cast<const char*>(pc.features.data.data()),
          static_cast<std::streamsize>(pc.features.data.size() * sizeof(float)));
  if (pc.has_labels()) {
    std::vector<std::int32_t> l(pc.labels.begin(), pc.labels.end());
    f.write(reinterpret_cast<const char*>(l.data()), static_cast<std::streamsize>(l.size() * 4));
  }
  f.flush();
  if (!f) throw Error("write_cloud: write failed for " + path);
}

PointCloud read_cloud(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw Error("read_cloud: cannot open " + path);
  const auto file_size = static_cast<std::uint64_t>(f.tellg());
  f.seekg(0);
  if (file_size < kHeaderBytes) throw FormatError("read_cloud: truncated header", file_size);
  std::vector<char> buf(file_size);
  f.read(buf.data(), static_cast<std::streamsize>(file_size));
  if (!f) throw Error("read_cloud: read failed for " + path);

  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError("read_cloud: bad magic", 0);
  if (take<std::uint32_t>(buf, 4) != kVersion)
    throw FormatError("read_cloud: unsupported version " + std::to_string(take<std::uint32_t>(buf, 4)), 4);
  const std::uint64_t n = take<std::uint64_t>(buf, 8);
  if (n == 0) throw FormatError("read_cloud: zero points", 8);
  const std::uint32_t c = take<std::uint32_t>(buf, 16);
  if (c == 0) throw FormatError("read_cloud: zero feature channels", 16);
  const std::uint8_t has_labels = take<std::uint8_t>(buf, 20);
  if (has_labels > 1) throw FormatError("read_cloud: bad label flag", 20);

  const unsigned __int128 expected =
      static_cast<unsigned __int128>(kHeaderBytes) +
      static_cast<unsigned __int128>(n) * (12 + 4ull * c + (has_labels ? 4ull : 0ull));
  if (static_cast<unsigned __int128>(file_size) != expected)
    throw FormatError("read_cloud: payload size mismatch", file_size);

  PointCloud pc;
  const auto ni = static_cast<std::int64_t>(n);
  const auto ci = static_cast<std::int64_t>(c);
  pc.positions = num::Tensor<float>({ni, 3});
  pc.features = num::Tensor<float>({ni, ci});
  std::uint64_t off = kHeaderBytes;
  std::memcpy(pc.positions.data.data(), buf.data() + off, n * 12);
  off += n * 12;
  std::memcpy(pc.features.data.data(), buf.data() + off, n * 4ull * c);
  off += n * 4ull * c;
  if (has_labels) {
    std::vector<std::int32_t> l(n);
    std::memcpy(l.data(), buf.data() + off, n * 4);
    pc.labels.assign(l.begin(), l.end());
  }
  return pc;
}

}  // namespace meepo::pc
