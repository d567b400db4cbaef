#include "meepo/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "meepo/errors.hpp"

namespace meepo::pc {
namespace {

// Majority vote, ties to the smallest label id. Values may include -1.
int majority_label(std::map<int, std::int64_t>& counts) {
  int best = -1;
  std::int64_t best_n = -1;
  for (const auto& [label, n] : counts) {
    if (n > best_n) {  // map iterates ids ascending, so ties keep the smaller
      best = label;
      best_n = n;
    }
  }
  return best;
}

}  // namespace

const char* class_name(int label) {
  switch (label) {
    case kClassFloor: return "floor";
    case kClassWall: return "wall";
    case kClassBox: return "box";
    case kClassSphere: return "sphere";
    case kClassTable: return "table";
    default: return "unlabeled";
  }
}

SerializedVoxels voxelize(const PointCloud& pc, double grid_size) {
  if (pc.size() < 1) throw DataError("voxelize: empty cloud");
  if (!(grid_size > 0)) throw ParameterError("voxelize: grid_size must be > 0");
  if (!num::all_finite(pc.positions)) throw DataError("voxelize: non-finite position");
  const std::int64_t n = pc.size(), c = pc.features.cols();
  if (pc.features.rows() != n)
    throw DimensionError("voxelize: " + std::to_string(pc.features.rows()) + " feature rows for " +
                         std::to_string(n) + " points");

  double mn[3] = {HUGE_VAL, HUGE_VAL, HUGE_VAL};
  for (std::int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) mn[a] = std::min(mn[a], static_cast<double>(pc.positions.at(i, a)));

  struct Entry {
    std::uint64_t key;
    std::int64_t point;
  };
  std::vector<Entry> entries(static_cast<std::size_t>(n));
  std::vector<std::array<std::uint32_t, 3>> cell(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    std::array<std::uint32_t, 3> cc;
    for (int a = 0; a < 3; ++a) {
      const double q = std::floor((static_cast<double>(pc.positions.at(i, a)) - mn[a]) / grid_size);
      cc[static_cast<std::size_t>(a)] = static_cast<std::uint32_t>(q);
    }
    cell[static_cast<std::size_t>(i)] = cc;
    entries[static_cast<std::size_t>(i)] = {morton_encode(cc[0], cc[1], cc[2]), i};
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.key != b.key ? a.key < b.key : a.point < b.point;
  });

  SerializedVoxels out;
  out.inverse_map.assign(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<double>> feat_rows;
  std::vector<std::int64_t> counts;
  std::map<int, std::int64_t> label_counts;
  const bool labeled = pc.has_labels();
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
    label_counts.clear();
    while (j < entries.size() && entries[j].key == entries[i].key) {
      const std::int64_t p = entries[j].point;
      out.inverse_map[static_cast<std::size_t>(p)] = static_cast<std::int64_t>(out.keys.size());
      for (std::int64_t k = 0; k < c; ++k) acc[static_cast<std::size_t>(k)] += pc.features.at(p, k);
      if (labeled) ++label_counts[pc.labels[static_cast<std::size_t>(p)]];
      ++j;
    }
    const auto n_in = static_cast<double>(j - i);
    for (auto& v : acc) v /= n_in;
    out.keys.push_back(entries[i].key);
    out.coords.push_back(cell[static_cast<std::size_t>(entries[i].point)]);
    feat_rows.push_back(std::move(acc));
    counts.push_back(static_cast<std::int64_t>(j - i));
    if (labeled) out.labels.push_back(majority_label(label_counts));
    i = j;
  }
  const auto m = static_cast<std::int64_t>(out.keys.size());
  out.features = Tensor<double>({m, c});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t k = 0; k < c; ++k)
      out.features.at(i, k) = feat_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  return out;
}

std::pair<SerializedVoxels, PoolingMap> grid_pool(const SerializedVoxels& v, int stride) {
  if (stride < 2) throw ParameterError("grid_pool: stride must be >= 2");
  const std::int64_t m = v.size(), c = v.features.cols();
  if (m < 1) throw DataError("grid_pool: empty voxel set");

  struct Entry {
    std::uint64_t key;
    std::int64_t fine;
  };
  std::vector<Entry> entries(static_cast<std::size_t>(m));
  std::vector<std::array<std::uint32_t, 3>> parent_cell(static_cast<std::size_t>(m));
  const auto s = static_cast<std::uint32_t>(stride);
  for (std::int64_t i = 0; i < m; ++i) {
    const auto& cc = v.coords[static_cast<std::size_t>(i)];
    std::array<std::uint32_t, 3> p = {cc[0] / s, cc[1] / s, cc[2] / s};
    parent_cell[static_cast<std::size_t>(i)] = p;
    entries[static_cast<std::size_t>(i)] = {morton_encode(p[0], p[1], p[2]), i};
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.key != b.key ? a.key < b.key : a.fine < b.fine;
  });

  SerializedVoxels coarse;
  PoolingMap map;
  map.parent.assign(static_cast<std::size_t>(m), -1);
  std::vector<std::vector<double>> feat_rows;
  std::map<int, std::int64_t> label_counts;
  const bool labeled = !v.labels.empty();
  for (std::size_t i = 0; i < entries.size();) {
    std::size_t j = i;
    std::vector<double> acc(static_cast<std::size_t>(c), 0.0);
    label_counts.clear();
    while (j < entries.size() && entries[j].key == entries[i].key) {
      const std::int64_t f = entries[j].fine;
      map.parent[static_cast<std::size_t>(f)] = static_cast<std::int64_t>(coarse.keys.size());
      for (std::int64_t k = 0; k < c; ++k) acc[static_cast<std::size_t>(k)] += v.features.at(f, k);
      if (labeled) ++label_counts[v.labels[static_cast<std::size_t>(f)]];
      ++j;
    }
    const auto n_in = static_cast<double>(j - i);
    for (auto& x : acc) x /= n_in;
    coarse.keys.push_back(entries[i].key);
    coarse.coords.push_back(parent_cell[static_cast<std::size_t>(entries[i].fine)]);
    feat_rows.push_back(std::move(acc));
    if (labeled) coarse.labels.push_back(majority_label(label_counts));
    i = j;
  }
  const auto mc = static_cast<std::int64_t>(coarse.keys.size());
  coarse.features = Tensor<double>({mc, c});
  for (std::int64_t i = 0; i < mc; ++i)
    for (std::int64_t k = 0; k < c; ++k)
      coarse.features.at(i, k) = feat_rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  map.coarse_count = mc;
  return {std::move(coarse), std::move(map)};
}

Tensor<double> unpool_features(const Tensor<double>& coarse, const PoolingMap& map) {
  if (coarse.rows() != map.coarse_count)
    throw DimensionError("unpool: " + std::to_string(coarse.rows()) + " coarse rows, map expects " +
                         std::to_string(map.coarse_count));
  const auto mf = static_cast<std::int64_t>(map.parent.size());
  Tensor<double> out({mf, coarse.cols()});
  for (std::int64_t i = 0; i < mf; ++i) {
    const std::int64_t p = map.parent[static_cast<std::size_t>(i)];
    for (std::int64_t k = 0; k < coarse.cols(); ++k) out.at(i, k) = coarse.at(p, k);
  }
  return out;
}

}  // namespace meepo::pc
