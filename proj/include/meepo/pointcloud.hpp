#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "meepo/morton.hpp"
#include "meepo/tensor.hpp"

namespace meepo::pc {

using num::Tensor;

// Positions in meters, features in [0,1] (colors by default), labels -1 for
// unlabeled points. Stored in 32-bit floats so file round-trips are exact.
struct PointCloud {
  Tensor<float> positions;  // N x 3
  Tensor<float> features;   // N x C
  std::vector<int> labels;  // empty when absent

  std::int64_t size() const { return positions.ndim() == 2 ? positions.rows() : 0; }
  bool has_labels() const { return !labels.empty(); }
};

// Voxel grid in serialized order: keys strictly increasing, one row per
// occupied cell. inverse_map sends each original point to its voxel row.
struct SerializedVoxels {
  std::vector<std::array<std::uint32_t, 3>> coords;
  std::vector<std::uint64_t> keys;
  Tensor<double> features;  // M x C, accumulated in 64-bit so pooling conserves mass
  std::vector<int> labels;
  std::vector<std::int64_t> inverse_map;

  std::int64_t size() const { return static_cast<std::int64_t>(keys.size()); }
};

// parent[i] is the coarse row that fine voxel i pools into.
struct PoolingMap {
  std::vector<std::int64_t> parent;
  std::int64_t coarse_count = 0;
};

SerializedVoxels voxelize(const PointCloud& pc, double grid_size);

// Mean-pools features into cells of `stride` voxels per axis; labels follow
// by majority vote with ties to the smallest id.
std::pair<SerializedVoxels, PoolingMap> grid_pool(const SerializedVoxels& v, int stride = 2);

// Broadcast of each parent's row back to its fine voxels.
Tensor<double> unpool_features(const Tensor<double>& coarse, const PoolingMap& map);

inline constexpr int kClassFloor = 0;
inline constexpr int kClassWall = 1;
inline constexpr int kClassBox = 2;
inline constexpr int kClassSphere = 3;
inline constexpr int kClassTable = 4;
inline constexpr int kNumClasses = 5;
const char* class_name(int label);

struct SceneSpec {
  double room_x = 4.0;   // meters
  double room_y = 4.0;
  double room_h = 2.5;
  int min_objects = 3;
  int max_objects = 6;
  std::int64_t points = 8000;
  double color_noise = 0.02;
  // Fraction of object-surface points recolored to the wall color, the
  // low-contrast failure mode segmentation has to survive.
  double ambiguity_rate = 0.0;
};

PointCloud generate_scene(std::uint64_t seed, const SceneSpec& spec);

// Binary cloud codec: magic "MPC1", u32 version 1, u64 N, u32 C,
// u8 has_labels, N x 3 f32 positions, N x C f32 features, N i32 labels when
// flagged. Little-endian throughout.
PointCloud read_cloud(const std::string& path);
void write_cloud(const PointCloud& pc, const std::string& path);

}  // namespace meepo::pc
