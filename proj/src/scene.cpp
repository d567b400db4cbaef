#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "meepo/errors.hpp"
#include "meepo/pointcloud.hpp"

namespace meepo::pc {
namespace {

using Rng = std::mt19937_64;
using Vec3 = std::array<double, 3>;

struct Surface {
  int label;
  double area;
  Vec3 color;
  std::function<Vec3(Rng&)> sample;
};

constexpr Vec3 kFloorColor = {0.45, 0.45, 0.45};
constexpr Vec3 kWallColor = {0.82, 0.80, 0.75};
constexpr Vec3 kBoxColor = {0.75, 0.15, 0.15};
constexpr Vec3 kSphereColor = {0.10, 0.70, 0.20};
constexpr Vec3 kTableColor = {0.55, 0.35, 0.15};

double uni(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Axis-aligned rectangle spanned by u_axis/v_axis at a fixed third coordinate.
Surface rect_surface(int label, Vec3 color, Vec3 origin, int u_axis, double u_len, int v_axis,
                     double v_len) {
  Surface s;
  s.label = label;
  s.area = u_len * v_len;
  s.color = color;
  s.sample = [=](Rng& rng) {
    Vec3 p = origin;
    p[static_cast<std::size_t>(u_axis)] += uni(rng, 0.0, u_len);
    p[static_cast<std::size_t>(v_axis)] += uni(rng, 0.0, v_len);
    return p;
  };
  return s;
}

// All six faces of an axis-aligned box as one area-weighted surface.
Surface box_surface(int label, Vec3 color, Vec3 lo, Vec3 size) {
  Surface s;
  s.label = label;
  s.color = color;
  const double ax = size[1] * size[2], ay = size[0] * size[2], az = size[0] * size[1];
  s.area = 2.0 * (ax + ay + az);
  s.sample = [=](Rng& rng) {
    const double pick = uni(rng, 0.0, ax + ay + az);
    int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[static_cast<std::size_t>(a)] = lo[static_cast<std::size_t>(a)] + uni(rng, 0.0, size[static_cast<std::size_t>(a)]);
    p[static_cast<std::size_t>(axis)] =
        lo[static_cast<std::size_t>(axis)] + (uni(rng, 0.0, 1.0) < 0.5 ? 0.0 : size[static_cast<std::size_t>(axis)]);
    return p;
  };
  return s;
}

Surface sphere_surface(int label, Vec3 color, Vec3 center, double r) {
  Surface s;
  s.label = label;
  s.area = 4.0 * 3.14159265358979323846 * r * r;
  s.color = color;
  s.sample = [=](Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 d = {n(rng), n(rng), n(rng)};
    double len = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (len < 1e-12) {
      d = {1, 0, 0};
      len = 1;
    }
    return Vec3{center[0] + r * d[0] / len, center[1] + r * d[1] / len, center[2] + r * d[2] / len};
  };
  return s;
}

}  // namespace

PointCloud generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  if (!(spec.room_x > 0) || !(spec.room_y > 0) || !(spec.room_h > 0))
    throw ParameterError("generate_scene: room extents must be positive");
  if (spec.points < 1) throw ParameterError("generate_scene: need at least one point");
  if (spec.min_objects < 0 || spec.max_objects < spec.min_objects)
    throw ParameterError("generate_scene: bad object count range");

  Rng rng(seed);
  std::vector<Surface> surfaces;
  surfaces.push_back(rect_surface(kClassFloor, kFloorColor, {0, 0, 0}, 0, spec.room_x, 1, spec.room_y));
  surfaces.push_back(rect_surface(kClassWall, kWallColor, {0, 0, 0}, 1, spec.room_y, 2, spec.room_h));
  surfaces.push_back(rect_surface(kClassWall, kWallColor, {spec.room_x, 0, 0}, 1, spec.room_y, 2, spec.room_h));
  surfaces.push_back(rect_surface(kClassWall, kWallColor, {0, 0, 0}, 0, spec.room_x, 2, spec.room_h));
  surfaces.push_back(rect_surface(kClassWall, kWallColor, {0, spec.room_y, 0}, 0, spec.room_x, 2, spec.room_h));

  const int n_objects =
      spec.min_objects +
      (spec.max_objects > spec.min_objects
           ? static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_objects - spec.min_objects + 1))
           : 0);
  const double margin_x = std::min(1.0, spec.room_x / 2.0);
  const double margin_y = std::min(1.0, spec.room_y / 2.0);
  for (int obj = 0; obj < n_objects; ++obj) {
    // The first three objects cycle through the object classes so every class
    // appears whenever at least three objects are requested.
    const int kind = obj < 3 ? obj : static_cast<int>(rng() % 3);
    const double cx = uni(rng, margin_x, std::max(margin_x, spec.room_x - margin_x));
    const double cy = uni(rng, margin_y, std::max(margin_y, spec.room_y - margin_y));
    if (kind == 0) {
      const Vec3 size = {uni(rng, 0.3, 0.8), uni(rng, 0.3, 0.8), uni(rng, 0.3, 0.8)};
      surfaces.push_back(box_surface(kClassBox, kBoxColor,
                                     {cx - size[0] / 2, cy - size[1] / 2, 0.0}, size));
    } else if (kind == 1) {
      const double r = uni(rng, 0.15, 0.4);
      surfaces.push_back(sphere_surface(kClassSphere, kSphereColor, {cx, cy, r}, r));
    } else {
      const double top_h = 0.72, top_t = 0.05, leg = 0.05;
      const double sx = uni(rng, 0.9, 1.3), sy = uni(rng, 0.6, 0.9);
      surfaces.push_back(box_surface(kClassTable, kTableColor,
                                     {cx - sx / 2, cy - sy / 2, top_h}, {sx, sy, top_t}));
      for (int lx = 0; lx < 2; ++lx)
        for (int ly = 0; ly < 2; ++ly) {
          const double px = cx - sx / 2 + (lx ? sx - leg : 0.0);
          const double py = cy - sy / 2 + (ly ? sy - leg : 0.0);
          surfaces.push_back(box_surface(kClassTable, kTableColor, {px, py, 0.0}, {leg, leg, top_h}));
        }
    }
  }

  // Largest-remainder allocation of the point budget over surface areas.
  double total_area = 0;
  for (const auto& s : surfaces) total_area += s.area;
  std::vector<std::int64_t> counts(surfaces.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    const double exact = static_cast<double>(spec.points) * surfaces[i].area / total_area;
    counts[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (std::size_t i = 0; assigned < spec.points; ++i, ++assigned) ++counts[remainders[i % remainders.size()].second];

  PointCloud pc;
  pc.positions = Tensor<float>({spec.points, 3});
  pc.features = Tensor<float>({spec.points, 3});
  pc.labels.reserve(static_cast<std::size_t>(spec.points));
  std::normal_distribution<double> noise(0.0, spec.color_noise);
  std::int64_t row = 0;
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    const Surface& s = surfaces[i];
    const bool is_object = s.label >= kClassBox;
    for (std::int64_t k = 0; k < counts[i]; ++k, ++row) {
      const Vec3 p = s.sample(rng);
      Vec3 color = s.color;
      if (is_object && spec.ambiguity_rate > 0 && uni(rng, 0.0, 1.0) < spec.ambiguity_rate)
        color = kWallColor;
      for (int a = 0; a < 3; ++a) {
        pc.positions.at(row, a) = static_cast<float>(p[static_cast<std::size_t>(a)]);
        const double v = color[static_cast<std::size_t>(a)] + noise(rng);
        pc.features.at(row, a) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      pc.labels.push_back(s.label);
    }
  }
  return pc;
}

}  // namespace meepo::pc
