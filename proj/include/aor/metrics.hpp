#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "aor/geometry.hpp"
#include "aor/kdtree.hpp"
#include "aor/sensor.hpp"

namespace aor {

struct CoverageReport {
  int matched = 0;
  int total = 0;
  double coverage = 0.0;
  double threshold = 0.005;
};

/// Fraction of ground-truth surface points with a reconstructed point closer
/// than the registration threshold (exact nearest neighbors).
inline CoverageReport surface_coverage(std::span<const Vec3> recon_points,
                                       std::span<const Vec3> gt_points,
                                       double threshold = 0.005) {
  if (gt_points.empty()) throw std::invalid_argument("surface_coverage: empty ground truth");
  CoverageReport rep;
  rep.total = static_cast<int>(gt_points.size());
  rep.threshold = threshold;
  if (!recon_points.empty()) {
    KdTree tree(std::vector<Vec3>(recon_points.begin(), recon_points.end()));
    const double t2 = threshold * threshold;
    for (const Vec3& g : gt_points)
      if (tree.nearest(g).dist2 < t2) rep.matched += 1;
  }
  rep.coverage = static_cast<double>(rep.matched) / rep.total;
  return rep;
}

struct EntropyReport {
  double mean_bits = 0.0;
  int grid_res = 0;
};

inline double binary_entropy_bits(double o) {
  double h = 0.0;
  if (o > 0.0) h -= o * std::log2(o);
  const double q = 1.0 - o;
  if (q > 0.0) h -= q * std::log2(q);
  return h;
}

/// Mean Shannon entropy of the occupancy over the cell centers of a regular
/// grid spanning the field's box.
template <class FieldLike>
EntropyReport map_entropy(const FieldLike& field, int grid_res = 128) {
  const Aabb& box = field.box();
  const Vec3 ext = box.extent();
  double sum = 0.0;
  for (int ix = 0; ix < grid_res; ++ix) {
    const double x = box.p_min.x + ext.x * (ix + 0.5) / grid_res;
    for (int iy = 0; iy < grid_res; ++iy) {
      const double y = box.p_min.y + ext.y * (iy + 0.5) / grid_res;
      for (int iz = 0; iz < grid_res; ++iz) {
        const double z = box.p_min.z + ext.z * (iz + 0.5) / grid_res;
        sum += binary_entropy_bits(field.query(Vec3{x, y, z}).occupancy);
      }
    }
  }
  EntropyReport rep;
  rep.grid_res = grid_res;
  rep.mean_bits = sum / (static_cast<double>(grid_res) * grid_res * grid_res);
  return rep;
}

/// Back-projects every valid depth pixel of the visited captures and keeps
/// the points inside the box.
inline std::vector<Vec3> accumulate_recon_points(std::span<const ViewCapture> captures,
                                                 const Aabb& box) {
  std::vector<Vec3> points;
  for (const ViewCapture& cap : captures) {
    for (int y = 0; y < cap.intr.height; ++y)
      for (int x = 0; x < cap.intr.width; ++x) {
        const double d = cap.depth.at(x, y);
        if (d == kNoDepth) continue;
        const Ray ray = pixel_center_ray(cap.intr, cap.pose, x, y);
        const Vec3 p = ray.at(d);
        if (box.contains(p)) points.push_back(p);
      }
  }
  return points;
}

/// Fraction of probe-grid cells the field believes occupied while the ground
/// truth says they are at least `margin` away from any surface ("floaters").
template <class FieldLike>
double floater_volume(const FieldLike& field, const SdfScene& scene, int probe_res = 64,
                      double margin = 0.02) {
  const Aabb& box = field.box();
  const Vec3 ext = box.extent();
  std::int64_t floaters = 0;
  for (int ix = 0; ix < probe_res; ++ix) {
    const double x = box.p_min.x + ext.x * (ix + 0.5) / probe_res;
    for (int iy = 0; iy < probe_res; ++iy) {
      const double y = box.p_min.y + ext.y * (iy + 0.5) / probe_res;
      for (int iz = 0; iz < probe_res; ++iz) {
        const double z = box.p_min.z + ext.z * (iz + 0.5) / probe_res;
        const Vec3 p{x, y, z};
        if (field.query(p).occupancy > 0.5 && scene.sdf(p) > margin) floaters += 1;
      }
    }
  }
  return static_cast<double>(floaters) /
         (static_cast<double>(probe_res) * probe_res * probe_res);
}

}  // namespace aor
