#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aor/geometry.hpp"
#include "aor/io.hpp"
#include "aor/rng.hpp"

namespace aor {

/// Analytic signed-distance primitive. `params` meaning depends on the type:
/// sphere radius in x; box half-extents; torus major/minor radii in x/y
/// (axis along world +z through the center).
struct SdfPrimitive {
  enum class Type { Sphere, Box, Torus };
  Type type = Type::Sphere;
  Vec3 center{};
  Vec3 params{0.1, 0.0, 0.0};
  Vec3 albedo{0.8, 0.8, 0.8};

  double sdf(const Vec3& p) const {
    const Vec3 q = p - center;
    switch (type) {
      case Type::Sphere:
        return q.norm() - params.x;
      case Type::Box: {
        const Vec3 d{std::fabs(q.x) - params.x, std::fabs(q.y) - params.y,
                     std::fabs(q.z) - params.z};
        const Vec3 outside{std::max(d.x, 0.0), std::max(d.y, 0.0), std::max(d.z, 0.0)};
        return outside.norm() + std::min(std::max(d.x, std::max(d.y, d.z)), 0.0);
      }
      case Type::Torus: {
        const double ring = std::sqrt(q.x * q.x + q.y * q.y) - params.x;
        return std::sqrt(ring * ring + q.z * q.z) - params.y;
      }
    }
    return 0.0;
  }

  /// Loose bounding radius used to validate containment in the object box.
  double bound_radius() const {
    switch (type) {
      case Type::Sphere:
        return params.x;
      case Type::Box:
        return params.norm();
      case Type::Torus:
        return params.x + params.y;
    }
    return 0.0;
  }
};

/// Analytic scene standing in for a physics simulator: primitives combined by
/// hard min-union or a polynomial smooth union, plus an optional ground plane
/// below the object box that supplies background depth measurements.
struct SdfScene {
  std::string name = "scene";
  std::vector<SdfPrimitive> primitives;
  bool smooth_union = false;
  double smooth_k = 0.04;
  bool ground = true;
  double ground_z = -0.25;
  Vec3 ground_albedo{0.45, 0.42, 0.38};
  Vec3 background_color{0.10, 0.10, 0.15};
  Aabb box{};

  /// Signed distance of the object (primitives only).
  double sdf(const Vec3& p) const {
    if (primitives.empty()) return 1e9;
    double d = primitives[0].sdf(p);
    for (std::size_t i = 1; i < primitives.size(); ++i) {
      const double di = primitives[i].sdf(p);
      if (smooth_union) {
        const double h = std::max(smooth_k - std::fabs(d - di), 0.0) / smooth_k;
        d = std::min(d, di) - h * h * smooth_k * 0.25;
      } else {
        d = std::min(d, di);
      }
    }
    return d;
  }

  /// Distance used for sphere tracing: object plus the ground half-space.
  double trace_sdf(const Vec3& p) const {
    double d = sdf(p);
    if (ground) d = std::min(d, p.z - ground_z);
    return d;
  }

  Vec3 albedo_at(const Vec3& p) const {
    if (ground && p.z - ground_z < nearest_primitive_sdf(p)) return ground_albedo;
    const SdfPrimitive* best = nullptr;
    double best_d = 1e18;
    for (const auto& prim : primitives) {
      const double d = prim.sdf(p);
      if (d < best_d) {
        best_d = d;
        best = &prim;
      }
    }
    return best != nullptr ? best->albedo : background_color;
  }

  Vec3 trace_normal(const Vec3& p) const {
    const double e = 1e-5;
    const double dx = trace_sdf({p.x + e, p.y, p.z}) - trace_sdf({p.x - e, p.y, p.z});
    const double dy = trace_sdf({p.x, p.y + e, p.z}) - trace_sdf({p.x, p.y - e, p.z});
    const double dz = trace_sdf({p.x, p.y, p.z + e}) - trace_sdf({p.x, p.y, p.z - e});
    const Vec3 g{dx, dy, dz};
    const double n = g.norm();
    return n > 0.0 ? g / n : Vec3{0.0, 0.0, 1.0};
  }

  void validate() const {
    for (const auto& prim : primitives) {
      const double r = prim.bound_radius();
      const Vec3 lo = prim.center - Vec3{r, r, r};
      const Vec3 hi = prim.center + Vec3{r, r, r};
      if (!box.contains(lo) || !box.contains(hi))
        throw std::invalid_argument("SdfScene: primitive exceeds the object box");
    }
    if (ground && ground_z > box.p_min.z + 1e-12)
      throw std::invalid_argument("SdfScene: ground plane must lie at or below the box bottom");
  }

 private:
  double nearest_primitive_sdf(const Vec3& p) const {
    double d = 1e18;
    for (const auto& prim : primitives) d = std::min(d, prim.sdf(p));
    return d;
  }
};

inline double scene_sdf(const SdfScene& scene, const Vec3& p) { return scene.sdf(p); }

/// One captured RGB-D view. `pose` is the true capture pose; registration
/// error experiments corrupt a copy handed to the reconstructor, never this.
struct ViewCapture {
  CameraIntrinsics intr;
  Pose pose;
  double d_max = 3.0;
  Image<Vec3> color;
  Image<double> depth;  // ray-parameter distance from the camera center; kNoDepth when missing
};

inline Ray pixel_center_ray(const CameraIntrinsics& intr, const Pose& pose, int ix, int iy) {
  return pixel_to_ray<double>(intr, pose, ix + 0.5, iy + 0.5);
}

constexpr double kTraceTolerance = 1e-5;
constexpr int kTraceMaxSteps = 256;

/// Sphere-traces one ray; returns the hit distance or kNoDepth. A few Newton
/// steps on the along-ray distance polish the hit, which matters for grazing
/// incidence where the march alone converges slowly.
inline double trace_ray(const SdfScene& scene, const Ray& ray, double d_max) {
  double t = 0.0;
  bool hit = false;
  for (int step = 0; step < kTraceMaxSteps && t <= d_max; ++step) {
    const double d = scene.trace_sdf(ray.at(t));
    if (d < kTraceTolerance) {
      hit = true;
      break;
    }
    t += d;
  }
  if (!hit) return kNoDepth;
  const double h = 1e-6;
  for (int it = 0; it < 4; ++it) {
    const double d = scene.trace_sdf(ray.at(t));
    const double slope = (scene.trace_sdf(ray.at(t + h)) - scene.trace_sdf(ray.at(t - h))) /
                         (2.0 * h);
    if (slope > -1e-6) break;
    const double step = d / slope;
    if (std::fabs(step) > 1e-3) break;
    t -= step;
  }
  return std::max(t, 1e-9);
}

/// Renders an RGB-D capture by per-pixel sphere tracing. Shading is a simple
/// headlight Lambert term on the SDF-gradient normal. Gaussian depth noise is
/// drawn from per-pixel streams so pixel order never matters.
inline ViewCapture render_view(const SdfScene& scene, const Pose& pose,
                               const CameraIntrinsics& intr, double d_max,
                               double noise_sigma = 0.0, std::uint64_t seed = 0) {
  if (!intr.valid()) throw std::invalid_argument("render_view: bad intrinsics");
  ViewCapture cap;
  cap.intr = intr;
  cap.pose = pose;
  cap.d_max = d_max;
  cap.color = Image<Vec3>(intr.width, intr.height, scene.background_color);
  cap.depth = Image<double>(intr.width, intr.height, kNoDepth);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      const Ray ray = pixel_center_ray(intr, pose, x, y);
      const double t = trace_ray(scene, ray, d_max);
      if (t == kNoDepth) continue;
      const Vec3 p = ray.at(t);
      const Vec3 n = scene.trace_normal(p);
      const double lambert = std::max(0.0, -n.dot(ray.direction));
      const Vec3 albedo = scene.albedo_at(p);
      const double shade = 0.15 + 0.85 * lambert;
      cap.color.at(x, y) = albedo * shade;
      double depth = t;
      if (noise_sigma > 0.0) {
        Rng pixel_rng = Rng::stream(seed, "depth_noise",
                                    static_cast<std::uint64_t>(y) * intr.width + x);
        depth = std::max(1e-6, depth + noise_sigma * pixel_rng.normal());
      }
      cap.depth.at(x, y) = depth;
    }
  }
  return cap;
}

/// Samples points on the object's zero level set by projecting rejected box
/// samples along the SDF gradient until convergence.
inline std::vector<Vec3> gt_surface_points(const SdfScene& scene, int count,
                                           std::uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("gt_surface_points: count must be positive");
  std::vector<Vec3> points;
  points.reserve(count);
  Rng rng = Rng::stream(seed, "gt_surface");
  const Vec3 lo = scene.box.p_min, hi = scene.box.p_max;
  while (static_cast<int>(points.size()) < count) {
    Vec3 p{rng.uniform(lo.x, hi.x), rng.uniform(lo.y, hi.y), rng.uniform(lo.z, hi.z)};
    bool ok = false;
    for (int it = 0; it < 50; ++it) {
      const double d = scene.sdf(p);
      if (std::fabs(d) < 1e-5) {
        ok = true;
        break;
      }
      const double e = 1e-6;
      const Vec3 g{(scene.sdf({p.x + e, p.y, p.z}) - scene.sdf({p.x - e, p.y, p.z})) / (2 * e),
                   (scene.sdf({p.x, p.y + e, p.z}) - scene.sdf({p.x, p.y - e, p.z})) / (2 * e),
                   (scene.sdf({p.x, p.y, p.z + e}) - scene.sdf({p.x, p.y, p.z - e})) / (2 * e)};
      const double g2 = g.squared_norm();
      if (g2 < 1e-12) break;
      p = p - g * (d / g2);
    }
    if (ok && scene.box.contains(p)) points.push_back(p);
  }
  return points;
}

// ---------------------------------------------------------------------------
// Built-in benchmark scenes.

inline SdfScene make_scene_sphere() {
  SdfScene s;
  s.name = "sphere";
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {0, 0, 0}, {0.15, 0, 0},
                          {0.85, 0.45, 0.30}});
  s.validate();
  return s;
}

/// Smooth union of three spheres; a rounded, mostly convex test object.
inline SdfScene make_scene_blob() {
  SdfScene s;
  s.name = "blob";
  s.smooth_union = true;
  s.smooth_k = 0.05;
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {0.05, 0.00, -0.03}, {0.12, 0, 0},
                          {0.80, 0.35, 0.25}});
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {-0.08, 0.05, 0.02}, {0.09, 0, 0},
                          {0.30, 0.65, 0.30}});
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {0.01, -0.08, 0.07}, {0.07, 0, 0},
                          {0.30, 0.40, 0.80}});
  s.validate();
  return s;
}

/// Two spheres joined by a thin bridge along x; the projected area differs
/// strongly between broadside and end-on views.
inline SdfScene make_scene_barbell() {
  SdfScene s;
  s.name = "barbell";
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {0.15, 0.0, 0.0}, {0.09, 0, 0},
                          {0.85, 0.55, 0.25}});
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {-0.15, 0.0, 0.0}, {0.09, 0, 0},
                          {0.25, 0.55, 0.85}});
  s.primitives.push_back({SdfPrimitive::Type::Box, {0.0, 0.0, 0.0}, {0.15, 0.018, 0.018},
                          {0.75, 0.75, 0.30}});
  s.validate();
  return s;
}

inline SdfScene make_scene_torus_box() {
  SdfScene s;
  s.name = "torus-box";
  s.primitives.push_back({SdfPrimitive::Type::Torus, {0.0, 0.0, 0.0}, {0.14, 0.045, 0},
                          {0.80, 0.60, 0.25}});
  s.primitives.push_back({SdfPrimitive::Type::Box, {0.0, 0.0, 0.0}, {0.055, 0.055, 0.055},
                          {0.35, 0.55, 0.80}});
  s.validate();
  return s;
}

/// Scene description file: flat key=value lines plus one [section] per
/// primitive. Keys: union (hard|smooth), smooth_k, ground (true|false),
/// ground_z, background; sections [sphere]/[box]/[torus] with center, albedo
/// and radius / half_extents / radii.
inline SdfScene load_scene_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_scene_file: cannot open " + path);
  SdfScene s;
  s.name = path;
  SdfPrimitive* current = nullptr;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    if (token.front() == '[') {
      std::string section = token.substr(1, token.find(']') - 1);
      SdfPrimitive prim;
      if (section == "sphere")
        prim.type = SdfPrimitive::Type::Sphere;
      else if (section == "box")
        prim.type = SdfPrimitive::Type::Box;
      else if (section == "torus")
        prim.type = SdfPrimitive::Type::Torus;
      else
        fail("unknown primitive section [" + section + "]");
      s.primitives.push_back(prim);
      current = &s.primitives.back();
      continue;
    }
    std::string eq;
    ls >> eq;
    if (eq != "=") fail("expected 'key = value'");
    auto read3 = [&]() {
      Vec3 v;
      if (!(ls >> v.x >> v.y >> v.z)) fail("expected three numbers");
      return v;
    };
    auto read1 = [&]() {
      double v;
      if (!(ls >> v)) fail("expected a number");
      return v;
    };
    if (current == nullptr) {
      if (token == "union") {
        std::string mode;
        ls >> mode;
        s.smooth_union = (mode == "smooth");
      } else if (token == "smooth_k")
        s.smooth_k = read1();
      else if (token == "ground") {
        std::string b;
        ls >> b;
        s.ground = (b == "true" || b == "1");
      } else if (token == "ground_z")
        s.ground_z = read1();
      else if (token == "background")
        s.background_color = read3();
      else
        fail("unknown scene key '" + token + "'");
    } else {
      if (token == "center")
        current->center = read3();
      else if (token == "albedo")
        current->albedo = read3();
      else if (token == "radius")
        current->params = {read1(), 0, 0};
      else if (token == "half_extents")
        current->params = read3();
      else if (token == "radii") {
        current->params.x = read1();
        current->params.y = read1();
      } else
        fail("unknown primitive key '" + token + "'");
    }
  }
  if (s.primitives.empty()) throw std::runtime_error(path + ": scene has no primitives");
  s.validate();
  return s;
}

/// Named preset or a path to a scene file.
inline SdfScene make_scene(const std::string& name) {
  if (name == "sphere") return make_scene_sphere();
  if (name == "blob") return make_scene_blob();
  if (name == "barbell") return make_scene_barbell();
  if (name == "torus-box") return make_scene_torus_box();
  return load_scene_file(name);
}

}  // namespace aor
