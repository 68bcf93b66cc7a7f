#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "aor/io.hpp"
#include "aor/metrics.hpp"
#include "aor/rng.hpp"
#include "aor/sensor.hpp"

using namespace aor;

TEST_CASE("sphere and union signed distances") {
  const SdfScene s = make_scene_sphere();
  CHECK(s.sdf({0.3, 0, 0}) == Catch::Approx(0.15).margin(1e-12));
  CHECK(s.sdf({0, 0, 0}) == Catch::Approx(-0.15).margin(1e-12));

  SdfScene two;
  two.primitives.push_back({SdfPrimitive::Type::Sphere, {0.1, 0, 0}, {0.05, 0, 0}, {1, 1, 1}});
  two.primitives.push_back({SdfPrimitive::Type::Sphere, {-0.1, 0, 0}, {0.08, 0, 0}, {1, 1, 1}});
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p{rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25)};
    const double d0 = two.primitives[0].sdf(p);
    const double d1 = two.primitives[1].sdf(p);
    CHECK(two.sdf(p) == std::min(d0, d1));
  }
}

TEST_CASE("scene validation rejects oversized primitives") {
  SdfScene s;
  s.primitives.push_back({SdfPrimitive::Type::Sphere, {0.2, 0, 0}, {0.2, 0, 0}, {1, 1, 1}});
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("render_view depth of a centered sphere") {
  const SdfScene scene = make_scene_sphere();
  SphericalView view;
  view.azimuth = 0.3;
  view.elevation = 0.2;
  view.radius = 1.0;
  const Pose pose = spherical_to_pose(view);
  const CameraIntrinsics intr = CameraIntrinsics::from_fov(33, 33, 50.0 * kPi / 180.0);
  const ViewCapture cap = render_view(scene, pose, intr, 3.0);
  // center pixel of an odd-sized image looks through the principal point
  const double d = cap.depth.at(16, 16);
  CHECK(d == Catch::Approx(0.85).margin(1e-3));
  // a corner ray misses everything (ground is behind only at low elevation)
  CHECK(cap.depth.at(0, 0) == kNoDepth);
  CHECK(cap.color.at(0, 0).x == Catch::Approx(scene.background_color.x));
}

TEST_CASE("rendering is deterministic given the seed") {
  const SdfScene scene = make_scene_blob();
  const Pose pose = spherical_to_pose({0.1, 0.3, 1.0, {}});
  const CameraIntrinsics intr = CameraIntrinsics::from_fov(24, 24, 50.0 * kPi / 180.0);
  const ViewCapture a = render_view(scene, pose, intr, 3.0, 0.002, 99);
  const ViewCapture b = render_view(scene, pose, intr, 3.0, 0.002, 99);
  for (std::size_t i = 0; i < a.depth.pixels.size(); ++i)
    CHECK(a.depth.pixels[i] == b.depth.pixels[i]);
}

TEST_CASE("sphere-traced depth matches analytic ray-sphere intersection") {
  SdfScene scene = make_scene_sphere();
  scene.ground = false;  // pure sphere: rays must only ever hit the sphere
  const double R = 0.15;
  Rng rng(21);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    // random rays aimed at the sphere from outside
    const Vec3 origin = Vec3{rng.normal(), rng.normal(), rng.normal()}.normalized() *
                        rng.uniform(0.5, 1.5);
    Vec3 target{rng.uniform(-R, R), rng.uniform(-R, R), rng.uniform(-R, R)};
    const Vec3 dir = (target - origin).normalized();
    // analytic quadratic
    const double b = 2.0 * origin.dot(dir);
    const double c = origin.squared_norm() - R * R;
    const double disc = b * b - 4.0 * c;
    if (disc <= 1e-4) continue;  // skip near-tangent grazing hits
    const double t_analytic = (-b - std::sqrt(disc)) / 2.0;
    if (t_analytic <= 0.0) continue;
    ++hits;
    const double t_traced = trace_ray(scene, {origin, dir}, 3.0);
    REQUIRE(t_traced != kNoDepth);
    CHECK(std::fabs(t_traced - t_analytic) < 1e-4);
  }
  CHECK(hits > 5000);
}

TEST_CASE("depth image back-projections land on the surface") {
  const SdfScene scene = make_scene_blob();
  const Pose pose = spherical_to_pose({2.1, 0.35, 1.0, {}});
  const CameraIntrinsics intr = CameraIntrinsics::from_fov(32, 32, 50.0 * kPi / 180.0);
  const ViewCapture cap = render_view(scene, pose, intr, 3.0);
  int valid = 0;
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const double d = cap.depth.at(x, y);
      if (d == kNoDepth) continue;
      const Vec3 p = pixel_center_ray(intr, pose, x, y).at(d);
      CHECK(std::fabs(scene.trace_sdf(p)) < 1e-3);
      ++valid;
    }
  CHECK(valid > 50);
}

TEST_CASE("gt_surface_points lie on the surface and cover it") {
  const SdfScene scene = make_scene_sphere();
  const auto points = gt_surface_points(scene, 1000, 7);
  REQUIRE(points.size() == 1000);
  for (const Vec3& p : points)
    CHECK(std::fabs(p.norm() - 0.15) < 1e-5);

  // coverage: max nearest-neighbor gap below 5 cm
  double max_gap = 0.0;
  for (const Vec3& p : points) {
    double best = 1e9;
    for (const Vec3& q : points) {
      const double d2 = (p - q).squared_norm();
      if (d2 > 0.0 && d2 < best) best = d2;
    }
    max_gap = std::max(max_gap, std::sqrt(best));
  }
  CHECK(max_gap < 0.05);
}

TEST_CASE("ground plane supplies depth beyond the box") {
  const SdfScene scene = make_scene_blob();
  REQUIRE(scene.ground);
  const Pose pose = spherical_to_pose({0.0, 0.6, 1.0, {}});
  const CameraIntrinsics intr = CameraIntrinsics::from_fov(32, 32, 60.0 * kPi / 180.0);
  const ViewCapture cap = render_view(scene, pose, intr, 3.0);
  const Aabb box;
  int beyond_box = 0;
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      const double d = cap.depth.at(x, y);
      if (d == kNoDepth) continue;
      const Ray ray = pixel_center_ray(intr, pose, x, y);
      const auto hit = ray_aabb_intersect(ray, box);
      if (hit && d > hit->second) ++beyond_box;
    }
  CHECK(beyond_box > 20);
}

TEST_CASE("scene files parse and validate") {
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "aor_scene_test.txt").string();
  {
    std::ofstream f(path);
    f << "# test scene\n"
      << "union = smooth\n"
      << "smooth_k = 0.03\n"
      << "ground = true\n"
      << "ground_z = -0.25\n"
      << "background = 0.1 0.2 0.3\n"
      << "[sphere]\n"
      << "center = 0.05 0 0\n"
      << "radius = 0.1\n"
      << "albedo = 0.9 0.2 0.2\n"
      << "[box]\n"
      << "center = -0.05 0 0\n"
      << "half_extents = 0.05 0.05 0.05\n"
      << "albedo = 0.2 0.9 0.2\n";
  }
  const SdfScene s = load_scene_file(path);
  CHECK(s.primitives.size() == 2);
  CHECK(s.smooth_union);
  CHECK(s.smooth_k == Catch::Approx(0.03));
  CHECK(s.background_color.y == Catch::Approx(0.2));
  CHECK(s.primitives[1].type == SdfPrimitive::Type::Box);
  std::remove(path.c_str());

  CHECK_THROWS(make_scene("/nonexistent/scene.txt"));
}

TEST_CASE("capture export round-trips depth and writes ppm") {
  namespace fs = std::filesystem;
  const SdfScene scene = make_scene_sphere();
  const Pose pose = spherical_to_pose({0.0, 0.3, 1.0, {}});
  const CameraIntrinsics intr = CameraIntrinsics::from_fov(16, 16, 50.0 * kPi / 180.0);
  const ViewCapture cap = render_view(scene, pose, intr, 3.0);
  const auto dpath = (fs::temp_directory_path() / "aor_depth_test.bin").string();
  const auto ppath = (fs::temp_directory_path() / "aor_color_test.ppm").string();
  write_depth(dpath, cap.depth);
  write_ppm(ppath, cap.color);
  const Image<double> loaded = read_depth(dpath);
  REQUIRE(loaded.width == 16);
  for (std::size_t i = 0; i < loaded.pixels.size(); ++i)
    CHECK(loaded.pixels[i] == Catch::Approx(cap.depth.pixels[i]).margin(1e-6));
  std::ifstream p(ppath, std::ios::binary);
  std::string header;
  p >> header;
  CHECK(header == "P6");
  std::remove(dpath.c_str());
  std::remove(ppath.c_str());
}
