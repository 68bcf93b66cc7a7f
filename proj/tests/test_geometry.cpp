#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "aor/diff.hpp"
#include "aor/geometry.hpp"
#include "aor/rng.hpp"

using namespace aor;

namespace {

// Brute-force interval oracle: march the ray and report the first/last
// sample inside the box.
std::optional<std::pair<double, double>> marcher_intersect(const Ray& ray, const Aabb& box,
                                                           double step, double t_max) {
  double first = -1.0, last = -1.0;
  for (double t = 0.0; t <= t_max; t += step) {
    if (box.contains(ray.at(t))) {
      if (first < 0.0) first = t;
      last = t;
    }
  }
  if (first < 0.0) return std::nullopt;
  return std::make_pair(first, last);
}

Ray random_ray(Rng& rng) {
  const Vec3 origin{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  Vec3 dir;
  if (rng.uniform() < 0.7) {
    // aim at a jittered point near the box so a good share of rays hit it
    const Vec3 target{rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    dir = target - origin;
  } else {
    dir = {rng.normal(), rng.normal(), rng.normal()};
  }
  while (dir.norm() < 1e-6) dir = {rng.normal(), rng.normal(), rng.normal()};
  return {origin, dir.normalized()};
}

}  // namespace

TEST_CASE("ray_aabb_intersect matches hand geometry") {
  const Aabb box;
  const auto hit = ray_aabb_intersect({{0, 0, -1}, {0, 0, 1}}, box);
  REQUIRE(hit.has_value());
  CHECK(hit->first == Catch::Approx(0.75).margin(1e-12));
  CHECK(hit->second == Catch::Approx(1.25).margin(1e-12));

  CHECK_FALSE(ray_aabb_intersect({{1, 1, -1}, {0, 0, 1}}, box).has_value());

  const auto inside = ray_aabb_intersect({{0, 0, 0}, {0, 0, 1}}, box);
  REQUIRE(inside.has_value());
  CHECK(inside->first == 0.0);
  CHECK(inside->second == Catch::Approx(0.25).margin(1e-12));

  // box behind the origin
  CHECK_FALSE(ray_aabb_intersect({{0, 0, 1}, {0, 0, 1}}, box).has_value());
}

TEST_CASE("ray_aabb_intersect agrees with a brute-force marcher") {
  const Aabb box;
  Rng rng(42);
  int checked = 0;
  for (int i = 0; i < 1000; ++i) {
    const Ray ray = random_ray(rng);
    const auto fast = ray_aabb_intersect(ray, box);
    const auto slow = marcher_intersect(ray, box, 1e-4, 4.0);
    if (!slow.has_value()) {
      // the marcher can miss grazing hits thinner than its step; the slab
      // test must not miss anything the marcher found
      continue;
    }
    REQUIRE(fast.has_value());
    CHECK(std::fabs(fast->first - slow->first) < 2e-4);
    CHECK(std::fabs(fast->second - slow->second) < 2e-4);
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("pixel_to_ray pinhole model") {
  CameraIntrinsics intr;
  intr.width = 64;
  intr.height = 64;
  intr.fx = intr.fy = 16.0;
  intr.cx = intr.cy = 32.0;
  const Pose identity;

  const Ray center = pixel_to_ray<double>(intr, identity, intr.cx, intr.cy);
  CHECK(center.direction.x == Catch::Approx(0.0).margin(1e-12));
  CHECK(center.direction.y == Catch::Approx(0.0).margin(1e-12));
  CHECK(center.direction.z == Catch::Approx(1.0).margin(1e-12));

  const Ray off = pixel_to_ray<double>(intr, identity, intr.cx + intr.fx, intr.cy);
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(off.direction.x == Catch::Approx(s).margin(1e-12));
  CHECK(off.direction.z == Catch::Approx(s).margin(1e-12));

  Pose shifted;
  shifted.translation = {1.0, 2.0, 3.0};
  const Ray r = pixel_to_ray<double>(intr, shifted, 10.0, 20.0);
  CHECK(r.origin.x == 1.0);
  CHECK(r.origin.y == 2.0);
  CHECK(r.origin.z == 3.0);

  CHECK_THROWS_AS(pixel_to_ray<double>(intr, identity, -1.0, 5.0), std::out_of_range);
  CHECK_THROWS_AS(pixel_to_ray<double>(intr, identity, 5.0, 65.0), std::out_of_range);
}

TEST_CASE("spherical_to_pose looks at the center") {
  SphericalView v;
  v.azimuth = 0.0;
  v.elevation = 0.0;
  v.radius = 1.0;
  const Pose pose = spherical_to_pose(v);
  CHECK(pose.translation.x == Catch::Approx(1.0).margin(1e-12));
  CHECK(pose.translation.norm() == Catch::Approx(1.0).margin(1e-12));
  // camera z-axis (third column) points at the center
  CHECK(pose.rotation(0, 2) == Catch::Approx(-1.0).margin(1e-12));

  Rng rng(7);
  for (int i = 0; i < 50; ++i) {
    SphericalView view;
    view.azimuth = rng.uniform(0.0, 2 * kPi);
    view.elevation = rng.uniform(-1.2, 1.2);
    view.radius = rng.uniform(0.5, 2.0);
    view.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Pose p = spherical_to_pose(view);
    const Mat3 rrt = p.rotation * p.rotation.transposed();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(rrt(r, c) == Catch::Approx(r == c ? 1.0 : 0.0).margin(1e-9));
    // principal ray passes through the center
    const Vec3 z{p.rotation(0, 2), p.rotation(1, 2), p.rotation(2, 2)};
    const Vec3 to_center = (view.center - p.translation);
    CHECK((to_center - z * view.radius).norm() < 1e-6);
    // x-axis points downward (world -z component negative)
    CHECK(p.rotation(2, 0) < 0.0);
  }

  SphericalView pole;
  pole.elevation = kPi / 2;
  CHECK_THROWS_AS(spherical_to_pose(pole), std::invalid_argument);
}

TEST_CASE("spherical_to_pose camera position derivative vs finite differences") {
  const Vec3 center{0.1, -0.2, 0.3};
  const double radius = 1.3;
  for (int coord = 0; coord < 3; ++coord) {
    const auto f = [&](auto xs) {
      using S = std::remove_cvref_t<decltype(xs[0])>;
      const PoseT<S> p = spherical_to_pose<S>(center, radius, xs[0], xs[1]);
      return coord == 0 ? p.translation.x : (coord == 1 ? p.translation.y : p.translation.z);
    };
    const double x0[2] = {0.7, 0.4};
    CHECK(grad_check(f, std::span<const double>(x0, 2), 1e-6) < 1e-6);
  }
}

TEST_CASE("apply_twist exponential map") {
  Pose base;
  base.translation = {0.2, 0.0, -0.1};
  base.rotation = so3_exp(Vec3{0.3, -0.2, 0.5});

  SECTION("zero twist is the identity") {
    const double zero[6] = {0, 0, 0, 0, 0, 0};
    const Pose p = apply_twist<double>(base, zero);
    for (int i = 0; i < 9; ++i) CHECK(p.rotation.m[i] == base.rotation.m[i]);
    CHECK(p.translation.x == base.translation.x);
  }

  SECTION("pure translation shifts along z") {
    const double tw[6] = {0, 0, 0, 0, 0, 0.1};
    const Pose p = apply_twist<double>(base, tw);
    CHECK(p.translation.z == Catch::Approx(base.translation.z + 0.1).margin(1e-15));
    CHECK(p.translation.x == Catch::Approx(base.translation.x).margin(1e-15));
  }

  SECTION("small twists compose approximately additively") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
      Vec3 a{rng.normal(), rng.normal(), rng.normal()};
      Vec3 b{rng.normal(), rng.normal(), rng.normal()};
      a = a * (1e-3 / a.norm());
      b = b * (1e-3 / b.norm());
      const Mat3 ab = so3_exp(a) * so3_exp(b);
      const Vec3 log_ab = so3_log(ab);
      const Vec3 sum = a + b;
      CHECK((log_ab - sum).norm() <= 10.0 * 1e-3 * 1e-3);
    }
  }

  SECTION("negated twist inverts the increment") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      double w[6], wn[6];
      double norm2 = 0.0;
      for (int k = 0; k < 6; ++k) {
        w[k] = rng.uniform(-0.04, 0.04);
        norm2 += w[k] * w[k];
      }
      REQUIRE(std::sqrt(norm2) <= 0.1);
      for (int k = 0; k < 6; ++k) wn[k] = -w[k];
      const Pose fwd = apply_twist<double>(base, w);
      const Pose back = apply_twist<double>(fwd, wn);
      for (int k = 0; k < 9; ++k)
        CHECK(back.rotation.m[k] == Catch::Approx(base.rotation.m[k]).margin(1e-9));
      CHECK((back.translation - base.translation).norm() < 1e-9);
    }
  }

  SECTION("rotation stays orthonormal") {
    const double tw[6] = {0.05, -0.03, 0.08, 0.01, 0.0, -0.02};
    const Pose p = apply_twist<double>(base, tw);
    const Mat3 rrt = p.rotation * p.rotation.transposed();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        CHECK(rrt(r, c) == Catch::Approx(r == c ? 1.0 : 0.0).margin(1e-9));
  }
}
