#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>

namespace aor {

constexpr double kPi = 3.14159265358979323846;

inline double value_of(double x) { return x; }  // Dual overload lives in diff.hpp

/// 3-vector over any scalar type (double or the reverse-mode Dual).
template <class S>
struct Vec3T {
  S x{}, y{}, z{};

  Vec3T() = default;
  Vec3T(S x_, S y_, S z_) : x(std::move(x_)), y(std::move(y_)), z(std::move(z_)) {}

  Vec3T operator+(const Vec3T& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3T operator-(const Vec3T& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3T operator-() const { return {-x, -y, -z}; }
  Vec3T operator*(const S& s) const { return {x * s, y * s, z * s}; }
  Vec3T operator/(const S& s) const { return {x / s, y / s, z / s}; }

  S dot(const Vec3T& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3T cross(const Vec3T& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  S squared_norm() const { return dot(*this); }
  S norm() const {
    using std::sqrt;
    return sqrt(squared_norm());
  }
  Vec3T normalized() const { return *this / norm(); }
};

template <class S>
Vec3T<S> operator*(const S& s, const Vec3T<S>& v) {
  return v * s;
}

using Vec3 = Vec3T<double>;

/// Row-major 3x3 matrix.
template <class S>
struct Mat3T {
  S m[9]{};

  static Mat3T identity() {
    Mat3T r;
    r.m[0] = S(1.0);
    r.m[4] = S(1.0);
    r.m[8] = S(1.0);
    return r;
  }

  S& operator()(int r, int c) { return m[3 * r + c]; }
  const S& operator()(int r, int c) const { return m[3 * r + c]; }

  Vec3T<S> operator*(const Vec3T<S>& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3T operator*(const Mat3T& o) const {
    Mat3T r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    return r;
  }
  Mat3T transposed() const {
    Mat3T r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
  Vec3T<S> transposed_times(const Vec3T<S>& v) const {
    return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
            m[1] * v.x + m[4] * v.y + m[7] * v.z,
            m[2] * v.x + m[5] * v.y + m[8] * v.z};
  }
};

using Mat3 = Mat3T<double>;

/// Rigid transform mapping camera coordinates to world coordinates.
/// `rotation` columns are the camera axes expressed in the world frame;
/// `translation` is the camera center.
template <class S>
struct PoseT {
  Mat3T<S> rotation = Mat3T<S>::identity();
  Vec3T<S> translation{};

  Vec3T<S> transform(const Vec3T<S>& p) const { return rotation * p + translation; }
  Vec3T<S> rotate(const Vec3T<S>& d) const { return rotation * d; }

  PoseT operator*(const PoseT& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  PoseT inverse() const {
    Mat3T<S> rt = rotation.transposed();
    return {rt, -(rt * translation)};
  }
};

using Pose = PoseT<double>;

struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 && cy < height;
  }

  /// Symmetric pinhole model from a horizontal field of view.
  static CameraIntrinsics from_fov(int width, int height, double fov_x_rad) {
    CameraIntrinsics k;
    k.width = width;
    k.height = height;
    k.fx = 0.5 * width / std::tan(0.5 * fov_x_rad);
    k.fy = k.fx;
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
  }
};

template <class S>
struct RayT {
  Vec3T<S> origin;
  Vec3T<S> direction;  // unit norm

  Vec3T<S> at(double t) const { return origin + direction * S(t); }
};

using Ray = RayT<double>;

struct Aabb {
  Vec3 p_min{-0.25, -0.25, -0.25};
  Vec3 p_max{0.25, 0.25, 0.25};

  Vec3 extent() const { return p_max - p_min; }
  Vec3 center() const { return (p_min + p_max) * 0.5; }
  bool contains(const Vec3& p) const {
    return p.x >= p_min.x && p.x <= p_max.x && p.y >= p_min.y && p.y <= p_max.y &&
           p.z >= p_min.z && p.z <= p_max.z;
  }
};

/// Slab intersection. Returns the entry/exit distances along the ray, with the
/// entry clamped to zero for origins inside the box; empty when the ray misses
/// or the box lies entirely behind the origin.
inline std::optional<std::pair<double, double>> ray_aabb_intersect(const Ray& ray,
                                                                   const Aabb& box) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  const double o[3] = {ray.origin.x, ray.origin.y, ray.origin.z};
  const double d[3] = {ray.direction.x, ray.direction.y, ray.direction.z};
  const double lo[3] = {box.p_min.x, box.p_min.y, box.p_min.z};
  const double hi[3] = {box.p_max.x, box.p_max.y, box.p_max.z};
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (o[a] < lo[a] || o[a] > hi[a]) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / d[a];
    double t1 = (lo[a] - o[a]) * inv;
    double t2 = (hi[a] - o[a]) * inv;
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_far < 0.0) return std::nullopt;
  return std::make_pair(std::max(t_near, 0.0), t_far);
}

/// Back-projects a (possibly fractional) pixel through a pose. Camera frame:
/// +x along image u, +y along image v, +z forward through the principal point.
template <class S>
RayT<S> pixel_to_ray(const CameraIntrinsics& intr, const PoseT<S>& pose, double px, double py) {
  if (px < 0.0 || px > intr.width || py < 0.0 || py > intr.height)
    throw std::out_of_range("pixel_to_ray: pixel outside image bounds");
  const Vec3 d_cam{(px - intr.cx) / intr.fx, (py - intr.cy) / intr.fy, 1.0};
  const Vec3 d_unit = d_cam.normalized();
  Vec3T<S> d{S(d_unit.x), S(d_unit.y), S(d_unit.z)};
  return {pose.translation, pose.rotate(d)};
}

/// A view on the 2-DoF sphere manifold around `center`: azimuth about world +z
/// measured from +x, elevation above the equator.
struct SphericalView {
  double azimuth = 0.0;    // [0, 2*pi)
  double elevation = 0.0;  // [elev_min, elev_max], away from the poles
  double radius = 1.0;
  Vec3 center{};
};

/// Camera pose on the sphere: the optical axis points at the center and the
/// camera x-axis points downward along the meridian ("vertical"). Evaluable
/// with Dual scalars so the pose is differentiable in (azimuth, elevation).
template <class S>
PoseT<S> spherical_to_pose(const Vec3& center, double radius, const S& azimuth,
                           const S& elevation) {
  using std::cos;
  using std::sin;
  constexpr double kPoleMargin = 1e-6;
  const double phi_v = value_of(elevation);
  if (!(phi_v > -0.5 * kPi + kPoleMargin && phi_v < 0.5 * kPi - kPoleMargin))
    throw std::invalid_argument("spherical_to_pose: elevation too close to a pole");
  const S ct = cos(azimuth), st = sin(azimuth);
  const S cp = cos(elevation), sp = sin(elevation);
  PoseT<S> pose;
  pose.translation = Vec3T<S>{S(center.x) + S(radius) * cp * ct,
                              S(center.y) + S(radius) * cp * st,
                              S(center.z) + S(radius) * sp};
  // Camera axes in world coordinates (columns of R).
  const Vec3T<S> z_axis{-cp * ct, -cp * st, -sp};
  const Vec3T<S> x_axis{sp * ct, sp * st, -cp};
  const Vec3T<S> y_axis = z_axis.cross(x_axis);
  pose.rotation(0, 0) = x_axis.x;
  pose.rotation(1, 0) = x_axis.y;
  pose.rotation(2, 0) = x_axis.z;
  pose.rotation(0, 1) = y_axis.x;
  pose.rotation(1, 1) = y_axis.y;
  pose.rotation(2, 1) = y_axis.z;
  pose.rotation(0, 2) = z_axis.x;
  pose.rotation(1, 2) = z_axis.y;
  pose.rotation(2, 2) = z_axis.z;
  return pose;
}

inline Pose spherical_to_pose(const SphericalView& view) {
  return spherical_to_pose<double>(view.center, view.radius, view.azimuth, view.elevation);
}

namespace detail {

// sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 as smooth functions of s = t^2.
// The series branch keeps them differentiable through s = 0 (Dual-safe).
template <class S>
void rotation_series_coeffs(const S& s, S& a, S& b, S& c) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (value_of(s) < 1e-8) {
    a = S(1.0) - s * (1.0 / 6.0) + s * s * (1.0 / 120.0);
    b = S(0.5) - s * (1.0 / 24.0) + s * s * (1.0 / 720.0);
    c = S(1.0 / 6.0) - s * (1.0 / 120.0) + s * s * (1.0 / 5040.0);
  } else {
    const S t = sqrt(s);
    a = sin(t) / t;
    b = (S(1.0) - cos(t)) / s;
    c = (t - sin(t)) / (s * t);
  }
}

}  // namespace detail

/// Rodrigues rotation from an axis-angle vector.
template <class S>
Mat3T<S> so3_exp(const Vec3T<S>& omega) {
  S a, b, c;
  detail::rotation_series_coeffs(omega.squared_norm(), a, b, c);
  const S &wx = omega.x, &wy = omega.y, &wz = omega.z;
  Mat3T<S> r;
  r(0, 0) = S(1.0) - b * (wy * wy + wz * wz);
  r(0, 1) = b * wx * wy - a * wz;
  r(0, 2) = b * wx * wz + a * wy;
  r(1, 0) = b * wx * wy + a * wz;
  r(1, 1) = S(1.0) - b * (wx * wx + wz * wz);
  r(1, 2) = b * wy * wz - a * wx;
  r(2, 0) = b * wx * wz - a * wy;
  r(2, 1) = b * wy * wz + a * wx;
  r(2, 2) = S(1.0) - b * (wx * wx + wy * wy);
  return r;
}

inline Vec3 so3_log(const Mat3& r) {
  const double tr = r(0, 0) + r(1, 1) + r(2, 2);
  const double cos_t = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_t);
  Vec3 w{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  if (theta < 1e-7) return w * 0.5;
  return w * (theta / (2.0 * std::sin(theta)));
}

inline double rotation_angle(const Mat3& r) {
  const double tr = r(0, 0) + r(1, 1) + r(2, 2);
  return std::acos(std::clamp(0.5 * (tr - 1.0), -1.0, 1.0));
}

/// SE(3) exponential of a twist (rotation part first, then translation part).
template <class S>
PoseT<S> se3_exp(const S twist[6]) {
  const Vec3T<S> omega{twist[0], twist[1], twist[2]};
  const Vec3T<S> v{twist[3], twist[4], twist[5]};
  S a, b, c;
  detail::rotation_series_coeffs(omega.squared_norm(), a, b, c);
  PoseT<S> out;
  out.rotation = so3_exp(omega);
  // t = V v with V = I + b*K + c*K^2, K = hat(omega).
  const Vec3T<S> kv = omega.cross(v);
  const Vec3T<S> kkv = omega.cross(kv);
  out.translation = v + kv * b + kkv * c;
  return out;
}

/// Left-multiplies a base pose by the exponential of a twist. A zero twist is
/// the identity; negating the twist inverts the increment exactly.
template <class S>
PoseT<S> apply_twist(const Pose& base, const S twist[6]) {
  const PoseT<S> delta = se3_exp(twist);
  PoseT<S> out;
  Mat3T<S> rb;
  for (int i = 0; i < 9; ++i) rb.m[i] = S(base.rotation.m[i]);
  const Vec3T<S> tb{S(base.translation.x), S(base.translation.y), S(base.translation.z)};
  out.rotation = delta.rotation * rb;
  out.translation = delta.rotation * tb + delta.translation;
  return out;
}

}  // namespace aor
