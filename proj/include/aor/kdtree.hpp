#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "aor/geometry.hpp"

namespace aor {

/// Exact nearest-neighbor index over a fixed point set (median-split kd-tree).
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    if (!order_.empty()) build(0, static_cast<int>(order_.size()));
  }

  bool empty() const { return points_.empty(); }
  std::size_t size() const { return points_.size(); }
  const Vec3& point(int index) const { return points_[index]; }

  struct Hit {
    int index = -1;
    double dist2 = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vec3& q) const {
    Hit best;
    if (!order_.empty()) search(0, static_cast<int>(order_.size()), q, best);
    return best;
  }

 private:
  static double coord(const Vec3& p, int axis) { return axis == 0 ? p.x : (axis == 1 ? p.y : p.z); }

  int widest_axis(int lo, int hi) const {
    Vec3 mn = points_[order_[lo]], mx = mn;
    for (int i = lo + 1; i < hi; ++i) {
      const Vec3& p = points_[order_[i]];
      mn = {std::min(mn.x, p.x), std::min(mn.y, p.y), std::min(mn.z, p.z)};
      mx = {std::max(mx.x, p.x), std::max(mx.y, p.y), std::max(mx.z, p.z)};
    }
    const Vec3 e = mx - mn;
    if (e.x >= e.y && e.x >= e.z) return 0;
    return e.y >= e.z ? 1 : 2;
  }

  void build(int lo, int hi) {
    if (hi - lo <= kLeafSize) return;
    const int axis = widest_axis(lo, hi);
    const int mid = (lo + hi) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](int a, int b) { return coord(points_[a], axis) < coord(points_[b], axis); });
    axes_.resize(order_.size(), -1);
    axes_[mid] = axis;
    build(lo, mid);
    build(mid + 1, hi);
  }

  void search(int lo, int hi, const Vec3& q, Hit& best) const {
    if (hi - lo <= kLeafSize) {
      for (int i = lo; i < hi; ++i) {
        const Vec3 d = points_[order_[i]] - q;
        const double d2 = d.squared_norm();
        if (d2 < best.dist2) best = {order_[i], d2};
      }
      return;
    }
    const int mid = (lo + hi) / 2;
    const int axis = axes_[mid];
    const Vec3& p = points_[order_[mid]];
    {
      const Vec3 d = p - q;
      const double d2 = d.squared_norm();
      if (d2 < best.dist2) best = {order_[mid], d2};
    }
    const double delta = coord(q, axis) - coord(p, axis);
    if (delta < 0.0) {
      search(lo, mid, q, best);
      if (delta * delta < best.dist2) search(mid + 1, hi, q, best);
    } else {
      search(mid + 1, hi, q, best);
      if (delta * delta < best.dist2) search(lo, mid, q, best);
    }
  }

  static constexpr int kLeafSize = 8;
  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<int> axes_;
};

}  // namespace aor
