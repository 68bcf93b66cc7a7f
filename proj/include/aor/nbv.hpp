#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aor/diff.hpp"
#include "aor/field.hpp"
#include "aor/geometry.hpp"
#include "aor/parallel.hpp"
#include "aor/rng.hpp"

namespace aor {

/// Bounds of the 2-DoF spherical view manifold.
struct ViewManifold {
  Vec3 center{};
  double radius = 1.0;
  double elev_min = -10.0 * kPi / 180.0;
  double elev_max = 80.0 * kPi / 180.0;

  SphericalView clamp_view(double theta, double phi) const {
    SphericalView v;
    v.center = center;
    v.radius = radius;
    v.azimuth = std::fmod(theta, 2.0 * kPi);
    if (v.azimuth < 0.0) v.azimuth += 2.0 * kPi;
    v.elevation = std::clamp(phi, elev_min, elev_max);
    return v;
  }
  bool contains(double, double phi) const {
    return phi >= elev_min - 1e-12 && phi <= elev_max + 1e-12;
  }
};

struct NbvConfig {
  int eval_rays = 5000;      // N_e
  int points_per_ray = 16;   // N_p
  int init_samples = 48;     // N_k
  double lr = 1e-2;
  int iterations = 100;
  double min_top_ratio = 0.05;  // floor of the cosine N_t schedule
  double lambda_dist = 0.0;
  double lambda_ground = 0.5;
  double ground_margin = 0.0;    // elevation below this is penalized
  double ground_softness = 0.1;  // softplus scale, radians
  ViewManifold manifold;
  int chunks = 8;
  int threads = 1;
};

/// Binary entropy of an occupancy probability, in nats.
template <class S>
S point_entropy(const S& o) {
  using std::log;
  return -o * log(o) - (S(1.0) - o) * log(S(1.0) - o);
}

/// Cosine N_t schedule over observed views, clamped to a minimum ratio so the
/// criterion never selects zero rays.
inline int schedule_nt(int observed_views, int eval_rays, double min_ratio = 0.05) {
  const double ratio =
      std::clamp(std::cos(kPi * static_cast<double>(observed_views) / 20.0), min_ratio, 1.0);
  return std::max(1, static_cast<int>(std::lround(eval_rays * ratio)));
}

namespace detail {

template <class S>
S softplus(const S& x) {
  using std::exp;
  using std::fabs;
  using std::log;
  using std::max;
  // max(x,0) + log(1 + exp(-|x|)), stable for large |x|
  return max(x, S(0.0)) + log(S(1.0) + exp(-fabs(x)));
}

template <class S>
S safe_entropy(const S& o) {
  return point_entropy(clamp(o, 1e-12, 1.0 - 1e-12));
}

}  // namespace detail

/// Movement / safety cost on the manifold: great-circle distance to the
/// current view plus a soft barrier below the ground-margin elevation.
template <class S>
S movement_cost(const S& theta, const S& phi, const SphericalView& current,
                const NbvConfig& cfg) {
  using std::acos;
  using std::cos;
  using std::min;
  using std::sin;
  S cost(0.0);
  if (cfg.lambda_dist != 0.0) {
    const S dot = cos(phi) * std::cos(current.elevation) * cos(theta - S(current.azimuth)) +
                  sin(phi) * std::sin(current.elevation);
    cost = cost + S(cfg.lambda_dist) * acos(min(dot, S(1.0 - 1e-15)));
  }
  if (cfg.lambda_ground != 0.0) {
    const S arg = (S(cfg.ground_margin) - phi) / S(cfg.ground_softness);
    cost = cost + S(cfg.lambda_ground) * detail::softplus(arg);
  }
  return cost;
}

inline double movement_cost(const SphericalView& view, const SphericalView& current,
                            const NbvConfig& cfg) {
  return movement_cost<double>(view.azimuth, view.elevation, current, cfg);
}

/// Frozen per-evaluation sample set: fractional pixels and stratified unit
/// offsets along each ray. Drawing it separately gives a fixed-sample mode
/// for gradient checks while the optimizer redraws per iteration.
struct ViewInfoDraw {
  int n_rays = 0;
  int n_points = 0;
  std::vector<double> px, py;       // n_rays
  std::vector<double> offsets;      // n_rays * n_points, each in [0,1)
};

inline ViewInfoDraw draw_view_info_samples(const CameraIntrinsics& intr, int n_rays,
                                           int n_points, Rng& rng) {
  ViewInfoDraw d;
  d.n_rays = n_rays;
  d.n_points = n_points;
  d.px.resize(n_rays);
  d.py.resize(n_rays);
  d.offsets.resize(static_cast<std::size_t>(n_rays) * n_points);
  for (int i = 0; i < n_rays; ++i) {
    d.px[i] = rng.uniform(0.0, intr.width);
    d.py[i] = rng.uniform(0.0, intr.height);
    for (int j = 0; j < n_points; ++j)
      d.offsets[static_cast<std::size_t>(i) * n_points + j] = (j + rng.uniform()) / n_points;
  }
  return d;
}

/// Per-ray occlusion-weighted entropy sums for one pose. Rays that miss the
/// box contribute zero. The returned sums are in draw order.
template <class FieldLike, class S>
void view_ray_sums(const FieldLike& field, Tape* tape, const PoseT<S>& pose,
                   const CameraIntrinsics& intr, const ViewInfoDraw& draw, int ray_begin,
                   int ray_end, S* sums) {
  using std::exp;
  using std::log;
  using std::max;
  const Aabb& box = field.box();
  const Pose pose_value = [&] {
    Pose p;
    for (int i = 0; i < 9; ++i) p.rotation.m[i] = value_of(pose.rotation.m[i]);
    p.translation = {value_of(pose.translation.x), value_of(pose.translation.y),
                     value_of(pose.translation.z)};
    return p;
  }();
  for (int i = ray_begin; i < ray_end; ++i) {
    S sum(0.0);
    const Ray probe = pixel_to_ray<double>(intr, pose_value, draw.px[i], draw.py[i]);
    const auto hit = ray_aabb_intersect(probe, box);
    if (hit) {
      const RayT<S> ray = pixel_to_ray<S>(intr, pose, draw.px[i], draw.py[i]);
      const double d_near = hit->first, d_far = hit->second;
      const double* off = draw.offsets.data() + static_cast<std::size_t>(i) * draw.n_points;
      S log_transmit(0.0);
      bool opaque = false;
      for (int j = 0; j < draw.n_points; ++j) {
        const double t = d_near + off[j] * (d_far - d_near);
        const Vec3T<S> x = ray.origin + ray.direction * S(t);
        const auto q = [&] {
          if constexpr (std::is_same_v<S, Dual>)
            return field.query(*tape, x);
          else
            return field.query(x);
        }();
        const S transmit = opaque ? S(0.0) : exp(log_transmit);
        sum = sum + transmit * detail::safe_entropy(q.occupancy);
        const S one_minus = S(1.0) - q.occupancy;
        if (value_of(one_minus) <= 0.0)
          opaque = true;
        else if (!opaque)
          log_transmit = log_transmit + log(one_minus);
      }
    }
    sums[i] = sum;
  }
}

/// Indices of the n_top largest values; ties keep the lower index. The result
/// is ascending so downstream sums have a fixed order.
inline std::vector<int> top_k_indices(std::span<const double> values, int n_top) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  const int k = std::min<int>(n_top, static_cast<int>(values.size()));
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return values[a] > values[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Top-N_t view information for a fixed sample draw, value-only.
template <class FieldLike>
double view_information_with_draw(const FieldLike& field, const Pose& pose,
                                  const CameraIntrinsics& intr, const NbvConfig& cfg,
                                  int n_top, const ViewInfoDraw& draw,
                                  std::vector<double>* ray_sums_out = nullptr) {
  if (n_top < 1 || n_top > draw.n_rays)
    throw std::invalid_argument("view_information: n_top out of range");
  std::vector<double> sums(draw.n_rays);
  const int n_chunks = std::max(1, std::min(cfg.chunks, draw.n_rays));
  parallel_chunks(n_chunks, cfg.threads, [&](int c) {
    const int lo = static_cast<int>(std::size_t(draw.n_rays) * c / n_chunks);
    const int hi = static_cast<int>(std::size_t(draw.n_rays) * (c + 1) / n_chunks);
    view_ray_sums<FieldLike, double>(field, nullptr, pose, intr, draw, lo, hi, sums.data());
  });
  const std::vector<int> top = top_k_indices(sums, n_top);
  double acc = 0.0;
  for (int i : top) acc += sums[i];
  if (ray_sums_out != nullptr) *ray_sums_out = std::move(sums);
  return acc / (static_cast<double>(n_top) * draw.n_points);
}

/// Top-N_t view information with a fresh sample draw (Monte Carlo estimate).
template <class FieldLike>
double view_information(const FieldLike& field, const Pose& pose,
                        const CameraIntrinsics& intr, const NbvConfig& cfg, int n_top,
                        Rng& rng) {
  const ViewInfoDraw draw =
      draw_view_info_samples(intr, cfg.eval_rays, cfg.points_per_ray, rng);
  return view_information_with_draw(field, pose, intr, cfg, n_top, draw);
}

/// Differentiable top-N_t information on the manifold: evaluates I at
/// (theta, phi) given as any scalar type. Gradients flow through the pose
/// into the world-space sample positions; sample depths stay constant.
template <class FieldLike, class S>
S view_information_on_manifold(const FieldLike& field, Tape* tape, const ViewManifold& manifold,
                               const S& theta, const S& phi, const CameraIntrinsics& intr,
                               const NbvConfig& cfg, int n_top, const ViewInfoDraw& draw) {
  const PoseT<S> pose = spherical_to_pose<S>(manifold.center, manifold.radius, theta, phi);
  std::vector<S> sums(draw.n_rays, S(0.0));
  view_ray_sums<FieldLike, S>(field, tape, pose, intr, draw, 0, draw.n_rays, sums.data());
  std::vector<double> values(draw.n_rays);
  for (int i = 0; i < draw.n_rays; ++i) values[i] = value_of(sums[i]);
  const std::vector<int> top = top_k_indices(values, n_top);
  S acc(0.0);
  for (int i : top) acc = acc + sums[i];
  return acc / S(static_cast<double>(n_top) * draw.n_points);
}

struct NbvResult {
  SphericalView view;
  Pose pose;
  double utility = 0.0;
  double information = 0.0;
  double cost = 0.0;
  std::string method;
  struct TraceRow {
    double theta, phi, information, cost, utility;
  };
  std::vector<TraceRow> trace;
};

/// Coarse uniform search over the manifold used to seed the optimizer near
/// the global utility maximum. Ties go to the lowest sample index.
template <class FieldLike>
SphericalView initialize_by_sampling(const FieldLike& field, const CameraIntrinsics& intr,
                                     const NbvConfig& cfg, int n_top,
                                     const SphericalView& current, Rng& rng,
                                     double* best_utility = nullptr) {
  if (cfg.init_samples < 1)
    throw std::invalid_argument("initialize_by_sampling: need at least one sample");
  SphericalView best = current;
  double best_u = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < cfg.init_samples; ++k) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double phi = rng.uniform(cfg.manifold.elev_min, cfg.manifold.elev_max);
    const SphericalView v = cfg.manifold.clamp_view(theta, phi);
    const Pose pose = spherical_to_pose(v);
    const double info = view_information(field, pose, intr, cfg, n_top, rng);
    const double u = info - movement_cost(v, current, cfg);
    if (u > best_u) {
      best_u = u;
      best = v;
    }
  }
  if (best_utility != nullptr) *best_utility = best_u;
  return best;
}

/// Continuous NBV search: gradient ascent on the utility over (theta, phi),
/// seeded by manifold sampling, with rays redrawn every iteration. Returns
/// the iterate with the best median-smoothed utility.
template <class FieldLike>
NbvResult optimize_nbv(const FieldLike& field, ParamStore& store,
                       const CameraIntrinsics& intr, const SphericalView& current,
                       const NbvConfig& cfg, int observed_views, Rng& rng) {
  const int n_top = schedule_nt(observed_views, cfg.eval_rays, cfg.min_top_ratio);
  NbvResult result;
  result.method = "optimized";

  const SphericalView init = initialize_by_sampling(field, intr, cfg, n_top, current, rng);
  const ParamStore::GroupId pose_group = store.find_or_add("nbv_pose", 2);
  store.zero_grad(pose_group);
  store.reset_moments(pose_group);
  store.set_frozen(pose_group, false);
  store.set_value(pose_group, 0, init.azimuth);
  store.set_value(pose_group, 1, init.elevation);

  Tape tape(&store);
  for (int it = 0; it < cfg.iterations; ++it) {
    const ViewInfoDraw draw =
        draw_view_info_samples(intr, cfg.eval_rays, cfg.points_per_ray, rng);
    tape.clear();
    const Dual theta = store.load(&tape, pose_group, 0);
    const Dual phi = store.load(&tape, pose_group, 1);
    const Dual info = view_information_on_manifold<FieldLike, Dual>(
        field, &tape, cfg.manifold, theta, phi, intr, cfg, n_top, draw);
    const Dual cost = movement_cost<Dual>(theta, phi, current, cfg);
    const Dual utility = info - cost;
    result.trace.push_back({theta.v, phi.v, info.v, cost.v, utility.v});
    // Ascent: accumulate the gradient of -utility, then a standard step.
    if (utility.taped()) tape.backward(utility, store.grad_data(), -1.0);
    store.adam_step(pose_group, cfg.lr);
    const SphericalView projected =
        cfg.manifold.clamp_view(store.value(pose_group, 0), store.value(pose_group, 1));
    store.set_value(pose_group, 0, projected.azimuth);
    store.set_value(pose_group, 1, projected.elevation);
  }

  // Median-of-last-5 smoothing; stochastic redraws make single evaluations
  // noisy.
  int best_it = 0;
  double best_smoothed = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < result.trace.size(); ++k) {
    std::vector<double> window;
    for (std::size_t j = (k >= 4 ? k - 4 : 0); j <= k; ++j)
      window.push_back(result.trace[j].utility);
    std::sort(window.begin(), window.end());
    const double med = window[window.size() / 2];
    if (med > best_smoothed) {
      best_smoothed = med;
      best_it = static_cast<int>(k);
    }
  }
  const auto& row = result.trace[best_it];
  result.view = cfg.manifold.clamp_view(row.theta, row.phi);
  result.pose = spherical_to_pose(result.view);
  result.information = row.information;
  result.cost = row.cost;
  result.utility = best_smoothed;
  return result;
}

inline std::vector<SphericalView> default_candidate_grid(const ViewManifold& manifold,
                                                         int n_azimuth = 12,
                                                         int n_elevation = 4) {
  std::vector<SphericalView> views;
  views.reserve(static_cast<std::size_t>(n_azimuth) * n_elevation);
  for (int e = 0; e < n_elevation; ++e) {
    const double phi = manifold.elev_min + (manifold.elev_max - manifold.elev_min) *
                                               (n_elevation == 1 ? 0.5
                                                                 : static_cast<double>(e) /
                                                                       (n_elevation - 1));
    for (int a = 0; a < n_azimuth; ++a)
      views.push_back(manifold.clamp_view(2.0 * kPi * a / n_azimuth, phi));
  }
  return views;
}

/// Traditional preset-candidate baseline: evaluates the utility of every
/// candidate and picks the argmax (ties to the lowest index).
template <class FieldLike>
NbvResult baseline_candidate_selection(const FieldLike& field, const CameraIntrinsics& intr,
                                       std::span<const SphericalView> candidates,
                                       const SphericalView& current, const NbvConfig& cfg,
                                       int observed_views, Rng& rng) {
  if (candidates.empty())
    throw std::invalid_argument("baseline_candidate_selection: empty candidate set");
  const int n_top = schedule_nt(observed_views, cfg.eval_rays, cfg.min_top_ratio);
  NbvResult result;
  result.method = "candidate";
  double best_u = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const SphericalView& v = candidates[k];
    const double info =
        view_information(field, spherical_to_pose(v), intr, cfg, n_top, rng);
    const double cost = movement_cost(v, current, cfg);
    const double u = info - cost;
    result.trace.push_back({v.azimuth, v.elevation, info, cost, u});
    if (u > best_u) {
      best_u = u;
      result.view = v;
      result.information = info;
      result.cost = cost;
    }
  }
  result.utility = best_u;
  result.pose = spherical_to_pose(result.view);
  return result;
}

/// Uniform random view on the manifold.
inline NbvResult baseline_random(const ViewManifold& manifold, Rng& rng) {
  NbvResult result;
  result.method = "random";
  const double theta = rng.uniform(0.0, 2.0 * kPi);
  const double phi = rng.uniform(manifold.elev_min, manifold.elev_max);
  result.view = manifold.clamp_view(theta, phi);
  result.pose = spherical_to_pose(result.view);
  result.trace.push_back({result.view.azimuth, result.view.elevation, 0.0, 0.0, 0.0});
  return result;
}

}  // namespace aor
