#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "aor/diff.hpp"
#include "aor/field.hpp"
#include "aor/geometry.hpp"
#include "aor/parallel.hpp"
#include "aor/rng.hpp"
#include "aor/sensor.hpp"

namespace aor {

/// The five ray types. 1-2 carry no usable signal, 3-4 prove traversed free
/// space, 5 carries a depth measurement inside the box.
enum class RayClass : int {
  NoIntersection = 0,
  NoDepthMeasurement = 1,
  DepthBeyondRange = 2,
  DepthBeyondBox = 3,
  Valid = 4,
};
constexpr int kNumRayClasses = 5;

inline bool is_free_class(RayClass c) {
  return c == RayClass::DepthBeyondRange || c == RayClass::DepthBeyondBox;
}

/// Classifies a ray from its box intersection and measured depth. The checks
/// run in the listed order; (d_near, d_far) is filled whenever the ray
/// intersects the box.
inline RayClass classify_ray(const Ray& ray, std::optional<double> measured_depth,
                             const Aabb& box, double d_max, double* d_near = nullptr,
                             double* d_far = nullptr) {
  const auto hit = ray_aabb_intersect(ray, box);
  if (!hit) return RayClass::NoIntersection;
  if (d_near != nullptr) *d_near = hit->first;
  if (d_far != nullptr) *d_far = hit->second;
  if (!measured_depth.has_value()) return RayClass::NoDepthMeasurement;
  if (*measured_depth > d_max) return RayClass::DepthBeyondRange;
  if (*measured_depth > hit->second) return RayClass::DepthBeyondBox;
  return RayClass::Valid;
}

/// Stratified samples: one uniform draw per equal sub-interval, ascending.
inline std::vector<double> sample_free_points(double d_near, double d_far, int count,
                                              Rng& rng) {
  if (!(d_near < d_far)) throw std::invalid_argument("sample_free_points: empty interval");
  std::vector<double> ts(count);
  const double h = (d_far - d_near) / count;
  for (int i = 0; i < count; ++i) ts[i] = d_near + (i + rng.uniform()) * h;
  return ts;
}

/// Depth-guided samples: normal around the measurement, clamped to the box
/// segment, ascending.
inline std::vector<double> sample_surface_points(double measured_depth, double sigma,
                                                 int count, double d_near, double d_far,
                                                 Rng& rng) {
  std::vector<double> ts(count);
  for (int i = 0; i < count; ++i)
    ts[i] = std::clamp(rng.normal(measured_depth, sigma), d_near, d_far);
  std::sort(ts.begin(), ts.end());
  return ts;
}

template <class S>
struct RenderResult {
  Vec3T<S> color;
  S depth;
  std::vector<S> weights;
};

/// Volume-renders a ray through the field at the given ascending depths:
/// w_i = o_i * T_i with T_i the probability the ray reaches sample i. The
/// occlusion product is accumulated in log space.
template <class F, class S>
RenderResult<S> render_ray(const F& field, Tape* tape, const RayT<S>& ray,
                           std::span<const double> params) {
  using std::exp;
  using std::log;
  RenderResult<S> out;
  out.color = {S(0.0), S(0.0), S(0.0)};
  out.depth = S(0.0);
  out.weights.reserve(params.size());
  S log_transmit(0.0);
  bool opaque = false;
  for (double t : params) {
    const Vec3T<S> x = ray.origin + ray.direction * S(t);
    const auto q = [&] {
      if constexpr (std::is_same_v<S, Dual>)
        return field.query(*tape, x);
      else
        return field.query(x);
    }();
    const S transmit = opaque ? S(0.0) : exp(log_transmit);
    const S w = q.occupancy * transmit;
    out.weights.push_back(w);
    out.color = out.color + q.color * w;
    out.depth = out.depth + w * S(t);
    const S one_minus = S(1.0) - q.occupancy;
    if (value_of(one_minus) <= 0.0)
      opaque = true;  // fully occupied sample: nothing passes
    else if (!opaque)
      log_transmit = log_transmit + log(one_minus);
  }
  return out;
}

struct LossReport {
  double color = 0.0;
  double depth = 0.0;
  double free = 0.0;
  double total = 0.0;
  int class_counts[kNumRayClasses] = {0, 0, 0, 0, 0};

  int n_valid() const { return class_counts[static_cast<int>(RayClass::Valid)]; }
  int n_free() const {
    return class_counts[static_cast<int>(RayClass::DepthBeyondRange)] +
           class_counts[static_cast<int>(RayClass::DepthBeyondBox)];
  }
};

struct TrainConfig {
  int rays_per_iter = 5000;   // N_r
  int surface_samples = 16;   // N_s
  int free_samples = 16;      // N_f
  double sigma_depth = 0.005; // depth-guided sampling std, meters
  double lambda_depth = 2.0;  // weight of the depth loss
  double lambda_free = 0.5;   // weight of the free-space loss
  double field_lr = 2e-3;
  double pose_lr = 3e-3;
  int iterations = 100;
  bool pose_refinement = true;
  bool free_supervision = true;
  int chunks = 8;
  int threads = 1;
};

/// One classified ray prepared for loss evaluation.
struct RaySample {
  RayClass cls = RayClass::NoIntersection;
  int view = 0;
  Vec3 dir_cam{};  // camera-frame unit direction (pose applied at eval time)
  Ray ray{};       // world ray at the pose estimate used for sampling
  double d_near = 0.0, d_far = 0.0;
  Vec3 gt_color{};
  double gt_depth = kNoDepth;
  std::vector<double> surface_ts;
  std::vector<double> free_ts;
};

namespace detail {

template <class S>
struct LossAccum {
  S color{0.0};
  S depth{0.0};
  S free{0.0};
  int n_valid = 0;
  int n_free_points = 0;
};

/// Accumulates the unnormalized loss sums of a span of rays. Free points get
/// the binary cross-entropy toward empty space; valid rays get rendered color
/// and depth terms plus free supervision on their leading segment.
template <class F, class S>
void accumulate_losses(const F& field, Tape* tape, std::span<const RaySample> rays,
                       std::span<const PoseT<S>> poses, LossAccum<S>& acc) {
  using std::fabs;
  using std::log;
  using std::max;
  for (const RaySample& r : rays) {
    const PoseT<S>& pose = poses[r.view];
    RayT<S> ray{pose.translation,
                pose.rotate(Vec3T<S>{S(r.dir_cam.x), S(r.dir_cam.y), S(r.dir_cam.z)})};
    for (double t : r.free_ts) {
      const Vec3T<S> x = ray.origin + ray.direction * S(t);
      const auto q = [&] {
        if constexpr (std::is_same_v<S, Dual>)
          return field.query(*tape, x);
        else
          return field.query(x);
      }();
      const S one_minus = S(1.0) - q.occupancy;
      acc.free = acc.free - log(max(one_minus, S(1e-300)));
      acc.n_free_points += 1;
    }
    if (r.cls == RayClass::Valid) {
      const RenderResult<S> rr = render_ray(field, tape, ray, r.surface_ts);
      const Vec3T<S> dc = rr.color - Vec3T<S>{S(r.gt_color.x), S(r.gt_color.y), S(r.gt_color.z)};
      acc.color = acc.color + dc.dot(dc);
      acc.depth = acc.depth + fabs(rr.depth - S(r.gt_depth));
      acc.n_valid += 1;
    }
  }
}

}  // namespace detail

/// Value-only loss evaluation of a prepared batch (free and valid rays only).
/// Rays are evaluated against their own stored world geometry.
template <class F>
LossReport compute_losses(const F& field, std::span<const RaySample> batch,
                          const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("compute_losses: empty batch");
  LossReport rep;
  std::vector<RaySample> local(batch.begin(), batch.end());
  std::vector<Pose> poses(local.size());
  for (std::size_t i = 0; i < local.size(); ++i) {
    auto& r = local[i];
    if (r.cls != RayClass::Valid && !is_free_class(r.cls))
      throw std::invalid_argument("compute_losses: batch contains invalid rays");
    rep.class_counts[static_cast<int>(r.cls)] += 1;
    r.view = static_cast<int>(i);
    r.dir_cam = r.ray.direction;  // identity rotation below
    poses[i] = Pose{Mat3::identity(), r.ray.origin};
  }
  detail::LossAccum<double> acc;
  detail::accumulate_losses(field, nullptr, std::span<const RaySample>(local),
                            std::span<const Pose>(poses), acc);
  rep.color = acc.n_valid > 0 ? acc.color / acc.n_valid : 0.0;
  rep.depth = acc.n_valid > 0 ? acc.depth / acc.n_valid : 0.0;
  rep.free = acc.n_free_points > 0 ? acc.free / acc.n_free_points : 0.0;
  rep.total = rep.color + cfg.lambda_depth * rep.depth + cfg.lambda_free * rep.free;
  return rep;
}

/// A view participating in reconstruction. `est_pose` is what the
/// reconstructor believes (noisy under the pose-noise ablation, refined when
/// pose refinement is on); `true_pose` is the simulator ground truth used
/// only for evaluation.
struct TrainView {
  ViewCapture capture;
  Pose est_pose;
  Pose true_pose;
  SphericalView spherical;
  ParamStore::GroupId twist = static_cast<ParamStore::GroupId>(-1);
};

inline void ensure_twist_group(ParamStore& store, TrainView& view, std::size_t index) {
  if (view.twist != static_cast<ParamStore::GroupId>(-1)) return;
  view.twist = store.add_group("twist_" + std::to_string(index), 6);
  if (index == 0) store.set_frozen(view.twist, true);  // gauge view
}

/// Draws, classifies and samples one iteration's ray batch against the given
/// per-view pose values (pose estimates with the live twist folded in). All
/// randomness comes from `rng` in a fixed order so chunked evaluation stays
/// exact.
inline std::vector<RaySample> draw_ray_batch(std::span<const TrainView> views,
                                             std::span<const Pose> eval_poses,
                                             const Aabb& box, const TrainConfig& cfg,
                                             Rng& rng, LossReport& counts) {
  std::vector<RaySample> batch;
  batch.reserve(cfg.rays_per_iter);
  for (int i = 0; i < cfg.rays_per_iter; ++i) {
    const std::size_t v = views.size() > 1 ? rng.uniform_index(views.size()) : 0;
    const TrainView& view = views[v];
    const auto& intr = view.capture.intr;
    const int px = static_cast<int>(rng.uniform_index(intr.width));
    const int py = static_cast<int>(rng.uniform_index(intr.height));
    RaySample s;
    s.view = static_cast<int>(v);
    const Ray cam_ray = pixel_center_ray(intr, Pose{}, px, py);
    s.dir_cam = cam_ray.direction;
    s.ray = Ray{eval_poses[v].translation, eval_poses[v].rotate(s.dir_cam)};
    const double measured = view.capture.depth.at(px, py);
    std::optional<double> depth =
        measured == kNoDepth ? std::nullopt : std::optional<double>(measured);
    s.cls = classify_ray(s.ray, depth, box, view.capture.d_max, &s.d_near, &s.d_far);
    counts.class_counts[static_cast<int>(s.cls)] += 1;
    if (s.cls == RayClass::NoIntersection || s.cls == RayClass::NoDepthMeasurement) continue;
    if (is_free_class(s.cls)) {
      if (!cfg.free_supervision) continue;
      if (s.d_far - s.d_near > 1e-9)
        s.free_ts = sample_free_points(s.d_near, s.d_far, cfg.free_samples, rng);
      if (s.free_ts.empty()) continue;
    } else {
      s.gt_depth = measured;
      s.gt_color = view.capture.color.at(px, py);
      const double d = std::clamp(measured, s.d_near, s.d_far);
      s.surface_ts = sample_surface_points(d, cfg.sigma_depth, cfg.surface_samples,
                                           s.d_near, s.d_far, rng);
      // Free supervision on the segment in front of the surface region keeps
      // pre-surface occupancy from drifting where depth-guided samples never
      // land.
      const double free_end = d - 3.0 * cfg.sigma_depth;
      if (cfg.free_supervision && free_end - s.d_near > 1e-6)
        s.free_ts = sample_free_points(s.d_near, free_end, cfg.free_samples, rng);
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

/// One optimization iteration over a drawn batch: chunked taped evaluation,
/// ordered gradient reduction, one adaptive-moment step on the field and (when
/// enabled) on every non-gauge view twist.
inline LossReport train_iteration(Field& field, std::span<TrainView> views,
                                  const TrainConfig& cfg, Rng& rng) {
  ParamStore& store = field.store();
  LossReport rep;
  // Pose values as of this iteration (stored estimate plus the live twist).
  std::vector<Pose> eval_poses(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (cfg.pose_refinement) {
      double twist[6];
      auto vals = store.values(views[v].twist);
      for (int k = 0; k < 6; ++k) twist[k] = vals[k];
      eval_poses[v] = se3_exp<double>(twist) * views[v].est_pose;
    } else {
      eval_poses[v] = views[v].est_pose;
    }
  }
  const std::vector<RaySample> batch =
      draw_ray_batch(views, eval_poses, field.box(), cfg, rng, rep);
  if (batch.empty()) return rep;

  // Global normalizers, fixed before evaluation.
  int n_valid = 0, n_free_points = 0;
  for (const auto& r : batch) {
    if (r.cls == RayClass::Valid) n_valid += 1;
    n_free_points += static_cast<int>(r.free_ts.size());
  }

  const int n_chunks = std::max(1, std::min<int>(cfg.chunks, static_cast<int>(batch.size())));
  const bool serial = cfg.threads <= 1;
  std::vector<Tape> tapes;
  tapes.reserve(n_chunks);
  for (int c = 0; c < n_chunks; ++c) tapes.emplace_back(&store);
  std::vector<std::vector<double>> buffers;
  if (!serial) buffers.assign(n_chunks, std::vector<double>());

  std::vector<detail::LossAccum<Dual>> accs(n_chunks);
  parallel_chunks(n_chunks, cfg.threads, [&](int c) {
    Tape& tape = tapes[c];
    tape.clear();
    // Per-view differentiable poses; constants when refinement is off.
    std::vector<PoseT<Dual>> poses(views.size());
    for (std::size_t v = 0; v < views.size(); ++v) {
      if (cfg.pose_refinement) {
        Dual twist[6];
        for (int k = 0; k < 6; ++k) twist[k] = store.load(&tape, views[v].twist, k);
        poses[v] = apply_twist<Dual>(views[v].est_pose, twist);
      } else {
        for (int i = 0; i < 9; ++i)
          poses[v].rotation.m[i] = Dual(views[v].est_pose.rotation.m[i]);
        poses[v].translation = {Dual(views[v].est_pose.translation.x),
                                Dual(views[v].est_pose.translation.y),
                                Dual(views[v].est_pose.translation.z)};
      }
    }
    const std::size_t lo = batch.size() * c / n_chunks;
    const std::size_t hi = batch.size() * (c + 1) / n_chunks;
    detail::LossAccum<Dual>& acc = accs[c];
    accumulate_losses(field, &tape, std::span<const RaySample>(batch.data() + lo, hi - lo),
                      std::span<const PoseT<Dual>>(poses), acc);
    Dual objective(0.0);
    if (n_valid > 0)
      objective = (acc.color + Dual(cfg.lambda_depth) * acc.depth) / Dual(double(n_valid));
    if (n_free_points > 0)
      objective = objective + Dual(cfg.lambda_free) * acc.free / Dual(double(n_free_points));
    if (objective.taped()) {
      if (serial) {
        tape.backward(objective, store.grad_data());
      } else {
        buffers[c].assign(store.total(), 0.0);
        tape.backward(objective, buffers[c].data());
      }
    }
  });
  if (!serial) {
    double* grad = store.grad_data();
    for (int c = 0; c < n_chunks; ++c)
      for (std::size_t i = 0; i < buffers[c].size(); ++i) grad[i] += buffers[c][i];
  }

  double color_sum = 0.0, depth_sum = 0.0, free_sum = 0.0;
  for (const auto& acc : accs) {
    color_sum += acc.color.v;
    depth_sum += acc.depth.v;
    free_sum += acc.free.v;
  }
  rep.color = n_valid > 0 ? color_sum / n_valid : 0.0;
  rep.depth = n_valid > 0 ? depth_sum / n_valid : 0.0;
  rep.free = n_free_points > 0 ? free_sum / n_free_points : 0.0;
  rep.total = rep.color + cfg.lambda_depth * rep.depth + cfg.lambda_free * rep.free;

  for (auto g : field.param_groups()) store.adam_step(g, cfg.field_lr);
  if (cfg.pose_refinement)
    for (std::size_t v = 1; v < views.size(); ++v) store.adam_step(views[v].twist, cfg.pose_lr);
  return rep;
}

/// Folds optimized twists into the stored pose estimates and resets the twist
/// parameters (and their optimizer state) for the next round.
inline void fold_twists(ParamStore& store, std::span<TrainView> views) {
  for (auto& view : views) {
    double twist[6];
    auto vals = store.values(view.twist);
    bool nonzero = false;
    for (int k = 0; k < 6; ++k) {
      twist[k] = vals[k];
      nonzero = nonzero || twist[k] != 0.0;
    }
    if (nonzero) {
      const Pose delta = se3_exp<double>(twist);
      view.est_pose = delta * view.est_pose;
      for (int k = 0; k < 6; ++k) vals[k] = 0.0;
    }
    store.zero_grad(view.twist);
    store.reset_moments(view.twist);
  }
}

/// Runs one reconstruction round (a fixed number of iterations regardless of
/// the view count) and folds pose increments at the end.
inline std::vector<LossReport> train_round(Field& field, std::span<TrainView> views,
                                           const TrainConfig& cfg, std::uint64_t seed,
                                           int round_index) {
  if (views.empty()) throw std::invalid_argument("train_round: need at least one view");
  ParamStore& store = field.store();
  for (std::size_t v = 0; v < views.size(); ++v) ensure_twist_group(store, views[v], v);
  std::vector<LossReport> reports;
  reports.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    Rng rng = Rng::stream(seed, "train", static_cast<std::uint64_t>(round_index),
                          static_cast<std::uint64_t>(it));
    reports.push_back(train_iteration(field, views, cfg, rng));
  }
  if (cfg.pose_refinement) fold_twists(store, views);
  return reports;
}

}  // namespace aor
