#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "aor/diff.hpp"
#include "aor/geometry.hpp"
#include "aor/rng.hpp"

namespace aor {

struct HashGridConfig {
  int levels = 8;
  int base_resolution = 16;
  int max_resolution = 128;
  int feature_dim = 2;
  int log2_table_size = 15;

  int table_size() const { return 1 << log2_table_size; }
  int encoding_dim() const { return levels * feature_dim; }
};

template <class S>
struct FieldOutputT {
  S occupancy;
  Vec3T<S> color;
};
using FieldOutput = FieldOutputT<double>;

constexpr int kDecoderHidden = 32;
constexpr double kLogitClampMax = 15.0;

/// Implicit object model: multi-resolution hash-grid encoding of positions in
/// the object box, decoded by a one-hidden-layer network into an occupancy
/// probability and an RGB color. Parameters live in a ParamStore so training
/// and NBV planning share one gradient machinery.
class Field {
 public:
  Field(const HashGridConfig& cfg, const Aabb& box, ParamStore& store, std::uint64_t seed)
      : cfg_(cfg), box_(box), store_(&store) {
    if (cfg.levels < 2) throw std::invalid_argument("Field: need at least 2 levels");
    resolutions_.resize(cfg.levels);
    for (int l = 0; l < cfg.levels; ++l) {
      const double t = static_cast<double>(l) / (cfg.levels - 1);
      resolutions_[l] = static_cast<int>(std::lround(
          cfg.base_resolution *
          std::pow(static_cast<double>(cfg.max_resolution) / cfg.base_resolution, t)));
      if (l > 0 && resolutions_[l] <= resolutions_[l - 1])
        throw std::invalid_argument("Field: resolutions must be strictly increasing");
    }

    const int lf = cfg.encoding_dim();
    features_ = store.add_group("hash_features",
                                static_cast<std::size_t>(cfg.levels) * cfg.table_size() *
                                    cfg.feature_dim);
    w1_ = store.add_group("decoder_w1", static_cast<std::size_t>(kDecoderHidden) * lf);
    b1_ = store.add_group("decoder_b1", kDecoderHidden);
    w2_ = store.add_group("decoder_w2", 4 * kDecoderHidden);
    b2_ = store.add_group("decoder_b2", 4);

    Rng rng = Rng::stream(seed, "field_init");
    for (double& f : store.values(features_)) f = rng.uniform(-1e-4, 1e-4);
    const double a1 = 1.0 / std::sqrt(static_cast<double>(lf));
    for (double& w : store.values(w1_)) w = rng.uniform(-a1, a1);
    const double a2 = 1.0 / std::sqrt(static_cast<double>(kDecoderHidden));
    for (double& w : store.values(w2_)) w = rng.uniform(-a2, a2);
    // biases stay zero
  }

  const Aabb& box() const { return box_; }
  const HashGridConfig& config() const { return cfg_; }
  ParamStore& store() const { return *store_; }
  int resolution(int level) const { return resolutions_[level]; }

  void set_frozen(bool frozen) {
    for (auto g : {features_, w1_, b1_, w2_, b2_}) store_->set_frozen(g, frozen);
  }

  ParamStore::GroupId features_group() const { return features_; }
  std::array<ParamStore::GroupId, 5> param_groups() const {
    return {features_, w1_, b1_, w2_, b2_};
  }

  /// Hash-grid encoding of a point inside the box: per level, the 8 cell
  /// corner features are fetched through the spatial hash and trilinearly
  /// interpolated; level outputs are concatenated. Differentiable w.r.t. the
  /// features and w.r.t. the position (piecewise, away from cell faces).
  template <class S>
  void encode(Tape* tape, const Vec3T<S>& x, S* out) const {
    const Vec3 xv{value_of(x.x), value_of(x.y), value_of(x.z)};
    if (!box_.contains(xv)) throw std::domain_error("Field::encode: point outside box");
    constexpr bool kTaped = std::is_same_v<S, Dual>;
    const bool want_param_grad = kTaped && tape != nullptr && !store_->frozen(features_);
    Ref pos_refs[3] = {kConstRef, kConstRef, kConstRef};
    if constexpr (kTaped) {
      pos_refs[0] = x.x.taped() ? x.x.ref : kConstRef;
      pos_refs[1] = x.y.taped() ? x.y.ref : kConstRef;
      pos_refs[2] = x.z.taped() ? x.z.ref : kConstRef;
    }
    const Vec3 ext = box_.extent();
    const double* feats = store_->raw_values() + store_->group(features_).offset;
    const std::uint32_t feat_base = static_cast<std::uint32_t>(store_->group(features_).offset);
    const std::uint32_t mask = static_cast<std::uint32_t>(cfg_.table_size() - 1);

    for (int l = 0; l < cfg_.levels; ++l) {
      const int res = resolutions_[l];
      const double scale[3] = {res / ext.x, res / ext.y, res / ext.z};
      const double u[3] = {(xv.x - box_.p_min.x) * scale[0], (xv.y - box_.p_min.y) * scale[1],
                           (xv.z - box_.p_min.z) * scale[2]};
      std::uint32_t c0[3];
      double f[3];
      for (int a = 0; a < 3; ++a) {
        double fl = std::floor(u[a]);
        if (fl > res - 1) fl = res - 1;  // boundary cell for u == res
        if (fl < 0) fl = 0;
        c0[a] = static_cast<std::uint32_t>(fl);
        f[a] = u[a] - fl;
      }
      // Spatial hash with the usual large-prime XOR scheme.
      constexpr std::uint32_t kP1 = 2654435761u, kP2 = 805459861u;
      const std::uint32_t hx[2] = {c0[0], c0[0] + 1};
      const std::uint32_t hy[2] = {c0[1] * kP1, (c0[1] + 1) * kP1};
      const std::uint32_t hz[2] = {c0[2] * kP2, (c0[2] + 1) * kP2};
      const std::uint32_t level_base =
          static_cast<std::uint32_t>(l) * static_cast<std::uint32_t>(cfg_.table_size());

      std::uint32_t corner_idx[8];
      double corner_w[8];
      const double wf[3][2] = {{1.0 - f[0], f[0]}, {1.0 - f[1], f[1]}, {1.0 - f[2], f[2]}};
      int c = 0;
      for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx, ++c) {
            corner_idx[c] = ((hx[dx] ^ hy[dy] ^ hz[dz]) & mask) + level_base;
            corner_w[c] = wf[0][dx] * wf[1][dy] * wf[2][dz];
          }

      for (int ch = 0; ch < cfg_.feature_dim; ++ch) {
        double val = 0.0;
        for (c = 0; c < 8; ++c)
          val += corner_w[c] * feats[corner_idx[c] * cfg_.feature_dim + ch];
        const int out_i = l * cfg_.feature_dim + ch;
        if constexpr (kTaped) {
          if (tape != nullptr) {
            const Ref node = tape->begin_node(val);
            if (want_param_grad)
              for (c = 0; c < 8; ++c)
                tape->add_edge((feat_base + corner_idx[c] * cfg_.feature_dim + ch) | kParamBit,
                               corner_w[c]);
            if (pos_refs[0] != kConstRef || pos_refs[1] != kConstRef ||
                pos_refs[2] != kConstRef) {
              // d val / d x via the fractional coordinates; floor() is locally
              // constant so the chain is linear within a cell.
              double df[3] = {0.0, 0.0, 0.0};
              c = 0;
              for (int dz = 0; dz < 2; ++dz)
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx, ++c) {
                    const double fv = feats[corner_idx[c] * cfg_.feature_dim + ch];
                    df[0] += (dx ? 1.0 : -1.0) * wf[1][dy] * wf[2][dz] * fv;
                    df[1] += (dy ? 1.0 : -1.0) * wf[0][dx] * wf[2][dz] * fv;
                    df[2] += (dz ? 1.0 : -1.0) * wf[0][dx] * wf[1][dy] * fv;
                  }
              for (int a = 0; a < 3; ++a)
                if (pos_refs[a] != kConstRef) tape->add_edge(pos_refs[a], df[a] * scale[a]);
            }
            out[out_i] = Dual(val, tape, node);
          } else {
            out[out_i] = Dual(val);
          }
        } else {
          out[out_i] = val;
        }
      }
    }
  }

  /// Occupancy and color at a point. Outside the box the occupancy is exactly
  /// zero with no gradient (the object is assumed inside the box).
  template <class S>
  FieldOutputT<S> query_impl(Tape* tape, const Vec3T<S>& x) const {
    const Vec3 xv{value_of(x.x), value_of(x.y), value_of(x.z)};
    if (!std::isfinite(xv.x) || !std::isfinite(xv.y) || !std::isfinite(xv.z))
      throw std::domain_error("Field::query: non-finite position");
    if (!box_.contains(xv)) return {S(0.0), {S(0.0), S(0.0), S(0.0)}};

    constexpr int kMaxEnc = 64;
    S enc[kMaxEnc];
    const int lf = cfg_.encoding_dim();
    encode(tape, x, enc);

    S hidden[kDecoderHidden];
    S head[4];
    if constexpr (std::is_same_v<S, Dual>) {
      if (tape != nullptr) {
        double in_vals[kMaxEnc];
        Ref in_refs[kMaxEnc];
        for (int i = 0; i < lf; ++i) {
          in_vals[i] = enc[i].v;
          in_refs[i] = enc[i].taped() ? enc[i].ref : kConstRef;
        }
        double z_vals[kDecoderHidden];
        const Ref z0 = tape->affine_layer(w1_, b1_, lf, kDecoderHidden, in_vals, in_refs, z_vals);
        double a_vals[kDecoderHidden];
        Ref a_refs[kDecoderHidden];
        for (int k = 0; k < kDecoderHidden; ++k) {
          const Dual z(z_vals[k], tape, z0 + k);
          hidden[k] = relu(z);
          a_vals[k] = hidden[k].v;
          a_refs[k] = hidden[k].ref;
        }
        double y_vals[4];
        const Ref y0 = tape->affine_layer(w2_, b2_, kDecoderHidden, 4, a_vals, a_refs, y_vals);
        for (int k = 0; k < 4; ++k) head[k] = Dual(y_vals[k], tape, y0 + k);
      } else {
        double enc_v[kMaxEnc];
        for (int i = 0; i < lf; ++i) enc_v[i] = enc[i].v;
        double z[kDecoderHidden], y[4];
        affine_layer_values(*store_, w1_, b1_, lf, kDecoderHidden, enc_v, z);
        for (int k = 0; k < kDecoderHidden; ++k) z[k] = relu(z[k]);
        affine_layer_values(*store_, w2_, b2_, kDecoderHidden, 4, z, y);
        for (int k = 0; k < 4; ++k) head[k] = Dual(y[k]);
      }
    } else {
      double z[kDecoderHidden];
      affine_layer_values(*store_, w1_, b1_, lf, kDecoderHidden, enc, z);
      for (int k = 0; k < kDecoderHidden; ++k) z[k] = relu(z[k]);
      affine_layer_values(*store_, w2_, b2_, kDecoderHidden, 4, z, head);
    }

    FieldOutputT<S> out;
    out.occupancy = sigmoid(clamp(head[0], -kLogitClampMax, kLogitClampMax));
    out.color = {sigmoid(head[1]), sigmoid(head[2]), sigmoid(head[3])};
    return out;
  }

  FieldOutput query(const Vec3& x) const { return query_impl<double>(nullptr, x); }
  FieldOutputT<Dual> query(Tape& tape, const Vec3T<Dual>& x) const {
    return query_impl<Dual>(&tape, x);
  }

  // -------------------------------------------------------------------------
  // Checkpoint: little-endian binary blob, bit-exact round trip.

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Field::save: cannot open " + path);
    const char magic[4] = {'A', 'O', 'R', 'F'};
    f.write(magic, 4);
    const std::int32_t header[6] = {1,  // version
                                    cfg_.levels, cfg_.base_resolution, cfg_.max_resolution,
                                    cfg_.feature_dim, cfg_.log2_table_size};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    const double boxv[6] = {box_.p_min.x, box_.p_min.y, box_.p_min.z,
                            box_.p_max.x, box_.p_max.y, box_.p_max.z};
    f.write(reinterpret_cast<const char*>(boxv), sizeof(boxv));
    for (auto g : param_groups()) {
      const auto vals = store_->values(g);
      const std::uint64_t n = vals.size();
      f.write(reinterpret_cast<const char*>(&n), sizeof(n));
      f.write(reinterpret_cast<const char*>(vals.data()), static_cast<std::streamsize>(n * 8));
    }
    if (!f) throw std::runtime_error("Field::save: write failed for " + path);
  }

  /// Loads a checkpoint into freshly registered groups of `store`.
  static Field load(const std::string& path, ParamStore& store) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("Field::load: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "AORF", 4) != 0)
      throw std::runtime_error("Field::load: bad magic in " + path);
    std::int32_t header[6];
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (header[0] != 1) throw std::runtime_error("Field::load: unsupported version");
    HashGridConfig cfg;
    cfg.levels = header[1];
    cfg.base_resolution = header[2];
    cfg.max_resolution = header[3];
    cfg.feature_dim = header[4];
    cfg.log2_table_size = header[5];
    double boxv[6];
    f.read(reinterpret_cast<char*>(boxv), sizeof(boxv));
    const Aabb box{{boxv[0], boxv[1], boxv[2]}, {boxv[3], boxv[4], boxv[5]}};
    Field field(cfg, box, store, /*seed=*/0);
    for (auto g : field.param_groups()) {
      std::uint64_t n = 0;
      f.read(reinterpret_cast<char*>(&n), sizeof(n));
      auto vals = store.values(g);
      if (n != vals.size()) throw std::runtime_error("Field::load: size mismatch");
      f.read(reinterpret_cast<char*>(vals.data()), static_cast<std::streamsize>(n * 8));
    }
    if (!f) throw std::runtime_error("Field::load: truncated file " + path);
    return field;
  }

 private:
  HashGridConfig cfg_;
  Aabb box_;
  ParamStore* store_;
  std::vector<int> resolutions_;
  ParamStore::GroupId features_, w1_, b1_, w2_, b2_;
};

/// Test double with a uniform occupancy everywhere inside the box and no
/// gradients; lets metric identities be checked in closed form.
class ConstantField {
 public:
  ConstantField(double occupancy, const Aabb& box = Aabb{})
      : occupancy_(occupancy), box_(box) {
    if (!(occupancy > 0.0 && occupancy < 1.0))
      throw std::invalid_argument("ConstantField: occupancy must be in (0,1)");
  }

  const Aabb& box() const { return box_; }

  template <class S>
  FieldOutputT<S> query_impl(Tape*, const Vec3T<S>& x) const {
    const Vec3 xv{value_of(x.x), value_of(x.y), value_of(x.z)};
    if (!box_.contains(xv)) return {S(0.0), {S(0.0), S(0.0), S(0.0)}};
    return {S(occupancy_), {S(0.5), S(0.5), S(0.5)}};
  }
  FieldOutput query(const Vec3& x) const { return query_impl<double>(nullptr, x); }
  FieldOutputT<Dual> query(Tape& tape, const Vec3T<Dual>& x) const {
    return query_impl<Dual>(&tape, x);
  }

 private:
  double occupancy_;
  Aabb box_;
};

}  // namespace aor
