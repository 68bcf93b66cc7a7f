#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aor/geometry.hpp"

namespace aor {

class Tape;
class ParamStore;

/// Reference to a recorded quantity: a tape node, a parameter slot, or a
/// constant. Parameters are tagged with the high bit so tape edges can point
/// at either without indirection.
using Ref = std::uint32_t;
constexpr Ref kConstRef = 0xFFFFFFFFu;
constexpr Ref kParamBit = 0x80000000u;
inline bool is_param_ref(Ref r) { return (r & kParamBit) != 0 && r != kConstRef; }

/// Scalar that optionally records onto a tape. Arithmetic on constants
/// (tape == nullptr) is plain double arithmetic, bit-for-bit.
struct Dual {
  double v = 0.0;
  Tape* tape = nullptr;
  Ref ref = kConstRef;

  Dual() = default;
  Dual(double value) : v(value) {}  // implicit: constants mix freely
  Dual(double value, Tape* t, Ref r) : v(value), tape(t), ref(r) {}

  bool taped() const { return tape != nullptr && ref != kConstRef; }
};

inline double value_of(const Dual& d) { return d.v; }

/// Named slices of one flat parameter vector, with per-slice gradient
/// accumulators and adaptive-moment state.
class ParamStore {
 public:
  struct Group {
    std::string name;
    std::size_t offset = 0;
    std::size_t size = 0;
    std::int64_t step = 0;
    bool frozen = false;
  };

  using GroupId = std::size_t;

  GroupId add_group(std::string_view name, std::size_t size) {
    if ((total() + size) >= static_cast<std::size_t>(kParamBit) - 1)
      throw std::length_error("ParamStore: parameter space exhausted");
    Group g;
    g.name = std::string(name);
    g.offset = values_.size();
    g.size = size;
    groups_.push_back(g);
    values_.resize(values_.size() + size, 0.0);
    grad_.resize(values_.size(), 0.0);
    m_.resize(values_.size(), 0.0);
    v_.resize(values_.size(), 0.0);
    return groups_.size() - 1;
  }

  GroupId find(std::string_view name) const {
    for (std::size_t i = 0; i < groups_.size(); ++i)
      if (groups_[i].name == name) return i;
    throw std::out_of_range("ParamStore: unknown group " + std::string(name));
  }

  GroupId find_or_add(std::string_view name, std::size_t size) {
    for (std::size_t i = 0; i < groups_.size(); ++i)
      if (groups_[i].name == name) {
        if (groups_[i].size != size)
          throw std::invalid_argument("ParamStore: group size mismatch for " +
                                      std::string(name));
        return i;
      }
    return add_group(name, size);
  }

  const Group& group(GroupId id) const { return groups_.at(id); }
  std::size_t num_groups() const { return groups_.size(); }
  std::size_t total() const { return values_.size(); }

  double value(GroupId id, std::size_t i) const { return values_[groups_[id].offset + i]; }
  void set_value(GroupId id, std::size_t i, double x) { values_[groups_[id].offset + i] = x; }
  std::span<double> values(GroupId id) {
    auto& g = groups_[id];
    return {values_.data() + g.offset, g.size};
  }
  std::span<const double> values(GroupId id) const {
    auto& g = groups_[id];
    return {values_.data() + g.offset, g.size};
  }
  std::span<double> grad(GroupId id) {
    auto& g = groups_[id];
    return {grad_.data() + g.offset, g.size};
  }

  double* grad_data() { return grad_.data(); }
  const double* raw_values() const { return values_.data(); }

  Ref param_ref(GroupId id, std::size_t i) const {
    return static_cast<Ref>(groups_[id].offset + i) | kParamBit;
  }

  void set_frozen(GroupId id, bool frozen) { groups_[id].frozen = frozen; }
  bool frozen(GroupId id) const { return groups_[id].frozen; }

  /// Loads a parameter for recording. Frozen groups load as constants so no
  /// gradient flows into them and the tape stays smaller.
  Dual load(Tape* tape, GroupId id, std::size_t i) const;

  void zero_grad(GroupId id) {
    for (double& g : grad(id)) g = 0.0;
  }
  void reset_moments(GroupId id) {
    auto& g = groups_[id];
    for (std::size_t i = g.offset; i < g.offset + g.size; ++i) m_[i] = v_[i] = 0.0;
    g.step = 0;
  }

  /// Bias-corrected adaptive-moment update; zeroes the gradient accumulator.
  void adam_step(GroupId id, double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    Group& g = groups_[id];
    g.step += 1;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(g.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(g.step));
    for (std::size_t i = g.offset; i < g.offset + g.size; ++i) {
      const double grad = grad_[i];
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * grad;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * grad * grad;
      const double m_hat = m_[i] / c1;
      const double v_hat = v_[i] / c2;
      values_[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      grad_[i] = 0.0;
    }
  }
  void adam_step(std::string_view name, double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8) {
    adam_step(find(name), lr, beta1, beta2, eps);
  }

  std::span<const double> moments_m(GroupId id) const {
    auto& g = groups_[id];
    return {m_.data() + g.offset, g.size};
  }
  std::span<const double> moments_v(GroupId id) const {
    auto& g = groups_[id];
    return {v_.data() + g.offset, g.size};
  }
  std::int64_t step_count(GroupId id) const { return groups_[id].step; }
  void restore_moments(GroupId id, std::span<const double> m, std::span<const double> v,
                       std::int64_t step) {
    auto& g = groups_[id];
    assert(m.size() == g.size && v.size() == g.size);
    for (std::size_t i = 0; i < g.size; ++i) {
      m_[g.offset + i] = m[i];
      v_[g.offset + i] = v[i];
    }
    g.step = step;
  }

 private:
  std::vector<Group> groups_;
  std::vector<double> values_, grad_, m_, v_;
};

/// Reverse-mode tape. Nodes are recorded in evaluation order; most carry a
/// short list of (reference, local partial) edges, and fused affine-layer
/// nodes carry a payload processed by a dedicated backward rule.
class Tape {
 public:
  enum Kind : std::uint32_t { kGeneric = 0, kAffinePre = 1, kAffineHead = 2 };

  explicit Tape(ParamStore* store = nullptr) : store_(store) {}

  ParamStore* store() const { return store_; }

  void clear() {
    values_.clear();
    heads_.clear();
    edge_refs_.clear();
    edge_partials_.clear();
    payload_u32_.clear();
    payload_f64_.clear();
  }

  std::size_t num_nodes() const { return values_.size(); }
  double value(Ref r) const { return values_[r]; }

  Ref new_leaf(double v) { return begin_node(v); }

  Ref begin_node(double v, Kind kind = kGeneric) {
    values_.push_back(v);
    heads_.push_back({static_cast<std::uint32_t>(edge_refs_.size()), 0, kind});
    return static_cast<Ref>(values_.size() - 1);
  }

  void add_edge(Ref target, double partial) {
    if (target == kConstRef) return;
    edge_refs_.push_back(target);
    edge_partials_.push_back(partial);
    heads_.back().n += 1;
  }

  /// Fused affine layer y = W x + b recording `out_dim` output nodes.
  /// `x_refs` may contain kConstRef entries (constant inputs). Returns the
  /// ref of output 0; outputs are contiguous.
  Ref affine_layer(ParamStore::GroupId w_group, ParamStore::GroupId b_group, int in_dim,
                   int out_dim, const double* x_values, const Ref* x_refs,
                   double* out_values) {
    assert(store_ != nullptr);
    const auto& wg = store_->group(w_group);
    const auto& bg = store_->group(b_group);
    assert(wg.size == static_cast<std::size_t>(in_dim * out_dim));
    assert(bg.size == static_cast<std::size_t>(out_dim));
    const double* w = store_->raw_values() + wg.offset;
    const double* b = store_->raw_values() + bg.offset;

    const std::uint32_t u32_off = static_cast<std::uint32_t>(payload_u32_.size());
    const std::uint32_t f64_off = static_cast<std::uint32_t>(payload_f64_.size());
    payload_u32_.push_back(static_cast<std::uint32_t>(wg.offset));
    payload_u32_.push_back(static_cast<std::uint32_t>(bg.offset));
    payload_u32_.push_back(static_cast<std::uint32_t>(in_dim));
    payload_u32_.push_back(static_cast<std::uint32_t>(out_dim));
    payload_u32_.push_back((wg.frozen ? 1u : 0u) | (bg.frozen ? 2u : 0u));
    for (int j = 0; j < in_dim; ++j) payload_u32_.push_back(x_refs[j]);
    for (int j = 0; j < in_dim; ++j) payload_f64_.push_back(x_values[j]);

    Ref first = kConstRef;
    for (int k = 0; k < out_dim; ++k) {
      double acc = b[k];
      const double* wk = w + static_cast<std::size_t>(k) * in_dim;
      for (int j = 0; j < in_dim; ++j) acc += wk[j] * x_values[j];
      out_values[k] = acc;
      const Kind kind = (k == out_dim - 1) ? kAffineHead : kAffinePre;
      const Ref r = begin_node(acc, kind);
      if (k == 0) first = r;
      if (kind == kAffineHead) {
        heads_.back().a = u32_off;
        heads_.back().n = f64_off;
      }
    }
    return first;
  }

  /// Reverse sweep from the given seeds. Parameter gradients are accumulated
  /// into `param_sink` (usually the store's gradient accumulator); node
  /// adjoints remain readable via adjoint() until the next clear/backward.
  void backward(std::span<const std::pair<Ref, double>> seeds, double* param_sink) {
    adjoint_.assign(values_.size(), 0.0);
    for (const auto& [ref, seed] : seeds) {
      assert(!is_param_ref(ref) && ref != kConstRef);
      adjoint_[ref] += seed;
    }
    for (std::size_t i = values_.size(); i-- > 0;) {
      const NodeHead& h = heads_[i];
      if (h.kind == kAffinePre) continue;
      if (h.kind == kAffineHead) {
        backward_affine(i, h, param_sink);
        continue;
      }
      const double a = adjoint_[i];
      if (a == 0.0) continue;
      const std::uint32_t begin = h.a, n = h.n;
      for (std::uint32_t e = begin; e < begin + n; ++e)
        propagate(edge_refs_[e], edge_partials_[e] * a, param_sink);
    }
  }

  void backward(const Dual& output, double* param_sink, double seed = 1.0) {
    if (!output.taped() || output.tape != this)
      throw std::invalid_argument("backward: output not recorded on this tape");
    const std::pair<Ref, double> s{output.ref, seed};
    backward(std::span<const std::pair<Ref, double>>(&s, 1), param_sink);
  }

  double adjoint(Ref node) const { return adjoint_[node]; }

 private:
  struct NodeHead {
    std::uint32_t a;  // edge begin, or payload u32 offset for affine heads
    std::uint32_t n;  // edge count, or payload f64 offset for affine heads
    std::uint32_t kind;
  };

  void propagate(Ref target, double contribution, double* param_sink) {
    if (is_param_ref(target))
      param_sink[target & ~kParamBit] += contribution;
    else
      adjoint_[target] += contribution;
  }

  void backward_affine(std::size_t head_idx, const NodeHead& h, double* param_sink) {
    const std::uint32_t* u = payload_u32_.data() + h.a;
    const std::uint32_t w_off = u[0], b_off = u[1];
    const int in_dim = static_cast<int>(u[2]), out_dim = static_cast<int>(u[3]);
    const bool w_frozen = (u[4] & 1u) != 0, b_frozen = (u[4] & 2u) != 0;
    const std::uint32_t* x_refs = u + 5;
    const double* x_vals = payload_f64_.data() + h.n;
    const double* w = store_->raw_values() + w_off;
    const std::size_t out0 = head_idx - (out_dim - 1);
    for (int k = 0; k < out_dim; ++k) {
      const double a = adjoint_[out0 + k];
      if (a == 0.0) continue;
      if (!b_frozen) param_sink[b_off + k] += a;
      const double* wk = w + static_cast<std::size_t>(k) * in_dim;
      if (!w_frozen) {
        double* gw = param_sink + w_off + static_cast<std::size_t>(k) * in_dim;
        for (int j = 0; j < in_dim; ++j) gw[j] += a * x_vals[j];
      }
      for (int j = 0; j < in_dim; ++j) {
        if (x_refs[j] == kConstRef) continue;
        propagate(x_refs[j], a * wk[j], param_sink);
      }
    }
  }

  ParamStore* store_;
  std::vector<double> values_;
  std::vector<NodeHead> heads_;
  std::vector<Ref> edge_refs_;
  std::vector<double> edge_partials_;
  std::vector<std::uint32_t> payload_u32_;
  std::vector<double> payload_f64_;
  std::vector<double> adjoint_;
};

inline Dual ParamStore::load(Tape* tape, GroupId id, std::size_t i) const {
  const Group& g = groups_[id];
  const double v = values_[g.offset + i];
  if (tape == nullptr || g.frozen) return Dual(v);
  return Dual(v, tape, static_cast<Ref>(g.offset + i) | kParamBit);
}

// ---------------------------------------------------------------------------
// Primitives. Constants fold; taped operands record one node with the local
// partials. min/max/clamp route ties to the first argument.

namespace detail {

inline Tape* common_tape(const Dual& a, const Dual& b) {
  Tape* t = a.taped() ? a.tape : (b.taped() ? b.tape : nullptr);
  assert(!(a.taped() && b.taped()) || a.tape == b.tape);
  return t;
}

inline Dual unary(const Dual& x, double v, double partial) {
  if (!x.taped()) return Dual(v);
  Tape* t = x.tape;
  const Ref r = t->begin_node(v);
  t->add_edge(x.ref, partial);
  return Dual(v, t, r);
}

inline Dual binary(const Dual& a, const Dual& b, double v, double pa, double pb) {
  Tape* t = common_tape(a, b);
  if (t == nullptr) return Dual(v);
  const Ref r = t->begin_node(v);
  if (a.taped()) t->add_edge(a.ref, pa);
  if (b.taped()) t->add_edge(b.ref, pb);
  return Dual(v, t, r);
}

}  // namespace detail

inline Dual operator+(const Dual& a, const Dual& b) {
  return detail::binary(a, b, a.v + b.v, 1.0, 1.0);
}
inline Dual operator-(const Dual& a, const Dual& b) {
  return detail::binary(a, b, a.v - b.v, 1.0, -1.0);
}
inline Dual operator*(const Dual& a, const Dual& b) {
  return detail::binary(a, b, a.v * b.v, b.v, a.v);
}
inline Dual operator/(const Dual& a, const Dual& b) {
  if (b.v == 0.0) throw std::domain_error("Dual division by zero");
  const double inv = 1.0 / b.v;
  return detail::binary(a, b, a.v * inv, inv, -a.v * inv * inv);
}
inline Dual operator-(const Dual& x) { return detail::unary(x, -x.v, -1.0); }

inline Dual& operator+=(Dual& a, const Dual& b) { return a = a + b; }
inline Dual& operator-=(Dual& a, const Dual& b) { return a = a - b; }
inline Dual& operator*=(Dual& a, const Dual& b) { return a = a * b; }
inline Dual& operator/=(Dual& a, const Dual& b) { return a = a / b; }

inline bool operator<(const Dual& a, const Dual& b) { return a.v < b.v; }
inline bool operator>(const Dual& a, const Dual& b) { return a.v > b.v; }
inline bool operator<=(const Dual& a, const Dual& b) { return a.v <= b.v; }
inline bool operator>=(const Dual& a, const Dual& b) { return a.v >= b.v; }

inline Dual exp(const Dual& x) {
  const double e = std::exp(x.v);
  return detail::unary(x, e, e);
}
inline Dual log(const Dual& x) {
  if (!(x.v > 0.0)) throw std::domain_error("Dual log of non-positive value");
  return detail::unary(x, std::log(x.v), 1.0 / x.v);
}
inline Dual sqrt(const Dual& x) {
  if (x.v < 0.0) throw std::domain_error("Dual sqrt of negative value");
  const double s = std::sqrt(x.v);
  // subgradient 0 at the kink x == 0
  return detail::unary(x, s, s > 0.0 ? 0.5 / s : 0.0);
}
inline Dual sigmoid(const Dual& x) {
  const double s = 1.0 / (1.0 + std::exp(-x.v));
  return detail::unary(x, s, s * (1.0 - s));
}
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline Dual tanh(const Dual& x) {
  const double t = std::tanh(x.v);
  return detail::unary(x, t, 1.0 - t * t);
}
inline Dual relu(const Dual& x) {
  return detail::unary(x, x.v >= 0.0 ? x.v : 0.0, x.v >= 0.0 ? 1.0 : 0.0);
}
inline double relu(double x) { return x >= 0.0 ? x : 0.0; }
inline Dual sin(const Dual& x) { return detail::unary(x, std::sin(x.v), std::cos(x.v)); }
inline Dual cos(const Dual& x) { return detail::unary(x, std::cos(x.v), -std::sin(x.v)); }
inline Dual abs(const Dual& x) {
  return detail::unary(x, std::fabs(x.v), x.v >= 0.0 ? 1.0 : -1.0);
}
inline Dual fabs(const Dual& x) { return abs(x); }
inline Dual acos(const Dual& x) {
  const double c = std::clamp(x.v, -1.0, 1.0);
  const double denom = std::sqrt(std::max(1.0 - c * c, 1e-12));
  return detail::unary(x, std::acos(c), -1.0 / denom);
}

inline Dual min(const Dual& a, const Dual& b) {
  if (a.v <= b.v) return detail::binary(a, b, a.v, 1.0, 0.0);
  return detail::binary(a, b, b.v, 0.0, 1.0);
}
inline Dual max(const Dual& a, const Dual& b) {
  if (a.v >= b.v) return detail::binary(a, b, a.v, 1.0, 0.0);
  return detail::binary(a, b, b.v, 0.0, 1.0);
}
inline Dual clamp(const Dual& x, double lo, double hi) {
  const double v = std::clamp(x.v, lo, hi);
  const double p = (x.v >= lo && x.v <= hi) ? 1.0 : 0.0;
  return detail::unary(x, v, p);
}
inline double clamp(double x, double lo, double hi) { return std::clamp(x, lo, hi); }
inline Dual select(bool cond, const Dual& a, const Dual& b) {
  const Dual& chosen = cond ? a : b;
  return detail::unary(chosen, chosen.v, 1.0);
}
inline double select(bool cond, double a, double b) { return cond ? a : b; }

// ---------------------------------------------------------------------------

/// Plain-value affine layer, structurally identical to the taped one so that
/// value-only evaluation matches taped values exactly.
inline void affine_layer_values(const ParamStore& store, ParamStore::GroupId w_group,
                                ParamStore::GroupId b_group, int in_dim, int out_dim,
                                const double* x, double* y) {
  const auto& wg = store.group(w_group);
  const auto& bg = store.group(b_group);
  const double* w = store.raw_values() + wg.offset;
  const double* b = store.raw_values() + bg.offset;
  for (int k = 0; k < out_dim; ++k) {
    double acc = b[k];
    const double* wk = w + static_cast<std::size_t>(k) * in_dim;
    for (int j = 0; j < in_dim; ++j) acc += wk[j] * x[j];
    y[k] = acc;
  }
}

/// Max relative error between reverse-mode and central-difference gradients
/// of a scalar function of n reals. The callable must be generic over the
/// scalar type: f(std::span<const S>) -> S for S in {double, Dual}.
template <class F>
double grad_check(F&& f, std::span<const double> x, double eps = 1e-5,
                  ParamStore* store = nullptr) {
  Tape tape(store);
  std::vector<Dual> xs;
  xs.reserve(x.size());
  for (double xi : x) xs.push_back(Dual(xi, &tape, tape.new_leaf(xi)));
  const Dual y = f(std::span<const Dual>(xs));
  // Parameter adjoints may be produced too; they land in a scratch sink and
  // only the leaf adjoints are compared.
  std::vector<double> sink(store != nullptr ? store->total() : 0, 0.0);
  tape.backward(y, sink.data());

  std::vector<double> xp(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + eps;
    const double fp = f(std::span<const double>(xp));
    xp[i] = x[i] - eps;
    const double fm = f(std::span<const double>(xp));
    xp[i] = x[i];
    const double numeric = (fp - fm) / (2.0 * eps);
    const double analytic = tape.adjoint(xs[i].ref);
    const double err = std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

/// Central-difference check of parameter gradients already accumulated in the
/// store: `eval_value` recomputes the objective value-only from current
/// parameter values. Returns max relative error over the chosen slots.
template <class EvalFn>
double param_grad_check(ParamStore& store,
                        std::span<const std::pair<ParamStore::GroupId, std::size_t>> slots,
                        std::span<const double> analytic, EvalFn&& eval_value,
                        double eps = 1e-5) {
  assert(slots.size() == analytic.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto [gid, idx] = slots[i];
    const double saved = store.value(gid, idx);
    store.set_value(gid, idx, saved + eps);
    const double fp = eval_value();
    store.set_value(gid, idx, saved - eps);
    const double fm = eval_value();
    store.set_value(gid, idx, saved);
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::fabs(analytic[i] - numeric) / std::max(1e-8, std::fabs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace aor
