#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "aor/diff.hpp"
#include "aor/rng.hpp"

using namespace aor;

TEST_CASE("primitive derivatives at hand-checked points") {
  Tape tape;
  const Dual x(0.0, &tape, tape.new_leaf(0.0));
  const Dual s = sigmoid(x);
  tape.backward(s, nullptr);
  CHECK(tape.adjoint(x.ref) == Catch::Approx(0.25).margin(1e-15));

  tape.clear();
  const Dual y(3.0, &tape, tape.new_leaf(3.0));
  tape.backward(y * y, nullptr);
  CHECK(tape.adjoint(y.ref) == Catch::Approx(6.0).margin(1e-15));

  tape.clear();
  const Dual z(2.0, &tape, tape.new_leaf(2.0));
  tape.backward(log(z), nullptr);
  CHECK(tape.adjoint(z.ref) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("every primitive passes random gradient checks at 1e-6") {
  Rng rng(11);
  // one generic lambda per primitive, each evaluated over its safe domain
  const auto check2 = [](auto f, double a, double b) {
    const double x0[2] = {a, b};
    return grad_check(f, std::span<const double>(x0, 2));
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const double pos = rng.uniform(0.2, 2.0);
    const double any = rng.uniform(-2.0, 2.0);
    const double other = rng.uniform(-2.0, 2.0);
    using std::cos;
    using std::exp;
    using std::fabs;
    using std::log;
    using std::max;
    using std::min;
    using std::sin;
    using std::sqrt;
    using std::tanh;
    CHECK(check2([](auto x) { return x[0] + x[1]; }, any, other) < 1e-6);
    CHECK(check2([](auto x) { return x[0] - x[1]; }, any, other) < 1e-6);
    CHECK(check2([](auto x) { return x[0] * x[1]; }, any, other) < 1e-6);
    CHECK(check2([](auto x) { return x[0] / x[1]; }, any, pos) < 1e-6);
    CHECK(check2([](auto x) { return -x[0]; }, any, other) < 1e-6);
    CHECK(check2([](auto x) { using std::exp; return exp(x[0] * 0.5); }, any, other) < 1e-6);
    CHECK(check2([](auto x) { using std::log; return log(x[0]); }, pos, other) < 1e-6);
    CHECK(check2([](auto x) { using std::sqrt; return sqrt(x[0]); }, pos, other) < 1e-6);
    CHECK(check2([](auto x) { return sigmoid(x[0]); }, any, other) < 1e-6);
    CHECK(check2([](auto x) { using std::tanh; return tanh(x[0]); }, any, other) < 1e-6);
    CHECK(check2([](auto x) { return relu(x[0]); }, pos, other) < 1e-6);
    CHECK(check2([](auto x) { using std::sin; return sin(x[0]); }, any, other) < 1e-6);
    CHECK(check2([](auto x) { using std::cos; return cos(x[0]); }, any, other) < 1e-6);
    CHECK(check2([](auto x) { using std::fabs; return fabs(x[0]); }, pos, other) < 1e-6);
    CHECK(check2([](auto x) { using std::min; return min(x[0], x[1]); },
                 any, any + (other > 0 ? 0.5 : -0.5)) < 1e-6);
    CHECK(check2([](auto x) { using std::max; return max(x[0], x[1]); },
                 any, any + (other > 0 ? 0.5 : -0.5)) < 1e-6);
    CHECK(check2([](auto x) { return clamp(x[0], -1.5, 1.5) * x[1]; },
                 pos * 0.6, other) < 1e-6);
    CHECK(check2([](auto x) { return select(true, x[0], x[1]); }, any, other) < 1e-6);
  }
}

TEST_CASE("min/max/clamp/select kinks route to the first argument") {
  Tape tape;
  const Dual a(1.0, &tape, tape.new_leaf(1.0));
  const Dual b(1.0, &tape, tape.new_leaf(1.0));
  tape.backward(min(a, b), nullptr);
  CHECK(tape.adjoint(a.ref) == 1.0);
  CHECK(tape.adjoint(b.ref) == 0.0);

  tape.clear();
  const Dual c(1.0, &tape, tape.new_leaf(1.0));
  const Dual d(1.0, &tape, tape.new_leaf(1.0));
  tape.backward(max(c, d), nullptr);
  CHECK(tape.adjoint(c.ref) == 1.0);
  CHECK(tape.adjoint(d.ref) == 0.0);

  tape.clear();
  const Dual e(2.0, &tape, tape.new_leaf(2.0));
  tape.backward(clamp(e, 0.0, 2.0), nullptr);
  CHECK(tape.adjoint(e.ref) == 1.0);
  tape.clear();
  const Dual g(2.1, &tape, tape.new_leaf(2.1));
  tape.backward(clamp(g, 0.0, 2.0), nullptr);
  CHECK(tape.adjoint(g.ref) == 0.0);

  tape.clear();
  const Dual h(0.5, &tape, tape.new_leaf(0.5));
  const Dual i(0.7, &tape, tape.new_leaf(0.7));
  tape.backward(select(false, h, i), nullptr);
  CHECK(tape.adjoint(h.ref) == 0.0);
  CHECK(tape.adjoint(i.ref) == 1.0);
}

TEST_CASE("domain violations raise instead of producing NaN") {
  Tape tape;
  const Dual neg(-1.0, &tape, tape.new_leaf(-1.0));
  CHECK_THROWS_AS(log(neg), std::domain_error);
  CHECK_THROWS_AS(sqrt(neg), std::domain_error);
  const Dual zero(0.0, &tape, tape.new_leaf(0.0));
  CHECK_THROWS_AS(neg / zero, std::domain_error);
}

TEST_CASE("backward computes sums of squares and accumulates") {
  ParamStore store;
  const auto g = store.add_group("x", 10);
  Rng rng(3);
  for (int i = 0; i < 10; ++i) store.set_value(g, i, rng.uniform(-1, 1));

  Tape tape(&store);
  Dual sum(0.0);
  for (int i = 0; i < 10; ++i) {
    const Dual xi = store.load(&tape, g, i);
    sum = sum + xi * xi;
  }
  tape.backward(sum, store.grad_data());
  for (int i = 0; i < 10; ++i)
    CHECK(store.grad(g)[i] == Catch::Approx(2.0 * store.value(g, i)).margin(1e-15));

  // a second pass doubles the accumulated gradients exactly
  tape.clear();
  Dual sum2(0.0);
  for (int i = 0; i < 10; ++i) {
    const Dual xi = store.load(&tape, g, i);
    sum2 = sum2 + xi * xi;
  }
  tape.backward(sum2, store.grad_data());
  for (int i = 0; i < 10; ++i)
    CHECK(store.grad(g)[i] == Catch::Approx(4.0 * store.value(g, i)).margin(1e-15));
}

TEST_CASE("composite sigmoid(a*b + c) matches finite differences") {
  const auto f = [](auto xs) {
    return sigmoid(xs[0] * xs[1] + xs[2]);
  };
  const double x0[3] = {0.8, -1.2, 0.3};
  CHECK(grad_check(f, std::span<const double>(x0, 3), 1e-5) < 1e-6);
}

TEST_CASE("backward rejects outputs from other tapes") {
  Tape t1, t2;
  const Dual x(1.0, &t1, t1.new_leaf(1.0));
  CHECK_THROWS_AS(t2.backward(x, nullptr), std::invalid_argument);
}

TEST_CASE("affine layer matches explicit arithmetic and gradients") {
  ParamStore store;
  const auto w = store.add_group("w", 6);  // 2x3
  const auto b = store.add_group("b", 2);
  const double wv[6] = {0.3, -0.5, 0.2, 0.7, 0.1, -0.4};
  for (int i = 0; i < 6; ++i) store.set_value(w, i, wv[i]);
  store.set_value(b, 0, 0.05);
  store.set_value(b, 1, -0.02);

  Tape tape(&store);
  const double xv[3] = {0.4, -0.9, 1.1};
  Ref x_refs[3];
  Dual xs[3];
  for (int i = 0; i < 3; ++i) {
    x_refs[i] = tape.new_leaf(xv[i]);
    xs[i] = Dual(xv[i], &tape, x_refs[i]);
  }
  double out[2];
  const Ref y0 = tape.affine_layer(w, b, 3, 2, xv, x_refs, out);
  for (int k = 0; k < 2; ++k) {
    double expect = store.value(b, k);
    for (int j = 0; j < 3; ++j) expect += wv[3 * k + j] * xv[j];
    CHECK(out[k] == Catch::Approx(expect).margin(1e-15));
  }
  // d(y0 * 2 + y1) w.r.t. inputs and params
  const Dual y0d(out[0], &tape, y0), y1d(out[1], &tape, y0 + 1);
  const Dual objective = y0d * 2.0 + y1d;
  tape.backward(objective, store.grad_data());
  for (int j = 0; j < 3; ++j)
    CHECK(tape.adjoint(x_refs[j]) ==
          Catch::Approx(2.0 * wv[j] + wv[3 + j]).margin(1e-14));
  for (int j = 0; j < 3; ++j) {
    CHECK(store.grad(w)[j] == Catch::Approx(2.0 * xv[j]).margin(1e-14));
    CHECK(store.grad(w)[3 + j] == Catch::Approx(xv[j]).margin(1e-14));
  }
  CHECK(store.grad(b)[0] == 2.0);
  CHECK(store.grad(b)[1] == 1.0);
}

TEST_CASE("adam step behaves like the reference update") {
  ParamStore store;
  const auto g = store.add_group("w", 1);

  SECTION("zero gradient leaves parameters unchanged") {
    store.set_value(g, 0, 1.5);
    store.adam_step(g, 1e-2);
    CHECK(store.value(g, 0) == 1.5);
    CHECK(store.step_count(g) == 1);
  }

  SECTION("first step magnitude is lr times the gradient sign") {
    store.set_value(g, 0, 1.0);
    store.grad(g)[0] = 0.37;
    store.adam_step(g, 1e-2);
    // bias correction makes m_hat = grad, v_hat = grad^2
    const double expected = 1.0 - 1e-2 * 0.37 / (0.37 + 1e-8);
    CHECK(store.value(g, 0) == Catch::Approx(expected).margin(1e-12));
    CHECK(store.grad(g)[0] == 0.0);
  }

  SECTION("descends w^2 monotonically after warm-up") {
    store.set_value(g, 0, 1.0);
    double prev = 1.0;
    bool monotone = true;
    for (int step = 0; step < 100; ++step) {
      store.grad(g)[0] = 2.0 * store.value(g, 0);
      store.adam_step(g, 1e-2);
      const double w = std::fabs(store.value(g, 0));
      if (step > 5 && w > prev + 1e-12) monotone = false;
      prev = w;
    }
    CHECK(monotone);
    CHECK(std::fabs(store.value(g, 0)) < 1.0);
  }

  SECTION("unknown group name throws") {
    CHECK_THROWS_AS(store.adam_step("nope", 1e-2), std::out_of_range);
  }
}

TEST_CASE("grad_check on a linear function is tiny") {
  const auto f = [](auto xs) {
    using S = std::remove_cvref_t<decltype(xs[0])>;
    S acc(0.0);
    for (std::size_t i = 0; i < xs.size(); ++i) acc = acc + xs[i] * double(i + 1);
    return acc;
  };
  const double x0[4] = {0.1, -0.4, 2.0, 0.7};
  CHECK(grad_check(f, std::span<const double>(x0, 4)) < 1e-9);
}

TEST_CASE("value-only evaluation equals taped values exactly") {
  Rng rng(19);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = rng.uniform(0.1, 3.0), b = rng.uniform(-2, 2);
    Tape tape;
    const Dual ad(a, &tape, tape.new_leaf(a));
    const Dual bd(b, &tape, tape.new_leaf(b));
    using std::exp;
    using std::log;
    using std::sqrt;
    const Dual taped = sigmoid(ad * bd) + log(ad) * sqrt(ad) - exp(bd * 0.1);
    const double plain =
        1.0 / (1.0 + std::exp(-(a * b))) + std::log(a) * std::sqrt(a) - std::exp(b * 0.1);
    CHECK(taped.v == plain);
  }
}

TEST_CASE("tape determinism: identical recordings give identical gradients") {
  ParamStore store;
  const auto g = store.add_group("p", 4);
  for (int i = 0; i < 4; ++i) store.set_value(g, i, 0.1 * (i + 1));
  auto run = [&]() {
    store.zero_grad(g);
    Tape tape(&store);
    Dual acc(0.0);
    for (int i = 0; i < 4; ++i) {
      const Dual p = store.load(&tape, g, i);
      acc = acc + sigmoid(p * p - p / 3.0);
    }
    tape.backward(acc, store.grad_data());
    std::vector<double> out(store.grad(g).begin(), store.grad(g).end());
    return out;
  };
  const auto g1 = run(), g2 = run();
  for (int i = 0; i < 4; ++i) CHECK(g1[i] == g2[i]);
}
