#include <doctest.h>

#include <cmath>
#include <random>

#include "vns/absorption.hpp"
#include "vns/errors.hpp"

using namespace vns;

namespace {
OmegaSpec horizontal() { return OmegaSpec{{StripRegion{Vec2(1, 0), 0.5, 0.2}}}; }
}  // namespace

TEST_CASE("strip geometry") {
  auto g = build_strip(horizontal(), 24.0, 0.0);
  CHECK(g.normal.isApprox(Vec2(0, 1)));
  CHECK(g.delta0 == doctest::Approx(0.1));
  CHECK(g.d0 == 0.5);
  CHECK(g.distance(Vec2(0.3, 0.55)) == doctest::Approx(0.05));
  CHECK(g.distance(Vec2(0.3, 0.0)) == doctest::Approx(0.5));
  // delta = min{0.1, 0.5, e^{0.12} - 1, 1/16}
  CHECK(choose_delta(0.1, 24.0, 2.0) == 1.0 / 16.0);
  CHECK(std::expm1(0.12) == doctest::Approx(0.1275).epsilon(1e-3));
  auto d = build_strip(OmegaSpec{{StripRegion{Vec2(1, 1), 0.0, 0.1}}}, 24.0, 1.0);
  CHECK(d.period == doctest::Approx(1.0 / std::sqrt(2.0)));
  // Points on the diagonal x1 = x2 and on its shifted copy x1 = x2 + 1/2 through the torus.
  CHECK(d.distance(Vec2(0.3, 0.3)) < 1e-15);
  CHECK(d.distance(Vec2(0.8, 0.3)) == doctest::Approx(0.5 / std::sqrt(2.0)));
  CHECK_THROWS_AS(build_strip(OmegaSpec{{StripRegion{Vec2(1, M_SQRT2), 0.0, 0.1}}}, 1.0, 1.0), Error);
  CHECK(horizontal().contains(Vec2(0.9, 0.65)));
  CHECK(!horizontal().contains(Vec2(0.9, 0.75)));
}

TEST_CASE("incidence classes") {
  CHECK(classify(0.5) == CrossingClass::outgoing);
  CHECK(classify(-0.5) == CrossingClass::incoming_shallow);
  CHECK(classify(-1.0) == CrossingClass::gamma_minus);
  CHECK(classify(-1.2) == CrossingClass::gamma_minus);
  CHECK(classify(-1.5) == CrossingClass::gamma_2minus);
  CHECK(classify(-2.0) == CrossingClass::gamma_3minus);
}

TEST_CASE("absorption factor plateaus") {
  AbsorptionRule rule{build_strip(horizontal(), 48.0, 0.0), 48.0};
  auto ev = [](double s) {
    CrossingEvent e;
    e.normal_speed = s;
    e.cls = classify(s);
    return e;
  };
  CHECK(absorption_factor(10.0, ev(-2.5), rule) == 0.0);
  CHECK(absorption_factor(10.0, ev(-2.0), rule) == 0.0);
  CHECK(absorption_factor(0.5, ev(-5.0), rule) == 1.0);
  CHECK(absorption_factor(47.5, ev(-5.0), rule) == 1.0);
  CHECK(absorption_factor(10.0, ev(-1.2), rule) == 1.0);
  CHECK(absorption_factor(10.0, ev(3.0), rule) == 1.0);
  // Monotone in incidence, values in [0,1].
  double prev = 1.0;
  for (double s = -1.0; s >= -3.0; s -= 0.01) {
    double f = rule.factor(10.0, s);
    CHECK(f <= prev + 1e-15);
    CHECK(f >= 0.0);
    prev = f;
  }
  // Y and Ytilde plateaus and ramp monotonicity.
  CHECK(rule.Y(0.0) == 0.0);
  CHECK(rule.Y(1.0) == 0.0);
  CHECK(rule.Y(2.0) == 1.0);
  CHECK(rule.Y(46.0) == 1.0);
  CHECK(rule.Y(47.0) == 0.0);
  CHECK(rule.Ytilde(0.48) == 0.0);
  CHECK(rule.Ytilde(1.0) == 1.0);
  for (double t = 0; t < 2.0; t += 0.01) {
    CHECK(rule.Y(t + 0.01) >= rule.Y(t));
    CHECK(rule.Ytilde(t + 0.01) >= rule.Ytilde(t));
  }
  // Separation of the two plateaus of A in the incidence coordinate.
  double lo = -1e9, hi = 1e9;
  for (double s = -3.0; s <= 0.0; s += 1e-3) {
    if (AbsorptionRule::A(s) < 1.0) lo = std::max(lo, s);
    if (AbsorptionRule::A(s) > 0.0) hi = std::min(hi, s);
  }
  CHECK(hi - (-2.0) >= 0.0);
  CHECK(-1.5 - (-2.0) >= 0.5);
}

TEST_CASE("extension operators") {
  auto strip = build_strip(horizontal(), 48.0, 0.0);
  ExtensionOperator op{strip, ExtensionMode::projection};
  AbsorptionRule rule{strip, 48.0};
  PhaseFn flat = [](double, const Vec2&, const Vec2& v) { return std::exp(-v.squaredNorm()); };
  auto e = extend(flat, op);
  CHECK(e(1.0, Vec2(0.2, 0.5), Vec2(1, 0)) == flat(1.0, Vec2(0.2, 0.5), Vec2(1, 0)));

  PhaseFn dist = [&](double, const Vec2& x, const Vec2&) { return strip.distance(x) - strip.delta; };
  auto ed = extend(dist, op);
  for (double y = 0.5 - 0.099; y < 0.5 + 0.099; y += 0.01) CHECK(std::abs(ed(0.0, Vec2(0.1, y), Vec2::Zero())) < 1e-15);
  // Outside the strip the extension agrees with the input.
  CHECK(ed(0.0, Vec2(0.1, 0.8), Vec2::Zero()) == dist(0.0, Vec2(0.1, 0.8), Vec2::Zero()));

  // Weighted sup never increases under projection.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    double a = U(rng), b = U(rng), c = U(rng);
    PhaseFn fn = [&](double, const Vec2& x, const Vec2& v) {
      return (1.0 + a * std::sin(2 * M_PI * (x[0] + b * x[1])) * c) * std::pow(1.0 + v.norm(), -5.0);
    };
    auto ef = extend(fn, op);
    double in_sup = 0.0, out_sup = 0.0;
    for (int i = 0; i < 2000; ++i) {
      Vec2 x(U(rng), U(rng)), v(6 * U(rng) - 3, 6 * U(rng) - 3);
      double w = std::pow(1.0 + v.norm(), 5.0);
      if (!strip.inside(x, strip.delta)) in_sup = std::max(in_sup, w * std::abs(fn(0, x, v)));
      out_sup = std::max(out_sup, w * std::abs(ef(0, x, v)));
    }
    // Dense sampling of the input on the boundary bounds the extension's values.
    for (int i = 0; i <= 2000; ++i)
      for (double side : {-1.0, 1.0}) {
        Vec2 x(i / 2000.0, 0.5 + side * strip.delta);
        in_sup = std::max(in_sup, std::abs(fn(0, x, Vec2::Zero())));
      }
    CHECK(out_sup <= in_sup * (1 + 1e-6));
  }

  // Pi blends in time.
  Vec2 xin(0.3, 0.52), v(0.5, 0.1);
  PhaseFn raw = [](double, const Vec2& x, const Vec2&) { return x[1]; };
  double pif = extend(raw, op)(0, xin, v);
  CHECK(apply_Pi(raw, 0.4, xin, v, op, rule) == raw(0, xin, v));
  CHECK(apply_Pi(raw, 1.0, xin, v, op, rule) == pif);
  // Ramp midpoint: Ytilde = 1/2 at the center of [T/100, T/48].
  double tm = 0.5 * (48.0 / 100 + 1.0);
  CHECK(rule.Ytilde(tm) == doctest::Approx(0.5));
  CHECK(apply_Pi(raw, tm, xin, v, op, rule) == doctest::Approx(0.5 * (raw(0, xin, v) + pif)));
  CHECK_THROWS_AS(apply_Pi(raw, 0.6, xin, v, op, rule, false), Error);
  CHECK(apply_Pi(raw, 2.0, xin, v, op, rule, false) == pif);

  ExtensionOperator blend{strip, ExtensionMode::blend};
  PhaseFn lin = [](double, const Vec2& x, const Vec2&) { return 3.0 * x[1]; };
  CHECK(extend(lin, blend)(0, xin, v) == doctest::Approx(3.0 * xin[1]));
}

TEST_CASE("weight quotient inequality") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-10.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    Vec2 x(U(rng), U(rng)), y(U(rng), U(rng));
    CHECK(1.0 / (1.0 + (x - y).norm()) <= (1.0 + y.norm()) / (1.0 + x.norm()) * (1 + 1e-15));
  }
}
