#include <doctest.h>

#include <cmath>
#include <random>

#include "vns/characteristics.hpp"
#include "vns/errors.hpp"

using namespace vns;

namespace {
FieldHistory gridded_constant(const Vec2& c, double t0, double t1) {
  auto g = make_grid(8);
  auto u = SpectralField::from_physical(g, {Grid2::Constant(8, 8, c[0]), Grid2::Constant(8, 8, c[1])});
  FieldHistory h;
  h.push(t0, u);
  h.push(t1, u);
  return h;
}

double torus_gap(const Vec2& a, const Vec2& b) {
  Vec2 d = a - b;
  for (int i = 0; i < 2; ++i) d[i] -= std::round(d[i]);
  return d.norm();
}
}  // namespace

TEST_CASE("flow matches the closed forms") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (Vec2 c : {Vec2(0, 0), Vec2(0.7, -1.3)}) {
    auto hist = gridded_constant(c, -6.0, 6.0);
    double err = 0.0;
    for (int i = 0; i < 50; ++i) {
      Vec2 x(U(rng), U(rng)), v(20 * U(rng) - 10, 20 * U(rng) - 10);
      if (v.norm() > 10) v *= 10 / v.norm();
      double s = -0.5 + U(rng), t = s + 10 * U(rng) - 5;
      PhasePoint p = flow({x, v}, s, t, hist, 1e-3);
      double tau = t - s, e = 1 - std::exp(-tau);
      Vec2 X = x + e * (v - c) + tau * c, V = std::exp(-tau) * v + e * c;
      err = std::max({err, torus_gap(p.x, X), (p.v - V).norm()});
    }
    CHECK(err < 1e-10);
  }
  auto hist = gridded_constant(Vec2::Zero(), 0, 5);
  PhasePoint p{Vec2(0.25, 0.75), Vec2(3, -4)};
  PhasePoint q = flow(p, 1.0, 1.0, hist, 1e-3);
  CHECK(q.x == p.x);
  CHECK(q.v == p.v);
  // Friction contraction.
  CHECK(flow(p, 0, 2, hist, 1e-3).v.norm() == doctest::Approx(std::exp(-2.0) * 5.0).epsilon(1e-12));
  CHECK_THROWS_AS(flow(p, 0, 6, hist, 1e-3), Error);
}

TEST_CASE("group property and inversion in a nonuniform field") {
  auto g = make_grid(16);
  FieldHistory hist;
  for (int k = 0; k <= 40; ++k) {
    double t = 0.05 * k;
    Grid2 a(16, 16), b(16, 16);
    for (int i2 = 0; i2 < 16; ++i2)
      for (int i1 = 0; i1 < 16; ++i1) {
        double x = i1 / 16.0, y = i2 / 16.0;
        a(i1, i2) = std::sin(2 * M_PI * y) * std::cos(t);
        b(i1, i2) = 0.5 * std::sin(2 * M_PI * x) + 0.2 * t;
      }
    hist.push(t, SpectralField::from_physical(g, {a, b}));
  }
  PhasePoint p{Vec2(0.1, 0.9), Vec2(2.0, -1.0)};
  PhasePoint a = flow(p, 0.0, 0.8, hist, 1e-3);
  PhasePoint b = flow(flow(p, 0.0, 0.37, hist, 1e-3), 0.37, 0.8, hist, 1e-3);
  CHECK(torus_gap(a.x, b.x) < 1e-8);
  CHECK((a.v - b.v).norm() < 1e-8);
  PhasePoint back = flow(flow(p, 0.0, 2.0, hist, 1e-3), 2.0, 0.0, hist, 1e-3);
  CHECK(torus_gap(back.x, p.x) < 1e-8);
  CHECK((back.v - p.v).norm() < 1e-8);
}

TEST_CASE("lipschitz probe") {
  auto hist = gridded_constant(Vec2::Zero(), 0, 1);
  auto rep = lipschitz_probe(hist, 300, 1.0, 1e-2, 5.0, 4);
  CHECK(rep.pairs > 100);
  CHECK(rep.constant <= std::exp(1.0));
  CHECK(rep.constant > 0.0);
}

TEST_CASE("crossings") {
  OmegaSpec om{{StripRegion{Vec2(1, 0), 0.5, 0.2}}};
  auto strip = build_strip(om, 24.0, 2.0);  // delta = 1/16
  auto hist = gridded_constant(Vec2::Zero(), 0, 3);
  SUBCASE("path away from the strip") {
    auto path = sample_path({Vec2(0.2, 0.1), Vec2(1.0, 0.0)}, 0, 2, hist, 1e-2, 0.05);
    CHECK(detect_crossings(path, strip, strip.delta, hist, 1e-2).empty());
  }
  SUBCASE("steep exit from the line") {
    // Start on H with v = -5 n_H: one crossing of the lower plane, leaving the strip.
    auto path = sample_path({Vec2(0.3, 0.5), Vec2(0.0, -5.0)}, 0, 0.1, hist, 1e-3, 0.05);
    auto ev = detect_crossings(path, strip, strip.delta, hist, 1e-3);
    REQUIRE(ev.size() == 1);
    double t_exact = -std::log(1.0 - strip.delta / 5.0);
    CHECK(std::abs(ev[0].time - t_exact) < 1e-9);
    CHECK(ev[0].cls == CrossingClass::outgoing);
    CHECK(ev[0].side == -1);
  }
  SUBCASE("steep entry") {
    // From y = 0.3 upwards at speed 5: enters H_delta through the lower plane.
    auto path = sample_path({Vec2(0.3, 0.3), Vec2(0.0, 5.0)}, 0, 0.15, hist, 1e-3, 0.05);
    auto ev = detect_crossings(path, strip, strip.delta, hist, 1e-3);
    REQUIRE(ev.size() == 2);
    double dist = 0.2 - strip.delta;
    CHECK(std::abs(ev[0].time + std::log(1.0 - dist / 5.0)) < 1e-9);
    CHECK(ev[0].cls == CrossingClass::gamma_3minus);
    CHECK(ev[1].cls == CrossingClass::outgoing);
  }
}

TEST_CASE("hitting certificate basics") {
  OmegaSpec om{{StripRegion{Vec2(1, 0), 0.5, 0.2}}};
  auto strip = build_strip(om, 24.0, 2.0);
  auto hist = gridded_constant(Vec2::Zero(), 0, 3);
  // Tangential motion never reaches the line.
  double best = 0.0;
  CHECK(first_hit({Vec2(0.1, 0.2), Vec2(4.0, 0.0)}, 0, hist, strip, 0, 3, 0.0, 1e-2, &best) < 0.0);
  // Normal speed Lambda0 = 5e^{T1} with T1 = 0.25 reaches the line (distance 0.3) at the scalar root.
  double L0 = 5 * std::exp(0.25);
  double t = first_hit({Vec2(0.1, 0.2), Vec2(0.0, L0)}, 0, hist, strip, 0, 3, 0.0, 1e-3);
  CHECK(std::abs(t + std::log(1 - 0.3 / L0)) < 1e-9);
  CHECK(t < 0.25);
  SeedLattice lat{2, 3, 1.0};
  auto rep = certify_hitting(hist, strip, lat, 0, 3, 10.0, 1e-2);
  CHECK(rep.total == 36);
  CHECK(rep.hit == 0);
  CHECK(rep.to_json().find("\"fraction\"") != std::string::npos);
}
