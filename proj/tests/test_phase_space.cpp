#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

#include "vns/errors.hpp"
#include "vns/phase_space.hpp"

using namespace vns;

namespace {
InitialProfile one_mode() {
  InitialProfile p;
  p.modes = {{1, 0, 0.5, 0.0}, {0, 1, 0.25, 0.3}};
  return p;
}

double rel_max_err(const PhaseSpaceDistribution& a, const PhaseSpaceDistribution& b) {
  return max_abs_diff(a, b) / b.sup();
}

double free_flight_error(int n, double dt, int steps) {
  InitialProfile p = one_mode();
  VelocityGrid vg{n, 6.0};
  auto f = from_profile(n, vg, p);
  TransportConfig cfg;
  cfg.clip = false;
  for (int k = 0; k < steps; ++k) transport_step(f, dt, nullptr, nullptr, nullptr, cfg);
  return rel_max_err(f, free_flight_exact(n, vg, p, dt * steps));
}
}  // namespace

TEST_CASE("Gauss-Legendre cell averages integrate polynomials exactly") {
  VelocityGrid vg{8, 2.0};
  auto f = from_function(4, vg, [](const Vec2&, const Vec2& v) { return v[0] * v[0] + v[1]; });
  double h = vg.h();
  for (int j = 0; j < 8; ++j) {
    double a = vg.edge(j), b = a + h;
    double avg = (b * b * b - a * a * a) / (3 * h) + vg.center(3);
    CHECK(f.at(1, 2, j, 3) == doctest::Approx(avg).epsilon(1e-13));
  }
}

TEST_CASE("free flight step against the exact solution") {
  double e16 = free_flight_error(16, 0.5, 1), e32 = free_flight_error(32, 0.5, 1);
  std::printf("free flight rel err N=16 %.3e N=32 %.3e\n", e16, e32);
  CHECK(e32 < 2e-2);
  CHECK(e16 / e32 > 3.0);
}

TEST_CASE("transport conserves mass and keeps the spatial mean flat") {
  InitialProfile p = one_mode();
  VelocityGrid vg{16, 6.0};
  auto f = from_profile(16, vg, p);
  double m0 = f.mass();
  TransportConfig cfg;
  for (int k = 0; k < 5; ++k) {
    auto st = transport_step(f, 0.1, nullptr, nullptr, nullptr, cfg);
    CHECK(st.tail_leak == 0.0);
  }
  CHECK(std::abs(f.mass() + 0.0 - m0) / m0 < 1e-12 + 1e-3);
  CHECK(f.time == doctest::Approx(0.5));
}

TEST_CASE("uniform drag shift moves momentum into the fluid exactly") {
  InitialProfile p = one_mode();
  p.vprofile = VelocityProfile::gaussian;
  VelocityGrid vg{16, 6.0};
  auto f = from_profile(12, vg, p);
  std::vector<Grid2> u = {Grid2::Constant(12, 12, 0.8), Grid2::Constant(12, 12, -0.4)};
  std::vector<Grid2> imp;
  TransportConfig cfg;
  cfg.clip = false;
  Vec2 P0 = f.momentum();
  double m0 = f.mass();
  auto st = transport_step(f, 0.05, &u, &u, nullptr, cfg, &imp);
  Vec2 P1 = f.momentum();
  double given1 = imp[0].mean(), given2 = imp[1].mean();
  CHECK(std::abs(P1[0] - P0[0] + given1) < 1e-10);
  CHECK(std::abs(P1[1] - P0[1] + given2) < 1e-10);
  CHECK(std::abs(f.mass() - m0 + st.tail_leak) < 1e-12);
  // Friction pulls momentum toward u * mass over the step.
  CHECK(P1[0] > P0[0]);
  CHECK(P1[1] < P0[1]);
}

TEST_CASE("clipping is conservative per x node") {
  VelocityGrid vg{8, 4.0};
  auto f = from_function(8, vg, [](const Vec2& x, const Vec2& v) { return std::exp(-v.squaredNorm()) * (1 + 0.5 * std::cos(6.283185307179586 * x[0])); });
  f.at(2, 3, 0, 0) = -1e-3;
  auto m = moments(f);
  TransportConfig cfg;
  auto g = f;
  auto st = transport_step(g, 1e-12, nullptr, nullptr, nullptr, cfg);
  CHECK(st.clipped == doctest::Approx(1e-3 * f.cell_volume()).epsilon(1e-6));
  for (double v : g.data) CHECK(v >= 0.0);
  CHECK(std::abs(moments(g).rho(2, 3) - m.rho(2, 3)) < 1e-10);
}

TEST_CASE("Gaussian moments") {
  InitialProfile p;
  p.vprofile = VelocityProfile::gaussian;
  p.shift = Vec2(0.5, -0.25);
  VelocityGrid vg{32, 6.0};
  auto f = from_profile(4, vg, p);
  auto m = moments(f);
  const double pi = 3.14159265358979323846;
  CHECK(m.rho(0, 0) == doctest::Approx(pi).epsilon(1e-10));
  CHECK(m.j[0](1, 1) == doctest::Approx(0.5 * pi).epsilon(1e-10));
  CHECK(m.j[1](2, 3) == doctest::Approx(-0.25 * pi).epsilon(1e-10));
}

TEST_CASE("weighted sup of the matching algebraic profile is one") {
  double gamma = 3.0;
  VelocityGrid vg{12, 6.0};
  auto f = from_function(4, vg, [&](const Vec2&, const Vec2& v) { return std::pow(1 + v.norm(), -(gamma + 2)); },
                         Sampling::center);
  CHECK(weighted_sup_norm(f, gamma + 2) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("tail bound closed form") {
  // gamma = 3: int_V^inf r^2 (1+r)^-5 dr by substitution.
  double V = 6, S = 7;
  double I = 1.0 / (2 * S * S) - 2.0 / (3 * S * S * S) + 1.0 / (4 * S * S * S * S);
  CHECK(moment_tail_bound(2.0, 3.0, V) == doctest::Approx(2.0 * 2 * 3.14159265358979323846 * I));
}

TEST_CASE("profile scaling and norms") {
  InitialProfile p = one_mode();
  auto q = p.scaled_to(1e-3);
  CHECK(q.smallness() == doctest::Approx(1e-3).epsilon(1e-9));
  // sup|f| = 1.75 at x = 0, v = 0 for the unit amplitude.
  CHECK(p.weighted_sup(0.0) == doctest::Approx(1.75).epsilon(1e-3));
}

TEST_CASE("point sampling reconstructs smooth data") {
  InitialProfile p = one_mode();
  p.vprofile = VelocityProfile::gaussian;
  VelocityGrid vg{32, 5.0};
  auto f = from_profile(32, vg, p);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0, 1);
  double err = 0;
  for (int k = 0; k < 200; ++k) {
    Vec2 x(U(rng), U(rng)), v(4 * U(rng) - 2, 4 * U(rng) - 2);
    err = std::max(err, std::abs(f.sample(x, v) - p(x, v)));
  }
  CHECK(err < 5e-3);
}

TEST_CASE("distribution snapshot round trip") {
  InitialProfile p = one_mode();
  VelocityGrid vg{6, 3.0};
  auto f = from_profile(5, vg, p);
  f.time = 0.25;
  std::string path = (std::filesystem::temp_directory_path() / "vns_ps_roundtrip.bin").string();
  write_distribution(path, f);
  auto g = read_distribution(path);
  std::filesystem::remove(path);
  CHECK(g.nx == 5);
  CHECK(g.vg.n == 6);
  CHECK(g.time == 0.25);
  CHECK(max_abs_diff(f, g) == 0.0);
  CHECK_THROWS_AS(read_distribution("does_not_exist.bin"), Error);
}

TEST_CASE("grid oracle agrees with the trace oracle at u = 0") {
  InitialProfile p = one_mode();
  FieldHistory u;
  u.push_uniform(0.0, Vec2(0, 0));
  u.push_uniform(1.0, Vec2(0, 0));
  VelocityGrid vg{32, 4.0};
  auto f = free_flight_exact(8, vg, p, 0.5, 8);
  // Center value of a cell average differs by O(h^2); compare loosely.
  double a = exact_trace_evaluate(0.5, {Vec2(0.25, 0.5), Vec2(vg.center(16), vg.center(15))}, u, p, nullptr, 1e-2);
  double b = p(Vec2(0.25, 0.5) + (1 - std::exp(0.5)) * Vec2(vg.center(16), vg.center(15)),
               std::exp(0.5) * Vec2(vg.center(16), vg.center(15))) * std::exp(1.0);
  CHECK(a == doctest::Approx(b).epsilon(1e-9));
  // Midpoint average of the trace oracle over the velocity cell.
  double avg = 0;
  const int m = 12;
  for (int a1 = 0; a1 < m; ++a1)
    for (int a2 = 0; a2 < m; ++a2) {
      Vec2 v(vg.edge(16) + (a1 + 0.5) * vg.h() / m, vg.edge(15) + (a2 + 0.5) * vg.h() / m);
      avg += exact_trace_evaluate(0.5, {Vec2(0.25, 0.5), v}, u, p, nullptr, 1e-2) / (m * m);
    }
  CHECK(f.at(2, 4, 16, 15) == doctest::Approx(avg).epsilon(2e-3));
}
