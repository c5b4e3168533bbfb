#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "vns/control.hpp"
#include "vns/errors.hpp"

using namespace vns;

namespace {

StripGeometry band() {
  OmegaSpec om;
  om.strips.push_back({});
  return build_strip(om, 1.0, 0.0);
}

ControlOptions small_options() {
  ControlOptions o;
  o.ns.dt = 0.0025;
  o.knots = 4;
  return o;
}

SpectralField uniform(GridPtr g, const Vec2& c) {
  SpectralField u = SpectralField::zeros(g, 2);
  u.comp[0](0, 0) = c[0];
  u.comp[1](0, 0) = c[1];
  return u;
}

}  // namespace

TEST_CASE("lift profiles carry unit current and no density") {
  auto c = KineticLift::certify(96, 8.0);
  std::printf("lift moment error %.3e\n", c.max_error());
  CHECK(c.max_error() < 1e-10);
  CHECK(c.moment[0][1] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(c.moment[1][1]) < 1e-10);
}

TEST_CASE("lifted control has j = w and rho = 0 on the grid") {
  VelocityGrid vg{16, 6.0};
  KineticLift lift = KineticLift::discretize(vg);
  const int n = 8;
  std::vector<Grid2> w(2, Grid2::Zero(n, n));
  for (int i2 = 0; i2 < n; ++i2)
    for (int i1 = 0; i1 < n; ++i1) {
      w[0](i1, i2) = std::sin(2.0 * M_PI * i2 / n);
      w[1](i1, i2) = 0.3 * std::cos(2.0 * M_PI * i1 / n) - 0.1;
    }
  MomentPair m = moments(lift_control(w, lift));
  CHECK(m.rho.abs().maxCoeff() < 1e-12);
  CHECK((m.j[0] - w[0]).abs().maxCoeff() < 1e-12);
  CHECK((m.j[1] - w[1]).abs().maxCoeff() < 1e-12);
}

TEST_CASE("force history lookup is half open") {
  ForceHistory f;
  f.t0 = 1.0;
  f.dt = 0.5;
  f.w.assign(2, {Grid2::Constant(2, 2, 1.0), Grid2::Zero(2, 2)});
  f.w[1][0].setConstant(2.0);
  CHECK(f.at(0.9) == nullptr);
  CHECK(f.at(1.0) == &f.w[0]);
  CHECK(f.at(1.6) == &f.w[1]);
  CHECK(f.at(2.0) == nullptr);
  CHECK(f.sup_norm() == 2.0);
}

TEST_CASE("adjoint gradient matches central differences") {
  auto g = make_grid(12);
  StripGeometry s = band();
  double err = control_gradient_check(SpectralField::zeros(g, 2), uniform(g, {0.0, 1.0}), 0.05, s, small_options(), 12);
  std::printf("adjoint gradient rel err %.3e\n", err);
  CHECK(err < 1e-5);
}

TEST_CASE("matching start and target needs no force") {
  auto g = make_grid(12);
  SpectralField u = uniform(g, {0.0, 0.7});
  ControlResult r = approx_fluid_control(u, u, 0.05, band(), small_options());
  CHECK(r.initial_error < 1e-14);
  CHECK(r.termination == "initial");
  CHECK(r.force.sup_norm() == 0.0);
}

TEST_CASE("controlled start-up reaches a uniform field with a band force") {
  auto g = make_grid(12);
  ControlOptions o = small_options();
  o.tolerance = 1e-3;
  ControlResult r = approx_fluid_control(SpectralField::zeros(g, 2), uniform(g, {0.0, 1.0}), 0.1, band(), o);
  std::printf("start-up error %.3e -> %.3e in %d iterations\n", r.initial_error, r.terminal_error, r.iterations);
  CHECK(r.terminal_error <= 1e-3);
  CHECK(r.terminal_error < 1e-2 * r.initial_error);
  CHECK(r.force.steps() == 40);
  OmegaSpec om;
  om.strips.push_back({});
  CHECK(r.force.leak_outside(om) < 1e-12);
}

TEST_CASE("Lambda0 example") {
  // max{0.5 / (1 - e^{-1}), 5 e^2} = 5 e^2
  CHECK(lambda0(0.5, 2.0) == doctest::Approx(36.945280494653).epsilon(1e-12));
  CHECK(lambda0(100.0, 0.1) == doctest::Approx(100.0 / -std::expm1(-0.05)).epsilon(1e-14));
}

TEST_CASE("delta example") { CHECK(choose_delta(0.1, 24.0, 2.0) == doctest::Approx(1.0 / 16.0).epsilon(1e-15)); }

TEST_CASE("cut-off endpoints") {
  CHECK(zeta(0.0) == 1.0);
  CHECK(zeta(-1.0) == 1.0);
  CHECK(zeta(1.0) == 0.0);
  CHECK(zeta(2.0) == 0.0);
  CHECK(zeta(0.5) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("minimal T3 is minimal and feasible") {
  StageSchedule s;
  s.T1 = 0.25;
  s.T2 = 0.75;
  s.Lambda0 = lambda0(0.5, s.T1);
  s.u2_l1linf = 1.25;
  double q = 0.025;
  double T3 = minimal_T3(s, q);
  CHECK(s.t3_first(T3));
  CHECK(s.t3_second(T3));
  CHECK_FALSE((s.t3_first(T3 - q) && s.t3_second(T3 - q)));
  CHECK(std::abs(T3 / q - std::round(T3 / q)) < 1e-9);
}

TEST_CASE("zero terminal data stays at zero") {
  auto g = make_grid(8);
  VelocityGrid vg{8, 4.0};
  auto f = PhaseSpaceDistribution::zeros(8, vg);
  ControlOptions o = small_options();
  TerminalStages ts = terminal_stages(f, SpectralField::zeros(g, 2), 0.05, 0.05, band(), o);
  CHECK(ts.final_u == 0.0);
  CHECK(ts.final_mass == 0.0);
  CHECK(ts.final_f_sup == 0.0);
  CHECK(l2_norm(ts.u_flat.back()) == 0.0);
}

TEST_CASE("blended distribution follows the cut-off") {
  auto g = make_grid(8);
  VelocityGrid vg{8, 4.0};
  InitialProfile p;
  auto f = from_profile(8, vg, p);
  ControlOptions o = small_options();
  TerminalStages ts = terminal_stages(f, SpectralField::zeros(g, 2), 0.05, 0.05, band(), o);
  CHECK(max_abs_diff(ts.f_flat(0.0), f) == 0.0);
  CHECK(ts.f_flat(0.025).mass() == doctest::Approx(0.5 * f.mass()).epsilon(1e-12));
  CHECK(ts.final_mass == 0.0);
}
