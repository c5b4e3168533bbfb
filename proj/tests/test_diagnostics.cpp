#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "vns/diagnostics.hpp"
#include "vns/errors.hpp"

using namespace vns;

namespace {

// (a sin(2 pi x2), b sin(2 pi x1)), divergence free.
SpectralField shear(GridPtr g, double a, double b) {
  const int n = g->n();
  std::vector<Grid2> c(2, Grid2::Zero(n, n));
  for (int i2 = 0; i2 < n; ++i2)
    for (int i1 = 0; i1 < n; ++i1) {
      c[0](i1, i2) = a * std::sin(2.0 * M_PI * i2 / n);
      c[1](i1, i2) = b * std::sin(2.0 * M_PI * i1 / n);
    }
  return SpectralField::from_physical(g, c);
}

PhaseSpaceDistribution small_data(int nx, const VelocityGrid& vg) {
  InitialProfile p;
  p.amplitude = 0.5;
  p.modes.push_back({1, 0, 0.5, 0.0});
  p.shift = {0.5, -0.3};
  return from_profile(nx, vg, p);
}

CoupledConfig small_coupled() {
  CoupledConfig c;
  c.ns.dt = 0.0025;
  return c;
}

}  // namespace

TEST_CASE("H^1/2 seminorm of simple fields") {
  auto g = make_grid(8);
  SpectralField c = SpectralField::zeros(g, 2);
  c.comp[0](0, 0) = 0.5;
  c.comp[1](0, 0) = -2.0;
  CHECK(h12_squared(c) == doctest::Approx(4.25).epsilon(1e-14));
  // One Fourier pair of |k| = 2 pi carrying L2 mass 1/2.
  SpectralField s = shear(g, 1.0, 0.0);
  CHECK(h12_squared(s) == doctest::Approx(2.0 * M_PI * 0.5).epsilon(1e-12));
}

TEST_CASE("identical runs have zero stability defect") {
  auto g = make_grid(8);
  VelocityGrid vg{12, 6.0};
  RunRecord a = record_run(small_data(8, vg), shear(g, 0.3, 0.2), 20, small_coupled());
  StabilityReport r = stability_check(a, a);
  CHECK(r.initial_diff == 0.0);
  CHECK(r.peak_lhs == 0.0);
  for (double x : r.lhs) CHECK(x == 0.0);
  CHECK(r.t.size() == 21);
  CHECK(r.C.front() == 0.0);
  for (size_t k = 1; k < r.C.size(); ++k) CHECK(r.C[k] > r.C[k - 1]);
}

TEST_CASE("runs on different grids are rejected") {
  VelocityGrid vg{12, 6.0};
  RunRecord a = record_run(small_data(8, vg), shear(make_grid(8), 0.3, 0.0), 4, small_coupled());
  RunRecord b = record_run(small_data(12, vg), shear(make_grid(12), 0.3, 0.0), 4, small_coupled());
  CHECK_THROWS_AS(stability_check(a, b), Error);
  RunRecord c = record_run(small_data(8, vg), shear(make_grid(8), 0.3, 0.0), 5, small_coupled());
  CHECK_THROWS_AS(stability_check(a, c), Error);
}

TEST_CASE("stability defect scales quadratically with the perturbation") {
  auto g = make_grid(8);
  VelocityGrid vg{12, 6.0};
  StabilitySweep sw = stability_sweep(small_data(8, vg), shear(g, 0.3, 0.0), shear(g, 0.2, 1.0), {0.1, 0.05, 0.025},
                                      40, small_coupled());
  std::printf("sweep exponent %.4f spread %.3f\n", sw.exponent, sw.prefactor_spread);
  CHECK(sw.exponent == doctest::Approx(2.0).epsilon(0.01));
  CHECK(sw.prefactor_spread < 1.1);
  for (double p : sw.prefactor) CHECK(p <= 1.0);
  CHECK(sw.pass());
}

TEST_CASE("twins of zero data are identical") {
  auto g = make_grid(8);
  VelocityGrid vg{8, 4.0};
  TwinReport t = uniqueness_twin_check(PhaseSpaceDistribution::zeros(8, vg), shear(g, 0.3, 0.0), 10, small_coupled());
  CHECK(t.repeat_f_diff == 0.0);
  CHECK(t.repeat_u_diff == 0.0);
  CHECK(t.perturbed_f0 == 0.0);
  CHECK(t.perturbed_f_diff == 0.0);
  CHECK(t.repeat_pass());
  CHECK(t.perturbed_pass());
}

TEST_CASE("twins of smooth data stay within the admissible difference") {
  auto g = make_grid(8);
  VelocityGrid vg{12, 6.0};
  TwinReport t = uniqueness_twin_check(small_data(8, vg), shear(g, 0.3, 0.0), 20, small_coupled());
  CHECK(t.repeat_f_diff == 0.0);
  CHECK(t.perturbed_f0 > 0.0);
  std::printf("twin growth %.3e bound %.3e diff %.3e floor %.3e\n", t.growth, t.growth_bound, t.perturbed_f_diff, t.roundoff_floor);
  CHECK(t.growth_bound > 1.0);
  CHECK(t.perturbed_pass());
}

TEST_CASE("free coupled run conserves mass and momentum") {
  auto g = make_grid(8);
  VelocityGrid vg{16, 8.0};
  CoupledResult r = coupled_run(small_data(8, vg), shear(g, 0.3, 0.2), 40, small_coupled());
  ConservationReport c = conservation_ledger(r);
  std::printf("mass drift %.3e momentum drift %.3e\n", c.mass_drift, c.momentum_drift);
  CHECK(c.mass0 > 0.0);
  CHECK(c.mass_drift < 1e-6);
  CHECK(c.momentum_drift < 1e-5);
  CHECK(c.absorbed == 0.0);
}
