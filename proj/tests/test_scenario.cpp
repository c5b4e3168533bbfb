#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vns/errors.hpp"
#include "vns/scenario.hpp"

using namespace vns;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("vns_test_" + name);
  fs::remove_all(p);
  return p;
}

RunConfig small_free() {
  RunConfig c;
  c.mode = Mode::free_run;
  c.nx = 8;
  c.nv = 12;
  c.vmax = 6.0;
  c.horizon = 0.1;
  return c;
}

json load(const fs::path& p) {
  std::ifstream is(p);
  json j;
  is >> j;
  return j;
}

}  // namespace

TEST_CASE("config survives a JSON round trip") {
  RunConfig c;
  c.mode = Mode::estimate_suite;
  c.seed = 99;
  c.u0_modes = {{1, 1, 0.25, 0.5}, {2, 0, 0.1, 0.0}};
  c.strip.offset = 0.3;
  c.stability_scales = {0.2, 0.1};
  json j = c.to_json();
  RunConfig d = RunConfig::from_json(j);
  CHECK(d.to_json() == j);
  CHECK(d.mode == Mode::estimate_suite);
  CHECK(d.u0_modes.size() == 2);
  CHECK(d.strip.offset == 0.3);

  fs::path p = scratch("config.json");
  c.save(p.string());
  CHECK(RunConfig::load(p.string()).to_json() == j);
  fs::remove(p);
}

TEST_CASE("bad configs are rejected") {
  json j = RunConfig{}.to_json();
  json a = j;
  a["no_such_key"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(a), Error);
  json b = j;
  b["mode"] = "warp";
  CHECK_THROWS_AS(RunConfig::from_json(b), Error);
  json c = j;
  c["kinetic_dt"] = 0.026;
  CHECK_THROWS_AS(RunConfig::from_json(c).validate(), Error);
  json d = j;
  d["strip"]["bogus"] = 0.0;
  CHECK_THROWS_AS(RunConfig::from_json(d), Error);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/config.json"), Error);
  try {
    RunConfig::from_json(a);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Config);
  }
}

TEST_CASE("mode names round trip") {
  for (Mode m : {Mode::free_run, Mode::reference_only, Mode::fixed_point, Mode::full_control, Mode::estimate_suite})
    CHECK(mode_from_string(to_string(m)) == m);
}

TEST_CASE("initial field is divergence free") {
  RunConfig c;
  c.u0_modes = {{1, 2, 0.4, 0.3}, {3, -1, 0.2, 1.0}, {0, 1, 0.5, 0.0}};
  SpectralField u = c.initial_field(make_grid(16));
  CHECK(l2_norm(u) > 0.1);
  CHECK(divergence_residual(u) < 1e-12);
}

TEST_CASE("residual extraction converges on exact free flight") {
  InitialProfile p;
  p.amplitude = 0.5;
  p.modes.push_back({1, 0, 0.5, 0.0});
  p.shift = {0.5, -0.3};
  OmegaSpec om;
  om.strips.push_back({});
  const double t = 0.3, dt = 0.01;
  std::vector<double> rel;
  for (int n : {16, 32, 64}) {
    VelocityGrid vg{n, 6.0};
    ControlSlice s{free_flight_exact(8, vg, p, t - dt), free_flight_exact(8, vg, p, t),
                   free_flight_exact(8, vg, p, t + dt), SpectralField::zeros(make_grid(8), 2)};
    ControlReport r = extract_control({s}, om);
    std::printf("v cells %d relative residual %.3f\n", n, r.relative);
    rel.push_back(r.relative);
  }
  CHECK(rel[1] < rel[0]);
  CHECK(rel[2] < rel[1]);
  CHECK(rel[2] < 0.15);
}

TEST_CASE("residual extraction needs slices") {
  OmegaSpec om;
  om.strips.push_back({});
  CHECK_THROWS_AS(extract_control({}, om), Error);
}

TEST_CASE("free run of zero data stays at zero and replays") {
  RunConfig c = small_free();
  c.u0_modes.clear();
  c.f0_amplitude = 0.0;
  fs::path dir = scratch("zero");
  RunReport r = run_scenario(c, dir.string());
  CHECK(r.pass());
  const json& m = r.data["checkpoint_metrics"];
  CHECK(m["T_mass"].get<double>() == 0.0);
  CHECK(m["T_u_l2"].get<double>() == 0.0);
  CHECK(fs::exists(dir / "report.json"));
  CHECK(fs::exists(dir / "config.json"));
  ReplayResult rp = replay_run(dir.string());
  CHECK(rp.ok());
  fs::remove_all(dir);
}

TEST_CASE("identical runs give identical reports") {
  RunConfig c = small_free();
  fs::path a = scratch("det_a"), b = scratch("det_b");
  run_scenario(c, a.string());
  run_scenario(c, b.string());
  CHECK(load(a / "report.json") == load(b / "report.json"));
  ReplayResult rp = replay_run(a.string());
  CHECK(rp.ok());
  fs::remove_all(a);
  fs::remove_all(b);
}
