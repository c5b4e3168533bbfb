#pragma once

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "vns/control.hpp"
#include "vns/diagnostics.hpp"
#include "vns/fixed_point.hpp"

namespace vns {

enum class Mode { free_run, reference_only, fixed_point, full_control, estimate_suite };
const char* to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct ModeSpec {
  int m1 = 1, m2 = 0;
  double amp = 0.5;
  double phase = 0.0;
};

// Every parameter that affects a report. Unknown keys are rejected when parsing.
struct RunConfig {
  Mode mode = Mode::full_control;
  unsigned seed = 7;

  int nx = 24;
  int nv = 24;
  double vmax = 10.0;
  double gamma = 3.0;

  // Fluid initial data: u0 = sum amp * sin(2 pi m.x + phase) * m_perp / |m|, divergence free.
  std::vector<ModeSpec> u0_modes{{0, 1, 0.5, 0.0}};
  double M = 0.0;  // bound on ||u0||_{H^1/2}; 0 means ||u0||_{H^1/2} itself

  // Kinetic initial profile. In fixed_point and full_control the amplitude is rescaled to epsilon.
  double f0_amplitude = 0.5;
  std::vector<ModeSpec> f0_modes{{1, 0, 0.5, 0.0}};
  Vec2 f0_shift{0.5, -0.3};
  std::string f0_profile = "algebraic";
  double epsilon = 0.0;            // 0 means epsilon_fraction of the cap
  double epsilon_fraction = 0.5;

  StripRegion strip;  // omega is this single band; the strip H_{2 delta0} uses delta0 = half_width / 2

  double fluid_dt = 0.0025;
  double kinetic_dt = 0.025;
  double T1 = 0.25, T2 = 0.75, stage4 = 0.5;
  double coast_speed = 5.0;
  double T3_cap = 200.0;
  int knots = 8;
  double penalty = 1e-6;
  int control_max_iter = 200;
  double control_tol = 1e-4;
  bool certify = true;
  int lattice_nx = 16, lattice_nv = 17;

  double tau1 = 0.5, tau2 = 0.5;

  int picard_max_iter = 6;
  double picard_tol = 1e-8;
  int store_every = 45;
  int holder_pairs = 2000;
  // Overrides for the fixed-point constants; 0 keeps the measured values.
  double c1 = 0.0, c2 = 0.0, c3 = 0.0;

  double horizon = 2.0;  // free_run and estimate_suite
  double free_dt = 0.0025;
  std::vector<double> stability_scales{0.1, 0.05, 0.025};
  double stability_horizon = 0.5;

  // Tolerance targets.
  double tol_hit_fraction = 0.99;
  double tol_confinement = 1e-3;  // mass outside omega at T over initial mass
  double tol_final_u = 1e-2;      // ||u(T_f)|| over ||u0||
  double tol_final_mass = 1e-3;   // remaining mass over initial mass
  double tol_leak = 0.05;         // control L2 share outside omega
  double tol_mass_drift = 1e-6;
  double tol_momentum_drift = 1e-5;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;
  // Throws ConfigError.
  void validate() const;

  OmegaSpec omega() const;
  VelocityGrid velocity_grid() const { return {nv, vmax}; }
  SpectralField initial_field(GridPtr g) const;
  InitialProfile initial_profile() const;
};

// Residual G = d_t f + v.grad_x f + div_v((u - v) f) at the middle slice of time triples.
struct ControlSlice {
  PhaseSpaceDistribution before, mid, after;
  SpectralField u;  // fluid field at the middle time
};

struct ControlReport {
  std::vector<double> t, l2_total, l2_outside, dt_scale;
  double leakage = 0.0;     // share of the L2 norm of G outside omega, all slices
  double relative = 0.0;    // ||G|| / ||d_t f||, all slices
  double modulus = 0.0;     // sampled max |G(x) - G(x')| over x-neighbors, relative to sup|G|
  nlohmann::json to_json() const;
};

// Throws InsufficientCheckpoints when no slice triple is given.
ControlReport extract_control(const std::vector<ControlSlice>& slices, const OmegaSpec& omega);

struct RunReport {
  nlohmann::json data;
  std::vector<std::string> misses;  // tolerance targets not met
  bool pass() const { return misses.empty(); }
  std::string dump() const { return data.dump(2); }
};

// Runs the configured mode, writing report.json, timing.json, CSV tables and checkpoints into outdir.
RunReport run_scenario(const RunConfig& cfg, const std::string& outdir);

struct ReplayResult {
  nlohmann::json recomputed;
  std::vector<std::string> mismatches;
  bool ok() const { return mismatches.empty(); }
};

// Recomputes the checkpoint-derived report entries of a finished run and compares them bit for bit.
ReplayResult replay_run(const std::string& outdir);

}  // namespace vns
