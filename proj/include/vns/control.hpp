#pragma once

#include <string>
#include <vector>

#include "vns/characteristics.hpp"
#include "vns/navier_stokes.hpp"
#include "vns/phase_space.hpp"
#include "vns/strip.hpp"

namespace vns {

// Velocity profiles Z_i(v) = (2 v_i / pi) exp(-|v|^2) carrying unit current and no density.
struct KineticLift {
  static double Z(int i, const Vec2& v);

  struct Certificate {
    // moment[i][m]: integral of {1, v1, v2}[m] * Z_i
    double moment[2][3];
    double max_error() const;
  };
  // Tensor Gauss-Legendre quadrature on [-R, R]^2.
  static Certificate certify(int points_per_axis = 96, double R = 8.0);

  // Cell averages of Z_1, Z_2 on a velocity grid, rescaled so that the discrete first
  // moments are exactly 1 and the discrete density is exactly 0.
  VelocityGrid vg;
  std::vector<double> z1, z2;
  double raw_moment = 0.0;
  static KineticLift discretize(const VelocityGrid& vg, int n_gl = 8);
};

// Space-time force: component grids per fluid step, piecewise constant in time.
struct ForceHistory {
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<std::vector<Grid2>> w;

  long steps() const { return static_cast<long>(w.size()); }
  double t_end() const { return t0 + dt * steps(); }
  // Force on [t, t+dt) containing t; null outside [t0, t_end).
  const std::vector<Grid2>* at(double t) const;
  double sup_norm() const;
  // Share of the space-time L2 mass located outside omega.
  double leak_outside(const OmegaSpec& omega) const;
};

// f(x, v) = Z_1(v) w_1(x) + Z_2(v) w_2(x) on the x grid of w.
PhaseSpaceDistribution lift_control(const std::vector<Grid2>& w, const KineticLift& lift, double t = 0.0);

// 1 on the band of half width inner around the line, smoothly 0 beyond outer.
Grid2 strip_mask(int n, const StripGeometry& strip, double inner, double outer);

struct ControlOptions {
  NsConfig ns;
  int knots = 8;
  double penalty = 1e-6;
  int max_iter = 200;
  double tolerance = 1e-4;  // stop once the terminal L2 error is below this
  int stall_window = 20;
  int fd_check = 0;  // number of random coefficients for the finite-difference gradient check
  unsigned seed = 7;
  double mask_inner = 1.0;   // in units of delta0
  double mask_outer = 1.8;
};

struct ControlResult {
  ForceHistory force;
  std::vector<SpectralField> trajectory;  // fluid states at every fluid step
  double initial_error = 0.0;
  double terminal_error = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // terminal error per accepted iterate
  double fd_max_rel_error = -1.0;
  std::string termination;
};

// Force supported in the masked band over (t0, t0 + horizon) minimizing
// 0.5 ||u(end) - target||^2 + 0.5 penalty sum dt ||w||^2, by L-BFGS on adjoint gradients.
// Throws NoProgress when the terminal error stalls for stall_window iterations above tolerance.
ControlResult approx_fluid_control(const SpectralField& u_start, const SpectralField& u_target, double horizon,
                                   const StripGeometry& strip, const ControlOptions& opt, double t0 = 0.0);

// Relative error of the adjoint gradient against central differences on `samples` random
// coefficients of a random control.
double control_gradient_check(const SpectralField& u_start, const SpectralField& u_target, double horizon,
                              const StripGeometry& strip, const ControlOptions& opt, int samples);

struct StageSchedule {
  double T1 = 0.25, T2 = 0.75, T3 = 0.0, T4 = 0.0;
  double tau1 = 0.5, tau2 = 0.5;
  double Lambda0 = 0.0;
  double d0 = 0.5;
  double u2_l1linf = 0.0;

  double T() const { return T4; }
  // Both T3 inequalities, evaluated exactly as written.
  bool t3_first(double T3v) const;
  bool t3_second(double T3v) const;
  bool feasible() const { return t3_first(T3) && t3_second(T3); }
};

double lambda0(double d0, double T1);
// Smallest T3 (rounded up to a multiple of `quantum`) satisfying both inequalities.
double minimal_T3(const StageSchedule& s, double quantum);

struct ReferenceConfig {
  int n = 24;
  double fluid_dt = 0.0025;
  double kinetic_dt = 0.025;
  double T1 = 0.25, T2 = 0.75;
  double stage4 = 0.5;
  double T3_cap = 200.0;
  double coast_speed = 5.0;
  ControlOptions control;
  bool certify = true;
  SeedLattice lattice;
  double hit_slack = 0.1;
  double hit_h = 0.01;
  double tol_u = 1e-3;
  double tol_f = 1e-3;
};

struct ReferenceTrajectory {
  StripGeometry strip;
  StageSchedule schedule;
  GridPtr grid;
  double fluid_dt = 0.0;
  double coast_speed = 5.0;
  ControlResult stage2, stage4;
  double support_leak = 0.0;
  double terminal_u = 0.0;
  double terminal_f = 0.0;
  double stage2_jump = 0.0;  // ||u2(end) - coast field||
  HittingReport hitting;
  long case1_seeds = 0, case1_hits = 0;

  Vec2 coast() const { return coast_speed * strip.normal; }
  // Reference field at time t (stage 2 and 4 states interpolated linearly between fluid steps).
  SpectralField u_bar(double t) const;
  // Reference force (= current of the lifted distribution) at t; null when zero.
  const std::vector<Grid2>* force_at(double t) const;
  FieldHistory history() const;
  PhaseSpaceDistribution f_bar(double t, const KineticLift& lift) const;
  double jbar_linf_l2() const;  // sup_t ||j_fbar(t)||_L2
  double l2_linf() const;       // (int ||u_bar||_inf^2)^{1/2}
};

// Five-stage reference: rest, controlled start-up to the coast field, coasting, controlled stop.
// T3 is enlarged until both schedule inequalities hold with the measured stage-2 norm.
ReferenceTrajectory build_reference(const StripGeometry& strip, const ReferenceConfig& cfg,
                                    const OmegaSpec* omega = nullptr);

// 1 for s <= 0, 0 for s >= 1, quintic in between.
double zeta(double s);

struct TerminalStages {
  double tau1 = 0.0, tau2 = 0.0;
  std::vector<SpectralField> u_flat;  // fluid steps over [0, tau1]
  Grid2 rho_final;                    // moments of g_final
  std::vector<Grid2> j_final;
  PhaseSpaceDistribution g_final;
  ControlResult sharp;                // force and field over [0, tau2]
  double final_u = 0.0;
  double final_f_sup = 0.0;
  double final_mass = 0.0;
  // f_flat(t) = zeta(t / tau1) g_final
  PhaseSpaceDistribution f_flat(double t) const;
};

TerminalStages terminal_stages(const PhaseSpaceDistribution& g_final, const SpectralField& u_final, double tau1,
                               double tau2, const StripGeometry& strip, const ControlOptions& opt);

}  // namespace vns
