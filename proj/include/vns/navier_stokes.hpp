#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vns/fourier.hpp"

namespace vns {

// Kinetic moments seen by the fluid: rho and j = (j1, j2) on the physical grid.
// Empty arrays stand for zero.
struct DragSource {
  Grid2 rho;
  std::vector<Grid2> j;
  bool empty() const { return rho.size() == 0 && j.empty(); }
  static DragSource zero() { return {}; }
};

struct NsConfig {
  double dt = 1e-3;
  double cfl_limit = 0.5;
  double viscosity = 1.0;
  double blowup_factor = 1e3;
};

struct NsState {
  SpectralField u;
  double time = 0.0;
  // Explicit right-hand side of the previous step; absent before the first step.
  std::optional<SpectralField> prev_rhs;
  long steps = 0;
};

NsState make_ns_state(const SpectralField& u0);

// Explicit right-hand side P[-(u.grad)u + j - rho u + force], dealiased.
SpectralField ns_explicit_rhs(const SpectralField& u, const DragSource& src, const SpectralField* force);

// One integrating-factor step: exact diffusion, AB2 for the explicit terms,
// exponential Euler on the first step. `impulse` is a velocity increment added
// at mid-step (used by the coupled solver for exact momentum exchange).
NsState ns_step(const NsState& s, const DragSource& src, const SpectralField* force, const NsConfig& cfg,
                const SpectralField* impulse = nullptr);

double max_speed(const SpectralField& u);

struct EnergyRecord {
  double t;
  double energy;           // ||u||^2
  double dissipation;      // int_0^t ||grad u||^2
  double forcing_h1;       // int_0^t ||P F||^2_{H^-1}
  double h12;              // ||u||^2_{H^1/2_0}
  double dissipation_h12;  // int_0^t ||grad u||^2_{H^1/2_0}
  double forcing_h12;      // int_0^t ||P F||^2_{H^-1/2_0}
};

class EnergyLedger {
 public:
  void start(const SpectralField& u0, double t0 = 0.0);
  // Record the state after a step of length dt driven by total forcing rate F (may be null).
  void record(const SpectralField& u, const SpectralField* forcing, double dt);
  const std::vector<EnergyRecord>& records() const { return rec_; }
  bool started() const { return !rec_.empty(); }
  void write_csv(const std::string& path, double h12_const = 1.0) const;

 private:
  std::vector<EnergyRecord> rec_;
  double last_grad_ = 0.0, last_grad_h12_ = 0.0;
};

struct EnergyCheck {
  std::vector<double> t, lhs_l2, rhs_l2, lhs_h12, rhs_h12;
  double max_ratio_l2 = 0.0;
  double max_ratio_h12 = 0.0;
  bool pass = true;
};

// Runtime check of the L2 energy estimate and the H^1/2 propagation estimate.
// The exponential constant of the latter is not given explicitly; h12_const is used.
EnergyCheck check_energy_estimate(const EnergyLedger& ledger, double slack = 0.05, double h12_const = 1.0);

// Integrate with a time-dependent drag source sampled on the solver grid
// (src[n] applies on step n) and optional forces. Records the ledger if given.
std::vector<SpectralField> ns_solve(const SpectralField& u0, const std::vector<DragSource>& src,
                                    const std::vector<SpectralField>* forces, const NsConfig& cfg,
                                    EnergyLedger* ledger = nullptr);

struct DragPicardResult {
  std::vector<SpectralField> trajectory;
  int iterations = 0;
  std::vector<double> residuals;
  std::vector<double> bound_lhs;  // sup_t ||u||^2 + int ||grad u||^2 per iterate
  double bound_rhs = 0.0;
  bool bound_ok = true;
  bool converged = false;
};

// Lagged-drag iteration: each sweep solves NS with source j - rho * u_prev.
// Throws NoConvergence after max_iter sweeps.
DragPicardResult solve_drag_picard(const SpectralField& u0, const std::vector<DragSource>& moments, double T,
                                   double tol, int max_iter, const NsConfig& cfg, double M, double jfbar_sup);

}  // namespace vns
