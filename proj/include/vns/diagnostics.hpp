#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "vns/coupled.hpp"

namespace vns {

// Fluid states and kinetic moments of a coupled run at every step, with the first and last distributions.
struct RunRecord {
  double dt = 0.0;
  double gamma = 3.0;
  std::vector<SpectralField> u;
  std::vector<Grid2> rho;
  std::vector<std::vector<Grid2>> j;
  PhaseSpaceDistribution f_first, f_last;
  CoupledResult result;
  long steps() const { return static_cast<long>(u.size()) - 1; }
};

using ForceFn = std::function<const SpectralField*(long)>;

RunRecord record_run(const PhaseSpaceDistribution& f0, const SpectralField& u0, long steps, const CoupledConfig& cfg,
                     const AbsorptionRule* absorber = nullptr, const ForceFn& force = nullptr);

// |mean|^2 + sum_{k != 0} |k| |c_k|^2
double h12_squared(const SpectralField& f);

// sup (1+|v|)^power (|f| + |grad_x f|) by forward differences; with_v adds |grad_v f|.
double weighted_c1(const PhaseSpaceDistribution& f, double power, bool with_v = false);

struct StabilityReport {
  std::vector<double> t, lhs, rhs, C;
  double initial_diff = 0.0;   // ||u^g(0) - u^f(0)||^2_{H^1/2}
  double max_prefactor = 0.0;  // max over t > 0 of lhs / rhs
  double peak_lhs = 0.0;
  double kappa = 0.0;          // weighted bound of the stability hypothesis over both runs
  bool hypothesis_ok = true;
  void write_csv(const std::string& path) const;
};

// lhs(t) = ||d(t)||^2_{H^1/2} + int_0^t ||grad d||^2_{H^1/2}, d = u^g - u^f;
// rhs(t) = e^{C(t)} (||d(0)||^2_{H^1/2} + int_0^t ||j_{g-f} - rho_{g-f} u^f||^2_{L2}),
// C(t) = int_0^t (1 + ||rho_f||_inf + ||rho_f||_inf^2).
// Throws GridMismatch when the runs differ in grid or step.
StabilityReport stability_check(const RunRecord& run_g, const RunRecord& run_f, double kappa_cap = 1e12);

struct StabilitySweep {
  std::vector<double> scales, peak_lhs, prefactor;
  double exponent = 0.0;         // least-squares slope of log peak_lhs against log scale
  double prefactor_spread = 0.0; // max / min prefactor
  bool hypothesis_ok = true;
  bool pass() const { return hypothesis_ok && exponent >= 1.8 && exponent <= 2.2 && prefactor_spread <= 2.0; }
};

// Runs from u0 + s du for each scale s against the run from u0, with the same kinetic data.
StabilitySweep stability_sweep(const PhaseSpaceDistribution& f0, const SpectralField& u0, const SpectralField& du,
                               const std::vector<double>& scales, long steps, const CoupledConfig& cfg);

struct TwinReport {
  double kappa_class = 0.0;     // (1+|v|)^{gamma+1}(|g| + |grad_{x,v} g|) at the start
  double repeat_f_diff = 0.0;   // identical twins
  double repeat_u_diff = 0.0;
  double perturbed_f0 = 0.0;    // 1-ulp perturbation size
  double perturbed_f_diff = 0.0;
  double perturbed_u_diff = 0.0;
  double growth = 0.0;          // perturbed_f_diff / perturbed_f0
  double growth_bound = 0.0;    // e^{2T + C(T)} from the base run
  double roundoff_floor = 0.0;  // steps * stencil terms * machine epsilon * sup|f|
  bool repeat_pass() const { return repeat_f_diff < 1e-6 && repeat_u_diff < 1e-6; }
  // A one-ulp change sits at roundoff level, so accumulated rounding is an admissible difference too.
  bool perturbed_pass() const { return perturbed_f_diff <= std::max(growth_bound * perturbed_f0, roundoff_floor); }
};

// Repeats the coupled run and reruns it with every positive entry of f0 moved by one ulp.
TwinReport uniqueness_twin_check(const PhaseSpaceDistribution& f0, const SpectralField& u0, long steps,
                                 const CoupledConfig& cfg, const ForceFn& force = nullptr);

struct ConservationReport {
  double mass0 = 0.0;
  double mass_drift = 0.0;      // max relative |m(t) - m(0)| (absolute when m(0) = 0)
  double momentum_drift = 0.0;  // max |P(t) - P(0)| of kinetic plus fluid momentum
  double max_second_moment = 0.0;
  double energy_ratio_l2 = 0.0, energy_ratio_h12 = 0.0;
  bool energy_pass = true;
  double clipped = 0.0, tail_leak = 0.0, absorbed = 0.0;
  std::string to_json() const;
};

ConservationReport conservation_ledger(const CoupledResult& run, double slack = 0.05, double h12_const = 1.0);
void write_ledger_csv(const std::string& path, const CoupledResult& run);

}  // namespace vns
