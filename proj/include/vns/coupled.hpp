#pragma once

#include <functional>
#include <vector>

#include "vns/navier_stokes.hpp"
#include "vns/phase_space.hpp"

namespace vns {

struct CoupledConfig {
  NsConfig ns;
  TransportConfig kinetic;
  // Extrapolate the fluid velocity to the half step for the drag shifts.
  bool extrapolate_drag = true;
};

struct ConservationSample {
  double t = 0.0;
  double mass = 0.0;
  Vec2 kinetic_momentum{0.0, 0.0};
  Vec2 fluid_momentum{0.0, 0.0};
  double second_moment = 0.0;
  double clipped = 0.0;    // cumulative
  double tail_leak = 0.0;  // cumulative
  double absorbed = 0.0;   // cumulative
  Vec2 total_momentum() const { return kinetic_momentum + fluid_momentum; }
};

struct CoupledResult {
  PhaseSpaceDistribution f;
  SpectralField u;
  std::vector<ConservationSample> ledger;
  EnergyLedger energy;
};

ConservationSample conservation_sample(const PhaseSpaceDistribution& f, const SpectralField& u);

// Fully coupled fluid-kinetic integration over `steps` steps of cfg.ns.dt. The
// kinetic momentum change of each step is handed to the fluid, so total momentum
// is conserved up to roundoff when there is no external force. `observe` is called
// after every step.
CoupledResult coupled_run(const PhaseSpaceDistribution& f0, const SpectralField& u0, long steps,
                          const CoupledConfig& cfg, const AbsorptionRule* absorber = nullptr,
                          const std::function<const SpectralField*(long)>& force = nullptr,
                          const std::function<void(long, const PhaseSpaceDistribution&, const SpectralField&)>& observe =
                              nullptr);

}  // namespace vns
