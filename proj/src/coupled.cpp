#include "vns/coupled.hpp"

#include "vns/errors.hpp"

namespace vns {

ConservationSample conservation_sample(const PhaseSpaceDistribution& f, const SpectralField& u) {
  ConservationSample s;
  s.t = f.time;
  s.mass = f.mass();
  s.kinetic_momentum = f.momentum();
  Eigen::VectorXd m = mean_value(u);
  s.fluid_momentum = Vec2(m[0], m[1]);
  s.second_moment = f.second_moment();
  return s;
}

CoupledResult coupled_run(const PhaseSpaceDistribution& f0, const SpectralField& u0, long steps,
                          const CoupledConfig& cfg, const AbsorptionRule* absorber,
                          const std::function<const SpectralField*(long)>& force,
                          const std::function<void(long, const PhaseSpaceDistribution&, const SpectralField&)>& observe) {
  if (u0.n() != f0.nx) throw Error(ErrorKind::GridMismatch, "fluid and kinetic x grids differ");
  CoupledResult r;
  r.f = f0;
  NsState s = make_ns_state(u0);
  s.time = f0.time;
  s.u.time = f0.time;
  r.energy.start(s.u, s.time);
  r.ledger.push_back(conservation_sample(r.f, s.u));
  const double dt = cfg.ns.dt;
  std::vector<Grid2> u_prev;
  double clipped = 0.0, leak = 0.0, absorbed = 0.0;
  for (long n = 0; n < steps; ++n) {
    std::vector<Grid2> u_now = s.u.physical();
    std::vector<Grid2> u_half = u_now;
    if (cfg.extrapolate_drag && !u_prev.empty())
      for (int d = 0; d < 2; ++d) u_half[d] = 1.5 * u_now[d] - 0.5 * u_prev[d];
    std::vector<Grid2> imp;
    StepStats st = transport_step(r.f, dt, &u_half, &u_half, absorber, cfg.kinetic, &imp);
    clipped += st.clipped;
    leak += st.tail_leak;
    absorbed += st.absorbed;
    SpectralField impulse = SpectralField::from_physical(s.u.grid, imp, s.time);
    const SpectralField* F = force ? force(n) : nullptr;
    s = ns_step(s, DragSource{}, F, cfg.ns, &impulse);
    SpectralField rate = (1.0 / dt) * impulse;
    if (F) rate += *F;
    r.energy.record(s.u, &rate, dt);
    u_prev = std::move(u_now);
    ConservationSample cs = conservation_sample(r.f, s.u);
    cs.clipped = clipped;
    cs.tail_leak = leak;
    cs.absorbed = absorbed;
    r.ledger.push_back(cs);
    if (observe) observe(n, r.f, s.u);
  }
  r.u = s.u;
  return r;
}

}  // namespace vns
