#include "vns/navier_stokes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vns/errors.hpp"

namespace vns {

namespace {

// Multiply by exp(-nu |k|^2 tau), exactly.
void apply_heat(SpectralField& f, double nu, double tau) {
  const auto& g = *f.grid;
  for (auto& c : f.comp)
    for (int j2 = 0; j2 < g.n(); ++j2)
      for (int j1 = 0; j1 < g.nh(); ++j1) c(j1, j2) *= std::exp(-nu * g.ksq(j1, j2) * tau);
}

SpectralField heat(SpectralField f, double nu, double tau) {
  apply_heat(f, nu, tau);
  return f;
}

double energy(const SpectralField& u) {
  double n = l2_norm(u);
  return n * n;
}

SpectralField forcing_rate(const SpectralField& u, const DragSource& src, const SpectralField* force) {
  SpectralField F = SpectralField::zeros(u.grid, 2, u.time);
  if (!src.empty()) {
    if (!src.j.empty()) F += SpectralField::from_physical(u.grid, src.j, u.time);
    if (src.rho.size() != 0) F -= scalar_times(src.rho, u);
  }
  if (force) F += *force;
  return leray_project(dealias_filter(F));
}

}  // namespace

NsState make_ns_state(const SpectralField& u0) {
  NsState s;
  s.u = u0;
  s.time = u0.time;
  return s;
}

double max_speed(const SpectralField& u) { return PhysicalSampler(u).sup_norm(); }

SpectralField ns_explicit_rhs(const SpectralField& u, const DragSource& src, const SpectralField* force) {
  SpectralField r = forcing_rate(u, src, force);
  r -= leray_project(advection(u, u));
  return r;
}

NsState ns_step(const NsState& s, const DragSource& src, const SpectralField* force, const NsConfig& cfg,
                const SpectralField* impulse) {
  const double dt = cfg.dt;
  const int n = s.u.n();
  double umax = max_speed(s.u);
  if (umax * dt * n > cfg.cfl_limit)
    throw Error(ErrorKind::CflViolation, "fluid CFL number " + std::to_string(umax * dt * n) + " exceeds limit");

  SpectralField rhs = ns_explicit_rhs(s.u, src, force);
  NsState out;
  out.u = heat(s.u, cfg.viscosity, dt);
  if (!s.prev_rhs) {
    out.u += dt * heat(rhs, cfg.viscosity, dt);
  } else {
    out.u += (1.5 * dt) * heat(rhs, cfg.viscosity, dt);
    out.u -= (0.5 * dt) * heat(*s.prev_rhs, cfg.viscosity, 2.0 * dt);
  }
  if (impulse) out.u += heat(leray_project(dealias_filter(*impulse)), cfg.viscosity, 0.5 * dt);
  out.time = s.time + dt;
  out.u.time = out.time;
  out.prev_rhs = std::move(rhs);
  out.steps = s.steps + 1;

  double e0 = energy(s.u), e1 = energy(out.u);
  if (!std::isfinite(e1) || (e0 > 1e-300 && e1 > cfg.blowup_factor * e0))
    throw Error(ErrorKind::BlowupDetected, "fluid energy jumped from " + std::to_string(e0) + " to " +
                                               std::to_string(e1) + " at t=" + std::to_string(out.time));
  return out;
}

void EnergyLedger::start(const SpectralField& u0, double t0) {
  rec_.clear();
  double h12 = sobolev_norm(u0, 0.5, true);
  rec_.push_back({t0, energy(u0), 0.0, 0.0, h12 * h12, 0.0, 0.0});
  double g = sobolev_norm(u0, 1.0, true), gh = sobolev_norm(u0, 1.5, true);
  last_grad_ = g * g;
  last_grad_h12_ = gh * gh;
}

void EnergyLedger::record(const SpectralField& u, const SpectralField* forcing, double dt) {
  if (rec_.empty()) throw Error(ErrorKind::Config, "energy ledger used before start");
  double g = sobolev_norm(u, 1.0, true), gh = sobolev_norm(u, 1.5, true);
  double fm1 = 0.0, fh = 0.0;
  if (forcing) {
    SpectralField pf = leray_project(*forcing);
    fm1 = sobolev_norm(pf, -1.0);
    fh = sobolev_norm(pf, -0.5, true);
    fm1 *= fm1;
    fh *= fh;
  }
  // The forcing is piecewise constant over the step, so a rectangle rule is exact for it.
  EnergyRecord r = rec_.back();
  r.t += dt;
  r.energy = energy(u);
  double h12 = sobolev_norm(u, 0.5, true);
  r.h12 = h12 * h12;
  r.dissipation += 0.5 * dt * (last_grad_ + g * g);
  r.dissipation_h12 += 0.5 * dt * (last_grad_h12_ + gh * gh);
  r.forcing_h1 += dt * fm1;
  r.forcing_h12 += dt * fh;
  last_grad_ = g * g;
  last_grad_h12_ = gh * gh;
  rec_.push_back(r);
}

EnergyCheck check_energy_estimate(const EnergyLedger& ledger, double slack, double h12_const) {
  EnergyCheck ck;
  const auto& rs = ledger.records();
  if (rs.empty()) return ck;
  const auto& r0 = rs.front();
  for (const auto& r : rs) {
    double tau = r.t - r0.t;
    double lhs = r.energy + r.dissipation;
    double rhs = std::exp(tau) * (r0.energy + r.forcing_h1);
    double lhs2 = r.h12 + r.dissipation_h12;
    double rhs2 = std::exp(h12_const * r.dissipation) * (r0.h12 + r.forcing_h12);
    ck.t.push_back(r.t);
    ck.lhs_l2.push_back(lhs);
    ck.rhs_l2.push_back(rhs);
    ck.lhs_h12.push_back(lhs2);
    ck.rhs_h12.push_back(rhs2);
    auto ratio = [](double a, double b) { return b > 0.0 ? a / b : (a > 0.0 ? INFINITY : 0.0); };
    ck.max_ratio_l2 = std::max(ck.max_ratio_l2, ratio(lhs, rhs));
    ck.max_ratio_h12 = std::max(ck.max_ratio_h12, ratio(lhs2, rhs2));
  }
  ck.pass = ck.max_ratio_l2 <= 1.0 + slack && ck.max_ratio_h12 <= 1.0 + slack;
  return ck;
}

void EnergyLedger::write_csv(const std::string& path, double h12_const) const {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os << "t,E,dissipation,lhs_l2,rhs_l2,lhs_h12,rhs_h12,ratio_l2,ratio_h12,ratio\n";
  os.precision(12);
  auto ck = check_energy_estimate(*this, 0.0, h12_const);
  auto ratio = [](double a, double b) { return b > 0.0 ? a / b : 0.0; };
  for (size_t i = 0; i < ck.t.size(); ++i) {
    double r1 = ratio(ck.lhs_l2[i], ck.rhs_l2[i]), r2 = ratio(ck.lhs_h12[i], ck.rhs_h12[i]);
    os << ck.t[i] << "," << rec_[i].energy << "," << rec_[i].dissipation << "," << ck.lhs_l2[i] << ","
       << ck.rhs_l2[i] << "," << ck.lhs_h12[i] << "," << ck.rhs_h12[i] << "," << r1 << "," << r2 << ","
       << std::max(r1, r2) << "\n";
  }
}

std::vector<SpectralField> ns_solve(const SpectralField& u0, const std::vector<DragSource>& src,
                                    const std::vector<SpectralField>* forces, const NsConfig& cfg,
                                    EnergyLedger* ledger) {
  size_t steps = src.size();
  if (forces) steps = std::max(steps, forces->size());
  std::vector<SpectralField> traj;
  traj.reserve(steps + 1);
  traj.push_back(u0);
  NsState s = make_ns_state(u0);
  if (ledger) ledger->start(u0, u0.time);
  const DragSource none;
  for (size_t n = 0; n < steps; ++n) {
    const DragSource& d = n < src.size() ? src[n] : none;
    const SpectralField* f = (forces && n < forces->size()) ? &(*forces)[n] : nullptr;
    if (ledger) {
      SpectralField F = forcing_rate(s.u, d, f);
      s = ns_step(s, d, f, cfg);
      ledger->record(s.u, &F, cfg.dt);
    } else {
      s = ns_step(s, d, f, cfg);
    }
    traj.push_back(s.u);
  }
  return traj;
}

DragPicardResult solve_drag_picard(const SpectralField& u0, const std::vector<DragSource>& moments, double T,
                                   double tol, int max_iter, const NsConfig& cfg, double M, double jfbar_sup) {
  DragPicardResult res;
  size_t steps = static_cast<size_t>(std::llround(T / cfg.dt));
  if (moments.size() < steps) throw Error(ErrorKind::Config, "moment series shorter than the horizon");
  res.bound_rhs = 2.0 * std::exp(T) * (M * M + T * (1.0 + jfbar_sup * jfbar_sup));
  std::vector<SpectralField> prev(steps + 1, u0);
  for (int it = 1; it <= max_iter; ++it) {
    std::vector<SpectralField> cur;
    cur.reserve(steps + 1);
    cur.push_back(u0);
    NsState s = make_ns_state(u0);
    double dis = 0.0, sup_lhs = energy(u0);
    for (size_t n = 0; n < steps; ++n) {
      // Lagged drag: the friction term uses the previous iterate.
      DragSource d;
      SpectralField F = SpectralField::zeros(u0.grid, 2, s.time);
      if (!moments[n].j.empty()) F += SpectralField::from_physical(u0.grid, moments[n].j);
      if (moments[n].rho.size() != 0) F -= scalar_times(moments[n].rho, prev[n]);
      double g0 = sobolev_norm(s.u, 1.0, true);
      s = ns_step(s, d, &F, cfg);
      double g1 = sobolev_norm(s.u, 1.0, true);
      dis += 0.5 * cfg.dt * (g0 * g0 + g1 * g1);
      sup_lhs = std::max(sup_lhs, energy(s.u) + dis);
      cur.push_back(s.u);
    }
    double diff = 0.0;
    for (size_t n = 0; n <= steps; ++n) diff = std::max(diff, l2_norm(cur[n] - prev[n]));
    res.residuals.push_back(diff);
    res.bound_lhs.push_back(sup_lhs);
    if (sup_lhs > res.bound_rhs) res.bound_ok = false;
    res.iterations = it;
    prev = std::move(cur);
    if (diff < tol) {
      res.converged = true;
      res.trajectory = std::move(prev);
      return res;
    }
  }
  throw Error(ErrorKind::NoConvergence,
              "drag iteration did not converge in " + std::to_string(max_iter) + " sweeps");
}

}  // namespace vns
