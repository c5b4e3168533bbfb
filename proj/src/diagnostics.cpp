#include "vns/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

#include "vns/errors.hpp"

namespace vns {

namespace {

double grid_sup(const Grid2& a) { return a.size() ? a.abs().maxCoeff() : 0.0; }

double l2_mean(const std::vector<Grid2>& v) {
  double s = 0.0;
  for (const auto& c : v) s += c.square().mean();
  return s;
}

// C(t) at every step from the density of run f, trapezoid in time.
std::vector<double> growth_exponent(const RunRecord& run) {
  std::vector<double> C(run.rho.size(), 0.0);
  auto rate = [&](size_t k) {
    double r = grid_sup(run.rho[k]);
    return 1.0 + r + r * r;
  };
  for (size_t k = 1; k < run.rho.size(); ++k) C[k] = C[k - 1] + 0.5 * run.dt * (rate(k - 1) + rate(k));
  return C;
}

}  // namespace

RunRecord record_run(const PhaseSpaceDistribution& f0, const SpectralField& u0, long steps, const CoupledConfig& cfg,
                     const AbsorptionRule* absorber, const ForceFn& force) {
  RunRecord r;
  r.dt = cfg.ns.dt;
  r.gamma = f0.gamma;
  r.f_first = f0;
  auto push = [&](const PhaseSpaceDistribution& f, const SpectralField& u) {
    MomentPair m = moments(f);
    r.rho.push_back(std::move(m.rho));
    r.j.push_back(std::move(m.j));
    r.u.push_back(u);
  };
  push(f0, u0);
  r.result = coupled_run(f0, u0, steps, cfg, absorber, force,
                         [&](long, const PhaseSpaceDistribution& f, const SpectralField& u) { push(f, u); });
  r.f_last = r.result.f;
  return r;
}

double h12_squared(const SpectralField& f) {
  double s = sobolev_norm(f, 0.5, true);
  Eigen::VectorXd m = mean_value(f);
  return s * s + m.squaredNorm();
}

double weighted_c1(const PhaseSpaceDistribution& f, double power, bool with_v) {
  const int nx = f.nx, n = f.vg.n;
  double best = 0.0;
  for (int j2 = 0; j2 < n; ++j2)
    for (int j1 = 0; j1 < n; ++j1) {
      double w = std::pow(1.0 + Vec2(f.vg.center(j1), f.vg.center(j2)).norm(), power);
      for (int i2 = 0; i2 < nx; ++i2)
        for (int i1 = 0; i1 < nx; ++i1) {
          double a = f.at(i1, i2, j1, j2);
          double g = std::hypot(f.at((i1 + 1) % nx, i2, j1, j2) - a, f.at(i1, (i2 + 1) % nx, j1, j2) - a) * nx;
          if (with_v) {
            double d1 = j1 + 1 < n ? f.at(i1, i2, j1 + 1, j2) - a : 0.0;
            double d2 = j2 + 1 < n ? f.at(i1, i2, j1, j2 + 1) - a : 0.0;
            g += std::hypot(d1, d2) / f.vg.h();
          }
          best = std::max(best, w * (std::abs(a) + g));
        }
    }
  return best;
}

StabilityReport stability_check(const RunRecord& run_g, const RunRecord& run_f, double kappa_cap) {
  if (run_g.u.size() != run_f.u.size() || run_g.dt != run_f.dt || run_g.u.empty() ||
      run_g.u[0].n() != run_f.u[0].n() || run_g.f_first.data.size() != run_f.f_first.data.size())
    throw Error(ErrorKind::GridMismatch, "stability runs differ in grid or steps");
  StabilityReport rep;
  double p = run_f.gamma + 1.0;
  // Checked at the two recorded ends of each run.
  rep.kappa = std::max(weighted_c1(run_g.f_first, p) + weighted_c1(run_f.f_first, p),
                       weighted_c1(run_g.f_last, p) + weighted_c1(run_f.f_last, p));
  rep.hypothesis_ok = std::isfinite(rep.kappa) && rep.kappa <= kappa_cap;

  const double dt = run_f.dt;
  std::vector<double> C = growth_exponent(run_f);
  double diss = 0.0, src = 0.0, last_diss = 0.0, last_src = 0.0;
  for (size_t k = 0; k < run_f.u.size(); ++k) {
    SpectralField d = run_g.u[k] - run_f.u[k];
    SpectralField gd = grad(d);
    double g2 = h12_squared(gd);
    std::vector<Grid2> uf = run_f.u[k].physical();
    Grid2 drho = run_g.rho[k] - run_f.rho[k];
    std::vector<Grid2> s = {run_g.j[k][0] - run_f.j[k][0] - drho * uf[0], run_g.j[k][1] - run_f.j[k][1] - drho * uf[1]};
    double s2 = l2_mean(s);
    if (k > 0) {
      diss += 0.5 * dt * (last_diss + g2);
      src += 0.5 * dt * (last_src + s2);
    }
    last_diss = g2;
    last_src = s2;
    double lhs = h12_squared(d) + diss;
    if (k == 0) rep.initial_diff = lhs;
    double rhs = std::exp(C[k]) * (rep.initial_diff + src);
    rep.t.push_back(k * dt);
    rep.lhs.push_back(lhs);
    rep.rhs.push_back(rhs);
    rep.C.push_back(C[k]);
    rep.peak_lhs = std::max(rep.peak_lhs, lhs);
    if (k > 0 && rhs > 0.0) rep.max_prefactor = std::max(rep.max_prefactor, lhs / rhs);
  }
  return rep;
}

void StabilityReport::write_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os.precision(12);
  os << "t,lhs,rhs,C,ratio\n";
  for (size_t i = 0; i < t.size(); ++i)
    os << t[i] << "," << lhs[i] << "," << rhs[i] << "," << C[i] << "," << (rhs[i] > 0.0 ? lhs[i] / rhs[i] : 0.0) << "\n";
}

StabilitySweep stability_sweep(const PhaseSpaceDistribution& f0, const SpectralField& u0, const SpectralField& du,
                               const std::vector<double>& scales, long steps, const CoupledConfig& cfg) {
  StabilitySweep sw;
  RunRecord base = record_run(f0, u0, steps, cfg);
  for (double s : scales) {
    RunRecord pert = record_run(f0, u0 + s * du, steps, cfg);
    StabilityReport rep = stability_check(pert, base);
    sw.scales.push_back(s);
    sw.peak_lhs.push_back(rep.peak_lhs);
    sw.prefactor.push_back(rep.max_prefactor);
    sw.hypothesis_ok = sw.hypothesis_ok && rep.hypothesis_ok;
  }
  const size_t n = sw.scales.size();
  if (n >= 2) {
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
      mx += std::log(sw.scales[i]) / n;
      my += std::log(sw.peak_lhs[i]) / n;
    }
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double dx = std::log(sw.scales[i]) - mx;
      sxy += dx * (std::log(sw.peak_lhs[i]) - my);
      sxx += dx * dx;
    }
    sw.exponent = sxy / sxx;
  }
  auto [lo, hi] = std::minmax_element(sw.prefactor.begin(), sw.prefactor.end());
  sw.prefactor_spread = (n && *lo > 0.0) ? *hi / *lo : std::numeric_limits<double>::infinity();
  return sw;
}

TwinReport uniqueness_twin_check(const PhaseSpaceDistribution& f0, const SpectralField& u0, long steps,
                                 const CoupledConfig& cfg, const ForceFn& force) {
  TwinReport rep;
  rep.kappa_class = weighted_c1(f0, f0.gamma + 1.0, true);
  RunRecord a = record_run(f0, u0, steps, cfg, nullptr, force);
  RunRecord b = record_run(f0, u0, steps, cfg, nullptr, force);
  rep.repeat_f_diff = max_abs_diff(a.f_last, b.f_last);
  rep.repeat_u_diff = l2_norm(a.u.back() - b.u.back());

  PhaseSpaceDistribution g0 = f0;
  for (double& x : g0.data)
    if (x > 0.0) x = std::nextafter(x, std::numeric_limits<double>::infinity());
  rep.perturbed_f0 = max_abs_diff(g0, f0);
  RunRecord c = record_run(g0, u0, steps, cfg, nullptr, force);
  rep.perturbed_f_diff = max_abs_diff(c.f_last, a.f_last);
  rep.perturbed_u_diff = l2_norm(c.u.back() - a.u.back());
  rep.growth = rep.perturbed_f0 > 0.0 ? rep.perturbed_f_diff / rep.perturbed_f0 : 0.0;
  double T = steps * cfg.ns.dt;
  rep.growth_bound = std::exp(2.0 * T + growth_exponent(a).back());
  // One rounding per stencil term: an x shift and two velocity remaps per step.
  double terms = cfg.kinetic.x_order + 2.0 * cfg.kinetic.v_order;
  rep.roundoff_floor = steps * terms * std::numeric_limits<double>::epsilon() * std::max(f0.sup(), a.f_last.sup());
  return rep;
}

ConservationReport conservation_ledger(const CoupledResult& run, double slack, double h12_const) {
  ConservationReport rep;
  if (run.ledger.empty()) return rep;
  const auto& s0 = run.ledger.front();
  rep.mass0 = s0.mass;
  for (const auto& s : run.ledger) {
    double dm = std::abs(s.mass - s0.mass);
    rep.mass_drift = std::max(rep.mass_drift, s0.mass != 0.0 ? dm / std::abs(s0.mass) : dm);
    rep.momentum_drift = std::max(rep.momentum_drift, (s.total_momentum() - s0.total_momentum()).norm());
    rep.max_second_moment = std::max(rep.max_second_moment, s.second_moment);
  }
  const auto& last = run.ledger.back();
  rep.clipped = last.clipped;
  rep.tail_leak = last.tail_leak;
  rep.absorbed = last.absorbed;
  if (run.energy.started()) {
    EnergyCheck ck = check_energy_estimate(run.energy, slack, h12_const);
    rep.energy_ratio_l2 = ck.max_ratio_l2;
    rep.energy_ratio_h12 = ck.max_ratio_h12;
    rep.energy_pass = ck.pass;
  }
  return rep;
}

std::string ConservationReport::to_json() const {
  nlohmann::json j = {{"mass0", mass0},
                      {"mass_drift", mass_drift},
                      {"momentum_drift", momentum_drift},
                      {"max_second_moment", max_second_moment},
                      {"energy_ratio_l2", energy_ratio_l2},
                      {"energy_ratio_h12", energy_ratio_h12},
                      {"energy_pass", energy_pass},
                      {"clipped", clipped},
                      {"tail_leak", tail_leak},
                      {"absorbed", absorbed}};
  return j.dump();
}

void write_ledger_csv(const std::string& path, const CoupledResult& run) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os.precision(15);
  os << "t,mass,kin_p1,kin_p2,fluid_p1,fluid_p2,total_p1,total_p2,second_moment,clipped,tail_leak,absorbed\n";
  for (const auto& s : run.ledger) {
    Vec2 P = s.total_momentum();
    os << s.t << "," << s.mass << "," << s.kinetic_momentum[0] << "," << s.kinetic_momentum[1] << ","
       << s.fluid_momentum[0] << "," << s.fluid_momentum[1] << "," << P[0] << "," << P[1] << "," << s.second_moment
       << "," << s.clipped << "," << s.tail_leak << "," << s.absorbed << "\n";
  }
}

}  // namespace vns
