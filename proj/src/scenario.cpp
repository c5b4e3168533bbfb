#include "vns/scenario.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "vns/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace vns {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::free_run: return "free_run";
    case Mode::reference_only: return "reference_only";
    case Mode::fixed_point: return "fixed_point";
    case Mode::full_control: return "full_control";
    case Mode::estimate_suite: return "estimate_suite";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::free_run, Mode::reference_only, Mode::fixed_point, Mode::full_control, Mode::estimate_suite})
    if (s == to_string(m)) return m;
  throw Error(ErrorKind::Config, "unknown mode '" + s + "'");
}

// ---- configuration ----

namespace {

json modes_json(const std::vector<ModeSpec>& v) {
  json a = json::array();
  for (const auto& m : v) a.push_back({{"m1", m.m1}, {"m2", m.m2}, {"amp", m.amp}, {"phase", m.phase}});
  return a;
}

std::vector<ModeSpec> modes_from(const json& a) {
  std::vector<ModeSpec> v;
  for (const auto& e : a) {
    for (auto it = e.begin(); it != e.end(); ++it)
      if (it.key() != "m1" && it.key() != "m2" && it.key() != "amp" && it.key() != "phase")
        throw Error(ErrorKind::Config, "unknown mode key '" + it.key() + "'");
    ModeSpec m;
    m.m1 = e.value("m1", m.m1);
    m.m2 = e.value("m2", m.m2);
    m.amp = e.value("amp", m.amp);
    m.phase = e.value("phase", m.phase);
    v.push_back(m);
  }
  return v;
}

}  // namespace

json RunConfig::to_json() const {
  json j;
  j["mode"] = to_string(mode);
  j["seed"] = seed;
  j["nx"] = nx;
  j["nv"] = nv;
  j["vmax"] = vmax;
  j["gamma"] = gamma;
  j["u0_modes"] = modes_json(u0_modes);
  j["M"] = M;
  j["f0_amplitude"] = f0_amplitude;
  j["f0_modes"] = modes_json(f0_modes);
  j["f0_shift"] = {f0_shift[0], f0_shift[1]};
  j["f0_profile"] = f0_profile;
  j["epsilon"] = epsilon;
  j["epsilon_fraction"] = epsilon_fraction;
  j["strip"] = {{"direction", {strip.direction[0], strip.direction[1]}},
                {"offset", strip.offset},
                {"half_width", strip.half_width}};
  j["fluid_dt"] = fluid_dt;
  j["kinetic_dt"] = kinetic_dt;
  j["T1"] = T1;
  j["T2"] = T2;
  j["stage4"] = stage4;
  j["coast_speed"] = coast_speed;
  j["T3_cap"] = T3_cap;
  j["knots"] = knots;
  j["penalty"] = penalty;
  j["control_max_iter"] = control_max_iter;
  j["control_tol"] = control_tol;
  j["certify"] = certify;
  j["lattice_nx"] = lattice_nx;
  j["lattice_nv"] = lattice_nv;
  j["tau1"] = tau1;
  j["tau2"] = tau2;
  j["picard_max_iter"] = picard_max_iter;
  j["picard_tol"] = picard_tol;
  j["store_every"] = store_every;
  j["holder_pairs"] = holder_pairs;
  j["c1"] = c1;
  j["c2"] = c2;
  j["c3"] = c3;
  j["horizon"] = horizon;
  j["free_dt"] = free_dt;
  j["stability_scales"] = stability_scales;
  j["stability_horizon"] = stability_horizon;
  j["tol_hit_fraction"] = tol_hit_fraction;
  j["tol_confinement"] = tol_confinement;
  j["tol_final_u"] = tol_final_u;
  j["tol_final_mass"] = tol_final_mass;
  j["tol_leak"] = tol_leak;
  j["tol_mass_drift"] = tol_mass_drift;
  j["tol_momentum_drift"] = tol_momentum_drift;
  return j;
}

RunConfig RunConfig::from_json(const json& in) {
  if (!in.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  RunConfig c;
  json j = c.to_json();
  for (auto it = in.begin(); it != in.end(); ++it)
    if (!j.contains(it.key())) throw Error(ErrorKind::Config, "unknown config key '" + it.key() + "'");
  j.update(in);
  try {
    c.mode = mode_from_string(j["mode"].get<std::string>());
    c.seed = j["seed"].get<unsigned>();
    c.nx = j["nx"].get<int>();
    c.nv = j["nv"].get<int>();
    c.vmax = j["vmax"].get<double>();
    c.gamma = j["gamma"].get<double>();
    c.u0_modes = modes_from(j["u0_modes"]);
    c.M = j["M"].get<double>();
    c.f0_amplitude = j["f0_amplitude"].get<double>();
    c.f0_modes = modes_from(j["f0_modes"]);
    auto sh = j["f0_shift"].get<std::vector<double>>();
    if (sh.size() != 2) throw Error(ErrorKind::Config, "f0_shift needs two entries");
    c.f0_shift = Vec2(sh[0], sh[1]);
    c.f0_profile = j["f0_profile"].get<std::string>();
    c.epsilon = j["epsilon"].get<double>();
    c.epsilon_fraction = j["epsilon_fraction"].get<double>();
    const json& st = j["strip"];
    for (auto it = st.begin(); it != st.end(); ++it)
      if (it.key() != "direction" && it.key() != "offset" && it.key() != "half_width")
        throw Error(ErrorKind::Config, "unknown strip key '" + it.key() + "'");
    auto dir = st.value("direction", std::vector<double>{1.0, 0.0});
    if (dir.size() != 2) throw Error(ErrorKind::Config, "strip direction needs two entries");
    c.strip.direction = Vec2(dir[0], dir[1]);
    c.strip.offset = st.value("offset", c.strip.offset);
    c.strip.half_width = st.value("half_width", c.strip.half_width);
    c.fluid_dt = j["fluid_dt"].get<double>();
    c.kinetic_dt = j["kinetic_dt"].get<double>();
    c.T1 = j["T1"].get<double>();
    c.T2 = j["T2"].get<double>();
    c.stage4 = j["stage4"].get<double>();
    c.coast_speed = j["coast_speed"].get<double>();
    c.T3_cap = j["T3_cap"].get<double>();
    c.knots = j["knots"].get<int>();
    c.penalty = j["penalty"].get<double>();
    c.control_max_iter = j["control_max_iter"].get<int>();
    c.control_tol = j["control_tol"].get<double>();
    c.certify = j["certify"].get<bool>();
    c.lattice_nx = j["lattice_nx"].get<int>();
    c.lattice_nv = j["lattice_nv"].get<int>();
    c.tau1 = j["tau1"].get<double>();
    c.tau2 = j["tau2"].get<double>();
    c.picard_max_iter = j["picard_max_iter"].get<int>();
    c.picard_tol = j["picard_tol"].get<double>();
    c.store_every = j["store_every"].get<int>();
    c.holder_pairs = j["holder_pairs"].get<int>();
    c.c1 = j["c1"].get<double>();
    c.c2 = j["c2"].get<double>();
    c.c3 = j["c3"].get<double>();
    c.horizon = j["horizon"].get<double>();
    c.free_dt = j["free_dt"].get<double>();
    c.stability_scales = j["stability_scales"].get<std::vector<double>>();
    c.stability_horizon = j["stability_horizon"].get<double>();
    c.tol_hit_fraction = j["tol_hit_fraction"].get<double>();
    c.tol_confinement = j["tol_confinement"].get<double>();
    c.tol_final_u = j["tol_final_u"].get<double>();
    c.tol_final_mass = j["tol_final_mass"].get<double>();
    c.tol_leak = j["tol_leak"].get<double>();
    c.tol_mass_drift = j["tol_mass_drift"].get<double>();
    c.tol_momentum_drift = j["tol_momentum_drift"].get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad config value: ") + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::Config, "cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os << to_json().dump(2) << "\n";
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorKind::Config, what);
  };
  need(nx >= 8 && nx % 2 == 0, "nx must be even and at least 8");
  need(nv >= 4, "nv must be at least 4");
  need(vmax > 0.0, "vmax must be positive");
  need(gamma > 2.0, "gamma must exceed 2");
  need(f0_profile == "algebraic" || f0_profile == "gaussian", "f0_profile must be algebraic or gaussian");
  need(epsilon >= 0.0 && epsilon_fraction > 0.0 && epsilon_fraction <= 1.0, "need epsilon >= 0 and epsilon_fraction in (0, 1]");
  need(fluid_dt > 0.0 && kinetic_dt > 0.0 && free_dt > 0.0, "time steps must be positive");
  double r = kinetic_dt / fluid_dt;
  need(std::abs(r - std::round(r)) < 1e-9, "kinetic_dt must be a multiple of fluid_dt");
  need(0.0 < T1 && T1 < T2 && stage4 > 0.0, "need 0 < T1 < T2 and stage4 > 0");
  need(tau1 > 0.0 && tau2 > 0.0, "terminal stage lengths must be positive");
  need(strip.direction.norm() > 0.0 && strip.half_width > 0.0, "strip needs a direction and a positive half width");
  need(knots >= 2 && control_max_iter >= 1 && control_tol > 0.0, "bad control settings");
  need(picard_max_iter >= 1 && picard_tol >= 0.0 && store_every >= 1 && holder_pairs >= 0, "bad fixed-point settings");
  need(c1 >= 0.0 && c2 >= 0.0 && c3 >= 0.0, "constant overrides must be nonnegative");
  need(horizon > 0.0 && stability_horizon > 0.0, "horizons must be positive");
  need(!stability_scales.empty(), "stability_scales must not be empty");
  for (double s : stability_scales) need(s > 0.0, "stability scales must be positive");
  need(lattice_nx >= 1 && lattice_nv >= 2, "bad seed lattice");
  need(M >= 0.0, "M must be nonnegative");
}

OmegaSpec RunConfig::omega() const {
  OmegaSpec om;
  om.strips.push_back(strip);
  return om;
}

SpectralField RunConfig::initial_field(GridPtr g) const {
  const int n = g->n();
  std::vector<Grid2> v(2, Grid2::Zero(n, n));
  for (const auto& m : u0_modes) {
    double L = std::hypot(m.m1, m.m2);
    if (L == 0.0) continue;
    for (int i2 = 0; i2 < n; ++i2)
      for (int i1 = 0; i1 < n; ++i1) {
        double s = m.amp * std::sin(2.0 * M_PI * (m.m1 * double(i1) / n + m.m2 * double(i2) / n) + m.phase);
        v[0](i1, i2) += -m.m2 / L * s;
        v[1](i1, i2) += m.m1 / L * s;
      }
  }
  return SpectralField::from_physical(g, v);
}

InitialProfile RunConfig::initial_profile() const {
  InitialProfile p;
  p.amplitude = f0_amplitude;
  for (const auto& m : f0_modes) p.modes.push_back({m.m1, m.m2, m.amp, m.phase});
  p.vprofile = f0_profile == "gaussian" ? VelocityProfile::gaussian : VelocityProfile::algebraic;
  p.gamma = gamma;
  p.shift = f0_shift;
  return p;
}

// ---- control extraction ----

json ControlReport::to_json() const {
  return {{"t", t}, {"l2_total", l2_total}, {"l2_outside", l2_outside}, {"dt_scale", dt_scale},
          {"leakage", leakage}, {"relative", relative}, {"modulus", modulus}};
}

ControlReport extract_control(const std::vector<ControlSlice>& slices, const OmegaSpec& omega) {
  if (slices.empty()) throw Error(ErrorKind::InsufficientCheckpoints, "control extraction needs at least one slice triple");
  ControlReport rep;
  double tot = 0.0, out = 0.0, scale = 0.0, gsup = 0.0, jump = 0.0;
  for (const auto& s : slices) {
    const auto &a = s.before, &m = s.mid, &b = s.after;
    double dt = m.time - a.time;
    if (!(dt > 0.0) || std::abs((b.time - m.time) - dt) > 1e-9 * dt || a.data.size() != m.data.size() ||
        b.data.size() != m.data.size())
      throw Error(ErrorKind::InsufficientCheckpoints, "slices must be equally spaced in time on one grid");
    const int nx = m.nx, n = m.vg.n;
    const double h = m.vg.h(), vol = m.cell_volume();
    std::vector<Grid2> u = s.u.physical();
    std::vector<bool> inside(m.block());
    for (int i2 = 0; i2 < nx; ++i2)
      for (int i1 = 0; i1 < nx; ++i1) inside[i2 * nx + i1] = omega.contains(Vec2(double(i1) / nx, double(i2) / nx));
    PhaseSpaceDistribution G = m;
    double st = 0.0, so = 0.0, sd = 0.0;
    auto q = [&](int d, int i1, int i2, int j1, int j2) {
      if (j1 < 0 || j1 >= n || j2 < 0 || j2 >= n) return 0.0;
      double v = m.vg.center(d == 0 ? j1 : j2);
      return (u[d](i1, i2) - v) * m.at(i1, i2, j1, j2);
    };
    for (int j2 = 0; j2 < n; ++j2)
      for (int j1 = 0; j1 < n; ++j1) {
        Vec2 v(m.vg.center(j1), m.vg.center(j2));
        for (int i2 = 0; i2 < nx; ++i2)
          for (int i1 = 0; i1 < nx; ++i1) {
            double ft = (b.at(i1, i2, j1, j2) - a.at(i1, i2, j1, j2)) / (2.0 * dt);
            double fx1 = (m.at((i1 + 1) % nx, i2, j1, j2) - m.at((i1 + nx - 1) % nx, i2, j1, j2)) * 0.5 * nx;
            double fx2 = (m.at(i1, (i2 + 1) % nx, j1, j2) - m.at(i1, (i2 + nx - 1) % nx, j1, j2)) * 0.5 * nx;
            double dv = (q(0, i1, i2, j1 + 1, j2) - q(0, i1, i2, j1 - 1, j2) + q(1, i1, i2, j1, j2 + 1) -
                         q(1, i1, i2, j1, j2 - 1)) / (2.0 * h);
            double g = ft + v[0] * fx1 + v[1] * fx2 + dv;
            G.at(i1, i2, j1, j2) = g;
            st += g * g * vol;
            sd += ft * ft * vol;
            if (!inside[i2 * nx + i1]) so += g * g * vol;
          }
      }
    for (int j2 = 0; j2 < n; ++j2)
      for (int j1 = 0; j1 < n; ++j1)
        for (int i2 = 0; i2 < nx; ++i2)
          for (int i1 = 0; i1 < nx; ++i1) {
            double g = G.at(i1, i2, j1, j2);
            gsup = std::max(gsup, std::abs(g));
            jump = std::max({jump, std::abs(G.at((i1 + 1) % nx, i2, j1, j2) - g), std::abs(G.at(i1, (i2 + 1) % nx, j1, j2) - g)});
          }
    rep.t.push_back(m.time);
    rep.l2_total.push_back(std::sqrt(st));
    rep.l2_outside.push_back(std::sqrt(so));
    rep.dt_scale.push_back(std::sqrt(sd));
    tot += st;
    out += so;
    scale += sd;
  }
  rep.leakage = tot > 0.0 ? std::sqrt(out / tot) : 0.0;
  rep.relative = scale > 0.0 ? std::sqrt(tot / scale) : 0.0;
  rep.modulus = gsup > 0.0 ? jump / gsup : 0.0;
  return rep;
}

// ---- scenario ----

namespace {

using Clock = std::chrono::steady_clock;

struct Outputs {
  fs::path dir;
  json timing = json::object();
  Clock::time_point t0 = Clock::now();
  void lap(const std::string& name) {
    auto now = Clock::now();
    timing[name] = std::chrono::duration<double>(now - t0).count();
    t0 = now;
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  std::string ckpt(const std::string& name) const { return (dir / "checkpoints" / name).string(); }
};

double l2(const SpectralField& u) { return l2_norm(u); }

double ratio(double a, double b) { return b > 0.0 ? a / b : a; }

// Entries that replay recomputes from checkpoint files; same function in both places.
json checkpoint_metrics(const fs::path& dir, const RunConfig& cfg) {
  json m = json::object();
  auto has = [&](const std::string& n) { return fs::exists(dir / "checkpoints" / n); };
  auto ck = [&](const std::string& n) { return (dir / "checkpoints" / n).string(); };
  OmegaSpec om = cfg.omega();
  auto outside = [&](const Vec2& x) { return !om.contains(x); };
  double mass0 = 0.0;
  if (has("f0.vnsd")) {
    PhaseSpaceDistribution f0 = read_distribution(ck("f0.vnsd"));
    mass0 = f0.mass();
    m["initial_mass"] = mass0;
    m["initial_sup"] = f0.sup();
  }
  if (has("u0.vnsf")) m["initial_u_l2"] = l2(read_snapshot(ck("u0.vnsf")));
  if (has("f_T.vnsd")) {
    PhaseSpaceDistribution f = read_distribution(ck("f_T.vnsd"));
    m["T_mass"] = f.mass();
    m["T_sup"] = f.sup();
    m["T_mass_outside"] = f.mass_where(outside);
    m["T_sup_outside"] = f.sup_where(outside);
    m["T_mass_outside_ratio"] = ratio(f.mass_where(outside), mass0);
  }
  if (has("u_T.vnsf")) m["T_u_l2"] = l2(read_snapshot(ck("u_T.vnsf")));
  if (has("f_final.vnsd")) {
    PhaseSpaceDistribution f = read_distribution(ck("f_final.vnsd"));
    m["final_mass"] = f.mass();
    m["final_sup"] = f.sup();
    m["final_sup_outside"] = f.sup_where(outside);
    m["final_mass_ratio"] = ratio(f.mass(), mass0);
  }
  if (has("u_final.vnsf")) {
    double uf = l2(read_snapshot(ck("u_final.vnsf")));
    m["final_u_l2"] = uf;
    if (has("u0.vnsf")) m["final_u_ratio"] = ratio(uf, l2(read_snapshot(ck("u0.vnsf"))));
  }
  return m;
}

ReferenceConfig reference_config(const RunConfig& cfg) {
  ReferenceConfig rc;
  rc.n = cfg.nx;
  rc.fluid_dt = cfg.fluid_dt;
  rc.kinetic_dt = cfg.kinetic_dt;
  rc.T1 = cfg.T1;
  rc.T2 = cfg.T2;
  rc.stage4 = cfg.stage4;
  rc.T3_cap = cfg.T3_cap;
  rc.coast_speed = cfg.coast_speed;
  rc.control.knots = cfg.knots;
  rc.control.penalty = cfg.penalty;
  rc.control.max_iter = cfg.control_max_iter;
  rc.control.tolerance = cfg.control_tol;
  rc.control.seed = cfg.seed;
  rc.certify = cfg.certify;
  rc.lattice.nx = cfg.lattice_nx;
  rc.lattice.nv = cfg.lattice_nv;
  return rc;
}

ControlOptions control_options(const RunConfig& cfg) {
  ControlOptions co = reference_config(cfg).control;
  co.ns.dt = cfg.fluid_dt;
  return co;
}

// Energy estimate along a controlled fluid trajectory with its force as forcing.
EnergyCheck control_energy(const ControlResult& r) {
  EnergyLedger led;
  if (r.trajectory.empty()) return check_energy_estimate(led);
  led.start(r.trajectory.front(), r.trajectory.front().time);
  for (size_t k = 0; k + 1 < r.trajectory.size(); ++k) {
    const SpectralField& u = r.trajectory[k + 1];
    double dt = u.time - r.trajectory[k].time;
    if (k < r.force.w.size()) {
      SpectralField F = SpectralField::from_physical(u.grid, r.force.w[k], u.time);
      led.record(u, &F, dt);
    } else {
      led.record(u, nullptr, dt);
    }
  }
  return check_energy_estimate(led);
}

json energy_json(const EnergyCheck& c) {
  return {{"ratio_l2", c.max_ratio_l2}, {"ratio_h12", c.max_ratio_h12}, {"pass", c.pass}};
}

json reference_json(const ReferenceTrajectory& ref, const RunConfig& cfg) {
  const auto& S = ref.schedule;
  json j;
  j["schedule"] = {{"T1", S.T1}, {"T2", S.T2}, {"T3", S.T3}, {"T4", S.T4}, {"Lambda0", S.Lambda0}, {"d0", S.d0},
                   {"u2_l1linf", S.u2_l1linf}, {"t3_first", S.t3_first(S.T3)}, {"t3_second", S.t3_second(S.T3)}};
  j["stage2"] = {{"iterations", ref.stage2.iterations}, {"terminal_error", ref.stage2.terminal_error},
                 {"termination", ref.stage2.termination}, {"force_sup", ref.stage2.force.sup_norm()}};
  j["stage4"] = {{"iterations", ref.stage4.iterations}, {"terminal_error", ref.stage4.terminal_error},
                 {"termination", ref.stage4.termination}, {"force_sup", ref.stage4.force.sup_norm()}};
  j["stage2"]["energy"] = energy_json(control_energy(ref.stage2));
  j["stage4"]["energy"] = energy_json(control_energy(ref.stage4));
  j["support_leak"] = ref.support_leak;
  j["terminal_u"] = ref.terminal_u;
  j["terminal_f"] = ref.terminal_f;
  j["jbar_linf_l2"] = ref.jbar_linf_l2();
  j["l2_linf"] = ref.l2_linf();
  if (cfg.certify) {
    j["hitting"] = json::parse(ref.hitting.to_json());
    j["case1"] = {{"seeds", ref.case1_seeds}, {"hits", ref.case1_hits}};
  }
  return j;
}

void check_reference(const ReferenceTrajectory& ref, const RunConfig& cfg, RunReport& rep) {
  if (!ref.schedule.feasible()) rep.misses.push_back("schedule inequalities");
  if (ref.support_leak > cfg.tol_leak) rep.misses.push_back("control support leakage");
  if (!control_energy(ref.stage2).pass || !control_energy(ref.stage4).pass) rep.misses.push_back("energy inequality");
  if (cfg.certify) {
    if (ref.hitting.fraction < cfg.tol_hit_fraction) rep.misses.push_back("hitting fraction");
    if (ref.case1_hits < ref.case1_seeds) rep.misses.push_back("fast seeds hitting before T1");
  }
}

// Triples of kinetic steps (k-1, k, k+1) at a quarter, half and three quarters of the horizon.
std::vector<long> triple_centers(long steps) {
  std::vector<long> c;
  for (long q : {steps / 4, steps / 2, (3 * steps) / 4})
    if (q >= 1 && q + 1 <= steps && (c.empty() || c.back() != q)) c.push_back(q);
  return c;
}

std::vector<long> triple_steps(long steps) {
  std::vector<long> s;
  for (long c : triple_centers(steps))
    for (long k : {c - 1, c, c + 1}) s.push_back(k);
  return s;
}

void run_free(const RunConfig& cfg, Outputs& out, RunReport& rep) {
  GridPtr g = make_grid(cfg.nx);
  SpectralField u0 = cfg.initial_field(g);
  PhaseSpaceDistribution f0 = from_profile(cfg.nx, cfg.velocity_grid(), cfg.initial_profile());
  write_distribution(out.ckpt("f0.vnsd"), f0);
  write_snapshot(out.ckpt("u0.vnsf"), u0);
  CoupledConfig cc;
  cc.ns.dt = cfg.free_dt;
  long steps = std::lround(cfg.horizon / cfg.free_dt);
  auto keep = triple_steps(steps);
  std::vector<PhaseSpaceDistribution> kept;
  std::vector<SpectralField> kept_u;
  CoupledResult r = coupled_run(f0, u0, steps, cc, nullptr, nullptr,
                                [&](long n, const PhaseSpaceDistribution& f, const SpectralField& u) {
                                  if (std::find(keep.begin(), keep.end(), n + 1) != keep.end()) {
                                    kept.push_back(f);
                                    kept_u.push_back(u);
                                  }
                                });
  out.lap("coupled_run");
  write_distribution(out.ckpt("f_T.vnsd"), r.f);
  write_snapshot(out.ckpt("u_T.vnsf"), r.u);
  write_ledger_csv(out.path("conservation.csv"), r);
  r.energy.write_csv(out.path("energy.csv"));
  ConservationReport cons = conservation_ledger(r);
  rep.data["conservation"] = json::parse(cons.to_json());
  std::vector<ControlSlice> sl;
  for (size_t i = 0; i + 2 < kept.size(); i += 3) sl.push_back({kept[i], kept[i + 1], kept[i + 2], kept_u[i + 1]});
  rep.data["control"] = extract_control(sl, cfg.omega()).to_json();
  out.lap("diagnostics");
  if (cons.mass_drift > cfg.tol_mass_drift) rep.misses.push_back("mass drift");
  if (cons.momentum_drift > cfg.tol_momentum_drift) rep.misses.push_back("momentum drift");
  if (!cons.energy_pass) rep.misses.push_back("energy inequality");
}

ReferenceTrajectory make_reference(const RunConfig& cfg, Outputs& out, RunReport& rep) {
  OmegaSpec om = cfg.omega();
  StripGeometry strip = build_strip(om, 1.0, 0.0);
  ReferenceTrajectory ref = build_reference(strip, reference_config(cfg), &om);
  out.lap("reference");
  rep.data["reference"] = reference_json(ref, cfg);
  check_reference(ref, cfg, rep);
  return ref;
}

void run_fixed_point(const RunConfig& cfg, Outputs& out, RunReport& rep, bool terminal) {
  ReferenceTrajectory ref = make_reference(cfg, out, rep);
  const double T = ref.schedule.T();
  SpectralField u0 = cfg.initial_field(ref.grid);
  double h12 = sobolev_norm(u0, 0.5);
  if (cfg.M > 0.0 && h12 > cfg.M) throw Error(ErrorKind::Config, "||u0||_{H^1/2} exceeds M");
  write_snapshot(out.ckpt("u0.vnsf"), u0);

  FixedPointConfig fpc;
  fpc.S.T = T;
  fpc.S.gamma = cfg.gamma;
  fpc.S.M = cfg.M > 0.0 ? cfg.M : h12;
  fpc.S.jbar = ref.jbar_linf_l2();
  fpc.vg = cfg.velocity_grid();
  fpc.kinetic_dt = cfg.kinetic_dt;
  fpc.max_iter = cfg.picard_max_iter;
  fpc.tol = cfg.picard_tol;
  fpc.store_every = cfg.store_every;
  fpc.holder_pairs = cfg.holder_pairs;
  fpc.seed = cfg.seed;
  long steps = std::lround(T / cfg.kinetic_dt);
  fpc.extra_steps = triple_steps(steps);

  MeasuredConstants K = measure_constants(ref, u0, fpc);
  ref.strip.delta = choose_delta(ref.strip.delta0, T, K.K1);
  fpc.S.set_constants(K);
  if (cfg.c1 > 0.0) fpc.S.c1 = cfg.c1;
  if (cfg.c2 > 0.0) fpc.S.c2 = cfg.c2;
  if (cfg.c3 > 0.0) fpc.S.c3 = cfg.c3;
  fpc.S.set_cap();
  fpc.S.epsilon = cfg.epsilon > 0.0 ? cfg.epsilon : cfg.epsilon_fraction * fpc.S.epsilon0;
  if (!fpc.S.valid()) throw Error(ErrorKind::Config, "epsilon exceeds the cap epsilon0");
  out.lap("constants");

  InitialProfile prof = cfg.initial_profile().scaled_to(fpc.S.epsilon);
  fpc.data_norm = prof.smallness();
  PhaseSpaceDistribution f0 = from_profile(cfg.nx, fpc.vg, prof);
  write_distribution(out.ckpt("f0.vnsd"), f0);

  const auto& S = fpc.S;
  rep.data["constants"] = {{"K1", K.K1}, {"K2", K.K2}, {"K3", K.K3}, {"K5", S.K.K5}, {"K6", S.K.K6},
                           {"lipschitz", K.lipschitz}, {"c1", S.c1}, {"c2", S.c2}, {"c3", S.c3}, {"I", S.I},
                           {"M", S.M}, {"jbar", S.jbar}, {"epsilon0", S.epsilon0}, {"epsilon", S.epsilon},
                           {"delta", ref.strip.delta}, {"delta1", S.delta1()}, {"delta2", S.delta2()},
                           {"data_norm", fpc.data_norm}};

  PicardResult pr = picard_iterate(ref, f0, u0, fpc, cfg.omega());
  out.lap("picard");
  pr.write_trace_csv(out.path("picard_trace.csv"));
  json trace = json::array();
  bool members = true, monotone = true;
  double kmin = 1e300, kmax = 0.0;
  for (size_t i = 0; i < pr.trace.size(); ++i) {
    const auto& s = pr.trace[i];
    members = members && s.m.pass();
    if (i > 0 && s.sup_diff >= pr.trace[i - 1].sup_diff) monotone = false;
    kmin = std::min(kmin, s.K1);
    kmax = std::max(kmax, s.K1);
    trace.push_back({{"k", s.k}, {"sup_diff", s.sup_diff}, {"a", {s.m.a_value, s.m.a_bound}},
                     {"b", {s.m.b_value, s.m.b_bound}}, {"c", {s.m.c_value, s.m.c_bound}}, {"pass", s.m.pass()},
                     {"K1", s.K1}, {"jg", {s.jg_lhs, s.jg_rhs}}, {"jg_pass", s.jg_lhs <= s.jg_rhs}});
  }
  double k1_spread = kmin > 0.0 ? (kmax - kmin) / kmin : 0.0;
  double contraction = pr.trace.size() >= 2 && pr.trace[pr.trace.size() - 2].sup_diff > 0.0
                           ? pr.trace.back().sup_diff / pr.trace[pr.trace.size() - 2].sup_diff
                           : 0.0;
  rep.data["fixed_point"] = {{"converged", pr.converged}, {"iterations", pr.trace.size()}, {"trace", trace},
                             {"monotone", monotone}, {"contraction_ratio", contraction}, {"K1_spread", k1_spread},
                             {"u_consistency", pr.u_consistency}, {"energy", energy_json(pr.energy)}, {"lemma_b", {pr.lemma_b_max, pr.lemma_b_bound}},
                             {"confinement_sup", pr.confinement_sup}, {"mass_outside", pr.mass_outside},
                             {"absorbed", pr.absorbed}, {"hoelder_norms", "sampled lower bounds"}};
  if (!members) rep.misses.push_back("membership");
  if (!monotone) rep.misses.push_back("monotone Picard differences");
  if (k1_spread >= 0.1) rep.misses.push_back("K1 uniformity");
  if (pr.lemma_b_max > pr.lemma_b_bound) rep.misses.push_back("characteristic speed bound");
  if (!pr.energy.pass) rep.misses.push_back("energy inequality");

  // Residual of the perturbation under its own field, at the stored time triples.
  std::vector<ControlSlice> sl;
  for (long c : triple_centers(steps)) {
    const auto *a = pr.g.slice_at(c - 1), *m = pr.g.slice_at(c), *b = pr.g.slice_at(c + 1);
    if (a && m && b) sl.push_back({*a, *m, *b, pr.u[c]});
  }
  rep.data["control_fixed_point"] = extract_control(sl, cfg.omega()).to_json();

  const PhaseSpaceDistribution& gT = pr.g.slices.back();
  write_distribution(out.ckpt("f_T.vnsd"), gT);
  write_snapshot(out.ckpt("u_T.vnsf"), pr.u.back());
  json cm = checkpoint_metrics(out.dir, cfg);
  if (cm["T_mass_outside_ratio"].get<double>() > cfg.tol_confinement) rep.misses.push_back("confinement at T");
  out.lap("fixed_point_diagnostics");
  if (!terminal) return;

  ControlOptions co = control_options(cfg);
  TerminalStages ts = terminal_stages(gT, pr.u.back(), cfg.tau1, cfg.tau2, ref.strip, co);
  out.lap("terminal_stages");
  write_distribution(out.ckpt("f_final.vnsd"), ts.f_flat(cfg.tau1));
  write_snapshot(out.ckpt("u_final.vnsf"), ts.sharp.trajectory.back());
  // Stage joins: the terminal stages start from the state reached at T.
  double u_jump = l2(ts.u_flat.front() - pr.u.back());
  double f_jump = max_abs_diff(ts.f_flat(0.0), gT);
  rep.data["terminal"] = {{"tau1", cfg.tau1}, {"tau2", cfg.tau2}, {"T_final", T + cfg.tau1 + cfg.tau2},
                          {"sharp_iterations", ts.sharp.iterations}, {"sharp_termination", ts.sharp.termination},
                          {"sharp_force_sup", ts.sharp.force.sup_norm()},
                          {"sharp_leak", ts.sharp.force.leak_outside(cfg.omega())}, {"join_u", u_jump},
                          {"join_f", f_jump}, {"sharp_energy", energy_json(control_energy(ts.sharp))}};
  if (!control_energy(ts.sharp).pass) rep.misses.push_back("energy inequality");
  cm = checkpoint_metrics(out.dir, cfg);
  if (cm["final_u_ratio"].get<double>() > cfg.tol_final_u) rep.misses.push_back("final field norm");
  if (cm["final_mass_ratio"].get<double>() > cfg.tol_final_mass) rep.misses.push_back("final mass");
}

void run_estimates(const RunConfig& cfg, Outputs& out, RunReport& rep) {
  GridPtr g = make_grid(cfg.nx);
  SpectralField u0 = cfg.initial_field(g);
  PhaseSpaceDistribution f0 = from_profile(cfg.nx, cfg.velocity_grid(), cfg.initial_profile());
  write_distribution(out.ckpt("f0.vnsd"), f0);
  write_snapshot(out.ckpt("u0.vnsf"), u0);
  CoupledConfig cc;
  cc.ns.dt = cfg.free_dt;
  // Perturbation direction: unit-amplitude divergence-free (1, 1) mode.
  RunConfig pc = cfg;
  pc.u0_modes = {{1, 1, 1.0, 0.3}};
  SpectralField du = pc.initial_field(g);
  long ssteps = std::lround(cfg.stability_horizon / cfg.free_dt);
  StabilitySweep sw = stability_sweep(f0, u0, du, cfg.stability_scales, ssteps, cc);
  out.lap("stability");
  rep.data["stability"] = {{"scales", sw.scales}, {"peak_lhs", sw.peak_lhs}, {"prefactor", sw.prefactor},
                           {"exponent", sw.exponent}, {"prefactor_spread", sw.prefactor_spread},
                           {"hypothesis_ok", sw.hypothesis_ok}, {"pass", sw.pass()}};
  if (!sw.pass()) rep.misses.push_back("stability sweep");

  TwinReport tw = uniqueness_twin_check(f0, u0, ssteps, cc);
  out.lap("twin");
  rep.data["twin"] = {{"kappa_class", tw.kappa_class}, {"repeat_f_diff", tw.repeat_f_diff},
                      {"repeat_u_diff", tw.repeat_u_diff}, {"perturbed_f0", tw.perturbed_f0},
                      {"perturbed_f_diff", tw.perturbed_f_diff}, {"perturbed_u_diff", tw.perturbed_u_diff},
                      {"growth", tw.growth}, {"growth_bound", tw.growth_bound}, {"roundoff_floor", tw.roundoff_floor},
                      {"repeat_pass", tw.repeat_pass()}, {"perturbed_pass", tw.perturbed_pass()}};
  if (!tw.repeat_pass()) rep.misses.push_back("twin repeat");
  if (!tw.perturbed_pass()) rep.misses.push_back("twin perturbed");

  long steps = std::lround(cfg.horizon / cfg.free_dt);
  CoupledResult r = coupled_run(f0, u0, steps, cc);
  out.lap("conservation");
  write_distribution(out.ckpt("f_T.vnsd"), r.f);
  write_snapshot(out.ckpt("u_T.vnsf"), r.u);
  write_ledger_csv(out.path("conservation.csv"), r);
  r.energy.write_csv(out.path("energy.csv"));
  ConservationReport cons = conservation_ledger(r);
  rep.data["conservation"] = json::parse(cons.to_json());
  if (cons.mass_drift > cfg.tol_mass_drift) rep.misses.push_back("mass drift");
  if (cons.momentum_drift > cfg.tol_momentum_drift) rep.misses.push_back("momentum drift");
  if (!cons.energy_pass) rep.misses.push_back("energy inequality");
}

}  // namespace

RunReport run_scenario(const RunConfig& cfg, const std::string& outdir) {
  cfg.validate();
  Outputs out;
  out.dir = outdir;
  fs::create_directories(out.dir / "checkpoints");
  cfg.save(out.path("config.json"));
  RunReport rep;
  rep.data["mode"] = to_string(cfg.mode);
  rep.data["config"] = cfg.to_json();
  switch (cfg.mode) {
    case Mode::free_run: run_free(cfg, out, rep); break;
    case Mode::reference_only: make_reference(cfg, out, rep); break;
    case Mode::fixed_point: run_fixed_point(cfg, out, rep, false); break;
    case Mode::full_control: run_fixed_point(cfg, out, rep, true); break;
    case Mode::estimate_suite: run_estimates(cfg, out, rep); break;
  }
  rep.data["checkpoint_metrics"] = checkpoint_metrics(out.dir, cfg);
  rep.data["misses"] = rep.misses;
  rep.data["pass"] = rep.pass();
  std::ofstream(out.path("report.json")) << rep.dump() << "\n";
  std::ofstream(out.path("timing.json")) << out.timing.dump(2) << "\n";
  return rep;
}

ReplayResult replay_run(const std::string& outdir) {
  fs::path dir(outdir);
  RunConfig cfg = RunConfig::load((dir / "config.json").string());
  std::ifstream is(dir / "report.json");
  if (!is) throw Error(ErrorKind::InsufficientCheckpoints, "no report.json in " + outdir);
  json report;
  is >> report;
  ReplayResult r;
  r.recomputed = checkpoint_metrics(dir, cfg);
  const json& stored = report["checkpoint_metrics"];
  for (auto it = stored.begin(); it != stored.end(); ++it)
    if (!r.recomputed.contains(it.key())) r.mismatches.push_back(it.key() + " (checkpoint missing)");
    else if (r.recomputed[it.key()] != it.value()) r.mismatches.push_back(it.key());
  return r;
}

}  // namespace vns
