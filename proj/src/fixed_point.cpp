#include "vns/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "vns/errors.hpp"

namespace vns {

namespace {

constexpr double kPi = 3.14159265358979323846;

// int_0^1 s^a (1-s)^b ds by Gauss-Legendre; r = s/(1-s) maps [0,1) onto the radius.
double beta_quadrature(double a, double b, int points) {
  std::vector<double> x, w;
  gauss_legendre(points, x, w);
  double acc = 0.0;
  for (int i = 0; i < points; ++i) {
    double s = 0.5 * (x[i] + 1.0);
    acc += 0.5 * w[i] * std::pow(s, a) * std::pow(1.0 - s, b);
  }
  return acc;
}

long kinetic_steps(double T, double dt) {
  long n = std::lround(T / dt);
  if (n < 1 || std::abs(n * dt - T) > 1e-9 * std::max(1.0, T))
    throw Error(ErrorKind::Config, "T is not a multiple of the kinetic step");
  return n;
}

bool stored(long k, long steps, int every, const std::vector<long>& extra) {
  return k % every == 0 || k == steps || std::find(extra.begin(), extra.end(), k) != extra.end();
}

// Streaming sampled norms for the three membership conditions.
class MembershipMeter {
 public:
  MembershipMeter(const FixedPointConfig& cfg, double dt, double data_norm)
      : cfg_(cfg), dt_(dt), data_norm_(data_norm), rng_(cfg.seed) {}

  void add_density(const Grid2& rho) {
    const double s1 = cfg_.S.delta1();
    const int n = static_cast<int>(rho.rows());
    const double px = std::pow(double(n), s1);
    rho_sup_ = std::max(rho_sup_, rho.abs().maxCoeff());
    for (int i2 = 0; i2 < n; ++i2)
      for (int i1 = 0; i1 < n; ++i1) {
        double r0 = rho(i1, i2);
        rho_hold_ = std::max(rho_hold_, std::abs(rho((i1 + 1) % n, i2) - r0) * px);
        rho_hold_ = std::max(rho_hold_, std::abs(rho(i1, (i2 + 1) % n) - r0) * px);
      }
    if (prev_rho_.size() > 0)
      rho_hold_ = std::max(rho_hold_, (rho - prev_rho_).abs().maxCoeff() / std::pow(dt_, s1));
    prev_rho_ = rho;
  }

  // h at one kinetic step; spatial Hoelder quotients only on stored slices.
  void add_slice(const PhaseSpaceDistribution& h, bool spatial, const PhaseSpaceDistribution* prev) {
    const double s2 = cfg_.S.delta2();
    h_wsup_ = std::max(h_wsup_, weighted_sup_norm(h, cfg_.S.gamma + 2.0));
    h_sup_ = std::max(h_sup_, h.sup());
    if (spatial) h_hold_ = std::max(h_hold_, holder_seminorm(h, s2, cfg_.holder_pairs, static_cast<unsigned>(rng_())));
    if (prev) h_hold_ = std::max(h_hold_, max_abs_diff(h, *prev) / std::pow(dt_, s2));
  }

  MembershipReport report() const {
    MembershipReport m;
    m.a_value = rho_sup_ + rho_hold_;
    m.a_bound = cfg_.S.c3 * cfg_.S.epsilon;
    m.b_value = h_wsup_;
    m.b_bound = cfg_.S.c1 * data_norm_;
    m.c_value = h_sup_ + h_hold_;
    m.c_bound = cfg_.S.c2 * data_norm_;
    return m;
  }

 private:
  const FixedPointConfig& cfg_;
  double dt_, data_norm_;
  std::mt19937 rng_;
  Grid2 prev_rho_;
  double rho_sup_ = 0.0, rho_hold_ = 0.0;
  double h_wsup_ = 0.0, h_sup_ = 0.0, h_hold_ = 0.0;
};

double data_norm_of(const FixedPointConfig& cfg, const PhaseSpaceDistribution& f0) {
  return cfg.data_norm > 0.0 ? cfg.data_norm : grid_data_norm(f0, cfg.S.gamma);
}

// sup_t ||j_h + w||_L2 over kinetic steps, w sampled at the step time.
double current_l2_sup(const GTrajectory& h, const ReferenceTrajectory& ref) {
  double s = 0.0;
  for (long k = 0; k <= h.steps(); ++k) {
    Grid2 a = h.j[k][0], b = h.j[k][1];
    if (const auto* w = ref.force_at(k * h.dt)) {
      a += (*w)[0];
      b += (*w)[1];
    }
    s = std::max(s, std::sqrt((a.square() + b.square()).mean()));
  }
  return s;
}

FieldHistory field_history(const std::vector<SpectralField>& u, double dt) {
  FieldHistory hist;
  for (size_t k = 0; k < u.size(); ++k) hist.push(k * dt, u[k]);
  return hist;
}

double l2_linf_grid(const std::vector<SpectralField>& u, double dt) {
  double acc = 0.0, prev = -1.0;
  for (const auto& f : u) {
    double m = 0.0;
    for (const auto& c : f.physical()) m = std::max(m, c.abs().maxCoeff());
    if (prev >= 0.0) acc += 0.5 * dt * (prev * prev + m * m);
    prev = m;
  }
  return std::sqrt(acc);
}

}  // namespace

double weight_integral_I(double gamma, int points) { return 2.0 * kPi * beta_quadrature(2.0, gamma - 2.0, points); }

double weight_integral_I_exact(double gamma) { return 4.0 * kPi / ((gamma + 1.0) * gamma * (gamma - 1.0)); }

double weight_integral_0(double gamma) { return 2.0 * kPi / (gamma * (gamma + 1.0)); }

void SEpsilonConfig::set_constants(const MeasuredConstants& k) {
  K = k;
  c1 = std::exp(2.0 * T) * std::pow(1.0 + K.K2, gamma + 2.0);
  K.K5 = c1;
  c2 = std::pow(K.K3, delta2()) * std::pow(K.K5, 1.0 - delta2());
  K.K6 = c1 * weight_integral_0(gamma);
  double p = 1.0 / (gamma + 2.0);
  c3 = K.K6 + std::pow(c1, 0.5 + p) * std::pow(c2, 0.5 - p);
  I = weight_integral_I(gamma);
}

void SEpsilonConfig::set_cap() {
  if (I <= 0.0) I = weight_integral_I(gamma);
  double third = M / (c3 * std::sqrt(2.0 * T * std::exp(T) * (M * M + T * (1.0 + jbar * jbar))));
  epsilon0 = std::min({1.0, 1.0 / (I * c1), third});
}

const PhaseSpaceDistribution* GTrajectory::slice_at(long step) const {
  for (size_t i = 0; i < slice_steps.size(); ++i)
    if (slice_steps[i] == step) return &slices[i];
  return nullptr;
}

GTrajectory GTrajectory::frozen(const PhaseSpaceDistribution& f0, long steps, double dt, int store_every,
                                const std::vector<long>& extra) {
  GTrajectory g;
  g.dt = dt;
  MomentPair m = moments(f0);
  g.rho.assign(steps + 1, m.rho);
  g.j.assign(steps + 1, m.j);
  for (long k = 0; k <= steps; ++k)
    if (stored(k, steps, store_every, extra)) {
      PhaseSpaceDistribution s = f0;
      s.time = k * dt;
      g.slices.push_back(std::move(s));
      g.slice_steps.push_back(k);
    }
  return g;
}

std::vector<SpectralField> fluid_for(const GTrajectory& h, const ReferenceTrajectory& ref, const SpectralField& u0,
                                     const FixedPointConfig& cfg, EnergyLedger* ledger) {
  NsConfig ns = cfg.ns;
  ns.dt = ref.fluid_dt;
  double ratio = h.dt / ns.dt;
  int sub = static_cast<int>(std::lround(ratio));
  if (sub < 1 || std::abs(ratio - sub) > 1e-9) throw Error(ErrorKind::Config, "kinetic step is not a multiple of the fluid step");
  if (u0.grid->n() != ref.grid->n()) throw Error(ErrorKind::GridMismatch, "initial field and reference grids differ");

  std::vector<SpectralField> out;
  out.reserve(h.steps() + 1);
  NsState s = make_ns_state(u0);
  s.time = 0.0;
  s.u.time = 0.0;
  out.push_back(s.u);
  if (ledger) ledger->start(s.u, 0.0);
  for (long k = 0; k < h.steps(); ++k) {
    for (int m = 0; m < sub; ++m) {
      double a = (m + 0.5) / sub;
      double t = s.time;
      DragSource src;
      src.rho = (1.0 - a) * h.rho[k] + a * h.rho[k + 1];
      src.j = {(1.0 - a) * h.j[k][0] + a * h.j[k + 1][0], (1.0 - a) * h.j[k][1] + a * h.j[k + 1][1]};
      SpectralField force;
      const SpectralField* F = nullptr;
      if (const auto* w = ref.force_at(t + 0.5 * ns.dt)) {
        force = SpectralField::from_physical(s.u.grid, *w, t);
        F = &force;
      }
      SpectralField rate;
      if (ledger) {
        std::vector<Grid2> u = s.u.physical();
        rate = SpectralField::from_physical(s.u.grid, {src.j[0] - src.rho * u[0], src.j[1] - src.rho * u[1]}, t);
        if (F) rate += *F;
      }
      s = ns_step(s, src, F, ns);
      if (ledger) ledger->record(s.u, &rate, ns.dt);
    }
    s.time = (k + 1) * h.dt;
    s.u.time = s.time;
    out.push_back(s.u);
  }
  return out;
}

void apply_Pi_grid(PhaseSpaceDistribution& f, double t, const AbsorptionRule& rule) {
  const StripGeometry& st = rule.strip;
  const int nx = f.nx;
  double yt = rule.Ytilde(t);
  if (yt <= 0.0) return;
  struct Target {
    size_t idx;
    int i0, i1;  // bilinear corners (x1)
    int k0, k1;  // (x2)
    double w1, w2;
  };
  std::vector<Target> targets;
  for (int i2 = 0; i2 < nx; ++i2)
    for (int i1 = 0; i1 < nx; ++i1) {
      Vec2 x(double(i1) / nx, double(i2) / nx);
      double d = st.signed_distance(x);
      if (std::abs(d) >= st.delta) continue;
      double side = d >= 0.0 ? 1.0 : -1.0;
      Vec2 y = x + (side * (st.delta + 1.5 / nx) - d) * st.normal;
      double a = y[0] * nx, b = y[1] * nx;
      double fa = std::floor(a), fb = std::floor(b);
      Target tg;
      tg.idx = static_cast<size_t>(i2) * nx + i1;
      tg.i0 = ((static_cast<long>(fa) % nx) + nx) % nx;
      tg.i1 = (tg.i0 + 1) % nx;
      tg.k0 = ((static_cast<long>(fb) % nx) + nx) % nx;
      tg.k1 = (tg.k0 + 1) % nx;
      tg.w1 = a - fa;
      tg.w2 = b - fb;
      targets.push_back(tg);
    }
  if (targets.empty()) return;
  for (int j2 = 0; j2 < f.vg.n; ++j2)
    for (int j1 = 0; j1 < f.vg.n; ++j1) {
      double* s = f.slice(j1, j2);
      // Sample first so that targets never read already extended nodes.
      std::vector<double> ext(targets.size());
      for (size_t q = 0; q < targets.size(); ++q) {
        const Target& tg = targets[q];
        auto at = [&](int i, int k) { return s[static_cast<size_t>(k) * nx + i]; };
        ext[q] = (1.0 - tg.w2) * ((1.0 - tg.w1) * at(tg.i0, tg.k0) + tg.w1 * at(tg.i1, tg.k0)) +
                 tg.w2 * ((1.0 - tg.w1) * at(tg.i0, tg.k1) + tg.w1 * at(tg.i1, tg.k1));
      }
      for (size_t q = 0; q < targets.size(); ++q) s[targets[q].idx] = (1.0 - yt) * s[targets[q].idx] + yt * ext[q];
    }
}

VResult apply_V_epsilon(const GTrajectory& g, const ReferenceTrajectory& ref, const PhaseSpaceDistribution& f0,
                        const SpectralField& u0, const FixedPointConfig& cfg) {
  const double T = ref.schedule.T();
  const long steps = kinetic_steps(T, cfg.kinetic_dt);
  if (g.steps() != steps) throw Error(ErrorKind::GridMismatch, "trajectory length does not match T / kinetic_dt");
  if (f0.nx != ref.grid->n()) throw Error(ErrorKind::GridMismatch, "kinetic and fluid x grids differ");

  VResult r;
  r.u = fluid_for(g, ref, u0, cfg);
  r.K1 = l2_linf_grid(r.u, cfg.kinetic_dt);

  AbsorptionRule rule{ref.strip, T};
  MembershipMeter meter(cfg, cfg.kinetic_dt, data_norm_of(cfg, f0));
  GTrajectory& h = r.h;
  h.dt = cfg.kinetic_dt;
  h.rho.reserve(steps + 1);
  h.j.reserve(steps + 1);

  PhaseSpaceDistribution f = f0;
  f.time = 0.0;
  PhaseSpaceDistribution prev;
  std::vector<Grid2> ub = r.u[0].physical(), ue;
  for (long k = 0;; ++k) {
    // Output at step k: extension across the strip of the absorbed solution.
    PhaseSpaceDistribution out = f;
    apply_Pi_grid(out, f.time, rule);
    MomentPair m = moments(out);
    meter.add_density(m.rho);
    bool keep = stored(k, steps, cfg.store_every, cfg.extra_steps);
    meter.add_slice(out, keep, k > 0 ? &prev : nullptr);
    h.rho.push_back(std::move(m.rho));
    h.j.push_back(std::move(m.j));
    if (keep) {
      h.slices.push_back(out);
      h.slice_steps.push_back(k);
    }
    if (k == steps) break;
    prev = std::move(out);

    ue = r.u[k + 1].physical();
    StepStats st = transport_step(f, cfg.kinetic_dt, &ub, &ue, cfg.absorb ? &rule : nullptr, cfg.transport);
    r.absorbed += st.absorbed;
    r.clipped += st.clipped;
    f.time = (k + 1) * cfg.kinetic_dt;
    ub = std::move(ue);
  }
  r.membership = meter.report();
  double js = current_l2_sup(h, ref);
  r.jg_lhs = js * js;
  const auto& S = cfg.S;
  r.jg_rhs = 2.0 * (S.I * S.I * S.c1 * S.epsilon * S.epsilon + S.jbar * S.jbar);
  return r;
}

FieldHistory VResult::history() const { return field_history(u, h.dt); }

MembershipReport check_membership(const GTrajectory& h, const FixedPointConfig& cfg, double data_norm) {
  MembershipMeter meter(cfg, h.dt, data_norm);
  for (const auto& rho : h.rho) meter.add_density(rho);
  for (size_t i = 0; i < h.slices.size(); ++i) {
    bool adjacent = i > 0 && h.slice_steps[i] == h.slice_steps[i - 1] + 1;
    meter.add_slice(h.slices[i], true, adjacent ? &h.slices[i - 1] : nullptr);
  }
  return meter.report();
}

FieldHistory PicardResult::history() const { return field_history(u, g.dt); }

void PicardResult::write_trace_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os.precision(10);
  os << "k,sup_diff,a_value,a_bound,b_value,b_bound,c_value,c_bound,K1,jg_bound_lhs,jg_bound_rhs\n";
  for (const auto& s : trace)
    os << s.k << "," << s.sup_diff << "," << s.m.a_value << "," << s.m.a_bound << "," << s.m.b_value << ","
       << s.m.b_bound << "," << s.m.c_value << "," << s.m.c_bound << "," << s.K1 << "," << s.jg_lhs << "," << s.jg_rhs
       << "\n";
}

PicardResult picard_iterate(const ReferenceTrajectory& ref, const PhaseSpaceDistribution& f0, const SpectralField& u0,
                            const FixedPointConfig& cfg, const OmegaSpec& omega) {
  const double T = ref.schedule.T();
  const long steps = kinetic_steps(T, cfg.kinetic_dt);
  PicardResult res;
  res.g = GTrajectory::frozen(f0, steps, cfg.kinetic_dt, cfg.store_every, cfg.extra_steps);
  res.initial_mass = f0.mass();

  for (int k = 1; k <= cfg.max_iter; ++k) {
    VResult r = apply_V_epsilon(res.g, ref, f0, u0, cfg);
    double diff = 0.0, scale = 0.0;
    for (size_t i = 0; i < r.h.slices.size(); ++i) {
      diff = std::max(diff, max_abs_diff(r.h.slices[i], res.g.slices[i]));
      scale = std::max(scale, r.h.slices[i].sup());
    }
    PicardStep ps;
    ps.k = k;
    ps.sup_diff = diff;
    ps.m = r.membership;
    ps.K1 = r.K1;
    ps.jg_lhs = r.jg_lhs;
    ps.jg_rhs = r.jg_rhs;
    res.trace.push_back(ps);
    res.g = std::move(r.h);
    res.u = std::move(r.u);
    res.absorbed = r.absorbed;
    if (diff <= cfg.tol * scale) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) {
    std::ostringstream os;
    os << "no convergence after " << cfg.max_iter << " iterations; sup differences:";
    for (const auto& s : res.trace) os << " " << s.sup_diff;
    throw Error(ErrorKind::NoConvergence, os.str());
  }

  // Consistency: field re-solved from the final iterate against the stored one.
  EnergyLedger ledger;
  auto u2 = fluid_for(res.g, ref, u0, cfg, &ledger);
  res.energy = check_energy_estimate(ledger);
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < u2.size(); ++k) {
    num = std::max(num, l2_norm(u2[k] - res.u[k]));
    den = std::max(den, l2_norm(res.u[k]));
  }
  res.u_consistency = den > 0.0 ? num / den : num;

  // Speed bound along backward characteristics.
  FieldHistory hist = res.history();
  double K1 = res.trace.back().K1;
  res.lemma_b_bound = std::exp(T) * std::sqrt(T) * K1;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int s = 0; s < 400; ++s) {
    double t = T * U(rng);
    Vec2 x(U(rng), U(rng));
    Vec2 v(cfg.vg.vmax * (2.0 * U(rng) - 1.0), cfg.vg.vmax * (2.0 * U(rng) - 1.0));
    PhasePoint foot = flow({x, v}, t, 0.0, hist, 0.01);
    res.lemma_b_max = std::max(res.lemma_b_max, std::abs(std::exp(t) * v.norm() - foot.v.norm()));
  }

  const PhaseSpaceDistribution& gT = res.g.slices.back();
  auto outside = [&](const Vec2& x) { return !omega.contains(x); };
  res.confinement_sup = gT.sup_where(outside);
  res.mass_outside = gT.mass_where(outside);
  return res;
}

double grid_data_norm(const PhaseSpaceDistribution& f0, double gamma) {
  const int nx = f0.nx, n = f0.vg.n;
  double grad = 0.0;
  for (int j2 = 0; j2 < n; ++j2)
    for (int j1 = 0; j1 < n; ++j1)
      for (int i2 = 0; i2 < nx; ++i2)
        for (int i1 = 0; i1 < nx; ++i1) {
          double a = f0.at(i1, i2, j1, j2);
          double g = std::max(std::abs(f0.at((i1 + 1) % nx, i2, j1, j2) - a), std::abs(f0.at(i1, (i2 + 1) % nx, j1, j2) - a)) * nx;
          if (j1 + 1 < n) g = std::max(g, std::abs(f0.at(i1, i2, j1 + 1, j2) - a) / f0.vg.h());
          if (j2 + 1 < n) g = std::max(g, std::abs(f0.at(i1, i2, j1, j2 + 1) - a) / f0.vg.h());
          grad = std::max(grad, g);
        }
  return f0.sup() + grad + weighted_sup_norm(f0, gamma + 2.0);
}

MeasuredConstants measure_constants(const ReferenceTrajectory& ref, const SpectralField& u0, const FixedPointConfig& cfg,
                                    int lipschitz_samples) {
  const double T = ref.schedule.T();
  const long steps = kinetic_steps(T, cfg.kinetic_dt);
  GTrajectory zero;
  zero.dt = cfg.kinetic_dt;
  Grid2 z = Grid2::Zero(ref.grid->n(), ref.grid->n());
  zero.rho.assign(steps + 1, z);
  zero.j.assign(steps + 1, {z, z});
  auto u = fluid_for(zero, ref, u0, cfg);

  MeasuredConstants k;
  k.K1 = l2_linf_grid(u, cfg.kinetic_dt);
  k.K2 = std::exp(T) * std::sqrt(T) * k.K1;
  FieldHistory hist = field_history(u, cfg.kinetic_dt);
  k.lipschitz = lipschitz_probe(hist, lipschitz_samples, T, 0.01, cfg.vg.vmax, cfg.seed).constant;
  k.K3 = std::exp(2.0 * T) * k.lipschitz;
  return k;
}

}  // namespace vns
