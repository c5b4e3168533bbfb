#include "vns/control.hpp"

#include <ceres/ceres.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "vns/absorption.hpp"
#include "vns/errors.hpp"

namespace vns {

namespace {

constexpr double kPi = 3.14159265358979323846;

void apply_heat(SpectralField& f, const Eigen::ArrayXXd& factor) {
  for (auto& c : f.comp) c *= factor;
}

Eigen::ArrayXXd heat_factor(const FourierGrid& g, double nu, double tau) {
  Eigen::ArrayXXd e(g.nh(), g.n());
  for (int j2 = 0; j2 < g.n(); ++j2)
    for (int j1 = 0; j1 < g.nh(); ++j1) e(j1, j2) = std::exp(-nu * g.ksq(j1, j2) * tau);
  return e;
}

double grid_sup(const SpectralField& u) {
  double s = 0.0;
  auto p = u.physical();
  for (int i = 0; i < p[0].rows(); ++i)
    for (int j = 0; j < p[0].cols(); ++j) s = std::max(s, std::hypot(p[0](i, j), p[1](i, j)));
  return s;
}

// Transpose of the linearized explicit advection term -P F[(F u . grad) F u] applied to lam.
SpectralField advection_adjoint(const SpectralField& u, const SpectralField& lam) {
  SpectralField uf = dealias_filter(u);
  auto up = uf.physical();
  auto g0 = partial(uf, 0).physical();
  auto g1 = partial(uf, 1).physical();
  auto m = dealias_filter(leray_project(lam)).physical();
  std::vector<Grid2> a = {m[0] * g0[0] + m[1] * g0[1], m[0] * g1[0] + m[1] * g1[1]};
  SpectralField out = SpectralField::from_physical(u.grid, a);
  for (int i = 0; i < 2; ++i) {
    std::vector<Grid2> p0 = {up[0] * m[i]}, p1 = {up[1] * m[i]};
    SpectralField d = partial(SpectralField::from_physical(u.grid, p0), 0);
    d += partial(SpectralField::from_physical(u.grid, p1), 1);
    out.comp[i] -= d.comp[0];
  }
  out = dealias_filter(out);
  out *= -1.0;
  return out;
}

// Force w_n(x) = env(s) mask(x) sum_k hat_k(s) theta_k(x) at s = (n + 1/2) dt / horizon,
// with theta stored on the nodes where the mask is positive.
class ControlProblem {
 public:
  ControlProblem(const SpectralField& u_start, const SpectralField& u_target, double horizon,
                 const StripGeometry& strip, const ControlOptions& opt)
      : u0_(u_start), target_(u_target), opt_(opt) {
    const int n = u_start.n();
    steps_ = std::lround(horizon / opt.ns.dt);
    if (steps_ < 1 || std::abs(steps_ * opt.ns.dt - horizon) > 1e-9 * std::max(1.0, horizon))
      throw Error(ErrorKind::Config, "control horizon is not a multiple of the fluid time step");
    mask_ = strip_mask(n, strip, opt.mask_inner * strip.delta0, opt.mask_outer * strip.delta0);
    for (int i2 = 0; i2 < n; ++i2)
      for (int i1 = 0; i1 < n; ++i1)
        if (mask_(i1, i2) > 0.0) active_.push_back({i1, i2});
    const int K = std::max(2, opt.knots);
    knots_ = K;
    coef_.assign(steps_, std::vector<double>(K, 0.0));
    for (long s = 0; s < steps_; ++s) {
      double r = (s + 0.5) / steps_;
      double env = std::pow(std::sin(kPi * r), 2);
      for (int k = 0; k < K; ++k) coef_[s][k] = env * std::max(0.0, 1.0 - std::abs(r * (K - 1) - k));
    }
    e1_ = heat_factor(*u_start.grid, opt.ns.viscosity, opt.ns.dt);
    e2_ = heat_factor(*u_start.grid, opt.ns.viscosity, 2.0 * opt.ns.dt);
  }

  int num_params() const { return knots_ * 2 * static_cast<int>(active_.size()); }
  long steps() const { return steps_; }

  std::vector<std::vector<Grid2>> force(const double* theta) const {
    const int n = u0_.n();
    const size_t na = active_.size();
    std::vector<std::vector<Grid2>> w(steps_, std::vector<Grid2>(2, Grid2::Zero(n, n)));
    for (long s = 0; s < steps_; ++s)
      for (int c = 0; c < 2; ++c)
        for (size_t a = 0; a < na; ++a) {
          double v = 0.0;
          for (int k = 0; k < knots_; ++k) v += coef_[s][k] * theta[(k * 2 + c) * na + a];
          w[s][c](active_[a][0], active_[a][1]) = v * mask_(active_[a][0], active_[a][1]);
        }
    return w;
  }

  // Cost and terminal error; fills the state history and, when grad is given, the gradient.
  double evaluate(const double* theta, double* grad, double* terminal_error,
                  std::vector<SpectralField>* states_out = nullptr,
                  std::vector<std::vector<Grid2>>* force_out = nullptr) const {
    const int n = u0_.n();
    const double dt = opt_.ns.dt;
    auto w = force(theta);
    std::vector<SpectralField> states;
    states.reserve(steps_ + 1);
    NsState s = make_ns_state(u0_);
    states.push_back(s.u);
    double pen = 0.0;
    for (long k = 0; k < steps_; ++k) {
      SpectralField W = SpectralField::from_physical(u0_.grid, w[k], s.time);
      s = ns_step(s, DragSource{}, &W, opt_.ns);
      states.push_back(s.u);
      pen += dt * ((w[k][0].square() + w[k][1].square()).sum() / (double(n) * n));
    }
    SpectralField mu = states.back() - target_;
    double err = l2_norm(mu);
    double J = 0.5 * err * err + 0.5 * opt_.penalty * pen;
    if (terminal_error) *terminal_error = err;
    if (grad) {
      const size_t na = active_.size();
      std::fill(grad, grad + num_params(), 0.0);
      // mu_next[0] = dJ/du_{k+1}, mu_next[1] = dJ/du_{k+2}
      SpectralField mu1 = mu;
      SpectralField mu2 = SpectralField::zeros(u0_.grid, 2);
      bool have2 = false;
      for (long k = steps_ - 1; k >= 0; --k) {
        double a = k == 0 ? 1.0 : 1.5;
        SpectralField rho = mu1;
        apply_heat(rho, e1_);
        rho *= a * dt;
        if (have2) {
          SpectralField t2 = mu2;
          apply_heat(t2, e2_);
          t2 *= 0.5 * dt;
          rho -= t2;
        }
        auto gw = dealias_filter(leray_project(rho)).physical();
        const double inv = 1.0 / (double(n) * n);
        for (int c = 0; c < 2; ++c)
          for (size_t ai = 0; ai < na; ++ai) {
            int i1 = active_[ai][0], i2 = active_[ai][1];
            double g = (gw[c](i1, i2) + opt_.penalty * dt * w[k][c](i1, i2)) * inv * mask_(i1, i2);
            for (int q = 0; q < knots_; ++q) grad[(q * 2 + c) * na + ai] += coef_[k][q] * g;
          }
        if (k >= 1) {
          SpectralField mu0 = mu1;
          apply_heat(mu0, e1_);
          mu0 += advection_adjoint(states[k], rho);
          mu2 = std::move(mu1);
          mu1 = std::move(mu0);
          have2 = true;
        }
      }
    }
    if (states_out) *states_out = std::move(states);
    if (force_out) *force_out = std::move(w);
    return J;
  }

 private:
  SpectralField u0_, target_;
  ControlOptions opt_;
  long steps_ = 0;
  Grid2 mask_;
  std::vector<std::array<int, 2>> active_;
  int knots_ = 2;
  std::vector<std::vector<double>> coef_;
  Eigen::ArrayXXd e1_, e2_;
};

class ControlCost : public ceres::FirstOrderFunction {
 public:
  explicit ControlCost(const ControlProblem* p) : p_(p) {}
  bool Evaluate(const double* parameters, double* cost, double* gradient) const override {
    double err = 0.0;
    try {
      *cost = p_->evaluate(parameters, gradient, &err);
    } catch (const Error&) {
      return false;  // step rejected by the fluid solver guards
    }
    evals.push_back({*cost, err});
    return std::isfinite(*cost);
  }
  int NumParameters() const override { return p_->num_params(); }

  double error_for(double cost) const {
    for (auto it = evals.rbegin(); it != evals.rend(); ++it)
      if (it->first == cost) return it->second;
    return std::sqrt(2.0 * cost);
  }

  mutable std::vector<std::pair<double, double>> evals;

 private:
  const ControlProblem* p_;
};

class ControlMonitor : public ceres::IterationCallback {
 public:
  ControlMonitor(const ControlCost* cost, double tol, int window) : cost_(cost), tol_(tol), window_(window) {}
  ceres::CallbackReturnType operator()(const ceres::IterationSummary& s) override {
    double err = cost_->error_for(s.cost);
    trace.push_back(err);
    if (err <= tol_) {
      reached = true;
      return ceres::SOLVER_TERMINATE_SUCCESSFULLY;
    }
    if (err < best_ * (1.0 - 1e-12)) {
      best_ = err;
      stall_ = 0;
    } else if (++stall_ >= window_) {
      stalled = true;
      return ceres::SOLVER_ABORT;
    }
    return ceres::SOLVER_CONTINUE;
  }
  std::vector<double> trace;
  bool reached = false, stalled = false;

 private:
  const ControlCost* cost_;
  double tol_;
  int window_;
  double best_ = INFINITY;
  int stall_ = 0;
};

}  // namespace

double KineticLift::Z(int i, const Vec2& v) { return 2.0 * v[i] / kPi * std::exp(-v.squaredNorm()); }

double KineticLift::Certificate::max_error() const {
  double e = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int m = 0; m < 3; ++m) e = std::max(e, std::abs(moment[i][m] - (m == i + 1 ? 1.0 : 0.0)));
  return e;
}

KineticLift::Certificate KineticLift::certify(int points, double R) {
  std::vector<double> x, w;
  gauss_legendre(points, x, w);
  Certificate c{};
  for (int a = 0; a < points; ++a)
    for (int b = 0; b < points; ++b) {
      Vec2 v(R * x[a], R * x[b]);
      double wt = R * R * w[a] * w[b];
      for (int i = 0; i < 2; ++i) {
        double z = Z(i, v) * wt;
        c.moment[i][0] += z;
        c.moment[i][1] += v[0] * z;
        c.moment[i][2] += v[1] * z;
      }
    }
  return c;
}

KineticLift KineticLift::discretize(const VelocityGrid& vg, int) {
  const int n = vg.n;
  const double h = vg.h();
  // Exact cell averages of v exp(-v^2) (odd) and exp(-v^2) (even) per axis, mirrored so the
  // discrete density vanishes to the last bit.
  std::vector<double> odd(n), even(n);
  for (int j = 0; j < n; ++j) {
    double a = vg.edge(j), b = vg.edge(j + 1);
    odd[j] = 0.5 * (std::exp(-a * a) - std::exp(-b * b)) / h;
    even[j] = 0.5 * std::sqrt(kPi) * (std::erf(b) - std::erf(a)) / h;
  }
  for (int j = 0; j < n / 2; ++j) {
    odd[n - 1 - j] = -odd[j];
    even[n - 1 - j] = even[j];
  }
  KineticLift L;
  L.vg = vg;
  L.z1.assign(static_cast<size_t>(n) * n, 0.0);
  L.z2 = L.z1;
  double m = 0.0;
  for (int j2 = 0; j2 < n; ++j2)
    for (int j1 = 0; j1 < n; ++j1) {
      size_t c = static_cast<size_t>(j2) * n + j1;
      L.z1[c] = 2.0 / kPi * odd[j1] * even[j2];
      L.z2[c] = 2.0 / kPi * even[j1] * odd[j2];
      m += vg.center(j1) * L.z1[c] * h * h;
    }
  L.raw_moment = m;
  for (auto& z : L.z1) z /= m;
  for (auto& z : L.z2) z /= m;
  return L;
}

const std::vector<Grid2>* ForceHistory::at(double t) const {
  if (w.empty() || t < t0 - 1e-12 * std::max(1.0, std::abs(t0))) return nullptr;
  double r = (t - t0) / dt;
  long k = static_cast<long>(std::floor(r + 1e-9));
  if (k < 0) k = 0;
  if (k >= steps()) return nullptr;
  return &w[k];
}

double ForceHistory::sup_norm() const {
  double s = 0.0;
  for (const auto& ws : w) s = std::max(s, (ws[0].square() + ws[1].square()).sqrt().maxCoeff());
  return s;
}

double ForceHistory::leak_outside(const OmegaSpec& omega) const {
  if (w.empty()) return 0.0;
  const int n = static_cast<int>(w[0][0].rows());
  Grid2 outside(n, n);
  for (int i2 = 0; i2 < n; ++i2)
    for (int i1 = 0; i1 < n; ++i1) outside(i1, i2) = omega.contains(Vec2(double(i1) / n, double(i2) / n)) ? 0.0 : 1.0;
  double tot = 0.0, out = 0.0;
  for (const auto& ws : w) {
    Grid2 e = ws[0].square() + ws[1].square();
    tot += e.sum();
    out += (e * outside).sum();
  }
  return tot > 0.0 ? std::sqrt(out / tot) : 0.0;
}

PhaseSpaceDistribution lift_control(const std::vector<Grid2>& w, const KineticLift& lift, double t) {
  const int n = static_cast<int>(w.at(0).rows());
  auto f = PhaseSpaceDistribution::zeros(n, lift.vg, 3.0, t);
  const int nv = lift.vg.n;
  for (int j2 = 0; j2 < nv; ++j2)
    for (int j1 = 0; j1 < nv; ++j1) {
      size_t c = f.vcell(j1, j2);
      Eigen::Map<Grid2> s(f.slice(j1, j2), n, n);
      s = lift.z1[c] * w[0] + lift.z2[c] * w[1];
    }
  return f;
}

Grid2 strip_mask(int n, const StripGeometry& strip, double inner, double outer) {
  Grid2 m(n, n);
  for (int i2 = 0; i2 < n; ++i2)
    for (int i1 = 0; i1 < n; ++i1) {
      double d = strip.distance(Vec2(double(i1) / n, double(i2) / n));
      m(i1, i2) = 1.0 - smoothstep5((d - inner) / (outer - inner));
    }
  return m;
}

ControlResult approx_fluid_control(const SpectralField& u_start, const SpectralField& u_target, double horizon,
                                   const StripGeometry& strip, const ControlOptions& opt, double t0) {
  ControlProblem prob(u_start, u_target, horizon, strip, opt);
  std::vector<double> theta(prob.num_params(), 0.0);
  ControlResult res;
  double err0 = 0.0;
  prob.evaluate(theta.data(), nullptr, &err0);
  res.initial_error = err0;
  res.trace.push_back(err0);
  if (opt.fd_check > 0)
    res.fd_max_rel_error = control_gradient_check(u_start, u_target, horizon, strip, opt, opt.fd_check);

  if (err0 > opt.tolerance && prob.num_params() > 0) {
    auto* cost = new ControlCost(&prob);
    ceres::GradientProblem problem(cost);
    ControlMonitor monitor(cost, opt.tolerance, opt.stall_window);
    ceres::GradientProblemSolver::Options o;
    o.line_search_direction_type = ceres::LBFGS;
    o.max_num_iterations = opt.max_iter;
    o.function_tolerance = 1e-20;
    o.gradient_tolerance = 1e-30;
    o.parameter_tolerance = 1e-20;
    o.logging_type = ceres::SILENT;
    o.minimizer_progress_to_stdout = false;
    o.update_state_every_iteration = true;
    o.callbacks.push_back(&monitor);
    ceres::GradientProblemSolver::Summary summary;
    ceres::Solve(o, problem, theta.data(), &summary);
    res.iterations = static_cast<int>(summary.iterations.size());
    res.trace.insert(res.trace.end(), monitor.trace.begin(), monitor.trace.end());
    res.termination = monitor.reached ? "tolerance" : (monitor.stalled ? "stalled" : summary.message);
    if (monitor.stalled)
      throw Error(ErrorKind::NoProgress, "terminal error did not decrease over " + std::to_string(opt.stall_window) +
                                             " iterations (best " + std::to_string(res.trace.back()) + ")");
  } else {
    res.termination = "initial";
  }

  std::vector<std::vector<Grid2>> w;
  prob.evaluate(theta.data(), nullptr, &res.terminal_error, &res.trajectory, &w);
  res.force.t0 = t0;
  res.force.dt = opt.ns.dt;
  res.force.w = std::move(w);
  for (size_t k = 0; k < res.trajectory.size(); ++k) res.trajectory[k].time = t0 + k * opt.ns.dt;
  return res;
}

double control_gradient_check(const SpectralField& u_start, const SpectralField& u_target, double horizon,
                              const StripGeometry& strip, const ControlOptions& opt, int samples) {
  ControlProblem prob(u_start, u_target, horizon, strip, opt);
  const int np = prob.num_params();
  if (np == 0) return 0.0;
  std::mt19937 rng(opt.seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> theta(np);
  for (auto& t : theta) t = 5.0 * nd(rng);
  std::vector<double> g(np);
  prob.evaluate(theta.data(), g.data(), nullptr);
  std::uniform_int_distribution<int> pick(0, np - 1);
  double num = 0.0, den = 0.0;
  for (int s = 0; s < samples; ++s) {
    int i = pick(rng);
    double h = 1e-4 * std::max(1.0, std::abs(theta[i]));
    double keep = theta[i];
    theta[i] = keep + h;
    double jp = prob.evaluate(theta.data(), nullptr, nullptr);
    theta[i] = keep - h;
    double jm = prob.evaluate(theta.data(), nullptr, nullptr);
    theta[i] = keep;
    double fd = (jp - jm) / (2.0 * h);
    num += (fd - g[i]) * (fd - g[i]);
    den += g[i] * g[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

double lambda0(double d0, double T1) { return std::max(d0 / -std::expm1(-0.5 * T1), 5.0 * std::exp(T1)); }

bool StageSchedule::t3_first(double T3v) const {
  double y = T3v - 3.0 * T2;
  return 0.125 * y * y - T3v * u2_l1linf >= Lambda0 + d0;
}

bool StageSchedule::t3_second(double T3v) const { return T3v >= 3.0 * T2 + 2.0 * (Lambda0 + u2_l1linf) + 10.0; }

double minimal_T3(const StageSchedule& s, double quantum) {
  const double a = s.u2_l1linf;
  double lin = 3.0 * s.T2 + 2.0 * (s.Lambda0 + a) + 10.0;
  double y = 4.0 * a + std::sqrt(16.0 * a * a + 8.0 * (3.0 * a * s.T2 + s.Lambda0 + s.d0));
  double T3 = std::max({lin, 3.0 * s.T2 + y, s.T2 + quantum});
  T3 = std::ceil(T3 / quantum - 1e-9) * quantum;
  while (!(s.t3_first(T3) && s.t3_second(T3))) T3 += quantum;
  return T3;
}

double zeta(double s) { return 1.0 - smoothstep5(s); }

SpectralField ReferenceTrajectory::u_bar(double t) const {
  const auto& S = schedule;
  auto from_stage = [&](const ControlResult& st, double ts) {
    double r = (t - ts) / fluid_dt;
    long k = std::clamp(static_cast<long>(std::floor(r)), 0L, static_cast<long>(st.trajectory.size()) - 2);
    double w = std::clamp(r - k, 0.0, 1.0);
    SpectralField u = (1.0 - w) * st.trajectory[k];
    u += w * st.trajectory[k + 1];
    u.time = t;
    return u;
  };
  if (t > S.T1 && t < S.T2) return from_stage(stage2, S.T1);
  if (t > S.T3 && t < S.T4) return from_stage(stage4, S.T3);
  SpectralField u = SpectralField::zeros(grid, 2, t);
  if (t >= S.T2 && t <= S.T3) {
    u.comp[0](0, 0) = coast()[0];
    u.comp[1](0, 0) = coast()[1];
  }
  return u;
}

const std::vector<Grid2>* ReferenceTrajectory::force_at(double t) const {
  if (auto* w = stage2.force.at(t)) return w;
  return stage4.force.at(t);
}

FieldHistory ReferenceTrajectory::history() const {
  FieldHistory h;
  const auto& S = schedule;
  h.push_uniform(0.0, Vec2::Zero());
  h.push_uniform(S.T1, Vec2::Zero());
  // Stage 2 ends on the coast field itself; the optimizer residual is reported as stage2_jump.
  for (size_t k = 1; k + 1 < stage2.trajectory.size(); ++k) h.push(S.T1 + k * fluid_dt, stage2.trajectory[k]);
  h.push_uniform(S.T2, coast());
  h.push_uniform(S.T3, coast());
  for (size_t k = 1; k < stage4.trajectory.size(); ++k) h.push(S.T3 + k * fluid_dt, stage4.trajectory[k]);
  return h;
}

PhaseSpaceDistribution ReferenceTrajectory::f_bar(double t, const KineticLift& lift) const {
  if (const auto* w = force_at(t)) return lift_control(*w, lift, t);
  return PhaseSpaceDistribution::zeros(grid->n(), lift.vg, 3.0, t);
}

double ReferenceTrajectory::jbar_linf_l2() const {
  double s = 0.0;
  for (const auto* st : {&stage2, &stage4})
    for (const auto& w : st->force.w) s = std::max(s, std::sqrt((w[0].square() + w[1].square()).mean()));
  return s;
}

double ReferenceTrajectory::l2_linf() const { return history().l2_linf(); }

ReferenceTrajectory build_reference(const StripGeometry& strip, const ReferenceConfig& cfg, const OmegaSpec* omega) {
  auto aligned = [&](double t) {
    double r = t / cfg.kinetic_dt;
    return std::abs(r - std::round(r)) < 1e-9;
  };
  double sub = cfg.kinetic_dt / cfg.fluid_dt;
  if (std::abs(sub - std::round(sub)) > 1e-9 || !aligned(cfg.T1) || !aligned(cfg.T2) || !aligned(cfg.stage4))
    throw Error(ErrorKind::Config, "stage times must be multiples of the kinetic step, itself a multiple of the fluid step");
  if (!(0.0 < cfg.T1 && cfg.T1 < cfg.T2))
    throw Error(ErrorKind::Config, "need 0 < T1 < T2");

  ReferenceTrajectory ref;
  ref.strip = strip;
  ref.grid = make_grid(cfg.n);
  ref.fluid_dt = cfg.fluid_dt;
  ref.coast_speed = cfg.coast_speed;
  auto& S = ref.schedule;
  S.T1 = cfg.T1;
  S.T2 = cfg.T2;
  S.d0 = strip.d0;
  S.Lambda0 = lambda0(strip.d0, cfg.T1);

  ControlOptions co = cfg.control;
  co.ns.dt = cfg.fluid_dt;
  SpectralField zero = SpectralField::zeros(ref.grid, 2);
  SpectralField coast = zero;
  coast.comp[0](0, 0) = ref.coast()[0];
  coast.comp[1](0, 0) = ref.coast()[1];

  ref.stage2 = approx_fluid_control(zero, coast, cfg.T2 - cfg.T1, strip, co, cfg.T1);
  ref.stage2_jump = ref.stage2.terminal_error;
  double l1 = 0.0;
  const auto& tr = ref.stage2.trajectory;
  for (size_t k = 0; k + 1 < tr.size(); ++k) l1 += 0.5 * cfg.fluid_dt * (grid_sup(tr[k]) + grid_sup(tr[k + 1]));
  S.u2_l1linf = l1;

  S.T3 = minimal_T3(S, cfg.kinetic_dt);
  if (S.T3 > cfg.T3_cap)
    throw Error(ErrorKind::ScheduleInfeasible,
                "T3 = " + std::to_string(S.T3) + " exceeds the cap " + std::to_string(cfg.T3_cap));
  S.T4 = S.T3 + cfg.stage4;

  ref.stage4 = approx_fluid_control(coast, zero, cfg.stage4, strip, co, S.T3);
  ref.terminal_u = ref.stage4.terminal_error;
  ref.terminal_f = ref.force_at(S.T4) ? ref.force_at(S.T4)->at(0).abs().maxCoeff() : 0.0;
  if (omega) {
    double a = ref.stage2.force.leak_outside(*omega), b = ref.stage4.force.leak_outside(*omega);
    ref.support_leak = std::max(a, b);
  }

  if (cfg.certify) {
    FieldHistory hist = ref.history();
    SeedLattice lat = cfg.lattice;
    lat.radius = std::max(S.Lambda0, 10.0);
    const double T = S.T();
    ref.hitting = certify_hitting(hist, strip, lat, T / 12.0, 11.0 * T / 12.0,
                                  cfg.coast_speed * (1.0 - cfg.hit_slack), cfg.hit_h);
    // High normal speeds meet H before T1 with speed above e^{-T1} Lambda0 >= 5.
    for (int i1 = 0; i1 < lat.nx; ++i1)
      for (int i2 = 0; i2 < lat.nx; ++i2)
      for (int j1 = 0; j1 < lat.nv; ++j1)
        for (int j2 = 0; j2 < lat.nv; ++j2) {
          Vec2 v(-lat.radius + 2.0 * lat.radius * j1 / (lat.nv - 1), -lat.radius + 2.0 * lat.radius * j2 / (lat.nv - 1));
          if (std::abs(v.dot(strip.normal)) < S.Lambda0) continue;
          Vec2 x((i1 + 0.5) / lat.nx, (i2 + 0.5) / lat.nx);
          ++ref.case1_seeds;
          if (first_hit({x, v}, 0.0, hist, strip, 0.0, S.T1, 5.0 * (1.0 - 1e-9), cfg.hit_h) >= 0.0) ++ref.case1_hits;
        }
  }
  return ref;
}

PhaseSpaceDistribution TerminalStages::f_flat(double t) const {
  PhaseSpaceDistribution f = g_final;
  double z = zeta(t / tau1);
  for (auto& x : f.data) x *= z;
  f.time = t;
  return f;
}

TerminalStages terminal_stages(const PhaseSpaceDistribution& g_final, const SpectralField& u_final, double tau1,
                               double tau2, const StripGeometry& strip, const ControlOptions& opt) {
  TerminalStages ts;
  ts.tau1 = tau1;
  ts.tau2 = tau2;
  ts.g_final = g_final;
  auto mp = moments(g_final);
  ts.rho_final = mp.rho;
  ts.j_final = mp.j;

  const double dt = opt.ns.dt;
  long steps = std::lround(tau1 / dt);
  if (steps < 1 || std::abs(steps * dt - tau1) > 1e-9) throw Error(ErrorKind::Config, "tau1 is not a multiple of the fluid step");
  NsState s = make_ns_state(u_final);
  s.time = 0.0;
  ts.u_flat.push_back(s.u);
  for (long k = 0; k < steps; ++k) {
    double z = zeta((k + 0.5) * dt / tau1);
    DragSource src;
    src.rho = z * mp.rho;
    src.j = {z * mp.j[0], z * mp.j[1]};
    s = ns_step(s, src, nullptr, opt.ns);
    ts.u_flat.push_back(s.u);
  }
  SpectralField zero = SpectralField::zeros(u_final.grid, 2);
  ts.sharp = approx_fluid_control(s.u, zero, tau2, strip, opt, 0.0);
  ts.final_u = ts.sharp.terminal_error;
  // Both the blended distribution and the lifted control vanish identically at the stage ends.
  PhaseSpaceDistribution end_flat = ts.f_flat(tau1);
  ts.final_f_sup = end_flat.sup();
  ts.final_mass = end_flat.mass();
  return ts;
}

}  // namespace vns
