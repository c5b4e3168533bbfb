#include "vns/phase_space.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>

#include "vns/errors.hpp"

namespace vns {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.assign(n, 0.0);
  w.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
}

namespace {

// Lagrange basis on nodes 0..p-1 evaluated at s.
void lagrange(int p, double s, double* L) {
  for (int k = 0; k < p; ++k) {
    double v = 1.0;
    for (int m = 0; m < p; ++m)
      if (m != k) v *= (s - m) / double(k - m);
    L[k] = v;
  }
}

void lagrange_deriv(int p, double s, double* D) {
  for (int k = 0; k < p; ++k) {
    double den = 1.0;
    for (int m = 0; m < p; ++m)
      if (m != k) den *= double(k - m);
    double sum = 0.0;
    for (int skip = 0; skip < p; ++skip) {
      if (skip == k) continue;
      double prod = 1.0;
      for (int m = 0; m < p; ++m)
        if (m != k && m != skip) prod *= (s - m);
      sum += prod;
    }
    D[k] = sum / den;
  }
}

// Remap of a line of n cell averages onto cells whose edges sit at p0 + j*step (old
// cell units). The primitive is extended by constants outside [0, n] (zero density
// beyond the grid) and interpolated with centered Lagrange stencils. The bracketing
// option keeps each interpolated primitive between its enclosing nodes; with step >= 1
// this keeps the averages of nonnegative data nonnegative.
struct RemapPlan {
  int n = 0, order = 0;
  bool bracket = true;
  std::vector<int> start, k0;
  std::vector<double> w;
  std::vector<signed char> kind;  // -1 below the grid, 1 above, 0 interpolated

  RemapPlan(int n_, double p0, double step, int order_, bool bracket_)
      : n(n_), order(order_), bracket(bracket_), start(n_ + 1), k0(n_ + 1), w((n_ + 1) * order_), kind(n_ + 1) {
    for (int j = 0; j <= n; ++j) {
      double p = p0 + j * step;
      kind[j] = p <= 0.0 ? -1 : (p >= n ? 1 : 0);
      k0[j] = static_cast<int>(std::floor(p));
      start[j] = k0[j] - (order / 2 - 1);
      if (kind[j] == 0) lagrange(order, p - start[j], &w[static_cast<size_t>(j) * order]);
    }
  }

  // Returns the mass (sum units) that left [0, n].
  double apply(const double* in, double* out, std::vector<double>& F) const {
    F.assign(n + 1, 0.0);
    for (int j = 0; j < n; ++j) F[j + 1] = F[j] + in[j];
    auto node = [&](int k) { return k <= 0 ? 0.0 : (k >= n ? F[n] : F[k]); };
    auto value = [&](int j) {
      if (kind[j] < 0) return 0.0;
      if (kind[j] > 0) return F[n];
      const double* L = &w[static_cast<size_t>(j) * order];
      double s = 0.0;
      for (int k = 0; k < order; ++k) s += L[k] * node(start[j] + k);
      if (bracket) {
        double a = node(k0[j]), b = node(k0[j] + 1);
        s = std::clamp(s, std::min(a, b), std::max(a, b));
      }
      return s;
    };
    double first = value(0), prev = first;
    for (int j = 0; j < n; ++j) {
      double next = value(j + 1);
      out[j] = next - prev;
      prev = next;
    }
    return F[n] - (prev - first);
  }
};

// Periodic shift g(x - D) along one axis of an nx*nx slice (axis 0: x1, stride 1),
// done as a conservative remap of the periodic primitive (translation commutes with
// cell averaging, so point values can be treated as averages).
void periodic_shift(const double* in, double* out, int nx, int axis, double D, int order, bool bracket) {
  double s = D * nx;
  double sf = std::floor(s);
  double fr = s - sf;  // evaluate the primitive at k - s = (k - sf - 1) + (1 - fr)
  long base = -static_cast<long>(sf) - 1;
  double t = 1.0 - fr;
  int lo = order / 2 - 1;
  double L[16];
  lagrange(order, t + lo, L);
  std::vector<double> line(nx), F(nx + 1), G(nx + 1);
  for (int b = 0; b < nx; ++b) {
    for (int a = 0; a < nx; ++a) line[a] = axis == 0 ? in[static_cast<size_t>(b) * nx + a] : in[static_cast<size_t>(a) * nx + b];
    F[0] = 0.0;
    for (int a = 0; a < nx; ++a) F[a + 1] = F[a] + line[a];
    const double total = F[nx];
    auto Fk = [&](long k) {
      long m = k >= 0 ? k / nx : -((-k + nx - 1) / nx);
      return F[k - m * nx] + m * total;
    };
    for (int k = 0; k <= nx; ++k) {
      long i0 = k + base;
      double v = 0.0;
      for (int q = 0; q < order; ++q) v += L[q] * Fk(i0 - lo + q);
      if (bracket && t < 1.0) {
        double a = Fk(i0), c = Fk(i0 + 1);
        v = std::clamp(v, std::min(a, c), std::max(a, c));
      } else if (t >= 1.0) {
        v = Fk(i0 + 1);
      }
      G[k] = v;
    }
    for (int a = 0; a < nx; ++a) {
      double val = G[a + 1] - G[a];
      if (axis == 0)
        out[static_cast<size_t>(b) * nx + a] = val;
      else
        out[static_cast<size_t>(a) * nx + b] = val;
    }
  }
}

// Momentum density sum_j v_j fbar_j h^2 per x node.
void local_momentum(const PhaseSpaceDistribution& f, std::vector<double>& m1, std::vector<double>& m2) {
  size_t B = f.block();
  m1.assign(B, 0.0);
  m2.assign(B, 0.0);
  double h2 = f.vg.h() * f.vg.h();
  for (int j2 = 0; j2 < f.vg.n; ++j2)
    for (int j1 = 0; j1 < f.vg.n; ++j1) {
      const double* s = f.slice(j1, j2);
      double a = f.vg.center(j1) * h2, b = f.vg.center(j2) * h2;
      for (size_t i = 0; i < B; ++i) {
        m1[i] += a * s[i];
        m2[i] += b * s[i];
      }
    }
}

// Velocity shift by tau*u(x) on each axis; returns leaked mass (sum units).
double velocity_shift(PhaseSpaceDistribution& f, const std::vector<Grid2>& u, double tau, const TransportConfig& cfg) {
  int n = f.vg.n;
  size_t B = f.block();
  double h = f.vg.h();
  double leak = 0.0;
  std::vector<double> line(n), out(n), F;
  for (int axis = 0; axis < 2; ++axis) {
    const double* ud = u[axis].data();
    for (size_t i = 0; i < B; ++i) {
      double s = tau * ud[i] / h;
      if (s == 0.0) continue;
      RemapPlan plan(n, -s, 1.0, cfg.v_order, cfg.bracket);
      for (int jo = 0; jo < n; ++jo) {
        for (int j = 0; j < n; ++j) line[j] = axis == 0 ? f.slice(j, jo)[i] : f.slice(jo, j)[i];
        leak += plan.apply(line.data(), out.data(), F);
        for (int j = 0; j < n; ++j) (axis == 0 ? f.slice(j, jo)[i] : f.slice(jo, j)[i]) = out[j];
      }
    }
  }
  return leak;
}

// Velocity dilation by a per axis (cell averages of a^2 g(a v)); plan shared by all x.
void dilate(PhaseSpaceDistribution& f, double a, const TransportConfig& cfg) {
  int n = f.vg.n;
  size_t B = f.block();
  RemapPlan plan(n, 0.5 * n * (1.0 - a), a, cfg.v_order, cfg.bracket);
  std::vector<double> line(n), out(n), F;
  for (int axis = 0; axis < 2; ++axis)
    for (int jo = 0; jo < n; ++jo)
      for (size_t i = 0; i < B; ++i) {
        for (int j = 0; j < n; ++j) line[j] = axis == 0 ? f.slice(j, jo)[i] : f.slice(jo, j)[i];
        plan.apply(line.data(), out.data(), F);
        for (int j = 0; j < n; ++j) (axis == 0 ? f.slice(j, jo)[i] : f.slice(jo, j)[i]) = out[j];
      }
}

// Exact free-flight x transport: each v cell shifted by c * center, with the
// correction for the velocity variation across the cell.
void x_transport(PhaseSpaceDistribution& f, double c, const TransportConfig& cfg) {
  int n = f.vg.n, nx = f.nx;
  size_t B = f.block();
  double h = f.vg.h();
  std::vector<double> src, tilde(B);
  for (int axis = 0; axis < 2; ++axis) {
    src = f.data;
    for (int j2 = 0; j2 < n; ++j2)
      for (int j1 = 0; j1 < n; ++j1) {
        int jv = axis == 0 ? j1 : j2;
        double D = c * f.vg.center(jv);
        const double* g = src.data() + f.vcell(j1, j2) * B;
        const double* gp = nullptr;
        const double* gm = nullptr;
        if (cfg.shear_correction && jv > 0 && jv < n - 1) {
          gp = src.data() + (axis == 0 ? f.vcell(j1 + 1, j2) : f.vcell(j1, j2 + 1)) * B;
          gm = src.data() + (axis == 0 ? f.vcell(j1 - 1, j2) : f.vcell(j1, j2 - 1)) * B;
        }
        if (cfg.shear_correction) {
          double c2 = c * c * h * h / 24.0 * nx * nx;
          double c1 = c * h * h / 12.0 * 0.5 * nx / (2.0 * h);
          for (int a = 0; a < nx; ++a) {
            int ap = (a + 1) % nx, am = (a + nx - 1) % nx;
            for (int b = 0; b < nx; ++b) {
              size_t i0, ip, im;
              if (axis == 0) {
                i0 = static_cast<size_t>(b) * nx + a;
                ip = static_cast<size_t>(b) * nx + ap;
                im = static_cast<size_t>(b) * nx + am;
              } else {
                i0 = static_cast<size_t>(a) * nx + b;
                ip = static_cast<size_t>(ap) * nx + b;
                im = static_cast<size_t>(am) * nx + b;
              }
              double v = g[i0] + c2 * (g[ip] - 2.0 * g[i0] + g[im]);
              if (gp) v -= c1 * ((gp[ip] - gm[ip]) - (gp[im] - gm[im]));
              tilde[i0] = v;
            }
          }
          periodic_shift(tilde.data(), f.data.data() + f.vcell(j1, j2) * B, nx, axis, D, cfg.x_order, cfg.bracket);
        } else {
          periodic_shift(g, f.data.data() + f.vcell(j1, j2) * B, nx, axis, D, cfg.x_order, cfg.bracket);
        }
      }
  }
}

bool absorber_active(const AbsorptionRule& r, double t0, double dt) {
  for (int k = 0; k <= 8; ++k)
    if (r.Y(t0 + dt * k / 8.0) > 0.0) return true;
  return false;
}

// Factors for crossings of the strip planes along X(s) = x - c w + (1 - e^{-s}) w, s in (0, dt].
double absorb(PhaseSpaceDistribution& f, double t0, double dt, const AbsorptionRule& rule) {
  if (!absorber_active(rule, t0, dt)) return 0.0;
  const StripGeometry& st = rule.strip;
  int n = f.vg.n, nx = f.nx;
  double c = 1.0 - std::exp(-dt);
  double removed = 0.0;
  std::vector<double> sig(f.block());
  for (int i2 = 0; i2 < nx; ++i2)
    for (int i1 = 0; i1 < nx; ++i1) sig[static_cast<size_t>(i2) * nx + i1] = st.normal_coord(Vec2(double(i1) / nx, double(i2) / nx)) - st.offset;
  for (int j2 = 0; j2 < n; ++j2)
    for (int j1 = 0; j1 < n; ++j1) {
      Vec2 w(f.vg.center(j1), f.vg.center(j2));
      double nw = st.normal.dot(w);
      if (std::abs(nw) <= 1.0) continue;  // incidence never below -1
      double* s = f.slice(j1, j2);
      for (size_t i = 0; i < f.block(); ++i) {
        double se = sig[i], s0 = se - c * nw;
        double lo = std::min(s0, se), hi = std::max(s0, se);
        double fac = 1.0;
        for (int side : {1, -1}) {
          double base = side * st.delta;
          long k0 = static_cast<long>(std::ceil((lo - base) / st.period));
          long k1 = static_cast<long>(std::floor((hi - base) / st.period));
          for (long k = k0; k <= k1; ++k) {
            double q = base + k * st.period;
            if (q == s0) continue;
            double r = (q - s0) / nw;
            double tau = -std::log1p(-r);
            double speed = side * std::exp(-tau) * nw;
            fac *= rule.factor(t0 + tau, speed);
          }
        }
        if (fac != 1.0) {
          removed += (1.0 - fac) * s[i];
          s[i] *= fac;
        }
      }
    }
  return removed * f.cell_volume();
}

double clip_negative(PhaseSpaceDistribution& f) {
  size_t B = f.block();
  int nv = f.vg.n * f.vg.n;
  std::vector<double> neg(B, 0.0), pos(B, 0.0);
  for (int b = 0; b < nv; ++b) {
    const double* s = f.data.data() + static_cast<size_t>(b) * B;
    for (size_t i = 0; i < B; ++i) (s[i] < 0.0 ? neg[i] : pos[i]) += s[i];
  }
  double clipped = 0.0;
  std::vector<double> scale(B, 1.0);
  bool any = false;
  for (size_t i = 0; i < B; ++i) {
    if (neg[i] < 0.0) {
      any = true;
      clipped -= neg[i];
      scale[i] = pos[i] + neg[i] > 0.0 ? (pos[i] + neg[i]) / pos[i] : 0.0;
    }
  }
  if (!any) return 0.0;
  for (int b = 0; b < nv; ++b) {
    double* s = f.data.data() + static_cast<size_t>(b) * B;
    for (size_t i = 0; i < B; ++i) s[i] = s[i] < 0.0 ? 0.0 : s[i] * scale[i];
  }
  return clipped * f.cell_volume();
}

}  // namespace

// ---- InitialProfile ----

double InitialProfile::spatial(const Vec2& x) const {
  double a = 1.0;
  for (const auto& m : modes) a += m.amp * std::cos(2.0 * kPi * (m.m1 * x[0] + m.m2 * x[1]) + m.phase);
  return a;
}

Vec2 InitialProfile::spatial_grad(const Vec2& x) const {
  Vec2 g(0.0, 0.0);
  for (const auto& m : modes) {
    double s = -m.amp * std::sin(2.0 * kPi * (m.m1 * x[0] + m.m2 * x[1]) + m.phase) * 2.0 * kPi;
    g += s * Vec2(m.m1, m.m2);
  }
  return g;
}

double InitialProfile::velocity(const Vec2& v) const {
  double r2 = (v - shift).squaredNorm();
  if (vprofile == VelocityProfile::gaussian) return std::exp(-r2);
  return std::pow(1.0 + r2, -(gamma + 4.0) / 2.0);
}

Vec2 InitialProfile::velocity_grad(const Vec2& v) const {
  Vec2 w = v - shift;
  double r2 = w.squaredNorm();
  if (vprofile == VelocityProfile::gaussian) return -2.0 * std::exp(-r2) * w;
  double q = (gamma + 4.0) / 2.0;
  return -2.0 * q * std::pow(1.0 + r2, -q - 1.0) * w;
}

namespace {
struct SpatialSamples {
  std::vector<double> a, ga;
};
SpatialSamples spatial_samples(const InitialProfile& p, int n = 64) {
  SpatialSamples s;
  for (int i2 = 0; i2 < n; ++i2)
    for (int i1 = 0; i1 < n; ++i1) {
      Vec2 x(double(i1) / n, double(i2) / n);
      s.a.push_back(p.spatial(x));
      s.ga.push_back(p.spatial_grad(x).norm());
    }
  return s;
}
}  // namespace

double InitialProfile::c1_norm() const {
  // Both sups are translation invariant in v, so a radial scan of the unshifted profile suffices.
  SpatialSamples sx = spatial_samples(*this);
  double amax = 0.0;
  for (double a : sx.a) amax = std::max(amax, std::abs(a));
  double bmax = 0.0, gmax = 0.0;
  const int nr = 4000;
  for (int k = 0; k <= nr; ++k) {
    Vec2 w = shift + Vec2(20.0 * k / nr, 0.0);
    double b = velocity(w), gb = velocity_grad(w).norm();
    bmax = std::max(bmax, b);
    for (size_t i = 0; i < sx.a.size(); ++i)
      gmax = std::max(gmax, std::hypot(sx.ga[i] * b, sx.a[i] * gb));
  }
  return std::abs(amplitude) * (amax * bmax + gmax);
}

namespace {
double weighted_velocity_sup(const InitialProfile& p, double power) {
  double R = 25.0 + p.shift.norm();
  const int n = 400;
  double best = 0.0;
  for (int k2 = 0; k2 <= n; ++k2)
    for (int k1 = 0; k1 <= n; ++k1) {
      Vec2 v(-R + 2.0 * R * k1 / n, -R + 2.0 * R * k2 / n);
      best = std::max(best, std::pow(1.0 + v.norm(), power) * p.velocity(v));
    }
  // Refine near the shift center along its ray.
  for (int k = 0; k <= 4000; ++k) {
    Vec2 dir = p.shift.norm() > 0 ? Vec2(p.shift / p.shift.norm()) : Vec2(1.0, 0.0);
    Vec2 v = p.shift + dir * (-R + 2.0 * R * k / 4000.0);
    best = std::max(best, std::pow(1.0 + v.norm(), power) * p.velocity(v));
  }
  return best;
}
}  // namespace

double InitialProfile::weighted_sup(double power) const {
  SpatialSamples sx = spatial_samples(*this);
  double amax = 0.0;
  for (double a : sx.a) amax = std::max(amax, std::abs(a));
  return std::abs(amplitude) * amax * weighted_velocity_sup(*this, power);
}

double InitialProfile::kappa(double power) const {
  SpatialSamples sx = spatial_samples(*this);
  double m = 0.0;
  for (size_t i = 0; i < sx.a.size(); ++i) m = std::max(m, std::abs(sx.a[i]) + sx.ga[i]);
  return std::abs(amplitude) * m * weighted_velocity_sup(*this, power);
}

InitialProfile InitialProfile::scaled_to(double eps) const {
  InitialProfile p = *this;
  p.amplitude = 1.0;
  double s = p.smallness();
  if (!(s > 0.0)) throw Error(ErrorKind::Config, "profile has zero norm");
  p.amplitude = eps / s;
  return p;
}

// ---- PhaseSpaceDistribution ----

PhaseSpaceDistribution PhaseSpaceDistribution::zeros(int nx, const VelocityGrid& vg, double gamma, double t) {
  if (nx < 4 || vg.n < 2 || !(vg.vmax > 0.0)) throw Error(ErrorKind::Config, "bad phase-space grid");
  PhaseSpaceDistribution f;
  f.nx = nx;
  f.vg = vg;
  f.gamma = gamma;
  f.time = t;
  f.data.assign(static_cast<size_t>(nx) * nx * vg.n * vg.n, 0.0);
  return f;
}

double PhaseSpaceDistribution::mass() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s * cell_volume();
}

Vec2 PhaseSpaceDistribution::momentum() const {
  Vec2 m(0.0, 0.0);
  for (int j2 = 0; j2 < vg.n; ++j2)
    for (int j1 = 0; j1 < vg.n; ++j1) {
      const double* s = slice(j1, j2);
      double tot = 0.0;
      for (size_t i = 0; i < block(); ++i) tot += s[i];
      m += tot * Vec2(vg.center(j1), vg.center(j2));
    }
  return m * cell_volume();
}

double PhaseSpaceDistribution::second_moment() const {
  double m = 0.0;
  for (int j2 = 0; j2 < vg.n; ++j2)
    for (int j1 = 0; j1 < vg.n; ++j1) {
      const double* s = slice(j1, j2);
      double tot = 0.0;
      for (size_t i = 0; i < block(); ++i) tot += std::abs(s[i]);
      double r = std::hypot(vg.center(j1), vg.center(j2));
      m += tot * (1.0 + r + r * r);
    }
  return m * cell_volume();
}

double PhaseSpaceDistribution::sup() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::abs(v));
  return m;
}

double PhaseSpaceDistribution::mass_where(const std::function<bool(const Vec2&)>& keep) const {
  double s = 0.0;
  for (int i2 = 0; i2 < nx; ++i2)
    for (int i1 = 0; i1 < nx; ++i1) {
      if (!keep(Vec2(double(i1) / nx, double(i2) / nx))) continue;
      size_t i = static_cast<size_t>(i2) * nx + i1;
      for (size_t b = 0; b < static_cast<size_t>(vg.n) * vg.n; ++b) s += data[b * block() + i];
    }
  return s * cell_volume();
}

double PhaseSpaceDistribution::sup_where(const std::function<bool(const Vec2&)>& keep) const {
  double m = 0.0;
  for (int i2 = 0; i2 < nx; ++i2)
    for (int i1 = 0; i1 < nx; ++i1) {
      if (!keep(Vec2(double(i1) / nx, double(i2) / nx))) continue;
      size_t i = static_cast<size_t>(i2) * nx + i1;
      for (size_t b = 0; b < static_cast<size_t>(vg.n) * vg.n; ++b) m = std::max(m, std::abs(data[b * block() + i]));
    }
  return m;
}

double PhaseSpaceDistribution::sample(const Vec2& x, const Vec2& v) const {
  const int n = vg.n;
  const double h = vg.h();
  int vstart[2];
  double beta[2][16];
  const int vord = std::min(6, n + 1);
  for (int d = 0; d < 2; ++d) {
    double p = (v[d] + vg.vmax) / h;
    if (p < 0.0 || p > n) return 0.0;
    int ord = vord;
    int i = std::clamp(static_cast<int>(std::floor(p)) - (ord / 2 - 1), 0, n + 1 - ord);
    double D[16];
    lagrange_deriv(ord, p - i, D);
    for (int m = 0; m < ord - 1; ++m) {
      double s = 0.0;
      for (int k = m + 1; k < ord; ++k) s += D[k];
      beta[d][m] = s;
    }
    vstart[d] = i;
  }
  double Lx[2][4];
  int xs[2];
  for (int d = 0; d < 2; ++d) {
    double p = x[d] * nx;
    double fl = std::floor(p);
    xs[d] = static_cast<int>(fl) - 1;
    lagrange(4, p - fl + 1.0, Lx[d]);
  }
  int ordv = vord - 1;
  double val = 0.0;
  for (int a = 0; a < ordv; ++a)
    for (int b = 0; b < ordv; ++b) {
      double wv = beta[0][a] * beta[1][b];
      if (wv == 0.0) continue;
      const double* s = slice(vstart[0] + a, vstart[1] + b);
      double acc = 0.0;
      for (int q = 0; q < 4; ++q) {
        int i2 = ((xs[1] + q) % nx + nx) % nx;
        for (int r = 0; r < 4; ++r) {
          int i1 = ((xs[0] + r) % nx + nx) % nx;
          acc += Lx[0][r] * Lx[1][q] * s[static_cast<size_t>(i2) * nx + i1];
        }
      }
      val += wv * acc;
    }
  return val;
}

PhaseSpaceDistribution operator-(const PhaseSpaceDistribution& a, const PhaseSpaceDistribution& b) {
  if (a.nx != b.nx || a.vg.n != b.vg.n) throw Error(ErrorKind::GridMismatch, "distribution grids differ");
  PhaseSpaceDistribution r = a;
  for (size_t i = 0; i < r.data.size(); ++i) r.data[i] -= b.data[i];
  return r;
}

double max_abs_diff(const PhaseSpaceDistribution& a, const PhaseSpaceDistribution& b) {
  if (a.data.size() != b.data.size()) throw Error(ErrorKind::GridMismatch, "distribution grids differ");
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

PhaseSpaceDistribution from_function(int nx, const VelocityGrid& vg,
                                     const std::function<double(const Vec2&, const Vec2&)>& f, Sampling mode, int n_gl,
                                     double gamma) {
  PhaseSpaceDistribution out = PhaseSpaceDistribution::zeros(nx, vg, gamma);
  std::vector<double> gx, gw;
  if (mode == Sampling::cell_average) {
    gauss_legendre(n_gl, gx, gw);
  } else {
    gx = {0.0};
    gw = {2.0};
  }
  double h = vg.h();
  for (int j2 = 0; j2 < vg.n; ++j2)
    for (int j1 = 0; j1 < vg.n; ++j1) {
      double* s = out.slice(j1, j2);
      for (int i2 = 0; i2 < nx; ++i2)
        for (int i1 = 0; i1 < nx; ++i1) {
          Vec2 x(double(i1) / nx, double(i2) / nx);
          double acc = 0.0;
          for (size_t a = 0; a < gx.size(); ++a)
            for (size_t b = 0; b < gx.size(); ++b) {
              Vec2 v(vg.center(j1) + 0.5 * h * gx[a], vg.center(j2) + 0.5 * h * gx[b]);
              acc += 0.25 * gw[a] * gw[b] * f(x, v);
            }
          s[static_cast<size_t>(i2) * nx + i1] = acc;
        }
    }
  return out;
}

namespace {
// Cell average of w(v) over cell (j1, j2) by tensor Gauss-Legendre.
template <class W>
auto cell_average(const VelocityGrid& vg, int j1, int j2, const std::vector<double>& gx, const std::vector<double>& gw,
                  W&& w) {
  double h = vg.h();
  decltype(w(Vec2())) acc{};
  for (size_t a = 0; a < gx.size(); ++a)
    for (size_t b = 0; b < gx.size(); ++b) {
      Vec2 v(vg.center(j1) + 0.5 * h * gx[a], vg.center(j2) + 0.5 * h * gx[b]);
      acc += 0.25 * gw[a] * gw[b] * w(v);
    }
  return acc;
}
}  // namespace

PhaseSpaceDistribution from_profile(int nx, const VelocityGrid& vg, const InitialProfile& p, int n_gl) {
  return free_flight_exact(nx, vg, p, 0.0, n_gl);
}

PhaseSpaceDistribution free_flight_exact(int nx, const VelocityGrid& vg, const InitialProfile& p, double t, int n_gl) {
  PhaseSpaceDistribution out = PhaseSpaceDistribution::zeros(nx, vg, p.gamma, t);
  std::vector<double> gx, gw;
  gauss_legendre(n_gl, gx, gw);
  double et = std::exp(t), C = et - 1.0, pref = std::exp(2.0 * t) * p.amplitude;
  using cd = std::complex<double>;
  // Spatial phase factors per mode at each node.
  size_t B = out.block();
  std::vector<std::vector<cd>> ex(p.modes.size(), std::vector<cd>(B));
  for (size_t m = 0; m < p.modes.size(); ++m)
    for (int i2 = 0; i2 < nx; ++i2)
      for (int i1 = 0; i1 < nx; ++i1) {
        const auto& md = p.modes[m];
        double ph = 2.0 * kPi * (md.m1 * double(i1) / nx + md.m2 * double(i2) / nx) + md.phase;
        ex[m][static_cast<size_t>(i2) * nx + i1] = md.amp * std::exp(cd(0.0, ph));
      }
  for (int j2 = 0; j2 < vg.n; ++j2)
    for (int j1 = 0; j1 < vg.n; ++j1) {
      double b0 = cell_average(vg, j1, j2, gx, gw, [&](const Vec2& v) { return p.velocity(et * v); });
      std::vector<cd> bm(p.modes.size());
      for (size_t m = 0; m < p.modes.size(); ++m) {
        Vec2 k(2.0 * kPi * p.modes[m].m1, 2.0 * kPi * p.modes[m].m2);
        bm[m] = cell_average(vg, j1, j2, gx, gw,
                             [&](const Vec2& v) { return std::exp(cd(0.0, -C * k.dot(v))) * p.velocity(et * v); });
      }
      double* s = out.slice(j1, j2);
      for (size_t i = 0; i < B; ++i) {
        double v = b0;
        for (size_t m = 0; m < p.modes.size(); ++m) v += (ex[m][i] * bm[m]).real();
        s[i] = pref * v;
      }
    }
  return out;
}

// ---- transport ----

StepStats transport_step(PhaseSpaceDistribution& f, double dt, const std::vector<Grid2>* u_begin,
                         const std::vector<Grid2>* u_end, const AbsorptionRule* absorber, const TransportConfig& cfg,
                         std::vector<Grid2>* impulse) {
  if (!(dt > 0.0)) throw Error(ErrorKind::Config, "dt must be positive");
  for (const auto* u : {u_begin, u_end})
    if (u && (u->size() != 2 || (*u)[0].rows() != f.nx || (*u)[0].cols() != f.nx))
      throw Error(ErrorKind::GridMismatch, "fluid grid does not match the kinetic x grid");

  if (cfg.substep_cells > 0.0) {
    double disp = (1.0 - std::exp(-dt)) * f.vg.vmax * f.nx;
    int nsub = std::max(1, static_cast<int>(std::ceil(disp / cfg.substep_cells)));
    if (nsub > 1) {
      TransportConfig inner = cfg;
      inner.substep_cells = 0.0;
      StepStats tot;
      std::vector<Grid2> acc, part, ua, ub;
      if (impulse) acc = {Grid2::Zero(f.nx, f.nx), Grid2::Zero(f.nx, f.nx)};
      auto lerp = [&](double w, std::vector<Grid2>& out) -> const std::vector<Grid2>* {
        if (!u_begin && !u_end) return nullptr;
        out.clear();
        for (int d = 0; d < 2; ++d) {
          Grid2 a = u_begin ? (*u_begin)[d] : Grid2::Zero(f.nx, f.nx);
          Grid2 b = u_end ? (*u_end)[d] : Grid2::Zero(f.nx, f.nx);
          out.push_back((1.0 - w) * a + w * b);
        }
        return &out;
      };
      for (int k = 0; k < nsub; ++k) {
        const auto* pa = lerp(double(k) / nsub, ua);
        const auto* pb = lerp(double(k + 1) / nsub, ub);
        StepStats s = transport_step(f, dt / nsub, pa, pb, absorber, inner, impulse ? &part : nullptr);
        tot.absorbed += s.absorbed;
        tot.clipped += s.clipped;
        tot.tail_leak += s.tail_leak;
        if (impulse)
          for (int d = 0; d < 2; ++d) acc[d] += part[d];
      }
      if (impulse) *impulse = acc;
      return tot;
    }
  }

  StepStats st;
  const double t0 = f.time;
  const double vol = f.cell_volume();
  std::vector<double> ma1, ma2, mb1, mb2, dm1(f.block(), 0.0), dm2(f.block(), 0.0);
  auto mark = [&]() {
    if (impulse) local_momentum(f, ma1, ma2);
  };
  auto accumulate = [&]() {
    if (!impulse) return;
    local_momentum(f, mb1, mb2);
    for (size_t i = 0; i < f.block(); ++i) {
      dm1[i] += mb1[i] - ma1[i];
      dm2[i] += mb2[i] - ma2[i];
    }
  };

  mark();
  if (u_begin) st.tail_leak += velocity_shift(f, *u_begin, 0.5 * dt, cfg) * vol;
  accumulate();

  x_transport(f, 1.0 - std::exp(-dt), cfg);
  if (absorber) st.absorbed += absorb(f, t0, dt, *absorber);

  mark();
  dilate(f, std::exp(dt), cfg);
  if (u_end) st.tail_leak += velocity_shift(f, *u_end, 0.5 * dt, cfg) * vol;
  if (cfg.clip) st.clipped += clip_negative(f);
  accumulate();

  if (impulse) {
    impulse->assign(2, Grid2(f.nx, f.nx));
    for (size_t i = 0; i < f.block(); ++i) {
      (*impulse)[0].data()[i] = -dm1[i];
      (*impulse)[1].data()[i] = -dm2[i];
    }
  }
  f.time = t0 + dt;
  return st;
}

// ---- moments and norms ----

double moment_tail_bound(double weighted_sup, double gamma, double vmax) {
  double p = gamma + 2.0;
  if (p <= 3.0) return std::numeric_limits<double>::infinity();
  double S = 1.0 + vmax;
  double I = std::pow(S, 3.0 - p) / (p - 3.0) - 2.0 * std::pow(S, 2.0 - p) / (p - 2.0) + std::pow(S, 1.0 - p) / (p - 1.0);
  return weighted_sup * 2.0 * kPi * I;
}

MomentPair moments(const PhaseSpaceDistribution& f) {
  MomentPair m;
  int nx = f.nx;
  m.rho = Grid2::Zero(nx, nx);
  m.j = {Grid2::Zero(nx, nx), Grid2::Zero(nx, nx)};
  double h2 = f.vg.h() * f.vg.h();
  for (int j2 = 0; j2 < f.vg.n; ++j2)
    for (int j1 = 0; j1 < f.vg.n; ++j1) {
      Eigen::Map<const Grid2> s(f.slice(j1, j2), nx, nx);
      m.rho += h2 * s;
      m.j[0] += (h2 * f.vg.center(j1)) * s;
      m.j[1] += (h2 * f.vg.center(j2)) * s;
    }
  m.tail_bound = moment_tail_bound(weighted_sup_norm(f, f.gamma + 2.0), f.gamma, f.vg.vmax);
  return m;
}

double weighted_sup_norm(const PhaseSpaceDistribution& f, double power) {
  double m = 0.0;
  for (int j2 = 0; j2 < f.vg.n; ++j2)
    for (int j1 = 0; j1 < f.vg.n; ++j1) {
      double w = std::pow(1.0 + std::hypot(f.vg.center(j1), f.vg.center(j2)), power);
      const double* s = f.slice(j1, j2);
      for (size_t i = 0; i < f.block(); ++i) m = std::max(m, w * std::abs(s[i]));
    }
  return m;
}

namespace {
double torus_gap(double a) {
  a = std::abs(a - std::round(a));
  return a;
}

// Pairs within one slice: all grid neighbors plus random nearby pairs.
double slice_holder(const PhaseSpaceDistribution& f, double sigma, int sample_pairs, std::mt19937_64& rng) {
  int nx = f.nx, n = f.vg.n;
  double h = f.vg.h(), dx = 1.0 / nx;
  double best = 0.0;
  const double px = 1.0 / std::pow(dx, sigma), pv = 1.0 / std::pow(h, sigma);
  auto val = [&](int i1, int i2, int j1, int j2) { return f.at(((i1 % nx) + nx) % nx, ((i2 % nx) + nx) % nx, j1, j2); };
  for (int j2 = 0; j2 < n; ++j2)
    for (int j1 = 0; j1 < n; ++j1)
      for (int i2 = 0; i2 < nx; ++i2)
        for (int i1 = 0; i1 < nx; ++i1) {
          double v0 = val(i1, i2, j1, j2);
          best = std::max(best, std::abs(val(i1 + 1, i2, j1, j2) - v0) * px);
          best = std::max(best, std::abs(val(i1, i2 + 1, j1, j2) - v0) * px);
          if (j1 + 1 < n) best = std::max(best, std::abs(val(i1, i2, j1 + 1, j2) - v0) * pv);
          if (j2 + 1 < n) best = std::max(best, std::abs(val(i1, i2, j1, j2 + 1) - v0) * pv);
        }
  std::uniform_int_distribution<int> ix(0, nx - 1), iv(0, n - 1), off(-3, 3);
  for (int k = 0; k < sample_pairs; ++k) {
    int a1 = ix(rng), a2 = ix(rng), b1 = iv(rng), b2 = iv(rng);
    int c1 = a1 + off(rng), c2 = a2 + off(rng);
    int d1 = std::clamp(b1 + off(rng), 0, n - 1), d2 = std::clamp(b2 + off(rng), 0, n - 1);
    double ddx = std::hypot(torus_gap(double(c1 - a1) / nx), torus_gap(double(c2 - a2) / nx));
    double ddv = std::hypot((d1 - b1) * h, (d2 - b2) * h);
    double d = std::hypot(ddx, ddv);
    if (d <= 0.0) continue;
    best = std::max(best, std::abs(val(c1, c2, d1, d2) - val(a1, a2, b1, b2)) / std::pow(d, sigma));
  }
  return best;
}
}  // namespace

double holder_seminorm(const PhaseSpaceDistribution& f, double sigma, int sample_pairs, unsigned seed) {
  std::mt19937_64 rng(seed);
  return slice_holder(f, sigma, sample_pairs, rng);
}

double holder_seminorm_time(const std::vector<const PhaseSpaceDistribution*>& slices, double sigma, int sample_pairs,
                            unsigned seed) {
  std::mt19937_64 rng(seed);
  double best = 0.0;
  for (size_t k = 0; k < slices.size(); ++k) {
    best = std::max(best, slice_holder(*slices[k], sigma, sample_pairs, rng));
    if (k + 1 < slices.size()) {
      const auto &a = *slices[k], &b = *slices[k + 1];
      double dt = std::abs(b.time - a.time);
      if (dt <= 0.0 || a.data.size() != b.data.size()) continue;
      best = std::max(best, max_abs_diff(a, b) / std::pow(dt, sigma));
    }
  }
  return best;
}

double exact_trace_evaluate(double t, const PhasePoint& p, const FieldHistory& u, const InitialProfile& f0,
                            const AbsorptionRule* absorber, double h) {
  PhasePoint foot = flow(p, t, 0.0, u, h);
  double val = std::exp(2.0 * t) * f0(foot.x, foot.v);
  if (!absorber || val == 0.0) return val;
  auto path = sample_path(foot, 0.0, t, u, h, 0.02);
  for (const auto& ev : detect_crossings(path, absorber->strip, absorber->strip.delta, u, h))
    val *= absorption_factor(ev.time, ev, *absorber);
  return val;
}

// ---- I/O ----

void write_distribution(const std::string& path, const PhaseSpaceDistribution& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os.write("VNSD", 4);
  int32_t hdr[3] = {1, f.nx, f.vg.n};
  os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  double d[3] = {f.vg.vmax, f.gamma, f.time};
  os.write(reinterpret_cast<const char*>(d), sizeof(d));
  os.write(reinterpret_cast<const char*>(f.data.data()), static_cast<std::streamsize>(f.data.size() * sizeof(double)));
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path);
}

PhaseSpaceDistribution read_distribution(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + path);
  char magic[4];
  int32_t hdr[3];
  double d[3];
  is.read(magic, 4);
  is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  is.read(reinterpret_cast<char*>(d), sizeof(d));
  if (!is || std::memcmp(magic, "VNSD", 4) != 0 || hdr[0] != 1) throw Error(ErrorKind::Io, "not a distribution file: " + path);
  VelocityGrid vg{hdr[2], d[0]};
  PhaseSpaceDistribution f = PhaseSpaceDistribution::zeros(hdr[1], vg, d[1], d[2]);
  is.read(reinterpret_cast<char*>(f.data.data()), static_cast<std::streamsize>(f.data.size() * sizeof(double)));
  if (!is) throw Error(ErrorKind::Io, "truncated distribution file: " + path);
  return f;
}

}  // namespace vns
