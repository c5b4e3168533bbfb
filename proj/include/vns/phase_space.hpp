#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vns/absorption.hpp"
#include "vns/characteristics.hpp"
#include "vns/fourier.hpp"

namespace vns {

// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

// Uniform cells of width h covering [-vmax, vmax] per axis; values are cell averages.
struct VelocityGrid {
  int n = 24;
  double vmax = 6.0;
  double h() const { return 2.0 * vmax / n; }
  double edge(int j) const { return -vmax + j * h(); }
  double center(int j) const { return -vmax + (j + 0.5) * h(); }
};

// amp * cos(2 pi m.x + phase)
struct SpatialMode {
  int m1 = 1, m2 = 0;
  double amp = 0.5;
  double phase = 0.0;
};

enum class VelocityProfile { algebraic, gaussian };

// f0(x, v) = amplitude * a(x) * b(v - shift) with a(x) = 1 + sum of modes and
// b(w) = (1+|w|^2)^{-(gamma+4)/2} (algebraic) or exp(-|w|^2) (gaussian).
struct InitialProfile {
  double amplitude = 1.0;
  std::vector<SpatialMode> modes;
  VelocityProfile vprofile = VelocityProfile::algebraic;
  double gamma = 3.0;
  Vec2 shift{0.0, 0.0};

  double spatial(const Vec2& x) const;
  Vec2 spatial_grad(const Vec2& x) const;
  double velocity(const Vec2& v) const;
  Vec2 velocity_grad(const Vec2& v) const;
  double operator()(const Vec2& x, const Vec2& v) const { return amplitude * spatial(x) * velocity(v); }

  // Sampled sup|f0| + sup|grad_{x,v} f0|.
  double c1_norm() const;
  // Sampled sup (1+|v|)^power |f0|.
  double weighted_sup(double power) const;
  // Sampled sup (1+|v|)^power (|f0| + |grad_x f0|).
  double kappa(double power) const;
  // ||f0||_{C^1} + ||(1+|v|)^{gamma+2} f0||_{C^0}
  double smallness() const { return c1_norm() + weighted_sup(gamma + 2.0); }
  // Copy with amplitude chosen so that smallness() == eps.
  InitialProfile scaled_to(double eps) const;
};

struct PhaseSpaceDistribution {
  int nx = 24;
  VelocityGrid vg;
  double time = 0.0;
  double gamma = 3.0;
  // Layout: x-blocks of nx*nx values (x1 fastest) ordered by v-cell (j1 fastest).
  std::vector<double> data;

  static PhaseSpaceDistribution zeros(int nx, const VelocityGrid& vg, double gamma = 3.0, double t = 0.0);
  size_t block() const { return static_cast<size_t>(nx) * nx; }
  size_t vcell(int j1, int j2) const { return static_cast<size_t>(j2) * vg.n + j1; }
  double* slice(int j1, int j2) { return data.data() + vcell(j1, j2) * block(); }
  const double* slice(int j1, int j2) const { return data.data() + vcell(j1, j2) * block(); }
  double& at(int i1, int i2, int j1, int j2) { return slice(j1, j2)[static_cast<size_t>(i2) * nx + i1]; }
  double at(int i1, int i2, int j1, int j2) const { return slice(j1, j2)[static_cast<size_t>(i2) * nx + i1]; }
  // Phase-space volume element of one (x node, v cell) pair.
  double cell_volume() const { return vg.h() * vg.h() / (double(nx) * nx); }

  double mass() const;
  Vec2 momentum() const;
  // int (1 + |v| + |v|^2) f
  double second_moment() const;
  double sup() const;
  double mass_where(const std::function<bool(const Vec2&)>& keep) const;
  double sup_where(const std::function<bool(const Vec2&)>& keep) const;

  // Point evaluation: periodic cubic in x, derivative of the interpolated primitive (6 points) in v.
  double sample(const Vec2& x, const Vec2& v) const;
};

PhaseSpaceDistribution operator-(const PhaseSpaceDistribution& a, const PhaseSpaceDistribution& b);
double max_abs_diff(const PhaseSpaceDistribution& a, const PhaseSpaceDistribution& b);

enum class Sampling { cell_average, center };

// Cell averages by an n_gl-point Gauss-Legendre rule per velocity axis, or center values.
PhaseSpaceDistribution from_function(int nx, const VelocityGrid& vg, const std::function<double(const Vec2&, const Vec2&)>& f,
                                     Sampling mode = Sampling::cell_average, int n_gl = 8, double gamma = 3.0);
PhaseSpaceDistribution from_profile(int nx, const VelocityGrid& vg, const InitialProfile& p, int n_gl = 8);

// Cell averages of the free-flight solution e^{2t} f0(x + (1-e^t) v, e^t v).
PhaseSpaceDistribution free_flight_exact(int nx, const VelocityGrid& vg, const InitialProfile& p, double t, int n_gl = 8);

struct TransportConfig {
  int x_order = 6;          // Lagrange points for the periodic primitive in x shifts
  int v_order = 8;          // Lagrange order for the primitive in velocity remaps (2 = donor cell)
  bool bracket = true;      // keep remapped primitives between enclosing nodes
  bool shear_correction = true;
  bool clip = true;
  double substep_cells = 0.0;  // > 0: split steps whose x displacement exceeds this many cells
};

struct StepStats {
  double absorbed = 0.0;
  double clipped = 0.0;
  double tail_leak = 0.0;
};

// One Strang step B(dt/2) A(dt) B(dt/2): B shifts velocities by u tau, A is the exact
// free-friction flight (x shift then velocity dilation). u_begin/u_end are fluid
// velocities on the x grid for the two half steps (null for u = 0). When impulse is
// non-null it receives the momentum density handed to the fluid.
StepStats transport_step(PhaseSpaceDistribution& f, double dt, const std::vector<Grid2>* u_begin,
                         const std::vector<Grid2>* u_end, const AbsorptionRule* absorber, const TransportConfig& cfg,
                         std::vector<Grid2>* impulse = nullptr);

struct MomentPair {
  Grid2 rho;
  std::vector<Grid2> j;
  double tail_bound = 0.0;
};

MomentPair moments(const PhaseSpaceDistribution& f);
// Sup-weighted bound on int_{|v|>vmax} |v| |f| dv.
double moment_tail_bound(double weighted_sup, double gamma, double vmax);

double weighted_sup_norm(const PhaseSpaceDistribution& f, double power);
// Lower bound for the sigma-Hoelder seminorm over neighbor pairs plus random pairs.
double holder_seminorm(const PhaseSpaceDistribution& f, double sigma, int sample_pairs, unsigned seed = 1);
// Same for a list of time slices, adding pairs between consecutive slices.
double holder_seminorm_time(const std::vector<const PhaseSpaceDistribution*>& slices, double sigma, int sample_pairs,
                            unsigned seed = 1);

// Grid-free oracle: backward trace to t = 0, e^{2t} f0 at the foot, times the absorption
// factors of the incoming crossings along the way.
double exact_trace_evaluate(double t, const PhasePoint& p, const FieldHistory& u, const InitialProfile& f0,
                            const AbsorptionRule* absorber, double h);

// Binary: magic "VNSD", int32 version, int32 nx, int32 nv, f64 vmax, f64 gamma, f64 time, then data.
void write_distribution(const std::string& path, const PhaseSpaceDistribution& f);
PhaseSpaceDistribution read_distribution(const std::string& path);

}  // namespace vns
