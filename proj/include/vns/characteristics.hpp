#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vns/fourier.hpp"
#include "vns/strip.hpp"

namespace vns {

struct PhasePoint {
  Vec2 x{0.0, 0.0};  // wrapped to [0,1)^2 on output
  Vec2 v{0.0, 0.0};
};

Vec2 wrap(const Vec2& x);

// Velocity field as a function of time: snapshots with linear interpolation in time.
// Snapshots are either gridded fields sampled bicubically or spatially uniform vectors.
class FieldHistory {
 public:
  void push(double t, const SpectralField& u);
  void push(double t, std::shared_ptr<const PhysicalSampler> s);
  void push_uniform(double t, const Vec2& c);

  bool empty() const { return snaps_.empty(); }
  size_t size() const { return snaps_.size(); }
  double t_begin() const;
  double t_end() const;
  double time(size_t i) const { return snaps_[i].t; }
  bool uniform(size_t i) const { return snaps_[i].uniform; }

  Vec2 eval(double t, const Vec2& x) const;
  // sup_x |u| at snapshot i.
  double sup_at(size_t i) const;
  // (int ||u||_inf^2 dt)^{1/2} by the trapezoid rule over snapshots.
  double l2_linf() const;
  // int ||u||_inf dt over [a, b] by the trapezoid rule over snapshots inside.
  double l1_linf(double a, double b) const;

  // Segment index i with time(i) <= t < time(i+1); clamps at the ends.
  size_t segment(double t) const;
  // True when snapshots i and i+1 are equal uniform vectors.
  bool constant_segment(size_t i, Vec2* c = nullptr) const;

 private:
  struct Snap {
    double t;
    bool uniform;
    Vec2 c;
    std::shared_ptr<const PhysicalSampler> s;
  };
  std::vector<Snap> snaps_;
};

struct PathSample {
  double t;
  Vec2 x;  // unwrapped
  Vec2 v;
};

// Integrates xdot = v, vdot = -v + u(t,x) from time s to t with RK4 of step <= h;
// segments where the field is a constant vector use the closed form.
PhasePoint flow(const PhasePoint& p, double s, double t, const FieldHistory& u, double h);

// Same integration, reporting samples (at most max_gap apart) to `visit`; stops early when
// visit returns false. Positions are unwrapped.
void trace_path(const PhasePoint& p, double s, double t, const FieldHistory& u, double h, double max_gap,
                const std::function<bool(const PathSample&)>& visit);
std::vector<PathSample> sample_path(const PhasePoint& p, double s, double t, const FieldHistory& u, double h,
                                    double max_gap);

// Closed-form flow in a constant field c (c = 0 gives free friction flight). x is not wrapped.
PathSample constant_field_flow(const Vec2& x, const Vec2& v, double tau, const Vec2& c);

struct LipschitzReport {
  double constant = 0.0;
  int pairs = 0;
};

// Max of |d(X,V)| / ((1+|v|)|d(t,s,x,v)|) over random nearby pairs with 0 <= s <= t <= horizon.
LipschitzReport lipschitz_probe(const FieldHistory& u, int samples, double horizon, double h, double vmax,
                                unsigned seed);

// Crossings of the planes bounding the strip of half width `width` around the line,
// refined by bisection on re-integrated sub-steps.
std::vector<CrossingEvent> detect_crossings(const std::vector<PathSample>& path, const StripGeometry& strip,
                                            double width, const FieldHistory& u, double h);

struct SeedLattice {
  int nx = 16;
  int nv = 17;
  double radius = 10.0;
};

struct HittingOffender {
  Vec2 x, v;
  double best_speed;
};

struct HittingReport {
  long total = 0;
  long hit = 0;
  double fraction = 0.0;
  double t_lo = 0.0, t_hi = 0.0;
  double threshold = 0.0;
  std::vector<HittingOffender> worst;
  std::string to_json() const;
};

// Fraction of lattice seeds started at t = t_start whose path meets the line H in
// [t_lo, t_hi] with normal speed at least `threshold`.
HittingReport certify_hitting(const FieldHistory& u, const StripGeometry& strip, const SeedLattice& lat, double t_lo,
                              double t_hi, double threshold, double h, double t_start = 0.0, int keep_worst = 10);

// First time the path meets H with |V.n| >= threshold inside [t_lo, t_hi]; negative when none.
double first_hit(const PhasePoint& p, double t_start, const FieldHistory& u, const StripGeometry& strip, double t_lo,
                 double t_hi, double threshold, double h, double* best_speed = nullptr);

}  // namespace vns
