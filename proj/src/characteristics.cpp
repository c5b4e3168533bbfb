#include "vns/characteristics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "vns/errors.hpp"

namespace vns {

namespace {
constexpr double kTimeSlack = 1e-9;
}

Vec2 wrap(const Vec2& x) {
  Vec2 y(x[0] - std::floor(x[0]), x[1] - std::floor(x[1]));
  if (y[0] >= 1.0) y[0] = 0.0;
  if (y[1] >= 1.0) y[1] = 0.0;
  return y;
}

void FieldHistory::push(double t, const SpectralField& u) {
  push(t, std::make_shared<const PhysicalSampler>(u));
}

void FieldHistory::push(double t, std::shared_ptr<const PhysicalSampler> s) {
  if (!snaps_.empty() && t <= snaps_.back().t) throw Error(ErrorKind::Config, "field snapshots must increase in time");
  snaps_.push_back({t, false, Vec2::Zero(), std::move(s)});
}

void FieldHistory::push_uniform(double t, const Vec2& c) {
  if (!snaps_.empty() && t <= snaps_.back().t) throw Error(ErrorKind::Config, "field snapshots must increase in time");
  snaps_.push_back({t, true, c, nullptr});
}

double FieldHistory::t_begin() const { return snaps_.empty() ? 0.0 : snaps_.front().t; }
double FieldHistory::t_end() const { return snaps_.empty() ? 0.0 : snaps_.back().t; }

size_t FieldHistory::segment(double t) const {
  if (snaps_.size() < 2) return 0;
  auto it = std::upper_bound(snaps_.begin(), snaps_.end(), t, [](double a, const Snap& s) { return a < s.t; });
  size_t i = it == snaps_.begin() ? 0 : static_cast<size_t>(it - snaps_.begin()) - 1;
  return std::min(i, snaps_.size() - 2);
}

bool FieldHistory::constant_segment(size_t i, Vec2* c) const {
  if (snaps_.size() == 1) {
    if (!snaps_[0].uniform) return false;
    if (c) *c = snaps_[0].c;
    return true;
  }
  const Snap &a = snaps_[i], &b = snaps_[i + 1];
  if (!a.uniform || !b.uniform || a.c != b.c) return false;
  if (c) *c = a.c;
  return true;
}

Vec2 FieldHistory::eval(double t, const Vec2& x) const {
  if (snaps_.empty()) throw Error(ErrorKind::FieldUnavailable, "empty field history");
  auto value = [&](const Snap& s) { return s.uniform ? s.c : s.s->sample2(x); };
  if (snaps_.size() == 1) return value(snaps_[0]);
  if (t < t_begin() - kTimeSlack || t > t_end() + kTimeSlack)
    throw Error(ErrorKind::FieldUnavailable, "field requested at t=" + std::to_string(t) + " outside [" +
                                                 std::to_string(t_begin()) + ", " + std::to_string(t_end()) + "]");
  size_t i = segment(t);
  const Snap &a = snaps_[i], &b = snaps_[i + 1];
  double w = std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0);
  if (w == 0.0) return value(a);
  if (w == 1.0) return value(b);
  return (1.0 - w) * value(a) + w * value(b);
}

double FieldHistory::sup_at(size_t i) const {
  const Snap& s = snaps_[i];
  return s.uniform ? s.c.norm() : s.s->sup_norm();
}

double FieldHistory::l2_linf() const {
  double acc = 0.0;
  for (size_t i = 0; i + 1 < snaps_.size(); ++i) {
    double a = sup_at(i), b = sup_at(i + 1);
    acc += 0.5 * (snaps_[i + 1].t - snaps_[i].t) * (a * a + b * b);
  }
  return std::sqrt(acc);
}

double FieldHistory::l1_linf(double a, double b) const {
  double acc = 0.0;
  for (size_t i = 0; i + 1 < snaps_.size(); ++i) {
    double lo = std::max(a, snaps_[i].t), hi = std::min(b, snaps_[i + 1].t);
    if (hi <= lo) continue;
    acc += 0.5 * (hi - lo) * (sup_at(i) + sup_at(i + 1));
  }
  return acc;
}

PathSample constant_field_flow(const Vec2& x, const Vec2& v, double tau, const Vec2& c) {
  double e = -std::expm1(-tau);  // 1 - e^{-tau}
  return {tau, x + e * (v - c) + tau * c, v - e * (v - c)};
}

namespace {

PathSample rk4(const FieldHistory& u, const PathSample& p, double dt) {
  auto acc = [&](double t, const Vec2& x, const Vec2& v) -> Vec2 { return -v + u.eval(t, x); };
  Vec2 k1x = p.v, k1v = acc(p.t, p.x, p.v);
  Vec2 x2 = p.x + 0.5 * dt * k1x, v2 = p.v + 0.5 * dt * k1v;
  Vec2 k2x = v2, k2v = acc(p.t + 0.5 * dt, x2, v2);
  Vec2 x3 = p.x + 0.5 * dt * k2x, v3 = p.v + 0.5 * dt * k2v;
  Vec2 k3x = v3, k3v = acc(p.t + 0.5 * dt, x3, v3);
  Vec2 x4 = p.x + dt * k3x, v4 = p.v + dt * k3v;
  Vec2 k4x = v4, k4v = acc(p.t + dt, x4, v4);
  return {p.t + dt, p.x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
          p.v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)};
}

void check_range(const FieldHistory& u, double s, double t) {
  if (u.empty()) throw Error(ErrorKind::FieldUnavailable, "empty field history");
  if (u.size() == 1) return;
  double lo = std::min(s, t), hi = std::max(s, t);
  if (lo < u.t_begin() - kTimeSlack || hi > u.t_end() + kTimeSlack)
    throw Error(ErrorKind::FieldUnavailable, "flow requested on [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                                 "] outside the stored field history");
}

// Unwrapped integration; calls visit on every intermediate point (not the start).
bool integrate(PathSample& cur, double t, const FieldHistory& u, double h, double max_gap,
               const std::function<bool(const PathSample&)>* visit) {
  const double dir = t >= cur.t ? 1.0 : -1.0;
  while (dir * (t - cur.t) > 0.0) {
    double end = t;
    size_t seg = 0;
    if (u.size() >= 2) {
      // Segment containing the next piece of the path in the direction of travel.
      seg = u.segment(dir > 0 ? cur.t : std::nextafter(cur.t, -INFINITY));
      double a = u.time(seg), b = u.time(seg + 1);
      if (dir > 0 && cur.t >= b) seg = std::min(seg + 1, u.size() - 2);
      a = u.time(seg);
      b = u.time(seg + 1);
      end = dir > 0 ? std::min(t, b) : std::max(t, a);
      if (dir * (end - cur.t) <= 0.0) end = t;
    }
    double len = end - cur.t;
    Vec2 c;
    if (u.constant_segment(seg, &c)) {
      int n = max_gap > 0.0 ? std::max(1, static_cast<int>(std::ceil(std::abs(len) / max_gap - 1e-12))) : 1;
      PathSample start = cur;
      for (int k = 1; k <= n; ++k) {
        double tau = (k == n) ? len : len * k / n;
        PathSample q = constant_field_flow(start.x, start.v, tau, c);
        q.t = k == n ? end : start.t + tau;
        cur = q;
        if (visit && !(*visit)(cur)) return false;
      }
    } else {
      int n = std::max(1, static_cast<int>(std::ceil(std::abs(len) / h - 1e-9)));
      double dt = len / n;
      for (int k = 0; k < n; ++k) {
        cur = rk4(u, cur, dt);
        if (k == n - 1) cur.t = end;
        if (visit && !(*visit)(cur)) return false;
      }
    }
  }
  return true;
}

PathSample integrate_to(const PathSample& p, double t, const FieldHistory& u, double h) {
  PathSample cur = p;
  integrate(cur, t, u, h, 0.0, nullptr);
  return cur;
}

}  // namespace

PhasePoint flow(const PhasePoint& p, double s, double t, const FieldHistory& u, double h) {
  check_range(u, s, t);
  PathSample cur{s, p.x, p.v};
  integrate(cur, t, u, h, 0.0, nullptr);
  return {wrap(cur.x), cur.v};
}

void trace_path(const PhasePoint& p, double s, double t, const FieldHistory& u, double h, double max_gap,
                const std::function<bool(const PathSample&)>& visit) {
  check_range(u, s, t);
  PathSample cur{s, p.x, p.v};
  if (!visit(cur)) return;
  integrate(cur, t, u, h, max_gap, &visit);
}

std::vector<PathSample> sample_path(const PhasePoint& p, double s, double t, const FieldHistory& u, double h,
                                    double max_gap) {
  std::vector<PathSample> out;
  trace_path(p, s, t, u, h, max_gap, [&](const PathSample& q) {
    out.push_back(q);
    return true;
  });
  return out;
}

LipschitzReport lipschitz_probe(const FieldHistory& u, int samples, double horizon, double h, double vmax,
                                unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 1.0);
  const double t0 = u.t_begin();
  LipschitzReport rep;
  for (int i = 0; i < samples; ++i) {
    double t = horizon * U(rng), s = t * U(rng);
    Vec2 x(U(rng), U(rng));
    double r = vmax * std::sqrt(U(rng)), th = 2.0 * M_PI * U(rng);
    Vec2 v(r * std::cos(th), r * std::sin(th));
    Eigen::Matrix<double, 6, 1> d;
    for (int k = 0; k < 6; ++k) d[k] = N(rng);
    d *= 1e-3 * (0.5 + 0.5 * U(rng)) / d.norm();
    double t2 = t + d[0], s2 = s + d[1];
    if (s2 < 0.0 || s2 > t2 || t2 > horizon) continue;
    Vec2 x2 = x + d.segment<2>(2), v2 = v + d.segment<2>(4);
    PathSample a = integrate_to({t0 + s, x, v}, t0 + t, u, h);
    PathSample b = integrate_to({t0 + s2, x2, v2}, t0 + t2, u, h);
    double num = std::sqrt((a.x - b.x).squaredNorm() + (a.v - b.v).squaredNorm());
    double ratio = num / ((1.0 + v.norm()) * d.norm());
    rep.constant = std::max(rep.constant, ratio);
    ++rep.pairs;
  }
  return rep;
}

std::vector<CrossingEvent> detect_crossings(const std::vector<PathSample>& path, const StripGeometry& strip,
                                            double width, const FieldHistory& u, double h) {
  std::vector<CrossingEvent> events;
  for (size_t k = 0; k + 1 < path.size(); ++k) {
    const PathSample &a = path[k], &b = path[k + 1];
    double sa = strip.normal_coord(a.x) - strip.offset, sb = strip.normal_coord(b.x) - strip.offset;
    double lo = std::min(sa, sb), hi = std::max(sa, sb);
    for (int side : {1, -1}) {
      double base = side * width;
      long j0 = static_cast<long>(std::ceil((lo - base) / strip.period));
      long j1 = static_cast<long>(std::floor((hi - base) / strip.period));
      for (long j = j0; j <= j1; ++j) {
        double q = base + j * strip.period;
        double fa = sa - q, fb = sb - q;
        if (fa == 0.0 || fa * fb > 0.0) continue;
        // Bisection on the re-integrated sub-step.
        double ta = a.t, tb = b.t;
        PathSample best = b;
        for (int it = 0; it < 60 && std::abs(tb - ta) > 1e-12; ++it) {
          double tm = 0.5 * (ta + tb);
          PathSample m = integrate_to(a, tm, u, h);
          double fm = strip.normal_coord(m.x) - strip.offset - q;
          if ((fm < 0.0) == (fa < 0.0) && fm != 0.0) {
            ta = tm;
          } else {
            tb = tm;
            best = m;
          }
        }
        Vec2 next = side * strip.normal;
        double sn = best.v.dot(next);
        if (std::abs(sn) < 1e-9)
          throw Error(ErrorKind::GrazingUnresolved, "tangential crossing at t=" + std::to_string(best.t));
        CrossingEvent ev;
        ev.time = best.t;
        ev.x = wrap(best.x);
        ev.v = best.v;
        ev.normal_speed = sn;
        ev.cls = classify(sn);
        ev.side = side;
        events.push_back(ev);
      }
    }
  }
  bool forward = path.size() < 2 || path.back().t >= path.front().t;
  std::stable_sort(events.begin(), events.end(), [forward](const CrossingEvent& p, const CrossingEvent& q) {
    return forward ? p.time < q.time : p.time > q.time;
  });
  return events;
}

double first_hit(const PhasePoint& p, double t_start, const FieldHistory& u, const StripGeometry& strip, double t_lo,
                 double t_hi, double threshold, double h, double* best_speed) {
  double best = 0.0, when = -1.0;
  const double gap = 0.02;
  PathSample prev{t_start, p.x, p.v};
  auto cell = [&](const PathSample& q) {
    return std::floor((strip.normal_coord(q.x) - strip.offset) / strip.period);
  };
  trace_path(p, t_start, t_hi, u, h, gap, [&](const PathSample& q) {
    if (q.t == t_start) return true;
    PathSample a = prev;
    prev = q;
    if (q.t < t_lo || cell(a) == cell(q)) return true;
    // Refine the crossing of the nearest line copy between a and q.
    double sa = strip.normal_coord(a.x) - strip.offset;
    double qv = strip.period * std::max(cell(a), cell(q));
    double ta = a.t, tb = q.t;
    PathSample m = q;
    for (int it = 0; it < 60 && tb - ta > 1e-12; ++it) {
      double tm = 0.5 * (ta + tb);
      m = integrate_to(a, tm, u, h);
      double fm = strip.normal_coord(m.x) - strip.offset - qv;
      if ((fm < 0.0) == (sa - qv < 0.0)) ta = tm; else tb = tm;
    }
    if (m.t < t_lo) return true;
    double sp = std::abs(m.v.dot(strip.normal));
    best = std::max(best, sp);
    if (sp >= threshold) {
      when = m.t;
      return false;
    }
    return true;
  });
  if (best_speed) *best_speed = best;
  return when;
}

HittingReport certify_hitting(const FieldHistory& u, const StripGeometry& strip, const SeedLattice& lat, double t_lo,
                              double t_hi, double threshold, double h, double t_start, int keep_worst) {
  HittingReport rep;
  rep.t_lo = t_lo;
  rep.t_hi = t_hi;
  rep.threshold = threshold;
  std::vector<HittingOffender> miss;
  for (int i1 = 0; i1 < lat.nx; ++i1)
    for (int i2 = 0; i2 < lat.nx; ++i2)
      for (int j1 = 0; j1 < lat.nv; ++j1)
        for (int j2 = 0; j2 < lat.nv; ++j2) {
          Vec2 x((i1 + 0.5) / lat.nx, (i2 + 0.5) / lat.nx);
          Vec2 v(-lat.radius + 2.0 * lat.radius * j1 / (lat.nv - 1), -lat.radius + 2.0 * lat.radius * j2 / (lat.nv - 1));
          double best = 0.0;
          double t = -1.0;
          try {
            t = first_hit({x, v}, t_start, u, strip, t_lo, t_hi, threshold, h, &best);
          } catch (const Error& e) {
            if (e.kind() != ErrorKind::GrazingUnresolved) throw;
          }
          ++rep.total;
          if (t >= 0.0) {
            ++rep.hit;
          } else {
            miss.push_back({x, v, best});
          }
        }
  rep.fraction = rep.total ? double(rep.hit) / rep.total : 0.0;
  std::sort(miss.begin(), miss.end(), [](const auto& a, const auto& b) { return a.best_speed < b.best_speed; });
  if (static_cast<int>(miss.size()) > keep_worst) miss.resize(keep_worst);
  rep.worst = std::move(miss);
  return rep;
}

std::string HittingReport::to_json() const {
  nlohmann::json j;
  j["total"] = total;
  j["hit"] = hit;
  j["fraction"] = fraction;
  j["window"] = {t_lo, t_hi};
  j["threshold"] = threshold;
  j["worst"] = nlohmann::json::array();
  for (const auto& w : worst)
    j["worst"].push_back({{"x", {w.x[0], w.x[1]}}, {"v", {w.v[0], w.v[1]}}, {"min_speed", w.best_speed}});
  return j.dump(2);
}

}  // namespace vns
