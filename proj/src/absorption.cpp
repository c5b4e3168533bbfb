#include "vns/absorption.hpp"

#include <algorithm>
#include <fstream>

#include "vns/errors.hpp"

namespace vns {

double smoothstep5(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

double AbsorptionRule::A(double s) { return smoothstep5((s + 2.0) / 0.5); }

double AbsorptionRule::Y(double t) const {
  if (t <= T / 24.0) return smoothstep5((t - T / 48.0) / (T / 48.0));
  if (t >= 23.0 * T / 24.0) return smoothstep5((47.0 * T / 48.0 - t) / (T / 48.0));
  return 1.0;
}

double AbsorptionRule::Ytilde(double t) const {
  return smoothstep5((t - T / 100.0) / (T / 48.0 - T / 100.0));
}

double AbsorptionRule::factor(double t, double s) const {
  if (s >= -1.0) return 1.0;
  double y = Y(t);
  return (1.0 - y) + y * A(s);
}

double absorption_factor(double t, const CrossingEvent& ev, const AbsorptionRule& rule) {
  if (ev.cls == CrossingClass::outgoing || ev.cls == CrossingClass::incoming_shallow) return 1.0;
  return rule.factor(t, ev.normal_speed);
}

Vec2 ExtensionOperator::project(const Vec2& x) const {
  double d = strip.signed_distance(x);
  if (std::abs(d) >= strip.delta) return x;
  double side = d >= 0.0 ? 1.0 : -1.0;
  return x + (side * strip.delta - d) * strip.normal;
}

PhaseFn extend(PhaseFn fn, const ExtensionOperator& op) {
  return [fn = std::move(fn), op](double t, const Vec2& x, const Vec2& v) {
    double d = op.strip.signed_distance(x);
    double del = op.strip.delta;
    if (std::abs(d) >= del) return fn(t, x, v);
    if (op.mode == ExtensionMode::projection) return fn(t, op.project(x), v);
    Vec2 lo = x + (-del - d) * op.strip.normal, hi = x + (del - d) * op.strip.normal;
    double w = (d + del) / (2.0 * del);
    return (1.0 - w) * fn(t, lo, v) + w * fn(t, hi, v);
  };
}

double apply_Pi(const PhaseFn& fn, double t, const Vec2& x, const Vec2& v, const ExtensionOperator& op,
                const AbsorptionRule& rule, bool raw_defined_inside) {
  bool inside = op.strip.inside(x, op.strip.delta);
  if (!inside) return fn(t, x, v);
  double yt = rule.Ytilde(t);
  double ext = yt > 0.0 ? extend(fn, op)(t, x, v) : 0.0;
  if (yt >= 1.0) return ext;
  if (!raw_defined_inside) throw Error(ErrorKind::DomainGap, "raw distribution needed inside the strip at t=" + std::to_string(t));
  return (1.0 - yt) * fn(t, x, v) + yt * ext;
}

void write_absorption_csv(const std::string& path, const AbsorptionRule& rule, int samples) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot open " + path);
  os << "i,t,Y,Ytilde,s,A\n";
  os.precision(12);
  for (int i = 0; i < samples; ++i) {
    double r = double(i) / (samples - 1);
    double t = r * rule.T, s = -3.0 + 3.0 * r;
    os << i << "," << t << "," << rule.Y(t) << "," << rule.Ytilde(t) << "," << s << "," << AbsorptionRule::A(s) << "\n";
  }
}

}  // namespace vns
