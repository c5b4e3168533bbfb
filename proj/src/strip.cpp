#include "vns/strip.hpp"

#include <cmath>
#include <numeric>

#include "vns/errors.hpp"

namespace vns {

Eigen::Vector2i rational_direction(const Vec2& dir, int max_entry) {
  double len = dir.norm();
  if (!(len > 0.0)) throw Error(ErrorKind::NoClosedLine, "zero strip direction");
  Vec2 d = dir / len;
  for (int a = 0; a <= max_entry; ++a)
    for (int b = -max_entry; b <= max_entry; ++b) {
      if ((a == 0 && b <= 0) || std::gcd(a, b) != 1) continue;
      Vec2 c(a, b);
      c.normalize();
      if (std::abs(c[0] * d[1] - c[1] * d[0]) < 1e-9) return Eigen::Vector2i(a, b);
    }
  throw Error(ErrorKind::NoClosedLine, "strip direction has no small rational slope; its image is not closed");
}

bool OmegaSpec::contains(const Vec2& x) const {
  for (const auto& s : strips) {
    Eigen::Vector2i ab = rational_direction(s.direction);
    double L = std::hypot(ab[0], ab[1]);
    Vec2 n(-ab[1] / L, ab[0] / L);
    double p = 1.0 / L;
    double d = n.dot(x) - s.offset;
    d -= p * std::round(d / p);
    if (std::abs(d) < s.half_width) return true;
  }
  return false;
}

double StripGeometry::signed_distance(const Vec2& x) const {
  double d = normal.dot(x) - offset;
  d -= period * std::round(d / period);
  if (d <= -0.5 * period) d += period;
  return d;
}

double choose_delta(double delta0, double T, double K1) {
  double d = std::min({delta0, 0.5, std::expm1(T / 200.0)});
  if (K1 > 0.0) d = std::min(d, 1.0 / (4.0 * K1 * K1));
  return d;
}

StripGeometry build_strip(const OmegaSpec& omega, double T, double K1) {
  if (omega.strips.empty()) throw Error(ErrorKind::NoClosedLine, "control region has no strip component");
  const StripRegion& r = omega.strips.front();
  Eigen::Vector2i ab = rational_direction(r.direction);
  double L = std::hypot(ab[0], ab[1]);
  StripGeometry g;
  g.direction = Vec2(ab[0] / L, ab[1] / L);
  g.normal = Vec2(-g.direction[1], g.direction[0]);
  g.offset = r.offset;
  g.period = 1.0 / L;
  if (!(r.half_width > 0.0) || r.half_width >= 0.5 * g.period)
    throw Error(ErrorKind::Config, "strip half width must lie in (0, period/2)");
  g.delta0 = 0.5 * r.half_width;
  g.delta = choose_delta(g.delta0, T, K1);
  g.d0 = 0.5 * g.period;
  return g;
}

const char* to_string(CrossingClass c) {
  switch (c) {
    case CrossingClass::outgoing: return "outgoing";
    case CrossingClass::incoming_shallow: return "incoming_shallow";
    case CrossingClass::gamma_minus: return "gamma_minus";
    case CrossingClass::gamma_2minus: return "gamma_2minus";
    case CrossingClass::gamma_3minus: return "gamma_3minus";
  }
  return "?";
}

CrossingClass classify(double s) {
  if (s >= 0.0) return CrossingClass::outgoing;
  if (s <= -2.0) return CrossingClass::gamma_3minus;
  if (s <= -1.5) return CrossingClass::gamma_2minus;
  if (s <= -1.0) return CrossingClass::gamma_minus;
  return CrossingClass::incoming_shallow;
}

}  // namespace vns
