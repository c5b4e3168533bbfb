#pragma once

#include <vector>

#include "vns/fourier.hpp"

namespace vns {

// A band of half width `half_width` around the closed line through direction `direction`
// with normal coordinate n.x = offset.
struct StripRegion {
  Vec2 direction{1.0, 0.0};
  double offset = 0.5;
  double half_width = 0.2;
};

struct OmegaSpec {
  std::vector<StripRegion> strips;
  bool contains(const Vec2& x) const;
};

// Integer direction (a, b) with |a|, |b| <= max_entry matching `dir` up to scaling.
// Throws NoClosedLine when none exists.
Eigen::Vector2i rational_direction(const Vec2& dir, int max_entry = 16);

struct StripGeometry {
  Vec2 direction{1.0, 0.0};
  Vec2 normal{0.0, 1.0};
  double offset = 0.5;
  // Spacing of the lifted copies of the line in the normal coordinate.
  double period = 1.0;
  double delta0 = 0.1;
  double delta = 0.1;
  // Largest distance from a point of the torus to the line.
  double d0 = 0.5;

  // Signed normal distance to the nearest lifted copy of the line, in (-period/2, period/2].
  double signed_distance(const Vec2& x) const;
  double distance(const Vec2& x) const { return std::abs(signed_distance(x)); }
  bool inside(const Vec2& x, double width) const { return distance(x) < width; }
  // Normal coordinate n.x of an unwrapped point.
  double normal_coord(const Vec2& x) const { return normal.dot(x); }
};

double choose_delta(double delta0, double T, double K1);

// Closed line from the first region of omega; delta from delta0, T, and the field bound K1.
StripGeometry build_strip(const OmegaSpec& omega, double T, double K1);

enum class CrossingClass { outgoing, incoming_shallow, gamma_minus, gamma_2minus, gamma_3minus };
const char* to_string(CrossingClass c);
// Classification by s = v . n_ext, with n_ext pointing out of the strip.
CrossingClass classify(double normal_speed);

struct CrossingEvent {
  double time = 0.0;
  Vec2 x{0.0, 0.0};
  Vec2 v{0.0, 0.0};
  double normal_speed = 0.0;
  CrossingClass cls = CrossingClass::outgoing;
  int side = 1;  // +1: plane offset + delta, -1: plane offset - delta
};

}  // namespace vns
