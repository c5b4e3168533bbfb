#pragma once

#include <functional>
#include <string>

#include "vns/strip.hpp"

namespace vns {

// 6s^5 - 15s^4 + 10s^3 clamped to [0,1].
double smoothstep5(double s);

struct AbsorptionRule {
  StripGeometry strip;
  double T = 1.0;

  // Opacity in the incidence coordinate s = v . n_ext: 1 for s >= -3/2, 0 for s <= -2.
  static double A(double s);
  // 0 on [0,T/48] and [47T/48,T], 1 on [T/24,23T/24].
  double Y(double t) const;
  // 0 on [0,T/100], 1 on [T/48,T].
  double Ytilde(double t) const;
  // (1 - Y) + Y A for a crossing at time t with incidence s; 1 for s >= 0.
  double factor(double t, double s) const;
};

double absorption_factor(double t, const CrossingEvent& ev, const AbsorptionRule& rule);

using PhaseFn = std::function<double(double t, const Vec2& x, const Vec2& v)>;

enum class ExtensionMode { projection, blend };

struct ExtensionOperator {
  StripGeometry strip;
  ExtensionMode mode = ExtensionMode::projection;
  // Point on the strip boundary used by projection mode, and the two boundary points of blend mode.
  Vec2 project(const Vec2& x) const;
};

PhaseFn extend(PhaseFn fn, const ExtensionOperator& op);

// (1 - Ytilde) f + Ytilde pi f. Throws DomainGap when the raw function is needed inside
// the strip but is not defined there.
double apply_Pi(const PhaseFn& fn, double t, const Vec2& x, const Vec2& v, const ExtensionOperator& op,
                const AbsorptionRule& rule, bool raw_defined_inside = true);

// Sampled A, Y, Ytilde curves.
void write_absorption_csv(const std::string& path, const AbsorptionRule& rule, int samples = 401);

}  // namespace vns
