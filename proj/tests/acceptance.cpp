// Acceptance run: one pass/fail line per criterion. Tolerances are pinned here, not read from configs.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "vns/errors.hpp"
#include "vns/scenario.hpp"

#ifndef VNS_SCENARIO_DIR
#define VNS_SCENARIO_DIR "tools/scenarios"
#endif

using namespace vns;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Criteria known to be out of reach; they print "FAIL (known, see notes)" and do not fail the exit code.
const std::set<int> kKnownUnattainable = {};

// 1: transport oracle
constexpr double kOracleErr = 1e-3;
constexpr double kOracleOrder = 1.8;
constexpr double kOracleSeconds = 60;
// 2: characteristics
constexpr double kFlowErr = 1e-10;
constexpr double kFlowSpan = 5.0;
// 3: fluid solver
constexpr double kDecayErr = 1e-6;
constexpr double kEnergySlack = 0.05;
constexpr double kNsSeconds = 60;
// 4: conservation
constexpr double kMassDrift = 1e-6;
constexpr double kMomentumDrift = 1e-5;
constexpr double kConservationSeconds = 300;
// 5: hitting certificate
constexpr double kHitFraction = 0.99;
constexpr double kReferenceSeconds = 600;
// 6: fixed point
constexpr double kK1Spread = 0.1;
constexpr double kFixedPointSeconds = 1800;
// 7: confinement and terminal state
constexpr double kConfinement = 1e-3;
constexpr double kFinalU = 1e-2;
constexpr double kFinalMass = 1e-3;
constexpr double kFullSeconds = 3600;
// 8: stability sweep
constexpr double kExponentLo = 1.8, kExponentHi = 2.2;
constexpr double kPrefactorSpread = 2.0;
constexpr double kStabilitySeconds = 1200;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json load_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw Error(ErrorKind::Io, "cannot open " + p.string());
  json j;
  is >> j;
  return j;
}

std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct ScenarioRun {
  json report;
  double seconds = 0.0;
  fs::path dir;
};

ScenarioRun run_shipped(const std::string& name, const fs::path& work, const std::string& tag = "") {
  RunConfig cfg = RunConfig::load((fs::path(VNS_SCENARIO_DIR) / (name + ".json")).string());
  ScenarioRun r;
  r.dir = work / (name + tag);
  fs::remove_all(r.dir);
  std::fprintf(stderr, "running %s ...\n", name.c_str());
  auto t0 = std::chrono::steady_clock::now();
  run_scenario(cfg, r.dir.string());
  r.seconds = seconds_since(t0);
  r.report = load_json(r.dir / "report.json");
  std::fprintf(stderr, "  %s done in %.1f s\n", name.c_str(), r.seconds);
  return r;
}

Outcome transport_oracle() {
  auto t0 = std::chrono::steady_clock::now();
  InitialProfile p;
  p.modes = {{1, 0, 0.5, 0.0}, {0, 1, 0.25, 0.3}};
  TransportConfig cfg;
  cfg.clip = false;
  std::vector<double> err;
  for (int n : {16, 32, 64}) {
    VelocityGrid vg{n, 6.0};
    auto f = from_profile(n, vg, p);
    transport_step(f, 0.5, nullptr, nullptr, nullptr, cfg);
    auto e = free_flight_exact(n, vg, p, 0.5);
    err.push_back(max_abs_diff(f, e) / e.sup());
  }
  double order = std::log2(err[1] / err[2]);
  double s = seconds_since(t0);
  return {err[2] < kOracleErr && order >= kOracleOrder && s < kOracleSeconds,
          fmt("relative max error N=16/32/64: %.2e %.2e %.2e (< %.0e at 64), order %.2f (>= %.1f), %.1f s", err[0],
              err[1], err[2], kOracleErr, order, kOracleOrder, s)};
}

Outcome characteristic_exactness() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto g = make_grid(8);
  double err = 0.0;
  for (Vec2 c : {Vec2(0, 0), Vec2(0.7, -1.3)}) {
    auto u = SpectralField::from_physical(g, {Grid2::Constant(8, 8, c[0]), Grid2::Constant(8, 8, c[1])});
    FieldHistory hist;
    hist.push(-6.0, u);
    hist.push(6.0, u);
    for (int i = 0; i < 200; ++i) {
      Vec2 x(U(rng), U(rng)), v(20 * U(rng) - 10, 20 * U(rng) - 10);
      double s = -0.5 + U(rng), t = s + kFlowSpan * (2 * U(rng) - 1);
      PhasePoint q = flow({x, v}, s, t, hist, 1e-3);
      double tau = t - s, e = -std::expm1(-tau);
      Vec2 X = x + e * (v - c) + tau * c, V = std::exp(-tau) * v + e * c;
      Vec2 d = q.x - X;
      for (int k = 0; k < 2; ++k) d[k] -= std::round(d[k]);
      err = std::max({err, d.norm(), (q.v - V).norm()});
    }
  }
  return {err < kFlowErr, fmt("max error %.2e over |t-s| <= %.0f for u = 0 and u = const (< %.0e)", err, kFlowSpan, kFlowErr)};
}

// Largest L2 energy ratio in a report, over every recorded energy check.
double max_energy_ratio(const json& rep) {
  double r = 0.0;
  if (rep.contains("conservation")) r = std::max(r, rep["conservation"]["energy_ratio_l2"].get<double>());
  if (rep.contains("reference"))
    for (const char* st : {"stage2", "stage4"}) r = std::max(r, rep["reference"][st]["energy"]["ratio_l2"].get<double>());
  if (rep.contains("fixed_point")) r = std::max(r, rep["fixed_point"]["energy"]["ratio_l2"].get<double>());
  if (rep.contains("terminal")) r = std::max(r, rep["terminal"]["sharp_energy"]["ratio_l2"].get<double>());
  return r;
}

Outcome ns_correctness(const std::vector<const ScenarioRun*>& runs) {
  auto t0 = std::chrono::steady_clock::now();
  auto g = make_grid(32);
  Grid2 a(32, 32);
  for (int i2 = 0; i2 < 32; ++i2)
    for (int i1 = 0; i1 < 32; ++i1) a(i1, i2) = std::sin(2 * M_PI * i2 / 32.0);
  auto u0 = SpectralField::from_physical(g, {a, Grid2::Zero(32, 32)});
  NsConfig cfg;
  cfg.dt = 1e-4;
  NsState s = make_ns_state(u0);
  for (int k = 0; k < 1000; ++k) s = ns_step(s, {}, nullptr, cfg);
  auto exact = std::exp(-4 * M_PI * M_PI * 0.1) * u0;
  double decay = l2_norm(s.u - exact) / l2_norm(exact);
  double secs = seconds_since(t0);
  double ratio = 0.0;
  std::string names;
  for (const auto* r : runs) {
    double q = max_energy_ratio(r->report);
    ratio = std::max(ratio, q);
    names += fmt(" %s %.4f", r->dir.filename().c_str(), q);
  }
  return {decay < kDecayErr && ratio <= 1.0 + kEnergySlack && secs < kNsSeconds,
          fmt("single-mode decay rel err %.2e (< %.0e) in %.1f s; energy ratio max %.4f (<= %.2f):", decay, kDecayErr,
              secs, ratio, 1.0 + kEnergySlack) +
              names};
}

Outcome conservation(const ScenarioRun& r) {
  const json& c = r.report["conservation"];
  double dm = c["mass_drift"], dp = c["momentum_drift"];
  int nx = r.report["config"]["nx"], nv = r.report["config"]["nv"];
  double horizon = r.report["config"]["horizon"];
  return {dm < kMassDrift && dp < kMomentumDrift && r.seconds < kConservationSeconds,
          fmt("%d^2 x %d^2 over horizon %.1f: mass drift %.2e (< %.0e), momentum drift %.2e (< %.0e), %.1f s", nx, nv,
              horizon, dm, kMassDrift, dp, kMomentumDrift, r.seconds)};
}

Outcome hitting(const ScenarioRun& r) {
  const json& ref = r.report["reference"];
  double frac = ref["hitting"]["fraction"];
  bool t3a = ref["schedule"]["t3_first"], t3b = ref["schedule"]["t3_second"];
  long seeds = ref["case1"]["seeds"], hits = ref["case1"]["hits"];
  return {frac >= kHitFraction && t3a && t3b && hits == seeds && r.seconds < kReferenceSeconds,
          fmt("hit fraction %.4f (>= %.2f), schedule inequalities %s/%s, fast seeds %ld/%ld, Lambda0 %.3f, T %.3f, %.1f s",
              frac, kHitFraction, t3a ? "hold" : "fail", t3b ? "hold" : "fail", hits, seeds,
              ref["schedule"]["Lambda0"].get<double>(), ref["schedule"]["T4"].get<double>(), r.seconds)};
}

Outcome fixed_point(const ScenarioRun& r) {
  const json& fp = r.report["fixed_point"];
  bool members = true;
  std::string diffs;
  for (const auto& s : fp["trace"]) {
    members = members && s["pass"].get<bool>();
    diffs += fmt(" %.2e", s["sup_diff"].get<double>());
  }
  bool monotone = fp["monotone"], converged = fp["converged"];
  double ratio = fp["contraction_ratio"], spread = fp["K1_spread"];
  json t = load_json(r.dir / "timing.json");
  double secs = t["reference"].get<double>() + t["constants"].get<double>() + t["picard"].get<double>();
  double frac = r.report["config"]["epsilon_fraction"];
  return {converged && monotone && ratio < 1.0 && members && spread < kK1Spread && secs < kFixedPointSeconds,
          fmt("eps = %.2f cap, sup differences%s, ratio %.2e (< 1), membership %s, K1 spread %.2e (< %.1f), %.1f s", frac,
              diffs.c_str(), ratio, members ? "all pass" : "fails", spread, kK1Spread, secs)};
}

Outcome terminal(const ScenarioRun& r) {
  const json& m = r.report["checkpoint_metrics"];
  double conf = m["T_mass_outside_ratio"], fu = m["final_u_ratio"], fm = m["final_mass_ratio"];
  return {conf <= kConfinement && fu <= kFinalU && fm <= kFinalMass && r.seconds < kFullSeconds,
          fmt("mass outside omega at T %.2e (<= %.0e), ||u(Tf)||/||u0|| %.2e (<= %.0e), remaining mass %.2e (<= %.0e), %.1f s",
              conf, kConfinement, fu, kFinalU, fm, kFinalMass, r.seconds)};
}

Outcome stability(const ScenarioRun& r) {
  const json& s = r.report["stability"];
  double ex = s["exponent"], sp = s["prefactor_spread"];
  json t = load_json(r.dir / "timing.json");
  double secs = t["stability"];
  bool hyp = s["hypothesis_ok"];
  return {ex >= kExponentLo && ex <= kExponentHi && sp <= kPrefactorSpread && hyp && secs < kStabilitySeconds,
          fmt("scales %s: exponent %.4f (in [%.1f, %.1f]), prefactor spread %.3f (<= %.0f), %.1f s", s["scales"].dump().c_str(),
              ex, kExponentLo, kExponentHi, sp, kPrefactorSpread, secs)};
}

Outcome absorption_table() {
  const double T = 48.0;
  AbsorptionRule rule{StripGeometry{}, T};
  long checked = 0, bad = 0;
  auto expect = [&](double t, double s, double want) {
    ++checked;
    if (rule.factor(t, s) != want) ++bad;
  };
  for (int i = 0; i <= 200; ++i) {
    double ty = T / 24 + (23 * T / 24 - T / 24) * i / 200.0;  // Y = 1
    double early = 0.999 * (T / 48) * i / 200.0;              // t < T/48
    for (int k = 0; k <= 100; ++k) {
      expect(ty, -2.0 - 3.0 * k / 100.0, 0.0);     // gamma_3minus
      expect(ty, -1.0 - 0.4999 * k / 100.0, 1.0);  // gamma_minus outside gamma_2minus
      expect(early, -5.0 + 4.5 * k / 100.0, 1.0);
      expect(early, 0.5 * k / 100.0, 1.0);
    }
  }
  return {bad == 0, fmt("%ld plateau evaluations, %ld mismatches", checked, bad)};
}

Outcome determinism(const ScenarioRun& first, const fs::path& work, const std::vector<const ScenarioRun*>& replays) {
  ScenarioRun again = run_shipped("estimate_suite", work, "_twin");
  bool same = read_text(first.dir / "report.json") == read_text(again.dir / "report.json");
  std::string rp;
  bool replay_ok = true;
  for (const auto* r : replays) {
    ReplayResult res = replay_run(r->dir.string());
    replay_ok = replay_ok && res.ok();
    rp += fmt(" %s %s", r->dir.filename().c_str(), res.ok() ? "identical" : "differs");
  }
  return {same && replay_ok,
          fmt("estimate_suite rerun report %s (%.1f s); checkpoint replay:", same ? "bit-identical" : "differs",
              again.seconds) +
              rp};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(work);
  std::vector<Outcome> out(11);
  auto guard = [&](int k, const std::function<Outcome()>& f) {
    try {
      out[k] = f();
    } catch (const std::exception& e) {
      out[k] = {false, std::string("error: ") + e.what()};
    }
  };

  guard(1, transport_oracle);
  guard(2, characteristic_exactness);
  guard(9, absorption_table);

  ScenarioRun free_run, reference, full, estimates;
  guard(4, [&] {
    free_run = run_shipped("free_run", work);
    return conservation(free_run);
  });
  guard(5, [&] {
    reference = run_shipped("reference_only", work);
    return hitting(reference);
  });
  guard(6, [&] {
    full = run_shipped("full_control", work);
    return fixed_point(full);
  });
  guard(7, [&] { return terminal(full); });
  guard(8, [&] {
    estimates = run_shipped("estimate_suite", work);
    return stability(estimates);
  });
  guard(3, [&] { return ns_correctness({&free_run, &reference, &full, &estimates}); });
  guard(10, [&] { return determinism(estimates, work, {&free_run, &full}); });

  int failures = 0;
  for (int k = 1; k <= 10; ++k) {
    const char* verdict = out[k].pass ? "PASS" : (kKnownUnattainable.count(k) ? "FAIL (known, see notes)" : "FAIL");
    if (!out[k].pass && !kKnownUnattainable.count(k)) ++failures;
    std::printf("criterion %2d: %s  %s\n", k, verdict, out[k].detail.c_str());
  }
  return failures == 0 ? 0 : 1;
}
