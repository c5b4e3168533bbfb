#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "vns/errors.hpp"
#include "vns/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { ok = 0, config_error = 2, numerical_failure = 3, tolerance_miss = 4 };

int exit_for(const vns::Error& e) {
  switch (e.kind()) {
    case vns::ErrorKind::Config:
    case vns::ErrorKind::Io:
    case vns::ErrorKind::GridMismatch:
    case vns::ErrorKind::InsufficientCheckpoints:
    case vns::ErrorKind::NoClosedLine:
      return config_error;
    default:
      return numerical_failure;
  }
}

void print_summary(const json& rep, std::ostream& os) {
  os << "mode: " << rep.value("mode", "?") << "\n";
  os << "pass: " << (rep.value("pass", false) ? "yes" : "no") << "\n";
  if (rep.contains("misses"))
    for (const auto& m : rep["misses"]) os << "  miss: " << m.get<std::string>() << "\n";
  if (rep.contains("checkpoint_metrics"))
    for (auto it = rep["checkpoint_metrics"].begin(); it != rep["checkpoint_metrics"].end(); ++it)
      os << "  " << it.key() << " = " << it.value().dump() << "\n";
  if (rep.contains("reference") && rep["reference"].contains("hitting"))
    os << "  hitting fraction = " << rep["reference"]["hitting"]["fraction"].dump() << "\n";
  if (rep.contains("fixed_point")) {
    const auto& fp = rep["fixed_point"];
    os << "  picard iterations = " << fp["iterations"].dump() << ", converged = " << fp["converged"].dump()
       << ", contraction = " << fp["contraction_ratio"].dump() << "\n";
  }
}

json load_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw vns::Error(vns::ErrorKind::Io, "cannot open " + p.string());
  json j;
  is >> j;
  return j;
}

// Dotted path lookup into the report, e.g. checkpoint_metrics.final_u_ratio.
std::string lookup(const json& j, const std::string& path) {
  const json* cur = &j;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!cur->is_object() || !cur->contains(part)) return "";
    cur = &(*cur)[part];
  }
  return cur->dump();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled Vlasov-Navier-Stokes scenario runner"};
  app.require_subcommand(1);

  std::string config_path, outdir = "out", mode;
  long seed = -1;
  std::string write_default;
  auto* run = app.add_subcommand("run", "run a scenario and write its report and checkpoints");
  run->add_option("-c,--config", config_path, "JSON config (defaults when omitted)");
  run->add_option("-o,--out", outdir, "output directory");
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--mode", mode, "override the config mode");
  run->add_option("--write-default-config", write_default, "write the default config to this path and exit");

  bool full = false;
  auto* replay = app.add_subcommand("replay", "recompute report entries from checkpoints");
  replay->add_option("-o,--out", outdir, "run directory")->required();
  replay->add_flag("--full", full, "also rerun the scenario from its saved config and compare reports");

  std::vector<std::string> fields;
  auto* report = app.add_subcommand("report", "print a run report");
  report->add_option("-o,--out", outdir, "run directory")->required();
  report->add_option("--field", fields, "dotted report paths to print");

  std::string param;
  std::vector<std::string> values, columns;
  auto* sweep = app.add_subcommand("sweep", "run a scenario for several values of one config key");
  sweep->add_option("-c,--config", config_path, "base JSON config");
  sweep->add_option("-o,--out", outdir, "sweep directory");
  sweep->add_option("--param", param, "top-level config key")->required();
  sweep->add_option("--values", values, "values as JSON literals")->required()->delimiter(',');
  sweep->add_option("--column", columns, "dotted report paths tabulated in sweep.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? ok : config_error;
  }

  try {
    if (*run) {
      if (!write_default.empty()) {
        vns::RunConfig{}.save(write_default);
        return ok;
      }
      vns::RunConfig cfg = config_path.empty() ? vns::RunConfig{} : vns::RunConfig::load(config_path);
      if (seed >= 0) cfg.seed = static_cast<unsigned>(seed);
      if (!mode.empty()) cfg.mode = vns::mode_from_string(mode);
      vns::RunReport rep = vns::run_scenario(cfg, outdir);
      print_summary(rep.data, std::cout);
      return rep.pass() ? ok : tolerance_miss;
    }
    if (*replay) {
      vns::ReplayResult r = vns::replay_run(outdir);
      std::cout << r.recomputed.dump(2) << "\n";
      for (const auto& m : r.mismatches) std::cout << "mismatch: " << m << "\n";
      bool same = r.ok();
      if (full) {
        vns::RunConfig cfg = vns::RunConfig::load((fs::path(outdir) / "config.json").string());
        fs::path again = fs::path(outdir) / "replay";
        vns::run_scenario(cfg, again.string());
        bool identical = load_json(fs::path(outdir) / "report.json") == load_json(again / "report.json");
        std::cout << "full rerun report " << (identical ? "identical" : "differs") << "\n";
        same = same && identical;
      }
      return same ? ok : tolerance_miss;
    }
    if (*report) {
      json rep = load_json(fs::path(outdir) / "report.json");
      if (fields.empty()) print_summary(rep, std::cout);
      for (const auto& f : fields) std::cout << f << " = " << lookup(rep, f) << "\n";
      return ok;
    }
    if (*sweep) {
      json base = config_path.empty() ? vns::RunConfig{}.to_json() : vns::RunConfig::load(config_path).to_json();
      if (!base.contains(param)) throw vns::Error(vns::ErrorKind::Config, "unknown sweep key '" + param + "'");
      fs::create_directories(outdir);
      std::ofstream csv(fs::path(outdir) / "sweep.csv");
      csv << param << ",pass,misses";
      for (const auto& c : columns) csv << "," << c;
      csv << "\n";
      bool all = true;
      for (const auto& v : values) {
        json cj = base;
        try {
          cj[param] = json::parse(v);
        } catch (const json::exception&) {
          cj[param] = v;
        }
        vns::RunConfig cfg = vns::RunConfig::from_json(cj);
        std::string sub = param + "=" + v;
        std::cout << "== " << sub << "\n";
        int status = ok;
        json data;
        try {
          vns::RunReport rep = vns::run_scenario(cfg, (fs::path(outdir) / sub).string());
          data = rep.data;
          status = rep.pass() ? ok : tolerance_miss;
        } catch (const vns::Error& e) {
          std::cerr << sub << ": " << e.what() << "\n";
          status = exit_for(e);
        }
        all = all && status == ok;
        csv << v << "," << (status == ok ? 1 : 0) << ",";
        csv << (data.contains("misses") ? data["misses"].size() : 0);
        for (const auto& c : columns) csv << "," << lookup(data, c);
        csv << "\n";
      }
      return all ? ok : tolerance_miss;
    }
  } catch (const vns::Error& e) {
    std::cerr << e.what() << "\n";
    return exit_for(e);
  } catch (const json::exception& e) {
    std::cerr << "JSON error: " << e.what() << "\n";
    return config_error;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return numerical_failure;
  }
  return ok;
}
