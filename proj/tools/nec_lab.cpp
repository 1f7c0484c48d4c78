// nec-lab: command-line driver for the cluster mean-field NEC model.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "nec/cli.hpp"
#include "nec/errors.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster mean-field solver for the dissipative quantum NEC model"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  int threads = -1;
  std::string out;
  std::string prescription;
  app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--threads", threads, "Worker threads (0: NEC_LAB_THREADS or all cores)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--out", out, "Output directory");
  app.add_option("--prescription", prescription, "Boundary rate prescription")
      ->check(CLI::IsMember({"trace", "factorized"}));

  const std::pair<const char*, const char*> commands[] = {
      {"steady", "Single-cluster steady state at (T, h)"},
      {"sweep", "Hysteresis sweeps over the (T, h) grid"},
      {"phase-diagram", "Sweep plus boundary detection and critical-line fit"},
      {"stability", "Bloch stability spectrum of a steady state"},
      {"island", "Relaxation of minority islands on the cluster lattice"},
      {"fit", "Fit a boundary or island velocity from earlier CSV output"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  CLI11_PARSE(app, argc, argv);

  nec::ConfigOverrides overrides;
  overrides.task = nec::parse_task(app.get_subcommands().front()->get_name());
  if (threads >= 0) overrides.threads = threads;
  if (!out.empty()) overrides.out = out;
  if (!prescription.empty()) overrides.prescription = nec::parse_prescription(prescription);

  nec::RunConfig config;
  try {
    config = nec::parse_config(config_path.empty() ? std::string{} : slurp(config_path), overrides);
  } catch (const std::exception& e) {
    const std::string report = nec::error_report(e);
    std::cerr << report << '\n';
    if (!out.empty()) {
      std::filesystem::create_directories(out);
      std::ofstream(std::filesystem::path(out) / "error.json") << report << '\n';
    }
    return dynamic_cast<const nec::SchemaError*>(&e) ? 2 : 1;
  }

  const auto result = nec::run(config, std::cerr);
  if (result.exit_code == 0) {
    for (const auto& file : result.outputs) std::cout << (std::filesystem::path(config.out) / file).string() << '\n';
  }
  return result.exit_code;
}
