#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nec/icmf.hpp"
#include "nec/sweep.hpp"

namespace nec {

enum class Task { Steady, Sweep, PhaseDiagram, Stability, Island, Fit };

const char* to_string(Task task);
Task parse_task(std::string_view name);

/// Seed state of the single-cluster tasks.
enum class InitialState { Up, Down, Mixed, Random };

const char* to_string(InitialState s);

struct RunConfig {
  Task task = Task::Steady;
  ModelConfig model;
  double T = 0.1;
  double h = 0.0;
  InitialState initial = InitialState::Up;

  // [sweep]
  std::vector<double> T_grid{0.1};
  double dh = 0.1;

  // [stability]
  int k_points = 65;
  bool full_grid = true;  // false keeps only ky = 0
  bool backaction = true;
  int phase_scale = 1;

  // [island]
  int L = 20;
  std::vector<int> ell_down{10};
  bool island_up = false;
  LatticeBoundary boundary = LatticeBoundary::Periodic;
  double stride = 0.5;
  int map_count = 10;
  double eps = 0.01;

  // [fit]
  std::string fit_kind = "boundary";  // boundary | velocity
  std::string fit_input;
  double threshold = kBistableThreshold;
  double min_r2 = 0.98;

  // [run]
  int threads = 0;
  std::string out = "nec-out";
  std::uint64_t seed = 0;
};

/// Overrides applied on top of the file, as the command line does.
struct ConfigOverrides {
  std::optional<Task> task;
  std::optional<int> threads;
  std::optional<std::string> out;
  std::optional<Prescription> prescription;
};

/// Parses INI text: model keys at top level, the rest in [sweep],
/// [stability], [island], [fit], [integrator] and [run]. Throws SchemaError
/// listing every problem as `section.key: message`.
RunConfig parse_config(std::string_view text, const ConfigOverrides& overrides = {});

/// Canonical INI rendering of every field, defaults included. Parsing it
/// back gives the same config.
std::string resolved_config_text(const RunConfig& config);

/// Hex SHA-256 of the resolved config text.
std::string config_hash(const RunConfig& config);

/// "0.02,0.04" lists or "first:last:step" ranges.
std::vector<double> parse_grid(std::string_view text);

/// Reconstructs a diagram from `write_phase_csv` output. Rows must form a
/// full (T, h) grid.
PhaseDiagram read_phase_csv(std::istream& in);

struct RunResult {
  int exit_code = 0;
  std::vector<std::string> outputs;  // file names relative to config.out
};

/// Executes the task, writing CSVs, the resolved-config echo and
/// manifest.json into config.out. Any failure produces error.json there and
/// a nonzero exit code instead of an exception.
RunResult run(const RunConfig& config, std::ostream& log);

/// Machine-readable report for an exception escaping the run, as written to
/// error.json.
std::string error_report(const std::exception& error);

}  // namespace nec
