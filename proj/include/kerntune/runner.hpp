#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerntune/evaluator.hpp"
#include "kerntune/kernel.hpp"
#include "kerntune/knobs.hpp"
#include "kerntune/microsim.hpp"
#include "kerntune/objective.hpp"
#include "kerntune/tuners.hpp"

namespace kerntune {

// A configuration problem: bad file, unknown field, missing input. Maps to
// exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TunerKind { GD, GA, Brute };
enum class EvaluatorKind { Builtin, External };

// One tuning run, fully specified. Every run is reproducible from this
// struct alone.
struct RunConfig {
  TargetMode use_case = TargetMode::Clone;
  KnobSpace space = KnobSpace::default_space();
  std::vector<std::string> active;   // empty: all knobs tuned
  std::map<std::string, int> pinned; // index pins for inactive knobs
  TargetSpec target;
  EvaluatorKind evaluator = EvaluatorKind::Builtin;
  std::optional<ExternalEvalSpec> external;
  CoreConfig core = CoreConfig::large_core();
  EnergyModel energy;
  TunerKind tuner = TunerKind::GD;
  GDSettings gd;
  GASettings ga;
  // Brute grid: explicit per-knob indices by name, or quantization levels.
  std::map<std::string, std::vector<int>> grid_indices;
  int grid_levels_fraction = 4;
  int grid_levels_scalar = 3;
  uint64_t grid_cap = 1000000;
  int static_size = 500;
  uint64_t n_dyn = 10000000;
  uint64_t seed = 42;
  int workers = 1;
  std::string out_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);

  // A clone config may carry a list of targets (one clone per entry).
  static std::vector<RunConfig> expand_batch(const nlohmann::json& j);

  // Knobs the tuner moves, as their own space.
  KnobSpace reduced_space() const;
  // Reduced config -> full config (inactive knobs take their pin or the
  // middle of their list).
  KnobConfig full_config(const KnobConfig& reduced) const;
};

struct RunResult {
  TuningReport report;
  Kernel kernel;
  MetricVector metrics;
  std::optional<Accuracy> acc;
  int exit_code = 0;
  std::filesystem::path out_dir;
};

RunResult run_clone(const RunConfig& config);
RunResult run_stress(const RunConfig& config);
// Brute-force grid search; also writes grid.csv.
RunResult run_brute(const RunConfig& config);
RunResult run(const RunConfig& config);

// report.json, epochs.csv, kernel.s, kernel.json, metrics.json; all writes
// go through a temp file + rename.
void emit_report(const RunResult& result, const std::filesystem::path& dir);

// Exit codes. 0: target met / success, 1: configuration error, 2: budget
// exhausted before the target, 3: evaluator failure.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitBudget = 2;
constexpr int kExitEvaluator = 3;

}  // namespace kerntune
