#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerntune/evaluator.hpp"
#include "kerntune/knobs.hpp"
#include "kerntune/metrics.hpp"
#include "kerntune/objective.hpp"

namespace kerntune {

// Geometric schedule with a floor: value(epoch) = max(floor, initial *
// decay^epoch).
struct Schedule {
  double initial = 1.0;
  double decay = 1.0;
  double floor = 0.0;

  double at(int epoch) const;
  void validate(const char* what) const;
  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& j, Schedule defaults);
};

struct GDSettings {
  double delta = 1.0;                    // gradient-check perturbation
  Schedule step{2.0, 0.9, 0.25};         // index units per epoch
  Schedule skip{0.3, 0.85, 0.0};         // knob skip probability per epoch
  double epsilon = 0.05;                 // convergence threshold, index units
  int max_epochs = 50;
  int patience = 5;                      // stress mode; 0 disables
  uint64_t seed = 42;
  std::optional<KnobPoint> start;

  void validate() const;
  nlohmann::json to_json() const;
  static GDSettings from_json(const nlohmann::json& j);
};

struct GASettings {
  int population = 50;
  double mutation_rate = 0.03;   // per gene
  std::string mutation = "random";
  std::string crossover = "1-point";
  double crossover_rate = 1.0;
  bool elitism = true;
  int tournament_size = 5;
  int max_epochs = 50;
  int patience = 5;  // stress mode; 0 disables
  double epsilon = 0.05;
  uint64_t seed = 42;

  void validate() const;
  nlohmann::json to_json() const;
  static GASettings from_json(const nlohmann::json& j);
};

struct PointEval {
  bool ok = false;
  MetricVector metrics;
  double loss = 0.0;
  std::string error;
};

// One metric+loss evaluation of a knob-space position. Implementations must
// be deterministic in the point (tuners may call them concurrently).
using EvalFn = std::function<PointEval(const KnobPoint&, const EvalContext&)>;

struct CheckRecord {
  int knob = -1;   // knob index (GD) or population index (GA/brute)
  int sign = 0;
  KnobPoint point;
  PointEval eval;
};

struct EpochRecord {
  int epoch = 0;
  KnobPoint base;
  KnobConfig base_config;
  MetricVector base_metrics;
  double base_loss = 0.0;
  std::vector<CheckRecord> checks;
  std::vector<double> gradient;
  std::vector<int> skipped;
  KnobPoint next;
  int eval_count = 0;  // gradient checks (GD) / population size (GA)
  double step_size = 0.0;
  double skip_probability = 0.0;
  double best_loss_so_far = 0.0;

  nlohmann::json to_json() const;
};

enum class StopReason { Converged, TargetMet, MaxEpochs, Error };
const char* stop_reason_name(StopReason r);

struct TuningReport {
  nlohmann::json settings;
  std::vector<EpochRecord> epochs;
  StopReason stop = StopReason::MaxEpochs;
  std::string stop_detail;
  KnobPoint best_point;
  KnobConfig best_config;
  MetricVector best_metrics;
  double best_loss = 0.0;
  uint64_t total_evaluations = 0;

  nlohmann::json to_json() const;
  // epoch,loss,best_loss,evals,step,skip_p,<metric...> rows.
  std::string epochs_csv() const;
};

struct GdEpochResult {
  EpochRecord record;
  KnobPoint next;
  bool all_checks_failed = false;
};

// One epoch: central-difference gradient checks at +/-delta on every
// non-skipped knob, then an update where the steepest knob moves one step
// and the others move proportionally.
GdEpochResult gd_epoch(const KnobSpace& space, const KnobPoint& base,
                       const PointEval& base_eval, int epoch,
                       const GDSettings& settings, const EvalFn& eval_fn,
                       int workers = 1);

TuningReport gd_tune(const KnobSpace& space, const TargetSpec& target,
                     const GDSettings& settings, const EvalFn& eval_fn,
                     int workers = 1);

TuningReport ga_tune(const KnobSpace& space, const TargetSpec& target,
                     const GASettings& settings, const EvalFn& eval_fn,
                     int workers = 1);

struct GridEntry {
  std::vector<int> indices;
  PointEval eval;
};

struct BruteResult {
  KnobPoint best_point;
  KnobConfig best_config;
  MetricVector best_metrics;
  double best_loss = 0.0;
  uint64_t evaluations = 0;
  std::vector<GridEntry> entries;  // full grid, enumeration order
};

// Exhaustive evaluation of the per-knob index grid. The grid product is
// capped; oversized grids are rejected up front.
BruteResult brute_force(const KnobSpace& space, const TargetSpec& target,
                        const EvalFn& eval_fn,
                        const std::vector<std::vector<int>>& grid,
                        uint64_t cap = 1000000, int workers = 1);

// Evenly spaced index subset (endpoints included) for grid construction.
std::vector<int> quantize_indices(size_t list_size, int levels);

}  // namespace kerntune
