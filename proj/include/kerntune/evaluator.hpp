#pragma once

#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kerntune/kernel.hpp"
#include "kerntune/metrics.hpp"
#include "kerntune/microsim.hpp"

namespace kerntune {

// A failed metric evaluation. Carries whatever the backend printed so tuning
// logs stay debuggable; tuners treat it as a skippable event, never a crash.
class EvalFailure : public std::runtime_error {
 public:
  EvalFailure(const std::string& msg, std::string captured = {})
      : std::runtime_error(msg), captured_(std::move(captured)) {}
  const std::string& captured_output() const { return captured_; }

 private:
  std::string captured_;
};

// Names the evaluation within a tuning run; external backends use it to lay
// out isolated working directories (epoch<k>/check<j>...).
struct EvalContext {
  int epoch = -1;
  int check = -1;  // -1: base evaluation of the epoch
  int sign = 0;    // +1/-1 for gradient checks, 0 otherwise

  std::string dir_name() const;
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual MetricVector evaluate(const Kernel& kernel,
                                const EvalContext& ctx) = 0;
  // MetricVector fields this backend produces.
  virtual std::vector<std::string> capabilities() const = 0;
};

// In-process evaluation on the built-in core model.
class BuiltinEvaluator final : public Evaluator {
 public:
  BuiltinEvaluator(CoreConfig core, uint64_t n_dyn,
                   EnergyModel energy = EnergyModel{})
      : core_(std::move(core)), n_dyn_(n_dyn), energy_(energy) {}

  MetricVector evaluate(const Kernel& kernel, const EvalContext& ctx) override;
  std::vector<std::string> capabilities() const override;

  const CoreConfig& core() const { return core_; }
  uint64_t n_dyn() const { return n_dyn_; }

 private:
  CoreConfig core_;
  uint64_t n_dyn_;
  EnergyModel energy_;
};

enum class StatTransform { Identity, OneMinus, DivideBy };

struct MetricMapping {
  std::string key;
  StatTransform transform = StatTransform::Identity;
  std::string divisor;  // DivideBy only

  nlohmann::json to_json() const;
  static MetricMapping from_json(const nlohmann::json& j);
};

using MetricMap = std::vector<std::pair<std::string, MetricMapping>>;

// How to drive a simulator binary: command template ({asm}, {workdir},
// {core_config} placeholders), where its stats dump lands, and how stats
// keys map onto MetricVector fields.
struct ExternalEvalSpec {
  std::string command;
  std::string stats_path = "{workdir}/stats.txt";
  MetricMap metric_map;
  double timeout_seconds = 60.0;

  void validate() const;
  nlohmann::json to_json() const;
  static ExternalEvalSpec from_json(const nlohmann::json& j);
};

// Parses "key value [comment]" lines; first occurrence of a key wins,
// unmapped lines are ignored. Applies the mapping transforms.
MetricVector parse_stats(const std::string& text, const MetricMap& map);

class ExternalEvaluator final : public Evaluator {
 public:
  ExternalEvaluator(ExternalEvalSpec spec, const CoreConfig& core,
                    std::filesystem::path run_root);

  // Writes kernel.s / kernel.json / core_config.json into the check's
  // directory, runs the command, parses the stats dump.
  MetricVector evaluate(const Kernel& kernel, const EvalContext& ctx) override;
  std::vector<std::string> capabilities() const override;

 private:
  ExternalEvalSpec spec_;
  std::string core_json_;
  std::filesystem::path run_root_;
};

struct CommandResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string output;  // combined stdout+stderr
};

// /bin/sh -c with a hard timeout; output captured to output_file and
// returned.
CommandResult run_command(const std::string& command, double timeout_seconds,
                          const std::filesystem::path& output_file);

}  // namespace kerntune
