#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kerntune/metrics.hpp"

namespace kerntune {

enum class TargetMode { Clone, Stress };
enum class StressDirection { Maximize, Minimize };

// What the tuner optimizes: a weighted metric vector to match (clone) or a
// single metric with a direction (stress).
struct TargetSpec {
  TargetMode mode = TargetMode::Clone;
  std::vector<std::pair<std::string, double>> clone_targets;
  std::vector<std::pair<std::string, double>> weights;  // absent -> 1.0
  std::string stress_metric = "ipc";
  StressDirection stress_direction = StressDirection::Maximize;
  double target_accuracy = 0.99;

  double weight_of(const std::string& field) const;
  void validate() const;

  // The metric set cloned by default: instruction mix, cache hit rates,
  // misprediction rate and IPC. Power is a stress target, not a cloning
  // target.
  static const std::vector<std::string>& default_clone_fields();
  static TargetSpec clone_of(const MetricVector& reference);

  nlohmann::json to_json() const;
  static TargetSpec from_json(const nlohmann::json& j);
};

struct Loss {
  double value = 0.0;
  std::vector<std::pair<std::string, double>> per_metric;
};

// Weighted squared log-ratio: sum_m w_m * ln((met_m+eps)/(target_m+eps))^2.
// Scale-free and zero exactly at a match.
Loss clone_loss(const MetricVector& met, const TargetSpec& target);

// -ln(met+eps) when maximizing, +ln(met+eps) when minimizing; strictly
// monotone so extremizing the loss extremizes the raw metric.
Loss stress_loss(const MetricVector& met, const TargetSpec& target);

Loss compute_loss(const MetricVector& met, const TargetSpec& target);

struct Accuracy {
  std::vector<std::pair<std::string, double>> per_metric;
  double min = 0.0;
  double mean_error = 0.0;  // mean relative error over weighted metrics
};

// acc_m = 1 - |met_m - target_m| / max(|target_m|, eps), clamped to [0,1].
Accuracy accuracy(const MetricVector& met, const TargetSpec& target);

}  // namespace kerntune
