#include "kerntune/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace kerntune {

namespace {
constexpr double kEps = 1e-6;
}

double TargetSpec::weight_of(const std::string& field) const {
  for (const auto& [name, w] : weights)
    if (name == field) return w;
  return 1.0;
}

void TargetSpec::validate() const {
  if (!(target_accuracy > 0.0 && target_accuracy <= 1.0))
    throw std::invalid_argument("target accuracy must be in (0, 1]");
  for (const auto& [name, w] : weights) {
    if (!MetricVector::is_field(name))
      throw std::invalid_argument("unknown metric field '" + name +
                                  "' in weights");
    if (w < 0) throw std::invalid_argument("negative weight for '" + name + "'");
  }
  if (mode == TargetMode::Clone) {
    if (clone_targets.empty())
      throw std::invalid_argument("clone target needs at least one metric");
    bool any = false;
    for (const auto& [name, value] : clone_targets) {
      if (!MetricVector::is_field(name))
        throw std::invalid_argument("unknown metric field '" + name +
                                    "' in targets");
      (void)value;
      any |= weight_of(name) > 0.0;
    }
    if (!any)
      throw std::invalid_argument("clone target needs a metric with weight > 0");
  } else {
    if (!MetricVector::is_field(stress_metric))
      throw std::invalid_argument("unknown stress metric '" + stress_metric +
                                  "'");
  }
}

const std::vector<std::string>& TargetSpec::default_clone_fields() {
  static const std::vector<std::string> fields = {
      "frac_int",  "frac_branch", "frac_load",      "frac_store", "l1i_hit",
      "l1d_hit",   "l2_hit",      "branch_mispred", "ipc"};
  return fields;
}

TargetSpec TargetSpec::clone_of(const MetricVector& reference) {
  TargetSpec t;
  t.mode = TargetMode::Clone;
  for (const auto& f : default_clone_fields())
    t.clone_targets.emplace_back(f, reference.get(f));
  return t;
}

nlohmann::json TargetSpec::to_json() const {
  nlohmann::json j;
  if (mode == TargetMode::Clone) {
    j["mode"] = "clone";
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [name, v] : clone_targets) t[name] = v;
    j["targets"] = t;
    if (!weights.empty()) {
      nlohmann::json w = nlohmann::json::object();
      for (const auto& [name, v] : weights) w[name] = v;
      j["weights"] = w;
    }
  } else {
    j["mode"] = "stress";
    j["metric"] = stress_metric;
    j["direction"] =
        stress_direction == StressDirection::Maximize ? "maximize" : "minimize";
  }
  j["accuracy"] = target_accuracy;
  return j;
}

TargetSpec TargetSpec::from_json(const nlohmann::json& j) {
  TargetSpec t;
  std::string mode = j.at("mode").get<std::string>();
  if (mode == "clone") {
    t.mode = TargetMode::Clone;
    for (auto it = j.at("targets").begin(); it != j.at("targets").end(); ++it)
      t.clone_targets.emplace_back(it.key(), it.value().get<double>());
    if (j.contains("weights"))
      for (auto it = j.at("weights").begin(); it != j.at("weights").end(); ++it)
        t.weights.emplace_back(it.key(), it.value().get<double>());
  } else if (mode == "stress") {
    t.mode = TargetMode::Stress;
    if (j.contains("metric")) t.stress_metric = j.at("metric").get<std::string>();
    if (j.contains("direction")) {
      std::string d = j.at("direction").get<std::string>();
      if (d == "maximize")
        t.stress_direction = StressDirection::Maximize;
      else if (d == "minimize")
        t.stress_direction = StressDirection::Minimize;
      else
        throw std::invalid_argument("unknown stress direction '" + d + "'");
    }
  } else {
    throw std::invalid_argument("unknown target mode '" + mode + "'");
  }
  if (j.contains("accuracy")) t.target_accuracy = j.at("accuracy").get<double>();
  t.validate();
  return t;
}

Loss clone_loss(const MetricVector& met, const TargetSpec& target) {
  if (target.mode != TargetMode::Clone)
    throw std::invalid_argument("clone_loss needs a clone-mode target");
  Loss loss;
  for (const auto& [name, wanted] : target.clone_targets) {
    double w = target.weight_of(name);
    double r = std::log((met.get(name) + kEps) / (wanted + kEps));
    double contrib = w * r * r;
    loss.per_metric.emplace_back(name, contrib);
    loss.value += contrib;
  }
  return loss;
}

Loss stress_loss(const MetricVector& met, const TargetSpec& target) {
  if (target.mode != TargetMode::Stress)
    throw std::invalid_argument("stress_loss needs a stress-mode target");
  double v = std::log(met.get(target.stress_metric) + kEps);
  Loss loss;
  loss.value = target.stress_direction == StressDirection::Maximize ? -v : v;
  loss.per_metric.emplace_back(target.stress_metric, loss.value);
  return loss;
}

Loss compute_loss(const MetricVector& met, const TargetSpec& target) {
  return target.mode == TargetMode::Clone ? clone_loss(met, target)
                                          : stress_loss(met, target);
}

Accuracy accuracy(const MetricVector& met, const TargetSpec& target) {
  if (target.mode != TargetMode::Clone)
    throw std::invalid_argument("accuracy needs a clone-mode target");
  Accuracy acc;
  acc.min = 1.0;
  double err_sum = 0.0;
  size_t n = 0;
  for (const auto& [name, wanted] : target.clone_targets) {
    if (target.weight_of(name) <= 0.0) continue;
    double rel =
        std::abs(met.get(name) - wanted) / std::max(std::abs(wanted), kEps);
    double a = std::clamp(1.0 - rel, 0.0, 1.0);
    acc.per_metric.emplace_back(name, a);
    acc.min = std::min(acc.min, a);
    err_sum += rel;
    ++n;
  }
  acc.mean_error = n == 0 ? 0.0 : err_sum / n;
  return acc;
}

}  // namespace kerntune
