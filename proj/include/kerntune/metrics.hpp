#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace kerntune {

// Measured execution characteristics of one kernel run. Fractions cover the
// five reporting classes and sum to one; rates are in [0,1].
struct MetricVector {
  double frac_int = 0.0;
  double frac_fp = 0.0;
  double frac_branch = 0.0;
  double frac_load = 0.0;
  double frac_store = 0.0;
  double l1i_hit = 0.0;
  double l1d_hit = 0.0;
  double l2_hit = 0.0;
  double branch_mispred = 0.0;
  double ipc = 0.0;
  double dyn_power = 0.0;

  static const std::vector<std::string>& field_names();
  static bool is_field(std::string_view name);
  double get(std::string_view name) const;  // throws on unknown field
  void set(std::string_view name, double value);

  nlohmann::json to_json() const;
  static MetricVector from_json(const nlohmann::json& j);
  bool operator==(const MetricVector&) const = default;
};

// Stats dump in the "name value # comment" convention, one metric per line,
// printed with enough digits to reparse bit-exactly.
std::string to_stats_text(const MetricVector& m);

}  // namespace kerntune
