#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace kerntune {

enum class KnobKind { InstructionFraction, Scalar };

// One discrete tuning dimension: an ordered list of admissible values.
// Fraction knobs are relative weights of the instruction distribution;
// scalar knobs carry their own unit (KiB, bytes, counts, a ratio).
struct KnobDef {
  std::string name;
  KnobKind kind = KnobKind::Scalar;
  std::vector<double> values;

  size_t size() const { return values.size(); }
  void validate() const;

  nlohmann::json to_json() const;
  static KnobDef from_json(const nlohmann::json& j);
};

struct KnobSpace {
  std::vector<KnobDef> knobs;

  size_t dim() const { return knobs.size(); }
  int index_of(std::string_view name) const;  // -1 when absent
  const KnobDef* find(std::string_view name) const;
  void validate() const;

  // The stock generation knobs: ten instruction-fraction knobs
  // (ADD..SW), REG_DIST, MEM_SIZE, MEM_STRIDE, MEM_TEMP1, MEM_TEMP2 and
  // B_PATTERN, with their full value lists.
  static KnobSpace default_space();

  nlohmann::json to_json() const;
  static KnobSpace from_json(const nlohmann::json& j);
};

// A continuous position in index coordinates: pos[k] in [0, len_k - 1].
struct KnobPoint {
  std::vector<double> pos;

  bool operator==(const KnobPoint&) const = default;
};

// Concrete knob values, one per knob, each a member of its value list.
struct KnobConfig {
  std::vector<std::pair<std::string, double>> items;  // in space order

  double at(std::string_view name) const;             // throws when absent
  const double* try_get(std::string_view name) const; // nullptr when absent

  nlohmann::json to_json() const;
  static KnobConfig from_json(const nlohmann::json& j);

  // Map semantics: item order does not matter.
  bool operator==(const KnobConfig& other) const;
};

// Uniform integer index per knob. Identical (space, seed) give identical
// points.
KnobPoint random_point(const KnobSpace& space, uint64_t seed);

// Nearest-index rounding; ties at .5 go to the lower index.
std::vector<int> snap_indices(const KnobPoint& point, const KnobSpace& space);
KnobConfig snap(const KnobPoint& point, const KnobSpace& space);

// pos[dim] += delta, clamped into [0, len-1]. Out-of-range dim is a
// programming error.
KnobPoint perturb(const KnobPoint& point, const KnobSpace& space, size_t dim,
                  double delta);

// L-inf norm in index units.
double distance(const KnobPoint& a, const KnobPoint& b);

// Normalized weights of the instruction-fraction knobs, in space order.
std::vector<std::pair<std::string, double>> instruction_profile(
    const KnobConfig& config, const KnobSpace& space);

}  // namespace kerntune
