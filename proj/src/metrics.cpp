#include "kerntune/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace kerntune {

namespace {

struct Field {
  const char* name;
  double MetricVector::* member;
  const char* comment;
};

constexpr Field kFields[] = {
    {"frac_int", &MetricVector::frac_int, "integer instruction fraction"},
    {"frac_fp", &MetricVector::frac_fp, "floating point instruction fraction"},
    {"frac_branch", &MetricVector::frac_branch, "branch instruction fraction"},
    {"frac_load", &MetricVector::frac_load, "load instruction fraction"},
    {"frac_store", &MetricVector::frac_store, "store instruction fraction"},
    {"l1i_hit", &MetricVector::l1i_hit, "L1 instruction cache hit rate"},
    {"l1d_hit", &MetricVector::l1d_hit, "L1 data cache hit rate"},
    {"l2_hit", &MetricVector::l2_hit, "L2 cache hit rate"},
    {"branch_mispred", &MetricVector::branch_mispred,
     "branch misprediction rate"},
    {"ipc", &MetricVector::ipc, "retired instructions per cycle"},
    {"dyn_power", &MetricVector::dyn_power, "dynamic power (watts)"},
};

}  // namespace

const std::vector<std::string>& MetricVector::field_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : kFields) v.push_back(f.name);
    return v;
  }();
  return names;
}

bool MetricVector::is_field(std::string_view name) {
  for (const auto& f : kFields)
    if (name == f.name) return true;
  return false;
}

double MetricVector::get(std::string_view name) const {
  for (const auto& f : kFields)
    if (name == f.name) return this->*(f.member);
  throw std::invalid_argument("unknown metric field '" + std::string(name) +
                              "'");
}

void MetricVector::set(std::string_view name, double value) {
  for (const auto& f : kFields) {
    if (name == f.name) {
      this->*(f.member) = value;
      return;
    }
  }
  throw std::invalid_argument("unknown metric field '" + std::string(name) +
                              "'");
}

nlohmann::json MetricVector::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& f : kFields) j[f.name] = this->*(f.member);
  return j;
}

MetricVector MetricVector::from_json(const nlohmann::json& j) {
  MetricVector m;
  for (const auto& f : kFields)
    if (j.contains(f.name)) m.*(f.member) = j.at(f.name).get<double>();
  return m;
}

std::string to_stats_text(const MetricVector& m) {
  std::string out;
  out += "---------- Begin Simulation Statistics ----------\n";
  char line[192];
  for (const auto& f : kFields) {
    std::snprintf(line, sizeof(line), "%-16s %.17g  # %s\n", f.name,
                  m.*(f.member), f.comment);
    out += line;
  }
  out += "---------- End Simulation Statistics   ----------\n";
  return out;
}

}  // namespace kerntune
