#include "kerntune/knobs.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "kerntune/rng.hpp"

namespace kerntune {

void KnobDef::validate() const {
  if (name.empty()) throw std::invalid_argument("knob with empty name");
  if (values.empty())
    throw std::invalid_argument("knob '" + name + "' has no values");
  for (size_t i = 1; i < values.size(); ++i) {
    if (!(values[i - 1] < values[i]))
      throw std::invalid_argument("knob '" + name +
                                  "' values must be strictly ascending");
  }
  if (kind == KnobKind::InstructionFraction && values.front() <= 0.0)
    throw std::invalid_argument("knob '" + name +
                                "' fraction weights must be positive");
}

nlohmann::json KnobDef::to_json() const {
  return {{"name", name},
          {"kind", kind == KnobKind::InstructionFraction ? "fraction" : "scalar"},
          {"values", values}};
}

KnobDef KnobDef::from_json(const nlohmann::json& j) {
  KnobDef d;
  d.name = j.at("name").get<std::string>();
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "fraction")
    d.kind = KnobKind::InstructionFraction;
  else if (kind == "scalar")
    d.kind = KnobKind::Scalar;
  else
    throw std::invalid_argument("unknown knob kind '" + kind + "'");
  d.values = j.at("values").get<std::vector<double>>();
  d.validate();
  return d;
}

int KnobSpace::index_of(std::string_view name) const {
  for (size_t i = 0; i < knobs.size(); ++i)
    if (knobs[i].name == name) return static_cast<int>(i);
  return -1;
}

const KnobDef* KnobSpace::find(std::string_view name) const {
  int i = index_of(name);
  return i < 0 ? nullptr : &knobs[i];
}

void KnobSpace::validate() const {
  std::set<std::string> names;
  bool any_fraction = false;
  for (const auto& k : knobs) {
    k.validate();
    if (!names.insert(k.name).second)
      throw std::invalid_argument("duplicate knob name '" + k.name + "'");
    any_fraction |= k.kind == KnobKind::InstructionFraction;
  }
  if (!any_fraction)
    throw std::invalid_argument(
        "knob space needs at least one instruction-fraction knob");
}

KnobSpace KnobSpace::default_space() {
  auto weights = [] {
    return std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  };
  KnobSpace s;
  for (const char* op :
       {"ADD", "MUL", "FADDD", "FMULD", "BEQ", "BNE", "LD", "LW", "SD", "SW"})
    s.knobs.push_back({op, KnobKind::InstructionFraction, weights()});
  s.knobs.push_back({"REG_DIST", KnobKind::Scalar, weights()});
  s.knobs.push_back({"MEM_SIZE", KnobKind::Scalar,
                     {2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048}});
  s.knobs.push_back({"MEM_STRIDE", KnobKind::Scalar,
                     {8, 12, 16, 20, 24, 32, 40, 48, 56, 64}});
  s.knobs.push_back({"MEM_TEMP1", KnobKind::Scalar,
                     {1, 2, 4, 8, 16, 32, 64, 128, 256, 512}});
  s.knobs.push_back({"MEM_TEMP2", KnobKind::Scalar, weights()});
  s.knobs.push_back({"B_PATTERN", KnobKind::Scalar,
                     {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}});
  return s;
}

nlohmann::json KnobSpace::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& k : knobs) arr.push_back(k.to_json());
  return {{"knobs", arr}};
}

KnobSpace KnobSpace::from_json(const nlohmann::json& j) {
  KnobSpace s;
  for (const auto& e : j.at("knobs")) s.knobs.push_back(KnobDef::from_json(e));
  s.validate();
  return s;
}

double KnobConfig::at(std::string_view name) const {
  const double* v = try_get(name);
  if (!v) throw std::out_of_range("knob '" + std::string(name) + "' not in config");
  return *v;
}

const double* KnobConfig::try_get(std::string_view name) const {
  for (const auto& [n, v] : items)
    if (n == name) return &v;
  return nullptr;
}

nlohmann::json KnobConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [n, v] : items) j[n] = v;
  return j;
}

KnobConfig KnobConfig::from_json(const nlohmann::json& j) {
  KnobConfig c;
  for (auto it = j.begin(); it != j.end(); ++it)
    c.items.emplace_back(it.key(), it.value().get<double>());
  return c;
}

bool KnobConfig::operator==(const KnobConfig& other) const {
  auto sorted = [](const KnobConfig& c) {
    auto v = c.items;
    std::sort(v.begin(), v.end());
    return v;
  };
  return sorted(*this) == sorted(other);
}

KnobPoint random_point(const KnobSpace& space, uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1d0u));
  KnobPoint p;
  p.pos.reserve(space.dim());
  for (const auto& k : space.knobs)
    p.pos.push_back(static_cast<double>(rng.next_index(k.size())));
  return p;
}

namespace {

int snap_one(double pos, size_t len) {
  // Round half down, then clamp.
  int idx = static_cast<int>(std::ceil(pos - 0.5));
  if (idx < 0) idx = 0;
  if (idx >= static_cast<int>(len)) idx = static_cast<int>(len) - 1;
  return idx;
}

}  // namespace

std::vector<int> snap_indices(const KnobPoint& point, const KnobSpace& space) {
  if (point.pos.size() != space.dim())
    throw std::invalid_argument("point dimension does not match space");
  std::vector<int> idx(space.dim());
  for (size_t i = 0; i < space.dim(); ++i)
    idx[i] = snap_one(point.pos[i], space.knobs[i].size());
  return idx;
}

KnobConfig snap(const KnobPoint& point, const KnobSpace& space) {
  std::vector<int> idx = snap_indices(point, space);
  KnobConfig c;
  c.items.reserve(space.dim());
  for (size_t i = 0; i < space.dim(); ++i)
    c.items.emplace_back(space.knobs[i].name, space.knobs[i].values[idx[i]]);
  return c;
}

KnobPoint perturb(const KnobPoint& point, const KnobSpace& space, size_t dim,
                  double delta) {
  if (point.pos.size() != space.dim())
    throw std::invalid_argument("point dimension does not match space");
  if (dim >= space.dim())
    throw std::out_of_range("perturb dimension out of range");
  KnobPoint p = point;
  double hi = static_cast<double>(space.knobs[dim].size() - 1);
  p.pos[dim] = std::clamp(p.pos[dim] + delta, 0.0, hi);
  return p;
}

double distance(const KnobPoint& a, const KnobPoint& b) {
  if (a.pos.size() != b.pos.size())
    throw std::invalid_argument("distance between points of different dimension");
  double d = 0.0;
  for (size_t i = 0; i < a.pos.size(); ++i)
    d = std::max(d, std::abs(a.pos[i] - b.pos[i]));
  return d;
}

std::vector<std::pair<std::string, double>> instruction_profile(
    const KnobConfig& config, const KnobSpace& space) {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> out;
  for (const auto& k : space.knobs) {
    if (k.kind != KnobKind::InstructionFraction) continue;
    double w = config.at(k.name);
    out.emplace_back(k.name, w);
    total += w;
  }
  for (auto& [name, w] : out) w /= total;
  return out;
}

}  // namespace kerntune
