#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerntune/kernel.hpp"
#include "kerntune/metrics.hpp"

namespace kerntune {

struct CacheConfig {
  uint32_t size = 0;         // bytes
  uint32_t line = 64;        // bytes
  uint32_t assoc = 4;        // ways
  uint32_t hit_latency = 2;  // cycles

  uint32_t sets() const { return size / (line * assoc); }
  void validate() const;

  nlohmann::json to_json() const;
  static CacheConfig from_json(const nlohmann::json& j);
  bool operator==(const CacheConfig&) const = default;
};

struct CoreConfig {
  std::string name = "custom";
  double frequency = 2e9;  // Hz
  uint32_t fetch_width = 3;
  uint32_t rob_size = 40;
  uint32_t lsq_size = 16;
  uint32_t rse_size = 32;
  uint32_t alu_count = 3;
  uint32_t simd_count = 2;  // present per configuration; no op class uses it
  uint32_t fp_count = 2;
  uint32_t mem_ports = 2;
  CacheConfig l1i;
  CacheConfig l1d;
  CacheConfig l2;
  bool l2_prefetch = false;
  uint32_t mem_latency = 100;
  uint32_t mispredict_penalty = 10;
  // Operation latencies (cycles); units are fully pipelined.
  uint32_t lat_int_alu = 1;
  uint32_t lat_int_mul = 3;
  uint32_t lat_fp_add = 3;
  uint32_t lat_fp_mul = 5;

  void validate() const;

  static CoreConfig small_core();
  static CoreConfig large_core();
  static CoreConfig preset(const std::string& name);

  nlohmann::json to_json() const;
  static CoreConfig from_json(const nlohmann::json& j);
  bool operator==(const CoreConfig&) const = default;
};

// Per-event energies in nanojoules. Values are a fixed convention of this
// framework; objectives built on power compare runs against each other, not
// against silicon.
struct EnergyModel {
  double e_int = 0.1;
  double e_fp = 0.4;
  double e_load = 0.2;
  double e_store = 0.2;
  double e_branch = 0.12;
  double e_l1_access = 0.05;
  double e_l2_access = 0.3;
  double e_mem_access = 2.0;
  double e_flush = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static EnergyModel from_json(const nlohmann::json& j);
  bool operator==(const EnergyModel&) const = default;
};

struct EventCounts {
  uint64_t int_ops = 0;
  uint64_t fp_ops = 0;
  uint64_t loads = 0;
  uint64_t stores = 0;
  uint64_t branches = 0;
  uint64_t l1_accesses = 0;
  uint64_t l2_accesses = 0;
  uint64_t mem_accesses = 0;
  uint64_t flushes = 0;
};

// P = sum(count_e * energy_e) / (cycles / frequency).
double dynamic_power(const EventCounts& counts, uint64_t cycles,
                     const CoreConfig& core, const EnergyModel& em);

// Set-associative LRU cache used for L1I/L1D/L2. Lines installed by the
// prefetcher carry a readiness time; a demand hit on an in-flight fill
// reports the remaining wait.
class SetAssocCache {
 public:
  explicit SetAssocCache(const CacheConfig& cfg);

  // Lookup; fills the line on a miss. Returns hit; extra_wait is the number
  // of cycles until an in-flight prefetch fill completes (0 when ready).
  bool access(uint64_t addr, uint64_t now, uint64_t& extra_wait);
  bool access(uint64_t addr) {
    uint64_t wait;
    return access(addr, ~uint64_t{0}, wait);
  }
  // Install without hit/miss accounting, data arriving at ready_at. Returns
  // true when the line was absent and got filled.
  bool prefetch(uint64_t addr, uint64_t ready_at);
  bool contains(uint64_t addr) const;

 private:
  uint32_t set_for(uint64_t addr) const;
  uint64_t tag_for(uint64_t addr) const;

  uint32_t sets_;
  uint32_t assoc_;
  uint32_t line_shift_;
  uint32_t set_shift_;
  std::vector<uint64_t> tags_;
  std::vector<uint64_t> stamps_;
  std::vector<uint64_t> ready_;
  std::vector<uint8_t> valid_;
  uint64_t tick_ = 0;
};

// Global-history XOR-indexed predictor: 12 history bits, 4096 two-bit
// counters.
class GsharePredictor {
 public:
  GsharePredictor() { counters_.fill(1); }

  bool predict(uint32_t pc) const {
    return counters_[index(pc)] >= 2;
  }

  void update(uint32_t pc, bool taken) {
    uint8_t& c = counters_[index(pc)];
    if (taken && c < 3) ++c;
    if (!taken && c > 0) --c;
    history_ = ((history_ << 1) | (taken ? 1u : 0u)) & kHistoryMask;
  }

 private:
  static constexpr uint32_t kHistoryBits = 12;
  static constexpr uint32_t kHistoryMask = (1u << kHistoryBits) - 1;

  uint32_t index(uint32_t pc) const {
    return ((pc >> 2) ^ history_) & kHistoryMask;
  }

  uint32_t history_ = 0;
  std::array<uint8_t, 1u << kHistoryBits> counters_;
};

// Cycle-approximate execution of n_dyn dynamic instructions of the kernel on
// the given core. Deterministic: identical inputs give bit-identical output.
MetricVector simulate(const Kernel& kernel, const CoreConfig& core,
                      uint64_t n_dyn, const EnergyModel& em = EnergyModel{});

}  // namespace kerntune
