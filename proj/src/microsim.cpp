#include "kerntune/microsim.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace kerntune {

namespace {

constexpr uint64_t kCodeBase = 0x1000;
constexpr uint64_t kNever = std::numeric_limits<uint64_t>::max();

bool is_pow2(uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

void CacheConfig::validate() const {
  if (size == 0 || line == 0 || assoc == 0)
    throw std::invalid_argument("cache size/line/assoc must be positive");
  if (size % (line * assoc) != 0)
    throw std::invalid_argument("cache size not divisible by line * assoc");
  if (!is_pow2(sets()))
    throw std::invalid_argument("cache set count must be a power of two");
  if (!is_pow2(line))
    throw std::invalid_argument("cache line size must be a power of two");
}

nlohmann::json CacheConfig::to_json() const {
  return {{"size", size},
          {"line", line},
          {"assoc", assoc},
          {"hit_latency", hit_latency}};
}

CacheConfig CacheConfig::from_json(const nlohmann::json& j) {
  CacheConfig c;
  c.size = j.at("size").get<uint32_t>();
  if (j.contains("line")) c.line = j.at("line").get<uint32_t>();
  if (j.contains("assoc")) c.assoc = j.at("assoc").get<uint32_t>();
  if (j.contains("hit_latency"))
    c.hit_latency = j.at("hit_latency").get<uint32_t>();
  c.validate();
  return c;
}

void CoreConfig::validate() const {
  if (frequency <= 0) throw std::invalid_argument("frequency must be positive");
  for (uint32_t v : {fetch_width, rob_size, lsq_size, rse_size, alu_count,
                     simd_count, fp_count, mem_ports, mem_latency,
                     mispredict_penalty, lat_int_alu, lat_int_mul, lat_fp_add,
                     lat_fp_mul})
    if (v == 0) throw std::invalid_argument("core counts must be >= 1");
  l1i.validate();
  l1d.validate();
  l2.validate();
}

CoreConfig CoreConfig::small_core() {
  CoreConfig c;
  c.name = "small";
  c.frequency = 2e9;
  c.fetch_width = 3;
  c.rob_size = 40;
  c.lsq_size = 16;
  c.rse_size = 32;
  c.alu_count = 3;
  c.simd_count = 2;
  c.fp_count = 2;
  c.mem_ports = 2;
  c.l1i = {16 * 1024, 64, 4, 2};
  c.l1d = {16 * 1024, 64, 4, 2};
  c.l2 = {256 * 1024, 64, 8, 12};
  c.l2_prefetch = false;
  return c;
}

CoreConfig CoreConfig::large_core() {
  CoreConfig c;
  c.name = "large";
  c.frequency = 2e9;
  c.fetch_width = 8;
  c.rob_size = 160;
  c.lsq_size = 64;
  c.rse_size = 128;
  c.alu_count = 6;
  c.simd_count = 4;
  c.fp_count = 4;
  c.mem_ports = 4;
  c.l1i = {32 * 1024, 64, 4, 2};
  c.l1d = {32 * 1024, 64, 4, 2};
  c.l2 = {1024 * 1024, 64, 8, 12};
  c.l2_prefetch = true;
  return c;
}

CoreConfig CoreConfig::preset(const std::string& name) {
  if (name == "small") return small_core();
  if (name == "large") return large_core();
  throw std::invalid_argument("unknown core preset '" + name +
                              "' (expected 'small' or 'large')");
}

nlohmann::json CoreConfig::to_json() const {
  return {{"name", name},
          {"frequency", frequency},
          {"fetch_width", fetch_width},
          {"rob_size", rob_size},
          {"lsq_size", lsq_size},
          {"rse_size", rse_size},
          {"alu_count", alu_count},
          {"simd_count", simd_count},
          {"fp_count", fp_count},
          {"mem_ports", mem_ports},
          {"l1i", l1i.to_json()},
          {"l1d", l1d.to_json()},
          {"l2", l2.to_json()},
          {"l2_prefetch", l2_prefetch},
          {"mem_latency", mem_latency},
          {"mispredict_penalty", mispredict_penalty},
          {"lat_int_alu", lat_int_alu},
          {"lat_int_mul", lat_int_mul},
          {"lat_fp_add", lat_fp_add},
          {"lat_fp_mul", lat_fp_mul}};
}

CoreConfig CoreConfig::from_json(const nlohmann::json& j) {
  CoreConfig c;
  if (j.is_string()) return preset(j.get<std::string>());
  if (j.contains("name")) c.name = j.at("name").get<std::string>();
  auto u32 = [&](const char* key, uint32_t& field) {
    if (j.contains(key)) field = j.at(key).get<uint32_t>();
  };
  if (j.contains("frequency")) c.frequency = j.at("frequency").get<double>();
  u32("fetch_width", c.fetch_width);
  u32("rob_size", c.rob_size);
  u32("lsq_size", c.lsq_size);
  u32("rse_size", c.rse_size);
  u32("alu_count", c.alu_count);
  u32("simd_count", c.simd_count);
  u32("fp_count", c.fp_count);
  u32("mem_ports", c.mem_ports);
  if (j.contains("l1i")) c.l1i = CacheConfig::from_json(j.at("l1i"));
  if (j.contains("l1d")) c.l1d = CacheConfig::from_json(j.at("l1d"));
  if (j.contains("l2")) c.l2 = CacheConfig::from_json(j.at("l2"));
  if (j.contains("l2_prefetch"))
    c.l2_prefetch = j.at("l2_prefetch").get<bool>();
  u32("mem_latency", c.mem_latency);
  u32("mispredict_penalty", c.mispredict_penalty);
  u32("lat_int_alu", c.lat_int_alu);
  u32("lat_int_mul", c.lat_int_mul);
  u32("lat_fp_add", c.lat_fp_add);
  u32("lat_fp_mul", c.lat_fp_mul);
  c.validate();
  return c;
}

void EnergyModel::validate() const {
  for (double v : {e_int, e_fp, e_load, e_store, e_branch, e_l1_access,
                   e_l2_access, e_mem_access, e_flush})
    if (v < 0) throw std::invalid_argument("energy values must be >= 0");
}

nlohmann::json EnergyModel::to_json() const {
  return {{"e_int", e_int},
          {"e_fp", e_fp},
          {"e_load", e_load},
          {"e_store", e_store},
          {"e_branch", e_branch},
          {"e_l1_access", e_l1_access},
          {"e_l2_access", e_l2_access},
          {"e_mem_access", e_mem_access},
          {"e_flush", e_flush}};
}

EnergyModel EnergyModel::from_json(const nlohmann::json& j) {
  EnergyModel em;
  auto get = [&](const char* key, double& field) {
    if (j.contains(key)) field = j.at(key).get<double>();
  };
  get("e_int", em.e_int);
  get("e_fp", em.e_fp);
  get("e_load", em.e_load);
  get("e_store", em.e_store);
  get("e_branch", em.e_branch);
  get("e_l1_access", em.e_l1_access);
  get("e_l2_access", em.e_l2_access);
  get("e_mem_access", em.e_mem_access);
  get("e_flush", em.e_flush);
  em.validate();
  return em;
}

double dynamic_power(const EventCounts& c, uint64_t cycles,
                     const CoreConfig& core, const EnergyModel& em) {
  if (cycles < 1) throw std::invalid_argument("cycles must be >= 1");
  double nj = c.int_ops * em.e_int + c.fp_ops * em.e_fp +
              c.loads * em.e_load + c.stores * em.e_store +
              c.branches * em.e_branch + c.l1_accesses * em.e_l1_access +
              c.l2_accesses * em.e_l2_access +
              c.mem_accesses * em.e_mem_access + c.flushes * em.e_flush;
  double seconds = static_cast<double>(cycles) / core.frequency;
  return nj * 1e-9 / seconds;
}

SetAssocCache::SetAssocCache(const CacheConfig& cfg) {
  cfg.validate();
  sets_ = cfg.sets();
  assoc_ = cfg.assoc;
  line_shift_ = 0;
  while ((1u << line_shift_) < cfg.line) ++line_shift_;
  set_shift_ = 0;
  while ((1u << set_shift_) < sets_) ++set_shift_;
  tags_.assign(static_cast<size_t>(sets_) * assoc_, 0);
  stamps_.assign(static_cast<size_t>(sets_) * assoc_, 0);
  ready_.assign(static_cast<size_t>(sets_) * assoc_, 0);
  valid_.assign(static_cast<size_t>(sets_) * assoc_, 0);
}

uint32_t SetAssocCache::set_for(uint64_t addr) const {
  return static_cast<uint32_t>((addr >> line_shift_) & (sets_ - 1));
}

uint64_t SetAssocCache::tag_for(uint64_t addr) const {
  return addr >> (line_shift_ + set_shift_);
}

bool SetAssocCache::access(uint64_t addr, uint64_t now, uint64_t& extra_wait) {
  uint32_t set = set_for(addr);
  uint64_t tag = tag_for(addr);
  size_t base = static_cast<size_t>(set) * assoc_;
  ++tick_;
  size_t victim = base;
  uint64_t oldest = kNever;
  extra_wait = 0;
  for (size_t w = base; w < base + assoc_; ++w) {
    if (valid_[w] && tags_[w] == tag) {
      stamps_[w] = tick_;
      if (ready_[w] > now) extra_wait = ready_[w] - now;
      ready_[w] = 0;
      return true;
    }
    uint64_t age = valid_[w] ? stamps_[w] : 0;
    if (age < oldest) {
      oldest = age;
      victim = w;
    }
  }
  tags_[victim] = tag;
  stamps_[victim] = tick_;
  ready_[victim] = 0;
  valid_[victim] = 1;
  return false;
}

bool SetAssocCache::prefetch(uint64_t addr, uint64_t ready_at) {
  if (contains(addr)) return false;
  uint64_t wait;
  access(addr, ~uint64_t{0}, wait);
  uint32_t set = set_for(addr);
  uint64_t tag = tag_for(addr);
  size_t base = static_cast<size_t>(set) * assoc_;
  for (size_t w = base; w < base + assoc_; ++w)
    if (valid_[w] && tags_[w] == tag) {
      ready_[w] = ready_at;
      break;
    }
  return true;
}

bool SetAssocCache::contains(uint64_t addr) const {
  uint32_t set = set_for(addr);
  uint64_t tag = tag_for(addr);
  size_t base = static_cast<size_t>(set) * assoc_;
  for (size_t w = base; w < base + assoc_; ++w)
    if (valid_[w] && tags_[w] == tag) return true;
  return false;
}

namespace {

// Quota buckets for the issue ports.
enum Bucket : uint8_t { kAlu = 0, kFp = 1, kMem = 2 };

Bucket bucket_of(InstrClass c) {
  switch (c) {
    case InstrClass::FpAdd:
    case InstrClass::FpMul:
      return kFp;
    case InstrClass::Load:
    case InstrClass::Store:
      return kMem;
    default:
      return kAlu;
  }
}

struct Pipeline {
  const Kernel& kernel;
  const CoreConfig& core;
  uint64_t n_dyn;

  TraceCursor cursor;
  uint64_t body;

  // ROB ring, indexed by seq % rob_size. Entries live in [head, tail).
  std::vector<uint8_t> cls;
  std::vector<uint8_t> issued;
  std::vector<uint8_t> warm;
  std::vector<uint64_t> complete;
  std::vector<uint64_t> dep0, dep1;
  std::vector<uint64_t> addr;
  uint64_t head = 0, tail = 0;

  std::vector<uint32_t> window;  // unissued slots, oldest first
  uint32_t lsq_occ = 0;

  std::array<uint64_t, 64> last_writer;
  SetAssocCache l1i, l1d, l2;
  GsharePredictor predictor;

  uint64_t dispatched = 0, retired = 0;
  uint64_t stall_until = 0;
  uint64_t last_fetch_line = kNever;
  DynInstr pending{};
  bool has_pending = false;
  bool pending_fetched = false;

  // Full-run event tallies (energy) and post-warmup tallies (rates).
  EventCounts events;
  uint64_t class_counts[7] = {0, 0, 0, 0, 0, 0, 0};
  uint64_t l1i_acc = 0, l1i_hits = 0;
  uint64_t l1d_acc = 0, l1d_hits = 0;
  uint64_t l2_acc = 0, l2_hits = 0;
  uint64_t rate_l1i_acc = 0, rate_l1i_hits = 0;
  uint64_t rate_l1d_acc = 0, rate_l1d_hits = 0;
  uint64_t rate_l2_acc = 0, rate_l2_hits = 0;
  uint64_t rate_branches = 0, rate_mispredicts = 0;

  Pipeline(const Kernel& k, const CoreConfig& c, uint64_t n)
      : kernel(k),
        core(c),
        n_dyn(n),
        cursor(k),
        body(k.body_size()),
        cls(c.rob_size),
        issued(c.rob_size),
        warm(c.rob_size),
        complete(c.rob_size),
        dep0(c.rob_size),
        dep1(c.rob_size),
        addr(c.rob_size),
        l1i(c.l1i),
        l1d(c.l1d),
        l2(c.l2) {
    last_writer.fill(kNever);
    window.reserve(c.rse_size);
  }

  uint32_t slot_of(uint64_t seq) const {
    return static_cast<uint32_t>(seq % core.rob_size);
  }

  bool dep_ready(uint64_t dep, uint64_t now) const {
    if (dep == kNever || dep < head) return true;
    uint32_t s = slot_of(dep);
    return issued[s] && complete[s] <= now;
  }

  uint32_t mem_latency_for(uint64_t a, uint64_t now, bool count_rates) {
    ++events.l1_accesses;
    ++l1d_acc;
    if (count_rates) ++rate_l1d_acc;
    if (l1d.access(a)) {
      ++l1d_hits;
      if (count_rates) ++rate_l1d_hits;
      return core.l1d.hit_latency;
    }
    ++events.l2_accesses;
    ++l2_acc;
    if (count_rates) ++rate_l2_acc;
    uint64_t wait = 0;
    bool l2hit = l2.access(a, now, wait);
    if (core.l2_prefetch) {
      if (l2.prefetch(a + core.l2.line, now + core.mem_latency))
        ++events.mem_accesses;
    }
    if (l2hit) {
      ++l2_hits;
      if (count_rates) ++rate_l2_hits;
      return core.l2.hit_latency + static_cast<uint32_t>(wait);
    }
    ++events.mem_accesses;
    return core.mem_latency;
  }

  uint32_t inst_latency(InstrClass c) const {
    switch (c) {
      case InstrClass::IntMul: return core.lat_int_mul;
      case InstrClass::FpAdd: return core.lat_fp_add;
      case InstrClass::FpMul: return core.lat_fp_mul;
      default: return core.lat_int_alu;
    }
  }

  bool retire_stage(uint64_t now) {
    bool progress = false;
    uint32_t n = 0;
    while (head < tail && n < core.fetch_width) {
      uint32_t s = slot_of(head);
      if (!issued[s] || complete[s] > now) break;
      InstrClass c = static_cast<InstrClass>(cls[s]);
      if (c == InstrClass::Load || c == InstrClass::Store) --lsq_occ;
      ++head;
      ++retired;
      ++n;
      progress = true;
    }
    return progress;
  }

  bool issue_stage(uint64_t now) {
    if (window.empty()) return false;
    uint32_t quota[3] = {core.alu_count, core.fp_count, core.mem_ports};
    size_t kept = 0;
    bool progress = false;
    for (size_t i = 0; i < window.size(); ++i) {
      uint32_t s = window[i];
      Bucket b = bucket_of(static_cast<InstrClass>(cls[s]));
      if (quota[b] == 0 || !dep_ready(dep0[s], now) ||
          !dep_ready(dep1[s], now)) {
        window[kept++] = s;
        continue;
      }
      InstrClass c = static_cast<InstrClass>(cls[s]);
      uint32_t lat;
      if (c == InstrClass::Load || c == InstrClass::Store)
        lat = mem_latency_for(addr[s], now, !warm[s]);
      else
        lat = inst_latency(c);
      complete[s] = now + lat;
      issued[s] = 1;
      --quota[b];
      progress = true;
    }
    window.resize(kept);
    return progress;
  }

  bool dispatch_stage(uint64_t now) {
    if (now < stall_until) return false;
    bool progress = false;
    uint32_t n = 0;
    while (n < core.fetch_width) {
      if (!has_pending) {
        if (dispatched == n_dyn) break;
        pending = cursor.next();
        has_pending = true;
        pending_fetched = false;
      }
      if (!pending_fetched) {
        uint64_t line = (kCodeBase + 4ull * pending.index) >> 6;
        if (line != last_fetch_line) {
          last_fetch_line = line;
          bool w = dispatched < body;
          ++events.l1_accesses;
          ++l1i_acc;
          if (!w) ++rate_l1i_acc;
          if (l1i.access(kCodeBase + 4ull * pending.index)) {
            ++l1i_hits;
            if (!w) ++rate_l1i_hits;
          } else {
            ++events.l2_accesses;
            ++l2_acc;
            if (!w) ++rate_l2_acc;
            uint32_t lat;
            uint64_t wait = 0;
            if (l2.access(kCodeBase + 4ull * pending.index, now, wait)) {
              ++l2_hits;
              if (!w) ++rate_l2_hits;
              lat = core.l2.hit_latency + static_cast<uint32_t>(wait);
            } else {
              ++events.mem_accesses;
              lat = core.mem_latency;
            }
            pending_fetched = true;
            stall_until = now + lat;
            break;
          }
        }
        pending_fetched = true;
      }
      bool is_mem =
          pending.cls == InstrClass::Load || pending.cls == InstrClass::Store;
      if (tail - head >= core.rob_size) break;
      if (window.size() >= core.rse_size) break;
      if (is_mem && lsq_occ >= core.lsq_size) break;

      uint64_t seq = tail++;
      uint32_t s = slot_of(seq);
      const Instr& in = kernel.instrs[pending.index];
      cls[s] = static_cast<uint8_t>(pending.cls);
      issued[s] = 0;
      warm[s] = dispatched < body;
      complete[s] = kNever;
      addr[s] = pending.addr;
      dep0[s] = in.srcs[0] >= 0 ? last_writer[in.srcs[0]] : kNever;
      dep1[s] = in.srcs[1] >= 0 ? last_writer[in.srcs[1]] : kNever;
      if (in.dest >= 0) last_writer[in.dest] = seq;
      window.push_back(s);
      if (is_mem) ++lsq_occ;

      ++class_counts[static_cast<int>(pending.cls)];
      switch (pending.cls) {
        case InstrClass::IntAlu:
        case InstrClass::IntMul: ++events.int_ops; break;
        case InstrClass::FpAdd:
        case InstrClass::FpMul: ++events.fp_ops; break;
        case InstrClass::Load: ++events.loads; break;
        case InstrClass::Store: ++events.stores; break;
        case InstrClass::Branch: ++events.branches; break;
      }

      bool mispredicted = false;
      if (pending.cls == InstrClass::Branch) {
        uint32_t pc = static_cast<uint32_t>(kCodeBase + 4ull * pending.index);
        bool hit = predictor.predict(pc) == pending.taken;
        predictor.update(pc, pending.taken);
        if (!warm[s]) {
          ++rate_branches;
          if (!hit) ++rate_mispredicts;
        }
        if (!hit) {
          ++events.flushes;
          stall_until = now + core.mispredict_penalty;
          mispredicted = true;
        }
      }

      ++dispatched;
      has_pending = false;
      progress = true;
      ++n;
      if (mispredicted) break;
    }
    return progress;
  }

  // Earliest future cycle at which anything can change.
  uint64_t next_event(uint64_t now) const {
    uint64_t ev = kNever;
    if (stall_until > now && (has_pending || dispatched < n_dyn))
      ev = stall_until;
    for (uint64_t q = head; q < tail; ++q) {
      uint32_t s = slot_of(q);
      if (issued[s] && complete[s] > now) ev = std::min(ev, complete[s]);
    }
    return ev;
  }

  uint64_t run() {
    uint64_t now = 0;
    while (retired < n_dyn) {
      ++now;
      bool r = retire_stage(now);
      bool i = issue_stage(now);
      bool d = dispatch_stage(now);
      if (!r && !i && !d) {
        uint64_t ev = next_event(now);
        if (ev == kNever)
          throw std::logic_error("pipeline deadlock");  // unreachable
        if (ev > now + 1) now = ev - 1;
      }
    }
    return now;
  }
};

}  // namespace

MetricVector simulate(const Kernel& kernel, const CoreConfig& core,
                      uint64_t n_dyn, const EnergyModel& em) {
  core.validate();
  em.validate();
  if (kernel.instrs.empty()) throw std::invalid_argument("empty kernel");
  if (n_dyn < kernel.body_size())
    throw std::invalid_argument(
        "dynamic length below loop body size; metrics would be "
        "unrepresentative");

  Pipeline p(kernel, core, n_dyn);
  uint64_t cycles = p.run();

  auto rate = [](uint64_t hits, uint64_t acc, double if_empty) {
    return acc == 0 ? if_empty : static_cast<double>(hits) / acc;
  };

  MetricVector m;
  double n = static_cast<double>(n_dyn);
  m.frac_int = (p.class_counts[0] + p.class_counts[1]) / n;
  m.frac_fp = (p.class_counts[2] + p.class_counts[3]) / n;
  m.frac_load = p.class_counts[4] / n;
  m.frac_store = p.class_counts[5] / n;
  m.frac_branch = p.class_counts[6] / n;
  m.l1i_hit = rate(p.rate_l1i_hits, p.rate_l1i_acc, 1.0);
  m.l1d_hit = rate(p.rate_l1d_hits, p.rate_l1d_acc, 1.0);
  m.l2_hit = rate(p.rate_l2_hits, p.rate_l2_acc, 1.0);
  m.branch_mispred = rate(p.rate_mispredicts, p.rate_branches, 0.0);
  m.ipc = n / static_cast<double>(cycles);
  m.dyn_power = dynamic_power(p.events, cycles, core, em);
  return m;
}

}  // namespace kerntune
