#include "kerntune/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "kerntune/rng.hpp"

namespace kerntune {

namespace {

// x0..x4 are conventionally special, x5/x6 hold the stream base addresses.
constexpr int kStreamBaseReg0 = 5;
constexpr int kIntPoolStart = 7;
constexpr uint64_t kStream0Base = 0x10000000ULL;
constexpr uint64_t kStream1Base = 0x20000000ULL;
constexpr uint64_t kFixedStreamFootprint = 4 * 1024;
constexpr uint32_t kFixedStreamStride = 8;

// Defaults for scalar knobs a reduced space may omit.
constexpr int kDefaultDepDistance = 4;
constexpr double kDefaultMemSizeKib = 16.0;
constexpr double kDefaultMemStride = 8.0;
constexpr double kDefaultMemTemp = 1.0;
constexpr double kDefaultBranchRandomRatio = 0.0;

struct OpInfo {
  const char* name;
  InstrClass cls;
};

constexpr OpInfo kOps[] = {
    {"ADD", InstrClass::IntAlu},  {"MUL", InstrClass::IntMul},
    {"FADDD", InstrClass::FpAdd}, {"FMULD", InstrClass::FpMul},
    {"BEQ", InstrClass::Branch},  {"BNE", InstrClass::Branch},
    {"LD", InstrClass::Load},     {"LW", InstrClass::Load},
    {"SD", InstrClass::Store},    {"SW", InstrClass::Store},
};

constexpr const char* kClassNames[] = {"int-alu", "int-mul", "fp-add", "fp-mul",
                                       "load",    "store",   "branch"};

double scalar_or(const KnobConfig& config, const char* name, double fallback) {
  const double* v = config.try_get(name);
  return v ? *v : fallback;
}

bool produces_int(InstrClass c) {
  return c == InstrClass::IntAlu || c == InstrClass::IntMul ||
         c == InstrClass::Load;
}

bool produces_fp(InstrClass c) {
  return c == InstrClass::FpAdd || c == InstrClass::FpMul;
}

// Integer instruction counts per opcode. Two-stage largest-remainder
// apportionment: first across instruction classes, then across the opcodes
// of each class, so both the per-opcode and the per-class counts stay
// within one unit of the exact profile.
std::vector<int> apportion_counts(
    const std::vector<std::pair<std::string, double>>& profile, int total) {
  size_t n = profile.size();
  std::vector<InstrClass> op_cls(n);
  for (size_t i = 0; i < n; ++i)
    op_cls[i] = opcode_class(opcode_from_name(profile[i].first));

  // Class targets.
  constexpr int kNumClasses = 7;
  std::array<double, kNumClasses> class_frac{};
  for (size_t i = 0; i < n; ++i)
    class_frac[static_cast<int>(op_cls[i])] += profile[i].second;

  std::array<int, kNumClasses> class_count{};
  {
    int assigned = 0;
    std::array<double, kNumClasses> rem{};
    for (int c = 0; c < kNumClasses; ++c) {
      double t = class_frac[c] * total;
      class_count[c] = static_cast<int>(std::floor(t));
      rem[c] = t - class_count[c];
      assigned += class_count[c];
    }
    std::vector<int> order(kNumClasses);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return rem[a] > rem[b]; });
    for (int i = 0; i < total - assigned; ++i) class_count[order[i]] += 1;
  }

  // Opcode counts inside each class: floor of the global target plus the
  // class's leftover slots by largest fractional part.
  std::vector<int> counts(n, 0);
  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<size_t> members;
    for (size_t i = 0; i < n; ++i)
      if (static_cast<int>(op_cls[i]) == c) members.push_back(i);
    if (members.empty()) continue;
    int assigned = 0;
    std::vector<double> rem(members.size());
    for (size_t m = 0; m < members.size(); ++m) {
      double t = profile[members[m]].second * total;
      counts[members[m]] = static_cast<int>(std::floor(t));
      rem[m] = t - counts[members[m]];
      assigned += counts[members[m]];
    }
    std::vector<size_t> order(members.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return rem[a] > rem[b]; });
    int extra = class_count[c] - assigned;
    for (int i = 0; i < extra; ++i) counts[members[order[i]]] += 1;
  }

  for (size_t i = 0; i < n; ++i) {
    if (counts[i] == 0)
      throw std::invalid_argument(
          "static size " + std::to_string(total) + " too small to place " +
          profile[i].first + " (fraction " +
          std::to_string(profile[i].second) + ")");
  }
  return counts;
}

}  // namespace

InstrClass opcode_class(Opcode op) { return kOps[static_cast<int>(op)].cls; }

const char* opcode_name(Opcode op) { return kOps[static_cast<int>(op)].name; }

Opcode opcode_from_name(const std::string& name) {
  for (size_t i = 0; i < std::size(kOps); ++i)
    if (name == kOps[i].name) return static_cast<Opcode>(i);
  throw std::invalid_argument("unknown opcode '" + name + "'");
}

const char* class_name(InstrClass c) {
  return kClassNames[static_cast<int>(c)];
}

void MemStream::validate() const {
  if (stride == 0) throw std::invalid_argument("memory stream stride must be > 0");
  if (footprint < stride)
    throw std::invalid_argument("memory stream footprint below stride");
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("memory stream ratio outside (0,1]");
  if (repeat_count == 0 || repeat_period == 0)
    throw std::invalid_argument("memory stream repeat parameters must be >= 1");
}

Kernel generate(const KnobConfig& config, const KnobSpace& space,
                int static_size, uint64_t seed) {
  if (static_size < 10)
    throw std::invalid_argument("static size must be at least 10");
  space.validate();

  Kernel k;
  k.seed = seed;
  k.knob_config = config;
  k.dep_distance =
      static_cast<int>(scalar_or(config, "REG_DIST", kDefaultDepDistance));

  // Opcode skeleton from the instruction profile.
  auto profile = instruction_profile(config, space);
  std::vector<int> counts = apportion_counts(profile, static_size);
  std::vector<Opcode> body;
  body.reserve(static_size);
  for (size_t i = 0; i < profile.size(); ++i) {
    Opcode op = opcode_from_name(profile[i].first);
    body.insert(body.end(), counts[i], op);
  }
  Rng prof_rng(derive_seed(seed, 0x9001));
  prof_rng.shuffle(body.data(), body.size());

  k.instrs.resize(static_size);
  for (int i = 0; i < static_size; ++i) k.instrs[i].op = body[i];

  // Memory streams: the tunable stream plus a fixed small L1-resident one.
  MemStream s0;
  s0.id = 0;
  s0.base = kStream0Base;
  s0.footprint =
      static_cast<uint64_t>(scalar_or(config, "MEM_SIZE", kDefaultMemSizeKib)) *
      1024;
  s0.stride =
      static_cast<uint32_t>(scalar_or(config, "MEM_STRIDE", kDefaultMemStride));
  s0.ratio = 0.5;
  s0.repeat_count =
      static_cast<uint32_t>(scalar_or(config, "MEM_TEMP1", kDefaultMemTemp));
  s0.repeat_period =
      static_cast<uint32_t>(scalar_or(config, "MEM_TEMP2", kDefaultMemTemp));
  MemStream s1;
  s1.id = 1;
  s1.base = kStream1Base;
  s1.footprint = kFixedStreamFootprint;
  s1.stride = kFixedStreamStride;
  s1.ratio = 0.5;
  s0.validate();
  s1.validate();
  k.streams = {s0, s1};

  // Bind each memory op to the stream with the largest ratio deficit.
  {
    std::array<double, 2> issued{0.0, 0.0};
    for (auto& in : k.instrs) {
      InstrClass c = in.cls();
      if (c != InstrClass::Load && c != InstrClass::Store) continue;
      int pick = issued[0] / k.streams[0].ratio <=
                         issued[1] / k.streams[1].ratio
                     ? 0
                     : 1;
      in.mem_stream = pick;
      issued[pick] += 1.0;
    }
  }

  // Branch slots and directions.
  {
    int slot = 0;
    for (auto& in : k.instrs)
      if (in.cls() == InstrClass::Branch) in.branch_slot = slot++;
    double ratio = scalar_or(config, "B_PATTERN", kDefaultBranchRandomRatio);
    k.pattern.random_ratio = ratio;
    k.pattern.randomized.assign(slot, 0);
    int randomized = static_cast<int>(std::lround(ratio * slot));
    std::vector<int> order(slot);
    std::iota(order.begin(), order.end(), 0);
    Rng brng(derive_seed(seed, 0x9002));
    brng.shuffle(order.data(), order.size());
    for (int i = 0; i < randomized; ++i) k.pattern.randomized[order[i]] = 1;
    k.pattern.directions.resize(slot);
    for (int s = 0; s < slot; ++s)
      k.pattern.directions[s] = {static_cast<uint8_t>(brng.next_u64() & 1),
                                 static_cast<uint8_t>(brng.next_u64() & 1)};
  }

  // Destination registers round-robin per register file.
  {
    int next_int = 0, next_fp = 0;
    constexpr int int_pool = kIntRegs - kIntPoolStart;
    for (auto& in : k.instrs) {
      InstrClass c = in.cls();
      if (produces_int(c))
        in.dest = kIntPoolStart + (next_int++ % int_pool);
      else if (produces_fp(c))
        in.dest = kFpRegBase + (next_fp++ % kFpRegs);
    }
  }

  // Source registers at the configured dependency distance. Scanning starts
  // dep_distance instructions back (wrapping through the previous loop
  // iteration) and falls back to the nearest older producer of the right
  // register file. Both operands read the producer's destination so the
  // instruction carries exactly one architectural dependence.
  {
    int n = static_size;
    auto find_producer = [&](int pos, bool want_fp) -> int {
      for (int dist = k.dep_distance; dist <= k.dep_distance + n; ++dist) {
        const Instr& cand = k.instrs[(pos - dist % n + n) % n];
        if (cand.dest >= 0 && is_fp_reg(cand.dest) == want_fp)
          return cand.dest;
      }
      return want_fp ? kFpRegBase : kIntPoolStart;
    };
    for (int i = 0; i < n; ++i) {
      Instr& in = k.instrs[i];
      switch (in.cls()) {
        case InstrClass::IntAlu:
        case InstrClass::IntMul: {
          int r = find_producer(i, false);
          in.srcs = {r, r};
          break;
        }
        case InstrClass::FpAdd:
        case InstrClass::FpMul: {
          int r = find_producer(i, true);
          in.srcs = {r, r};
          break;
        }
        case InstrClass::Branch: {
          int r = find_producer(i, false);
          in.srcs = {r, r};
          break;
        }
        case InstrClass::Load:
          in.srcs = {kStreamBaseReg0 + in.mem_stream, -1};
          break;
        case InstrClass::Store:
          in.srcs = {find_producer(i, false),
                     kStreamBaseReg0 + in.mem_stream};
          break;
      }
    }
  }

  // Register value initialization for the prologue.
  {
    std::array<bool, 64> used{};
    for (const auto& in : k.instrs) {
      if (in.dest >= 0) used[in.dest] = true;
      for (int s : in.srcs)
        if (s >= kIntPoolStart && s != kStreamBaseReg0 &&
            s != kStreamBaseReg0 + 1)
          used[s] = true;
    }
    Rng irng(derive_seed(seed, 0x9003));
    for (int r = 0; r < 64; ++r)
      if (used[r]) k.reg_inits.push_back({r, irng.next_u64()});
  }

  return k;
}

TraceCursor::TraceCursor(const Kernel& kernel) : kernel_(&kernel) {
  streams_.resize(kernel.streams.size());
}

DynInstr TraceCursor::next() {
  const Instr& in = kernel_->instrs[pos_];
  DynInstr d;
  d.index = pos_;
  d.op = in.op;
  d.cls = in.cls();
  if (in.mem_stream >= 0) {
    const MemStream& ms = kernel_->streams[in.mem_stream];
    StreamState& st = streams_[in.mem_stream];
    uint64_t offset =
        (st.window_start + static_cast<uint64_t>(st.in_window) * ms.stride) %
        ms.footprint;
    d.addr = ms.base + offset;
    if (++st.in_window == ms.repeat_count) {
      st.in_window = 0;
      if (++st.replay == ms.repeat_period) {
        st.replay = 0;
        st.window_start =
            (st.window_start +
             static_cast<uint64_t>(ms.repeat_count) * ms.stride) %
            ms.footprint;
      }
    }
  }
  if (in.branch_slot >= 0) {
    int slot = in.branch_slot;
    if (kernel_->pattern.randomized[slot]) {
      d.taken = event_hash(kernel_->seed, slot, iteration_) & 1;
    } else {
      const auto& pat = kernel_->pattern.directions[slot];
      d.taken = pat[iteration_ % pat.size()] != 0;
    }
  }
  if (++pos_ == kernel_->instrs.size()) {
    pos_ = 0;
    ++iteration_;
  }
  return d;
}

std::vector<DynInstr> dynamic_trace(const Kernel& kernel, uint64_t n_dyn) {
  if (n_dyn < 1) throw std::invalid_argument("dynamic length must be >= 1");
  TraceCursor cursor(kernel);
  std::vector<DynInstr> out;
  out.reserve(n_dyn);
  for (uint64_t i = 0; i < n_dyn; ++i) out.push_back(cursor.next());
  return out;
}

namespace {

std::string reg_name(int r) {
  if (r < 0) return "??";
  if (is_fp_reg(r)) return "f" + std::to_string(r - kFpRegBase);
  return "x" + std::to_string(r);
}

const char* mnemonic(Opcode op) {
  switch (op) {
    case Opcode::ADD: return "add";
    case Opcode::MUL: return "mul";
    case Opcode::FADDD: return "fadd.d";
    case Opcode::FMULD: return "fmul.d";
    case Opcode::BEQ: return "beq";
    case Opcode::BNE: return "bne";
    case Opcode::LD: return "ld";
    case Opcode::LW: return "lw";
    case Opcode::SD: return "sd";
    case Opcode::SW: return "sw";
  }
  return "??";
}

}  // namespace

std::string emit_asm(const Kernel& kernel) {
  std::ostringstream out;
  out << "# synthetic kernel: " << kernel.body_size()
      << " static instructions, seed " << kernel.seed << "\n";
  out << "    .text\n";
  out << "    .globl kerntune_kernel\n";
  out << "kerntune_kernel:\n";
  for (const auto& ms : kernel.streams)
    out << "    li x" << (kStreamBaseReg0 + ms.id) << ", 0x" << std::hex
        << ms.base << std::dec << "\n";
  // Floating point registers are seeded through an integer scratch; the
  // scratch register receives its own value afterwards if the body uses it.
  for (const auto& ri : kernel.reg_inits) {
    if (!is_fp_reg(ri.reg)) continue;
    out << "    li x" << kIntPoolStart << ", 0x" << std::hex << ri.value
        << std::dec << "\n";
    out << "    fmv.d.x " << reg_name(ri.reg) << ", x" << kIntPoolStart
        << "\n";
  }
  for (const auto& ri : kernel.reg_inits) {
    if (is_fp_reg(ri.reg)) continue;
    out << "    li " << reg_name(ri.reg) << ", 0x" << std::hex << ri.value
        << std::dec << "\n";
  }
  out << ".Lloop:\n";
  for (const auto& in : kernel.instrs) {
    out << "    " << mnemonic(in.op) << " ";
    switch (in.cls()) {
      case InstrClass::IntAlu:
      case InstrClass::IntMul:
      case InstrClass::FpAdd:
      case InstrClass::FpMul:
        out << reg_name(in.dest) << ", " << reg_name(in.srcs[0]) << ", "
            << reg_name(in.srcs[1]);
        break;
      case InstrClass::Load:
        out << reg_name(in.dest) << ", 0(" << reg_name(in.srcs[0]) << ")";
        break;
      case InstrClass::Store:
        out << reg_name(in.srcs[0]) << ", 0(" << reg_name(in.srcs[1]) << ")";
        break;
      case InstrClass::Branch:
        out << reg_name(in.srcs[0]) << ", " << reg_name(in.srcs[1])
            << ", . + 4";
        break;
    }
    out << "\n";
  }
  out << "    j .Lloop\n";
  return out.str();
}

nlohmann::json Kernel::to_json() const {
  nlohmann::json j;
  j["schema"] = 1;
  j["static_size"] = instrs.size();
  j["seed"] = seed;
  j["dep_distance"] = dep_distance;
  j["knob_config"] = knob_config.to_json();
  nlohmann::json streams_j = nlohmann::json::array();
  for (const auto& s : streams)
    streams_j.push_back({{"id", s.id},
                         {"base", s.base},
                         {"footprint", s.footprint},
                         {"stride", s.stride},
                         {"ratio", s.ratio},
                         {"repeat_count", s.repeat_count},
                         {"repeat_period", s.repeat_period}});
  j["streams"] = streams_j;
  j["pattern"] = {{"random_ratio", pattern.random_ratio},
                  {"randomized", pattern.randomized},
                  {"directions", pattern.directions}};
  nlohmann::json inits = nlohmann::json::array();
  for (const auto& ri : reg_inits) inits.push_back({ri.reg, ri.value});
  j["reg_inits"] = inits;
  nlohmann::json body = nlohmann::json::array();
  for (const auto& in : instrs)
    body.push_back({opcode_name(in.op), in.dest, in.srcs[0], in.srcs[1],
                    in.mem_stream, in.branch_slot});
  j["instrs"] = body;
  return j;
}

Kernel Kernel::from_json(const nlohmann::json& j) {
  Kernel k;
  k.seed = j.at("seed").get<uint64_t>();
  k.dep_distance = j.at("dep_distance").get<int>();
  k.knob_config = KnobConfig::from_json(j.at("knob_config"));
  for (const auto& s : j.at("streams")) {
    MemStream ms;
    ms.id = s.at("id").get<int>();
    ms.base = s.at("base").get<uint64_t>();
    ms.footprint = s.at("footprint").get<uint64_t>();
    ms.stride = s.at("stride").get<uint32_t>();
    ms.ratio = s.at("ratio").get<double>();
    ms.repeat_count = s.at("repeat_count").get<uint32_t>();
    ms.repeat_period = s.at("repeat_period").get<uint32_t>();
    ms.validate();
    k.streams.push_back(ms);
  }
  const auto& p = j.at("pattern");
  k.pattern.random_ratio = p.at("random_ratio").get<double>();
  k.pattern.randomized = p.at("randomized").get<std::vector<uint8_t>>();
  k.pattern.directions =
      p.at("directions").get<std::vector<std::vector<uint8_t>>>();
  for (const auto& ri : j.at("reg_inits"))
    k.reg_inits.push_back({ri.at(0).get<int>(), ri.at(1).get<uint64_t>()});
  for (const auto& e : j.at("instrs")) {
    Instr in;
    in.op = opcode_from_name(e.at(0).get<std::string>());
    in.dest = e.at(1).get<int>();
    in.srcs = {e.at(2).get<int>(), e.at(3).get<int>()};
    in.mem_stream = e.at(4).get<int>();
    in.branch_slot = e.at(5).get<int>();
    k.instrs.push_back(in);
  }
  return k;
}

}  // namespace kerntune
