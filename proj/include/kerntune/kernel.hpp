#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerntune/knobs.hpp"

namespace kerntune {

enum class InstrClass : uint8_t {
  IntAlu,
  IntMul,
  FpAdd,
  FpMul,
  Load,
  Store,
  Branch
};

enum class Opcode : uint8_t { ADD, MUL, FADDD, FMULD, BEQ, BNE, LD, LW, SD, SW };

InstrClass opcode_class(Opcode op);
const char* opcode_name(Opcode op);
Opcode opcode_from_name(const std::string& name);
const char* class_name(InstrClass c);

// Register ids: 0..31 integer (x0..x31), 32..63 floating point (f0..f31).
constexpr int kIntRegs = 32;
constexpr int kFpRegs = 32;
constexpr int kFpRegBase = 32;
inline bool is_fp_reg(int r) { return r >= kFpRegBase; }

struct Instr {
  Opcode op = Opcode::ADD;
  int dest = -1;                   // -1: none
  std::array<int, 2> srcs{-1, -1};
  int mem_stream = -1;             // loads/stores only
  int branch_slot = -1;            // branches only

  InstrClass cls() const { return opcode_class(op); }
  bool operator==(const Instr&) const = default;
};

// A strided access stream with a windowed temporal-locality law: addresses
// advance by `stride` (wrapping inside [base, base+footprint)); each window
// of `repeat_count` consecutive addresses is issued `repeat_period` times
// before the stream advances to the next window. repeat_period == 1 is a
// plain strided stream.
struct MemStream {
  int id = 0;
  uint64_t base = 0;
  uint64_t footprint = 0;   // bytes
  uint32_t stride = 0;      // bytes
  double ratio = 1.0;       // fraction of memory ops bound to this stream
  uint32_t repeat_count = 1;
  uint32_t repeat_period = 1;

  void validate() const;
  bool operator==(const MemStream&) const = default;
};

struct BranchPattern {
  // Per-slot periodic direction sequence (1 = taken), indexed by iteration.
  std::vector<std::vector<uint8_t>> directions;
  // Slots whose direction is re-drawn every dynamic iteration.
  std::vector<uint8_t> randomized;
  double random_ratio = 0.0;

  bool operator==(const BranchPattern&) const = default;
};

struct RegInit {
  int reg = 0;
  uint64_t value = 0;
  bool operator==(const RegInit&) const = default;
};

struct Kernel {
  std::vector<Instr> instrs;
  std::vector<MemStream> streams;
  BranchPattern pattern;
  int dep_distance = 1;
  uint64_t seed = 0;
  KnobConfig knob_config;
  std::vector<RegInit> reg_inits;  // prologue values for allocated registers

  size_t body_size() const { return instrs.size(); }

  nlohmann::json to_json() const;
  static Kernel from_json(const nlohmann::json& j);
  bool operator==(const Kernel&) const = default;
};

// Synthesis pass pipeline: body skeleton, reserved base registers, opcode
// assignment by profile, register value initialization, branch-direction
// randomization, memory stream binding, register allocation at the
// configured dependency distance, final consistency checks.
Kernel generate(const KnobConfig& config, const KnobSpace& space,
                int static_size = 500, uint64_t seed = 0);

struct DynInstr {
  uint32_t index = 0;  // position in the loop body
  Opcode op = Opcode::ADD;
  InstrClass cls = InstrClass::IntAlu;
  uint64_t addr = 0;   // memory ops
  bool taken = false;  // branches
};

// Streaming expansion of the loop body into dynamic instructions. Constant
// memory; one instance per consumer.
class TraceCursor {
 public:
  explicit TraceCursor(const Kernel& kernel);
  DynInstr next();

 private:
  struct StreamState {
    uint64_t window_start = 0;
    uint32_t in_window = 0;
    uint32_t replay = 0;
  };
  const Kernel* kernel_;
  std::vector<StreamState> streams_;
  uint64_t iteration_ = 0;
  uint32_t pos_ = 0;
};

std::vector<DynInstr> dynamic_trace(const Kernel& kernel, uint64_t n_dyn);

// RISC-V-flavored text: init prologue, labeled loop body (one instruction
// per line), back-edge jump.
std::string emit_asm(const Kernel& kernel);

}  // namespace kerntune
