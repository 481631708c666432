//===-- sim.hpp - Instruction-level simulator with MPU enforcement ---------===//
//
// Loads a Program into the layout's code band, then interprets it under an
// MpuConfig.  Every memory access goes through check_access with the view the
// instruction implies (unprivileged for strt/strbt/strht/ldrt, privileged
// otherwise).  A hidden oracle call stack adjudicates returns and indirect
// transfers so control-flow hijacks are detected even when they would
// "work"; simulated code cannot observe the oracle.  setjmp/longjmp are
// modeled runtime entries backed by a protected register map.
//
//===----------------------------------------------------------------------===//

#pragma once

#include "silhouette/asm.hpp"
#include "silhouette/layout.hpp"
#include "silhouette/mpu.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace silhouette {

// Return target that ends the run: the reset value of lr.
inline constexpr uint32_t kHaltSentinel = 0xFFFFFFFE;

// --- Loaded image ----------------------------------------------------------

struct CodeSite {
  uint32_t addr = 0;
  unsigned size = 2;
  size_t func = 0;  // index into program().functions
  size_t item = 0;  // index into that function's items
};

// Address assignment and byte materialization.  Only `mov r0, r0` gets its
// real encoding (0x4600); every other instruction is filled with permanently
// undefined halfwords, so a stray halfword load never fakes a CFI label.
// Data directives get their real bytes; byte/halfword label entries use
// jump-table semantics relative to the owning tbb/tbh.
class LoadedProgram {
public:
  LoadedProgram(Program p, MemoryLayout l);

  const Program &program() const { return program_; }
  const MemoryLayout &layout() const { return layout_; }

  const CodeSite *site_at(uint32_t addr) const;
  const Instruction &insn(const CodeSite &s) const {
    return program_.functions[s.func].items[s.item].insn;
  }
  const Function &function_of(const CodeSite &s) const {
    return program_.functions[s.func];
  }

  std::optional<uint32_t> symbol(const std::string &name) const;
  // Local labels of functions[func] shadow global symbols, mirroring the
  // parser's scoping.
  std::optional<uint32_t> resolve(size_t func, const std::string &name) const;
  // Function whose entry is at addr, or null.
  const Function *entry_at(uint32_t addr) const;

  bool in_code(uint32_t addr) const { return used_code_.contains(addr); }
  uint8_t code_byte(uint32_t addr) const;

  uint32_t setjmp_addr() const { return setjmp_addr_; }
  uint32_t longjmp_addr() const { return longjmp_addr_; }
  uint32_t code_end() const { return used_code_.end(); }

  // Initial bytes of the mutable data image (globals, placed in the heap
  // band); the machine installs them before running.
  const std::map<uint32_t, uint8_t> &global_bytes() const { return globals_; }

private:
  Program program_;
  MemoryLayout layout_;
  MemRange used_code_;
  std::map<uint32_t, CodeSite> sites_;
  std::map<std::string, uint32_t> symbols_;
  std::vector<std::map<std::string, uint32_t>> locals_;  // per function
  std::map<uint32_t, size_t> entries_;
  std::vector<uint8_t> bytes_;  // code band image, offset from code.base
  std::map<uint32_t, uint8_t> globals_;
  uint32_t setjmp_addr_ = 0;
  uint32_t longjmp_addr_ = 0;
};

// --- jmp_buf map -----------------------------------------------------------

struct JmpBufEntry {
  uint32_t key = 0;  // address of the user's jmp_buf object
  uint32_t sp = 0;
  uint32_t lr = 0;
  std::array<uint32_t, 8> r{};   // r4-r11
  std::array<uint32_t, 16> s{};  // s16-s31
};

// Fixed-capacity register map keyed by jmp_buf address.  Lives conceptually
// in the protected shadow region: simulated stores cannot reach it.
class JmpBufMap {
public:
  explicit JmpBufMap(uint32_t capacity) : capacity_(capacity) {}

  // False when the map is full and the key is not present.
  bool upsert(const JmpBufEntry &e);
  const JmpBufEntry *find(uint32_t key) const;
  // Unwinding invalidates contexts that live below the landing point.
  void invalidate_below(uint32_t sp);
  // Return-path expiry invalidates contexts at or below the deallocated frame.
  void invalidate_at_or_below(uint32_t sp);

  uint32_t size() const { return (uint32_t)entries_.size(); }
  uint32_t capacity() const { return capacity_; }

private:
  std::vector<JmpBufEntry> entries_;
  uint32_t capacity_;
};

// --- Attacks ---------------------------------------------------------------

struct AttackWrite {
  uint32_t addr = 0;
  unsigned size = 4;
  uint32_t value = 0;
};

// A write-what-where burst.  Fires once, either on the nth entry into a
// function or when the executed-instruction count reaches a threshold.  The
// writes go through the MPU exactly like application stores do in the active
// mode (the attacker drives a hardened store, so the view is mode-relative).
struct AttackSpec {
  std::string name;
  std::string trigger_function;
  uint64_t trigger_occurrence = 1;
  uint64_t trigger_exec = 0;  // used when trigger_function is empty
  std::vector<AttackWrite> writes;
};

// --- Running ---------------------------------------------------------------

struct TrapInfo {
  std::string kind;  // mpu-fault | stack-overflow-fault | cfi-violation |
                     // undefined | runtime-abort
  uint32_t pc = 0;
  uint32_t addr = 0;    // faulting data address, when applicable
  std::string detail;   // abort message for runtime-abort
};

enum class RunStatus { Halted, Trapped, FuelExhausted };

struct RunOptions {
  std::string entry = "main";
  uint32_t r0 = 0;
  uint32_t r1 = 0;
  std::vector<std::pair<uint32_t, uint32_t>> preload;  // addr, word
  uint64_t fuel = 2'000'000;
  std::vector<AttackSpec> attacks;
  View attack_view = View::Unprivileged;
  std::ostream *trace = nullptr;
};

struct RunResult {
  RunStatus status = RunStatus::FuelExhausted;
  uint32_t exit_value = 0;
  std::optional<TrapInfo> trap;
  uint64_t exec = 0;
  uint64_t privstore_app = 0;
  bool hijack = false;
  std::string hijack_detail;

  // "ok", "hijack", or "trap:<kind>".
  std::string security_verdict() const;
  std::string count_line() const;
};

struct MachineState {
  std::array<uint32_t, 13> r{};  // r0-r12
  uint32_t sp = 0;
  uint32_t lr = 0;
  uint32_t pc = 0;
  bool n = false, z = false, c = false, v = false;
  std::array<uint32_t, 32> s{};  // FP registers; d-registers alias pairs
  bool primask = false;
  std::map<std::string, uint32_t> sysregs;
};

class Machine {
public:
  Machine(const LoadedProgram &prog, MpuConfig mpu);

  RunResult run(const RunOptions &opt);

  // Modeled runtime entries.  Direct driving is part of the test surface;
  // both return false after setting abort_message() when the simulated
  // program must abort.
  bool sim_setjmp(uint32_t buf_addr);
  bool sim_longjmp(uint32_t buf_addr, uint32_t val);
  // Return-path expiry for a frame deallocated down to sp_now.
  void expire_on_return(uint32_t sp_now);
  const std::string &abort_message() const { return abort_; }
  JmpBufMap &jmpbuf() { return jmpbuf_; }

  // Raw image access: inspection and workload preparation, no MPU checks.
  uint8_t read_byte_raw(uint32_t addr) const;
  uint32_t read_word_raw(uint32_t addr) const;
  void write_byte_raw(uint32_t addr, uint8_t value);
  void write_word_raw(uint32_t addr, uint32_t value);

  // Writes into the device band observed during the run.
  const std::vector<AttackWrite> &device_writes() const { return device_writes_; }

  MachineState st;

private:
  struct OracleFrame {
    uint32_t return_target = 0;
    uint32_t sp_at_call = 0;
    bool called_setjmp = false;
    size_t func = 0;
  };

  // Execution helpers (sim_exec.cpp).
  void exec_one(const Instruction &in, const CodeSite &site);
  bool cond_passes(Cond c) const;
  uint32_t rval(Register r) const;
  void wset(Register r, uint32_t v);
  void set_nz(uint32_t result);
  uint32_t operand2(const Instruction &in, size_t reg_pos) const;
  uint32_t effective_addr(const Instruction &in) const;
  void writeback(const Instruction &in);
  bool mem_read(uint32_t addr, unsigned size, View view, uint32_t &out);
  bool mem_write(uint32_t addr, unsigned size, View view, uint32_t value);
  void do_call(uint32_t target_raw, uint32_t ret_addr, bool indirect);
  void do_tail(uint32_t target_raw);
  void do_return(uint32_t target_raw);
  void trap(const std::string &kind, uint32_t addr = 0);
  void flag_hijack(const std::string &detail);
  void halt();
  void check_attacks();
  void run_attack(const AttackSpec &a);

  const LoadedProgram &prog_;
  MpuConfig mpu_;
  JmpBufMap jmpbuf_;
  std::string abort_;

  // Sparse memory image, 4 KB pages.
  mutable std::unordered_map<uint32_t, std::array<uint8_t, 4096>> pages_;
  std::vector<AttackWrite> device_writes_;

  std::vector<OracleFrame> oracle_;
  std::optional<uint32_t> monitor_;  // exclusive monitor address

  // Per-run state.
  RunResult result_;
  const RunOptions *opt_ = nullptr;
  bool stopped_ = false;
  std::map<uint32_t, uint64_t> entry_counts_;
  std::vector<bool> attack_fired_;
  uint32_t cur_pc_ = 0;
};

}  // namespace silhouette
