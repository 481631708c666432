//===-- asm.hpp - Thumb-2 subset model: instructions, functions, programs --===//
//
// Core data model for the hardening toolchain.  A Program is a parsed,
// fully-typed view of a GNU-syntax assembly file restricted to the subset
// documented in docs/asm-subset.md.  Parsing and emission are pure; a Program
// value may be shared read-only across threads.
//
//===----------------------------------------------------------------------===//

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace silhouette {

// ---------------------------------------------------------------------------
// Registers

enum class RegKind : uint8_t { Core, Fp };

struct Register {
  RegKind kind = RegKind::Core;
  uint8_t index = 0;  // Core: 0-15 (13=sp, 14=lr, 15=pc).  Fp: s0-s31.

  static constexpr Register core(uint8_t i) { return Register{RegKind::Core, i}; }
  static constexpr Register fp(uint8_t i) { return Register{RegKind::Fp, i}; }

  bool is_core() const { return kind == RegKind::Core; }
  bool is_fp() const { return kind == RegKind::Fp; }
  bool is_sp() const { return is_core() && index == 13; }
  bool is_lr() const { return is_core() && index == 14; }
  bool is_pc() const { return is_core() && index == 15; }

  bool operator==(const Register &o) const { return kind == o.kind && index == o.index; }
  bool operator!=(const Register &o) const { return !(*this == o); }
  bool operator<(const Register &o) const {
    return kind != o.kind ? kind < o.kind : index < o.index;
  }
};

inline constexpr Register SP = Register::core(13);
inline constexpr Register LR = Register::core(14);
inline constexpr Register PC = Register::core(15);
inline constexpr Register IP = Register::core(12);  // intra-procedure scratch

std::string reg_name(Register r, bool fp_double = false);

// ---------------------------------------------------------------------------
// Conditions

enum class Cond : uint8_t {
  EQ = 0, NE, CS, CC, MI, PL, VS, VC, HI, LS, GE, LT, GT, LE, AL
};

Cond invert_cond(Cond c);
const char *cond_name(Cond c);
std::optional<Cond> cond_from_name(const std::string &s);

// ---------------------------------------------------------------------------
// Mnemonics

enum class Mnemonic : uint8_t {
  MOV, MOVW, MOVT, ADD, SUB, BIC, AND, ORR, LSL, LSR, CMP, CBZ, CBNZ,
  STR, STRB, STRH, STRD, STM, PUSH,
  LDR, LDRB, LDRH, LDRD, LDM, POP,
  STRT, STRBT, STRHT, LDRT,
  STREX, LDREX,
  B, BL, BLX, BX, TBB, TBH,
  IT, NOP, SVC, MSR, MRS, CPS,
  VMOV, VSTR, VLDR, VSTM,
};

const char *mnemonic_name(Mnemonic m);

// ---------------------------------------------------------------------------
// Addressing

enum class IndexMode : uint8_t { Offset, PreWriteback, PostWriteback };

struct MemOperand {
  Register base;
  bool has_reg_offset = false;
  int32_t imm = 0;         // byte offset when !has_reg_offset (or writeback delta)
  Register offset_reg;     // when has_reg_offset
  uint8_t shift = 0;       // LSL amount applied to offset_reg (0-3)
  IndexMode index = IndexMode::Offset;

  bool operator==(const MemOperand &o) const {
    if (base != o.base || has_reg_offset != o.has_reg_offset || index != o.index)
      return false;
    return has_reg_offset ? (offset_reg == o.offset_reg && shift == o.shift)
                          : imm == o.imm;
  }
};

// ---------------------------------------------------------------------------
// IT blocks

struct ITBlockSpec {
  Cond first_cond = Cond::AL;
  // Pattern over the covered instructions; entry 0 is always Then.
  std::vector<bool> then_mask;  // true = Then, false = Else; length 1-4

  bool operator==(const ITBlockSpec &o) const {
    return first_cond == o.first_cond && then_mask == o.then_mask;
  }
};

// ---------------------------------------------------------------------------
// Instructions

// Pass-origin flags.  SHADOW_STACK_STORE marks the prologue store that
// duplicates lr into the shadow stack; the store hardening pass must leave it
// privileged (or, under inverted permissions, it is the only store converted).
enum InsnFlag : uint8_t {
  FLAG_SHADOW_STACK_STORE = 1 << 0,
  FLAG_CFI_INSERTED = 1 << 1,
  FLAG_PASS_INSERTED = 1 << 2,
  FLAG_HARDENED = 1 << 3,   // produced by the store hardening pass
  FLAG_SFI_GUARD = 1 << 4,  // BIC guard produced in SFI mode
};

struct Instruction {
  Mnemonic op = Mnemonic::NOP;
  Cond cond = Cond::AL;
  bool sets_flags = false;     // 's' suffix
  bool fp_double = false;      // d-register form of vmov/vstr/vldr/vstm
  std::vector<Register> regs;  // ordered register operands / register list
  uint8_t last_reg_shift = 0;  // LSL amount on the final register operand
  bool has_imm = false;
  int64_t imm = 0;
  std::optional<MemOperand> mem;
  std::optional<std::string> label;  // branch target or literal reference
  std::optional<ITBlockSpec> it;
  std::string sys;  // special register (msr/mrs) or cps suffix+operand
  uint8_t flags = 0;
  int source_line = 0;

  bool has_flag(InsnFlag f) const { return (flags & f) != 0; }

  // Structural equality; source_line is provenance, not content.
  bool operator==(const Instruction &o) const;
  bool operator!=(const Instruction &o) const { return !(*this == o); }
};

// ---------------------------------------------------------------------------
// Function bodies

enum class DataKind : uint8_t { Word, Byte, Hword, Align };

struct DataDirective {
  DataKind kind = DataKind::Word;
  // Word/Hword/Byte entries: either numeric values or label references.
  std::vector<std::string> labels;  // empty string entry means numeric
  std::vector<int64_t> values;      // parallel to labels
  int align_pow = 0;                // for Align: align to 2^align_pow bytes
  int source_line = 0;

  bool operator==(const DataDirective &o) const {
    return kind == o.kind && labels == o.labels && values == o.values &&
           align_pow == o.align_pow;
  }
};

struct FunctionItem {
  enum class Kind : uint8_t { Insn, Label, Data } kind = Kind::Insn;
  Instruction insn;
  std::string label;
  DataDirective data;

  static FunctionItem make_insn(Instruction i) {
    FunctionItem it;
    it.kind = Kind::Insn;
    it.insn = std::move(i);
    return it;
  }
  static FunctionItem make_label(std::string l) {
    FunctionItem it;
    it.kind = Kind::Label;
    it.label = std::move(l);
    return it;
  }
  static FunctionItem make_data(DataDirective d) {
    FunctionItem it;
    it.kind = Kind::Data;
    it.data = std::move(d);
    return it;
  }

  bool is_insn() const { return kind == Kind::Insn; }
  bool is_label() const { return kind == Kind::Label; }
  bool is_data() const { return kind == Kind::Data; }

  bool operator==(const FunctionItem &o) const {
    if (kind != o.kind) return false;
    switch (kind) {
    case Kind::Insn: return insn == o.insn;
    case Kind::Label: return label == o.label;
    case Kind::Data: return data == o.data;
    }
    return false;
  }
};

struct Function {
  std::string name;
  bool is_global = false;
  bool exempt = false;             // HAL code, never transformed
  bool address_taken = false;      // from .silhouette_addrtaken
  bool interrupt_handler = false;  // reserved; no directive sets it yet
  std::vector<FunctionItem> items;
  int source_line = 0;

  bool operator==(const Function &o) const {
    return name == o.name && is_global == o.is_global && exempt == o.exempt &&
           address_taken == o.address_taken &&
           interrupt_handler == o.interrupt_handler && items == o.items;
  }
};

struct GlobalData {
  std::string label;
  bool is_global = false;
  std::vector<DataDirective> directives;
  int source_line = 0;

  bool operator==(const GlobalData &o) const {
    return label == o.label && is_global == o.is_global &&
           directives == o.directives;
  }
};

struct Program {
  std::vector<Function> functions;
  std::vector<GlobalData> data;

  const Function *find_function(const std::string &name) const;
  Function *find_function(const std::string &name);

  bool operator==(const Program &o) const {
    return functions == o.functions && data == o.data;
  }
};

// ---------------------------------------------------------------------------
// Errors

class AsmError : public std::runtime_error {
public:
  AsmError(std::string msg, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg
                                    : msg),
        line_(line) {}
  int line() const { return line_; }

private:
  int line_;
};

// ---------------------------------------------------------------------------
// Classification

enum class InsnKind : uint8_t {
  PrivilegedStore,
  UnprivilegedStore,
  StoreExclusive,
  FPStore,
  StoreMultiple,
  Load,
  DirectBranch,
  IndirectBranch,
  IndirectCall,
  Return,
  PrivilegedSystem,
  ITHeader,
  Other,
};

enum class SysOp : uint8_t { None, MSR, MRS, CPS };

// Total over every decodable instruction; same input always yields the same
// kind.
InsnKind classify_instruction(const Instruction &i);
SysOp classify_system(const Instruction &i);

// Narrowest legal Thumb-2 encoding width in bytes (2 or 4).  Store-multiple
// forms (stm/ldm/vstm) are modeled as always 4.
unsigned instruction_size(const Instruction &i);

// ---------------------------------------------------------------------------
// Parse / emit

// Parses the documented assembly subset.  Throws AsmError naming the first
// offending line.  emit_program(parse_program(t)) reparses to a structurally
// equal Program, and a second emission is byte-identical to the first.
Program parse_program(const std::string &text);
std::string emit_program(const Program &p);

std::string emit_instruction(const Instruction &i);

// Thumb-2 modified-immediate test (the imm12 constant class used by wide ALU
// immediates).
bool thumb_modified_imm_ok(uint32_t v);

// Helpers shared by the passes.
bool reglist_contains(const std::vector<Register> &regs, Register r);

// IT-block maintenance.  dissolve removes IT headers, leaving each covered
// instruction carrying its own condition; rebuild inserts headers so every
// conditional instruction is covered by a block of at most 4, splitting long
// runs and terminating a block at any branch.  rebuild throws AsmError when a
// run mixes more than one base condition.
std::vector<Instruction> dissolve_it_blocks(const std::vector<Instruction> &seq);
std::vector<Instruction> rebuild_it_blocks(const std::vector<Instruction> &seq);

// Applies fn to every maximal run of consecutive instruction items, leaving
// labels and data where they are.  The passes use this to dissolve IT blocks,
// rewrite, and rebuild without tracking block boundaries themselves.
void map_instruction_runs(
    Function &f,
    const std::function<std::vector<Instruction>(std::vector<Instruction>)> &fn);

// Materializes a 32-bit constant into rd: one mov when the value has a
// modified-immediate or movw encoding, else movw+movt.
std::vector<Instruction> make_load_constant(Register rd, uint32_t value,
                                            Cond cond, uint8_t flags);

}  // namespace silhouette
