//===-- asm_classify.cpp - instruction taxonomy and encoding widths -------===//

#include "silhouette/asm.hpp"

namespace silhouette {

InsnKind classify_instruction(const Instruction &i) {
  switch (i.op) {
  case Mnemonic::STR:
  case Mnemonic::STRB:
  case Mnemonic::STRH:
  case Mnemonic::STRD:
    return InsnKind::PrivilegedStore;
  case Mnemonic::STRT:
  case Mnemonic::STRBT:
  case Mnemonic::STRHT:
    return InsnKind::UnprivilegedStore;
  case Mnemonic::STREX:
    return InsnKind::StoreExclusive;
  case Mnemonic::VSTR:
    return InsnKind::FPStore;
  case Mnemonic::PUSH:
  case Mnemonic::STM:
  case Mnemonic::VSTM:
    return InsnKind::StoreMultiple;
  case Mnemonic::LDR:
  case Mnemonic::LDRB:
  case Mnemonic::LDRH:
  case Mnemonic::LDRD:
  case Mnemonic::LDREX:
  case Mnemonic::LDRT:
  case Mnemonic::VLDR:
    return InsnKind::Load;
  case Mnemonic::POP:
  case Mnemonic::LDM:
    return reglist_contains(i.regs, PC) ? InsnKind::Return : InsnKind::Load;
  case Mnemonic::B:
  case Mnemonic::BL:
  case Mnemonic::CBZ:
  case Mnemonic::CBNZ:
    return InsnKind::DirectBranch;
  case Mnemonic::BX:
    return (!i.regs.empty() && i.regs[0].is_lr()) ? InsnKind::Return
                                                  : InsnKind::IndirectBranch;
  case Mnemonic::BLX:
    return InsnKind::IndirectCall;
  case Mnemonic::TBB:
  case Mnemonic::TBH:
    return InsnKind::IndirectBranch;
  case Mnemonic::MSR:
  case Mnemonic::MRS:
  case Mnemonic::CPS:
    return InsnKind::PrivilegedSystem;
  case Mnemonic::IT:
    return InsnKind::ITHeader;
  default:
    return InsnKind::Other;
  }
}

SysOp classify_system(const Instruction &i) {
  switch (i.op) {
  case Mnemonic::MSR: return SysOp::MSR;
  case Mnemonic::MRS: return SysOp::MRS;
  case Mnemonic::CPS: return SysOp::CPS;
  default: return SysOp::None;
  }
}

namespace {

bool low(Register r) { return r.is_core() && r.index <= 7; }

// 16-bit ALU encodings set flags outside IT blocks and do not inside; the
// narrow form is legal only when the written form agrees.
bool narrow_flags_ok(const Instruction &i) {
  return i.sets_flags == (i.cond == Cond::AL);
}

unsigned size_ldst_single(const Instruction &i) {
  const MemOperand &m = *i.mem;
  Register rt = i.regs[0];
  if (m.index != IndexMode::Offset) return 4;
  if (m.has_reg_offset) {
    if (low(rt) && low(m.base) && low(m.offset_reg) && m.shift == 0) return 2;
    return 4;
  }
  if (m.imm < 0) return 4;
  switch (i.op) {
  case Mnemonic::STR:
  case Mnemonic::LDR:
    if (m.base.is_sp() && low(rt) && m.imm % 4 == 0 && m.imm <= 1020) return 2;
    if (low(rt) && low(m.base) && m.imm % 4 == 0 && m.imm <= 124) return 2;
    return 4;
  case Mnemonic::STRB:
  case Mnemonic::LDRB:
    if (low(rt) && low(m.base) && m.imm <= 31) return 2;
    return 4;
  case Mnemonic::STRH:
  case Mnemonic::LDRH:
    if (low(rt) && low(m.base) && m.imm % 2 == 0 && m.imm <= 62) return 2;
    return 4;
  default:
    return 4;
  }
}

bool narrow_reglist(const std::vector<Register> &regs, Register extra_ok) {
  for (Register r : regs)
    if (!low(r) && r != extra_ok) return false;
  return true;
}

}  // namespace

unsigned instruction_size(const Instruction &i) {
  switch (i.op) {
  case Mnemonic::IT:
  case Mnemonic::NOP:
  case Mnemonic::SVC:
  case Mnemonic::CPS:
  case Mnemonic::CBZ:
  case Mnemonic::CBNZ:
  case Mnemonic::BX:
  case Mnemonic::BLX:
    return 2;
  case Mnemonic::BL:
  case Mnemonic::B:
    // Branch widths depend on the final displacement; modeling them wide keeps
    // sizes layout-independent.
    return 4;
  case Mnemonic::MOV:
    if (!i.has_imm) {
      if (!i.sets_flags) return 2;  // MOV reg covers high registers
      return (low(i.regs[0]) && low(i.regs[1]) && i.cond == Cond::AL) ? 2 : 4;
    }
    return (low(i.regs[0]) && i.imm <= 0xff && narrow_flags_ok(i)) ? 2 : 4;
  case Mnemonic::MOVW:
  case Mnemonic::MOVT:
    return 4;
  case Mnemonic::ADD:
  case Mnemonic::SUB: {
    Register rd = i.regs[0], rn = i.regs[1];
    if (i.has_imm) {
      if (rd.is_sp() && rn.is_sp() && !i.sets_flags && i.imm % 4 == 0 && i.imm <= 508)
        return 2;
      if (i.op == Mnemonic::ADD && rn.is_sp() && low(rd) && !i.sets_flags &&
          i.imm % 4 == 0 && i.imm <= 1020)
        return 2;
      if (low(rd) && low(rn) && narrow_flags_ok(i) && i.imm <= 7) return 2;
      if (low(rd) && rd == rn && narrow_flags_ok(i) && i.imm <= 255) return 2;
      return 4;
    }
    if (i.last_reg_shift) return 4;
    Register rm = i.regs[2];
    if (low(rd) && low(rn) && low(rm) && narrow_flags_ok(i)) return 2;
    if (i.op == Mnemonic::ADD && !i.sets_flags) {
      if (rd == rn && !rm.is_sp()) return 2;        // ADD Rdn, Rm
      if (rn.is_sp() && rd == rm) return 2;         // ADD Rdm, SP, Rdm
      if (rd.is_sp() && rn.is_sp()) return 2;       // ADD SP, Rm
    }
    return 4;
  }
  case Mnemonic::BIC:
  case Mnemonic::AND:
  case Mnemonic::ORR: {
    if (i.has_imm) return 4;
    Register rd = i.regs[0], rn = i.regs[1], rm = i.regs[2];
    if (i.last_reg_shift) return 4;
    if (low(rd) && rd == rn && low(rm) && narrow_flags_ok(i)) return 2;
    return 4;
  }
  case Mnemonic::LSL:
  case Mnemonic::LSR: {
    Register rd = i.regs[0], rn = i.regs[1];
    if (i.has_imm) return (low(rd) && low(rn) && narrow_flags_ok(i)) ? 2 : 4;
    return (low(rd) && rd == rn && low(i.regs[2]) && narrow_flags_ok(i)) ? 2 : 4;
  }
  case Mnemonic::CMP:
    if (i.has_imm) return (low(i.regs[0]) && i.imm <= 0xff) ? 2 : 4;
    return 2;
  case Mnemonic::STR:
  case Mnemonic::STRB:
  case Mnemonic::STRH:
  case Mnemonic::LDR:
  case Mnemonic::LDRB:
  case Mnemonic::LDRH:
    if (i.label) return 4;  // literal form, kept wide for range
    return size_ldst_single(i);
  case Mnemonic::PUSH:
    return narrow_reglist(i.regs, LR) ? 2 : 4;
  case Mnemonic::POP:
    return narrow_reglist(i.regs, PC) ? 2 : 4;
  case Mnemonic::STRD:
  case Mnemonic::LDRD:
  case Mnemonic::STM:
  case Mnemonic::LDM:
  case Mnemonic::STRT:
  case Mnemonic::STRBT:
  case Mnemonic::STRHT:
  case Mnemonic::LDRT:
  case Mnemonic::STREX:
  case Mnemonic::LDREX:
  case Mnemonic::TBB:
  case Mnemonic::TBH:
  case Mnemonic::MSR:
  case Mnemonic::MRS:
  case Mnemonic::VMOV:
  case Mnemonic::VSTR:
  case Mnemonic::VLDR:
  case Mnemonic::VSTM:
    return 4;
  }
  return 4;
}

bool Instruction::operator==(const Instruction &o) const {
  if (op != o.op || cond != o.cond || sets_flags != o.sets_flags ||
      fp_double != o.fp_double || regs != o.regs ||
      last_reg_shift != o.last_reg_shift || has_imm != o.has_imm ||
      mem != o.mem || label != o.label || it != o.it || sys != o.sys ||
      flags != o.flags)
    return false;
  if (has_imm && imm != o.imm) return false;
  return true;
}

}  // namespace silhouette
