//===-- pass_store_harden.cpp - Store rewriting for the three modes -------===//
//
// Turns every store in non-exempt code into a form the MPU can police.  The
// default mode swaps stores to their unprivileged twins so the unprivileged
// view decides what application code may write.  Invert mode leaves ordinary
// stores alone and flips only the shadow-stack accesses, whose region carries
// privileged-no-access permissions.  SFI mode keeps stores privileged but
// masks every effective address below the shadow region with two BICs.
//
// Store-exclusives have no unprivileged twin, so they keep the BIC guard in
// every mode.  All rewrites are flag-transparent: no inserted instruction
// writes CPSR flags, so dissolved IT blocks rebuild around them unchanged.
//
//===----------------------------------------------------------------------===//

#include "silhouette/passes.hpp"

#include <algorithm>
#include <optional>
#include <utility>

#include "silhouette/liveness.hpp"

namespace silhouette {

namespace {

constexpr uint8_t H = FLAG_HARDENED;
constexpr uint8_t G = FLAG_SFI_GUARD;

Instruction alu_imm(Mnemonic op, Cond c, Register rd, Register rn, uint32_t imm,
                    uint8_t flags) {
  Instruction i;
  i.op = op;
  i.cond = c;
  i.flags = flags;
  i.regs = {rd, rn};
  i.has_imm = true;
  i.imm = imm;
  return i;
}

// add when delta >= 0, sub otherwise; ALU immediates must be non-negative.
Instruction add_sub(Cond c, Register rd, Register rn, int64_t delta,
                    uint8_t flags) {
  return delta >= 0 ? alu_imm(Mnemonic::ADD, c, rd, rn, (uint32_t)delta, flags)
                    : alu_imm(Mnemonic::SUB, c, rd, rn, (uint32_t)-delta, flags);
}

Instruction add_reg(Cond c, Register rd, Register rn, Register rm, uint8_t lsl,
                    uint8_t flags) {
  Instruction i;
  i.op = Mnemonic::ADD;
  i.cond = c;
  i.flags = flags;
  i.regs = {rd, rn, rm};
  i.last_reg_shift = lsl;
  return i;
}

Instruction store_imm(Mnemonic op, Cond c, Register rt, Register base,
                      int32_t imm, uint8_t flags) {
  Instruction i;
  i.op = op;
  i.cond = c;
  i.flags = flags;
  i.regs = {rt};
  MemOperand m;
  m.base = base;
  m.imm = imm;
  i.mem = m;
  return i;
}

Instruction vmov_out_s(Cond c, Register rd, Register s, uint8_t flags) {
  Instruction i;
  i.op = Mnemonic::VMOV;
  i.cond = c;
  i.flags = flags;
  i.regs = {rd, s};
  return i;
}

Instruction vmov_out_d(Cond c, Register lo, Register hi, Register d,
                       uint8_t flags) {
  Instruction i;
  i.op = Mnemonic::VMOV;
  i.cond = c;
  i.flags = flags;
  i.fp_double = true;
  i.regs = {lo, hi, d};
  return i;
}

Instruction pop_list(Cond c, std::vector<Register> regs, uint8_t flags) {
  Instruction i;
  i.op = Mnemonic::POP;
  i.cond = c;
  i.flags = flags;
  i.regs = std::move(regs);
  return i;
}

Mnemonic unpriv_of(Mnemonic op) {
  switch (op) {
  case Mnemonic::STRB:
    return Mnemonic::STRBT;
  case Mnemonic::STRH:
    return Mnemonic::STRHT;
  default:
    return Mnemonic::STRT;
  }
}

void append(std::vector<Instruction> &out, const std::vector<Instruction> &in) {
  out.insert(out.end(), in.begin(), in.end());
}

// Materializes base + disp into rd.  Never touches CPSR flags.
void emit_ea(std::vector<Instruction> &out, Register rd, Register base,
             int64_t disp, Cond c, uint8_t flags) {
  if (disp >= 0 && disp <= 4095) {
    out.push_back(alu_imm(Mnemonic::ADD, c, rd, base, (uint32_t)disp, flags));
  } else if (disp < 0 && -disp <= 4095) {
    out.push_back(alu_imm(Mnemonic::SUB, c, rd, base, (uint32_t)-disp, flags));
  } else {
    for (Instruction &i :
         make_load_constant(rd, (uint32_t)(int64_t)disp, c, flags))
      out.push_back(std::move(i));
    out.push_back(add_reg(c, rd, base, rd, 0, flags));
  }
}

// ---------------------------------------------------------------------------
// Scratch registers

struct ScratchSet {
  std::vector<Register> regs;      // proven-dead first, then spilled
  std::vector<Instruction> enter;  // empty when nothing was spilled
  std::vector<Instruction> leave;
  uint32_t sp_shift = 0;  // sp displacement between enter and leave
};

// Finds `count` registers usable at `pos`.  Dead registers cost nothing;
// otherwise callee-saved registers are saved below the frame and restored
// after the rewritten store.  sp-relative addresses used inside the window
// must be rebased by sp_shift.  Spill saves go through strt in the modes that
// forbid privileged stores; SFI keeps them privileged since the slots are
// pass-chosen sp-relative locations and masking them would itself need a
// scratch register.
ScratchSet acquire_scratch(const Function &f, size_t pos,
                           std::vector<Register> excluded, unsigned count,
                           Cond c, uint8_t flags, bool priv_spill) {
  ScratchSet s;
  for (unsigned k = 0; k < count; ++k) {
    std::optional<Register> r = find_free_register(f, pos, excluded);
    if (!r) break;
    s.regs.push_back(*r);
    excluded.push_back(*r);
  }
  if (s.regs.size() == count) return s;

  std::vector<Register> saves;
  for (uint8_t i = 4; i <= 11 && s.regs.size() + saves.size() < count; ++i) {
    Register r = Register::core(i);
    if (!reglist_contains(excluded, r)) saves.push_back(r);
  }
  if (s.regs.size() + saves.size() < count)
    throw AsmError("function '" + f.name + "': out of scratch registers", 0);
  s.sp_shift = 4u * (uint32_t)saves.size();
  s.enter.push_back(add_sub(c, SP, SP, -(int64_t)s.sp_shift, flags));
  Mnemonic save_op = priv_spill ? Mnemonic::STR : Mnemonic::STRT;
  for (size_t j = 0; j < saves.size(); ++j)
    s.enter.push_back(store_imm(save_op, c, saves[j], SP, (int32_t)(4 * j), flags));
  s.leave.push_back(pop_list(c, saves, flags));
  for (Register r : saves) s.regs.push_back(r);
  return s;
}

// A store below sp would land inside spill slots the rewrite just pushed.
// Writes into that red zone are rare enough that bailing out beats a more
// elaborate slot placement.
void check_spill_alias(const Function &f, const Instruction &st,
                       int64_t disp, unsigned bytes, uint32_t sp_shift) {
  if (sp_shift == 0 || disp >= 0) return;
  if (disp + (int64_t)bytes > -(int64_t)sp_shift)
    throw AsmError("function '" + f.name +
                       "': scratch spill would alias a store below sp "
                       "(manual review required)",
                   st.source_line);
}

// ---------------------------------------------------------------------------
// Default mode: one store at a time to its unprivileged twin

std::vector<Instruction> convert_single(const Function &f, size_t pos,
                                        const Instruction &st) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  Mnemonic t = unpriv_of(st.op);
  uint8_t keep = st.flags | H;
  std::vector<Instruction> out;

  if (m.index == IndexMode::PreWriteback) {
    out.push_back(add_sub(c, m.base, m.base, m.imm, H));
    out.push_back(store_imm(t, c, st.regs[0], m.base, 0, keep));
    return out;
  }
  if (m.index == IndexMode::PostWriteback) {
    out.push_back(store_imm(t, c, st.regs[0], m.base, 0, keep));
    out.push_back(add_sub(c, m.base, m.base, m.imm, H));
    return out;
  }
  if (!m.has_reg_offset && m.imm >= 0 && m.imm <= 255) {
    out.push_back(store_imm(t, c, st.regs[0], m.base, m.imm, keep));
    return out;
  }

  // Out-of-range or register offset: materialize the address first.
  std::vector<Register> excl = {st.regs[0], m.base};
  if (m.has_reg_offset) excl.push_back(m.offset_reg);
  ScratchSet s = acquire_scratch(f, pos, excl, 1, c, H, false);
  Register a = s.regs[0];
  if (m.base.is_sp() && !m.has_reg_offset)
    check_spill_alias(f, st, m.imm, 4, s.sp_shift);
  int64_t bias = m.base.is_sp() ? s.sp_shift : 0;
  append(out, s.enter);
  if (m.has_reg_offset) {
    out.push_back(add_reg(c, a, m.base, m.offset_reg, m.shift, H));
    if (bias) out.push_back(add_sub(c, a, a, bias, H));
  } else {
    emit_ea(out, a, m.base, (int64_t)m.imm + bias, c, H);
  }
  out.push_back(store_imm(t, c, st.regs[0], a, 0, keep));
  append(out, s.leave);
  return out;
}

std::vector<Instruction> convert_strd(const Function &f, size_t pos,
                                      const Instruction &st) {
  const MemOperand &m = *st.mem;  // offset form only
  Cond c = st.cond;
  uint8_t keep = st.flags | H;
  std::vector<Instruction> out;
  if (m.imm >= 0 && m.imm + 4 <= 255) {
    out.push_back(store_imm(Mnemonic::STRT, c, st.regs[0], m.base, m.imm, keep));
    out.push_back(
        store_imm(Mnemonic::STRT, c, st.regs[1], m.base, m.imm + 4, keep));
    return out;
  }
  ScratchSet s =
      acquire_scratch(f, pos, {st.regs[0], st.regs[1], m.base}, 1, c, H, false);
  Register a = s.regs[0];
  if (m.base.is_sp()) check_spill_alias(f, st, m.imm, 8, s.sp_shift);
  append(out, s.enter);
  emit_ea(out, a, m.base, (int64_t)m.imm + (m.base.is_sp() ? s.sp_shift : 0), c,
          H);
  out.push_back(store_imm(Mnemonic::STRT, c, st.regs[0], a, 0, keep));
  out.push_back(store_imm(Mnemonic::STRT, c, st.regs[1], a, 4, keep));
  append(out, s.leave);
  return out;
}

std::vector<Instruction> convert_push(const Instruction &st) {
  Cond c = st.cond;
  std::vector<Instruction> out;
  out.push_back(add_sub(c, SP, SP, -4 * (int64_t)st.regs.size(), H));
  for (size_t k = 0; k < st.regs.size(); ++k)
    out.push_back(store_imm(Mnemonic::STRT, c, st.regs[k], SP, (int32_t)(4 * k),
                            st.flags | H));
  return out;
}

std::vector<Instruction> convert_stm(const Instruction &st) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  std::vector<Instruction> out;
  for (size_t k = 0; k < st.regs.size(); ++k)
    out.push_back(store_imm(Mnemonic::STRT, c, st.regs[k], m.base,
                            (int32_t)(4 * k), st.flags | H));
  // Base update last, so a fault inside the sequence leaves the base intact.
  if (m.index == IndexMode::PostWriteback)
    out.push_back(add_sub(c, m.base, m.base, 4 * (int64_t)st.regs.size(), H));
  return out;
}

std::vector<Instruction> convert_vstm(const Function &f, size_t pos,
                                      const Instruction &st) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  unsigned per = st.fp_double ? 8 : 4;
  std::vector<Instruction> out;
  ScratchSet s = acquire_scratch(f, pos, {m.base}, st.fp_double ? 2u : 1u, c, H,
                                 false);
  append(out, s.enter);
  int32_t bias = m.base.is_sp() ? (int32_t)s.sp_shift : 0;
  for (size_t k = 0; k < st.regs.size(); ++k) {
    int32_t off = bias + (int32_t)(per * k);
    if (st.fp_double) {
      out.push_back(vmov_out_d(c, s.regs[0], s.regs[1], st.regs[k], H));
      out.push_back(store_imm(Mnemonic::STRT, c, s.regs[0], m.base, off,
                              st.flags | H));
      out.push_back(store_imm(Mnemonic::STRT, c, s.regs[1], m.base, off + 4,
                              st.flags | H));
    } else {
      out.push_back(vmov_out_s(c, s.regs[0], st.regs[k], H));
      out.push_back(store_imm(Mnemonic::STRT, c, s.regs[0], m.base, off,
                              st.flags | H));
    }
  }
  append(out, s.leave);
  if (m.index == IndexMode::PostWriteback)
    out.push_back(
        add_sub(c, m.base, m.base, (int64_t)per * st.regs.size(), H));
  return out;
}

std::vector<Instruction> convert_vstr_single(const Function &f, size_t pos,
                                             const Instruction &st) {
  const MemOperand &m = *st.mem;  // offset form, imm in [-1020, 1020]
  Cond c = st.cond;
  // Decide the shape before acquiring so the scratch count is known; leave
  // headroom for the spill bias when the base is sp.
  bool direct = m.imm >= 0 && m.imm <= (m.base.is_sp() ? 240 : 255);
  ScratchSet s =
      acquire_scratch(f, pos, {m.base}, direct ? 1u : 2u, c, H, false);
  if (m.base.is_sp()) check_spill_alias(f, st, m.imm, 4, s.sp_shift);
  int64_t bias = m.base.is_sp() ? s.sp_shift : 0;
  std::vector<Instruction> out;
  append(out, s.enter);
  out.push_back(vmov_out_s(c, s.regs[0], st.regs[0], H));
  if (direct) {
    out.push_back(store_imm(Mnemonic::STRT, c, s.regs[0], m.base,
                            (int32_t)(m.imm + bias), st.flags | H));
  } else {
    emit_ea(out, s.regs[1], m.base, (int64_t)m.imm + bias, c, H);
    out.push_back(
        store_imm(Mnemonic::STRT, c, s.regs[0], s.regs[1], 0, st.flags | H));
  }
  append(out, s.leave);
  return out;
}

// Double-precision vstr always uses the same two-register spill so its cost
// is a constant: both halves of the d register must travel through core
// registers, and proving two free ones is rarely possible anyway.
std::vector<Instruction> convert_vstr_double(const Function &f,
                                             const Instruction &st) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  uint8_t keep = st.flags | H;
  bool base01 = m.base == Register::core(0) || m.base == Register::core(1);
  Register a = Register::core(base01 ? 2 : 0);
  Register b = Register::core(base01 ? 3 : 1);
  std::vector<Instruction> out;

  int64_t disp = (int64_t)m.imm + (m.base.is_sp() ? 8 : 0);
  if (m.base.is_sp() && m.imm < 0 && m.imm + 8 > -12)
    throw AsmError("function '" + f.name +
                       "': scratch spill would alias a store below sp "
                       "(manual review required)",
                   st.source_line);
  if (disp >= 0 && disp + 4 <= 255) {
    out.push_back(add_sub(c, SP, SP, -8, H));
    out.push_back(store_imm(Mnemonic::STRT, c, a, SP, 0, H));
    out.push_back(store_imm(Mnemonic::STRT, c, b, SP, 4, H));
    out.push_back(vmov_out_d(c, a, b, st.regs[0], H));
    out.push_back(store_imm(Mnemonic::STRT, c, a, m.base, (int32_t)disp, keep));
    out.push_back(
        store_imm(Mnemonic::STRT, c, b, m.base, (int32_t)disp + 4, keep));
    out.push_back(pop_list(c, {a, b}, H));
    return out;
  }

  // Out-of-range offset: a third register carries the address.
  Register e = Register::core(4);
  if (e == m.base) e = Register::core(5);
  out.push_back(add_sub(c, SP, SP, -12, H));
  out.push_back(store_imm(Mnemonic::STRT, c, a, SP, 0, H));
  out.push_back(store_imm(Mnemonic::STRT, c, b, SP, 4, H));
  out.push_back(store_imm(Mnemonic::STRT, c, e, SP, 8, H));
  emit_ea(out, e, m.base, (int64_t)m.imm + (m.base.is_sp() ? 12 : 0), c, H);
  out.push_back(vmov_out_d(c, a, b, st.regs[0], H));
  out.push_back(store_imm(Mnemonic::STRT, c, a, e, 0, keep));
  out.push_back(store_imm(Mnemonic::STRT, c, b, e, 4, keep));
  out.push_back(pop_list(c, {a, b, e}, H));
  return out;
}

// ---------------------------------------------------------------------------
// Address masking

void push_bics(std::vector<Instruction> &out, Cond c, Register rd, Register rn,
               const BicMaskPair &mk, uint8_t fl) {
  out.push_back(alu_imm(Mnemonic::BIC, c, rd, rn, mk.mask1, fl));
  out.push_back(alu_imm(Mnemonic::BIC, c, rd, rd, mk.mask2, fl));
}

// Masks base + disp into `a`.  sp is not a valid BIC operand, so sp-based
// addresses travel through the scratch register first.
void mask_base(std::vector<Instruction> &out, Cond c, Register a, Register base,
               int64_t disp, const BicMaskPair &mk, uint8_t fl) {
  if (base.is_sp() || disp != 0) {
    emit_ea(out, a, base, disp, c, fl);
    push_bics(out, c, a, a, mk, fl);
  } else {
    push_bics(out, c, a, base, mk, fl);
  }
}

// ---------------------------------------------------------------------------
// Store-exclusive guard, shared by the default and SFI modes

std::vector<Instruction> guard_strex(const Function &f, size_t pos,
                                     const Instruction &st,
                                     const BicMaskPair &mk, uint8_t fl,
                                     bool priv_spill) {
  const MemOperand &m = *st.mem;  // [rn, #imm] only
  Cond c = st.cond;
  std::vector<Instruction> out;

  if (m.imm == 0) {
    // Mask the base in place when nothing reads it afterwards.
    if (pos + 1 < f.items.size() && Liveness(f).dead_before(pos + 1, m.base)) {
      out.push_back(alu_imm(Mnemonic::BIC, c, m.base, m.base, mk.mask1, fl));
      out.push_back(alu_imm(Mnemonic::BIC, c, m.base, m.base, mk.mask2, fl));
      Instruction ns = st;
      ns.flags |= fl;
      out.push_back(ns);
      return out;
    }
    ScratchSet s = acquire_scratch(f, pos, {st.regs[0], st.regs[1], m.base}, 1,
                                   c, fl, priv_spill);
    Register a = s.regs[0];
    append(out, s.enter);
    mask_base(out, c, a, m.base, m.base.is_sp() ? s.sp_shift : 0, mk, fl);
    Instruction ns = st;
    ns.mem->base = a;
    ns.flags |= fl;
    out.push_back(ns);
    append(out, s.leave);
    return out;
  }

  ScratchSet s = acquire_scratch(f, pos, {st.regs[0], st.regs[1], m.base}, 1, c,
                                 fl, priv_spill);
  Register a = s.regs[0];
  append(out, s.enter);
  mask_base(out, c, a, m.base,
            (int64_t)m.imm + (m.base.is_sp() ? s.sp_shift : 0), mk, fl);
  Instruction ns = st;
  ns.mem->base = a;
  ns.mem->imm = 0;
  ns.flags |= fl;
  out.push_back(ns);
  append(out, s.leave);
  return out;
}

// ---------------------------------------------------------------------------
// Invert mode: only the shadow-stack accesses change form

bool is_shadow_reload(const Instruction &i) {
  return i.op == Mnemonic::LDR && i.has_flag(FLAG_PASS_INSERTED) && i.mem &&
         i.mem->has_reg_offset && i.mem->base.is_sp() &&
         i.mem->index == IndexMode::Offset;
}

std::vector<Instruction> invert_store(const Function &f,
                                      const Instruction &st) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  std::vector<Instruction> out;
  if (st.op == Mnemonic::STR && m.has_reg_offset && m.base.is_sp() &&
      m.shift == 0 && m.index == IndexMode::Offset) {
    // str lr, [sp, scratch]: fold the address into the scratch register,
    // which the shadow-stack pass guarantees is dead afterwards.
    Register a = m.offset_reg;
    out.push_back(add_reg(c, a, SP, a, 0, H));
    out.push_back(store_imm(Mnemonic::STRT, c, st.regs[0], a, 0, st.flags | H));
    return out;
  }
  if (st.op == Mnemonic::STR && !m.has_reg_offset &&
      m.index == IndexMode::Offset && m.imm >= 0 && m.imm <= 255) {
    out.push_back(
        store_imm(Mnemonic::STRT, c, st.regs[0], m.base, m.imm, st.flags | H));
    return out;
  }
  throw AsmError("function '" + f.name + "': unsupported shadow-store shape",
                 st.source_line);
}

std::vector<Instruction> invert_load(const Function &f, const Instruction &ld) {
  const MemOperand &m = *ld.mem;
  Cond c = ld.cond;
  if (m.shift != 0)
    throw AsmError("function '" + f.name + "': unsupported shadow-load shape",
                   ld.source_line);
  Register a = m.offset_reg;
  std::vector<Instruction> out;
  out.push_back(add_reg(c, a, SP, a, 0, H));
  Instruction l;
  l.op = Mnemonic::LDRT;
  l.cond = c;
  l.flags = ld.flags | H;
  l.regs = {ld.regs[0]};
  MemOperand lm;
  lm.base = a;
  lm.imm = 0;
  l.mem = lm;
  out.push_back(l);
  return out;
}

// ---------------------------------------------------------------------------
// SFI mode: stores stay privileged behind a two-BIC address mask

std::vector<Instruction> sfi_single(const Function &f, size_t pos,
                                    const Instruction &st,
                                    const BicMaskPair &mk) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  unsigned bytes = st.op == Mnemonic::STRD ? 8 : 4;
  std::vector<Register> excl = {st.regs[0], m.base};
  if (st.op == Mnemonic::STRD) excl.push_back(st.regs[1]);
  if (m.has_reg_offset) excl.push_back(m.offset_reg);
  ScratchSet s = acquire_scratch(f, pos, excl, 1, c, G, true);
  Register a = s.regs[0];
  if (m.base.is_sp() && !m.has_reg_offset)
    check_spill_alias(f, st, m.imm, bytes, s.sp_shift);
  int64_t bias = m.base.is_sp() ? s.sp_shift : 0;
  std::vector<Instruction> out;

  auto rebase = [&](int32_t imm) {
    Instruction ns = st;
    ns.flags |= G;
    ns.mem->base = a;
    ns.mem->imm = imm;
    ns.mem->has_reg_offset = false;
    ns.mem->index = IndexMode::Offset;
    out.push_back(ns);
  };

  if (m.index == IndexMode::Offset) {
    append(out, s.enter);
    if (m.has_reg_offset) {
      out.push_back(add_reg(c, a, m.base, m.offset_reg, m.shift, G));
      if (bias) out.push_back(add_sub(c, a, a, bias, G));
      push_bics(out, c, a, a, mk, G);
    } else {
      mask_base(out, c, a, m.base, (int64_t)m.imm + bias, mk, G);
    }
    rebase(0);
    append(out, s.leave);
    return out;
  }

  if (m.index == IndexMode::PreWriteback) {
    if (m.base.is_sp()) {
      // The sp update moves only after the spill window unwinds.
      append(out, s.enter);
      mask_base(out, c, a, SP, bias + m.imm, mk, G);
      rebase(0);
      append(out, s.leave);
      out.push_back(add_sub(c, SP, SP, m.imm, G));
      return out;
    }
    out.push_back(add_sub(c, m.base, m.base, m.imm, G));
    append(out, s.enter);
    mask_base(out, c, a, m.base, 0, mk, G);
    rebase(0);
    append(out, s.leave);
    return out;
  }

  // Post-index: store to the untouched base, then update it.
  append(out, s.enter);
  mask_base(out, c, a, m.base, bias, mk, G);
  rebase(0);
  append(out, s.leave);
  out.push_back(add_sub(c, m.base, m.base, m.imm, G));
  return out;
}

std::vector<Instruction> sfi_push(const Function &f, size_t pos,
                                  const Instruction &st,
                                  const BicMaskPair &mk) {
  Cond c = st.cond;
  std::vector<Instruction> out;
  out.push_back(add_sub(c, SP, SP, -4 * (int64_t)st.regs.size(), G));
  ScratchSet s = acquire_scratch(f, pos, st.regs, 1, c, G, true);
  Register a = s.regs[0];
  append(out, s.enter);
  mask_base(out, c, a, SP, s.sp_shift, mk, G);
  for (size_t k = 0; k < st.regs.size(); ++k)
    out.push_back(
        store_imm(Mnemonic::STR, c, st.regs[k], a, (int32_t)(4 * k), G));
  append(out, s.leave);
  return out;
}

std::vector<Instruction> sfi_stm(const Function &f, size_t pos,
                                 const Instruction &st, const BicMaskPair &mk) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  std::vector<Register> excl = st.regs;
  excl.push_back(m.base);
  ScratchSet s = acquire_scratch(f, pos, excl, 1, c, G, true);
  Register a = s.regs[0];
  std::vector<Instruction> out;
  append(out, s.enter);
  mask_base(out, c, a, m.base, m.base.is_sp() ? s.sp_shift : 0, mk, G);
  for (size_t k = 0; k < st.regs.size(); ++k)
    out.push_back(
        store_imm(Mnemonic::STR, c, st.regs[k], a, (int32_t)(4 * k), G));
  append(out, s.leave);
  if (m.index == IndexMode::PostWriteback)
    out.push_back(add_sub(c, m.base, m.base, 4 * (int64_t)st.regs.size(), G));
  return out;
}

std::vector<Instruction> sfi_vstm(const Function &f, size_t pos,
                                  const Instruction &st,
                                  const BicMaskPair &mk) {
  const MemOperand &m = *st.mem;
  Cond c = st.cond;
  unsigned per = st.fp_double ? 8 : 4;
  ScratchSet s = acquire_scratch(f, pos, {m.base}, st.fp_double ? 3u : 2u, c, G,
                                 true);
  Register addr = s.regs.back();
  std::vector<Instruction> out;
  append(out, s.enter);
  mask_base(out, c, addr, m.base, m.base.is_sp() ? s.sp_shift : 0, mk, G);
  for (size_t k = 0; k < st.regs.size(); ++k) {
    int32_t off = (int32_t)(per * k);
    if (st.fp_double) {
      out.push_back(vmov_out_d(c, s.regs[0], s.regs[1], st.regs[k], G));
      out.push_back(store_imm(Mnemonic::STR, c, s.regs[0], addr, off, G));
      out.push_back(store_imm(Mnemonic::STR, c, s.regs[1], addr, off + 4, G));
    } else {
      out.push_back(vmov_out_s(c, s.regs[0], st.regs[k], G));
      out.push_back(store_imm(Mnemonic::STR, c, s.regs[0], addr, off, G));
    }
  }
  append(out, s.leave);
  if (m.index == IndexMode::PostWriteback)
    out.push_back(
        add_sub(c, m.base, m.base, (int64_t)per * st.regs.size(), G));
  return out;
}

std::vector<Instruction> sfi_vstr(const Function &f, size_t pos,
                                  const Instruction &st,
                                  const BicMaskPair &mk) {
  const MemOperand &m = *st.mem;  // offset form only
  Cond c = st.cond;
  unsigned bytes = st.fp_double ? 8 : 4;
  ScratchSet s = acquire_scratch(f, pos, {m.base}, st.fp_double ? 3u : 2u, c, G,
                                 true);
  Register addr = s.regs.back();
  if (m.base.is_sp()) check_spill_alias(f, st, m.imm, bytes, s.sp_shift);
  int64_t disp = (int64_t)m.imm + (m.base.is_sp() ? s.sp_shift : 0);
  std::vector<Instruction> out;
  append(out, s.enter);
  mask_base(out, c, addr, m.base, disp, mk, G);
  if (st.fp_double) {
    out.push_back(vmov_out_d(c, s.regs[0], s.regs[1], st.regs[0], G));
    out.push_back(store_imm(Mnemonic::STR, c, s.regs[0], addr, 0, G));
    out.push_back(store_imm(Mnemonic::STR, c, s.regs[1], addr, 4, G));
  } else {
    out.push_back(vmov_out_s(c, s.regs[0], st.regs[0], G));
    out.push_back(store_imm(Mnemonic::STR, c, s.regs[0], addr, 0, G));
  }
  append(out, s.leave);
  return out;
}

size_t splice_insns(Function &f, size_t pos, std::vector<Instruction> seq) {
  std::vector<FunctionItem> items;
  items.reserve(seq.size());
  for (Instruction &i : seq)
    items.push_back(FunctionItem::make_insn(std::move(i)));
  f.items.erase(f.items.begin() + (long)pos);
  f.items.insert(f.items.begin() + (long)pos,
                 std::make_move_iterator(items.begin()),
                 std::make_move_iterator(items.end()));
  return pos + items.size();
}

}  // namespace

// ---------------------------------------------------------------------------
// Mask selection

// mask2 clears one selector bit: set across the whole shadow band, clear
// across the stack and heap bands.  Clearing it makes the shadow region
// unreachable no matter what the rest of the address holds.  mask1 strips the
// address bits above every application band so a wild pointer cannot escape
// upward either.  Both must be Thumb-2 modified immediates to fit a BIC.
BicMaskPair bic_masks(const MemoryLayout &layout) {
  if (layout.shadow_offset == 0)
    throw AsmError("unmaskable layout: no shadow region", 0);
  MemRange sh = layout.shadow();
  MemRange st = layout.stack;
  MemRange hp = layout.heap;

  // Bit b holds one value across [base, end) when no higher bit changes.
  auto same_block = [](const MemRange &r, unsigned b) {
    return (r.base >> b) == ((r.end() - 1) >> b);
  };
  auto set_throughout = [&](const MemRange &r, unsigned b) {
    return same_block(r, b) && ((r.base >> b) & 1u) != 0;
  };
  auto clear_throughout = [&](const MemRange &r, unsigned b) {
    return same_block(r, b) && ((r.base >> b) & 1u) == 0;
  };

  std::vector<unsigned> selectors;
  for (unsigned b = 0; b < 31; ++b)
    if (set_throughout(sh, b) && clear_throughout(st, b) &&
        (hp.size == 0 || clear_throughout(hp, b)))
      selectors.push_back(b);
  if (selectors.empty())
    throw AsmError("unmaskable layout: no single address bit separates the "
                   "shadow region from the stack and heap",
                   0);
  uint32_t m2 = 1u << selectors[0];

  uint32_t top = std::max(st.end(), sh.end());
  if (hp.size) top = std::max(top, hp.end());
  uint32_t m1;
  if (top <= 0x40000000u) {
    m1 = 0xC0000000u;
  } else if (selectors.size() >= 2) {
    m1 = 1u << selectors[1];
  } else {
    throw AsmError("unmaskable layout: bands reach above 0x40000000 and no "
                   "second selector bit exists",
                   0);
  }
  if (!thumb_modified_imm_ok(m1) || !thumb_modified_imm_ok(m2))
    throw AsmError("unmaskable layout: mask is not a Thumb-2 modified "
                   "immediate",
                   0);
  return {m1, m2};
}

// ---------------------------------------------------------------------------
// Driver

Function harden_function(const Function &f, HardenMode mode,
                         const MemoryLayout &layout) {
  if (f.exempt) return f;

  bool has_work = false;
  for (const FunctionItem &it : f.items) {
    if (!it.is_insn()) continue;
    InsnKind k = classify_instruction(it.insn);
    bool store = k == InsnKind::PrivilegedStore || k == InsnKind::FPStore ||
                 k == InsnKind::StoreMultiple || k == InsnKind::StoreExclusive;
    if (mode == HardenMode::Invert) {
      if ((store && it.insn.has_flag(FLAG_SHADOW_STACK_STORE)) ||
          is_shadow_reload(it.insn))
        has_work = true;
    } else if (store) {
      has_work = true;
    }
  }
  if (!has_work) return f;

  Function out = f;
  map_instruction_runs(out, dissolve_it_blocks);

  // Mask selection can fail; only demand it from layouts that need a guard.
  std::optional<BicMaskPair> masks;
  auto mk = [&]() -> const BicMaskPair & {
    if (!masks) masks = bic_masks(layout);
    return *masks;
  };

  size_t pos = 0;
  while (pos < out.items.size()) {
    if (!out.items[pos].is_insn()) {
      ++pos;
      continue;
    }
    const Instruction ins = out.items[pos].insn;  // splice invalidates refs
    InsnKind kind = classify_instruction(ins);
    bool is_store =
        kind == InsnKind::PrivilegedStore || kind == InsnKind::FPStore ||
        kind == InsnKind::StoreMultiple || kind == InsnKind::StoreExclusive;
    std::vector<Instruction> seq;

    if (mode == HardenMode::Invert) {
      if (is_store && ins.has_flag(FLAG_SHADOW_STACK_STORE))
        seq = invert_store(out, ins);
      else if (is_shadow_reload(ins))
        seq = invert_load(out, ins);
      else {
        ++pos;
        continue;
      }
    } else {
      if (!is_store || ins.has_flag(FLAG_SHADOW_STACK_STORE) ||
          ins.has_flag(FLAG_CFI_INSERTED) || ins.has_flag(FLAG_HARDENED) ||
          ins.has_flag(FLAG_SFI_GUARD)) {
        ++pos;
        continue;
      }
      if (kind == InsnKind::StoreExclusive) {
        seq = guard_strex(out, pos, ins, mk(),
                          mode == HardenMode::SFI ? G : H,
                          mode == HardenMode::SFI);
      } else if (mode == HardenMode::Silhouette) {
        switch (ins.op) {
        case Mnemonic::STR:
        case Mnemonic::STRB:
        case Mnemonic::STRH:
          seq = convert_single(out, pos, ins);
          break;
        case Mnemonic::STRD:
          seq = convert_strd(out, pos, ins);
          break;
        case Mnemonic::PUSH:
          seq = convert_push(ins);
          break;
        case Mnemonic::STM:
          seq = convert_stm(ins);
          break;
        case Mnemonic::VSTM:
          seq = convert_vstm(out, pos, ins);
          break;
        case Mnemonic::VSTR:
          seq = ins.fp_double ? convert_vstr_double(out, ins)
                              : convert_vstr_single(out, pos, ins);
          break;
        default:
          ++pos;
          continue;
        }
      } else {
        switch (ins.op) {
        case Mnemonic::STR:
        case Mnemonic::STRB:
        case Mnemonic::STRH:
        case Mnemonic::STRD:
          seq = sfi_single(out, pos, ins, mk());
          break;
        case Mnemonic::PUSH:
          seq = sfi_push(out, pos, ins, mk());
          break;
        case Mnemonic::STM:
          seq = sfi_stm(out, pos, ins, mk());
          break;
        case Mnemonic::VSTM:
          seq = sfi_vstm(out, pos, ins, mk());
          break;
        case Mnemonic::VSTR:
          seq = sfi_vstr(out, pos, ins, mk());
          break;
        default:
          ++pos;
          continue;
        }
      }
    }
    pos = splice_insns(out, pos, std::move(seq));
  }

  map_instruction_runs(out, rebuild_it_blocks);
  return out;
}

Program store_harden_pass(const Program &p, HardenMode mode,
                          const MemoryLayout &layout) {
  Program out = p;
  for (Function &f : out.functions) f = harden_function(f, mode, layout);
  return out;
}

}  // namespace silhouette
