//===-- sim_exec.cpp - the interpreter loop -------------------------------===//
//
// Faithfulness notes.  The fetch path checks execute permission on every
// instruction, so a transfer into an XN region traps at the landing point.
// Every dispatched instruction counts toward exec, including IT headers and
// instructions whose condition fails.  The oracle call stack is invisible to
// simulated code: returns and indirect transfers that leave the recorded
// control-flow graph flag a hijack instead of wandering on.
//
//===----------------------------------------------------------------------===//

#include "silhouette/sim.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace silhouette {

// --- Machine basics --------------------------------------------------------

Machine::Machine(const LoadedProgram &prog, MpuConfig mpu)
    : prog_(prog), mpu_(std::move(mpu)),
      jmpbuf_(prog.layout().jmpbuf_capacity) {
  for (auto [addr, byte] : prog.global_bytes()) write_byte_raw(addr, byte);
}

uint8_t Machine::read_byte_raw(uint32_t addr) const {
  if (prog_.in_code(addr)) return prog_.code_byte(addr);
  auto it = pages_.find(addr >> 12);
  if (it == pages_.end()) return 0;
  return it->second[addr & 0xfff];
}

uint32_t Machine::read_word_raw(uint32_t addr) const {
  uint32_t v = 0;
  for (unsigned i = 0; i < 4; ++i) v |= (uint32_t)read_byte_raw(addr + i) << (8 * i);
  return v;
}

void Machine::write_byte_raw(uint32_t addr, uint8_t value) {
  pages_[addr >> 12][addr & 0xfff] = value;
}

void Machine::write_word_raw(uint32_t addr, uint32_t value) {
  for (unsigned i = 0; i < 4; ++i) write_byte_raw(addr + i, (uint8_t)(value >> (8 * i)));
}

bool Machine::mem_read(uint32_t addr, unsigned size, View view, uint32_t &out) {
  if (!check_access(mpu_, addr, size, AccessKind::Read, view)) {
    trap("mpu-fault", addr);
    return false;
  }
  out = 0;
  for (unsigned i = 0; i < size; ++i) out |= (uint32_t)read_byte_raw(addr + i) << (8 * i);
  return true;
}

bool Machine::mem_write(uint32_t addr, unsigned size, View view, uint32_t value) {
  if (!check_access(mpu_, addr, size, AccessKind::Write, view)) {
    // A denied store into the guard band directly below the stack is the
    // runaway-recursion signature and gets its own trap kind.
    const MemoryLayout &l = prog_.layout();
    MemRange guard{l.stack.base - l.stack.size, l.stack.size};
    trap(guard.contains(addr) ? "stack-overflow-fault" : "mpu-fault", addr);
    return false;
  }
  for (unsigned i = 0; i < size; ++i) write_byte_raw(addr + i, (uint8_t)(value >> (8 * i)));
  if (prog_.layout().system.contains(addr))
    device_writes_.push_back({addr, size, value});
  return true;
}

void Machine::trap(const std::string &kind, uint32_t addr) {
  result_.status = RunStatus::Trapped;
  result_.trap = TrapInfo{kind, cur_pc_, addr, abort_};
  stopped_ = true;
}

void Machine::flag_hijack(const std::string &detail) {
  result_.status = RunStatus::Halted;
  result_.hijack = true;
  result_.hijack_detail = detail;
  stopped_ = true;
}

void Machine::halt() {
  result_.status = RunStatus::Halted;
  result_.exit_value = st.r[0];
  stopped_ = true;
}

// --- Register file ---------------------------------------------------------

uint32_t Machine::rval(Register r) const {
  if (r.is_fp()) return st.s[r.index];
  if (r.index < 13) return st.r[r.index];
  if (r.index == 13) return st.sp;
  if (r.index == 14) return st.lr;
  return cur_pc_ + 4;  // pc reads as the aligned fetch address + 4
}

void Machine::wset(Register r, uint32_t v) {
  if (r.is_fp()) {
    st.s[r.index] = v;
  } else if (r.index < 13) {
    st.r[r.index] = v;
  } else if (r.index == 13) {
    st.sp = v;
  } else if (r.index == 14) {
    st.lr = v;
  } else {
    trap("undefined");  // direct pc writes are outside the subset
  }
}

void Machine::set_nz(uint32_t result) {
  st.n = (result >> 31) != 0;
  st.z = result == 0;
}

bool Machine::cond_passes(Cond c) const {
  switch (c) {
  case Cond::EQ: return st.z;
  case Cond::NE: return !st.z;
  case Cond::CS: return st.c;
  case Cond::CC: return !st.c;
  case Cond::MI: return st.n;
  case Cond::PL: return !st.n;
  case Cond::VS: return st.v;
  case Cond::VC: return !st.v;
  case Cond::HI: return st.c && !st.z;
  case Cond::LS: return !st.c || st.z;
  case Cond::GE: return st.n == st.v;
  case Cond::LT: return st.n != st.v;
  case Cond::GT: return !st.z && st.n == st.v;
  case Cond::LE: return st.z || st.n != st.v;
  case Cond::AL: return true;
  }
  return true;
}

uint32_t Machine::operand2(const Instruction &in, size_t reg_pos) const {
  if (in.has_imm) return (uint32_t)in.imm;
  return rval(in.regs[reg_pos]) << in.last_reg_shift;
}

uint32_t Machine::effective_addr(const Instruction &in) const {
  const MemOperand &m = *in.mem;
  uint32_t base = rval(m.base);
  int64_t off = m.has_reg_offset ? (int64_t)(rval(m.offset_reg) << m.shift)
                                 : (int64_t)m.imm;
  if (m.index == IndexMode::PostWriteback) return base;
  return (uint32_t)(base + off);
}

void Machine::writeback(const Instruction &in) {
  const MemOperand &m = *in.mem;
  if (m.index == IndexMode::Offset) return;
  uint32_t base = rval(m.base);
  int64_t off = m.has_reg_offset ? (int64_t)(rval(m.offset_reg) << m.shift)
                                 : (int64_t)m.imm;
  wset(m.base, (uint32_t)(base + off));
}

// --- Control transfers -----------------------------------------------------

void Machine::do_call(uint32_t target_raw, uint32_t ret_addr, bool indirect) {
  if (!(target_raw & 1)) {
    trap("undefined");  // interworking to a non-Thumb target
    return;
  }
  uint32_t target = target_raw & ~1u;
  if (prog_.setjmp_addr() && target == prog_.setjmp_addr()) {
    st.lr = ret_addr | 1u;
    if (!oracle_.empty()) oracle_.back().called_setjmp = true;
    if (!sim_setjmp(st.r[0])) {
      trap("runtime-abort");
      return;
    }
    st.pc = ret_addr;
    return;
  }
  if (prog_.longjmp_addr() && target == prog_.longjmp_addr()) {
    if (!sim_longjmp(st.r[0], st.r[1])) {
      trap("runtime-abort");
      return;
    }
    return;  // sim_longjmp set pc and registers
  }
  const Function *fn = prog_.entry_at(target);
  if (indirect && !fn) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "indirect call into %08X (not a function entry)",
                  target);
    flag_hijack(buf);
    return;
  }
  oracle_.push_back({ret_addr & ~1u, st.sp, false});
  st.lr = ret_addr | 1u;
  st.pc = target;
}

void Machine::do_tail(uint32_t target_raw) {
  if (!(target_raw & 1)) {
    trap("undefined");
    return;
  }
  uint32_t target = target_raw & ~1u;
  if (!prog_.entry_at(target)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "indirect branch into %08X (not a function entry)",
                  target);
    flag_hijack(buf);
    return;
  }
  st.pc = target;
}

void Machine::do_return(uint32_t target_raw) {
  if (!(target_raw & 1)) {
    trap("undefined");
    return;
  }
  uint32_t target = target_raw & ~1u;
  if (oracle_.empty()) {
    flag_hijack("return with no live activation");
    return;
  }
  OracleFrame top = oracle_.back();
  if (target != top.return_target) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "return to %08X, live activation expects %08X",
                  target, top.return_target);
    flag_hijack(buf);
    return;
  }
  oracle_.pop_back();
  if (top.called_setjmp) jmpbuf_.invalidate_at_or_below(st.sp);
  if (target == kHaltSentinel) {
    halt();
    return;
  }
  st.pc = target;
}

// --- Attacks ---------------------------------------------------------------

void Machine::run_attack(const AttackSpec &a) {
  for (const AttackWrite &w : a.writes)
    if (!mem_write(w.addr, w.size, opt_->attack_view, w.value)) return;
}

void Machine::check_attacks() {
  uint64_t count = 0;
  const Function *entered = prog_.entry_at(st.pc);
  if (entered) count = ++entry_counts_[st.pc];
  for (size_t i = 0; i < opt_->attacks.size() && !stopped_; ++i) {
    if (attack_fired_[i]) continue;
    const AttackSpec &a = opt_->attacks[i];
    bool fire;
    if (!a.trigger_function.empty()) {
      std::optional<uint32_t> sym = prog_.symbol(a.trigger_function);
      fire = entered && sym && *sym == st.pc && count == a.trigger_occurrence;
    } else {
      fire = result_.exec >= a.trigger_exec;
    }
    if (fire) {
      attack_fired_[i] = true;
      run_attack(a);
    }
  }
}

// --- Instruction dispatch --------------------------------------------------

namespace {

// Transfer lists are parsed in ascending order; lowest register goes to the
// lowest address.
unsigned list_words(const Instruction &in) {
  return (unsigned)in.regs.size() * (in.fp_double ? 2u : 1u);
}

}  // namespace

void Machine::exec_one(const Instruction &in, const CodeSite &site) {
  if (in.op != Mnemonic::IT && !cond_passes(in.cond)) return;

  switch (in.op) {
  case Mnemonic::IT:
  case Mnemonic::NOP:
    break;

  // ALU
  case Mnemonic::MOV: {
    uint32_t v = in.has_imm ? (uint32_t)in.imm : rval(in.regs[1]);
    wset(in.regs[0], v);
    if (in.sets_flags) set_nz(v);
    break;
  }
  case Mnemonic::MOVW:
    wset(in.regs[0], (uint32_t)in.imm);
    break;
  case Mnemonic::MOVT:
    wset(in.regs[0], (rval(in.regs[0]) & 0xFFFFu) | ((uint32_t)in.imm << 16));
    break;
  case Mnemonic::ADD:
  case Mnemonic::SUB: {
    uint32_t a = rval(in.regs[1]);
    uint32_t b = operand2(in, 2);
    uint32_t r = in.op == Mnemonic::ADD ? a + b : a - b;
    wset(in.regs[0], r);
    if (in.sets_flags) {
      set_nz(r);
      if (in.op == Mnemonic::ADD) {
        st.c = (uint64_t)a + b > 0xFFFFFFFFu;
        st.v = ((~(a ^ b) & (a ^ r)) >> 31) != 0;
      } else {
        st.c = a >= b;
        st.v = (((a ^ b) & (a ^ r)) >> 31) != 0;
      }
    }
    break;
  }
  case Mnemonic::BIC:
  case Mnemonic::AND:
  case Mnemonic::ORR: {
    uint32_t a = rval(in.regs[1]);
    uint32_t b = operand2(in, 2);
    uint32_t r = in.op == Mnemonic::BIC ? (a & ~b)
               : in.op == Mnemonic::AND ? (a & b)
                                        : (a | b);
    wset(in.regs[0], r);
    if (in.sets_flags) set_nz(r);
    break;
  }
  case Mnemonic::LSL:
  case Mnemonic::LSR: {
    uint32_t a = rval(in.regs[1]);
    uint32_t amt = in.has_imm ? (uint32_t)in.imm : (rval(in.regs[2]) & 0xFFu);
    uint32_t r;
    bool carry = st.c;
    if (in.op == Mnemonic::LSL) {
      r = amt >= 32 ? 0 : (amt ? a << amt : a);
      if (amt >= 1 && amt <= 32) carry = (a >> (32 - amt)) & 1;
      else if (amt > 32) carry = false;
    } else {
      r = amt >= 32 ? 0 : (amt ? a >> amt : a);
      if (amt >= 1 && amt <= 32) carry = (a >> (amt - 1)) & 1;
      else if (amt > 32) carry = false;
    }
    wset(in.regs[0], r);
    if (in.sets_flags) {
      set_nz(r);
      st.c = carry;
    }
    break;
  }
  case Mnemonic::CMP: {
    uint32_t a = rval(in.regs[0]);
    uint32_t b = in.has_imm ? (uint32_t)in.imm : rval(in.regs[1]);
    uint32_t r = a - b;
    set_nz(r);
    st.c = a >= b;
    st.v = (((a ^ b) & (a ^ r)) >> 31) != 0;
    break;
  }

  // Direct control flow
  case Mnemonic::B: {
    std::optional<uint32_t> t = prog_.resolve(site.func, *in.label);
    if (!t) { trap("undefined"); break; }
    st.pc = *t;
    break;
  }
  case Mnemonic::CBZ:
  case Mnemonic::CBNZ: {
    bool zero = rval(in.regs[0]) == 0;
    if (zero == (in.op == Mnemonic::CBZ)) {
      std::optional<uint32_t> t = prog_.resolve(site.func, *in.label);
      if (!t) { trap("undefined"); break; }
      st.pc = *t;
    }
    break;
  }
  case Mnemonic::BL: {
    std::optional<uint32_t> t = prog_.resolve(site.func, *in.label);
    if (!t) { trap("undefined"); break; }
    do_call(*t | 1u, cur_pc_ + site.size, false);
    break;
  }
  case Mnemonic::BLX:
    do_call(rval(in.regs[0]), cur_pc_ + site.size, true);
    break;
  case Mnemonic::BX:
    if (in.regs[0].is_lr()) do_return(rval(in.regs[0]));
    else do_tail(rval(in.regs[0]));
    break;
  case Mnemonic::TBB:
  case Mnemonic::TBH: {
    const MemOperand &m = *in.mem;
    uint32_t table = rval(m.base);
    unsigned esize = in.op == Mnemonic::TBB ? 1 : 2;
    uint32_t ea = table + (rval(m.offset_reg) << m.shift);
    uint32_t entry;
    if (!mem_read(ea, esize, View::Privileged, entry)) break;
    st.pc = (cur_pc_ + 4) + 2 * entry;
    break;
  }

  // Single loads
  case Mnemonic::LDR:
  case Mnemonic::LDRB:
  case Mnemonic::LDRH:
  case Mnemonic::LDRT: {
    unsigned size = in.op == Mnemonic::LDRB ? 1 : in.op == Mnemonic::LDRH ? 2 : 4;
    View view = in.op == Mnemonic::LDRT ? View::Unprivileged : View::Privileged;
    uint32_t addr;
    if (in.label) {  // literal pool load
      std::optional<uint32_t> t = prog_.resolve(site.func, *in.label);
      if (!t) { trap("undefined"); break; }
      addr = *t;
    } else {
      addr = effective_addr(in);
    }
    uint32_t v;
    if (!mem_read(addr, size, view, v)) break;
    if (!in.label) writeback(in);
    wset(in.regs[0], v);
    break;
  }
  case Mnemonic::LDRD: {
    uint32_t ea = effective_addr(in);
    uint32_t lo, hi;
    if (!mem_read(ea, 4, View::Privileged, lo)) break;
    if (!mem_read(ea + 4, 4, View::Privileged, hi)) break;
    writeback(in);
    wset(in.regs[0], lo);
    wset(in.regs[1], hi);
    break;
  }
  case Mnemonic::LDREX: {
    uint32_t ea = effective_addr(in);
    uint32_t v;
    if (!mem_read(ea, 4, View::Privileged, v)) break;
    monitor_ = ea;
    wset(in.regs[0], v);
    break;
  }
  case Mnemonic::LDM:
  case Mnemonic::POP: {
    bool is_pop = in.op == Mnemonic::POP;
    uint32_t base = is_pop ? st.sp : rval(in.mem->base);
    uint32_t at = base;
    uint32_t pc_val = 0;
    bool saw_pc = false;
    bool fail = false;
    for (Register r : in.regs) {
      uint32_t v;
      if (!mem_read(at, 4, View::Privileged, v)) { fail = true; break; }
      at += 4;
      if (r.is_pc()) {
        pc_val = v;
        saw_pc = true;
      } else {
        wset(r, v);
      }
    }
    if (fail) break;
    uint32_t final_base = base + 4 * (uint32_t)in.regs.size();
    if (is_pop) st.sp = final_base;
    else if (in.mem->index == IndexMode::PostWriteback) wset(in.mem->base, final_base);
    if (saw_pc) do_return(pc_val);
    break;
  }

  // Single stores
  case Mnemonic::STR:
  case Mnemonic::STRB:
  case Mnemonic::STRH:
  case Mnemonic::STRT:
  case Mnemonic::STRBT:
  case Mnemonic::STRHT: {
    unsigned size = (in.op == Mnemonic::STRB || in.op == Mnemonic::STRBT) ? 1
                  : (in.op == Mnemonic::STRH || in.op == Mnemonic::STRHT) ? 2
                                                                          : 4;
    View view = (in.op == Mnemonic::STRT || in.op == Mnemonic::STRBT ||
                 in.op == Mnemonic::STRHT)
                    ? View::Unprivileged
                    : View::Privileged;
    uint32_t ea = effective_addr(in);
    if (!mem_write(ea, size, view, rval(in.regs[0]))) break;
    writeback(in);
    break;
  }
  case Mnemonic::STRD: {
    uint32_t ea = effective_addr(in);
    if (!mem_write(ea, 4, View::Privileged, rval(in.regs[0]))) break;
    if (!mem_write(ea + 4, 4, View::Privileged, rval(in.regs[1]))) break;
    writeback(in);
    break;
  }
  case Mnemonic::STREX: {
    uint32_t ea = effective_addr(in);
    bool claimed = monitor_ && *monitor_ == ea;
    monitor_.reset();
    if (!claimed) {
      wset(in.regs[0], 1);
      break;
    }
    if (!mem_write(ea, 4, View::Privileged, rval(in.regs[1]))) break;
    wset(in.regs[0], 0);
    break;
  }
  case Mnemonic::PUSH: {
    uint32_t n = (uint32_t)in.regs.size();
    uint32_t at = st.sp - 4 * n;
    uint32_t newsp = at;
    bool fail = false;
    for (Register r : in.regs) {
      if (!mem_write(at, 4, View::Privileged, rval(r))) { fail = true; break; }
      at += 4;
    }
    if (fail) break;
    st.sp = newsp;
    break;
  }
  case Mnemonic::STM: {
    uint32_t at = rval(in.mem->base);
    bool fail = false;
    for (Register r : in.regs) {
      if (!mem_write(at, 4, View::Privileged, rval(r))) { fail = true; break; }
      at += 4;
    }
    if (fail) break;
    if (in.mem->index == IndexMode::PostWriteback) wset(in.mem->base, at);
    break;
  }

  // FP transfers
  case Mnemonic::VMOV: {
    if (in.regs.size() == 2) {
      Register dst = in.regs[0], src = in.regs[1];
      wset(dst, rval(src));
    } else {  // d-register pair form
      if (in.regs[0].is_fp()) {
        st.s[in.regs[0].index] = rval(in.regs[1]);
        st.s[in.regs[0].index + 1] = rval(in.regs[2]);
      } else {
        wset(in.regs[0], st.s[in.regs[2].index]);
        wset(in.regs[1], st.s[in.regs[2].index + 1]);
      }
    }
    break;
  }
  case Mnemonic::VSTR: {
    uint32_t ea = effective_addr(in);
    uint8_t base = in.regs[0].index;
    if (!mem_write(ea, 4, View::Privileged, st.s[base])) break;
    if (in.fp_double) {
      if (!mem_write(ea + 4, 4, View::Privileged, st.s[base + 1])) break;
    }
    break;
  }
  case Mnemonic::VLDR: {
    uint32_t ea = effective_addr(in);
    uint8_t base = in.regs[0].index;
    uint32_t lo, hi;
    if (!mem_read(ea, 4, View::Privileged, lo)) break;
    st.s[base] = lo;
    if (in.fp_double) {
      if (!mem_read(ea + 4, 4, View::Privileged, hi)) break;
      st.s[base + 1] = hi;
    }
    break;
  }
  case Mnemonic::VSTM: {
    uint32_t at = rval(in.mem->base);
    bool fail = false;
    for (Register r : in.regs) {
      if (!mem_write(at, 4, View::Privileged, st.s[r.index])) { fail = true; break; }
      at += 4;
      if (in.fp_double) {
        if (!mem_write(at, 4, View::Privileged, st.s[r.index + 1])) { fail = true; break; }
        at += 4;
      }
    }
    if (fail) break;
    if (in.mem->index == IndexMode::PostWriteback)
      wset(in.mem->base, rval(in.mem->base) + 4 * list_words(in));
    break;
  }

  // System
  case Mnemonic::SVC:
    if (in.imm == 255) trap("cfi-violation");
    else trap("undefined");
    break;
  case Mnemonic::MSR: {
    uint32_t v = rval(in.regs[0]);
    if (in.sys == "msp") st.sp = v;
    else if (in.sys == "primask") st.primask = (v & 1) != 0;
    else st.sysregs[in.sys] = v;
    break;
  }
  case Mnemonic::MRS: {
    uint32_t v = 0;
    if (in.sys == "msp") v = st.sp;
    else if (in.sys == "primask") v = st.primask ? 1 : 0;
    else {
      auto it = st.sysregs.find(in.sys);
      if (it != st.sysregs.end()) v = it->second;
    }
    wset(in.regs[0], v);
    break;
  }
  case Mnemonic::CPS:
    // "ie f"/"id f" touch FAULTMASK, which the model does not carry.
    if (in.sys.size() >= 4 && in.sys.substr(3) == "i")
      st.primask = in.sys[0] == 'i' && in.sys[1] == 'd';
    break;
  }
}

// --- Run loop --------------------------------------------------------------

RunResult Machine::run(const RunOptions &opt) {
  opt_ = &opt;
  result_ = RunResult{};
  stopped_ = false;
  attack_fired_.assign(opt.attacks.size(), false);
  entry_counts_.clear();
  oracle_.clear();
  monitor_.reset();
  abort_.clear();
  device_writes_.clear();

  for (auto [addr, word] : opt.preload) write_word_raw(addr, word);

  std::optional<uint32_t> entry = prog_.symbol(opt.entry);
  if (!entry || !prog_.entry_at(*entry))
    throw AsmError("unknown entry function '" + opt.entry + "'", 0);

  st = MachineState{};
  st.sp = prog_.layout().initial_sp();
  st.lr = kHaltSentinel | 1u;
  st.pc = *entry;
  st.r[0] = opt.r0;
  st.r[1] = opt.r1;
  oracle_.push_back({kHaltSentinel, st.sp, false});

  while (!stopped_) {
    if (result_.exec >= opt.fuel) {
      result_.status = RunStatus::FuelExhausted;
      break;
    }
    cur_pc_ = st.pc;
    if (!opt.attacks.empty()) {
      check_attacks();
      if (stopped_) break;
    }
    const CodeSite *site = prog_.site_at(st.pc);
    if (!site) {
      trap("undefined");
      break;
    }
    if (!check_access(mpu_, st.pc, site->size, AccessKind::Execute,
                      View::Privileged)) {
      trap("mpu-fault", st.pc);
      break;
    }
    const Instruction &in = prog_.insn(*site);
    if (opt.trace) {
      char buf[16];
      std::snprintf(buf, sizeof buf, "%08X", cur_pc_);
      *opt.trace << buf << ' ' << emit_instruction(in) << '\n';
    }
    result_.exec++;
    if (!prog_.function_of(*site).exempt &&
        !(in.flags & (FLAG_SHADOW_STACK_STORE | FLAG_CFI_INSERTED)) &&
        cond_passes(in.cond)) {
      InsnKind k = classify_instruction(in);
      if (k == InsnKind::PrivilegedStore || k == InsnKind::FPStore ||
          k == InsnKind::StoreMultiple)
        result_.privstore_app++;
    }
    st.pc = cur_pc_ + site->size;
    exec_one(in, *site);
  }
  return result_;
}

// --- Result formatting -----------------------------------------------------

std::string RunResult::security_verdict() const {
  if (hijack) return "hijack";
  if (trap) return "trap:" + trap->kind;
  return "ok";
}

std::string RunResult::count_line() const {
  return "COUNT exec=" + std::to_string(exec) +
         " privstore_app=" + std::to_string(privstore_app);
}

}  // namespace silhouette
