//===-- pass_shadow_stack.cpp - return-address duplication ----------------===//
//
// Prologue: right after the instruction that stacks lr, the return address is
// stored a second time at the same frame position plus the plan offset, which
// lands it in the shadow band.  Epilogue: the return target is loaded from
// that shadow slot instead of the regular stack, so corrupting the stacked
// return address changes nothing the branch ever reads.
//
//===----------------------------------------------------------------------===//

#include "silhouette/passes.hpp"

namespace silhouette {

namespace {

bool insn_stores_lr(const Instruction &i) {
  switch (classify_instruction(i)) {
  case InsnKind::PrivilegedStore:
  case InsnKind::UnprivilegedStore: {
    size_t stored = (i.op == Mnemonic::STRD) ? 2 : 1;
    for (size_t k = 0; k < stored && k < i.regs.size(); ++k)
      if (i.regs[k].is_lr()) return true;
    return false;
  }
  case InsnKind::StoreExclusive:
    return i.regs.size() > 1 && i.regs[1].is_lr();
  case InsnKind::StoreMultiple:
    // push/stm lists are the stored registers (the stm base lives in mem);
    // vstm lists hold FP registers, never lr.
    for (Register r : i.regs)
      if (r.is_lr()) return true;
    return false;
  default:
    return false;
  }
}

bool function_stores_lr(const Function &f) {
  for (const FunctionItem &it : f.items)
    if (it.is_insn() && insn_stores_lr(it.insn)) return true;
  return false;
}

// Byte displacement of lr's stack slot above sp once `i` has executed, for
// the prologue shapes we accept.
std::optional<uint32_t> lr_slot_disp(const Instruction &i) {
  if (i.op == Mnemonic::PUSH && reglist_contains(i.regs, LR)) {
    // push stores ascending by register number; lr sits above every other
    // pushed register (pc is never a push source).
    uint32_t below = 0;
    for (Register r : i.regs)
      if (r.index < 14) ++below;
    return 4 * below;
  }
  if (i.op == Mnemonic::STR && !i.regs.empty() && i.regs[0].is_lr() && i.mem &&
      i.mem->base.is_sp() && !i.mem->has_reg_offset) {
    if (i.mem->index == IndexMode::Offset && i.mem->imm >= 0)
      return (uint32_t)i.mem->imm;
    if (i.mem->index == IndexMode::PreWriteback) return 0;
  }
  return std::nullopt;
}

Instruction shadow_store(Register scratch, Cond cond) {
  Instruction s;
  s.op = Mnemonic::STR;
  s.cond = cond;
  s.regs = {LR};
  MemOperand m;
  m.base = SP;
  m.has_reg_offset = true;
  m.offset_reg = scratch;
  s.mem = m;
  s.flags = FLAG_SHADOW_STACK_STORE;
  return s;
}

Instruction shadow_load(Register scratch, Cond cond) {
  Instruction l;
  l.op = Mnemonic::LDR;
  l.cond = cond;
  l.regs = {LR};
  MemOperand m;
  m.base = SP;
  m.has_reg_offset = true;
  m.offset_reg = scratch;
  l.mem = m;
  l.flags = FLAG_PASS_INSERTED;
  return l;
}

Instruction sp_add4(Cond cond) {
  Instruction a;
  a.op = Mnemonic::ADD;
  a.cond = cond;
  a.regs = {SP, SP};
  a.has_imm = true;
  a.imm = 4;
  a.flags = FLAG_PASS_INSERTED;
  return a;
}

void insert_prologue_store(Function &f, const ShadowStackPlan &plan) {
  for (size_t idx = 0; idx < f.items.size(); ++idx) {
    if (!f.items[idx].is_insn() || !insn_stores_lr(f.items[idx].insn)) continue;
    const Instruction &anchor = f.items[idx].insn;
    std::optional<uint32_t> disp = lr_slot_disp(anchor);
    if (!disp)
      throw AsmError("function '" + f.name +
                         "': cannot locate the return-address stack slot "
                         "(manual review required)",
                     anchor.source_line);
    std::vector<FunctionItem> seq;
    for (Instruction &mi : make_load_constant(plan.scratch, plan.offset + *disp,
                                              anchor.cond, FLAG_PASS_INSERTED))
      seq.push_back(FunctionItem::make_insn(std::move(mi)));
    seq.push_back(FunctionItem::make_insn(shadow_store(plan.scratch, anchor.cond)));
    f.items.insert(f.items.begin() + (long)idx + 1,
                   std::make_move_iterator(seq.begin()),
                   std::make_move_iterator(seq.end()));
    return;
  }
}

// Replaces the item at `idx` (and optionally the one before it) with `seq`.
size_t splice(Function &f, size_t idx, size_t erase_count,
              std::vector<Instruction> seq) {
  std::vector<FunctionItem> items;
  items.reserve(seq.size());
  for (Instruction &i : seq) items.push_back(FunctionItem::make_insn(std::move(i)));
  f.items.erase(f.items.begin() + (long)idx,
                f.items.begin() + (long)(idx + erase_count));
  f.items.insert(f.items.begin() + (long)idx,
                 std::make_move_iterator(items.begin()),
                 std::make_move_iterator(items.end()));
  return idx + items.size();
}

void rewrite_epilogues(Function &f, const ShadowStackPlan &plan) {
  for (size_t idx = 0; idx < f.items.size();) {
    if (!f.items[idx].is_insn() ||
        classify_instruction(f.items[idx].insn) != InsnKind::Return) {
      ++idx;
      continue;
    }
    const Instruction ret = f.items[idx].insn;

    if (ret.op == Mnemonic::POP) {
      // pop {Rlist, pc}: pop the rest, then sp sits at the stacked return
      // address; load its shadow copy instead and discard the regular slot.
      std::vector<Instruction> seq;
      Instruction rest = ret;
      rest.regs.clear();
      for (Register r : ret.regs)
        if (!r.is_pc()) rest.regs.push_back(r);
      if (!rest.regs.empty()) seq.push_back(rest);
      for (Instruction &mi :
           make_load_constant(plan.scratch, plan.offset, ret.cond, FLAG_PASS_INSERTED))
        seq.push_back(std::move(mi));
      seq.push_back(shadow_load(plan.scratch, ret.cond));
      seq.push_back(sp_add4(ret.cond));
      Instruction bx;
      bx.op = Mnemonic::BX;
      bx.cond = ret.cond;
      bx.regs = {LR};
      bx.flags = FLAG_PASS_INSERTED;
      seq.push_back(bx);
      idx = splice(f, idx, 1, std::move(seq));
      continue;
    }

    if (ret.op == Mnemonic::BX) {
      // bx lr preceded by pop {Rlist, lr}: same recipe, original bx kept.
      const Instruction *prev =
          (idx > 0 && f.items[idx - 1].is_insn()) ? &f.items[idx - 1].insn : nullptr;
      if (prev && prev->op == Mnemonic::POP && !reglist_contains(prev->regs, PC) &&
          reglist_contains(prev->regs, LR) && prev->cond == ret.cond) {
        std::vector<Instruction> seq;
        Instruction rest = *prev;
        rest.regs.clear();
        for (Register r : prev->regs)
          if (!r.is_lr()) rest.regs.push_back(r);
        if (!rest.regs.empty()) seq.push_back(rest);
        for (Instruction &mi : make_load_constant(plan.scratch, plan.offset,
                                                  ret.cond, FLAG_PASS_INSERTED))
          seq.push_back(std::move(mi));
        seq.push_back(shadow_load(plan.scratch, ret.cond));
        seq.push_back(sp_add4(ret.cond));
        idx = splice(f, idx - 1, 1, std::move(seq)) + 1;  // keep the bx
        continue;
      }
      throw AsmError("function '" + f.name +
                         "': unrecognized epilogue (manual review required)",
                     ret.source_line);
    }

    // ldm with pc, or anything else classified as a return.
    throw AsmError("function '" + f.name +
                       "': unrecognized epilogue (manual review required)",
                   ret.source_line);
  }
}

void reject_sp_write(const Function &f, const Instruction &i) {
  auto dyn = [&](const char *what) {
    throw AsmError("function '" + f.name + "': " + what, i.source_line);
  };
  bool writes_sp_dest = !i.regs.empty() && i.regs[0].is_sp();
  switch (i.op) {
  case Mnemonic::ADD:
  case Mnemonic::SUB:
    if (writes_sp_dest) {
      if (!(i.regs.size() >= 2 && i.regs[1].is_sp() && i.has_imm))
        dyn("dynamic stack allocation");
    }
    break;
  case Mnemonic::MOV:
  case Mnemonic::MOVW:
  case Mnemonic::MOVT:
  case Mnemonic::BIC:
  case Mnemonic::AND:
  case Mnemonic::ORR:
  case Mnemonic::LSL:
  case Mnemonic::LSR:
  case Mnemonic::MRS:
    if (writes_sp_dest) dyn("dynamic stack allocation");
    break;
  case Mnemonic::LDR:
  case Mnemonic::LDRB:
  case Mnemonic::LDRH:
  case Mnemonic::LDRT:
  case Mnemonic::LDREX:
    if (writes_sp_dest) dyn("sp reload");
    break;
  case Mnemonic::LDRD:
    if ((i.regs.size() > 0 && i.regs[0].is_sp()) ||
        (i.regs.size() > 1 && i.regs[1].is_sp()))
      dyn("sp reload");
    break;
  case Mnemonic::LDM:
  case Mnemonic::POP: {
    size_t first = (i.op == Mnemonic::POP) ? 0 : 1;
    for (size_t k = first; k < i.regs.size(); ++k)
      if (i.regs[k].is_sp()) dyn("sp reload");
    break;
  }
  default:
    break;
  }
  // Writeback through sp moves it by the immediate, which is fine; a
  // register-offset writeback would not be.
  if (i.mem && i.mem->base.is_sp() && i.mem->index != IndexMode::Offset &&
      i.mem->has_reg_offset)
    dyn("dynamic stack allocation");
}

}  // namespace

ShadowStackPlan make_shadow_plan(const MemoryLayout &layout) {
  if (layout.shadow_offset == 0)
    throw AsmError("shadow stack offset must be positive", 0);
  ShadowStackPlan plan;
  plan.offset = layout.shadow_offset;
  plan.scratch = IP;
  return plan;
}

void check_constant_frame(const Function &f) {
  for (const FunctionItem &it : f.items)
    if (it.is_insn()) reject_sp_write(f, it.insn);
}

Function shadow_stack_transform(const Function &f, const ShadowStackPlan &plan) {
  check_constant_frame(f);
  if (!function_stores_lr(f)) return f;
  Function out = f;
  map_instruction_runs(out, dissolve_it_blocks);
  insert_prologue_store(out, plan);
  rewrite_epilogues(out, plan);
  map_instruction_runs(out, rebuild_it_blocks);
  return out;
}

Program shadow_stack_pass(const Program &p, const MemoryLayout &layout) {
  ShadowStackPlan plan = make_shadow_plan(layout);
  Program out = p;
  for (Function &f : out.functions)
    if (!f.exempt) f = shadow_stack_transform(f, plan);
  return out;
}

}  // namespace silhouette
