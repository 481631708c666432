//===-- pass_cfi.cpp - Forward-edge control-flow integrity ----------------===//
//
// Address-taken functions start with the halfword 0x4600, which executes as
// the no-op `mov r0, r0`.  Every indirect call and indirect tail call first
// loads the halfword at its target and compares it against that value; a
// mismatch diverts to __cfi_abort, which traps permanently.  Returns are the
// shadow stack's problem and table dispatch is the jump-table verifier's, so
// neither is checked here.
//
// The check sequence clobbers CPSR flags.  A site that is itself conditional
// therefore cannot be checked in place inside its IT block; the rewrite
// branches around an unconditional copy of the check and call instead.
//
//===----------------------------------------------------------------------===//

#include "silhouette/passes.hpp"

#include <optional>
#include <set>
#include <string>

#include "silhouette/liveness.hpp"

namespace silhouette {

namespace {

constexpr uint8_t C = FLAG_CFI_INSERTED;
constexpr Register R0 = Register::core(0);

Instruction label_insn() {
  Instruction i;
  i.op = Mnemonic::MOV;
  i.regs = {R0, R0};
  i.flags = C;
  return i;
}

bool is_label_insn(const Instruction &i) {
  return i.op == Mnemonic::MOV && i.cond == Cond::AL && !i.sets_flags &&
         !i.has_imm && i.regs.size() == 2 && i.regs[0] == R0 &&
         i.regs[1] == R0;
}

Instruction bic_imm(Cond c, Register rd, Register rn, uint32_t imm) {
  Instruction i;
  i.op = Mnemonic::BIC;
  i.cond = c;
  i.flags = C;
  i.regs = {rd, rn};
  i.has_imm = true;
  i.imm = imm;
  return i;
}

Instruction ldrh_at(Cond c, Register rt, Register base) {
  Instruction i;
  i.op = Mnemonic::LDRH;
  i.cond = c;
  i.flags = C;
  i.regs = {rt};
  MemOperand m;
  m.base = base;
  i.mem = m;
  return i;
}

Instruction cmp_imm(Cond c, Register rn, uint32_t imm) {
  Instruction i;
  i.op = Mnemonic::CMP;
  i.cond = c;
  i.flags = C;
  i.regs = {rn};
  i.has_imm = true;
  i.imm = imm;
  return i;
}

Instruction branch_to(Cond c, std::string label) {
  Instruction i;
  i.op = Mnemonic::B;
  i.cond = c;
  i.flags = C;
  i.label = std::move(label);
  return i;
}

Instruction push_one(Register r) {
  Instruction i;
  i.op = Mnemonic::PUSH;
  i.flags = C;
  i.regs = {r};
  return i;
}

Instruction pop_one(Register r) {
  Instruction i;
  i.op = Mnemonic::POP;
  i.flags = C;
  i.regs = {r};
  return i;
}

// The label check itself; always unconditional (conditional sites branch
// around it).  Without a free register a callee-saved one is borrowed: the
// pop lands before the bne so both outcomes see it restored, and pop leaves
// the comparison flags alone.
std::vector<Instruction> check_seq(Register rt, std::optional<Register> free) {
  std::vector<Instruction> out;
  if (free) {
    Register s = *free;
    out.push_back(bic_imm(Cond::AL, s, rt, 1));
    out.push_back(ldrh_at(Cond::AL, s, s));
    out.push_back(cmp_imm(Cond::AL, s, kCfiLabelValue));
    out.push_back(branch_to(Cond::NE, kCfiAbortSymbol));
    return out;
  }
  Register s = rt == Register::core(4) ? Register::core(5) : Register::core(4);
  out.push_back(push_one(s));
  out.push_back(bic_imm(Cond::AL, s, rt, 1));
  out.push_back(ldrh_at(Cond::AL, s, s));
  out.push_back(cmp_imm(Cond::AL, s, kCfiLabelValue));
  out.push_back(pop_one(s));
  out.push_back(branch_to(Cond::NE, kCfiAbortSymbol));
  return out;
}

bool needs_check(const Instruction &i) {
  if (i.op == Mnemonic::BLX) return true;
  return i.op == Mnemonic::BX && !i.regs.empty() && !i.regs[0].is_lr();
}

Function instrument(const Function &fin) {
  bool has_site = false;
  for (const FunctionItem &it : fin.items)
    if (it.is_insn() && needs_check(it.insn)) has_site = true;
  if (!has_site) return fin;

  Function f = fin;
  map_instruction_runs(f, dissolve_it_blocks);

  std::set<std::string> used;
  for (const FunctionItem &it : f.items)
    if (it.is_label()) used.insert(it.label);
  int next = 0;
  auto fresh_label = [&]() {
    std::string name;
    do {
      name = ".Lcfi" + std::to_string(next++);
    } while (used.count(name));
    used.insert(name);
    return name;
  };

  size_t pos = 0;
  while (pos < f.items.size()) {
    if (!f.items[pos].is_insn()) {
      ++pos;
      continue;
    }
    const Instruction ins = f.items[pos].insn;
    if (!needs_check(ins)) {
      ++pos;
      continue;
    }
    Register rt = ins.regs[0];
    std::optional<Register> free = find_free_register(f, pos, {rt});

    std::vector<FunctionItem> rep;
    if (ins.cond == Cond::AL) {
      for (Instruction &i : check_seq(rt, free))
        rep.push_back(FunctionItem::make_insn(std::move(i)));
      rep.push_back(FunctionItem::make_insn(ins));
    } else {
      std::string skip = fresh_label();
      rep.push_back(
          FunctionItem::make_insn(branch_to(invert_cond(ins.cond), skip)));
      for (Instruction &i : check_seq(rt, free))
        rep.push_back(FunctionItem::make_insn(std::move(i)));
      Instruction call = ins;
      call.cond = Cond::AL;
      rep.push_back(FunctionItem::make_insn(call));
      rep.push_back(FunctionItem::make_label(skip));
    }
    f.items.erase(f.items.begin() + (long)pos);
    f.items.insert(f.items.begin() + (long)pos,
                   std::make_move_iterator(rep.begin()),
                   std::make_move_iterator(rep.end()));
    pos += rep.size();
  }

  map_instruction_runs(f, rebuild_it_blocks);
  return f;
}

}  // namespace

void insert_function_labels(Program &p) {
  for (Function &f : p.functions) {
    if (f.exempt || !f.address_taken) continue;
    bool labeled = false;
    for (const FunctionItem &it : f.items) {
      if (it.is_label()) continue;
      labeled = it.is_insn() && is_label_insn(it.insn);
      break;
    }
    if (!labeled)
      f.items.insert(f.items.begin(), FunctionItem::make_insn(label_insn()));
  }
}

Program cfi_pass(const Program &p) {
  Program out = p;
  insert_function_labels(out);
  for (Function &f : out.functions)
    if (!f.exempt) f = instrument(f);

  bool referenced = false;
  for (const Function &f : out.functions)
    for (const FunctionItem &it : f.items)
      if (it.is_insn() && it.insn.label == kCfiAbortSymbol) referenced = true;
  bool present = false;
  for (const Function &f : out.functions)
    if (f.name == kCfiAbortSymbol) present = true;
  if (referenced && !present) {
    Function ab;
    ab.name = kCfiAbortSymbol;
    ab.is_global = true;
    ab.exempt = true;  // never labeled, never instrumented
    Instruction svc;
    svc.op = Mnemonic::SVC;
    svc.has_imm = true;
    svc.imm = 255;
    svc.flags = C;
    ab.items.push_back(FunctionItem::make_insn(svc));
    out.functions.push_back(std::move(ab));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Jump tables

namespace {

bool is_cmp_imm_on(const Instruction &i, Register idx) {
  return i.op == Mnemonic::CMP && i.has_imm && i.regs.size() == 1 &&
         i.regs[0] == idx;
}

// Accepts the two conventional lowerings:
//   cmp idx, #n ; bhi <default> ; tbb
//   cmp idx, #n ; bls .Ld ; b <default> ; .Ld: tbb
// Returns n (the largest admitted index) when a guard is found.
std::optional<int64_t> find_guard(const Function &f, size_t i, Register idx) {
  // it headers are transparent here: a rebuilt conditional run puts one
  // between the cmp and its branch without changing the guard's meaning.
  std::vector<const FunctionItem *> v;
  for (size_t k = 0; k < i; ++k) {
    if (f.items[k].is_insn() && f.items[k].insn.op == Mnemonic::IT) continue;
    v.push_back(&f.items[k]);
  }

  long k = (long)v.size() - 1;
  while (k >= 0 && v[k]->is_label()) --k;
  if (k >= 1 && v[k]->is_insn() && v[k - 1]->is_insn()) {
    const Instruction &b = v[k]->insn;
    const Instruction &c = v[k - 1]->insn;
    if (b.op == Mnemonic::B && b.cond == Cond::HI && is_cmp_imm_on(c, idx))
      return c.imm;
  }

  k = (long)v.size() - 1;
  if (k >= 3 && v[k]->is_label()) {
    const std::string &ld = v[k]->label;
    const FunctionItem &bdef = *v[k - 1];
    const FunctionItem &bls = *v[k - 2];
    const FunctionItem &cmp = *v[k - 3];
    if (bdef.is_insn() && bls.is_insn() && cmp.is_insn() &&
        bdef.insn.op == Mnemonic::B && bdef.insn.cond == Cond::AL &&
        bls.insn.op == Mnemonic::B && bls.insn.cond == Cond::LS &&
        bls.insn.label == ld && is_cmp_imm_on(cmp.insn, idx))
      return cmp.insn.imm;
  }
  return std::nullopt;
}

}  // namespace

std::vector<JumpTableIssue> verify_jump_tables(const Function &f) {
  std::vector<JumpTableIssue> issues;
  std::set<std::string> defined;
  for (const FunctionItem &it : f.items)
    if (it.is_label()) defined.insert(it.label);

  for (size_t i = 0; i < f.items.size(); ++i) {
    if (!f.items[i].is_insn()) continue;
    const Instruction &t = f.items[i].insn;
    if (t.op != Mnemonic::TBB && t.op != Mnemonic::TBH) continue;
    DataKind want = t.op == Mnemonic::TBB ? DataKind::Byte : DataKind::Hword;
    Register idx = t.mem->offset_reg;

    std::optional<int64_t> bound = find_guard(f, i, idx);
    if (!bound)
      issues.push_back({f.name, t.source_line,
                        "table jump without a dominating bounds check"});

    size_t entries = 0;
    size_t j = i + 1;
    while (j < f.items.size()) {
      const FunctionItem &it = f.items[j];
      if (it.is_label()) {
        ++j;
        continue;
      }
      if (!it.is_data()) break;
      const DataDirective &d = it.data;
      if (d.kind == DataKind::Align) break;
      if (d.kind != want) {
        issues.push_back({f.name, d.source_line,
                          "table entry width does not match the jump width"});
        break;
      }
      for (size_t e = 0; e < d.labels.size(); ++e) {
        if (d.labels[e].empty())
          issues.push_back(
              {f.name, d.source_line, "table entry is not a label"});
        else if (!defined.count(d.labels[e]))
          issues.push_back({f.name, d.source_line,
                            "table entry targets a label outside the "
                            "function"});
      }
      entries += d.labels.size();
      ++j;
    }

    if (entries == 0)
      issues.push_back({f.name, t.source_line, "table jump has no table"});
    else if (bound && entries != (size_t)(*bound + 1))
      issues.push_back(
          {f.name, t.source_line,
           "bounds check admits " + std::to_string(*bound + 1) +
               " entries but the table has " + std::to_string(entries)});
  }
  return issues;
}

std::vector<JumpTableIssue> verify_jump_tables(const Program &p) {
  std::vector<JumpTableIssue> issues;
  for (const Function &f : p.functions) {
    std::vector<JumpTableIssue> fi = verify_jump_tables(f);
    issues.insert(issues.end(), fi.begin(), fi.end());
  }
  return issues;
}

}  // namespace silhouette
