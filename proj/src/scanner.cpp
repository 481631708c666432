//===-- scanner.cpp - privileged-instruction audit ------------------------===//

#include "silhouette/scanner.hpp"

#include <algorithm>

namespace silhouette {

namespace {

// The two privileged stores the pipeline is allowed to leave behind: the
// shadow-stack mirror and the spill traffic inside a CFI check sequence.
bool sanctioned(const Instruction &i) {
  return i.has_flag(FLAG_SHADOW_STACK_STORE) || i.has_flag(FLAG_CFI_INSERTED);
}

// Must match the simulator's counting predicate; see the header contract.
bool counts_as_privileged_store(InsnKind k) {
  return k == InsnKind::PrivilegedStore || k == InsnKind::FPStore ||
         k == InsnKind::StoreMultiple;
}

bool guard_bic(const Instruction &i, Cond c) {
  return i.op == Mnemonic::BIC && i.has_imm && i.cond == c &&
         i.regs.size() == 2;
}

// strex is tolerated only as the tail of the masked pattern
//   bic a, b, #m1
//   bic a, a, #m2
//   strex rd, rt, [a]
// with no label in between: a label would admit a jump past the guard.  An
// it header never sits inside the triple (a rebuilt conditional run places it
// before both bics), so plain adjacency is the right test.
bool strex_guarded(const Function &f, size_t i) {
  const Instruction &sx = f.items[i].insn;
  if (!sx.mem || i < 2) return false;
  const FunctionItem &a = f.items[i - 2], &b = f.items[i - 1];
  if (!a.is_insn() || !b.is_insn()) return false;
  const Instruction &first = a.insn, &second = b.insn;
  if (!guard_bic(first, sx.cond) || !guard_bic(second, sx.cond)) return false;
  return second.regs[0] == sx.mem->base && second.regs[1] == first.regs[0];
}

bool stores_lr(const Instruction &i) {
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
    for (Register r : i.regs)
      if (r.is_lr()) return true;
    return false;
  default:
    return false;
  }
}

}  // namespace

const char *severity_name(Severity s) {
  return s == Severity::Error ? "error" : "note";
}

std::string find_line(const Finding &f) {
  return "FIND " + std::string(severity_name(f.severity)) + " " + f.function +
         " " + std::to_string(f.line) + " " + f.kind;
}

size_t ScanReport::error_count() const {
  size_t n = 0;
  for (const Finding &f : findings)
    if (f.severity == Severity::Error) ++n;
  return n;
}

size_t ScanReport::note_count() const {
  return findings.size() - error_count();
}

ScanReport scan_privileged(const Program &p, const ScanPolicy &policy,
                           const MpuConfig &mpu) {
  ScanReport rep;
  for (const Function &f : p.functions) {
    std::vector<Finding> local;
    auto add = [&](int line, const char *kind, Severity sev, const char *why) {
      local.push_back({f.name, line, kind, sev, why});
    };
    bool store_rule = policy.mode == HardenMode::Silhouette && !f.exempt;
    for (size_t i = 0; i < f.items.size(); ++i) {
      if (!f.items[i].is_insn()) continue;
      const Instruction &in = f.items[i].insn;
      int line = in.source_line;
      switch (classify_system(in)) {
      case SysOp::MSR:
        if (f.exempt)
          add(line, "msr", Severity::Note, "msr inside exempt code");
        else
          add(line, "msr", Severity::Error, "msr rewrites privileged state");
        break;
      case SysOp::CPS:
        if (f.exempt)
          add(line, "cps", Severity::Note, "cps inside exempt code");
        else if (mpu.hfnmiena)
          add(line, "cps", Severity::Note,
              "cps is neutralized while hfnmiena holds");
        else
          add(line, "cps", Severity::Error,
              "cps can mask the fault path and hfnmiena is off");
        break;
      case SysOp::MRS:
        add(line, "mrs", Severity::Note,
            "mrs reads privileged state without changing it");
        break;
      case SysOp::None:
        break;
      }
      if (in.op == Mnemonic::SVC)
        add(line, "svc", Severity::Note,
            "supervisor entry; the handler is trusted by assumption");
      if (!store_rule) continue;
      InsnKind k = classify_instruction(in);
      if (counts_as_privileged_store(k)) {
        if (!sanctioned(in))
          add(line, "unhardened-store", Severity::Error,
              "privileged store outside the sanctioned set");
      } else if (k == InsnKind::StoreExclusive && !strex_guarded(f, i)) {
        add(line, "unguarded-strex", Severity::Error,
            "store-exclusive without the two-bic address guard");
      }
    }
    std::stable_sort(local.begin(), local.end(),
                     [](const Finding &a, const Finding &b) {
                       return a.line < b.line;
                     });
    rep.findings.insert(rep.findings.end(), local.begin(), local.end());
  }
  return rep;
}

std::vector<Finding> check_return_integrity(const Program &p) {
  std::vector<Finding> out;
  for (const Function &f : p.functions) {
    if (f.exempt) continue;
    int first_store_line = -1;
    bool mirrored = false;
    bool past_prologue = false;
    for (const FunctionItem &it : f.items) {
      if (!it.is_insn()) continue;
      const Instruction &in = it.insn;
      if (stores_lr(in)) {
        if (first_store_line < 0) first_store_line = in.source_line;
        if (!past_prologue && in.has_flag(FLAG_SHADOW_STACK_STORE))
          mirrored = true;
      }
      InsnKind k = classify_instruction(in);
      if (k == InsnKind::IndirectCall || k == InsnKind::Return ||
          k == InsnKind::IndirectBranch ||
          (k == InsnKind::DirectBranch && in.op == Mnemonic::BL))
        past_prologue = true;
    }
    if (first_store_line >= 0 && !mirrored)
      out.push_back({f.name, first_store_line, "missing-shadow-store",
                     Severity::Error,
                     "stacks lr without planting the shadow copy"});
  }
  return out;
}

std::vector<Finding> check_label_coverage(const Program &p) {
  std::vector<Finding> out;
  for (const Function &f : p.functions) {
    if (f.exempt || !f.address_taken) continue;
    bool labeled = false;
    for (const FunctionItem &it : f.items) {
      if (it.is_label()) continue;
      if (it.is_insn()) {
        const Instruction &in = it.insn;
        labeled = in.op == Mnemonic::MOV && in.cond == Cond::AL &&
                  !in.sets_flags && !in.has_imm && in.regs.size() == 2 &&
                  in.regs[0] == Register::core(0) &&
                  in.regs[1] == Register::core(0);
      }
      break;
    }
    if (!labeled)
      out.push_back({f.name, f.source_line, "missing-cfi-label",
                     Severity::Error,
                     "address-taken entry without the landing label"});
  }
  return out;
}

}  // namespace silhouette
