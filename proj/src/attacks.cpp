//===-- attacks.cpp - bundled write-what-where campaign --------------------===//
//
// Attack parameters are synthesized from the loaded image: the entry frame's
// return slot sits 4 bytes under the initial sp, its shadow copy at the
// layout's mirror displacement, and pointer victims are found by scanning the
// installed globals (plus workload preloads) for words that name function
// entries or point into RAM.  No per-program attack descriptions exist; the
// suite adapts itself, and a class with no natural victim degrades to a
// harmless heap write so it still fires everywhere.
//
//===----------------------------------------------------------------------===//

#include "silhouette/harness.hpp"

#include <cstdio>
#include <map>
#include <stdexcept>

namespace silhouette {

namespace {

std::string hex(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08X", v);
  return buf;
}

// Executed-instruction threshold by which the entry function's return-address
// mirror is in place: the index just past its flagged store (falling back to
// the first lr store for untransformed programs).
uint64_t after_prologue(const Program &p, const std::string &entry) {
  for (const Function &f : p.functions) {
    if (f.name != entry) continue;
    uint64_t idx = 0, first_lr = 0;
    bool have_lr = false;
    for (const FunctionItem &it : f.items) {
      if (!it.is_insn()) continue;
      ++idx;
      const Instruction &in = it.insn;
      if (in.has_flag(FLAG_SHADOW_STACK_STORE)) return idx + 1;
      bool lr_here = false;
      for (Register r : in.regs)
        if (r.is_lr()) lr_here = true;
      InsnKind k = classify_instruction(in);
      if (lr_here && !have_lr &&
          (k == InsnKind::PrivilegedStore || k == InsnKind::StoreMultiple ||
           k == InsnKind::UnprivilegedStore)) {
        first_lr = idx;
        have_lr = true;
      }
    }
    return have_lr ? first_lr + 1 : 1;
  }
  return 1;
}

// Words of the initial data image: assembled globals overlaid by the
// workload's preloads.  This is what an attacker armed with the binary and
// the inputs can predict.
std::map<uint32_t, uint32_t> initial_words(const LoadedProgram &lp,
                                           const Workload &wl) {
  std::map<uint32_t, uint32_t> words;
  const std::map<uint32_t, uint8_t> &gb = lp.global_bytes();
  for (const auto &[addr, byte] : gb) {
    (void)byte;
    if (addr % 4 != 0) continue;
    uint32_t w = 0;
    bool whole = true;
    for (unsigned i = 0; i < 4; ++i) {
      auto it = gb.find(addr + i);
      if (it == gb.end()) {
        whole = false;
        break;
      }
      w |= (uint32_t)it->second << (8 * i);
    }
    if (whole) words[addr] = w;
  }
  for (const auto &[addr, word] : wl.preload) words[addr] = word;
  return words;
}

}  // namespace

std::vector<AttackSpec> bundled_attacks(const LoadedProgram &lp,
                                        HardenMode mode, const Workload &wl) {
  (void)mode;  // the channel view is chosen at run time, not in the specs
  const MemoryLayout &lay = lp.layout();
  const Program &p = lp.program();

  std::optional<uint32_t> entry_sym = lp.symbol(wl.entry);
  if (!entry_sym)
    throw std::runtime_error("attack suite: no entry symbol " + wl.entry);
  uint32_t entry_addr = *entry_sym | 1;
  uint32_t lr_slot = lay.initial_sp() - 4;
  uint32_t shadow_slot = lr_slot + lay.shadow_offset;
  uint64_t armed = after_prologue(p, wl.entry);
  uint32_t heap_scratch = lay.heap.end() - 4;

  std::map<uint32_t, uint32_t> words = initial_words(lp, wl);
  std::vector<std::pair<uint32_t, uint32_t>> fn_slots;  // addr, value
  std::vector<uint32_t> ptr_slots;
  for (const auto &[addr, w] : words) {
    if ((w & 1) && lp.entry_at(w & ~1u))
      fn_slots.emplace_back(addr, w);
    else if (lay.heap.contains(w) || lay.stack.contains(w))
      ptr_slots.push_back(addr);
  }

  // An entry with no label to find: an exempt function when the program has
  // one, else any function that never had its address taken.
  uint32_t unlabeled = entry_addr;
  for (const Function &f : p.functions) {
    if (f.name == kCfiAbortSymbol) continue;
    if (!f.exempt) continue;
    if (std::optional<uint32_t> a = lp.symbol(f.name)) {
      unlabeled = *a | 1;
      break;
    }
  }

  std::vector<AttackSpec> out;

  AttackSpec ret;
  ret.name = "return-slot-overwrite";
  ret.trigger_exec = armed;
  ret.writes = {{lr_slot, 4, entry_addr}};
  out.push_back(ret);

  AttackSpec interior;
  interior.name = "funcptr-interior";
  interior.trigger_exec = 0;
  for (const auto &[addr, w] : fn_slots)
    interior.writes.push_back({addr, 4, ((w & ~1u) + 4) | 1});
  if (interior.writes.empty())
    interior.writes.push_back({heap_scratch, 4, 0x41414141});
  out.push_back(interior);

  AttackSpec hal;
  hal.name = "funcptr-unlabeled";
  hal.trigger_exec = 0;
  for (const auto &[addr, w] : fn_slots) {
    (void)w;
    hal.writes.push_back({addr, 4, unlabeled});
  }
  if (hal.writes.empty()) hal.writes.push_back({heap_scratch, 4, unlabeled});
  out.push_back(hal);

  AttackSpec shadow;
  shadow.name = "shadow-slot-write";
  shadow.trigger_exec = armed;
  shadow.writes = {{shadow_slot, 4, entry_addr}};
  out.push_back(shadow);

  AttackSpec strex;
  strex.name = "strex-redirect";
  strex.trigger_exec = 0;
  for (uint32_t addr : ptr_slots) strex.writes.push_back({addr, 4, shadow_slot});
  if (strex.writes.empty())
    strex.writes.push_back({heap_scratch, 4, shadow_slot});
  out.push_back(strex);

  AttackSpec aperture;
  aperture.name = "mpu-aperture-write";
  aperture.trigger_exec = armed;
  uint32_t mpu_reg =
      lay.system.base + (lay.system.size > 0xED9C + 4 ? 0xED9C : 0);
  aperture.writes = {{mpu_reg, 4, 0}};
  out.push_back(aperture);

  return out;
}

const char *attack_outcome_name(AttackOutcome o) {
  switch (o) {
  case AttackOutcome::DefeatedTrap: return "defeated-trap";
  case AttackOutcome::DefeatedNoEffect: return "defeated-no-effect";
  case AttackOutcome::Hijack: return "hijack";
  }
  return "?";
}

bool SecurityReport::all_defeated() const {
  for (const AttackResult &r : results)
    if (r.outcome == AttackOutcome::Hijack) return false;
  return true;
}

SecurityReport attack_suite(const Program &hardened,
                            const MemoryLayout &layout, HardenMode mode,
                            const Workload &wl) {
  LoadedProgram lp(hardened, layout);
  MpuConfig mpu = build_layout_config(layout, mode);

  Machine ref_m(lp, mpu);
  RunResult ref = ref_m.run(run_options(wl));
  if (ref.status != RunStatus::Halted || ref.hijack)
    throw std::runtime_error(
        "attack suite: reference run is not a clean halt (" +
        ref.security_verdict() + ")");

  SecurityReport rep;
  for (const AttackSpec &spec : bundled_attacks(lp, mode, wl)) {
    RunOptions opt = run_options(wl);
    opt.attacks = {spec};
    opt.attack_view =
        mode == HardenMode::Invert ? View::Privileged : View::Unprivileged;
    Machine m(lp, mpu);
    RunResult res = m.run(opt);

    AttackResult ar;
    ar.name = spec.name;
    if (res.hijack) {
      ar.outcome = AttackOutcome::Hijack;
      ar.detail = res.hijack_detail;
    } else if (res.status == RunStatus::Trapped) {
      ar.outcome = AttackOutcome::DefeatedTrap;
      ar.detail = res.trap->kind + " pc=" + hex(res.trap->pc);
    } else {
      ar.outcome = AttackOutcome::DefeatedNoEffect;
      if (res.status == RunStatus::FuelExhausted)
        ar.detail = "fuel exhausted, no hijack";
      else if (res.exit_value != ref.exit_value)
        ar.detail = "no hijack; exit diverged to " +
                    std::to_string(res.exit_value);
      else
        ar.detail = "exit preserved";
      if (!m.device_writes().empty()) ar.detail += "; device write recorded";
    }
    rep.results.push_back(ar);
  }
  return rep;
}

}  // namespace silhouette
