#include "silhouette/liveness.hpp"

#include <map>

namespace silhouette {

namespace {

// r0, r1 (results), r4-r11 (callee-saved), sp, lr.
constexpr uint16_t kExitLive = 0x6FF3;
constexpr uint16_t kArgRegs = 0x000F;  // r0-r3

uint16_t bit_of(Register r) {
  return r.is_core() ? (uint16_t)(1u << r.index) : 0;
}

struct NodeFlow {
  uint16_t uses = 0;
  uint16_t defs = 0;
  std::vector<size_t> succs;
};

// Register effects, ignoring control flow.  FP registers are not tracked;
// only core registers are ever handed out as scratch.
void reg_effects(const Instruction &in, uint16_t &uses, uint16_t &defs) {
  auto use = [&](Register r) { uses |= bit_of(r); };
  auto def = [&](Register r) { defs |= bit_of(r); };
  auto mem_ops = [&] {
    if (!in.mem) return;
    use(in.mem->base);
    if (in.mem->has_reg_offset) use(in.mem->offset_reg);
    if (in.mem->index != IndexMode::Offset) def(in.mem->base);
  };

  switch (in.op) {
  case Mnemonic::MOV:
  case Mnemonic::MOVW:
  case Mnemonic::ADD:
  case Mnemonic::SUB:
  case Mnemonic::BIC:
  case Mnemonic::AND:
  case Mnemonic::ORR:
  case Mnemonic::LSL:
  case Mnemonic::LSR:
    def(in.regs[0]);
    for (size_t k = 1; k < in.regs.size(); ++k) use(in.regs[k]);
    break;
  case Mnemonic::MOVT:  // writes the top half, keeps the bottom
    def(in.regs[0]);
    use(in.regs[0]);
    break;
  case Mnemonic::CMP:
    for (const Register &r : in.regs) use(r);
    break;
  case Mnemonic::CBZ:
  case Mnemonic::CBNZ:
    use(in.regs[0]);
    break;
  case Mnemonic::STR:
  case Mnemonic::STRB:
  case Mnemonic::STRH:
  case Mnemonic::STRT:
  case Mnemonic::STRBT:
  case Mnemonic::STRHT:
    use(in.regs[0]);
    mem_ops();
    break;
  case Mnemonic::STRD:
    use(in.regs[0]);
    use(in.regs[1]);
    mem_ops();
    break;
  case Mnemonic::LDR:
  case Mnemonic::LDRB:
  case Mnemonic::LDRH:
  case Mnemonic::LDRT:
    def(in.regs[0]);
    mem_ops();
    break;
  case Mnemonic::LDRD:
    def(in.regs[0]);
    def(in.regs[1]);
    mem_ops();
    break;
  case Mnemonic::STREX:
    def(in.regs[0]);
    use(in.regs[1]);
    mem_ops();
    break;
  case Mnemonic::LDREX:
    def(in.regs[0]);
    mem_ops();
    break;
  case Mnemonic::PUSH:
    for (const Register &r : in.regs) use(r);
    use(SP);
    def(SP);
    break;
  case Mnemonic::POP:
    use(SP);
    def(SP);
    for (const Register &r : in.regs)
      if (r.is_core()) defs |= bit_of(r);
    break;
  case Mnemonic::STM:
  case Mnemonic::VSTM:  // base lives in mem; regs hold the transfer list
    for (const Register &r : in.regs) use(r);
    mem_ops();
    break;
  case Mnemonic::LDM:
    for (const Register &r : in.regs) def(r);
    mem_ops();
    break;
  case Mnemonic::B:
    break;
  case Mnemonic::BL:
    uses |= kArgRegs;  // call: arguments stay live, callee kills nothing
    break;
  case Mnemonic::BLX:
    uses |= kArgRegs;
    use(in.regs[0]);
    break;
  case Mnemonic::BX:
    use(in.regs[0]);
    uses |= kExitLive;
    if (!in.regs[0].is_lr()) uses |= kArgRegs;  // tail call keeps args live
    break;
  case Mnemonic::TBB:
  case Mnemonic::TBH:
    if (in.mem && in.mem->has_reg_offset) use(in.mem->offset_reg);
    break;
  case Mnemonic::SVC:
    uses |= kExitLive;  // trap or TCB entry; nothing provably dead
    break;
  case Mnemonic::MSR:
    use(in.regs[0]);
    break;
  case Mnemonic::MRS:
    def(in.regs[0]);
    break;
  case Mnemonic::VMOV:
    if (in.fp_double && in.regs.size() == 3) {
      // vmov rA, rB, dN defines the cores; vmov dN, rA, rB uses them.
      bool to_core = in.regs[0].is_core();
      for (const Register &r : in.regs)
        if (r.is_core()) (to_core ? def(r) : use(r));
    } else if (in.regs.size() == 2) {
      if (in.regs[0].is_core()) def(in.regs[0]);
      if (in.regs[1].is_core()) use(in.regs[1]);
    }
    break;
  case Mnemonic::VSTR:
  case Mnemonic::VLDR:
    mem_ops();
    break;
  case Mnemonic::IT:
  case Mnemonic::NOP:
  case Mnemonic::CPS:
    break;
  }

  // A conditional write may not execute; it cannot make the old value dead.
  if (in.cond != Cond::AL) defs = 0;
  // POP/LDM with pc in the list is a return.
  if ((in.op == Mnemonic::POP || in.op == Mnemonic::LDM) &&
      reglist_contains(in.regs, PC))
    uses |= kExitLive;
}

struct FlowBuilder {
  const Function &f;
  std::map<std::string, size_t> label_at;
  std::vector<NodeFlow> nodes;

  explicit FlowBuilder(const Function &fn) : f(fn) {
    nodes.resize(f.items.size());
    for (size_t i = 0; i < f.items.size(); ++i)
      if (f.items[i].is_label()) label_at[f.items[i].label] = i;
    for (size_t i = 0; i < f.items.size(); ++i) build(i);
  }

  void fallthrough(size_t i) {
    if (i + 1 < f.items.size())
      nodes[i].succs.push_back(i + 1);
    else
      nodes[i].uses |= kExitLive;  // running off the end acts as an exit
  }

  void edge_to(size_t i, const std::string &label) {
    auto it = label_at.find(label);
    if (it != label_at.end()) nodes[i].succs.push_back(it->second);
  }

  // The table for a tbb/tbh at item i is the data item that follows it; its
  // label entries are the dispatch targets.
  void table_edges(size_t i) {
    for (size_t j = i + 1; j < f.items.size(); ++j) {
      const FunctionItem &it = f.items[j];
      if (it.is_label()) continue;
      if (it.is_data() && (it.data.kind == DataKind::Byte ||
                           it.data.kind == DataKind::Hword))
        for (const std::string &l : it.data.labels)
          if (!l.empty()) edge_to(i, l);
      break;
    }
  }

  void build(size_t i) {
    const FunctionItem &item = f.items[i];
    NodeFlow &n = nodes[i];
    if (!item.is_insn()) {
      fallthrough(i);
      return;
    }
    const Instruction &in = item.insn;
    reg_effects(in, n.uses, n.defs);

    switch (in.op) {
    case Mnemonic::B:
      edge_to(i, *in.label);
      if (in.cond != Cond::AL) fallthrough(i);
      break;
    case Mnemonic::CBZ:
    case Mnemonic::CBNZ:
      edge_to(i, *in.label);
      fallthrough(i);
      break;
    case Mnemonic::BX:
      if (in.cond != Cond::AL) fallthrough(i);
      break;  // otherwise exit: no successors
    case Mnemonic::TBB:
    case Mnemonic::TBH:
      table_edges(i);
      break;
    case Mnemonic::SVC:
      break;  // exit
    case Mnemonic::POP:
    case Mnemonic::LDM:
      if (!reglist_contains(in.regs, PC)) fallthrough(i);
      break;  // pc in the list returns: exit
    default:
      fallthrough(i);
      break;
    }
  }
};

}  // namespace

Liveness::Liveness(const Function &f) {
  FlowBuilder fb(f);
  size_t n = f.items.size();
  live_in_.assign(n, 0);
  bool changed = n > 0;
  while (changed) {
    changed = false;
    for (size_t k = n; k-- > 0;) {
      const NodeFlow &node = fb.nodes[k];
      uint16_t out = 0;
      for (size_t s : node.succs) out |= live_in_[s];
      uint16_t in = node.uses | (uint16_t)(out & ~node.defs);
      if (in != live_in_[k]) {
        live_in_[k] = in;
        changed = true;
      }
    }
  }
}

bool Liveness::dead_before(size_t pos, Register r) const {
  if (!r.is_core()) return false;
  return (live_in_.at(pos) & (1u << r.index)) == 0;
}

std::optional<Register> find_free_register(
    const Function &f, size_t position, const std::vector<Register> &excluded) {
  static const uint8_t order[] = {12, 3, 2, 1, 0, 4, 5, 6, 7, 8, 9, 10, 11};
  Liveness lv(f);
  for (uint8_t idx : order) {
    Register r = Register::core(idx);
    if (reglist_contains(excluded, r)) continue;
    if (lv.dead_before(position, r)) return r;
  }
  return std::nullopt;
}

}  // namespace silhouette
