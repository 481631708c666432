//===-- asm_emit.cpp - canonical text emission ----------------------------===//

#include <array>
#include <sstream>

#include "silhouette/asm.hpp"

namespace silhouette {

const char *cond_name(Cond c) {
  static const char *names[] = {"eq", "ne", "cs", "cc", "mi", "pl", "vs", "vc",
                                "hi", "ls", "ge", "lt", "gt", "le", ""};
  return names[(int)c];
}

std::optional<Cond> cond_from_name(const std::string &s) {
  static const std::array<std::pair<const char *, Cond>, 16> table = {{
      {"eq", Cond::EQ}, {"ne", Cond::NE}, {"cs", Cond::CS}, {"hs", Cond::CS},
      {"cc", Cond::CC}, {"lo", Cond::CC}, {"mi", Cond::MI}, {"pl", Cond::PL},
      {"vs", Cond::VS}, {"vc", Cond::VC}, {"hi", Cond::HI}, {"ls", Cond::LS},
      {"ge", Cond::GE}, {"lt", Cond::LT}, {"gt", Cond::GT}, {"le", Cond::LE},
  }};
  for (const auto &[n, c] : table)
    if (s == n) return c;
  return std::nullopt;
}

Cond invert_cond(Cond c) {
  switch (c) {
  case Cond::EQ: return Cond::NE;
  case Cond::NE: return Cond::EQ;
  case Cond::CS: return Cond::CC;
  case Cond::CC: return Cond::CS;
  case Cond::MI: return Cond::PL;
  case Cond::PL: return Cond::MI;
  case Cond::VS: return Cond::VC;
  case Cond::VC: return Cond::VS;
  case Cond::HI: return Cond::LS;
  case Cond::LS: return Cond::HI;
  case Cond::GE: return Cond::LT;
  case Cond::LT: return Cond::GE;
  case Cond::GT: return Cond::LE;
  case Cond::LE: return Cond::GT;
  case Cond::AL: return Cond::AL;
  }
  return Cond::AL;
}

const char *mnemonic_name(Mnemonic m) {
  switch (m) {
  case Mnemonic::MOV: return "mov";
  case Mnemonic::MOVW: return "movw";
  case Mnemonic::MOVT: return "movt";
  case Mnemonic::ADD: return "add";
  case Mnemonic::SUB: return "sub";
  case Mnemonic::BIC: return "bic";
  case Mnemonic::AND: return "and";
  case Mnemonic::ORR: return "orr";
  case Mnemonic::LSL: return "lsl";
  case Mnemonic::LSR: return "lsr";
  case Mnemonic::CMP: return "cmp";
  case Mnemonic::CBZ: return "cbz";
  case Mnemonic::CBNZ: return "cbnz";
  case Mnemonic::STR: return "str";
  case Mnemonic::STRB: return "strb";
  case Mnemonic::STRH: return "strh";
  case Mnemonic::STRD: return "strd";
  case Mnemonic::STM: return "stm";
  case Mnemonic::PUSH: return "push";
  case Mnemonic::LDR: return "ldr";
  case Mnemonic::LDRB: return "ldrb";
  case Mnemonic::LDRH: return "ldrh";
  case Mnemonic::LDRD: return "ldrd";
  case Mnemonic::LDM: return "ldm";
  case Mnemonic::POP: return "pop";
  case Mnemonic::STRT: return "strt";
  case Mnemonic::STRBT: return "strbt";
  case Mnemonic::STRHT: return "strht";
  case Mnemonic::LDRT: return "ldrt";
  case Mnemonic::STREX: return "strex";
  case Mnemonic::LDREX: return "ldrex";
  case Mnemonic::B: return "b";
  case Mnemonic::BL: return "bl";
  case Mnemonic::BLX: return "blx";
  case Mnemonic::BX: return "bx";
  case Mnemonic::TBB: return "tbb";
  case Mnemonic::TBH: return "tbh";
  case Mnemonic::IT: return "it";
  case Mnemonic::NOP: return "nop";
  case Mnemonic::SVC: return "svc";
  case Mnemonic::MSR: return "msr";
  case Mnemonic::MRS: return "mrs";
  case Mnemonic::CPS: return "cps";
  case Mnemonic::VMOV: return "vmov";
  case Mnemonic::VSTR: return "vstr";
  case Mnemonic::VLDR: return "vldr";
  case Mnemonic::VSTM: return "vstm";
  }
  return "?";
}

std::string reg_name(Register r, bool fp_double) {
  if (r.is_core()) {
    switch (r.index) {
    case 12: return "ip";
    case 13: return "sp";
    case 14: return "lr";
    case 15: return "pc";
    default: return "r" + std::to_string(r.index);
    }
  }
  if (fp_double) return "d" + std::to_string(r.index / 2);
  return "s" + std::to_string(r.index);
}

namespace {

std::string imm_str(int64_t v) {
  std::ostringstream os;
  if (v < 0) {
    os << "#-";
    v = -v;
  } else {
    os << "#";
  }
  if (v >= 256) os << "0x" << std::hex << v;
  else os << std::dec << v;
  return os.str();
}

std::string mem_str(const MemOperand &m) {
  std::string out = "[" + reg_name(m.base);
  if (m.has_reg_offset) {
    out += ", " + reg_name(m.offset_reg);
    if (m.shift) out += ", lsl " + imm_str(m.shift);
  } else if (m.imm != 0 || m.index == IndexMode::PreWriteback) {
    if (m.index != IndexMode::PostWriteback) out += ", " + imm_str(m.imm);
  }
  out += "]";
  if (m.index == IndexMode::PreWriteback) out += "!";
  else if (m.index == IndexMode::PostWriteback) out += ", " + imm_str(m.imm);
  return out;
}

std::string reglist_str(const std::vector<Register> &regs, bool fp_double) {
  std::string out = "{";
  for (size_t k = 0; k < regs.size(); ++k) {
    if (k) out += ", ";
    out += reg_name(regs[k], fp_double);
  }
  return out + "}";
}

std::string annotation_str(uint8_t flags) {
  std::vector<const char *> tags;
  if (flags & FLAG_SHADOW_STACK_STORE) tags.push_back("ss-store");
  if (flags & FLAG_PASS_INSERTED) tags.push_back("ss");
  if (flags & FLAG_CFI_INSERTED) tags.push_back("cfi");
  if (flags & FLAG_HARDENED) tags.push_back("hardened");
  if (flags & FLAG_SFI_GUARD) tags.push_back("sfi-guard");
  if (tags.empty()) return "";
  std::string out = " @silhouette:";
  for (size_t k = 0; k < tags.size(); ++k) {
    if (k) out += ",";
    out += tags[k];
  }
  return out;
}

}  // namespace

std::string emit_instruction(const Instruction &i) {
  std::string m = mnemonic_name(i.op);
  if (i.op == Mnemonic::IT) {
    const ITBlockSpec &s = *i.it;
    for (size_t k = 1; k < s.then_mask.size(); ++k) m += s.then_mask[k] ? 't' : 'e';
    return m + " " + cond_name(s.first_cond);
  }
  if (i.op == Mnemonic::CPS) {
    // sys holds "<ie|id> <flag>".
    size_t sp = i.sys.find(' ');
    return "cps" + i.sys.substr(0, sp) + " " + i.sys.substr(sp + 1);
  }
  if (i.sets_flags) m += "s";
  m += cond_name(i.cond);

  std::vector<std::string> ops;
  switch (i.op) {
  case Mnemonic::PUSH:
  case Mnemonic::POP:
    ops.push_back(reglist_str(i.regs, false));
    break;
  case Mnemonic::STM:
  case Mnemonic::LDM:
  case Mnemonic::VSTM:
    ops.push_back(reg_name(i.mem->base) +
                  (i.mem->index == IndexMode::PostWriteback ? "!" : ""));
    ops.push_back(reglist_str(i.regs, i.fp_double));
    break;
  case Mnemonic::TBB:
  case Mnemonic::TBH:
    ops.push_back(mem_str(*i.mem));
    break;
  case Mnemonic::MSR:
    ops.push_back(i.sys);
    ops.push_back(reg_name(i.regs[0]));
    break;
  case Mnemonic::MRS:
    ops.push_back(reg_name(i.regs[0]));
    ops.push_back(i.sys);
    break;
  case Mnemonic::VMOV:
    for (size_t k = 0; k < i.regs.size(); ++k) {
      bool dbl = i.regs[k].is_fp() && i.fp_double;
      ops.push_back(reg_name(i.regs[k], dbl));
    }
    break;
  case Mnemonic::VSTR:
  case Mnemonic::VLDR:
    ops.push_back(reg_name(i.regs[0], i.fp_double));
    ops.push_back(mem_str(*i.mem));
    break;
  default:
    for (size_t k = 0; k < i.regs.size(); ++k) {
      std::string r = reg_name(i.regs[k]);
      if (i.last_reg_shift && k + 1 == i.regs.size())
        r += ", lsl " + imm_str(i.last_reg_shift);
      ops.push_back(r);
    }
    if (i.mem) ops.push_back(mem_str(*i.mem));
    if (i.has_imm) ops.push_back(imm_str(i.imm));
    if (i.label) ops.push_back(*i.label);
    break;
  }

  std::string out = m;
  for (size_t k = 0; k < ops.size(); ++k) out += (k ? ", " : " ") + ops[k];
  return out + annotation_str(i.flags);
}

namespace {

std::string data_str(const DataDirective &d) {
  if (d.kind == DataKind::Align) return ".align " + std::to_string(d.align_pow);
  std::string out = d.kind == DataKind::Word ? ".word "
                    : d.kind == DataKind::Hword ? ".hword " : ".byte ";
  for (size_t k = 0; k < d.values.size(); ++k) {
    if (k) out += ", ";
    if (!d.labels[k].empty()) out += d.labels[k];
    else out += std::to_string(d.values[k]);
  }
  return out;
}

}  // namespace

std::string emit_program(const Program &p) {
  std::ostringstream os;
  os << "\t.text\n";
  for (const Function &f : p.functions) {
    os << "\n";
    if (f.is_global) os << "\t.global " << f.name << "\n";
    os << "\t.type " << f.name << ", %function\n";
    if (f.exempt) os << "\t.silhouette_exempt " << f.name << "\n";
    if (f.address_taken) os << "\t.silhouette_addrtaken " << f.name << "\n";
    os << f.name << ":\n";
    for (const FunctionItem &it : f.items) {
      switch (it.kind) {
      case FunctionItem::Kind::Insn:
        os << "\t" << emit_instruction(it.insn) << "\n";
        break;
      case FunctionItem::Kind::Label:
        os << it.label << ":\n";
        break;
      case FunctionItem::Kind::Data:
        os << "\t" << data_str(it.data) << "\n";
        break;
      }
    }
    os << "\t.size " << f.name << ", .-" << f.name << "\n";
  }
  for (const GlobalData &d : p.data) {
    os << "\n";
    if (d.is_global) os << "\t.global " << d.label << "\n";
    os << d.label << ":\n";
    for (const DataDirective &dd : d.directives) os << "\t" << data_str(dd) << "\n";
  }
  return os.str();
}

std::vector<Instruction> make_load_constant(Register rd, uint32_t value,
                                            Cond cond, uint8_t flags) {
  std::vector<Instruction> out;
  Instruction i;
  i.cond = cond;
  i.flags = flags;
  i.regs.push_back(rd);
  i.has_imm = true;
  if (thumb_modified_imm_ok(value)) {
    i.op = Mnemonic::MOV;
    i.imm = value;
    out.push_back(i);
    return out;
  }
  if (value <= 0xffff) {
    i.op = Mnemonic::MOVW;
    i.imm = value;
    out.push_back(i);
    return out;
  }
  i.op = Mnemonic::MOVW;
  i.imm = value & 0xffff;
  out.push_back(i);
  Instruction hi = i;
  hi.op = Mnemonic::MOVT;
  hi.imm = value >> 16;
  out.push_back(hi);
  return out;
}

}  // namespace silhouette
