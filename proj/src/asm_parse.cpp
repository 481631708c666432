//===-- asm_parse.cpp - GNU-syntax parser for the Thumb-2 subset ----------===//

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <set>

#include "silhouette/asm.hpp"

namespace silhouette {

namespace {

struct Cursor {
  const std::string &s;
  size_t pos = 0;

  bool done() const { return pos >= s.size(); }
  char peek() const { return done() ? '\0' : s[pos]; }
  char get() { return done() ? '\0' : s[pos++]; }
  void skip_ws() {
    while (!done() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }
};

bool is_ident_start(char c) { return std::isalpha((unsigned char)c) || c == '_' || c == '.'; }
bool is_ident_char(char c) { return std::isalnum((unsigned char)c) || c == '_' || c == '.' || c == '$'; }

std::string take_ident(Cursor &c) {
  std::string out;
  if (!is_ident_start(c.peek())) return out;
  while (is_ident_char(c.peek())) out += c.get();
  return out;
}

std::string lower(std::string s) {
  for (char &c : s) c = (char)std::tolower((unsigned char)c);
  return s;
}

std::optional<int64_t> parse_int(const std::string &tok) {
  if (tok.empty()) return std::nullopt;
  size_t i = 0;
  bool neg = false;
  if (tok[i] == '-' || tok[i] == '+') {
    neg = tok[i] == '-';
    ++i;
  }
  if (i >= tok.size()) return std::nullopt;
  int base = 10;
  if (tok.size() - i > 2 && tok[i] == '0' && (tok[i + 1] == 'x' || tok[i + 1] == 'X')) {
    base = 16;
    i += 2;
  }
  const char *begin = tok.c_str() + i;
  char *end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(begin, &end, base);
  if (end == begin || *end != '\0' || errno == ERANGE) return std::nullopt;
  int64_t sv = (int64_t)v;
  return neg ? -sv : sv;
}

std::optional<Register> reg_from_name(const std::string &raw) {
  std::string n = lower(raw);
  if (n == "sp") return SP;
  if (n == "lr") return LR;
  if (n == "pc") return PC;
  if (n == "ip") return IP;
  if (n == "fp") return Register::core(11);
  if (n.size() >= 2 && (n[0] == 'r' || n[0] == 's' || n[0] == 'd')) {
    auto v = parse_int(n.substr(1));
    if (!v) return std::nullopt;
    if (n[0] == 'r' && *v >= 0 && *v <= 15) return Register::core((uint8_t)*v);
    if (n[0] == 's' && *v >= 0 && *v <= 31) return Register::fp((uint8_t)*v);
    // d0-d15 modeled as the even s-register pair base.
    if (n[0] == 'd' && *v >= 0 && *v <= 15) return Register::fp((uint8_t)(*v * 2));
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Operand tokens

struct Operand {
  enum class Kind { Reg, RegWb, RegList, Imm, Mem, MemWb, Label, Shift } kind;
  Register reg;
  std::vector<Register> list;
  bool list_fp_double = false;
  int64_t imm = 0;
  MemOperand mem;
  std::string label;
  uint8_t shift = 0;  // for Kind::Shift (lsl #n)
};

class LineParser {
public:
  LineParser(const std::string &text, int line) : cur_{text}, line_(line) {}

  [[noreturn]] void fail(const std::string &msg) const { throw AsmError(msg, line_); }

  int64_t expect_int(const std::string &tok, const std::string &what) const {
    auto v = parse_int(tok);
    if (!v) fail("malformed " + what + " '" + tok + "'");
    return *v;
  }

  std::vector<Operand> parse_operands() {
    std::vector<Operand> out;
    cur_.skip_ws();
    while (!cur_.done()) {
      out.push_back(parse_one());
      cur_.skip_ws();
      if (cur_.done()) break;
      if (cur_.get() != ',') fail("expected ',' between operands");
      cur_.skip_ws();
      if (cur_.done()) fail("trailing ',' without operand");
    }
    return out;
  }

private:
  Operand parse_one() {
    cur_.skip_ws();
    char c = cur_.peek();
    if (c == '#') {
      cur_.get();
      return parse_imm();
    }
    if (c == '[') return parse_mem();
    if (c == '{') return parse_reglist();
    std::string ident = take_ident(cur_);
    if (ident.empty()) fail(std::string("unexpected character '") + c + "'");
    std::string low = lower(ident);
    if (low == "lsl") {
      cur_.skip_ws();
      if (cur_.peek() != '#') fail("lsl requires an immediate shift");
      cur_.get();
      Operand o;
      o.kind = Operand::Kind::Shift;
      int64_t amt = read_number("shift amount");
      if (amt < 0 || amt > 31) fail("shift amount out of range");
      o.shift = (uint8_t)amt;
      return o;
    }
    if (auto r = reg_from_name(ident)) {
      Operand o;
      o.kind = Operand::Kind::Reg;
      o.reg = *r;
      if (cur_.peek() == '!') {
        cur_.get();
        o.kind = Operand::Kind::RegWb;
      }
      return o;
    }
    Operand o;
    o.kind = Operand::Kind::Label;
    o.label = ident;
    return o;
  }

  int64_t read_number(const std::string &what) {
    cur_.skip_ws();
    std::string tok;
    if (cur_.peek() == '-' || cur_.peek() == '+') tok += cur_.get();
    while (std::isalnum((unsigned char)cur_.peek())) tok += cur_.get();
    return expect_int(tok, what);
  }

  Operand parse_imm() {
    Operand o;
    o.kind = Operand::Kind::Imm;
    o.imm = read_number("immediate");
    return o;
  }

  Operand parse_mem() {
    cur_.get();  // '['
    cur_.skip_ws();
    std::string base_name = take_ident(cur_);
    auto base = reg_from_name(base_name);
    if (!base || !base->is_core()) fail("bad base register '" + base_name + "'");
    MemOperand m;
    m.base = *base;
    cur_.skip_ws();
    if (cur_.peek() == ',') {
      cur_.get();
      cur_.skip_ws();
      if (cur_.peek() == '#') {
        cur_.get();
        m.imm = (int32_t)read_number("offset");
      } else {
        std::string off_name = take_ident(cur_);
        auto off = reg_from_name(off_name);
        if (!off || !off->is_core()) fail("bad offset register '" + off_name + "'");
        m.has_reg_offset = true;
        m.offset_reg = *off;
        cur_.skip_ws();
        if (cur_.peek() == ',') {
          cur_.get();
          cur_.skip_ws();
          std::string sh = lower(take_ident(cur_));
          if (sh != "lsl") fail("only lsl is allowed in addressing");
          cur_.skip_ws();
          if (cur_.get() != '#') fail("lsl requires an immediate");
          int64_t amt = read_number("shift amount");
          if (amt < 0 || amt > 3) fail("address shift must be 0-3");
          m.shift = (uint8_t)amt;
        }
      }
    }
    cur_.skip_ws();
    if (cur_.get() != ']') fail("expected ']'");
    Operand o;
    o.kind = Operand::Kind::Mem;
    o.mem = m;
    if (cur_.peek() == '!') {
      cur_.get();
      o.kind = Operand::Kind::MemWb;
      o.mem.index = IndexMode::PreWriteback;
    }
    return o;
  }

  Operand parse_reglist() {
    cur_.get();  // '{'
    Operand o;
    o.kind = Operand::Kind::RegList;
    bool saw_fp = false, saw_core = false, saw_double = false;
    while (true) {
      cur_.skip_ws();
      std::string name = take_ident(cur_);
      auto first = reg_from_name(name);
      if (!first) fail("bad register '" + name + "' in list");
      char kind_char = (char)std::tolower((unsigned char)name[0]);
      Register last = *first;
      cur_.skip_ws();
      if (cur_.peek() == '-') {
        cur_.get();
        cur_.skip_ws();
        std::string name2 = take_ident(cur_);
        auto r2 = reg_from_name(name2);
        if (!r2 || r2->kind != first->kind) fail("bad register range");
        last = *r2;
      }
      uint8_t step = kind_char == 'd' ? 2 : 1;
      if (last.index < first->index) fail("descending register range");
      for (unsigned i = first->index; i <= last.index; i += step)
        o.list.push_back(Register{first->kind, (uint8_t)i});
      if (first->is_fp()) {
        saw_fp = true;
        if (kind_char == 'd') saw_double = true;
      } else {
        saw_core = true;
      }
      cur_.skip_ws();
      char c = cur_.get();
      if (c == '}') break;
      if (c != ',') fail("expected ',' or '}' in register list");
    }
    if (saw_fp && saw_core) fail("mixed core and FP register list");
    o.list_fp_double = saw_double;
    return o;
  }

  Cursor cur_;
  int line_;
};

// ---------------------------------------------------------------------------
// Mnemonic recognition

struct MnemonicParts {
  Mnemonic op;
  Cond cond = Cond::AL;
  bool sets_flags = false;
  std::optional<ITBlockSpec> it_pattern;  // for IT: mask only, cond from operand
};

const std::map<std::string, Mnemonic> &base_table() {
  static const std::map<std::string, Mnemonic> t = {
      {"mov", Mnemonic::MOV},     {"movw", Mnemonic::MOVW},
      {"movt", Mnemonic::MOVT},   {"add", Mnemonic::ADD},
      {"sub", Mnemonic::SUB},     {"bic", Mnemonic::BIC},
      {"and", Mnemonic::AND},     {"orr", Mnemonic::ORR},
      {"lsl", Mnemonic::LSL},     {"lsr", Mnemonic::LSR},
      {"cmp", Mnemonic::CMP},     {"cbz", Mnemonic::CBZ},
      {"cbnz", Mnemonic::CBNZ},   {"str", Mnemonic::STR},
      {"strb", Mnemonic::STRB},   {"strh", Mnemonic::STRH},
      {"strd", Mnemonic::STRD},   {"stm", Mnemonic::STM},
      {"stmia", Mnemonic::STM},   {"push", Mnemonic::PUSH},
      {"ldr", Mnemonic::LDR},     {"ldrb", Mnemonic::LDRB},
      {"ldrh", Mnemonic::LDRH},   {"ldrd", Mnemonic::LDRD},
      {"ldm", Mnemonic::LDM},     {"ldmia", Mnemonic::LDM},
      {"pop", Mnemonic::POP},     {"strt", Mnemonic::STRT},
      {"strbt", Mnemonic::STRBT}, {"strht", Mnemonic::STRHT},
      {"ldrt", Mnemonic::LDRT},   {"strex", Mnemonic::STREX},
      {"ldrex", Mnemonic::LDREX}, {"b", Mnemonic::B},
      {"bl", Mnemonic::BL},       {"blx", Mnemonic::BLX},
      {"bx", Mnemonic::BX},       {"tbb", Mnemonic::TBB},
      {"tbh", Mnemonic::TBH},     {"nop", Mnemonic::NOP},
      {"svc", Mnemonic::SVC},     {"msr", Mnemonic::MSR},
      {"mrs", Mnemonic::MRS},     {"vmov", Mnemonic::VMOV},
      {"vstr", Mnemonic::VSTR},   {"vldr", Mnemonic::VLDR},
      {"vstm", Mnemonic::VSTM},   {"vstmia", Mnemonic::VSTM},
  };
  return t;
}

bool flag_settable(Mnemonic m) {
  switch (m) {
  case Mnemonic::MOV:
  case Mnemonic::ADD:
  case Mnemonic::SUB:
  case Mnemonic::BIC:
  case Mnemonic::AND:
  case Mnemonic::ORR:
  case Mnemonic::LSL:
  case Mnemonic::LSR:
    return true;
  default:
    return false;
  }
}

std::optional<MnemonicParts> match_mnemonic(const std::string &raw) {
  std::string m = lower(raw);

  // IT family: "it" followed by up to three t/e slots.
  if (m.size() >= 2 && m.substr(0, 2) == "it" &&
      m.find_first_not_of("te", 2) == std::string::npos && m.size() <= 5) {
    MnemonicParts p;
    p.op = Mnemonic::IT;
    ITBlockSpec spec;
    spec.then_mask.push_back(true);
    for (size_t i = 2; i < m.size(); ++i) spec.then_mask.push_back(m[i] == 't');
    p.it_pattern = spec;
    return p;
  }
  // cps / cpsie / cpsid keep their suffix out of the mnemonic table.
  if (m == "cpsie" || m == "cpsid" || m == "cps") {
    MnemonicParts p;
    p.op = Mnemonic::CPS;
    return p;
  }

  std::vector<MnemonicParts> hits;
  for (const auto &[base, op] : base_table()) {
    if (m.size() < base.size() || m.compare(0, base.size(), base) != 0) continue;
    std::string rest = m.substr(base.size());
    MnemonicParts p;
    p.op = op;
    if (!rest.empty() && rest[0] == 's' && flag_settable(op)) {
      p.sets_flags = true;
      rest = rest.substr(1);
    }
    if (!rest.empty()) {
      auto c = cond_from_name(rest);
      if (!c) continue;
      p.cond = *c;
    }
    hits.push_back(p);
  }
  if (hits.empty()) return std::nullopt;
  // "bls"-style overlaps resolve in favour of the longer base mnemonic,
  // matching UAL: the suffix is parsed only after the longest base match.
  std::sort(hits.begin(), hits.end(), [](const MnemonicParts &a, const MnemonicParts &b) {
    return std::string(mnemonic_name(a.op)).size() > std::string(mnemonic_name(b.op)).size();
  });
  return hits.front();
}

// ---------------------------------------------------------------------------
// Instruction assembly from operand tokens

class InsnBuilder {
public:
  InsnBuilder(int line) : line_(line) {}
  [[noreturn]] void fail(const std::string &msg) const { throw AsmError(msg, line_); }

  Instruction build(const MnemonicParts &mp, std::vector<Operand> ops,
                    const std::string &cps_suffix) {
    Instruction i;
    i.op = mp.op;
    i.cond = mp.cond;
    i.sets_flags = mp.sets_flags;
    i.source_line = line_;
    ops_ = std::move(ops);

    switch (i.op) {
    case Mnemonic::MOV: build_mov(i); break;
    case Mnemonic::MOVW:
    case Mnemonic::MOVT: build_mov16(i); break;
    case Mnemonic::ADD:
    case Mnemonic::SUB:
    case Mnemonic::BIC:
    case Mnemonic::AND:
    case Mnemonic::ORR: build_alu3(i); break;
    case Mnemonic::LSL:
    case Mnemonic::LSR: build_shift(i); break;
    case Mnemonic::CMP: build_cmp(i); break;
    case Mnemonic::CBZ:
    case Mnemonic::CBNZ: build_cbz(i); break;
    case Mnemonic::STR:
    case Mnemonic::STRB:
    case Mnemonic::STRH:
    case Mnemonic::LDR:
    case Mnemonic::LDRB:
    case Mnemonic::LDRH: build_mem_single(i); break;
    case Mnemonic::STRT:
    case Mnemonic::STRBT:
    case Mnemonic::STRHT:
    case Mnemonic::LDRT: build_mem_unpriv(i); break;
    case Mnemonic::STRD:
    case Mnemonic::LDRD: build_mem_dual(i); break;
    case Mnemonic::STM:
    case Mnemonic::LDM: build_stm(i); break;
    case Mnemonic::PUSH:
    case Mnemonic::POP: build_push_pop(i); break;
    case Mnemonic::STREX: build_strex(i); break;
    case Mnemonic::LDREX: build_ldrex(i); break;
    case Mnemonic::B:
    case Mnemonic::BL: build_branch_label(i); break;
    case Mnemonic::BX:
    case Mnemonic::BLX: build_branch_reg(i); break;
    case Mnemonic::TBB:
    case Mnemonic::TBH: build_tb(i); break;
    case Mnemonic::IT: build_it(i, mp); break;
    case Mnemonic::NOP: need(0); break;
    case Mnemonic::SVC: build_svc(i); break;
    case Mnemonic::MSR: build_msr(i); break;
    case Mnemonic::MRS: build_mrs(i); break;
    case Mnemonic::CPS: build_cps(i, cps_suffix); break;
    case Mnemonic::VMOV: build_vmov(i); break;
    case Mnemonic::VSTR:
    case Mnemonic::VLDR: build_vmem(i); break;
    case Mnemonic::VSTM: build_vstm(i); break;
    }
    return i;
  }

private:
  void need(size_t n) const {
    if (ops_.size() != n)
      fail("expected " + std::to_string(n) + " operand(s), got " + std::to_string(ops_.size()));
  }
  const Operand &at(size_t k) const { return ops_[k]; }
  Register reg_at(size_t k, const char *what) const {
    if (at(k).kind != Operand::Kind::Reg) fail(std::string("operand must be a register: ") + what);
    return at(k).reg;
  }
  Register core_at(size_t k, const char *what) const {
    Register r = reg_at(k, what);
    if (!r.is_core()) fail(std::string("core register required: ") + what);
    return r;
  }

  void build_mov(Instruction &i) {
    need(2);
    Register rd = core_at(0, "mov destination");
    if (rd.is_pc()) fail("mov to pc is not supported; use bx");
    i.regs.push_back(rd);
    if (at(1).kind == Operand::Kind::Imm) {
      uint32_t v = (uint32_t)at(1).imm;
      if (at(1).imm < 0) fail("mov immediate must be non-negative");
      if (!(v <= 0xff || thumb_modified_imm_ok(v) || v <= 0xffff))
        fail("mov immediate not encodable; use movw/movt");
      i.has_imm = true;
      i.imm = at(1).imm;
    } else {
      i.regs.push_back(core_at(1, "mov source"));
    }
  }

  void build_mov16(Instruction &i) {
    need(2);
    i.regs.push_back(core_at(0, "destination"));
    if (at(1).kind != Operand::Kind::Imm) fail("movw/movt take an immediate");
    if (at(1).imm < 0 || at(1).imm > 0xffff) fail("movw/movt immediate must be 16-bit");
    i.has_imm = true;
    i.imm = at(1).imm;
  }

  void build_alu3(Instruction &i) {
    if (ops_.size() < 3 || ops_.size() > 4) fail("expected 3 operands");
    Register rd = core_at(0, "destination");
    Register rn = core_at(1, "source");
    if (rd.is_pc() || rn.is_pc()) fail("pc is not a valid ALU operand");
    bool sp_ok = i.op == Mnemonic::ADD || i.op == Mnemonic::SUB;
    if ((rd.is_sp() || rn.is_sp()) && !sp_ok) fail("sp is only valid in add/sub");
    i.regs.push_back(rd);
    i.regs.push_back(rn);
    if (at(2).kind == Operand::Kind::Imm) {
      if (ops_.size() == 4) fail("shift applies to register operands only");
      int64_t v = at(2).imm;
      if (v < 0) fail("ALU immediate must be non-negative");
      bool imm12_ok = sp_ok && v <= 4095;
      if (!imm12_ok && !thumb_modified_imm_ok((uint32_t)v))
        fail("immediate not a Thumb-2 modified immediate");
      i.has_imm = true;
      i.imm = v;
    } else {
      Register rm = core_at(2, "operand");
      if (rm.is_pc()) fail("pc is not a valid ALU operand");
      i.regs.push_back(rm);
      if (ops_.size() == 4) {
        if (at(3).kind != Operand::Kind::Shift) fail("expected lsl shift");
        i.last_reg_shift = at(3).shift;
      }
    }
  }

  void build_shift(Instruction &i) {
    need(3);
    i.regs.push_back(core_at(0, "destination"));
    i.regs.push_back(core_at(1, "source"));
    if (at(2).kind == Operand::Kind::Imm) {
      if (at(2).imm < 0 || at(2).imm > 31) fail("shift amount out of range");
      i.has_imm = true;
      i.imm = at(2).imm;
    } else {
      i.regs.push_back(core_at(2, "shift register"));
    }
    for (Register r : i.regs)
      if (r.is_sp() || r.is_pc()) fail("sp/pc not valid in shifts");
  }

  void build_cmp(Instruction &i) {
    need(2);
    Register rn = core_at(0, "compare operand");
    if (rn.is_pc()) fail("pc is not a valid cmp operand");
    i.regs.push_back(rn);
    if (at(1).kind == Operand::Kind::Imm) {
      if (at(1).imm < 0 || !(at(1).imm <= 0xff || thumb_modified_imm_ok((uint32_t)at(1).imm)))
        fail("cmp immediate not encodable");
      i.has_imm = true;
      i.imm = at(1).imm;
    } else {
      i.regs.push_back(core_at(1, "compare operand"));
    }
  }

  void build_cbz(Instruction &i) {
    need(2);
    Register rn = core_at(0, "cbz operand");
    if (rn.index > 7) fail("cbz/cbnz require a low register");
    i.regs.push_back(rn);
    if (at(1).kind != Operand::Kind::Label) fail("cbz/cbnz take a label");
    i.label = at(1).label;
  }

  void check_mem_range(const Instruction &i, const MemOperand &m) {
    if (m.has_reg_offset) {
      if (m.index != IndexMode::Offset) fail("register offset cannot write back");
      if (m.offset_reg.is_sp() || m.offset_reg.is_pc()) fail("bad offset register");
      return;
    }
    int32_t v = m.imm;
    switch (i.op) {
    case Mnemonic::STR:
    case Mnemonic::STRB:
    case Mnemonic::STRH:
    case Mnemonic::LDR:
    case Mnemonic::LDRB:
    case Mnemonic::LDRH:
      if (m.index == IndexMode::Offset) {
        if (v < -255 || v > 4095) fail("offset out of encodable range");
      } else if (v < -255 || v > 255) {
        fail("writeback offset out of range");
      }
      break;
    case Mnemonic::STRT:
    case Mnemonic::STRBT:
    case Mnemonic::STRHT:
    case Mnemonic::LDRT:
      if (v < 0 || v > 255) fail("unprivileged access offset must be 0-255");
      break;
    case Mnemonic::STRD:
    case Mnemonic::LDRD:
    case Mnemonic::VSTR:
    case Mnemonic::VLDR:
      if (v % 4 != 0) fail("offset must be a multiple of 4");
      if (v < -1020 || v > 1020) fail("offset out of range");
      break;
    case Mnemonic::STREX:
    case Mnemonic::LDREX:
      if (v % 4 != 0 || v < 0 || v > 1020) fail("exclusive offset must be 0-1020, word aligned");
      break;
    default: break;
    }
  }

  MemOperand mem_operand(size_t k, bool allow_post, const Instruction &) {
    if (at(k).kind == Operand::Kind::Mem || at(k).kind == Operand::Kind::MemWb) {
      MemOperand m = at(k).mem;
      if (allow_post && k + 1 < ops_.size()) {
        // "[rn], #imm" post-index: bare mem followed by an immediate.
        if (at(k).kind == Operand::Kind::Mem && !m.has_reg_offset && m.imm == 0 &&
            at(k + 1).kind == Operand::Kind::Imm) {
          m.index = IndexMode::PostWriteback;
          m.imm = (int32_t)at(k + 1).imm;
          consumed_post_ = true;
        }
      }
      return m;
    }
    fail("expected memory operand");
  }

  void check_base(const Instruction &i, const MemOperand &m) {
    if (m.base.is_pc() && i.op != Mnemonic::TBB && i.op != Mnemonic::TBH)
      fail("pc-relative addressing requires the label form");
    if (m.index != IndexMode::Offset && m.base.is_pc()) fail("bad writeback base");
  }

  void build_mem_single(Instruction &i) {
    if (ops_.size() < 2) fail("expected register and address");
    Register rt = core_at(0, "transfer register");
    if (rt.is_pc()) fail("pc transfers are not supported");
    bool is_store = i.op == Mnemonic::STR || i.op == Mnemonic::STRB || i.op == Mnemonic::STRH;
    if (is_store && rt.is_sp()) fail("sp cannot be stored directly");
    i.regs.push_back(rt);
    // Literal form: ldr rd, LABEL
    if (!is_store && at(1).kind == Operand::Kind::Label) {
      need(2);
      if (i.op != Mnemonic::LDR) fail("literal loads must use ldr");
      i.label = at(1).label;
      return;
    }
    MemOperand m = mem_operand(1, true, i);
    size_t expect = consumed_post_ ? 3 : 2;
    need(expect);
    check_base(i, m);
    check_mem_range(i, m);
    if (m.index != IndexMode::Offset && m.base == rt && is_store)
      fail("writeback base equals stored register");
    i.mem = m;
  }

  void build_mem_unpriv(Instruction &i) {
    need(2);
    Register rt = core_at(0, "transfer register");
    if (rt.is_pc() || rt.is_sp()) fail("bad transfer register");
    i.regs.push_back(rt);
    MemOperand m = mem_operand(1, false, i);
    if (m.has_reg_offset) fail("unprivileged accesses take immediate offsets only");
    if (m.index != IndexMode::Offset) fail("unprivileged accesses cannot write back");
    check_base(i, m);
    check_mem_range(i, m);
    i.mem = m;
  }

  void build_mem_dual(Instruction &i) {
    need(3);
    Register r1 = core_at(0, "first register");
    Register r2 = core_at(1, "second register");
    if (r1.is_pc() || r2.is_pc() || r1.is_sp() || r2.is_sp()) fail("bad dual register");
    i.regs.push_back(r1);
    i.regs.push_back(r2);
    MemOperand m = mem_operand(2, false, i);
    if (m.has_reg_offset || m.index != IndexMode::Offset)
      fail("strd/ldrd support immediate offset form only");
    check_base(i, m);
    check_mem_range(i, m);
    i.mem = m;
  }

  void build_stm(Instruction &i) {
    need(2);
    if (at(0).kind != Operand::Kind::Reg && at(0).kind != Operand::Kind::RegWb)
      fail("stm/ldm base must be a register");
    Register base = at(0).reg;
    if (!base.is_core() || base.is_pc()) fail("bad stm/ldm base");
    if (at(1).kind != Operand::Kind::RegList) fail("expected register list");
    MemOperand m;
    m.base = base;
    m.index = at(0).kind == Operand::Kind::RegWb ? IndexMode::PostWriteback : IndexMode::Offset;
    i.mem = m;
    i.regs = at(1).list;
    validate_core_list(i.regs, i.op == Mnemonic::LDM);
    if (i.op == Mnemonic::STM && reglist_contains(i.regs, base) && m.index == IndexMode::PostWriteback)
      fail("stm writeback base may not appear in the list");
  }

  void build_push_pop(Instruction &i) {
    need(1);
    if (at(0).kind != Operand::Kind::RegList) fail("expected register list");
    i.regs = at(0).list;
    validate_core_list(i.regs, i.op == Mnemonic::POP);
    if (i.op == Mnemonic::PUSH && reglist_contains(i.regs, PC)) fail("cannot push pc");
    if (i.op == Mnemonic::POP && reglist_contains(i.regs, LR) && reglist_contains(i.regs, PC))
      fail("pop list may not contain both lr and pc");
  }

  void validate_core_list(const std::vector<Register> &list, bool allow_pc) {
    if (list.empty()) fail("empty register list");
    for (Register r : list) {
      if (!r.is_core()) fail("FP registers in core list");
      if (r.is_sp()) fail("sp in register list");
      if (r.is_pc() && !allow_pc) fail("pc not allowed in this list");
    }
    for (size_t k = 1; k < list.size(); ++k)
      if (!(list[k - 1] < list[k])) fail("register list must be ascending");
  }

  void build_strex(Instruction &i) {
    need(3);
    Register rd = core_at(0, "status register");
    Register rt = core_at(1, "transfer register");
    if (rd.is_sp() || rd.is_pc() || rt.is_sp() || rt.is_pc()) fail("bad strex register");
    i.regs.push_back(rd);
    i.regs.push_back(rt);
    MemOperand m = mem_operand(2, false, i);
    if (m.has_reg_offset || m.index != IndexMode::Offset) fail("strex takes [rn, #imm] only");
    if (rd == m.base || rd == rt) fail("strex status register must differ from operands");
    check_base(i, m);
    check_mem_range(i, m);
    i.mem = m;
  }

  void build_ldrex(Instruction &i) {
    need(2);
    Register rt = core_at(0, "transfer register");
    if (rt.is_sp() || rt.is_pc()) fail("bad ldrex register");
    i.regs.push_back(rt);
    MemOperand m = mem_operand(1, false, i);
    if (m.has_reg_offset || m.index != IndexMode::Offset) fail("ldrex takes [rn, #imm] only");
    check_base(i, m);
    check_mem_range(i, m);
    i.mem = m;
  }

  void build_branch_label(Instruction &i) {
    need(1);
    if (at(0).kind != Operand::Kind::Label) fail("branch target must be a label");
    i.label = at(0).label;
  }

  void build_branch_reg(Instruction &i) {
    need(1);
    Register rm = core_at(0, "branch target");
    if (rm.is_pc() || rm.is_sp()) fail("bad branch register");
    i.regs.push_back(rm);
  }

  void build_tb(Instruction &i) {
    need(1);
    MemOperand m = mem_operand(0, false, i);
    if (!m.base.is_pc()) fail("table branches must be pc-based");
    if (!m.has_reg_offset) fail("table branches take an index register");
    uint8_t want_shift = i.op == Mnemonic::TBH ? 1 : 0;
    if (m.shift != want_shift)
      fail(i.op == Mnemonic::TBH ? "tbh requires lsl #1" : "tbb takes no shift");
    i.mem = m;
  }

  void build_it(Instruction &i, const MnemonicParts &mp) {
    need(1);
    if (at(0).kind != Operand::Kind::Label) fail("it takes a condition");
    auto c = cond_from_name(lower(at(0).label));
    if (!c || *c == Cond::AL) fail("bad it condition");
    ITBlockSpec spec = *mp.it_pattern;
    spec.first_cond = *c;
    i.it = spec;
  }

  void build_svc(Instruction &i) {
    need(1);
    if (at(0).kind != Operand::Kind::Imm) fail("svc takes an immediate");
    if (at(0).imm < 0 || at(0).imm > 255) fail("svc immediate must be 0-255");
    i.has_imm = true;
    i.imm = at(0).imm;
  }

  static bool known_sysreg(const std::string &s) {
    static const std::set<std::string> known = {
        "msp", "psp", "primask", "basepri", "faultmask", "control", "apsr", "ipsr", "xpsr"};
    return known.count(s) != 0;
  }

  void build_msr(Instruction &i) {
    need(2);
    if (at(0).kind != Operand::Kind::Label) fail("msr takes a special register name");
    std::string sys = lower(at(0).label);
    if (!known_sysreg(sys)) fail("unknown special register '" + sys + "'");
    i.sys = sys;
    i.regs.push_back(core_at(1, "msr source"));
  }

  void build_mrs(Instruction &i) {
    need(2);
    i.regs.push_back(core_at(0, "mrs destination"));
    if (at(1).kind != Operand::Kind::Label) fail("mrs takes a special register name");
    std::string sys = lower(at(1).label);
    if (!known_sysreg(sys)) fail("unknown special register '" + sys + "'");
    i.sys = sys;
  }

  void build_cps(Instruction &i, const std::string &suffix) {
    if (suffix != "ie" && suffix != "id") fail("cps requires ie/id suffix");
    need(1);
    if (at(0).kind != Operand::Kind::Label) fail("cps takes i or f");
    std::string flag = lower(at(0).label);
    if (flag != "i" && flag != "f") fail("cps flag must be i or f");
    i.sys = suffix + " " + flag;
  }

  void build_vmov(Instruction &i) {
    if (ops_.size() == 2) {
      Register a = reg_at(0, "vmov operand");
      Register b = reg_at(1, "vmov operand");
      if (a.is_fp() == b.is_fp()) fail("vmov must move between core and FP");
      Register core = a.is_fp() ? b : a;
      if (core.is_sp() || core.is_pc()) fail("bad vmov core register");
      i.regs.push_back(a);
      i.regs.push_back(b);
      return;
    }
    if (ops_.size() == 3) {
      // vmov rlo, rhi, dN  |  vmov dN, rlo, rhi
      Register a = reg_at(0, "vmov operand");
      Register b = reg_at(1, "vmov operand");
      Register c = reg_at(2, "vmov operand");
      i.fp_double = true;
      if (a.is_core() && b.is_core() && c.is_fp()) {
        if (c.index % 2 != 0) fail("double-precision register required");
        if (a == b) fail("vmov core registers must differ");
        i.regs = {a, b, c};
      } else if (a.is_fp() && b.is_core() && c.is_core()) {
        if (a.index % 2 != 0) fail("double-precision register required");
        if (b == c) fail("vmov core registers must differ");
        i.regs = {a, b, c};
      } else {
        fail("unsupported vmov form");
      }
      for (Register r : i.regs)
        if (r.is_core() && (r.is_sp() || r.is_pc())) fail("bad vmov core register");
      return;
    }
    fail("unsupported vmov form");
  }

  void build_vmem(Instruction &i) {
    need(2);
    Register rt = reg_at(0, "FP register");
    if (!rt.is_fp()) fail("vstr/vldr transfer an FP register");
    i.regs.push_back(rt);
    i.fp_double = vreg_was_double_;
    if (i.fp_double && rt.index % 2 != 0) fail("double-precision register required");
    MemOperand m = mem_operand(1, false, i);
    if (m.has_reg_offset || m.index != IndexMode::Offset)
      fail("vstr/vldr support immediate offset form only");
    check_base(i, m);
    check_mem_range(i, m);
    i.mem = m;
  }

  void build_vstm(Instruction &i) {
    need(2);
    if (at(0).kind != Operand::Kind::Reg && at(0).kind != Operand::Kind::RegWb)
      fail("vstm base must be a register");
    Register base = at(0).reg;
    if (!base.is_core() || base.is_pc()) fail("bad vstm base");
    if (at(1).kind != Operand::Kind::RegList) fail("expected FP register list");
    for (Register r : at(1).list)
      if (!r.is_fp()) fail("vstm stores FP registers");
    MemOperand m;
    m.base = base;
    m.index = at(0).kind == Operand::Kind::RegWb ? IndexMode::PostWriteback : IndexMode::Offset;
    i.mem = m;
    i.regs = at(1).list;
    i.fp_double = at(1).list_fp_double;
    for (size_t k = 1; k < i.regs.size(); ++k)
      if (!(i.regs[k - 1] < i.regs[k])) fail("register list must be ascending");
  }

public:
  bool vreg_was_double_ = false;

private:
  std::vector<Operand> ops_;
  bool consumed_post_ = false;
  int line_;
};

// ---------------------------------------------------------------------------
// Annotation comments

uint8_t parse_annotations(const std::string &comment, int line) {
  // comment is everything after '@'; only the silhouette: namespace is meaningful.
  const std::string prefix = "silhouette:";
  size_t p = comment.find(prefix);
  if (p == std::string::npos) return 0;
  std::string tags = comment.substr(p + prefix.size());
  size_t end = tags.find_first_of(" \t");
  if (end != std::string::npos) tags = tags.substr(0, end);
  uint8_t flags = 0;
  size_t start = 0;
  while (start <= tags.size()) {
    size_t comma = tags.find(',', start);
    std::string tag = tags.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (tag == "ss-store") flags |= FLAG_SHADOW_STACK_STORE;
    else if (tag == "cfi") flags |= FLAG_CFI_INSERTED;
    else if (tag == "ss") flags |= FLAG_PASS_INSERTED;
    else if (tag == "hardened") flags |= FLAG_HARDENED;
    else if (tag == "sfi-guard") flags |= FLAG_SFI_GUARD;
    else throw AsmError("unknown annotation tag '" + tag + "'", line);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return flags;
}

// ---------------------------------------------------------------------------
// Program-level validation

bool is_branch_mnemonic(Mnemonic m) {
  switch (m) {
  case Mnemonic::B:
  case Mnemonic::BL:
  case Mnemonic::BLX:
  case Mnemonic::BX:
  case Mnemonic::CBZ:
  case Mnemonic::CBNZ:
  case Mnemonic::TBB:
  case Mnemonic::TBH:
    return true;
  default:
    return false;
  }
}

void validate_it_blocks(const Function &f) {
  const auto &items = f.items;
  size_t n = items.size();
  std::vector<bool> covered(n, false);
  for (size_t k = 0; k < n; ++k) {
    if (!items[k].is_insn() || items[k].insn.op != Mnemonic::IT) continue;
    const Instruction &hdr = items[k].insn;
    const ITBlockSpec &spec = *hdr.it;
    size_t len = spec.then_mask.size();
    if (len < 1 || len > 4) throw AsmError("it block must cover 1-4 instructions", hdr.source_line);
    for (size_t j = 0; j < len; ++j) {
      size_t idx = k + 1 + j;
      if (idx >= n || !items[idx].is_insn())
        throw AsmError("it block runs past the end of its coverage", hdr.source_line);
      const Instruction &insn = items[idx].insn;
      Cond want = spec.then_mask[j] ? spec.first_cond : invert_cond(spec.first_cond);
      if (insn.cond != want)
        throw AsmError("condition does not match the it pattern", insn.source_line);
      if (insn.op == Mnemonic::IT) throw AsmError("nested it block", insn.source_line);
      if (insn.op == Mnemonic::CBZ || insn.op == Mnemonic::CBNZ)
        throw AsmError("cbz/cbnz cannot appear in an it block", insn.source_line);
      if (is_branch_mnemonic(insn.op) && j + 1 != len)
        throw AsmError("branch must be the last instruction of an it block", insn.source_line);
      covered[idx] = true;
    }
  }
  for (size_t k = 0; k < n; ++k) {
    if (!items[k].is_insn()) continue;
    const Instruction &insn = items[k].insn;
    if (insn.op == Mnemonic::IT || covered[k]) continue;
    if (insn.cond != Cond::AL && insn.op != Mnemonic::B)
      throw AsmError("conditional instruction outside an it block", insn.source_line);
  }
}

}  // namespace

// ---------------------------------------------------------------------------

const Function *Program::find_function(const std::string &name) const {
  for (const Function &f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

Function *Program::find_function(const std::string &name) {
  for (Function &f : functions)
    if (f.name == name) return &f;
  return nullptr;
}

bool reglist_contains(const std::vector<Register> &regs, Register r) {
  return std::find(regs.begin(), regs.end(), r) != regs.end();
}

bool thumb_modified_imm_ok(uint32_t v) {
  if (v <= 0xff) return true;
  uint32_t lo = v & 0xff;
  uint32_t hi = (v >> 8) & 0xff;
  if (v == (lo | (lo << 16))) return true;              // 00XY00XY
  if (v == ((hi << 8) | (hi << 24))) return true;       // XY00XY00
  if (v == (lo * 0x01010101u)) return true;             // XYXYXYXY
  // Rotated 8-bit field with the top bit set: v == ROR(byte, n), n in 8..31.
  for (unsigned n = 8; n <= 31; ++n) {
    uint32_t byte = (v << n) | (v >> (32 - n));
    if (byte <= 0xff && (byte & 0x80)) return true;
  }
  return false;
}

Program parse_program(const std::string &text) {
  Program prog;
  std::set<std::string> typed_functions;
  std::set<std::string> globals;
  std::set<std::string> exempt, addrtaken;

  Function *cur_fn = nullptr;
  GlobalData *cur_data = nullptr;

  size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos : eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;

    // Split off the comment; keep it for annotations.
    std::string comment;
    size_t at = line.find('@');
    if (at != std::string::npos) {
      comment = line.substr(at + 1);
      line = line.substr(0, at);
    }
    // Trim.
    size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    size_t e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    if (line.empty()) continue;

    // Label definitions; multiple labels per line are not supported.
    if (line.back() == ':' && line.find(':') == line.size() - 1) {
      std::string sym = line.substr(0, line.size() - 1);
      Cursor c{sym};
      std::string ident = take_ident(c);
      if (ident != sym || ident.empty()) throw AsmError("bad label '" + sym + "'", line_no);
      if (typed_functions.count(sym)) {
        if (cur_fn) throw AsmError("function '" + cur_fn->name + "' missing .size", line_no);
        prog.functions.emplace_back();
        cur_fn = &prog.functions.back();
        cur_fn->name = sym;
        cur_fn->source_line = line_no;
        cur_data = nullptr;
      } else if (cur_fn) {
        cur_fn->items.push_back(FunctionItem::make_label(sym));
      } else {
        prog.data.emplace_back();
        cur_data = &prog.data.back();
        cur_data->label = sym;
        cur_data->source_line = line_no;
      }
      continue;
    }

    // Directives.
    if (line[0] == '.') {
      Cursor c{line};
      std::string dir = lower(take_ident(c));
      c.skip_ws();
      std::string rest = line.substr(c.pos);
      auto split_args = [&]() {
        std::vector<std::string> args;
        size_t start = 0;
        while (start <= rest.size()) {
          size_t comma = rest.find(',', start);
          std::string a = rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
          size_t ab = a.find_first_not_of(" \t");
          if (ab == std::string::npos) a.clear();
          else {
            size_t ae = a.find_last_not_of(" \t");
            a = a.substr(ab, ae - ab + 1);
          }
          args.push_back(a);
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
        if (args.size() == 1 && args[0].empty()) args.clear();
        return args;
      };

      if (dir == ".text") continue;
      if (dir == ".global" || dir == ".globl") {
        auto args = split_args();
        if (args.size() != 1) throw AsmError(".global takes one symbol", line_no);
        globals.insert(args[0]);
        continue;
      }
      if (dir == ".type") {
        auto args = split_args();
        if (args.size() != 2 || args[1] != "%function")
          throw AsmError(".type expects 'name, %function'", line_no);
        typed_functions.insert(args[0]);
        continue;
      }
      if (dir == ".size") {
        auto args = split_args();
        if (args.size() != 2) throw AsmError(".size expects 'name, .-name'", line_no);
        if (!cur_fn || cur_fn->name != args[0])
          throw AsmError(".size does not match the open function", line_no);
        if (args[1] != ".-" + args[0])
          throw AsmError(".size expression must be .-" + args[0], line_no);
        cur_fn = nullptr;
        continue;
      }
      if (dir == ".silhouette_exempt" || dir == ".silhouette_addrtaken") {
        auto args = split_args();
        if (args.size() != 1) throw AsmError(dir + " takes one symbol", line_no);
        (dir == ".silhouette_exempt" ? exempt : addrtaken).insert(args[0]);
        continue;
      }
      if (dir == ".word" || dir == ".byte" || dir == ".hword" || dir == ".align") {
        DataDirective d;
        d.source_line = line_no;
        if (dir == ".align") {
          d.kind = DataKind::Align;
          auto args = split_args();
          if (args.size() != 1) throw AsmError(".align takes one argument", line_no);
          auto v = parse_int(args[0]);
          if (!v || *v < 0 || *v > 8) throw AsmError("bad .align argument", line_no);
          d.align_pow = (int)*v;
        } else {
          d.kind = dir == ".word" ? DataKind::Word : dir == ".byte" ? DataKind::Byte : DataKind::Hword;
          auto args = split_args();
          if (args.empty()) throw AsmError(dir + " needs at least one value", line_no);
          for (const std::string &a : args) {
            if (auto v = parse_int(a)) {
              int64_t lim = d.kind == DataKind::Word ? 0xffffffffLL
                            : d.kind == DataKind::Hword ? 0xffffLL : 0xffLL;
              if (*v > lim || *v < -(lim / 2 + 1))
                throw AsmError("value out of range for " + dir, line_no);
              d.labels.emplace_back();
              d.values.push_back(*v);
            } else {
              Cursor ac{a};
              std::string ident = take_ident(ac);
              if (ident != a || ident.empty())
                throw AsmError("bad " + dir + " entry '" + a + "'", line_no);
              d.labels.push_back(a);
              d.values.push_back(0);
            }
          }
        }
        if (cur_fn) cur_fn->items.push_back(FunctionItem::make_data(d));
        else if (cur_data) cur_data->directives.push_back(d);
        else throw AsmError("data directive outside any function or data block", line_no);
        continue;
      }
      throw AsmError("unknown directive '" + dir + "'", line_no);
    }

    // Instruction.
    Cursor c{line};
    std::string mtok = take_ident(c);
    if (mtok.empty()) throw AsmError("cannot parse line", line_no);
    std::string cps_suffix;
    std::string mlow = lower(mtok);
    if (mlow == "cpsie" || mlow == "cpsid") cps_suffix = mlow.substr(3);
    auto mp = match_mnemonic(mtok);
    if (!mp) throw AsmError("unknown mnemonic '" + mtok + "'", line_no);
    std::string operand_text = line.substr(c.pos);
    LineParser lp(operand_text, line_no);
    std::vector<Operand> ops = lp.parse_operands();
    InsnBuilder builder(line_no);
    // vstr/vldr need to know whether the written register was a d-name.
    if (mp->op == Mnemonic::VSTR || mp->op == Mnemonic::VLDR) {
      Cursor oc{operand_text};
      oc.skip_ws();
      std::string first = take_ident(oc);
      builder.vreg_was_double_ = !first.empty() && (first[0] == 'd' || first[0] == 'D');
    }
    Instruction insn = builder.build(*mp, std::move(ops), cps_suffix);
    insn.flags = parse_annotations(comment, line_no);
    if (!cur_fn) throw AsmError("instruction outside any function", line_no);
    cur_fn->items.push_back(FunctionItem::make_insn(insn));
  }
  if (cur_fn) throw AsmError("function '" + cur_fn->name + "' missing .size", 0);

  // Apply symbol attributes.
  for (Function &f : prog.functions) {
    f.is_global = globals.count(f.name) != 0;
    f.exempt = exempt.count(f.name) != 0;
    f.address_taken = addrtaken.count(f.name) != 0;
  }
  for (GlobalData &d : prog.data) d.is_global = globals.count(d.label) != 0;
  for (const std::string &s : exempt)
    if (!prog.find_function(s)) throw AsmError(".silhouette_exempt names unknown function '" + s + "'", 0);
  for (const std::string &s : addrtaken)
    if (!prog.find_function(s)) throw AsmError(".silhouette_addrtaken names unknown function '" + s + "'", 0);

  // Symbol tables for branch resolution.
  std::set<std::string> fn_names, data_labels;
  for (const Function &f : prog.functions) {
    if (!fn_names.insert(f.name).second)
      throw AsmError("duplicate function '" + f.name + "'", f.source_line);
  }
  for (const GlobalData &d : prog.data) data_labels.insert(d.label);
  static const std::set<std::string> externals = {"setjmp", "longjmp"};

  for (const Function &f : prog.functions) {
    std::set<std::string> locals;
    for (const FunctionItem &it : f.items)
      if (it.is_label()) {
        if (!locals.insert(it.label).second)
          throw AsmError("duplicate label '" + it.label + "' in " + f.name, f.source_line);
        if (fn_names.count(it.label) || data_labels.count(it.label))
          throw AsmError("label '" + it.label + "' shadows a global symbol", f.source_line);
      }
    auto resolvable = [&](const std::string &sym) {
      return locals.count(sym) || fn_names.count(sym) || data_labels.count(sym) ||
             externals.count(sym);
    };
    for (const FunctionItem &it : f.items) {
      if (it.is_insn() && it.insn.label) {
        if (!resolvable(*it.insn.label))
          throw AsmError("unresolved symbol '" + *it.insn.label + "'", it.insn.source_line);
      }
      if (it.is_data()) {
        for (const std::string &l : it.data.labels)
          if (!l.empty() && !resolvable(l))
            throw AsmError("unresolved symbol '" + l + "'", it.data.source_line);
      }
    }
    validate_it_blocks(f);
  }
  for (const GlobalData &gd : prog.data)
    for (const DataDirective &d : gd.directives)
      for (const std::string &l : d.labels)
        if (!l.empty() && !fn_names.count(l) && !data_labels.count(l))
          throw AsmError("unresolved symbol '" + l + "'", d.source_line);

  return prog;
}

}  // namespace silhouette
