//===-- sim_loader.cpp - address assignment and image materialization -----===//

#include "silhouette/sim.hpp"

#include <cassert>

namespace silhouette {

namespace {

uint32_t align_up(uint32_t x, uint32_t a) { return (x + a - 1) & ~(a - 1); }

// The one instruction with a meaningful encoding: the CFI label.  Everything
// else is filled with permanently undefined halfwords so that no unrelated
// code byte can satisfy a label check.
bool is_cfi_label_shape(const Instruction &i) {
  return i.op == Mnemonic::MOV && i.cond == Cond::AL && !i.sets_flags &&
         !i.has_imm && !i.mem && !i.label && !i.it && i.regs.size() == 2 &&
         i.regs[0] == Register::core(0) && i.regs[1] == Register::core(0) &&
         i.last_reg_shift == 0;
}

constexpr uint16_t kCfiLabelHalf = 0x4600;
constexpr uint16_t kUndefHalf = 0xDE00;

}  // namespace

LoadedProgram::LoadedProgram(Program p, MemoryLayout l)
    : program_(std::move(p)), layout_(std::move(l)) {
  validate_layout(layout_);
  locals_.resize(program_.functions.size());

  // Address assignment: functions first, then the runtime stubs, all within
  // the code band; globals go to the start of the heap band.
  uint32_t cursor = layout_.code.base;
  for (size_t fi = 0; fi < program_.functions.size(); ++fi) {
    const Function &f = program_.functions[fi];
    cursor = align_up(cursor, 4);
    if (symbols_.count(f.name))
      throw AsmError("duplicate symbol '" + f.name + "'", f.source_line);
    symbols_[f.name] = cursor;
    entries_[cursor] = fi;
    for (size_t ii = 0; ii < f.items.size(); ++ii) {
      const FunctionItem &item = f.items[ii];
      switch (item.kind) {
      case FunctionItem::Kind::Label:
        locals_[fi][item.label] = cursor;
        break;
      case FunctionItem::Kind::Insn: {
        CodeSite s;
        s.addr = cursor;
        s.size = instruction_size(item.insn);
        s.func = fi;
        s.item = ii;
        sites_[cursor] = s;
        cursor += s.size;
        break;
      }
      case FunctionItem::Kind::Data:
        switch (item.data.kind) {
        case DataKind::Align:
          cursor = align_up(cursor, 1u << item.data.align_pow);
          break;
        case DataKind::Word:
          cursor += 4 * (uint32_t)item.data.values.size();
          break;
        case DataKind::Hword:
          cursor += 2 * (uint32_t)item.data.values.size();
          break;
        case DataKind::Byte:
          cursor += (uint32_t)item.data.values.size();
          break;
        }
        break;
      }
    }
  }
  cursor = align_up(cursor, 4);
  if (!symbols_.count("setjmp")) {
    setjmp_addr_ = cursor;
    symbols_["setjmp"] = cursor;
    cursor += 4;
  }
  if (!symbols_.count("longjmp")) {
    longjmp_addr_ = cursor;
    symbols_["longjmp"] = cursor;
    cursor += 4;
  }
  if (cursor - layout_.code.base > layout_.code.size)
    throw AsmError("program does not fit in the code region", 0);
  used_code_ = MemRange{layout_.code.base, cursor - layout_.code.base};
  bytes_.assign(cursor - layout_.code.base, 0);

  uint32_t gcursor = layout_.heap.base;
  for (const GlobalData &gd : program_.data) {
    gcursor = align_up(gcursor, 4);
    if (symbols_.count(gd.label))
      throw AsmError("duplicate symbol '" + gd.label + "'", gd.source_line);
    symbols_[gd.label] = gcursor;
    for (const DataDirective &d : gd.directives) {
      switch (d.kind) {
      case DataKind::Align: gcursor = align_up(gcursor, 1u << d.align_pow); break;
      case DataKind::Word: gcursor += 4 * (uint32_t)d.values.size(); break;
      case DataKind::Hword: gcursor += 2 * (uint32_t)d.values.size(); break;
      case DataKind::Byte: gcursor += (uint32_t)d.values.size(); break;
      }
    }
    if (gcursor - layout_.heap.base > layout_.heap.size)
      throw AsmError("globals do not fit in the heap region", gd.source_line);
  }

  // Byte materialization.
  auto put8 = [&](uint32_t addr, uint8_t v) { bytes_[addr - layout_.code.base] = v; };
  auto put16 = [&](uint32_t addr, uint16_t v) {
    put8(addr, (uint8_t)(v & 0xff));
    put8(addr + 1, (uint8_t)(v >> 8));
  };
  auto put32 = [&](uint32_t addr, uint32_t v) {
    put16(addr, (uint16_t)(v & 0xffff));
    put16(addr + 2, (uint16_t)(v >> 16));
  };

  // A .word naming a function yields its entry with the Thumb bit set, which
  // is what an indirect call needs; any other symbol yields the plain address.
  auto symbol_value = [&](size_t fi, const std::string &name, int line) {
    std::optional<uint32_t> a = resolve(fi, name);
    if (!a) throw AsmError("unresolved symbol '" + name + "'", line);
    const Function *fn = entry_at(*a);
    return fn ? (*a | 1u) : *a;
  };

  for (size_t fi = 0; fi < program_.functions.size(); ++fi) {
    const Function &f = program_.functions[fi];
    uint32_t at = *symbol(f.name);
    std::optional<uint32_t> table_base;  // pc of the innermost preceding tbb/tbh
    for (const FunctionItem &item : f.items) {
      if (item.is_label()) continue;
      if (item.is_insn()) {
        const Instruction &in = item.insn;
        unsigned size = instruction_size(in);
        if (is_cfi_label_shape(in)) {
          put16(at, kCfiLabelHalf);
        } else {
          for (unsigned off = 0; off < size; off += 2) put16(at + off, kUndefHalf);
        }
        if (in.op == Mnemonic::TBB || in.op == Mnemonic::TBH)
          table_base = at + 4;
        at += size;
        continue;
      }
      const DataDirective &d = item.data;
      switch (d.kind) {
      case DataKind::Align:
        at = align_up(at, 1u << d.align_pow);
        break;
      case DataKind::Word:
        for (size_t k = 0; k < d.values.size(); ++k) {
          uint32_t v = d.labels[k].empty()
                           ? (uint32_t)d.values[k]
                           : symbol_value(fi, d.labels[k], d.source_line);
          put32(at, v);
          at += 4;
        }
        break;
      case DataKind::Hword:
      case DataKind::Byte: {
        unsigned esize = d.kind == DataKind::Byte ? 1 : 2;
        for (size_t k = 0; k < d.values.size(); ++k) {
          uint32_t v;
          if (d.labels[k].empty()) {
            v = (uint32_t)d.values[k];
          } else {
            // Dispatch-table entry: halfword distance from the table base.
            if (!table_base)
              throw AsmError("label table entry without a preceding tbb/tbh",
                             d.source_line);
            std::optional<uint32_t> target = resolve(fi, d.labels[k]);
            if (!target)
              throw AsmError("unresolved symbol '" + d.labels[k] + "'",
                             d.source_line);
            if (*target < *table_base || (*target - *table_base) % 2 != 0)
              throw AsmError("table entry '" + d.labels[k] +
                                 "' not an even forward offset", d.source_line);
            v = (*target - *table_base) / 2;
          }
          uint32_t limit = esize == 1 ? 0xffu : 0xffffu;
          if (v > limit)
            throw AsmError("table entry out of range", d.source_line);
          if (esize == 1) put8(at, (uint8_t)v); else put16(at, (uint16_t)v);
          at += esize;
        }
        break;
      }
      }
    }
  }

  for (const GlobalData &gd : program_.data) {
    uint32_t at = *symbol(gd.label);
    auto gput8 = [&](uint32_t a, uint8_t v) { globals_[a] = v; };
    for (const DataDirective &d : gd.directives) {
      switch (d.kind) {
      case DataKind::Align:
        at = align_up(at, 1u << d.align_pow);
        break;
      case DataKind::Word:
        for (size_t k = 0; k < d.values.size(); ++k) {
          uint32_t v;
          if (d.labels[k].empty()) {
            v = (uint32_t)d.values[k];
          } else {
            std::optional<uint32_t> a = symbol(d.labels[k]);
            if (!a)
              throw AsmError("unresolved symbol '" + d.labels[k] + "'",
                             d.source_line);
            v = entry_at(*a) ? (*a | 1u) : *a;
          }
          for (unsigned b = 0; b < 4; ++b) gput8(at + b, (uint8_t)(v >> (8 * b)));
          at += 4;
        }
        break;
      case DataKind::Hword:
      case DataKind::Byte:
        for (size_t k = 0; k < d.values.size(); ++k) {
          if (!d.labels[k].empty())
            throw AsmError("label table entry outside a function", d.source_line);
          uint32_t v = (uint32_t)d.values[k];
          gput8(at, (uint8_t)(v & 0xff));
          if (d.kind == DataKind::Hword) gput8(at + 1, (uint8_t)((v >> 8) & 0xff));
          at += d.kind == DataKind::Hword ? 2 : 1;
        }
        break;
      }
    }
  }
}

const CodeSite *LoadedProgram::site_at(uint32_t addr) const {
  auto it = sites_.find(addr);
  return it == sites_.end() ? nullptr : &it->second;
}

std::optional<uint32_t> LoadedProgram::symbol(const std::string &name) const {
  auto it = symbols_.find(name);
  if (it == symbols_.end()) return std::nullopt;
  return it->second;
}

std::optional<uint32_t> LoadedProgram::resolve(size_t func,
                                               const std::string &name) const {
  assert(func < locals_.size());
  auto it = locals_[func].find(name);
  if (it != locals_[func].end()) return it->second;
  return symbol(name);
}

const Function *LoadedProgram::entry_at(uint32_t addr) const {
  auto it = entries_.find(addr);
  return it == entries_.end() ? nullptr : &program_.functions[it->second];
}

uint8_t LoadedProgram::code_byte(uint32_t addr) const {
  assert(in_code(addr));
  return bytes_[addr - layout_.code.base];
}

}  // namespace silhouette
