#include "silhouette/asm.hpp"

namespace silhouette {

std::vector<Instruction> dissolve_it_blocks(const std::vector<Instruction> &seq) {
  std::vector<Instruction> out;
  out.reserve(seq.size());
  for (const Instruction &i : seq)
    if (i.op != Mnemonic::IT) out.push_back(i);
  return out;
}

std::vector<Instruction> rebuild_it_blocks(const std::vector<Instruction> &seq) {
  std::vector<Instruction> out;
  out.reserve(seq.size() + seq.size() / 4 + 1);
  size_t i = 0;
  while (i < seq.size()) {
    const Instruction &first = seq[i];
    if (first.op == Mnemonic::IT)
      throw AsmError("rebuild input still contains an it header",
                     first.source_line);
    if (first.cond == Cond::AL) {
      out.push_back(first);
      ++i;
      continue;
    }

    // Open a block at the first uncovered conditional instruction.  Within
    // one contiguous conditional run only the base condition and its inverse
    // may appear.
    Cond base = first.cond;
    Cond alt = invert_cond(base);
    Instruction hdr;
    hdr.op = Mnemonic::IT;
    hdr.source_line = first.source_line;
    hdr.it = ITBlockSpec{base, {}};
    size_t hdr_pos = out.size();
    out.push_back(hdr);

    while (i < seq.size() && out[hdr_pos].it->then_mask.size() < 4) {
      const Instruction &c = seq[i];
      if (c.cond == Cond::AL || c.op == Mnemonic::IT) break;
      if (c.cond != base && c.cond != alt)
        throw AsmError("mixed conditions in one conditional run",
                       c.source_line);
      out[hdr_pos].it->then_mask.push_back(c.cond == base);
      out.push_back(c);
      ++i;
      InsnKind k = classify_instruction(c);
      if (k == InsnKind::DirectBranch || k == InsnKind::IndirectBranch ||
          k == InsnKind::IndirectCall || k == InsnKind::Return)
        break;  // a branch ends its block
    }
  }
  return out;
}

void map_instruction_runs(
    Function &f,
    const std::function<std::vector<Instruction>(std::vector<Instruction>)> &fn) {
  std::vector<FunctionItem> out;
  out.reserve(f.items.size());
  std::vector<Instruction> run;
  auto flush = [&] {
    if (run.empty()) return;
    for (Instruction &i : fn(std::move(run)))
      out.push_back(FunctionItem::make_insn(std::move(i)));
    run.clear();
  };
  for (FunctionItem &it : f.items) {
    if (it.is_insn()) {
      run.push_back(std::move(it.insn));
    } else {
      flush();
      out.push_back(std::move(it));
    }
  }
  flush();
  f.items = std::move(out);
}

}  // namespace silhouette
