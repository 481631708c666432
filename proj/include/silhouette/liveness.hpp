//===-- liveness.hpp - Backward core-register liveness over a function ----===//
//
// Supports scratch-register selection in the rewriting passes.  The analysis
// is deliberately conservative: calls keep r0-r3 (and a blx target) live and
// kill nothing; indirect branches are function exits with argument and
// callee-saved registers live; a conditional instruction's writes never kill
// liveness because the write may not execute.
//
//===----------------------------------------------------------------------===//

#pragma once

#include "silhouette/asm.hpp"

#include <cstdint>
#include <optional>

namespace silhouette {

class Liveness {
public:
  explicit Liveness(const Function &f);

  // Register r can be clobbered immediately before item `pos` executes without
  // changing observable behavior.  Core registers only.
  bool dead_before(size_t pos, Register r) const;

  uint16_t live_in_mask(size_t pos) const { return live_in_.at(pos); }

private:
  std::vector<uint16_t> live_in_;
};

// First provably-dead core register before item `position`, searching ip,
// r3, r2, r1, r0, then r4-r11.  sp/lr/pc are never candidates.  Returns
// nothing when every candidate may be live; callers then spill.
std::optional<Register> find_free_register(
    const Function &f, size_t position,
    const std::vector<Register> &excluded = {});

}  // namespace silhouette
