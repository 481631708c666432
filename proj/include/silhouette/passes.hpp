//===-- passes.hpp - Hardening passes: shadow stack, stores, CFI ----------===//
//
// Three source-to-source rewrites over the parsed Program.  Pipeline order is
// shadow stack, then store hardening, then CFI: store hardening keys off the
// flags the shadow-stack pass plants, and CFI check sequences deliberately use
// regular stores that must not be rewritten afterwards.  Exempt functions pass
// through every stage untouched.
//
//===----------------------------------------------------------------------===//

#pragma once

#include "silhouette/asm.hpp"
#include "silhouette/layout.hpp"
#include "silhouette/mpu.hpp"

#include <vector>

namespace silhouette {

// ---------------------------------------------------------------------------
// Shadow stack

struct ShadowStackPlan {
  // Fixed displacement between any regular-stack slot and its shadow copy.
  // Mirrored slots land in the shadow band because the band itself sits at
  // this same displacement above the stack band.
  uint32_t offset = 0;
  Register scratch = IP;
};

ShadowStackPlan make_shadow_plan(const MemoryLayout &layout);

// Rejects functions whose stack pointer moves by anything but a compile-time
// constant, or that reload sp from memory or another register.  Throws
// AsmError naming the offending line.
void check_constant_frame(const Function &f);

// Duplicates the return address into the shadow stack right after the prologue
// instruction that stacks lr, and rewrites every epilogue to return through
// the shadow copy.  Functions that never store lr are returned unchanged.
// Unrecognized prologue or epilogue shapes throw.
Function shadow_stack_transform(const Function &f, const ShadowStackPlan &plan);

Program shadow_stack_pass(const Program &p, const MemoryLayout &layout);

// ---------------------------------------------------------------------------
// Store hardening

struct BicMaskPair {
  uint32_t mask1 = 0;
  uint32_t mask2 = 0;
};

// Two Thumb modified-immediate masks whose successive BIC application maps
// every 32-bit address outside the shadow band while leaving stack and heap
// addresses unchanged.  Throws "unmaskable layout" when the bands admit no
// such pair.
BicMaskPair bic_masks(const MemoryLayout &layout);

// Silhouette: every store except the flagged shadow-stack store becomes an
// unprivileged strt/strbt/strht sequence; Store-Exclusives keep their
// privileged form behind a two-BIC address guard.  Invert: only the flagged
// store (and the matching epilogue shadow load) change, to strt/ldrt through
// a materialized address.  SFI: every unflagged store runs through a two-BIC
// masked copy of its effective address and stays privileged.
Function harden_function(const Function &f, HardenMode mode,
                         const MemoryLayout &layout);

Program store_harden_pass(const Program &p, HardenMode mode,
                          const MemoryLayout &layout);

// ---------------------------------------------------------------------------
// CFI

// Halfword value of the label instruction `mov r0, r0`.
inline constexpr uint16_t kCfiLabelValue = 0x4600;
inline constexpr const char *kCfiAbortSymbol = "__cfi_abort";

// Prepends the label instruction to every address-taken non-exempt function.
// Idempotent.
void insert_function_labels(Program &p);

// Labels plus a check before every indirect call and indirect tail call that
// the target's first halfword is the label value; failing checks branch to
// the appended __cfi_abort stub.  Returns (bx lr) and table dispatch
// (tbb/tbh) are not instrumented.
Program cfi_pass(const Program &p);

struct JumpTableIssue {
  std::string function;
  int line = 0;
  std::string what;
};

// Checks every tbb/tbh for a dominating index bound check consistent with the
// entry count, and that all entries target labels of the same function.
std::vector<JumpTableIssue> verify_jump_tables(const Function &f);
std::vector<JumpTableIssue> verify_jump_tables(const Program &p);

}  // namespace silhouette
