//===-- scanner.hpp - privileged-instruction audit ------------------------===//
//
// Static scan of a (typically hardened) Program for instructions that could
// undermine the permission story at run time: msr/cps/mrs system accesses,
// svc entries into the supervisor, privileged stores outside the sanctioned
// set, and store-exclusives missing their address guard.  The store rules
// only bite under HardenMode::Silhouette; the other two modes leave
// application stores privileged on purpose, so scanning their output for
// privileged stores would be noise.
//
// The store rule here is the static image of the simulator's privstore_app
// counter: a program with no "unhardened-store" finding cannot raise that
// counter above zero, because every executed instruction is some non-exempt
// function's item and would have been reported.
//
//===----------------------------------------------------------------------===//

#pragma once

#include "silhouette/asm.hpp"
#include "silhouette/mpu.hpp"

#include <string>
#include <vector>

namespace silhouette {

enum class Severity : uint8_t { Note, Error };

const char *severity_name(Severity s);

struct Finding {
  std::string function;
  int line = 0;      // source line, 0 for pass-synthesized instructions
  std::string kind;  // msr, cps, mrs, svc, unhardened-store, unguarded-strex,
                     // missing-shadow-store
  Severity severity = Severity::Note;
  std::string detail;  // one-line explanation
};

// `FIND <severity> <function> <line> <kind>`
std::string find_line(const Finding &f);

struct ScanPolicy {
  HardenMode mode = HardenMode::Silhouette;
};

struct ScanReport {
  // Ordered by function appearance, then ascending line.
  std::vector<Finding> findings;

  size_t error_count() const;
  size_t note_count() const;
  // Clean means free of error-severity findings; notes are tolerated.
  bool clean() const { return error_count() == 0; }
};

// Walks every instruction once.  Exempt functions are excused from the store
// rules but their msr/cps occurrences are still surfaced as notes; cps in
// non-exempt code is an error exactly when mpu.hfnmiena is off, because only
// HardFault/NMI escalation keeps a masked fault from being swallowed.
ScanReport scan_privileged(const Program &p, const ScanPolicy &policy,
                           const MpuConfig &mpu);

// Return-integrity check over transformed output: every non-exempt function
// that stores lr anywhere must plant its flagged shadow-stack copy before the
// first call, return, or indirect branch.  Violations come back as error
// findings of kind "missing-shadow-store"; empty means the invariant holds.
std::vector<Finding> check_return_integrity(const Program &p);

// Label coverage over transformed output: every address-taken non-exempt
// function must open with the `mov r0, r0` landing label or indirect calls
// to it will abort.  Violations are error findings of kind
// "missing-cfi-label".
std::vector<Finding> check_label_coverage(const Program &p);

}  // namespace silhouette
