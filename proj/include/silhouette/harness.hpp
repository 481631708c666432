//===-- harness.hpp - pipeline orchestration, differential tests, metrics --===//
//
// Ties the passes, scanner, and simulator together: run_pipeline applies the
// enabled passes in their one legal order (shadow stack, store hardening,
// CFI) and scans the result; differential_check compares a variant against
// its baseline on declared workloads; attack_suite throws the bundled
// write-what-where campaign at a hardened program; measure produces the
// static/dynamic overhead table across the standard variant set.
//
//===----------------------------------------------------------------------===//

#pragma once

#include "silhouette/asm.hpp"
#include "silhouette/layout.hpp"
#include "silhouette/mpu.hpp"
#include "silhouette/passes.hpp"
#include "silhouette/scanner.hpp"
#include "silhouette/sim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace silhouette {

// --- Workloads and manifests ------------------------------------------------

// One benchmark invocation: entry arguments, memory preloads, and what the
// differential check is allowed to observe afterwards.
struct Workload {
  std::string entry = "main";
  uint32_t r0 = 0;
  uint32_t r1 = 0;
  std::vector<std::pair<uint32_t, uint32_t>> preload;  // addr, word
  std::vector<MemRange> outputs;  // byte ranges compared across variants
  std::optional<uint32_t> expect_r0;
  uint64_t fuel = 2'000'000;
};

struct Manifest {
  Workload workload;
  std::string kind;  // descriptive tag, e.g. "store-heavy"
};

// Line-oriented `key = value` ('#' comments).  Keys: entry, arg0, arg1,
// expect_r0, fuel, kind, preload (addr:word,word,...; repeatable), output
// (lo..hi, end exclusive; repeatable).  Unknown keys are an error.
Manifest parse_manifest(const std::string &text);

RunOptions run_options(const Workload &wl);

// --- Pipeline ---------------------------------------------------------------

struct PassToggles {
  bool shadow_stack = true;
  bool store_harden = true;
  bool cfi = true;
};

struct PipelineConfig {
  HardenMode mode = HardenMode::Silhouette;
  MemoryLayout layout = default_layout();
  PassToggles passes;
};

struct PipelineResult {
  Program program;
  std::string text;  // emitted artifact
  ScanReport scan;   // mode-aware; partial pipelines report accordingly
  MpuConfig mpu;
  std::vector<JumpTableIssue> table_issues;
};

// Pass errors propagate as AsmError.  Scan findings never throw; the caller
// decides what a non-clean report means for its exit code.
PipelineResult run_pipeline(const Program &input, const PipelineConfig &cfg);

// --- Differential testing ---------------------------------------------------

struct DiffVerdict {
  bool pass = false;
  std::string detail;  // first divergence, empty when pass
};

// Runs baseline and variant on every workload and compares the observables:
// both must halt, final r0 must match, and every declared output range must
// be byte-identical.  The baseline runs under the Silhouette-shaped MPU
// config (its stores are privileged, so the shadow region's protection is
// irrelevant to it); the variant under the config for variant_mode.
DiffVerdict differential_check(const Program &baseline, const Program &variant,
                               HardenMode variant_mode,
                               const MemoryLayout &layout,
                               const std::vector<Workload> &workloads);

// --- Attack campaign --------------------------------------------------------

enum class AttackOutcome { DefeatedTrap, DefeatedNoEffect, Hijack };

const char *attack_outcome_name(AttackOutcome o);

struct AttackResult {
  std::string name;
  AttackOutcome outcome = AttackOutcome::Hijack;
  std::string detail;
};

struct SecurityReport {
  std::vector<AttackResult> results;
  bool all_defeated() const;
};

// The bundled write-what-where campaign, synthesized against the loaded
// image: return-slot overwrite, function-pointer redirection to a function
// interior and to an unlabeled exempt entry, a direct shadow-slot write, a
// store-pointer poison aimed at exclusive stores, and an MPU-aperture write.
// Attacks whose natural victim is absent from the program degrade to a
// harmless heap write so every class still fires.
std::vector<AttackSpec> bundled_attacks(const LoadedProgram &prog,
                                        HardenMode mode, const Workload &wl);

// One run per attack, each against a fresh machine, classified by outcome:
// trapped runs are defeated-trap, clean runs defeated-no-effect (the detail
// notes any exit divergence), and an oracle-detected hijack fails the suite.
SecurityReport attack_suite(const Program &hardened,
                            const MemoryLayout &layout, HardenMode mode,
                            const Workload &wl);

// --- Metrics ----------------------------------------------------------------

// The measured variant set, in report order.  baseline applies no pass; ss,
// sh, and cfi each apply a single pass (sh without shadow-stack flags hardens
// every store); the last three run the full pipeline in the named mode.
const std::vector<std::string> &bench_variants();

// Builds the named variant of a baseline program.  Unknown names throw.
Program build_variant(const Program &base, const std::string &variant,
                      const MemoryLayout &layout);

// MPU config the variant runs under: full-pipeline variants use their own
// mode, everything else the Silhouette-shaped baseline config.
HardenMode variant_config_mode(const std::string &variant);

struct VariantMetrics {
  std::string variant;
  uint64_t static_bytes = 0;
  uint64_t dynamic_insns = 0;
  double static_ratio = 1.0;   // vs baseline
  double dynamic_ratio = 1.0;  // vs baseline
};

struct ProgramMetrics {
  std::string program;
  std::vector<VariantMetrics> variants;  // bench_variants() order
};

struct Metrics {
  std::vector<ProgramMetrics> programs;
  std::vector<VariantMetrics> geomean;  // ratios aggregated across programs
};

struct BenchProgram {
  std::string name;
  Program baseline;
  Workload workload;
};

// Loaded-image code bytes, alignment included.
uint64_t static_code_bytes(const Program &p, const MemoryLayout &layout);

// Runs every variant of every benchmark and fills the ratio table.  A variant
// that fails to halt or misses its expected result throws; callers are
// expected to have differential-checked the corpus first.
Metrics measure(const std::vector<BenchProgram> &benchmarks,
                const MemoryLayout &layout);

}  // namespace silhouette
