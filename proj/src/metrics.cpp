//===-- metrics.cpp - static and dynamic overhead measurement --------------===//

#include "silhouette/harness.hpp"

#include <cmath>
#include <stdexcept>

namespace silhouette {

const std::vector<std::string> &bench_variants() {
  static const std::vector<std::string> v = {
      "baseline", "ss", "sh", "cfi", "silhouette", "invert", "sfi"};
  return v;
}

Program build_variant(const Program &base, const std::string &variant,
                      const MemoryLayout &layout) {
  if (variant == "baseline") return base;
  PipelineConfig cfg;
  cfg.layout = layout;
  if (variant == "ss") {
    cfg.passes = {true, false, false};
  } else if (variant == "sh") {
    cfg.passes = {false, true, false};
  } else if (variant == "cfi") {
    cfg.passes = {false, false, true};
  } else if (variant == "silhouette") {
    cfg.mode = HardenMode::Silhouette;
  } else if (variant == "invert") {
    cfg.mode = HardenMode::Invert;
  } else if (variant == "sfi") {
    cfg.mode = HardenMode::SFI;
  } else {
    throw std::runtime_error("unknown bench variant '" + variant + "'");
  }
  return run_pipeline(base, cfg).program;
}

HardenMode variant_config_mode(const std::string &variant) {
  if (variant == "invert") return HardenMode::Invert;
  if (variant == "sfi") return HardenMode::SFI;
  return HardenMode::Silhouette;
}

uint64_t static_code_bytes(const Program &p, const MemoryLayout &layout) {
  LoadedProgram lp(p, layout);
  return lp.code_end() - layout.code.base;
}

Metrics measure(const std::vector<BenchProgram> &benchmarks,
                const MemoryLayout &layout) {
  Metrics out;
  for (const BenchProgram &b : benchmarks) {
    ProgramMetrics pm;
    pm.program = b.name;
    uint64_t base_static = 0, base_dyn = 0;
    for (const std::string &variant : bench_variants()) {
      Program prog = build_variant(b.baseline, variant, layout);
      VariantMetrics vm;
      vm.variant = variant;
      vm.static_bytes = static_code_bytes(prog, layout);

      LoadedProgram lp(prog, layout);
      Machine m(lp, build_layout_config(layout, variant_config_mode(variant)));
      RunResult res = m.run(run_options(b.workload));
      if (res.status != RunStatus::Halted || res.hijack)
        throw std::runtime_error("bench " + b.name + "/" + variant +
                                 ": run did not halt cleanly (" +
                                 res.security_verdict() + ")");
      if (b.workload.expect_r0 && res.exit_value != *b.workload.expect_r0)
        throw std::runtime_error(
            "bench " + b.name + "/" + variant + ": exit " +
            std::to_string(res.exit_value) + " misses expected " +
            std::to_string(*b.workload.expect_r0));
      vm.dynamic_insns = res.exec;

      if (variant == "baseline") {
        base_static = vm.static_bytes;
        base_dyn = vm.dynamic_insns;
      }
      vm.static_ratio = (double)vm.static_bytes / (double)base_static;
      vm.dynamic_ratio = (double)vm.dynamic_insns / (double)base_dyn;
      pm.variants.push_back(vm);
    }
    out.programs.push_back(std::move(pm));
  }

  // Geometric mean of the ratios per variant; byte and instruction columns
  // have no meaningful aggregate and stay zero.
  if (!out.programs.empty()) {
    size_t nv = bench_variants().size();
    for (size_t v = 0; v < nv; ++v) {
      VariantMetrics g;
      g.variant = bench_variants()[v];
      double ls = 0, ld = 0;
      for (const ProgramMetrics &pm : out.programs) {
        ls += std::log(pm.variants[v].static_ratio);
        ld += std::log(pm.variants[v].dynamic_ratio);
      }
      g.static_ratio = std::exp(ls / (double)out.programs.size());
      g.dynamic_ratio = std::exp(ld / (double)out.programs.size());
      out.geomean.push_back(g);
    }
  }
  return out;
}

}  // namespace silhouette
