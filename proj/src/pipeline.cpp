//===-- pipeline.cpp - pass orchestration and differential testing ---------===//

#include "silhouette/harness.hpp"

#include <cstdio>

namespace silhouette {

PipelineResult run_pipeline(const Program &input, const PipelineConfig &cfg) {
  PipelineResult r;
  Program p = input;
  if (cfg.passes.shadow_stack) p = shadow_stack_pass(p, cfg.layout);
  if (cfg.passes.store_harden) p = store_harden_pass(p, cfg.mode, cfg.layout);
  if (cfg.passes.cfi) p = cfi_pass(p);
  r.mpu = build_layout_config(cfg.layout, cfg.mode);
  r.scan = scan_privileged(p, ScanPolicy{cfg.mode}, r.mpu);
  r.table_issues = verify_jump_tables(p);
  r.text = emit_program(p);
  r.program = std::move(p);
  return r;
}

RunOptions run_options(const Workload &wl) {
  RunOptions opt;
  opt.entry = wl.entry;
  opt.r0 = wl.r0;
  opt.r1 = wl.r1;
  opt.preload = wl.preload;
  opt.fuel = wl.fuel;
  return opt;
}

namespace {

std::string hex(uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08X", v);
  return buf;
}

// Empty string when the run is a usable reference point.
std::string unusable(const char *who, const RunResult &res) {
  if (res.status == RunStatus::Trapped)
    return std::string(who) + " trapped: " + res.trap->kind +
           " pc=" + hex(res.trap->pc);
  if (res.status == RunStatus::FuelExhausted)
    return std::string(who) + " ran out of fuel";
  if (res.hijack)
    return std::string(who) + " flagged a hijack on a benign run: " +
           res.hijack_detail;
  return "";
}

}  // namespace

DiffVerdict differential_check(const Program &baseline, const Program &variant,
                               HardenMode variant_mode,
                               const MemoryLayout &layout,
                               const std::vector<Workload> &workloads) {
  LoadedProgram base_lp(baseline, layout);
  LoadedProgram var_lp(variant, layout);
  MpuConfig base_mpu = build_layout_config(layout, HardenMode::Silhouette);
  MpuConfig var_mpu = build_layout_config(layout, variant_mode);

  for (size_t w = 0; w < workloads.size(); ++w) {
    const Workload &wl = workloads[w];
    std::string tag = " (workload " + std::to_string(w) + ")";

    Machine base_m(base_lp, base_mpu);
    RunResult base_res = base_m.run(run_options(wl));
    if (std::string err = unusable("baseline", base_res); !err.empty())
      return {false, err + tag};

    Machine var_m(var_lp, var_mpu);
    RunResult var_res = var_m.run(run_options(wl));
    if (std::string err = unusable("variant", var_res); !err.empty())
      return {false, err + tag};

    if (base_res.exit_value != var_res.exit_value)
      return {false, "exit " + std::to_string(var_res.exit_value) +
                         " != baseline " + std::to_string(base_res.exit_value) +
                         tag};
    if (wl.expect_r0 && base_res.exit_value != *wl.expect_r0)
      return {false, "baseline exit " + std::to_string(base_res.exit_value) +
                         " misses expected " + std::to_string(*wl.expect_r0) +
                         tag};

    for (const MemRange &range : wl.outputs)
      for (uint32_t a = range.base; a != range.end(); ++a) {
        uint8_t bb = base_m.read_byte_raw(a);
        uint8_t vb = var_m.read_byte_raw(a);
        if (bb != vb)
          return {false, "output byte at " + hex(a) + " is " +
                             std::to_string(vb) + ", baseline has " +
                             std::to_string(bb) + tag};
      }
  }
  return {true, ""};
}

}  // namespace silhouette
