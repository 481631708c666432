#include "doctest.h"
#include "silhouette/passes.hpp"
#include "silhouette/scanner.hpp"
#include "silhouette/sim.hpp"

using namespace silhouette;

namespace {

std::string fn(const std::string &name, const std::string &body) {
  return "\t.type " + name + ", %function\n" + name + ":\n" + body +
         "\t.size " + name + ", .-" + name + "\n";
}

MemoryLayout tiny_layout() {
  MemoryLayout l = default_layout();
  l.stack = {0x20000000, 0x1000};
  l.shadow_offset = 0x1000;
  l.heap = {0x20004000, 0x1000};
  return l;
}

ScanReport scan_text(const std::string &text,
                     HardenMode mode = HardenMode::Silhouette,
                     bool hfnmiena = true) {
  Program p = parse_program(text);
  MpuConfig mpu = build_layout_config(default_layout(), mode);
  mpu.hfnmiena = hfnmiena;
  return scan_privileged(p, ScanPolicy{mode}, mpu);
}

std::vector<std::string> kinds(const ScanReport &r) {
  std::vector<std::string> out;
  for (const Finding &f : r.findings) out.push_back(f.kind);
  return out;
}

}  // namespace

TEST_CASE("msr is an error in application code and a note in exempt code") {
  ScanReport r = scan_text(fn("f", "\tmsr msp, r0\n\tbx lr\n"));
  REQUIRE(r.findings.size() == 1);
  CHECK(r.findings[0].kind == "msr");
  CHECK(r.findings[0].severity == Severity::Error);
  CHECK(r.findings[0].function == "f");
  CHECK(r.findings[0].line == 3);
  CHECK(r.error_count() == 1);
  CHECK(!r.clean());

  ScanReport e = scan_text("\t.silhouette_exempt f\n" +
                           fn("f", "\tmsr msp, r0\n\tbx lr\n"));
  REQUIRE(e.findings.size() == 1);
  CHECK(e.findings[0].kind == "msr");
  CHECK(e.findings[0].severity == Severity::Note);
  CHECK(e.clean());
}

TEST_CASE("cps severity follows hfnmiena") {
  std::string text = fn("f", "\tcpsid i\n\tbx lr\n");

  ScanReport on = scan_text(text, HardenMode::Silhouette, true);
  REQUIRE(on.findings.size() == 1);
  CHECK(on.findings[0].kind == "cps");
  CHECK(on.findings[0].severity == Severity::Note);
  CHECK(on.clean());

  ScanReport off = scan_text(text, HardenMode::Silhouette, false);
  REQUIRE(off.findings.size() == 1);
  CHECK(off.findings[0].severity == Severity::Error);
  CHECK(!off.clean());

  // Exempt code gets a note either way.
  ScanReport ex = scan_text("\t.silhouette_exempt f\n" + text,
                            HardenMode::Silhouette, false);
  REQUIRE(ex.findings.size() == 1);
  CHECK(ex.findings[0].severity == Severity::Note);
  CHECK(ex.clean());
}

TEST_CASE("mrs and svc are notes and leave the verdict clean") {
  ScanReport r = scan_text(fn("f", "\tmrs r0, control\n\tsvc #4\n\tbx lr\n"));
  REQUIRE(r.findings.size() == 2);
  CHECK(r.findings[0].kind == "mrs");
  CHECK(r.findings[1].kind == "svc");
  CHECK(r.note_count() == 2);
  CHECK(r.error_count() == 0);
  CHECK(r.clean());
}

TEST_CASE("unflagged privileged stores are errors under the silhouette policy only") {
  std::string text = fn("f",
                        "\tstr r1, [r0]\n"
                        "\tpush {r4, lr}\n"
                        "\tvstr s0, [r0, #4]\n"
                        "\tpop {r4, pc}\n");
  ScanReport sil = scan_text(text);
  CHECK(kinds(sil) == std::vector<std::string>(3, "unhardened-store"));
  CHECK(sil.error_count() == 3);

  CHECK(scan_text(text, HardenMode::Invert).findings.empty());
  CHECK(scan_text(text, HardenMode::SFI).findings.empty());
}

TEST_CASE("flagged stores and unprivileged stores are not findings") {
  ScanReport r = scan_text(fn("f",
                              "\tstr lr, [sp, ip] @silhouette:ss-store\n"
                              "\tstr r5, [sp, #0] @silhouette:cfi\n"
                              "\tstrt r1, [r0, #0]\n"
                              "\tbx lr\n"));
  CHECK(r.findings.empty());
}

TEST_CASE("store-exclusive needs the adjacent two-bic guard") {
  std::string guarded = fn("f",
                           "\tbic ip, r2, #0xC0000000\n"
                           "\tbic ip, ip, #0x00200000\n"
                           "\tstrex r0, r1, [ip]\n"
                           "\tbx lr\n");
  CHECK(scan_text(guarded).findings.empty());

  std::string in_place = fn("f",
                            "\tbic r2, r2, #0xC0000000\n"
                            "\tbic r2, r2, #0x00200000\n"
                            "\tstrex r0, r1, [r2]\n"
                            "\tbx lr\n");
  CHECK(scan_text(in_place).findings.empty());

  std::string bare = fn("f", "\tstrex r0, r1, [r2]\n\tbx lr\n");
  ScanReport r = scan_text(bare);
  REQUIRE(r.findings.size() == 1);
  CHECK(r.findings[0].kind == "unguarded-strex");
  CHECK(r.findings[0].severity == Severity::Error);
  CHECK(scan_text(bare, HardenMode::Invert).findings.empty());
  CHECK(scan_text(bare, HardenMode::SFI).findings.empty());

  // A label between guard and store admits a jump past the masking.
  std::string split = fn("f",
                         "\tbic r2, r2, #0xC0000000\n"
                         "\tbic r2, r2, #0x00200000\n"
                         ".Lin:\n"
                         "\tstrex r0, r1, [r2]\n"
                         "\tbx lr\n");
  CHECK(scan_text(split).error_count() == 1);

  // The second bic must consume the first and feed the address.
  std::string broken = fn("f",
                          "\tbic ip, r2, #0xC0000000\n"
                          "\tbic r3, r2, #0x00200000\n"
                          "\tstrex r0, r1, [r3]\n"
                          "\tbx lr\n");
  CHECK(scan_text(broken).error_count() == 1);
}

TEST_CASE("the full pipeline scans clean and runs with zero privileged app stores") {
  MemoryLayout lay = tiny_layout();
  std::string text =
      "\t.silhouette_addrtaken helper\n" +
      fn("helper", "\tmov r0, #7\n\tbx lr\n") +
      fn("main",
         "\tpush {r4, lr}\n"
         "\tldr r4, .Lbuf\n"
         "\tmov r1, #9\n"
         "\tstr r1, [r4, #0]\n"
         "\tldr r3, .Lfn\n"
         "\tblx r3\n"
         "\tldr r1, [r4, #0]\n"
         "\tadd r0, r0, r1\n"
         "\tpop {r4, pc}\n"
         "\t.align 2\n"
         ".Lbuf:\n"
         "\t.word 0x20004000\n"
         ".Lfn:\n"
         "\t.word helper\n");
  Program p = parse_program(text);
  Program hardened = cfi_pass(
      store_harden_pass(shadow_stack_pass(p, lay), HardenMode::Silhouette, lay));

  MpuConfig mpu = build_layout_config(lay, HardenMode::Silhouette);
  ScanReport r =
      scan_privileged(hardened, ScanPolicy{HardenMode::Silhouette}, mpu);
  CHECK(r.error_count() == 0);
  CHECK(r.clean());
  // The only note left is the abort stub's supervisor entry.
  for (const Finding &f : r.findings) CHECK(f.kind == "svc");

  CHECK(check_return_integrity(hardened).empty());

  LoadedProgram lp(hardened, lay);
  Machine m(lp, mpu);
  RunResult res = m.run({});
  CHECK(res.status == RunStatus::Halted);
  CHECK(res.exit_value == 16);
  CHECK(res.privstore_app == 0);
  CHECK(!res.hijack);
}

TEST_CASE("skipping store hardening is caught by scan and counter alike") {
  MemoryLayout lay = tiny_layout();
  Program p = parse_program(fn("main",
                               "\tpush {lr}\n"
                               "\tldr r2, .Lbuf\n"
                               "\tmov r1, #5\n"
                               "\tstr r1, [r2, #0]\n"
                               "\tmov r0, #0\n"
                               "\tpop {pc}\n"
                               "\t.align 2\n"
                               ".Lbuf:\n"
                               "\t.word 0x20004000\n"));
  Program ss = shadow_stack_pass(p, lay);

  MpuConfig mpu = build_layout_config(lay, HardenMode::Silhouette);
  ScanReport r = scan_privileged(ss, ScanPolicy{HardenMode::Silhouette}, mpu);
  CHECK(r.error_count() == 2);  // the prologue push and the heap store
  CHECK(!r.clean());

  LoadedProgram lp(ss, lay);
  Machine m(lp, mpu);
  RunResult res = m.run({});
  CHECK(res.status == RunStatus::Halted);
  CHECK(res.privstore_app == 2);
}

TEST_CASE("sfi output is judged by its own policy") {
  MemoryLayout lay = tiny_layout();
  Program p = parse_program(fn("main",
                               "\tldr r2, .Lbuf\n"
                               "\tmov r1, #5\n"
                               "\tstr r1, [r2, #0]\n"
                               "\tmov r0, #0\n"
                               "\tbx lr\n"
                               "\t.align 2\n"
                               ".Lbuf:\n"
                               "\t.word 0x20004000\n"));
  Program sfi = store_harden_pass(p, HardenMode::SFI, lay);
  MpuConfig mpu = build_layout_config(lay, HardenMode::SFI);
  CHECK(scan_privileged(sfi, ScanPolicy{HardenMode::SFI}, mpu).findings.empty());

  // The same output fails the silhouette policy: its stores stay privileged.
  ScanReport cross =
      scan_privileged(sfi, ScanPolicy{HardenMode::Silhouette}, mpu);
  CHECK(cross.error_count() >= 1);
}

TEST_CASE("findings order by function appearance then line and format stably") {
  std::string text = fn("alpha", "\tmrs r0, control\n\tmsr msp, r1\n\tbx lr\n") +
                     fn("beta", "\tcpsie i\n\tbx lr\n");
  Program p = parse_program(text);
  MpuConfig mpu = build_layout_config(default_layout(), HardenMode::Silhouette);
  ScanReport r = scan_privileged(p, ScanPolicy{}, mpu);
  REQUIRE(r.findings.size() == 3);
  CHECK(find_line(r.findings[0]) == "FIND note alpha 3 mrs");
  CHECK(find_line(r.findings[1]) == "FIND error alpha 4 msr");
  CHECK(find_line(r.findings[2]) == "FIND note beta 9 cps");
}

TEST_CASE("return integrity holds after transformation and catches a missing mirror") {
  MemoryLayout lay = tiny_layout();
  Program p = parse_program(
      fn("leaf", "\tadd r0, r0, #1\n\tbx lr\n") +
      fn("main", "\tpush {r4, lr}\n\tbl leaf\n\tpop {r4, pc}\n"));
  CHECK(check_return_integrity(shadow_stack_pass(p, lay)).empty());

  Program bad = parse_program(fn("f", "\tpush {lr}\n\tbl g\n\tpop {pc}\n") +
                              fn("g", "\tbx lr\n"));
  std::vector<Finding> v = check_return_integrity(bad);
  REQUIRE(v.size() == 1);
  CHECK(v[0].function == "f");
  CHECK(v[0].kind == "missing-shadow-store");
  CHECK(v[0].severity == Severity::Error);
  CHECK(v[0].line == 3);

  // The mirror only counts ahead of the first call.
  Program late = parse_program(fn("f",
                                  "\tpush {lr}\n"
                                  "\tbl g\n"
                                  "\tstr lr, [sp, ip] @silhouette:ss-store\n"
                                  "\tpop {pc}\n") +
                               fn("g", "\tbx lr\n"));
  CHECK(check_return_integrity(late).size() == 1);

  // Leaves store no lr; exempt bodies are outside the contract.
  Program ex = parse_program("\t.silhouette_exempt f\n" +
                             fn("f", "\tpush {lr}\n\tpop {pc}\n"));
  CHECK(check_return_integrity(ex).empty());
}

TEST_CASE("label coverage passes cfi output and catches a stripped label") {
  std::string text = "\t.silhouette_addrtaken callee\n" +
                     fn("callee", "\tadd r0, r0, #1\n\tbx lr\n") +
                     fn("main", "\tldr r2, =callee\n\tblx r2\n\tbx lr\n");
  Program p = parse_program(text);
  CHECK(check_label_coverage(cfi_pass(p)).empty());

  // The untransformed input lacks the landing label.
  std::vector<Finding> v = check_label_coverage(p);
  REQUIRE(v.size() == 1);
  CHECK(v[0].function == "callee");
  CHECK(v[0].kind == "missing-cfi-label");
  CHECK(v[0].severity == Severity::Error);

  // Only address-taken functions owe one; exempt entries never do.
  Program plain = parse_program(fn("f", "\tbx lr\n"));
  CHECK(check_label_coverage(plain).empty());
  Program ex = parse_program("\t.silhouette_exempt f\n"
                             "\t.silhouette_addrtaken f\n" +
                             fn("f", "\tbx lr\n"));
  CHECK(check_label_coverage(ex).empty());

  // A local label ahead of the insn does not hide it.
  Program lbl = parse_program("\t.silhouette_addrtaken g\n" +
                              fn("g", ".Lentry:\n\tmov r0, r0\n\tbx lr\n"));
  CHECK(check_label_coverage(lbl).empty());
}
