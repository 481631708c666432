#include "doctest.h"
#include "silhouette/sim.hpp"

#include <sstream>

using namespace silhouette;

namespace {

std::string fn(const std::string &name, const std::string &body) {
  return "\t.type " + name + ", %function\n" + name + ":\n" + body +
         "\t.size " + name + ", .-" + name + "\n";
}

// Small layout so stack-exhaustion tests finish quickly.
MemoryLayout tiny_layout() {
  MemoryLayout l = default_layout();
  l.stack = {0x20000000, 0x1000};
  l.shadow_offset = 0x1000;
  l.heap = {0x20004000, 0x1000};
  return l;
}

struct Rig {
  LoadedProgram prog;
  Machine m;
  Rig(const std::string &text, MemoryLayout lay = default_layout(),
      HardenMode mode = HardenMode::Silhouette)
      : prog(parse_program(text), lay), m(prog, build_layout_config(lay, mode)) {}
  RunResult run(RunOptions opt = {}) { return m.run(opt); }
};

}  // namespace

TEST_CASE("loader: addresses, symbols, image bytes") {
  std::string text = fn("f",
                        "\tmov r0, r0\n"
                        "\tnop\n"
                        "\tadd r0, r1, r2\n"
                        "\tbx lr\n") +
                     fn("g", "\tbx lr\n") +
                     "ptr:\n"
                     "\t.word g\n"
                     "\t.word 42\n";
  Rig rig(text);
  const LoadedProgram &lp = rig.prog;

  // f: mov(2) nop(2) add(4, plain add of low regs has no narrow encoding)
  // bx(2) = 10 bytes; g lands at the next 4-aligned address.
  CHECK(*lp.symbol("f") == 0x00000000);
  CHECK(*lp.symbol("g") == 0x0000000C);
  REQUIRE(lp.entry_at(0xC) != nullptr);
  CHECK(lp.entry_at(0xC)->name == "g");
  CHECK(lp.entry_at(0x2) == nullptr);

  const CodeSite *s = lp.site_at(0x4);
  REQUIRE(s != nullptr);
  CHECK(lp.insn(*s).op == Mnemonic::ADD);
  CHECK(lp.site_at(0x5) == nullptr);

  // Only the label shape gets a real encoding; the rest is undefined filler.
  CHECK(lp.code_byte(0) == 0x00);
  CHECK(lp.code_byte(1) == 0x46);
  CHECK(lp.code_byte(2) == 0x00);
  CHECK(lp.code_byte(3) == 0xDE);

  // Runtime stubs sit after the last function, 4-aligned.
  CHECK(lp.setjmp_addr() == 0x00000010);
  CHECK(lp.longjmp_addr() == 0x00000014);

  // A .word naming a function carries the interworking bit; data does not.
  uint32_t ptr = *lp.symbol("ptr");
  CHECK(ptr == default_layout().heap.base);
  CHECK(rig.m.read_word_raw(ptr) == 0xD);
  CHECK(rig.m.read_word_raw(ptr + 4) == 42);
}

TEST_CASE("loader: dispatch table bytes are halfword distances") {
  std::string text = fn("h",
                        "\ttbb [pc, r0]\n"
                        ".Ltab:\n"
                        "\t.byte .Lc0\n"
                        "\t.byte .Lc1\n"
                        "\t.align 1\n"
                        ".Lc0:\n"
                        "\tmov r0, #10\n"
                        "\tbx lr\n"
                        ".Lc1:\n"
                        "\tmov r0, #20\n"
                        "\tbx lr\n");
  Rig rig(text);
  // tbb occupies [0,4); table base is 4; .Lc0 at 6, .Lc1 at 12 (the plain
  // mov #imm has no narrow encoding, so each case is 4+2 bytes).
  CHECK(rig.prog.code_byte(4) == 1);
  CHECK(rig.prog.code_byte(5) == 4);

  RunOptions o;
  o.entry = "h";
  o.r0 = 0;
  RunResult r = rig.m.run(o);
  CHECK(r.status == RunStatus::Halted);
  CHECK(r.exit_value == 10);

  o.r0 = 1;
  r = rig.m.run(o);
  CHECK(r.exit_value == 20);
}

TEST_CASE("execution: flags drive a counted loop") {
  Rig rig(fn("main",
             "\tmov r1, #0\n"
             "\tmov r2, #5\n"
             ".Lloop:\n"
             "\tadd r1, r1, r2\n"
             "\tsubs r2, r2, #1\n"
             "\tbne .Lloop\n"
             "\tmov r0, r1\n"
             "\tbx lr\n"));
  RunResult r = rig.run();
  CHECK(r.status == RunStatus::Halted);
  CHECK(r.exit_value == 15);
  CHECK(r.security_verdict() == "ok");
}

TEST_CASE("execution: calls, returns, and the exec counter") {
  Rig rig(fn("main",
             "\tpush {r4, lr}\n"
             "\tmov r4, #3\n"
             "\tbl addfn\n"
             "\tadd r0, r0, r4\n"
             "\tpop {r4, pc}\n") +
          fn("addfn",
             "\tadd r0, r0, r1\n"
             "\tbx lr\n"));
  RunOptions o;
  o.r0 = 10;
  o.r1 = 4;
  RunResult r = rig.run(o);
  CHECK(r.exit_value == 17);
  CHECK(r.exec == 7);
  CHECK(r.privstore_app == 1);  // the push
}

TEST_CASE("execution: IT blocks select by condition") {
  std::string text = fn("main",
                        "\tcmp r0, #0\n"
                        "\tite eq\n"
                        "\tmoveq r0, #1\n"
                        "\tmovne r0, #2\n"
                        "\tbx lr\n");
  Rig rig(text);
  RunOptions o;
  o.r0 = 0;
  RunResult r = rig.run(o);
  CHECK(r.exit_value == 1);
  CHECK(r.exec == 5);  // header and the skipped arm both dispatch

  o.r0 = 9;
  r = rig.run(o);
  CHECK(r.exit_value == 2);
  CHECK(r.exec == 5);
}

TEST_CASE("execution: cbz and cbnz") {
  std::string text = fn("main",
                        "\tcbz r0, .Lzero\n"
                        "\tmov r0, #77\n"
                        "\tbx lr\n"
                        ".Lzero:\n"
                        "\tmov r0, #33\n"
                        "\tbx lr\n");
  Rig rig(text);
  RunOptions o;
  o.r0 = 0;
  CHECK(rig.run(o).exit_value == 33);
  o.r0 = 4;
  CHECK(rig.run(o).exit_value == 77);
}

TEST_CASE("memory: sized stores and loads against a global") {
  std::string text = fn("main",
                        "\tldr r1, .Lp\n"
                        "\tldr r2, [r1]\n"
                        "\tstrb r2, [r1, #4]\n"
                        "\tldrb r3, [r1, #4]\n"
                        "\tstrh r2, [r1, #6]\n"
                        "\tldrh r4, [r1, #6]\n"
                        "\tadd r0, r3, r4\n"
                        "\tbx lr\n"
                        "\t.align 2\n"
                        ".Lp:\n"
                        "\t.word buffer\n") +
                     "buffer:\n"
                     "\t.word 0x11223344\n"
                     "\t.word 0\n";
  Rig rig(text);
  RunResult r = rig.run();
  CHECK(r.exit_value == 0x44 + 0x3344);
  uint32_t buf = *rig.prog.symbol("buffer");
  CHECK(rig.m.read_byte_raw(buf + 4) == 0x44);
}

TEST_CASE("memory: post-index writeback and pop pc") {
  Rig rig(fn("main",
             "\tpush {r4, r5, lr}\n"
             "\tmov r4, #1\n"
             "\tmov r5, #2\n"
             "\tsub sp, sp, #8\n"
             "\tstr r4, [sp, #0]\n"
             "\tstr r5, [sp, #4]\n"
             "\tldr r0, [sp], #4\n"
             "\tldr r1, [sp], #4\n"
             "\tadd r0, r0, r1\n"
             "\tpop {r4, r5, pc}\n"));
  RunResult r = rig.run();
  CHECK(r.status == RunStatus::Halted);
  CHECK(r.exit_value == 3);
}

TEST_CASE("protection: shadow band rejects the mode's untrusted view") {
  std::string text = fn("main",
                        "\tmovw r1, #0x0\n"
                        "\tmovt r1, #0x2020\n"
                        "\tmov r2, #7\n"
                        "\tstrt r2, [r1]\n"
                        "\tbx lr\n");
  std::string priv = fn("main",
                        "\tmovw r1, #0x0\n"
                        "\tmovt r1, #0x2020\n"
                        "\tmov r2, #7\n"
                        "\tstr r2, [r1]\n"
                        "\tbx lr\n");

  SUBCASE("silhouette: unprivileged store faults, privileged lands") {
    Rig a(text);
    RunResult r = a.run();
    REQUIRE(r.trap.has_value());
    CHECK(r.trap->kind == "mpu-fault");
    CHECK(r.trap->addr == 0x20200000);
    CHECK(r.security_verdict() == "trap:mpu-fault");

    Rig b(priv);
    r = b.run();
    CHECK(r.security_verdict() == "ok");
    CHECK(b.m.read_word_raw(0x20200000) == 7);
  }
  SUBCASE("invert: privileged store faults, unprivileged lands") {
    Rig a(text, default_layout(), HardenMode::Invert);
    RunResult r = a.run();
    CHECK(r.security_verdict() == "ok");
    CHECK(a.m.read_word_raw(0x20200000) == 7);

    Rig b(priv, default_layout(), HardenMode::Invert);
    r = b.run();
    REQUIRE(r.trap.has_value());
    CHECK(r.trap->kind == "mpu-fault");
  }
}

TEST_CASE("protection: runaway recursion traps in the guard band") {
  Rig rig(fn("main",
             "\tpush {lr}\n"
             "\tbl main\n"
             "\tpop {pc}\n"),
          tiny_layout());
  RunResult r = rig.run();
  REQUIRE(r.trap.has_value());
  CHECK(r.trap->kind == "stack-overflow-fault");
  CHECK(r.trap->addr < 0x20000000);
  CHECK(r.trap->addr >= 0x20000000 - 0x1000);
}

TEST_CASE("svc: 255 is the cfi abort, others are undefined") {
  Rig a(fn("main", "\tsvc #255\n"));
  CHECK(a.run().security_verdict() == "trap:cfi-violation");
  Rig b(fn("main", "\tsvc #1\n"));
  CHECK(b.run().security_verdict() == "trap:undefined");
}

TEST_CASE("indirect calls: entry targets run, interior targets flag hijack") {
  std::string text = fn("main",
                        "\tpush {r4, lr}\n"
                        "\tldr r4, .Lp\n"
                        "\tblx r4\n"
                        "\tpop {r4, pc}\n"
                        "\t.align 2\n"
                        ".Lp:\n"
                        "\t.word helper\n") +
                     fn("helper",
                        "\tmov r0, #5\n"
                        "\tbx lr\n");
  SUBCASE("function pointer call returns") {
    Rig rig(text);
    RunResult r = rig.run();
    CHECK(r.exit_value == 5);
    CHECK(r.security_verdict() == "ok");
  }
  SUBCASE("skewed pointer lands inside the callee") {
    std::string bad = fn("main",
                         "\tpush {r4, lr}\n"
                         "\tldr r4, .Lp\n"
                         "\tadd r4, r4, #4\n"
                         "\tblx r4\n"
                         "\tpop {r4, pc}\n"
                         "\t.align 2\n"
                         ".Lp:\n"
                         "\t.word helper\n") +
                     fn("helper",
                        "\tmov r0, #5\n"
                        "\tmov r0, #6\n"
                        "\tbx lr\n");
    Rig rig(bad);
    RunResult r = rig.run();
    CHECK(r.hijack);
    CHECK(r.security_verdict() == "hijack");
    CHECK(r.hijack_detail.find("indirect call") != std::string::npos);
  }
  SUBCASE("cleared interworking bit is undefined") {
    std::string even = fn("main",
                          "\tldr r4, .Lp\n"
                          "\tsub r4, r4, #1\n"
                          "\tblx r4\n"
                          "\tbx lr\n"
                          "\t.align 2\n"
                          ".Lp:\n"
                          "\t.word helper\n") +
                       fn("helper",
                          "\tmov r0, #5\n"
                          "\tbx lr\n");
    Rig rig(even);
    CHECK(rig.run().security_verdict() == "trap:undefined");
  }
}

TEST_CASE("attacks: return slot overwrite is caught as a hijack") {
  // The write fires at leaf entry, after victim's prologue stacked its
  // return address: r4 slot at sp0-16, return slot at sp0-12.
  std::string text = fn("main",
                        "\tpush {r4, lr}\n"
                        "\tbl victim\n"
                        "\tpop {r4, pc}\n") +
                     fn("victim",
                        "\tpush {r4, lr}\n"
                        "\tbl leaf\n"
                        "\tmov r4, #1\n"
                        "\tpop {r4, pc}\n") +
                     fn("leaf", "\tbx lr\n");
  uint32_t sp0 = default_layout().initial_sp();

  SUBCASE("overwriting the stacked return address diverts the pop") {
    Rig rig(text);
    RunOptions o;
    AttackSpec a;
    a.name = "retslot";
    a.trigger_function = "leaf";
    a.trigger_occurrence = 1;
    a.writes.push_back({sp0 - 12, 4, 0x00000101});
    o.attacks.push_back(a);
    RunResult r = rig.run(o);
    CHECK(r.hijack);
    CHECK(r.security_verdict() == "hijack");
    CHECK(r.hijack_detail.find("expects") != std::string::npos);
  }
  SUBCASE("overwriting a callee-saved slot is harmless") {
    Rig rig(text);
    RunOptions o;
    AttackSpec a;
    a.trigger_function = "leaf";
    a.writes.push_back({sp0 - 16, 4, 0xABAD1DEA});
    o.attacks.push_back(a);
    RunResult r = rig.run(o);
    CHECK(!r.hijack);
    CHECK(r.status == RunStatus::Halted);
    CHECK(r.security_verdict() == "ok");
  }
  SUBCASE("exec-count trigger fires once at the threshold") {
    Rig rig(text);
    RunOptions o;
    AttackSpec a;
    a.trigger_exec = 3;
    a.writes.push_back({default_layout().heap.base, 4, 0x5EED});
    o.attacks.push_back(a);
    RunResult r = rig.run(o);
    CHECK(r.security_verdict() == "ok");
    CHECK(rig.m.read_word_raw(default_layout().heap.base) == 0x5EED);
  }
  SUBCASE("denied attack write becomes an mpu trap") {
    Rig rig(text);
    RunOptions o;
    AttackSpec a;
    a.trigger_function = "victim";
    a.writes.push_back({default_layout().stack.base + default_layout().shadow_offset,
                        4, 0x101});
    o.attacks.push_back(a);
    RunResult r = rig.run(o);
    REQUIRE(r.trap.has_value());
    CHECK(r.trap->kind == "mpu-fault");
    CHECK(!r.hijack);
  }
}

TEST_CASE("setjmp and longjmp cross function boundaries") {
  std::string text = fn("main",
                        "\tpush {r4, lr}\n"
                        "\tldr r4, .Lbuf\n"
                        "\tmov r0, r4\n"
                        "\tbl setjmp\n"
                        "\tcmp r0, #0\n"
                        "\tbne .Lout\n"
                        "\tmov r0, r4\n"
                        "\tmov r1, #7\n"
                        "\tbl thrower\n"
                        "\tmov r0, #99\n"
                        ".Lout:\n"
                        "\tpop {r4, pc}\n"
                        "\t.align 2\n"
                        ".Lbuf:\n"
                        "\t.word jbuf\n") +
                     fn("thrower",
                        "\tpush {lr}\n"
                        "\tbl longjmp\n"
                        "\tpop {pc}\n") +
                     "jbuf:\n"
                     "\t.word 0\n";
  Rig rig(text);
  RunResult r = rig.run();
  CHECK(r.status == RunStatus::Halted);
  CHECK(r.exit_value == 7);
  CHECK(r.security_verdict() == "ok");
}

TEST_CASE("longjmp without a live context aborts the program") {
  Rig rig(fn("main",
             "\tmov r0, #16\n"
             "\tmov r1, #1\n"
             "\tbl longjmp\n"
             "\tbx lr\n"));
  RunResult r = rig.run();
  REQUIRE(r.trap.has_value());
  CHECK(r.trap->kind == "runtime-abort");
  CHECK(r.trap->detail == "Invalid jmp_buf");
  CHECK(r.security_verdict() == "trap:runtime-abort");
}

TEST_CASE("privstore accounting skips flags, exempt code, and unprivileged forms") {
  std::string text = "\t.silhouette_exempt hal_store\n" +
                     fn("main",
                        "\tldr r1, .Lp\n"
                        "\tstr r0, [r1]\n"
                        "\tstr r0, [r1, #4] @silhouette:ss-store\n"
                        "\tstrt r0, [r1, #8]\n"
                        "\tpush {lr}\n"
                        "\tbl hal_store\n"
                        "\tpop {pc}\n"
                        "\t.align 2\n"
                        ".Lp:\n"
                        "\t.word scratch\n") +
                     fn("hal_store",
                        "\tstr r0, [r1, #12]\n"
                        "\tbx lr\n") +
                     "scratch:\n"
                     "\t.word 0, 0, 0, 0\n";
  Rig rig(text);
  RunResult r = rig.run();
  CHECK(r.security_verdict() == "ok");
  // str + push count; the annotated store, strt, and the exempt store do not.
  CHECK(r.privstore_app == 2);
}

TEST_CASE("system register moves and cps") {
  Rig rig(fn("main",
             "\tmrs r1, msp\n"
             "\tmsr psp, r1\n"
             "\tmrs r2, psp\n"
             "\tsub r0, r2, r1\n"
             "\tcpsid i\n"
             "\tcpsie i\n"
             "\tbx lr\n"));
  RunResult r = rig.run();
  CHECK(r.exit_value == 0);
  CHECK(r.exec == 7);
  CHECK(!rig.m.st.primask);
}

TEST_CASE("exclusive monitor gates strex") {
  std::string text = fn("main",
                        "\tldr r1, .Lp\n"
                        ".Lretry:\n"
                        "\tldrex r2, [r1]\n"
                        "\tadd r2, r2, #1\n"
                        "\tstrex r3, r2, [r1]\n"
                        "\tcmp r3, #0\n"
                        "\tbne .Lretry\n"
                        "\tldr r0, [r1]\n"
                        "\tbx lr\n"
                        "\t.align 2\n"
                        ".Lp:\n"
                        "\t.word counter\n") +
                     "counter:\n"
                     "\t.word 41\n";
  Rig rig(text);
  CHECK(rig.run().exit_value == 42);

  std::string bare = fn("main",
                        "\tldr r1, .Lp\n"
                        "\tmov r2, #9\n"
                        "\tstrex r0, r2, [r1]\n"
                        "\tbx lr\n"
                        "\t.align 2\n"
                        ".Lp:\n"
                        "\t.word counter\n") +
                     "counter:\n"
                     "\t.word 41\n";
  Rig rig2(bare);
  RunResult r = rig2.run();
  CHECK(r.exit_value == 1);  // no reservation: store refused
  CHECK(rig2.m.read_word_raw(*rig2.prog.symbol("counter")) == 41);
}

TEST_CASE("fp moves and transfers") {
  std::string text = fn("main",
                        "\tldr r6, .Lp\n"
                        "\tvmov s0, r0\n"
                        "\tvmov s1, r1\n"
                        "\tvmov r2, s0\n"
                        "\tvmov r3, s1\n"
                        "\tvmov d2, r2, r3\n"
                        "\tvstr d2, [r6, #0]\n"
                        "\tvldr d3, [r6, #8]\n"
                        "\tvmov r4, r5, d2\n"
                        "\tadd r0, r4, r5\n"
                        "\tvstm r6!, {s0-s1}\n"
                        "\tbx lr\n"
                        "\t.align 2\n"
                        ".Lp:\n"
                        "\t.word fpbuf\n") +
                     "fpbuf:\n"
                     "\t.word 0, 0, 0, 0\n";
  Rig rig(text);
  RunOptions o;
  o.r0 = 5;
  o.r1 = 9;
  RunResult r = rig.run(o);
  CHECK(r.exit_value == 14);
  uint32_t buf = *rig.prog.symbol("fpbuf");
  // vstm overwrote the vstr words and advanced the base.
  CHECK(rig.m.read_word_raw(buf) == 5);
  CHECK(rig.m.read_word_raw(buf + 4) == 9);
  CHECK(rig.m.st.r[6] == buf + 8);
}

TEST_CASE("fuel exhaustion reports without a verdict") {
  Rig rig(fn("main", ".Lspin:\n\tb .Lspin\n"));
  RunOptions o;
  o.fuel = 100;
  RunResult r = rig.run(o);
  CHECK(r.status == RunStatus::FuelExhausted);
  CHECK(r.exec == 100);
  CHECK(r.security_verdict() == "ok");
  CHECK(r.count_line() == "COUNT exec=100 privstore_app=0");
}

TEST_CASE("trace lines pair the fetch address with the instruction text") {
  Rig rig(fn("main",
             "\tmov r0, #3\n"
             "\tbx lr\n"));
  std::ostringstream trace;
  RunOptions o;
  o.trace = &trace;
  RunResult r = rig.run(o);
  CHECK(r.exec == 2);
  std::string out = trace.str();
  CHECK(out.find("00000000 mov r0, #3\n") == 0);
  CHECK(out.find("\tbx") == std::string::npos);  // no tabs, plain text
}
