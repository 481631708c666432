#include "doctest.h"
#include "silhouette/passes.hpp"
#include "silhouette/sim.hpp"

#include <functional>

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

std::vector<const Instruction *> insns(const Function &f) {
  std::vector<const Instruction *> out;
  for (const auto &it : f.items)
    if (it.is_insn()) out.push_back(&it.insn);
  return out;
}

std::string err_of(const std::function<void()> &body) {
  try {
    body();
  } catch (const AsmError &e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string &hay, const std::string &needle) {
  return hay.find(needle) != std::string::npos;
}

Program hardened(const std::string &text, const MemoryLayout &lay) {
  return shadow_stack_pass(parse_program(text), lay);
}

RunResult run_text(const Program &p, const MemoryLayout &lay, uint32_t r0 = 0) {
  LoadedProgram lp(p, lay);
  Machine m(lp, build_layout_config(lay, HardenMode::Silhouette));
  RunOptions o;
  o.r0 = r0;
  return m.run(o);
}

}  // namespace

TEST_CASE("shadow plan offset comes from the layout") {
  CHECK(make_shadow_plan(tiny_layout()).offset == 0x1000);
  CHECK(make_shadow_plan(default_layout()).offset ==
        default_layout().shadow_offset);
}

TEST_CASE("functions that never store lr pass through unchanged") {
  std::string text = fn("leaf", "\tadd r0, r0, r1\n\tbx lr\n") +
                     fn("saves_r4",
                        "\tpush {r4}\n"
                        "\tmov r4, r0\n"
                        "\tadd r0, r4, #1\n"
                        "\tpop {r4}\n"
                        "\tbx lr\n");
  Program p = parse_program(text);
  Program out = shadow_stack_pass(p, tiny_layout());
  CHECK(emit_program(out) == emit_program(p));
}

TEST_CASE("prologue shadow store lands right after the lr push") {
  // push {r4, lr} leaves lr at sp+4, so the mirrored slot sits at
  // shadow_offset + 4.
  std::string text = fn("main",
                        "\tpush {r4, lr}\n"
                        "\tmov r4, r0\n"
                        "\tadd r0, r4, #2\n"
                        "\tpop {r4, pc}\n");
  Program out = hardened(text, tiny_layout());
  const Function &f = out.functions[0];
  auto v = insns(f);

  REQUIRE(v.size() == 10);
  CHECK(v[0]->op == Mnemonic::PUSH);
  CHECK(v[1]->op == Mnemonic::MOVW);
  CHECK(v[1]->regs[0] == IP);
  CHECK(v[1]->imm == 0x1004);
  CHECK(v[2]->op == Mnemonic::STR);
  CHECK(v[2]->has_flag(FLAG_SHADOW_STACK_STORE));
  CHECK(v[2]->regs[0] == LR);
  CHECK(v[2]->mem->base == SP);
  CHECK(v[2]->mem->has_reg_offset);
  CHECK(v[2]->mem->offset_reg == IP);

  // Epilogue: pop the non-pc part, reload lr from the shadow slot, drop the
  // dead regular slot, return.  The pc slot is again at displacement 0 once
  // r4 is popped, so the constant is the bare offset (a modified immediate,
  // hence a plain mov).
  CHECK(v[5]->op == Mnemonic::POP);
  CHECK(v[5]->regs.size() == 1);
  CHECK(v[5]->regs[0] == Register::core(4));
  CHECK(v[6]->op == Mnemonic::MOV);
  CHECK(v[6]->imm == 0x1000);
  CHECK(v[7]->op == Mnemonic::LDR);
  CHECK(v[7]->regs[0] == LR);
  CHECK(v[7]->has_flag(FLAG_PASS_INSERTED));
  CHECK(v[8]->op == Mnemonic::ADD);
  CHECK(v[8]->regs[0] == SP);
  CHECK(v[8]->imm == 4);
  CHECK(v[9]->op == Mnemonic::BX);
}

TEST_CASE("str-writeback prologue and pop {pc} epilogue") {
  std::string text = fn("main",
                        "\tstr lr, [sp, #-4]!\n"
                        "\tmov r0, #7\n"
                        "\tpop {pc}\n");
  MemoryLayout lay = tiny_layout();
  Program out = hardened(text, lay);
  auto v = insns(out.functions[0]);

  REQUIRE(v.size() == 8);
  CHECK(v[0]->op == Mnemonic::STR);
  CHECK(v[1]->op == Mnemonic::MOV);  // 0x1000 is a modified immediate
  CHECK(v[1]->imm == 0x1000);
  CHECK(v[2]->op == Mnemonic::STR);
  CHECK(v[2]->has_flag(FLAG_SHADOW_STACK_STORE));
  CHECK(v[4]->op == Mnemonic::MOV);
  CHECK(v[5]->op == Mnemonic::LDR);
  CHECK(v[6]->op == Mnemonic::ADD);
  CHECK(v[7]->op == Mnemonic::BX);

  RunResult r = run_text(out, lay);
  CHECK(r.status == RunStatus::Halted);
  CHECK(r.exit_value == 7);
}

TEST_CASE("corrupted regular return slot no longer decides the return") {
  std::string text = fn("main",
                        "\tpush {r4, lr}\n"
                        "\tbl child\n"
                        "\tmov r1, #0\n"
                        "\tstr r1, [sp, #4]\n"  // stomp the stacked lr
                        "\tmov r0, #42\n"
                        "\tpop {r4, pc}\n") +
                     fn("child", "\tmov r0, #1\n\tbx lr\n");
  MemoryLayout lay = tiny_layout();

  RunResult base = run_text(parse_program(text), lay);
  bool base_ok = base.status == RunStatus::Halted && base.exit_value == 42;
  CHECK(!base_ok);

  RunResult hard = run_text(hardened(text, lay), lay);
  CHECK(hard.status == RunStatus::Halted);
  CHECK(hard.exit_value == 42);
}

TEST_CASE("conditional early return rewrites both paths") {
  std::string text = fn("main",
                        "\tpush {lr}\n"
                        "\tcmp r0, #0\n"
                        "\tit eq\n"
                        "\tpopeq {pc}\n"
                        "\tmov r0, #9\n"
                        "\tpop {pc}\n");
  MemoryLayout lay = tiny_layout();
  Program out = hardened(text, lay);

  // The eq epilogue becomes a four-instruction conditional run, which the
  // rebuild covers with a single it block.
  int it_headers = 0;
  int eq_insns = 0;
  for (const Instruction *i : insns(out.functions[0])) {
    if (i->op == Mnemonic::IT) ++it_headers;
    else if (i->cond == Cond::EQ) ++eq_insns;
  }
  CHECK(it_headers == 1);
  CHECK(eq_insns == 4);

  RunResult taken = run_text(out, lay, 0);
  CHECK(taken.status == RunStatus::Halted);
  CHECK(taken.exit_value == 0);
  RunResult fall = run_text(out, lay, 5);
  CHECK(fall.status == RunStatus::Halted);
  CHECK(fall.exit_value == 9);
}

TEST_CASE("exempt functions are not touched") {
  std::string text = "\t.silhouette_exempt hal_write\n" +
                     fn("hal_write",
                        "\tpush {lr}\n"
                        "\tstr r0, [r1]\n"
                        "\tpop {pc}\n");
  Program p = parse_program(text);
  Program out = shadow_stack_pass(p, tiny_layout());
  CHECK(emit_program(out) == emit_program(p));
}

TEST_CASE("non-constant frames are rejected") {
  auto xform = [](const std::string &body) {
    Program p = parse_program(fn("f", body));
    shadow_stack_pass(p, tiny_layout());
  };

  CHECK(contains(err_of([&] { xform("\tsub sp, sp, r3\n\tbx lr\n"); }),
                 "dynamic stack allocation"));
  CHECK(contains(err_of([&] { xform("\tadd sp, r0, #0\n\tbx lr\n"); }),
                 "dynamic stack allocation"));
  CHECK(contains(err_of([&] { xform("\tldr sp, [r0]\n\tbx lr\n"); }),
                 "sp reload"));
}

TEST_CASE("unrecognized prologue and epilogue shapes are refused") {
  std::string stm = fn("f",
                       "\tstm r0!, {lr}\n"
                       "\tbx lr\n");
  CHECK(contains(err_of([&] { hardened(stm, tiny_layout()); }),
                 "cannot locate the return-address stack slot"));

  std::string ldm = fn("f",
                       "\tpush {r4, lr}\n"
                       "\tldm sp!, {r4, pc}\n");
  std::string msg = err_of([&] { hardened(ldm, tiny_layout()); });
  CHECK(contains(msg, "unrecognized epilogue"));
  CHECK(contains(msg, "f"));
}

TEST_CASE("rewritten output reparses and round-trips") {
  std::string text = fn("main",
                        "\tpush {r4, r5, lr}\n"
                        "\tsub sp, sp, #16\n"
                        "\tmov r4, r0\n"
                        "\tstr r4, [sp, #8]\n"
                        "\tldr r0, [sp, #8]\n"
                        "\tadd sp, sp, #16\n"
                        "\tpop {r4, r5, pc}\n");
  Program out = hardened(text, tiny_layout());
  std::string emitted = emit_program(out);
  CHECK(emit_program(parse_program(emitted)) == emitted);

  RunResult r = run_text(out, tiny_layout(), 31);
  CHECK(r.status == RunStatus::Halted);
  CHECK(r.exit_value == 31);
}
