#include "doctest.h"
#include "silhouette/asm.hpp"
#include "silhouette/mpu.hpp"

using namespace silhouette;

namespace {

MpuConfig one_region(uint8_t ap, bool xn = false, uint32_t base = 0x20000000,
                     uint32_t size = 0x1000, uint8_t number = 5) {
  MpuConfig cfg;
  cfg.background_enabled = true;  // irrelevant: nothing is mapped
  MpuRegion r;
  r.number = number;
  r.base = base;
  r.size = size;
  r.ap = ap;
  r.xn = xn;
  r.enabled = true;
  cfg.regions[number] = r;
  return cfg;
}

}  // namespace

TEST_CASE("access-permission truth table, all encodings and views") {
  // Rows indexed by the 3-bit AP encoding.  0b100 is the inverted encoding:
  // unprivileged-only access.
  const bool read_priv[8] = {false, true, true, true, false, true, true, true};
  const bool read_unpriv[8] = {false, false, true, true, true, false, true, true};
  const bool write_priv[8] = {false, true, true, true, false, false, false, false};
  const bool write_unpriv[8] = {false, false, false, true, true, false, false, false};

  for (uint8_t ap = 0; ap < 8; ++ap) {
    CAPTURE((int)ap);
    MpuConfig cfg = one_region(ap);
    CHECK(ap_allows_read(ap, View::Privileged) == read_priv[ap]);
    CHECK(ap_allows_read(ap, View::Unprivileged) == read_unpriv[ap]);
    CHECK(ap_allows_write(ap, View::Privileged) == write_priv[ap]);
    CHECK(ap_allows_write(ap, View::Unprivileged) == write_unpriv[ap]);
    for (unsigned size : {1u, 2u, 4u}) {
      CHECK(check_access(cfg, 0x20000010, size, AccessKind::Read,
                         View::Privileged) == read_priv[ap]);
      CHECK(check_access(cfg, 0x20000010, size, AccessKind::Read,
                         View::Unprivileged) == read_unpriv[ap]);
      CHECK(check_access(cfg, 0x20000010, size, AccessKind::Write,
                         View::Privileged) == write_priv[ap]);
      CHECK(check_access(cfg, 0x20000010, size, AccessKind::Write,
                         View::Unprivileged) == write_unpriv[ap]);
    }
  }
}

TEST_CASE("execute requires readable, not-xn, and executable address space") {
  MpuConfig plain = one_region(0b110, false);
  CHECK(check_access(plain, 0x20000000, 2, AccessKind::Execute, View::Privileged));
  CHECK(check_access(plain, 0x20000000, 2, AccessKind::Execute, View::Unprivileged));

  MpuConfig xn = one_region(0b110, true);
  CHECK(!check_access(xn, 0x20000000, 2, AccessKind::Execute, View::Privileged));

  MpuConfig priv_only = one_region(0b001, false);
  CHECK(check_access(priv_only, 0x20000000, 2, AccessKind::Execute, View::Privileged));
  CHECK(!check_access(priv_only, 0x20000000, 2, AccessKind::Execute, View::Unprivileged));

  // System space never executes, whatever the region says.
  MpuConfig sys = one_region(0b110, false, 0xE0000000);
  CHECK(check_access(sys, 0xE0000000, 4, AccessKind::Read, View::Privileged));
  CHECK(!check_access(sys, 0xE0000000, 2, AccessKind::Execute, View::Privileged));
}

TEST_CASE("background region: privileged default access in mapped memory only") {
  MpuConfig cfg;
  cfg.background_enabled = true;
  cfg.mapped = {MemRange{0x20000000, 0x1000}};
  CHECK(check_access(cfg, 0x20000800, 4, AccessKind::Read, View::Privileged));
  CHECK(check_access(cfg, 0x20000800, 4, AccessKind::Write, View::Privileged));
  CHECK(!check_access(cfg, 0x20000800, 4, AccessKind::Write, View::Unprivileged));
  CHECK(!check_access(cfg, 0x20000800, 4, AccessKind::Read, View::Unprivileged));
  // Unmapped address: denied for everyone.
  CHECK(!check_access(cfg, 0x30000000, 4, AccessKind::Write, View::Privileged));
  // Range running off the end of the mapped band: denied.
  CHECK(!check_access(cfg, 0x20000FFE, 4, AccessKind::Write, View::Privileged));

  MpuConfig off = cfg;
  off.background_enabled = false;
  CHECK(!check_access(off, 0x20000800, 4, AccessKind::Read, View::Privileged));
}

TEST_CASE("straddling a region boundary faults") {
  MpuConfig cfg = one_region(0b011, true, 0x20000000, 0x100, 1);
  MpuRegion second;
  second.number = 2;
  second.base = 0x20000100;
  second.size = 0x100;
  second.ap = 0b011;
  second.enabled = true;
  cfg.regions[2] = second;

  CHECK(check_access(cfg, 0x200000FC, 4, AccessKind::Write, View::Privileged));
  CHECK(check_access(cfg, 0x20000100, 4, AccessKind::Write, View::Privileged));
  // Both sides writable, but the word crosses the boundary between deciders.
  CHECK(!check_access(cfg, 0x200000FE, 4, AccessKind::Write, View::Privileged));

  // Region into background is a straddle too.
  MpuConfig lone = one_region(0b011, true, 0x20000000, 0x100, 1);
  lone.mapped = {MemRange{0x20000000, 0x10000}};
  CHECK(!check_access(lone, 0x200000FE, 4, AccessKind::Write, View::Privileged));
}

TEST_CASE("overlapping regions resolve to the highest number") {
  MpuConfig cfg = one_region(0b000, false, 0x20000000, 0x1000, 1);
  MpuRegion top;
  top.number = 7;
  top.base = 0x20000000;
  top.size = 0x1000;
  top.ap = 0b011;
  top.enabled = true;
  cfg.regions[7] = top;
  CHECK(check_access(cfg, 0x20000010, 4, AccessKind::Write, View::Unprivileged));

  MpuConfig flipped = one_region(0b011, false, 0x20000000, 0x1000, 1);
  MpuRegion deny;
  deny.number = 7;
  deny.base = 0x20000000;
  deny.size = 0x1000;
  deny.ap = 0b000;
  deny.enabled = true;
  flipped.regions[7] = deny;
  CHECK(!check_access(flipped, 0x20000010, 4, AccessKind::Write, View::Unprivileged));
}

TEST_CASE("layout config: five regions with the documented permissions") {
  MemoryLayout l = default_layout();
  MpuConfig cfg = build_layout_config(l, HardenMode::Silhouette);

  int enabled = 0;
  for (const MpuRegion &r : cfg.regions) enabled += r.enabled ? 1 : 0;
  CHECK(enabled == 5);
  CHECK(cfg.hfnmiena);
  CHECK(cfg.background_enabled);
  CHECK(cfg.regions[0].ap == 0b110);
  CHECK(!cfg.regions[0].xn);
  CHECK(cfg.regions[1].ap == 0b011);
  CHECK(cfg.regions[1].xn);
  CHECK(cfg.regions[2].ap == 0b010);
  CHECK(cfg.regions[2].base == 0x20200000);
  CHECK(cfg.regions[2].size == 0x200000);
  CHECK(cfg.regions[3].ap == 0b011);
  CHECK(cfg.regions[4].ap == 0b001);

  MpuConfig inv = build_layout_config(l, HardenMode::Invert);
  CHECK(inv.regions[2].ap == 0b100);
  MpuConfig sfi = build_layout_config(l, HardenMode::SFI);
  CHECK(sfi.regions[2].ap == 0b010);
}

TEST_CASE("layout config: shadow stack protection semantics") {
  MemoryLayout l = default_layout();
  uint32_t shadow_addr = l.shadow().base + 0x40;

  MpuConfig sil = build_layout_config(l, HardenMode::Silhouette);
  CHECK(!check_access(sil, shadow_addr, 4, AccessKind::Write, View::Unprivileged));
  CHECK(check_access(sil, shadow_addr, 4, AccessKind::Write, View::Privileged));
  CHECK(check_access(sil, shadow_addr, 4, AccessKind::Read, View::Unprivileged));

  MpuConfig inv = build_layout_config(l, HardenMode::Invert);
  CHECK(check_access(inv, shadow_addr, 4, AccessKind::Write, View::Unprivileged));
  CHECK(!check_access(inv, shadow_addr, 4, AccessKind::Write, View::Privileged));
  CHECK(!check_access(inv, shadow_addr, 4, AccessKind::Read, View::Privileged));

  // Application bands stay writable through the unprivileged view.
  CHECK(check_access(sil, l.stack.base + 0x100, 4, AccessKind::Write,
                     View::Unprivileged));
  CHECK(check_access(sil, l.heap.base + 0x100, 4, AccessKind::Write,
                     View::Unprivileged));
  // Device registers are reachable only from the privileged view.
  CHECK(!check_access(sil, l.system.base + 0x100, 4, AccessKind::Write,
                      View::Unprivileged));
  CHECK(check_access(sil, l.system.base + 0x100, 4, AccessKind::Write,
                     View::Privileged));
  // Code is never writable and stacks never execute.
  CHECK(!check_access(sil, l.code.base, 4, AccessKind::Write, View::Privileged));
  CHECK(check_access(sil, l.code.base, 2, AccessKind::Execute, View::Privileged));
  CHECK(!check_access(sil, l.stack.base, 2, AccessKind::Execute, View::Privileged));

  // The band below the stack is unmapped: overflow faults for every view.
  uint32_t overflow = l.stack.base - 4;
  CHECK(!check_access(sil, overflow, 4, AccessKind::Write, View::Privileged));
  CHECK(!check_access(sil, overflow, 4, AccessKind::Write, View::Unprivileged));

  // Stores crossing from stack into shadow straddle two regions.
  CHECK(!check_access(sil, l.shadow().base - 2, 4, AccessKind::Write,
                      View::Privileged));
}

TEST_CASE("layout parsing and validation") {
  MemoryLayout def = default_layout();
  CHECK_NOTHROW(validate_layout(def));
  CHECK(def.shadow().base - def.stack.base == def.shadow_offset);
  CHECK(def.initial_sp() == 0x20200000);

  MemoryLayout parsed = parse_layout(
      "# device map\n"
      "stack_base = 0x20000000\n"
      "stack_size = 0x100000   @ 1 MB\n"
      "shadow_stack_offset = 0x100000\n"
      "heap_base = 0x20200000\n"
      "heap_size = 0x100000\n"
      "jmpbuf_capacity = 4\n");
  CHECK(parsed.stack.size == 0x100000);
  CHECK(parsed.shadow().base == 0x20100000);
  CHECK(parsed.jmpbuf_capacity == 4);
  CHECK(parsed.code.base == def.code.base);  // untouched keys keep defaults

  CHECK_THROWS_AS(parse_layout("bogus_key = 0x1\n"), AsmError);
  CHECK_THROWS_AS(parse_layout("stack_base 0x1\n"), AsmError);
  CHECK_THROWS_AS(parse_layout("stack_base = pancake\n"), AsmError);
  CHECK_THROWS_AS(parse_layout("stack_size = 0x180000\n"), AsmError);  // not 2^n
  CHECK_THROWS_AS(parse_layout("stack_base = 0x20100000\n"), AsmError);  // unaligned
  CHECK_THROWS_AS(parse_layout("shadow_stack_offset = 0x400000\n"),
                  AsmError);  // shadow collides with the heap band
  CHECK_THROWS_AS(parse_layout("jmpbuf_capacity = 0\n"), AsmError);
  // Heap parked directly below the stack occupies the overflow gap.
  CHECK_THROWS_AS(parse_layout("heap_base = 0x1FE00000\n"), AsmError);
}
