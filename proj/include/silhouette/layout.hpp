//===-- layout.hpp - Device address map ------------------------------------===//
//
// The memory layout drives every other component: the shadow stack mirrors
// the stack band at a fixed offset, the MPU regions are built from the bands,
// and the store-hardening masks are derived from the band arrangement.  Bands
// are power-of-two sized and size-aligned so each fits one MPU region.
//
//===----------------------------------------------------------------------===//

#pragma once

#include <cstdint>
#include <string>

namespace silhouette {

struct MemRange {
  uint32_t base = 0;
  uint32_t size = 0;

  bool contains(uint32_t addr) const { return addr - base < size; }
  uint32_t end() const { return base + size; }
  bool overlaps(const MemRange &o) const {
    return base < o.end() && o.base < end();
  }
};

struct MemoryLayout {
  MemRange code;
  MemRange stack;   // grows down from stack.end(); the band below is unmapped
  uint32_t shadow_offset = 0;  // shadow slot = regular slot + shadow_offset
  MemRange heap;    // heap and globals
  MemRange system;  // device registers, including the MPU aperture
  uint32_t jmpbuf_capacity = 8;

  MemRange shadow() const { return MemRange{stack.base + shadow_offset, stack.size}; }
  uint32_t initial_sp() const { return stack.end(); }
};

// code 1 MB at 0, stack 2 MB at the bottom of RAM with the shadow stack the
// next 2 MB band up, heap above that, system space at 0xE0000000.
MemoryLayout default_layout();

// Line-oriented `key = 0xHEX` pairs ('#' or '@' comments).  Unknown keys are
// an error; omitted keys keep their default.  The result is validated.
MemoryLayout parse_layout(const std::string &text);

// Throws when bands are unrepresentable as MPU regions (size not a power of
// two, base unaligned), overlap each other, or leave no overflow gap below
// the stack.
void validate_layout(const MemoryLayout &l);

}  // namespace silhouette
