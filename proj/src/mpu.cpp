#include "silhouette/mpu.hpp"

#include "silhouette/asm.hpp"

namespace silhouette {

// AP permission matrix, indexed by the 3-bit encoding.  0b100 is reserved
// architecturally; here it grants unprivileged access only.
bool ap_allows_read(uint8_t ap, View v) {
  bool priv = v == View::Privileged;
  switch (ap & 7) {
  case 0b000: return false;
  case 0b001: return priv;
  case 0b010: return true;
  case 0b011: return true;
  case 0b100: return !priv;
  case 0b101: return priv;
  case 0b110: return true;
  case 0b111: return true;
  }
  return false;
}

bool ap_allows_write(uint8_t ap, View v) {
  bool priv = v == View::Privileged;
  switch (ap & 7) {
  case 0b000: return false;
  case 0b001: return priv;
  case 0b010: return priv;
  case 0b011: return true;
  case 0b100: return !priv;
  case 0b101: return false;
  case 0b110: return false;
  case 0b111: return false;
  }
  return false;
}

namespace {

// ARMv7-M system space: never executable regardless of MPU settings.
bool never_executable(uint32_t addr) { return addr >= 0xE0000000u; }

// Index of the deciding region for a single byte address, or -1 for
// background.
int decider(const MpuConfig &mpu, uint32_t addr) {
  int best = -1;
  for (const MpuRegion &r : mpu.regions)
    if (r.enabled && r.contains(addr) && (best < 0 || r.number > best))
      best = r.number;
  return best;
}

bool in_mapped(const MpuConfig &mpu, uint32_t addr) {
  for (const MemRange &m : mpu.mapped)
    if (m.contains(addr)) return true;
  return false;
}

}  // namespace

bool check_access(const MpuConfig &mpu, uint32_t addr, unsigned size,
                  AccessKind kind, View view) {
  if (size == 0) return false;
  uint32_t last = addr + size - 1;
  if (last < addr) return false;  // wraps the address space

  int first_region = decider(mpu, addr);
  if (decider(mpu, last) != first_region) return false;  // straddles a boundary

  if (first_region >= 0) {
    const MpuRegion &r = mpu.regions[first_region];
    switch (kind) {
    case AccessKind::Read:
      return ap_allows_read(r.ap, view);
    case AccessKind::Write:
      return ap_allows_write(r.ap, view);
    case AccessKind::Execute:
      return !r.xn && !never_executable(addr) && ap_allows_read(r.ap, view);
    }
    return false;
  }

  // Background: privileged default access within mapped memory only.
  if (!mpu.background_enabled || view != View::Privileged) return false;
  if (!in_mapped(mpu, addr) || !in_mapped(mpu, last)) return false;
  if (kind == AccessKind::Execute) return !never_executable(addr);
  return true;
}

MpuConfig build_layout_config(const MemoryLayout &layout, HardenMode mode) {
  validate_layout(layout);
  MpuConfig cfg;
  cfg.background_enabled = true;
  cfg.hfnmiena = true;

  auto set = [&](uint8_t num, MemRange band, uint8_t ap, bool xn) {
    MpuRegion r;
    r.number = num;
    r.base = band.base;
    r.size = band.size;
    r.ap = ap;
    r.xn = xn;
    r.enabled = true;
    cfg.regions[num] = r;
  };

  // Shadow stack: writable only by privileged code in the normal scheme; the
  // inverted scheme flips both permissions via the reserved encoding.
  uint8_t shadow_ap = mode == HardenMode::Invert ? 0b100 : 0b010;

  set(0, layout.code, 0b110, false);
  set(1, layout.stack, 0b011, true);
  set(2, layout.shadow(), shadow_ap, true);
  set(3, layout.heap, 0b011, true);
  set(4, layout.system, 0b001, true);

  cfg.mapped = {layout.code, layout.stack, layout.shadow(), layout.heap,
                layout.system};
  return cfg;
}

}  // namespace silhouette
