//===-- mpu.hpp - ARMv7-M memory protection unit model ---------------------===//
//
// Pure permission model: a configuration plus an access query yield a
// deterministic allow/deny.  The access-permission field follows the
// architectural AP encodings, with the reserved value 0b100 implemented as
// priv-no-access / unpriv-read-write (the inverted-privileges configuration).
//
//===----------------------------------------------------------------------===//

#pragma once

#include "silhouette/layout.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace silhouette {

enum class HardenMode { Silhouette, Invert, SFI };

struct MpuRegion {
  uint8_t number = 0;  // 0-7; the highest number wins where regions overlap
  uint32_t base = 0;   // multiple of size
  uint32_t size = 32;  // power of two, at least 32
  uint8_t ap = 0;      // 3-bit access-permission encoding
  bool xn = false;
  bool enabled = false;

  bool contains(uint32_t addr) const { return addr - base < size; }
};

struct MpuConfig {
  std::array<MpuRegion, 8> regions{};
  bool background_enabled = true;  // privileged default access in mapped bands
  bool hfnmiena = true;
  std::vector<MemRange> mapped;  // bands backed by memory, for the background rule
};

enum class AccessKind { Read, Write, Execute };
enum class View { Privileged, Unprivileged };

// Permission bits of one AP encoding for one view.
bool ap_allows_read(uint8_t ap, View v);
bool ap_allows_write(uint8_t ap, View v);

// Decides one access.  The whole [addr, addr+size) range must fall under a
// single deciding region (or the background); straddling a boundary faults.
// Execution additionally requires a non-XN region and an address outside the
// architecturally never-executable system space (0xE0000000 upward).
bool check_access(const MpuConfig &mpu, uint32_t addr, unsigned size,
                  AccessKind kind, View view);

// The five-region scheme protecting shadow stack, code, and device state:
// region 0 code (read/execute), 1 stack (RW, XN), 2 shadow stack (mode
// dependent), 3 heap/globals (RW, XN), 4 system (privileged RW, XN).
MpuConfig build_layout_config(const MemoryLayout &layout, HardenMode mode);

}  // namespace silhouette
