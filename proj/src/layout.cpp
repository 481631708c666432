#include "silhouette/layout.hpp"

#include "silhouette/asm.hpp"

#include <cctype>
#include <map>
#include <sstream>

namespace silhouette {

MemoryLayout default_layout() {
  MemoryLayout l;
  l.code = {0x00000000, 0x00100000};
  l.stack = {0x20000000, 0x00200000};
  l.shadow_offset = 0x00200000;
  l.heap = {0x20400000, 0x00200000};
  l.system = {0xE0000000, 0x01000000};
  l.jmpbuf_capacity = 8;
  return l;
}

namespace {

bool power_of_two(uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

void check_band(const MemRange &r, const char *name) {
  if (!power_of_two(r.size) || r.size < 32)
    throw AsmError(std::string("layout: ") + name +
                       " size must be a power of two and at least 32",
                   0);
  if (r.base % r.size != 0)
    throw AsmError(std::string("layout: ") + name +
                       " base must be aligned to its size",
                   0);
}

}  // namespace

void validate_layout(const MemoryLayout &l) {
  check_band(l.code, "code");
  check_band(l.stack, "stack");
  check_band(l.heap, "heap");
  check_band(l.system, "system");
  if (l.shadow_offset == 0)
    throw AsmError("layout: shadow_stack_offset must be nonzero", 0);
  MemRange sh = l.shadow();
  check_band(sh, "shadow stack");

  const MemRange *bands[] = {&l.code, &l.stack, &sh, &l.heap, &l.system};
  const char *names[] = {"code", "stack", "shadow stack", "heap", "system"};
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j)
      if (bands[i]->overlaps(*bands[j]))
        throw AsmError(std::string("layout: ") + names[i] + " overlaps " +
                           names[j],
                       0);

  // Overflow detection needs the band one stack-size below the stack to be
  // unmapped, so a runaway stack faults instead of silently descending.
  if (l.stack.base < l.stack.size)
    throw AsmError("layout: no room for an overflow gap below the stack", 0);
  MemRange gap{l.stack.base - l.stack.size, l.stack.size};
  for (int i = 0; i < 5; ++i)
    if (bands[i]->overlaps(gap))
      throw AsmError(std::string("layout: ") + names[i] +
                         " occupies the overflow gap below the stack",
                     0);

  if (l.jmpbuf_capacity < 1)
    throw AsmError("layout: jmpbuf_capacity must be at least 1", 0);
}

MemoryLayout parse_layout(const std::string &text) {
  MemoryLayout l = default_layout();
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    size_t cut = line.find_first_of("#@");
    if (cut != std::string::npos) line.erase(cut);
    size_t eq = line.find('=');
    std::string key, val;
    if (eq != std::string::npos) {
      key = line.substr(0, eq);
      val = line.substr(eq + 1);
    } else {
      key = line;
    }
    auto trim = [](std::string &s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(val);
    if (key.empty()) {
      if (!val.empty()) throw AsmError("layout: missing key", lineno);
      continue;
    }
    if (eq == std::string::npos || val.empty())
      throw AsmError("layout: expected key = value", lineno);

    uint64_t num = 0;
    try {
      size_t used = 0;
      num = std::stoull(val, &used, 0);
      if (used != val.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception &) {
      throw AsmError("layout: bad numeric value '" + val + "'", lineno);
    }
    if (num > 0xFFFFFFFFull)
      throw AsmError("layout: value does not fit 32 bits", lineno);
    uint32_t v = (uint32_t)num;

    if (key == "code_base") l.code.base = v;
    else if (key == "code_size") l.code.size = v;
    else if (key == "stack_base") l.stack.base = v;
    else if (key == "stack_size") l.stack.size = v;
    else if (key == "shadow_stack_offset") l.shadow_offset = v;
    else if (key == "heap_base") l.heap.base = v;
    else if (key == "heap_size") l.heap.size = v;
    else if (key == "system_base") l.system.base = v;
    else if (key == "system_size") l.system.size = v;
    else if (key == "jmpbuf_capacity") l.jmpbuf_capacity = v;
    else throw AsmError("layout: unknown key '" + key + "'", lineno);
  }
  validate_layout(l);
  return l;
}

}  // namespace silhouette
