//===-- manifest.cpp - benchmark workload descriptions ---------------------===//

#include "silhouette/harness.hpp"

#include <sstream>
#include <stdexcept>

namespace silhouette {

namespace {

[[noreturn]] void fail(int line, const std::string &what) {
  throw std::runtime_error("manifest line " + std::to_string(line) + ": " +
                           what);
}

uint64_t number(const std::string &s, int line) {
  try {
    size_t used = 0;
    uint64_t v = std::stoull(s, &used, 0);
    if (used != s.size()) fail(line, "bad number '" + s + "'");
    return v;
  } catch (const std::invalid_argument &) {
    fail(line, "bad number '" + s + "'");
  } catch (const std::out_of_range &) {
    fail(line, "number out of range '" + s + "'");
  }
}

std::string trim(const std::string &s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Manifest parse_manifest(const std::string &text) {
  Manifest m;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string s = raw;
    size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) fail(lineno, "expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    if (val.empty()) fail(lineno, "empty value for " + key);

    if (key == "entry") {
      m.workload.entry = val;
    } else if (key == "arg0") {
      m.workload.r0 = (uint32_t)number(val, lineno);
    } else if (key == "arg1") {
      m.workload.r1 = (uint32_t)number(val, lineno);
    } else if (key == "expect_r0") {
      m.workload.expect_r0 = (uint32_t)number(val, lineno);
    } else if (key == "fuel") {
      m.workload.fuel = number(val, lineno);
    } else if (key == "kind") {
      m.kind = val;
    } else if (key == "preload") {
      size_t colon = val.find(':');
      if (colon == std::string::npos) fail(lineno, "preload needs addr:words");
      uint32_t addr = (uint32_t)number(trim(val.substr(0, colon)), lineno);
      std::string rest = val.substr(colon + 1);
      size_t start = 0;
      while (start <= rest.size()) {
        size_t comma = rest.find(',', start);
        std::string w = trim(comma == std::string::npos
                                 ? rest.substr(start)
                                 : rest.substr(start, comma - start));
        if (w.empty()) fail(lineno, "empty preload word");
        m.workload.preload.emplace_back(addr, (uint32_t)number(w, lineno));
        addr += 4;
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
    } else if (key == "output") {
      size_t dots = val.find("..");
      if (dots == std::string::npos) fail(lineno, "output needs lo..hi");
      uint32_t lo = (uint32_t)number(trim(val.substr(0, dots)), lineno);
      uint32_t hi = (uint32_t)number(trim(val.substr(dots + 2)), lineno);
      if (hi <= lo) fail(lineno, "output range is empty");
      m.workload.outputs.push_back(MemRange{lo, hi - lo});
    } else {
      fail(lineno, "unknown key '" + key + "'");
    }
  }
  return m;
}

}  // namespace silhouette
