//===-- sim_jmpbuf.cpp - modeled setjmp/longjmp runtime -------------------===//
//
// The register map lives outside simulated memory, standing in for the
// protected slice of the shadow region the real runtime uses.  Keyed by the
// jmp_buf address; fixed capacity from the layout.  Invalidation rules:
// longjmp drops entries saved below the restored sp (their frames are gone),
// and a returning function that called setjmp drops entries at or below the
// deallocated frame.
//
//===----------------------------------------------------------------------===//

#include "silhouette/sim.hpp"

#include <algorithm>

namespace silhouette {

bool JmpBufMap::upsert(const JmpBufEntry &e) {
  for (JmpBufEntry &x : entries_) {
    if (x.key == e.key) {
      x = e;
      return true;
    }
  }
  if (entries_.size() >= capacity_) return false;
  entries_.push_back(e);
  return true;
}

const JmpBufEntry *JmpBufMap::find(uint32_t key) const {
  for (const JmpBufEntry &x : entries_)
    if (x.key == key) return &x;
  return nullptr;
}

void JmpBufMap::invalidate_below(uint32_t sp) {
  std::erase_if(entries_, [sp](const JmpBufEntry &e) { return e.sp < sp; });
}

void JmpBufMap::invalidate_at_or_below(uint32_t sp) {
  std::erase_if(entries_, [sp](const JmpBufEntry &e) { return e.sp <= sp; });
}

bool Machine::sim_setjmp(uint32_t buf_addr) {
  JmpBufEntry e;
  e.key = buf_addr;
  e.sp = st.sp;
  e.lr = st.lr;
  for (int i = 0; i < 8; ++i) e.r[i] = st.r[4 + i];
  for (int i = 0; i < 16; ++i) e.s[i] = st.s[16 + i];
  if (!jmpbuf_.upsert(e)) {
    abort_ = "Map reached its capacity";
    return false;
  }
  st.r[0] = 0;  // the saved context resumes with the "second return" value
  return true;
}

bool Machine::sim_longjmp(uint32_t buf_addr, uint32_t val) {
  const JmpBufEntry *found = jmpbuf_.find(buf_addr);
  if (!found) {
    abort_ = "Invalid jmp_buf";
    return false;
  }
  JmpBufEntry e = *found;  // invalidation below must not tear the source
  jmpbuf_.invalidate_below(e.sp);
  st.sp = e.sp;
  st.lr = e.lr;
  for (int i = 0; i < 8; ++i) st.r[4 + i] = e.r[i];
  for (int i = 0; i < 16; ++i) st.s[16 + i] = e.s[i];
  st.r[0] = val ? val : 1;
  st.pc = e.lr & ~1u;
  // Activations entered after the setjmp are gone; the root frame stays.
  while (oracle_.size() > 1 && oracle_.back().sp_at_call <= e.sp)
    oracle_.pop_back();
  return true;
}

void Machine::expire_on_return(uint32_t sp_now) {
  jmpbuf_.invalidate_at_or_below(sp_now);
}

}  // namespace silhouette
