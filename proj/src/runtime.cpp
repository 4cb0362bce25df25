#include "gfcn/runtime.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gfcn {

void retain_heap_memory() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, -1);
    return true;
  }();
  (void)done;
#endif
}

}  // namespace gfcn
