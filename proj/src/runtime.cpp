#include "repsim/runtime.hpp"

#include <climits>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace repsim {

void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_TRIM_THRESHOLD, INT_MAX);
  mallopt(M_TOP_PAD, 512 << 20);
#endif
}

}  // namespace repsim
