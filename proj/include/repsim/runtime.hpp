#pragma once

namespace repsim {

/// Keeps large activation buffers on the heap between training steps instead
/// of returning them to the OS (glibc only; no-op elsewhere). Call once at
/// program start.
void tune_allocator();

}  // namespace repsim
