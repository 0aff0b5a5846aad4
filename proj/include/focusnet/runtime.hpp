#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace focusnet {

/// Keeps large activation buffers on the heap instead of returning them to the OS
/// after every step; whole-volume training otherwise spends much of its time in
/// page faults.
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

}  // namespace focusnet
