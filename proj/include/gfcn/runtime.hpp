#pragma once

namespace gfcn {

/// Keeps freed tensor memory inside the process heap. Training allocates and
/// releases multi-megabyte buffers every step; returning them to the system makes
/// each step page-fault them back in. Safe to call more than once. No-op off glibc.
void retain_heap_memory();

}  // namespace gfcn
