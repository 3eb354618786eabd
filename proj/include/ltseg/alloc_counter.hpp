#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>

namespace ltseg {

struct AllocSnapshot {
  std::int64_t live_bytes = 0;
  std::int64_t peak_bytes = 0;
  std::int64_t temp_tensor_count = 0;
};

// Process-global accounting of tensor storage. Every Tensor buffer is
// obtained through CountingAllocator, so the counters see exactly the
// whole-tensor allocations and nothing else.
//
// Only meaningful when a single thread is allocating tensors (see bench).
class AllocCounter {
 public:
  static void record_alloc(std::size_t bytes) noexcept;
  static void record_free(std::size_t bytes) noexcept;

  static AllocSnapshot snapshot() noexcept;

  // Sets peak to the current live value and zeroes the allocation count.
  // live_bytes is never reset: it tracks buffers that still exist.
  static void reset() noexcept;
};

template <typename T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    T* p = std::allocator<T>{}.allocate(n);
    AllocCounter::record_alloc(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    AllocCounter::record_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};

}  // namespace ltseg
