#pragma once

#include <atomic>
#include <bit>
#include <cstddef>

namespace uddk::detail {

static_assert(std::endian::native == std::endian::little,
              "descriptor layouts are little endian and accessed natively");

// Accesses to memory shared with the device go through volatile so that every
// load and store is performed exactly as written.
template <class T>
inline T dma_load(const std::byte* p) noexcept {
    return *reinterpret_cast<const volatile T*>(p);
}

template <class T>
inline void dma_store(std::byte* p, T v) noexcept {
    *reinterpret_cast<volatile T*>(p) = v;
}

// Orders descriptor and payload writes before the doorbell that publishes them.
inline void publish_barrier() noexcept { std::atomic_thread_fence(std::memory_order_release); }
// Orders a status read before reads of the data it guards.
inline void consume_barrier() noexcept { std::atomic_thread_fence(std::memory_order_acquire); }

} // namespace uddk::detail
