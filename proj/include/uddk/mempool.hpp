#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <new>
#include <span>
#include <vector>

#include "uddk/dma.hpp"
#include "uddk/error.hpp"

namespace uddk {

class Mempool;

/// Header of every pool entry. Lives at the start of the entry in DMA memory;
/// packet data starts one cache line (kDataOffset bytes) after it. The bytes
/// between the metadata fields and the data are headroom a driver may use for
/// a device-specific prefix.
struct PacketBuffer {
    static constexpr std::size_t kDataOffset = 64;

    std::uint64_t buf_device_addr; // device address of this header, not of data()
    Mempool* pool;
    std::uint32_t pool_index;
    std::uint32_t size; // payload bytes in use
    std::byte headroom[kDataOffset - 24];

    std::byte* data() noexcept { return reinterpret_cast<std::byte*>(this) + kDataOffset; }
    const std::byte* data() const noexcept { return reinterpret_cast<const std::byte*>(this) + kDataOffset; }
    std::span<std::byte> payload() noexcept { return {data(), size}; }
    std::span<const std::byte> payload() const noexcept { return {data(), size}; }
    std::uint64_t data_device_addr() const noexcept { return buf_device_addr + kDataOffset; }
};

static_assert(sizeof(PacketBuffer) == PacketBuffer::kDataOffset);
static_assert(offsetof(PacketBuffer, headroom) == 24);

/// Fixed-size collection of fixed-size packet buffers backed by one DMA allocation.
/// Free buffers are kept on a LIFO stack of indices. Not thread-safe: a pool and
/// its buffers belong to one thread at a time.
class Mempool {
public:
    static constexpr std::uint32_t kDefaultEntrySize = 2048;
    static constexpr std::uint32_t kMinEntrySize = 128;

    static std::unique_ptr<Mempool> create(DmaAllocator& alloc, std::uint32_t capacity,
                                           std::uint32_t entry_size = kDefaultEntrySize) {
        if (capacity == 0)
            fail(Errc::invalid_argument, "mempool capacity must be > 0");
        if (entry_size < kMinEntrySize)
            fail(Errc::invalid_argument, "mempool entry size must be >= 128");
        if (entry_size % alignof(PacketBuffer) != 0)
            fail(Errc::invalid_argument, "mempool entry size must be a multiple of 8");
        const std::size_t total = std::size_t{capacity} * entry_size;
        // Entries must not straddle a contiguity boundary of the backing memory.
        if (total > alloc.max_contiguous() && alloc.max_contiguous() % entry_size != 0)
            fail(Errc::invalid_argument,
                 "entry size must divide " + std::to_string(alloc.max_contiguous()) + " for pools this large");
        return std::unique_ptr<Mempool>(new Mempool(alloc.allocate(total, false), capacity, entry_size));
    }

    Mempool(const Mempool&) = delete;
    Mempool& operator=(const Mempool&) = delete;

    std::uint32_t capacity() const noexcept { return capacity_; }
    std::uint32_t entry_size() const noexcept { return entry_size_; }
    std::uint32_t data_capacity() const noexcept {
        return entry_size_ - static_cast<std::uint32_t>(PacketBuffer::kDataOffset);
    }
    std::uint32_t free_count() const noexcept { return static_cast<std::uint32_t>(free_stack_.size()); }
    const DmaMemory& memory() const noexcept { return mem_; }

    PacketBuffer* buffer(std::uint32_t index) const noexcept {
        return reinterpret_cast<PacketBuffer*>(mem_.host_base() + std::size_t{index} * entry_size_);
    }

    bool is_free(std::uint32_t index) const noexcept { return in_pool_[index] != 0; }

    bool owns(const PacketBuffer* buf) const noexcept { return buf && buf->pool == this; }

    /// One buffer, or nullptr when the pool is empty.
    PacketBuffer* alloc() noexcept {
        if (free_stack_.empty())
            return nullptr;
        const std::uint32_t idx = free_stack_.back();
        free_stack_.pop_back();
        in_pool_[idx] = 0;
        PacketBuffer* buf = buffer(idx);
        buf->size = data_capacity();
        return buf;
    }

    /// Fills `out` with up to out.size() buffers; returns how many were taken.
    std::size_t alloc_batch(std::span<PacketBuffer*> out) noexcept {
        std::size_t n = 0;
        for (; n < out.size(); ++n) {
            PacketBuffer* b = alloc();
            if (!b)
                break;
            out[n] = b;
        }
        return n;
    }

    /// Returns a buffer to this pool. Freeing a buffer that is already free, or
    /// that belongs to another pool, aborts with a diagnostic.
    void free(PacketBuffer* buf) noexcept {
        if (!owns(buf) || buf->pool_index >= capacity_ || buffer(buf->pool_index) != buf) {
            std::fprintf(stderr, "uddk: mempool %p: free of foreign or corrupt buffer %p\n",
                         static_cast<void*>(this), static_cast<void*>(buf));
            std::abort();
        }
        if (in_pool_[buf->pool_index]) {
            std::fprintf(stderr, "uddk: mempool %p: double free of buffer index %u\n",
                         static_cast<void*>(this), buf->pool_index);
            std::abort();
        }
        in_pool_[buf->pool_index] = 1;
        free_stack_.push_back(buf->pool_index);
    }

private:
    Mempool(DmaMemory mem, std::uint32_t capacity, std::uint32_t entry_size)
        : mem_(std::move(mem)), capacity_(capacity), entry_size_(entry_size),
          in_pool_(capacity, 1) {
        free_stack_.reserve(capacity);
        for (std::uint32_t i = 0; i < capacity; ++i) {
            auto* raw = mem_.host_base() + std::size_t{i} * entry_size;
            auto* buf = ::new (raw) PacketBuffer{};
            buf->buf_device_addr = mem_.device_address(raw);
            buf->pool = this;
            buf->pool_index = i;
            buf->size = 0;
        }
        // Highest index at the bottom so the first allocations come out in index order.
        for (std::uint32_t i = capacity; i-- > 0;)
            free_stack_.push_back(i);
    }

    DmaMemory mem_;
    std::uint32_t capacity_;
    std::uint32_t entry_size_;
    std::vector<std::uint32_t> free_stack_;
    std::vector<std::uint8_t> in_pool_;
};

inline std::size_t buf_alloc_batch(Mempool& pool, std::span<PacketBuffer*> out) noexcept {
    return pool.alloc_batch(out);
}

inline void buf_free(PacketBuffer* buf) noexcept {
    buf->pool->free(buf);
}

} // namespace uddk
