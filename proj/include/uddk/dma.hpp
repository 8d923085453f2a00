#pragma once

#include <atomic>
#include <cerrno>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>

#include <fcntl.h>
#include <sys/mman.h>
#include <unistd.h>

#include "uddk/error.hpp"

namespace uddk {

inline constexpr std::size_t kPageSize = 4096;
inline constexpr std::size_t kHugePageSize = std::size_t{2} << 20;

constexpr std::size_t align_up(std::size_t v, std::size_t a) { return (v + a - 1) / a * a; }

class DmaAllocator;

/// Memory the device may access by DMA. Owns its mapping; releases it on destruction.
///
/// `device_base()` is the device-visible address of `host_base()`. Offsets are
/// preserved over the whole region when it was allocated contiguous, and within
/// each backend contiguity unit otherwise (use `device_address()` for inner
/// pointers in that case).
class DmaMemory {
public:
    DmaMemory() = default;
    DmaMemory(const DmaMemory&) = delete;
    DmaMemory& operator=(const DmaMemory&) = delete;
    DmaMemory(DmaMemory&& o) noexcept { swap(o); }
    DmaMemory& operator=(DmaMemory&& o) noexcept {
        if (this != &o) {
            reset();
            swap(o);
        }
        return *this;
    }
    ~DmaMemory() { reset(); }

    std::byte* host_base() const noexcept { return host_; }
    std::uint64_t device_base() const noexcept { return device_; }
    std::size_t length() const noexcept { return length_; }
    bool contiguous() const noexcept { return contiguous_; }
    std::span<std::byte> bytes() const noexcept { return {host_, length_}; }
    explicit operator bool() const noexcept { return host_ != nullptr; }

    std::uint64_t device_address(const void* p) const;

    void reset() noexcept;

private:
    friend class DmaAllocator;

    void swap(DmaMemory& o) noexcept {
        std::swap(host_, o.host_);
        std::swap(device_, o.device_);
        std::swap(length_, o.length_);
        std::swap(mapped_, o.mapped_);
        std::swap(contiguous_, o.contiguous_);
        std::swap(owner_, o.owner_);
    }

    std::byte* host_ = nullptr;
    std::uint64_t device_ = 0;
    std::size_t length_ = 0;
    std::size_t mapped_ = 0;
    bool contiguous_ = false;
    std::shared_ptr<DmaAllocator> owner_;
};

/// Source of DMA memory and the authority for host-to-device address translation.
/// Must be owned by a shared_ptr; regions keep their allocator alive.
class DmaAllocator : public std::enable_shared_from_this<DmaAllocator> {
public:
    virtual ~DmaAllocator() = default;

    /// Largest size that can be handed out as one device-contiguous region.
    virtual std::size_t max_contiguous() const noexcept = 0;

    DmaMemory allocate(std::size_t size, bool require_contiguous) {
        if (size == 0)
            fail(Errc::invalid_argument, "DMA allocation of size 0");
        if (require_contiguous && size > max_contiguous())
            fail(Errc::contiguity_unavailable,
                 "requested " + std::to_string(size) + " bytes contiguous, backend limit is " +
                     std::to_string(max_contiguous()));
        const std::size_t mapped = align_up(size, granule());
        std::byte* host = map(mapped);
        DmaMemory mem;
        mem.host_ = host;
        mem.length_ = size;
        mem.mapped_ = mapped;
        mem.contiguous_ = require_contiguous || mapped <= max_contiguous();
        mem.owner_ = shared_from_this();
        {
            std::lock_guard lock(mu_);
            regions_[reinterpret_cast<std::uintptr_t>(host)] = mapped;
        }
        mem.device_ = translate(host);
        return mem;
    }

    /// Device-visible address of a host pointer. Throws `address_not_dma` for
    /// pointers outside every live region of this allocator.
    std::uint64_t translate(const void* host_addr) const {
        if (!contains(host_addr, 1))
            fail(Errc::address_not_dma, "no DMA region contains host address " +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(host_addr)));
        return translate_unchecked(static_cast<const std::byte*>(host_addr));
    }

    bool contains(const void* host_addr, std::size_t len) const {
        const auto a = reinterpret_cast<std::uintptr_t>(host_addr);
        std::lock_guard lock(mu_);
        auto it = regions_.upper_bound(a);
        if (it == regions_.begin())
            return false;
        --it;
        return a >= it->first && len <= it->second && a - it->first <= it->second - len;
    }

    std::size_t live_regions() const {
        std::lock_guard lock(mu_);
        return regions_.size();
    }

protected:
    /// Allocation rounding unit.
    virtual std::size_t granule() const noexcept = 0;
    /// Returns zeroed, resident memory of exactly `length` bytes (a multiple of granule()).
    virtual std::byte* map(std::size_t length) = 0;
    virtual void unmap(std::byte* host, std::size_t length) noexcept = 0;
    virtual std::uint64_t translate_unchecked(const std::byte* host) const = 0;

private:
    friend class DmaMemory;

    void release(std::byte* host, std::size_t mapped) noexcept {
        {
            std::lock_guard lock(mu_);
            regions_.erase(reinterpret_cast<std::uintptr_t>(host));
        }
        unmap(host, mapped);
    }

    mutable std::mutex mu_;
    std::map<std::uintptr_t, std::size_t> regions_;
};

inline std::uint64_t DmaMemory::device_address(const void* p) const {
    const auto* b = static_cast<const std::byte*>(p);
    if (b < host_ || b >= host_ + length_)
        fail(Errc::address_not_dma, "pointer outside this DMA region");
    if (contiguous_)
        return device_ + static_cast<std::uint64_t>(b - host_);
    return owner_->translate(p);
}

inline void DmaMemory::reset() noexcept {
    if (host_ && owner_)
        owner_->release(host_, mapped_);
    host_ = nullptr;
    device_ = 0;
    length_ = mapped_ = 0;
    contiguous_ = false;
    owner_.reset();
}

/// Allocator for emulated devices: ordinary page-aligned heap memory placed at
/// device addresses handed out from a private bus address space starting at
/// kBusBase. Device and host addresses therefore differ, so mixing them up
/// is caught by the emulated memory bus.
///
/// With `identity` set the device address is the host address instead. Such
/// addresses do not fit the 32-bit queue PFN of legacy virtio.
class EmuDmaAllocator final : public DmaAllocator {
public:
    static constexpr std::uint64_t kBusBase = std::uint64_t{1} << 30;

    explicit EmuDmaAllocator(bool identity = false) : identity_(identity) {}

    bool identity() const noexcept { return identity_; }

    std::size_t max_contiguous() const noexcept override {
        return std::numeric_limits<std::size_t>::max() / 2;
    }

    /// Host pointer for a device range, or nullptr if any byte lies outside a live region.
    std::byte* resolve(std::uint64_t device_addr, std::size_t len) const {
        std::lock_guard lock(mu_);
        auto it = by_device_.upper_bound(device_addr);
        if (it == by_device_.begin())
            return nullptr;
        --it;
        const std::uint64_t off = device_addr - it->first;
        if (off >= it->second.length || len > it->second.length - off)
            return nullptr;
        return it->second.host + off;
    }

protected:
    std::size_t granule() const noexcept override { return kPageSize; }

    std::byte* map(std::size_t length) override {
        void* p = std::aligned_alloc(kPageSize, length);
        if (!p)
            fail(Errc::alloc_failed, "aligned_alloc of " + std::to_string(length) + " bytes");
        std::memset(p, 0, length);
        auto* host = static_cast<std::byte*>(p);
        std::lock_guard lock(mu_);
        // One unmapped guard page between regions.
        std::uint64_t dev = reinterpret_cast<std::uintptr_t>(host);
        if (!identity_) {
            dev = next_;
            next_ += length + kPageSize;
        }
        by_device_[dev] = {host, length};
        by_host_[reinterpret_cast<std::uintptr_t>(host)] = dev;
        return host;
    }

    void unmap(std::byte* host, std::size_t) noexcept override {
        {
            std::lock_guard lock(mu_);
            auto it = by_host_.find(reinterpret_cast<std::uintptr_t>(host));
            if (it != by_host_.end()) {
                by_device_.erase(it->second);
                by_host_.erase(it);
            }
        }
        std::free(host);
    }

    std::uint64_t translate_unchecked(const std::byte* host) const override {
        const auto a = reinterpret_cast<std::uintptr_t>(host);
        std::lock_guard lock(mu_);
        auto it = by_host_.upper_bound(a);
        --it; // the caller has checked that a live region contains `host`
        return it->second + (a - it->first);
    }

private:
    struct Region {
        std::byte* host;
        std::size_t length;
    };

    const bool identity_;
    mutable std::mutex mu_;
    std::uint64_t next_ = kBusBase;
    std::map<std::uint64_t, Region> by_device_;
    std::map<std::uintptr_t, std::uint64_t> by_host_;
};

/// Physical address of a resident page via /proc/self/pagemap.
/// Entry format: 64-bit little-endian, PFN in bits 0-54, present flag in bit 63.
inline std::uint64_t pagemap_translate(const void* host_addr) {
    const auto addr = reinterpret_cast<std::uintptr_t>(host_addr);
    const auto page = static_cast<std::uintptr_t>(::sysconf(_SC_PAGESIZE));
    const int fd = ::open("/proc/self/pagemap", O_RDONLY | O_CLOEXEC);
    if (fd < 0)
        fail(errno == EACCES ? Errc::permission_denied : Errc::io_error, "open /proc/self/pagemap");
    std::uint64_t entry = 0;
    const auto n = ::pread(fd, &entry, sizeof entry, static_cast<off_t>(addr / page * sizeof entry));
    ::close(fd);
    if (n != static_cast<ssize_t>(sizeof entry))
        fail(Errc::io_error, "short read from /proc/self/pagemap");
    if (!(entry >> 63))
        fail(Errc::address_not_dma, "page not present");
    const std::uint64_t pfn = entry & ((std::uint64_t{1} << 55) - 1);
    if (pfn == 0)
        fail(Errc::permission_denied, "pagemap hides frame numbers (needs CAP_SYS_ADMIN)");
    return pfn * page + addr % page;
}

/// Host backend: explicitly allocated 2 MiB huge pages from a hugetlbfs mount.
/// Huge pages are never migrated, so their physical address stays valid.
class HugePageDmaAllocator final : public DmaAllocator {
public:
    explicit HugePageDmaAllocator(std::string huge_dir = default_dir()) : dir_(std::move(huge_dir)) {}

    static std::string default_dir() {
        const char* env = std::getenv("UDDK_HUGE_DIR");
        return env && *env ? env : "/mnt/huge";
    }

    const std::string& directory() const noexcept { return dir_; }

    std::size_t max_contiguous() const noexcept override { return kHugePageSize; }

protected:
    std::size_t granule() const noexcept override { return kHugePageSize; }

    std::byte* map(std::size_t length) override {
        static std::atomic<unsigned> counter{0};
        const std::string path = dir_ + "/uddk-" + std::to_string(::getpid()) + "-" +
                                 std::to_string(counter.fetch_add(1));
        const int fd = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0600);
        if (fd < 0)
            fail(Errc::alloc_failed, "open " + path + ": " + std::strerror(errno));
        if (::ftruncate(fd, static_cast<off_t>(length)) != 0) {
            const int e = errno;
            ::close(fd);
            ::unlink(path.c_str());
            fail(Errc::alloc_failed, "ftruncate " + path + ": " + std::strerror(e));
        }
        void* p = ::mmap(nullptr, length, PROT_READ | PROT_WRITE, MAP_SHARED | MAP_HUGETLB, fd, 0);
        const int e = errno;
        ::close(fd);
        ::unlink(path.c_str());
        if (p == MAP_FAILED)
            fail(Errc::alloc_failed, "mmap huge pages: " + std::string(std::strerror(e)));
        if (::mlock(p, length) != 0) {
            const int le = errno;
            ::munmap(p, length);
            fail(Errc::alloc_failed, "mlock: " + std::string(std::strerror(le)));
        }
        return static_cast<std::byte*>(p);
    }

    void unmap(std::byte* host, std::size_t length) noexcept override { ::munmap(host, length); }

    std::uint64_t translate_unchecked(const std::byte* host) const override {
        return pagemap_translate(host);
    }

private:
    std::string dir_;
};

} // namespace uddk
