#pragma once

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "uddk/dma.hpp"
#include "uddk/error.hpp"

namespace uddk {

/// "DDDD:BB:DD.F" PCI address, or "emu:<name>" for an in-process emulated device.
class DeviceAddress {
public:
    static DeviceAddress parse(std::string_view text) {
        DeviceAddress a;
        a.text_ = std::string(text);
        if (text.starts_with("emu:")) {
            if (text.size() == 4)
                fail(Errc::parse_error, "empty emulated device name in '" + a.text_ + "'");
            a.emulated_ = true;
            return a;
        }
        // DDDD:BB:DD.F
        if (text.size() != 12 || text[4] != ':' || text[7] != ':' || text[10] != '.')
            fail(Errc::parse_error, "expected DDDD:BB:DD.F, got '" + a.text_ + "'");
        a.domain_ = static_cast<std::uint16_t>(hex(text.substr(0, 4), a.text_));
        a.bus_ = static_cast<std::uint8_t>(hex(text.substr(5, 2), a.text_));
        a.device_ = static_cast<std::uint8_t>(hex(text.substr(8, 2), a.text_));
        a.function_ = static_cast<std::uint8_t>(hex(text.substr(11, 1), a.text_));
        if (a.device_ > 0x1f || a.function_ > 7)
            fail(Errc::parse_error, "device/function out of range in '" + a.text_ + "'");
        return a;
    }

    bool is_emulated() const noexcept { return emulated_; }
    std::string emu_name() const { return emulated_ ? text_.substr(4) : std::string{}; }
    const std::string& str() const noexcept { return text_; }
    std::uint16_t domain() const noexcept { return domain_; }
    std::uint8_t bus() const noexcept { return bus_; }
    std::uint8_t device() const noexcept { return device_; }
    std::uint8_t function() const noexcept { return function_; }

private:
    static unsigned hex(std::string_view s, const std::string& whole) {
        unsigned v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
        if (ec != std::errc{} || p != s.data() + s.size())
            fail(Errc::parse_error, "bad hex field '" + std::string(s) + "' in '" + whole + "'");
        return v;
    }

    std::string text_;
    bool emulated_ = false;
    std::uint16_t domain_ = 0;
    std::uint8_t bus_ = 0, device_ = 0, function_ = 0;
};

// ---------------------------------------------------------------------------
// Register spaces

class RegisterBackend {
public:
    virtual ~RegisterBackend() = default;
    virtual std::size_t length() const noexcept = 0;
    virtual std::uint32_t load32(std::size_t offset) = 0;
    virtual void store32(std::size_t offset, std::uint32_t value) = 0;
};

/// MMIO-style register space: 32-bit, 4-byte aligned accesses only, each
/// performed exactly once.
class RegisterSpace {
public:
    RegisterSpace() = default;
    explicit RegisterSpace(std::shared_ptr<RegisterBackend> backend) : backend_(std::move(backend)) {}

    std::size_t length() const noexcept { return backend_ ? backend_->length() : 0; }
    explicit operator bool() const noexcept { return backend_ != nullptr; }

    std::uint32_t read32(std::size_t offset) const {
        check(offset);
        return backend_->load32(offset);
    }

    void write32(std::size_t offset, std::uint32_t value) const {
        check(offset);
        backend_->store32(offset, value);
    }

    void set_flags32(std::size_t offset, std::uint32_t mask) const { write32(offset, read32(offset) | mask); }
    void clear_flags32(std::size_t offset, std::uint32_t mask) const { write32(offset, read32(offset) & ~mask); }

    /// Polls until all bits of `mask` are set. Returns the number of reads taken.
    std::size_t wait_set32(std::size_t offset, std::uint32_t mask,
                           std::chrono::nanoseconds timeout = std::chrono::seconds(1)) const {
        return wait(offset, mask, true, timeout);
    }

    /// Polls until all bits of `mask` are clear. Returns the number of reads taken.
    std::size_t wait_clear32(std::size_t offset, std::uint32_t mask,
                             std::chrono::nanoseconds timeout = std::chrono::seconds(1)) const {
        return wait(offset, mask, false, timeout);
    }

private:
    void check(std::size_t offset) const {
        if (!backend_)
            fail(Errc::invalid_argument, "register access on an unopened register space");
        if (offset % 4 != 0)
            fail(Errc::misaligned, "32-bit register access at offset " + std::to_string(offset));
        if (offset > backend_->length() || backend_->length() - offset < 4)
            fail(Errc::out_of_range, "register offset " + std::to_string(offset) + " beyond length " +
                                         std::to_string(backend_->length()));
    }

    std::size_t wait(std::size_t offset, std::uint32_t mask, bool want_set,
                     std::chrono::nanoseconds timeout) const {
        if (mask == 0)
            fail(Errc::invalid_argument, "wait on empty mask");
        const auto deadline = std::chrono::steady_clock::now() + timeout;
        auto backoff = std::chrono::microseconds(1);
        for (std::size_t polls = 1;; ++polls) {
            const std::uint32_t v = read32(offset);
            if (want_set ? (v & mask) == mask : (v & mask) == 0)
                return polls;
            if (std::chrono::steady_clock::now() >= deadline) {
                char buf[96];
                std::snprintf(buf, sizeof buf, "waiting for bits 0x%08x %s at offset 0x%zx", mask,
                              want_set ? "set" : "clear", offset);
                fail(Errc::timeout, buf);
            }
            std::this_thread::sleep_for(backoff);
            backoff = std::min(backoff * 2, std::chrono::microseconds(1000));
        }
    }

    std::shared_ptr<RegisterBackend> backend_;
};

class PortBackend {
public:
    virtual ~PortBackend() = default;
    virtual std::size_t length() const noexcept = 0;
    virtual std::uint32_t load(std::size_t offset, unsigned width) = 0;
    virtual void store(std::size_t offset, unsigned width, std::uint32_t value) = 0;
};

/// IO-port-style space: 8/16/32-bit accesses, naturally aligned.
class PortSpace {
public:
    PortSpace() = default;
    explicit PortSpace(std::shared_ptr<PortBackend> backend) : backend_(std::move(backend)) {}

    std::size_t length() const noexcept { return backend_ ? backend_->length() : 0; }
    explicit operator bool() const noexcept { return backend_ != nullptr; }

    std::uint8_t read8(std::size_t o) const { return static_cast<std::uint8_t>(read(o, 1)); }
    std::uint16_t read16(std::size_t o) const { return static_cast<std::uint16_t>(read(o, 2)); }
    std::uint32_t read32(std::size_t o) const { return read(o, 4); }
    void write8(std::size_t o, std::uint8_t v) const { write(o, 1, v); }
    void write16(std::size_t o, std::uint16_t v) const { write(o, 2, v); }
    void write32(std::size_t o, std::uint32_t v) const { write(o, 4, v); }

private:
    void check(std::size_t offset, unsigned width) const {
        if (!backend_)
            fail(Errc::invalid_argument, "port access on an unopened port space");
        if (offset % width != 0)
            fail(Errc::misaligned, std::to_string(width * 8) + "-bit port access at offset " +
                                       std::to_string(offset));
        if (offset > backend_->length() || backend_->length() - offset < width)
            fail(Errc::out_of_range, "port offset " + std::to_string(offset) + " beyond length " +
                                         std::to_string(backend_->length()));
    }
    std::uint32_t read(std::size_t o, unsigned w) const {
        check(o, w);
        return backend_->load(o, w);
    }
    void write(std::size_t o, unsigned w, std::uint32_t v) const {
        check(o, w);
        backend_->store(o, w, v);
    }

    std::shared_ptr<PortBackend> backend_;
};

// ---------------------------------------------------------------------------
// PCI functions

namespace pci {
inline constexpr std::size_t kVendorId = 0x00;
inline constexpr std::size_t kDeviceId = 0x02;
inline constexpr std::size_t kCommand = 0x04;
inline constexpr std::size_t kClassRevision = 0x08;
inline constexpr std::uint16_t kCommandIo = 1u << 0;
inline constexpr std::uint16_t kCommandMemory = 1u << 1;
inline constexpr std::uint16_t kCommandBusMaster = 1u << 2;
} // namespace pci

/// One PCI function as seen by a driver: BAR access, configuration space,
/// kernel-driver handoff, and the DMA allocator matching its memory bus.
class PciFunction {
public:
    virtual ~PciFunction() = default;
    virtual const DeviceAddress& address() const noexcept = 0;
    virtual RegisterSpace map_bar(int bar) = 0;
    virtual PortSpace open_port_bar(int bar) = 0;
    virtual std::uint16_t config_read16(std::size_t offset) = 0;
    virtual void config_write16(std::size_t offset, std::uint16_t value) = 0;
    virtual void remove_kernel_driver() = 0;
    virtual std::shared_ptr<DmaAllocator> dma_allocator() = 0;
};

namespace detail {

[[noreturn]] inline void fail_errno(const std::string& what, int err) {
    Errc code = Errc::io_error;
    if (err == EACCES || err == EPERM)
        code = Errc::permission_denied;
    else if (err == ENOENT || err == ENODEV)
        code = Errc::device_not_found;
    fail(code, what + ": " + std::strerror(err));
}

class MmapRegisterBackend final : public RegisterBackend {
public:
    MmapRegisterBackend(void* base, std::size_t len) : base_(static_cast<std::byte*>(base)), len_(len) {}
    ~MmapRegisterBackend() override { ::munmap(base_, len_); }
    std::size_t length() const noexcept override { return len_; }
    std::uint32_t load32(std::size_t o) override {
        return *reinterpret_cast<const volatile std::uint32_t*>(base_ + o);
    }
    void store32(std::size_t o, std::uint32_t v) override {
        *reinterpret_cast<volatile std::uint32_t*>(base_ + o) = v;
    }

private:
    std::byte* base_;
    std::size_t len_;
};

/// IO port BAR exposed as a sysfs file: each access is one pread/pwrite of the
/// exact width, which the kernel turns into the matching port instruction.
class FilePortBackend final : public PortBackend {
public:
    FilePortBackend(int fd, std::size_t len) : fd_(fd), len_(len) {}
    ~FilePortBackend() override { ::close(fd_); }
    std::size_t length() const noexcept override { return len_; }
    std::uint32_t load(std::size_t o, unsigned w) override {
        std::uint32_t v = 0;
        if (::pread(fd_, &v, w, static_cast<off_t>(o)) != static_cast<ssize_t>(w))
            fail_errno("port read", errno);
        return v;
    }
    void store(std::size_t o, unsigned w, std::uint32_t v) override {
        if (::pwrite(fd_, &v, w, static_cast<off_t>(o)) != static_cast<ssize_t>(w))
            fail_errno("port write", errno);
    }

private:
    int fd_;
    std::size_t len_;
};

} // namespace detail

/// Host backend over the sysfs PCI tree (uio-style: resource files and config file).
class SysfsPciFunction final : public PciFunction {
public:
    static constexpr std::uint64_t kResourceIo = 0x100;
    static constexpr std::uint64_t kResourceMem = 0x200;

    SysfsPciFunction(std::string sysfs_root, DeviceAddress addr,
                     std::shared_ptr<DmaAllocator> dma = nullptr)
        : addr_(std::move(addr)), dir_(std::move(sysfs_root) + "/" + addr_.str()), dma_(std::move(dma)) {
        struct stat st {};
        if (::stat(dir_.c_str(), &st) != 0)
            detail::fail_errno("PCI device " + addr_.str(), errno);
    }

    const DeviceAddress& address() const noexcept override { return addr_; }
    const std::string& directory() const noexcept { return dir_; }

    RegisterSpace map_bar(int bar) override {
        if (auto flags = resource_flags(bar); flags && !(*flags & kResourceMem))
            fail(Errc::bar_not_mmio, addr_.str() + " BAR" + std::to_string(bar));
        const std::string path = dir_ + "/resource" + std::to_string(bar);
        const int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
        if (fd < 0)
            detail::fail_errno(path, errno);
        struct stat st {};
        if (::fstat(fd, &st) != 0 || st.st_size <= 0) {
            ::close(fd);
            fail(Errc::bar_not_mmio, path + " has no mappable size");
        }
        const auto len = static_cast<std::size_t>(st.st_size);
        void* p = ::mmap(nullptr, len, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
        const int err = errno;
        ::close(fd);
        if (p == MAP_FAILED)
            detail::fail_errno("mmap " + path, err);
        return RegisterSpace(std::make_shared<detail::MmapRegisterBackend>(p, len));
    }

    PortSpace open_port_bar(int bar) override {
        if (auto flags = resource_flags(bar); flags && !(*flags & kResourceIo))
            fail(Errc::bar_not_io, addr_.str() + " BAR" + std::to_string(bar));
        const std::string path = dir_ + "/resource" + std::to_string(bar);
        const int fd = ::open(path.c_str(), O_RDWR | O_CLOEXEC);
        if (fd < 0)
            detail::fail_errno(path, errno);
        struct stat st {};
        ::fstat(fd, &st);
        return PortSpace(std::make_shared<detail::FilePortBackend>(fd, static_cast<std::size_t>(st.st_size)));
    }

    std::uint16_t config_read16(std::size_t offset) override {
        std::uint16_t v = 0;
        config_io(offset, &v, false);
        return v;
    }

    void config_write16(std::size_t offset, std::uint16_t value) override {
        config_io(offset, &value, true);
    }

    void remove_kernel_driver() override {
        const std::string driver = dir_ + "/driver";
        struct stat st {};
        if (::lstat(driver.c_str(), &st) != 0)
            return; // not bound
        const std::string unbind = driver + "/unbind";
        const int fd = ::open(unbind.c_str(), O_WRONLY | O_CLOEXEC);
        if (fd < 0)
            detail::fail_errno(unbind, errno);
        const auto n = ::write(fd, addr_.str().data(), addr_.str().size());
        const int err = errno;
        ::close(fd);
        if (n != static_cast<ssize_t>(addr_.str().size()))
            detail::fail_errno("write " + unbind, err);
    }

    std::shared_ptr<DmaAllocator> dma_allocator() override {
        if (!dma_)
            dma_ = std::make_shared<HugePageDmaAllocator>();
        return dma_;
    }

private:
    // Flags column of the sysfs "resource" table, if the table exists.
    std::optional<std::uint64_t> resource_flags(int bar) const {
        std::ifstream in(dir_ + "/resource");
        if (!in)
            return std::nullopt;
        std::string line;
        for (int i = 0; std::getline(in, line); ++i) {
            if (i != bar)
                continue;
            unsigned long long start = 0, end = 0, flags = 0;
            if (std::sscanf(line.c_str(), "%llx %llx %llx", &start, &end, &flags) != 3)
                return std::nullopt;
            return flags;
        }
        fail(Errc::device_not_found, addr_.str() + " has no BAR" + std::to_string(bar));
    }

    void config_io(std::size_t offset, std::uint16_t* v, bool write) {
        const std::string path = dir_ + "/config";
        const int fd = ::open(path.c_str(), (write ? O_RDWR : O_RDONLY) | O_CLOEXEC);
        if (fd < 0)
            detail::fail_errno(path, errno);
        const auto n = write ? ::pwrite(fd, v, 2, static_cast<off_t>(offset))
                             : ::pread(fd, v, 2, static_cast<off_t>(offset));
        const int err = errno;
        ::close(fd);
        if (n != 2) {
            if (n >= 0)
                fail(Errc::io_error, "short config space access on " + path);
            detail::fail_errno(path, err);
        }
    }

    DeviceAddress addr_;
    std::string dir_;
    std::shared_ptr<DmaAllocator> dma_;
};

/// Resolves device addresses: "emu:<name>" against registered emulated devices,
/// everything else against the sysfs PCI tree.
class DeviceRegistry {
public:
    static DeviceRegistry& global() {
        static DeviceRegistry instance;
        return instance;
    }

    void add_emulated(const std::string& name, std::shared_ptr<PciFunction> fn) {
        std::lock_guard lock(mu_);
        emulated_[name] = std::move(fn);
    }

    void remove_emulated(const std::string& name) {
        std::lock_guard lock(mu_);
        emulated_.erase(name);
    }

    void set_sysfs_root(std::string root) {
        std::lock_guard lock(mu_);
        sysfs_root_ = std::move(root);
    }

    std::string sysfs_root() const {
        std::lock_guard lock(mu_);
        return sysfs_root_;
    }

    std::shared_ptr<PciFunction> open(const DeviceAddress& addr) {
        std::lock_guard lock(mu_);
        if (addr.is_emulated()) {
            auto it = emulated_.find(addr.emu_name());
            if (it == emulated_.end())
                fail(Errc::device_not_found, "no emulated device '" + addr.emu_name() + "'");
            return it->second;
        }
        return std::make_shared<SysfsPciFunction>(sysfs_root_, addr);
    }

private:
    mutable std::mutex mu_;
    std::string sysfs_root_ = "/sys/bus/pci/devices";
    std::map<std::string, std::shared_ptr<PciFunction>> emulated_;
};

inline RegisterSpace open_register_space(const DeviceAddress& addr, int bar,
                                         DeviceRegistry& reg = DeviceRegistry::global()) {
    return reg.open(addr)->map_bar(bar);
}

/// Sets the bus-master bit in the PCI command register.
inline void enable_dma(PciFunction& fn) {
    const std::uint16_t cmd = fn.config_read16(pci::kCommand);
    fn.config_write16(pci::kCommand, cmd | pci::kCommandBusMaster);
}

inline void enable_dma(const DeviceAddress& addr, DeviceRegistry& reg = DeviceRegistry::global()) {
    enable_dma(*reg.open(addr));
}

inline void remove_kernel_driver(const DeviceAddress& addr, DeviceRegistry& reg = DeviceRegistry::global()) {
    reg.open(addr)->remove_kernel_driver();
}

} // namespace uddk
