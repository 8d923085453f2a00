#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "uddk/devreg.hpp"
#include "uddk/dma.hpp"
#include "uddk/error.hpp"

namespace uddk::emu {

using Frame = std::vector<std::byte>;

/// One driver access to a BAR, in program order.
struct Access {
    std::uint32_t offset;
    std::uint32_t value;
    std::uint8_t width; // bytes
    bool write;
    bool port;
};

struct CapturedFrame {
    Frame raw;             // bytes as fetched by DMA, including any driver prefix
    std::size_t header;    // length of the driver prefix inside raw
    std::uint64_t dma_addr; // device address raw was fetched from

    std::span<const std::byte> payload() const noexcept { return std::span(raw).subspan(header); }
};

/// What actually crossed the emulated wire, counted by the device model itself.
struct GroundTruth {
    std::uint64_t rx_packets = 0; // frames written into receive buffers
    std::uint64_t rx_bytes = 0;
    std::uint64_t tx_packets = 0; // frames fetched from transmit descriptors
    std::uint64_t tx_bytes = 0;
    std::uint64_t rx_filtered = 0; // dropped by the address filter
    std::uint64_t rx_overflow = 0; // dropped because the injection queue was full
    std::uint64_t dma_rejected = 0; // steps skipped because bus mastering was off
};

/// Device-address view of host memory: only the live regions of one
/// EmuDmaAllocator are reachable.
class MemoryBus {
public:
    explicit MemoryBus(std::shared_ptr<EmuDmaAllocator> alloc) : alloc_(std::move(alloc)) {}

    std::byte* map(std::uint64_t addr, std::size_t len) const { return alloc_->resolve(addr, len); }
    const std::shared_ptr<EmuDmaAllocator>& allocator() const noexcept { return alloc_; }

private:
    std::shared_ptr<EmuDmaAllocator> alloc_;
};

/// Common part of the device models: PCI function plumbing, access log,
/// violation and warning lists, frame injection and capture.
///
/// A device is confined to the thread driving it.
class EmuDevice : public PciFunction, public std::enable_shared_from_this<EmuDevice> {
public:
    static constexpr std::size_t kDefaultMaxFrame = 2048 - 64;
    static constexpr std::size_t kDefaultInjectionLimit = std::size_t{1} << 20;
    static constexpr std::size_t kStoredViolations = 1000;

    EmuDevice(std::string name, std::shared_ptr<EmuDmaAllocator> dma)
        : addr_(DeviceAddress::parse("emu:" + name)), name_(std::move(name)),
          dma_(dma ? std::move(dma) : std::make_shared<EmuDmaAllocator>()), bus_(dma_) {
        config_.fill(0);
    }

    ~EmuDevice() override = default;

    const std::string& name() const noexcept { return name_; }
    const MemoryBus& bus() const noexcept { return bus_; }

    // --- PciFunction
    const DeviceAddress& address() const noexcept override { return addr_; }

    RegisterSpace map_bar(int bar) override {
        if (bar != 0 || mmio_length() == 0)
            fail(Errc::bar_not_mmio, addr_.str() + " BAR" + std::to_string(bar) + " is not memory-mapped");
        return RegisterSpace(std::make_shared<MmioPort>(shared_from_this()));
    }

    PortSpace open_port_bar(int bar) override {
        if (bar != 0 || port_length() == 0)
            fail(Errc::bar_not_io, addr_.str() + " BAR" + std::to_string(bar) + " is not an IO port BAR");
        return PortSpace(std::make_shared<IoPort>(shared_from_this()));
    }

    std::uint16_t config_read16(std::size_t offset) override {
        check_config(offset);
        std::uint16_t v;
        std::memcpy(&v, config_.data() + offset, 2);
        return v;
    }

    void config_write16(std::size_t offset, std::uint16_t value) override {
        check_config(offset);
        if (offset != pci::kCommand) {
            warn("config write to read-only offset " + hex(offset));
            return;
        }
        std::memcpy(config_.data() + offset, &value, 2);
    }

    void remove_kernel_driver() override { ++unbind_calls_; }

    std::shared_ptr<DmaAllocator> dma_allocator() override { return dma_; }

    bool dma_enabled() const noexcept {
        std::uint16_t cmd;
        std::memcpy(&cmd, config_.data() + pci::kCommand, 2);
        return cmd & pci::kCommandBusMaster;
    }

    std::size_t unbind_calls() const noexcept { return unbind_calls_; }

    // --- Device clock
    /// One bounded round of device work. Returns the number of frames moved.
    std::size_t step() {
        if (!dma_enabled()) {
            if (has_pending_work())
                ++gt_.dma_rejected;
            return 0;
        }
        return do_step();
    }

    /// Steps until a step does no work or `max_steps` is reached.
    std::size_t run_until_idle(std::size_t max_steps = 1u << 20) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < max_steps; ++i) {
            const std::size_t n = step();
            if (n == 0)
                break;
            total += n;
        }
        return total;
    }

    /// Step after every driver register write.
    void set_auto_step(bool on) noexcept { auto_step_ = on; }
    bool auto_step() const noexcept { return auto_step_; }

    /// While paused the device fetches no transmit descriptors.
    void set_tx_paused(bool on) noexcept { tx_paused_ = on; }
    bool tx_paused() const noexcept { return tx_paused_; }

    // --- Wire side
    std::size_t max_frame() const noexcept { return max_frame_; }
    void set_max_frame(std::size_t n) noexcept { max_frame_ = n; }
    void set_injection_limit(std::size_t n) noexcept { injection_limit_ = n; }
    std::size_t pending_rx() const noexcept { return injected_.size(); }

    /// Queues a frame for delivery on a later step. Returns false if the
    /// injection queue is full (the frame is dropped and counted).
    bool inject_rx(std::span<const std::byte> frame) {
        if (frame.empty())
            fail(Errc::invalid_argument, "zero-length frame");
        if (frame.size() > max_frame_)
            fail(Errc::invalid_argument,
                 "frame of " + std::to_string(frame.size()) + " bytes exceeds " + std::to_string(max_frame_));
        if (injected_.size() >= injection_limit_) {
            ++gt_.rx_overflow;
            return false;
        }
        injected_.emplace_back(frame.begin(), frame.end());
        return true;
    }

    void set_capture(bool on) noexcept { capture_ = on; }
    bool capture() const noexcept { return capture_; }
    const std::vector<CapturedFrame>& captured() const noexcept { return captured_; }

    /// Captured frames without the driver prefix, in transmission order; clears the capture.
    std::vector<Frame> drain_tx() {
        std::vector<Frame> out;
        out.reserve(captured_.size());
        for (auto& c : captured_)
            out.emplace_back(c.payload().begin(), c.payload().end());
        captured_.clear();
        return out;
    }

    /// Captured frames as fetched, including any driver prefix; clears the capture.
    std::vector<Frame> drain_tx_raw() {
        std::vector<Frame> out;
        out.reserve(captured_.size());
        for (auto& c : captured_)
            out.push_back(std::move(c.raw));
        captured_.clear();
        return out;
    }

    /// Every transmitted frame (payload view) is also handed to `sink`.
    void set_tx_sink(std::function<void(std::span<const std::byte>)> sink) { sink_ = std::move(sink); }

    const GroundTruth& ground_truth() const noexcept { return gt_; }

    // --- Oracles
    const std::vector<Access>& access_log() const noexcept { return log_; }
    void clear_access_log() { log_.clear(); }

    /// Driver writes to `offset` since construction (or reset_write_counts()).
    std::uint64_t write_count(std::size_t offset) const {
        auto it = writes_.find(offset);
        return it == writes_.end() ? 0 : it->second;
    }
    void reset_write_counts() { writes_.clear(); }

    std::size_t violation_count() const noexcept { return violation_count_; }
    const std::vector<std::string>& violations() const noexcept { return violations_; }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }
    void clear_violations() {
        violations_.clear();
        violation_count_ = 0;
    }

protected:
    virtual std::size_t mmio_length() const noexcept { return 0; }
    virtual std::uint32_t mmio_read(std::size_t) { return 0; }
    virtual void mmio_write(std::size_t, std::uint32_t) {}
    virtual std::size_t port_length() const noexcept { return 0; }
    virtual std::uint32_t port_read(std::size_t, unsigned) { return 0; }
    virtual void port_write(std::size_t, unsigned, std::uint32_t) {}

    virtual std::size_t do_step() = 0;
    virtual bool has_pending_work() const = 0;

    void set_ids(std::uint16_t vendor, std::uint16_t device) {
        std::memcpy(config_.data() + pci::kVendorId, &vendor, 2);
        std::memcpy(config_.data() + pci::kDeviceId, &device, 2);
    }

    void set_config16(std::size_t offset, std::uint16_t v) { std::memcpy(config_.data() + offset, &v, 2); }

    void violation(std::string what) {
        ++violation_count_;
        if (violations_.size() < kStoredViolations)
            violations_.push_back(name_ + ": " + std::move(what));
    }

    void warn(std::string what) {
        if (warned_.insert(what).second)
            warnings_.push_back(name_ + ": " + std::move(what));
    }

    /// Bounds-checked DMA window; records a violation and returns nullptr when
    /// any byte lies outside the registered regions.
    std::byte* dma(std::uint64_t addr, std::size_t len, const char* what) {
        std::byte* p = bus_.map(addr, len);
        if (!p)
            violation(std::string("DMA outside registered memory: ") + what + " at " + hex(addr) + " len " +
                      std::to_string(len));
        return p;
    }

    std::deque<Frame>& injected() noexcept { return injected_; }

    void emit_tx(std::span<const std::byte> raw, std::size_t header, std::uint64_t addr) {
        const auto payload = raw.subspan(header);
        ++gt_.tx_packets;
        gt_.tx_bytes += payload.size();
        if (capture_)
            captured_.push_back({Frame(raw.begin(), raw.end()), header, addr});
        if (sink_)
            sink_(payload);
    }

    void count_rx(std::size_t payload_bytes) {
        ++gt_.rx_packets;
        gt_.rx_bytes += payload_bytes;
    }

    void count_filtered() { ++gt_.rx_filtered; }

    static std::string hex(std::uint64_t v) {
        char b[24];
        std::snprintf(b, sizeof b, "0x%llx", static_cast<unsigned long long>(v));
        return b;
    }

private:
    class MmioPort final : public RegisterBackend {
    public:
        explicit MmioPort(std::shared_ptr<EmuDevice> d) : d_(std::move(d)) {}
        std::size_t length() const noexcept override { return d_->mmio_length(); }
        std::uint32_t load32(std::size_t o) override {
            const std::uint32_t v = d_->mmio_read(o);
            d_->log_.push_back({static_cast<std::uint32_t>(o), v, 4, false, false});
            return v;
        }
        void store32(std::size_t o, std::uint32_t v) override {
            d_->log_.push_back({static_cast<std::uint32_t>(o), v, 4, true, false});
            ++d_->writes_[o];
            d_->mmio_write(o, v);
            if (d_->auto_step_)
                d_->step();
        }

    private:
        std::shared_ptr<EmuDevice> d_;
    };

    class IoPort final : public PortBackend {
    public:
        explicit IoPort(std::shared_ptr<EmuDevice> d) : d_(std::move(d)) {}
        std::size_t length() const noexcept override { return d_->port_length(); }
        std::uint32_t load(std::size_t o, unsigned w) override {
            const std::uint32_t v = d_->port_read(o, w);
            d_->log_.push_back({static_cast<std::uint32_t>(o), v, static_cast<std::uint8_t>(w), false, true});
            return v;
        }
        void store(std::size_t o, unsigned w, std::uint32_t v) override {
            d_->log_.push_back({static_cast<std::uint32_t>(o), v, static_cast<std::uint8_t>(w), true, true});
            ++d_->writes_[o];
            d_->port_write(o, w, v);
            if (d_->auto_step_)
                d_->step();
        }

    private:
        std::shared_ptr<EmuDevice> d_;
    };

    void check_config(std::size_t offset) const {
        if (offset % 2 != 0 || offset + 2 > config_.size())
            fail(Errc::out_of_range, "config space offset " + std::to_string(offset));
    }

    DeviceAddress addr_;
    std::string name_;
    std::shared_ptr<EmuDmaAllocator> dma_;
    MemoryBus bus_;
    std::array<std::uint8_t, 256> config_{};
    std::size_t unbind_calls_ = 0;

    bool auto_step_ = false;
    bool tx_paused_ = false;
    bool capture_ = false;
    std::size_t max_frame_ = kDefaultMaxFrame;
    std::size_t injection_limit_ = kDefaultInjectionLimit;
    std::deque<Frame> injected_;
    std::vector<CapturedFrame> captured_;
    std::function<void(std::span<const std::byte>)> sink_;
    GroundTruth gt_;

    std::vector<Access> log_;
    std::unordered_map<std::size_t, std::uint64_t> writes_;
    std::vector<std::string> violations_;
    std::size_t violation_count_ = 0;
    std::vector<std::string> warnings_;
    std::set<std::string> warned_;
};

/// Frames transmitted by either device are injected into the other on its next step.
inline void wire(EmuDevice& a, EmuDevice& b) {
    auto wa = a.weak_from_this();
    auto wb = b.weak_from_this();
    a.set_tx_sink([wb](std::span<const std::byte> f) {
        if (auto p = wb.lock())
            p->inject_rx(f);
    });
    b.set_tx_sink([wa](std::span<const std::byte> f) {
        if (auto p = wa.lock())
            p->inject_rx(f);
    });
}

} // namespace uddk::emu
