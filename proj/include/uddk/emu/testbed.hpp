#pragma once

#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "uddk/devreg.hpp"
#include "uddk/emu/device.hpp"
#include "uddk/emu/ixgbe.hpp"
#include "uddk/emu/virtio.hpp"

namespace uddk::emu {

/// Frame queue that may be pushed from one thread and drained from another.
/// Carries frames between devices driven by different threads.
class FrameChannel {
public:
    void push(std::span<const std::byte> frame) {
        std::lock_guard lock(mu_);
        q_.emplace_back(frame.begin(), frame.end());
    }

    /// Injects up to `max` queued frames into `dst`. Returns how many were taken.
    std::size_t deliver(EmuDevice& dst, std::size_t max = std::numeric_limits<std::size_t>::max()) {
        std::deque<Frame> batch;
        {
            std::lock_guard lock(mu_);
            while (!q_.empty() && batch.size() < max) {
                batch.push_back(std::move(q_.front()));
                q_.pop_front();
            }
        }
        for (auto& f : batch)
            dst.inject_rx(f);
        return batch.size();
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return q_.size();
    }

private:
    mutable std::mutex mu_;
    std::deque<Frame> q_;
};

/// Frames transmitted by `src` are pushed into `ch`.
inline void connect_tx(EmuDevice& src, std::shared_ptr<FrameChannel> ch) {
    src.set_tx_sink([ch = std::move(ch)](std::span<const std::byte> f) { ch->push(f); });
}

/// A set of emulated devices sharing one memory bus, registered under
/// "emu:<name>" for the lifetime of the testbed.
class Testbed {
public:
    explicit Testbed(DeviceRegistry& reg = DeviceRegistry::global())
        : reg_(reg), dma_(std::make_shared<EmuDmaAllocator>()) {}

    Testbed(const Testbed&) = delete;
    Testbed& operator=(const Testbed&) = delete;

    ~Testbed() {
        for (auto& d : devices_)
            reg_.remove_emulated(d->name());
    }

    std::shared_ptr<EmuIxgbe> add_ixgbe(const std::string& name, EmuIxgbe::Options opt = {}) {
        auto d = EmuIxgbe::create(name, dma_, opt);
        add(d);
        return d;
    }

    std::shared_ptr<EmuVirtio> add_virtio(const std::string& name, EmuVirtio::Options opt = {}) {
        auto d = EmuVirtio::create(name, dma_, opt);
        add(d);
        return d;
    }

    /// One step of every device, in the order they were added.
    std::size_t step_all() {
        std::size_t n = 0;
        for (auto& d : devices_)
            n += d->step();
        return n;
    }

    std::size_t run_until_idle(std::size_t max_rounds = 1u << 20) {
        std::size_t total = 0;
        for (std::size_t i = 0; i < max_rounds; ++i) {
            const std::size_t n = step_all();
            if (n == 0)
                break;
            total += n;
        }
        return total;
    }

    std::size_t violation_count() const {
        std::size_t n = 0;
        for (auto& d : devices_)
            n += d->violation_count();
        return n;
    }

    std::vector<std::string> violations() const {
        std::vector<std::string> out;
        for (auto& d : devices_)
            out.insert(out.end(), d->violations().begin(), d->violations().end());
        return out;
    }

    const std::vector<std::shared_ptr<EmuDevice>>& devices() const noexcept { return devices_; }
    const std::shared_ptr<EmuDmaAllocator>& allocator() const noexcept { return dma_; }
    DeviceRegistry& registry() const noexcept { return reg_; }

private:
    void add(std::shared_ptr<EmuDevice> d) {
        reg_.add_emulated(d->name(), d);
        devices_.push_back(std::move(d));
    }

    DeviceRegistry& reg_;
    std::shared_ptr<EmuDmaAllocator> dma_;
    std::vector<std::shared_ptr<EmuDevice>> devices_;
};

} // namespace uddk::emu
