#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "uddk/detail/dma_access.hpp"
#include "uddk/emu/device.hpp"
#include "uddk/virtio_defs.hpp"

namespace uddk::emu {

struct EmuVirtioOptions {
    std::uint32_t features = virtio::feature::CSUM | virtio::feature::GUEST_CSUM | virtio::feature::MAC |
                             virtio::feature::GUEST_TSO4 | virtio::feature::HOST_TSO4 |
                             virtio::feature::MRG_RXBUF | virtio::feature::STATUS | virtio::feature::CTRL_VQ |
                             virtio::feature::CTRL_RX;
    std::uint16_t queue_size = virtio::kQueueSize;
    std::array<std::uint8_t, 6> mac{0x02, 0x00, 0x00, 0x00, 0x00, 0x10};
    std::size_t step_budget = 64;
    std::size_t max_frame = EmuDevice::kDefaultMaxFrame;
};

/// Legacy virtio-net device behind an IO port BAR with receive, transmit and
/// control queues. Reads driver structures only through the memory bus and
/// writes only used rings and device-writable buffers.
class EmuVirtio final : public EmuDevice {
public:
    using Options = EmuVirtioOptions;

    static constexpr unsigned kNumQueues = 3;

    static std::shared_ptr<EmuVirtio> create(std::string name, std::shared_ptr<EmuDmaAllocator> dma = nullptr,
                                             Options opt = Options{}) {
        return std::shared_ptr<EmuVirtio>(new EmuVirtio(std::move(name), std::move(dma), opt));
    }

    bool promiscuous() const noexcept { return promisc_; }
    std::uint8_t status() const noexcept { return status_; }
    std::uint32_t driver_features() const noexcept { return driver_features_; }
    const std::array<std::uint8_t, 6>& mac() const noexcept { return mac_; }

    /// Answer every control command with an error ack.
    void set_reject_commands(bool on) noexcept { reject_ = on; }

    bool queue_active(unsigned q) const { return vq_.at(q).active; }
    std::uint64_t queue_pfn(unsigned q) const { return vq_.at(q).base / virtio::kQueueAlign; }
    std::uint64_t notifications(unsigned q) const { return vq_.at(q).notifies; }
    std::uint64_t commands_processed() const noexcept { return commands_; }

    /// Driver-published avail.idx as currently in memory (0 for an inactive queue).
    std::uint16_t avail_idx(unsigned q) const {
        const std::byte* m = ring(vq_.at(q));
        return m ? detail::dma_load<std::uint16_t>(m + layout_.avail_idx()) : 0;
    }

    std::uint16_t used_idx(unsigned q) const { return vq_.at(q).used_idx; }

protected:
    std::size_t port_length() const noexcept override { return virtio::port::kBarSize; }

    std::uint32_t port_read(std::size_t o, unsigned w) override {
        using namespace virtio::port;
        check_width(o, w);
        switch (o) {
        case DEVICE_FEATURES: return opt_.features;
        case DRIVER_FEATURES: return driver_features_;
        case QUEUE_PFN: return select_ < kNumQueues ? static_cast<std::uint32_t>(queue_pfn(select_)) : 0;
        case QUEUE_SIZE: return select_ < kNumQueues ? opt_.queue_size : 0;
        case QUEUE_SELECT: return select_;
        case QUEUE_NOTIFY: return 0;
        case DEVICE_STATUS: return status_;
        case ISR: return std::exchange(isr_, 0);
        default:
            if (o >= MAC && o < MAC + 6)
                return mac_[o - MAC];
            warn("read of unmodeled port " + hex(o));
            return 0;
        }
    }

    void port_write(std::size_t o, unsigned w, std::uint32_t v) override {
        using namespace virtio::port;
        check_width(o, w);
        switch (o) {
        case DRIVER_FEATURES:
            if (v & ~opt_.features)
                violation("driver accepted features " + hex(v & ~opt_.features) + " that were not offered");
            if (v & ~(virtio::feature::CTRL_VQ | virtio::feature::CTRL_RX | virtio::feature::MAC |
                      virtio::feature::STATUS))
                warn("accepted features " + hex(v) + " include behaviour this model does not implement");
            driver_features_ = v;
            return;
        case QUEUE_PFN: set_pfn(v); return;
        case QUEUE_SELECT: select_ = static_cast<std::uint16_t>(v); return;
        case QUEUE_NOTIFY: notify(static_cast<std::uint16_t>(v)); return;
        case DEVICE_STATUS:
            if (v == 0)
                reset();
            else
                status_ = static_cast<std::uint8_t>(v);
            return;
        default:
            if (o >= MAC && o < MAC + 6) {
                mac_[o - MAC] = static_cast<std::uint8_t>(v);
                return;
            }
            warn("write to read-only or unmodeled port " + hex(o));
        }
    }

    bool has_pending_work() const override {
        return pending_rx() > 0 || (vq_[virtio::kTxQueue].active && avail_idx(virtio::kTxQueue) !=
                                                                        vq_[virtio::kTxQueue].next_avail);
    }

    std::size_t do_step() override {
        if (!(status_ & virtio::status::DRIVER_OK))
            return 0;
        std::size_t n = 0;
        if (!tx_paused())
            n += step_tx();
        n += step_rx();
        return n;
    }

private:
    struct Vq {
        bool active = false;
        std::uint64_t base = 0;
        std::uint16_t seen_avail = 0; // avail.idx at the last scan
        std::uint16_t next_avail = 0; // next avail slot the device consumes
        std::uint16_t used_idx = 0;
        std::vector<std::uint8_t> published; // descriptor head is with the device
        std::uint64_t notifies = 0;
    };

    struct Desc {
        std::uint64_t addr;
        std::uint32_t len;
        std::uint16_t flags;
        std::uint16_t next;
    };

    EmuVirtio(std::string name, std::shared_ptr<EmuDmaAllocator> dma, const Options& opt)
        : EmuDevice(std::move(name), std::move(dma)), opt_(opt), mac_(opt.mac),
          layout_(virtio::RingLayout::for_size(opt.queue_size)) {
        set_ids(virtio::kVendorId, virtio::kLegacyNetDeviceId);
        set_config16(virtio::kSubsystemId, virtio::kSubsystemNet);
        set_max_frame(opt.max_frame);
        reset();
    }

    static unsigned expected_width(std::size_t o) {
        using namespace virtio::port;
        switch (o) {
        case DEVICE_FEATURES:
        case DRIVER_FEATURES:
        case QUEUE_PFN: return 4;
        case QUEUE_SIZE:
        case QUEUE_SELECT:
        case QUEUE_NOTIFY: return 2;
        default: return 1;
        }
    }

    void check_width(std::size_t o, unsigned w) {
        if (w != expected_width(o))
            violation(std::to_string(w * 8) + "-bit access to port " + hex(o) + ", register is " +
                      std::to_string(expected_width(o) * 8) + "-bit");
    }

    void reset() {
        status_ = 0;
        isr_ = 0;
        driver_features_ = 0;
        select_ = 0;
        promisc_ = false;
        for (auto& q : vq_)
            q = Vq{};
    }

    void set_pfn(std::uint32_t pfn) {
        if (select_ >= kNumQueues) {
            violation("queue address written for nonexistent queue " + std::to_string(select_));
            return;
        }
        Vq& q = vq_[select_];
        q = Vq{};
        if (pfn == 0)
            return;
        q.base = std::uint64_t{pfn} * virtio::kQueueAlign;
        if (!dma(q.base, layout_.total, "virtqueue"))
            return;
        q.active = true;
        q.published.assign(opt_.queue_size, 0);
    }

    void notify(std::uint16_t qi) {
        if (qi >= kNumQueues) {
            violation("notify for nonexistent queue " + std::to_string(qi));
            return;
        }
        ++vq_[qi].notifies;
        if (qi == virtio::kCtrlQueue && (status_ & virtio::status::DRIVER_OK) && dma_enabled())
            process_ctrl();
    }

    std::byte* ring(const Vq& q) const { return q.active ? bus().map(q.base, layout_.total) : nullptr; }

    std::byte* checked_ring(Vq& q, const char* what) {
        if (!q.active)
            return nullptr;
        std::byte* m = dma(q.base, layout_.total, what);
        if (!m)
            q.active = false;
        return m;
    }

    // Picks up newly published avail entries and checks the index rules.
    void scan(Vq& q, std::byte* m, const char* name) {
        const std::uint16_t idx = detail::dma_load<std::uint16_t>(m + layout_.avail_idx());
        const std::uint16_t delta = static_cast<std::uint16_t>(idx - q.seen_avail);
        if (delta > opt_.queue_size - static_cast<std::uint16_t>(q.seen_avail - q.next_avail)) {
            violation(std::string(name) + " avail.idx moved from " + std::to_string(q.seen_avail) + " to " +
                      std::to_string(idx));
            q.active = false;
            return;
        }
        const std::uint16_t used = detail::dma_load<std::uint16_t>(m + layout_.used_idx());
        if (used != q.used_idx || detail::dma_load<std::uint16_t>(m + layout_.used) != 0) {
            violation(std::string(name) + " used ring header modified by the driver");
            detail::dma_store<std::uint16_t>(m + layout_.used, 0);
            detail::dma_store<std::uint16_t>(m + layout_.used_idx(), q.used_idx);
        }
        detail::consume_barrier();
        for (std::uint16_t s = q.seen_avail; s != idx; ++s) {
            const std::uint16_t d = detail::dma_load<std::uint16_t>(m + layout_.avail_ring(s % opt_.queue_size));
            if (d >= opt_.queue_size) {
                violation(std::string(name) + " avail entry names descriptor " + std::to_string(d));
                continue;
            }
            if (q.published[d])
                violation(std::string(name) + " descriptor " + std::to_string(d) + " made available while in flight");
            q.published[d] = 1;
        }
        q.seen_avail = idx;
    }

    bool peek(const Vq& q, const std::byte* m, std::uint16_t& d) const {
        if (q.next_avail == q.seen_avail)
            return false;
        d = detail::dma_load<std::uint16_t>(m + layout_.avail_ring(q.next_avail % opt_.queue_size));
        return true;
    }

    Desc read_desc(const std::byte* m, std::uint16_t d) const {
        const std::byte* p = m + layout_.desc + static_cast<std::size_t>(d % opt_.queue_size) * virtio::desc::kSize;
        return {detail::dma_load<std::uint64_t>(p + virtio::desc::kAddr),
                detail::dma_load<std::uint32_t>(p + virtio::desc::kLen),
                detail::dma_load<std::uint16_t>(p + virtio::desc::kFlags),
                detail::dma_load<std::uint16_t>(p + virtio::desc::kNext)};
    }

    void push_used(Vq& q, std::byte* m, std::uint16_t d, std::uint32_t len) {
        std::byte* e = m + layout_.used_ring(q.used_idx % opt_.queue_size);
        detail::dma_store<std::uint32_t>(e, d);
        detail::dma_store<std::uint32_t>(e + 4, len);
        ++q.used_idx;
        if (d < opt_.queue_size)
            q.published[d] = 0;
        detail::publish_barrier();
        detail::dma_store<std::uint16_t>(m + layout_.used_idx(), q.used_idx);
        isr_ |= 1;
    }

    std::size_t step_tx() {
        using namespace virtio;
        Vq& q = vq_[kTxQueue];
        std::byte* m = checked_ring(q, "tx virtqueue");
        if (!m)
            return 0;
        scan(q, m, "tx");
        std::size_t n = 0;
        std::uint16_t d;
        while (q.active && n < opt_.step_budget && peek(q, m, d)) {
            ++q.next_avail;
            ++n;
            const Desc ds = read_desc(m, d);
            if (ds.flags & desc::F_WRITE)
                violation("tx descriptor " + std::to_string(d) + " is device-writable");
            if (ds.flags & desc::F_NEXT)
                violation("tx descriptor " + std::to_string(d) + " is chained");
            if (ds.len < kNetHdrSize) {
                violation("tx descriptor " + std::to_string(d) + " shorter than the net header");
            } else if (const std::byte* p = dma(ds.addr, ds.len, "tx buffer")) {
                emit_tx(std::span(p, ds.len), kNetHdrSize, ds.addr);
            }
            push_used(q, m, d, 0);
        }
        return n;
    }

    bool accepts(const Frame& f) const {
        if (promisc_)
            return true;
        if (f.size() < 6)
            return false;
        if (std::equal(mac_.begin(), mac_.end(), f.begin(),
                       [](std::uint8_t a, std::byte b) { return a == std::to_integer<std::uint8_t>(b); }))
            return true;
        return std::all_of(f.begin(), f.begin() + 6, [](std::byte b) { return b == std::byte{0xFF}; });
    }

    std::size_t step_rx() {
        using namespace virtio;
        auto& in = injected();
        if (in.empty())
            return 0;
        Vq& q = vq_[kRxQueue];
        std::byte* m = checked_ring(q, "rx virtqueue");
        if (!m)
            return 0;
        scan(q, m, "rx");
        std::size_t n = 0;
        std::uint16_t d;
        while (!in.empty() && q.active && n < opt_.step_budget) {
            const Frame& f = in.front();
            if (!accepts(f)) {
                count_filtered();
                in.pop_front();
                continue;
            }
            if (!peek(q, m, d))
                break;
            const Desc ds = read_desc(m, d);
            if (!(ds.flags & desc::F_WRITE) || (ds.flags & desc::F_NEXT)) {
                violation("rx descriptor " + std::to_string(d) + " is not a single device-writable buffer");
                q.active = false;
                break;
            }
            if (ds.len < kNetHdrSize + f.size()) {
                violation("rx buffer of " + std::to_string(ds.len) + " bytes too small for a " +
                          std::to_string(f.size()) + " byte frame");
                in.pop_front();
                continue;
            }
            std::byte* p = dma(ds.addr, kNetHdrSize + f.size(), "rx buffer");
            if (!p) {
                q.active = false;
                break;
            }
            ++q.next_avail;
            std::memset(p, 0, kNetHdrSize);
            std::memcpy(p + kNetHdrSize, f.data(), f.size());
            push_used(q, m, d, static_cast<std::uint32_t>(kNetHdrSize + f.size()));
            count_rx(f.size());
            in.pop_front();
            ++n;
        }
        return n;
    }

    void process_ctrl() {
        using namespace virtio;
        Vq& q = vq_[kCtrlQueue];
        std::byte* m = checked_ring(q, "ctrl virtqueue");
        if (!m)
            return;
        scan(q, m, "ctrl");
        std::uint16_t d;
        while (q.active && peek(q, m, d)) {
            ++q.next_avail;
            ++commands_;
            const Desc head = read_desc(m, d);
            if (!(head.flags & desc::F_NEXT) || (head.flags & desc::F_WRITE) || head.len < 2) {
                violation("control command " + std::to_string(d) + " lacks a readable header chained to an ack");
                push_used(q, m, d, 0);
                continue;
            }
            const Desc ack = read_desc(m, head.next);
            if (!(ack.flags & desc::F_WRITE) || ack.len < 1) {
                violation("control command ack descriptor is not device-writable");
                push_used(q, m, d, 0);
                continue;
            }
            const std::byte* cmd = dma(head.addr, head.len, "control command");
            std::byte* ackp = dma(ack.addr, 1, "control ack");
            if (!cmd || !ackp) {
                push_used(q, m, d, 0);
                continue;
            }
            std::uint8_t result = ctrl::ACK_ERR;
            if (head.len + ack.len != ctrl::kCommandSize || ack.len != 1) {
                violation("control command of " + std::to_string(head.len + ack.len) + " bytes, expected " +
                          std::to_string(ctrl::kCommandSize));
            } else if (!reject_ && std::to_integer<std::uint8_t>(cmd[0]) == ctrl::CLASS_RX &&
                       std::to_integer<std::uint8_t>(cmd[1]) == ctrl::CMD_RX_PROMISC) {
                promisc_ = std::to_integer<std::uint8_t>(cmd[2]) != 0;
                result = ctrl::ACK_OK;
            }
            *ackp = std::byte{result};
            push_used(q, m, d, 1);
        }
    }

    Options opt_;
    std::array<std::uint8_t, 6> mac_;
    virtio::RingLayout layout_;
    std::array<Vq, kNumQueues> vq_;
    std::uint32_t driver_features_ = 0;
    std::uint16_t select_ = 0;
    std::uint8_t status_ = 0;
    std::uint8_t isr_ = 0;
    bool promisc_ = false;
    bool reject_ = false;
    std::uint64_t commands_ = 0;
};

} // namespace uddk::emu
