#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "uddk/detail/dma_access.hpp"
#include "uddk/devreg.hpp"
#include "uddk/driver.hpp"
#include "uddk/error.hpp"
#include "uddk/mempool.hpp"
#include "uddk/virtio_defs.hpp"

namespace uddk {

class VirtioDevice;

namespace virtio {

/// Driver side of one legacy split virtqueue: descriptor table, available ring
/// and used ring in one DMA allocation, plus the buffer handle for each
/// descriptor slot.
class Virtqueue {
public:
    std::uint16_t id() const noexcept { return id_; }
    std::uint16_t size() const noexcept { return kQueueSize; }
    const DmaMemory& memory() const noexcept { return mem_; }
    std::span<PacketBuffer* const> shadow() const noexcept { return shadow_; }
    std::size_t free_descriptors() const noexcept { return free_.size(); }
    std::uint16_t avail_idx() const noexcept { return avail_idx_; }
    std::uint16_t last_used_idx() const noexcept { return last_used_; }

    std::uint16_t device_used_idx() const noexcept {
        return detail::dma_load<std::uint16_t>(mem_.host_base() + kLayout.used_idx());
    }

    /// Buffers currently owned by this queue, in descriptor order.
    std::vector<PacketBuffer*> in_flight_buffers() const {
        std::vector<PacketBuffer*> out;
        for (auto* b : shadow_)
            if (b)
                out.push_back(b);
        return out;
    }

private:
    friend class ::uddk::VirtioDevice;

    std::byte* base() const noexcept { return mem_.host_base(); }
    std::byte* descriptor(std::uint16_t i) const noexcept { return base() + kLayout.desc + std::size_t{i} * desc::kSize; }

    void write_descriptor(std::uint16_t i, std::uint64_t addr, std::uint32_t len, std::uint16_t flags,
                          std::uint16_t next = 0) noexcept {
        std::byte* d = descriptor(i);
        detail::dma_store<std::uint64_t>(d + desc::kAddr, addr);
        detail::dma_store<std::uint32_t>(d + desc::kLen, len);
        detail::dma_store<std::uint16_t>(d + desc::kFlags, flags);
        detail::dma_store<std::uint16_t>(d + desc::kNext, next);
    }

    void push_avail(std::uint16_t desc_index) noexcept {
        detail::dma_store<std::uint16_t>(base() + kLayout.avail_ring(avail_idx_ % kQueueSize), desc_index);
        ++avail_idx_;
    }

    void publish_avail() noexcept {
        detail::publish_barrier();
        detail::dma_store<std::uint16_t>(base() + kLayout.avail_idx(), avail_idx_);
        detail::publish_barrier();
    }

    struct UsedElem {
        std::uint32_t id;
        std::uint32_t len;
    };

    bool has_used() const noexcept { return last_used_ != device_used_idx(); }

    UsedElem pop_used() {
        detail::consume_barrier();
        const std::byte* e = base() + kLayout.used_ring(last_used_ % kQueueSize);
        UsedElem u{detail::dma_load<std::uint32_t>(e), detail::dma_load<std::uint32_t>(e + 4)};
        ++last_used_;
        if (u.id >= kQueueSize)
            fail(Errc::protocol_error, "used ring id " + std::to_string(u.id) + " out of range");
        return u;
    }

    std::uint16_t id_ = 0;
    DmaMemory mem_;
    std::vector<PacketBuffer*> shadow_;
    std::vector<std::uint16_t> free_;
    std::uint16_t avail_idx_ = 0;
    std::uint16_t last_used_ = 0;
};

} // namespace virtio

struct VirtioConfig {
    /// Receive pool size; 0 picks 4 * queue size.
    std::uint32_t pool_capacity = 0;
    std::uint32_t entry_size = Mempool::kDefaultEntrySize;
    std::chrono::nanoseconds ctrl_timeout = std::chrono::seconds(1);
};

/// VirtIO legacy network driver over the IO port transport.
class VirtioDevice final : public NetDevice {
public:
    static constexpr std::uint32_t kRequiredFeatures = virtio::feature::CTRL_VQ | virtio::feature::CTRL_RX;

    static std::unique_ptr<VirtioDevice> init(std::shared_ptr<PciFunction> fn, const VirtioConfig& cfg = {}) {
        std::unique_ptr<VirtioDevice> dev(new VirtioDevice(std::move(fn), cfg));
        dev->legacy_init();
        return dev;
    }

    VirtioDevice(const VirtioDevice&) = delete;
    VirtioDevice& operator=(const VirtioDevice&) = delete;

    ~VirtioDevice() override {
        try {
            shutdown();
        } catch (...) {
        }
    }

    std::string driver_name() const override { return "virtio"; }
    const std::string& address() const noexcept override { return fn_->address().str(); }
    std::uint16_t num_rx_queues() const noexcept override { return 1; }
    std::uint16_t num_tx_queues() const noexcept override { return 1; }

    std::shared_ptr<DmaAllocator> dma_allocator() const override { return dma_; }

    const PortSpace& ports() const noexcept { return ports_; }
    const virtio::Virtqueue& rx_queue() const noexcept { return rx_; }
    const virtio::Virtqueue& tx_queue() const noexcept { return tx_; }
    const virtio::Virtqueue& ctrl_queue() const noexcept { return ctrl_; }
    std::uint32_t negotiated_features() const noexcept { return features_; }
    Mempool& rx_pool() const noexcept { return *rx_pool_; }

    std::size_t rx_batch(std::uint16_t queue, std::span<PacketBuffer*> out) override {
        using namespace virtio;
        check_queue(queue);
        std::size_t n = 0;
        while (n < out.size() && rx_.has_used()) {
            PacketBuffer* fresh = rx_pool_->alloc();
            if (!fresh)
                break;
            const auto u = rx_.pop_used();
            if (!rx_.shadow_[u.id] || u.len < kNetHdrSize) {
                rx_pool_->free(fresh);
                if (!rx_.shadow_[u.id])
                    fail(Errc::protocol_error, "used ring returned idle rx descriptor " + std::to_string(u.id));
                fail(Errc::protocol_error, "rx used length " + std::to_string(u.len) + " shorter than net header");
            }
            PacketBuffer* buf = std::exchange(rx_.shadow_[u.id], nullptr);
            buf->size = u.len - static_cast<std::uint32_t>(kNetHdrSize);
            out[n++] = buf;
            sw_stats_.rx_packets++;
            sw_stats_.rx_bytes += buf->size;
            post_rx_buffer(static_cast<std::uint16_t>(u.id), fresh);
        }
        if (n > 0) {
            rx_.publish_avail();
            notify(kRxQueue);
        }
        return n;
    }

    std::size_t tx_batch(std::uint16_t queue, std::span<PacketBuffer* const> bufs) override {
        using namespace virtio;
        check_queue(queue);
        reap_tx();
        std::size_t sent = 0;
        for (; sent < bufs.size() && !tx_.free_.empty(); ++sent) {
            PacketBuffer* buf = bufs[sent];
            if (buf->size > buf->pool->data_capacity() || buf->size == 0)
                fail(Errc::invalid_argument, "tx buffer size " + std::to_string(buf->size) + " out of range");
            const std::uint16_t id = tx_.free_.back();
            tx_.free_.pop_back();
            std::memset(buf->data() - kNetHdrSize, 0, kNetHdrSize);
            tx_.write_descriptor(id, buf->data_device_addr() - kNetHdrSize,
                                 buf->size + static_cast<std::uint32_t>(kNetHdrSize), 0);
            tx_.shadow_[id] = buf;
            tx_.push_avail(id);
            sw_stats_.tx_packets++;
            sw_stats_.tx_bytes += buf->size;
        }
        if (sent > 0) {
            tx_.publish_avail();
            notify(kTxQueue);
        }
        return sent;
    }

    /// Software counters: the legacy device has no statistics registers.
    void read_stats(DeviceStats& stats) override {
        stats.rx_packets += sw_stats_.rx_packets;
        stats.rx_bytes += sw_stats_.rx_bytes;
        stats.tx_packets += sw_stats_.tx_packets;
        stats.tx_bytes += sw_stats_.tx_bytes;
        sw_stats_ = {};
    }

    void set_promisc(bool on) override { send_rx_command(virtio::ctrl::CMD_RX_PROMISC, on); }

    /// The legacy transport reports no link speed; a fixed 1 Gbit/s is returned.
    std::uint32_t get_link_speed() override { return 1000; }

    std::size_t drain_tx(std::uint16_t queue) override {
        check_queue(queue);
        reap_tx();
        return virtio::kQueueSize - tx_.free_.size();
    }

    void shutdown() override {
        if (stopped_)
            return;
        stopped_ = true;
        if (!ports_open_)
            return; // init failed before the device was touched
        if (tx_.base())
            reap_tx();
        ports_.write8(virtio::port::DEVICE_STATUS, 0); // reset: the device drops all queue state
        for (auto* q : {&rx_, &tx_, &ctrl_})
            for (auto& b : q->shadow_)
                if (b)
                    buf_free(std::exchange(b, nullptr));
    }

private:
    VirtioDevice(std::shared_ptr<PciFunction> fn, const VirtioConfig& cfg) : fn_(std::move(fn)), cfg_(cfg) {}

    void check_queue(std::uint16_t q) const {
        if (q != 0)
            fail(Errc::invalid_argument, "virtio device has a single queue pair, got queue " + std::to_string(q));
    }

    void notify(std::uint16_t q) { ports_.write16(virtio::port::QUEUE_NOTIFY, q); }

    void legacy_init() {
        using namespace virtio;
        fn_->remove_kernel_driver();
        enable_dma(*fn_);
        ports_ = fn_->open_port_bar(0);
        ports_open_ = true;
        dma_ = fn_->dma_allocator();

        ports_.write8(port::DEVICE_STATUS, 0);
        ports_.write8(port::DEVICE_STATUS, status::ACKNOWLEDGE);
        ports_.write8(port::DEVICE_STATUS, status::ACKNOWLEDGE | status::DRIVER);
        expect_status(status::ACKNOWLEDGE | status::DRIVER);

        const std::uint32_t host_features = ports_.read32(port::DEVICE_FEATURES);
        if ((host_features & kRequiredFeatures) != kRequiredFeatures)
            fail(Errc::feature_missing, "device features 0x" + hex(host_features) + " lack CTRL_VQ and/or CTRL_RX");
        features_ = kRequiredFeatures;
        ports_.write32(port::DRIVER_FEATURES, features_);

        setup_queue(rx_, kRxQueue);
        setup_queue(tx_, kTxQueue);
        setup_queue(ctrl_, kCtrlQueue);

        ports_.write8(port::DEVICE_STATUS, status::ACKNOWLEDGE | status::DRIVER | status::DRIVER_OK);
        expect_status(status::ACKNOWLEDGE | status::DRIVER | status::DRIVER_OK);

        const std::uint32_t capacity = cfg_.pool_capacity ? cfg_.pool_capacity : 4u * kQueueSize;
        if (capacity < kQueueSize)
            fail(Errc::invalid_argument, "rx pool must hold at least one full queue");
        rx_pool_ = Mempool::create(*dma_, capacity, cfg_.entry_size);
        ctrl_pool_ = Mempool::create(*dma_, 4, Mempool::kMinEntrySize);
        while (!rx_.free_.empty()) {
            const std::uint16_t id = rx_.free_.back();
            rx_.free_.pop_back();
            post_rx_buffer(id, rx_pool_->alloc());
        }
        rx_.publish_avail();
        notify(kRxQueue);

        set_promisc(true);
    }

    void expect_status(std::uint8_t want) {
        const std::uint8_t got = ports_.read8(virtio::port::DEVICE_STATUS);
        if (got != want)
            fail(Errc::status_mismatch, "device status 0x" + hex(got) + ", expected 0x" + hex(want));
    }

    void setup_queue(virtio::Virtqueue& q, std::uint16_t id) {
        using namespace virtio;
        ports_.write16(port::QUEUE_SELECT, id);
        const std::uint16_t size = ports_.read16(port::QUEUE_SIZE);
        if (size != kQueueSize)
            fail(Errc::queue_size_mismatch,
                 "queue " + std::to_string(id) + " has size " + std::to_string(size) + ", expected 256");
        q.id_ = id;
        q.mem_ = dma_->allocate(kLayout.total, true);
        q.shadow_.assign(kQueueSize, nullptr);
        q.free_.clear();
        for (std::uint16_t i = kQueueSize; i-- > 0;)
            q.free_.push_back(i);
        // Polling driver: ask the device not to raise interrupts.
        detail::dma_store<std::uint16_t>(q.base() + kLayout.avail, AVAIL_F_NO_INTERRUPT);
        const std::uint64_t pfn = q.mem_.device_base() / kQueueAlign;
        if (pfn > 0xFFFFFFFFu)
            fail(Errc::out_of_range, "queue memory above the 32-bit page frame limit of legacy virtio");
        ports_.write32(port::QUEUE_PFN, static_cast<std::uint32_t>(q.mem_.device_base() / kQueueAlign));
    }

    // The device writes the net header into the tail of the headroom, so the
    // payload lands at the buffer's normal data offset.
    void post_rx_buffer(std::uint16_t id, PacketBuffer* buf) {
        using namespace virtio;
        rx_.write_descriptor(id, buf->data_device_addr() - kNetHdrSize,
                             rx_pool_->data_capacity() + static_cast<std::uint32_t>(kNetHdrSize), desc::F_WRITE);
        rx_.shadow_[id] = buf;
        rx_.push_avail(id);
    }

    void reap_tx() {
        while (tx_.has_used()) {
            const auto u = tx_.pop_used();
            PacketBuffer* buf = std::exchange(tx_.shadow_[u.id], nullptr);
            if (!buf)
                fail(Errc::protocol_error, "used ring returned idle tx descriptor " + std::to_string(u.id));
            buf_free(buf);
            tx_.free_.push_back(static_cast<std::uint16_t>(u.id));
        }
    }

    // Header+payload in a device-readable descriptor chained to a one-byte
    // device-writable ack descriptor.
    void send_rx_command(std::uint8_t cmd, bool on) {
        using namespace virtio;
        if (ctrl_.free_.size() < 2)
            fail(Errc::protocol_error, "control queue has no free descriptors");
        PacketBuffer* buf = ctrl_pool_->alloc();
        std::byte* p = buf->data();
        p[0] = std::byte{ctrl::CLASS_RX};
        p[1] = std::byte{cmd};
        p[2] = std::byte{static_cast<std::uint8_t>(on ? 1 : 0)};
        p[3] = std::byte{0xFF};
        const std::uint16_t head = ctrl_.free_.back();
        ctrl_.free_.pop_back();
        const std::uint16_t ack = ctrl_.free_.back();
        ctrl_.free_.pop_back();
        ctrl_.write_descriptor(head, buf->data_device_addr(), 3, desc::F_NEXT, ack);
        ctrl_.write_descriptor(ack, buf->data_device_addr() + 3, 1, desc::F_WRITE);
        ctrl_.shadow_[head] = buf;
        ctrl_.push_avail(head);
        ctrl_.publish_avail();
        notify(kCtrlQueue);

        const auto deadline = std::chrono::steady_clock::now() + cfg_.ctrl_timeout;
        while (!ctrl_.has_used()) {
            if (std::chrono::steady_clock::now() >= deadline) {
                // Leave the buffer and descriptors with the device; it still owns them.
                fail(Errc::timeout, "control command not completed by " + address());
            }
            std::this_thread::yield();
        }
        const auto u = ctrl_.pop_used();
        if (u.id != head)
            fail(Errc::protocol_error, "control queue completed unexpected descriptor");
        const auto result = std::to_integer<std::uint8_t>(detail::dma_load<std::byte>(p + 3));
        ctrl_.shadow_[head] = nullptr;
        ctrl_.free_.push_back(ack);
        ctrl_.free_.push_back(head);
        buf_free(buf);
        if (result != ctrl::ACK_OK)
            fail(Errc::command_rejected, "device rejected rx command " + std::to_string(cmd) + " (ack " +
                                             std::to_string(result) + ")");
    }

    static std::string hex(std::uint32_t v) {
        char b[16];
        std::snprintf(b, sizeof b, "%x", v);
        return b;
    }

    std::shared_ptr<PciFunction> fn_;
    VirtioConfig cfg_;
    PortSpace ports_;
    std::shared_ptr<DmaAllocator> dma_;
    std::uint32_t features_ = 0;
    virtio::Virtqueue rx_, tx_, ctrl_;
    std::unique_ptr<Mempool> rx_pool_;
    std::unique_ptr<Mempool> ctrl_pool_;
    DeviceStats sw_stats_;
    bool stopped_ = false;
    bool ports_open_ = false;
};

inline std::unique_ptr<VirtioDevice> virtio_legacy_init(const DeviceAddress& addr,
                                                        DeviceRegistry& reg = DeviceRegistry::global()) {
    return VirtioDevice::init(reg.open(addr));
}

} // namespace uddk
