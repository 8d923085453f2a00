#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
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
#include "uddk/ixgbe_regs.hpp"
#include "uddk/mempool.hpp"

namespace uddk {

class IxgbeDevice;

namespace ixgbe {

inline constexpr std::uint32_t kDefaultRingSize = 512;
inline constexpr std::uint32_t kMinRingSize = 64;
inline constexpr std::uint32_t kMaxRingSize = 4096;
/// Transmit descriptors are reclaimed in blocks of this size by checking the
/// last descriptor of the block.
inline constexpr std::uint32_t kTxCleanBatch = 32;

constexpr bool valid_ring_size(std::uint32_t s) {
    return s >= kMinRingSize && s <= kMaxRingSize && (s & (s - 1)) == 0;
}

constexpr bool is_supported_device(std::uint16_t vendor, std::uint16_t device) {
    if (vendor != kVendorIntel)
        return false;
    for (auto id : kDeviceIds)
        if (id == device)
            return true;
    return false;
}

class RxQueue {
public:
    std::uint16_t id() const noexcept { return id_; }
    std::uint32_t size() const noexcept { return static_cast<std::uint32_t>(shadow_.size()); }
    std::uint32_t rx_index() const noexcept { return rx_index_; }
    const DmaMemory& ring() const noexcept { return ring_; }
    std::span<PacketBuffer* const> shadow() const noexcept { return shadow_; }
    Mempool& pool() const noexcept { return *pool_; }

    std::byte* descriptor(std::uint32_t i) const noexcept { return ring_.host_base() + std::size_t{i} * desc::kSize; }

private:
    friend class ::uddk::IxgbeDevice;

    std::uint16_t id_ = 0;
    DmaMemory ring_;
    std::vector<PacketBuffer*> shadow_;
    std::uint32_t rx_index_ = 0;
    std::unique_ptr<Mempool> pool_;
};

class TxQueue {
public:
    std::uint16_t id() const noexcept { return id_; }
    std::uint32_t size() const noexcept { return static_cast<std::uint32_t>(shadow_.size()); }
    std::uint32_t tx_index() const noexcept { return tx_index_; }
    std::uint32_t clean_index() const noexcept { return clean_index_; }
    const DmaMemory& ring() const noexcept { return ring_; }
    std::uint32_t in_flight() const noexcept { return (tx_index_ - clean_index_) & (size() - 1); }

    /// Buffers currently owned by this queue, oldest first.
    std::vector<PacketBuffer*> in_flight_buffers() const {
        std::vector<PacketBuffer*> out;
        for (std::uint32_t i = clean_index_; i != tx_index_; i = (i + 1) & (size() - 1))
            out.push_back(shadow_[i]);
        return out;
    }

    std::byte* descriptor(std::uint32_t i) const noexcept { return ring_.host_base() + std::size_t{i} * desc::kSize; }

private:
    friend class ::uddk::IxgbeDevice;

    std::uint16_t id_ = 0;
    DmaMemory ring_;
    std::vector<PacketBuffer*> shadow_;
    std::uint32_t tx_index_ = 0;
    std::uint32_t clean_index_ = 0;
};

} // namespace ixgbe

struct IxgbeConfig {
    std::uint16_t num_rx_queues = 1;
    std::uint16_t num_tx_queues = 1;
    std::uint32_t ring_size = ixgbe::kDefaultRingSize;
    /// Buffers per receive-queue pool; 0 picks max(4096, 2 * ring_size + 512).
    std::uint32_t pool_capacity = 0;
    std::uint32_t entry_size = Mempool::kDefaultEntrySize;
    std::chrono::nanoseconds register_timeout = std::chrono::seconds(1);
    std::chrono::nanoseconds link_timeout = std::chrono::seconds(10);
    std::chrono::nanoseconds reset_settle = std::chrono::milliseconds(10);
};

/// Poll-mode driver for 82599-family NICs.
class IxgbeDevice final : public NetDevice {
public:
    static std::unique_ptr<IxgbeDevice> init(std::shared_ptr<PciFunction> fn, const IxgbeConfig& cfg = {}) {
        if (cfg.num_rx_queues < 1 || cfg.num_rx_queues > ixgbe::kMaxQueues || cfg.num_tx_queues < 1 ||
            cfg.num_tx_queues > ixgbe::kMaxQueues)
            fail(Errc::invalid_argument, "queue counts must be within [1, 64]");
        if (!ixgbe::valid_ring_size(cfg.ring_size))
            fail(Errc::invalid_argument,
                 "ring size " + std::to_string(cfg.ring_size) + " is not a power of two in [64, 4096]");
        std::unique_ptr<IxgbeDevice> dev(new IxgbeDevice(std::move(fn), cfg));
        dev->reset_and_init();
        return dev;
    }

    IxgbeDevice(const IxgbeDevice&) = delete;
    IxgbeDevice& operator=(const IxgbeDevice&) = delete;

    ~IxgbeDevice() override {
        try {
            shutdown();
        } catch (...) {
        }
    }

    std::string driver_name() const override { return "ixgbe"; }
    const std::string& address() const noexcept override { return fn_->address().str(); }
    std::uint16_t num_rx_queues() const noexcept override { return static_cast<std::uint16_t>(rx_.size()); }
    std::uint16_t num_tx_queues() const noexcept override { return static_cast<std::uint16_t>(tx_.size()); }

    std::shared_ptr<DmaAllocator> dma_allocator() const override { return dma_; }

    const RegisterSpace& registers() const noexcept { return regs_; }
    const ixgbe::RxQueue& rx_queue(std::uint16_t q) const { return rx_.at(q); }
    const ixgbe::TxQueue& tx_queue(std::uint16_t q) const { return tx_.at(q); }
    const IxgbeConfig& config() const noexcept { return cfg_; }

    std::size_t rx_batch(std::uint16_t queue, std::span<PacketBuffer*> out) override {
        using namespace ixgbe;
        auto& q = rxq(queue);
        const std::uint32_t mask = q.size() - 1;
        std::uint32_t idx = q.rx_index_;
        std::uint32_t last = idx;
        std::size_t n = 0;
        for (; n < out.size(); ++n) {
            std::byte* d = q.descriptor(idx);
            const std::uint32_t status = detail::dma_load<std::uint32_t>(d + desc::kRxStatus);
            if (!(status & desc::RX_DD))
                break;
            if (!(status & desc::RX_EOP))
                fail(Errc::protocol_error, "multi-segment frame on rx queue " + std::to_string(queue) +
                                               " (frames must fit one buffer)");
            PacketBuffer* fresh = q.pool_->alloc();
            if (!fresh)
                break; // leave the descriptor to the next call rather than return it unfilled
            detail::consume_barrier();
            PacketBuffer* buf = q.shadow_[idx];
            buf->size = detail::dma_load<std::uint16_t>(d + desc::kRxLength);
            out[n] = buf;
            detail::dma_store<std::uint64_t>(d + desc::kRxBufAddr, fresh->data_device_addr());
            detail::dma_store<std::uint64_t>(d + desc::kRxHdrAddr, 0); // also clears DD
            q.shadow_[idx] = fresh;
            last = idx;
            idx = (idx + 1) & mask;
        }
        if (n > 0) {
            q.rx_index_ = idx;
            detail::publish_barrier();
            regs_.write32(reg::RDT(queue), last);
        }
        return n;
    }

    std::size_t tx_batch(std::uint16_t queue, std::span<PacketBuffer* const> bufs) override {
        using namespace ixgbe;
        auto& q = txq(queue);
        const std::uint32_t mask = q.size() - 1;
        clean_tx(q);

        std::size_t sent = 0;
        for (; sent < bufs.size(); ++sent) {
            const std::uint32_t next = (q.tx_index_ + 1) & mask;
            if (next == q.clean_index_)
                break; // ring full
            PacketBuffer* buf = bufs[sent];
            if (buf->size > buf->pool->data_capacity() || buf->size == 0)
                fail(Errc::invalid_argument, "tx buffer size " + std::to_string(buf->size) + " out of range");
            std::byte* d = q.descriptor(q.tx_index_);
            q.shadow_[q.tx_index_] = buf;
            detail::dma_store<std::uint64_t>(d + desc::kTxBufAddr, buf->data_device_addr());
            detail::dma_store<std::uint32_t>(d + desc::kTxCmdLen, desc::TX_EOP | desc::TX_IFCS | desc::TX_RS |
                                                                      desc::TX_DEXT | desc::TX_DTYP_DATA |
                                                                      buf->size);
            detail::dma_store<std::uint32_t>(d + desc::kTxStatus, buf->size << desc::TX_PAYLEN_SHIFT);
            q.tx_index_ = next;
        }
        if (sent > 0) {
            detail::publish_barrier();
            regs_.write32(reg::TDT(queue), q.tx_index_);
        }
        return sent;
    }

    void read_stats(DeviceStats& stats) override {
        using namespace ixgbe;
        const std::uint32_t rx_pkts = regs_.read32(reg::GPRC);
        const std::uint32_t tx_pkts = regs_.read32(reg::GPTC);
        const std::uint64_t rx_lo = regs_.read32(reg::GORCL);
        const std::uint64_t rx_hi = regs_.read32(reg::GORCH);
        const std::uint64_t tx_lo = regs_.read32(reg::GOTCL);
        const std::uint64_t tx_hi = regs_.read32(reg::GOTCH);
        stats.rx_packets += rx_pkts;
        stats.tx_packets += tx_pkts;
        stats.rx_bytes += rx_lo | (rx_hi << 32);
        stats.tx_bytes += tx_lo | (tx_hi << 32);
    }

    void set_promisc(bool on) override {
        using namespace ixgbe;
        if (on)
            regs_.set_flags32(reg::FCTRL, bits::FCTRL_MPE | bits::FCTRL_UPE);
        else
            regs_.clear_flags32(reg::FCTRL, bits::FCTRL_MPE | bits::FCTRL_UPE);
    }

    std::uint32_t get_link_speed() override {
        using namespace ixgbe;
        const std::uint32_t links = regs_.read32(reg::LINKS);
        if (!(links & bits::LINKS_UP))
            return 0;
        switch (links & bits::LINKS_SPEED_MASK) {
        case bits::LINKS_SPEED_100M: return 100;
        case bits::LINKS_SPEED_1G: return 1000;
        case bits::LINKS_SPEED_10G: return 10000;
        default: return 0;
        }
    }

    std::size_t drain_tx(std::uint16_t queue) override {
        auto& q = txq(queue);
        const std::uint32_t mask = q.size() - 1;
        while (q.clean_index_ != q.tx_index_) {
            std::byte* d = q.descriptor(q.clean_index_);
            if (!(detail::dma_load<std::uint32_t>(d + ixgbe::desc::kTxStatus) & ixgbe::desc::TX_DD))
                break;
            buf_free(std::exchange(q.shadow_[q.clean_index_], nullptr));
            q.clean_index_ = (q.clean_index_ + 1) & mask;
        }
        return q.in_flight();
    }

    void shutdown() override {
        using namespace ixgbe;
        if (stopped_)
            return;
        stopped_ = true;
        for (auto& q : tx_) {
            drain_tx(q.id_);
            regs_.clear_flags32(reg::TXDCTL(q.id_), bits::TXDCTL_ENABLE);
            // The queue is disabled; anything left will never be fetched.
            for (std::uint32_t i = q.clean_index_; i != q.tx_index_; i = (i + 1) & (q.size() - 1))
                buf_free(std::exchange(q.shadow_[i], nullptr));
            q.clean_index_ = q.tx_index_;
        }
        for (auto& q : rx_) {
            regs_.clear_flags32(reg::RXDCTL(q.id_), bits::RXDCTL_ENABLE);
            for (auto& b : q.shadow_)
                if (b)
                    buf_free(std::exchange(b, nullptr));
        }
    }

    bool is_shut_down() const noexcept { return stopped_; }

private:
    IxgbeDevice(std::shared_ptr<PciFunction> fn, const IxgbeConfig& cfg) : fn_(std::move(fn)), cfg_(cfg) {}

    ixgbe::RxQueue& rxq(std::uint16_t q) {
        if (q >= rx_.size())
            fail(Errc::invalid_argument, "rx queue " + std::to_string(q) + " does not exist");
        return rx_[q];
    }

    ixgbe::TxQueue& txq(std::uint16_t q) {
        if (q >= tx_.size())
            fail(Errc::invalid_argument, "tx queue " + std::to_string(q) + " does not exist");
        return tx_[q];
    }

    void reset_and_init() {
        using namespace ixgbe;
        fn_->remove_kernel_driver();
        enable_dma(*fn_);
        regs_ = fn_->map_bar(0);
        dma_ = fn_->dma_allocator();
        const auto t = cfg_.register_timeout;

        // Global reset with interrupts masked before and after.
        regs_.write32(reg::EIMC, bits::EIMC_ALL);
        regs_.write32(reg::CTRL, bits::CTRL_RST_MASK);
        regs_.wait_clear32(reg::CTRL, bits::CTRL_RST_MASK, t);
        std::this_thread::sleep_for(cfg_.reset_settle);
        regs_.write32(reg::EIMC, bits::EIMC_ALL);

        regs_.wait_set32(reg::EEC, bits::EEC_ARD, t);
        regs_.wait_set32(reg::RDRXCTL, bits::RDRXCTL_DMAIDONE, t);

        init_link();
        DeviceStats discard;
        read_stats(discard);
        init_rx();
        init_tx();
        for (auto& q : rx_)
            start_rx_queue(q);
        for (auto& q : tx_)
            start_tx_queue(q);
        set_promisc(true);
        wait_for_link();
    }

    void init_link() {
        using namespace ixgbe;
        regs_.write32(reg::AUTOC, (regs_.read32(reg::AUTOC) & ~bits::AUTOC_LMS_MASK) | bits::AUTOC_LMS_10G_SERIAL);
        regs_.write32(reg::AUTOC, (regs_.read32(reg::AUTOC) & ~bits::AUTOC_10G_PMA_PMD_MASK) | bits::AUTOC_10G_XAUI);
        regs_.set_flags32(reg::AUTOC, bits::AUTOC_AN_RESTART);
    }

    void wait_for_link() {
        const auto deadline = std::chrono::steady_clock::now() + cfg_.link_timeout;
        while (get_link_speed() == 0) {
            if (std::chrono::steady_clock::now() >= deadline)
                fail(Errc::timeout, "link did not come up on " + address());
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
    }

    void init_rx() {
        using namespace ixgbe;
        if (cfg_.entry_size % 1024 != 0)
            fail(Errc::invalid_argument, "rx pool entry size " + std::to_string(cfg_.entry_size) +
                                             " is not a multiple of 1024");
        regs_.clear_flags32(reg::RXCTRL, bits::RXCTRL_RXEN);
        regs_.write32(reg::RXPBSIZE0, bits::RXPBSIZE_512KB);
        regs_.set_flags32(reg::HLREG0, bits::HLREG0_RXCRCSTRP);
        regs_.set_flags32(reg::RDRXCTL, bits::RDRXCTL_CRCSTRIP);
        regs_.set_flags32(reg::FCTRL, bits::FCTRL_BAM);

        const std::uint32_t s = cfg_.ring_size;
        const std::uint32_t capacity = cfg_.pool_capacity ? cfg_.pool_capacity : std::max(4096u, 2 * s + 512);
        rx_.resize(cfg_.num_rx_queues);
        for (std::uint16_t i = 0; i < cfg_.num_rx_queues; ++i) {
            auto& q = rx_[i];
            q.id_ = i;
            const std::uint32_t srrctl = (regs_.read32(reg::SRRCTL(i)) &
                                          ~(bits::SRRCTL_DESCTYPE_MASK | bits::SRRCTL_BSIZEPKT_MASK)) |
                                         bits::SRRCTL_DESCTYPE_ADV_ONEBUF | bits::SRRCTL_DROP_EN |
                                         (cfg_.entry_size / 1024);
            regs_.write32(reg::SRRCTL(i), srrctl);
            q.ring_ = dma_->allocate(std::size_t{s} * desc::kSize, true);
            q.shadow_.assign(s, nullptr);
            q.pool_ = Mempool::create(*dma_, capacity, cfg_.entry_size);
            program_ring(reg::RDBAL(i), reg::RDBAH(i), reg::RDLEN(i), q.ring_);
        }
        regs_.set_flags32(reg::CTRL_EXT, bits::CTRL_EXT_NS_DIS);
        for (std::uint16_t i = 0; i < cfg_.num_rx_queues; ++i)
            regs_.clear_flags32(reg::DCA_RXCTRL(i), bits::DCA_RXCTRL_RELAXED_ORDER_BIT12);
        regs_.set_flags32(reg::RXCTRL, bits::RXCTRL_RXEN);
    }

    void init_tx() {
        using namespace ixgbe;
        regs_.set_flags32(reg::HLREG0, bits::HLREG0_TXCRCEN | bits::HLREG0_TXPADEN);
        regs_.write32(reg::TXPBSIZE0, bits::TXPBSIZE_40KB);
        regs_.write32(reg::DTXMXSZRQ, bits::DTXMXSZRQ_MAX);
        regs_.clear_flags32(reg::RTTDCS, bits::RTTDCS_ARBDIS);

        tx_.resize(cfg_.num_tx_queues);
        for (std::uint16_t i = 0; i < cfg_.num_tx_queues; ++i) {
            auto& q = tx_[i];
            q.id_ = i;
            q.ring_ = dma_->allocate(std::size_t{cfg_.ring_size} * desc::kSize, true);
            q.shadow_.assign(cfg_.ring_size, nullptr);
            program_ring(reg::TDBAL(i), reg::TDBAH(i), reg::TDLEN(i), q.ring_);
            // Prefetch/host/writeback thresholds as used by Intel's reference driver.
            std::uint32_t txdctl = regs_.read32(reg::TXDCTL(i));
            txdctl &= ~(0x7Fu | (0x7Fu << 8) | (0x7Fu << 16));
            txdctl |= 36u | (8u << 8) | (4u << 16);
            regs_.write32(reg::TXDCTL(i), txdctl);
        }
        regs_.write32(reg::DMATXCTL, bits::DMATXCTL_TE);
    }

    void program_ring(std::size_t bal, std::size_t bah, std::size_t len, const DmaMemory& ring) {
        regs_.write32(bal, static_cast<std::uint32_t>(ring.device_base() & 0xFFFFFFFFull));
        regs_.write32(bah, static_cast<std::uint32_t>(ring.device_base() >> 32));
        regs_.write32(len, static_cast<std::uint32_t>(ring.length()));
    }

    // Fills every descriptor with a fresh buffer and hands all but one slot to
    // the device. The head register is left to the device.
    void start_rx_queue(ixgbe::RxQueue& q) {
        using namespace ixgbe;
        const std::uint32_t s = q.size();
        if (q.pool_->free_count() < s)
            fail(Errc::pool_exhausted, "rx queue " + std::to_string(q.id_) + " needs " + std::to_string(s) +
                                           " buffers, pool has " + std::to_string(q.pool_->free_count()));
        for (std::uint32_t i = 0; i < s; ++i) {
            PacketBuffer* buf = q.pool_->alloc();
            std::byte* d = q.descriptor(i);
            detail::dma_store<std::uint64_t>(d + desc::kRxBufAddr, buf->data_device_addr());
            detail::dma_store<std::uint64_t>(d + desc::kRxHdrAddr, 0);
            q.shadow_[i] = buf;
        }
        q.rx_index_ = 0;
        regs_.set_flags32(reg::RXDCTL(q.id_), bits::RXDCTL_ENABLE);
        regs_.wait_set32(reg::RXDCTL(q.id_), bits::RXDCTL_ENABLE, cfg_.register_timeout);
        detail::publish_barrier();
        regs_.write32(reg::RDT(q.id_), s - 1);
    }

    void start_tx_queue(ixgbe::TxQueue& q) {
        using namespace ixgbe;
        q.tx_index_ = q.clean_index_ = 0;
        regs_.set_flags32(reg::TXDCTL(q.id_), bits::TXDCTL_ENABLE);
        regs_.wait_set32(reg::TXDCTL(q.id_), bits::TXDCTL_ENABLE, cfg_.register_timeout);
    }

    // Frees sent buffers in blocks of kTxCleanBatch, checking only the last
    // descriptor of each block.
    void clean_tx(ixgbe::TxQueue& q) {
        using namespace ixgbe;
        const std::uint32_t mask = q.size() - 1;
        while (q.in_flight() >= kTxCleanBatch) {
            const std::uint32_t last = (q.clean_index_ + kTxCleanBatch - 1) & mask;
            if (!(detail::dma_load<std::uint32_t>(q.descriptor(last) + desc::kTxStatus) & desc::TX_DD))
                break;
            detail::consume_barrier();
            for (std::uint32_t i = 0; i < kTxCleanBatch; ++i)
                buf_free(std::exchange(q.shadow_[(q.clean_index_ + i) & mask], nullptr));
            q.clean_index_ = (last + 1) & mask;
        }
    }

    std::shared_ptr<PciFunction> fn_;
    IxgbeConfig cfg_;
    RegisterSpace regs_;
    std::shared_ptr<DmaAllocator> dma_;
    std::vector<ixgbe::RxQueue> rx_;
    std::vector<ixgbe::TxQueue> tx_;
    bool stopped_ = false;
};

inline std::unique_ptr<IxgbeDevice> ixgbe_init(const DeviceAddress& addr, std::uint16_t num_rx,
                                               std::uint16_t num_tx, std::uint32_t ring_size,
                                               DeviceRegistry& reg = DeviceRegistry::global()) {
    IxgbeConfig cfg;
    cfg.num_rx_queues = num_rx;
    cfg.num_tx_queues = num_tx;
    cfg.ring_size = ring_size;
    return IxgbeDevice::init(reg.open(addr), cfg);
}

} // namespace uddk
