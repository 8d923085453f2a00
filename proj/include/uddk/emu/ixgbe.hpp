#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "uddk/detail/dma_access.hpp"
#include "uddk/emu/device.hpp"
#include "uddk/ixgbe_regs.hpp"

namespace uddk::emu {

struct EmuIxgbeOptions {
    std::uint16_t device_id = 0x10FB;
    std::array<std::uint8_t, 6> mac{0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
    /// Frames fetched or delivered per queue and direction per step.
    std::size_t step_budget = 64;
    std::size_t max_frame = EmuDevice::kDefaultMaxFrame;
};

/// Model of the 82599 subset the ixgbe driver programs: reset, link, ring
/// registers, filter control and the good-packet statistics.
///
/// Ring ownership follows the hardware rule: the device owns descriptors
/// [head, tail) and head == tail means it owns none.
class EmuIxgbe final : public EmuDevice {
public:
    using Options = EmuIxgbeOptions;

    static std::shared_ptr<EmuIxgbe> create(std::string name, std::shared_ptr<EmuDmaAllocator> dma = nullptr,
                                            Options opt = Options{}) {
        return std::shared_ptr<EmuIxgbe>(new EmuIxgbe(std::move(name), std::move(dma), opt));
    }

    /// True for offsets where a write is not simply stored and read back.
    static bool has_side_effects(std::size_t o) {
        using namespace ixgbe::reg;
        if (o == CTRL || o == STATUS || o == EEC || o == LINKS || o == EIMC || is_stat(o))
            return true;
        if (auto q = rx_queue_of(o); q && (o == RDH(*q) || o == RDT(*q) || o == RXDCTL(*q)))
            return true;
        if (auto q = tx_queue_of(o); q && (o == TDH(*q) || o == TDT(*q) || o == TXDCTL(*q)))
            return true;
        return false;
    }

    std::array<std::uint8_t, 6> mac() const {
        using namespace ixgbe::reg;
        const std::uint32_t lo = regs_[RAL0 / 4], hi = regs_[RAH0 / 4];
        return {std::uint8_t(lo), std::uint8_t(lo >> 8), std::uint8_t(lo >> 16), std::uint8_t(lo >> 24),
                std::uint8_t(hi), std::uint8_t(hi >> 8)};
    }

    bool promiscuous() const noexcept { return regs_[ixgbe::reg::FCTRL / 4] & ixgbe::bits::FCTRL_UPE; }

    /// Register value as the device holds it, without driver-visible side effects.
    std::uint32_t peek(std::size_t offset) const { return regs_.at(offset / 4); }

    /// Link state reported in LINKS; speed is one of 100, 1000, 10000.
    void set_link(bool up, std::uint32_t mbit = 10000) {
        using namespace ixgbe::bits;
        std::uint32_t v = 0;
        if (up)
            v = LINKS_UP | (mbit == 100 ? LINKS_SPEED_100M : mbit == 1000 ? LINKS_SPEED_1G : LINKS_SPEED_10G);
        link_ = v;
        regs_[ixgbe::reg::LINKS / 4] = v;
    }

    /// The bits of `mask` become set at `offset` once it has been read `after_reads` times.
    void schedule_set(std::size_t offset, std::uint32_t mask, std::size_t after_reads) {
        regs_.at(offset / 4) &= ~mask;
        scheduled_.push_back({offset, mask, after_reads});
    }

    std::uint32_t rx_head(unsigned q) const { return rxq_.at(q).head; }
    std::uint32_t rx_tail(unsigned q) const { return rxq_.at(q).tail; }
    std::uint32_t tx_head(unsigned q) const { return txq_.at(q).head; }
    std::uint32_t tx_tail(unsigned q) const { return txq_.at(q).tail; }
    std::uint32_t rx_ring_size(unsigned q) const { return rxq_.at(q).size; }
    bool rx_enabled(unsigned q) const { return rxq_.at(q).enabled; }
    bool tx_enabled(unsigned q) const { return txq_.at(q).enabled; }

    /// Descriptors the device has completed that the driver has not yet returned.
    /// Relies on the driver keeping its tail on the last refilled slot.
    std::uint32_t rx_completed(unsigned q) const {
        const auto& r = rxq_.at(q);
        if (!r.enabled || r.size == 0)
            return 0;
        return (r.head + r.size - r.tail - 1) & (r.size - 1);
    }

    /// Descriptors currently owned by the device.
    std::uint32_t rx_owned(unsigned q) const { return owned(rxq_.at(q)); }
    std::uint32_t tx_owned(unsigned q) const { return owned(txq_.at(q)); }

protected:
    std::size_t mmio_length() const noexcept override { return ixgbe::kBar0Size; }

    std::uint32_t mmio_read(std::size_t o) override {
        using namespace ixgbe;
        for (auto it = scheduled_.begin(); it != scheduled_.end();) {
            if (it->offset == o && it->reads_left-- == 0) {
                regs_[o / 4] |= it->mask;
                it = scheduled_.erase(it);
            } else {
                ++it;
            }
        }
        if (is_stat(o))
            return read_stat(o);
        if (auto q = rx_queue_of(o); q && o == reg::RDH(*q))
            return rxq_[*q].head;
        if (auto q = tx_queue_of(o); q && o == reg::TDH(*q))
            return txq_[*q].head;
        return regs_[o / 4];
    }

    void mmio_write(std::size_t o, std::uint32_t v) override {
        using namespace ixgbe;
        if (!known(o))
            warn("write to unmodeled register " + hex(o));
        if (o == reg::CTRL) {
            if (v & bits::CTRL_RST_MASK) {
                reset();
                regs_[o / 4] = v & ~bits::CTRL_RST_MASK; // self-clearing
            } else {
                regs_[o / 4] = v;
            }
            return;
        }
        if (o == reg::STATUS || o == reg::EEC || o == reg::LINKS || is_stat(o)) {
            warn("write to read-only register " + hex(o));
            return;
        }
        if (auto q = rx_queue_of(o)) {
            if (o == reg::RDH(*q)) {
                violation("driver wrote RDH(" + std::to_string(*q) + ")");
                return;
            }
            if (o == reg::RDT(*q)) {
                tail_write(rxq_[*q], v, "RDT");
                regs_[o / 4] = v;
                return;
            }
            if (o == reg::RXDCTL(*q)) {
                regs_[o / 4] = v;
                enable_ring(rxq_[*q], v & bits::RXDCTL_ENABLE, reg::RDBAL(*q), reg::RDBAH(*q), reg::RDLEN(*q), "rx");
                return;
            }
        }
        if (auto q = tx_queue_of(o)) {
            if (o == reg::TDH(*q)) {
                violation("driver wrote TDH(" + std::to_string(*q) + ")");
                return;
            }
            if (o == reg::TDT(*q)) {
                tail_write(txq_[*q], v, "TDT");
                regs_[o / 4] = v;
                return;
            }
            if (o == reg::TXDCTL(*q)) {
                regs_[o / 4] = v;
                enable_ring(txq_[*q], v & bits::TXDCTL_ENABLE, reg::TDBAL(*q), reg::TDBAH(*q), reg::TDLEN(*q), "tx");
                return;
            }
        }
        regs_[o / 4] = v;
    }

    bool has_pending_work() const override {
        for (const auto& q : txq_)
            if (q.enabled && q.head != q.tail)
                return true;
        return pending_rx() > 0;
    }

    std::size_t do_step() override {
        std::size_t work = 0;
        if (!tx_paused() && (regs_[ixgbe::reg::DMATXCTL / 4] & ixgbe::bits::DMATXCTL_TE))
            for (unsigned q = 0; q < txq_.size(); ++q)
                work += step_tx(q);
        if (regs_[ixgbe::reg::RXCTRL / 4] & ixgbe::bits::RXCTRL_RXEN)
            work += step_rx();
        return work;
    }

private:
    struct Ring {
        bool enabled = false;
        std::uint64_t base = 0;
        std::uint32_t size = 0;
        std::uint32_t head = 0;
        std::uint32_t tail = 0;
    };

    struct Scheduled {
        std::size_t offset;
        std::uint32_t mask;
        std::size_t reads_left;
    };

    EmuIxgbe(std::string name, std::shared_ptr<EmuDmaAllocator> dma, const Options& opt)
        : EmuDevice(std::move(name), std::move(dma)), opt_(opt), regs_(ixgbe::kBar0Size / 4), rxq_(ixgbe::kMaxQueues),
          txq_(ixgbe::kMaxQueues) {
        set_ids(ixgbe::kVendorIntel, opt.device_id);
        set_max_frame(opt.max_frame);
        set_link(true);
        reset();
    }

    // Queue number if `o` is inside the per-queue register block.
    static std::optional<unsigned> rx_queue_of(std::size_t o) {
        if (o < 0x01000 || o >= 0x01000 + 0x40 * ixgbe::kMaxQueues)
            return std::nullopt;
        return static_cast<unsigned>((o - 0x01000) / 0x40);
    }
    static std::optional<unsigned> tx_queue_of(std::size_t o) {
        if (o < 0x06000 || o >= 0x06000 + 0x40 * ixgbe::kMaxQueues)
            return std::nullopt;
        return static_cast<unsigned>((o - 0x06000) / 0x40);
    }

    static bool is_stat(std::size_t o) {
        using namespace ixgbe::reg;
        return o == GPRC || o == GPTC || o == GORCL || o == GORCH || o == GOTCL || o == GOTCH;
    }

    static bool known(std::size_t o) {
        using namespace ixgbe::reg;
        static constexpr std::size_t named[] = {CTRL,      STATUS, CTRL_EXT, EIMC,  RDRXCTL, RXCTRL, RXPBSIZE0,
                                                GPRC,      GPTC,   GORCL,    GORCH, GOTCL,   GOTCH,  HLREG0,
                                                AUTOC,     LINKS,  RTTDCS,   DMATXCTL, FCTRL, DTXMXSZRQ, RAL0,
                                                RAH0,      TXPBSIZE0, EEC};
        if (std::find(std::begin(named), std::end(named), o) != std::end(named))
            return true;
        if (auto q = rx_queue_of(o))
            return o == RDBAL(*q) || o == RDBAH(*q) || o == RDLEN(*q) || o == DCA_RXCTRL(*q) || o == RDH(*q) ||
                   o == SRRCTL(*q) || o == RDT(*q) || o == RXDCTL(*q);
        if (auto q = tx_queue_of(o))
            return o == TDBAL(*q) || o == TDBAH(*q) || o == TDLEN(*q) || o == TDH(*q) || o == TDT(*q) ||
                   o == TXDCTL(*q);
        return false;
    }

    static std::uint32_t owned(const Ring& r) {
        return r.enabled && r.size ? (r.tail + r.size - r.head) & (r.size - 1) : 0;
    }

    void reset() {
        using namespace ixgbe;
        std::fill(regs_.begin(), regs_.end(), 0u);
        regs_[reg::EEC / 4] = bits::EEC_ARD;
        regs_[reg::RDRXCTL / 4] = bits::RDRXCTL_DMAIDONE;
        regs_[reg::LINKS / 4] = link_;
        const auto& m = opt_.mac;
        regs_[reg::RAL0 / 4] = std::uint32_t(m[0]) | std::uint32_t(m[1]) << 8 | std::uint32_t(m[2]) << 16 |
                               std::uint32_t(m[3]) << 24;
        regs_[reg::RAH0 / 4] = std::uint32_t(m[4]) | std::uint32_t(m[5]) << 8 | bits::RAH_AV;
        for (auto& r : rxq_)
            r = Ring{};
        for (auto& r : txq_)
            r = Ring{};
        stat_rx_packets_ = stat_tx_packets_ = stat_rx_bytes_ = stat_tx_bytes_ = 0;
        gorch_latch_ = gotch_latch_ = 0;
        rr_next_ = 0;
    }

    std::uint32_t read_stat(std::size_t o) {
        using namespace ixgbe::reg;
        std::uint32_t v = 0;
        if (o == GPRC) {
            v = static_cast<std::uint32_t>(stat_rx_packets_);
            stat_rx_packets_ = 0;
        } else if (o == GPTC) {
            v = static_cast<std::uint32_t>(stat_tx_packets_);
            stat_tx_packets_ = 0;
        } else if (o == GORCL) {
            v = static_cast<std::uint32_t>(stat_rx_bytes_);
            gorch_latch_ = static_cast<std::uint32_t>(stat_rx_bytes_ >> 32);
            stat_rx_bytes_ = 0;
        } else if (o == GORCH) {
            v = std::exchange(gorch_latch_, 0);
        } else if (o == GOTCL) {
            v = static_cast<std::uint32_t>(stat_tx_bytes_);
            gotch_latch_ = static_cast<std::uint32_t>(stat_tx_bytes_ >> 32);
            stat_tx_bytes_ = 0;
        } else if (o == GOTCH) {
            v = std::exchange(gotch_latch_, 0);
        }
        return v;
    }

    void enable_ring(Ring& r, bool enable, std::size_t bal, std::size_t bah, std::size_t len, const char* dir) {
        if (enable == r.enabled)
            return;
        if (!enable) {
            r.enabled = false;
            return;
        }
        const std::uint64_t base = regs_[bal / 4] | std::uint64_t{regs_[bah / 4]} << 32;
        const std::uint32_t bytes = regs_[len / 4];
        const std::uint32_t size = bytes / ixgbe::desc::kSize;
        if (bytes == 0 || bytes % 128 != 0 || (size & (size - 1)) != 0) {
            violation(std::string(dir) + " ring length " + std::to_string(bytes) + " invalid");
            return;
        }
        if (base % 128 != 0)
            violation(std::string(dir) + " ring base " + hex(base) + " not 128-byte aligned");
        if (!dma(base, bytes, "ring base"))
            return;
        r = Ring{true, base, size, 0, 0};
    }

    void tail_write(Ring& r, std::uint32_t v, const char* reg) {
        if (!r.enabled) {
            r.tail = v;
            return;
        }
        if (v >= r.size) {
            violation(std::string(reg) + " " + std::to_string(v) + " beyond ring size " + std::to_string(r.size));
            return;
        }
        const std::uint32_t mask = r.size - 1;
        const std::uint32_t advance = (v - r.tail) & mask;
        if (owned(r) + advance > r.size - 1) {
            violation(std::string(reg) + " moved past the device head");
            return;
        }
        r.tail = v;
    }

    std::size_t step_tx(unsigned qi) {
        using namespace ixgbe;
        Ring& q = txq_[qi];
        std::size_t n = 0;
        while (q.enabled && q.head != q.tail && n < opt_.step_budget) {
            std::byte* d = dma(q.base + std::uint64_t{q.head} * desc::kSize, desc::kSize, "tx descriptor");
            if (!d)
                return n;
            const std::uint64_t addr = detail::dma_load<std::uint64_t>(d + desc::kTxBufAddr);
            const std::uint32_t cmd = detail::dma_load<std::uint32_t>(d + desc::kTxCmdLen);
            const std::uint32_t len = cmd & desc::TX_LEN_MASK;
            if (!(cmd & desc::TX_EOP))
                violation("tx descriptor " + std::to_string(q.head) + " without EOP");
            if (len == 0)
                violation("tx descriptor " + std::to_string(q.head) + " with zero length");
            if (len > 0) {
                if (const std::byte* p = dma(addr, len, "tx buffer"))
                    emit(std::span(p, len), addr);
            }
            detail::publish_barrier();
            detail::dma_store<std::uint32_t>(d + desc::kTxStatus, desc::TX_DD);
            q.head = (q.head + 1) & (q.size - 1);
            ++n;
        }
        return n;
    }

    void emit(std::span<const std::byte> frame, std::uint64_t addr) {
        ++stat_tx_packets_;
        stat_tx_bytes_ += frame.size();
        emit_tx(frame, 0, addr);
    }

    bool accepts(std::span<const std::byte> f) const {
        using namespace ixgbe::bits;
        const std::uint32_t fctrl = regs_[ixgbe::reg::FCTRL / 4];
        if (fctrl & FCTRL_UPE)
            return true;
        if (f.size() < 6)
            return false;
        const auto m = mac();
        if (std::equal(m.begin(), m.end(), f.begin(), [](std::uint8_t a, std::byte b) { return a == std::uint8_t(b); }))
            return true;
        const bool broadcast = std::all_of(f.begin(), f.begin() + 6, [](std::byte b) { return b == std::byte{0xFF}; });
        if (broadcast)
            return fctrl & FCTRL_BAM;
        if (std::to_integer<std::uint8_t>(f[0]) & 1)
            return fctrl & FCTRL_MPE;
        return false;
    }

    // Frames are spread over the enabled queues round-robin.
    std::size_t step_rx() {
        using namespace ixgbe;
        std::vector<unsigned> active;
        for (unsigned q = 0; q < rxq_.size(); ++q)
            if (rxq_[q].enabled && (regs_[reg::RXDCTL(q) / 4] & bits::RXDCTL_ENABLE))
                active.push_back(q);
        if (active.empty())
            return 0;
        std::vector<std::size_t> budget(rxq_.size(), opt_.step_budget);
        auto& in = injected();
        std::size_t n = 0;
        while (!in.empty()) {
            if (!accepts(in.front())) {
                count_filtered();
                in.pop_front();
                continue;
            }
            bool placed = false;
            for (std::size_t k = 0; k < active.size() && !placed; ++k) {
                const unsigned qi = active[(rr_next_ + k) % active.size()];
                Ring& q = rxq_[qi];
                if (budget[qi] == 0 || q.head == q.tail)
                    continue;
                deliver(qi, in.front());
                --budget[qi];
                rr_next_ = (rr_next_ + k + 1) % active.size();
                placed = true;
            }
            if (!placed)
                break;
            in.pop_front();
            ++n;
        }
        return n;
    }

    void deliver(unsigned qi, const Frame& f) {
        using namespace ixgbe;
        Ring& q = rxq_[qi];
        std::byte* d = dma(q.base + std::uint64_t{q.head} * desc::kSize, desc::kSize, "rx descriptor");
        if (!d)
            return;
        const std::uint64_t addr = detail::dma_load<std::uint64_t>(d + desc::kRxBufAddr);
        const std::uint32_t bsize = (regs_[reg::SRRCTL(qi) / 4] & bits::SRRCTL_BSIZEPKT_MASK) * 1024;
        if (f.size() > bsize) {
            violation("frame of " + std::to_string(f.size()) + " bytes does not fit rx buffer of " +
                      std::to_string(bsize));
            return;
        }
        std::byte* p = dma(addr, f.size(), "rx buffer");
        if (!p)
            return;
        std::memcpy(p, f.data(), f.size());
        detail::dma_store<std::uint64_t>(d + 0, 0);
        detail::dma_store<std::uint16_t>(d + desc::kRxLength, static_cast<std::uint16_t>(f.size()));
        detail::dma_store<std::uint16_t>(d + desc::kRxLength + 2, 0);
        detail::publish_barrier();
        detail::dma_store<std::uint32_t>(d + desc::kRxStatus, desc::RX_DD | desc::RX_EOP);
        q.head = (q.head + 1) & (q.size - 1);
        ++stat_rx_packets_;
        stat_rx_bytes_ += f.size();
        count_rx(f.size());
    }

    Options opt_;
    std::vector<std::uint32_t> regs_;
    std::vector<Ring> rxq_, txq_;
    std::vector<Scheduled> scheduled_;
    std::uint32_t link_ = 0;
    std::uint64_t stat_rx_packets_ = 0, stat_tx_packets_ = 0, stat_rx_bytes_ = 0, stat_tx_bytes_ = 0;
    std::uint32_t gorch_latch_ = 0, gotch_latch_ = 0;
    std::size_t rr_next_ = 0;
};

} // namespace uddk::emu
