#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "uddk/driver.hpp"
#include "uddk/error.hpp"
#include "uddk/mempool.hpp"

namespace uddk::apps {

inline constexpr std::size_t kMinPacketSize = 60; // minimum Ethernet frame without CRC
inline constexpr std::size_t kFwdModifiedByte = 48;
inline constexpr std::uint32_t kDefaultBatch = 32;

// Template header fields.
inline constexpr std::array<std::uint8_t, 6> kTemplateDstMac{0x02, 0x00, 0x00, 0x00, 0x00, 0x02};
inline constexpr std::array<std::uint8_t, 6> kTemplateSrcMac{0x02, 0x00, 0x00, 0x00, 0x00, 0x01};
inline constexpr std::array<std::uint8_t, 4> kTemplateSrcIp{10, 0, 0, 1};
inline constexpr std::array<std::uint8_t, 4> kTemplateDstIp{10, 0, 0, 2};
inline constexpr std::uint16_t kTemplateSrcPort = 4000;
inline constexpr std::uint16_t kTemplateDstPort = 4001;
inline constexpr std::size_t kHeadersSize = 14 + 20 + 8;

/// Ones' complement sum over 16-bit big-endian words.
inline std::uint16_t ipv4_checksum(std::span<const std::byte> header) {
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i + 1 < header.size(); i += 2)
        sum += std::uint32_t(std::to_integer<std::uint8_t>(header[i])) << 8 | std::to_integer<std::uint8_t>(header[i + 1]);
    if (header.size() % 2)
        sum += std::uint32_t(std::to_integer<std::uint8_t>(header.back())) << 8;
    while (sum >> 16)
        sum = (sum & 0xFFFF) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

/// Ethernet/IPv4/UDP frame of `size` bytes. Payload byte i holds i & 0xFF; the
/// last four bytes are reserved for the sequence number (zero here).
inline std::vector<std::byte> packet_template(std::size_t size) {
    if (size < kMinPacketSize)
        fail(Errc::invalid_argument, "packet size " + std::to_string(size) + " below minimum 60");
    if (size > 0xFFFF)
        fail(Errc::invalid_argument, "packet size " + std::to_string(size) + " too large");
    std::vector<std::byte> f(size);
    auto put8 = [&](std::size_t o, std::uint8_t v) { f[o] = std::byte{v}; };
    auto put16 = [&](std::size_t o, std::uint16_t v) {
        put8(o, static_cast<std::uint8_t>(v >> 8));
        put8(o + 1, static_cast<std::uint8_t>(v));
    };
    for (std::size_t i = 0; i < 6; ++i) {
        put8(i, kTemplateDstMac[i]);
        put8(6 + i, kTemplateSrcMac[i]);
    }
    put16(12, 0x0800);
    put8(14, 0x45);
    put16(16, static_cast<std::uint16_t>(size - 14));
    put8(22, 64); // TTL
    put8(23, 17); // UDP
    for (std::size_t i = 0; i < 4; ++i) {
        put8(26 + i, kTemplateSrcIp[i]);
        put8(30 + i, kTemplateDstIp[i]);
    }
    put16(24, ipv4_checksum(std::span(f).subspan(14, 20)));
    put16(34, kTemplateSrcPort);
    put16(36, kTemplateDstPort);
    put16(38, static_cast<std::uint16_t>(size - 34));
    // UDP checksum 0: not computed
    for (std::size_t i = kHeadersSize; i < size - 4; ++i)
        put8(i, static_cast<std::uint8_t>(i - kHeadersSize));
    return f;
}

inline void stamp_sequence(std::span<std::byte> frame, std::uint32_t seq) {
    const std::size_t o = frame.size() - 4;
    for (int i = 0; i < 4; ++i)
        frame[o + i] = std::byte{static_cast<std::uint8_t>(seq >> (8 * i))};
}

inline std::uint32_t read_sequence(std::span<const std::byte> frame) {
    const std::size_t o = frame.size() - 4;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= std::uint32_t(std::to_integer<std::uint8_t>(frame[o + i])) << (8 * i);
    return v;
}

// ---------------------------------------------------------------------------
// Statistics

using Clock = std::chrono::steady_clock;

struct StatsSnapshot {
    DeviceStats stats; // cumulative
    Clock::time_point time;
};

struct Rates {
    double rx_mpps = 0, rx_gbit = 0, tx_mpps = 0, tx_gbit = 0;
};

inline constexpr std::chrono::milliseconds kMinRateInterval{100};

/// Rates between two snapshots; none if they are less than 100 ms apart.
/// Gbit/s counts frame bytes only (no preamble, CRC or inter-frame gap).
inline std::optional<Rates> rates(const StatsSnapshot& prev, const StatsSnapshot& cur) {
    const auto dt = cur.time - prev.time;
    if (dt < kMinRateInterval)
        return std::nullopt;
    const double s = std::chrono::duration<double>(dt).count();
    Rates r;
    r.rx_mpps = double(cur.stats.rx_packets - prev.stats.rx_packets) / s / 1e6;
    r.tx_mpps = double(cur.stats.tx_packets - prev.stats.tx_packets) / s / 1e6;
    r.rx_gbit = double(cur.stats.rx_bytes - prev.stats.rx_bytes) * 8 / s / 1e9;
    r.tx_gbit = double(cur.stats.tx_bytes - prev.stats.tx_bytes) * 8 / s / 1e9;
    return r;
}

inline std::string format_stats_line(const std::string& dev, const Rates& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "[%s] RX: %.2f Mpps, %.2f Gbit/s | TX: %.2f Mpps, %.2f Gbit/s", dev.c_str(),
                  r.rx_mpps, r.rx_gbit, r.tx_mpps, r.tx_gbit);
    return buf;
}

/// How an app loop is driven and when it ends.
struct RunControl {
    /// Called once per loop iteration and while waiting on a full ring.
    std::function<void()> poll_hook;
    const std::atomic<bool>* stop = nullptr;
    std::uint64_t max_packets = 0; // 0: unlimited
    std::chrono::nanoseconds max_duration{0};
    std::chrono::nanoseconds stats_interval = std::chrono::seconds(1);
    /// Receives each formatted stats line; nothing is printed when unset.
    std::function<void(const std::string&)> on_stats_line;
    std::function<void(const std::string& dev, const StatsSnapshot& prev, const StatsSnapshot& cur)> on_stats;
    /// How long to wait at exit for the device to hand back transmitted buffers.
    std::chrono::nanoseconds drain_timeout = std::chrono::seconds(1);
};

namespace detail {

class StatsTracker {
public:
    StatsTracker(NetDevice& dev, const RunControl& rc) : dev_(dev), rc_(rc) {
        dev_.read_stats(discard_); // start from zero
        prev_ = {total_, Clock::now()};
    }

    void tick(Clock::time_point now) {
        if (now - prev_.time < rc_.stats_interval)
            return;
        dev_.read_stats(total_);
        StatsSnapshot cur{total_, now};
        if (auto r = rates(prev_, cur)) {
            if (rc_.on_stats_line)
                rc_.on_stats_line(format_stats_line(dev_.address(), *r));
            if (rc_.on_stats)
                rc_.on_stats(dev_.address(), prev_, cur);
            prev_ = cur;
        }
    }

    const DeviceStats& finish() {
        dev_.read_stats(total_);
        return total_;
    }

private:
    NetDevice& dev_;
    const RunControl& rc_;
    DeviceStats discard_;
    DeviceStats total_;
    StatsSnapshot prev_;
};

inline void poll(const RunControl& rc) {
    if (rc.poll_hook)
        rc.poll_hook();
}

inline bool stopped(const RunControl& rc, Clock::time_point start, Clock::time_point now, std::uint64_t packets) {
    if (rc.stop && rc.stop->load(std::memory_order_relaxed))
        return true;
    if (rc.max_packets && packets >= rc.max_packets)
        return true;
    return rc.max_duration.count() > 0 && now - start >= rc.max_duration;
}

// Waits for the device to return every transmitted buffer. Shuts the device
// down if it does not, so no buffer outlives its pool.
inline bool drain(NetDevice& dev, const RunControl& rc) {
    const auto deadline = Clock::now() + rc.drain_timeout;
    for (;;) {
        bool idle = true;
        for (std::uint16_t q = 0; q < dev.num_tx_queues(); ++q)
            idle &= dev.drain_tx(q) == 0;
        if (idle)
            return true;
        if (Clock::now() >= deadline) {
            dev.shutdown();
            return false;
        }
        poll(rc);
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Packet generator

struct PktgenOptions {
    std::uint32_t batch = kDefaultBatch;
    std::size_t size = kMinPacketSize;
    std::uint32_t pool_capacity = 4096;
    std::uint32_t entry_size = Mempool::kDefaultEntrySize;
};

struct PktgenResult {
    std::uint64_t sent = 0; // frames accepted by tx_batch, sequence numbers 0..sent-1
    DeviceStats stats;
    double seconds = 0;
    bool drained = true; // false if the device had to be shut down to reclaim buffers
};

inline void validate(const PktgenOptions& opt) {
    if (opt.batch == 0)
        fail(Errc::invalid_argument, "batch size must be at least 1");
    if (opt.size < kMinPacketSize || opt.size > opt.entry_size - PacketBuffer::kDataOffset)
        fail(Errc::invalid_argument, "packet size " + std::to_string(opt.size) + " outside [60, " +
                                         std::to_string(opt.entry_size - PacketBuffer::kDataOffset) + "]");
}

/// Transmits template frames stamped with consecutive sequence numbers on queue 0.
inline PktgenResult pktgen(NetDevice& dev, const PktgenOptions& opt, const RunControl& rc) {
    validate(opt);
    auto pool = Mempool::create(*dev.dma_allocator(), opt.pool_capacity, opt.entry_size);
    {
        const auto tmpl = packet_template(opt.size);
        std::vector<PacketBuffer*> all(pool->capacity());
        pool->alloc_batch(all);
        for (auto* b : all) {
            std::memcpy(b->data(), tmpl.data(), tmpl.size());
            b->size = static_cast<std::uint32_t>(opt.size);
        }
        for (auto* b : all)
            pool->free(b);
    }

    PktgenResult res;
    detail::StatsTracker stats(dev, rc);
    std::vector<PacketBuffer*> bufs(opt.batch);
    std::uint32_t seq = 0;
    const auto start = Clock::now();
    auto now = start;
    while (!detail::stopped(rc, start, now, res.sent)) {
        detail::poll(rc);
        std::size_t want = opt.batch;
        if (rc.max_packets)
            want = std::min<std::uint64_t>(want, rc.max_packets - res.sent);
        const std::size_t n = pool->alloc_batch(std::span(bufs).first(want));
        for (std::size_t i = 0; i < n; ++i) {
            bufs[i]->size = static_cast<std::uint32_t>(opt.size);
            stamp_sequence(bufs[i]->payload(), seq++);
        }
        // Busy-wait until the whole batch is on the ring.
        std::size_t sent = 0;
        while (sent < n) {
            sent += dev.tx_batch(0, std::span(bufs).subspan(sent, n - sent));
            if (sent < n) {
                if (detail::stopped(rc, start, Clock::now(), res.sent))
                    break;
                detail::poll(rc);
            }
        }
        for (std::size_t i = sent; i < n; ++i)
            pool->free(bufs[i]);
        res.sent += sent;
        now = Clock::now();
        stats.tick(now);
    }
    res.drained = detail::drain(dev, rc);
    res.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    res.stats = stats.finish();
    return res;
}

// ---------------------------------------------------------------------------
// Forwarder

struct FwdOptions {
    std::uint32_t batch = kDefaultBatch;
};

struct FwdResult {
    std::uint64_t forwarded_ab = 0, forwarded_ba = 0; // received and handed to tx_batch
    std::uint64_t dropped_ab = 0, dropped_ba = 0;     // not accepted by a full tx ring
    DeviceStats stats_a, stats_b;
    double seconds = 0;
    bool drained = true;

    std::uint64_t forwarded() const noexcept { return forwarded_ab + forwarded_ba; }
    std::uint64_t dropped() const noexcept { return dropped_ab + dropped_ba; }
};

namespace detail {

// One rx_batch on `in`, touch each frame, one tx_batch on `out`; frees what does not fit.
inline void forward_once(NetDevice& in, NetDevice& out, std::span<PacketBuffer*> bufs, std::uint64_t& fwd,
                         std::uint64_t& dropped) {
    const std::size_t n = in.rx_batch(0, bufs);
    if (n == 0)
        return;
    for (std::size_t i = 0; i < n; ++i)
        if (bufs[i]->size > kFwdModifiedByte)
            bufs[i]->data()[kFwdModifiedByte] = std::byte{static_cast<std::uint8_t>(
                std::to_integer<std::uint8_t>(bufs[i]->data()[kFwdModifiedByte]) + 1)};
    const std::size_t sent = out.tx_batch(0, bufs.first(n));
    for (std::size_t i = sent; i < n; ++i)
        buf_free(bufs[i]);
    fwd += n;
    dropped += n - sent;
}

} // namespace detail

/// Forwards a → b and b → a on queue 0. With a and b the same device only one
/// direction runs.
inline FwdResult fwd(NetDevice& a, NetDevice& b, const FwdOptions& opt, const RunControl& rc) {
    if (opt.batch == 0)
        fail(Errc::invalid_argument, "batch size must be at least 1");
    const bool same = &a == &b;
    FwdResult res;
    detail::StatsTracker sa(a, rc);
    std::optional<detail::StatsTracker> sb;
    if (!same)
        sb.emplace(b, rc);
    std::vector<PacketBuffer*> bufs(opt.batch);
    const auto start = Clock::now();
    auto now = start;
    while (!detail::stopped(rc, start, now, res.forwarded())) {
        detail::poll(rc);
        detail::forward_once(a, b, bufs, res.forwarded_ab, res.dropped_ab);
        if (!same)
            detail::forward_once(b, a, bufs, res.forwarded_ba, res.dropped_ba);
        now = Clock::now();
        sa.tick(now);
        if (sb)
            sb->tick(now);
    }
    res.drained = detail::drain(a, rc);
    if (!same)
        res.drained &= detail::drain(b, rc);
    res.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    res.stats_a = sa.finish();
    if (sb)
        res.stats_b = sb->finish();
    return res;
}

} // namespace uddk::apps
