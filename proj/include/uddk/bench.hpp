#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "uddk/apps.hpp"
#include "uddk/emu/testbed.hpp"
#include "uddk/ixgbe.hpp"

namespace uddk::bench {

struct SweepResult {
    std::string param; // "batch" or "ring"
    std::uint32_t value = 0;
    std::uint64_t packets = 0;
    double seconds = 0;
    double tail_writes_per_pkt = 0;
    double mpps = 0;
    std::uint32_t max_in_flight = 0; // most completed-but-unreaped rx descriptors seen
    std::size_t violations = 0;
    bool leak_free = false; // every pool full again after shutdown
};

struct BenchOptions {
    std::chrono::nanoseconds duration = std::chrono::seconds(2);
    std::uint64_t max_packets = 0; // 0: run for the full duration
    std::uint32_t batch = apps::kDefaultBatch;
    std::uint32_t ring_size = ixgbe::kDefaultRingSize;
    std::size_t frame_size = apps::kMinPacketSize;
};

inline constexpr const char* kCsvHeader = "param,value,packets,seconds,tail_writes_per_pkt,mpps";

/// One forwarding run between two emulated ixgbe devices: frames are injected
/// into the input device, forwarded by fwd, and consumed by the output device.
inline SweepResult run_fwd(const std::string& param, std::uint32_t value, std::uint32_t batch,
                           std::uint32_t ring_size, const BenchOptions& opt) {
    DeviceRegistry reg;
    emu::Testbed tb(reg);
    auto in = tb.add_ixgbe("bench-in");
    auto out = tb.add_ixgbe("bench-out");
    IxgbeConfig cfg;
    cfg.ring_size = ring_size;
    cfg.reset_settle = std::chrono::nanoseconds(0);
    auto a = IxgbeDevice::init(in, cfg);
    auto b = IxgbeDevice::init(out, cfg);

    const auto frame = apps::packet_template(opt.frame_size);
    // Enough device steps per iteration that a full batch is always waiting.
    const std::uint32_t steps = (batch + 63) / 64;
    SweepResult r;
    r.param = param;
    r.value = value;

    in->reset_write_counts();
    out->reset_write_counts();
    bool feeding = true;
    apps::RunControl rc;
    rc.max_packets = opt.max_packets;
    rc.max_duration = opt.duration;
    rc.stats_interval = std::chrono::hours(1);
    rc.poll_hook = [&] {
        if (feeding)
            while (in->pending_rx() < 2 * std::size_t{ring_size} + 256)
                in->inject_rx(frame);
        for (std::uint32_t i = 0; i < steps; ++i) {
            in->step();
            out->step();
        }
        r.max_in_flight = std::max(r.max_in_flight, in->rx_completed(0));
    };
    const auto res = apps::fwd(*a, *b, apps::FwdOptions{batch}, rc);
    feeding = false;

    const auto writes = in->write_count(ixgbe::reg::RDT(0)) + out->write_count(ixgbe::reg::TDT(0));
    r.packets = res.forwarded_ab;
    r.seconds = res.seconds;
    r.tail_writes_per_pkt = r.packets ? double(writes) / double(r.packets) : 0.0;
    r.mpps = r.seconds > 0 ? double(r.packets) / r.seconds / 1e6 : 0.0;

    b->shutdown();
    a->shutdown();
    r.leak_free = a->rx_queue(0).pool().free_count() == a->rx_queue(0).pool().capacity() &&
                  b->rx_queue(0).pool().free_count() == b->rx_queue(0).pool().capacity();
    r.violations = tb.violation_count();
    return r;
}

/// Forwarding with each batch size in `sizes` (each in [1, 256]).
inline std::vector<SweepResult> sweep_batch(std::span<const std::uint32_t> sizes, const BenchOptions& opt = {}) {
    std::vector<SweepResult> out;
    for (auto s : sizes) {
        if (s < 1 || s > 256)
            fail(Errc::invalid_argument, "batch size " + std::to_string(s) + " outside [1, 256]");
        out.push_back(run_fwd("batch", s, s, opt.ring_size, opt));
    }
    return out;
}

/// Forwarding with each ring size in `sizes` (powers of two in [64, 4096]).
inline std::vector<SweepResult> sweep_ring(std::span<const std::uint32_t> sizes, const BenchOptions& opt = {}) {
    std::vector<SweepResult> out;
    for (auto s : sizes) {
        if (!ixgbe::valid_ring_size(s))
            fail(Errc::invalid_argument, "ring size " + std::to_string(s) + " is not a power of two in [64, 4096]");
        out.push_back(run_fwd("ring", s, opt.batch, s, opt));
    }
    return out;
}

inline void write_csv(std::ostream& os, std::span<const SweepResult> results) {
    os << kCsvHeader << '\n';
    char line[256];
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%s,%u,%llu,%.6f,%.6f,%.6f\n", r.param.c_str(), r.value,
                      static_cast<unsigned long long>(r.packets), r.seconds, r.tail_writes_per_pkt, r.mpps);
        os << line;
    }
}

} // namespace uddk::bench
