#include <gtest/gtest.h>

#include <map>
#include <random>
#include <unordered_map>

#include "support.hpp"
#include "uddk/apps.hpp"

using namespace uddk;
using test::IxgbeRig;
using test::VirtioRig;

namespace {

constexpr std::uint32_t kSeeds[] = {1, 7, 42, 1234, 0xC0FFEE};

std::uint32_t uniform(std::mt19937& rng, std::uint32_t lo, std::uint32_t hi) {
    return std::uniform_int_distribution<std::uint32_t>(lo, hi)(rng);
}

// Where a buffer currently is.
enum class Owner { pool, app, rx_ring, tx_ring };

// Checks that every buffer of every pool is in exactly one place.
class OwnershipTracker {
public:
    void add_pool(const Mempool& p) { pools_.push_back(&p); }

    ::testing::AssertionResult check(const std::vector<PacketBuffer*>& app, const IxgbeDevice& dev) const {
        std::unordered_map<const PacketBuffer*, Owner> seen;
        auto claim = [&](const PacketBuffer* b, Owner o) -> bool { return seen.emplace(b, o).second; };
        for (auto* b : app)
            if (!claim(b, Owner::app))
                return ::testing::AssertionFailure() << "buffer listed twice by the application";
        for (auto* b : dev.rx_queue(0).shadow())
            if (b && !claim(b, Owner::rx_ring))
                return ::testing::AssertionFailure() << "rx ring buffer also owned elsewhere";
        for (auto* b : dev.tx_queue(0).in_flight_buffers())
            if (!claim(b, Owner::tx_ring))
                return ::testing::AssertionFailure() << "tx ring buffer also owned elsewhere";
        for (const auto* p : pools_) {
            for (std::uint32_t i = 0; i < p->capacity(); ++i) {
                const PacketBuffer* b = p->buffer(i);
                const bool held = seen.count(b) != 0;
                if (p->is_free(i) == held)
                    return ::testing::AssertionFailure()
                           << "pool index " << i << (held ? " free but held" : " neither free nor held");
            }
        }
        std::size_t total = 0, free = 0;
        for (const auto* p : pools_) {
            total += p->capacity();
            free += p->free_count();
        }
        if (free + seen.size() != total)
            return ::testing::AssertionFailure() << "conservation: " << free << " free + " << seen.size()
                                                 << " held != " << total;
        return ::testing::AssertionSuccess();
    }

private:
    std::vector<const Mempool*> pools_;
};

} // namespace

TEST(Property, RegisterReadBack) {
    for (auto seed : kSeeds) {
        std::mt19937 rng(seed);
        DeviceRegistry reg;
        emu::Testbed tb(reg);
        auto nic = tb.add_ixgbe("rb");
        auto regs = nic->map_bar(0);
        int checked = 0;
        while (checked < 2000) {
            const std::size_t off = std::size_t{uniform(rng, 0, 0x80000 / 4 - 1)} * 4;
            if (emu::EmuIxgbe::has_side_effects(off))
                continue;
            const std::uint32_t v = static_cast<std::uint32_t>(rng());
            regs.write32(off, v);
            ASSERT_EQ(regs.read32(off), v) << "offset " << off << " seed " << seed;
            ++checked;
        }
        EXPECT_EQ(nic->violation_count(), 0u);
    }
}

TEST(Property, AccessWidthFidelity) {
    IxgbeRig r;
    auto pool = Mempool::create(*r.dev->dma_allocator(), 256);
    for (int i = 0; i < 100; ++i)
        r.nic->inject_rx(test::make_frame(60, test::kBroadcast, i));
    r.nic->step();
    std::array<PacketBuffer*, 32> out{};
    for (int k = 0; k < 4; ++k) {
        const auto n = r.dev->rx_batch(0, out);
        test::free_all(std::span(out).first(n));
        auto bufs = test::fill(*pool, 32, test::make_frame(60, test::kBroadcast));
        r.dev->tx_batch(0, bufs);
        r.nic->step();
    }
    DeviceStats s;
    r.dev->read_stats(s);
    r.dev->shutdown();
    ASSERT_FALSE(r.nic->access_log().empty());
    for (const auto& a : r.nic->access_log()) {
        EXPECT_EQ(a.width, 4);
        EXPECT_EQ(a.offset % 4, 0u);
        EXPECT_FALSE(a.port);
    }

    VirtioRig v;
    v.dev->read_stats(s);
    v.dev->shutdown();
    for (const auto& a : v.nic->access_log()) {
        EXPECT_TRUE(a.port);
        EXPECT_EQ(a.offset % a.width, 0u);
    }
}

TEST(Property, OwnershipSoundnessUnderRandomTraffic) {
    for (auto seed : kSeeds) {
        std::mt19937 rng(seed);
        IxgbeRig r(test::fast_ixgbe(64));
        auto txpool = Mempool::create(*r.dev->dma_allocator(), 512);
        OwnershipTracker tracker;
        tracker.add_pool(r.dev->rx_queue(0).pool());
        tracker.add_pool(*txpool);
        std::vector<PacketBuffer*> app;
        std::uint32_t tag = 0;
        for (int op = 0; op < 4000; ++op) {
            switch (uniform(rng, 0, 5)) {
            case 0: { // allocate
                auto got = test::fill(*txpool, uniform(rng, 1, 40), test::make_frame(60, test::kBroadcast, tag++));
                app.insert(app.end(), got.begin(), got.end());
                break;
            }
            case 1: { // transmit a random suffix of what the app holds
                if (app.empty())
                    break;
                const std::size_t n = uniform(rng, 1, static_cast<std::uint32_t>(std::min<std::size_t>(app.size(), 64)));
                std::shuffle(app.begin(), app.end(), rng);
                std::span<PacketBuffer* const> batch(app.data() + app.size() - n, n);
                const std::size_t sent = r.dev->tx_batch(0, batch);
                // Accepted buffers are the first `sent` of the batch.
                app.erase(app.end() - static_cast<std::ptrdiff_t>(n), app.end() - static_cast<std::ptrdiff_t>(n - sent));
                break;
            }
            case 2: { // traffic arrives
                for (std::uint32_t k = uniform(rng, 0, 50); k > 0; --k)
                    r.nic->inject_rx(test::make_frame(uniform(rng, 60, 1500), test::kBroadcast, tag++));
                break;
            }
            case 3: { // receive
                std::vector<PacketBuffer*> out(uniform(rng, 1, 64));
                const auto n = r.dev->rx_batch(0, out);
                app.insert(app.end(), out.begin(), out.begin() + static_cast<std::ptrdiff_t>(n));
                break;
            }
            case 4: { // free
                std::shuffle(app.begin(), app.end(), rng);
                for (std::uint32_t k = uniform(rng, 0, static_cast<std::uint32_t>(app.size())); k > 0; --k) {
                    buf_free(app.back());
                    app.pop_back();
                }
                break;
            }
            case 5:
                r.nic->step();
                break;
            }
            ASSERT_TRUE(tracker.check(app, *r.dev)) << "seed " << seed << " op " << op;
        }
        test::free_all(app);
        app.clear();
        r.tb.run_until_idle();
        EXPECT_EQ(r.dev->drain_tx(0), 0u);
        ASSERT_TRUE(tracker.check(app, *r.dev));
        r.dev->shutdown();
        EXPECT_EQ(r.dev->rx_queue(0).pool().free_count(), r.dev->rx_queue(0).pool().capacity());
        EXPECT_EQ(txpool->free_count(), txpool->capacity());
        EXPECT_EQ(r.tb.violation_count(), 0u);
    }
}

TEST(Property, TxCleanAdvancesInBlocks) {
    std::mt19937 rng(99);
    IxgbeRig r(test::fast_ixgbe(128));
    auto pool = Mempool::create(*r.dev->dma_allocator(), 1024);
    const auto frame = test::make_frame(60, test::kBroadcast);
    for (int op = 0; op < 3000; ++op) {
        const auto before = r.dev->tx_queue(0).clean_index();
        auto bufs = test::fill(*pool, uniform(rng, 1, 48), frame);
        const auto sent = r.dev->tx_batch(0, bufs);
        test::free_all(std::span(bufs).subspan(sent));
        const auto after = r.dev->tx_queue(0).clean_index();
        ASSERT_EQ((after - before) % ixgbe::kTxCleanBatch, 0u);
        ASSERT_EQ(after % ixgbe::kTxCleanBatch, 0u);
        if (uniform(rng, 0, 1))
            r.nic->step();
    }
    r.tb.run_until_idle();
    r.dev->shutdown();
}

TEST(Property, OneTailWritePerProductiveBatch) {
    for (auto seed : kSeeds) {
        std::mt19937 rng(seed);
        IxgbeRig r;
        auto pool = Mempool::create(*r.dev->dma_allocator(), 2048);
        r.nic->reset_write_counts();
        std::uint64_t rx_batches = 0, tx_batches = 0;
        std::vector<PacketBuffer*> out(64);
        for (int op = 0; op < 2000; ++op) {
            for (std::uint32_t k = uniform(rng, 0, 20); k > 0; --k)
                r.nic->inject_rx(test::make_frame(60, test::kBroadcast));
            r.nic->step();
            const auto n = r.dev->rx_batch(0, std::span(out).first(uniform(rng, 1, 64)));
            rx_batches += n > 0;
            test::free_all(std::span(out).first(n));
            auto bufs = test::fill(*pool, uniform(rng, 0, 40), test::make_frame(60, test::kBroadcast));
            const auto sent = r.dev->tx_batch(0, bufs);
            tx_batches += sent > 0;
            test::free_all(std::span(bufs).subspan(sent));
        }
        EXPECT_EQ(r.nic->write_count(ixgbe::reg::RDT(0)), rx_batches) << "seed " << seed;
        EXPECT_EQ(r.nic->write_count(ixgbe::reg::TDT(0)), tx_batches) << "seed " << seed;
        EXPECT_EQ(r.nic->write_count(ixgbe::reg::RDH(0)) + r.nic->write_count(ixgbe::reg::TDH(0)), 0u);
        r.tb.run_until_idle();
        r.dev->shutdown();
    }
}

TEST(Property, VirtioIndicesMonotoneAndOneNotifyPerBatch) {
    for (auto seed : kSeeds) {
        std::mt19937 rng(seed);
        VirtioRig v;
        auto pool = Mempool::create(*v.dev->dma_allocator(), 1024);
        std::array<std::uint16_t, 2> avail{v.nic->avail_idx(0), v.nic->avail_idx(1)};
        std::array<std::uint16_t, 2> used{v.nic->used_idx(0), v.nic->used_idx(1)};
        auto forward_only = [](std::uint16_t before, std::uint16_t after) {
            return static_cast<std::uint16_t>(after - before) <= virtio::kQueueSize;
        };
        const auto n0 = v.nic->notifications(0), n1 = v.nic->notifications(1);
        std::uint64_t rx_batches = 0, tx_batches = 0;
        std::vector<PacketBuffer*> out(64);
        for (int op = 0; op < 3000; ++op) {
            for (std::uint32_t k = uniform(rng, 0, 40); k > 0; --k)
                v.nic->inject_rx(test::make_frame(uniform(rng, 60, 1500), test::kBroadcast));
            v.nic->step();
            const auto n = v.dev->rx_batch(0, std::span(out).first(uniform(rng, 1, 64)));
            rx_batches += n > 0;
            test::free_all(std::span(out).first(n));
            auto bufs = test::fill(*pool, uniform(rng, 0, 64), test::make_frame(60, test::kBroadcast));
            const auto sent = v.dev->tx_batch(0, bufs);
            tx_batches += sent > 0;
            test::free_all(std::span(bufs).subspan(sent));
            for (unsigned q = 0; q < 2; ++q) {
                ASSERT_TRUE(forward_only(avail[q], v.nic->avail_idx(q))) << "avail q" << q << " op " << op;
                ASSERT_TRUE(forward_only(used[q], v.nic->used_idx(q))) << "used q" << q << " op " << op;
                avail[q] = v.nic->avail_idx(q);
                used[q] = v.nic->used_idx(q);
            }
        }
        EXPECT_EQ(v.nic->notifications(0) - n0, rx_batches);
        EXPECT_EQ(v.nic->notifications(1) - n1, tx_batches);
        EXPECT_EQ(v.tb.violation_count(), 0u);
        v.tb.run_until_idle();
        v.dev->shutdown();
    }
}

TEST(Property, StatsMonotoneAndReconciled) {
    std::mt19937 rng(5);
    IxgbeRig r;
    auto pool = Mempool::create(*r.dev->dma_allocator(), 1024);
    DeviceStats total, prev;
    std::vector<PacketBuffer*> out(32);
    for (int step = 0; step < 10000; ++step) {
        for (std::uint32_t k = uniform(rng, 0, 3); k > 0; --k)
            r.nic->inject_rx(test::make_frame(uniform(rng, 60, 1500), test::kBroadcast));
        if (uniform(rng, 0, 3) == 0) {
            auto bufs = test::fill(*pool, uniform(rng, 1, 8), test::make_frame(uniform(rng, 60, 1500), test::kBroadcast));
            const auto sent = r.dev->tx_batch(0, bufs);
            test::free_all(std::span(bufs).subspan(sent));
        }
        r.nic->step();
        test::free_all(std::span(out).first(r.dev->rx_batch(0, out)));
        if (step % 10 == 0) {
            r.dev->read_stats(total);
            ASSERT_GE(total.rx_packets, prev.rx_packets);
            ASSERT_GE(total.rx_bytes, prev.rx_bytes);
            ASSERT_GE(total.tx_packets, prev.tx_packets);
            ASSERT_GE(total.tx_bytes, prev.tx_bytes);
            prev = total;
        }
    }
    r.tb.run_until_idle();
    r.dev->read_stats(total);
    const auto& gt = r.nic->ground_truth();
    EXPECT_EQ(total.rx_packets, gt.rx_packets);
    EXPECT_EQ(total.rx_bytes, gt.rx_bytes);
    EXPECT_EQ(total.tx_packets, gt.tx_packets);
    EXPECT_EQ(total.tx_bytes, gt.tx_bytes);
    r.dev->shutdown();
}

TEST(Property, RingWrapKeepsOrder) {
    for (auto seed : kSeeds) {
        std::mt19937 rng(seed);
        DeviceRegistry reg;
        emu::Testbed tb(reg);
        auto na = tb.add_ixgbe("a");
        auto nb = tb.add_ixgbe("b");
        auto a = IxgbeDevice::init(na, test::fast_ixgbe(64));
        auto b = IxgbeDevice::init(nb, test::fast_ixgbe(64));
        nb->set_capture(true);
        const std::uint32_t total = 10 * 64;
        std::vector<emu::Frame> sent;
        for (std::uint32_t i = 0; i < total; ++i)
            sent.push_back(test::make_frame(uniform(rng, 60, 1500), test::kBroadcast, i));
        std::uint32_t next = 0;
        apps::RunControl rc;
        rc.max_packets = total;
        rc.poll_hook = [&] {
            // Random arrival bursts so batches straddle the wrap at different points.
            for (std::uint32_t k = uniform(rng, 0, 40); k > 0 && next < total; --k)
                na->inject_rx(sent[next++]);
            tb.step_all();
        };
        // Above 32 a batch may not fit: up to 31 sent descriptors wait for the next clean block.
        const auto res = apps::fwd(*a, *b, apps::FwdOptions{uniform(rng, 1, 32)}, rc);
        ASSERT_EQ(res.forwarded_ab, total);
        ASSERT_EQ(res.dropped(), 0u);
        ASSERT_EQ(nb->captured().size(), total);
        for (std::uint32_t i = 0; i < total; ++i) {
            auto want = sent[i];
            want[apps::kFwdModifiedByte] = std::byte(std::to_integer<std::uint8_t>(want[apps::kFwdModifiedByte]) + 1);
            ASSERT_TRUE(test::same_bytes(nb->captured()[i].payload(), want)) << "seed " << seed << " frame " << i;
        }
        EXPECT_EQ(tb.violation_count(), 0u);
        b->shutdown();
        a->shutdown();
    }
}
