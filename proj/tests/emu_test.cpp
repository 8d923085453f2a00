#include <gtest/gtest.h>

#include <thread>

#include "support.hpp"

using namespace uddk;
using test::IxgbeRig;
using test::VirtioRig;

TEST(EmuStep, IdleDeviceDoesNothing) {
    IxgbeRig r;
    EXPECT_EQ(r.nic->step(), 0u);
    VirtioRig v;
    EXPECT_EQ(v.nic->step(), 0u);
}

TEST(EmuStep, DeliversInjectedFrames) {
    IxgbeRig r;
    for (int i = 0; i < 5; ++i)
        r.nic->inject_rx(test::make_frame(60, test::kBroadcast, i));
    EXPECT_EQ(r.nic->step(), 5u);
    EXPECT_EQ(r.nic->rx_completed(0), 5u);
}

TEST(EmuStep, BudgetOf64PerStep) {
    IxgbeRig r;
    for (int i = 0; i < 100; ++i)
        r.nic->inject_rx(test::make_frame(60, test::kBroadcast, i));
    EXPECT_EQ(r.nic->step(), 64u);
    EXPECT_EQ(r.nic->step(), 36u);
}

TEST(EmuStep, ReceiveStopsWhenRingIsFull) {
    IxgbeRig r(test::fast_ixgbe(64));
    for (int i = 0; i < 100; ++i)
        r.nic->inject_rx(test::make_frame(60, test::kBroadcast, i));
    r.nic->run_until_idle();
    EXPECT_EQ(r.nic->rx_completed(0), 63u);
    EXPECT_EQ(r.nic->pending_rx(), 37u);
    EXPECT_EQ(r.tb.violation_count(), 0u);
}

TEST(EmuStep, TransmitWithoutReportStatusStillCompletes) {
    IxgbeRig r;
    auto pool = Mempool::create(*r.dev->dma_allocator(), 64);
    r.nic->set_capture(true);
    auto bufs = test::fill(*pool, 1, test::make_frame(60, test::kBroadcast, 5));
    ASSERT_EQ(r.dev->tx_batch(0, bufs), 1u);
    auto* d = r.dev->tx_queue(0).descriptor(0);
    detail::dma_store<std::uint32_t>(d + ixgbe::desc::kTxCmdLen,
                                     detail::dma_load<std::uint32_t>(d + ixgbe::desc::kTxCmdLen) & ~(1u << 27));
    EXPECT_EQ(r.nic->step(), 1u);
    EXPECT_EQ(r.nic->captured().size(), 1u);
    EXPECT_TRUE(detail::dma_load<std::uint32_t>(d + ixgbe::desc::kTxStatus) & ixgbe::desc::TX_DD);
    r.dev->shutdown();
}

TEST(EmuInject, Validation) {
    IxgbeRig r;
    EXPECT_THROW(r.nic->inject_rx({}), Error);
    EXPECT_THROW(r.nic->inject_rx(emu::Frame(2048 - 64 + 1)), Error);
    EXPECT_TRUE(r.nic->inject_rx(emu::Frame(2048 - 64, std::byte{0xFF})));
    r.nic->set_injection_limit(1);
    EXPECT_FALSE(r.nic->inject_rx(test::make_frame(60, test::kBroadcast)));
    EXPECT_EQ(r.nic->ground_truth().rx_overflow, 1u);
}

TEST(EmuInject, LargestFrameDeliveredVerbatim) {
    IxgbeRig r;
    emu::Frame f(2048 - 64);
    for (std::size_t i = 0; i < f.size(); ++i)
        f[i] = std::byte(i * 13);
    r.nic->inject_rx(f);
    r.nic->step();
    std::array<PacketBuffer*, 1> out{};
    ASSERT_EQ(r.dev->rx_batch(0, out), 1u);
    EXPECT_TRUE(test::same_bytes(out[0]->payload(), f));
    buf_free(out[0]);
}

TEST(EmuCapture, DrainEmptyAndOrdered) {
    IxgbeRig r;
    r.nic->set_capture(true);
    EXPECT_TRUE(r.nic->drain_tx().empty());
    auto pool = Mempool::create(*r.dev->dma_allocator(), 64);
    std::vector<PacketBuffer*> bufs;
    for (std::uint32_t i = 0; i < 3; ++i) {
        auto b = test::fill(*pool, 1, test::make_frame(60, test::kBroadcast, i));
        bufs.push_back(b[0]);
    }
    ASSERT_EQ(r.dev->tx_batch(0, bufs), 3u);
    r.nic->run_until_idle();
    auto frames = r.nic->drain_tx();
    ASSERT_EQ(frames.size(), 3u);
    for (std::uint32_t i = 0; i < 3; ++i)
        EXPECT_EQ(test::read_tag(frames[i]), i);
    EXPECT_TRUE(r.nic->drain_tx().empty());
    r.dev->shutdown();
}

TEST(EmuCapture, VirtioRawViewKeepsHeader) {
    VirtioRig v;
    v.nic->set_capture(true);
    auto pool = Mempool::create(*v.dev->dma_allocator(), 64);
    auto bufs = test::fill(*pool, 2, test::make_frame(60, test::kBroadcast, 9));
    ASSERT_EQ(v.dev->tx_batch(0, bufs), 2u);
    v.nic->run_until_idle();
    ASSERT_EQ(v.nic->captured().size(), 2u);
    const auto payload = emu::Frame(v.nic->captured()[0].payload().begin(), v.nic->captured()[0].payload().end());
    auto raw = v.nic->drain_tx_raw();
    ASSERT_EQ(raw.size(), 2u);
    EXPECT_EQ(raw[0].size(), payload.size() + 10);
    EXPECT_TRUE(test::same_bytes(std::span(raw[0]).subspan(10), payload));
    v.dev->shutdown();
}

// --- Wiring

TEST(EmuWire, OneWayAndBothWays) {
    DeviceRegistry reg;
    emu::Testbed tb(reg);
    auto a = tb.add_ixgbe("a");
    auto b = tb.add_ixgbe("b");
    emu::wire(*a, *b);
    auto da = IxgbeDevice::init(a, test::fast_ixgbe());
    auto db = IxgbeDevice::init(b, test::fast_ixgbe());
    auto pa = Mempool::create(*da->dma_allocator(), 64);
    auto pb = Mempool::create(*db->dma_allocator(), 64);

    auto ba = test::fill(*pa, 10, test::make_frame(60, test::kBroadcast, 1));
    ASSERT_EQ(da->tx_batch(0, ba), 10u);
    tb.run_until_idle();
    EXPECT_EQ(b->ground_truth().rx_packets, 10u);

    auto ba2 = test::fill(*pa, 10, test::make_frame(60, test::kBroadcast, 2));
    auto bb2 = test::fill(*pb, 10, test::make_frame(60, test::kBroadcast, 3));
    ASSERT_EQ(da->tx_batch(0, ba2), 10u);
    ASSERT_EQ(db->tx_batch(0, bb2), 10u);
    tb.run_until_idle();
    EXPECT_EQ(b->ground_truth().rx_packets, 20u);
    EXPECT_EQ(a->ground_truth().rx_packets, 10u);

    std::array<PacketBuffer*, 32> out{};
    const auto n = da->rx_batch(0, out);
    EXPECT_EQ(n, 10u);
    for (std::size_t i = 0; i < n; ++i)
        EXPECT_EQ(test::read_tag(out[i]), 3u);
    test::free_all(std::span(out).first(n));
    db->shutdown();
    da->shutdown();
    EXPECT_EQ(tb.violation_count(), 0u);
}

TEST(EmuWire, ChannelAcrossThreads) {
    DeviceRegistry reg;
    emu::Testbed tb(reg);
    auto a = tb.add_ixgbe("a");
    auto b = tb.add_ixgbe("b");
    auto ch = std::make_shared<emu::FrameChannel>();
    emu::connect_tx(*a, ch);
    auto da = IxgbeDevice::init(a, test::fast_ixgbe());
    auto db = IxgbeDevice::init(b, test::fast_ixgbe());
    std::thread sender([&] {
        auto pool = Mempool::create(*da->dma_allocator(), 256);
        for (int round = 0; round < 10; ++round) {
            auto bufs = test::fill(*pool, 20, test::make_frame(60, test::kBroadcast, round));
            std::size_t done = 0;
            while (done < bufs.size()) {
                done += da->tx_batch(0, std::span(bufs).subspan(done));
                a->step();
            }
        }
        a->run_until_idle();
        while (da->drain_tx(0))
            a->step();
    });
    std::size_t received = 0;
    std::array<PacketBuffer*, 64> out{};
    while (received < 200) {
        ch->deliver(*b);
        b->step();
        const auto n = db->rx_batch(0, out);
        received += n;
        test::free_all(std::span(out).first(n));
    }
    sender.join();
    EXPECT_EQ(received, 200u);
    EXPECT_EQ(ch->size(), 0u);
    db->shutdown();
    da->shutdown();
}

TEST(EmuTestbed, UnregistersOnDestruction) {
    DeviceRegistry reg;
    {
        emu::Testbed tb(reg);
        tb.add_ixgbe("gone");
        EXPECT_NO_THROW((void)reg.open(DeviceAddress::parse("emu:gone")));
    }
    EXPECT_THROW((void)reg.open(DeviceAddress::parse("emu:gone")), Error);
}

// --- Violations the device models detect

TEST(EmuViolations, HeadRegisterWrites) {
    IxgbeRig r;
    r.dev->registers().write32(ixgbe::reg::RDH(0), 5);
    r.dev->registers().write32(ixgbe::reg::TDH(0), 5);
    EXPECT_EQ(r.nic->violation_count(), 2u);
    EXPECT_EQ(r.nic->rx_head(0), 0u);
    r.nic->clear_violations();
}

TEST(EmuViolations, TailPastHead) {
    IxgbeRig r;
    r.dev->registers().write32(ixgbe::reg::RDT(0), 600);
    EXPECT_EQ(r.nic->violation_count(), 1u);
    // The ring is already handed over up to S-1; one more would overrun the head.
    r.dev->registers().write32(ixgbe::reg::RDT(0), 0);
    EXPECT_EQ(r.nic->violation_count(), 2u);
    r.nic->clear_violations();
}

TEST(EmuViolations, DmaOutsideRegisteredMemory) {
    IxgbeRig r;
    auto pool = Mempool::create(*r.dev->dma_allocator(), 64);
    auto bufs = test::fill(*pool, 1, test::make_frame(60, test::kBroadcast));
    ASSERT_EQ(r.dev->tx_batch(0, bufs), 1u);
    detail::dma_store<std::uint64_t>(r.dev->tx_queue(0).descriptor(0), 0x1000);
    r.nic->step();
    EXPECT_EQ(r.nic->violation_count(), 1u);
    EXPECT_NE(r.nic->violations()[0].find("DMA outside"), std::string::npos);
    EXPECT_EQ(r.nic->ground_truth().tx_packets, 0u);
    r.nic->clear_violations();
    r.dev->shutdown();
}

TEST(EmuViolations, RingBaseChecks) {
    DeviceRegistry reg;
    emu::Testbed tb(reg);
    auto nic = tb.add_ixgbe("raw");
    enable_dma(*nic);
    auto regs = nic->map_bar(0);
    regs.write32(ixgbe::reg::RDLEN(0), 100);
    regs.write32(ixgbe::reg::RXDCTL(0), ixgbe::bits::RXDCTL_ENABLE);
    EXPECT_FALSE(nic->rx_enabled(0));
    EXPECT_EQ(nic->violation_count(), 1u);
    regs.write32(ixgbe::reg::RXDCTL(0), 0);
    regs.write32(ixgbe::reg::RDLEN(0), 1024);
    regs.write32(ixgbe::reg::RDBAL(0), 0x2000);
    regs.write32(ixgbe::reg::RXDCTL(0), ixgbe::bits::RXDCTL_ENABLE);
    EXPECT_FALSE(nic->rx_enabled(0));
    EXPECT_EQ(nic->violation_count(), 2u);
}

TEST(EmuViolations, UnknownRegisterIsWarningOnly) {
    IxgbeRig r;
    r.dev->registers().write32(0x1FFF0, 1);
    r.dev->registers().write32(0x1FFF0, 2);
    EXPECT_EQ(r.nic->violation_count(), 0u);
    ASSERT_EQ(r.nic->warnings().size(), 1u);
    EXPECT_NE(r.nic->warnings()[0].find("0x1fff0"), std::string::npos);
}

TEST(EmuViolations, PortWidthMismatch) {
    VirtioRig v;
    v.dev->ports().write16(virtio::port::DEVICE_STATUS & ~1u, 0);
    EXPECT_EQ(v.nic->violation_count(), 1u);
    v.nic->clear_violations();
}

TEST(EmuViolations, DriverWritesUsedRing) {
    VirtioRig v;
    auto* m = v.dev->rx_queue().memory().host_base();
    detail::dma_store<std::uint16_t>(m + virtio::kLayout.used_idx(), 7);
    v.nic->inject_rx(test::make_frame(60, test::kBroadcast));
    v.nic->step();
    EXPECT_EQ(v.nic->violation_count(), 1u);
    EXPECT_EQ(v.nic->used_idx(0), 1); // the device restored its own index
    v.nic->clear_violations();
}

TEST(EmuViolations, AvailIndexJump) {
    VirtioRig v;
    auto* m = v.dev->tx_queue().memory().host_base();
    detail::dma_store<std::uint16_t>(m + virtio::kLayout.avail_idx(), 300);
    v.nic->step();
    EXPECT_EQ(v.nic->violation_count(), 1u);
    EXPECT_FALSE(v.nic->queue_active(1));
    v.nic->clear_violations();
}

TEST(EmuViolations, InFlightDescriptorReused) {
    VirtioRig v;
    // Publish rx descriptor 0 a second time while the device still holds it.
    auto* m = v.dev->rx_queue().memory().host_base();
    detail::dma_store<std::uint16_t>(m + virtio::kLayout.avail_ring(0), 0);
    detail::dma_store<std::uint16_t>(m + virtio::kLayout.avail_idx(), 257);
    v.nic->inject_rx(test::make_frame(60, test::kBroadcast));
    v.nic->step();
    EXPECT_GE(v.nic->violation_count(), 1u);
    v.nic->clear_violations();
}

TEST(EmuViolations, ReadOnlyBufferNeverWritten) {
    VirtioRig v;
    auto* m = v.dev->rx_queue().memory().host_base();
    const std::uint16_t d = detail::dma_load<std::uint16_t>(m + virtio::kLayout.avail_ring(0));
    auto* desc = m + virtio::kLayout.desc + std::size_t{d} * 16;
    detail::dma_store<std::uint16_t>(desc + virtio::desc::kFlags, 0);
    const auto* buf = v.dev->rx_queue().shadow()[d];
    const std::byte before = buf->data()[0];
    v.nic->inject_rx(test::make_frame(60, test::kBroadcast));
    v.nic->step();
    EXPECT_EQ(v.nic->violation_count(), 1u);
    EXPECT_EQ(buf->data()[0], before);
    EXPECT_EQ(v.nic->used_idx(0), 0);
    v.nic->clear_violations();
}
