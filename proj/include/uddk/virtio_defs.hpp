#pragma once

// VirtIO legacy (pre-1.0) PCI transport and virtio-net constants. Shared by the
// driver and the emulated device.

#include <cstddef>
#include <cstdint>

#include "uddk/dma.hpp"

namespace uddk::virtio {

inline constexpr std::uint16_t kVendorId = 0x1AF4;
inline constexpr std::uint16_t kLegacyNetDeviceId = 0x1000;
inline constexpr std::size_t kSubsystemId = 0x2E;
inline constexpr std::uint16_t kSubsystemNet = 1;

/// Legacy IO port register map (offsets within the port BAR).
namespace port {
inline constexpr std::size_t DEVICE_FEATURES = 0x00; // 32 bit
inline constexpr std::size_t DRIVER_FEATURES = 0x04; // 32 bit
inline constexpr std::size_t QUEUE_PFN = 0x08;       // 32 bit
inline constexpr std::size_t QUEUE_SIZE = 0x0C;      // 16 bit
inline constexpr std::size_t QUEUE_SELECT = 0x0E;    // 16 bit
inline constexpr std::size_t QUEUE_NOTIFY = 0x10;    // 16 bit
inline constexpr std::size_t DEVICE_STATUS = 0x12;   // 8 bit
inline constexpr std::size_t ISR = 0x13;             // 8 bit
inline constexpr std::size_t MAC = 0x14;             // 6 x 8 bit
inline constexpr std::size_t kBarSize = 0x20;
} // namespace port

namespace status {
inline constexpr std::uint8_t ACKNOWLEDGE = 1;
inline constexpr std::uint8_t DRIVER = 2;
inline constexpr std::uint8_t DRIVER_OK = 4;
inline constexpr std::uint8_t FAILED = 128;
} // namespace status

namespace feature {
inline constexpr std::uint32_t CSUM = 1u << 0;
inline constexpr std::uint32_t GUEST_CSUM = 1u << 1;
inline constexpr std::uint32_t MAC = 1u << 5;
inline constexpr std::uint32_t GUEST_TSO4 = 1u << 7;
inline constexpr std::uint32_t HOST_TSO4 = 1u << 11;
inline constexpr std::uint32_t MRG_RXBUF = 1u << 15;
inline constexpr std::uint32_t STATUS = 1u << 16;
inline constexpr std::uint32_t CTRL_VQ = 1u << 17;
inline constexpr std::uint32_t CTRL_RX = 1u << 18;
inline constexpr std::uint32_t ANY_LAYOUT = 1u << 27;
} // namespace feature

inline constexpr std::uint16_t kRxQueue = 0;
inline constexpr std::uint16_t kTxQueue = 1;
inline constexpr std::uint16_t kCtrlQueue = 2;
inline constexpr std::uint16_t kQueueSize = 256;
inline constexpr std::size_t kQueueAlign = 4096;

/// Descriptor: addr u64 @0, len u32 @8, flags u16 @12, next u16 @14.
namespace desc {
inline constexpr std::size_t kSize = 16;
inline constexpr std::size_t kAddr = 0;
inline constexpr std::size_t kLen = 8;
inline constexpr std::size_t kFlags = 12;
inline constexpr std::size_t kNext = 14;
inline constexpr std::uint16_t F_NEXT = 1;
inline constexpr std::uint16_t F_WRITE = 2;
} // namespace desc

inline constexpr std::uint16_t AVAIL_F_NO_INTERRUPT = 1;

/// Split-ring layout of one legacy virtqueue inside its DMA allocation.
struct RingLayout {
    std::size_t desc = 0;
    std::size_t avail = 0; // flags u16, idx u16, ring[n] u16, used_event u16
    std::size_t used = 0;  // flags u16, idx u16, ring[n] {id u32, len u32}, avail_event u16
    std::size_t total = 0;

    static constexpr RingLayout for_size(std::size_t n) {
        RingLayout l;
        l.desc = 0;
        l.avail = n * desc::kSize;
        l.used = align_up(l.avail + 2 * (3 + n), kQueueAlign);
        l.total = align_up(l.used + 2 * 3 + 8 * n, kQueueAlign);
        return l;
    }

    std::size_t avail_idx() const { return avail + 2; }
    std::size_t avail_ring(std::size_t slot) const { return avail + 4 + 2 * slot; }
    std::size_t used_idx() const { return used + 2; }
    std::size_t used_ring(std::size_t slot) const { return used + 4 + 8 * slot; }
};

inline constexpr RingLayout kLayout = RingLayout::for_size(kQueueSize);
static_assert(kLayout.avail == 4096 && kLayout.used == 8192 && kLayout.total == 12288);

/// virtio_net_hdr without mergeable receive buffers; all fields zero (no offloads).
inline constexpr std::size_t kNetHdrSize = 10;

/// Control queue command: class, command, one payload byte, one ack byte.
namespace ctrl {
inline constexpr std::uint8_t CLASS_RX = 0;
inline constexpr std::uint8_t CMD_RX_PROMISC = 0;
inline constexpr std::uint8_t CMD_RX_ALLMULTI = 1;
inline constexpr std::uint8_t ACK_OK = 0;
inline constexpr std::uint8_t ACK_ERR = 1;
inline constexpr std::size_t kCommandSize = 4;
} // namespace ctrl

} // namespace uddk::virtio
