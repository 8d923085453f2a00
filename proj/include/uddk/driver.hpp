#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "uddk/dma.hpp"
#include "uddk/mempool.hpp"

namespace uddk {

struct DeviceStats {
    std::uint64_t rx_packets = 0;
    std::uint64_t tx_packets = 0;
    std::uint64_t rx_bytes = 0;
    std::uint64_t tx_bytes = 0;

    friend bool operator==(const DeviceStats&, const DeviceStats&) = default;
};

/// Driver interface shared by every NIC driver. Buffers handed to tx_batch are
/// owned by the driver once accepted; the caller keeps the ones beyond the
/// returned count. Buffers returned by rx_batch belong to the caller.
class NetDevice {
public:
    virtual ~NetDevice() = default;

    virtual std::string driver_name() const = 0;
    virtual const std::string& address() const noexcept = 0;
    virtual std::uint16_t num_rx_queues() const noexcept = 0;
    virtual std::uint16_t num_tx_queues() const noexcept = 0;
    /// Allocator whose memory this device can reach; pools for tx_batch come from here.
    virtual std::shared_ptr<DmaAllocator> dma_allocator() const = 0;

    virtual std::size_t rx_batch(std::uint16_t queue, std::span<PacketBuffer*> out) = 0;
    virtual std::size_t tx_batch(std::uint16_t queue, std::span<PacketBuffer* const> bufs) = 0;

    /// Adds the counts accumulated since the previous call into `stats`.
    virtual void read_stats(DeviceStats& stats) = 0;
    virtual void set_promisc(bool on) = 0;
    /// Link speed in Mbit/s, 0 when the link is down.
    virtual std::uint32_t get_link_speed() = 0;

    /// Reclaims every transmitted buffer regardless of cleanup batching.
    /// Returns the number of buffers still owned by the device afterwards.
    virtual std::size_t drain_tx(std::uint16_t queue) = 0;

    /// Stops all queues and returns every buffer held by the device to its pool.
    /// Devices that hold buffers from each other's pools must all be shut down
    /// before any of them is destroyed.
    virtual void shutdown() = 0;
};

} // namespace uddk
