#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uddk/emu/testbed.hpp"
#include "uddk/uddk.hpp"

namespace uddk::test {

inline std::vector<std::byte> bytes_of(std::initializer_list<int> v) {
    std::vector<std::byte> out;
    for (int b : v)
        out.push_back(std::byte(b));
    return out;
}

/// Frame of `size` bytes addressed to `dst` with a recognisable payload.
inline emu::Frame make_frame(std::size_t size, std::array<std::uint8_t, 6> dst, std::uint32_t tag = 0) {
    emu::Frame f(size);
    for (int i = 0; i < 6; ++i)
        f[i] = std::byte(dst[i]);
    for (std::size_t i = 6; i < size; ++i)
        f[i] = std::byte((i * 7 + tag) & 0xFF);
    if (size >= 16) {
        f[12] = std::byte(0x08);
        f[13] = std::byte(0x00);
        std::memcpy(f.data() + size - 4, &tag, 4);
    }
    return f;
}

inline constexpr std::array<std::uint8_t, 6> kBroadcast{0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF};
inline constexpr std::array<std::uint8_t, 6> kForeignMac{0x02, 0xAA, 0xBB, 0xCC, 0xDD, 0xEE};

inline IxgbeConfig fast_ixgbe(std::uint32_t ring = ixgbe::kDefaultRingSize) {
    IxgbeConfig c;
    c.ring_size = ring;
    c.reset_settle = std::chrono::nanoseconds(0);
    return c;
}

/// Emulated ixgbe plus its driver, on a private registry.
struct IxgbeRig {
    DeviceRegistry reg;
    emu::Testbed tb{reg};
    std::shared_ptr<emu::EmuIxgbe> nic;
    std::unique_ptr<IxgbeDevice> dev;

    explicit IxgbeRig(IxgbeConfig cfg = fast_ixgbe(), std::string name = "ix0") {
        nic = tb.add_ixgbe(name);
        dev = IxgbeDevice::init(nic, cfg);
    }
    ~IxgbeRig() {
        if (dev)
            dev->shutdown();
    }
};

struct VirtioRig {
    DeviceRegistry reg;
    emu::Testbed tb{reg};
    std::shared_ptr<emu::EmuVirtio> nic;
    std::unique_ptr<VirtioDevice> dev;

    explicit VirtioRig(VirtioConfig cfg = {}, std::string name = "vio0") {
        nic = tb.add_virtio(name);
        nic->set_auto_step(true); // control commands complete without a separate device clock
        dev = VirtioDevice::init(nic, cfg);
        nic->set_auto_step(false);
    }
    ~VirtioRig() {
        if (dev)
            dev->shutdown();
    }
};

/// Buffers from a device-reachable pool, each holding a copy of `frame`.
inline std::vector<PacketBuffer*> fill(Mempool& pool, std::size_t n, const emu::Frame& frame) {
    std::vector<PacketBuffer*> out(n);
    out.resize(pool.alloc_batch(out));
    for (auto* b : out) {
        std::memcpy(b->data(), frame.data(), frame.size());
        b->size = static_cast<std::uint32_t>(frame.size());
    }
    return out;
}

inline void free_all(std::span<PacketBuffer* const> bufs) {
    for (auto* b : bufs)
        buf_free(b);
}

/// Tag stamped by make_frame into the last four bytes.
inline std::uint32_t read_tag(const PacketBuffer* b) {
    std::uint32_t t;
    std::memcpy(&t, b->data() + b->size - 4, 4);
    return t;
}

inline std::uint32_t read_tag(std::span<const std::byte> f) {
    std::uint32_t t;
    std::memcpy(&t, f.data() + f.size() - 4, 4);
    return t;
}

inline bool same_bytes(std::span<const std::byte> a, std::span<const std::byte> b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

} // namespace uddk::test
