#pragma once

#include <atomic>
#include <csignal>
#include <memory>
#include <string>

#include "uddk/device.hpp"
#include "uddk/emu/testbed.hpp"

namespace uddk::tools {

inline std::atomic<bool> g_stop{false};

inline void install_signal_handlers() {
    struct sigaction sa {};
    sa.sa_handler = [](int) { g_stop.store(true); };
    sigemptyset(&sa.sa_mask);
    ::sigaction(SIGINT, &sa, nullptr);
    ::sigaction(SIGTERM, &sa, nullptr);
}

/// Creates the emulated device behind an "emu:<name>" address on first use.
/// Names starting with "virtio" get a virtio device, anything else an ixgbe.
inline std::shared_ptr<emu::EmuDevice> ensure_emulated(emu::Testbed& tb, const DeviceAddress& addr) {
    for (auto& d : tb.devices())
        if (d->name() == addr.emu_name())
            return d;
    if (addr.emu_name().starts_with("virtio"))
        return tb.add_virtio(addr.emu_name());
    return tb.add_ixgbe(addr.emu_name());
}

} // namespace uddk::tools
