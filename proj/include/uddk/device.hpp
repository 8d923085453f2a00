#pragma once

#include <cstdio>
#include <memory>
#include <string>

#include "uddk/devreg.hpp"
#include "uddk/driver.hpp"
#include "uddk/error.hpp"
#include "uddk/ixgbe.hpp"
#include "uddk/virtio.hpp"

namespace uddk {

struct DeviceOptions {
    IxgbeConfig ixgbe;
    VirtioConfig virtio;
};

/// Picks the driver from the vendor and device identifiers in config space.
inline std::unique_ptr<NetDevice> open_device(std::shared_ptr<PciFunction> fn, const DeviceOptions& opt = {}) {
    const std::uint16_t vendor = fn->config_read16(pci::kVendorId);
    const std::uint16_t device = fn->config_read16(pci::kDeviceId);
    if (ixgbe::is_supported_device(vendor, device))
        return IxgbeDevice::init(std::move(fn), opt.ixgbe);
    if (vendor == virtio::kVendorId && device == virtio::kLegacyNetDeviceId)
        return VirtioDevice::init(std::move(fn), opt.virtio);
    char ids[16];
    std::snprintf(ids, sizeof ids, "%04x:%04x", vendor, device);
    fail(Errc::unsupported_device, fn->address().str() + " has unsupported id " + ids);
}

inline std::unique_ptr<NetDevice> open_device(const DeviceAddress& addr, const DeviceOptions& opt = {},
                                              DeviceRegistry& reg = DeviceRegistry::global()) {
    return open_device(reg.open(addr), opt);
}

} // namespace uddk
