#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uddk {

enum class Errc {
    invalid_argument,
    alloc_failed,           // OS refused the memory (no huge pages, no permission, mlock failed)
    contiguity_unavailable, // request larger than the backend's largest contiguous unit
    address_not_dma,
    parse_error,
    device_not_found,
    permission_denied,
    bar_not_mmio,
    bar_not_io,
    out_of_range,
    misaligned,
    timeout,
    pool_exhausted,
    protocol_error,
    feature_missing,
    queue_size_mismatch,
    status_mismatch,
    command_rejected,
    unsupported_device,
    io_error,
};

constexpr std::string_view to_string(Errc e) {
    switch (e) {
    case Errc::invalid_argument: return "invalid argument";
    case Errc::alloc_failed: return "allocation failed";
    case Errc::contiguity_unavailable: return "contiguous allocation unavailable";
    case Errc::address_not_dma: return "address not in a DMA region";
    case Errc::parse_error: return "parse error";
    case Errc::device_not_found: return "device not found";
    case Errc::permission_denied: return "permission denied";
    case Errc::bar_not_mmio: return "BAR is not memory-mapped";
    case Errc::bar_not_io: return "BAR is not an IO port resource";
    case Errc::out_of_range: return "out of range";
    case Errc::misaligned: return "misaligned access";
    case Errc::timeout: return "timeout";
    case Errc::pool_exhausted: return "memory pool exhausted";
    case Errc::protocol_error: return "protocol error";
    case Errc::feature_missing: return "required feature missing";
    case Errc::queue_size_mismatch: return "queue size mismatch";
    case Errc::status_mismatch: return "status mismatch";
    case Errc::command_rejected: return "command rejected";
    case Errc::unsupported_device: return "unsupported device";
    case Errc::io_error: return "I/O error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
    throw Error(code, what);
}

} // namespace uddk
