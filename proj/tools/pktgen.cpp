// Packet generator: transmits template UDP frames with sequence numbers.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "tool_common.hpp"
#include "uddk/apps.hpp"

using namespace uddk;

int main(int argc, char** argv) {
    CLI::App app{"Transmit UDP frames carrying sequence numbers"};
    std::string device;
    std::uint32_t batch = apps::kDefaultBatch;
    std::size_t size = apps::kMinPacketSize;
    double duration = 0;
    std::uint64_t count = 0;
    app.add_option("device", device, "PCI address (DDDD:BB:DD.F) or emu:<name>")->required();
    app.add_option("--batch", batch, "Packets per tx_batch call")->capture_default_str()->check(CLI::Range(1u, 4096u));
    app.add_option("--size", size, "Frame size in bytes without CRC")
        ->capture_default_str()
        ->check(CLI::Range(std::size_t{60}, std::size_t{Mempool::kDefaultEntrySize - PacketBuffer::kDataOffset}));
    app.add_option("--duration", duration, "Stop after this many seconds (0: run until signalled)");
    app.add_option("--count", count, "Stop after this many packets (0: unlimited)");
    CLI11_PARSE(app, argc, argv);

    tools::install_signal_handlers();
    try {
        const auto addr = DeviceAddress::parse(device);
        std::unique_ptr<emu::Testbed> tb;
        if (addr.is_emulated()) {
            tb = std::make_unique<emu::Testbed>();
            tools::ensure_emulated(*tb, addr);
        }
        auto dev = open_device(addr);

        apps::RunControl rc;
        rc.stop = &tools::g_stop;
        rc.max_packets = count;
        rc.max_duration = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(duration));
        rc.on_stats_line = [](const std::string& l) { std::printf("%s\n", l.c_str()), std::fflush(stdout); };
        if (tb)
            rc.poll_hook = [&] { tb->step_all(); };

        apps::PktgenOptions opt;
        opt.batch = batch;
        opt.size = size;
        const auto res = apps::pktgen(*dev, opt, rc);
        std::printf("sent %llu packets in %.3f s\n", static_cast<unsigned long long>(res.sent), res.seconds);
        dev->shutdown();
    } catch (const Error& e) {
        std::fprintf(stderr, "uddk-pktgen: %s\n", e.what());
        return 1;
    }
    return 0;
}
