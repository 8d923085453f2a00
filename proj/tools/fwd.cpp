// Bidirectional forwarder between two devices (or one device back to itself).

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "tool_common.hpp"
#include "uddk/apps.hpp"

using namespace uddk;

int main(int argc, char** argv) {
    CLI::App app{"Forward frames between two devices, touching one byte per frame"};
    std::string dev_a, dev_b;
    std::uint32_t batch = apps::kDefaultBatch;
    std::uint32_t ring = ixgbe::kDefaultRingSize;
    double duration = 0;
    app.add_option("devA", dev_a, "First device")->required();
    app.add_option("devB", dev_b, "Second device (may equal the first)")->required();
    app.add_option("--batch", batch, "Packets per rx/tx batch")->capture_default_str()->check(CLI::Range(1u, 4096u));
    app.add_option("--ring", ring, "Descriptor ring size (ixgbe)")
        ->capture_default_str()
        ->check([](const std::string& s) {
            const auto v = std::stoul(s);
            return ixgbe::valid_ring_size(static_cast<std::uint32_t>(v)) ? std::string{}
                                                                          : "must be a power of two in [64, 4096]";
        });
    app.add_option("--duration", duration, "Stop after this many seconds (0: run until signalled)");
    CLI11_PARSE(app, argc, argv);

    tools::install_signal_handlers();
    try {
        const auto addr_a = DeviceAddress::parse(dev_a);
        const auto addr_b = DeviceAddress::parse(dev_b);
        std::unique_ptr<emu::Testbed> tb;
        std::vector<std::shared_ptr<emu::EmuDevice>> sources;
        if (addr_a.is_emulated() || addr_b.is_emulated()) {
            tb = std::make_unique<emu::Testbed>();
            for (const auto* a : {&addr_a, &addr_b})
                if (a->is_emulated())
                    sources.push_back(tools::ensure_emulated(*tb, *a));
        }
        DeviceOptions opt;
        opt.ixgbe.ring_size = ring;
        auto a = open_device(addr_a, opt);
        std::unique_ptr<NetDevice> b;
        if (addr_b.str() != addr_a.str())
            b = open_device(addr_b, opt);
        NetDevice& out = b ? *b : *a;

        apps::RunControl rc;
        rc.stop = &tools::g_stop;
        rc.max_duration = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(duration));
        rc.on_stats_line = [](const std::string& l) { std::printf("%s\n", l.c_str()), std::fflush(stdout); };
        if (tb) {
            // Emulated ports get a steady stream of template frames to forward.
            const auto frame = apps::packet_template(apps::kMinPacketSize);
            rc.poll_hook = [&, frame] {
                for (auto& s : sources)
                    while (s->pending_rx() < 2 * std::size_t{ring})
                        s->inject_rx(frame);
                tb->step_all();
            };
        }
        const auto res = apps::fwd(*a, out, apps::FwdOptions{batch}, rc);
        std::printf("forwarded %llu packets, dropped %llu, in %.3f s\n",
                    static_cast<unsigned long long>(res.forwarded()), static_cast<unsigned long long>(res.dropped()),
                    res.seconds);
        out.shutdown();
        a->shutdown();
    } catch (const Error& e) {
        std::fprintf(stderr, "uddk-fwd: %s\n", e.what());
        return 1;
    }
    return 0;
}
