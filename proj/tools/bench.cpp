// Batch-size and ring-size sweeps over emulated devices, written as CSV.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "uddk/bench.hpp"

using namespace uddk;

int main(int argc, char** argv) {
    CLI::App app{"Forwarding sweeps against emulated ixgbe devices"};
    std::string mode;
    std::string out_path;
    double duration = 2;
    std::uint64_t packets = 0;
    std::vector<std::uint32_t> values;
    app.add_option("mode", mode, "batch or ring")->required()->check(CLI::IsMember({"batch", "ring"}));
    app.add_option("--out", out_path, "CSV output file (default: stdout)");
    app.add_option("--duration", duration, "Seconds per sweep point")->capture_default_str();
    app.add_option("--packets", packets, "Stop each point after this many packets (0: duration only)");
    app.add_option("--values", values, "Sweep points (default: powers of two over the full range)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    bench::BenchOptions opt;
    opt.duration = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::duration<double>(duration));
    opt.max_packets = packets;
    if (values.empty()) {
        if (mode == "batch")
            values = {1, 2, 4, 8, 16, 32, 64, 128, 256};
        else
            values = {64, 128, 256, 512, 1024, 2048, 4096};
    }
    try {
        const auto results = mode == "batch" ? bench::sweep_batch(values, opt) : bench::sweep_ring(values, opt);
        if (out_path.empty()) {
            bench::write_csv(std::cout, results);
        } else {
            std::ofstream os(out_path);
            if (!os) {
                std::fprintf(stderr, "uddk-bench: cannot open %s\n", out_path.c_str());
                return 1;
            }
            bench::write_csv(os, results);
        }
        for (const auto& r : results)
            std::fprintf(stderr, "%s=%u: max in-flight %u, violations %zu, %s\n", r.param.c_str(), r.value,
                         r.max_in_flight, r.violations, r.leak_free ? "no leaks" : "LEAK");
    } catch (const Error& e) {
        std::fprintf(stderr, "uddk-bench: %s\n", e.what());
        return 1;
    }
    return 0;
}
