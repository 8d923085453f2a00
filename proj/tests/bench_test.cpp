#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"
#include "uddk/bench.hpp"

using namespace uddk;
using namespace std::chrono_literals;

namespace {

bench::BenchOptions quick(std::uint64_t packets = 64 * 1024) {
    bench::BenchOptions o;
    o.max_packets = packets;
    o.duration = 60s;
    return o;
}

} // namespace

TEST(Bench, TailWritesFollowBatchSize) {
    const std::array<std::uint32_t, 5> sizes{1, 2, 8, 32, 64};
    const auto res = bench::sweep_batch(sizes, quick());
    ASSERT_EQ(res.size(), sizes.size());
    for (std::size_t i = 0; i < res.size(); ++i) {
        // One RDT write on the input and one TDT write on the output per full batch.
        const double want = 2.0 / sizes[i];
        EXPECT_NEAR(res[i].tail_writes_per_pkt, want, want * 0.01) << "batch " << sizes[i];
        EXPECT_EQ(res[i].violations, 0u);
        EXPECT_TRUE(res[i].leak_free);
        if (i) {
            EXPECT_LT(res[i].tail_writes_per_pkt, res[i - 1].tail_writes_per_pkt);
        }
    }
    EXPECT_DOUBLE_EQ(res[0].tail_writes_per_pkt, 2.0);
}

TEST(Bench, InFlightBoundedByRing) {
    const std::array<std::uint32_t, 2> sizes{64, 4096};
    const auto res = bench::sweep_ring(sizes, quick());
    EXPECT_LE(res[0].max_in_flight, 63u);
    EXPECT_LE(res[1].max_in_flight, 4095u);
    EXPECT_GT(res[1].max_in_flight, 63u);
    for (auto& r : res) {
        EXPECT_EQ(r.violations, 0u);
        EXPECT_TRUE(r.leak_free);
        EXPECT_GE(r.packets, 64u * 1024);
    }
}

TEST(Bench, RejectsInvalidSizes) {
    const std::array<std::uint32_t, 1> b0{0}, b257{257}, r100{100}, r8192{8192};
    EXPECT_THROW(bench::sweep_batch(b0, quick()), Error);
    EXPECT_THROW(bench::sweep_batch(b257, quick()), Error);
    EXPECT_THROW(bench::sweep_ring(r100, quick()), Error);
    EXPECT_THROW(bench::sweep_ring(r8192, quick()), Error);
}

TEST(Bench, CsvParses) {
    std::vector<bench::SweepResult> rs(2);
    rs[0] = {"batch", 8, 1000, 0.5, 0.25, 0.002};
    rs[1] = {"ring", 64, 20, 1.25, 2.0, 0.000016};
    std::ostringstream os;
    bench::write_csv(os, rs);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "param,value,packets,seconds,tail_writes_per_pkt,mpps");
    for (const auto& want : rs) {
        ASSERT_TRUE(std::getline(is, line));
        std::vector<std::string> cols;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');)
            cols.push_back(c);
        ASSERT_EQ(cols.size(), 6u);
        EXPECT_EQ(cols[0], want.param);
        EXPECT_EQ(std::stoul(cols[1]), want.value);
        EXPECT_EQ(std::stoull(cols[2]), want.packets);
        EXPECT_NEAR(std::stod(cols[3]), want.seconds, 1e-6);
        EXPECT_NEAR(std::stod(cols[4]), want.tail_writes_per_pkt, 1e-6);
        EXPECT_NEAR(std::stod(cols[5]), want.mpps, 1e-6);
    }
    EXPECT_FALSE(std::getline(is, line));
}
