#include <gtest/gtest.h>

#include <sstream>

#include "support/properties.hpp"

using namespace saflo;

TEST(EventQueue, EmptyPopsNothing) {
    EventQueue<int> q;
    EXPECT_FALSE(q.pop().has_value());
}

TEST(EventQueue, EarlierTimeFirst) {
    EventQueue<int> q;
    q.push(5, EventPriority::SegmentArrival, 1);
    q.push(3, EventPriority::WorkloadArrival, 2);
    EXPECT_EQ(q.pop()->payload, 2);
    EXPECT_EQ(q.pop()->payload, 1);
}

TEST(EventQueue, PriorityBreaksTimeTies) {
    EventQueue<int> q;
    q.push(7, EventPriority::WorkloadArrival, 6);
    q.push(7, EventPriority::ManagerTick, 4);
    q.push(7, EventPriority::DetectorTick, 5);
    q.push(7, EventPriority::SchedulerCallback, 3);
    q.push(7, EventPriority::AckArrival, 1);
    q.push(7, EventPriority::SegmentArrival, 0);
    q.push(7, EventPriority::LossTimer, 2);
    for (int want = 0; want <= 6; ++want) EXPECT_EQ(q.pop()->payload, want);
}

TEST(EventQueue, InsertionOrderBreaksFullTies) {
    EventQueue<int> q;
    for (int i = 0; i < 10; ++i) q.push(1, EventPriority::AckArrival, i);
    for (int i = 0; i < 10; ++i) EXPECT_EQ(q.pop()->payload, i);
}

TEST(Link, SerializationPlusDelay) {
    Link l({PathId::Wifi, 0.005, 1e6, 0.0, 1500});
    Rng rng(1);
    const auto r = l.transmit(0, 1000, rng);
    EXPECT_EQ(r.departure, from_ms(1));
    EXPECT_EQ(r.arrival, from_ms(6));
    EXPECT_FALSE(r.lost);
}

TEST(Link, BackToBackSegmentsSerialize) {
    Link l({PathId::Wifi, 0.005, 1e6, 0.0, 1500});
    Rng rng(1);
    const auto a = l.transmit(0, 1000, rng);
    const auto b = l.transmit(0, 1000, rng);
    EXPECT_EQ(b.arrival - a.arrival, from_ms(1));
}

TEST(Link, ZeroLossNeverLoses) {
    Link l({PathId::Cellular, 0.03, 5e6, 0.0, 1500});
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) ASSERT_FALSE(l.transmit(0, 1500, rng).lost);
}

TEST(Link, OversizedSegmentRejected) {
    Link l(default_wifi_path());
    Rng rng(1);
    EXPECT_THROW(l.transmit(0, 1501, rng), std::invalid_argument);
}

TEST(PathModel, ValidationRejectsBadValues) {
    auto p = default_cellular_path();
    p.bandwidth = 0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = default_cellular_path();
    p.loss_rate = 1.0;
    EXPECT_THROW(p.validate(), ConfigError);
    p = default_cellular_path();
    p.mtu = 535;
    EXPECT_THROW(p.validate(), ConfigError);
    p = default_cellular_path();
    p.one_way_delay = -0.1;
    EXPECT_THROW(p.validate(), ConfigError);
}

namespace {
std::uint64_t ooo_for(std::initializer_list<int> order) {
    Reassembler r;
    std::uint64_t ooo = 0;
    for (int i : order) ooo += r.deliver(static_cast<std::uint64_t>(i) * 100, 100).out_of_order;
    return ooo;
}
}  // namespace

TEST(Reassembler, InOrderHasNoReordering) { EXPECT_EQ(ooo_for({0, 1, 2}), 0u); }
TEST(Reassembler, OneSwap) { EXPECT_EQ(ooo_for({0, 2, 1}), 1u); }
TEST(Reassembler, Reversed) { EXPECT_EQ(ooo_for({2, 1, 0}), 2u); }

TEST(Reassembler, ReleasesContiguousSuffix) {
    Reassembler r;
    EXPECT_EQ(r.deliver(200, 100).delivered, 0u);
    EXPECT_EQ(r.deliver(100, 100).delivered, 0u);
    EXPECT_EQ(r.deliver(0, 100).delivered, 300u);
    EXPECT_EQ(r.next_expected(), 300u);
}

TEST(Reassembler, DuplicatesAreNotDeliveredTwice) {
    Reassembler r;
    r.deliver(0, 100);
    const auto d = r.deliver(0, 100);
    EXPECT_TRUE(d.duplicate);
    EXPECT_EQ(d.delivered, 0u);
    r.deliver(200, 100);
    EXPECT_TRUE(r.deliver(200, 100).duplicate);
}

TEST(Reassembler, MatchesOracleOverAllPermutations) {
    const auto c = props::reassembly_permutations(8);
    EXPECT_TRUE(c.ok) << c.detail;
    EXPECT_GT(c.cases, 1400u);
}

namespace {

struct RunOut {
    PerfMetrics m;
    std::vector<TraceRow> trace;
    std::vector<ConnectionStats> stats;
};

RunOut run_sim(SchedulerKind kind, NetConfig net, std::uint64_t seed, std::uint64_t bytes, double horizon,
               bool saturate = false) {
    ControlMap cmap;
    DetectionMap dmap;
    net.trace = true;
    Simulator sim(net, kind, seed, &cmap, &dmap);
    const auto t = sim.open_connection();
    if (saturate)
        sim.saturate(t, 0, from_seconds(horizon));
    else
        sim.submit(t, 0, bytes);
    sim.run_until(from_seconds(horizon));
    RunOut o{sim.metrics(from_seconds(horizon)), sim.trace(), {}};
    for (auto tok : sim.tokens()) o.stats.push_back(sim.stats(tok));
    return o;
}

const SchedulerKind kAll[] = {SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd, SchedulerKind::SingleCell,
                              SchedulerKind::SingleWifi};

}  // namespace

TEST(Simulator, ConservationForCompletedConnections) {
    for (auto kind : kAll) {
        const auto o = run_sim(kind, NetConfig{}, 11, 5 * kMiB, 30.0);
        ASSERT_EQ(o.stats.size(), 1u);
        const auto& st = o.stats[0];
        ASSERT_TRUE(st.completed_at.has_value()) << to_string(kind);
        EXPECT_EQ(st.delivered, st.submitted) << to_string(kind);
        EXPECT_EQ(st.submitted, 5 * kMiB);
    }
}

TEST(Simulator, ZeroLossMeansNoRetransmissions) {
    NetConfig net;
    net.cellular.loss_rate = 0;
    net.wifi.loss_rate = 0;
    for (auto kind : kAll) EXPECT_EQ(run_sim(kind, net, 2, 4 * kMiB, 20.0).m.retransmissions, 0u) << to_string(kind);
}

TEST(Simulator, CausalityAndMtu) {
    const auto o = run_sim(SchedulerKind::Rd, NetConfig{}, 4, 3 * kMiB, 20.0);
    std::map<std::tuple<PathId, std::uint64_t>, SimTime> sent;
    for (const auto& r : o.trace) {
        ASSERT_LE(r.len, 1500u);
        if (r.event == TraceEvent::Send) sent[{r.path, r.seq}] = r.time;
        if (r.event == TraceEvent::Arrive) {
            const auto it = sent.find({r.path, r.seq});
            ASSERT_NE(it, sent.end());
            ASSERT_GT(r.time, it->second);
        }
    }
}

TEST(Simulator, ThroughputAndCompletionBounds) {
    const NetConfig net;
    const double cap = net.cellular.bandwidth + net.wifi.bandwidth;
    for (auto kind : kAll) {
        const auto sat = run_sim(kind, net, 5, 0, 10.0, true);
        EXPECT_LE(sat.m.throughput, cap) << to_string(kind);
        const auto web = run_sim(kind, net, 6, kWebPageBytes, 60.0);
        ASSERT_GT(web.m.completion_time, 0.0);
        EXPECT_GE(web.m.completion_time, static_cast<double>(kWebPageBytes) / cap) << to_string(kind);
    }
}

TEST(Simulator, SinglePathSchedulersStayOnTheirPath) {
    const auto cell = run_sim(SchedulerKind::SingleCell, NetConfig{}, 1, 2 * kMiB, 20.0);
    const auto wifi = run_sim(SchedulerKind::SingleWifi, NetConfig{}, 1, 2 * kMiB, 20.0);
    EXPECT_EQ(cell.stats[0].sent_bytes[1], 0u);
    EXPECT_EQ(wifi.stats[0].sent_bytes[0], 0u);
}

TEST(Simulator, DeterministicEventByEvent) {
    for (auto kind : kAll) {
        const auto a = run_sim(kind, NetConfig{}, 77, 3 * kMiB, 10.0);
        const auto b = run_sim(kind, NetConfig{}, 77, 3 * kMiB, 10.0);
        std::ostringstream sa, sb;
        write_trace_csv(sa, a.trace);
        write_trace_csv(sb, b.trace);
        EXPECT_EQ(sa.str(), sb.str()) << to_string(kind);
        EXPECT_EQ(a.m.out_of_order, b.m.out_of_order);
        EXPECT_EQ(a.m.throughput, b.m.throughput);
    }
}

TEST(Simulator, StepOnIdleSimulatorReturnsNothing) {
    Simulator sim(NetConfig{}, SchedulerKind::Blest, 1);
    EXPECT_FALSE(sim.step().has_value());
}

TEST(Simulator, SafloNeedsMaps) {
    EXPECT_THROW(Simulator(NetConfig{}, SchedulerKind::Saflo, 1), ConfigError);
}

TEST(Simulator, RetransmissionsGoToShortestLinger) {
    std::vector<SchedSubflow> sfs(2);
    sfs[0].ctx = {{1, 0, 0}, 64 * kKiB, 1e7, PathId::Wifi};
    sfs[1].ctx = {{1, 1, 1}, 0, 1e6, PathId::Cellular};
    sfs[0].free_cwnd = 1500;
    sfs[1].free_cwnd = 64 * kKiB;
    ControlMap cmap;
    EXPECT_EQ(select_retransmit(SchedulerKind::Blest, sfs, 1448, nullptr), 1u);
    EXPECT_EQ(select_retransmit(SchedulerKind::Saflo, sfs, 1448, &cmap), 1u);
    EXPECT_EQ(select_retransmit(SchedulerKind::SingleWifi, sfs, 1448, nullptr), 0u);
}

TEST(Simulator, UnsafeCellularNeverCarriesRetransmissions) {
    std::vector<SchedSubflow> sfs(2);
    sfs[0].ctx = {{1, 0, 0}, 64 * kKiB, 1e7, PathId::Wifi};
    sfs[1].ctx = {{1, 1, 1}, 0, 1e6, PathId::Cellular};
    sfs[0].free_cwnd = 1500;
    sfs[1].free_cwnd = 64 * kKiB;
    ControlMap cmap;
    cmap.update({1, 1, 1}, {0.0, 0, 1e6, true, false});
    EXPECT_EQ(select_retransmit(SchedulerKind::Saflo, sfs, 1448, &cmap), 0u);
    // A randomly disabled but safe subflow stays eligible.
    cmap.update({1, 1, 1}, {0.0, 0, 1e6, false, true});
    EXPECT_EQ(select_retransmit(SchedulerKind::Saflo, sfs, 1448, &cmap), 1u);
}

TEST(Simulator, LossyRunsRetransmitAndStillComplete) {
    NetConfig net;
    net.cellular.loss_rate = 0.02;
    net.wifi.loss_rate = 0.02;
    const auto o = run_sim(SchedulerKind::Blest, net, 9, 2 * kMiB, 60.0);
    EXPECT_GT(o.m.retransmissions, 0u);
    EXPECT_EQ(o.stats[0].delivered, 2 * kMiB);
}

TEST(TraceCsv, Header) {
    std::ostringstream os;
    const std::vector<TraceRow> rows{{5, 1, PathId::Cellular, 0, 1448, TraceEvent::Depart}};
    write_trace_csv(os, rows);
    EXPECT_EQ(os.str(), "time_ns,token,path,seq,len,event\n5,1,cellular,0,1448,depart\n");
}
