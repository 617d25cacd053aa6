#include <gtest/gtest.h>

#include "support/properties.hpp"

using namespace saflo;

namespace {

SchedSubflow sf(Token t, std::uint8_t lid, std::uint8_t rid, std::uint64_t wmem, double pace, std::uint64_t free_cwnd,
                PathId path) {
    SchedSubflow s;
    s.ctx = {{t, lid, rid}, wmem, pace, path};
    s.free_cwnd = free_cwnd;
    return s;
}

// linger 2.0 s on WiFi, 0.5 s on cellular.
std::vector<SchedSubflow> two_paths(Token t = 1) {
    return {sf(t, 0, 0, 2000, 1000.0, 64 * kKiB, PathId::Wifi), sf(t, 1, 1, 500, 1000.0, 64 * kKiB, PathId::Cellular)};
}

SchedConnection conn(Token t = 1, std::uint64_t backlog = 10'000) { return {t, backlog, 1448, 64 * kKiB}; }

}  // namespace

TEST(SafloSelect, PicksShortestLinger) {
    ControlMap cmap;
    DetectionMap dmap;
    const auto d = saflo_select(two_paths(), conn(), cmap, dmap, 0);
    ASSERT_FALSE(d.none());
    EXPECT_EQ(*d.index, 1u);
    EXPECT_EQ(d.selected, (SubflowKey{1, 1, 1}));
}

TEST(SafloSelect, DisabledFastestIsSkipped) {
    ControlMap cmap;
    DetectionMap dmap;
    cmap.update({1, 1, 1}, {0.5, 500, 1000.0, false, true});
    const auto d = saflo_select(two_paths(), conn(), cmap, dmap, 0);
    ASSERT_FALSE(d.none());
    EXPECT_EQ(*d.index, 0u);
}

TEST(SafloSelect, UnsafeFastestIsSkipped) {
    ControlMap cmap;
    DetectionMap dmap;
    cmap.update({1, 1, 1}, {0.5, 500, 1000.0, true, false});
    EXPECT_EQ(*saflo_select(two_paths(), conn(), cmap, dmap, 0).index, 0u);
}

TEST(SafloSelect, FreshCallCreatesEntriesAndOneRecord) {
    ControlMap cmap;
    DetectionMap dmap;
    const auto d = saflo_select(two_paths(), conn(), cmap, dmap, 1234);
    EXPECT_EQ(cmap.size(), 2u);
    for (const SubflowKey k : {SubflowKey{1, 0, 0}, SubflowKey{1, 1, 1}}) {
        const auto e = cmap.lookup(k);
        ASSERT_TRUE(e.has_value());
        EXPECT_TRUE(e->enabled);
        EXPECT_TRUE(e->safe);
    }
    EXPECT_DOUBLE_EQ(cmap.lookup({1, 0, 0})->linger_time, 2.0);
    EXPECT_DOUBLE_EQ(cmap.lookup({1, 1, 1})->linger_time, 0.5);
    EXPECT_EQ(cmap.lookup({1, 1, 1})->queued_memory, 500u);
    EXPECT_DOUBLE_EQ(cmap.lookup({1, 1, 1})->pacing_rate, 1000.0);
    const auto recs = dmap.drain();
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0], (DetectionRecord{1234, 1, d.burst}));
}

TEST(SafloSelect, AllDisabledFallsBackToPrimary) {
    ControlMap cmap;
    DetectionMap dmap;
    cmap.update({1, 0, 0}, {0, 0, 1, false, true});
    cmap.update({1, 1, 1}, {0, 0, 1, false, true});
    const auto d = saflo_select(two_paths(), conn(), cmap, dmap, 0);
    ASSERT_FALSE(d.none());
    EXPECT_EQ(d.selected, (SubflowKey{1, 0, 0}));
}

TEST(SafloSelect, EnabledButFullSubflowDoesNotTriggerFallback) {
    ControlMap cmap;
    DetectionMap dmap;
    auto sfs = two_paths();
    sfs[1].free_cwnd = 0;
    cmap.update({1, 0, 0}, {0, 0, 1, false, true});
    EXPECT_TRUE(saflo_select(sfs, conn(), cmap, dmap, 0).none());
    EXPECT_TRUE(dmap.drain().empty());
    EXPECT_EQ(cmap.size(), 2u);
}

TEST(SafloSelect, TiesGoToLowestKey) {
    ControlMap cmap;
    DetectionMap dmap;
    // Same linger, listed highest key first.
    std::vector<SchedSubflow> sfs{sf(1, 1, 1, 100, 100.0, 64 * kKiB, PathId::Cellular),
                                  sf(1, 0, 0, 300, 300.0, 64 * kKiB, PathId::Wifi)};
    EXPECT_EQ(saflo_select(sfs, conn(), cmap, dmap, 0).selected, (SubflowKey{1, 0, 0}));
}

TEST(SafloSelect, IdleSubflowsTieAtZero) {
    ControlMap cmap;
    DetectionMap dmap;
    std::vector<SchedSubflow> sfs{sf(1, 1, 1, 0, 1e6, 64 * kKiB, PathId::Cellular),
                                  sf(1, 0, 0, 0, 1e7, 64 * kKiB, PathId::Wifi)};
    EXPECT_EQ(saflo_select(sfs, conn(), cmap, dmap, 0).selected, (SubflowKey{1, 0, 0}));
}

TEST(SafloSelect, EmptyBacklogTouchesNothing) {
    ControlMap cmap;
    DetectionMap dmap;
    EXPECT_TRUE(saflo_select(two_paths(), conn(1, 0), cmap, dmap, 0).none());
    EXPECT_EQ(cmap.size(), 0u);
    EXPECT_TRUE(dmap.drain().empty());
}

TEST(SafloSelect, MatchesOracleOverRandomCalls) {
    const auto c = props::alg2_argmin(21);
    EXPECT_TRUE(c.ok) << c.detail;
    EXPECT_EQ(c.cases, 5000u);
}

TEST(SafloSelect, AllEnabledAndSafeEqualsBlest) {
    const auto c = props::saflo_blest_equivalence(22);
    EXPECT_TRUE(c.ok) << c.detail;
}

TEST(SafloSelect, AllEnabledAndSafeTraceEqualsBlest) {
    const auto c = props::saflo_blest_trace_equivalence(23);
    EXPECT_TRUE(c.ok) << c.detail;
    EXPECT_GE(c.cases, 1000u);
}

TEST(BlestSelect, PicksShortestLingerWithoutMaps) {
    const auto d = blest_select(two_paths(), conn());
    EXPECT_EQ(*d.index, 1u);
    EXPECT_EQ(d.burst, 10'000u);
}

TEST(BlestSelect, SkipsSubflowWithoutRoom) {
    auto sfs = two_paths();
    sfs[1].free_cwnd = 1000;
    EXPECT_EQ(*blest_select(sfs, conn()).index, 0u);
    // A backlog smaller than one MSS only needs room for the backlog.
    EXPECT_EQ(*blest_select(sfs, conn(1, 900)).index, 1u);
}

TEST(SingleSelect, StaysOnItsPath) {
    EXPECT_EQ(*single_select(two_paths(), conn(), PathId::Wifi).index, 0u);
    EXPECT_EQ(*single_select(two_paths(), conn(), PathId::Cellular).index, 1u);
    auto sfs = two_paths();
    sfs[0].free_cwnd = 0;
    EXPECT_TRUE(single_select(sfs, conn(), PathId::Wifi).none());
}

TEST(RdSelect, TwoSubflowsSplitEvenly) {
    Rng rng(8);
    std::size_t first = 0;
    for (int i = 0; i < 10000; ++i) first += *rd_select(two_paths(), conn(), rng).index == 0;
    EXPECT_NEAR(static_cast<double>(first), 5000.0, 200.0);
}

TEST(RdSelect, ChiSquareOverThreeSubflows) {
    Rng rng(9);
    auto sfs = two_paths();
    sfs.push_back(sf(1, 2, 1, 0, 10.0, 64 * kKiB, PathId::Cellular));
    std::array<double, 3> n{};
    const int N = 30000;
    for (int i = 0; i < N; ++i) ++n[*rd_select(sfs, conn(), rng).index];
    double chi2 = 0;
    for (double o : n) chi2 += (o - N / 3.0) * (o - N / 3.0) / (N / 3.0);
    // 0.999 quantile of chi-square with 2 degrees of freedom.
    EXPECT_LT(chi2, 13.816);
}

TEST(RdSelect, SingleSubflowAlwaysChosen) {
    Rng rng(1);
    std::vector<SchedSubflow> one{sf(1, 0, 0, 0, 1.0, 64 * kKiB, PathId::Wifi)};
    for (int i = 0; i < 100; ++i) EXPECT_EQ(*rd_select(one, conn(), rng).index, 0u);
}

TEST(RdSelect, FullSubflowNeverChosen) {
    Rng rng(2);
    auto sfs = two_paths();
    sfs[0].free_cwnd = 0;
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(*rd_select(sfs, conn(), rng).index, 1u);
    sfs[1].free_cwnd = 0;
    EXPECT_TRUE(rd_select(sfs, conn(), rng).none());
}

TEST(ComputeBurst, MinOfWindowBacklogAndCap) {
    const auto s = sf(1, 0, 0, 0, 1.0, 5000, PathId::Wifi);
    EXPECT_EQ(compute_burst(s, conn(1, 10'000)), 5000u);
    EXPECT_EQ(compute_burst(s, conn(1, 3000)), 3000u);
    const auto big = sf(1, 0, 0, 0, 1.0, 1'000'000, PathId::Wifi);
    EXPECT_EQ(compute_burst(big, conn(1, 1'000'000)), 64 * kKiB);
    EXPECT_EQ(compute_burst(s, conn(1, 0)), 0u);
}

TEST(HasRoom, NeedsOneMssOrTheWholeBacklog) {
    auto s = sf(1, 0, 0, 0, 1.0, 1448, PathId::Wifi);
    EXPECT_TRUE(has_room(s, conn()));
    s.free_cwnd = 1447;
    EXPECT_FALSE(has_room(s, conn()));
    EXPECT_TRUE(has_room(s, conn(1, 1000)));
    EXPECT_FALSE(has_room(s, conn(1, 0)));
}

TEST(Scheduler, ParseKind) {
    for (auto k : {SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd, SchedulerKind::SingleCell,
                   SchedulerKind::SingleWifi})
        EXPECT_EQ(parse_scheduler_kind(to_string(k)), k);
    EXPECT_THROW(parse_scheduler_kind("minrtt"), ConfigError);
}
