#pragma once

// Scheduling policies invoked by the simulator whenever a connection has data
// to place on a subflow.

#include <algorithm>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saflo/core.hpp"

namespace saflo {

enum class SchedulerKind { Saflo, Blest, Rd, SingleCell, SingleWifi };

inline std::string_view to_string(SchedulerKind k) {
    switch (k) {
        case SchedulerKind::Saflo: return "saflo";
        case SchedulerKind::Blest: return "blest";
        case SchedulerKind::Rd: return "rd";
        case SchedulerKind::SingleCell: return "single-cell";
        case SchedulerKind::SingleWifi: return "single-wifi";
    }
    return "?";
}

inline SchedulerKind parse_scheduler_kind(std::string_view s) {
    for (auto k : {SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd,
                   SchedulerKind::SingleCell, SchedulerKind::SingleWifi})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown scheduler '" + std::string(s) +
                      "' (expected saflo | blest | rd | single-cell | single-wifi)");
}

/// A subflow as seen by a scheduling call: kernel context plus free window.
struct SchedSubflow {
    SubflowContext ctx;
    std::uint64_t free_cwnd = 0;
};

/// Connection-level inputs to a scheduling call.
struct SchedConnection {
    Token token = kNoToken;
    std::uint64_t backlog = 0;  ///< bytes that may be assigned right now
    std::uint64_t mss = 1500;
    std::uint64_t burst_cap = 64 * kKiB;
};

struct SendInfo {
    std::optional<std::size_t> selected;  ///< index into the subflow span
    double linger_time = -1.0;
};

struct SchedulerDecision {
    std::optional<std::size_t> index;  ///< index into the subflow span
    std::optional<SubflowKey> selected;
    std::uint64_t burst = 0;

    bool none() const { return !index.has_value(); }
};

/// A subflow can take new data when its free window fits one MSS, or the
/// whole backlog if that is smaller.
inline bool has_room(const SchedSubflow& sf, const SchedConnection& conn) {
    const std::uint64_t need = std::min(conn.mss, conn.backlog);
    return need > 0 && sf.free_cwnd >= need;
}

inline std::uint64_t compute_burst(const SchedSubflow& sf, const SchedConnection& conn) {
    return std::min({sf.free_cwnd, conn.backlog, conn.burst_cap});
}

namespace detail {

/// Visit order: ascending (local_id, remote_id). Strict `<` on linger_time
/// then makes the lowest key win ties.
inline std::vector<std::size_t> key_order(std::span<const SchedSubflow> subflows) {
    std::vector<std::size_t> idx(subflows.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return subflows[a].ctx.key < subflows[b].ctx.key;
    });
    return idx;
}

inline SchedulerDecision decide(std::span<const SchedSubflow> subflows, const SchedConnection& conn,
                                std::optional<std::size_t> idx) {
    SchedulerDecision d;
    if (!idx) return d;
    const auto burst = compute_burst(subflows[*idx], conn);
    if (burst == 0) return d;
    d.index = idx;
    d.selected = subflows[*idx].ctx.key;
    d.burst = burst;
    return d;
}

template <typename Pred>
SendInfo min_linger(std::span<const SchedSubflow> subflows, const SchedConnection& conn, Pred eligible) {
    SendInfo info;
    for (auto i : key_order(subflows)) {
        const auto& sf = subflows[i];
        if (!eligible(sf) || !has_room(sf, conn)) continue;
        const double lt = linger_time(sf.ctx.wmem, sf.ctx.pace);
        if (!info.selected || lt < info.linger_time) {
            info.selected = i;
            info.linger_time = lt;
        }
    }
    return info;
}

}  // namespace detail

/// Shortest linger_time among subflows with room. No map access.
inline SchedulerDecision blest_select(std::span<const SchedSubflow> subflows, const SchedConnection& conn,
                                      SimTime /*now*/ = 0) {
    if (conn.backlog == 0) return {};
    auto info = detail::min_linger(subflows, conn, [](const SchedSubflow&) { return true; });
    return detail::decide(subflows, conn, info.selected);
}

/// BLEST restricted to one path.
inline SchedulerDecision single_select(std::span<const SchedSubflow> subflows, const SchedConnection& conn,
                                       PathId path) {
    if (conn.backlog == 0) return {};
    auto info = detail::min_linger(subflows, conn, [path](const SchedSubflow& sf) { return sf.ctx.path == path; });
    return detail::decide(subflows, conn, info.selected);
}

/// Uniform choice over subflows with room.
inline SchedulerDecision rd_select(std::span<const SchedSubflow> subflows, const SchedConnection& conn, Rng& rng) {
    if (conn.backlog == 0) return {};
    std::vector<std::size_t> eligible;
    for (auto i : detail::key_order(subflows))
        if (has_room(subflows[i], conn)) eligible.push_back(i);
    if (eligible.empty()) return {};
    return detail::decide(subflows, conn, eligible[rng.uniform_int(eligible.size())]);
}

/// Subflow selection of the Saflo kernel scheduler.
///
/// Every subflow gets a C-map entry (created enabled and safe on first sight)
/// refreshed with its current queued memory, pacing rate and linger_time. New
/// data goes to the enabled, safe subflow with the shortest linger_time; when
/// no subflow is enabled the connection falls back to the (0, 0) subflow as
/// plain TCP would. Each call that assigns data appends one D-map record.
inline SchedulerDecision saflo_select(std::span<const SchedSubflow> subflows, const SchedConnection& conn,
                                      ControlMap& cmap, DetectionMap& dmap, SimTime now) {
    if (conn.backlog == 0) return {};

    SendInfo info;
    bool any_enabled = false;
    std::optional<std::size_t> fallback;
    for (auto i : detail::key_order(subflows)) {
        const auto& sf = subflows[i];
        auto entry = cmap.lookup(sf.ctx.key).value_or(ControlMapEntry{});
        const double lt = linger_time(sf.ctx.wmem, sf.ctx.pace);
        const bool usable = entry.enabled && entry.safe;
        any_enabled = any_enabled || usable;
        // The -1 sentinel means "nothing selected yet": any linger_time beats it.
        if (usable && has_room(sf, conn) && (!info.selected || lt < info.linger_time)) {
            info.selected = i;
            info.linger_time = lt;
        }
        if (sf.ctx.key.local_id == 0 && sf.ctx.key.remote_id == 0) fallback = i;

        entry.linger_time = lt;
        entry.queued_memory = sf.ctx.wmem;
        entry.pacing_rate = sf.ctx.pace;
        cmap.update(sf.ctx.key, entry);
    }

    std::optional<std::size_t> pick = info.selected;
    if (!any_enabled && fallback && has_room(subflows[*fallback], conn)) pick = fallback;

    auto d = detail::decide(subflows, conn, pick);
    if (!d.none()) dmap.append({now, conn.token, d.burst});
    return d;
}

/// Retransmissions bypass the randomized selection: shortest linger_time among
/// subflows that can take the segment. Under Saflo subflows marked unsafe are
/// excluded; single-path schedulers stay on their path.
inline std::optional<std::size_t> select_retransmit(SchedulerKind kind, std::span<const SchedSubflow> subflows,
                                                    std::uint64_t seg_len, const ControlMap* cmap) {
    SchedConnection conn;
    conn.backlog = seg_len;
    conn.mss = seg_len;
    auto eligible = [&](const SchedSubflow& sf) {
        switch (kind) {
            case SchedulerKind::SingleCell: return sf.ctx.path == PathId::Cellular;
            case SchedulerKind::SingleWifi: return sf.ctx.path == PathId::Wifi;
            case SchedulerKind::Saflo: {
                if (!cmap) return true;
                auto e = cmap->lookup(sf.ctx.key);
                return !e || e->safe;
            }
            default: return true;
        }
    };
    return detail::min_linger(subflows, conn, eligible).selected;
}

/// Dispatches to the configured policy. Owns the RD generator; borrows the
/// Saflo maps.
class Scheduler {
public:
    Scheduler(SchedulerKind kind, std::uint64_t seed, ControlMap* cmap = nullptr, DetectionMap* dmap = nullptr)
        : kind_(kind), rng_(seed), cmap_(cmap), dmap_(dmap) {
        if (kind_ == SchedulerKind::Saflo && (!cmap_ || !dmap_))
            throw ConfigError("saflo scheduler needs a control map and a detection map");
    }

    SchedulerKind kind() const { return kind_; }

    SchedulerDecision select(std::span<const SchedSubflow> subflows, const SchedConnection& conn, SimTime now) {
        switch (kind_) {
            case SchedulerKind::Saflo: return saflo_select(subflows, conn, *cmap_, *dmap_, now);
            case SchedulerKind::Blest: return blest_select(subflows, conn, now);
            case SchedulerKind::Rd: return rd_select(subflows, conn, rng_);
            case SchedulerKind::SingleCell: return single_select(subflows, conn, PathId::Cellular);
            case SchedulerKind::SingleWifi: return single_select(subflows, conn, PathId::Wifi);
        }
        return {};
    }

    std::optional<std::size_t> select_retransmit(std::span<const SchedSubflow> subflows, std::uint64_t seg_len) const {
        return saflo::select_retransmit(kind_, subflows, seg_len, cmap_);
    }

private:
    SchedulerKind kind_;
    Rng rng_;
    ControlMap* cmap_;
    DetectionMap* dmap_;
};

}  // namespace saflo
