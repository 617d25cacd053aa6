#pragma once

// User-space subflow manager. Each tick it groups the C-map by token, marks
// reported cellular subflows unsafe, re-draws every subflow's enabled flag
// with linger-weighted probabilities, drops closed connections, and flushes
// the D-map into the detection log.

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "saflo/core.hpp"

namespace saflo {

/// Per-token grouping of C-map entries taken at snapshot time.
struct SFs {
    std::size_t sf_num = 0;
    std::vector<std::uint8_t> local_ids;
    std::vector<std::uint8_t> remote_ids;
    double lt_sum = 0.0;
};

using SubflowTable = std::map<Token, SFs>;

struct ManagerConfig {
    double interval = 2.0;  ///< seconds
    double p_min = 0.2;
    double p_max = 0.8;
    std::uint8_t cellular_remote_id = 1;

    void validate() const {
        if (!(interval > 0.0)) throw ConfigError("manager.interval must be > 0");
        if (!(p_min >= 0.0 && p_min <= p_max && p_max <= 1.0))
            throw ConfigError("manager probabilities need 0 <= p_min <= p_max <= 1");
    }
};

inline SubflowTable snapshot(const ControlMap& cmap) {
    SubflowTable table;
    for (const auto& [key, entry] : cmap.entries()) {
        auto& sfs = table[key.token];
        ++sfs.sf_num;
        sfs.local_ids.push_back(key.local_id);
        sfs.remote_ids.push_back(key.remote_id);
        sfs.lt_sum += entry.linger_time;
    }
    return table;
}

inline void apply_reports(const SharedReport& report, ControlMap& cmap, const SubflowTable& table,
                          const ManagerConfig& cfg) {
    for (Token t : report.compromised) {
        auto it = table.find(t);
        if (it == table.end()) continue;
        const auto& sfs = it->second;
        for (std::size_t i = 0; i < sfs.sf_num; ++i) {
            if (sfs.remote_ids[i] != cfg.cellular_remote_id) continue;
            const SubflowKey key{t, sfs.local_ids[i], sfs.remote_ids[i]};
            if (auto e = cmap.lookup(key)) {
                e->safe = false;
                cmap.update(key, *e);
            }
        }
    }
}

/// Probability that a safe subflow is enabled for the next interval.
inline double enable_probability(double linger_time, double lt_sum, const ManagerConfig& cfg) {
    // All subflows idle: treat every one as fast.
    if (lt_sum <= 0.0) return cfg.p_max;
    const double p = 1.0 - linger_time / lt_sum;
    return std::min(std::max(p, cfg.p_min), cfg.p_max);
}

/// Decision for subflow state over one token's subflows, in snapshot order.
/// linger_time is taken from the snapshot held in the C-map entry.
inline void decide_states(Token token, const SFs& sfs, ControlMap& cmap, Rng& rng, const ManagerConfig& cfg) {
    for (std::size_t i = 0; i < sfs.sf_num; ++i) {
        const SubflowKey key{token, sfs.local_ids[i], sfs.remote_ids[i]};
        auto entry = cmap.lookup(key);
        if (!entry) continue;
        if (!entry->safe) {
            entry->enabled = false;
            cmap.update(key, *entry);
            continue;
        }
        const double p = enable_probability(entry->linger_time, sfs.lt_sum, cfg);
        const double th = rng.uniform();
        entry->enabled = p > th;
        cmap.update(key, *entry);
    }
}

inline std::size_t cleanup_closed(const std::set<Token>& live_tokens, ControlMap& cmap) {
    std::vector<SubflowKey> dead;
    for (const auto& [key, entry] : cmap.entries())
        if (!live_tokens.contains(key.token)) dead.push_back(key);
    for (const auto& k : dead) cmap.erase(k);
    return dead.size();
}

inline std::size_t flush_dmap(DetectionMap& dmap, DetectionLog& log) {
    const auto recs = dmap.drain();
    log.append(recs);
    return recs.size();
}

class SubflowManager {
public:
    SubflowManager(ManagerConfig cfg, std::uint64_t seed) : cfg_((cfg.validate(), cfg)), rng_(seed) {}

    /// One manager interval. Returns the time of the next tick.
    SimTime tick(SimTime now, ControlMap& cmap, DetectionMap& dmap, const SharedReport& report,
                 const std::set<Token>& live_tokens, DetectionLog& log) {
        table_ = snapshot(cmap);
        apply_reports(report, cmap, table_, cfg_);
        for (const auto& [token, sfs] : table_) decide_states(token, sfs, cmap, rng_, cfg_);
        cleanup_closed(live_tokens, cmap);
        flush_dmap(dmap, log);
        table_.clear();
        ++ticks_;
        return now + from_seconds(cfg_.interval);
    }

    const ManagerConfig& config() const { return cfg_; }
    std::uint64_t ticks() const { return ticks_; }

private:
    ManagerConfig cfg_;
    Rng rng_;
    SubflowTable table_;
    std::uint64_t ticks_ = 0;
};

}  // namespace saflo
