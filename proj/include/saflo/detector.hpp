#pragma once

// Attack detector. Every interval it bins the last 10 s of the detection log
// into per-token burst series and scores them with two binary classifiers:
// the primary one looks for the bulk file socket of a messenger attack, the
// secondary one for its companion signalling socket. Secondary verdicts only
// count when the primary classifier flagged something.

#include <algorithm>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "saflo/cnn.hpp"
#include "saflo/core.hpp"

namespace saflo {

inline constexpr std::size_t kTraceBins = 1000;
inline constexpr SimTime kTraceBinWidth = 10 * kNsPerMs;
inline constexpr SimTime kTraceWindow = kTraceBins * kTraceBinWidth;

/// Bytes per 10 ms bin over [start_time, start_time + 10 s).
struct TrafficTrace {
    Token token = kNoToken;
    SimTime start_time = 0;
    std::vector<double> values = std::vector<double>(kTraceBins, 0.0);
};

/// Per-token traces for every token with a record in [window_end - 10 s,
/// window_end). Ordered by token. Windows ending before 10 s start at 0 and
/// keep their bins aligned to window_end.
inline std::vector<TrafficTrace> preprocess(std::span<const DetectionRecord> records, SimTime window_end) {
    const SimTime lo = window_end > kTraceWindow ? window_end - kTraceWindow : 0;
    // Bin index is measured back from window_end so bin 999 always ends at it.
    const SimTime origin_offset = kTraceWindow - (window_end - lo);
    std::map<Token, TrafficTrace> out;
    for (const auto& r : records) {
        if (r.timestamp < lo || r.timestamp >= window_end) continue;
        auto [it, fresh] = out.try_emplace(r.token);
        if (fresh) {
            it->second.token = r.token;
            it->second.start_time = lo;
        }
        const SimTime rel = r.timestamp - lo + origin_offset;
        it->second.values[rel / kTraceBinWidth] += static_cast<double>(r.burst);
    }
    std::vector<TrafficTrace> v;
    v.reserve(out.size());
    for (auto& [t, tr] : out) v.push_back(std::move(tr));
    return v;
}

/// Same as above, reading the text log format. Malformed lines raise
/// ParseError with their line number.
inline std::vector<TrafficTrace> preprocess(std::istream& log, SimTime window_end) {
    const auto recs = parse_log(log);
    return preprocess(recs, window_end);
}

struct DetectorConfig {
    double interval = 5.0;   ///< seconds between ticks
    double threshold = 0.5;  ///< score above which a token is flagged
    bool desk = true;        ///< reduced-width topology
    std::uint64_t seed = 7;

    void validate() const {
        if (!(interval > 0.0)) throw ConfigError("detector.interval must be > 0");
        if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("detector.threshold must be in (0, 1)");
    }

    CnnTopology topology() const {
        return desk ? CnnTopology::desk(kTraceBins) : CnnTopology::full(kTraceBins);
    }
};

/// Gating rule over precomputed scores (parallel to `tokens`).
inline std::set<Token> detect_scores(std::span<const Token> tokens, std::span<const double> primary,
                                     std::span<const double> secondary, double threshold) {
    std::set<Token> flagged;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (primary[i] > threshold) flagged.insert(tokens[i]);
    if (flagged.empty()) return flagged;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        if (secondary[i] > threshold) flagged.insert(tokens[i]);
    return flagged;
}

inline std::set<Token> detect(std::span<const TrafficTrace> traces, const Cnn<double>& primary,
                              const Cnn<double>& secondary, double threshold) {
    std::vector<Token> tokens;
    std::vector<double> p, s;
    for (const auto& tr : traces) {
        tokens.push_back(tr.token);
        p.push_back(primary.score(tr.values));
    }
    if (std::none_of(p.begin(), p.end(), [&](double v) { return v > threshold; })) return {};
    for (const auto& tr : traces) s.push_back(secondary.score(tr.values));
    return detect_scores(tokens, p, s, threshold);
}

class AttackDetector {
public:
    AttackDetector(DetectorConfig cfg, Cnn<double> primary, Cnn<double> secondary)
        : cfg_((cfg.validate(), cfg)), primary_(std::move(primary)), secondary_(std::move(secondary)) {
        for (const Cnn<double>* m : {&primary_, &secondary_})
            if (m->topology().input_len != kTraceBins || !m->topology().binary())
                throw ConfigError("detector models need a 1000-sample input and a sigmoid head");
    }

    /// One detector interval over the log as flushed so far. Returns the next
    /// tick time.
    SimTime tick(SimTime now, std::span<const DetectionRecord> log, SharedReport& report) {
        const auto traces = preprocess(log, now);
        const auto flagged = detect(traces, primary_, secondary_, cfg_.threshold);
        if (!flagged.empty()) report.publish(flagged, now);
        history_.push_back({now, flagged});
        return now + from_seconds(cfg_.interval);
    }

    struct TickResult {
        SimTime time;
        std::set<Token> flagged;
    };
    const std::vector<TickResult>& history() const { return history_; }
    const DetectorConfig& config() const { return cfg_; }

private:
    DetectorConfig cfg_;
    Cnn<double> primary_;
    Cnn<double> secondary_;
    std::vector<TickResult> history_;
};

}  // namespace saflo
