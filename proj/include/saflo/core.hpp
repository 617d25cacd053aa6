#pragma once

/**
 * @file core.hpp
 * @brief Shared domain types for the Saflo simulator.
 *
 * Identifier spaces, the control map (per-subflow state written by the
 * scheduler and toggled by the subflow manager), the detection map (burst
 * records appended by the scheduler), the shared report written by the
 * attack detector, the detection log text format, and the seeded RNG.
 */

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace saflo {

// ===== Errors =====

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MapFullError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};
struct DatasetError : Error {
    using Error::Error;
};

/// Creates the directories leading to an output file.
inline void make_parent_dirs(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(parent, ec);
    if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
}

// ===== Time =====

/// Nanoseconds since simulation start.
using SimTime = std::uint64_t;

inline constexpr SimTime kNsPerMs = 1'000'000;
inline constexpr SimTime kNsPerSec = 1'000'000'000;

constexpr SimTime from_seconds(double s) {
    return static_cast<SimTime>(s * static_cast<double>(kNsPerSec) + 0.5);
}
constexpr SimTime from_ms(double ms) {
    return static_cast<SimTime>(ms * static_cast<double>(kNsPerMs) + 0.5);
}
constexpr double to_seconds(SimTime t) {
    return static_cast<double>(t) / static_cast<double>(kNsPerSec);
}

inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * 1024;

// ===== Identifiers =====

/// MPTCP connection identifier. 0 means "no token".
using Token = std::uint32_t;
inline constexpr Token kNoToken = 0;

/// Sequential token source; tokens are never reused within one run.
class TokenAllocator {
public:
    Token allocate() { return next_++; }
    Token peek() const { return next_; }

private:
    Token next_ = 1;
};

enum class PathId : std::uint8_t { Cellular = 0, Wifi = 1 };

inline std::string_view to_string(PathId p) {
    return p == PathId::Cellular ? "cellular" : "wifi";
}

struct SubflowKey {
    Token token = kNoToken;
    std::uint8_t local_id = 0;
    std::uint8_t remote_id = 0;

    friend auto operator<=>(const SubflowKey&, const SubflowKey&) = default;
};

/// Kernel-side view of one subflow as handed to a scheduler.
struct SubflowContext {
    SubflowKey key;
    std::uint64_t wmem = 0;  ///< bytes assigned to the subflow and not yet acked
    double pace = 1.0;       ///< pacing rate, bytes/second (> 0)
    PathId path = PathId::Wifi;
};

inline double linger_time(std::uint64_t queued_memory, double pacing_rate) {
    return static_cast<double>(queued_memory) / pacing_rate;
}

// ===== Control map (C-map) =====

struct ControlMapEntry {
    double linger_time = 0.0;        ///< seconds
    std::uint64_t queued_memory = 0; ///< bytes
    double pacing_rate = 1.0;        ///< bytes/second
    bool enabled = true;
    bool safe = true;

    friend bool operator==(const ControlMapEntry&, const ControlMapEntry&) = default;
};

/// Bounded key-value store keyed by subflow. Iteration is ordered by key so
/// every consumer sees the same traversal order.
class ControlMap {
public:
    static constexpr std::size_t kDefaultCapacity = 4096;

    explicit ControlMap(std::size_t capacity = kDefaultCapacity) : capacity_(capacity) {}

    std::optional<ControlMapEntry> lookup(const SubflowKey& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void update(const SubflowKey& key, const ControlMapEntry& entry) {
        auto it = entries_.find(key);
        if (it != entries_.end()) {
            it->second = entry;
            return;
        }
        if (entries_.size() >= capacity_)
            throw MapFullError("control map full (capacity " + std::to_string(capacity_) + ")");
        entries_.emplace(key, entry);
    }

    bool erase(const SubflowKey& key) { return entries_.erase(key) > 0; }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t capacity() const { return capacity_; }

    const std::map<SubflowKey, ControlMapEntry>& entries() const { return entries_; }

private:
    std::size_t capacity_;
    std::map<SubflowKey, ControlMapEntry> entries_;
};

// ===== Detection map (D-map) =====

struct DetectionRecord {
    SimTime timestamp = 0;
    Token token = kNoToken;
    std::uint64_t burst = 0;

    friend bool operator==(const DetectionRecord&, const DetectionRecord&) = default;
};

/// Append buffer of burst records. Records sharing (timestamp, token) are kept
/// apart by an internal sequence number and drained in append order.
class DetectionMap {
public:
    void append(const DetectionRecord& r) { pending_.push_back({r, seq_++}); }

    std::vector<DetectionRecord> drain() {
        std::stable_sort(pending_.begin(), pending_.end(), [](const Slot& a, const Slot& b) {
            if (a.rec.timestamp != b.rec.timestamp) return a.rec.timestamp < b.rec.timestamp;
            if (a.rec.token != b.rec.token) return a.rec.token < b.rec.token;
            return a.seq < b.seq;
        });
        std::vector<DetectionRecord> out;
        out.reserve(pending_.size());
        for (const auto& s : pending_) out.push_back(s.rec);
        pending_.clear();
        return out;
    }

    std::size_t size() const { return pending_.size(); }
    bool empty() const { return pending_.empty(); }

private:
    struct Slot {
        DetectionRecord rec;
        std::uint64_t seq;
    };
    std::vector<Slot> pending_;
    std::uint64_t seq_ = 0;
};

// ===== Shared report (detector -> manager) =====

struct SharedReport {
    std::set<Token> compromised;
    SimTime updated_at = 0;

    void publish(const std::set<Token>& tokens, SimTime now) {
        compromised.insert(tokens.begin(), tokens.end());
        updated_at = now;
    }
};

// ===== Detection log =====

/// `timestamp_ns,token,burst_bytes\n`
inline std::string format_log_line(const DetectionRecord& r) {
    return std::to_string(r.timestamp) + "," + std::to_string(r.token) + "," +
           std::to_string(r.burst) + "\n";
}

namespace detail {
template <typename T>
bool parse_uint_field(std::string_view s, T& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}
}  // namespace detail

/// Parses one log line (without trailing newline). Throws ParseError naming
/// the line number on malformed input.
inline DetectionRecord parse_log_line(std::string_view line, std::size_t line_no) {
    auto fail = [&](const char* why) -> DetectionRecord {
        throw ParseError("detection log line " + std::to_string(line_no) + ": " + why);
    };
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto c1 = line.find(',');
    if (c1 == std::string_view::npos) return fail("expected 3 comma-separated fields");
    auto c2 = line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos)
        return fail("expected 3 comma-separated fields");
    DetectionRecord r;
    if (!detail::parse_uint_field(line.substr(0, c1), r.timestamp)) return fail("bad timestamp");
    if (!detail::parse_uint_field(line.substr(c1 + 1, c2 - c1 - 1), r.token)) return fail("bad token");
    if (!detail::parse_uint_field(line.substr(c2 + 1), r.burst)) return fail("bad burst");
    if (r.burst == 0) return fail("burst must be positive");
    return r;
}

/// Parses a whole log; blank lines are rejected like any other malformed line.
inline std::vector<DetectionRecord> parse_log(std::istream& in) {
    std::vector<DetectionRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        out.push_back(parse_log_line(line, n));
    }
    return out;
}

/// Append-only detection log. Records are always kept in memory; when a path
/// is given they are also written to disk in the line format above.
class DetectionLog {
public:
    DetectionLog() = default;
    explicit DetectionLog(const std::string& path) : path_(path) {
        make_parent_dirs(path);
        file_.open(path, std::ios::out | std::ios::trunc | std::ios::binary);
        if (!file_) throw IoError("cannot open detection log " + path);
    }

    void append(std::span<const DetectionRecord> recs) {
        for (const auto& r : recs) {
            records_.push_back(r);
            if (file_.is_open()) file_ << format_log_line(r);
        }
        if (file_.is_open()) {
            file_.flush();
            if (!file_) throw IoError("write to detection log " + path_ + " failed");
        }
    }

    const std::vector<DetectionRecord>& records() const { return records_; }
    std::size_t size() const { return records_.size(); }

private:
    std::string path_;
    std::ofstream file_;
    std::vector<DetectionRecord> records_;
};

// ===== RNG =====

/// Seeded generator. The engine is mt19937_64, whose output sequence is fixed
/// by the standard; derived distributions are computed here rather than with
/// <random> distributions so streams match across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, unbiased.
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_int(0)");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (one value per call).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    double lognormal(double median, double sigma) { return median * std::exp(sigma * normal()); }

    /// Child generator with an independent stream derived from this one.
    Rng fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = uniform_int(i);
            std::iter_swap(first + (i - 1), first + j);
        }
    }

private:
    std::mt19937_64 engine_;
};

/// Deterministic seed mixing (splitmix64 finalizer).
constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace saflo
