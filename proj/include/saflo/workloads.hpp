#pragma once

// Application traffic generators. Every generator yields app-level writes
// (time, bytes) into a connection's send buffer; segmentation and pacing
// happen in the simulator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "saflo/core.hpp"

namespace saflo {

struct AppSend {
    SimTime time = 0;
    std::uint64_t bytes = 0;

    friend bool operator==(const AppSend&, const AppSend&) = default;
};

enum class WorkloadKind { Video, Attacker, Voice, VideoCall, Web, Saturated };

inline std::string_view to_string(WorkloadKind k) {
    switch (k) {
        case WorkloadKind::Video: return "video";
        case WorkloadKind::Attacker: return "attacker";
        case WorkloadKind::Voice: return "voice";
        case WorkloadKind::VideoCall: return "videocall";
        case WorkloadKind::Web: return "web";
        case WorkloadKind::Saturated: return "saturated";
    }
    return "?";
}

/// `time_ns,bytes`
inline void write_sends_csv(std::ostream& os, std::span<const AppSend> sends) {
    os << "time_ns,bytes\n";
    for (const auto& s : sends) os << s.time << ',' << s.bytes << '\n';
}

// ===== HAS video =====

struct VideoSignature {
    std::uint32_t id = 0;
    std::vector<std::uint64_t> chunks;  ///< bytes per on-period
    double interval = 5.0;              ///< seconds between on-periods

    double coverage() const { return interval * static_cast<double>(chunks.size()); }
    friend bool operator==(const VideoSignature&, const VideoSignature&) = default;
};

struct VideoLibraryConfig {
    std::size_t videos = 10;
    double chunk_median = 2.0 * static_cast<double>(kMiB);
    double chunk_sigma = 0.5;
    double interval = 5.0;
    double coverage = 300.0;  ///< seconds of content per video
    std::uint64_t seed = 11;

    void validate() const {
        if (videos == 0) throw ConfigError("video.videos must be > 0");
        if (!(chunk_median >= 1.0)) throw ConfigError("video.chunk_median must be >= 1 byte");
        if (!(chunk_sigma >= 0.0)) throw ConfigError("video.chunk_sigma must be >= 0");
        if (!(interval > 0.0)) throw ConfigError("video.interval must be > 0");
        if (!(coverage >= interval)) throw ConfigError("video.coverage must be >= video.interval");
    }
};

/// Seeded set of video signatures; each id owns its own stream so adding
/// videos never changes existing ones.
class VideoLibrary {
public:
    explicit VideoLibrary(VideoLibraryConfig cfg) : cfg_((cfg.validate(), cfg)) {
        const auto n = static_cast<std::size_t>(std::ceil(cfg_.coverage / cfg_.interval - 1e-9));
        for (std::size_t v = 0; v < cfg_.videos; ++v) {
            Rng rng(mix_seed(cfg_.seed, v));
            VideoSignature sig;
            sig.id = static_cast<std::uint32_t>(v);
            sig.interval = cfg_.interval;
            sig.chunks.reserve(n);
            for (std::size_t k = 0; k < n; ++k) {
                const double b = rng.lognormal(cfg_.chunk_median, cfg_.chunk_sigma);
                sig.chunks.push_back(std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(b))));
            }
            videos_.push_back(std::move(sig));
        }
    }

    std::size_t size() const { return videos_.size(); }
    const VideoSignature& video(std::size_t id) const { return videos_.at(id); }
    const VideoLibraryConfig& config() const { return cfg_; }

private:
    VideoLibraryConfig cfg_;
    std::vector<VideoSignature> videos_;
};

/// One chunk per on-period at t = k * interval for k * interval < duration.
/// With `jitter > 0` each chunk is scaled by an independent log-normal factor
/// of median 1 (network and encoder variation between plays).
inline std::vector<AppSend> gen_video(const VideoSignature& sig, double duration, double jitter = 0.0,
                                      Rng* rng = nullptr) {
    if (!(duration > 0.0)) throw ConfigError("video duration must be > 0");
    if (duration > sig.coverage() + 1e-9) throw ConfigError("video duration exceeds signature coverage");
    if (jitter > 0.0 && !rng) throw std::invalid_argument("gen_video: jitter needs an rng");
    std::vector<AppSend> out;
    for (std::size_t k = 0; k < sig.chunks.size(); ++k) {
        const double t = static_cast<double>(k) * sig.interval;
        if (t >= duration) break;
        double bytes = static_cast<double>(sig.chunks[k]);
        if (jitter > 0.0) bytes *= std::exp(jitter * rng->normal());
        out.push_back({from_seconds(t), std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(bytes)))});
    }
    return out;
}

// ===== Messenger attack =====

struct AttackerParams {
    double period = 2.5;
    std::uint64_t file_bytes = kMiB;
    std::uint64_t signal_bytes = 2 * kKiB;
};

/// File and signal sockets; the harness opens one connection for each.
struct AttackerStreams {
    std::vector<AppSend> file;
    std::vector<AppSend> signal;
};

inline AttackerStreams gen_attacker(double duration, const AttackerParams& p = {}) {
    if (!(duration > 0.0)) throw ConfigError("attacker duration must be > 0");
    if (!(p.period > 0.0)) throw ConfigError("attacker period must be > 0");
    AttackerStreams s;
    for (std::size_t k = 0;; ++k) {
        const SimTime t = static_cast<SimTime>(k) * from_seconds(p.period);
        if (t >= from_seconds(duration)) break;
        s.file.push_back({t, p.file_bytes});
        s.signal.push_back({t, p.signal_bytes});
    }
    return s;
}

// ===== Background traffic =====

struct VoiceParams {
    double period = 0.020;
    std::uint64_t frame_bytes = 320;
};

inline std::vector<AppSend> gen_voice(double duration, const VoiceParams& p = {}) {
    if (!(duration > 0.0)) throw ConfigError("voice duration must be > 0");
    std::vector<AppSend> out;
    const SimTime step = from_seconds(p.period), end = from_seconds(duration);
    for (SimTime t = 0; t < end; t += step) out.push_back({t, p.frame_bytes});
    return out;
}

struct VideoCallParams {
    double bitrate = 1.5e6;  ///< bits/second, long-run mean
    double frame = 0.100;    ///< seconds per send
    double jitter = 0.30;    ///< uniform relative spread per send
};

inline std::vector<AppSend> gen_videocall(double duration, Rng& rng, const VideoCallParams& p = {}) {
    if (!(duration > 0.0)) throw ConfigError("videocall duration must be > 0");
    if (!(p.jitter >= 0.0 && p.jitter < 1.0)) throw ConfigError("videocall jitter must be in [0, 1)");
    std::vector<AppSend> out;
    const double mean = p.bitrate / 8.0 * p.frame;
    const SimTime step = from_seconds(p.frame), end = from_seconds(duration);
    for (SimTime t = 0; t < end; t += step) {
        const double b = mean * (1.0 + rng.uniform(-p.jitter, p.jitter));
        out.push_back({t, std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(b)))});
    }
    return out;
}

inline constexpr std::uint64_t kWebPageBytes = 15'600'000;

inline std::vector<AppSend> gen_web(std::uint64_t bytes = kWebPageBytes) {
    if (bytes == 0) throw ConfigError("web object size must be > 0");
    return {{0, bytes}};
}

// ===== Scenarios =====

/// Traffic mixes for the user identification experiment. 1..7 are the
/// standard mixes; odd ones include the attacker.
inline std::vector<WorkloadKind> compose_scenario(int n) {
    switch (n) {
        case 1: return {WorkloadKind::Attacker};
        case 2: return {WorkloadKind::Video};
        case 3: return {WorkloadKind::Video, WorkloadKind::Attacker};
        case 4: return {WorkloadKind::Voice};
        case 5: return {WorkloadKind::Voice, WorkloadKind::Attacker};
        case 6: return {WorkloadKind::VideoCall};
        case 7: return {WorkloadKind::VideoCall, WorkloadKind::Attacker};
        default: throw ConfigError("scenario must be in 1..7, got " + std::to_string(n));
    }
}

/// Scenario 0 is an idle device: no application traffic. Used as an extra
/// negative class.
inline std::vector<WorkloadKind> compose_scenario_or_idle(int n) {
    if (n == 0) return {};
    return compose_scenario(n);
}

inline bool scenario_has_attacker(int n) {
    const auto parts = compose_scenario_or_idle(n);
    return std::find(parts.begin(), parts.end(), WorkloadKind::Attacker) != parts.end();
}

inline std::uint64_t total_bytes(std::span<const AppSend> sends) {
    std::uint64_t n = 0;
    for (const auto& s : sends) n += s.bytes;
    return n;
}

}  // namespace saflo
