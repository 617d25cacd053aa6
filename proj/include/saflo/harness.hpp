#pragma once

/**
 * @file harness.hpp
 * @brief Configuration, experiment orchestration and reporting.
 *
 * Every experiment is a pure function of (RunConfig, seed). Per-run seeds are
 * derived with mix_seed from the experiment seed and a run id, so any number
 * in a report can be regenerated from the config echo alone.
 */

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "saflo/adversary.hpp"
#include "saflo/cnn.hpp"
#include "saflo/core.hpp"
#include "saflo/detector.hpp"
#include "saflo/manager.hpp"
#include "saflo/netsim.hpp"
#include "saflo/schedulers.hpp"
#include "saflo/workloads.hpp"

namespace saflo {

using Json = nlohmann::json;

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int kReportSchemaVersion = 1;

// ===== Configuration =====

struct ModelHyper {
    TrainHyper train;
    bool desk = true;
};

struct DetectorTrainingConfig {
    std::size_t reps = 6;         ///< runs per scenario
    double duration = 60.0;       ///< seconds per run
    double attack_start_max = 10.0;
    ModelHyper model{{40, 1e-3, 32, OptimizerKind::Adam}, true};
};

struct DelayConfig {
    std::size_t launches = 20;
    double duration = 40.0;
    double attack_start_min = 2.0;
    double attack_start_max = 12.0;
};

struct VideoExperimentConfig {
    std::size_t plays = 10;
    std::vector<double> windows{60.0};
    std::size_t top_k = 3;
    double feature_bin_ms = 100.0;
    std::size_t folds = 5;
    std::vector<SchedulerKind> schedulers{SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd,
                                          SchedulerKind::SingleCell};
    ModelHyper model{{60, 1e-3, 16, OptimizerKind::Adam}, true};
};

struct UserExperimentConfig {
    std::size_t reps = 10;
    double duration = 60.0;
    double segment = 10.0;
    double warmup = 20.0;
    double feature_bin_ms = 10.0;
    std::size_t folds = 5;
    std::vector<SchedulerKind> schedulers{SchedulerKind::Blest, SchedulerKind::Rd, SchedulerKind::SingleCell};
    ModelHyper model{{30, 1e-3, 32, OptimizerKind::Adam}, true};
};

struct PerfConfig {
    std::vector<SchedulerKind> schedulers{SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd,
                                          SchedulerKind::SingleCell, SchedulerKind::SingleWifi};
    double saturated_duration = 60.0;
    std::size_t web_accesses = 20;
    double web_timeout = 120.0;
};

struct RunConfig {
    // [run]
    SchedulerKind scheduler = SchedulerKind::Saflo;
    int scenario = 1;
    double duration = 60.0;
    std::uint64_t seed = 1;
    bool trace = false;
    std::size_t video_id = 0;
    double attack_start = 0.0;

    NetConfig net;
    ManagerConfig manager;

    // [detector]
    DetectorConfig detector;
    bool detector_enabled = true;
    std::string primary_model;
    std::string secondary_model;
    DetectorTrainingConfig detector_training;
    DelayConfig delay;

    // [workloads]
    VideoLibraryConfig library;
    double play_jitter = 0.3;
    AttackerParams attacker;
    VoiceParams voice;
    VideoCallParams videocall;
    std::uint64_t web_bytes = kWebPageBytes;

    VideoExperimentConfig video;
    UserExperimentConfig user;
    PerfConfig perf;

    // [outputs]
    std::string output_dir = "results";
    std::string detection_log;
    std::string trace_csv;
    std::string dataset_dir;

    void validate() const {
        net.validate();
        manager.validate();
        detector.validate();
        library.validate();
        if (!(duration > 0.0)) throw ConfigError("run.duration must be > 0");
        if (scenario < 0 || scenario > 7) throw ConfigError("run.scenario must be in 0..7");
        if (video_id >= library.videos) throw ConfigError("run.video_id must be < workloads.video_count");
        if (attack_start < 0.0 || attack_start >= duration) throw ConfigError("run.attack_start must be in [0, duration)");
        if (play_jitter < 0.0) throw ConfigError("workloads.play_jitter must be >= 0");
        if (video.plays < 2) throw ConfigError("video.plays must be >= 2");
        if (video.windows.empty()) throw ConfigError("video.windows must not be empty");
        for (double w : video.windows)
            if (!(w > 0.0) || w > library.coverage) throw ConfigError("video.windows entries must be in (0, coverage]");
        if (video.top_k == 0) throw ConfigError("video.top_k must be >= 1");
        if (!(video.feature_bin_ms >= 1.0)) throw ConfigError("video.feature_bin_ms must be >= 1");
        if (video.folds == 0 || video.folds > video.plays) throw ConfigError("video.folds must be in 1..video.plays");
        if (user.reps < 2) throw ConfigError("user.reps must be >= 2");
        if (!(user.segment > 0.0) || user.warmup < 0.0 || user.warmup + user.segment > user.duration)
            throw ConfigError("user: need 0 <= warmup and warmup + segment <= duration");
        if (!(user.feature_bin_ms >= 1.0)) throw ConfigError("user.feature_bin_ms must be >= 1");
        if (user.folds == 0) throw ConfigError("user.folds must be >= 1");
        if (detector_training.reps < 2) throw ConfigError("detector.train_reps must be >= 2");
        if (!(detector_training.duration >= 10.0)) throw ConfigError("detector.train_duration must be >= 10");
        if (delay.launches == 0) throw ConfigError("detector.delay_launches must be > 0");
        if (!(delay.attack_start_min >= 0.0 && delay.attack_start_min <= delay.attack_start_max &&
              delay.attack_start_max < delay.duration))
            throw ConfigError("detector: need 0 <= delay_start_min <= delay_start_max < delay_duration");
        if (perf.web_accesses == 0) throw ConfigError("perf.web_accesses must be > 0");
        if (!(perf.saturated_duration > 0.0)) throw ConfigError("perf.saturated_duration must be > 0");
    }
};

namespace detail {

/// INI reader that remembers which keys were consumed so unknown keys can be
/// reported.
class IniReader {
public:
    explicit IniReader(boost::property_tree::ptree tree) : tree_(std::move(tree)) {}

    template <typename T>
    void get(const std::string& section, const std::string& key, T& out) {
        auto sec = tree_.get_child_optional(boost::property_tree::ptree::path_type(section, '\0'));
        if (!sec) return;
        auto v = sec->get_optional<std::string>(boost::property_tree::ptree::path_type(key, '\0'));
        if (!v) return;
        used_.insert(section + "." + key);
        out = convert<T>(section + "." + key, trim(*v));
    }

    void check_unknown() const {
        for (const auto& [sec, child] : tree_) {
            if (child.empty()) throw ConfigError("key '" + sec + "' is outside any [section]");
            for (const auto& [key, val] : child)
                if (!used_.contains(sec + "." + key)) throw ConfigError("unknown config key " + sec + "." + key);
        }
    }

private:
    static std::string trim(std::string s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        const auto e = s.find_last_not_of(" \t\r\n");
        return b == std::string::npos ? "" : s.substr(b, e - b + 1);
    }

    template <typename T>
    static T convert(const std::string& field, const std::string& s) {
        auto bad = [&](const char* want) { return ConfigError(field + ": expected " + want + ", got '" + s + "'"); };
        if constexpr (std::is_same_v<T, std::string>) {
            return s;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
            if (s == "false" || s == "0" || s == "no" || s == "off") return false;
            throw bad("a boolean");
        } else if constexpr (std::is_same_v<T, SchedulerKind>) {
            try {
                return parse_scheduler_kind(s);
            } catch (const ConfigError& e) {
                throw ConfigError(field + ": " + e.what());
            }
        } else if constexpr (std::is_same_v<T, OptimizerKind>) {
            if (s == "adam") return OptimizerKind::Adam;
            if (s == "sgd") return OptimizerKind::Sgd;
            throw bad("adam | sgd");
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            std::vector<double> out;
            for (const auto& part : split(s)) out.push_back(convert<double>(field, part));
            if (out.empty()) throw bad("a comma-separated list of numbers");
            return out;
        } else if constexpr (std::is_same_v<T, std::vector<SchedulerKind>>) {
            std::vector<SchedulerKind> out;
            for (const auto& part : split(s)) out.push_back(convert<SchedulerKind>(field, part));
            if (out.empty()) throw bad("a comma-separated list of schedulers");
            return out;
        } else if constexpr (std::is_floating_point_v<T>) {
            std::size_t pos = 0;
            double v = 0;
            try {
                v = std::stod(s, &pos);
            } catch (const std::exception&) {
                throw bad("a number");
            }
            if (pos != s.size()) throw bad("a number");
            return static_cast<T>(v);
        } else if constexpr (std::is_integral_v<T>) {
            long long v = 0;
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size()) throw bad("an integer");
            if (v < static_cast<long long>(std::numeric_limits<T>::min()) ||
                (v > 0 && static_cast<unsigned long long>(v) > std::numeric_limits<T>::max()))
                throw bad("an integer in range");
            return static_cast<T>(v);
        } else {
            static_assert(sizeof(T) == 0, "unsupported config type");
        }
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string part;
        while (std::getline(ss, part, ',')) {
            part = trim(part);
            if (!part.empty()) out.push_back(part);
        }
        return out;
    }

    boost::property_tree::ptree tree_;
    std::set<std::string> used_;
};

inline void read_path(IniReader& r, const std::string& sec, PathModel& p) {
    double delay_ms = p.one_way_delay * 1e3, mbps = p.bandwidth * 8.0 / 1e6;
    r.get(sec, "delay_ms", delay_ms);
    r.get(sec, "bandwidth_mbps", mbps);
    r.get(sec, "loss", p.loss_rate);
    r.get(sec, "mtu", p.mtu);
    p.one_way_delay = delay_ms / 1e3;
    p.bandwidth = mbps * 1e6 / 8.0;
}

inline void read_model(IniReader& r, const std::string& sec, ModelHyper& m) {
    std::string profile = m.desk ? "desk" : "full";
    r.get(sec, "epochs", m.train.epochs);
    r.get(sec, "learning_rate", m.train.learning_rate);
    r.get(sec, "batch_size", m.train.batch_size);
    r.get(sec, "optimizer", m.train.optimizer);
    r.get(sec, "profile", profile);
    if (profile != "desk" && profile != "full") throw ConfigError(sec + ".profile: expected desk | full");
    m.desk = profile == "desk";
}

}  // namespace detail

/// Reads the INI schema documented in the README. Missing keys keep their
/// defaults; unknown keys and malformed values raise ConfigError naming the
/// field.
inline RunConfig parse_config(std::istream& in) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config syntax: ") + e.what());
    }
    detail::IniReader r(tree);
    RunConfig c;
    r.get("run", "scheduler", c.scheduler);
    r.get("run", "scenario", c.scenario);
    r.get("run", "duration", c.duration);
    r.get("run", "seed", c.seed);
    r.get("run", "trace", c.trace);
    r.get("run", "video_id", c.video_id);
    r.get("run", "attack_start", c.attack_start);

    detail::read_path(r, "cellular", c.net.cellular);
    detail::read_path(r, "wifi", c.net.wifi);
    std::uint64_t cwnd = c.net.cwnd / kKiB, rwnd = c.net.rwnd / kKiB, burst = c.net.burst_cap / kKiB;
    double min_rto_ms = c.net.min_rto * 1e3;
    r.get("net", "cwnd_kib", cwnd);
    r.get("net", "rwnd_kib", rwnd);
    r.get("net", "burst_cap_kib", burst);
    r.get("net", "min_rto_ms", min_rto_ms);
    c.net.cwnd = cwnd * kKiB;
    c.net.rwnd = rwnd * kKiB;
    c.net.burst_cap = burst * kKiB;
    c.net.min_rto = min_rto_ms / 1e3;

    r.get("manager", "interval", c.manager.interval);
    r.get("manager", "p_min", c.manager.p_min);
    r.get("manager", "p_max", c.manager.p_max);
    r.get("manager", "cellular_remote_id", c.manager.cellular_remote_id);
    c.net.cellular_ids.remote_id = c.manager.cellular_remote_id;

    r.get("detector", "enabled", c.detector_enabled);
    r.get("detector", "interval", c.detector.interval);
    r.get("detector", "threshold", c.detector.threshold);
    r.get("detector", "seed", c.detector.seed);
    r.get("detector", "primary_model", c.primary_model);
    r.get("detector", "secondary_model", c.secondary_model);
    r.get("detector", "train_reps", c.detector_training.reps);
    r.get("detector", "train_duration", c.detector_training.duration);
    r.get("detector", "attack_start_max", c.detector_training.attack_start_max);
    detail::read_model(r, "detector", c.detector_training.model);
    c.detector.desk = c.detector_training.model.desk;
    r.get("detector", "delay_launches", c.delay.launches);
    r.get("detector", "delay_duration", c.delay.duration);
    r.get("detector", "delay_start_min", c.delay.attack_start_min);
    r.get("detector", "delay_start_max", c.delay.attack_start_max);

    double median_mib = c.library.chunk_median / static_cast<double>(kMiB);
    r.get("workloads", "video_count", c.library.videos);
    r.get("workloads", "chunk_median_mib", median_mib);
    r.get("workloads", "chunk_sigma", c.library.chunk_sigma);
    r.get("workloads", "chunk_interval", c.library.interval);
    r.get("workloads", "coverage", c.library.coverage);
    r.get("workloads", "library_seed", c.library.seed);
    r.get("workloads", "play_jitter", c.play_jitter);
    c.library.chunk_median = median_mib * static_cast<double>(kMiB);
    std::uint64_t file_kib = c.attacker.file_bytes / kKiB, signal_kib = c.attacker.signal_bytes / kKiB;
    r.get("workloads", "attacker_period", c.attacker.period);
    r.get("workloads", "attacker_file_kib", file_kib);
    r.get("workloads", "attacker_signal_kib", signal_kib);
    c.attacker.file_bytes = file_kib * kKiB;
    c.attacker.signal_bytes = signal_kib * kKiB;
    double voice_ms = c.voice.period * 1e3, vc_mbps = c.videocall.bitrate / 1e6;
    r.get("workloads", "voice_period_ms", voice_ms);
    r.get("workloads", "voice_bytes", c.voice.frame_bytes);
    r.get("workloads", "videocall_mbps", vc_mbps);
    r.get("workloads", "videocall_jitter", c.videocall.jitter);
    r.get("workloads", "web_bytes", c.web_bytes);
    c.voice.period = voice_ms / 1e3;
    c.videocall.bitrate = vc_mbps * 1e6;

    r.get("video", "plays", c.video.plays);
    r.get("video", "windows", c.video.windows);
    r.get("video", "top_k", c.video.top_k);
    r.get("video", "feature_bin_ms", c.video.feature_bin_ms);
    r.get("video", "folds", c.video.folds);
    r.get("video", "schedulers", c.video.schedulers);
    detail::read_model(r, "video", c.video.model);

    r.get("user", "reps", c.user.reps);
    r.get("user", "duration", c.user.duration);
    r.get("user", "segment", c.user.segment);
    r.get("user", "warmup", c.user.warmup);
    r.get("user", "feature_bin_ms", c.user.feature_bin_ms);
    r.get("user", "folds", c.user.folds);
    r.get("user", "schedulers", c.user.schedulers);
    detail::read_model(r, "user", c.user.model);

    r.get("perf", "schedulers", c.perf.schedulers);
    r.get("perf", "saturated_duration", c.perf.saturated_duration);
    r.get("perf", "web_accesses", c.perf.web_accesses);
    r.get("perf", "web_timeout", c.perf.web_timeout);

    r.get("outputs", "dir", c.output_dir);
    r.get("outputs", "detection_log", c.detection_log);
    r.get("outputs", "trace_csv", c.trace_csv);
    r.get("outputs", "dataset_dir", c.dataset_dir);

    r.check_unknown();
    c.validate();
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    return parse_config(in);
}

namespace detail {
inline Json scheduler_list(const std::vector<SchedulerKind>& v) {
    Json a = Json::array();
    for (auto k : v) a.push_back(std::string(to_string(k)));
    return a;
}
inline Json model_json(const ModelHyper& m) {
    return {{"epochs", m.train.epochs},
            {"learning_rate", m.train.learning_rate},
            {"batch_size", m.train.batch_size},
            {"optimizer", m.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
            {"profile", m.desk ? "desk" : "full"}};
}
inline Json path_json(const PathModel& p) {
    return {{"delay_ms", p.one_way_delay * 1e3},
            {"bandwidth_mbps", p.bandwidth * 8.0 / 1e6},
            {"loss", p.loss_rate},
            {"mtu", p.mtu}};
}
}  // namespace detail

/// Config echo for reports.
inline Json config_json(const RunConfig& c) {
    using detail::model_json;
    using detail::scheduler_list;
    return {
        {"run",
         {{"scheduler", std::string(to_string(c.scheduler))},
          {"scenario", c.scenario},
          {"duration", c.duration},
          {"seed", c.seed},
          {"trace", c.trace},
          {"video_id", c.video_id},
          {"attack_start", c.attack_start}}},
        {"cellular", detail::path_json(c.net.cellular)},
        {"wifi", detail::path_json(c.net.wifi)},
        {"net",
         {{"cwnd_kib", c.net.cwnd / kKiB},
          {"rwnd_kib", c.net.rwnd / kKiB},
          {"burst_cap_kib", c.net.burst_cap / kKiB},
          {"min_rto_ms", c.net.min_rto * 1e3}}},
        {"manager",
         {{"interval", c.manager.interval},
          {"p_min", c.manager.p_min},
          {"p_max", c.manager.p_max},
          {"cellular_remote_id", c.manager.cellular_remote_id}}},
        {"detector",
         {{"enabled", c.detector_enabled},
          {"interval", c.detector.interval},
          {"threshold", c.detector.threshold},
          {"seed", c.detector.seed},
          {"train_reps", c.detector_training.reps},
          {"train_duration", c.detector_training.duration},
          {"attack_start_max", c.detector_training.attack_start_max},
          {"model", model_json(c.detector_training.model)},
          {"delay_launches", c.delay.launches},
          {"delay_duration", c.delay.duration},
          {"delay_start_min", c.delay.attack_start_min},
          {"delay_start_max", c.delay.attack_start_max}}},
        {"workloads",
         {{"video_count", c.library.videos},
          {"chunk_median_mib", c.library.chunk_median / static_cast<double>(kMiB)},
          {"chunk_sigma", c.library.chunk_sigma},
          {"chunk_interval", c.library.interval},
          {"coverage", c.library.coverage},
          {"library_seed", c.library.seed},
          {"play_jitter", c.play_jitter},
          {"attacker_period", c.attacker.period},
          {"attacker_file_kib", c.attacker.file_bytes / kKiB},
          {"attacker_signal_kib", c.attacker.signal_bytes / kKiB},
          {"voice_period_ms", c.voice.period * 1e3},
          {"voice_bytes", c.voice.frame_bytes},
          {"videocall_mbps", c.videocall.bitrate / 1e6},
          {"videocall_jitter", c.videocall.jitter},
          {"web_bytes", c.web_bytes}}},
        {"video",
         {{"plays", c.video.plays},
          {"windows", c.video.windows},
          {"top_k", c.video.top_k},
          {"feature_bin_ms", c.video.feature_bin_ms},
          {"folds", c.video.folds},
          {"schedulers", scheduler_list(c.video.schedulers)},
          {"model", model_json(c.video.model)}}},
        {"user",
         {{"reps", c.user.reps},
          {"duration", c.user.duration},
          {"segment", c.user.segment},
          {"warmup", c.user.warmup},
          {"feature_bin_ms", c.user.feature_bin_ms},
          {"folds", c.user.folds},
          {"schedulers", scheduler_list(c.user.schedulers)},
          {"model", model_json(c.user.model)}}},
        {"perf",
         {{"schedulers", scheduler_list(c.perf.schedulers)},
          {"saturated_duration", c.perf.saturated_duration},
          {"web_accesses", c.perf.web_accesses},
          {"web_timeout", c.perf.web_timeout}}},
    };
}

// ===== One simulation =====

/// Everything needed for one deterministic run.
struct SimulationSpec {
    SchedulerKind scheduler = SchedulerKind::Saflo;
    NetConfig net;
    ManagerConfig manager;
    std::vector<WorkloadKind> workloads;
    double duration = 60.0;
    std::uint64_t seed = 1;

    double attack_start = 0.0;
    AttackerParams attacker;
    const VideoSignature* video = nullptr;
    double video_jitter = 0.0;
    VoiceParams voice;
    VideoCallParams videocall;
    std::uint64_t web_bytes = kWebPageBytes;

    /// Both set: detector runs in the loop and reports to the manager.
    const Cnn<double>* primary = nullptr;
    const Cnn<double>* secondary = nullptr;
    DetectorConfig detector;
    /// Keep the per-token windows the detector sees at each of its ticks.
    bool collect_detector_windows = false;

    std::string detection_log_path;
};

enum class TokenRole { AttackerFile, AttackerSignal, Video, Voice, VideoCall, Web, Saturated };

inline std::string_view to_string(TokenRole r) {
    switch (r) {
        case TokenRole::AttackerFile: return "attacker-file";
        case TokenRole::AttackerSignal: return "attacker-signal";
        case TokenRole::Video: return "video";
        case TokenRole::Voice: return "voice";
        case TokenRole::VideoCall: return "videocall";
        case TokenRole::Web: return "web";
        case TokenRole::Saturated: return "saturated";
    }
    return "?";
}

struct DetectorWindow {
    SimTime time = 0;
    std::vector<TrafficTrace> traces;
};

struct SimulationResult {
    SimTime end = 0;
    PerfMetrics metrics;
    std::vector<TraceRow> trace;
    std::vector<DetectionRecord> log;
    std::map<Token, TokenRole> roles;
    std::map<Token, ConnectionStats> stats;
    std::optional<SimTime> attack_start;
    /// Time from attack start until the manager first marked an attacker
    /// subflow unsafe.
    std::optional<double> detection_delay;
    std::set<Token> reported;
    std::vector<DetectorWindow> detector_windows;
    std::uint64_t cellular_bytes = 0;  ///< bytes handed to the cellular link
    std::uint64_t manager_ticks = 0;

    std::optional<Token> token_with(TokenRole r) const {
        for (const auto& [t, role] : roles)
            if (role == r) return t;
        return std::nullopt;
    }
};

inline SimulationResult simulate(const SimulationSpec& spec) {
    if (!(spec.duration > 0.0)) throw ConfigError("simulation duration must be > 0");
    const bool saflo = spec.scheduler == SchedulerKind::Saflo;
    const bool detector_on = saflo && spec.primary && spec.secondary;
    if ((spec.primary == nullptr) != (spec.secondary == nullptr))
        throw ConfigError("detector needs both a primary and a secondary model");

    ControlMap cmap;
    DetectionMap dmap;
    SharedReport report;
    DetectionLog log = spec.detection_log_path.empty() ? DetectionLog() : DetectionLog(spec.detection_log_path);
    Simulator sim(spec.net, spec.scheduler, mix_seed(spec.seed, 0), &cmap, &dmap);
    const SimTime end = from_seconds(spec.duration);

    SimulationResult res;
    res.end = end;
    auto open = [&](TokenRole role) {
        const Token t = sim.open_connection();
        res.roles[t] = role;
        return t;
    };
    auto submit_all = [&](Token t, const std::vector<AppSend>& sends, SimTime offset) {
        for (const auto& s : sends)
            if (s.time + offset < end) sim.submit(t, s.time + offset, s.bytes);
    };

    Rng workload_rng(mix_seed(spec.seed, 4));
    for (auto kind : spec.workloads) {
        switch (kind) {
            case WorkloadKind::Attacker: {
                const SimTime start = from_seconds(spec.attack_start);
                if (start >= end) throw ConfigError("attack_start beyond run duration");
                res.attack_start = start;
                const auto streams = gen_attacker(spec.duration - spec.attack_start, spec.attacker);
                submit_all(open(TokenRole::AttackerFile), streams.file, start);
                submit_all(open(TokenRole::AttackerSignal), streams.signal, start);
                break;
            }
            case WorkloadKind::Video: {
                if (!spec.video) throw ConfigError("video workload without a signature");
                Rng jr(mix_seed(spec.seed, 5));
                submit_all(open(TokenRole::Video), gen_video(*spec.video, spec.duration, spec.video_jitter, &jr), 0);
                break;
            }
            case WorkloadKind::Voice: submit_all(open(TokenRole::Voice), gen_voice(spec.duration, spec.voice), 0); break;
            case WorkloadKind::VideoCall:
                submit_all(open(TokenRole::VideoCall), gen_videocall(spec.duration, workload_rng, spec.videocall), 0);
                break;
            case WorkloadKind::Web: {
                const Token t = open(TokenRole::Web);
                submit_all(t, gen_web(spec.web_bytes), 0);
                sim.close_when_done(t);
                break;
            }
            case WorkloadKind::Saturated: sim.saturate(open(TokenRole::Saturated), 0, end); break;
        }
    }

    std::optional<SubflowManager> manager;
    std::optional<AttackDetector> detector;
    if (saflo) {
        manager.emplace(spec.manager, mix_seed(spec.seed, 3));
        sim.add_ticker(EventPriority::ManagerTick, from_seconds(spec.manager.interval), [&](SimTime now) {
            const SimTime next = manager->tick(now, cmap, dmap, report, sim.live_tokens(), log);
            if (res.attack_start && !res.detection_delay) {
                for (const auto& [key, e] : cmap.entries()) {
                    const auto it = res.roles.find(key.token);
                    if (it == res.roles.end() || e.safe) continue;
                    if (it->second == TokenRole::AttackerFile || it->second == TokenRole::AttackerSignal) {
                        res.detection_delay = to_seconds(now - *res.attack_start);
                        break;
                    }
                }
            }
            return next;
        });
        if (detector_on) detector.emplace(spec.detector, *spec.primary, *spec.secondary);
        if (detector_on || spec.collect_detector_windows) {
            sim.add_ticker(EventPriority::DetectorTick, from_seconds(spec.detector.interval), [&](SimTime now) {
                if (spec.collect_detector_windows) res.detector_windows.push_back({now, preprocess(log.records(), now)});
                if (detector) return detector->tick(now, log.records(), report);
                return now + from_seconds(spec.detector.interval);
            });
        }
    }

    sim.run_until(end);

    res.metrics = sim.metrics(end);
    res.log = log.records();
    res.reported = report.compromised;
    if (spec.net.trace) res.trace = sim.trace();
    for (Token t : sim.tokens()) {
        res.stats[t] = sim.stats(t);
        res.cellular_bytes += sim.stats(t).sent_bytes[0];
    }
    if (manager) res.manager_ticks = manager->ticks();
    return res;
}

/// Simulation spec for the run-level config fields.
inline SimulationSpec base_spec(const RunConfig& cfg, SchedulerKind kind, std::uint64_t seed) {
    SimulationSpec s;
    s.scheduler = kind;
    s.net = cfg.net;
    s.manager = cfg.manager;
    s.seed = seed;
    s.attacker = cfg.attacker;
    s.voice = cfg.voice;
    s.videocall = cfg.videocall;
    s.web_bytes = cfg.web_bytes;
    s.video_jitter = cfg.play_jitter;
    s.detector = cfg.detector;
    return s;
}

inline Json metrics_json(const PerfMetrics& m) {
    return {{"throughput_Bps", m.throughput},
            {"retransmissions", m.retransmissions},
            {"out_of_order", m.out_of_order},
            {"completion_time_s", m.completion_time}};
}

inline Json report_header(const char* experiment, const RunConfig& cfg, std::uint64_t seed) {
    return {{"schema_version", kReportSchemaVersion},
            {"tool_version", kToolVersion},
            {"experiment", experiment},
            {"seed", seed},
            {"config", config_json(cfg)},
            {"failures", Json::array()}};
}

inline void record_failure(Json& report, const std::string& where, const std::exception& e) {
    report["failures"].push_back({{"cell", where}, {"reason", e.what()}});
}

inline bool report_ok(const Json& report) {
    return !report.contains("failures") || report["failures"].empty();
}

// ===== Detector training =====

struct DetectorModels {
    Cnn<double> primary;
    Cnn<double> secondary;
    Json metrics;
};

struct DetectorSample {
    std::vector<double> values;
    TokenRole role;
    int scenario;
    std::uint64_t run_id;
};

/// Per-token detector windows from Saflo runs of the seven scenarios, attack
/// launched at a random offset.
inline std::vector<DetectorSample> detector_samples(const RunConfig& cfg, std::uint64_t seed) {
    const VideoLibrary library(cfg.library);
    std::vector<DetectorSample> out;
    for (int scenario = 1; scenario <= 7; ++scenario) {
        for (std::size_t rep = 0; rep < cfg.detector_training.reps; ++rep) {
            const std::uint64_t run_id = static_cast<std::uint64_t>(scenario) * 1000 + rep;
            const std::uint64_t run_seed = mix_seed(mix_seed(seed, 0xDE7), run_id);
            Rng rng(run_seed);
            SimulationSpec s = base_spec(cfg, SchedulerKind::Saflo, run_seed);
            s.workloads = compose_scenario(scenario);
            s.duration = cfg.detector_training.duration;
            s.attack_start = rng.uniform(0.0, cfg.detector_training.attack_start_max);
            s.video = &library.video(rng.uniform_int(library.size()));
            s.collect_detector_windows = true;
            const auto r = simulate(s);
            for (const auto& w : r.detector_windows)
                for (const auto& tr : w.traces) {
                    const TokenRole role = r.roles.at(tr.token);
                    // Attacker windows that straddle the launch are ambiguous; keep only fully covered ones.
                    const bool attacker = role == TokenRole::AttackerFile || role == TokenRole::AttackerSignal;
                    if (attacker && w.time < *r.attack_start + kTraceWindow) continue;
                    out.push_back({tr.values, role, scenario, run_id});
                }
        }
    }
    return out;
}

inline DetectorModels train_detector(const RunConfig& cfg, std::uint64_t seed) {
    const auto samples = detector_samples(cfg, seed);
    // Primary: file socket vs everything else. Secondary: signal socket vs
    // benign sockets (file windows excluded).
    AttackDataset primary_ds, secondary_ds;
    for (const auto& s : samples) {
        AttackSample a;
        a.input = s.values;
        a.stratum = s.scenario;
        a.run_id = s.run_id;
        a.scenario = s.scenario;
        a.scheduler = "saflo";
        a.label = s.role == TokenRole::AttackerFile ? 1 : 0;
        primary_ds.samples.push_back(a);
        if (s.role != TokenRole::AttackerFile) {
            a.label = s.role == TokenRole::AttackerSignal ? 1 : 0;
            secondary_ds.samples.push_back(std::move(a));
        }
    }
    Rng split_rng(mix_seed(seed, 0x5B1));
    const auto psplit = split_dataset(primary_ds, 0.8, split_rng);
    const auto ssplit = split_dataset(secondary_ds, 0.8, split_rng);
    const auto topo = cfg.detector.desk ? CnnTopology::desk(kTraceBins) : CnnTopology::full(kTraceBins);

    auto fit = [&](const AttackDataset& ds, const DatasetSplit& sp, std::uint64_t salt, Json& m) {
        const auto train = subset(ds, sp.train);
        const auto test = subset(ds, sp.test);
        Rng rng(mix_seed(cfg.detector.seed ^ seed, salt));
        auto model = cnn_train(train, topo, cfg.detector_training.model.train, rng);
        std::size_t hit = 0, tp = 0, fp = 0, pos = 0, neg = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            const bool flag = model.score(test.inputs[i]) > cfg.detector.threshold;
            const bool truth = test.labels[i] == 1;
            hit += flag == truth;
            (truth ? pos : neg) += 1;
            tp += flag && truth;
            fp += flag && !truth;
        }
        m = {{"train_windows", train.size()},
             {"test_windows", test.size()},
             {"test_accuracy", test.size() ? static_cast<double>(hit) / static_cast<double>(test.size()) : 0.0},
             {"test_tpr", pos ? static_cast<double>(tp) / static_cast<double>(pos) : 0.0},
             {"test_fpr", neg ? static_cast<double>(fp) / static_cast<double>(neg) : 0.0}};
        return model;
    };
    Json pm, sm;
    auto primary = fit(primary_ds, psplit, 1, pm);
    auto secondary = fit(secondary_ds, ssplit, 2, sm);
    return {std::move(primary), std::move(secondary), {{"primary", pm}, {"secondary", sm}}};
}

/// Loads the configured models, or trains them when no paths are set or the
/// files do not exist yet (and saves them if paths are set).
inline DetectorModels obtain_detector(const RunConfig& cfg, std::uint64_t seed) {
    const bool have_paths = !cfg.primary_model.empty() && !cfg.secondary_model.empty();
    if (have_paths && std::filesystem::exists(cfg.primary_model) && std::filesystem::exists(cfg.secondary_model)) {
        DetectorModels m{load_model_file<double>(cfg.primary_model), load_model_file<double>(cfg.secondary_model),
                         {{"loaded_from", {cfg.primary_model, cfg.secondary_model}}}};
        return m;
    }
    auto m = train_detector(cfg, seed);
    if (have_paths) {
        save_model_file(cfg.primary_model, m.primary);
        save_model_file(cfg.secondary_model, m.secondary);
    }
    return m;
}

// ===== Experiments =====

/// Single run from the [run] section.
inline Json run_single(const RunConfig& cfg, std::uint64_t seed, const DetectorModels* models = nullptr) {
    Json rep = report_header("run", cfg, seed);
    const VideoLibrary library(cfg.library);
    SimulationSpec s = base_spec(cfg, cfg.scheduler, seed);
    s.workloads = compose_scenario_or_idle(cfg.scenario);
    s.duration = cfg.duration;
    s.attack_start = cfg.attack_start;
    s.video = &library.video(cfg.video_id);
    s.net.trace = cfg.trace || !cfg.trace_csv.empty();
    s.detection_log_path = cfg.detection_log;
    if (models && cfg.scheduler == SchedulerKind::Saflo) {
        s.primary = &models->primary;
        s.secondary = &models->secondary;
    }
    const auto r = simulate(s);
    if (!cfg.trace_csv.empty()) {
        make_parent_dirs(cfg.trace_csv);
        std::ofstream os(cfg.trace_csv);
        if (!os) throw IoError("cannot write trace " + cfg.trace_csv);
        write_trace_csv(os, r.trace);
    }
    Json conns = Json::array();
    for (const auto& [t, st] : r.stats)
        conns.push_back({{"token", t},
                         {"role", std::string(to_string(r.roles.at(t)))},
                         {"submitted", st.submitted},
                         {"delivered", st.delivered},
                         {"cellular_bytes", st.sent_bytes[0]},
                         {"wifi_bytes", st.sent_bytes[1]},
                         {"retransmissions", st.retransmissions},
                         {"out_of_order", st.out_of_order}});
    rep["run"] = {{"run_id", 0},
                  {"scheduler", std::string(to_string(cfg.scheduler))},
                  {"scenario", cfg.scenario},
                  {"seed", seed},
                  {"metrics", metrics_json(r.metrics)},
                  {"connections", conns},
                  {"detection_log_records", r.log.size()},
                  {"cellular_bytes", r.cellular_bytes},
                  {"detector_enabled", s.primary != nullptr},
                  {"reported_tokens", r.reported},
                  {"detection_delay_s", r.detection_delay ? Json(*r.detection_delay) : Json(nullptr)}};
    if (models) rep["detector"] = models->metrics;
    return rep;
}

/// One labelled observation per play; one classifier per (scheduler, window, fold).
inline AttackDataset video_dataset(const RunConfig& cfg, SchedulerKind kind, double window, std::uint64_t seed,
                                   double max_window) {
    const VideoLibrary library(cfg.library);
    AttackDataset ds;
    ds.classes = library.size();
    const auto bin = static_cast<SimTime>(std::llround(cfg.video.feature_bin_ms * static_cast<double>(kNsPerMs)));
    for (std::size_t v = 0; v < library.size(); ++v) {
        for (std::size_t p = 0; p < cfg.video.plays; ++p) {
            const std::uint64_t run_id = v * cfg.video.plays + p;
            const std::uint64_t run_seed = mix_seed(mix_seed(seed, 0x71D), run_id);
            SimulationSpec s = base_spec(cfg, kind, run_seed);
            s.workloads = {WorkloadKind::Video};
            s.video = &library.video(v);
            s.duration = max_window;
            s.net.trace = true;
            const auto r = simulate(s);
            const auto obs = observe(r.trace, 0, from_seconds(window), r.end);
            AttackSample a;
            a.input = observation_features(obs, bin);
            a.label = static_cast<int>(v);
            a.stratum = a.label;
            a.run_id = run_id;
            a.scheduler = std::string(to_string(kind));
            a.seed = run_seed;
            a.window_end = from_seconds(window);
            ds.samples.push_back(std::move(a));
        }
    }
    return ds;
}

inline Json experiment_video(const RunConfig& cfg, std::uint64_t seed) {
    Json rep = report_header("video-attack", cfg, seed);
    rep["rows"] = Json::array();
    const double max_window = *std::max_element(cfg.video.windows.begin(), cfg.video.windows.end());
    for (auto kind : cfg.video.schedulers) {
        for (double window : cfg.video.windows) {
            const std::string cell = std::string(to_string(kind)) + "@" + std::to_string(window);
            try {
                const auto ds = video_dataset(cfg, kind, window, seed, max_window);
                if (!cfg.dataset_dir.empty())
                    write_dataset(std::filesystem::path(cfg.dataset_dir) /
                                      ("video_" + std::string(to_string(kind)) + "_" +
                                       std::to_string(static_cast<int>(window))),
                                  ds, static_cast<SimTime>(cfg.video.feature_bin_ms * kNsPerMs));
                const auto cv = cross_validate(
                    ds, cfg.video.folds, cfg.video.top_k, mix_seed(seed, 0x5F1),
                    [&](const LabeledSet<double>& train, Rng& rng) {
                        return train_video_attack(train, ds.classes, cfg.video.model.train, cfg.video.model.desk, rng);
                    });
                for (std::size_t k = 1; k <= cfg.video.top_k; ++k)
                    rep["rows"].push_back({{"scheduler", std::string(to_string(kind))},
                                           {"window", window},
                                           {"k", k},
                                           {"accuracy", cv.topk[k - 1]},
                                           {"folds", cv.folds},
                                           {"test_windows", cv.test_windows}});
            } catch (const std::exception& e) {
                record_failure(rep, cell, e);
            }
        }
    }
    return rep;
}

/// User-ID variant: a scheduler, plus for Saflo whether the detector runs.
struct UserVariant {
    std::string name;
    SchedulerKind kind;
    bool detector;
};

inline std::vector<UserVariant> user_variants(const UserExperimentConfig& u) {
    std::vector<UserVariant> v{{"saflo-before", SchedulerKind::Saflo, false}, {"saflo-after", SchedulerKind::Saflo, true}};
    for (auto k : u.schedulers)
        if (k != SchedulerKind::Saflo) v.push_back({std::string(to_string(k)), k, false});
    return v;
}

struct UserRunOutput {
    AttackDataset dataset;
    std::vector<double> delays;  ///< detection delays of attacker runs
    std::size_t attacker_runs = 0;
    std::size_t detected_runs = 0;
    std::size_t benign_runs_flagged = 0;
    std::size_t benign_runs = 0;
};

inline UserRunOutput user_dataset(const RunConfig& cfg, const UserVariant& var, std::uint64_t seed,
                                  const DetectorModels* models) {
    const VideoLibrary library(cfg.library);
    UserRunOutput out;
    const auto bin = static_cast<SimTime>(std::llround(cfg.user.feature_bin_ms * static_cast<double>(kNsPerMs)));
    for (int scenario = 0; scenario <= 7; ++scenario) {
        for (std::size_t rep = 0; rep < cfg.user.reps; ++rep) {
            const std::uint64_t run_id = static_cast<std::uint64_t>(scenario) * 1000 + rep;
            const std::uint64_t run_seed = mix_seed(mix_seed(seed, 0x05E), run_id);
            Rng rng(run_seed);
            SimulationSpec s = base_spec(cfg, var.kind, run_seed);
            s.workloads = compose_scenario_or_idle(scenario);
            s.duration = cfg.user.duration;
            s.video = &library.video(rng.uniform_int(library.size()));
            s.net.trace = true;
            if (var.detector) {
                if (!models) throw ConfigError("saflo-after needs detector models");
                s.primary = &models->primary;
                s.secondary = &models->secondary;
            }
            const auto r = simulate(s);
            const bool attacker = scenario_has_attacker(scenario);
            if (var.detector) {
                if (attacker) {
                    ++out.attacker_runs;
                    if (r.detection_delay) {
                        ++out.detected_runs;
                        out.delays.push_back(*r.detection_delay);
                    }
                } else {
                    ++out.benign_runs;
                    out.benign_runs_flagged += !r.reported.empty();
                }
            }
            for (double t = cfg.user.warmup; t + cfg.user.segment <= cfg.user.duration + 1e-9; t += cfg.user.segment) {
                const auto obs = observe(r.trace, from_seconds(t), from_seconds(t + cfg.user.segment), r.end);
                AttackSample a;
                a.input = observation_features(obs, bin);
                a.label = attacker ? 1 : 0;
                a.stratum = scenario;
                a.run_id = run_id;
                a.scenario = scenario;
                a.scheduler = var.name;
                a.seed = run_seed;
                a.window_start = from_seconds(t);
                a.window_end = from_seconds(t + cfg.user.segment);
                out.dataset.samples.push_back(std::move(a));
            }
        }
    }
    return out;
}

inline double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Detection delay over repeated attack launches at random offsets, with
/// background traffic drawn from the attacker scenarios.
inline Json experiment_delay(const RunConfig& cfg, std::uint64_t seed, const DetectorModels& models) {
    const VideoLibrary library(cfg.library);
    std::vector<double> delays;
    Json samples = Json::array();
    std::size_t missed = 0;
    for (std::size_t i = 0; i < cfg.delay.launches; ++i) {
        const int scenario = 1 + 2 * static_cast<int>(i % 4);
        const std::uint64_t run_seed = mix_seed(mix_seed(seed, 0xDE1), i);
        Rng rng(run_seed);
        SimulationSpec s = base_spec(cfg, SchedulerKind::Saflo, run_seed);
        s.workloads = compose_scenario(scenario);
        s.duration = cfg.delay.duration;
        s.attack_start = rng.uniform(cfg.delay.attack_start_min, cfg.delay.attack_start_max);
        s.video = &library.video(rng.uniform_int(library.size()));
        s.primary = &models.primary;
        s.secondary = &models.secondary;
        const auto r = simulate(s);
        if (r.detection_delay) delays.push_back(*r.detection_delay);
        else ++missed;
        samples.push_back({{"launch", i},
                           {"scenario", scenario},
                           {"seed", run_seed},
                           {"attack_start_s", s.attack_start},
                           {"delay_s", r.detection_delay ? Json(*r.detection_delay) : Json(nullptr)}});
    }
    return {{"launches", cfg.delay.launches},
            {"detected", delays.size()},
            {"missed", missed},
            {"mean_delay_s", mean_of(delays)},
            {"samples", samples}};
}

inline Json experiment_user(const RunConfig& cfg, std::uint64_t seed, const DetectorModels& models) {
    Json rep = report_header("user-attack", cfg, seed);
    rep["rows"] = Json::array();
    rep["detector"] = models.metrics;
    for (const auto& var : user_variants(cfg.user)) {
        try {
            auto out = user_dataset(cfg, var, seed, &models);
            if (!cfg.dataset_dir.empty())
                write_dataset(std::filesystem::path(cfg.dataset_dir) / ("user_" + var.name), out.dataset,
                              static_cast<SimTime>(cfg.user.feature_bin_ms * kNsPerMs));
            const auto cv = cross_validate(out.dataset, cfg.user.folds, 1, mix_seed(seed, 0x5F2),
                                           [&](const LabeledSet<double>& train, Rng& rng) {
                                               return train_user_attack(train, cfg.user.model.train,
                                                                        cfg.user.model.desk, rng);
                                           });
            Json row = {{"scheduler", var.name},
                        {"accuracy", cv.topk[0]},
                        {"folds", cv.folds},
                        {"test_windows", cv.test_windows}};
            if (var.detector) {
                row["attacker_runs"] = out.attacker_runs;
                row["detected_runs"] = out.detected_runs;
                row["mean_detection_delay_s"] = mean_of(out.delays);
                row["benign_runs"] = out.benign_runs;
                row["benign_runs_flagged"] = out.benign_runs_flagged;
            }
            rep["rows"].push_back(row);
        } catch (const std::exception& e) {
            record_failure(rep, var.name, e);
        }
    }
    try {
        rep["delay"] = experiment_delay(cfg, seed, models);
    } catch (const std::exception& e) {
        record_failure(rep, "delay", e);
    }
    return rep;
}

inline Json experiment_perf(const RunConfig& cfg, std::uint64_t seed) {
    Json rep = report_header("perf", cfg, seed);
    rep["rows"] = Json::array();
    for (auto kind : cfg.perf.schedulers) {
        const std::string name(to_string(kind));
        try {
            const std::uint64_t sat_seed = mix_seed(mix_seed(seed, 0x9EF), 0);
            SimulationSpec s = base_spec(cfg, kind, sat_seed);
            s.workloads = {WorkloadKind::Saturated};
            s.duration = cfg.perf.saturated_duration;
            const auto sat = simulate(s);

            std::vector<double> completion;
            std::size_t unfinished = 0;
            for (std::size_t i = 0; i < cfg.perf.web_accesses; ++i) {
                const std::uint64_t web_seed = mix_seed(mix_seed(seed, 0x9EF), i + 1);
                SimulationSpec w = base_spec(cfg, kind, web_seed);
                w.workloads = {WorkloadKind::Web};
                w.duration = cfg.perf.web_timeout;
                const auto r = simulate(w);
                const auto& st = r.stats.begin()->second;
                if (st.completed_at) completion.push_back(to_seconds(*st.completed_at - st.opened_at));
                else ++unfinished;
            }
            rep["rows"].push_back({{"scheduler", name},
                                   {"throughput_Bps", sat.metrics.throughput},
                                   {"retransmissions", sat.metrics.retransmissions},
                                   {"out_of_order", sat.metrics.out_of_order},
                                   {"completion_time_s", mean_of(completion)},
                                   {"web_accesses", cfg.perf.web_accesses},
                                   {"web_unfinished", unfinished}});
            if (unfinished) throw std::runtime_error(std::to_string(unfinished) + " web accesses did not finish");
        } catch (const std::exception& e) {
            record_failure(rep, name, e);
        }
    }
    return rep;
}

inline Json detector_report(const RunConfig& cfg, std::uint64_t seed, const DetectorModels& models) {
    Json rep = report_header("train-detector", cfg, seed);
    rep["detector"] = models.metrics;
    rep["topology"] = Json::array();
    for (const auto& l : models.primary.topology().shape_chain())
        rep["topology"].push_back({{"layer", l.name}, {"channels", l.channels}, {"length", l.length}});
    return rep;
}

// ===== Tables =====

/// Flat CSV tables mirroring a report. Returns (file name, contents) pairs.
inline std::vector<std::pair<std::string, std::string>> report_tables(const Json& rep) {
    std::vector<std::pair<std::string, std::string>> out;
    const std::string exp = rep.value("experiment", "");
    std::ostringstream os;
    os.precision(10);
    if (exp == "video-attack") {
        os << "scheduler,window_s,k,accuracy\n";
        for (const auto& r : rep["rows"])
            os << r["scheduler"].get<std::string>() << ',' << r["window"].get<double>() << ','
               << r["k"].get<std::size_t>() << ',' << r["accuracy"].get<double>() << '\n';
        out.emplace_back("video_attack.csv", os.str());
    } else if (exp == "user-attack") {
        os << "scheduler,accuracy\n";
        for (const auto& r : rep["rows"])
            os << r["scheduler"].get<std::string>() << ',' << r["accuracy"].get<double>() << '\n';
        out.emplace_back("user_attack.csv", os.str());
        std::ostringstream d;
        d.precision(10);
        d << "metric,value\n";
        if (rep.contains("delay")) d << "mean_detection_delay_s," << rep["delay"]["mean_delay_s"].get<double>() << '\n';
        if (rep.contains("detector")) {
            for (const char* which : {"primary", "secondary"})
                if (rep["detector"].contains(which) && rep["detector"][which].contains("test_accuracy"))
                    d << which << "_accuracy," << rep["detector"][which]["test_accuracy"].get<double>() << '\n';
        }
        out.emplace_back("detector.csv", d.str());
    } else if (exp == "perf") {
        os << "scheduler,throughput_Bps,retransmissions,out_of_order,completion_time_s\n";
        for (const auto& r : rep["rows"])
            os << r["scheduler"].get<std::string>() << ',' << r["throughput_Bps"].get<double>() << ','
               << r["retransmissions"].get<std::uint64_t>() << ',' << r["out_of_order"].get<std::uint64_t>() << ','
               << r["completion_time_s"].get<double>() << '\n';
        out.emplace_back("perf.csv", os.str());
    } else if (exp == "train-detector") {
        os << "classifier,test_accuracy,test_tpr,test_fpr\n";
        for (const char* which : {"primary", "secondary"}) {
            const auto& m = rep["detector"][which];
            if (!m.contains("test_accuracy")) continue;
            os << which << ',' << m["test_accuracy"].get<double>() << ',' << m["test_tpr"].get<double>() << ','
               << m["test_fpr"].get<double>() << '\n';
        }
        out.emplace_back("detector.csv", os.str());
    } else if (exp == "run") {
        const auto& m = rep["run"]["metrics"];
        os << "scheduler,scenario,throughput_Bps,retransmissions,out_of_order,completion_time_s,detection_delay_s\n";
        os << rep["run"]["scheduler"].get<std::string>() << ',' << rep["run"]["scenario"].get<int>() << ','
           << m["throughput_Bps"].get<double>() << ',' << m["retransmissions"].get<std::uint64_t>() << ','
           << m["out_of_order"].get<std::uint64_t>() << ',' << m["completion_time_s"].get<double>() << ',';
        if (!rep["run"]["detection_delay_s"].is_null()) os << rep["run"]["detection_delay_s"].get<double>();
        os << '\n';
        out.emplace_back("run.csv", os.str());
    }
    return out;
}

inline void write_report(const std::filesystem::path& dir, const std::string& stem, const Json& rep) {
    std::filesystem::create_directories(dir);
    std::ofstream js(dir / (stem + ".json"));
    if (!js) throw IoError("cannot write " + (dir / (stem + ".json")).string());
    js << rep.dump(2) << '\n';
    for (const auto& [name, body] : report_tables(rep)) {
        std::ofstream f(dir / name);
        if (!f) throw IoError("cannot write " + (dir / name).string());
        f << body;
    }
}

}  // namespace saflo
