// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// all eight hold. Usage: saflo_acceptance [config.ini] [--seed N] [--out DIR]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <string>

#include "support/properties.hpp"

using namespace saflo;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    int id;
    bool pass;
    std::string detail;
};

std::vector<Verdict> verdicts;

void verdict(int id, bool pass, const std::string& detail) {
    verdicts.push_back({id, pass, detail});
    std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v, int prec = 4) {
    char b[64];
    std::snprintf(b, sizeof b, "%.*f", prec, v);
    return b;
}

std::string sci(double v) {
    char b[64];
    std::snprintf(b, sizeof b, "%.3e", v);
    return b;
}

double video_acc(const Json& rep, const std::string& sched, std::size_t k) {
    for (const auto& r : rep["rows"])
        if (r["scheduler"] == sched && r["k"] == k) return r["accuracy"].get<double>();
    throw std::runtime_error("no video row for " + sched + " k=" + std::to_string(k));
}

double user_acc(const Json& rep, const std::string& sched) {
    for (const auto& r : rep["rows"])
        if (r["scheduler"] == sched) return r["accuracy"].get<double>();
    throw std::runtime_error("no user row for " + sched);
}

const Json& perf_row(const Json& rep, const std::string& sched) {
    for (const auto& r : rep["rows"])
        if (r["scheduler"] == sched) return r;
    throw std::runtime_error("no perf row for " + sched);
}

// The video and user checks read one window length and the default schedulers.
void require_layout(const RunConfig& cfg) {
    auto has = [](const std::vector<SchedulerKind>& v, SchedulerKind k) {
        return std::find(v.begin(), v.end(), k) != v.end();
    };
    for (auto k : {SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd, SchedulerKind::SingleCell})
        if (!has(cfg.video.schedulers, k)) throw ConfigError("acceptance needs every scheduler in video.schedulers");
    for (auto k : {SchedulerKind::Blest, SchedulerKind::Rd, SchedulerKind::SingleCell})
        if (!has(cfg.user.schedulers, k)) throw ConfigError("acceptance needs blest, rd, single-cell in user.schedulers");
    for (auto k : {SchedulerKind::Saflo, SchedulerKind::Blest, SchedulerKind::Rd, SchedulerKind::SingleCell,
                   SchedulerKind::SingleWifi})
        if (!has(cfg.perf.schedulers, k)) throw ConfigError("acceptance needs every scheduler in perf.schedulers");
    if (cfg.video.top_k < 3) throw ConfigError("acceptance needs video.top_k >= 3");
}

template <class F>
void guarded(int id, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        verdict(id, false, std::string("error: ") + e.what());
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::string config_path, out_dir = "acceptance_results";
    std::uint64_t seed = 1;
    for (int i = 1; i < argc; ++i) {
        if (!std::strcmp(argv[i], "--seed") && i + 1 < argc)
            seed = std::stoull(argv[++i]);
        else if (!std::strcmp(argv[i], "--out") && i + 1 < argc)
            out_dir = argv[++i];
        else
            config_path = argv[i];
    }

    RunConfig cfg;
    try {
        if (!config_path.empty()) cfg = load_config(config_path);
        require_layout(cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    std::printf("acceptance seed=%llu config=%s\n", static_cast<unsigned long long>(seed),
                config_path.empty() ? "(defaults)" : config_path.c_str());
    const double window = cfg.video.windows.front();

    // Experiments, each run twice for the determinism check.
    Json video, video2, user, user2, perf, perf2;
    double video_secs = 0;
    std::string experiment_error;
    try {
        auto t0 = Clock::now();
        video = experiment_video(cfg, seed);
        video_secs = since(t0);
        std::printf("video-attack: %.1f s\n", video_secs);
        write_report(out_dir, "video_attack", video);

        t0 = Clock::now();
        const auto models = obtain_detector(cfg, seed);
        user = experiment_user(cfg, seed, models);
        std::printf("user-attack (with detector training): %.1f s\n", since(t0));
        write_report(out_dir, "user_attack", user);

        t0 = Clock::now();
        perf = experiment_perf(cfg, seed);
        std::printf("perf: %.1f s\n", since(t0));
        write_report(out_dir, "perf", perf);
        std::fflush(stdout);
    } catch (const std::exception& e) {
        experiment_error = e.what();
        std::printf("experiment error: %s\n", e.what());
    }

    guarded(1, [&] {
        if (!report_ok(video)) throw std::runtime_error("video experiment recorded failures");
        const double single = video_acc(video, "single-cell", 1), saflo = video_acc(video, "saflo", 1),
                     blest = video_acc(video, "blest", 1);
        const bool ok = single >= 0.80 && saflo <= 0.35 && saflo < blest && blest < single && video_secs <= 900.0;
        verdict(1, ok,
                "window=" + fmt(window, 0) + "s single-cell=" + fmt(single) + " (>=0.80) saflo=" + fmt(saflo) +
                    " (<=0.35) blest=" + fmt(blest) + " (strictly between) runtime=" + fmt(video_secs, 1) +
                    "s (<=900)");
    });

    guarded(2, [&] {
        if (!report_ok(video)) throw std::runtime_error("video experiment recorded failures");
        const double s1 = video_acc(video, "saflo", 1), r1 = video_acc(video, "rd", 1),
                     b1 = video_acc(video, "blest", 1);
        bool mono = true;
        std::string ks;
        for (const char* sched : {"saflo", "blest", "rd", "single-cell"}) {
            const double a1 = video_acc(video, sched, 1), a2 = video_acc(video, sched, 2),
                         a3 = video_acc(video, sched, 3);
            mono = mono && a1 <= a2 && a2 <= a3;
            ks += std::string(" ") + sched + "=" + fmt(a1, 3) + "/" + fmt(a2, 3) + "/" + fmt(a3, 3);
        }
        verdict(2, s1 < r1 && r1 < b1 && mono,
                "top-1 saflo=" + fmt(s1) + " < rd=" + fmt(r1) + " < blest=" + fmt(b1) + "; top-1/2/3" + ks);
    });

    guarded(3, [&] {
        if (!report_ok(user)) throw std::runtime_error("user experiment recorded failures");
        const double before = user_acc(user, "saflo-before"), after = user_acc(user, "saflo-after"),
                     blest = user_acc(user, "blest"), rd = user_acc(user, "rd"),
                     single = user_acc(user, "single-cell");
        const bool ok = before >= 0.85 && blest >= 0.85 && rd >= 0.85 && single >= 0.85 && after <= 0.70;
        verdict(3, ok,
                "saflo-before=" + fmt(before) + " blest=" + fmt(blest) + " rd=" + fmt(rd) + " single-cell=" +
                    fmt(single) + " (all >=0.85) saflo-after=" + fmt(after) + " (<=0.70)");
    });

    guarded(4, [&] {
        const auto& d = user.at("delay");
        const auto launches = d["launches"].get<std::size_t>(), detected = d["detected"].get<std::size_t>();
        const double mean = d["mean_delay_s"].get<double>();
        const bool ok = launches >= 20 && detected == launches && mean >= 5.0 && mean <= 20.0;
        verdict(4, ok,
                "mean delay=" + fmt(mean, 2) + "s over " + std::to_string(detected) + "/" + std::to_string(launches) +
                    " detected launches (need >=20, all detected, mean in [5, 20])");
    });

    guarded(5, [&] {
        const double p = user.at("detector")["primary"]["test_accuracy"].get<double>();
        const double s = user.at("detector")["secondary"]["test_accuracy"].get<double>();
        const auto g = props::gating_cases();
        verdict(5, p >= 0.90 && s >= 0.75 && g.ok,
                "primary=" + fmt(p) + " (>=0.90) secondary=" + fmt(s) + " (>=0.75) gating " +
                    (g.ok ? "held" : "broke: " + g.detail) + " on " + std::to_string(g.cases) + " crafted cases");
    });

    guarded(6, [&] {
        if (!report_ok(perf)) throw std::runtime_error("perf experiment recorded failures");
        auto thr = [&](const char* s) { return perf_row(perf, s)["throughput_Bps"].get<double>(); };
        const auto ooo_s = perf_row(perf, "saflo")["out_of_order"].get<std::uint64_t>();
        const auto ooo_r = perf_row(perf, "rd")["out_of_order"].get<std::uint64_t>();
        const double w = thr("single-wifi"), sa = thr("saflo"), b = thr("blest"), c = thr("single-cell");
        const bool ok = 2 * ooo_s <= ooo_r && w >= sa && w >= b && sa >= c && b >= c;
        verdict(6, ok,
                "ooo saflo=" + std::to_string(ooo_s) + " rd=" + std::to_string(ooo_r) + " (<=50%); throughput B/s wifi=" +
                    fmt(w, 0) + " saflo=" + fmt(sa, 0) + " blest=" + fmt(b, 0) + " cell=" + fmt(c, 0));
    });

    guarded(7, [&] {
        struct Named {
            const char* name;
            props::Check c;
        };
        const std::vector<Named> suites{
            {"alg1-clamp-monotone", props::alg1_clamp_and_monotone(seed)},
            {"alg1-safe-disabled", props::alg1_safe_implies_disabled(seed)},
            {"alg1-frequency", props::alg1_frequency(seed)},
            {"alg2-argmin", props::alg2_argmin(seed)},
            {"saflo-blest-calls", props::saflo_blest_equivalence(seed)},
            {"saflo-blest-trace", props::saflo_blest_trace_equivalence(seed)},
            {"dmap-log-multiset", props::dmap_log_multiset(seed)},
            {"reassembly-permutations", props::reassembly_permutations(seed)},
        };
        bool ok = true;
        std::string d;
        for (const auto& s : suites) {
            ok = ok && s.c.ok;
            d += std::string(" ") + s.name + "=" + (s.c.ok ? "ok" : "FAIL(" + s.c.detail + ")") + "[" +
                 std::to_string(s.c.cases) + "]";
        }
        ok = ok && suites[4].c.cases >= 1000;
        verdict(7, ok, d.substr(1));
    });

    guarded(8, [&] {
        const std::size_t models = 12;
        const auto g = props::gradient_check(seed, models);
        const auto f = props::forward_reference(seed, models);
        bool det = experiment_error.empty();
        if (det) {
            video2 = experiment_video(cfg, seed);
            const auto models = obtain_detector(cfg, seed);
            user2 = experiment_user(cfg, seed, models);
            perf2 = experiment_perf(cfg, seed);
            det = video.dump() == video2.dump() && user.dump() == user2.dump() && perf.dump() == perf2.dump();
        }
        verdict(8, g.ok && g.worst < 1e-4 && f.ok && f.worst < 1e-6 && det,
                "gradient max rel err=" + sci(g.worst) + " over " + std::to_string(models) + " models / " +
                    std::to_string(g.cases) + " params (<1e-4) forward max dev=" + sci(f.worst) +
                    " (<1e-6) rerun " + (det ? "bit-identical" : "DIFFERS"));
    });

    std::size_t passed = 0;
    for (const auto& v : verdicts) passed += v.pass;
    std::printf("acceptance: %zu/8 criteria pass\n", passed);
    return passed == 8 && verdicts.size() == 8 ? 0 : 1;
}
