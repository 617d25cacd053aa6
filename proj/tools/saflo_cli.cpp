// Command-line front end. Every verb takes a config file and --seed; the exit
// status is 0 only when every run of the verb succeeded.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "saflo/saflo.hpp"

namespace {

using saflo::Json;

int finish(const Json& rep, const saflo::RunConfig& cfg, const std::string& stem) {
    saflo::write_report(cfg.output_dir, stem, rep);
    for (const auto& f : rep["failures"]) std::cerr << "failed: " << f["cell"] << ": " << f["reason"] << '\n';
    std::cout << (std::filesystem::path(cfg.output_dir) / (stem + ".json")).string() << '\n';
    return saflo::report_ok(rep) ? 0 : 1;
}

/// Regenerates the CSV tables of every report JSON in the output directory.
int report(const saflo::RunConfig& cfg) {
    bool ok = true;
    std::size_t n = 0;
    if (!std::filesystem::is_directory(cfg.output_dir)) throw saflo::IoError("no output directory " + cfg.output_dir);
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg.output_dir))
        if (e.path().extension() == ".json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
        std::ifstream in(p);
        Json rep;
        try {
            rep = Json::parse(in);
        } catch (const Json::exception& e) {
            throw saflo::ParseError(p.string() + ": " + e.what());
        }
        if (!rep.contains("schema_version") || rep["schema_version"] != saflo::kReportSchemaVersion) continue;
        ++n;
        for (const auto& [name, body] : saflo::report_tables(rep)) {
            std::ofstream f(std::filesystem::path(cfg.output_dir) / name);
            f << body;
            std::cout << "== " << name << " (" << p.filename().string() << ")\n" << body;
        }
        ok = ok && saflo::report_ok(rep);
    }
    if (n == 0) throw saflo::IoError("no reports found in " + cfg.output_dir);
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Saflo simulator and evaluation harness"};
    app.require_subcommand(1);
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    const char* verbs[] = {"run", "video-attack", "user-attack", "perf", "train-detector", "report"};
    for (const char* v : verbs) {
        auto* sub = app.add_subcommand(v);
        sub->add_option("config", config, "INI config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "experiment seed (overrides run.seed)")
            ->each([&](const std::string&) { seed_given = true; });
    }
    CLI11_PARSE(app, argc, argv);
    const std::string verb = app.get_subcommands().front()->get_name();

    try {
        auto cfg = saflo::load_config(config);
        if (seed_given) cfg.seed = seed;
        const std::uint64_t s = cfg.seed;
        if (verb == "run") {
            std::optional<saflo::DetectorModels> models;
            if (cfg.scheduler == saflo::SchedulerKind::Saflo && cfg.detector_enabled)
                models = saflo::obtain_detector(cfg, s);
            return finish(saflo::run_single(cfg, s, models ? &*models : nullptr), cfg, "run");
        }
        if (verb == "video-attack") return finish(saflo::experiment_video(cfg, s), cfg, "video_attack");
        if (verb == "user-attack") {
            const auto models = saflo::obtain_detector(cfg, s);
            return finish(saflo::experiment_user(cfg, s, models), cfg, "user_attack");
        }
        if (verb == "perf") return finish(saflo::experiment_perf(cfg, s), cfg, "perf");
        if (verb == "train-detector") {
            auto models = saflo::train_detector(cfg, s);
            if (!cfg.primary_model.empty()) saflo::save_model_file(cfg.primary_model, models.primary);
            if (!cfg.secondary_model.empty()) saflo::save_model_file(cfg.secondary_model, models.secondary);
            return finish(saflo::detector_report(cfg, s, models), cfg, "train_detector");
        }
        return report(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
