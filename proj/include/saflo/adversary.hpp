#pragma once

/**
 * @file adversary.hpp
 * @brief Cellular-side observer and the two classification attacks.
 *
 * The observer sees per-slot volume of the victim's cellular transmissions and
 * nothing of the WiFi path. Observations feed a video classifier (softmax
 * over the library) and a user presence classifier (sigmoid).
 *
 * Dataset archive layout, one directory:
 *   manifest.csv  file,label,stratum,run_id,scheduler,scenario,seed,window_start_ms,window_end_ms
 *   <file>        slot_ms,bytes   one row per classifier input bin
 */

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "saflo/cnn.hpp"
#include "saflo/core.hpp"
#include "saflo/netsim.hpp"

namespace saflo {

inline constexpr SimTime kDciSlot = kNsPerMs;

/// Bytes per 1 ms slot on the cellular path over [t0, t1).
struct DciObservation {
    SimTime t0 = 0;
    SimTime t1 = 0;
    std::vector<double> bytes;

    std::size_t slots() const { return bytes.size(); }
    double total() const {
        double s = 0.0;
        for (double b : bytes) s += b;
        return s;
    }
};

/// Bins cellular departures of a traced run. `run_end` bounds the window.
inline DciObservation observe(std::span<const TraceRow> trace, SimTime t0, SimTime t1, SimTime run_end) {
    if (t1 <= t0) throw std::invalid_argument("observation window is empty");
    if (t1 > run_end) throw std::invalid_argument("observation window exceeds run duration");
    DciObservation obs;
    obs.t0 = t0;
    obs.t1 = t1;
    obs.bytes.assign((t1 - t0 + kDciSlot - 1) / kDciSlot, 0.0);
    for (const auto& r : trace) {
        if (r.event != TraceEvent::Depart || r.path != PathId::Cellular) continue;
        if (r.time < t0 || r.time >= t1) continue;
        obs.bytes[(r.time - t0) / kDciSlot] += static_cast<double>(r.len);
    }
    return obs;
}

/// Scales by the window maximum; an empty window stays all zeros.
inline std::vector<double> normalize_by_max(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    const double mx = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    if (mx > 0.0)
        for (auto& x : out) x /= mx;
    return out;
}

/// Sums consecutive groups of `factor` values; a partial tail group is kept.
inline std::vector<double> rebin(std::span<const double> v, std::size_t factor) {
    if (factor == 0) throw std::invalid_argument("rebin factor must be > 0");
    std::vector<double> out((v.size() + factor - 1) / factor, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) out[i / factor] += v[i];
    return out;
}

/// Classifier input: max-normalized observation at `bin` resolution.
inline std::vector<double> observation_features(const DciObservation& obs, SimTime bin) {
    if (bin < kDciSlot || bin % kDciSlot != 0) throw std::invalid_argument("feature bin must be a multiple of 1 ms");
    return rebin(normalize_by_max(obs.bytes), bin / kDciSlot);
}

// ===== Datasets =====

struct AttackSample {
    std::vector<double> input;
    int label = 0;
    int stratum = 0;  ///< split stratification key; defaults to the label
    std::uint64_t run_id = 0;
    std::string scheduler;
    int scenario = -1;
    std::uint64_t seed = 0;
    SimTime window_start = 0;
    SimTime window_end = 0;
};

struct AttackDataset {
    std::size_t classes = 2;
    std::vector<AttackSample> samples;

    std::size_t size() const { return samples.size(); }
};

struct DatasetSplit {
    std::vector<std::size_t> train;  ///< indices into the dataset
    std::vector<std::size_t> test;
};

/// Run-grouped split: all windows of one run land on the same side, so train
/// and test windows never share a run. Runs are stratified by their stratum
/// and each stratum contributes round(fraction * runs) runs to training
/// (at least one run to each side when it has two or more).
inline DatasetSplit split_dataset(const AttackDataset& ds, double train_fraction, Rng& rng) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0, 1)");
    std::map<std::uint64_t, int> run_stratum;
    std::map<std::uint64_t, std::vector<std::size_t>> run_samples;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        auto [it, fresh] = run_stratum.emplace(s.run_id, s.stratum);
        if (!fresh && it->second != s.stratum) throw DatasetError("run " + std::to_string(s.run_id) + " mixes strata");
        run_samples[s.run_id].push_back(i);
    }
    std::map<int, std::vector<std::uint64_t>> by_stratum;
    for (const auto& [run, st] : run_stratum) by_stratum[st].push_back(run);
    DatasetSplit split;
    for (auto& [st, runs] : by_stratum) {
        rng.shuffle(runs.begin(), runs.end());
        std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(runs.size())));
        if (runs.size() >= 2) n_train = std::clamp<std::size_t>(n_train, 1, runs.size() - 1);
        for (std::size_t r = 0; r < runs.size(); ++r) {
            auto& side = r < n_train ? split.train : split.test;
            const auto& idx = run_samples[runs[r]];
            side.insert(side.end(), idx.begin(), idx.end());
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

/// Run-grouped, stratified k-fold partition: every run is a test run in
/// exactly one fold, and each fold's test side holds about 1/k of every
/// stratum's runs.
inline std::vector<DatasetSplit> kfold_splits(const AttackDataset& ds, std::size_t folds, Rng& rng) {
    if (folds < 2) throw ConfigError("need at least 2 folds");
    std::map<std::uint64_t, int> run_stratum;
    std::map<std::uint64_t, std::vector<std::size_t>> run_samples;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        auto [it, fresh] = run_stratum.emplace(s.run_id, s.stratum);
        if (!fresh && it->second != s.stratum) throw DatasetError("run " + std::to_string(s.run_id) + " mixes strata");
        run_samples[s.run_id].push_back(i);
    }
    std::map<int, std::vector<std::uint64_t>> by_stratum;
    for (const auto& [run, st] : run_stratum) by_stratum[st].push_back(run);
    std::vector<std::size_t> fold_of_run_sample(ds.samples.size(), 0);
    std::size_t offset = 0;  // rotates so small strata do not all start at fold 0
    for (auto& [st, runs] : by_stratum) {
        if (runs.size() < folds) throw DatasetError("stratum " + std::to_string(st) + " has fewer runs than folds");
        rng.shuffle(runs.begin(), runs.end());
        for (std::size_t r = 0; r < runs.size(); ++r)
            for (auto i : run_samples[runs[r]]) fold_of_run_sample[i] = (r + offset) % folds;
        offset += runs.size();
    }
    std::vector<DatasetSplit> out(folds);
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        for (std::size_t f = 0; f < folds; ++f) (fold_of_run_sample[i] == f ? out[f].test : out[f].train).push_back(i);
    return out;
}

inline LabeledSet<double> subset(const AttackDataset& ds, std::span<const std::size_t> idx) {
    LabeledSet<double> out;
    for (auto i : idx) {
        out.inputs.push_back(ds.samples[i].input);
        out.labels.push_back(ds.samples[i].label);
    }
    return out;
}

/// Checks the label set and per-class counts required for training.
inline void check_trainable(const LabeledSet<double>& data, std::size_t classes, std::size_t min_per_class) {
    std::vector<std::size_t> counts(classes, 0);
    for (int l : data.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) throw DatasetError("label out of range");
        ++counts[static_cast<std::size_t>(l)];
    }
    for (std::size_t c = 0; c < classes; ++c)
        if (counts[c] < min_per_class)
            throw DatasetError("class " + std::to_string(c) + " has " + std::to_string(counts[c]) + " samples, need " +
                               std::to_string(min_per_class));
}

inline CnnTopology attack_topology(std::size_t input_len, std::size_t classes, bool desk) {
    const std::size_t outputs = classes <= 2 ? 1 : classes;
    return desk ? CnnTopology::desk(input_len, outputs) : CnnTopology::full(input_len, outputs);
}

/// Multi-class video classifier over fixed-length observation windows.
inline Cnn<double> train_video_attack(const LabeledSet<double>& train, std::size_t videos, const TrainHyper& hyper,
                                      bool desk, Rng& rng) {
    if (videos < 2) throw DatasetError("video attack needs at least 2 labels");
    check_trainable(train, videos, 2);
    return cnn_train(train, attack_topology(train.inputs.front().size(), videos, desk), hyper, rng);
}

/// Binary target/non-target classifier over observation segments.
inline Cnn<double> train_user_attack(const LabeledSet<double>& train, const TrainHyper& hyper, bool desk, Rng& rng) {
    check_trainable(train, 2, 1);
    return cnn_train(train, attack_topology(train.inputs.front().size(), 2, desk), hyper, rng);
}

inline double eval_attack(const Cnn<double>& model, const LabeledSet<double>& test, std::size_t k) {
    return topk_accuracy(model, test, k);
}

/// Pooled top-k accuracy over all folds: every test window is scored by the
/// model that never saw its run. `folds == 1` is a single 80/20 holdout.
struct CvResult {
    std::vector<double> topk;  ///< k = 1..max_k
    std::size_t folds = 0;
    std::size_t train_windows = 0;  ///< summed over folds
    std::size_t test_windows = 0;
};

template <class TrainFn>
CvResult cross_validate(const AttackDataset& ds, std::size_t folds, std::size_t max_k, std::uint64_t seed,
                        TrainFn&& train_fn) {
    if (folds == 0) throw ConfigError("folds must be >= 1");
    if (max_k == 0) throw ConfigError("top-k must be >= 1");
    Rng split_rng(mix_seed(seed, 0x5F));
    const auto splits = folds == 1 ? std::vector<DatasetSplit>{split_dataset(ds, 0.8, split_rng)}
                                   : kfold_splits(ds, folds, split_rng);
    CvResult out;
    out.folds = splits.size();
    std::vector<std::size_t> hits(max_k, 0);
    for (std::size_t f = 0; f < splits.size(); ++f) {
        const auto train = subset(ds, splits[f].train), test = subset(ds, splits[f].test);
        Rng rng(mix_seed(seed, 0x7A00 + f));
        const Cnn<double> model = train_fn(train, rng);
        for (std::size_t k = 1; k <= max_k; ++k)
            hits[k - 1] += static_cast<std::size_t>(
                std::llround(eval_attack(model, test, k) * static_cast<double>(test.size())));
        out.train_windows += train.size();
        out.test_windows += test.size();
    }
    for (auto h : hits) out.topk.push_back(static_cast<double>(h) / static_cast<double>(out.test_windows));
    return out;
}

// ===== Archive =====

inline void write_dataset(const std::filesystem::path& dir, const AttackDataset& ds, SimTime bin) {
    std::filesystem::create_directories(dir);
    std::ofstream man(dir / "manifest.csv");
    if (!man) throw IoError("cannot write " + (dir / "manifest.csv").string());
    man << "file,label,stratum,run_id,scheduler,scenario,seed,window_start_ms,window_end_ms\n";
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        const std::string name = "obs_" + std::to_string(i) + ".csv";
        std::ofstream f(dir / name);
        if (!f) throw IoError("cannot write " + (dir / name).string());
        f << "slot_ms,bytes\n";
        f.precision(17);
        for (std::size_t b = 0; b < s.input.size(); ++b) f << (b * bin / kNsPerMs) << ',' << s.input[b] << '\n';
        man << name << ',' << s.label << ',' << s.stratum << ',' << s.run_id << ',' << s.scheduler << ','
            << s.scenario << ',' << s.seed << ',' << s.window_start / kNsPerMs << ',' << s.window_end / kNsPerMs
            << '\n';
    }
    if (!man) throw IoError("dataset manifest write failed");
}

inline AttackDataset read_dataset(const std::filesystem::path& dir, std::size_t classes) {
    std::ifstream man(dir / "manifest.csv");
    if (!man) throw IoError("cannot read " + (dir / "manifest.csv").string());
    AttackDataset ds;
    ds.classes = classes;
    std::string line;
    std::getline(man, line);
    std::size_t line_no = 1;
    while (std::getline(man, line)) {
        ++line_no;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (f.size() != 9) throw ParseError("manifest line " + std::to_string(line_no) + ": expected 9 fields");
        AttackSample s;
        try {
            s.label = std::stoi(f[1]);
            s.stratum = std::stoi(f[2]);
            s.run_id = std::stoull(f[3]);
            s.scheduler = f[4];
            s.scenario = std::stoi(f[5]);
            s.seed = std::stoull(f[6]);
            s.window_start = std::stoull(f[7]) * kNsPerMs;
            s.window_end = std::stoull(f[8]) * kNsPerMs;
        } catch (const std::exception&) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": bad number");
        }
        std::ifstream obs(dir / f[0]);
        if (!obs) throw IoError("cannot read " + (dir / f[0]).string());
        std::string row;
        std::getline(obs, row);
        while (std::getline(obs, row)) {
            const auto c = row.find(',');
            if (c == std::string::npos) throw ParseError(f[0] + ": expected slot_ms,bytes");
            s.input.push_back(std::stod(row.substr(c + 1)));
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace saflo
