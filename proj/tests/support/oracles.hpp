#pragma once

// Reference implementations written independently of the library code paths
// they check. Each favours obviousness over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "saflo/saflo.hpp"

namespace oracle {

// ----- Reassembly -----

struct Arrival {
    std::uint64_t seq;
    std::uint32_t len;
};

struct ArrivalOutcome {
    std::uint64_t delivered = 0;
    bool out_of_order = false;
    bool duplicate = false;
};

/// Byte-set receiver: a byte is delivered once every earlier byte has arrived.
inline std::vector<ArrivalOutcome> reassemble(const std::vector<Arrival>& arrivals) {
    std::set<std::uint64_t> have;
    std::uint64_t next = 0;
    std::vector<ArrivalOutcome> out;
    for (const auto& a : arrivals) {
        ArrivalOutcome o;
        bool any_new = false;
        for (std::uint64_t b = a.seq; b < a.seq + a.len; ++b) any_new |= !have.contains(b) && b >= next;
        if (!any_new) {
            o.duplicate = true;
            out.push_back(o);
            continue;
        }
        for (std::uint64_t b = a.seq; b < a.seq + a.len; ++b)
            if (b >= next) have.insert(b);
        const std::uint64_t before = next;
        while (have.contains(next)) have.erase(next++);
        o.delivered = next - before;
        o.out_of_order = o.delivered == 0;
        out.push_back(o);
    }
    return out;
}

// ----- Scheduling -----

/// Index of the minimum wmem/pace among candidates, lowest key on ties.
inline std::optional<std::size_t> argmin_linger(const std::vector<saflo::SchedSubflow>& sfs,
                                                const std::vector<bool>& candidate) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < sfs.size(); ++i) {
        if (!candidate[i]) continue;
        if (!best) {
            best = i;
            continue;
        }
        const double li = static_cast<double>(sfs[i].ctx.wmem) / sfs[i].ctx.pace;
        const double lb = static_cast<double>(sfs[*best].ctx.wmem) / sfs[*best].ctx.pace;
        if (li < lb || (li == lb && sfs[i].ctx.key < sfs[*best].ctx.key)) best = i;
    }
    return best;
}

inline bool room(const saflo::SchedSubflow& sf, const saflo::SchedConnection& c) {
    if (c.backlog == 0) return false;
    return sf.free_cwnd >= (c.backlog < c.mss ? c.backlog : c.mss);
}

// ----- Detector binning -----

/// Bin of a record inside the 10 s window ending at `end`: bin 999 is
/// [end - 10 ms, end).
inline std::size_t trace_bin(saflo::SimTime ts, saflo::SimTime end) {
    const saflo::SimTime back = (end - ts - 1) / saflo::kTraceBinWidth;
    return saflo::kTraceBins - 1 - static_cast<std::size_t>(back);
}

// ----- CNN forward -----

inline double lrelu(double v, double slope) { return v > 0 ? v : slope * v; }

/// Inference-mode forward pass computed layer by layer from the textual
/// definition: zero-padded convolution with floor((k-1)/2) leading zeros,
/// running-statistics batch norm, LeakyReLU, mean pooling with the tail
/// dropped, dense layers, sigmoid or softmax head.
inline std::vector<double> forward(const saflo::Cnn<double>& m, const std::vector<double>& input) {
    const auto& t = m.topology();
    const auto& P = m.params();
    const auto& R = m.running_stats();

    std::vector<std::vector<double>> x(1, input);
    if (t.normalize_input) {
        double lo = input[0], hi = input[0];
        for (double v : input) lo = std::min(lo, v), hi = std::max(hi, v);
        for (double& v : x[0]) v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    }

    std::size_t p = 0;
    for (std::size_t layer = 0; layer < t.convs.size(); ++layer) {
        const std::size_t F = t.convs[layer].filters, K = t.convs[layer].kernel;
        const std::size_t C = x.size(), L = x[0].size();
        const std::size_t left = (K - 1) / 2, right = K - 1 - left;
        const auto& W = P[p];
        const auto& B = P[p + 1];
        const auto& G = P[p + 2];
        const auto& Be = P[p + 3];
        const auto& mean = R[2 * layer];
        const auto& var = R[2 * layer + 1];
        p += 4;

        std::vector<std::vector<double>> padded(C, std::vector<double>(L + left + right, 0.0));
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < L; ++i) padded[c][left + i] = x[c][i];

        std::vector<std::vector<double>> y(F, std::vector<double>(L / t.pool, 0.0));
        for (std::size_t f = 0; f < F; ++f) {
            std::vector<double> act(L);
            for (std::size_t i = 0; i < L; ++i) {
                double z = B[f];
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t k = 0; k < K; ++k) z += W[f * C * K + c * K + k] * padded[c][i + k];
                const double bn = G[f] * (z - mean[f]) / std::sqrt(var[f] + t.bn_eps) + Be[f];
                act[i] = lrelu(bn, t.leaky_slope);
            }
            for (std::size_t j = 0; j < L / t.pool; ++j) {
                double s = 0;
                for (std::size_t q = 0; q < t.pool; ++q) s += act[j * t.pool + q];
                y[f][j] = s / static_cast<double>(t.pool);
            }
        }
        x = std::move(y);
    }

    std::vector<double> h;
    for (const auto& ch : x) h.insert(h.end(), ch.begin(), ch.end());

    const std::size_t n_dense = t.dense.size();
    for (std::size_t j = 0; j <= n_dense; ++j) {
        const std::size_t out = j < n_dense ? t.dense[j] : t.outputs;
        const auto& W = P[p];
        const auto& B = P[p + 1];
        p += 2;
        std::vector<double> z(out);
        for (std::size_t o = 0; o < out; ++o) {
            double s = B[o];
            for (std::size_t i = 0; i < h.size(); ++i) s += W[o * h.size() + i] * h[i];
            z[o] = s;
        }
        if (j < n_dense) {
            for (double& v : z) v = lrelu(v, t.leaky_slope);
            h = std::move(z);
            continue;
        }
        if (out == 1) return {1.0 / (1.0 + std::exp(-z[0]))};
        double mx = z[0];
        for (double v : z) mx = std::max(mx, v);
        double sum = 0;
        for (double& v : z) sum += (v = std::exp(v - mx));
        for (double& v : z) v /= sum;
        return z;
    }
    return {};
}

// ----- DCI observation -----

/// Cellular bytes per 1 ms slot over [t0, t1), by departure time.
inline std::vector<double> dci_slots(const std::vector<saflo::TraceRow>& trace, saflo::SimTime t0, saflo::SimTime t1) {
    std::vector<double> v((t1 - t0) / saflo::kDciSlot, 0.0);
    for (const auto& r : trace) {
        if (r.path != saflo::PathId::Cellular || r.event != saflo::TraceEvent::Depart) continue;
        if (r.time < t0 || r.time >= t1) continue;
        v[(r.time - t0) / saflo::kDciSlot] += r.len;
    }
    return v;
}

}  // namespace oracle
