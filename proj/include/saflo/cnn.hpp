#pragma once

/**
 * @file cnn.hpp
 * @brief 1D convolutional classifier trained from scratch.
 *
 * Layer stack:
 *   min-max input scaling
 *   [conv (same padding) -> batch-norm -> LeakyReLU -> dropout -> avg-pool] x n
 *   flatten -> [dense -> LeakyReLU -> dropout] x m -> dense head
 * The head is a single sigmoid unit for binary tasks and a softmax over
 * `outputs` classes otherwise. Activations are stored channel-major,
 * `[sample][channel][time]`.
 *
 * Serialized layout (all integers u32 little-endian, reals f32 little-endian):
 *   "SAFLOCNN" version input_len n_conv {filters kernel}*n_conv pool
 *   n_dense {width}*n_dense outputs dropout leaky_slope bn_momentum bn_eps
 *   normalize n_tensors {count values*count}*n_tensors
 * Tensor order: per conv block W[f][c][k], b, gamma, beta, running_mean,
 * running_var; then per dense layer (head last) W[out][in], b.
 */

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "saflo/core.hpp"

namespace saflo {

struct ConvSpec {
    std::size_t filters = 16;
    std::size_t kernel = 8;
    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct LayerShape {
    std::string name;
    std::size_t channels = 0;
    std::size_t length = 0;  ///< 1 for dense activations
    friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

struct CnnTopology {
    std::size_t input_len = 1000;
    std::vector<ConvSpec> convs{{150, 40}, {150, 40}};
    std::size_t pool = 4;
    std::vector<std::size_t> dense{512, 256, 128};
    std::size_t outputs = 1;
    double dropout = 0.4;
    double leaky_slope = 0.01;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    bool normalize_input = true;

    friend bool operator==(const CnnTopology&, const CnnTopology&) = default;

    /// Full-width classifier.
    static CnnTopology full(std::size_t input_len, std::size_t outputs = 1) {
        CnnTopology t;
        t.input_len = input_len;
        t.outputs = outputs;
        return t;
    }

    /// Reduced widths for desk-scale runs; same layer sequence.
    static CnnTopology desk(std::size_t input_len, std::size_t outputs = 1) {
        CnnTopology t;
        t.input_len = input_len;
        t.convs = {{16, 8}, {16, 8}};
        t.dense = {64, 32};
        t.outputs = outputs;
        return t;
    }

    bool binary() const { return outputs == 1; }

    void validate() const {
        if (input_len == 0 || convs.empty() || pool == 0 || outputs == 0)
            throw ConfigError("cnn topology: zero-sized dimension");
        std::size_t len = input_len;
        for (const auto& c : convs) {
            if (c.filters == 0 || c.kernel == 0) throw ConfigError("cnn topology: empty conv layer");
            len /= pool;
            if (len == 0) throw ConfigError("cnn topology: input too short for pooling depth");
        }
        for (auto w : dense)
            if (w == 0) throw ConfigError("cnn topology: empty dense layer");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cnn topology: dropout in [0,1)");
    }

    std::vector<LayerShape> shape_chain() const {
        std::vector<LayerShape> out;
        std::size_t ch = 1, len = input_len;
        out.push_back({"input", ch, len});
        for (std::size_t i = 0; i < convs.size(); ++i) {
            ch = convs[i].filters;
            out.push_back({"conv" + std::to_string(i), ch, len});
            len /= pool;
            out.push_back({"pool" + std::to_string(i), ch, len});
        }
        out.push_back({"flatten", ch * len, 1});
        for (std::size_t i = 0; i < dense.size(); ++i) out.push_back({"dense" + std::to_string(i), dense[i], 1});
        out.push_back({binary() ? "sigmoid" : "softmax", outputs, 1});
        return out;
    }
};

/// Per-trace min-max scaling to [0, 1]; constant traces map to zeros.
template <std::floating_point T>
void minmax_normalize(std::span<T> x) {
    if (x.empty()) return;
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const T mn = *lo, range = *hi - *lo;
    if (!(range > T(0))) {
        std::fill(x.begin(), x.end(), T(0));
        return;
    }
    for (auto& v : x) v = (v - mn) / range;
}

enum class OptimizerKind { Adam, Sgd };

struct TrainHyper {
    std::size_t epochs = 15;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::Adam;
};

template <std::floating_point T>
class Cnn {
public:
    using Tensor = std::vector<T>;

    Cnn() : Cnn(CnnTopology::desk(1000)) {}

    explicit Cnn(CnnTopology topo) : topo_(std::move(topo)) {
        topo_.validate();
        std::size_t cin = 1;
        for (const auto& c : topo_.convs) {
            params_.emplace_back(c.filters * cin * c.kernel, T(0));
            params_.emplace_back(c.filters, T(0));
            params_.emplace_back(c.filters, T(1));
            params_.emplace_back(c.filters, T(0));
            running_.emplace_back(c.filters, T(0));
            running_.emplace_back(c.filters, T(1));
            cin = c.filters;
        }
        std::size_t in = flat_size();
        for (auto w : topo_.dense) {
            params_.emplace_back(w * in, T(0));
            params_.emplace_back(w, T(0));
            in = w;
        }
        params_.emplace_back(topo_.outputs * in, T(0));
        params_.emplace_back(topo_.outputs, T(0));
    }

    const CnnTopology& topology() const { return topo_; }
    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    std::vector<Tensor>& running_stats() { return running_; }
    const std::vector<Tensor>& running_stats() const { return running_; }

    std::size_t num_params() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

    /// Glorot-uniform kernels, zero biases, unit BN scale.
    void init_glorot(Rng& rng) {
        std::size_t cin = 1;
        for (std::size_t i = 0; i < topo_.convs.size(); ++i) {
            const auto& c = topo_.convs[i];
            fill_glorot(params_[conv_w(i)], cin * c.kernel, c.filters * c.kernel, rng);
            cin = c.filters;
        }
        std::size_t in = flat_size();
        for (std::size_t j = 0; j <= topo_.dense.size(); ++j) {
            const std::size_t out = j < topo_.dense.size() ? topo_.dense[j] : topo_.outputs;
            fill_glorot(params_[dense_w(j)], in, out, rng);
            in = out;
        }
    }

    /// Class probabilities for one trace (one value for binary models).
    std::vector<T> predict(std::span<const T> trace) const {
        Batch b = make_batch({&trace, 1});
        auto probs = const_cast<Cnn*>(this)->forward(b, false, nullptr, nullptr);
        return probs;
    }

    /// Probabilities for many traces, row-major [n][outputs].
    std::vector<T> predict_batch(std::span<const std::span<const T>> traces) const {
        Batch b = make_batch(traces);
        return const_cast<Cnn*>(this)->forward(b, false, nullptr, nullptr);
    }

    /// Sigmoid score of a binary model.
    T score(std::span<const T> trace) const { return predict(trace)[0]; }

    /// Mean loss over a batch; when `grads` is given it receives dLoss/dParam
    /// (same layout as params()). Training mode uses batch statistics and
    /// dropout (masks drawn from `rng`) and updates running statistics when
    /// `update_running` is set.
    T loss_and_grad(std::span<const std::span<const T>> inputs, std::span<const int> labels, bool training,
                    Rng* rng, std::vector<Tensor>* grads, bool update_running = false) {
        Batch b = make_batch(inputs);
        Cache cache;
        auto probs = forward(b, training, rng, &cache, update_running);
        const std::size_t n = b.n, k = topo_.outputs;
        T loss = 0;
        Tensor dz(n * k);
        for (std::size_t s = 0; s < n; ++s) {
            if (topo_.binary()) {
                const T p = std::clamp(probs[s], T(1e-12), T(1) - T(1e-12));
                const T y = labels[s] ? T(1) : T(0);
                loss -= y * std::log(p) + (T(1) - y) * std::log(T(1) - p);
                dz[s] = (probs[s] - y) / T(n);
            } else {
                const auto lab = static_cast<std::size_t>(labels[s]);
                loss -= std::log(std::max(probs[s * k + lab], T(1e-12)));
                for (std::size_t c = 0; c < k; ++c) dz[s * k + c] = (probs[s * k + c] - (c == lab ? T(1) : T(0))) / T(n);
            }
        }
        loss /= T(n);
        if (grads) backward(cache, dz, *grads);
        return loss;
    }

private:
    struct Batch {
        std::size_t n = 0;
        Tensor x;  ///< [n][1][input_len], normalized
    };

    struct ConvCache {
        Tensor in;  ///< [n][cin][len]
        Tensor xhat, pre;  ///< [n][f][len] normalized and post-affine
        Tensor mask;
        Tensor inv_std;
        std::size_t cin = 0, len = 0;
    };
    struct DenseCache {
        Tensor in;  ///< [n][in]
        Tensor pre;
        Tensor mask;
        std::size_t in_dim = 0, out_dim = 0;
    };
    struct Cache {
        std::size_t n = 0;
        std::vector<ConvCache> conv;
        std::vector<DenseCache> dense;  ///< includes head
        std::size_t flat = 0;
    };

    std::size_t conv_w(std::size_t i) const { return 4 * i; }
    std::size_t conv_b(std::size_t i) const { return 4 * i + 1; }
    std::size_t bn_gamma(std::size_t i) const { return 4 * i + 2; }
    std::size_t bn_beta(std::size_t i) const { return 4 * i + 3; }
    std::size_t dense_w(std::size_t j) const { return 4 * topo_.convs.size() + 2 * j; }
    std::size_t dense_b(std::size_t j) const { return dense_w(j) + 1; }

    std::size_t flat_size() const {
        std::size_t len = topo_.input_len;
        for (std::size_t i = 0; i < topo_.convs.size(); ++i) len /= topo_.pool;
        return len * topo_.convs.back().filters;
    }

    static void fill_glorot(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (auto& v : w) v = static_cast<T>(rng.uniform(-limit, limit));
    }

    Batch make_batch(std::span<const std::span<const T>> inputs) const {
        Batch b;
        b.n = inputs.size();
        b.x.resize(b.n * topo_.input_len);
        for (std::size_t s = 0; s < b.n; ++s) {
            if (inputs[s].size() != topo_.input_len)
                throw std::invalid_argument("cnn input length " + std::to_string(inputs[s].size()) + " != " +
                                            std::to_string(topo_.input_len));
            std::span<T> row(b.x.data() + s * topo_.input_len, topo_.input_len);
            std::copy(inputs[s].begin(), inputs[s].end(), row.begin());
            if (topo_.normalize_input) minmax_normalize(row);
        }
        return b;
    }

    T leaky(T v) const { return v > T(0) ? v : T(topo_.leaky_slope) * v; }
    T leaky_grad(T v) const { return v > T(0) ? T(1) : T(topo_.leaky_slope); }

    void dropout_mask(Tensor& mask, std::size_t size, bool training, Rng* rng) const {
        if (!training || topo_.dropout <= 0.0 || !rng) {
            mask.clear();
            return;
        }
        mask.resize(size);
        const T keep = T(1.0 / (1.0 - topo_.dropout));
        for (auto& m : mask) m = rng->uniform() < topo_.dropout ? T(0) : keep;
    }

    static void check_finite(const Tensor& t, const char* where) {
        for (auto v : t)
            if (!std::isfinite(v)) throw NumericError(std::string("non-finite activation in ") + where);
    }

    std::vector<T> forward(const Batch& b, bool training, Rng* rng, Cache* cache, bool update_running = false) {
        const std::size_t n = b.n;
        Tensor cur = b.x;
        std::size_t cin = 1, len = topo_.input_len;
        if (cache) {
            cache->n = n;
            cache->conv.assign(topo_.convs.size(), {});
            cache->dense.assign(topo_.dense.size() + 1, {});
        }
        for (std::size_t i = 0; i < topo_.convs.size(); ++i) {
            const std::size_t f = topo_.convs[i].filters, k = topo_.convs[i].kernel;
            const std::size_t pad = (k - 1) / 2;
            const T* w = params_[conv_w(i)].data();
            const T* bias = params_[conv_b(i)].data();
            Tensor z(n * f * len);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < f; ++o) {
                    T* out = z.data() + (s * f + o) * len;
                    std::fill(out, out + len, bias[o]);
                    for (std::size_t c = 0; c < cin; ++c) {
                        const T* in = cur.data() + (s * cin + c) * len;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const T wv = w[(o * cin + c) * k + kk];
                            // out[t] += wv * in[t + kk - pad] for valid input index
                            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(pad);
                            const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                            const std::size_t t1 = shift > 0 ? (len > static_cast<std::size_t>(shift) ? len - static_cast<std::size_t>(shift) : 0) : len;
                            const T* src = in + shift;
                            for (std::size_t t = t0; t < t1; ++t) out[t] += wv * src[t];
                        }
                    }
                }

            // Batch-norm over (sample, time) per channel.
            const T* gamma = params_[bn_gamma(i)].data();
            const T* beta = params_[bn_beta(i)].data();
            Tensor mean(f), inv_std(f);
            const T eps = T(topo_.bn_eps);
            if (training) {
                const T m = T(n * len);
                for (std::size_t o = 0; o < f; ++o) {
                    T sum = 0;
                    for (std::size_t s = 0; s < n; ++s) {
                        const T* p = z.data() + (s * f + o) * len;
                        for (std::size_t t = 0; t < len; ++t) sum += p[t];
                    }
                    const T mu = sum / m;
                    T var = 0;
                    for (std::size_t s = 0; s < n; ++s) {
                        const T* p = z.data() + (s * f + o) * len;
                        for (std::size_t t = 0; t < len; ++t) var += (p[t] - mu) * (p[t] - mu);
                    }
                    var /= m;
                    mean[o] = mu;
                    inv_std[o] = T(1) / std::sqrt(var + eps);
                    if (update_running) {
                        const T mom = T(topo_.bn_momentum);
                        running_[2 * i][o] = mom * running_[2 * i][o] + (T(1) - mom) * mu;
                        running_[2 * i + 1][o] = mom * running_[2 * i + 1][o] + (T(1) - mom) * var;
                    }
                }
            } else {
                for (std::size_t o = 0; o < f; ++o) {
                    mean[o] = running_[2 * i][o];
                    inv_std[o] = T(1) / std::sqrt(running_[2 * i + 1][o] + eps);
                }
            }
            Tensor xhat(z.size()), pre(z.size()), act(z.size());
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < f; ++o) {
                    const std::size_t base = (s * f + o) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        const T xh = (z[base + t] - mean[o]) * inv_std[o];
                        xhat[base + t] = xh;
                        pre[base + t] = gamma[o] * xh + beta[o];
                        act[base + t] = leaky(pre[base + t]);
                    }
                }
            Tensor mask;
            dropout_mask(mask, act.size(), training, rng);
            if (!mask.empty())
                for (std::size_t q = 0; q < act.size(); ++q) act[q] *= mask[q];

            const std::size_t plen = len / topo_.pool;
            Tensor pooled(n * f * plen);
            const T inv_pool = T(1) / T(topo_.pool);
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < f; ++o) {
                    const T* src = act.data() + (s * f + o) * len;
                    T* dst = pooled.data() + (s * f + o) * plen;
                    for (std::size_t t = 0; t < plen; ++t) {
                        T acc = 0;
                        for (std::size_t q = 0; q < topo_.pool; ++q) acc += src[t * topo_.pool + q];
                        dst[t] = acc * inv_pool;
                    }
                }
            check_finite(pooled, "conv block");
            if (cache) {
                auto& cc = cache->conv[i];
                cc.in = std::move(cur);
                cc.xhat = std::move(xhat);
                cc.pre = std::move(pre);
                cc.mask = std::move(mask);
                cc.inv_std = std::move(inv_std);
                cc.cin = cin;
                cc.len = len;
            }
            cur = std::move(pooled);
            cin = f;
            len = plen;
        }

        std::size_t in_dim = cin * len;
        if (cache) cache->flat = in_dim;
        const std::size_t n_dense = topo_.dense.size();
        for (std::size_t j = 0; j <= n_dense; ++j) {
            const bool head = j == n_dense;
            const std::size_t out_dim = head ? topo_.outputs : topo_.dense[j];
            const T* w = params_[dense_w(j)].data();
            const T* bias = params_[dense_b(j)].data();
            Tensor pre(n * out_dim);
            for (std::size_t s = 0; s < n; ++s) {
                const T* x = cur.data() + s * in_dim;
                for (std::size_t o = 0; o < out_dim; ++o) {
                    const T* row = w + o * in_dim;
                    T acc = bias[o];
                    for (std::size_t q = 0; q < in_dim; ++q) acc += row[q] * x[q];
                    pre[s * out_dim + o] = acc;
                }
            }
            check_finite(pre, head ? "head" : "dense layer");
            Tensor next(pre.size());
            Tensor mask;
            if (!head) {
                for (std::size_t q = 0; q < pre.size(); ++q) next[q] = leaky(pre[q]);
                dropout_mask(mask, next.size(), training, rng);
                if (!mask.empty())
                    for (std::size_t q = 0; q < next.size(); ++q) next[q] *= mask[q];
            } else if (topo_.binary()) {
                for (std::size_t q = 0; q < pre.size(); ++q) next[q] = T(1) / (T(1) + std::exp(-pre[q]));
            } else {
                for (std::size_t s = 0; s < n; ++s) {
                    const T* p = pre.data() + s * out_dim;
                    const T mx = *std::max_element(p, p + out_dim);
                    T sum = 0;
                    for (std::size_t o = 0; o < out_dim; ++o) sum += (next[s * out_dim + o] = std::exp(p[o] - mx));
                    for (std::size_t o = 0; o < out_dim; ++o) next[s * out_dim + o] /= sum;
                }
            }
            if (cache) {
                auto& dc = cache->dense[j];
                dc.in = std::move(cur);
                dc.pre = std::move(pre);
                dc.mask = std::move(mask);
                dc.in_dim = in_dim;
                dc.out_dim = out_dim;
            }
            cur = std::move(next);
            in_dim = out_dim;
        }
        return cur;
    }

    /// `dz` is dLoss/d(head pre-activation), [n][outputs].
    void backward(const Cache& cache, Tensor dz, std::vector<Tensor>& grads) const {
        grads.resize(params_.size());
        for (std::size_t p = 0; p < params_.size(); ++p) grads[p].assign(params_[p].size(), T(0));
        const std::size_t n = cache.n;
        const std::size_t n_dense = topo_.dense.size();

        Tensor dcur = std::move(dz);  // gradient w.r.t. layer pre-activation
        for (std::size_t jj = n_dense + 1; jj-- > 0;) {
            const auto& dc = cache.dense[jj];
            const bool head = jj == n_dense;
            if (!head) {
                // dcur currently w.r.t. this layer's output; go through dropout and activation.
                for (std::size_t q = 0; q < dcur.size(); ++q) {
                    if (!dc.mask.empty()) dcur[q] *= dc.mask[q];
                    dcur[q] *= leaky_grad(dc.pre[q]);
                }
            }
            const T* w = params_[dense_w(jj)].data();
            T* gw = grads[dense_w(jj)].data();
            T* gb = grads[dense_b(jj)].data();
            Tensor din(n * dc.in_dim, T(0));
            for (std::size_t s = 0; s < n; ++s) {
                const T* x = dc.in.data() + s * dc.in_dim;
                T* dx = din.data() + s * dc.in_dim;
                for (std::size_t o = 0; o < dc.out_dim; ++o) {
                    const T g = dcur[s * dc.out_dim + o];
                    gb[o] += g;
                    T* gwr = gw + o * dc.in_dim;
                    const T* wr = w + o * dc.in_dim;
                    for (std::size_t q = 0; q < dc.in_dim; ++q) {
                        gwr[q] += g * x[q];
                        dx[q] += g * wr[q];
                    }
                }
            }
            dcur = std::move(din);
        }

        // dcur: gradient w.r.t. flattened output of the last pool.
        for (std::size_t i = topo_.convs.size(); i-- > 0;) {
            const auto& cc = cache.conv[i];
            const std::size_t f = topo_.convs[i].filters, k = topo_.convs[i].kernel;
            const std::size_t len = cc.len, plen = len / topo_.pool, cin = cc.cin;
            const std::size_t pad = (k - 1) / 2;
            const T inv_pool = T(1) / T(topo_.pool);

            // Pool, dropout, activation.
            Tensor dpre(n * f * len, T(0));
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < f; ++o) {
                    const std::size_t base = (s * f + o) * len;
                    const T* dp = dcur.data() + (s * f + o) * plen;
                    for (std::size_t t = 0; t < plen; ++t)
                        for (std::size_t q = 0; q < topo_.pool; ++q) dpre[base + t * topo_.pool + q] = dp[t] * inv_pool;
                }
            for (std::size_t q = 0; q < dpre.size(); ++q) {
                if (!cc.mask.empty()) dpre[q] *= cc.mask[q];
                dpre[q] *= leaky_grad(cc.pre[q]);
            }

            // Batch-norm (training-mode statistics).
            const T* gamma = params_[bn_gamma(i)].data();
            T* ggamma = grads[bn_gamma(i)].data();
            T* gbeta = grads[bn_beta(i)].data();
            Tensor dzc(dpre.size());
            const T m = T(n * len);
            for (std::size_t o = 0; o < f; ++o) {
                T sum_dy = 0, sum_dy_xhat = 0;
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t base = (s * f + o) * len;
                    for (std::size_t t = 0; t < len; ++t) {
                        sum_dy += dpre[base + t];
                        sum_dy_xhat += dpre[base + t] * cc.xhat[base + t];
                    }
                }
                ggamma[o] += sum_dy_xhat;
                gbeta[o] += sum_dy;
                const T scale = gamma[o] * cc.inv_std[o] / m;
                for (std::size_t s = 0; s < n; ++s) {
                    const std::size_t base = (s * f + o) * len;
                    for (std::size_t t = 0; t < len; ++t)
                        dzc[base + t] = scale * (m * dpre[base + t] - sum_dy - cc.xhat[base + t] * sum_dy_xhat);
                }
            }

            // Convolution.
            const T* w = params_[conv_w(i)].data();
            T* gw = grads[conv_w(i)].data();
            T* gb = grads[conv_b(i)].data();
            Tensor din(n * cin * len, T(0));
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t o = 0; o < f; ++o) {
                    const T* g = dzc.data() + (s * f + o) * len;
                    T bsum = 0;
                    for (std::size_t t = 0; t < len; ++t) bsum += g[t];
                    gb[o] += bsum;
                    for (std::size_t c = 0; c < cin; ++c) {
                        const T* in = cc.in.data() + (s * cin + c) * len;
                        T* dx = din.data() + (s * cin + c) * len;
                        for (std::size_t kk = 0; kk < k; ++kk) {
                            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kk) - static_cast<std::ptrdiff_t>(pad);
                            const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                            const std::size_t t1 = shift > 0 ? (len > static_cast<std::size_t>(shift) ? len - static_cast<std::size_t>(shift) : 0) : len;
                            const T* src = in + shift;
                            T* dsrc = dx + shift;
                            const T wv = w[(o * cin + c) * k + kk];
                            T acc = 0;
                            for (std::size_t t = t0; t < t1; ++t) {
                                acc += g[t] * src[t];
                                dsrc[t] += wv * g[t];
                            }
                            gw[(o * cin + c) * k + kk] += acc;
                        }
                    }
                }
            dcur = std::move(din);
        }
    }

    CnnTopology topo_;
    std::vector<Tensor> params_;
    std::vector<Tensor> running_;
};

// ===== Optimizers =====

template <std::floating_point T>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double lr, const std::vector<std::vector<T>>& params) : kind_(kind), lr_(lr) {
        if (kind_ == OptimizerKind::Adam) {
            for (const auto& p : params) {
                m_.emplace_back(p.size(), T(0));
                v_.emplace_back(p.size(), T(0));
            }
        }
    }

    void step(std::vector<std::vector<T>>& params, const std::vector<std::vector<T>>& grads) {
        ++t_;
        if (kind_ == OptimizerKind::Sgd) {
            for (std::size_t p = 0; p < params.size(); ++p)
                for (std::size_t q = 0; q < params[p].size(); ++q) params[p][q] -= T(lr_) * grads[p][q];
            return;
        }
        const double b1 = 0.9, b2 = 0.999, eps = 1e-7;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p)
            for (std::size_t q = 0; q < params[p].size(); ++q) {
                const T g = grads[p][q];
                m_[p][q] = T(b1) * m_[p][q] + T(1 - b1) * g;
                v_[p][q] = T(b2) * v_[p][q] + T(1 - b2) * g * g;
                const double mh = m_[p][q] / c1, vh = v_[p][q] / c2;
                params[p][q] -= T(lr_ * mh / (std::sqrt(vh) + eps));
            }
    }

private:
    OptimizerKind kind_;
    double lr_;
    std::vector<std::vector<T>> m_, v_;
    std::uint64_t t_ = 0;
};

/// Labelled examples; labels are 0/1 for binary models, class ids otherwise.
template <std::floating_point T>
struct LabeledSet {
    std::vector<std::vector<T>> inputs;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

/// Mini-batch training from Glorot initialization. Deterministic given `rng`.
template <std::floating_point T>
Cnn<T> cnn_train(const LabeledSet<T>& data, const CnnTopology& topo, const TrainHyper& hyper, Rng& rng) {
    if (data.inputs.size() != data.labels.size()) throw DatasetError("inputs/labels size mismatch");
    if (data.size() == 0) throw DatasetError("empty training set");
    const std::size_t classes = topo.binary() ? 2 : topo.outputs;
    std::vector<std::size_t> counts(classes, 0);
    for (int l : data.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) throw DatasetError("label out of range");
        ++counts[static_cast<std::size_t>(l)];
    }
    if (std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) < 2)
        throw DatasetError("training set has a single class");
    if (hyper.batch_size == 0 || hyper.epochs == 0) throw ConfigError("epochs and batch_size must be > 0");

    Cnn<T> model(topo);
    model.init_glorot(rng);
    Optimizer<T> opt(hyper.optimizer, hyper.learning_rate, model.params());
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::vector<T>> grads;
    std::vector<std::span<const T>> batch;
    std::vector<int> labels;
    for (std::size_t e = 0; e < hyper.epochs; ++e) {
        rng.shuffle(order.begin(), order.end());
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const std::size_t end = std::min(order.size(), start + hyper.batch_size);
            // Batch-norm needs at least two samples.
            if (end - start < 2 && order.size() >= 2) continue;
            batch.clear();
            labels.clear();
            for (std::size_t q = start; q < end; ++q) {
                batch.emplace_back(data.inputs[order[q]]);
                labels.push_back(data.labels[order[q]]);
            }
            model.loss_and_grad(batch, labels, true, &rng, &grads, true);
            opt.step(model.params(), grads);
        }
    }
    return model;
}

/// Fraction of examples whose label is among the k most probable classes.
template <std::floating_point T>
double topk_accuracy(const Cnn<T>& model, const LabeledSet<T>& data, std::size_t k) {
    if (k == 0) throw std::invalid_argument("k must be >= 1");
    if (data.size() == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto probs = model.predict(data.inputs[i]);
        if (model.topology().binary()) {
            const int pred = probs[0] > T(0.5) ? 1 : 0;
            hit += (pred == data.labels[i] || k >= 2) ? 1 : 0;
            continue;
        }
        const T mine = probs[static_cast<std::size_t>(data.labels[i])];
        // Rank = number of classes scoring strictly higher, ties broken by index.
        std::size_t better = 0;
        for (std::size_t c = 0; c < probs.size(); ++c)
            if (probs[c] > mine || (probs[c] == mine && c < static_cast<std::size_t>(data.labels[i]))) ++better;
        if (better < k) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

// ===== Serialization =====

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}
inline void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError("model file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline float get_f32(std::istream& is) {
    const std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}
inline constexpr char kModelMagic[8] = {'S', 'A', 'F', 'L', 'O', 'C', 'N', 'N'};
inline constexpr std::uint32_t kModelVersion = 1;
}  // namespace detail

template <std::floating_point T>
void save_model(std::ostream& os, const Cnn<T>& model) {
    using namespace detail;
    const auto& t = model.topology();
    os.write(kModelMagic, 8);
    put_u32(os, kModelVersion);
    put_u32(os, static_cast<std::uint32_t>(t.input_len));
    put_u32(os, static_cast<std::uint32_t>(t.convs.size()));
    for (const auto& c : t.convs) {
        put_u32(os, static_cast<std::uint32_t>(c.filters));
        put_u32(os, static_cast<std::uint32_t>(c.kernel));
    }
    put_u32(os, static_cast<std::uint32_t>(t.pool));
    put_u32(os, static_cast<std::uint32_t>(t.dense.size()));
    for (auto w : t.dense) put_u32(os, static_cast<std::uint32_t>(w));
    put_u32(os, static_cast<std::uint32_t>(t.outputs));
    put_f32(os, static_cast<float>(t.dropout));
    put_f32(os, static_cast<float>(t.leaky_slope));
    put_f32(os, static_cast<float>(t.bn_momentum));
    put_f32(os, static_cast<float>(t.bn_eps));
    put_u32(os, t.normalize_input ? 1u : 0u);

    std::vector<const std::vector<T>*> tensors;
    const std::size_t nconv = t.convs.size();
    for (std::size_t i = 0; i < nconv; ++i) {
        for (std::size_t q = 0; q < 4; ++q) tensors.push_back(&model.params()[4 * i + q]);
        tensors.push_back(&model.running_stats()[2 * i]);
        tensors.push_back(&model.running_stats()[2 * i + 1]);
    }
    for (std::size_t p = 4 * nconv; p < model.params().size(); ++p) tensors.push_back(&model.params()[p]);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto* ten : tensors) {
        put_u32(os, static_cast<std::uint32_t>(ten->size()));
        for (T v : *ten) put_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("model write failed");
}

template <std::floating_point T>
Cnn<T> load_model(std::istream& is) {
    using namespace detail;
    char magic[8];
    if (!is.read(magic, 8) || std::memcmp(magic, kModelMagic, 8) != 0) throw ParseError("not a saflo model file");
    if (get_u32(is) != kModelVersion) throw ParseError("unsupported model version");
    CnnTopology t;
    t.input_len = get_u32(is);
    t.convs.resize(get_u32(is));
    for (auto& c : t.convs) {
        c.filters = get_u32(is);
        c.kernel = get_u32(is);
    }
    t.pool = get_u32(is);
    t.dense.resize(get_u32(is));
    for (auto& w : t.dense) w = get_u32(is);
    t.outputs = get_u32(is);
    t.dropout = get_f32(is);
    t.leaky_slope = get_f32(is);
    t.bn_momentum = get_f32(is);
    t.bn_eps = get_f32(is);
    t.normalize_input = get_u32(is) != 0;
    Cnn<T> model(t);

    std::vector<std::vector<T>*> tensors;
    const std::size_t nconv = t.convs.size();
    for (std::size_t i = 0; i < nconv; ++i) {
        for (std::size_t q = 0; q < 4; ++q) tensors.push_back(&model.params()[4 * i + q]);
        tensors.push_back(&model.running_stats()[2 * i]);
        tensors.push_back(&model.running_stats()[2 * i + 1]);
    }
    for (std::size_t p = 4 * nconv; p < model.params().size(); ++p) tensors.push_back(&model.params()[p]);
    if (get_u32(is) != tensors.size()) throw ParseError("model tensor count does not match topology");
    for (auto* ten : tensors) {
        if (get_u32(is) != ten->size()) throw ParseError("model tensor size does not match topology");
        for (auto& v : *ten) {
            v = static_cast<T>(get_f32(is));
            if (!std::isfinite(v)) throw ParseError("model contains non-finite weights");
        }
    }
    return model;
}

template <std::floating_point T>
void save_model_file(const std::string& path, const Cnn<T>& model) {
    make_parent_dirs(path);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write model " + path);
    save_model(os, model);
}

template <std::floating_point T>
Cnn<T> load_model_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read model " + path);
    return load_model<T>(is);
}

}  // namespace saflo
