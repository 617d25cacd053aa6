#pragma once

/**
 * @file netsim.hpp
 * @brief Deterministic discrete-event model of an MPTCP proxy downlink.
 *
 * One user device is reached over two shared links (cellular and WiFi). Every
 * connection has one subflow per link with a fixed congestion window; pacing
 * rate is cwnd / smoothed RTT. Segments are serialized FIFO per link, may be
 * lost at the configured rate, and are recovered by retransmission timeout
 * only. The receiver reassembles the connection-level byte stream and counts
 * out-of-order arrivals. An optional connection-level receive window bounds
 * how far new data may run ahead of in-order delivery.
 */

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "saflo/core.hpp"
#include "saflo/schedulers.hpp"

namespace saflo {

// ===== Link model =====

struct PathModel {
    PathId id = PathId::Wifi;
    double one_way_delay = 0.0;  ///< seconds
    double bandwidth = 1.0;      ///< bytes/second
    double loss_rate = 0.0;      ///< [0, 1)
    std::uint32_t mtu = 1500;    ///< max segment payload, bytes

    void validate() const {
        const std::string n(to_string(id));
        if (!(one_way_delay >= 0.0)) throw ConfigError(n + ".one_way_delay must be >= 0");
        if (!(bandwidth > 0.0)) throw ConfigError(n + ".bandwidth must be > 0");
        if (!(loss_rate >= 0.0 && loss_rate < 1.0)) throw ConfigError(n + ".loss_rate must be in [0, 1)");
        if (mtu < 536) throw ConfigError(n + ".mtu must be >= 536");
    }

    SimTime delay_ns() const { return from_seconds(one_way_delay); }
    SimTime serialization_ns(std::uint32_t len) const {
        return from_seconds(static_cast<double>(len) / bandwidth);
    }
};

inline PathModel default_cellular_path() { return {PathId::Cellular, 0.030, 5e6, 0.001, 1500}; }
inline PathModel default_wifi_path() { return {PathId::Wifi, 0.003, 30e6, 0.001, 1500}; }

struct TxResult {
    SimTime departure = 0;  ///< serialization complete
    SimTime arrival = 0;
    bool lost = false;
};

/// FIFO serializer in front of a fixed-delay, lossy pipe.
class Link {
public:
    explicit Link(PathModel model) : model_(model) { model_.validate(); }

    TxResult transmit(SimTime now, std::uint32_t len, Rng& rng) {
        if (len > model_.mtu) throw std::invalid_argument("segment exceeds path mtu");
        TxResult r;
        const SimTime start = std::max(now, busy_until_);
        r.departure = start + model_.serialization_ns(len);
        busy_until_ = r.departure;
        r.arrival = r.departure + model_.delay_ns();
        r.lost = model_.loss_rate > 0.0 && rng.bernoulli(model_.loss_rate);
        return r;
    }

    const PathModel& model() const { return model_; }
    SimTime busy_until() const { return busy_until_; }

private:
    PathModel model_;
    SimTime busy_until_ = 0;
};

// ===== Receiver reassembly =====

struct DeliverResult {
    std::uint64_t delivered = 0;  ///< bytes released in order by this arrival
    bool out_of_order = false;
    bool duplicate = false;
};

class Reassembler {
public:
    DeliverResult deliver(std::uint64_t seq, std::uint32_t len) {
        DeliverResult r;
        const std::uint64_t end = seq + len;
        if (end <= next_expected_) {
            r.duplicate = true;
            return r;
        }
        if (seq > next_expected_) {
            auto [it, inserted] = buffered_.emplace(seq, len);
            if (!inserted) {
                if (it->second >= len) {
                    r.duplicate = true;
                    return r;
                }
                it->second = len;
            }
            r.out_of_order = true;
            return r;
        }
        const std::uint64_t before = next_expected_;
        next_expected_ = end;
        for (auto it = buffered_.begin(); it != buffered_.end() && it->first <= next_expected_;) {
            next_expected_ = std::max(next_expected_, it->first + it->second);
            it = buffered_.erase(it);
        }
        r.delivered = next_expected_ - before;
        return r;
    }

    std::uint64_t next_expected() const { return next_expected_; }
    std::size_t buffered_segments() const { return buffered_.size(); }
    const std::map<std::uint64_t, std::uint32_t>& buffered() const { return buffered_; }

private:
    std::uint64_t next_expected_ = 0;
    std::map<std::uint64_t, std::uint32_t> buffered_;
};

// ===== Event queue =====

/// Same-time ordering; lower runs first.
enum class EventPriority : std::uint8_t {
    SegmentArrival = 0,
    AckArrival = 1,
    LossTimer = 2,
    SchedulerCallback = 3,
    ManagerTick = 4,
    DetectorTick = 5,
    WorkloadArrival = 6,
};

template <typename Payload>
class EventQueue {
public:
    struct Entry {
        SimTime time;
        EventPriority priority;
        std::uint64_t seq;
        Payload payload;
    };

    void push(SimTime time, EventPriority prio, Payload payload) {
        heap_.push(Entry{time, prio, next_seq_++, std::move(payload)});
    }

    std::optional<Entry> pop() {
        if (heap_.empty()) return std::nullopt;
        Entry e = heap_.top();
        heap_.pop();
        return e;
    }

    std::optional<SimTime> next_time() const {
        if (heap_.empty()) return std::nullopt;
        return heap_.top().time;
    }

    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }

private:
    struct Later {
        bool operator()(const Entry& a, const Entry& b) const {
            if (a.time != b.time) return a.time > b.time;
            if (a.priority != b.priority) return a.priority > b.priority;
            return a.seq > b.seq;
        }
    };
    std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
    std::uint64_t next_seq_ = 0;
};

// ===== Metrics and tracing =====

struct PerfMetrics {
    double throughput = 0.0;  ///< bytes/second
    std::uint64_t retransmissions = 0;
    std::uint64_t out_of_order = 0;
    double completion_time = 0.0;  ///< seconds
};

enum class TraceEvent : std::uint8_t { Send, Depart, Arrive, Lost, Ack };

inline std::string_view to_string(TraceEvent e) {
    switch (e) {
        case TraceEvent::Send: return "send";
        case TraceEvent::Depart: return "depart";
        case TraceEvent::Arrive: return "arrive";
        case TraceEvent::Lost: return "lost";
        case TraceEvent::Ack: return "ack";
    }
    return "?";
}

struct TraceRow {
    SimTime time = 0;
    Token token = kNoToken;
    PathId path = PathId::Wifi;
    std::uint64_t seq = 0;
    std::uint32_t len = 0;
    TraceEvent event = TraceEvent::Send;
};

/// `time_ns,token,path,seq,len,event`
inline void write_trace_csv(std::ostream& os, std::span<const TraceRow> rows) {
    os << "time_ns,token,path,seq,len,event\n";
    for (const auto& r : rows)
        os << r.time << ',' << r.token << ',' << to_string(r.path) << ',' << r.seq << ',' << r.len << ','
           << to_string(r.event) << '\n';
}

struct ConnectionStats {
    SimTime opened_at = 0;
    std::optional<SimTime> completed_at;
    std::uint64_t submitted = 0;
    std::uint64_t delivered = 0;
    std::uint64_t retransmissions = 0;
    std::uint64_t out_of_order = 0;
    std::uint64_t duplicates = 0;
    std::array<std::uint64_t, 2> sent_bytes{};  ///< per path, original + retransmitted
};

// ===== Simulator =====

struct SubflowIds {
    std::uint8_t local_id = 0;
    std::uint8_t remote_id = 0;
};

struct NetConfig {
    PathModel cellular = default_cellular_path();
    PathModel wifi = default_wifi_path();
    std::uint64_t cwnd = 64 * kKiB;       ///< per subflow
    std::uint64_t rwnd = 256 * kKiB;      ///< connection receive window; 0 = unbounded
    std::uint64_t burst_cap = 64 * kKiB;
    double min_rto = 0.200;               ///< seconds
    bool trace = false;
    SubflowIds wifi_ids{0, 0};
    SubflowIds cellular_ids{1, 1};

    void validate() const {
        cellular.validate();
        wifi.validate();
        if (cellular.id != PathId::Cellular || wifi.id != PathId::Wifi)
            throw ConfigError("path ids do not match their roles");
        if (cwnd < std::max(cellular.mtu, wifi.mtu)) throw ConfigError("cwnd must hold at least one mtu");
        if (burst_cap == 0) throw ConfigError("burst_cap must be > 0");
        if (rwnd != 0 && rwnd < std::max(cellular.mtu, wifi.mtu)) throw ConfigError("rwnd must be 0 or >= mtu");
        if (!(min_rto > 0.0)) throw ConfigError("min_rto must be > 0");
        if (wifi_ids.local_id == cellular_ids.local_id && wifi_ids.remote_id == cellular_ids.remote_id)
            throw ConfigError("wifi and cellular subflows need distinct (local_id, remote_id)");
    }
};

struct SimEvent {
    SimTime time = 0;
    EventPriority kind = EventPriority::SegmentArrival;
    Token token = kNoToken;
};

class Simulator {
public:
    /// Periodic actor; returns the time of its next invocation (<= now stops it).
    using TickFn = std::function<SimTime(SimTime now)>;

    Simulator(NetConfig cfg, SchedulerKind kind, std::uint64_t seed, ControlMap* cmap = nullptr,
              DetectionMap* dmap = nullptr)
        : cfg_((cfg.validate(), cfg)),
          links_{Link(cfg_.cellular), Link(cfg_.wifi)},
          scheduler_(kind, mix_seed(seed, 1), cmap, dmap),
          loss_rng_(mix_seed(seed, 2)) {}

    Token open_connection() {
        const Token t = tokens_.allocate();
        Connection c;
        c.token = t;
        // Index 0 = WiFi, 1 = cellular.
        c.sf[0].ctx = {{t, cfg_.wifi_ids.local_id, cfg_.wifi_ids.remote_id}, 0, 0.0, PathId::Wifi};
        c.sf[1].ctx = {{t, cfg_.cellular_ids.local_id, cfg_.cellular_ids.remote_id}, 0, 0.0, PathId::Cellular};
        for (auto& s : c.sf) {
            const auto& p = link_for(s.ctx.path).model();
            s.srtt = 2.0 * p.one_way_delay + static_cast<double>(p.mtu) / p.bandwidth;
            s.ctx.pace = static_cast<double>(cfg_.cwnd) / s.srtt;
        }
        c.stats.opened_at = now_;
        conns_.emplace(t, std::move(c));
        return t;
    }

    /// Application write of `bytes` into the connection send buffer at `at`.
    void submit(Token token, SimTime at, std::uint64_t bytes) {
        conn(token);
        if (bytes == 0) return;
        queue_.push(at, EventPriority::WorkloadArrival, AppData{token, bytes});
    }

    /// Unbounded backlog over [from, until).
    void saturate(Token token, SimTime from, SimTime until) {
        auto& c = conn(token);
        c.sat_from = from;
        c.sat_until = until;
        queue_.push(from, EventPriority::WorkloadArrival, AppData{token, 0});
    }

    /// Close the connection once every submitted byte has been delivered.
    void close_when_done(Token token) { conn(token).close_when_done = true; }

    void close(Token token) { conn(token).open = false; }

    void add_ticker(EventPriority prio, SimTime first, TickFn fn) {
        tickers_.push_back({prio, std::move(fn)});
        queue_.push(first, prio, Tick{tickers_.size() - 1});
    }

    std::optional<SimEvent> step() {
        auto e = queue_.pop();
        if (!e) return std::nullopt;
        now_ = e->time;
        SimEvent out{e->time, e->priority, kNoToken};
        std::visit([&](auto& p) { out.token = apply(p); }, e->payload);
        return out;
    }

    /// Processes every event with time < end, then advances the clock to end.
    void run_until(SimTime end) {
        while (auto t = queue_.next_time()) {
            if (*t >= end) break;
            step();
        }
        now_ = std::max(now_, end);
    }

    SimTime now() const { return now_; }
    const NetConfig& config() const { return cfg_; }
    SchedulerKind scheduler_kind() const { return scheduler_.kind(); }
    std::size_t pending_events() const { return queue_.size(); }

    std::set<Token> live_tokens() const {
        std::set<Token> out;
        for (const auto& [t, c] : conns_)
            if (c.open) out.insert(t);
        return out;
    }

    bool is_complete(Token token) const { return conn(token).stats.completed_at.has_value(); }
    const ConnectionStats& stats(Token token) const { return conn(token).stats; }
    std::vector<Token> tokens() const {
        std::vector<Token> out;
        for (const auto& [t, c] : conns_) out.push_back(t);
        return out;
    }

    std::vector<SubflowContext> subflow_contexts(Token token) const {
        const auto& c = conn(token);
        return {c.sf[0].ctx, c.sf[1].ctx};
    }

    std::uint64_t backlog(Token token) const { return conn(token).backlog; }

    /// Run-level metrics over all connections, throughput measured over
    /// [0, horizon).
    PerfMetrics metrics(SimTime horizon) const {
        PerfMetrics m;
        std::uint64_t delivered = 0;
        double completion_sum = 0.0;
        std::size_t completed = 0;
        for (const auto& [t, c] : conns_) {
            m.retransmissions += c.stats.retransmissions;
            m.out_of_order += c.stats.out_of_order;
            delivered += delivered_before(c, horizon);
            if (c.stats.completed_at) {
                completion_sum += to_seconds(*c.stats.completed_at - c.stats.opened_at);
                ++completed;
            }
        }
        if (horizon > 0) m.throughput = static_cast<double>(delivered) / to_seconds(horizon);
        if (completed) m.completion_time = completion_sum / static_cast<double>(completed);
        return m;
    }

    const std::vector<TraceRow>& trace() const { return trace_; }

private:
    struct Inflight {
        std::uint32_t len;
        std::uint32_t tx_id;
        SimTime sent_at;
        bool retx;
    };

    struct Subflow {
        SubflowContext ctx;
        double srtt = 0.0;
        std::map<std::uint64_t, Inflight> inflight;
    };

    struct Connection {
        Token token = kNoToken;
        std::array<Subflow, 2> sf;
        std::uint64_t backlog = 0;
        SimTime sat_from = 0;
        SimTime sat_until = 0;
        std::uint64_t next_seq = 0;
        std::uint64_t data_acked = 0;
        std::deque<std::pair<std::uint64_t, std::uint32_t>> retx_queue;
        Reassembler rx;
        std::vector<std::pair<SimTime, std::uint64_t>> delivery_log;  ///< cumulative bytes by time
        std::uint32_t tx_counter = 0;
        bool open = true;
        bool close_when_done = false;
        bool sched_pending = false;
        ConnectionStats stats;
    };

    struct SegArrival {
        Token token;
        std::uint8_t sf;
        std::uint64_t seq;
        std::uint32_t len;
        std::uint32_t tx_id;
    };
    struct AckArrival {
        Token token;
        std::uint8_t sf;
        std::uint64_t seq;
        std::uint32_t tx_id;
        std::uint64_t cum_ack;
    };
    struct LossTimer {
        Token token;
        std::uint8_t sf;
        std::uint64_t seq;
        std::uint32_t tx_id;
    };
    struct SchedCall {
        Token token;
    };
    struct Tick {
        std::size_t index;
    };
    struct AppData {
        Token token;
        std::uint64_t bytes;
    };
    using Payload = std::variant<SegArrival, AckArrival, LossTimer, SchedCall, Tick, AppData>;

    struct Ticker {
        EventPriority prio;
        TickFn fn;
    };

    static constexpr std::uint64_t kSaturatedBacklog = std::uint64_t{1} << 40;

    Connection& conn(Token t) {
        auto it = conns_.find(t);
        if (it == conns_.end()) throw std::out_of_range("unknown token " + std::to_string(t));
        return it->second;
    }
    const Connection& conn(Token t) const {
        auto it = conns_.find(t);
        if (it == conns_.end()) throw std::out_of_range("unknown token " + std::to_string(t));
        return it->second;
    }

    Link& link_for(PathId p) { return links_[p == PathId::Cellular ? 0 : 1]; }
    const Link& link_for(PathId p) const { return links_[p == PathId::Cellular ? 0 : 1]; }

    bool saturated(const Connection& c) const {
        return c.sat_until > c.sat_from && now_ >= c.sat_from && now_ < c.sat_until;
    }

    std::uint64_t assignable(const Connection& c) const {
        std::uint64_t pending = saturated(c) ? kSaturatedBacklog : c.backlog;
        if (cfg_.rwnd != 0) {
            const std::uint64_t in_window = c.next_seq - c.data_acked;
            pending = std::min(pending, cfg_.rwnd > in_window ? cfg_.rwnd - in_window : 0);
        }
        return pending;
    }

    static std::uint64_t delivered_before(const Connection& c, SimTime horizon) {
        std::uint64_t out = 0;
        for (const auto& [t, cum] : c.delivery_log) {
            if (t >= horizon) break;
            out = cum;
        }
        return out;
    }

    SimTime rto(const Connection& c) const {
        double max_srtt = 0.0;
        for (const auto& s : c.sf) max_srtt = std::max(max_srtt, s.srtt);
        return from_seconds(std::max(cfg_.min_rto, 2.0 * max_srtt));
    }

    void request_schedule(Connection& c) {
        if (c.sched_pending) return;
        c.sched_pending = true;
        queue_.push(now_, EventPriority::SchedulerCallback, SchedCall{c.token});
    }

    void record(Token t, PathId p, std::uint64_t seq, std::uint32_t len, TraceEvent ev, SimTime at) {
        if (cfg_.trace) trace_.push_back({at, t, p, seq, len, ev});
    }

    void send_segment(Connection& c, std::size_t sf_idx, std::uint64_t seq, std::uint32_t len, bool retx) {
        auto& s = c.sf[sf_idx];
        const std::uint32_t tx_id = ++c.tx_counter;
        auto& link = link_for(s.ctx.path);
        const TxResult r = link.transmit(now_, len, loss_rng_);
        s.inflight[seq] = Inflight{len, tx_id, now_, retx};
        s.ctx.wmem += len;
        c.stats.sent_bytes[s.ctx.path == PathId::Cellular ? 0 : 1] += len;
        record(c.token, s.ctx.path, seq, len, TraceEvent::Send, now_);
        record(c.token, s.ctx.path, seq, len, TraceEvent::Depart, r.departure);
        if (r.lost)
            record(c.token, s.ctx.path, seq, len, TraceEvent::Lost, r.departure);
        else
            queue_.push(r.arrival, EventPriority::SegmentArrival,
                        SegArrival{c.token, static_cast<std::uint8_t>(sf_idx), seq, len, tx_id});
        queue_.push(now_ + rto(c), EventPriority::LossTimer,
                    LossTimer{c.token, static_cast<std::uint8_t>(sf_idx), seq, tx_id});
    }

    std::array<SchedSubflow, 2> view(const Connection& c) const {
        std::array<SchedSubflow, 2> v;
        for (std::size_t i = 0; i < 2; ++i) {
            v[i].ctx = c.sf[i].ctx;
            v[i].free_cwnd = cfg_.cwnd > c.sf[i].ctx.wmem ? cfg_.cwnd - c.sf[i].ctx.wmem : 0;
        }
        return v;
    }

    void run_scheduler(Connection& c) {
        while (!c.retx_queue.empty()) {
            const auto [seq, len] = c.retx_queue.front();
            auto v = view(c);
            auto idx = scheduler_.select_retransmit(v, len);
            if (!idx) break;
            c.retx_queue.pop_front();
            send_segment(c, *idx, seq, len, true);
        }
        for (;;) {
            const std::uint64_t avail = assignable(c);
            if (avail == 0) break;
            auto v = view(c);
            SchedConnection sc{c.token, avail, std::min(cfg_.cellular.mtu, cfg_.wifi.mtu), cfg_.burst_cap};
            const auto d = scheduler_.select(v, sc, now_);
            if (d.none()) break;
            const auto mtu = link_for(c.sf[*d.index].ctx.path).model().mtu;
            std::uint64_t left = d.burst;
            while (left > 0) {
                const auto len = static_cast<std::uint32_t>(std::min<std::uint64_t>(left, mtu));
                send_segment(c, *d.index, c.next_seq, len, false);
                c.next_seq += len;
                left -= len;
            }
            if (saturated(c))
                c.stats.submitted += d.burst;
            else
                c.backlog -= d.burst;
        }
    }

    void maybe_complete(Connection& c) {
        if (c.stats.completed_at || saturated(c) || c.backlog > 0) return;
        if (c.stats.submitted == 0 || c.rx.next_expected() < c.stats.submitted) return;
        c.stats.completed_at = now_;
        if (c.close_when_done) c.open = false;
    }

    Token apply(SegArrival& e) {
        auto& c = conn(e.token);
        const auto& s = c.sf[e.sf];
        record(c.token, s.ctx.path, e.seq, e.len, TraceEvent::Arrive, now_);
        const auto r = c.rx.deliver(e.seq, e.len);
        if (r.out_of_order) ++c.stats.out_of_order;
        if (r.duplicate) ++c.stats.duplicates;
        if (r.delivered > 0) {
            c.stats.delivered += r.delivered;
            c.delivery_log.emplace_back(now_, c.stats.delivered);
            maybe_complete(c);
        }
        queue_.push(now_ + link_for(s.ctx.path).model().delay_ns(), EventPriority::AckArrival,
                    AckArrival{e.token, e.sf, e.seq, e.tx_id, c.rx.next_expected()});
        return e.token;
    }

    Token apply(AckArrival& e) {
        auto& c = conn(e.token);
        auto& s = c.sf[e.sf];
        record(c.token, s.ctx.path, e.seq, 0, TraceEvent::Ack, now_);
        c.data_acked = std::max(c.data_acked, e.cum_ack);
        auto it = s.inflight.find(e.seq);
        if (it != s.inflight.end() && it->second.tx_id == e.tx_id) {
            if (!it->second.retx) {
                const double sample = to_seconds(now_ - it->second.sent_at);
                s.srtt = 0.875 * s.srtt + 0.125 * sample;
                s.ctx.pace = static_cast<double>(cfg_.cwnd) / s.srtt;
            }
            s.ctx.wmem -= it->second.len;
            s.inflight.erase(it);
        }
        request_schedule(c);
        return e.token;
    }

    Token apply(LossTimer& e) {
        auto& c = conn(e.token);
        auto& s = c.sf[e.sf];
        auto it = s.inflight.find(e.seq);
        if (it == s.inflight.end() || it->second.tx_id != e.tx_id) return e.token;
        on_loss_detected(c, s, it);
        return e.token;
    }

    void on_loss_detected(Connection& c, Subflow& s, std::map<std::uint64_t, Inflight>::iterator it) {
        const auto seq = it->first;
        const auto len = it->second.len;
        s.ctx.wmem -= len;
        s.inflight.erase(it);
        ++c.stats.retransmissions;
        // Already delivered (spurious timeout): nothing to resend.
        if (seq + len <= c.rx.next_expected()) return;
        c.retx_queue.emplace_back(seq, len);
        request_schedule(c);
    }

    Token apply(SchedCall& e) {
        auto& c = conn(e.token);
        c.sched_pending = false;
        run_scheduler(c);
        return e.token;
    }

    Token apply(Tick& e) {
        const SimTime next = tickers_[e.index].fn(now_);
        if (next > now_) queue_.push(next, tickers_[e.index].prio, Tick{e.index});
        return kNoToken;
    }

    Token apply(AppData& e) {
        auto& c = conn(e.token);
        c.backlog += e.bytes;
        c.stats.submitted += e.bytes;
        request_schedule(c);
        return e.token;
    }

    NetConfig cfg_;
    std::array<Link, 2> links_;  ///< cellular, wifi
    Scheduler scheduler_;
    Rng loss_rng_;
    TokenAllocator tokens_;
    std::map<Token, Connection> conns_;
    EventQueue<Payload> queue_;
    std::vector<Ticker> tickers_;
    std::vector<TraceRow> trace_;
    SimTime now_ = 0;
};

}  // namespace saflo
