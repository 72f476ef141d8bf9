#include "udos/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <queue>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace udos {

const char* workload_kind_name(WorkloadKind k) {
    switch (k) {
        case WorkloadKind::BenignHttp: return "benign";
        case WorkloadKind::FragmentSmack: return "fragment_smack";
        case WorkloadKind::RangeHeader: return "range_header";
        case WorkloadKind::Slowloris: return "slowloris";
    }
    return "?";
}

bool parse_workload_kind(const std::string& name, WorkloadKind& out) {
    for (WorkloadKind k : {WorkloadKind::BenignHttp, WorkloadKind::FragmentSmack,
                           WorkloadKind::RangeHeader, WorkloadKind::Slowloris}) {
        if (name == workload_kind_name(k)) {
            out = k;
            return true;
        }
    }
    return false;
}

CostModel CostModel::defaults() {
    CostModel m;
    auto set = [&](WorkloadKind k, LayerUsage usage, std::uint64_t mem, Layer last) {
        m.of(k).per_packet = usage;
        m.of(k).memory_bytes = mem;
        m.of(k).last_layer = last;
    };
    // Layer order: link, network, transport, application.
    set(WorkloadKind::BenignHttp,
        {ResourceVector{2'000'000, 1'000'000, 0}, ResourceVector{3'000'000, 1'000'000, 0},
         ResourceVector{69'000'000, 5'000'000, 0}, ResourceVector{50'000, 10'000'000, 0}},
        64 * 1024, Layer::Application);
    // Fragment floods spend their cycles in reassembly at the network layer;
    // upper layers see the packet but do no work.
    set(WorkloadKind::FragmentSmack,
        {ResourceVector{100'000, 10'000, 0}, ResourceVector{2'000'000, 30'000, 0},
         ResourceVector{0, 0, 0}, ResourceVector{0, 0, 0}},
        0, Layer::Application);
    // Overlapping-range responses are assembled in memory and held until the
    // request finishes or its session is torn down.
    set(WorkloadKind::RangeHeader,
        {ResourceVector{2'000'000, 1'000'000, 0}, ResourceVector{3'000'000, 1'000'000, 0},
         ResourceVector{6'000'000'000, 2'000'000, 0}, ResourceVector{400'000, 300'000'000, 0}},
        16 * 1024 * 1024, Layer::Application);
    // Partial requests never reach the application handler.
    set(WorkloadKind::Slowloris,
        {ResourceVector{50'000, 10'000, 0}, ResourceVector{50'000, 10'000, 0},
         ResourceVector{100'000, 20'000, 0}, ResourceVector{0, 0, 0}},
        0, Layer::Transport);
    return m;
}

namespace {

Nanos layer_duration(std::uint64_t instructions, std::uint64_t core_speed) {
    if (instructions == 0) return 0;
    unsigned __int128 ns = static_cast<unsigned __int128>(instructions) * kNanosPerSecond;
    return static_cast<Nanos>(ns / core_speed);
}

std::uint64_t scale_by_elapsed(std::uint64_t total, Nanos elapsed, Nanos duration) {
    if (duration <= 0 || elapsed <= 0) return 0;
    if (elapsed >= duration) return total;
    unsigned __int128 part = static_cast<unsigned __int128>(total) *
                             static_cast<unsigned __int128>(elapsed);
    return static_cast<std::uint64_t>(part / static_cast<unsigned __int128>(duration));
}

}  // namespace

std::vector<ProbeEvent> generate_probe_events(const ProbePlan& plan, CounterBoard& board) {
    std::vector<ProbeEvent> out;
    Nanos t = plan.start;
    std::uint32_t cpu = plan.cpu;
    std::size_t next_switch = 0;

    for (Layer layer : all_layers()) {
        const ResourceVector& cost = plan.cost[layer_index(layer)];
        const Nanos dur = layer_duration(cost.instructions, plan.core_speed);
        const Nanos layer_start = t;
        const Nanos layer_end = t + dur;

        ProbeEvent entry;
        entry.kind = ProbeKind::LayerEntry;
        entry.timestamp = layer_start;
        entry.cpu_id = cpu;
        entry.packet_id = plan.packet_id;
        entry.layer = layer;
        entry.counters = board.at(cpu);
        entry.client = plan.client;
        if (layer == Layer::Application) entry.program_id = plan.program_id;
        out.push_back(entry);

        // Consume any switches that fall inside this layer.
        std::uint64_t instr_done = 0;
        std::uint64_t mbm_done = 0;
        while (next_switch < plan.switches.size() &&
               plan.switches[next_switch].first > layer_start &&
               plan.switches[next_switch].first < layer_end) {
            const Nanos at = plan.switches[next_switch].first;
            const std::uint32_t to = plan.switches[next_switch].second;
            const std::uint64_t instr_upto =
                scale_by_elapsed(cost.instructions, at - layer_start, dur);
            const std::uint64_t mbm_upto = scale_by_elapsed(cost.mbm_bytes, at - layer_start, dur);
            ResourceVector& leaving = board.at(cpu);
            leaving.instructions = saturating_add(leaving.instructions, instr_upto - instr_done);
            leaving.mbm_bytes = saturating_add(leaving.mbm_bytes, mbm_upto - mbm_done);
            instr_done = instr_upto;
            mbm_done = mbm_upto;

            ProbeEvent sw;
            sw.kind = ProbeKind::CoreSwitch;
            sw.timestamp = at;
            sw.cpu_id = cpu;
            sw.packet_id = plan.packet_id;
            sw.counters = board.at(cpu);
            sw.to_cpu = to;
            sw.to_counters = board.at(to);
            out.push_back(sw);
            cpu = to;
            ++next_switch;
        }

        ResourceVector& finishing = board.at(cpu);
        finishing.instructions = saturating_add(finishing.instructions,
                                                cost.instructions - instr_done);
        finishing.mbm_bytes = saturating_add(finishing.mbm_bytes, cost.mbm_bytes - mbm_done);

        ProbeEvent exit;
        exit.kind = ProbeKind::LayerExit;
        exit.timestamp = layer_end;
        exit.cpu_id = cpu;
        exit.packet_id = plan.packet_id;
        exit.layer = layer;
        exit.counters = board.at(cpu);
        out.push_back(exit);

        t = layer_end;
        if (layer == plan.last_layer) break;
    }
    return out;
}

SystemMetrics compute_system_metrics(const ServerOccupancy& occ, Nanos now) {
    SystemMetrics m;
    m.timestamp = now;
    m.cpu_usage = occ.interval_ns > 0
                      ? static_cast<double>(occ.busy_core_ns) /
                            (static_cast<double>(occ.interval_ns) * occ.num_cores)
                      : 0.0;
    m.memory_usage =
        static_cast<double>(occ.active_memory) / static_cast<double>(occ.memory_capacity);
    m.connection_pool_usage = static_cast<double>(occ.established_connections) /
                              static_cast<double>(occ.connection_pool);
    return m;
}

double SimulationReport::mean_latency_ms(bool include_monitor) const {
    (void)include_monitor;
    double sum = 0;
    std::uint64_t n = 0;
    for (const auto& [client, st] : clients) {
        sum += st.latency_sum_ms;
        n += st.latency_samples;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

double SimulationReport::failure_rate(bool include_monitor) const {
    (void)include_monitor;
    std::uint64_t failed = 0;
    std::uint64_t issued = 0;
    for (const auto& [client, st] : clients) {
        failed += st.dropped_blocked + st.cancelled_by_teardown;
        issued += st.issued;
    }
    return issued == 0 ? 0.0 : static_cast<double>(failed) / static_cast<double>(issued);
}

// ---------------------------------------------------------------------------
// Scenario config
// ---------------------------------------------------------------------------

namespace {

WorkloadSpec& workload_slot(std::vector<WorkloadSpec>& v, std::size_t idx) {
    if (v.size() <= idx) v.resize(idx + 1);
    return v[idx];
}

void apply_cost_key(CostModel& costs, const std::string& rest, const KvEntry& e,
                    const std::string& origin) {
    // rest: <kind>.instr.<layer> | <kind>.mbm.<layer> | <kind>.memory_bytes |
    //       <kind>.jitter_pct | <kind>.last_layer
    auto dot = rest.find('.');
    if (dot == std::string::npos) {
        throw ConfigError(origin, e.line, "unknown key `cost." + rest + "`");
    }
    WorkloadKind kind;
    if (!parse_workload_kind(rest.substr(0, dot), kind)) {
        throw ConfigError(origin, e.line, "unknown workload kind in `cost." + rest + "`");
    }
    std::string field = rest.substr(dot + 1);
    KindCost& kc = costs.of(kind);
    if (field == "memory_bytes") {
        kc.memory_bytes = KvMap::to_u64(e, origin);
    } else if (field == "jitter_pct") {
        kc.app_jitter_pct = KvMap::to_double(e, origin);
    } else if (field == "last_layer") {
        Layer l;
        if (!parse_layer(e.value, l)) {
            throw ConfigError(origin, e.line, "unknown layer `" + e.value + "`");
        }
        kc.last_layer = l;
    } else if (field.rfind("instr.", 0) == 0) {
        Layer l;
        if (!parse_layer(field.substr(6), l)) {
            throw ConfigError(origin, e.line, "unknown layer in `cost." + rest + "`");
        }
        kc.per_packet[layer_index(l)].instructions = KvMap::to_u64(e, origin);
    } else if (field.rfind("mbm.", 0) == 0) {
        Layer l;
        if (!parse_layer(field.substr(4), l)) {
            throw ConfigError(origin, e.line, "unknown layer in `cost." + rest + "`");
        }
        kc.per_packet[layer_index(l)].mbm_bytes = KvMap::to_u64(e, origin);
    } else {
        throw ConfigError(origin, e.line, "unknown key `cost." + rest + "`");
    }
}

void apply_workload_key(std::vector<WorkloadSpec>& workloads, const std::string& rest,
                        const KvEntry& e, const std::string& origin) {
    auto dot = rest.find('.');
    if (dot == std::string::npos) {
        throw ConfigError(origin, e.line, "unknown key `workload." + rest + "`");
    }
    std::size_t idx = 0;
    try {
        idx = std::stoul(rest.substr(0, dot));
    } catch (...) {
        throw ConfigError(origin, e.line, "bad workload index in `workload." + rest + "`");
    }
    WorkloadSpec& w = workload_slot(workloads, idx);
    std::string field = rest.substr(dot + 1);
    if (field == "kind") {
        if (!parse_workload_kind(e.value, w.kind)) {
            throw ConfigError(origin, e.line, "unknown workload kind `" + e.value + "`");
        }
    } else if (field == "client") {
        try {
            w.client = parse_client_id(e.value);
        } catch (const std::invalid_argument& ex) {
            throw ConfigError(origin, e.line, ex.what());
        }
    } else if (field == "start") {
        w.start = seconds_to_nanos(KvMap::to_double(e, origin));
    } else if (field == "stop") {
        w.stop = seconds_to_nanos(KvMap::to_double(e, origin));
    } else if (field == "period") {
        w.period = seconds_to_nanos(KvMap::to_double(e, origin));
    } else if (field == "rate") {
        w.rate_per_s = KvMap::to_double(e, origin);
    } else if (field == "burst") {
        w.burst_len = seconds_to_nanos(KvMap::to_double(e, origin));
    } else if (field == "keep_alive") {
        w.keep_alive = KvMap::to_bool(e, origin);
    } else if (field == "monitor") {
        w.monitor = KvMap::to_bool(e, origin);
    } else if (field == "retry_after") {
        w.retry_after = seconds_to_nanos(KvMap::to_double(e, origin));
    } else if (field == "cost_scale") {
        w.cost_scale = KvMap::to_double(e, origin);
    } else {
        throw ConfigError(origin, e.line, "unknown key `workload." + rest + "`");
    }
}

}  // namespace

ScenarioConfig load_scenario_text(const std::string& text, const std::string& origin) {
    KvMap kv = KvMap::parse_text(text, origin);
    ScenarioConfig scn;
    for (const auto& e : kv.entries()) {
        const std::string& k = e.key;
        if (k == "seed") {
            scn.seed = KvMap::to_u64(e, origin);
        } else if (k == "duration") {
            scn.duration = seconds_to_nanos(KvMap::to_double(e, origin));
        } else if (k == "mitigation.enabled") {
            scn.mitigation_enabled = KvMap::to_bool(e, origin);
        } else if (k == "packet_expiry_factor") {
            scn.packet_expiry_factor = KvMap::to_double(e, origin);
        } else if (k == "server.cores") {
            scn.server.num_cores = static_cast<std::uint32_t>(KvMap::to_u64(e, origin));
        } else if (k == "server.core_speed") {
            scn.server.core_speed = KvMap::to_u64(e, origin);
        } else if (k == "server.memory_capacity") {
            scn.server.memory_capacity = KvMap::to_u64(e, origin);
        } else if (k == "server.connection_pool") {
            scn.server.connection_pool = KvMap::to_u64(e, origin);
        } else if (k == "server.teardown_rate") {
            scn.server.teardown_rate_per_s = KvMap::to_double(e, origin);
        } else if (k.rfind("workload.", 0) == 0) {
            apply_workload_key(scn.workloads, k.substr(9), e, origin);
        } else if (k.rfind("cost.", 0) == 0) {
            apply_cost_key(scn.costs, k.substr(5), e, origin);
        } else if (k.rfind("policy.", 0) == 0) {
            scn.policy_overrides.push_back(KvEntry{k.substr(7), e.value, e.line});
        } else {
            throw ConfigError(origin, e.line, "unknown key `" + k + "`");
        }
    }
    return scn;
}

ScenarioConfig load_scenario_file(const std::string& path) {
    KvMap kv = KvMap::parse_file(path);
    std::string text;
    // Re-serialize entries through the text loader to keep one code path.
    ScenarioConfig scn;
    for (const auto& e : kv.entries()) {
        text += e.key + " = " + e.value + "\n";
    }
    return load_scenario_text(text, path);
}

void validate_scenario(const ScenarioConfig& scn) {
    if (scn.workloads.empty()) {
        throw ScenarioError("scenario has no workloads");
    }
    if (scn.duration <= 0) {
        throw ScenarioError("duration must be positive");
    }
    if (scn.server.num_cores == 0 || scn.server.core_speed == 0 ||
        scn.server.connection_pool == 0 || scn.server.memory_capacity == 0) {
        throw ScenarioError("server parameters must be positive");
    }
    std::set<ClientId> seen;
    for (std::size_t i = 0; i < scn.workloads.size(); ++i) {
        const WorkloadSpec& w = scn.workloads[i];
        if (!seen.insert(w.client).second) {
            throw ScenarioError("workload " + std::to_string(i) + " reuses client " +
                                format_client_id(w.client));
        }
        if (w.start < 0) {
            throw ScenarioError("workload " + std::to_string(i) + " start must be >= 0");
        }
        if (w.period <= 0) {
            throw ScenarioError("workload " + std::to_string(i) + " period must be positive");
        }
        if (w.kind != WorkloadKind::BenignHttp && w.rate_per_s <= 0) {
            throw ScenarioError("workload " + std::to_string(i) + " rate must be positive");
        }
        if (w.cost_scale <= 0) {
            throw ScenarioError("workload " + std::to_string(i) + " cost_scale must be positive");
        }
    }
}

PolicyConfig effective_policy(const PolicyConfig& base, const ScenarioConfig& scn) {
    PolicyConfig cfg = base;
    for (const auto& e : scn.policy_overrides) {
        apply_policy_override(cfg, e.key, e.value, "scenario", e.line);
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

namespace {

enum class EvType : std::uint8_t {
    Arrival,      // workload issues a packet/request
    Probe,        // prebuilt probe event reaches the profiler
    JobEnd,       // core frees; request may complete
    Tick,         // watchdog cadence
    BlockExpiry,  // blocklist TTL sweep
    TeardownStep  // close one session / free one retained allocation
};

struct Ev {
    Nanos at = 0;
    std::uint64_t seq = 0;
    EvType type = EvType::Arrival;
    std::size_t workload = 0;
    std::uint64_t packet_id = 0;
    std::uint32_t core = 0;
    ClientId client;
    ProbeEvent probe;
};

struct EvOrder {
    bool operator()(const Ev& a, const Ev& b) const {
        if (a.at != b.at) return a.at > b.at;
        return a.seq > b.seq;
    }
};

struct Request {
    std::size_t workload = 0;
    ClientId client;
    Nanos arrival = 0;
    LayerUsage cost{};
    std::uint64_t mem_bytes = 0;
    Layer last_layer = Layer::Application;
    bool monitor = false;
    bool keep_alive_session = false;  // completion must not close the session
    bool counts_connection = false;   // opened a (non keep-alive) connection
};

class Engine : public EnforcementHook {
public:
    Engine(const ScenarioConfig& scn, const PolicyConfig& policy, const RunHooks* hooks)
        : scn_(scn),
          policy_(effective_policy(policy, scn)),
          hooks_(hooks),
          board_(scn.server.num_cores),
          rng_(scn.seed) {
        auto violations = validate_policy(policy_);
        if (!violations.empty()) {
            throw ScenarioError("invalid policy: " + violations.front());
        }
        validate_scenario(scn_);
        for (std::uint32_t c = 0; c < scn_.server.num_cores; ++c) {
            rings_.emplace_back(policy_.ring_buffer_bytes_per_core);
            free_cores_.insert(c);
        }
        wstate_.resize(scn_.workloads.size());
        for (const auto& w : scn_.workloads) {
            report_.clients[w.client];  // materialize stats rows
            report_.established_series[w.client];
            auto& series = report_.injected_instr_series[w.client];
            for (auto& v : series) v.clear();
        }
    }

    SimulationReport run();

    // EnforcementHook
    void drop_ingress(const ClientId& client) override { ingress_blocked_.insert(client); }
    void teardown_sessions(const ClientId& client) override;

private:
    struct WorkloadState {
        Nanos last_issue = -1;
        std::uint64_t session_count = 0;
        bool keepalive_open = false;
        Nanos next_open_loop = -1;
    };

    void push_event(Ev ev) {
        ev.seq = next_seq_++;
        queue_.push(std::move(ev));
    }

    void schedule_first_arrivals();
    void schedule_open_loop(std::size_t widx, Nanos from);
    Nanos next_burst_instant(const WorkloadSpec& w, Nanos from) const;

    void handle_arrival(const Ev& ev);
    void handle_probe(const Ev& ev);
    void handle_job_end(const Ev& ev);
    void handle_tick(const Ev& ev);
    void handle_block_expiry(const Ev& ev);
    void handle_teardown_step(const Ev& ev);

    void dispatch_from_queue();
    void start_job(std::uint64_t packet_id, std::uint32_t core);
    void complete_request(std::uint64_t packet_id, Nanos now);
    void fail_request(std::size_t widx, Nanos now);
    void schedule_next_request(std::size_t widx, Nanos completed_at);

    void occupy_core(std::uint32_t core, Nanos now);
    void release_core(std::uint32_t core, Nanos now);
    void account_busy(Nanos now);

    bool open_connection(std::size_t widx, const ClientId& client, Nanos now);
    void close_connection(const ClientId& client);

    void ingest_record(const PacketRecord& rec);
    void drain_rings();

    LayerUsage scaled_cost(const WorkloadSpec& w, const KindCost& kc);

    const ScenarioConfig scn_;
    PolicyConfig policy_;
    const RunHooks* hooks_;

    std::priority_queue<Ev, std::vector<Ev>, EvOrder> queue_;
    std::uint64_t next_seq_ = 0;
    Nanos now_ = 0;

    CounterBoard board_;
    std::mt19937_64 rng_;

    Profiler profiler_;
    std::vector<RingBuffer> rings_;
    WindowStore windows_;
    Blocklist blocks_;
    MitigationState mstate_;

    std::vector<WorkloadState> wstate_;
    std::unordered_map<std::uint64_t, Request> requests_;
    std::uint64_t next_packet_id_ = 1;

    std::deque<std::uint64_t> run_queue_;
    std::set<std::uint32_t> free_cores_;
    std::unordered_set<std::uint64_t> cancelled_;

    // Busy-core accounting between ticks.
    std::uint32_t busy_cores_ = 0;
    Nanos busy_last_change_ = 0;
    Nanos busy_accum_ns_ = 0;
    Nanos last_tick_ = 0;

    // Server occupancy state.
    std::uint64_t established_total_ = 0;
    std::uint64_t mem_total_ = 0;
    std::map<ClientId, std::deque<std::pair<std::uint64_t, std::uint64_t>>> mem_entries_;
    std::map<ClientId, std::uint64_t> mem_by_client_;

    std::set<ClientId> ingress_blocked_;
    std::map<ClientId, bool> teardown_running_;

    double last_monitor_latency_ms_ = 0;
    SimulationReport report_;
};

LayerUsage Engine::scaled_cost(const WorkloadSpec& w, const KindCost& kc) {
    LayerUsage cost = kc.per_packet;
    double scale = w.cost_scale;
    double jitter = 1.0;
    if (kc.app_jitter_pct > 0) {
        std::uniform_real_distribution<double> d(1.0 - kc.app_jitter_pct / 100.0,
                                                 1.0 + kc.app_jitter_pct / 100.0);
        jitter = d(rng_);
    }
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        double f = scale;
        if (i == layer_index(Layer::Application)) f *= jitter;
        cost[i].instructions = static_cast<std::uint64_t>(
            static_cast<double>(cost[i].instructions) * f + 0.5);
        cost[i].mbm_bytes = static_cast<std::uint64_t>(
            static_cast<double>(cost[i].mbm_bytes) * f + 0.5);
    }
    return cost;
}

Nanos Engine::next_burst_instant(const WorkloadSpec& w, Nanos from) const {
    // Open-loop kinds send at 1/rate spacing inside bursts. burst_len == 0
    // means a single continuous burst starting at w.start.
    if (from < w.start) return w.start;
    if (w.burst_len <= 0 || w.burst_len >= w.period) return from;
    const Nanos into_cycle = (from - w.start) % w.period;
    if (into_cycle < w.burst_len) return from;
    return from + (w.period - into_cycle);
}

void Engine::schedule_open_loop(std::size_t widx, Nanos from) {
    const WorkloadSpec& w = scn_.workloads[widx];
    const Nanos gap = static_cast<Nanos>(1e9 / w.rate_per_s + 0.5);
    Nanos at = next_burst_instant(w, from);
    const Nanos stop = w.stop < 0 ? scn_.duration : w.stop;
    if (at >= stop || at > scn_.duration) return;
    Ev ev;
    ev.at = at;
    ev.type = EvType::Arrival;
    ev.workload = widx;
    push_event(ev);
    wstate_[widx].next_open_loop = at + gap;
}

void Engine::schedule_first_arrivals() {
    for (std::size_t i = 0; i < scn_.workloads.size(); ++i) {
        const WorkloadSpec& w = scn_.workloads[i];
        if (w.kind == WorkloadKind::BenignHttp) {
            Ev ev;
            ev.at = w.start;
            ev.type = EvType::Arrival;
            ev.workload = i;
            push_event(ev);
        } else {
            schedule_open_loop(i, w.start);
        }
    }
    const Nanos interval = policy_.watchdog_interval_ns();
    for (Nanos t = interval; t <= scn_.duration; t += interval) {
        Ev ev;
        ev.at = t;
        ev.type = EvType::Tick;
        push_event(ev);
    }
}

void Engine::occupy_core(std::uint32_t core, Nanos now) {
    account_busy(now);
    free_cores_.erase(core);
    ++busy_cores_;
}

void Engine::release_core(std::uint32_t core, Nanos now) {
    account_busy(now);
    free_cores_.insert(core);
    --busy_cores_;
}

void Engine::account_busy(Nanos now) {
    busy_accum_ns_ += static_cast<Nanos>(busy_cores_) * (now - busy_last_change_);
    busy_last_change_ = now;
}

bool Engine::open_connection(std::size_t widx, const ClientId& client, Nanos now) {
    if (established_total_ >= scn_.server.connection_pool) {
        return false;
    }
    ++established_total_;
    ++wstate_[widx].session_count;

    ProbeEvent accept;
    accept.kind = ProbeKind::ConnAccept;
    accept.timestamp = now;
    accept.cpu_id = 0;
    accept.client = client;
    if (hooks_ && hooks_->on_probe) hooks_->on_probe(accept);
    if (profiler_.on_conn_accept(accept) == AcceptAttribution::Standalone) {
        windows_.note_standalone_accept(client, now);
    } else {
        // Ground truth for conservation: the accept lands in a record.
        ClientStats& st = report_.clients[client];
        ResourceVector& app = st.injected[layer_index(Layer::Application)];
        app.new_connections = saturating_add(app.new_connections, 1);
    }
    report_.accept_events.emplace_back(now, client);
    return true;
}

void Engine::close_connection(const ClientId& client) {
    for (std::size_t i = 0; i < scn_.workloads.size(); ++i) {
        if (scn_.workloads[i].client == client && wstate_[i].session_count > 0) {
            --wstate_[i].session_count;
            --established_total_;
            return;
        }
    }
}

void Engine::handle_arrival(const Ev& ev) {
    const std::size_t widx = ev.workload;
    const WorkloadSpec& w = scn_.workloads[widx];
    WorkloadState& ws = wstate_[widx];
    ClientStats& st = report_.clients[w.client];

    const Nanos stop = w.stop < 0 ? scn_.duration : w.stop;
    const bool closed_loop = w.kind == WorkloadKind::BenignHttp;
    if (now_ >= stop) {
        return;
    }

    // Open-loop sources keep their own clock regardless of outcome.
    if (!closed_loop) schedule_open_loop(widx, wstate_[widx].next_open_loop);

    ws.last_issue = now_;
    ++st.issued;

    // Passive enforcement: ingress drop precedes everything, including
    // connection handling and accounting.
    if (ingress_blocked_.count(w.client) != 0) {
        ++st.dropped_blocked;
        report_.packets.push_back(PacketLog{w.client, now_, true});
        if (closed_loop) fail_request(widx, now_);
        return;
    }

    // Connection handling.
    if (w.kind == WorkloadKind::Slowloris) {
        if (!open_connection(widx, w.client, now_)) {
            ++st.refused_connection;
            return;
        }
    } else if (w.kind != WorkloadKind::FragmentSmack) {
        if (w.keep_alive) {
            if (!ws.keepalive_open) {
                if (!open_connection(widx, w.client, now_)) {
                    ++st.refused_connection;
                    if (closed_loop) fail_request(widx, now_);
                    return;
                }
                ws.keepalive_open = true;
            }
        } else {
            if (!open_connection(widx, w.client, now_)) {
                ++st.refused_connection;
                if (closed_loop) fail_request(widx, now_);
                return;
            }
        }
    }

    const KindCost& kc = scn_.costs.of(w.kind);
    const std::uint64_t mem = kc.memory_bytes == 0
                                  ? 0
                                  : static_cast<std::uint64_t>(
                                        static_cast<double>(kc.memory_bytes) * w.cost_scale + 0.5);
    if (mem > 0) {
        if (mem_total_ + mem > scn_.server.memory_capacity) {
            ++st.refused_memory;
            if (w.kind != WorkloadKind::Slowloris && w.kind != WorkloadKind::FragmentSmack &&
                !w.keep_alive) {
                close_connection(w.client);
            }
            if (closed_loop) fail_request(widx, now_);
            return;
        }
    }

    const std::uint64_t packet_id = next_packet_id_++;
    Request req;
    req.workload = widx;
    req.client = w.client;
    req.arrival = now_;
    req.cost = scaled_cost(w, kc);
    req.mem_bytes = mem;
    req.last_layer = kc.last_layer;
    req.monitor = w.monitor;
    req.keep_alive_session = w.keep_alive && w.kind != WorkloadKind::Slowloris &&
                             w.kind != WorkloadKind::FragmentSmack;
    req.counts_connection = !w.keep_alive && w.kind != WorkloadKind::FragmentSmack &&
                            w.kind != WorkloadKind::Slowloris;
    if (mem > 0) {
        mem_total_ += mem;
        mem_entries_[w.client].emplace_back(packet_id, mem);
        mem_by_client_[w.client] += mem;
    }
    requests_.emplace(packet_id, std::move(req));
    report_.packets.push_back(PacketLog{w.client, now_, false});

    run_queue_.push_back(packet_id);
    dispatch_from_queue();
}

void Engine::dispatch_from_queue() {
    while (!free_cores_.empty() && !run_queue_.empty()) {
        std::uint64_t packet_id = run_queue_.front();
        run_queue_.pop_front();
        if (cancelled_.count(packet_id) != 0) {
            cancelled_.erase(packet_id);
            continue;
        }
        std::uint32_t core = *free_cores_.begin();
        start_job(packet_id, core);
    }
}

void Engine::start_job(std::uint64_t packet_id, std::uint32_t core) {
    Request& req = requests_.at(packet_id);

    ProbePlan plan;
    plan.packet_id = packet_id;
    plan.client = req.client;
    plan.program_id = 1;
    plan.start = now_;
    plan.cpu = core;
    plan.cost = req.cost;
    plan.last_layer = req.last_layer;
    plan.core_speed = scn_.server.core_speed;
    std::vector<ProbeEvent> probes = generate_probe_events(plan, board_);

    occupy_core(core, now_);

    Nanos end = now_;
    for (ProbeEvent& p : probes) {
        end = std::max(end, p.timestamp);
        Ev ev;
        ev.at = p.timestamp;
        ev.type = EvType::Probe;
        ev.packet_id = packet_id;
        ev.probe = std::move(p);
        push_event(ev);
    }

    Ev done;
    done.at = end;
    done.type = EvType::JobEnd;
    done.packet_id = packet_id;
    done.core = core;
    push_event(done);
}

void Engine::handle_probe(const Ev& ev) {
    const ProbeEvent& p = ev.probe;
    if (hooks_ && hooks_->on_probe) hooks_->on_probe(p);
    profiler_.on_event(p);
    if (p.kind == ProbeKind::LayerExit) {
        auto it = requests_.find(p.packet_id);
        if (it != requests_.end()) {
            ClientStats& st = report_.clients[it->second.client];
            st.injected[layer_index(p.layer)] = resource_vector_add(
                st.injected[layer_index(p.layer)], it->second.cost[layer_index(p.layer)]);
        }
    }
}

void Engine::handle_job_end(const Ev& ev) {
    release_core(ev.core, now_);
    complete_request(ev.packet_id, now_);
    dispatch_from_queue();
}

void Engine::complete_request(std::uint64_t packet_id, Nanos now) {
    auto it = requests_.find(packet_id);
    if (it == requests_.end()) return;
    Request& req = it->second;
    const std::size_t widx = req.workload;
    ClientStats& st = report_.clients[req.client];

    if (req.last_layer == Layer::Application) {
        // Fully processed: the profiler assembles and ships the record.
        PacketRecord rec = profiler_.finalize_packet(packet_id, now);
        if (!rings_[rec.cpu_id % rings_.size()].push(rec)) {
            ++report_.ring_dropped_records;
            st.profiled_ring_dropped = layer_usage_add(st.profiled_ring_dropped, rec.usage);
        }

        ++st.succeeded;
        const double latency_ms = static_cast<double>(now - req.arrival) / 1e6;
        st.latency_sum_ms += latency_ms;
        ++st.latency_samples;
        if (req.monitor) last_monitor_latency_ms_ = latency_ms;

        // Release resources the request held.
        if (req.mem_bytes > 0) {
            auto& entries = mem_entries_[req.client];
            for (auto e = entries.begin(); e != entries.end(); ++e) {
                if (e->first == packet_id) {
                    mem_total_ -= e->second;
                    mem_by_client_[req.client] -= e->second;
                    entries.erase(e);
                    break;
                }
            }
        }
        if (req.counts_connection) close_connection(req.client);

        schedule_next_request(widx, now);
    }
    // Packets stopping short of Application stay in the profiler until
    // expiry; the engine-side request bookkeeping is done either way.
    requests_.erase(it);
}

void Engine::fail_request(std::size_t widx, Nanos now) {
    const WorkloadSpec& w = scn_.workloads[widx];
    if (w.kind != WorkloadKind::BenignHttp) return;
    const Nanos stop = w.stop < 0 ? scn_.duration : w.stop;
    Nanos at = now + w.retry_after;
    if (at >= stop) return;
    Ev ev;
    ev.at = at;
    ev.type = EvType::Arrival;
    ev.workload = widx;
    push_event(ev);
}

void Engine::schedule_next_request(std::size_t widx, Nanos completed_at) {
    const WorkloadSpec& w = scn_.workloads[widx];
    if (w.kind != WorkloadKind::BenignHttp) return;
    const Nanos stop = w.stop < 0 ? scn_.duration : w.stop;
    // Closed loop with pacing: next issue no earlier than the previous issue
    // plus the period, and never before the current request finished.
    Nanos at = std::max(completed_at, wstate_[widx].last_issue + w.period);
    if (at >= stop) return;
    Ev ev;
    ev.at = at;
    ev.type = EvType::Arrival;
    ev.workload = widx;
    push_event(ev);
}

void Engine::teardown_sessions(const ClientId& client) {
    // Cancel this client's queued (not yet serving) requests; connectionless
    // backlog has no session to tear and still gets processed.
    for (std::uint64_t packet_id : run_queue_) {
        auto it = requests_.find(packet_id);
        if (it == requests_.end() || it->second.client != client) continue;
        const std::size_t widx = it->second.workload;
        if (scn_.workloads[widx].kind == WorkloadKind::FragmentSmack) continue;
        cancelled_.insert(packet_id);
        ++report_.clients[client].cancelled_by_teardown;
        requests_.erase(it);
        // Retained memory of the cancelled request is released by the ramp.
        fail_request(widx, now_);
    }

    if (!teardown_running_[client]) {
        teardown_running_[client] = true;
        Ev ev;
        ev.at = now_ + static_cast<Nanos>(1e9 / scn_.server.teardown_rate_per_s + 0.5);
        ev.type = EvType::TeardownStep;
        ev.client = client;
        push_event(ev);
    }

    // Keep-alive sessions of the client must be re-established after the
    // block, whatever the teardown ramp does.
    for (std::size_t i = 0; i < scn_.workloads.size(); ++i) {
        if (scn_.workloads[i].client == client) {
            wstate_[i].keepalive_open = false;
        }
    }
}

void Engine::handle_teardown_step(const Ev& ev) {
    const ClientId& client = ev.client;
    bool more = false;

    // Close one established session.
    for (std::size_t i = 0; i < scn_.workloads.size(); ++i) {
        if (scn_.workloads[i].client == client && wstate_[i].session_count > 0) {
            --wstate_[i].session_count;
            --established_total_;
            break;
        }
    }
    // Free one retained allocation.
    auto entries = mem_entries_.find(client);
    if (entries != mem_entries_.end() && !entries->second.empty()) {
        mem_total_ -= entries->second.front().second;
        mem_by_client_[client] -= entries->second.front().second;
        entries->second.pop_front();
    }

    for (std::size_t i = 0; i < scn_.workloads.size(); ++i) {
        if (scn_.workloads[i].client == client && wstate_[i].session_count > 0) more = true;
    }
    if (entries != mem_entries_.end() && !entries->second.empty()) more = true;

    if (more) {
        Ev next;
        next.at = now_ + static_cast<Nanos>(1e9 / scn_.server.teardown_rate_per_s + 0.5);
        next.type = EvType::TeardownStep;
        next.client = client;
        push_event(next);
    } else {
        teardown_running_[client] = false;
    }
}

void Engine::ingest_record(const PacketRecord& rec) {
    report_.drained_records.push_back(rec);
    ClientStats& st = report_.clients[rec.client];
    st.profiled_drained = layer_usage_add(st.profiled_drained, rec.usage);
    windows_.ingest(rec);
}

void Engine::drain_rings() {
    for (auto& ring : rings_) {
        for (PacketRecord& rec : ring.drain(SIZE_MAX)) {
            ingest_record(rec);
        }
    }
}

void Engine::handle_tick(const Ev&) {
    // Expire stuck packets through the same ring path as normal records.
    const Nanos expiry = static_cast<Nanos>(scn_.packet_expiry_factor *
                                            static_cast<double>(policy_.window_time_ns()));
    for (PacketRecord& rec : profiler_.expire_stale(now_, expiry)) {
        ClientStats& st = report_.clients[rec.client];
        if (!rings_[rec.cpu_id % rings_.size()].push(rec)) {
            ++report_.ring_dropped_records;
            st.profiled_ring_dropped = layer_usage_add(st.profiled_ring_dropped, rec.usage);
        }
    }

    drain_rings();
    windows_.evict_stale(now_, policy_);

    account_busy(now_);
    ServerOccupancy occ;
    occ.busy_core_ns = busy_accum_ns_;
    occ.interval_ns = now_ - last_tick_;
    occ.num_cores = scn_.server.num_cores;
    occ.active_memory = mem_total_;
    occ.memory_capacity = scn_.server.memory_capacity;
    occ.established_connections = established_total_;
    occ.connection_pool = scn_.server.connection_pool;
    SystemMetrics m = compute_system_metrics(occ, now_);
    busy_accum_ns_ = 0;
    last_tick_ = now_;

    bool was_active = mstate_.active;
    mstate_ = watchdog_tick(mstate_, m, policy_);
    if (mstate_.active != was_active) ++report_.watchdog_transitions;
    if (mstate_.active) report_.watchdog_ever_active = true;

    if (hooks_ && hooks_->on_metrics) hooks_->on_metrics(m);

    report_.metrics.push_back(MetricsLogRow{m, mstate_.active, last_monitor_latency_ms_});
    report_.active_memory_series.push_back(mem_total_);
    for (std::size_t i = 0; i < scn_.workloads.size(); ++i) {
        report_.established_series[scn_.workloads[i].client].push_back(wstate_[i].session_count);
    }
    for (auto& [client, series] : report_.injected_instr_series) {
        const ClientStats& st = report_.clients[client];
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            series[l].push_back(st.injected[l].instructions);
        }
    }

    if (mstate_.active && scn_.mitigation_enabled) {
        for (const BlockDecision& d : select_and_decide(windows_, blocks_, policy_, now_)) {
            blocks_.apply_block(d, now_, policy_, *this);
            const BlockEntry* e = blocks_.find(d.client);
            report_.blocks.push_back(*e);
            Ev exp;
            exp.at = e->expires_at;
            exp.type = EvType::BlockExpiry;
            push_event(exp);
        }
    }
}

void Engine::handle_block_expiry(const Ev&) {
    for (const ClientId& client : blocks_.expire_blocks(now_)) {
        ingress_blocked_.erase(client);
    }
}

SimulationReport Engine::run() {
    busy_last_change_ = 0;
    schedule_first_arrivals();

    while (!queue_.empty()) {
        Ev ev = queue_.top();
        if (ev.at > scn_.duration) break;
        queue_.pop();
        now_ = ev.at;
        switch (ev.type) {
            case EvType::Arrival: handle_arrival(ev); break;
            case EvType::Probe: handle_probe(ev); break;
            case EvType::JobEnd: handle_job_end(ev); break;
            case EvType::Tick: handle_tick(ev); break;
            case EvType::BlockExpiry: handle_block_expiry(ev); break;
            case EvType::TeardownStep: handle_teardown_step(ev); break;
        }
    }

    // End-of-run flush so conservation can be checked exactly.
    now_ = scn_.duration;
    for (PacketRecord& rec : profiler_.flush_all(now_)) {
        ClientStats& st = report_.clients[rec.client];
        if (!rings_[rec.cpu_id % rings_.size()].push(rec)) {
            ++report_.ring_dropped_records;
            st.profiled_ring_dropped = layer_usage_add(st.profiled_ring_dropped, rec.usage);
        }
    }
    drain_rings();
    return std::move(report_);
}

}  // namespace

SimulationReport run_scenario(const ScenarioConfig& scn, const PolicyConfig& policy,
                              const RunHooks* hooks) {
    Engine engine(scn, policy, hooks);
    return engine.run();
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

std::vector<QosRow> run_qos_sweep(const ScenarioConfig& base, const PolicyConfig& policy,
                                  int max_clients) {
    if (max_clients < 1) {
        throw ScenarioError("qos sweep needs at least one client");
    }
    // The first benign workload is the template client.
    const WorkloadSpec* tmpl = nullptr;
    for (const auto& w : base.workloads) {
        if (w.kind == WorkloadKind::BenignHttp && !w.monitor) {
            tmpl = &w;
            break;
        }
    }
    if (tmpl == nullptr) {
        throw ScenarioError("qos sweep scenario needs a benign template workload");
    }

    std::vector<QosRow> rows;
    for (int n = 1; n <= max_clients; ++n) {
        ScenarioConfig scn = base;
        scn.workloads.clear();
        for (const auto& w : base.workloads) {
            if (w.kind == WorkloadKind::BenignHttp && !w.monitor) continue;
            scn.workloads.push_back(w);
        }
        for (int i = 0; i < n; ++i) {
            WorkloadSpec w = *tmpl;
            ClientId c = tmpl->client;
            c.addr[3] = static_cast<std::uint8_t>(c.addr[3] + i);
            w.client = c;
            scn.workloads.push_back(w);
        }
        for (bool mitigation : {true, false}) {
            scn.mitigation_enabled = mitigation;
            SimulationReport rep = run_scenario(scn, policy, nullptr);
            QosRow row;
            row.clients = n;
            row.mitigation = mitigation;
            row.mean_latency_ms = rep.mean_latency_ms();
            row.failure_rate = rep.failure_rate();
            row.watchdog_activated = rep.watchdog_ever_active;
            rows.push_back(row);
        }
    }
    return rows;
}

ThresholdSweepResult run_threshold_sweep(const ScenarioConfig& base, const PolicyConfig& policy,
                                         const std::vector<std::uint64_t>& thresholds,
                                         int repeats) {
    if (thresholds.empty()) {
        throw ScenarioError("threshold sweep needs at least one threshold");
    }
    if (repeats < 1) {
        throw ScenarioError("threshold sweep needs at least one repeat");
    }
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
        if (thresholds[i] <= thresholds[i - 1]) {
            throw ScenarioError("thresholds must be strictly ascending");
        }
    }

    auto stats_of = [&](const SimulationReport& rep) {
        double monitor_sum = 0;
        std::uint64_t monitor_n = 0;
        std::uint64_t load_failed = 0;
        std::uint64_t load_issued = 0;
        PolicyConfig eff = effective_policy(policy, base);
        for (const auto& w : base.workloads) {
            const ClientStats& st = rep.clients.at(w.client);
            if (w.monitor) {
                monitor_sum += st.latency_sum_ms;
                monitor_n += st.latency_samples;
            } else if (w.kind == WorkloadKind::BenignHttp &&
                       eff.whitelist.count(w.client) == 0) {
                load_failed += st.dropped_blocked + st.cancelled_by_teardown;
                load_issued += st.issued;
            }
        }
        double latency = monitor_n == 0 ? 0.0 : monitor_sum / static_cast<double>(monitor_n);
        double drops = load_issued == 0
                           ? 0.0
                           : static_cast<double>(load_failed) / static_cast<double>(load_issued);
        return std::make_pair(latency, drops);
    };

    auto averaged = [&](const ScenarioConfig& scn, const PolicyConfig& p) {
        double latency = 0;
        double drops = 0;
        for (int rep = 0; rep < repeats; ++rep) {
            ScenarioConfig run = scn;
            run.seed = scn.seed + static_cast<std::uint64_t>(rep);
            auto [l, d] = stats_of(run_scenario(run, p, nullptr));
            latency += l;
            drops += d;
        }
        return std::make_pair(latency / repeats, drops / repeats);
    };

    ThresholdSweepResult result;

    ScenarioConfig off = base;
    off.mitigation_enabled = false;
    result.baseline_latency_ms = averaged(off, policy).first;

    for (std::uint64_t threshold : thresholds) {
        ScenarioConfig scn = base;
        scn.mitigation_enabled = true;
        PolicyConfig p = policy;
        p.instruction_thresholds[layer_index(Layer::Application)] = threshold;
        auto [latency, drops] = averaged(scn, p);
        result.rows.push_back(ThresholdRow{threshold, latency, drops});
    }
    return result;
}

}  // namespace udos
