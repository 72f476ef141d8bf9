#pragma once

#include "udos/core.hpp"
#include "udos/kv.hpp"
#include "udos/mitigator.hpp"
#include "udos/profiler.hpp"
#include "udos/watchdog.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace udos {

enum class WorkloadKind : std::uint8_t { BenignHttp, FragmentSmack, RangeHeader, Slowloris };

const char* workload_kind_name(WorkloadKind k);
bool parse_workload_kind(const std::string& name, WorkloadKind& out);

/// One traffic source. BenignHttp is a closed-loop requester paced by
/// `period`; the attack kinds are open-loop streams at `rate_per_s`,
/// optionally gated into bursts of `burst_len` repeating every `period`.
struct WorkloadSpec {
    WorkloadKind kind = WorkloadKind::BenignHttp;
    ClientId client;
    Nanos start = 0;
    Nanos stop = -1;  // -1: until scenario end
    Nanos period = kNanosPerSecond;
    double rate_per_s = 0;
    Nanos burst_len = 0;  // 0: continuous
    bool keep_alive = true;
    bool monitor = false;
    Nanos retry_after = kNanosPerSecond + kNanosPerSecond / 2;
    double cost_scale = 1.0;
};

/// Per-request cost of one workload kind. `last_layer` is the deepest layer
/// the packet reaches; a packet stopping short of Application never
/// finalizes normally and is force-expired instead.
struct KindCost {
    LayerUsage per_packet{};
    std::uint64_t memory_bytes = 0;
    double app_jitter_pct = 0;
    Layer last_layer = Layer::Application;
};

struct CostModel {
    std::array<KindCost, 4> kinds{};

    static CostModel defaults();
    KindCost& of(WorkloadKind k) { return kinds[static_cast<std::size_t>(k)]; }
    const KindCost& of(WorkloadKind k) const { return kinds[static_cast<std::size_t>(k)]; }
};

struct ServerParams {
    std::uint32_t num_cores = 4;
    std::uint64_t core_speed = 3'000'000'000;  // retired instructions per second
    std::uint64_t memory_capacity = 1ull << 30;
    std::uint64_t connection_pool = 512;
    double teardown_rate_per_s = 25.0;
};

struct ScenarioConfig {
    std::uint64_t seed = 1;
    Nanos duration = 30 * kNanosPerSecond;
    ServerParams server;
    bool mitigation_enabled = true;
    double packet_expiry_factor = 2.0;  // x window_time
    std::vector<WorkloadSpec> workloads;
    CostModel costs = CostModel::defaults();
    // `policy.*` overrides, applied on top of the loaded PolicyConfig.
    std::vector<KvEntry> policy_overrides;
};

struct ScenarioError : std::runtime_error {
    explicit ScenarioError(const std::string& what) : std::runtime_error(what) {}
};

ScenarioConfig load_scenario_file(const std::string& path);
ScenarioConfig load_scenario_text(const std::string& text, const std::string& origin = "<string>");

/// Throws ScenarioError on duplicate client addresses, zero workloads, or
/// non-positive timing parameters.
void validate_scenario(const ScenarioConfig& scn);

/// Applies the scenario's policy overrides to a base policy.
PolicyConfig effective_policy(const PolicyConfig& base, const ScenarioConfig& scn);

/// Cumulative per-core counters the probe generator reads and advances.
struct CounterBoard {
    explicit CounterBoard(std::uint32_t cores) : per_core(cores) {}
    ResourceVector& at(std::uint32_t cpu) { return per_core.at(cpu); }
    std::vector<ResourceVector> per_core;
};

/// One packet's traversal plan: per-layer costs, start core, and optional
/// core switches (time-ordered). Layer boundary times follow the service
/// model: layer duration = layer instructions / core_speed.
struct ProbePlan {
    std::uint64_t packet_id = 0;
    ClientId client;
    std::uint32_t program_id = 0;
    Nanos start = 0;
    std::uint32_t cpu = 0;
    LayerUsage cost{};
    Layer last_layer = Layer::Application;
    std::uint64_t core_speed = 3'000'000'000;
    std::vector<std::pair<Nanos, std::uint32_t>> switches;
};

/// Expands a plan into the ordered probe events a real deployment would see,
/// advancing the counter board. Entry/exit pairs appear in traversal order;
/// switches split a layer into segments with re-baselined snapshots.
std::vector<ProbeEvent> generate_probe_events(const ProbePlan& plan, CounterBoard& board);

/// Server occupancy snapshot used to derive watchdog metrics.
struct ServerOccupancy {
    Nanos busy_core_ns = 0;       // summed core-busy time over the interval
    Nanos interval_ns = 0;
    std::uint32_t num_cores = 1;
    std::uint64_t active_memory = 0;
    std::uint64_t memory_capacity = 1;
    std::uint64_t established_connections = 0;
    std::uint64_t connection_pool = 1;
};

/// cpu = busy-core fraction over the interval, memory = active/capacity,
/// connection_pool = established/pool.
SystemMetrics compute_system_metrics(const ServerOccupancy& occ, Nanos now);

struct MetricsLogRow {
    SystemMetrics metrics;
    bool active = false;
    double monitor_latency_ms = 0;

    bool operator==(const MetricsLogRow&) const = default;
};

struct ClientStats {
    std::uint64_t issued = 0;
    std::uint64_t succeeded = 0;
    std::uint64_t dropped_blocked = 0;
    std::uint64_t refused_connection = 0;
    std::uint64_t refused_memory = 0;
    std::uint64_t cancelled_by_teardown = 0;
    double latency_sum_ms = 0;
    std::uint64_t latency_samples = 0;
    LayerUsage injected{};
    LayerUsage profiled_drained{};
    LayerUsage profiled_ring_dropped{};
};

struct PacketLog {
    ClientId client;
    Nanos arrival = 0;
    bool ingress_dropped = false;
};

struct SimulationReport {
    std::vector<MetricsLogRow> metrics;
    std::vector<BlockEntry> blocks;
    std::vector<PacketRecord> drained_records;  // drain order; becomes records.bin
    std::map<ClientId, ClientStats> clients;
    std::vector<PacketLog> packets;
    std::vector<std::pair<Nanos, ClientId>> accept_events;

    // Per-tick series aligned with `metrics`.
    std::vector<std::uint64_t> active_memory_series;
    std::map<ClientId, std::vector<std::uint64_t>> established_series;
    std::map<ClientId, std::array<std::vector<std::uint64_t>, kLayerCount>>
        injected_instr_series;

    std::uint64_t watchdog_transitions = 0;
    bool watchdog_ever_active = false;
    std::uint64_t ring_dropped_records = 0;

    double mean_latency_ms(bool include_monitor = false) const;
    double failure_rate(bool include_monitor = false) const;
};

/// Observer taps for trace export; both optional.
struct RunHooks {
    std::function<void(const ProbeEvent&)> on_probe;
    std::function<void(const SystemMetrics&)> on_metrics;
};

/// Runs one scenario to completion. Deterministic for a given seed.
SimulationReport run_scenario(const ScenarioConfig& scn, const PolicyConfig& policy,
                              const RunHooks* hooks = nullptr);

struct QosRow {
    int clients = 0;
    bool mitigation = false;
    double mean_latency_ms = 0;
    double failure_rate = 0;
    bool watchdog_activated = false;
};

/// Replicates the scenario's benign template client 1..max_clients times and
/// runs each count with mitigation on and off.
std::vector<QosRow> run_qos_sweep(const ScenarioConfig& base, const PolicyConfig& policy,
                                  int max_clients);

struct ThresholdRow {
    std::uint64_t threshold = 0;
    double mean_latency_ms = 0;  // monitor client
    double drop_rate = 0;        // load clients
};

struct ThresholdSweepResult {
    std::vector<ThresholdRow> rows;
    double baseline_latency_ms = 0;  // mitigation disabled
};

/// Reruns the scenario with the application-layer instruction threshold set
/// to each value in ascending order, plus one mitigation-off baseline. Each
/// row averages `repeats` runs over consecutive seeds.
ThresholdSweepResult run_threshold_sweep(const ScenarioConfig& base, const PolicyConfig& policy,
                                         const std::vector<std::uint64_t>& thresholds,
                                         int repeats = 5);

}  // namespace udos
