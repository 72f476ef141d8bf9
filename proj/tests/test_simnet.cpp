#include <doctest.h>

#include "udos/profiler.hpp"
#include "udos/simnet.hpp"

#include <string>

using namespace udos;

namespace {

constexpr Nanos kSec = kNanosPerSecond;

const std::string kQuiescent =
    "seed = 1\n"
    "duration = 5\n"
    "server.cores = 4\n"
    "workload.0.kind = benign\n"
    "workload.0.client = 10.0.0.10\n"
    "workload.0.start = 0.5\n"
    "workload.0.period = 0.5\n";

const std::string kFragSmall =
    "seed = 3\n"
    "duration = 6\n"
    "server.cores = 2\n"
    "workload.0.kind = benign\n"
    "workload.0.client = 10.0.0.10\n"
    "workload.0.start = 0.5\n"
    "workload.0.period = 1.0\n"
    "workload.1.kind = fragment_smack\n"
    "workload.1.client = 10.0.0.66\n"
    "workload.1.start = 1.0\n"
    "workload.1.rate = 3000\n";

}  // namespace

TEST_CASE("system metrics examples") {
    ServerOccupancy idle;
    idle.interval_ns = 100'000'000;
    idle.num_cores = 4;
    idle.memory_capacity = 1 << 30;
    idle.connection_pool = 512;
    SystemMetrics m = compute_system_metrics(idle, 5);
    CHECK(m.cpu_usage == 0.0);
    CHECK(m.memory_usage == 0.0);
    CHECK(m.connection_pool_usage == 0.0);
    CHECK(m.timestamp == 5);

    ServerOccupancy busy = idle;
    busy.busy_core_ns = 4 * 100'000'000LL;  // all four cores busy all interval
    CHECK(compute_system_metrics(busy, 0).cpu_usage == 1.0);

    ServerOccupancy pool = idle;
    pool.established_connections = 384;
    CHECK(compute_system_metrics(pool, 0).connection_pool_usage == 0.75);
}

TEST_CASE("benign probe plan expands to four entry/exit pairs in order") {
    CounterBoard board(2);
    ProbePlan plan;
    plan.packet_id = 1;
    plan.client = parse_client_id("10.0.0.1");
    plan.start = 1000;
    plan.cpu = 0;
    plan.cost = CostModel::defaults().of(WorkloadKind::BenignHttp).per_packet;
    plan.core_speed = 3'000'000'000;

    auto events = generate_probe_events(plan, board);
    REQUIRE(events.size() == 8);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(events[2 * i].kind == ProbeKind::LayerEntry);
        CHECK(events[2 * i].layer == all_layers()[i]);
        CHECK(events[2 * i + 1].kind == ProbeKind::LayerExit);
        CHECK(events[2 * i + 1].layer == all_layers()[i]);
        CHECK(events[2 * i].timestamp <= events[2 * i + 1].timestamp);
    }
    // Counters advanced by the full per-packet cost.
    std::uint64_t total_instr = 0;
    for (const auto& v : plan.cost) total_instr += v.instructions;
    CHECK(board.at(0).instructions == total_instr);
    CHECK(board.at(1).instructions == 0);

    // A transport-limited plan stops after six events.
    CounterBoard board2(2);
    plan.last_layer = Layer::Transport;
    auto partial = generate_probe_events(plan, board2);
    CHECK(partial.size() == 6);
}

TEST_CASE("forced core switch equals the switch-free replay") {
    const LayerUsage cost = CostModel::defaults().of(WorkloadKind::BenignHttp).per_packet;

    // Reference run without switches.
    CounterBoard board_a(4);
    ProbePlan plain;
    plain.packet_id = 1;
    plain.client = parse_client_id("10.0.0.1");
    plain.start = 0;
    plain.cpu = 0;
    plain.cost = cost;
    plain.core_speed = 3'000'000'000;
    Profiler prof_a;
    for (const auto& ev : generate_probe_events(plain, board_a)) prof_a.on_event(ev);
    PacketRecord expect = prof_a.finalize_packet(1, 99);

    // Switched run: two switches inside the application layer. The board
    // starts with unrelated traffic so baselines differ per core.
    CounterBoard board_b(4);
    board_b.at(1) = {123'456, 777, 0};
    board_b.at(2) = {9'999, 1, 0};
    ProbePlan switched = plain;
    // Application starts after link+network+transport.
    std::uint64_t pre_app = cost[0].instructions + cost[1].instructions + cost[2].instructions;
    Nanos app_start = static_cast<Nanos>(pre_app / 3);  // 3 instr per ns
    switched.switches = {{app_start + 5'000, 1}, {app_start + 11'000, 2}};
    Profiler prof_b;
    for (const auto& ev : generate_probe_events(switched, board_b)) prof_b.on_event(ev);
    PacketRecord got = prof_b.finalize_packet(1, 99);

    CHECK(got.usage == expect.usage);
    CHECK(got.usage == cost);
}

TEST_CASE("scenario parsing covers workloads, costs and policy overrides") {
    std::string text =
        "seed = 9\n"
        "duration = 12.5\n"
        "server.cores = 2\n"
        "server.connection_pool = 32\n"
        "mitigation.enabled = false\n"
        "workload.0.kind = slowloris\n"
        "workload.0.client = 10.9.0.1\n"
        "workload.0.start = 10\n"
        "workload.0.rate = 20\n"
        "cost.slowloris.instr.transport = 7777\n"
        "cost.benign.memory_bytes = 1024\n"
        "policy.blocking_time = 10\n";
    ScenarioConfig scn = load_scenario_text(text);
    CHECK(scn.seed == 9);
    CHECK(scn.duration == seconds_to_nanos(12.5));
    CHECK(scn.server.num_cores == 2);
    CHECK(scn.server.connection_pool == 32);
    CHECK_FALSE(scn.mitigation_enabled);
    REQUIRE(scn.workloads.size() == 1);
    CHECK(scn.workloads[0].kind == WorkloadKind::Slowloris);
    CHECK(scn.workloads[0].rate_per_s == 20);
    CHECK(scn.costs.of(WorkloadKind::Slowloris).per_packet[layer_index(Layer::Transport)]
              .instructions == 7777);
    CHECK(scn.costs.of(WorkloadKind::BenignHttp).memory_bytes == 1024);

    PolicyConfig policy = effective_policy(PolicyConfig{}, scn);
    CHECK(policy.blocking_time_s == 10.0);

    CHECK_THROWS_AS(load_scenario_text("workload.0.kind = alien\n"), ConfigError);
    CHECK_THROWS_AS(load_scenario_text("bogus = 1\n"), ConfigError);
}

TEST_CASE("scenario validation rejects bad setups") {
    ScenarioConfig empty;
    CHECK_THROWS_AS(validate_scenario(empty), ScenarioError);

    ScenarioConfig dup = load_scenario_text(
        "workload.0.kind = benign\n"
        "workload.0.client = 10.0.0.1\n"
        "workload.1.kind = slowloris\n"
        "workload.1.client = 10.0.0.1\n"
        "workload.1.rate = 5\n");
    CHECK_THROWS_AS(validate_scenario(dup), ScenarioError);

    ScenarioConfig norate = load_scenario_text(
        "workload.0.kind = fragment_smack\n"
        "workload.0.client = 10.0.0.1\n");
    CHECK_THROWS_AS(validate_scenario(norate), ScenarioError);
}

TEST_CASE("quiescent baseline: no blocks, everything succeeds") {
    ScenarioConfig scn = load_scenario_text(kQuiescent);
    PolicyConfig policy;
    SimulationReport rep = run_scenario(scn, policy);

    CHECK(rep.blocks.empty());
    CHECK_FALSE(rep.watchdog_ever_active);
    CHECK(rep.metrics.size() == 50);  // 5 s at 0.1 s cadence

    const ClientStats& st = rep.clients.at(parse_client_id("10.0.0.10"));
    CHECK(st.issued == 9);
    CHECK(st.succeeded == 9);
    CHECK(st.dropped_blocked == 0);
    CHECK(rep.drained_records.size() == 9);
    CHECK(rep.ring_dropped_records == 0);

    // Latency of an unloaded request is the pure service time.
    std::uint64_t total_instr = 0;
    for (const auto& v : scn.costs.of(WorkloadKind::BenignHttp).per_packet) {
        total_instr += v.instructions;
    }
    double service_ms = static_cast<double>(total_instr) / 3e9 * 1e3;
    CHECK(rep.mean_latency_ms() == doctest::Approx(service_ms).epsilon(0.01));
}

TEST_CASE("identical seeds reproduce the report exactly") {
    ScenarioConfig scn = load_scenario_text(kFragSmall);
    PolicyConfig policy;
    SimulationReport a = run_scenario(scn, policy);
    SimulationReport b = run_scenario(scn, policy);

    CHECK(a.blocks == b.blocks);
    CHECK(a.metrics == b.metrics);
    CHECK(a.drained_records == b.drained_records);
    CHECK(a.accept_events == b.accept_events);
    CHECK(a.active_memory_series == b.active_memory_series);
    CHECK(a.ring_dropped_records == b.ring_dropped_records);
}

TEST_CASE("fragment flood is blocked at the network layer and conserved") {
    ScenarioConfig scn = load_scenario_text(kFragSmall);
    PolicyConfig policy;
    SimulationReport rep = run_scenario(scn, policy);

    const ClientId attacker = parse_client_id("10.0.0.66");
    REQUIRE_FALSE(rep.blocks.empty());
    CHECK(rep.blocks[0].client == attacker);
    CHECK(rep.blocks[0].reason.layer == Layer::Network);
    CHECK(rep.blocks[0].reason.resource == Resource::Instructions);
    CHECK(rep.blocks[0].reason.observed >= policy.instruction_thresholds[layer_index(Layer::Network)]);

    // Conservation: drained + ring-dropped usage equals injected, per client.
    for (const auto& [client, st] : rep.clients) {
        LayerUsage profiled = layer_usage_add(st.profiled_drained, st.profiled_ring_dropped);
        CHECK(profiled == st.injected);
    }

    // Blocked-arrival packets were all dropped before any accounting.
    std::uint64_t in_block_arrivals = 0;
    for (const auto& p : rep.packets) {
        if (p.client != attacker) continue;
        bool in_block = false;
        for (const auto& b : rep.blocks) {
            if (p.arrival >= b.blocked_at && p.arrival < b.expires_at) in_block = true;
        }
        if (in_block) {
            ++in_block_arrivals;
            CHECK(p.ingress_dropped);
        }
    }
    CHECK(in_block_arrivals > 0);
}

TEST_CASE("conservation holds when the ring overflows") {
    std::string text = kFragSmall + "policy.ring_buffer_bytes_per_core = 2520\n";  // 20 records
    ScenarioConfig scn = load_scenario_text(text);
    PolicyConfig policy;
    SimulationReport rep = run_scenario(scn, policy);

    CHECK(rep.ring_dropped_records > 0);
    for (const auto& [client, st] : rep.clients) {
        LayerUsage profiled = layer_usage_add(st.profiled_drained, st.profiled_ring_dropped);
        CHECK(profiled == st.injected);
    }
}

TEST_CASE("metrics rows equal the number of watchdog ticks") {
    ScenarioConfig scn = load_scenario_text(kQuiescent);
    PolicyConfig policy;
    policy.watchdog_interval_s = 0.25;
    SimulationReport rep = run_scenario(scn, policy);
    CHECK(rep.metrics.size() == 20);  // 5 s / 0.25 s
    for (std::size_t i = 0; i < rep.metrics.size(); ++i) {
        CHECK(rep.metrics[i].metrics.timestamp == static_cast<Nanos>((i + 1) * 250'000'000LL));
    }
}

TEST_CASE("slowloris connections pile up and are torn down after the block") {
    std::string text =
        "seed = 5\n"
        "duration = 20\n"
        "server.cores = 4\n"
        "server.connection_pool = 32\n"
        "server.teardown_rate = 25\n"
        "workload.0.kind = benign\n"
        "workload.0.client = 10.0.0.10\n"
        "workload.0.start = 1\n"
        "workload.0.period = 1.0\n"
        "workload.0.keep_alive = false\n"
        "workload.1.kind = slowloris\n"
        "workload.1.client = 10.0.0.50\n"
        "workload.1.start = 5\n"
        "workload.1.rate = 20\n";
    ScenarioConfig scn = load_scenario_text(text);
    PolicyConfig policy;
    SimulationReport rep = run_scenario(scn, policy);

    const ClientId attacker = parse_client_id("10.0.0.50");
    REQUIRE_FALSE(rep.blocks.empty());
    CHECK(rep.blocks[0].client == attacker);
    CHECK(rep.blocks[0].reason.resource == Resource::Connections);
    CHECK(rep.blocks[0].reason.observed >= 6);

    // Established connections fall to zero inside the block interval.
    const auto& series = rep.established_series.at(attacker);
    bool reached_zero = false;
    for (std::size_t i = 0; i < rep.metrics.size(); ++i) {
        Nanos t = rep.metrics[i].metrics.timestamp;
        if (t > rep.blocks[0].blocked_at && t <= rep.blocks[0].expires_at && series[i] == 0) {
            reached_zero = true;
        }
    }
    CHECK(reached_zero);
}
