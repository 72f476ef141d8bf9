#include <doctest.h>

#include "udos/mitigator.hpp"

#include <algorithm>
#include <map>
#include <random>

using namespace udos;

namespace {

const ClientId kA = parse_client_id("10.0.0.1");
const ClientId kB = parse_client_id("10.0.0.2");
const ClientId kC = parse_client_id("10.0.0.3");

PacketRecord record_of(const ClientId& client, Nanos t, Layer layer, ResourceVector usage) {
    PacketRecord rec;
    rec.client = client;
    rec.timestamp = t;
    rec.usage[layer_index(layer)] = usage;
    return rec;
}

struct RecordingHook : EnforcementHook {
    std::vector<ClientId> dropped;
    std::vector<ClientId> torn;
    void drop_ingress(const ClientId& c) override { dropped.push_back(c); }
    void teardown_sessions(const ClientId& c) override { torn.push_back(c); }
};

constexpr Nanos kSec = kNanosPerSecond;

}  // namespace

TEST_CASE("single ingest updates the running sums") {
    WindowStore w;
    w.ingest(record_of(kA, 0, Layer::Network, {150, 30, 0}));
    CHECK(w.windowed_sum(kA, Layer::Network, Resource::Instructions) == 150);
    CHECK(w.windowed_sum(kA, Layer::Network, Resource::MbmBytes) == 30);
    CHECK(w.windowed_sum(kA, Layer::Link, Resource::Instructions) == 0);
}

TEST_CASE("per-client sums match a brute-force fold over random records") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::uint64_t> val(0, 10'000);
    std::uniform_int_distribution<int> who(0, 4);
    std::vector<ClientId> clients;
    for (int i = 0; i < 5; ++i) {
        clients.push_back(parse_client_id("10.1.0." + std::to_string(i + 1)));
    }

    WindowStore w;
    std::map<ClientId, LayerUsage> oracle;
    for (int i = 0; i < 100; ++i) {
        PacketRecord rec;
        rec.client = clients[who(rng)];
        rec.timestamp = i;
        for (auto& v : rec.usage) v = {val(rng), val(rng), 0};
        w.ingest(rec);
        oracle[rec.client] = layer_usage_add(oracle[rec.client], rec.usage);
    }
    for (const auto& [client, usage] : oracle) {
        for (Layer l : all_layers()) {
            CHECK(w.windowed_sum(client, l, Resource::Instructions) ==
                  usage[layer_index(l)].instructions);
            CHECK(w.windowed_sum(client, l, Resource::MbmBytes) ==
                  usage[layer_index(l)].mbm_bytes);
        }
    }
}

TEST_CASE("eviction boundary arithmetic") {
    PolicyConfig cfg;  // window 3 s
    WindowStore w;
    w.ingest(record_of(kA, 0, Layer::Network, {100, 0, 0}));
    w.ingest(record_of(kA, seconds_to_nanos(2.5), Layer::Network, {50, 0, 0}));

    CHECK(w.evict_stale(seconds_to_nanos(3.2), cfg) == 1);
    CHECK(w.windowed_sum(kA, Layer::Network, Resource::Instructions) == 50);

    WindowStore young;
    young.ingest(record_of(kA, 0, Layer::Network, {100, 0, 0}));
    CHECK(young.evict_stale(seconds_to_nanos(2.9), cfg) == 0);
}

TEST_CASE("clients with empty windows are removed from the store") {
    PolicyConfig cfg;
    WindowStore w;
    w.ingest(record_of(kA, 0, Layer::Network, {100, 0, 0}));
    w.note_standalone_accept(kB, 0);
    CHECK(w.client_count() == 2);
    w.evict_stale(seconds_to_nanos(10), cfg);
    CHECK(w.client_count() == 0);
    CHECK_FALSE(w.contains(kA));
}

TEST_CASE("eviction matches a filter-and-fold oracle on random timestamps") {
    PolicyConfig cfg;
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<Nanos> when(0, 10 * kSec);
    std::uniform_int_distribution<std::uint64_t> val(1, 1000);

    WindowStore w;
    std::vector<std::pair<Nanos, std::uint64_t>> raw;
    for (int i = 0; i < 300; ++i) {
        Nanos t = when(rng);
        std::uint64_t v = val(rng);
        raw.emplace_back(t, v);
    }
    std::sort(raw.begin(), raw.end());
    for (auto [t, v] : raw) w.ingest(record_of(kA, t, Layer::Application, {v, 0, 0}));

    Nanos now = 9 * kSec;
    w.evict_stale(now, cfg);
    std::uint64_t expect = 0;
    for (auto [t, v] : raw) {
        if (t >= now - cfg.window_time_ns()) expect += v;
    }
    CHECK(w.windowed_sum(kA, Layer::Application, Resource::Instructions) == expect);
}

TEST_CASE("connection sums combine standalone accepts and record accepts") {
    PolicyConfig cfg;
    WindowStore w;
    w.note_standalone_accept(kA, 0);
    w.note_standalone_accept(kA, kSec, 2);
    PacketRecord rec = record_of(kA, kSec, Layer::Application, {0, 0, 0});
    rec.usage[layer_index(Layer::Application)].new_connections = 3;
    w.ingest(rec);
    CHECK(w.windowed_sum(kA, Layer::Application, Resource::Connections) == 6);

    // Accepts age out with the window like record entries.
    w.evict_stale(seconds_to_nanos(3.5), cfg);
    CHECK(w.windowed_sum(kA, Layer::Application, Resource::Connections) == 5);
}

TEST_CASE("rank orders by descending sum with ascending client tie-break") {
    PolicyConfig cfg;
    WindowStore w;
    CHECK(w.rank(Layer::Application, Resource::Instructions, cfg).empty());

    w.ingest(record_of(kA, 0, Layer::Application, {500'000, 0, 0}));
    w.ingest(record_of(kB, 0, Layer::Application, {300'000, 0, 0}));
    auto ranked = w.rank(Layer::Application, Resource::Instructions, cfg);
    REQUIRE(ranked.size() == 2);
    CHECK(ranked[0].first == kA);
    CHECK(ranked[1].first == kB);

    // Tie: kB vs kC at equal sums; lower address first.
    w.ingest(record_of(kC, 0, Layer::Application, {300'000, 0, 0}));
    ranked = w.rank(Layer::Application, Resource::Instructions, cfg);
    REQUIRE(ranked.size() == 3);
    CHECK(ranked[1].first == kB);
    CHECK(ranked[2].first == kC);
}

TEST_CASE("rank of 50 random clients equals a sort oracle") {
    PolicyConfig cfg;
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<std::uint64_t> val(0, 20);  // force ties
    WindowStore w;
    std::vector<std::pair<ClientId, std::uint64_t>> oracle;
    for (int i = 0; i < 50; ++i) {
        ClientId c = parse_client_id("10.2." + std::to_string(i / 8) + "." + std::to_string(i % 8 + 1));
        std::uint64_t v = val(rng);
        w.ingest(record_of(c, 0, Layer::Transport, {v, 0, 0}));
        oracle.emplace_back(c, v);
    }
    std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    CHECK(w.rank(Layer::Transport, Resource::Instructions, cfg) == oracle);
}

TEST_CASE("whitelisted clients are stored but never ranked") {
    PolicyConfig cfg;
    cfg.whitelist.insert(kA);
    WindowStore w;
    w.ingest(record_of(kA, 0, Layer::Application, {9'000'000, 0, 0}));
    w.ingest(record_of(kB, 0, Layer::Application, {100, 0, 0}));
    CHECK(w.contains(kA));
    auto ranked = w.rank(Layer::Application, Resource::Instructions, cfg);
    REQUIRE(ranked.size() == 1);
    CHECK(ranked[0].first == kB);

    Blocklist blocks;
    auto decisions = select_and_decide(w, blocks, cfg, 0);
    for (const auto& d : decisions) CHECK(d.client != kA);
}

TEST_CASE("select_and_decide blocks the top client above threshold") {
    PolicyConfig cfg;
    WindowStore w;
    Blocklist blocks;
    w.ingest(record_of(kA, 0, Layer::Application, {350'000, 0, 0}));
    auto decisions = select_and_decide(w, blocks, cfg, 0);
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].client == kA);
    CHECK(decisions[0].reason.layer == Layer::Application);
    CHECK(decisions[0].reason.resource == Resource::Instructions);
    CHECK(decisions[0].reason.observed == 350'000);
    CHECK(decisions[0].reason.threshold == 300'000);
}

TEST_CASE("six connections in the window trigger the connection threshold") {
    PolicyConfig cfg;
    WindowStore w;
    Blocklist blocks;
    for (int i = 0; i < 6; ++i) w.note_standalone_accept(kA, i);
    auto decisions = select_and_decide(w, blocks, cfg, 10);
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].reason.resource == Resource::Connections);
    CHECK(decisions[0].reason.observed == 6);
    CHECK(decisions[0].reason.threshold == 6);
}

TEST_CASE("top-ranked below every threshold yields no decisions") {
    PolicyConfig cfg;
    WindowStore w;
    Blocklist blocks;
    w.ingest(record_of(kA, 0, Layer::Application, {299'999, 400, 0}));
    w.ingest(record_of(kB, 0, Layer::Network, {5'000, 400, 0}));
    CHECK(select_and_decide(w, blocks, cfg, 0).empty());
}

TEST_CASE("only the top-ranked candidate is checked per pair") {
    PolicyConfig cfg;
    WindowStore w;
    Blocklist blocks;
    // kA tops the ranking but is under threshold; kB above threshold must
    // NOT be blocked because it is not the top.
    w.ingest(record_of(kA, 0, Layer::Application, {299'000, 0, 0}));
    w.ingest(record_of(kB, 0, Layer::Application, {298'000, 0, 0}));
    CHECK(select_and_decide(w, blocks, cfg, 0).empty());
}

TEST_CASE("already-blocked clients are skipped and the next one is eligible") {
    PolicyConfig cfg;
    WindowStore w;
    RecordingHook hook;
    Blocklist blocks;
    w.ingest(record_of(kA, 0, Layer::Application, {900'000, 0, 0}));
    w.ingest(record_of(kB, 0, Layer::Application, {400'000, 0, 0}));

    auto first = select_and_decide(w, blocks, cfg, 0);
    REQUIRE(first.size() == 1);
    CHECK(first[0].client == kA);
    blocks.apply_block(first[0], 0, cfg, hook);

    auto second = select_and_decide(w, blocks, cfg, 0);
    REQUIRE(second.size() == 1);
    CHECK(second[0].client == kB);
}

TEST_CASE("at most one decision per client even when several pairs fire") {
    PolicyConfig cfg;
    WindowStore w;
    Blocklist blocks;
    PacketRecord rec = record_of(kA, 0, Layer::Application, {400'000, 2'000'000'000, 0});
    w.ingest(rec);
    auto decisions = select_and_decide(w, blocks, cfg, 0);
    REQUIRE(decisions.size() == 1);
    CHECK(decisions[0].reason.resource == Resource::Instructions);
}

TEST_CASE("apply_block registers the entry and fires both hooks") {
    PolicyConfig cfg;  // blocking_time 5 s
    WindowStore w;
    RecordingHook hook;
    Blocklist blocks;
    BlockDecision d{kA, {Layer::Application, Resource::Instructions, 350'000, 300'000}};

    blocks.apply_block(d, 10 * kSec, cfg, hook);
    CHECK(blocks.is_blocked(kA));
    REQUIRE(blocks.find(kA) != nullptr);
    CHECK(blocks.find(kA)->expires_at == 15 * kSec);
    CHECK(hook.dropped == std::vector<ClientId>{kA});
    CHECK(hook.torn == std::vector<ClientId>{kA});

    CHECK_THROWS_AS(blocks.apply_block(d, 11 * kSec, cfg, hook), AlreadyBlocked);
}

TEST_CASE("blocks expire exactly at their deadline") {
    PolicyConfig cfg;
    RecordingHook hook;
    Blocklist blocks;
    BlockDecision d{kA, {}};
    blocks.apply_block(d, 10 * kSec, cfg, hook);

    CHECK(blocks.expire_blocks(seconds_to_nanos(14.9)).empty());
    CHECK(blocks.is_blocked(kA));

    auto unblocked = blocks.expire_blocks(15 * kSec);
    REQUIRE(unblocked.size() == 1);
    CHECK(unblocked[0] == kA);
    CHECK_FALSE(blocks.is_blocked(kA));

    // Re-blockable afterwards.
    blocks.apply_block(d, 16 * kSec, cfg, hook);
    CHECK(blocks.is_blocked(kA));
}

TEST_CASE("window sums equal brute force over random ingest/evict schedules") {
    PolicyConfig cfg;
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> who(0, 3);
    std::uniform_int_distribution<std::uint64_t> val(0, 1000);

    std::vector<ClientId> clients;
    for (int i = 0; i < 4; ++i) clients.push_back(parse_client_id("10.3.0." + std::to_string(i + 1)));

    WindowStore w;
    std::vector<PacketRecord> retained;
    Nanos now = 0;
    for (int step = 0; step < 500; ++step) {
        now += val(rng) * 10'000'000;  // up to 10 ms forward per step
        if (rng() % 4 != 0) {
            PacketRecord rec;
            rec.client = clients[who(rng)];
            rec.timestamp = now;
            for (auto& v : rec.usage) v = {val(rng), val(rng), 0};
            w.ingest(rec);
            retained.push_back(rec);
        } else {
            w.evict_stale(now, cfg);
        }

        // Oracle: sums over records inside the window, but only after the
        // store has actually evicted (sums may be stale between passes).
        if (step % 10 == 9) {
            w.evict_stale(now, cfg);
            for (const auto& client : clients) {
                LayerUsage expect{};
                for (const auto& rec : retained) {
                    if (rec.client == client && rec.timestamp >= now - cfg.window_time_ns()) {
                        expect = layer_usage_add(expect, rec.usage);
                    }
                }
                for (Layer l : all_layers()) {
                    CHECK(w.windowed_sum(client, l, Resource::Instructions) ==
                          expect[layer_index(l)].instructions);
                }
            }
        }
    }
}
