#include <doctest.h>

#include "udos/trace_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace udos;

namespace {

PacketRecord random_record(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint64_t> u64(0, UINT64_MAX);
    std::uniform_int_distribution<std::uint32_t> u32(0, UINT32_MAX);
    std::uniform_int_distribution<int> byte(0, 255);

    PacketRecord rec;
    rec.timestamp = static_cast<Nanos>(u64(rng) >> 1);
    rec.cpu_id = u32(rng);
    rec.client.family = (rng() % 2 == 0) ? 4 : 6;
    if (rec.client.family == 4) {
        for (int i = 0; i < 4; ++i) rec.client.addr[i] = static_cast<std::uint8_t>(byte(rng));
    } else {
        for (int i = 0; i < 16; ++i) rec.client.addr[i] = static_cast<std::uint8_t>(byte(rng));
    }
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        rec.usage[i].instructions = u64(rng);
        rec.usage[i].mbm_bytes = u64(rng);
        rec.usage[i].new_connections = 0;
    }
    rec.usage[layer_index(Layer::Application)].new_connections = u32(rng);
    rec.program_id = u32(rng);
    rec.incomplete = rng() % 2 == 0;
    return rec;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("every encoding is exactly 126 bytes") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
        EncodedRecord block = encode_record(random_record(rng));
        CHECK(block.size() == 126);
    }
    CHECK(kEncodedRecordSize == 126);
}

TEST_CASE("all-zero record encodes to zeros except the address family") {
    PacketRecord rec;
    rec.client.family = 4;
    EncodedRecord block = encode_record(rec);
    for (std::size_t i = 0; i < block.size(); ++i) {
        if (i == 12) {
            CHECK(block[i] == 4);
        } else {
            CHECK(block[i] == 0);
        }
    }
}

TEST_CASE("10000 random records round-trip exactly") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 10'000; ++i) {
        PacketRecord rec = random_record(rng);
        PacketRecord back = decode_record(encode_record(rec));
        REQUIRE(back == rec);
    }
}

TEST_CASE("decode rejects malformed blocks") {
    std::mt19937_64 rng(3);
    EncodedRecord block = encode_record(random_record(rng));

    try {
        decode_record(block.data(), 125);
        FAIL("expected BadLength");
    } catch (const CodecError& e) {
        CHECK(e.kind == CodecError::Kind::BadLength);
    }

    EncodedRecord bad_family = block;
    bad_family[12] = 7;
    try {
        decode_record(bad_family);
        FAIL("expected BadAddrFamily");
    } catch (const CodecError& e) {
        CHECK(e.kind == CodecError::Kind::BadAddrFamily);
    }

    EncodedRecord dirty = block;
    dirty[120] = 0xAB;
    try {
        decode_record(dirty, true);
        FAIL("expected NonzeroReserved");
    } catch (const CodecError& e) {
        CHECK(e.kind == CodecError::Kind::NonzeroReserved);
    }
    // Lenient mode tolerates dirty reserved bytes.
    PacketRecord ok = decode_record(dirty, false);
    CHECK(ok == decode_record(block));
}

TEST_CASE("record json round-trips") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 200; ++i) {
        PacketRecord rec = random_record(rng);
        PacketRecord back = record_from_json(record_to_json(rec));
        REQUIRE(back == rec);
    }
}

TEST_CASE("empty trace file yields an empty stream") {
    auto path = temp_file("udos_empty_trace.jsonl");
    std::ofstream(path).close();
    TraceReader reader(path.string());
    TraceItem item;
    CHECK_FALSE(reader.next(item));
}

TEST_CASE("malformed line reports its line number") {
    auto path = temp_file("udos_bad_trace.jsonl");
    {
        std::ofstream out(path);
        out << R"({"type":"metrics","t":0,"cpu":0.1,"memory":0.1,"connection_pool":0.1})" << "\n";
        out << R"({"type":"metrics","t":100,"cpu":0.2,"memory":0.1,"connection_pool":0.1})" << "\n";
        out << "{not json\n";
    }
    TraceReader reader(path.string());
    TraceItem item;
    CHECK(reader.next(item));
    CHECK(reader.next(item));
    CHECK(item.metrics.cpu_usage == 0.2);
    try {
        reader.next(item);
        FAIL("expected ParseError");
    } catch (const TraceError& e) {
        CHECK(e.kind == TraceError::Kind::Parse);
        CHECK(e.line == 3);
    }
}

TEST_CASE("unknown type tag is rejected") {
    auto path = temp_file("udos_unknown_trace.jsonl");
    {
        std::ofstream out(path);
        out << R"({"type":"mystery","t":0})" << "\n";
    }
    TraceReader reader(path.string());
    TraceItem item;
    try {
        reader.next(item);
        FAIL("expected UnknownType");
    } catch (const TraceError& e) {
        CHECK(e.kind == TraceError::Kind::UnknownType);
        CHECK(e.line == 1);
    }
}

TEST_CASE("probe events survive the trace writer/reader") {
    auto path = temp_file("udos_probe_trace.jsonl");
    ProbeEvent entry;
    entry.kind = ProbeKind::LayerEntry;
    entry.timestamp = 1234;
    entry.cpu_id = 2;
    entry.packet_id = 99;
    entry.layer = Layer::Transport;
    entry.counters = {10, 20, 0};
    entry.client = parse_client_id("192.168.1.5");
    entry.program_id = 7;

    ProbeEvent sw;
    sw.kind = ProbeKind::CoreSwitch;
    sw.timestamp = 2000;
    sw.cpu_id = 2;
    sw.packet_id = 99;
    sw.counters = {15, 25, 0};
    sw.to_cpu = 3;
    sw.to_counters = {7, 8, 0};

    ProbeEvent accept;
    accept.kind = ProbeKind::ConnAccept;
    accept.timestamp = 2100;
    accept.cpu_id = 0;
    accept.client = parse_client_id("192.168.1.5");

    {
        TraceWriter writer(path.string());
        writer.write_probe(entry);
        writer.write_probe(sw);
        writer.write_probe(accept);
        SystemMetrics m{0.5, 0.25, 0.125, 3000};
        writer.write_metrics(m);
    }

    TraceReader reader(path.string());
    TraceItem item;
    REQUIRE(reader.next(item));
    CHECK(item.kind == TraceItem::Kind::Probe);
    CHECK(item.probe == entry);
    REQUIRE(reader.next(item));
    CHECK(item.probe == sw);
    REQUIRE(reader.next(item));
    CHECK(item.probe.kind == ProbeKind::ConnAccept);
    CHECK(item.probe.client == accept.client);
    REQUIRE(reader.next(item));
    CHECK(item.kind == TraceItem::Kind::Metrics);
    CHECK(item.metrics.cpu_usage == 0.5);
    CHECK(item.metrics.timestamp == 3000);
    CHECK_FALSE(reader.next(item));
}

TEST_CASE("csv writers produce fixed headers") {
    std::ostringstream metrics;
    write_metrics_csv(metrics, {});
    CHECK(metrics.str() == "timestamp_s,cpu,mem,connpool,watchdog_state,latency_ms_monitor\n");

    std::ostringstream blocks;
    BlockEntry e;
    e.client = parse_client_id("10.0.0.4");
    e.blocked_at = 10 * kNanosPerSecond;
    e.expires_at = 15 * kNanosPerSecond;
    e.reason = {Layer::Application, Resource::Instructions, 350'000, 300'000};
    write_blocks_csv(blocks, {e});
    CHECK(blocks.str() ==
          "t_block_s,t_unblock_s,client,layer,resource,observed,threshold\n"
          "10.000,15.000,10.0.0.4,application,instructions,350000,300000\n");
}
