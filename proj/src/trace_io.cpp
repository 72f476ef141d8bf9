#include "udos/trace_io.hpp"

#include <json.hpp>

#include <cstring>

namespace udos {

namespace {

using nlohmann::json;

void put_u64(std::uint8_t* p, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

void put_u32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

std::uint64_t get_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

constexpr std::size_t kKernelLayers = 3;  // link, network, transport

}  // namespace

EncodedRecord encode_record(const PacketRecord& rec) {
    EncodedRecord out{};
    std::uint8_t* p = out.data();
    put_u64(p + 0, static_cast<std::uint64_t>(rec.timestamp));
    put_u32(p + 8, rec.cpu_id);
    p[12] = rec.client.family;
    if (rec.client.family == 4) {
        std::memcpy(p + 13, rec.client.addr.data(), 4);
    } else {
        std::memcpy(p + 13, rec.client.addr.data(), 16);
    }
    for (std::size_t i = 0; i < kKernelLayers; ++i) {
        put_u64(p + 29 + 8 * i, rec.usage[i].instructions);
        put_u64(p + 53 + 8 * i, rec.usage[i].mbm_bytes);
    }
    const ResourceVector& app = rec.usage[layer_index(Layer::Application)];
    put_u64(p + 77, app.instructions);
    put_u64(p + 85, app.mbm_bytes);
    put_u32(p + 93, rec.program_id);
    std::uint64_t conns = app.new_connections;
    put_u32(p + 97, conns > UINT32_MAX ? UINT32_MAX : static_cast<std::uint32_t>(conns));
    p[101] = rec.incomplete ? 0x01 : 0x00;
    // bytes 102..125 stay zero
    return out;
}

PacketRecord decode_record(const std::uint8_t* data, std::size_t len, bool strict) {
    if (len != kEncodedRecordSize) {
        throw CodecError(CodecError::Kind::BadLength,
                         "record block is " + std::to_string(len) + " bytes, expected " +
                             std::to_string(kEncodedRecordSize));
    }
    const std::uint8_t* p = data;
    PacketRecord rec;
    rec.timestamp = static_cast<Nanos>(get_u64(p + 0));
    rec.cpu_id = get_u32(p + 8);
    rec.client.family = p[12];
    if (rec.client.family != 4 && rec.client.family != 6) {
        throw CodecError(CodecError::Kind::BadAddrFamily,
                         "address family " + std::to_string(p[12]) + " is not 4 or 6");
    }
    if (rec.client.family == 4) {
        std::memcpy(rec.client.addr.data(), p + 13, 4);
    } else {
        std::memcpy(rec.client.addr.data(), p + 13, 16);
    }
    for (std::size_t i = 0; i < kKernelLayers; ++i) {
        rec.usage[i].instructions = get_u64(p + 29 + 8 * i);
        rec.usage[i].mbm_bytes = get_u64(p + 53 + 8 * i);
    }
    ResourceVector& app = rec.usage[layer_index(Layer::Application)];
    app.instructions = get_u64(p + 77);
    app.mbm_bytes = get_u64(p + 85);
    rec.program_id = get_u32(p + 93);
    app.new_connections = get_u32(p + 97);
    std::uint8_t flags = p[101];
    rec.incomplete = (flags & 0x01) != 0;
    if (strict) {
        for (std::size_t i = 102; i < kEncodedRecordSize; ++i) {
            if (p[i] != 0) {
                throw CodecError(CodecError::Kind::NonzeroReserved,
                                 "reserved byte " + std::to_string(i) + " is nonzero");
            }
        }
    }
    return rec;
}

PacketRecord decode_record(const EncodedRecord& block, bool strict) {
    return decode_record(block.data(), block.size(), strict);
}

namespace {

json usage_to_json(const LayerUsage& usage) {
    json j = json::object();
    for (Layer l : all_layers()) {
        const ResourceVector& v = usage[layer_index(l)];
        j[layer_name(l)] = {{"instr", v.instructions}, {"mbm", v.mbm_bytes},
                            {"conn", v.new_connections}};
    }
    return j;
}

LayerUsage usage_from_json(const json& j) {
    LayerUsage usage{};
    for (Layer l : all_layers()) {
        const json& v = j.at(layer_name(l));
        ResourceVector& rv = usage[layer_index(l)];
        rv.instructions = v.at("instr").get<std::uint64_t>();
        rv.mbm_bytes = v.at("mbm").get<std::uint64_t>();
        rv.new_connections = v.at("conn").get<std::uint64_t>();
    }
    return usage;
}

json probe_to_json(const ProbeEvent& ev) {
    json j;
    j["type"] = "probe";
    j["kind"] = probe_kind_name(ev.kind);
    j["t"] = ev.timestamp;
    j["cpu"] = ev.cpu_id;
    switch (ev.kind) {
        case ProbeKind::LayerEntry:
            j["packet"] = ev.packet_id;
            j["layer"] = layer_name(ev.layer);
            j["instr"] = ev.counters.instructions;
            j["mbm"] = ev.counters.mbm_bytes;
            j["client"] = format_client_id(ev.client);
            if (ev.program_id != 0) j["program"] = ev.program_id;
            break;
        case ProbeKind::LayerExit:
            j["packet"] = ev.packet_id;
            j["layer"] = layer_name(ev.layer);
            j["instr"] = ev.counters.instructions;
            j["mbm"] = ev.counters.mbm_bytes;
            break;
        case ProbeKind::CoreSwitch:
            j["packet"] = ev.packet_id;
            j["instr"] = ev.counters.instructions;
            j["mbm"] = ev.counters.mbm_bytes;
            j["to_cpu"] = ev.to_cpu;
            j["to_instr"] = ev.to_counters.instructions;
            j["to_mbm"] = ev.to_counters.mbm_bytes;
            break;
        case ProbeKind::ConnAccept:
            j["client"] = format_client_id(ev.client);
            break;
    }
    return j;
}

ProbeEvent probe_from_json_impl(const json& j, int line) {
    ProbeEvent ev;
    std::string kind = j.at("kind").get<std::string>();
    if (!parse_probe_kind(kind, ev.kind)) {
        throw TraceError(TraceError::Kind::Parse, line, "unknown probe kind `" + kind + "`");
    }
    ev.timestamp = j.at("t").get<Nanos>();
    ev.cpu_id = j.at("cpu").get<std::uint32_t>();
    switch (ev.kind) {
        case ProbeKind::LayerEntry: {
            ev.packet_id = j.at("packet").get<std::uint64_t>();
            std::string layer = j.at("layer").get<std::string>();
            if (!parse_layer(layer, ev.layer)) {
                throw TraceError(TraceError::Kind::Parse, line, "unknown layer `" + layer + "`");
            }
            ev.counters.instructions = j.at("instr").get<std::uint64_t>();
            ev.counters.mbm_bytes = j.at("mbm").get<std::uint64_t>();
            ev.client = parse_client_id(j.at("client").get<std::string>());
            if (j.contains("program")) ev.program_id = j.at("program").get<std::uint32_t>();
            break;
        }
        case ProbeKind::LayerExit: {
            ev.packet_id = j.at("packet").get<std::uint64_t>();
            std::string layer = j.at("layer").get<std::string>();
            if (!parse_layer(layer, ev.layer)) {
                throw TraceError(TraceError::Kind::Parse, line, "unknown layer `" + layer + "`");
            }
            ev.counters.instructions = j.at("instr").get<std::uint64_t>();
            ev.counters.mbm_bytes = j.at("mbm").get<std::uint64_t>();
            break;
        }
        case ProbeKind::CoreSwitch:
            ev.packet_id = j.at("packet").get<std::uint64_t>();
            ev.counters.instructions = j.at("instr").get<std::uint64_t>();
            ev.counters.mbm_bytes = j.at("mbm").get<std::uint64_t>();
            ev.to_cpu = j.at("to_cpu").get<std::uint32_t>();
            ev.to_counters.instructions = j.at("to_instr").get<std::uint64_t>();
            ev.to_counters.mbm_bytes = j.at("to_mbm").get<std::uint64_t>();
            break;
        case ProbeKind::ConnAccept:
            ev.client = parse_client_id(j.at("client").get<std::string>());
            break;
    }
    return ev;
}

}  // namespace

std::string record_to_json(const PacketRecord& rec) {
    json j;
    j["type"] = "record";
    j["t"] = rec.timestamp;
    j["cpu"] = rec.cpu_id;
    j["client"] = format_client_id(rec.client);
    j["program"] = rec.program_id;
    j["incomplete"] = rec.incomplete;
    j["usage"] = usage_to_json(rec.usage);
    return j.dump();
}

PacketRecord record_from_json(const std::string& text, int line) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw TraceError(TraceError::Kind::Parse, line, e.what());
    }
    try {
        PacketRecord rec;
        rec.timestamp = j.at("t").get<Nanos>();
        rec.cpu_id = j.at("cpu").get<std::uint32_t>();
        rec.client = parse_client_id(j.at("client").get<std::string>());
        rec.program_id = j.at("program").get<std::uint32_t>();
        rec.incomplete = j.at("incomplete").get<bool>();
        rec.usage = usage_from_json(j.at("usage"));
        return rec;
    } catch (const json::exception& e) {
        throw TraceError(TraceError::Kind::Parse, line, e.what());
    } catch (const std::invalid_argument& e) {
        throw TraceError(TraceError::Kind::Parse, line, e.what());
    }
}

TraceReader::TraceReader(const std::string& path) : in_(path), path_(path) {
    if (!in_) {
        throw TraceError(TraceError::Kind::Io, 0, "cannot open trace file " + path);
    }
}

bool TraceReader::next(TraceItem& out) {
    std::string text;
    while (std::getline(in_, text)) {
        ++line_;
        if (trim_copy(text).empty()) continue;

        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            throw TraceError(TraceError::Kind::Parse, line_, e.what());
        }
        std::string type;
        try {
            type = j.at("type").get<std::string>();
        } catch (const json::exception& e) {
            throw TraceError(TraceError::Kind::Parse, line_, e.what());
        }

        out = TraceItem{};
        out.line = line_;
        try {
            if (type == "probe") {
                out.kind = TraceItem::Kind::Probe;
                out.probe = probe_from_json_impl(j, line_);
            } else if (type == "record") {
                out.kind = TraceItem::Kind::Record;
                out.record = record_from_json(text, line_);
            } else if (type == "metrics") {
                out.kind = TraceItem::Kind::Metrics;
                out.metrics.timestamp = j.at("t").get<Nanos>();
                out.metrics.cpu_usage = j.at("cpu").get<double>();
                out.metrics.memory_usage = j.at("memory").get<double>();
                out.metrics.connection_pool_usage = j.at("connection_pool").get<double>();
            } else {
                throw TraceError(TraceError::Kind::UnknownType, line_,
                                 "unknown trace line type `" + type + "`");
            }
        } catch (const json::exception& e) {
            throw TraceError(TraceError::Kind::Parse, line_, e.what());
        } catch (const std::invalid_argument& e) {
            throw TraceError(TraceError::Kind::Parse, line_, e.what());
        }
        return true;
    }
    return false;
}

TraceWriter::TraceWriter(const std::string& path) : out_(path) {
    if (!out_) {
        throw TraceError(TraceError::Kind::Io, 0, "cannot open trace file " + path);
    }
}

void TraceWriter::write_probe(const ProbeEvent& ev) {
    out_ << probe_to_json(ev).dump() << "\n";
}

void TraceWriter::write_metrics(const SystemMetrics& m) {
    json j;
    j["type"] = "metrics";
    j["t"] = m.timestamp;
    j["cpu"] = m.cpu_usage;
    j["memory"] = m.memory_usage;
    j["connection_pool"] = m.connection_pool_usage;
    out_ << j.dump() << "\n";
}

namespace {

class NullHook : public EnforcementHook {
public:
    void drop_ingress(const ClientId&) override {}
    void teardown_sessions(const ClientId&) override {}
};

}  // namespace

ReplayResult run_replay(const std::string& trace_path, const PolicyConfig& policy,
                        double packet_expiry_factor) {
    TraceReader reader(trace_path);
    ReplayResult result;

    Profiler profiler;
    std::map<std::uint32_t, RingBuffer> rings;
    WindowStore windows;
    Blocklist blocks;
    MitigationState mstate;
    NullHook hook;
    const Nanos expiry =
        static_cast<Nanos>(packet_expiry_factor * static_cast<double>(policy.window_time_ns()));

    auto ring_of = [&](std::uint32_t cpu) -> RingBuffer& {
        auto it = rings.find(cpu);
        if (it == rings.end()) {
            it = rings.emplace(cpu, RingBuffer(policy.ring_buffer_bytes_per_core)).first;
        }
        return it->second;
    };
    auto drain_all = [&]() {
        for (auto& [cpu, ring] : rings) {
            (void)cpu;
            for (PacketRecord& rec : ring.drain(SIZE_MAX)) {
                result.drained_records.push_back(rec);
                windows.ingest(rec);
            }
        }
    };

    TraceItem item;
    Nanos last_ts = 0;
    while (reader.next(item)) {
        switch (item.kind) {
            case TraceItem::Kind::Probe: {
                const ProbeEvent& ev = item.probe;
                if (ev.kind == ProbeKind::ConnAccept) {
                    if (profiler.on_conn_accept(ev) == AcceptAttribution::Standalone) {
                        windows.note_standalone_accept(ev.client, ev.timestamp);
                    }
                } else {
                    profiler.on_event(ev);
                    if (ev.kind == ProbeKind::LayerExit && ev.layer == Layer::Application) {
                        PacketRecord rec = profiler.finalize_packet(ev.packet_id, ev.timestamp);
                        ring_of(rec.cpu_id).push(rec);
                    }
                }
                break;
            }
            case TraceItem::Kind::Record: {
                // Pre-profiled records skip the profiler and land directly.
                ring_of(item.record.cpu_id).push(item.record);
                break;
            }
            case TraceItem::Kind::Metrics: {
                const Nanos now = item.metrics.timestamp;
                for (PacketRecord& rec : profiler.expire_stale(now, expiry)) {
                    ring_of(rec.cpu_id).push(rec);
                }
                drain_all();
                windows.evict_stale(now, policy);
                mstate = watchdog_tick(mstate, item.metrics, policy);
                result.metrics.push_back(MetricsLogRow{item.metrics, mstate.active, 0.0});
                if (mstate.active) {
                    for (const BlockDecision& d : select_and_decide(windows, blocks, policy, now)) {
                        blocks.apply_block(d, now, policy, hook);
                        result.blocks.push_back(*blocks.find(d.client));
                    }
                }
                blocks.expire_blocks(now);
                break;
            }
        }
        last_ts = std::max(last_ts, item.kind == TraceItem::Kind::Probe
                                        ? item.probe.timestamp
                                        : (item.kind == TraceItem::Kind::Record
                                               ? item.record.timestamp
                                               : item.metrics.timestamp));
    }

    // End-of-trace flush mirrors the end-of-run flush of a live run.
    for (PacketRecord& rec : profiler.flush_all(last_ts)) {
        ring_of(rec.cpu_id).push(rec);
    }
    drain_all();
    return result;
}

namespace {

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<MetricsLogRow>& rows) {
    out << "timestamp_s,cpu,mem,connpool,watchdog_state,latency_ms_monitor\n";
    for (const auto& r : rows) {
        out << fmt("%.3f", nanos_to_seconds(r.metrics.timestamp)) << ","
            << fmt("%.6f", r.metrics.cpu_usage) << "," << fmt("%.6f", r.metrics.memory_usage)
            << "," << fmt("%.6f", r.metrics.connection_pool_usage) << ","
            << (r.active ? 1 : 0) << "," << fmt("%.3f", r.monitor_latency_ms) << "\n";
    }
}

void write_blocks_csv(std::ostream& out, const std::vector<BlockEntry>& blocks) {
    out << "t_block_s,t_unblock_s,client,layer,resource,observed,threshold\n";
    for (const auto& b : blocks) {
        out << fmt("%.3f", nanos_to_seconds(b.blocked_at)) << ","
            << fmt("%.3f", nanos_to_seconds(b.expires_at)) << "," << format_client_id(b.client)
            << "," << layer_name(b.reason.layer) << "," << resource_name(b.reason.resource) << ","
            << b.reason.observed << "," << b.reason.threshold << "\n";
    }
}

void write_records_bin(std::ostream& out, const std::vector<PacketRecord>& records) {
    for (const PacketRecord& rec : records) {
        EncodedRecord block = encode_record(rec);
        out.write(reinterpret_cast<const char*>(block.data()),
                  static_cast<std::streamsize>(block.size()));
    }
}

void write_qos_csv(std::ostream& out, const std::vector<QosRow>& rows) {
    out << "clients,mitigation,mean_latency_ms,failure_rate\n";
    for (const auto& r : rows) {
        out << r.clients << "," << (r.mitigation ? "on" : "off") << ","
            << fmt("%.3f", r.mean_latency_ms) << "," << fmt("%.6f", r.failure_rate) << "\n";
    }
}

void write_threshold_csv(std::ostream& out, const ThresholdSweepResult& result) {
    out << "# baseline_latency_ms=" << fmt("%.3f", result.baseline_latency_ms) << "\n";
    out << "threshold,mean_latency_ms,drop_rate\n";
    for (const auto& r : result.rows) {
        out << r.threshold << "," << fmt("%.3f", r.mean_latency_ms) << ","
            << fmt("%.6f", r.drop_rate) << "\n";
    }
}

}  // namespace udos
