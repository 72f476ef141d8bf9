#include "udos/profiler.hpp"

#include <algorithm>

namespace udos {

const char* probe_kind_name(ProbeKind k) {
    switch (k) {
        case ProbeKind::LayerEntry: return "layer_entry";
        case ProbeKind::LayerExit: return "layer_exit";
        case ProbeKind::CoreSwitch: return "core_switch";
        case ProbeKind::ConnAccept: return "conn_accept";
    }
    return "?";
}

bool parse_probe_kind(const std::string& name, ProbeKind& out) {
    for (ProbeKind k : {ProbeKind::LayerEntry, ProbeKind::LayerExit, ProbeKind::CoreSwitch,
                        ProbeKind::ConnAccept}) {
        if (name == probe_kind_name(k)) {
            out = k;
            return true;
        }
    }
    return false;
}

RingBuffer::RingBuffer(std::uint64_t capacity_bytes) : capacity_bytes_(capacity_bytes) {}

bool RingBuffer::push(const PacketRecord& rec) {
    if (occupied_bytes_ + kEncodedRecordSize > capacity_bytes_) {
        ++dropped_count_;
        return false;
    }
    occupied_bytes_ += kEncodedRecordSize;
    records_.push_back(rec);
    return true;
}

std::vector<PacketRecord> RingBuffer::drain(std::size_t max) {
    std::vector<PacketRecord> out;
    std::size_t n = std::min(max, records_.size());
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(std::move(records_.front()));
        records_.pop_front();
        occupied_bytes_ -= kEncodedRecordSize;
    }
    return out;
}

Profiler::Flight& Profiler::flight_at(std::uint64_t packet_id, std::uint32_t cpu) {
    return stores_[cpu].at(packet_id);
}

void Profiler::erase(std::uint64_t packet_id, std::uint32_t cpu) {
    auto store_it = stores_.find(cpu);
    if (store_it != stores_.end()) {
        auto it = store_it->second.find(packet_id);
        if (it != store_it->second.end()) {
            auto by_it = by_client_.find(it->second.client);
            if (by_it != by_client_.end()) {
                by_it->second.erase(packet_id);
                if (by_it->second.empty()) by_client_.erase(by_it);
            }
            store_it->second.erase(it);
        }
        if (store_it->second.empty()) stores_.erase(store_it);
    }
    location_.erase(packet_id);
}

void Profiler::on_layer_entry(const ProbeEvent& ev) {
    auto loc = location_.find(ev.packet_id);
    if (loc == location_.end()) {
        Flight f;
        f.client = ev.client;
        f.program_id = ev.program_id;
        f.first_ts = ev.timestamp;
        f.last_event_ts = ev.timestamp;
        f.open_layer = ev.layer;
        f.entry_counters = ev.counters;
        stores_[ev.cpu_id].emplace(ev.packet_id, std::move(f));
        location_.emplace(ev.packet_id, ev.cpu_id);
        by_client_[ev.client].insert(ev.packet_id);
        return;
    }

    std::uint32_t cur_cpu = loc->second;
    Flight& f = flight_at(ev.packet_id, cur_cpu);
    if (f.open_layer.has_value()) {
        throw StreamError(StreamError::Code::DuplicateEntry,
                          "layer entry for packet " + std::to_string(ev.packet_id) + " at " +
                              layer_name(ev.layer) + " while " + layer_name(*f.open_layer) +
                              " is still open");
    }
    if (f.usage[layer_index(ev.layer)].has_value()) {
        throw StreamError(StreamError::Code::DuplicateEntry,
                          "second entry for packet " + std::to_string(ev.packet_id) + " at " +
                              layer_name(ev.layer));
    }
    if (ev.layer == Layer::Application && ev.program_id != 0) {
        f.program_id = ev.program_id;
    }
    f.open_layer = ev.layer;
    f.entry_counters = ev.counters;
    f.carry = {};
    f.last_event_ts = ev.timestamp;
    if (ev.cpu_id != cur_cpu) {
        // No layer was open, so no usage spans the move; just relocate.
        Store& from = stores_[cur_cpu];
        auto node = from.extract(ev.packet_id);
        stores_[ev.cpu_id].insert(std::move(node));
        if (from.empty()) stores_.erase(cur_cpu);
        loc->second = ev.cpu_id;
    }
}

void Profiler::on_layer_exit(const ProbeEvent& ev) {
    auto loc = location_.find(ev.packet_id);
    if (loc == location_.end()) {
        throw StreamError(StreamError::Code::MissingEntry,
                          "layer exit for unknown packet " + std::to_string(ev.packet_id));
    }
    Flight& f = flight_at(ev.packet_id, loc->second);
    if (!f.open_layer.has_value() || *f.open_layer != ev.layer) {
        throw StreamError(StreamError::Code::MissingEntry,
                          "layer exit without matching entry for packet " +
                              std::to_string(ev.packet_id) + " at " + layer_name(ev.layer));
    }
    if (ev.cpu_id != loc->second) {
        throw StreamError(StreamError::Code::MissingEntry,
                          "layer exit for packet " + std::to_string(ev.packet_id) +
                              " on core " + std::to_string(ev.cpu_id) + " but packet is on core " +
                              std::to_string(loc->second));
    }
    ResourceVector delta = resource_vector_sub(ev.counters, f.entry_counters);
    f.usage[layer_index(ev.layer)] = resource_vector_add(delta, f.carry);
    f.carry = {};
    f.open_layer.reset();
    f.last_event_ts = ev.timestamp;
}

void Profiler::on_core_switch(const ProbeEvent& ev) {
    auto loc = location_.find(ev.packet_id);
    if (loc == location_.end() || loc->second != ev.cpu_id) {
        throw StreamError(StreamError::Code::UnknownPacket,
                          "core switch for packet " + std::to_string(ev.packet_id) +
                              " with no state on core " + std::to_string(ev.cpu_id));
    }
    Flight& f = flight_at(ev.packet_id, ev.cpu_id);
    if (!f.open_layer.has_value()) {
        throw StreamError(StreamError::Code::UnknownPacket,
                          "core switch for packet " + std::to_string(ev.packet_id) +
                              " with no open layer");
    }
    ResourceVector delta = resource_vector_sub(ev.counters, f.entry_counters);
    f.carry = resource_vector_add(f.carry, delta);
    f.entry_counters = ev.to_counters;
    f.last_event_ts = ev.timestamp;

    Store& from = stores_[ev.cpu_id];
    auto node = from.extract(ev.packet_id);
    stores_[ev.to_cpu].insert(std::move(node));
    if (from.empty()) stores_.erase(ev.cpu_id);
    loc->second = ev.to_cpu;
}

AcceptAttribution Profiler::on_conn_accept(const ProbeEvent& ev) {
    auto it = by_client_.find(ev.client);
    if (it == by_client_.end()) {
        return AcceptAttribution::Standalone;
    }
    // Accepts count against a request only while one is actively being
    // processed (a layer is open); parked packets do not qualify.
    for (std::uint64_t packet_id : it->second) {
        Flight& f = flight_at(packet_id, location_.at(packet_id));
        if (f.open_layer.has_value()) {
            f.conn_accepts += 1;
            f.last_event_ts = ev.timestamp;
            return AcceptAttribution::Request;
        }
    }
    return AcceptAttribution::Standalone;
}

AcceptAttribution Profiler::on_event(const ProbeEvent& ev) {
    switch (ev.kind) {
        case ProbeKind::LayerEntry:
            on_layer_entry(ev);
            return AcceptAttribution::Standalone;
        case ProbeKind::LayerExit:
            on_layer_exit(ev);
            return AcceptAttribution::Standalone;
        case ProbeKind::CoreSwitch:
            on_core_switch(ev);
            return AcceptAttribution::Standalone;
        case ProbeKind::ConnAccept:
            return on_conn_accept(ev);
    }
    return AcceptAttribution::Standalone;
}

PacketRecord Profiler::assemble(std::uint64_t packet_id, Flight& f, std::uint32_t cpu, Nanos ts,
                                bool incomplete) {
    PacketRecord rec;
    rec.timestamp = ts;
    rec.cpu_id = cpu;
    rec.client = f.client;
    rec.program_id = f.program_id;
    rec.incomplete = incomplete;
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        rec.usage[i] = f.usage[i].value_or(ResourceVector{});
    }
    if (incomplete && f.open_layer.has_value()) {
        // Deltas up to the last event: the open layer contributes its carry.
        rec.usage[layer_index(*f.open_layer)] =
            resource_vector_add(rec.usage[layer_index(*f.open_layer)], f.carry);
    }
    rec.usage[layer_index(Layer::Application)].new_connections = saturating_add(
        rec.usage[layer_index(Layer::Application)].new_connections, f.conn_accepts);
    erase(packet_id, cpu);
    return rec;
}

PacketRecord Profiler::finalize_packet(std::uint64_t packet_id, Nanos timestamp) {
    auto loc = location_.find(packet_id);
    if (loc == location_.end()) {
        throw StreamError(StreamError::Code::UnknownPacket,
                          "finalize for unknown packet " + std::to_string(packet_id));
    }
    Flight& f = flight_at(packet_id, loc->second);
    if (f.open_layer.has_value()) {
        throw StreamError(StreamError::Code::IncompletePacket,
                          "finalize for packet " + std::to_string(packet_id) + " with " +
                              layer_name(*f.open_layer) + " still open");
    }
    for (Layer l : all_layers()) {
        if (!f.usage[layer_index(l)].has_value()) {
            throw StreamError(StreamError::Code::IncompletePacket,
                              "finalize for packet " + std::to_string(packet_id) + " with " +
                                  layer_name(l) + " never closed");
        }
    }
    return assemble(packet_id, f, loc->second, timestamp, false);
}

PacketRecord Profiler::force_finalize(std::uint64_t packet_id, Nanos timestamp) {
    auto loc = location_.find(packet_id);
    if (loc == location_.end()) {
        throw StreamError(StreamError::Code::UnknownPacket,
                          "force finalize for unknown packet " + std::to_string(packet_id));
    }
    Flight& f = flight_at(packet_id, loc->second);
    return assemble(packet_id, f, loc->second, timestamp, true);
}

std::vector<PacketRecord> Profiler::expire_stale(Nanos now, Nanos max_age) {
    std::vector<std::uint64_t> stale;
    for (const auto& [packet_id, cpu] : location_) {
        const Flight& f = stores_.at(cpu).at(packet_id);
        if (now - f.last_event_ts >= max_age) {
            stale.push_back(packet_id);
        }
    }
    std::sort(stale.begin(), stale.end());
    std::vector<PacketRecord> out;
    out.reserve(stale.size());
    for (std::uint64_t id : stale) {
        out.push_back(force_finalize(id, now));
    }
    return out;
}

std::vector<PacketRecord> Profiler::flush_all(Nanos now) {
    return expire_stale(now, 0);
}

}  // namespace udos
