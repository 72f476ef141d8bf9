#pragma once

#include "udos/core.hpp"

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <unordered_map>
#include <vector>

namespace udos {

enum class ProbeKind : std::uint8_t { LayerEntry, LayerExit, CoreSwitch, ConnAccept };

const char* probe_kind_name(ProbeKind k);
bool parse_probe_kind(const std::string& name, ProbeKind& out);

/// One probe firing. `counters` is the cumulative per-core counter value at
/// event time on `cpu_id`, not a delta. For CoreSwitch, `to_counters` is the
/// destination core's cumulative value at the same instant.
struct ProbeEvent {
    ProbeKind kind = ProbeKind::LayerEntry;
    Nanos timestamp = 0;
    std::uint32_t cpu_id = 0;
    std::uint64_t packet_id = 0;           // entry/exit/switch
    Layer layer = Layer::Link;             // entry/exit
    ResourceVector counters;
    std::uint32_t to_cpu = 0;              // switch only
    ResourceVector to_counters;            // switch only
    ClientId client;                       // first entry, conn accept
    std::uint32_t program_id = 0;          // application entry

    bool operator==(const ProbeEvent&) const = default;
};

struct StreamError : std::runtime_error {
    enum class Code { DuplicateEntry, MissingEntry, UnknownPacket, IncompletePacket };
    StreamError(Code c, const std::string& what) : std::runtime_error(what), code(c) {}
    Code code;
};

/// Whether a connection accept landed on an in-flight request or stands alone.
enum class AcceptAttribution { Request, Standalone };

/// Bounded FIFO of finalized records. Each record is charged its fixed
/// encoded size; a push that would exceed the capacity is rejected and
/// counted, never blocking the producer.
class RingBuffer {
public:
    explicit RingBuffer(std::uint64_t capacity_bytes);

    bool push(const PacketRecord& rec);
    std::vector<PacketRecord> drain(std::size_t max);

    std::uint64_t capacity_bytes() const { return capacity_bytes_; }
    std::uint64_t occupied_bytes() const { return occupied_bytes_; }
    std::size_t record_count() const { return records_.size(); }
    std::uint64_t dropped_count() const { return dropped_count_; }

private:
    std::uint64_t capacity_bytes_;
    std::uint64_t occupied_bytes_ = 0;
    std::uint64_t dropped_count_ = 0;
    std::deque<PacketRecord> records_;
};

/// Attributes counter deltas to (packet, layer) pairs from a stream of probe
/// events and assembles finalized PacketRecords.
///
/// Entry snapshots live in a per-core key-value store; a core switch adds the
/// partial delta on the leaving core to a carry and re-baselines the snapshot
/// on the destination core.
class Profiler {
public:
    void on_layer_entry(const ProbeEvent& ev);
    void on_layer_exit(const ProbeEvent& ev);
    void on_core_switch(const ProbeEvent& ev);
    AcceptAttribution on_conn_accept(const ProbeEvent& ev);

    /// Dispatches on ev.kind. Returns the attribution for ConnAccept events
    /// and Standalone otherwise.
    AcceptAttribution on_event(const ProbeEvent& ev);

    PacketRecord finalize_packet(std::uint64_t packet_id, Nanos timestamp);

    /// Force-finalizes a stuck packet with the deltas seen so far and marks
    /// the record incomplete. The open layer contributes only its carry.
    PacketRecord force_finalize(std::uint64_t packet_id, Nanos timestamp);

    /// Force-finalizes every packet whose last event is older than max_age.
    /// Records are returned in ascending packet_id order.
    std::vector<PacketRecord> expire_stale(Nanos now, Nanos max_age);

    /// Force-finalizes everything still in flight (end-of-run flush).
    std::vector<PacketRecord> flush_all(Nanos now);

    std::size_t in_flight_count() const { return location_.size(); }
    bool stores_empty() const { return location_.empty(); }

private:
    struct Flight {
        ClientId client;
        std::uint32_t program_id = 0;
        Nanos first_ts = 0;
        Nanos last_event_ts = 0;
        std::optional<Layer> open_layer;
        ResourceVector entry_counters;
        ResourceVector carry;
        std::array<std::optional<ResourceVector>, kLayerCount> usage;
        std::uint64_t conn_accepts = 0;
    };

    using Store = std::unordered_map<std::uint64_t, Flight>;

    Flight& flight_at(std::uint64_t packet_id, std::uint32_t cpu);
    PacketRecord assemble(std::uint64_t packet_id, Flight& f, std::uint32_t cpu, Nanos ts,
                          bool incomplete);
    void erase(std::uint64_t packet_id, std::uint32_t cpu);

    std::unordered_map<std::uint32_t, Store> stores_;
    std::unordered_map<std::uint64_t, std::uint32_t> location_;
    std::map<ClientId, std::set<std::uint64_t>> by_client_;
};

}  // namespace udos
