#pragma once

#include "udos/core.hpp"
#include "udos/mitigator.hpp"
#include "udos/profiler.hpp"
#include "udos/simnet.hpp"
#include "udos/watchdog.hpp"

#include <array>
#include <fstream>
#include <iosfwd>
#include <string>

namespace udos {

/// Fixed little-endian record layout, 126 bytes total:
///   0   timestamp            u64
///   8   cpu_id               u32
///   12  addr_family          u8   (4 or 6)
///   13  src_ip               16 B (IPv4 uses the low 4, rest zero)
///   29  kernel instructions  3 x u64 (link, network, transport)
///   53  kernel mbm bytes     3 x u64 (link, network, transport)
///   77  app instructions     u64
///   85  app mbm bytes        u64
///   93  program_id           u32
///   97  new_connections      u32
///   101 flags                u8   (bit0: incomplete)
///   102 reserved             24 B, zero
using EncodedRecord = std::array<std::uint8_t, kEncodedRecordSize>;

struct CodecError : std::runtime_error {
    enum class Kind { BadLength, BadAddrFamily, NonzeroReserved };
    CodecError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
    Kind kind;
};

/// Kernel-layer new_connections are not representable in the layout and must
/// be zero; the application count is clamped to 32 bits.
EncodedRecord encode_record(const PacketRecord& rec);

/// Inverse of encode_record. Throws CodecError on a malformed block; with
/// strict=true, nonzero reserved bytes are also rejected.
PacketRecord decode_record(const std::uint8_t* data, std::size_t len, bool strict = true);
PacketRecord decode_record(const EncodedRecord& block, bool strict = true);

/// One line of a JSONL trace.
struct TraceItem {
    enum class Kind { Probe, Record, Metrics };
    Kind kind = Kind::Probe;
    ProbeEvent probe;
    PacketRecord record;
    SystemMetrics metrics;
    int line = 0;
};

struct TraceError : std::runtime_error {
    enum class Kind { Parse, UnknownType, Io };
    TraceError(Kind k, int line_, const std::string& what)
        : std::runtime_error(what), kind(k), line(line_) {}
    Kind kind;
    int line;
};

/// Streaming JSONL reader; does not load the whole file.
class TraceReader {
public:
    explicit TraceReader(const std::string& path);

    /// Returns false at end of file. Throws TraceError with the line number
    /// on malformed lines or unknown `type` tags.
    bool next(TraceItem& out);

private:
    std::ifstream in_;
    std::string path_;
    int line_ = 0;
};

class TraceWriter {
public:
    explicit TraceWriter(const std::string& path);

    void write_probe(const ProbeEvent& ev);
    void write_metrics(const SystemMetrics& m);

private:
    std::ofstream out_;
};

std::string record_to_json(const PacketRecord& rec);
PacketRecord record_from_json(const std::string& text, int line = 0);

/// Feeds an exported trace through the profiler and mitigator without the
/// simulator. Reproduces the originating run's block timeline.
struct ReplayResult {
    std::vector<MetricsLogRow> metrics;
    std::vector<BlockEntry> blocks;
    std::vector<PacketRecord> drained_records;
};

ReplayResult run_replay(const std::string& trace_path, const PolicyConfig& policy,
                        double packet_expiry_factor = 2.0);

// CSV / binary emission. All formatting is fixed so identical inputs yield
// byte-identical files.
void write_metrics_csv(std::ostream& out, const std::vector<MetricsLogRow>& rows);
void write_blocks_csv(std::ostream& out, const std::vector<BlockEntry>& blocks);
void write_records_bin(std::ostream& out, const std::vector<PacketRecord>& records);
void write_qos_csv(std::ostream& out, const std::vector<QosRow>& rows);
void write_threshold_csv(std::ostream& out, const ThresholdSweepResult& result);

}  // namespace udos
