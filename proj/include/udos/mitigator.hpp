#pragma once

#include "udos/core.hpp"

#include <deque>
#include <map>
#include <vector>

namespace udos {

/// Enforcement side effects of a block. The engine binds these to its server
/// model; a deployment would bind firewall and process hooks here.
class EnforcementHook {
public:
    virtual ~EnforcementHook() = default;
    /// Drop all subsequent ingress from the client before any accounting.
    virtual void drop_ingress(const ClientId& client) = 0;
    /// Tear down the client's established sessions.
    virtual void teardown_sessions(const ClientId& client) = 0;
};

struct BlockReason {
    Layer layer = Layer::Application;
    Resource resource = Resource::Instructions;
    std::uint64_t observed = 0;
    std::uint64_t threshold = 0;

    bool operator==(const BlockReason&) const = default;
};

struct BlockDecision {
    ClientId client;
    BlockReason reason;

    bool operator==(const BlockDecision&) const = default;
};

struct BlockEntry {
    ClientId client;
    Nanos blocked_at = 0;
    Nanos expires_at = 0;
    BlockReason reason;

    bool operator==(const BlockEntry&) const = default;
};

/// Time-windowed per-client usage with running sums. Connection accepts that
/// arrive outside any tracked request are kept as timestamped standalone
/// counts so connection ranking sees them without waiting for a record.
class WindowStore {
public:
    void ingest(const PacketRecord& rec);
    void note_standalone_accept(const ClientId& client, Nanos timestamp, std::uint64_t count = 1);

    /// Removes every entry older than now - window_time. Returns the number
    /// of record entries evicted.
    std::size_t evict_stale(Nanos now, const PolicyConfig& cfg);

    /// Clients ordered by descending windowed sum for (layer, resource);
    /// ties break by ascending ClientId. Whitelisted clients are excluded.
    /// For Resource::Connections the layer argument is ignored: the sum is
    /// the standalone accept count plus application-layer new_connections.
    std::vector<std::pair<ClientId, std::uint64_t>> rank(Layer layer, Resource resource,
                                                         const PolicyConfig& cfg) const;

    std::uint64_t windowed_sum(const ClientId& client, Layer layer, Resource resource) const;
    std::size_t client_count() const { return clients_.size(); }
    bool contains(const ClientId& client) const { return clients_.count(client) != 0; }

private:
    struct Entry {
        Nanos timestamp;
        LayerUsage usage;
    };
    struct Window {
        std::deque<Entry> entries;
        LayerUsage sums{};
        std::deque<std::pair<Nanos, std::uint64_t>> accepts;
        std::uint64_t accept_sum = 0;
    };

    std::map<ClientId, Window> clients_;
};

class Blocklist {
public:
    /// Registers the block and invokes both enforcement hooks. Throws
    /// StreamError-like AlreadyBlocked via std::logic_error when the client
    /// is already blocked.
    void apply_block(const BlockDecision& d, Nanos now, const PolicyConfig& cfg,
                     EnforcementHook& hook);

    /// Removes entries with expires_at <= now; returns the unblocked clients
    /// in ascending order.
    std::vector<ClientId> expire_blocks(Nanos now);

    bool is_blocked(const ClientId& client) const { return entries_.count(client) != 0; }
    const BlockEntry* find(const ClientId& client) const;
    std::size_t size() const { return entries_.size(); }

private:
    std::map<ClientId, BlockEntry> entries_;
};

struct AlreadyBlocked : std::logic_error {
    explicit AlreadyBlocked(const std::string& what) : std::logic_error(what) {}
};

/// Policy check over the ranked windows: for every (layer, resource) pair
/// with a configured threshold, the top-ranked non-blocked client is blocked
/// if its windowed sum reaches the threshold. At most one decision per client
/// per invocation.
std::vector<BlockDecision> select_and_decide(const WindowStore& windows, const Blocklist& blocks,
                                             const PolicyConfig& cfg, Nanos now);

}  // namespace udos
