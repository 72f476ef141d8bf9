#include "udos/mitigator.hpp"

#include <algorithm>
#include <set>

namespace udos {

void WindowStore::ingest(const PacketRecord& rec) {
    Window& w = clients_[rec.client];
    w.entries.push_back(Entry{rec.timestamp, rec.usage});
    w.sums = layer_usage_add(w.sums, rec.usage);
}

void WindowStore::note_standalone_accept(const ClientId& client, Nanos timestamp,
                                         std::uint64_t count) {
    Window& w = clients_[client];
    w.accepts.emplace_back(timestamp, count);
    w.accept_sum = saturating_add(w.accept_sum, count);
}

std::size_t WindowStore::evict_stale(Nanos now, const PolicyConfig& cfg) {
    const Nanos cutoff = now - cfg.window_time_ns();
    std::size_t evicted = 0;
    for (auto it = clients_.begin(); it != clients_.end();) {
        Window& w = it->second;
        while (!w.entries.empty() && w.entries.front().timestamp < cutoff) {
            for (std::size_t i = 0; i < kLayerCount; ++i) {
                w.sums[i] = resource_vector_sub(w.sums[i], w.entries.front().usage[i]);
            }
            w.entries.pop_front();
            ++evicted;
        }
        while (!w.accepts.empty() && w.accepts.front().first < cutoff) {
            w.accept_sum = saturating_sub(w.accept_sum, w.accepts.front().second);
            w.accepts.pop_front();
        }
        if (w.entries.empty() && w.accepts.empty()) {
            it = clients_.erase(it);
        } else {
            ++it;
        }
    }
    return evicted;
}

std::uint64_t WindowStore::windowed_sum(const ClientId& client, Layer layer,
                                        Resource resource) const {
    auto it = clients_.find(client);
    if (it == clients_.end()) return 0;
    const Window& w = it->second;
    switch (resource) {
        case Resource::Instructions:
            return w.sums[layer_index(layer)].instructions;
        case Resource::MbmBytes:
            return w.sums[layer_index(layer)].mbm_bytes;
        case Resource::Connections:
            return saturating_add(w.accept_sum,
                                  w.sums[layer_index(Layer::Application)].new_connections);
    }
    return 0;
}

std::vector<std::pair<ClientId, std::uint64_t>> WindowStore::rank(Layer layer, Resource resource,
                                                                  const PolicyConfig& cfg) const {
    std::vector<std::pair<ClientId, std::uint64_t>> out;
    out.reserve(clients_.size());
    for (const auto& [client, w] : clients_) {
        (void)w;
        if (cfg.whitelist.count(client) != 0) continue;
        out.emplace_back(client, windowed_sum(client, layer, resource));
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

void Blocklist::apply_block(const BlockDecision& d, Nanos now, const PolicyConfig& cfg,
                            EnforcementHook& hook) {
    if (entries_.count(d.client) != 0) {
        throw AlreadyBlocked("client " + format_client_id(d.client) + " is already blocked");
    }
    BlockEntry e;
    e.client = d.client;
    e.blocked_at = now;
    e.expires_at = now + cfg.blocking_time_ns();
    e.reason = d.reason;
    entries_.emplace(d.client, e);
    hook.drop_ingress(d.client);
    hook.teardown_sessions(d.client);
}

std::vector<ClientId> Blocklist::expire_blocks(Nanos now) {
    std::vector<ClientId> out;
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (it->second.expires_at <= now) {
            out.push_back(it->first);
            it = entries_.erase(it);
        } else {
            ++it;
        }
    }
    return out;
}

const BlockEntry* Blocklist::find(const ClientId& client) const {
    auto it = entries_.find(client);
    return it == entries_.end() ? nullptr : &it->second;
}

std::vector<BlockDecision> select_and_decide(const WindowStore& windows, const Blocklist& blocks,
                                             const PolicyConfig& cfg, Nanos now) {
    (void)now;
    // Layer order mirrors the threshold table; connections has one pool-wide
    // threshold checked last.
    static constexpr Layer kLayerOrder[] = {Layer::Application, Layer::Transport, Layer::Network,
                                            Layer::Link};
    std::vector<BlockDecision> out;
    std::set<ClientId> decided;

    auto check_pair = [&](Layer layer, Resource resource, std::uint64_t threshold) {
        auto ranked = windows.rank(layer, resource, cfg);
        for (const auto& [client, sum] : ranked) {
            if (blocks.is_blocked(client) || decided.count(client) != 0) continue;
            // Only the top-ranked candidate is eligible for this pair.
            if (sum >= threshold) {
                decided.insert(client);
                out.push_back(BlockDecision{client, {layer, resource, sum, threshold}});
            }
            return;
        }
    };

    for (Layer l : kLayerOrder) {
        check_pair(l, Resource::Instructions, cfg.instruction_thresholds[layer_index(l)]);
    }
    for (Layer l : kLayerOrder) {
        check_pair(l, Resource::MbmBytes, cfg.mbm_thresholds[layer_index(l)]);
    }
    check_pair(Layer::Application, Resource::Connections, cfg.connection_threshold);
    return out;
}

}  // namespace udos
