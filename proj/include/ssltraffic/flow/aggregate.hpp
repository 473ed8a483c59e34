#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ssltraffic/errors.hpp"
#include "ssltraffic/flow/pcap.hpp"

namespace ssltraffic::flow {

/// Bidirectional 5-tuple; the lexicographically smaller (ip, port) endpoint
/// is stored first, so both directions of a connection share a key.
struct FlowKey {
    std::uint32_t ip_lo = 0;
    std::uint16_t port_lo = 0;
    std::uint32_t ip_hi = 0;
    std::uint16_t port_hi = 0;
    Protocol protocol = Protocol::tcp;

    static FlowKey of(const PacketRecord& p) {
        FlowKey k;
        k.protocol = p.protocol;
        if (std::tie(p.src_ip, p.src_port) <= std::tie(p.dst_ip, p.dst_port)) {
            k.ip_lo = p.src_ip, k.port_lo = p.src_port, k.ip_hi = p.dst_ip, k.port_hi = p.dst_port;
        } else {
            k.ip_lo = p.dst_ip, k.port_lo = p.dst_port, k.ip_hi = p.src_ip, k.port_hi = p.src_port;
        }
        return k;
    }

    friend bool operator==(const FlowKey&, const FlowKey&) = default;
};

struct FlowKeyHash {
    std::size_t operator()(const FlowKey& k) const noexcept {
        std::uint64_t h = (std::uint64_t(k.ip_lo) << 32) ^ k.ip_hi;
        h ^= (std::uint64_t(k.port_lo) << 48) ^ (std::uint64_t(k.port_hi) << 24) ^
             static_cast<std::uint64_t>(k.protocol);
        return std::hash<std::uint64_t>{}(h * 0x9e3779b97f4a7c15ULL);
    }
};

/// Running count/mean/min/max/M2 (Welford).
struct RunningStats {
    std::size_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();

    void add(double x) {
        ++count;
        const double d = x - mean;
        mean += d / static_cast<double>(count);
        m2 += d * (x - mean);
        min = std::min(min, x);
        max = std::max(max, x);
    }
    /// Population standard deviation; 0 when empty.
    double stddev() const { return count ? std::sqrt(std::max(0.0, m2 / static_cast<double>(count))) : 0.0; }
};

struct FlowRecord {
    FlowKey key;
    /// Initiator (source of the first packet) is the key's lo endpoint.
    bool initiator_is_lo = true;
    std::uint64_t up_packets = 0, down_packets = 0;  // up = from the initiator
    std::uint64_t up_bytes = 0, down_bytes = 0;
    RunningStats packet_length;
    RunningStats iat;
    double first_ts = 0.0;
    double last_ts = 0.0;
    std::uint64_t burst_count = 0;
    /// Fewer than two packets.
    bool short_flow = true;

    std::uint64_t packets() const noexcept { return up_packets + down_packets; }
    std::uint64_t bytes() const noexcept { return up_bytes + down_bytes; }
};

struct AggregateOptions {
    double idle_timeout = 15.0;
    double active_timeout = 120.0;
    double burst_gap = 1.0;
};

namespace detail {
inline void add_packet(FlowRecord& f, const PacketRecord& p, const AggregateOptions& opt, bool first) {
    const bool from_lo = std::tie(p.src_ip, p.src_port) == std::tie(f.key.ip_lo, f.key.port_lo);
    if (first) {
        f.initiator_is_lo = from_lo;
        f.first_ts = f.last_ts = p.timestamp;
        f.burst_count = 1;
    } else {
        const double gap = p.timestamp - f.last_ts;
        f.iat.add(gap);
        if (gap > opt.burst_gap) ++f.burst_count;
        f.last_ts = p.timestamp;
    }
    const bool up = from_lo == f.initiator_is_lo;
    (up ? f.up_packets : f.down_packets) += 1;
    (up ? f.up_bytes : f.down_bytes) += p.total_length;
    f.packet_length.add(static_cast<double>(p.total_length));
    f.short_flow = f.packets() < 2;
}
}  // namespace detail

/// Groups packets into bidirectional flows. Packets are stable-sorted by
/// timestamp first. A gap above `idle_timeout` since the flow's last packet,
/// or a packet that would stretch the flow beyond `active_timeout`, closes the
/// flow and starts a new record. Output is ordered by flow start.
inline std::vector<FlowRecord> aggregate(std::vector<PacketRecord> packets, const AggregateOptions& opt = {}) {
    if (!(opt.idle_timeout > 0.0) || !(opt.active_timeout > 0.0) || !(opt.burst_gap > 0.0))
        throw ConfigError("aggregate: timeouts and burst gap must be > 0");
    std::stable_sort(packets.begin(), packets.end(),
                     [](const PacketRecord& a, const PacketRecord& b) { return a.timestamp < b.timestamp; });
    std::vector<FlowRecord> flows;
    std::unordered_map<FlowKey, std::size_t, FlowKeyHash> active;
    for (const auto& p : packets) {
        const FlowKey key = FlowKey::of(p);
        auto it = active.find(key);
        if (it != active.end()) {
            const FlowRecord& f = flows[it->second];
            const bool idle = p.timestamp - f.last_ts > opt.idle_timeout;
            const bool too_long = p.timestamp - f.first_ts > opt.active_timeout;
            if (!idle && !too_long) {
                detail::add_packet(flows[it->second], p, opt, false);
                continue;
            }
        }
        FlowRecord f;
        f.key = key;
        detail::add_packet(f, p, opt, true);
        active[key] = flows.size();
        flows.push_back(std::move(f));
    }
    return flows;
}

}  // namespace ssltraffic::flow
