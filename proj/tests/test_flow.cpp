#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "ssltraffic/flow/features.hpp"
#include "ssltraffic/synth/pcap_writer.hpp"
#include "test_support.hpp"

using namespace ssltraffic;
using namespace ssltraffic::flow;
using synth::ipv4;
using synth::make_packet;
using synth::PcapWriter;

namespace {

const std::uint32_t kA = ipv4(10, 0, 0, 1);
const std::uint32_t kB = ipv4(192, 168, 1, 20);

std::vector<PacketRecord> parse(const std::vector<std::uint8_t>& bytes) { return parse_pcap(bytes).packets; }

double feature(const Dataset& ds, std::size_t row, const std::string& name) {
    return ds.features(row, *ds.schema.find(name));
}

struct OracleFlow {
    std::vector<PacketRecord> packets;  // in time order
};

// Straight-line recomputation of every catalogue feature for one flow.
std::map<std::string, double> oracle_features(const OracleFlow& f) {
    const auto& ps = f.packets;
    const double n = static_cast<double>(ps.size());
    std::map<std::string, double> out;
    double bytes = 0, up_b = 0, down_b = 0, up_p = 0, down_p = 0, mn = 1e300, mx = -1e300;
    for (const auto& p : ps) {
        bytes += p.total_length;
        mn = std::min(mn, double(p.total_length));
        mx = std::max(mx, double(p.total_length));
        const bool up = p.src_ip == ps[0].src_ip && p.src_port == ps[0].src_port;
        (up ? up_b : down_b) += p.total_length;
        (up ? up_p : down_p) += 1;
    }
    const double mean_len = bytes / n;
    double var = 0;
    for (const auto& p : ps) var += (p.total_length - mean_len) * (p.total_length - mean_len);
    std::vector<double> iat;
    for (std::size_t i = 1; i < ps.size(); ++i) iat.push_back(ps[i].timestamp - ps[i - 1].timestamp);
    double iat_mean = 0, iat_var = 0, iat_min = 0, iat_max = 0;
    if (!iat.empty()) {
        for (double g : iat) iat_mean += g;
        iat_mean /= double(iat.size());
        for (double g : iat) iat_var += (g - iat_mean) * (g - iat_mean);
        iat_var /= double(iat.size());
        iat_min = *std::min_element(iat.begin(), iat.end());
        iat_max = *std::max_element(iat.begin(), iat.end());
    }
    double bursts = 1;
    for (double g : iat)
        if (g > 1.0) bursts += 1;
    double duration = ps.back().timestamp - ps.front().timestamp;
    if (duration < 1e-6) duration = 1e-6;
    out["total_packets"] = n;
    out["total_bytes"] = bytes;
    out["duration"] = duration;
    out["mean_packet_length"] = mean_len;
    out["min_packet_length"] = mn;
    out["max_packet_length"] = mx;
    out["std_packet_length"] = std::sqrt(var / n);
    out["mean_iat"] = n > 1 ? duration / (n - 1) : duration;
    out["min_iat"] = iat_min;
    out["max_iat"] = iat_max;
    out["std_iat"] = std::sqrt(iat_var);
    out["throughput"] = bytes / duration;
    out["packet_rate"] = n / duration;
    out["up_bytes"] = up_b;
    out["down_bytes"] = down_b;
    out["up_packets"] = up_p;
    out["down_packets"] = down_p;
    out["up_down_byte_ratio"] = up_b / std::max(down_b, 1.0);
    out["burst_count"] = bursts;
    out["mean_burst_length"] = n / bursts;
    out["protocol"] = ps[0].protocol == Protocol::tcp ? 0 : 1;
    out["direction"] = (up_p > 0 && down_p > 0) ? 1 : 0;
    return out;
}

}  // namespace

TEST_CASE("parse_pcap: header-only capture", "[flow][pcap]") {
    PcapWriter w;
    auto res = parse_pcap(w.bytes());
    CHECK(res.packets.empty());
    CHECK(res.stats.records == 0);
}

TEST_CASE("parse_pcap: one 60-byte UDP packet", "[flow][pcap]") {
    auto pkt = make_packet(1700000000.25, kA, 5353, kB, 53, Protocol::udp, 32);
    REQUIRE(pkt.total_length == 60);
    for (bool swapped : {false, true})
        for (bool nanos : {false, true})
            for (bool eth : {false, true}) {
                PcapWriter w({swapped, nanos, eth});
                w.add(pkt);
                const auto res = parse_pcap(w.bytes());
                REQUIRE(res.packets.size() == 1);
                const auto& r = res.packets[0];
                CHECK(r.timestamp == 1700000000.25);
                CHECK(r.src_ip == kA);
                CHECK(r.dst_ip == kB);
                CHECK(r.src_port == 5353);
                CHECK(r.dst_port == 53);
                CHECK(r.protocol == Protocol::udp);
                CHECK(r.total_length == 60);
                CHECK(r.payload_length == 32);
            }
}

TEST_CASE("parse_pcap: skips and counts", "[flow][pcap]") {
    PcapWriter w;
    w.add(make_packet(1, kA, 1000, kB, 443, Protocol::tcp, 100));
    w.add_arp(2);
    w.add(make_packet(3, kA, 1000, kB, 443, Protocol::tcp, 100), 20);  // cut inside the IP header
    w.add(make_packet(4, kA, 1000, kB, 443, Protocol::tcp, 100), 14 + 40);  // snaplen: headers only
    auto bytes = w.bytes();
    bytes.resize(bytes.size() - 10);  // truncated final record
    const auto res = parse_pcap(bytes);
    CHECK(res.stats.accepted == 1);
    CHECK(res.stats.non_ipv4 == 1);
    CHECK(res.stats.truncated == 2);
    CHECK(res.packets[0].total_length == 140);

    std::vector<std::uint8_t> bad(24, 0);
    CHECK_THROWS_AS(parse_pcap(bad), DataError);
}

TEST_CASE("aggregate: idle timeout and bidirectionality", "[flow][aggregate]") {
    std::vector<PacketRecord> two{make_packet(0, kA, 1000, kB, 80, Protocol::tcp, 10),
                                  make_packet(5, kA, 1000, kB, 80, Protocol::tcp, 10)};
    auto flows = aggregate(two);
    REQUIRE(flows.size() == 1);
    CHECK(flows[0].packets() == 2);

    two[1].timestamp = 20;
    CHECK(aggregate(two).size() == 2);

    std::vector<PacketRecord> inter{make_packet(0, kA, 1000, kB, 80, Protocol::tcp, 10),
                                    make_packet(0.5, kB, 80, kA, 1000, Protocol::tcp, 10)};
    flows = aggregate(inter);
    REQUIRE(flows.size() == 1);
    CHECK(flows[0].up_packets == 1);
    CHECK(flows[0].down_packets == 1);

    CHECK_THROWS_AS(aggregate(inter, {0.0, 120, 1}), ConfigError);
}

TEST_CASE("aggregate: active timeout cuts long flows", "[flow][aggregate]") {
    std::vector<PacketRecord> ps;
    for (int i = 0; i <= 30; ++i) ps.push_back(make_packet(10.0 * i, kA, 1, kB, 2, Protocol::udp, 0));
    auto flows = aggregate(ps);
    // 0..120 in the first record, 130..250 in the second, 260..300 in the third.
    REQUIRE(flows.size() == 3);
    CHECK(flows[0].packets() == 13);
    CHECK(flows[1].packets() == 13);
    CHECK(flows[2].packets() == 5);
}

TEST_CASE("aggregate: invariant to direction swap and reordering", "[flow][aggregate]") {
    Rng rng = make_rng(21);
    std::vector<PacketRecord> ps;
    for (int i = 0; i < 200; ++i) {
        const bool fwd = uniform01(rng) < 0.5;
        const std::uint16_t port = static_cast<std::uint16_t>(1000 + uniform_index(rng, 5));
        auto p = fwd ? make_packet(uniform01(rng) * 100, kA, port, kB, 443, Protocol::tcp, 50)
                     : make_packet(uniform01(rng) * 100, kB, 443, kA, port, Protocol::tcp, 80);
        ps.push_back(p);
    }
    const auto base = aggregate(ps);
    std::size_t total = 0;
    for (const auto& f : base) total += f.packets();
    CHECK(total == ps.size());

    auto swapped = ps;
    for (auto& p : swapped) {
        std::swap(p.src_ip, p.dst_ip);
        std::swap(p.src_port, p.dst_port);
    }
    const auto other = aggregate(swapped);
    REQUIRE(other.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(other[i].key == base[i].key);
        CHECK(other[i].packets() == base[i].packets());
        CHECK(other[i].up_packets == base[i].up_packets);
    }

    auto shuffled = ps;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(aggregate(shuffled).size() == base.size());
}

TEST_CASE("featurize: two-packet and single-packet flows", "[flow][features]") {
    const auto schema = make_flow_schema(feature_catalogue());
    std::vector<PacketRecord> ps{make_packet(0, kA, 1, kB, 2, Protocol::udp, 72),
                                 make_packet(1, kA, 1, kB, 2, Protocol::udp, 72)};
    auto ds = featurize(aggregate(ps), schema);
    CHECK(feature(ds, 0, "total_bytes") == 200);
    CHECK(feature(ds, 0, "duration") == 1.0);
    CHECK(feature(ds, 0, "throughput") == 200);
    CHECK(feature(ds, 0, "mean_iat") == 1.0);
    CHECK(feature(ds, 0, "std_packet_length") == 0.0);

    ds = featurize(aggregate({ps[0]}), schema);
    CHECK(feature(ds, 0, "duration") == kTimeTick);
    CHECK(feature(ds, 0, "min_iat") == 0.0);
    CHECK(feature(ds, 0, "max_iat") == 0.0);
    CHECK(feature(ds, 0, "std_iat") == 0.0);
    CHECK(feature(ds, 0, "direction") == 0.0);
}

TEST_CASE("featurize: default schema", "[flow][features]") {
    const auto s = default_flow_schema();
    CHECK(s.width() == 21);
    CHECK(s.categorical_columns().size() == 2);
    CHECK(default_flow_constraints(s).size() == 3);
    CHECK_THROWS_AS(make_flow_schema({"duration", "duration"}), ConfigError);
    CHECK_THROWS_AS(make_flow_schema({"bogus"}), ConfigError);
    CHECK(featurize({}, s).rows() == 0);
}

TEST_CASE("featurize: 50-flow capture matches a per-flow oracle", "[flow][features]") {
    Rng rng = make_rng(50);
    std::vector<OracleFlow> truth;
    PcapWriter w;
    std::vector<PacketRecord> all;
    for (int f = 0; f < 50; ++f) {
        const std::uint32_t client = ipv4(10, 0, 1, static_cast<std::uint8_t>(f + 1));
        const std::uint16_t cport = static_cast<std::uint16_t>(40000 + f);
        const std::uint16_t sport = f % 3 ? 443 : 53;
        const auto proto = f % 3 ? Protocol::tcp : Protocol::udp;
        std::int64_t us = static_cast<std::int64_t>(uniform_index(rng, 1000000000));
        const std::size_t n = 1 + uniform_index(rng, 20);
        OracleFlow of;
        for (std::size_t i = 0; i < n; ++i) {
            if (i) us += 1 + static_cast<std::int64_t>(uniform_index(rng, 3000000));
            const double ts = double(us / 1000000) + double(us % 1000000) * 1e-6;
            const bool up = i == 0 || uniform01(rng) < 0.6;
            const auto payload = static_cast<std::uint32_t>(uniform_index(rng, 1400));
            of.packets.push_back(up ? make_packet(ts, client, cport, kB, sport, proto, payload)
                                    : make_packet(ts, kB, sport, client, cport, proto, payload));
        }
        all.insert(all.end(), of.packets.begin(), of.packets.end());
        truth.push_back(std::move(of));
    }
    // Write in global time order so the capture looks like a real trace.
    std::stable_sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.timestamp < b.timestamp; });
    for (const auto& p : all) w.add(p);
    std::sort(truth.begin(), truth.end(),
              [](auto& a, auto& b) { return a.packets[0].timestamp < b.packets[0].timestamp; });

    const auto schema = make_flow_schema(feature_catalogue());
    const auto ds = featurize(aggregate(parse(w.bytes())), schema);
    REQUIRE(ds.rows() == 50);
    for (std::size_t r = 0; r < 50; ++r) {
        const auto expect = oracle_features(truth[r]);
        for (const auto& [name, value] : expect) {
            INFO("flow " << r << " feature " << name);
            CHECK(std::abs(feature(ds, r, name) - value) <= 1e-9 * std::max(1.0, std::abs(value)));
        }
    }

    // The default identities hold by construction.
    const auto set = default_flow_constraints(schema);
    const auto cont = continuous_matrix(ds);
    for (std::size_t r = 0; r < cont.rows(); ++r)
        for (const auto& c : set.constraints())
            CHECK(std::abs(residual(set, c, cont.row(r))) <= 1e-9 * std::max(1.0, std::abs(cont(r, c.a))));
}
