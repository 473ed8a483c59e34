#pragma once

// Classic libpcap capture reader (not pcapng). Extracts IPv4 TCP/UDP packets;
// everything else is counted and skipped.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "ssltraffic/errors.hpp"

namespace ssltraffic::flow {

enum class Protocol : std::uint8_t { tcp = 6, udp = 17 };

struct PacketRecord {
    double timestamp = 0.0;  // seconds
    std::uint32_t src_ip = 0;
    std::uint32_t dst_ip = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    Protocol protocol = Protocol::tcp;
    std::uint32_t total_length = 0;    // IPv4 total length
    std::uint32_t payload_length = 0;  // bytes after the L4 header

    friend bool operator==(const PacketRecord&, const PacketRecord&) = default;
};

struct PcapStats {
    std::size_t records = 0;
    std::size_t accepted = 0;
    std::size_t non_ipv4 = 0;
    std::size_t other_protocol = 0;
    std::size_t truncated = 0;
};

struct PcapParseResult {
    std::vector<PacketRecord> packets;
    PcapStats stats;
};

inline constexpr std::uint32_t kPcapMagicMicros = 0xa1b2c3d4;
inline constexpr std::uint32_t kPcapMagicNanos = 0xa1b23c4d;

enum class LinkType : std::uint32_t { ethernet = 1, raw_ip = 101, linux_sll = 113, ipv4 = 228 };

namespace detail {
inline std::uint32_t swap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00) | ((v << 8) & 0xff0000) | (v << 24);
}
inline std::uint32_t le32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}
inline std::uint16_t be16(const std::uint8_t* p) { return std::uint16_t(p[0] << 8 | p[1]); }
inline std::uint32_t be32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) << 24 | std::uint32_t(p[1]) << 16 | std::uint32_t(p[2]) << 8 |
           std::uint32_t(p[3]);
}

enum class Decode { ok, non_ipv4, other_protocol, truncated };

/// Decodes an IPv4 datagram starting at `ip`, `len` captured bytes.
inline Decode decode_ipv4(const std::uint8_t* ip, std::size_t len, PacketRecord& rec) {
    if (len < 20) return Decode::truncated;
    if ((ip[0] >> 4) != 4) return Decode::non_ipv4;
    const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0f) * 4;
    if (ihl < 20) return Decode::non_ipv4;
    if (len < ihl) return Decode::truncated;
    const std::uint16_t total = be16(ip + 2);
    const std::uint16_t frag = be16(ip + 6);
    const std::uint8_t proto = ip[9];
    if (proto != 6 && proto != 17) return Decode::other_protocol;
    if ((frag & 0x1fff) != 0) return Decode::other_protocol;  // non-first fragment, no L4 header
    rec.src_ip = be32(ip + 12);
    rec.dst_ip = be32(ip + 16);
    rec.total_length = total;
    const std::uint8_t* l4 = ip + ihl;
    const std::size_t l4_len = len - ihl;
    std::size_t l4_header = 0;
    if (proto == 6) {
        if (l4_len < 20) return Decode::truncated;
        l4_header = static_cast<std::size_t>(l4[12] >> 4) * 4;
        if (l4_header < 20) return Decode::truncated;
        rec.protocol = Protocol::tcp;
    } else {
        if (l4_len < 8) return Decode::truncated;
        l4_header = 8;
        rec.protocol = Protocol::udp;
    }
    rec.src_port = be16(l4);
    rec.dst_port = be16(l4 + 2);
    if (total < ihl + l4_header) return Decode::truncated;
    rec.payload_length = static_cast<std::uint32_t>(total - ihl - l4_header);
    return Decode::ok;
}
}  // namespace detail

/// Parses a classic pcap byte stream. Bad magic throws; a truncated record
/// at the end of the stream, or a packet too short to decode, is counted in
/// `stats.truncated` and skipped.
inline PcapParseResult parse_pcap(std::span<const std::uint8_t> bytes) {
    using namespace detail;
    if (bytes.size() < 24) throw DataError("pcap: stream shorter than the global header");
    const std::uint32_t raw_magic = le32(bytes.data());
    bool swapped = false;
    bool nanos = false;
    if (raw_magic == kPcapMagicMicros) {
    } else if (raw_magic == swap32(kPcapMagicMicros)) {
        swapped = true;
    } else if (raw_magic == kPcapMagicNanos) {
        nanos = true;
    } else if (raw_magic == swap32(kPcapMagicNanos)) {
        swapped = nanos = true;
    } else {
        throw DataError("pcap: bad magic number (not a classic pcap capture)");
    }
    auto u32 = [&](std::size_t off) {
        const std::uint32_t v = le32(bytes.data() + off);
        return swapped ? swap32(v) : v;
    };
    const std::uint32_t linktype = u32(20) & 0x0fffffff;
    if (linktype != 1 && linktype != 101 && linktype != 12 && linktype != 14 && linktype != 113 &&
        linktype != 228)
        throw DataError("pcap: unsupported link type " + std::to_string(linktype));

    PcapParseResult out;
    std::size_t off = 24;
    const double frac_scale = nanos ? 1e-9 : 1e-6;
    while (off < bytes.size()) {
        if (bytes.size() - off < 16) {
            ++out.stats.truncated;
            break;
        }
        const std::uint32_t ts_sec = u32(off);
        const std::uint32_t ts_frac = u32(off + 4);
        const std::uint32_t incl = u32(off + 8);
        off += 16;
        ++out.stats.records;
        if (bytes.size() - off < incl) {
            ++out.stats.truncated;
            break;
        }
        const std::uint8_t* p = bytes.data() + off;
        std::size_t len = incl;
        off += incl;

        // Strip the link layer down to the IPv4 header.
        bool is_ipv4 = true;
        if (linktype == 1) {
            if (len < 14) {
                ++out.stats.truncated;
                continue;
            }
            std::uint16_t ethertype = be16(p + 12);
            std::size_t hdr = 14;
            while ((ethertype == 0x8100 || ethertype == 0x88a8) && len >= hdr + 4) {
                ethertype = be16(p + hdr + 2);
                hdr += 4;
            }
            is_ipv4 = ethertype == 0x0800;
            p += hdr;
            len -= std::min(len, hdr);
        } else if (linktype == 113) {
            if (len < 16) {
                ++out.stats.truncated;
                continue;
            }
            is_ipv4 = be16(p + 14) == 0x0800;
            p += 16;
            len -= 16;
        }
        if (!is_ipv4) {
            ++out.stats.non_ipv4;
            continue;
        }
        PacketRecord rec;
        rec.timestamp = static_cast<double>(ts_sec) + static_cast<double>(ts_frac) * frac_scale;
        switch (decode_ipv4(p, len, rec)) {
            case Decode::ok:
                out.packets.push_back(rec);
                ++out.stats.accepted;
                break;
            case Decode::non_ipv4: ++out.stats.non_ipv4; break;
            case Decode::other_protocol: ++out.stats.other_protocol; break;
            case Decode::truncated: ++out.stats.truncated; break;
        }
    }
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline PcapParseResult parse_pcap_file(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_pcap(bytes);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

}  // namespace ssltraffic::flow
