#pragma once

// Builds classic pcap byte streams from packet descriptions. Test fixtures and
// the `synth --pcap` CLI path use it.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "ssltraffic/errors.hpp"
#include "ssltraffic/flow/pcap.hpp"

namespace ssltraffic::synth {

struct PcapWriteOptions {
    bool byte_swapped = false;  // write a big-endian file
    bool nanosecond = false;
    bool ethernet = true;       // else LINKTYPE_RAW (bare IPv4)
};

/// IPv4 address from dotted components.
constexpr std::uint32_t ipv4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
    return std::uint32_t(a) << 24 | std::uint32_t(b) << 16 | std::uint32_t(c) << 8 | d;
}

/// Packet whose total_length is consistent with its headers and payload.
inline flow::PacketRecord make_packet(double ts, std::uint32_t src, std::uint16_t sport, std::uint32_t dst,
                                      std::uint16_t dport, flow::Protocol proto, std::uint32_t payload) {
    flow::PacketRecord p;
    p.timestamp = ts;
    p.src_ip = src;
    p.dst_ip = dst;
    p.src_port = sport;
    p.dst_port = dport;
    p.protocol = proto;
    p.payload_length = payload;
    p.total_length = 20 + (proto == flow::Protocol::tcp ? 20u : 8u) + payload;
    return p;
}

class PcapWriter {
public:
    explicit PcapWriter(PcapWriteOptions opts = {}) : opts_(opts) {
        put32(opts_.nanosecond ? flow::kPcapMagicNanos : flow::kPcapMagicMicros);
        put16(2);
        put16(4);
        put32(0);       // thiszone
        put32(0);       // sigfigs
        put32(65535);   // snaplen
        put32(opts_.ethernet ? 1u : 101u);
    }

    /// Appends one packet; `captured_limit` truncates the captured bytes.
    void add(const flow::PacketRecord& p, std::size_t captured_limit = SIZE_MAX) {
        std::vector<std::uint8_t> frame;
        if (opts_.ethernet) {
            for (int i = 0; i < 12; ++i) frame.push_back(static_cast<std::uint8_t>(i + 1));
            frame.push_back(0x08);
            frame.push_back(0x00);
        }
        const bool tcp = p.protocol == flow::Protocol::tcp;
        const std::uint32_t l4 = tcp ? 20 : 8;
        if (p.total_length < 20 + l4) throw DataError("pcap writer: total_length smaller than headers");
        // IPv4 header
        frame.push_back(0x45);
        frame.push_back(0);
        be16(frame, static_cast<std::uint16_t>(p.total_length));
        be16(frame, 0);       // id
        be16(frame, 0x4000);  // DF
        frame.push_back(64);
        frame.push_back(static_cast<std::uint8_t>(p.protocol));
        be16(frame, 0);  // checksum (unchecked)
        be32(frame, p.src_ip);
        be32(frame, p.dst_ip);
        be16(frame, p.src_port);
        be16(frame, p.dst_port);
        if (tcp) {
            be32(frame, 0);
            be32(frame, 0);
            frame.push_back(0x50);
            frame.push_back(0x18);
            be16(frame, 65535);
            be16(frame, 0);
            be16(frame, 0);
        } else {
            be16(frame, static_cast<std::uint16_t>(8 + p.payload_length));
            be16(frame, 0);
        }
        frame.resize(frame.size() + (p.total_length - 20 - l4), 0xab);
        if (frame.size() > captured_limit) frame.resize(captured_limit);

        const double whole = std::floor(p.timestamp);
        const double frac_scale = opts_.nanosecond ? 1e9 : 1e6;
        put32(static_cast<std::uint32_t>(whole));
        put32(static_cast<std::uint32_t>(std::llround((p.timestamp - whole) * frac_scale)));
        put32(static_cast<std::uint32_t>(frame.size()));
        put32(static_cast<std::uint32_t>(frame.size() + 0));
        bytes_.insert(bytes_.end(), frame.begin(), frame.end());
    }

    /// Appends a non-IPv4 Ethernet frame (ARP), which the parser must skip.
    void add_arp(double ts) {
        std::vector<std::uint8_t> frame(14 + 28, 0);
        frame[12] = 0x08;
        frame[13] = 0x06;
        put32(static_cast<std::uint32_t>(ts));
        put32(0);
        put32(static_cast<std::uint32_t>(frame.size()));
        put32(static_cast<std::uint32_t>(frame.size()));
        bytes_.insert(bytes_.end(), frame.begin(), frame.end());
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write '" + path + "'");
        out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
    }

private:
    static void be16(std::vector<std::uint8_t>& v, std::uint16_t x) {
        v.push_back(static_cast<std::uint8_t>(x >> 8));
        v.push_back(static_cast<std::uint8_t>(x));
    }
    static void be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
        for (int s = 24; s >= 0; s -= 8) v.push_back(static_cast<std::uint8_t>(x >> s));
    }
    // File-header and record-header fields use the file's byte order.
    void put32(std::uint32_t x) {
        if (opts_.byte_swapped)
            for (int s = 24; s >= 0; s -= 8) bytes_.push_back(static_cast<std::uint8_t>(x >> s));
        else
            for (int s = 0; s <= 24; s += 8) bytes_.push_back(static_cast<std::uint8_t>(x >> s));
    }
    void put16(std::uint16_t x) {
        if (opts_.byte_swapped) {
            bytes_.push_back(static_cast<std::uint8_t>(x >> 8));
            bytes_.push_back(static_cast<std::uint8_t>(x));
        } else {
            bytes_.push_back(static_cast<std::uint8_t>(x));
            bytes_.push_back(static_cast<std::uint8_t>(x >> 8));
        }
    }

    PcapWriteOptions opts_;
    std::vector<std::uint8_t> bytes_;
};

}  // namespace ssltraffic::synth
