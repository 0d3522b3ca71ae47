#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqsec/csv.hpp"

namespace mqsec {

// Link and processing assumptions for the edge<->fog transfer channel.
// Defaults reproduce the shipped parameter file exactly.
struct LatencyParams {
    double distance_m = 100.0;
    double propagation_speed = 2e8;      // m/s
    double pprc = 10000.0;               // client packet processing rate, packets/s
    double pprs = 50000.0;               // server packet processing rate, packets/s
    double sifs_s = 20e-6;
    double difs_s = 300e-6;
    double data_rate = 54e6;             // bit/s (802.11a)
    double control_rate = 1e6;           // bit/s, wireless control frames
    double swc_bytes = 74.0;             // RTS/CTS/ACK/FIN size
    double tcp_header = 20.0;
    double ip_header = 20.0;
    double wireless_header = 34.0;
    double sctcp_bytes = 74.0;           // TCP control signal size (REQ/ACK/GET/FIN)
    double mplw_bytes = 2346.0;          // max wireless packet length
    uint32_t tcp_control_signals = 4;    // REQ, ACK, GET, FIN

    double payload_per_packet() const {
        return mplw_bytes - wireless_header - ip_header - tcp_header;
    }
    void validate() const {
        for (double v : {distance_m, propagation_speed, pprc, pprs, sifs_s, difs_s,
                         data_rate, control_rate, swc_bytes, tcp_header, ip_header,
                         wireless_header, sctcp_bytes, mplw_bytes})
            if (!(v > 0)) throw std::runtime_error("latency parameters must be positive");
        if (payload_per_packet() <= 0)
            throw std::runtime_error("MPLW must exceed WH + IPH + TCPH");
    }
};

// TLS 1.2 handshake size assumptions (RSA key exchange, AES-128-CBC,
// HMAC-SHA1 suite).
struct TlsParams {
    double client_hello = 170.0;
    double server_hello = 75.0;
    double per_certificate = 1500.0;
    uint32_t chain_length = 4;
    double client_key_exchange = 130.0;
    double finished = 12.0;
    double handshake_header = 4.0;  // per handshake message
    double record_header = 5.0;     // per record sent
    uint32_t message_count = 10;    // processed handshake flight
};

struct LatencyBreakdown {
    uint64_t n_data_packets = 0;
    double node_delay_s = 0.0;
    double network_delay_s = 0.0;
    double total_s = 0.0;
    std::vector<std::string> trace;
};

// Packets needed to carry file_size bytes given the per-packet payload.
inline uint64_t num_packets(uint64_t file_size, const LatencyParams& p) {
    if (file_size == 0) throw std::runtime_error("file size must be positive");
    double payload = p.payload_per_packet();
    return static_cast<uint64_t>(
        std::ceil(static_cast<double>(file_size) / payload));
}

// (n_data + n_ctrl) * (1/PPRC + 1/PPRS)
inline double node_delay(uint64_t n_data, uint64_t n_ctrl, const LatencyParams& p) {
    return static_cast<double>(n_data + n_ctrl) * (1.0 / p.pprc + 1.0 / p.pprs);
}

// Transmission plus propagation for one frame.
inline double packet_delay(double length_bytes, double rate_bps, const LatencyParams& p) {
    if (length_bytes <= 0) throw std::runtime_error("packet length must be positive");
    return length_bytes * 8.0 / rate_bps + p.distance_m / p.propagation_speed;
}

// One medium acquisition + data frame + ack: DIFS, RTS, SIFS, CTS, SIFS,
// DATA, SIFS, ACK. Control frames ride the 1 Mbit/s control rate, the
// data frame rides DR.
inline double data_exchange_delay(double data_frame_bytes, const LatencyParams& p) {
    double ctrl = packet_delay(p.swc_bytes, p.control_rate, p);
    double data = packet_delay(data_frame_bytes, p.data_rate, p);
    return p.difs_s + ctrl + p.sifs_s + ctrl + p.sifs_s + data + p.sifs_s + ctrl;
}

// Wireless cost of the data packets alone (each a full four-frame
// exchange at max packet length).
inline double network_delay(uint64_t n_data, const LatencyParams& p) {
    return static_cast<double>(n_data) * data_exchange_delay(p.mplw_bytes, p);
}

// TCP control signals are handled like data packets (four-frame exchange
// carrying SCTCP bytes at DR, closed by a wireless ACK).
inline double tcp_control_delay(const LatencyParams& p) {
    return static_cast<double>(p.tcp_control_signals) *
           data_exchange_delay(p.sctcp_bytes, p);
}

inline LatencyBreakdown tcp_latency(uint64_t file_size, const LatencyParams& p) {
    p.validate();
    LatencyBreakdown b;
    b.n_data_packets = num_packets(file_size, p);
    b.node_delay_s = node_delay(b.n_data_packets, p.tcp_control_signals, p);
    double data_part = network_delay(b.n_data_packets, p);
    double ctrl_part = tcp_control_delay(p);
    b.network_delay_s = data_part + ctrl_part;
    b.total_s = b.node_delay_s + b.network_delay_s;

    auto line = [&](const std::string& k, double v, const std::string& unit) {
        std::ostringstream os;
        os << k << " = " << v << " " << unit;
        b.trace.push_back(os.str());
    };
    std::ostringstream head;
    head << "file_size = " << file_size << " bytes";
    b.trace.push_back(head.str());
    line("payload_per_packet", p.payload_per_packet(), "bytes");
    std::ostringstream np;
    np << "n_data_packets = " << b.n_data_packets;
    b.trace.push_back(np.str());
    line("per_packet_node_factor", 1.0 / p.pprc + 1.0 / p.pprs, "s");
    line("node_delay", b.node_delay_s, "s");
    line("data_exchange_each", data_exchange_delay(p.mplw_bytes, p), "s");
    line("network_delay_data", data_part, "s");
    line("network_delay_tcp_ctrl", ctrl_part, "s");
    line("network_delay", b.network_delay_s, "s");
    line("total", b.total_s, "s");
    return b;
}

// Handshake overhead for one fresh TLS session: all handshake bytes on
// the wire plus per-message processing and one round trip of propagation.
inline double tls_overhead(const TlsParams& t, const LatencyParams& p) {
    double handshake_bytes = t.client_hello + t.server_hello +
                             t.per_certificate * static_cast<double>(t.chain_length) +
                             t.client_key_exchange + 2.0 * t.finished;
    // ServerHelloDone carries only its header; ChangeCipherSpec is one
    // byte each way and is not a handshake message.
    double headers = t.handshake_header * 7.0;  // CH,SH,Cert,SHD,CKE,Fin,Fin
    double ccs_bytes = 2.0;
    double records = t.record_header * static_cast<double>(t.message_count);
    double wire_bytes = handshake_bytes + headers + ccs_bytes + records;
    double transmission = wire_bytes * 8.0 / p.data_rate;
    double processing =
        static_cast<double>(t.message_count) * (1.0 / p.pprc + 1.0 / p.pprs);
    double propagation = 2.0 * p.distance_m / p.propagation_speed;
    return transmission + processing + propagation;
}

struct CurvePoint {
    uint64_t file_size = 0;
    double tcp_latency_s = 0.0;
    double tls_latency_s = 0.0;
};

// Latency across file sizes; the TLS column adds the size-independent
// session overhead.
inline std::vector<CurvePoint> latency_curve(const std::vector<uint64_t>& sizes,
                                             const LatencyParams& p, const TlsParams& t) {
    if (sizes.empty()) throw std::runtime_error("no file sizes given");
    double tls = tls_overhead(t, p);
    std::vector<CurvePoint> out;
    for (uint64_t s : sizes) {
        auto b = tcp_latency(s, p);
        out.push_back({s, b.total_s, b.total_s + tls});
    }
    return out;
}

inline std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
    std::ostringstream os;
    os.precision(17);  // round-trippable doubles
    os << "file_size_bytes,tcp_latency_s,tcp_tls_latency_s\n";
    for (const auto& c : curve)
        os << c.file_size << ',' << c.tcp_latency_s << ',' << c.tls_latency_s << "\n";
    return os.str();
}

// Parameter file: `key = value` lines mirroring the table names; unknown
// keys are collected and reported together.
inline void load_latency_params(const std::string& text, LatencyParams& p, TlsParams& t) {
    std::istringstream is(text);
    std::string line;
    std::vector<std::string> unknown;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        double v = 0;
        try {
            v = std::stod(val);
        } catch (...) {
            throw std::runtime_error("line " + std::to_string(lineno) +
                                     ": bad numeric value for " + key);
        }
        if (key == "distance_m") p.distance_m = v;
        else if (key == "propagation_speed") p.propagation_speed = v;
        else if (key == "pprc") p.pprc = v;
        else if (key == "pprs") p.pprs = v;
        else if (key == "sifs_us") p.sifs_s = v * 1e-6;
        else if (key == "difs_us") p.difs_s = v * 1e-6;
        else if (key == "data_rate_mbps") p.data_rate = v * 1e6;
        else if (key == "control_rate_mbps") p.control_rate = v * 1e6;
        else if (key == "swc_bytes") p.swc_bytes = v;
        else if (key == "tcp_header_bytes") p.tcp_header = v;
        else if (key == "ip_header_bytes") p.ip_header = v;
        else if (key == "wireless_header_bytes") p.wireless_header = v;
        else if (key == "sctcp_bytes") p.sctcp_bytes = v;
        else if (key == "mplw_bytes") p.mplw_bytes = v;
        else if (key == "tcp_control_signals") p.tcp_control_signals = static_cast<uint32_t>(v);
        else if (key == "tls_client_hello") t.client_hello = v;
        else if (key == "tls_server_hello") t.server_hello = v;
        else if (key == "tls_per_certificate") t.per_certificate = v;
        else if (key == "tls_chain_length") t.chain_length = static_cast<uint32_t>(v);
        else if (key == "tls_client_key_exchange") t.client_key_exchange = v;
        else if (key == "tls_finished") t.finished = v;
        else if (key == "tls_handshake_header") t.handshake_header = v;
        else if (key == "tls_record_header") t.record_header = v;
        else if (key == "tls_message_count") t.message_count = static_cast<uint32_t>(v);
        else unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown latency parameters:";
        for (const auto& k : unknown) msg += " " + k;
        throw std::runtime_error(msg);
    }
}

// Sizes like 497KB (binary kilobytes), 2MB, or plain bytes.
inline uint64_t parse_file_size(const std::string& s) {
    size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (...) {
        throw std::runtime_error("bad file size: " + s);
    }
    std::string suffix = s.substr(pos);
    if (suffix.empty() || suffix == "B") return v;
    if (suffix == "KB" || suffix == "kb" || suffix == "K") return v * 1024ULL;
    if (suffix == "MB" || suffix == "mb" || suffix == "M") return v * 1024ULL * 1024ULL;
    throw std::runtime_error("bad file size suffix: " + s);
}

}  // namespace mqsec
