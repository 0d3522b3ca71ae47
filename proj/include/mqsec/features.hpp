#pragma once

#include <cstdio>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqsec/dataset.hpp"
#include "mqsec/mqtt.hpp"
#include "mqsec/schema.hpp"

namespace mqsec {

// Per-connection parser context: inter-arrival clock, protocol version
// seen, and the auth-attempt counter that makes brute force visible.
struct ConnState {
    bool have_last_ts = false;
    double last_ts = 0.0;
    uint8_t protocol_version = 0;
    uint32_t auth_attempts = 0;
};

// Transport-side context the proxy synthesizes per packet: connection
// open/close/reset events stand in for capture-derived TCP flags.
struct TransportInfo {
    bool first_on_connection = false;
    bool close_event = false;
    bool reset_event = false;
    size_t wire_len = 0;  // frame bytes on the wire
};

// The 33-slot per-packet feature record. Numeric fields hold doubles,
// text fields hold strings; absent fields keep 0 / "" respectively.
struct PacketFeatures {
    std::string tcp_flags;
    double tcp_time_delta = 0.0;
    double tcp_len = 0.0;
    std::string conack_flags;
    double conack_flags_reserved = 0.0;
    double conack_flags_sp = 0.0;
    double conack_val = 0.0;
    double conflag_cleansess = 0.0;
    double conflag_passwd = 0.0;
    double conflag_qos = 0.0;
    double conflag_reserved = 0.0;
    double conflag_retain = 0.0;
    double conflag_uname = 0.0;
    double conflag_willflag = 0.0;
    std::string conflags;
    double dupflag = 0.0;
    std::string hdrflags;
    double kalive = 0.0;
    double len = 0.0;
    std::string msg;
    double msgid = 0.0;
    double msgtype = 0.0;
    double proto_len = 0.0;
    std::string protoname;
    double qos = 0.0;
    double retain = 0.0;
    double sub_qos = 0.0;
    double suback_qos = 0.0;
    double ver = 0.0;
    std::string willmsg;
    double willmsg_len = 0.0;
    std::string willtopic;
    double willtopic_len = 0.0;

    // Out-of-band of the 33 model inputs.
    bool is_malformed = false;
    std::string malformed_reason;

    // Cells in canonical schema order; numerics rendered compactly.
    std::vector<std::string> to_row() const;
};

namespace detail {

inline std::string fmt_num(double v) {
    if (v == static_cast<double>(static_cast<long long>(v)) && std::abs(v) < 1e15) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
        return buf;
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline std::string fmt_hex_flags(uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", v);
    return buf;
}

inline std::string payload_hex(const Bytes& payload, size_t cap = 64) {
    return to_hex(payload.data(), std::min(payload.size(), cap));
}

}  // namespace detail

inline std::vector<std::string> PacketFeatures::to_row() const {
    std::vector<std::string> row;
    row.reserve(kNumFeatures);
    row.push_back(tcp_flags);
    row.push_back(detail::fmt_num(tcp_time_delta));
    row.push_back(detail::fmt_num(tcp_len));
    row.push_back(conack_flags);
    row.push_back(detail::fmt_num(conack_flags_reserved));
    row.push_back(detail::fmt_num(conack_flags_sp));
    row.push_back(detail::fmt_num(conack_val));
    row.push_back(detail::fmt_num(conflag_cleansess));
    row.push_back(detail::fmt_num(conflag_passwd));
    row.push_back(detail::fmt_num(conflag_qos));
    row.push_back(detail::fmt_num(conflag_reserved));
    row.push_back(detail::fmt_num(conflag_retain));
    row.push_back(detail::fmt_num(conflag_uname));
    row.push_back(detail::fmt_num(conflag_willflag));
    row.push_back(conflags);
    row.push_back(detail::fmt_num(dupflag));
    row.push_back(hdrflags);
    row.push_back(detail::fmt_num(kalive));
    row.push_back(detail::fmt_num(len));
    row.push_back(msg);
    row.push_back(detail::fmt_num(msgid));
    row.push_back(detail::fmt_num(msgtype));
    row.push_back(detail::fmt_num(proto_len));
    row.push_back(protoname);
    row.push_back(detail::fmt_num(qos));
    row.push_back(detail::fmt_num(retain));
    row.push_back(detail::fmt_num(sub_qos));
    row.push_back(detail::fmt_num(suback_qos));
    row.push_back(detail::fmt_num(ver));
    row.push_back(willmsg);
    row.push_back(detail::fmt_num(willmsg_len));
    row.push_back(willtopic);
    row.push_back(detail::fmt_num(willtopic_len));
    return row;
}

// Fill all 33 slots from a parse outcome. tcp.time_delta is the arrival
// gap within the connection (0 for the first packet); conn_state is
// updated in place.
inline PacketFeatures extract_features(const ParseResult& parsed, ConnState& state,
                                       double arrival_time,
                                       const TransportInfo& transport = {}) {
    PacketFeatures f;

    // Transport slots first: they apply to malformed frames too.
    uint32_t tcp_flag_bits = 0x18;  // PSH|ACK carries MQTT data
    if (transport.first_on_connection) tcp_flag_bits = 0x02;
    if (transport.close_event) tcp_flag_bits = 0x11;
    if (transport.reset_event) tcp_flag_bits = 0x14;
    f.tcp_flags = detail::fmt_hex_flags(tcp_flag_bits);
    if (state.have_last_ts) {
        double delta = arrival_time - state.last_ts;
        f.tcp_time_delta = delta > 0 ? delta : 0.0;
    }
    state.have_last_ts = true;
    state.last_ts = arrival_time;
    f.tcp_len = static_cast<double>(transport.wire_len);

    const MqttPacket* p = nullptr;
    if (parsed.packet) {
        p = &*parsed.packet;
    } else if (parsed.malformed) {
        f.is_malformed = true;
        f.malformed_reason = malformed_reason_name(parsed.malformed->reason);
        f.hdrflags = detail::fmt_hex_flags(parsed.malformed->raw_first_byte);
        f.msgtype = static_cast<double>(parsed.malformed->raw_type_nibble);
        f.len = static_cast<double>(parsed.malformed->remaining_length);
        p = &parsed.malformed->partial;
    } else {
        return f;  // need-more-data never reaches extraction in practice
    }

    if (!f.is_malformed) {
        uint8_t first = static_cast<uint8_t>((static_cast<uint8_t>(p->type) << 4) |
                                             (p->type == MsgType::Publish
                                                  ? ((p->dup ? 8 : 0) | (p->qos << 1) |
                                                     (p->retain ? 1 : 0))
                                                  : p->header_flags));
        f.hdrflags = detail::fmt_hex_flags(first);
        f.msgtype = static_cast<double>(static_cast<uint8_t>(p->type));
        f.len = static_cast<double>(p->remaining_length);
    }

    switch (p->type) {
        case MsgType::Connect: {
            f.conflag_cleansess = p->clean_session() ? 1 : 0;
            f.conflag_passwd = p->has_password() ? 1 : 0;
            f.conflag_qos = p->will_qos();
            f.conflag_reserved = p->reserved_connect_bit() ? 1 : 0;
            f.conflag_retain = p->will_retain() ? 1 : 0;
            f.conflag_uname = p->has_username() ? 1 : 0;
            f.conflag_willflag = p->will_flag() ? 1 : 0;
            f.conflags = detail::fmt_hex_flags(p->connect_flags);
            f.kalive = p->keepalive;
            f.proto_len = static_cast<double>(p->protocol_name.size());
            f.protoname = p->protocol_name;
            f.ver = p->protocol_level;
            if (p->will_flag()) {
                f.willmsg = detail::payload_hex(p->will_message);
                f.willmsg_len = static_cast<double>(p->will_message.size());
                f.willtopic = p->will_topic;
                f.willtopic_len = static_cast<double>(p->will_topic.size());
            }
            state.protocol_version = p->protocol_level;
            if (p->has_username() || p->has_password()) state.auth_attempts++;
            break;
        }
        case MsgType::Connack: {
            f.conack_flags = detail::fmt_hex_flags(p->conack_flags);
            f.conack_flags_sp = (p->conack_flags & 0x01) ? 1 : 0;
            f.conack_flags_reserved = static_cast<double>(p->conack_flags >> 1);
            f.conack_val = p->conack_return_code;
            break;
        }
        case MsgType::Publish: {
            f.dupflag = p->dup ? 1 : 0;
            f.qos = p->qos;
            f.retain = p->retain ? 1 : 0;
            f.msg = detail::payload_hex(p->payload);
            f.msgid = p->message_id;
            break;
        }
        case MsgType::Subscribe: {
            f.msgid = p->message_id;
            if (!p->subscriptions.empty())
                f.sub_qos = static_cast<double>(p->subscriptions.front().second);
            break;
        }
        case MsgType::Suback: {
            f.msgid = p->message_id;
            if (!p->granted_qos.empty())
                f.suback_qos = static_cast<double>(p->granted_qos.front());
            break;
        }
        case MsgType::Puback:
        case MsgType::Pubrec:
        case MsgType::Pubrel:
        case MsgType::Pubcomp:
        case MsgType::Unsuback:
            f.msgid = p->message_id;
            break;
        case MsgType::Unsubscribe:
            f.msgid = p->message_id;
            break;
        default:
            break;
    }
    return f;
}

// Classifier input from a live feature record: encode the full 33-column
// row with the fitted encoders, then keep the model's selected columns.
// Pure function of (encoders, selection, features).
inline std::vector<double> preprocess(const PacketFeatures& features,
                                      const Encoders& encoders,
                                      const std::vector<size_t>& selected) {
    if (encoders.schema.size() != static_cast<size_t>(kNumFeatures))
        throw std::runtime_error("encoder schema does not cover the 33-column universe");
    auto row = features.to_row();
    std::vector<double> out;
    out.reserve(selected.size());
    for (size_t col : selected) out.push_back(encoders.encode_cell(col, row[col]));
    return out;
}

}  // namespace mqsec
