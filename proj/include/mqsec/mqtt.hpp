#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mqsec/bytes.hpp"

namespace mqsec {

// MQTT v3.1.1 control packet types.
enum class MsgType : uint8_t {
    Connect = 1,
    Connack = 2,
    Publish = 3,
    Puback = 4,
    Pubrec = 5,
    Pubrel = 6,
    Pubcomp = 7,
    Subscribe = 8,
    Suback = 9,
    Unsubscribe = 10,
    Unsuback = 11,
    Pingreq = 12,
    Pingresp = 13,
    Disconnect = 14,
};

struct MqttPacket {
    MsgType type = MsgType::Pingreq;
    uint8_t header_flags = 0;  // low nibble of byte 0
    bool dup = false;
    uint8_t qos = 0;
    bool retain = false;
    uint32_t remaining_length = 0;

    // CONNECT
    std::string protocol_name;
    uint8_t protocol_level = 0;
    uint8_t connect_flags = 0;
    uint16_t keepalive = 0;
    std::string client_id;
    std::string will_topic;
    Bytes will_message;
    std::string username;
    Bytes password;

    // CONNACK
    uint8_t conack_flags = 0;
    uint8_t conack_return_code = 0;

    // PUBLISH
    std::string topic;
    Bytes payload;

    // Packet identifier (PUBLISH qos>0, PUBACK.., SUBSCRIBE..)
    uint16_t message_id = 0;

    // SUBSCRIBE / SUBACK
    std::vector<std::pair<std::string, uint8_t>> subscriptions;  // topic, requested qos
    std::vector<uint8_t> granted_qos;

    // Connect flag accessors (v3.1.1 bit layout).
    bool clean_session() const { return connect_flags & 0x02; }
    bool will_flag() const { return connect_flags & 0x04; }
    uint8_t will_qos() const { return (connect_flags >> 3) & 0x03; }
    bool will_retain() const { return connect_flags & 0x20; }
    bool has_password() const { return connect_flags & 0x40; }
    bool has_username() const { return connect_flags & 0x80; }
    bool reserved_connect_bit() const { return connect_flags & 0x01; }
};

enum class MalformedReason : uint8_t {
    InvalidMsgType,      // type 0 or 15
    BadVarint,           // remaining length continuation never ends
    InvalidQos,          // qos bits == 3
    ReservedFlags,       // fixed-header flags violate the mandated pattern
    LengthOverrun,       // a field runs past the declared remaining length
    BadUtf8,             // topic or string field is not valid UTF-8
    UnsupportedVersion,  // protocol level other than 4 (v3.1.1)
    BadConnectFlags,     // reserved connect flag bit set
    TruncatedPayload,    // declared lengths inconsistent with payload
};

inline const char* malformed_reason_name(MalformedReason r) {
    switch (r) {
        case MalformedReason::InvalidMsgType: return "invalid-msg-type";
        case MalformedReason::BadVarint: return "bad-varint";
        case MalformedReason::InvalidQos: return "invalid-qos";
        case MalformedReason::ReservedFlags: return "reserved-flags";
        case MalformedReason::LengthOverrun: return "length-overrun";
        case MalformedReason::BadUtf8: return "bad-utf8";
        case MalformedReason::UnsupportedVersion: return "unsupported-version";
        case MalformedReason::BadConnectFlags: return "bad-connect-flags";
        case MalformedReason::TruncatedPayload: return "truncated-payload";
    }
    return "unknown";
}

// Malformed frames stay first-class citizens: they carry whatever header
// fields could still be read, so feature extraction has something to work
// with, plus the resynchronization offset the caller must consume.
struct MalformedFrame {
    MalformedReason reason;
    uint8_t raw_first_byte = 0;
    uint8_t raw_type_nibble = 0;
    uint32_t remaining_length = 0;  // 0 when the varint itself was bad
    // Best-effort partial decode (e.g. CONNECT fields up to the error).
    MqttPacket partial;
};

struct ParseResult {
    // consumed == 0 means need-more-data (a continuation signal, not an error).
    size_t consumed = 0;
    std::optional<MqttPacket> packet;
    std::optional<MalformedFrame> malformed;

    bool need_more_data() const { return consumed == 0; }
};

namespace detail {

inline bool valid_utf8(const std::string& s) {
    size_t i = 0;
    while (i < s.size()) {
        uint8_t c = static_cast<uint8_t>(s[i]);
        size_t extra;
        if (c < 0x80) extra = 0;
        else if ((c & 0xE0) == 0xC0) extra = 1;
        else if ((c & 0xF0) == 0xE0) extra = 2;
        else if ((c & 0xF8) == 0xF0) extra = 3;
        else return false;
        if (extra > 0 && i + extra >= s.size()) return false;
        for (size_t k = 1; k <= extra; ++k)
            if ((static_cast<uint8_t>(s[i + k]) & 0xC0) != 0x80) return false;
        i += extra + 1;
    }
    return true;
}

// Remaining-length varint: up to 4 bytes, 7 bits each, MSB continues.
// Returns (value, bytes used); nullopt value with used>0 means invalid,
// used==0 means need more bytes.
struct VarintResult {
    std::optional<uint32_t> value;
    size_t used = 0;
};

inline VarintResult decode_varint(const uint8_t* data, size_t n) {
    uint32_t value = 0;
    uint32_t multiplier = 1;
    for (size_t i = 0; i < 4; ++i) {
        if (i >= n) return {std::nullopt, 0};  // need more data
        uint8_t b = data[i];
        value += static_cast<uint32_t>(b & 0x7F) * multiplier;
        if ((b & 0x80) == 0) return {value, i + 1};
        multiplier *= 128;
    }
    return {std::nullopt, 4};  // 4 bytes, still continuing: invalid
}

inline void encode_varint(Bytes& out, uint32_t v) {
    do {
        uint8_t b = v % 128;
        v /= 128;
        if (v > 0) b |= 0x80;
        out.push_back(b);
    } while (v > 0);
}

// Cursor over the variable header + payload region that records overrun.
class FieldReader {
public:
    FieldReader(const uint8_t* data, size_t n) : data_(data), n_(n) {}
    bool failed() const { return failed_; }
    size_t remaining() const { return n_ - pos_; }

    uint8_t u8() {
        if (pos_ + 1 > n_) return fail<uint8_t>();
        return data_[pos_++];
    }
    uint16_t u16() {
        if (pos_ + 2 > n_) return fail<uint16_t>();
        uint16_t v = static_cast<uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }
    std::string str() {
        uint16_t len = u16();
        if (failed_ || pos_ + len > n_) return fail<std::string>();
        std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
        pos_ += len;
        return s;
    }
    Bytes bytes_field() {
        uint16_t len = u16();
        if (failed_ || pos_ + len > n_) return fail<Bytes>();
        Bytes b(data_ + pos_, data_ + pos_ + len);
        pos_ += len;
        return b;
    }
    Bytes rest() {
        Bytes b(data_ + pos_, data_ + n_);
        pos_ = n_;
        return b;
    }

private:
    template <typename T>
    T fail() {
        failed_ = true;
        return T{};
    }
    const uint8_t* data_;
    size_t n_;
    size_t pos_ = 0;
    bool failed_ = false;
};

}  // namespace detail

// Parse exactly one frame from the front of the stream. Never throws on
// wire data: malformed conditions yield MalformedFrame with the number of
// bytes to skip, so the stream keeps flowing.
inline ParseResult parse_frame(const uint8_t* data, size_t n) {
    ParseResult res;
    if (n < 2) return res;  // need-more-data

    const uint8_t first = data[0];
    const uint8_t type_nibble = first >> 4;
    const uint8_t flags = first & 0x0F;

    auto varint = detail::decode_varint(data + 1, n - 1);
    if (!varint.value && varint.used == 0) return res;  // need more length bytes
    if (!varint.value) {
        // Unrecoverable varint: skip the fixed byte plus the bytes examined.
        res.consumed = 1 + varint.used;
        res.malformed = MalformedFrame{MalformedReason::BadVarint, first, type_nibble, 0, {}};
        return res;
    }
    const uint32_t remaining = *varint.value;
    const size_t header_len = 1 + varint.used;
    const size_t frame_len = header_len + remaining;
    if (n < frame_len) return res;  // need-more-data for the body

    res.consumed = frame_len;
    auto malformed = [&](MalformedReason reason, MqttPacket partial = {}) {
        MalformedFrame mf{reason, first, type_nibble, remaining, std::move(partial)};
        res.malformed = std::move(mf);
        return res;
    };

    if (type_nibble == 0 || type_nibble == 15)
        return malformed(MalformedReason::InvalidMsgType);

    MqttPacket p;
    p.type = static_cast<MsgType>(type_nibble);
    p.header_flags = flags;
    p.remaining_length = remaining;
    detail::FieldReader r(data + header_len, remaining);

    switch (p.type) {
        case MsgType::Connect: {
            p.protocol_name = r.str();
            p.protocol_level = r.u8();
            p.connect_flags = r.u8();
            p.keepalive = r.u16();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            if (flags != 0) return malformed(MalformedReason::ReservedFlags, p);
            if (p.protocol_level != 4)
                return malformed(MalformedReason::UnsupportedVersion, p);
            if (p.reserved_connect_bit())
                return malformed(MalformedReason::BadConnectFlags, p);
            if (p.will_qos() == 3) return malformed(MalformedReason::InvalidQos, p);
            p.client_id = r.str();
            if (p.will_flag()) {
                p.will_topic = r.str();
                p.will_message = r.bytes_field();
            }
            if (p.has_username()) p.username = r.str();
            if (p.has_password()) p.password = r.bytes_field();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            if (!detail::valid_utf8(p.client_id) || !detail::valid_utf8(p.will_topic) ||
                !detail::valid_utf8(p.username))
                return malformed(MalformedReason::BadUtf8, p);
            break;
        }
        case MsgType::Connack: {
            if (flags != 0) return malformed(MalformedReason::ReservedFlags, p);
            p.conack_flags = r.u8();
            p.conack_return_code = r.u8();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            break;
        }
        case MsgType::Publish: {
            p.dup = flags & 0x08;
            p.qos = (flags >> 1) & 0x03;
            p.retain = flags & 0x01;
            if (p.qos == 3) return malformed(MalformedReason::InvalidQos, p);
            p.topic = r.str();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            if (!detail::valid_utf8(p.topic)) return malformed(MalformedReason::BadUtf8, p);
            if (p.qos > 0) {
                p.message_id = r.u16();
                if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            }
            p.payload = r.rest();
            break;
        }
        case MsgType::Puback:
        case MsgType::Pubrec:
        case MsgType::Pubcomp:
        case MsgType::Unsuback: {
            if (flags != 0) return malformed(MalformedReason::ReservedFlags, p);
            p.message_id = r.u16();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            break;
        }
        case MsgType::Pubrel: {
            if (flags != 0x02) return malformed(MalformedReason::ReservedFlags, p);
            p.message_id = r.u16();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            break;
        }
        case MsgType::Subscribe: {
            if (flags != 0x02) return malformed(MalformedReason::ReservedFlags, p);
            p.message_id = r.u16();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            while (r.remaining() > 0 && !r.failed()) {
                std::string topic = r.str();
                uint8_t q = r.u8();
                if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
                if (!detail::valid_utf8(topic)) return malformed(MalformedReason::BadUtf8, p);
                if (q > 2) return malformed(MalformedReason::InvalidQos, p);
                p.subscriptions.emplace_back(std::move(topic), q);
            }
            if (p.subscriptions.empty())
                return malformed(MalformedReason::TruncatedPayload, p);
            break;
        }
        case MsgType::Suback: {
            if (flags != 0) return malformed(MalformedReason::ReservedFlags, p);
            p.message_id = r.u16();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            while (r.remaining() > 0) p.granted_qos.push_back(r.u8());
            break;
        }
        case MsgType::Unsubscribe: {
            if (flags != 0x02) return malformed(MalformedReason::ReservedFlags, p);
            p.message_id = r.u16();
            if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
            while (r.remaining() > 0 && !r.failed()) {
                std::string topic = r.str();
                if (r.failed()) return malformed(MalformedReason::LengthOverrun, p);
                if (!detail::valid_utf8(topic)) return malformed(MalformedReason::BadUtf8, p);
                p.subscriptions.emplace_back(std::move(topic), 0);
            }
            break;
        }
        case MsgType::Pingreq:
        case MsgType::Pingresp:
        case MsgType::Disconnect: {
            if (flags != 0) return malformed(MalformedReason::ReservedFlags, p);
            if (remaining != 0) return malformed(MalformedReason::TruncatedPayload, p);
            break;
        }
    }
    res.packet = std::move(p);
    return res;
}

inline ParseResult parse_frame(const Bytes& b) { return parse_frame(b.data(), b.size()); }

// Serialize a packet back to wire bytes. parse(serialize(p)) == p for
// well-formed packets; used by the traffic generators and the round-trip
// property tests.
inline Bytes serialize_frame(const MqttPacket& p) {
    Bytes body;
    switch (p.type) {
        case MsgType::Connect: {
            put_u16be(body, static_cast<uint16_t>(p.protocol_name.size()));
            body.insert(body.end(), p.protocol_name.begin(), p.protocol_name.end());
            put_u8(body, p.protocol_level);
            put_u8(body, p.connect_flags);
            put_u16be(body, p.keepalive);
            put_u16be(body, static_cast<uint16_t>(p.client_id.size()));
            body.insert(body.end(), p.client_id.begin(), p.client_id.end());
            if (p.will_flag()) {
                put_u16be(body, static_cast<uint16_t>(p.will_topic.size()));
                body.insert(body.end(), p.will_topic.begin(), p.will_topic.end());
                put_u16be(body, static_cast<uint16_t>(p.will_message.size()));
                body.insert(body.end(), p.will_message.begin(), p.will_message.end());
            }
            if (p.has_username()) {
                put_u16be(body, static_cast<uint16_t>(p.username.size()));
                body.insert(body.end(), p.username.begin(), p.username.end());
            }
            if (p.has_password()) {
                put_u16be(body, static_cast<uint16_t>(p.password.size()));
                body.insert(body.end(), p.password.begin(), p.password.end());
            }
            break;
        }
        case MsgType::Connack:
            put_u8(body, p.conack_flags);
            put_u8(body, p.conack_return_code);
            break;
        case MsgType::Publish: {
            put_u16be(body, static_cast<uint16_t>(p.topic.size()));
            body.insert(body.end(), p.topic.begin(), p.topic.end());
            if (p.qos > 0) put_u16be(body, p.message_id);
            body.insert(body.end(), p.payload.begin(), p.payload.end());
            break;
        }
        case MsgType::Puback:
        case MsgType::Pubrec:
        case MsgType::Pubrel:
        case MsgType::Pubcomp:
        case MsgType::Unsuback:
            put_u16be(body, p.message_id);
            break;
        case MsgType::Subscribe:
            put_u16be(body, p.message_id);
            for (const auto& [topic, q] : p.subscriptions) {
                put_u16be(body, static_cast<uint16_t>(topic.size()));
                body.insert(body.end(), topic.begin(), topic.end());
                put_u8(body, q);
            }
            break;
        case MsgType::Suback:
            put_u16be(body, p.message_id);
            for (uint8_t q : p.granted_qos) put_u8(body, q);
            break;
        case MsgType::Unsubscribe:
            put_u16be(body, p.message_id);
            for (const auto& [topic, q] : p.subscriptions) {
                (void)q;
                put_u16be(body, static_cast<uint16_t>(topic.size()));
                body.insert(body.end(), topic.begin(), topic.end());
            }
            break;
        case MsgType::Pingreq:
        case MsgType::Pingresp:
        case MsgType::Disconnect:
            break;
    }

    uint8_t flags = p.header_flags;
    if (p.type == MsgType::Publish)
        flags = static_cast<uint8_t>((p.dup ? 0x08 : 0) | (p.qos << 1) | (p.retain ? 1 : 0));
    else if (p.type == MsgType::Subscribe || p.type == MsgType::Unsubscribe ||
             p.type == MsgType::Pubrel)
        flags = 0x02;

    Bytes out;
    put_u8(out, static_cast<uint8_t>((static_cast<uint8_t>(p.type) << 4) | flags));
    detail::encode_varint(out, static_cast<uint32_t>(body.size()));
    out.insert(out.end(), body.begin(), body.end());
    return out;
}

// Convenience builders used by generators and tests.
inline MqttPacket make_connect(const std::string& client_id, uint16_t keepalive,
                               bool clean_session, const std::string& username = "",
                               const std::string& password = "") {
    MqttPacket p;
    p.type = MsgType::Connect;
    p.protocol_name = "MQTT";
    p.protocol_level = 4;
    p.client_id = client_id;
    p.keepalive = keepalive;
    uint8_t flags = 0;
    if (clean_session) flags |= 0x02;
    if (!username.empty()) flags |= 0x80;
    if (!password.empty()) flags |= 0x40;
    p.connect_flags = flags;
    p.username = username;
    p.password.assign(password.begin(), password.end());
    return p;
}

inline MqttPacket make_publish(const std::string& topic, const std::string& payload,
                               uint8_t qos = 0, uint16_t message_id = 0,
                               bool retain = false, bool dup = false) {
    MqttPacket p;
    p.type = MsgType::Publish;
    p.topic = topic;
    p.payload.assign(payload.begin(), payload.end());
    p.qos = qos;
    p.message_id = message_id;
    p.retain = retain;
    p.dup = dup;
    return p;
}

inline MqttPacket make_subscribe(uint16_t message_id, const std::string& topic,
                                 uint8_t qos) {
    MqttPacket p;
    p.type = MsgType::Subscribe;
    p.message_id = message_id;
    p.subscriptions.emplace_back(topic, qos);
    return p;
}

inline MqttPacket make_simple(MsgType type) {
    MqttPacket p;
    p.type = type;
    return p;
}

}  // namespace mqsec
