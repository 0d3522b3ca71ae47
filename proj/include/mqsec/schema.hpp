#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace mqsec {

// The six traffic classes, in canonical index order.
enum class ClassLabel : uint8_t {
    Legitimate = 0,
    Malformed = 1,
    DoS = 2,
    BruteForce = 3,
    SlowITe = 4,
    Flood = 5,
};

inline constexpr int kNumClasses = 6;

inline const char* class_name(ClassLabel c) {
    switch (c) {
        case ClassLabel::Legitimate: return "legitimate";
        case ClassLabel::Malformed: return "malformed";
        case ClassLabel::DoS: return "dos";
        case ClassLabel::BruteForce: return "bruteforce";
        case ClassLabel::SlowITe: return "slowite";
        case ClassLabel::Flood: return "flood";
    }
    throw std::logic_error("bad ClassLabel");
}

inline std::optional<ClassLabel> class_from_string(const std::string& s) {
    for (int i = 0; i < kNumClasses; ++i) {
        auto c = static_cast<ClassLabel>(i);
        if (s == class_name(c)) return c;
    }
    return std::nullopt;
}

// The 33-column per-packet feature schema (transport + MQTT header fields),
// in canonical CSV order. The target column is appended separately.
inline constexpr std::array<const char*, 33> kFeatureColumns = {
    "tcp.flags",
    "tcp.time_delta",
    "tcp.len",
    "mqtt.conack.flags",
    "mqtt.conack.flags.reserved",
    "mqtt.conack.flags.sp",
    "mqtt.conack.val",
    "mqtt.conflag.cleansess",
    "mqtt.conflag.passwd",
    "mqtt.conflag.qos",
    "mqtt.conflag.reserved",
    "mqtt.conflag.retain",
    "mqtt.conflag.uname",
    "mqtt.conflag.willflag",
    "mqtt.conflags",
    "mqtt.dupflag",
    "mqtt.hdrflags",
    "mqtt.kalive",
    "mqtt.len",
    "mqtt.msg",
    "mqtt.msgid",
    "mqtt.msgtype",
    "mqtt.proto_len",
    "mqtt.protoname",
    "mqtt.qos",
    "mqtt.retain",
    "mqtt.sub.qos",
    "mqtt.suback.qos",
    "mqtt.ver",
    "mqtt.willmsg",
    "mqtt.willmsg_len",
    "mqtt.willtopic",
    "mqtt.willtopic_len",
};

inline constexpr int kNumFeatures = 33;
inline constexpr const char* kTargetColumn = "target";
inline constexpr const char* kDispositionColumn = "disposition";

// Columns holding free text / flag strings; everything else parses numerically.
inline bool is_categorical_column(const std::string& name) {
    return name == "tcp.flags" || name == "mqtt.conack.flags" ||
           name == "mqtt.conflags" || name == "mqtt.hdrflags" ||
           name == "mqtt.msg" || name == "mqtt.protoname" ||
           name == "mqtt.willmsg" || name == "mqtt.willtopic";
}

}  // namespace mqsec
