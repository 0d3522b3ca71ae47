#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqsec/bytes.hpp"
#include "mqsec/crypto.hpp"

namespace mqsec {

inline constexpr uint8_t kProtocolVersion = 1;

enum class MsgKind : uint8_t {
    Hello = 1,
    Challenge = 2,
    Proof = 3,
    DataPush = 4,
    ModelPush = 5,
    Chunk = 6,
    Ack = 7,
    Reject = 8,
    Fin = 9,
};

enum class RejectCode : uint8_t {
    Replay = 1,
    Tamper = 2,
    Corrupt = 3,
    SchemaMismatch = 4,
    UnknownEdge = 5,
    BadProof = 6,
    ClockSkew = 7,
    ProtocolError = 8,
    Timeout = 9,
};

inline const char* reject_code_name(RejectCode c) {
    switch (c) {
        case RejectCode::Replay: return "REPLAY";
        case RejectCode::Tamper: return "TAMPER";
        case RejectCode::Corrupt: return "CORRUPT";
        case RejectCode::SchemaMismatch: return "SCHEMA-MISMATCH";
        case RejectCode::UnknownEdge: return "UNKNOWN-EDGE";
        case RejectCode::BadProof: return "BAD-PROOF";
        case RejectCode::ClockSkew: return "CLOCK-SKEW";
        case RejectCode::ProtocolError: return "PROTOCOL-ERROR";
        case RejectCode::Timeout: return "TIMEOUT";
    }
    return "UNKNOWN";
}

using EdgeId = std::array<uint8_t, 16>;
using UserId = std::array<uint8_t, 16>;

enum class TagKind : uint8_t { Data = 1, Model = 2 };

// Freshness tag carried by every transfer: identifies the edge, the
// provisioned user, creation time, and a per-(edge, kind) monotone
// counter that defeats replay.
struct VersionTag {
    TagKind kind = TagKind::Data;
    EdgeId edge_id{};
    UserId user_id{};
    uint64_t created_at = 0;  // epoch seconds, UTC
    uint64_t counter = 0;
};

inline constexpr size_t kTagWireSize = 1 + 16 + 16 + 8 + 8;

inline void put_tag(Bytes& out, const VersionTag& t) {
    put_u8(out, static_cast<uint8_t>(t.kind));
    out.insert(out.end(), t.edge_id.begin(), t.edge_id.end());
    out.insert(out.end(), t.user_id.begin(), t.user_id.end());
    put_u64be(out, t.created_at);
    put_u64be(out, t.counter);
}

inline VersionTag read_tag(ByteReader& r) {
    VersionTag t;
    uint8_t kind = r.u8();
    if (kind != 1 && kind != 2) throw std::runtime_error("bad tag kind");
    t.kind = static_cast<TagKind>(kind);
    r.copy_to(t.edge_id.data(), 16);
    r.copy_to(t.user_id.data(), 16);
    t.created_at = r.u64be();
    t.counter = r.u64be();
    return t;
}

// Session keys derived from the pre-shared secret and both handshake
// nonces: two counter-labeled HMAC-SHA1 rounds give 40 bytes; the cipher
// key is bytes [0,16), the MAC key bytes [16,36).
struct SessionKeys {
    std::array<uint8_t, kAesKeyLen> enc{};
    std::array<uint8_t, kMacKeyLen> mac{};
};

inline SessionKeys derive_session_keys(const Bytes& secret, const Bytes& nonce_a,
                                       const Bytes& nonce_b) {
    Bytes seed;
    seed.insert(seed.end(), nonce_a.begin(), nonce_a.end());
    seed.insert(seed.end(), nonce_b.begin(), nonce_b.end());
    Bytes round1 = seed, round2 = seed;
    round1.push_back(1);
    round2.push_back(2);
    auto b1 = hmac_sha1(secret.data(), secret.size(), round1.data(), round1.size());
    auto b2 = hmac_sha1(secret.data(), secret.size(), round2.data(), round2.size());
    Bytes stream(b1.begin(), b1.end());
    stream.insert(stream.end(), b2.begin(), b2.end());
    SessionKeys k;
    std::copy(stream.begin(), stream.begin() + kAesKeyLen, k.enc.begin());
    std::copy(stream.begin() + kAesKeyLen, stream.begin() + kAesKeyLen + kMacKeyLen,
              k.mac.begin());
    return k;
}

// Handshake proofs: each side HMACs a role label plus both nonces.
inline MacTag handshake_proof(const Bytes& secret, char role, const Bytes& nonce_a,
                              const Bytes& nonce_b) {
    Bytes data;
    data.push_back(static_cast<uint8_t>(role));
    data.insert(data.end(), nonce_a.begin(), nonce_a.end());
    data.insert(data.end(), nonce_b.begin(), nonce_b.end());
    return hmac_sha1(secret.data(), secret.size(), data.data(), data.size());
}

// ---------------------------------------------------------------------------
// Post-handshake message framing: AES-128-CBC with a fresh random IV per
// message, HMAC-SHA1 over header || IV || ciphertext (encrypt-then-MAC;
// the tag is verified before any decryption output is used).
// Envelope layout: u8 version, u8 kind, tag (49B), u32be payload length,
// IV (16B), ciphertext, mac (20B).
// ---------------------------------------------------------------------------

struct Envelope {
    MsgKind kind = MsgKind::Fin;
    VersionTag tag;
    Bytes payload;  // plaintext after open / before seal
};

inline Bytes seal_envelope(const SessionKeys& keys, const Envelope& e) {
    Bytes header;
    put_u8(header, kProtocolVersion);
    put_u8(header, static_cast<uint8_t>(e.kind));
    put_tag(header, e.tag);
    put_u32be(header, static_cast<uint32_t>(e.payload.size()));

    Bytes iv = random_bytes(kAesBlockLen);
    Bytes ciphertext = aes128_cbc_encrypt(keys.enc.data(), iv.data(), e.payload);

    Bytes mac_input = header;
    mac_input.insert(mac_input.end(), iv.begin(), iv.end());
    mac_input.insert(mac_input.end(), ciphertext.begin(), ciphertext.end());
    auto mac = hmac_sha1(keys.mac.data(), keys.mac.size(), mac_input.data(),
                         mac_input.size());

    Bytes out = std::move(mac_input);
    out.insert(out.end(), mac.begin(), mac.end());
    return out;
}

// Returns nullopt on any authentication failure (wrong MAC, truncation,
// bad version): the caller treats every such case as TAMPER.
inline std::optional<Envelope> open_envelope(const SessionKeys& keys, const Bytes& frame) {
    const size_t header_len = 2 + kTagWireSize + 4;
    if (frame.size() < header_len + kAesBlockLen + kMacLen) return std::nullopt;

    size_t mac_off = frame.size() - kMacLen;
    MacTag claimed;
    std::copy(frame.begin() + static_cast<long>(mac_off), frame.end(), claimed.begin());
    auto computed = hmac_sha1(keys.mac.data(), keys.mac.size(), frame.data(), mac_off);
    if (!mac_equal(claimed, computed)) return std::nullopt;

    try {
        ByteReader r(frame.data(), mac_off);
        uint8_t version = r.u8();
        if (version != kProtocolVersion) return std::nullopt;
        uint8_t kind = r.u8();
        if (kind < 4 || kind > 9) return std::nullopt;
        Envelope e;
        e.kind = static_cast<MsgKind>(kind);
        e.tag = read_tag(r);
        uint32_t payload_len = r.u32be();
        Bytes iv = r.raw(kAesBlockLen);
        Bytes ciphertext = r.raw(r.remaining());
        if (ciphertext.empty() || ciphertext.size() % kAesBlockLen != 0)
            return std::nullopt;
        Bytes plain = aes128_cbc_decrypt(keys.enc.data(), iv.data(), ciphertext);
        if (plain.size() != payload_len) return std::nullopt;
        e.payload = std::move(plain);
        return e;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Channel: one length-prefixed frame in, one out. Implemented over TCP
// sockets in net.hpp and in-memory for tests.
// ---------------------------------------------------------------------------

class Channel {
public:
    virtual ~Channel() = default;
    virtual void send(const Bytes& frame) = 0;
    // nullopt: peer closed or timed out.
    virtual std::optional<Bytes> recv(double timeout_s) = 0;
    virtual void close() = 0;
};

// In-memory duplex channel pair for protocol tests.
class PipeChannel : public Channel {
public:
    struct Shared {
        std::mutex mu;
        std::condition_variable cv;
        std::deque<Bytes> a_to_b, b_to_a;
        bool closed = false;
    };

    static std::pair<std::shared_ptr<PipeChannel>, std::shared_ptr<PipeChannel>> make() {
        auto shared = std::make_shared<Shared>();
        auto a = std::shared_ptr<PipeChannel>(new PipeChannel(shared, true));
        auto b = std::shared_ptr<PipeChannel>(new PipeChannel(shared, false));
        return {a, b};
    }

    void send(const Bytes& frame) override {
        std::lock_guard<std::mutex> lk(shared_->mu);
        if (shared_->closed) throw std::runtime_error("channel closed");
        (is_a_ ? shared_->a_to_b : shared_->b_to_a).push_back(frame);
        shared_->cv.notify_all();
    }

    std::optional<Bytes> recv(double timeout_s) override {
        std::unique_lock<std::mutex> lk(shared_->mu);
        auto& q = is_a_ ? shared_->b_to_a : shared_->a_to_b;
        if (!shared_->cv.wait_for(lk, std::chrono::duration<double>(timeout_s),
                                  [&] { return !q.empty() || shared_->closed; }))
            return std::nullopt;
        if (q.empty()) return std::nullopt;
        Bytes frame = std::move(q.front());
        q.pop_front();
        return frame;
    }

    void close() override {
        std::lock_guard<std::mutex> lk(shared_->mu);
        shared_->closed = true;
        shared_->cv.notify_all();
    }

private:
    PipeChannel(std::shared_ptr<Shared> shared, bool is_a)
        : shared_(std::move(shared)), is_a_(is_a) {}
    std::shared_ptr<Shared> shared_;
    bool is_a_;
};

// Wrapper that records every frame in both directions (wire captures for
// the plaintext-scan invariant) and can inject bit flips.
class TapChannel : public Channel {
public:
    explicit TapChannel(std::shared_ptr<Channel> inner) : inner_(std::move(inner)) {}

    void send(const Bytes& frame) override {
        Bytes out = frame;
        if (flip_next_) {
            size_t bit = flip_bit_ % (out.size() * 8);
            out[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
            flip_next_ = false;
        }
        {
            std::lock_guard<std::mutex> lk(mu_);
            captured_.push_back(out);
        }
        inner_->send(out);
    }

    std::optional<Bytes> recv(double timeout_s) override {
        auto f = inner_->recv(timeout_s);
        if (f) {
            std::lock_guard<std::mutex> lk(mu_);
            captured_.push_back(*f);
        }
        return f;
    }

    void close() override { inner_->close(); }

    void flip_bit_on_next_send(size_t bit) {
        flip_next_ = true;
        flip_bit_ = bit;
    }

    std::vector<Bytes> captured() const {
        std::lock_guard<std::mutex> lk(mu_);
        return captured_;
    }

private:
    std::shared_ptr<Channel> inner_;
    mutable std::mutex mu_;
    std::vector<Bytes> captured_;
    bool flip_next_ = false;
    size_t flip_bit_ = 0;
};

inline std::string edge_id_hex(const EdgeId& id) { return to_hex(id.data(), id.size()); }

inline EdgeId edge_id_from_hex(const std::string& hex) {
    auto b = from_hex(hex);
    if (b.size() != 16) throw std::runtime_error("edge id must be 16 bytes of hex");
    EdgeId id;
    std::copy(b.begin(), b.end(), id.begin());
    return id;
}

}  // namespace mqsec
