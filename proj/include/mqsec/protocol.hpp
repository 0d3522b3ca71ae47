#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "mqsec/crypto.hpp"
#include "mqsec/registry.hpp"
#include "mqsec/wire.hpp"

namespace mqsec {

inline constexpr size_t kNonceLen = 32;
inline constexpr size_t kDefaultChunkSize = 8192;
inline constexpr double kDefaultTimeoutS = 10.0;
inline constexpr uint64_t kDefaultClockSkewS = 300;

class ProtocolError : public std::runtime_error {
public:
    ProtocolError(RejectCode code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    RejectCode code() const { return code_; }

private:
    RejectCode code_;
};

struct SessionConfig {
    double timeout_s = kDefaultTimeoutS;
    uint64_t clock_skew_s = kDefaultClockSkewS;
    size_t chunk_size = kDefaultChunkSize;
};

namespace detail {

inline void send_reject(Channel& ch, RejectCode code, const std::string& why) {
    // Pre-session rejects travel in the clear: u8 kind, u8 code, reason.
    Bytes f;
    put_u8(f, static_cast<uint8_t>(MsgKind::Reject));
    put_u8(f, static_cast<uint8_t>(code));
    put_u16be(f, static_cast<uint16_t>(why.size()));
    f.insert(f.end(), why.begin(), why.end());
    ch.send(f);
}

inline void send_sealed_reject(Channel& ch, const SessionKeys& keys, RejectCode code,
                               const std::string& why, const VersionTag& tag = {}) {
    Envelope e;
    e.kind = MsgKind::Reject;
    e.tag = tag;
    put_u8(e.payload, static_cast<uint8_t>(code));
    put_u16be(e.payload, static_cast<uint16_t>(why.size()));
    e.payload.insert(e.payload.end(), why.begin(), why.end());
    ch.send(seal_envelope(keys, e));
}

struct RejectInfo {
    RejectCode code;
    std::string reason;
};

inline std::optional<RejectInfo> parse_clear_reject(const Bytes& frame) {
    if (frame.size() < 2 || frame[0] != static_cast<uint8_t>(MsgKind::Reject))
        return std::nullopt;
    RejectInfo info{static_cast<RejectCode>(frame[1]), ""};
    if (frame.size() >= 4) {
        ByteReader r(frame.data() + 2, frame.size() - 2);
        uint16_t len = r.u16be();
        if (len <= r.remaining()) {
            auto b = r.raw(len);
            info.reason.assign(b.begin(), b.end());
        }
    }
    return info;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Handshake. The initiator presents its edge id and a fresh nonce; the
// responder answers with its own nonce plus an HMAC proof over both; the
// initiator replies with its proof. Both sides then derive session keys.
// ---------------------------------------------------------------------------

struct InitiatorCredentials {
    EdgeId edge_id{};
    UserId user_id{};
    Bytes secret;  // 32-byte pre-shared
};

inline SessionKeys handshake_initiate(Channel& ch, const InitiatorCredentials& creds,
                                      const SessionConfig& cfg = {}) {
    Bytes nonce_a = random_bytes(kNonceLen);
    Bytes hello;
    put_u8(hello, static_cast<uint8_t>(MsgKind::Hello));
    put_u8(hello, kProtocolVersion);
    hello.insert(hello.end(), creds.edge_id.begin(), creds.edge_id.end());
    hello.insert(hello.end(), nonce_a.begin(), nonce_a.end());
    ch.send(hello);

    auto reply = ch.recv(cfg.timeout_s);
    if (!reply) throw ProtocolError(RejectCode::Timeout, "no challenge from responder");
    if (auto rej = detail::parse_clear_reject(*reply))
        throw ProtocolError(rej->code, "responder rejected: " + rej->reason);
    if (reply->size() != 1 + kNonceLen + kMacLen ||
        (*reply)[0] != static_cast<uint8_t>(MsgKind::Challenge))
        throw ProtocolError(RejectCode::ProtocolError, "malformed challenge");

    Bytes nonce_b(reply->begin() + 1, reply->begin() + 1 + kNonceLen);
    MacTag proof_r;
    std::copy(reply->begin() + 1 + kNonceLen, reply->end(), proof_r.begin());
    if (!mac_equal(proof_r, handshake_proof(creds.secret, 'R', nonce_a, nonce_b)))
        throw ProtocolError(RejectCode::BadProof, "responder proof invalid");

    Bytes proof;
    put_u8(proof, static_cast<uint8_t>(MsgKind::Proof));
    auto proof_i = handshake_proof(creds.secret, 'I', nonce_a, nonce_b);
    proof.insert(proof.end(), proof_i.begin(), proof_i.end());
    ch.send(proof);

    return derive_session_keys(creds.secret, nonce_a, nonce_b);
}

struct ResponderSession {
    EdgeId edge_id{};
    SessionKeys keys;
};

inline ResponderSession handshake_respond(Channel& ch, const TrustRegistry& registry,
                                          const SessionConfig& cfg = {}) {
    auto hello = ch.recv(cfg.timeout_s);
    if (!hello) throw ProtocolError(RejectCode::Timeout, "no hello");
    if (hello->size() != 2 + 16 + kNonceLen ||
        (*hello)[0] != static_cast<uint8_t>(MsgKind::Hello) ||
        (*hello)[1] != kProtocolVersion) {
        detail::send_reject(ch, RejectCode::ProtocolError, "malformed hello");
        ch.close();
        throw ProtocolError(RejectCode::ProtocolError, "malformed hello");
    }
    EdgeId edge;
    std::copy(hello->begin() + 2, hello->begin() + 18, edge.begin());
    Bytes nonce_a(hello->begin() + 18, hello->end());

    auto entry = registry.lookup(edge);
    if (!entry) {
        detail::send_reject(ch, RejectCode::UnknownEdge,
                            "unknown edge " + edge_id_hex(edge));
        ch.close();
        throw ProtocolError(RejectCode::UnknownEdge, "unknown edge id");
    }

    Bytes nonce_b = random_bytes(kNonceLen);
    Bytes challenge;
    put_u8(challenge, static_cast<uint8_t>(MsgKind::Challenge));
    challenge.insert(challenge.end(), nonce_b.begin(), nonce_b.end());
    auto proof_r = handshake_proof(entry->secret, 'R', nonce_a, nonce_b);
    challenge.insert(challenge.end(), proof_r.begin(), proof_r.end());
    ch.send(challenge);

    auto proof = ch.recv(cfg.timeout_s);
    if (!proof) throw ProtocolError(RejectCode::Timeout, "no proof");
    if (proof->size() != 1 + kMacLen ||
        (*proof)[0] != static_cast<uint8_t>(MsgKind::Proof)) {
        detail::send_reject(ch, RejectCode::ProtocolError, "malformed proof");
        ch.close();
        throw ProtocolError(RejectCode::ProtocolError, "malformed proof");
    }
    MacTag proof_i;
    std::copy(proof->begin() + 1, proof->end(), proof_i.begin());
    if (!mac_equal(proof_i, handshake_proof(entry->secret, 'I', nonce_a, nonce_b))) {
        detail::send_reject(ch, RejectCode::BadProof, "initiator proof invalid");
        ch.close();
        throw ProtocolError(RejectCode::BadProof, "initiator proof invalid");
    }

    return ResponderSession{edge, derive_session_keys(entry->secret, nonce_a, nonce_b)};
}

// ---------------------------------------------------------------------------
// Transfers. The pusher announces size/checksum/chunk count under the
// transfer tag, streams chunks, and waits for ACK (accepted counter) or
// REJECT (distinct code per failure class).
// ---------------------------------------------------------------------------

struct PushResult {
    bool accepted = false;
    uint64_t accepted_counter = 0;
    RejectCode reject_code = RejectCode::ProtocolError;
    std::string reject_reason;
};

inline PushResult push_file(Channel& ch, const SessionKeys& keys, MsgKind push_kind,
                            const VersionTag& tag, const Bytes& file,
                            const SessionConfig& cfg = {}) {
    if (push_kind != MsgKind::DataPush && push_kind != MsgKind::ModelPush)
        throw std::invalid_argument("push kind must be DataPush or ModelPush");

    const uint32_t chunk_count = static_cast<uint32_t>(
        (file.size() + cfg.chunk_size - 1) / cfg.chunk_size);

    Envelope announce;
    announce.kind = push_kind;
    announce.tag = tag;
    put_u64be(announce.payload, file.size());
    auto digest = sha256(file);
    announce.payload.insert(announce.payload.end(), digest.begin(), digest.end());
    put_u32be(announce.payload, chunk_count);
    ch.send(seal_envelope(keys, announce));

    for (uint32_t i = 0; i < chunk_count; ++i) {
        Envelope chunk;
        chunk.kind = MsgKind::Chunk;
        chunk.tag = tag;
        put_u32be(chunk.payload, i);
        size_t off = static_cast<size_t>(i) * cfg.chunk_size;
        size_t len = std::min(cfg.chunk_size, file.size() - off);
        chunk.payload.insert(chunk.payload.end(), file.begin() + static_cast<long>(off),
                             file.begin() + static_cast<long>(off + len));
        ch.send(seal_envelope(keys, chunk));
    }

    auto reply = ch.recv(cfg.timeout_s);
    if (!reply) throw ProtocolError(RejectCode::Timeout, "no transfer ack");
    auto env = open_envelope(keys, *reply);
    if (!env) throw ProtocolError(RejectCode::Tamper, "unauthenticated reply");
    PushResult res;
    if (env->kind == MsgKind::Ack) {
        ByteReader r(env->payload.data(), env->payload.size());
        (void)r.u8();  // tag kind echo
        res.accepted = true;
        res.accepted_counter = r.u64be();
        return res;
    }
    if (env->kind == MsgKind::Reject) {
        ByteReader r(env->payload.data(), env->payload.size());
        res.reject_code = static_cast<RejectCode>(r.u8());
        uint16_t len = r.u16be();
        auto b = r.raw(std::min<size_t>(len, r.remaining()));
        res.reject_reason.assign(b.begin(), b.end());
        return res;
    }
    throw ProtocolError(RejectCode::ProtocolError, "unexpected reply kind");
}

// Receiver side of one transfer. Returns the reassembled file after all
// verifications; throws ProtocolError with the reject code otherwise
// (the caller sends the REJECT and decides whether to abort the session).
struct ReceivedFile {
    VersionTag tag;
    Bytes content;
};

class TransferReceiver {
public:
    TransferReceiver(const SessionKeys& keys, const EdgeId& expected_edge,
                     uint64_t last_counter, uint64_t now_epoch_s,
                     const SessionConfig& cfg = {})
        : keys_(keys),
          expected_edge_(expected_edge),
          last_counter_(last_counter),
          now_(now_epoch_s),
          cfg_(cfg) {}

    // env must be a DataPush or ModelPush envelope already opened.
    // The chunk count is parsed before freshness checks so a rejected
    // transfer's in-flight chunks can still be drained.
    void begin(const Envelope& env) {
        tag_ = env.tag;
        ByteReader r(env.payload.data(), env.payload.size());
        file_size_ = r.u64be();
        r.copy_to(digest_.data(), kHashLen);
        chunk_count_ = r.u32be();
        content_.clear();
        next_chunk_ = 0;
        begun_ = true;

        if (tag_.edge_id != expected_edge_)
            throw ProtocolError(RejectCode::ProtocolError, "tag edge mismatch");
        if (tag_.counter <= last_counter_)
            throw ProtocolError(RejectCode::Replay,
                                "stale counter " + std::to_string(tag_.counter) +
                                    " (last accepted " + std::to_string(last_counter_) + ")");
        uint64_t skew = tag_.created_at > now_ ? tag_.created_at - now_
                                               : now_ - tag_.created_at;
        if (skew > cfg_.clock_skew_s)
            throw ProtocolError(RejectCode::ClockSkew,
                                "tag timestamp outside skew bounds");
        content_.reserve(file_size_);
    }

    bool done() const { return begun_ && next_chunk_ == chunk_count_; }
    uint32_t remaining_chunks() const {
        return begun_ ? chunk_count_ - next_chunk_ : 0;
    }

    void on_chunk(const Envelope& env) {
        if (!begun_) throw ProtocolError(RejectCode::ProtocolError, "chunk before push");
        ByteReader r(env.payload.data(), env.payload.size());
        uint32_t index = r.u32be();
        if (index != next_chunk_)
            throw ProtocolError(RejectCode::ProtocolError, "chunk out of order");
        auto data = r.raw(r.remaining());
        content_.insert(content_.end(), data.begin(), data.end());
        ++next_chunk_;
    }

    // Final whole-file verification; counter advance is the caller's
    // compare-and-swap so concurrent sessions cannot double-accept.
    ReceivedFile finish() {
        if (!done()) throw ProtocolError(RejectCode::ProtocolError, "transfer incomplete");
        if (content_.size() != file_size_)
            throw ProtocolError(RejectCode::Corrupt, "size mismatch after reassembly");
        if (sha256(content_) != digest_)
            throw ProtocolError(RejectCode::Corrupt, "whole-file checksum mismatch");
        return ReceivedFile{tag_, std::move(content_)};
    }

    const VersionTag& tag() const { return tag_; }

private:
    SessionKeys keys_;
    EdgeId expected_edge_;
    uint64_t last_counter_;
    uint64_t now_;
    SessionConfig cfg_;

    bool begun_ = false;
    VersionTag tag_;
    uint64_t file_size_ = 0;
    Sha256Digest digest_{};
    uint32_t chunk_count_ = 0;
    uint32_t next_chunk_ = 0;
    Bytes content_;
};

// Serve one authenticated session end to end: handshake, then any number
// of transfers until FIN or close. on_file decides acceptance semantics
// (advance counters, persist, swap models) and returns the acked counter;
// it throws ProtocolError to reject.
using FileHandler = std::function<uint64_t(const EdgeId&, const ReceivedFile&, MsgKind)>;

struct ServeOptions {
    SessionConfig session;
    bool accept_data = true;
    bool accept_model = true;
    std::function<uint64_t()> now_epoch_s = [] {
        return static_cast<uint64_t>(
            std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::system_clock::now().time_since_epoch())
                .count());
    };
};

using LastCounterFn = std::function<uint64_t(const EdgeId&, TagKind)>;

inline void serve_session(Channel& ch, const TrustRegistry& registry,
                          const LastCounterFn& last_counter_fn, const FileHandler& on_file,
                          const ServeOptions& opts = {}) {
    auto session = handshake_respond(ch, registry, opts.session);

    std::optional<TransferReceiver> receiver;
    MsgKind active_kind = MsgKind::Fin;
    uint32_t drain_chunks = 0;  // leftovers of a rejected transfer

    auto complete_if_done = [&] {
        if (!receiver || !receiver->done()) return;
        auto file = receiver->finish();
        uint64_t acked = on_file(session.edge_id, file, active_kind);
        Envelope ack;
        ack.kind = MsgKind::Ack;
        ack.tag = file.tag;
        put_u8(ack.payload, static_cast<uint8_t>(file.tag.kind));
        put_u64be(ack.payload, acked);
        ch.send(seal_envelope(session.keys, ack));
        receiver.reset();
    };

    for (;;) {
        auto frame = ch.recv(opts.session.timeout_s);
        if (!frame) return;  // closed or idle
        auto env = open_envelope(session.keys, *frame);
        if (!env) {
            // Tampered or undecodable under the session keys: reject and
            // abort the session before any plaintext use.
            detail::send_sealed_reject(ch, session.keys, RejectCode::Tamper,
                                       "envelope authentication failed");
            ch.close();
            return;
        }
        try {
            switch (env->kind) {
                case MsgKind::DataPush:
                case MsgKind::ModelPush: {
                    if ((env->kind == MsgKind::DataPush && !opts.accept_data) ||
                        (env->kind == MsgKind::ModelPush && !opts.accept_model))
                        throw ProtocolError(RejectCode::ProtocolError,
                                            "transfer kind not accepted here");
                    TagKind want =
                        env->kind == MsgKind::DataPush ? TagKind::Data : TagKind::Model;
                    if (env->tag.kind != want)
                        throw ProtocolError(RejectCode::ProtocolError,
                                            "tag kind does not match message");
                    receiver.emplace(session.keys, session.edge_id,
                                     last_counter_fn(session.edge_id, want),
                                     opts.now_epoch_s(), opts.session);
                    receiver->begin(*env);
                    active_kind = env->kind;
                    complete_if_done();  // zero-chunk transfers
                    break;
                }
                case MsgKind::Chunk: {
                    if (drain_chunks > 0) {
                        --drain_chunks;
                        break;
                    }
                    if (!receiver)
                        throw ProtocolError(RejectCode::ProtocolError, "chunk before push");
                    receiver->on_chunk(*env);
                    complete_if_done();
                    break;
                }
                case MsgKind::Fin:
                    return;
                default:
                    throw ProtocolError(RejectCode::ProtocolError, "unexpected message");
            }
        } catch (const ProtocolError& e) {
            detail::send_sealed_reject(ch, session.keys, e.code(), e.what(),
                                       receiver ? receiver->tag() : VersionTag{});
            drain_chunks = receiver ? receiver->remaining_chunks() : 0;
            receiver.reset();
            if (e.code() == RejectCode::Tamper) {
                ch.close();
                return;
            }
        }
    }
}

inline void send_fin(Channel& ch, const SessionKeys& keys) {
    Envelope fin;
    fin.kind = MsgKind::Fin;
    ch.send(seal_envelope(keys, fin));
}

inline uint64_t now_epoch_s() {
    return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::seconds>(
                                     std::chrono::system_clock::now().time_since_epoch())
                                     .count());
}

inline VersionTag make_tag(TagKind kind, const EdgeId& edge, const UserId& user,
                           uint64_t counter, uint64_t created_at = 0) {
    VersionTag t;
    t.kind = kind;
    t.edge_id = edge;
    t.user_id = user;
    t.counter = counter;
    t.created_at = created_at ? created_at : now_epoch_s();
    return t;
}

}  // namespace mqsec
