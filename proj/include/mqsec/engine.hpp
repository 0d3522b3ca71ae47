#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mqsec/crypto.hpp"
#include "mqsec/csv.hpp"
#include "mqsec/features.hpp"
#include "mqsec/firewall.hpp"
#include "mqsec/model_io.hpp"
#include "mqsec/mqtt.hpp"
#include "mqsec/schema.hpp"
#include "mqsec/wire.hpp"

namespace mqsec {

enum class IpsAction : uint8_t { DropPacket, ResetConnection, ForwardToSource };

inline const char* ips_action_name(IpsAction a) {
    switch (a) {
        case IpsAction::DropPacket: return "drop-packet";
        case IpsAction::ResetConnection: return "reset-connection";
        case IpsAction::ForwardToSource: return "forward-to-source";
    }
    return "unknown";
}

// Response per attack class: DoS and malformed traffic is dropped,
// slow-connection and credential attacks get the connection reset, and a
// publish flood is reflected to its source.
inline IpsAction map_response(ClassLabel label) {
    switch (label) {
        case ClassLabel::DoS: return IpsAction::DropPacket;
        case ClassLabel::SlowITe: return IpsAction::ResetConnection;
        case ClassLabel::Flood: return IpsAction::ForwardToSource;
        case ClassLabel::Malformed: return IpsAction::DropPacket;
        case ClassLabel::BruteForce: return IpsAction::ResetConnection;
        case ClassLabel::Legitimate:
            throw std::invalid_argument("legitimate traffic has no IPS response");
    }
    throw std::logic_error("bad label");
}

struct Disposition {
    enum class Kind : uint8_t { Forwarded, Blocked, Intercepted, RelayError } kind;
    BlockReason block_reason = BlockReason::BannedIp;  // Blocked
    ClassLabel label = ClassLabel::Legitimate;         // Intercepted
    IpsAction action = IpsAction::DropPacket;          // Intercepted

    static Disposition forwarded() { return {Kind::Forwarded}; }
    static Disposition blocked(BlockReason r) {
        Disposition d{Kind::Blocked};
        d.block_reason = r;
        return d;
    }
    static Disposition intercepted(ClassLabel l, IpsAction a) {
        Disposition d{Kind::Intercepted};
        d.label = l;
        d.action = a;
        return d;
    }
    static Disposition relay_error() { return {Kind::RelayError}; }

    std::string to_string() const {
        switch (kind) {
            case Kind::Forwarded: return "forwarded";
            case Kind::Blocked:
                return std::string("blocked-") + block_reason_name(block_reason);
            case Kind::Intercepted:
                return std::string("intercepted-") + class_name(label);
            case Kind::RelayError: return "relay-error";
        }
        return "unknown";
    }
};

// Append-only rotating CSV log of every processed packet: the 33 feature
// columns, the predicted label (blank when the firewall blocked the
// packet before classification), and the disposition marker. Sealed files
// are immutable and carry a SHA-256 sidecar.
class FeatureLog {
public:
    struct Stats {
        uint64_t records_written = 0;
        uint64_t records_dropped = 0;
        uint64_t files_sealed = 0;
    };

    FeatureLog() = default;  // disabled
    explicit FeatureLog(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
        open_next();
    }

    bool enabled() const { return !dir_.empty(); }

    void append(const PacketFeatures& features, std::optional<ClassLabel> predicted,
                const std::string& disposition) {
        if (!enabled()) return;
        std::lock_guard<std::mutex> lk(mu_);
        auto cells = features.to_row();
        cells.push_back(predicted ? class_name(*predicted) : "");
        cells.push_back(disposition);
        std::string line = join_csv(cells) + "\n";
        if (suspended_ || !out_ || !(*out_ << line)) {
            // Disk trouble: keep the pipeline alive, count what was lost.
            suspended_ = true;
            stats_.records_dropped++;
            return;
        }
        out_->flush();
        records_in_file_++;
        stats_.records_written++;
    }

    // Seal the current file (checksum sidecar, immutable rename) and open
    // the next one. Returns the sealed path, empty when disabled.
    std::string rotate() {
        if (!enabled()) return "";
        std::lock_guard<std::mutex> lk(mu_);
        out_->flush();
        out_.reset();
        std::string open_path = current_path_;
        std::string sealed_path = sealed_name(seq_);
        std::filesystem::rename(open_path, sealed_path);
        auto digest = sha256(read_file_bytes(sealed_path));
        atomic_write_file(sealed_path + ".sha256", to_hex(digest.data(), digest.size()) + "\n");
        stats_.files_sealed++;
        last_sealed_records_ = records_in_file_;
        ++seq_;
        open_next();
        return sealed_path;
    }

    uint64_t sequence() const {
        std::lock_guard<std::mutex> lk(mu_);
        return seq_;
    }
    uint64_t records_in_current() const {
        std::lock_guard<std::mutex> lk(mu_);
        return records_in_file_;
    }
    uint64_t last_sealed_records() const {
        std::lock_guard<std::mutex> lk(mu_);
        return last_sealed_records_;
    }
    Stats stats() const {
        std::lock_guard<std::mutex> lk(mu_);
        return stats_;
    }
    // Test hook: simulate disk-full.
    void suspend_writes() {
        std::lock_guard<std::mutex> lk(mu_);
        suspended_ = true;
    }

private:
    void open_next() {
        current_path_ = dir_ + "/featurelog-" + std::to_string(seq_) + ".csv.open";
        out_ = std::make_unique<std::ofstream>(current_path_, std::ios::trunc);
        std::string header;
        for (auto* c : kFeatureColumns) {
            header += c;
            header += ',';
        }
        header += kTargetColumn;
        header += ',';
        header += kDispositionColumn;
        header += '\n';
        *out_ << header;
        out_->flush();
        records_in_file_ = 0;
        suspended_ = false;
    }
    std::string sealed_name(uint64_t seq) const {
        return dir_ + "/featurelog-" + std::to_string(seq) + ".csv";
    }

    std::string dir_;
    mutable std::mutex mu_;
    std::unique_ptr<std::ofstream> out_;
    std::string current_path_;
    uint64_t seq_ = 0;
    uint64_t records_in_file_ = 0;
    uint64_t last_sealed_records_ = 0;
    bool suspended_ = false;
    Stats stats_;
};

// Per-connection context owned by the transport (proxy handler or the
// simulator): identity, parser state, stream buffer, and the hooks the
// IPS actions act through.
struct ConnContext {
    uint64_t conn_id = 0;
    Ipv4 src_ip{};
    uint16_t dst_port = 1883;
    ConnState state;
    Bytes buffer;
    bool first_packet = true;

    // Transport hooks; any may be empty in embedded mode.
    std::function<bool(const Bytes&)> relay_to_broker;
    std::function<void(const Bytes&)> reflect_to_source;
    std::function<void()> reset_connection;
};

struct EngineConfig {
    bool reflect_flood = true;           // off: downgrade to DropPacket
    bool rate_count_connect_only = false;
    std::string log_dir;                 // empty: feature log disabled
    std::string event_log_path;          // empty: JSON event log disabled
};

struct EngineCounters {
    std::atomic<uint64_t> packets_processed{0};
    std::atomic<uint64_t> forwarded{0};
    std::atomic<uint64_t> blocked{0};
    std::atomic<uint64_t> intercepted{0};
    std::atomic<uint64_t> relay_errors{0};
};

// The packet pipeline: firewall -> parse -> extract -> preprocess ->
// classify -> relay or IPS response, logging every packet.
class Engine {
public:
    Engine(std::shared_ptr<const ModelBundle> bundle, FirewallRuleSet rules,
           EngineConfig config = {})
        : config_(std::move(config)),
          firewall_(std::move(rules)),
          bundle_(std::move(bundle)),
          feature_log_(config_.log_dir.empty() ? FeatureLog()
                                               : FeatureLog(config_.log_dir)) {
        if (!bundle_) throw std::runtime_error("engine needs a loaded model");
        if (!config_.event_log_path.empty())
            event_log_ = std::make_unique<std::ofstream>(config_.event_log_path,
                                                         std::ios::app);
    }

    // Feed raw stream bytes for one connection; processes every complete
    // frame in arrival order. Returns one disposition per frame.
    std::vector<Disposition> on_bytes(ConnContext& conn, const Bytes& chunk, double now) {
        conn.buffer.insert(conn.buffer.end(), chunk.begin(), chunk.end());
        std::vector<Disposition> out;
        size_t pos = 0;
        while (pos < conn.buffer.size()) {
            auto parsed = parse_frame(conn.buffer.data() + pos, conn.buffer.size() - pos);
            if (parsed.need_more_data()) break;
            Bytes frame(conn.buffer.begin() + static_cast<long>(pos),
                        conn.buffer.begin() + static_cast<long>(pos + parsed.consumed));
            out.push_back(process_frame(conn, parsed, frame, now));
            pos += parsed.consumed;
        }
        conn.buffer.erase(conn.buffer.begin(), conn.buffer.begin() + static_cast<long>(pos));
        return out;
    }

    // One already-delimited frame (replay and simulator path).
    Disposition process_packet(ConnContext& conn, const Bytes& frame, double now) {
        auto parsed = parse_frame(frame);
        if (parsed.need_more_data()) {
            // Treat a dangling fragment as a malformed, truncated frame.
            parsed.consumed = frame.size();
            parsed.malformed = MalformedFrame{MalformedReason::TruncatedPayload,
                                              frame.empty() ? uint8_t(0) : frame[0],
                                              uint8_t(frame.empty() ? 0 : frame[0] >> 4),
                                              0,
                                              {}};
        }
        return process_frame(conn, parsed, frame, now);
    }

    // Atomic model hot-swap. Returns the previous bundle; a schema
    // mismatch refuses the swap and leaves the engine untouched.
    std::shared_ptr<const ModelBundle> swap_model(std::shared_ptr<const ModelBundle> next,
                                                  const VersionTag& tag) {
        if (!next) throw std::runtime_error("null model bundle");
        auto expected = schema_hash(
            std::vector<std::string>(kFeatureColumns.begin(), kFeatureColumns.end()));
        if (schema_hash(next->encoders.schema) != expected)
            throw std::runtime_error("model schema mismatch: swap refused");
        std::lock_guard<std::mutex> lk(model_mu_);
        auto prev = bundle_;
        bundle_ = std::move(next);
        active_tag_ = tag;
        return prev;
    }

    std::shared_ptr<const ModelBundle> model_snapshot() const {
        std::lock_guard<std::mutex> lk(model_mu_);
        return bundle_;
    }
    VersionTag active_model_tag() const {
        std::lock_guard<std::mutex> lk(model_mu_);
        return active_tag_;
    }

    Firewall& firewall() { return firewall_; }
    FeatureLog& feature_log() { return feature_log_; }
    const EngineCounters& counters() const { return counters_; }
    const EngineConfig& config() const { return config_; }

    // Test instrumentation: observe pipeline stage ordering.
    void set_stage_probe(std::function<void(const char*)> probe) {
        stage_probe_ = std::move(probe);
    }

private:
    Disposition process_frame(ConnContext& conn, const ParseResult& parsed,
                              const Bytes& frame, double now) {
        counters_.packets_processed.fetch_add(1, std::memory_order_relaxed);

        bool countable = true;
        if (config_.rate_count_connect_only)
            countable = !frame.empty() && (frame[0] >> 4) == 1;

        if (stage_probe_) stage_probe_("firewall");
        auto verdict = firewall_.check(conn.src_ip, conn.dst_port, now, countable);

        TransportInfo transport;
        transport.first_on_connection = conn.first_packet;
        conn.first_packet = false;
        transport.wire_len = frame.size();
        auto features = extract_features(parsed, conn.state, now, transport);

        if (!verdict.allowed) {
            counters_.blocked.fetch_add(1, std::memory_order_relaxed);
            auto d = Disposition::blocked(verdict.reason);
            feature_log_.append(features, std::nullopt, d.to_string());
            log_event(conn, d, std::nullopt, now);
            return d;
        }

        auto bundle = model_snapshot();
        auto encoded = preprocess(features, bundle->encoders, bundle->selected);
        if (stage_probe_) stage_probe_("predict");
        auto [label, probs] = bundle->model->predict(encoded.data(), encoded.size());
        (void)probs;

        Disposition d = Disposition::forwarded();
        if (label == ClassLabel::Legitimate) {
            bool relayed = true;
            if (conn.relay_to_broker) relayed = conn.relay_to_broker(frame);
            if (relayed) {
                counters_.forwarded.fetch_add(1, std::memory_order_relaxed);
                d = Disposition::forwarded();
            } else {
                counters_.relay_errors.fetch_add(1, std::memory_order_relaxed);
                d = Disposition::relay_error();
            }
        } else {
            IpsAction action = map_response(label);
            if (action == IpsAction::ForwardToSource && !config_.reflect_flood)
                action = IpsAction::DropPacket;
            apply_action(conn, action, frame);
            counters_.intercepted.fetch_add(1, std::memory_order_relaxed);
            d = Disposition::intercepted(label, action);
        }
        feature_log_.append(features, label, d.to_string());
        log_event(conn, d, label, now);
        return d;
    }

    void apply_action(ConnContext& conn, IpsAction action, const Bytes& frame) {
        switch (action) {
            case IpsAction::DropPacket:
                break;  // simply not relayed
            case IpsAction::ResetConnection:
                if (conn.reset_connection) conn.reset_connection();
                break;
            case IpsAction::ForwardToSource:
                if (conn.reflect_to_source) conn.reflect_to_source(frame);
                break;
        }
    }

    void log_event(const ConnContext& conn, const Disposition& d,
                   std::optional<ClassLabel> label, double now) {
        if (!event_log_) return;
        std::ostringstream os;
        os << "{\"ts\":" << now << ",\"conn\":" << conn.conn_id << ",\"src\":\""
           << conn.src_ip.to_string() << "\",\"disposition\":\"" << d.to_string() << "\"";
        if (label) os << ",\"label\":\"" << class_name(*label) << "\"";
        if (d.kind == Disposition::Kind::Intercepted)
            os << ",\"action\":\"" << ips_action_name(d.action) << "\"";
        os << "}";
        std::lock_guard<std::mutex> lk(event_mu_);
        *event_log_ << os.str() << "\n";
        event_log_->flush();
    }

    EngineConfig config_;
    Firewall firewall_;
    mutable std::mutex model_mu_;
    std::shared_ptr<const ModelBundle> bundle_;
    VersionTag active_tag_;
    FeatureLog feature_log_;
    std::unique_ptr<std::ofstream> event_log_;
    std::mutex event_mu_;
    EngineCounters counters_;
    std::function<void(const char*)> stage_probe_;
};

}  // namespace mqsec
