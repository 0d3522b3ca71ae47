#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>

#include "mqsec/csv.hpp"
#include "mqsec/wire.hpp"

namespace mqsec {

struct EdgeEntry {
    UserId user_id{};
    Bytes secret;  // pre-shared, 32 bytes
    uint64_t last_data_counter = 0;
    uint64_t last_model_counter = 0;

    uint64_t& counter_for(TagKind k) {
        return k == TagKind::Data ? last_data_counter : last_model_counter;
    }
    uint64_t counter_for(TagKind k) const {
        return k == TagKind::Data ? last_data_counter : last_model_counter;
    }
};

// Trusted per-edge store: provisioned identity + secret, and the last
// accepted counter per tag kind. Counters survive restarts through an
// append-only journal; rebaseline records are explicit operator actions.
class TrustRegistry {
public:
    TrustRegistry() = default;

    void add_edge(const EdgeId& edge, const UserId& user, const Bytes& secret) {
        std::lock_guard<std::mutex> lk(mu_);
        if (secret.size() != 32)
            throw std::runtime_error("edge secret must be 32 bytes");
        EdgeEntry e;
        e.user_id = user;
        e.secret = secret;
        edges_[edge] = std::move(e);
    }

    std::optional<EdgeEntry> lookup(const EdgeId& edge) const {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = edges_.find(edge);
        if (it == edges_.end()) return std::nullopt;
        return it->second;
    }

    uint64_t last_counter(const EdgeId& edge, TagKind kind) const {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = edges_.find(edge);
        if (it == edges_.end()) return 0;
        return it->second.counter_for(kind);
    }

    // Atomic compare-and-advance: succeeds iff counter is strictly fresher
    // than the last accepted one for this (edge, kind).
    bool try_advance(const EdgeId& edge, TagKind kind, uint64_t counter,
                     const Sha256Digest& checksum) {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = edges_.find(edge);
        if (it == edges_.end()) return false;
        uint64_t& last = it->second.counter_for(kind);
        if (counter <= last) return false;
        last = counter;
        journal_append("accept " + edge_id_hex(edge) + " " +
                       (kind == TagKind::Data ? "data" : "model") + " " +
                       std::to_string(counter) + " " +
                       to_hex(checksum.data(), checksum.size()));
        return true;
    }

    // Operator recovery after data loss: force the counter to an explicit
    // value. Appends a journal record; never happens automatically.
    void rebaseline(const EdgeId& edge, TagKind kind, uint64_t counter) {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = edges_.find(edge);
        if (it == edges_.end()) throw std::runtime_error("unknown edge id");
        it->second.counter_for(kind) = counter;
        journal_append("rebaseline " + edge_id_hex(edge) + " " +
                       (kind == TagKind::Data ? "data" : "model") + " " +
                       std::to_string(counter));
    }

    // Journal persistence. Opening replays existing records.
    void open_journal(const std::string& path) {
        std::lock_guard<std::mutex> lk(mu_);
        journal_path_ = path;
        std::ifstream in(path);
        if (in) {
            std::string line;
            int lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.empty()) continue;
                std::istringstream ls(line);
                std::string op, edge_hex, kind_str;
                uint64_t counter = 0;
                if (!(ls >> op >> edge_hex >> kind_str >> counter))
                    throw std::runtime_error("journal corrupt at line " +
                                             std::to_string(lineno));
                if (op != "accept" && op != "rebaseline")
                    throw std::runtime_error("journal corrupt at line " +
                                             std::to_string(lineno));
                auto edge = edge_id_from_hex(edge_hex);
                TagKind kind = kind_str == "data" ? TagKind::Data : TagKind::Model;
                auto it = edges_.find(edge);
                if (it == edges_.end()) continue;  // edge removed from config
                uint64_t& last = it->second.counter_for(kind);
                if (op == "accept")
                    last = std::max(last, counter);
                else
                    last = counter;
            }
        }
        journal_ = std::make_unique<std::ofstream>(path, std::ios::app);
        if (!*journal_) throw std::runtime_error("cannot open journal: " + path);
    }

    // Provisioning file: `edge <edge-hex> <user-hex> <secret-hex>` lines.
    void load_edges_file(const std::string& path) {
        for (const auto& raw : read_lines(path)) {
            std::string line = raw;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            std::istringstream ls(line);
            std::string kw, edge_hex, user_hex, secret_hex;
            if (!(ls >> kw)) continue;
            if (kw != "edge")
                throw std::runtime_error("registry file: unknown directive " + kw);
            if (!(ls >> edge_hex >> user_hex >> secret_hex))
                throw std::runtime_error("registry file: edge needs id, user, secret");
            auto user_bytes = from_hex(user_hex);
            if (user_bytes.size() != 16)
                throw std::runtime_error("registry file: user id must be 16 bytes");
            UserId user;
            std::copy(user_bytes.begin(), user_bytes.end(), user.begin());
            add_edge(edge_id_from_hex(edge_hex), user, from_hex(secret_hex));
        }
    }

    size_t size() const {
        std::lock_guard<std::mutex> lk(mu_);
        return edges_.size();
    }

private:
    void journal_append(const std::string& line) {
        if (journal_) {
            *journal_ << line << "\n";
            journal_->flush();
        }
    }

    mutable std::mutex mu_;
    std::map<EdgeId, EdgeEntry> edges_;
    std::string journal_path_;
    std::unique_ptr<std::ofstream> journal_;
};

}  // namespace mqsec
