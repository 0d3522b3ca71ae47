#pragma once

#include <arpa/inet.h>

#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqsec/csv.hpp"

namespace mqsec {

struct Ipv4 {
    uint32_t addr = 0;  // host byte order

    static std::optional<Ipv4> parse(const std::string& s) {
        in_addr a{};
        if (inet_pton(AF_INET, s.c_str(), &a) != 1) return std::nullopt;
        return Ipv4{ntohl(a.s_addr)};
    }
    std::string to_string() const {
        in_addr a{};
        a.s_addr = htonl(addr);
        char buf[INET_ADDRSTRLEN];
        inet_ntop(AF_INET, &a, buf, sizeof(buf));
        return buf;
    }
    bool operator==(const Ipv4&) const = default;
    bool operator<(const Ipv4& o) const { return addr < o.addr; }
};

struct CidrPrefix {
    uint32_t network = 0;  // host byte order, masked
    uint8_t bits = 0;

    static std::optional<CidrPrefix> parse(const std::string& s) {
        auto slash = s.find('/');
        if (slash == std::string::npos) return std::nullopt;
        auto ip = Ipv4::parse(s.substr(0, slash));
        if (!ip) return std::nullopt;
        int bits = -1;
        try {
            size_t used = 0;
            bits = std::stoi(s.substr(slash + 1), &used);
            if (used != s.size() - slash - 1) return std::nullopt;
        } catch (...) {
            return std::nullopt;
        }
        if (bits < 0 || bits > 32) return std::nullopt;
        CidrPrefix p;
        p.bits = static_cast<uint8_t>(bits);
        p.network = ip->addr & p.mask();
        return p;
    }
    uint32_t mask() const {
        return bits == 0 ? 0 : (bits == 32 ? 0xFFFFFFFFu : ~((1u << (32 - bits)) - 1));
    }
    bool contains(Ipv4 ip) const { return (ip.addr & mask()) == network; }
    std::string to_string() const {
        return Ipv4{network}.to_string() + "/" + std::to_string(bits);
    }
    bool operator<(const CidrPrefix& o) const {
        return network != o.network ? network < o.network : bits < o.bits;
    }
};

enum class BlockReason : uint8_t { BannedIp, BannedPrefix, BannedPort, RateLimit };

inline const char* block_reason_name(BlockReason r) {
    switch (r) {
        case BlockReason::BannedIp: return "banned-ip";
        case BlockReason::BannedPrefix: return "banned-prefix";
        case BlockReason::BannedPort: return "banned-port";
        case BlockReason::RateLimit: return "rate-limit";
    }
    return "unknown";
}

struct Verdict {
    bool allowed = true;
    BlockReason reason = BlockReason::BannedIp;

    static Verdict allow() { return {true, BlockReason::BannedIp}; }
    static Verdict block(BlockReason r) { return {false, r}; }
};

struct FirewallRuleSet {
    std::set<Ipv4> banned_ips;
    std::set<CidrPrefix> banned_prefixes;
    std::set<uint16_t> banned_ports;
    // Rate limit: more than packet_threshold packets from one source
    // within a trailing time_threshold window blocks. 0 = disabled.
    uint64_t packet_threshold = 0;
    double time_threshold = 0.0;

    bool rate_limiting_enabled() const {
        return packet_threshold > 0 && time_threshold > 0;
    }
};

// Rules file: one directive per line, `#` comments.
//   ban-ip <addr>
//   ban-prefix <addr>/<bits>
//   ban-port <port>
//   rate <packets> <seconds>
inline FirewallRuleSet parse_rules_text(const std::string& text) {
    FirewallRuleSet rules;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string directive;
        if (!(ls >> directive)) continue;
        auto fail = [&](const std::string& why) {
            throw std::runtime_error("rules line " + std::to_string(lineno) + ": " + why);
        };
        if (directive == "ban-ip") {
            std::string addr;
            if (!(ls >> addr)) fail("ban-ip needs an address");
            auto ip = Ipv4::parse(addr);
            if (!ip) fail("invalid IPv4 address: " + addr);
            rules.banned_ips.insert(*ip);
        } else if (directive == "ban-prefix") {
            std::string pfx;
            if (!(ls >> pfx)) fail("ban-prefix needs addr/bits");
            auto p = CidrPrefix::parse(pfx);
            if (!p) fail("invalid CIDR prefix: " + pfx);
            rules.banned_prefixes.insert(*p);
        } else if (directive == "ban-port") {
            long port = -1;
            if (!(ls >> port) || port < 0 || port > 65535) fail("invalid port");
            rules.banned_ports.insert(static_cast<uint16_t>(port));
        } else if (directive == "rate") {
            long packets = 0;
            double seconds = 0;
            if (!(ls >> packets >> seconds) || packets <= 0 || seconds <= 0)
                fail("rate needs <packets> <seconds>, both positive");
            rules.packet_threshold = static_cast<uint64_t>(packets);
            rules.time_threshold = seconds;
        } else {
            fail("unknown directive: " + directive);
        }
    }
    return rules;
}

inline FirewallRuleSet load_rules_file(const std::string& path) {
    std::string text;
    for (const auto& line : read_lines(path)) text += line + "\n";
    return parse_rules_text(text);
}

// Stateless rule checks plus the stateful sliding-window rate limiter.
// check() is callable from many threads; rule updates swap an immutable
// epoch atomically, so each packet sees exactly one coherent ruleset.
class Firewall {
public:
    explicit Firewall(FirewallRuleSet rules = {})
        : epoch_(std::make_shared<const FirewallRuleSet>(std::move(rules))) {}

    // Evaluation order is fixed: ip -> prefix -> port -> rate; the first
    // hit wins so reason codes are deterministic.
    Verdict check(Ipv4 src_ip, uint16_t dst_port, double now, bool countable = true) {
        auto rules = snapshot();
        if (rules->banned_ips.count(src_ip)) return Verdict::block(BlockReason::BannedIp);
        for (const auto& p : rules->banned_prefixes)
            if (p.contains(src_ip)) return Verdict::block(BlockReason::BannedPrefix);
        if (rules->banned_ports.count(dst_port))
            return Verdict::block(BlockReason::BannedPort);
        if (rules->rate_limiting_enabled() && countable) {
            if (rate_check_and_record(src_ip, now, rules->packet_threshold,
                                      rules->time_threshold))
                return Verdict::block(BlockReason::RateLimit);
        }
        return Verdict::allow();
    }

    // Atomic epoch switch; readers in flight keep their snapshot.
    void update_rules(FirewallRuleSet rules) {
        auto next = std::make_shared<const FirewallRuleSet>(std::move(rules));
        std::lock_guard<std::mutex> lk(epoch_mutex_);
        epoch_ = std::move(next);
        ++epoch_counter_;
    }

    uint64_t epoch() const {
        std::lock_guard<std::mutex> lk(epoch_mutex_);
        return epoch_counter_;
    }

    std::shared_ptr<const FirewallRuleSet> snapshot() const {
        std::lock_guard<std::mutex> lk(epoch_mutex_);
        return epoch_;
    }

    // Drop per-source queues idle longer than the window.
    void sweep(double now) {
        std::lock_guard<std::mutex> lk(ledger_mutex_);
        auto rules = snapshot();
        for (auto it = ledger_.begin(); it != ledger_.end();) {
            if (it->second.empty() ||
                now - it->second.back() > rules->time_threshold * 2)
                it = ledger_.erase(it);
            else
                ++it;
        }
    }

private:
    // Sliding window: keep the packet_threshold most recent arrivals per
    // source. If at arrival the window already holds >= threshold packets,
    // this one makes it exceed and is blocked. All arrivals count, blocked
    // or not.
    bool rate_check_and_record(Ipv4 src, double now, uint64_t threshold, double window) {
        std::lock_guard<std::mutex> lk(ledger_mutex_);
        auto& q = ledger_[src.addr];
        while (!q.empty() && q.front() <= now - window) q.pop_front();
        bool blocked = q.size() >= threshold;
        q.push_back(now);
        if (q.size() > threshold) q.pop_front();  // memory bound: threshold entries
        return blocked;
    }

    mutable std::mutex epoch_mutex_;
    std::shared_ptr<const FirewallRuleSet> epoch_;
    uint64_t epoch_counter_ = 0;

    std::mutex ledger_mutex_;
    std::unordered_map<uint32_t, std::deque<double>> ledger_;
};

}  // namespace mqsec
