#include <gtest/gtest.h>

#include <filesystem>
#include <thread>

#include "mqsec/engine.hpp"
#include "mqsec/rng.hpp"

using namespace mqsec;

namespace {

// Build a small training table by running crafted packets through the
// real extractor, then train a memorizing tree on it.
struct PacketCase {
    Bytes frame;
    ClassLabel label;
};

Bytes connect_frame(uint16_t kalive, bool creds, const std::string& client = "dev") {
    auto p = make_connect(client, kalive, true, creds ? "user" : "", creds ? "pw" : "");
    return serialize_frame(p);
}

Bytes publish_frame(const std::string& payload) {
    return serialize_frame(make_publish("plant/turbine", payload));
}

std::vector<PacketCase> training_cases() {
    return {
        {connect_frame(60, false), ClassLabel::Legitimate},
        {publish_frame("21.5"), ClassLabel::Legitimate},
        {serialize_frame(make_simple(MsgType::Pingreq)), ClassLabel::Legitimate},
        {serialize_frame(make_simple(MsgType::Disconnect)), ClassLabel::Legitimate},
        {connect_frame(65535, false), ClassLabel::SlowITe},
        {publish_frame(std::string(48, 'F')), ClassLabel::Flood},
        {Bytes{0x00, 0x00}, ClassLabel::Malformed},
        {connect_frame(5, true), ClassLabel::BruteForce},
        {connect_frame(0, false), ClassLabel::DoS},
    };
}

std::shared_ptr<const ModelBundle> make_test_bundle() {
    LabeledTable table;
    table.schema.assign(kFeatureColumns.begin(), kFeatureColumns.end());
    for (const auto& c : training_cases()) {
        ConnState state;
        auto parsed = parse_frame(c.frame);
        auto f = extract_features(parsed, state, 0.0);
        table.rows.push_back(f.to_row());
        table.labels.push_back(c.label);
    }
    auto bundle = std::make_shared<ModelBundle>();
    bundle->encoders = fit_encoders(table);
    auto m = apply_encoders(bundle->encoders, table);
    for (size_t i = 0; i < 33; ++i) bundle->selected.push_back(i);
    auto tree = train_cart(m, table.labels);
    bundle->model = std::make_shared<AnyModel>(std::move(tree));
    return bundle;
}

ConnContext make_conn(uint64_t id, const std::string& ip) {
    ConnContext c;
    c.conn_id = id;
    c.src_ip = *Ipv4::parse(ip);
    return c;
}

TEST(MapResponse, ExhaustiveTableForAllFiveAttacks) {
    EXPECT_EQ(map_response(ClassLabel::DoS), IpsAction::DropPacket);
    EXPECT_EQ(map_response(ClassLabel::SlowITe), IpsAction::ResetConnection);
    EXPECT_EQ(map_response(ClassLabel::Flood), IpsAction::ForwardToSource);
    EXPECT_EQ(map_response(ClassLabel::Malformed), IpsAction::DropPacket);
    EXPECT_EQ(map_response(ClassLabel::BruteForce), IpsAction::ResetConnection);
    EXPECT_THROW(map_response(ClassLabel::Legitimate), std::invalid_argument);
}

TEST(Engine, LegitimateConnectForwardedAndLogged) {
    auto dir = std::filesystem::temp_directory_path() / "mqsec_engine_legit";
    std::filesystem::remove_all(dir);
    EngineConfig cfg;
    cfg.log_dir = dir.string();
    Engine engine(make_test_bundle(), FirewallRuleSet{}, cfg);

    auto conn = make_conn(1, "10.0.0.10");
    Bytes relayed;
    conn.relay_to_broker = [&](const Bytes& b) {
        relayed = b;
        return true;
    };
    auto frame = connect_frame(60, false);
    auto d = engine.process_packet(conn, frame, 1.0);
    EXPECT_EQ(d.kind, Disposition::Kind::Forwarded);
    EXPECT_EQ(relayed, frame);
    EXPECT_EQ(engine.feature_log().records_in_current(), 1u);
}

TEST(Engine, SlowIteInterceptedWithReset) {
    Engine engine(make_test_bundle(), FirewallRuleSet{});
    auto conn = make_conn(2, "10.0.0.11");
    bool reset = false;
    conn.reset_connection = [&] { reset = true; };
    auto d = engine.process_packet(conn, connect_frame(65535, false), 1.0);
    EXPECT_EQ(d.kind, Disposition::Kind::Intercepted);
    EXPECT_EQ(d.label, ClassLabel::SlowITe);
    EXPECT_EQ(d.action, IpsAction::ResetConnection);
    EXPECT_TRUE(reset);
}

TEST(Engine, FloodReflectedToSourceAndConfigDowngrade) {
    {
        Engine engine(make_test_bundle(), FirewallRuleSet{});
        auto conn = make_conn(3, "10.0.0.12");
        Bytes reflected;
        conn.reflect_to_source = [&](const Bytes& b) { reflected = b; };
        auto frame = publish_frame(std::string(48, 'F'));
        auto d = engine.process_packet(conn, frame, 1.0);
        EXPECT_EQ(d.kind, Disposition::Kind::Intercepted);
        EXPECT_EQ(d.label, ClassLabel::Flood);
        EXPECT_EQ(d.action, IpsAction::ForwardToSource);
        EXPECT_EQ(reflected, frame);
    }
    {
        EngineConfig cfg;
        cfg.reflect_flood = false;
        Engine engine(make_test_bundle(), FirewallRuleSet{}, cfg);
        auto conn = make_conn(4, "10.0.0.13");
        auto d = engine.process_packet(conn, publish_frame(std::string(48, 'F')), 1.0);
        EXPECT_EQ(d.action, IpsAction::DropPacket);
    }
}

TEST(Engine, BannedIpBlockedWithoutModelInvocation) {
    FirewallRuleSet rules;
    rules.banned_ips.insert(*Ipv4::parse("6.6.6.6"));
    auto dir = std::filesystem::temp_directory_path() / "mqsec_engine_blocked";
    std::filesystem::remove_all(dir);
    EngineConfig cfg;
    cfg.log_dir = dir.string();
    Engine engine(make_test_bundle(), rules, cfg);

    std::vector<std::string> stages;
    engine.set_stage_probe([&](const char* s) { stages.push_back(s); });

    auto conn = make_conn(5, "6.6.6.6");
    auto d = engine.process_packet(conn, connect_frame(60, false), 1.0);
    EXPECT_EQ(d.kind, Disposition::Kind::Blocked);
    EXPECT_EQ(d.block_reason, BlockReason::BannedIp);
    // Firewall stage ran, the model never did.
    ASSERT_EQ(stages.size(), 1u);
    EXPECT_EQ(stages[0], "firewall");
    // Blocked packets are still logged, with the blocked marker.
    EXPECT_EQ(engine.feature_log().records_in_current(), 1u);
}

TEST(Engine, PipelineOrderingProbeOnAllowedPath) {
    Engine engine(make_test_bundle(), FirewallRuleSet{});
    std::vector<std::string> stages;
    engine.set_stage_probe([&](const char* s) { stages.push_back(s); });
    auto conn = make_conn(6, "10.1.1.1");
    engine.process_packet(conn, publish_frame("21.5"), 1.0);
    ASSERT_EQ(stages.size(), 2u);
    EXPECT_EQ(stages[0], "firewall");
    EXPECT_EQ(stages[1], "predict");
}

TEST(Engine, BrokerUnreachableSurfacesRelayError) {
    Engine engine(make_test_bundle(), FirewallRuleSet{});
    auto conn = make_conn(7, "10.1.1.2");
    conn.relay_to_broker = [](const Bytes&) { return false; };
    auto d = engine.process_packet(conn, publish_frame("21.5"), 1.0);
    EXPECT_EQ(d.kind, Disposition::Kind::RelayError);
    EXPECT_EQ(engine.counters().relay_errors.load(), 1u);

    // Intercepted dispositions are unaffected by broker health.
    bool reset = false;
    conn.reset_connection = [&] { reset = true; };
    auto d2 = engine.process_packet(conn, connect_frame(65535, false), 2.0);
    EXPECT_EQ(d2.kind, Disposition::Kind::Intercepted);
    EXPECT_TRUE(reset);
}

TEST(Engine, StreamReassemblyAcrossChunkBoundaries) {
    Engine engine(make_test_bundle(), FirewallRuleSet{});
    auto conn = make_conn(8, "10.1.1.3");
    auto f1 = publish_frame("21.5");
    auto f2 = connect_frame(60, false);
    Bytes stream = f1;
    stream.insert(stream.end(), f2.begin(), f2.end());

    // Deliver in awkward slices; dispositions must come out per frame.
    std::vector<Disposition> all;
    for (size_t i = 0; i < stream.size(); i += 3) {
        Bytes slice(stream.begin() + static_cast<long>(i),
                    stream.begin() + static_cast<long>(std::min(i + 3, stream.size())));
        auto ds = engine.on_bytes(conn, slice, 1.0 + static_cast<double>(i));
        all.insert(all.end(), ds.begin(), ds.end());
    }
    ASSERT_EQ(all.size(), 2u);
    EXPECT_EQ(all[0].kind, Disposition::Kind::Forwarded);
    EXPECT_EQ(all[1].kind, Disposition::Kind::Forwarded);
}

TEST(FeatureLogRotation, CountsAndSequencesAndEmptyFiles) {
    auto dir = std::filesystem::temp_directory_path() / "mqsec_engine_rotate";
    std::filesystem::remove_all(dir);
    EngineConfig cfg;
    cfg.log_dir = dir.string();
    Engine engine(make_test_bundle(), FirewallRuleSet{}, cfg);

    // Empty rotation: sealed file with zero records, still valid CSV.
    auto sealed0 = engine.feature_log().rotate();
    EXPECT_EQ(engine.feature_log().last_sealed_records(), 0u);
    auto table0 = load_dataset(sealed0, {true, true});
    EXPECT_EQ(table0.size(), 0u);
    EXPECT_TRUE(std::filesystem::exists(sealed0 + ".sha256"));

    auto conn = make_conn(9, "10.1.1.4");
    for (int i = 0; i < 100; ++i)
        engine.process_packet(conn, publish_frame("21.5"), 1.0 + i);
    auto sealed1 = engine.feature_log().rotate();
    EXPECT_EQ(engine.feature_log().last_sealed_records(), 100u);
    EXPECT_EQ(engine.feature_log().records_in_current(), 0u);

    // Sealed file re-parses through the dataset reader.
    auto table = load_dataset(sealed1, {true, false});
    EXPECT_EQ(table.size(), 100u);
    for (auto l : table.labels) EXPECT_EQ(l, ClassLabel::Legitimate);

    // Strictly increasing sequence numbers.
    auto sealed2 = engine.feature_log().rotate();
    EXPECT_NE(sealed1, sealed2);
    EXPECT_LT(sealed1, sealed2);
}

TEST(FeatureLogRotation, DiskFullSuspendsAndCounts) {
    auto dir = std::filesystem::temp_directory_path() / "mqsec_engine_diskfull";
    std::filesystem::remove_all(dir);
    EngineConfig cfg;
    cfg.log_dir = dir.string();
    Engine engine(make_test_bundle(), FirewallRuleSet{}, cfg);

    auto conn = make_conn(10, "10.1.1.5");
    engine.process_packet(conn, publish_frame("21.5"), 1.0);
    engine.feature_log().suspend_writes();
    for (int i = 0; i < 5; ++i)
        engine.process_packet(conn, publish_frame("21.5"), 2.0 + i);

    auto stats = engine.feature_log().stats();
    EXPECT_EQ(stats.records_written, 1u);
    EXPECT_EQ(stats.records_dropped, 5u);
    // Conservation: processed == written + dropped.
    EXPECT_EQ(engine.counters().packets_processed.load(),
              stats.records_written + stats.records_dropped);
}

std::shared_ptr<const ModelBundle> single_leaf_bundle(ClassLabel cls) {
    // Sentinel model: predicts one fixed class for any input.
    auto bundle = std::make_shared<ModelBundle>();
    LabeledTable table;
    table.schema.assign(kFeatureColumns.begin(), kFeatureColumns.end());
    std::vector<std::string> row(kNumFeatures, "0");
    table.rows.push_back(row);
    table.labels.push_back(cls);
    bundle->encoders = fit_encoders(table);
    for (size_t i = 0; i < 33; ++i) bundle->selected.push_back(i);
    TreeModel t;
    t.feature_names.assign(kFeatureColumns.begin(), kFeatureColumns.end());
    t.root = std::make_unique<TreeNode>();
    t.root->counts[static_cast<size_t>(cls)] = 1;
    bundle->model = std::make_shared<AnyModel>(std::move(t));
    return bundle;
}

TEST(SwapModel, SwapTakesEffectAndRefusalKeepsOld) {
    Engine engine(single_leaf_bundle(ClassLabel::Legitimate), FirewallRuleSet{});
    auto conn = make_conn(11, "10.1.1.6");
    auto d1 = engine.process_packet(conn, publish_frame("x"), 1.0);
    EXPECT_EQ(d1.kind, Disposition::Kind::Forwarded);

    VersionTag tag;
    tag.kind = TagKind::Model;
    tag.counter = 7;
    engine.swap_model(single_leaf_bundle(ClassLabel::DoS), tag);
    auto d2 = engine.process_packet(conn, publish_frame("x"), 2.0);
    EXPECT_EQ(d2.kind, Disposition::Kind::Intercepted);
    EXPECT_EQ(d2.label, ClassLabel::DoS);
    EXPECT_EQ(engine.active_model_tag().counter, 7u);

    // A bundle whose encoder schema is not the 33-column universe is refused.
    auto bad = std::make_shared<ModelBundle>();
    bad->encoders.schema = {"wrong"};
    bad->encoders.categorical = {false};
    bad->encoders.maps.resize(1);
    bad->model = single_leaf_bundle(ClassLabel::Flood)->model;
    EXPECT_THROW(engine.swap_model(bad, tag), std::runtime_error);
    auto d3 = engine.process_packet(conn, publish_frame("x"), 3.0);
    EXPECT_EQ(d3.label, ClassLabel::DoS);  // old model retained
}

TEST(SwapModel, ConcurrentClassificationNeverSeesTornModel) {
    // Two sentinel models; swapping under fire must always yield one of
    // the two legal predictions.
    Engine engine(single_leaf_bundle(ClassLabel::Legitimate), FirewallRuleSet{});
    std::atomic<bool> stop{false};
    std::atomic<uint64_t> anomalies{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 3; ++t)
        readers.emplace_back([&, t] {
            auto conn = make_conn(100 + static_cast<uint64_t>(t), "10.2.2.2");
            auto frame = publish_frame("x");
            while (!stop.load(std::memory_order_relaxed)) {
                auto d = engine.process_packet(conn, frame, 1.0);
                bool legal = (d.kind == Disposition::Kind::Forwarded) ||
                             (d.kind == Disposition::Kind::Intercepted &&
                              d.label == ClassLabel::DoS);
                if (!legal) anomalies.fetch_add(1);
            }
        });
    auto a = single_leaf_bundle(ClassLabel::Legitimate);
    auto b = single_leaf_bundle(ClassLabel::DoS);
    for (int i = 0; i < 500; ++i) {
        VersionTag tag;
        tag.kind = TagKind::Model;
        tag.counter = static_cast<uint64_t>(i + 1);
        engine.swap_model(i % 2 ? a : b, tag);
    }
    stop.store(true);
    for (auto& th : readers) th.join();
    EXPECT_EQ(anomalies.load(), 0u);
    EXPECT_EQ(engine.active_model_tag().counter, 500u);
}

TEST(Engine, DispositionTotalityOnArbitraryBytes) {
    Engine engine(make_test_bundle(), FirewallRuleSet{});
    Rng rng(44);
    auto conn = make_conn(12, "10.3.3.3");
    for (int i = 0; i < 200; ++i) {
        size_t n = 1 + rng.bounded(60);
        Bytes junk(n);
        for (auto& b : junk) b = static_cast<uint8_t>(rng.bounded(256));
        auto d = engine.process_packet(conn, junk, 1.0 + i);
        // Every input yields exactly one disposition; no crash, no skip.
        (void)d;
    }
    EXPECT_EQ(engine.counters().packets_processed.load(), 200u);
}

}  // namespace
