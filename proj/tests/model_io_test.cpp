#include <gtest/gtest.h>

#include "mqsec/model_io.hpp"
#include "mqsec/rng.hpp"

using namespace mqsec;

namespace {

EncodedMatrix matrix_of(const std::vector<std::vector<double>>& rows) {
    EncodedMatrix m;
    m.n_rows = rows.size();
    m.n_cols = rows.empty() ? 0 : rows[0].size();
    for (size_t c = 0; c < m.n_cols; ++c)
        m.column_names.push_back("f" + std::to_string(c));
    for (const auto& r : rows)
        m.values.insert(m.values.end(), r.begin(), r.end());
    return m;
}

void make_blobs(size_t n, uint64_t seed, EncodedMatrix& m, std::vector<ClassLabel>& labels) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    labels.clear();
    for (size_t i = 0; i < n; ++i) {
        auto cls = static_cast<size_t>(rng.bounded(6));
        double cx = static_cast<double>(cls) * 3.0;
        rows.push_back({cx + rng.next_gauss(), cx - rng.next_gauss(), rng.next_double()});
        labels.push_back(static_cast<ClassLabel>(cls));
    }
    m = matrix_of(rows);
}

TEST(ModelIo, SingleLeafTreeRoundTripByteIdentical) {
    TreeModel t;
    t.feature_names = {"a", "b"};
    t.root = std::make_unique<TreeNode>();
    t.root->counts = {3, 0, 0, 0, 0, 1};
    AnyModel m(std::move(t));

    auto bytes = serialize_model(m);
    // Header sanity: magic + version + kind.
    ASSERT_GE(bytes.size(), 6u);
    EXPECT_EQ(bytes[0], 'M');
    EXPECT_EQ(bytes[1], 'Q');
    EXPECT_EQ(bytes[2], 'B');
    EXPECT_EQ(bytes[3], 'M');
    EXPECT_EQ(bytes[4], kModelFormatVersion);
    EXPECT_EQ(bytes[5], 0);  // tree

    auto back = deserialize_model(bytes);
    auto again = serialize_model(back);
    EXPECT_EQ(bytes, again);
}

TEST(ModelIo, FlippingAnyByteIsDetected) {
    TreeModel t;
    t.feature_names = {"a"};
    t.root = std::make_unique<TreeNode>();
    t.root->counts = {2, 5, 0, 0, 0, 0};
    AnyModel m(std::move(t));
    auto bytes = serialize_model(m);

    for (size_t i = 0; i < bytes.size(); ++i) {
        Bytes corrupted = bytes;
        corrupted[i] ^= 0x01;
        EXPECT_THROW(deserialize_model(corrupted), ModelParseError) << "byte " << i;
    }
}

TEST(ModelIo, DistinctErrorsPerFailureMode) {
    TreeModel t;
    t.feature_names = {"a"};
    t.root = std::make_unique<TreeNode>();
    t.root->counts = {1, 0, 0, 0, 0, 0};
    auto bytes = serialize_model(AnyModel(std::move(t)));

    {
        Bytes bad = bytes;
        bad[0] = 'X';
        try {
            deserialize_model(bad);
            FAIL();
        } catch (const ModelParseError& e) {
            EXPECT_EQ(e.code(), ModelIoError::BadMagic);
        }
    }
    {
        Bytes bad = bytes;
        bad[4] = 9;  // version
        try {
            deserialize_model(bad);
            FAIL();
        } catch (const ModelParseError& e) {
            // CRC is checked first; flipping the version inside the CRC'd
            // region must surface as either code, never a silent pass.
            EXPECT_TRUE(e.code() == ModelIoError::VersionMismatch ||
                        e.code() == ModelIoError::CrcMismatch);
        }
    }
    {
        Bytes bad(bytes.begin(), bytes.begin() + 8);
        try {
            deserialize_model(bad);
            FAIL();
        } catch (const ModelParseError& e) {
            EXPECT_EQ(e.code(), ModelIoError::Truncated);
        }
    }
    {
        try {
            deserialize_model(bytes, {"different", "schema"});
            FAIL();
        } catch (const ModelParseError& e) {
            EXPECT_EQ(e.code(), ModelIoError::SchemaHashMismatch);
        }
    }
}

template <typename Model>
void expect_prediction_equivalence(const Model& a, const AnyModel& b, size_t n_features,
                                   uint64_t seed) {
    Rng rng(seed);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> probe(n_features);
        for (auto& v : probe) v = rng.next_double() * 20.0 - 2.0;
        auto pa = a.predict(probe.data(), probe.size());
        auto pb = b.predict(probe.data(), probe.size());
        EXPECT_EQ(pa.first, pb.first);
        for (size_t k = 0; k < kNumClasses; ++k)
            EXPECT_NEAR(pa.second[k], pb.second[k], 1e-12);
    }
}

TEST(ModelIo, TreeRoundTripPredictionEquivalence) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(400, 21, m, labels);
    auto t = train_cart(m, labels);
    AnyModel model(std::move(t));
    auto back = deserialize_model(serialize_model(model));
    expect_prediction_equivalence(model, back, 3, 500);
}

TEST(ModelIo, ForestRoundTripPredictionEquivalence) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(300, 22, m, labels);
    ForestConfig cfg;
    cfg.n_estimators = 5;
    cfg.seed = 4;
    auto f = train_forest(m, labels, cfg);
    AnyModel model(std::move(f));
    auto back = deserialize_model(serialize_model(model));
    EXPECT_EQ(back.kind(), AnyModel::Kind::Forest);
    expect_prediction_equivalence(model, back, 3, 501);
}

TEST(ModelIo, GbmRoundTripPredictionEquivalence) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(300, 23, m, labels);
    GbmConfig cfg;
    cfg.n_estimators = 4;
    auto g = train_gbm(m, labels, cfg);
    AnyModel model(std::move(g));
    auto back = deserialize_model(serialize_model(model));
    EXPECT_EQ(back.kind(), AnyModel::Kind::Gbm);
    expect_prediction_equivalence(model, back, 3, 502);
}

TEST(ModelIo, BundleCarriesEncodersAndSelection) {
    // Fit encoders on a tiny table, train on two selected columns, bundle.
    LabeledTable table;
    table.schema.assign(kFeatureColumns.begin(), kFeatureColumns.end());
    Rng rng(24);
    for (int i = 0; i < 40; ++i) {
        std::vector<std::string> row(kNumFeatures, "0");
        row[17] = std::to_string(rng.bounded(100));  // kalive
        row[23] = (i % 2) ? "MQTT" : "BAD";          // protoname
        table.rows.push_back(row);
        table.labels.push_back((i % 2) ? ClassLabel::Legitimate : ClassLabel::Malformed);
    }
    auto enc = fit_encoders(table);
    auto full = apply_encoders(enc, table);
    std::vector<size_t> selected{17, 23};
    auto reduced = select_columns(full, selected);
    auto t = train_cart(reduced, table.labels);
    AnyModel model(std::move(t));

    auto bundle_bytes = serialize_bundle(model, enc, selected);
    auto bundle = deserialize_bundle(bundle_bytes);
    EXPECT_EQ(bundle.selected, selected);
    EXPECT_EQ(bundle.encoders.schema, enc.schema);
    EXPECT_EQ(bundle.model->feature_names(),
              (std::vector<std::string>{"mqtt.kalive", "mqtt.protoname"}));

    // Encoded prediction path survives the round trip.
    for (size_t r = 0; r < reduced.n_rows; ++r) {
        auto pa = model.predict(&reduced.values[r * reduced.n_cols], reduced.n_cols);
        auto pb = bundle.model->predict(&reduced.values[r * reduced.n_cols], reduced.n_cols);
        EXPECT_EQ(pa.first, pb.first);
    }
}

TEST(ModelIo, BundleCorruptionDetected) {
    LabeledTable table;
    table.schema.assign(kFeatureColumns.begin(), kFeatureColumns.end());
    std::vector<std::string> row(kNumFeatures, "1");
    table.rows.push_back(row);
    table.labels.push_back(ClassLabel::Legitimate);
    auto enc = fit_encoders(table);
    auto full = apply_encoders(enc, table);
    auto t = train_cart(full, table.labels);
    std::vector<size_t> sel;
    for (size_t i = 0; i < 33; ++i) sel.push_back(i);
    auto bytes = serialize_bundle(AnyModel(std::move(t)), enc, sel);

    Rng rng(25);
    for (int trial = 0; trial < 200; ++trial) {
        Bytes bad = bytes;
        size_t pos = static_cast<size_t>(rng.bounded(bad.size()));
        bad[pos] ^= static_cast<uint8_t>(1u << rng.bounded(8));
        EXPECT_THROW(deserialize_bundle(bad), ModelParseError) << "pos " << pos;
    }
}

}  // namespace
