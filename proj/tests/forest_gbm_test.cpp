#include <gtest/gtest.h>

#include "mqsec/forest.hpp"
#include "mqsec/gbm.hpp"
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

// Small separable-ish multiclass set used across the suite.
void make_blobs(size_t n, uint64_t seed, EncodedMatrix& m, std::vector<ClassLabel>& labels) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    labels.clear();
    for (size_t i = 0; i < n; ++i) {
        auto cls = static_cast<size_t>(rng.bounded(6));
        double cx = static_cast<double>(cls) * 3.0;
        rows.push_back({cx + rng.next_gauss() * 0.7, cx - rng.next_gauss() * 0.7,
                        rng.next_double()});
        labels.push_back(static_cast<ClassLabel>(cls));
    }
    m = matrix_of(rows);
}

TEST(Forest, DegenerateForestEqualsCart) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(300, 11, m, labels);

    ForestConfig cfg;
    cfg.n_estimators = 1;
    cfg.bootstrap = false;
    cfg.features_per_split = SIZE_MAX;  // all features
    cfg.seed = 5;
    auto forest = train_forest(m, labels, cfg);
    auto cart = train_cart(m, labels);

    Rng rng(77);
    for (int i = 0; i < 300; ++i) {
        double probe[3] = {rng.next_double() * 18, rng.next_double() * 18,
                           rng.next_double()};
        auto fp = forest.predict(probe, 3);
        auto cp = cart.predict(probe, 3);
        EXPECT_EQ(fp.first, cp.first);
        for (size_t k = 0; k < kNumClasses; ++k)
            EXPECT_NEAR(fp.second[k], cp.second[k], 1e-12);
    }
}

TEST(Forest, DeterministicForSameSeed) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(400, 12, m, labels);

    ForestConfig cfg;
    cfg.n_estimators = 7;
    cfg.seed = 999;
    cfg.n_threads = 2;  // determinism must hold regardless of scheduling
    auto a = train_forest(m, labels, cfg);
    cfg.n_threads = 1;
    auto b = train_forest(m, labels, cfg);

    Rng rng(78);
    for (int i = 0; i < 200; ++i) {
        double probe[3] = {rng.next_double() * 18, rng.next_double() * 18,
                           rng.next_double()};
        auto pa = a.predict(probe, 3);
        auto pb = b.predict(probe, 3);
        EXPECT_EQ(pa.first, pb.first);
        for (size_t k = 0; k < kNumClasses; ++k)
            EXPECT_NEAR(pa.second[k], pb.second[k], 0);
    }
}

TEST(Forest, ProbabilitiesNormalized) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(200, 13, m, labels);
    ForestConfig cfg;
    cfg.n_estimators = 5;
    cfg.seed = 3;
    auto f = train_forest(m, labels, cfg);
    Rng rng(79);
    for (int i = 0; i < 100; ++i) {
        double probe[3] = {rng.next_double() * 18, rng.next_double() * 18,
                           rng.next_double()};
        auto p = f.predict(probe, 3).second;
        double sum = 0;
        for (double v : p) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(Forest, RejectsZeroEstimatorsAndEmptyInput) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(50, 14, m, labels);
    ForestConfig cfg;
    cfg.n_estimators = 0;
    EXPECT_THROW(train_forest(m, labels, cfg), std::runtime_error);
    EncodedMatrix empty;
    std::vector<ClassLabel> no_labels;
    EXPECT_THROW(train_forest(empty, no_labels, ForestConfig{}), std::runtime_error);
}

TEST(Gbm, EstimatorCapEnforced) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(60, 15, m, labels);
    GbmConfig cfg;
    cfg.n_estimators = 21;
    EXPECT_THROW(train_gbm(m, labels, cfg), std::runtime_error);
    cfg.n_estimators = 0;
    EXPECT_THROW(train_gbm(m, labels, cfg), std::runtime_error);
}

TEST(Gbm, ZeroStagesPredictClassPriors) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(300, 16, m, labels);
    GbmConfig cfg;
    cfg.n_estimators = 1;
    auto g = train_gbm(m, labels, cfg);

    // Stage-0 scores are the initial log-odds: softmax must equal priors.
    std::array<double, kNumClasses> prior{};
    for (auto l : labels) prior[static_cast<size_t>(l)] += 1.0;
    for (auto& v : prior) v /= static_cast<double>(labels.size());

    double probe[3] = {0, 0, 0};
    auto scores = g.decision_scores(probe, 0);
    auto p = GbmModel::softmax(scores);
    for (size_t k = 0; k < kNumClasses; ++k) EXPECT_NEAR(p[k], prior[k], 1e-9);
}

TEST(Gbm, TrainingDevianceNonIncreasing) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(500, 17, m, labels);
    GbmConfig cfg;
    cfg.n_estimators = 10;
    auto g = train_gbm(m, labels, cfg);

    // Oracle: recompute mean multinomial deviance per stage prefix.
    double prev = multinomial_deviance(g, m, labels, 0);
    for (size_t s = 1; s <= g.stages.size(); ++s) {
        double cur = multinomial_deviance(g, m, labels, s);
        EXPECT_LE(cur, prev + 1e-9) << "stage " << s;
        prev = cur;
    }
    // And it actually learned something.
    EXPECT_LT(prev, multinomial_deviance(g, m, labels, 0));
}

TEST(Gbm, ProbabilitiesNormalizedAndAccurateOnBlobs) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(600, 18, m, labels);
    GbmConfig cfg;
    cfg.n_estimators = 15;
    auto g = train_gbm(m, labels, cfg);

    size_t correct = 0;
    for (size_t r = 0; r < m.n_rows; ++r) {
        auto [label, p] = g.predict(&m.values[r * m.n_cols], m.n_cols);
        double sum = 0;
        for (double v : p) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-9);
        if (label == labels[r]) ++correct;
    }
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(m.n_rows), 0.9);
}

TEST(Gbm, DeterministicForSameConfig) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    make_blobs(300, 19, m, labels);
    GbmConfig cfg;
    cfg.n_estimators = 5;
    auto a = train_gbm(m, labels, cfg);
    auto b = train_gbm(m, labels, cfg);
    Rng rng(80);
    for (int i = 0; i < 100; ++i) {
        double probe[3] = {rng.next_double() * 18, rng.next_double() * 18,
                           rng.next_double()};
        auto pa = a.predict(probe, 3);
        auto pb = b.predict(probe, 3);
        EXPECT_EQ(pa.first, pb.first);
        for (size_t k = 0; k < kNumClasses; ++k)
            EXPECT_EQ(pa.second[k], pb.second[k]);
    }
}

}  // namespace
