#include <gtest/gtest.h>

#include "mqsec/metrics.hpp"
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

TEST(Evaluate, PerfectSixRowSet) {
    // One row per class, feature == class index; a memorizing tree nails it.
    std::vector<std::vector<double>> rows;
    std::vector<ClassLabel> labels;
    for (int c = 0; c < kNumClasses; ++c) {
        rows.push_back({static_cast<double>(c)});
        labels.push_back(static_cast<ClassLabel>(c));
    }
    auto m = matrix_of(rows);
    auto t = train_cart(m, labels);
    auto met = evaluate(t, m, labels);
    EXPECT_DOUBLE_EQ(met.accuracy, 1.0);
    for (size_t c = 0; c < kNumClasses; ++c) {
        ASSERT_TRUE(met.auc[c].has_value());
        EXPECT_DOUBLE_EQ(*met.auc[c], 1.0);
    }
    EXPECT_DOUBLE_EQ(met.macro_f1, 1.0);
}

// Hand-checked two-class confusion arithmetic embedded in the 6-class
// layout: confusion [[2,1],[0,3]] -> accuracy 5/6, precision_A = 1.0,
// recall_A = 2/3.
struct FixedModel {
    // Predicts class B (Malformed) when feature>=1, else A (Legitimate).
    std::pair<ClassLabel, ProbVector> predict(const double* row, size_t) const {
        ProbVector p{};
        if (row[0] >= 1.0) {
            p[1] = 1.0;
            return {ClassLabel::Malformed, p};
        }
        p[0] = 1.0;
        return {ClassLabel::Legitimate, p};
    }
};

TEST(Evaluate, HandArithmeticConfusionCase) {
    // True A rows: features 0,0,1 (predictions A,A,B) -> [2,1]
    // True B rows: features 1,1,1 (predictions B,B,B) -> [0,3]
    auto m = matrix_of({{0}, {0}, {1}, {1}, {1}, {1}});
    std::vector<ClassLabel> labels{ClassLabel::Legitimate, ClassLabel::Legitimate,
                                   ClassLabel::Legitimate, ClassLabel::Malformed,
                                   ClassLabel::Malformed, ClassLabel::Malformed};
    FixedModel fm;
    auto met = evaluate(fm, m, labels);
    EXPECT_NEAR(met.accuracy, 5.0 / 6.0, 1e-12);
    // precision_A: predicted A twice, both truly A.
    uint64_t pred_a = met.confusion[0][0] + met.confusion[1][0];
    EXPECT_EQ(pred_a, 2u);
    EXPECT_EQ(met.confusion[0][0], 2u);
    // recall_A = 2/3.
    EXPECT_EQ(met.class_support(0), 3u);
    double recall_a =
        static_cast<double>(met.confusion[0][0]) / static_cast<double>(met.class_support(0));
    EXPECT_NEAR(recall_a, 2.0 / 3.0, 1e-12);
    // Row sums equal per-class support; accuracy == trace/total.
    uint64_t trace = 0, total = 0;
    for (size_t i = 0; i < kNumClasses; ++i)
        for (size_t j = 0; j < kNumClasses; ++j) {
            total += met.confusion[i][j];
            if (i == j) trace += met.confusion[i][j];
        }
    EXPECT_EQ(total, 6u);
    EXPECT_NEAR(met.accuracy, static_cast<double>(trace) / static_cast<double>(total), 1e-12);
}

TEST(Evaluate, AbsentClassAucUndefined) {
    auto m = matrix_of({{0}, {1}});
    std::vector<ClassLabel> labels{ClassLabel::Legitimate, ClassLabel::Legitimate};
    FixedModel fm;
    auto met = evaluate(fm, m, labels);
    EXPECT_FALSE(met.auc[static_cast<size_t>(ClassLabel::Flood)].has_value());
    ASSERT_TRUE(met.auc[0].has_value() == false);  // only one class present: no negatives
}

TEST(Evaluate, EmptyTestRejected) {
    EncodedMatrix m;
    std::vector<ClassLabel> labels;
    FixedModel fm;
    EXPECT_THROW(evaluate(fm, m, labels), std::runtime_error);
}

TEST(RankAuc, KnownSmallCases) {
    // Perfect separation.
    EXPECT_DOUBLE_EQ(*rank_auc({0.1, 0.2, 0.8, 0.9}, {false, false, true, true}), 1.0);
    // Perfectly wrong.
    EXPECT_DOUBLE_EQ(*rank_auc({0.9, 0.8, 0.2, 0.1}, {false, false, true, true}), 0.0);
    // All tied: 0.5 by the average-rank convention.
    EXPECT_DOUBLE_EQ(*rank_auc({0.5, 0.5, 0.5, 0.5}, {false, true, false, true}), 0.5);
    // Hand case: scores pos {0.8, 0.4}, neg {0.6, 0.2}:
    // pairs: (0.8>0.6),(0.8>0.2),(0.4<0.6),(0.4>0.2) -> 3/4.
    EXPECT_DOUBLE_EQ(*rank_auc({0.8, 0.4, 0.6, 0.2}, {true, true, false, false}), 0.75);
}

TEST(RankAuc, MatchesPairCountingOracleWithTies) {
    Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        size_t n = 5 + rng.bounded(40);
        std::vector<double> scores(n);
        std::vector<bool> pos(n);
        bool any_pos = false, any_neg = false;
        for (size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.bounded(5)) / 4.0;  // force ties
            pos[i] = rng.bounded(2) == 1;
            (pos[i] ? any_pos : any_neg) = true;
        }
        auto got = rank_auc(scores, pos);
        if (!any_pos || !any_neg) {
            EXPECT_FALSE(got.has_value());
            continue;
        }
        // Oracle: direct pair counting with half-credit ties.
        double wins = 0, pairs = 0;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                if (!pos[i] || pos[j]) continue;
                pairs += 1;
                if (scores[i] > scores[j]) wins += 1;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        ASSERT_TRUE(got.has_value());
        EXPECT_NEAR(*got, wins / pairs, 1e-12);
    }
}

TEST(ReportFormat, ContainsAllSixAucRows) {
    Metrics m;
    m.auc[0] = 0.99;
    auto text = format_metrics(m, "dt");
    for (int c = 0; c < kNumClasses; ++c) {
        std::string key = std::string("auc_") + class_name(static_cast<ClassLabel>(c));
        EXPECT_NE(text.find(key), std::string::npos) << key;
    }
    EXPECT_NE(text.find("undefined"), std::string::npos);
}

}  // namespace
