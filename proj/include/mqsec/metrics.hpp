#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mqsec/forest.hpp"
#include "mqsec/gbm.hpp"
#include "mqsec/tree.hpp"

namespace mqsec {

struct Metrics {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    double weighted_precision = 0.0;
    double weighted_recall = 0.0;
    double weighted_f1 = 0.0;
    // One-vs-rest AUC per class; nullopt when the class is absent from the
    // test set (undefined, reported as such).
    std::array<std::optional<double>, kNumClasses> auc{};
    std::array<std::array<uint64_t, kNumClasses>, kNumClasses> confusion{};  // [true][pred]
    double train_time_s = 0.0;
    double test_time_s = 0.0;
    double prediction_time_per_packet_s = 0.0;
    size_t model_size_bytes = 0;
    size_t n_test = 0;

    uint64_t class_support(size_t c) const {
        uint64_t s = 0;
        for (size_t j = 0; j < kNumClasses; ++j) s += confusion[c][j];
        return s;
    }
};

// Mann-Whitney rank AUC with average-rank tie handling.
// scores: predicted probability of the class; positives: ground truth.
inline std::optional<double> rank_auc(const std::vector<double>& scores,
                                      const std::vector<bool>& positives) {
    size_t n_pos = 0;
    for (bool p : positives) n_pos += p ? 1 : 0;
    size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<uint32_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<uint32_t>(i);
    std::sort(order.begin(), order.end(),
              [&](uint32_t a, uint32_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (positives[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// Any of the three model kinds behind one prediction surface.
class AnyModel {
public:
    enum class Kind : uint8_t { Tree = 0, Forest = 1, Gbm = 2 };

    explicit AnyModel(TreeModel t) : kind_(Kind::Tree), tree_(std::move(t)) {}
    explicit AnyModel(ForestModel f) : kind_(Kind::Forest), forest_(std::move(f)) {}
    explicit AnyModel(GbmModel g) : kind_(Kind::Gbm), gbm_(std::move(g)) {}

    // Schema hash as read from a serialized stream; empty for freshly
    // trained models (recomputed from feature names on serialization).
    const std::array<uint8_t, 32>& stored_schema_hash() const { return stored_hash_; }
    bool has_stored_schema_hash() const { return has_stored_hash_; }
    void set_stored_schema_hash(const std::array<uint8_t, 32>& h) {
        stored_hash_ = h;
        has_stored_hash_ = true;
    }

    Kind kind() const { return kind_; }
    const TreeModel& tree() const { return tree_; }
    const ForestModel& forest() const { return forest_; }
    const GbmModel& gbm() const { return gbm_; }

    const std::vector<std::string>& feature_names() const {
        switch (kind_) {
            case Kind::Tree: return tree_.feature_names;
            case Kind::Forest: return forest_.feature_names;
            case Kind::Gbm: return gbm_.feature_names;
        }
        throw std::logic_error("bad model kind");
    }

    void set_feature_names(const std::vector<std::string>& names) {
        switch (kind_) {
            case Kind::Tree:
                tree_.feature_names = names;
                return;
            case Kind::Forest:
                forest_.feature_names = names;
                for (auto& t : forest_.trees) t.feature_names = names;
                return;
            case Kind::Gbm:
                gbm_.feature_names = names;
                return;
        }
    }

    std::pair<ClassLabel, ProbVector> predict(const double* row, size_t n) const {
        switch (kind_) {
            case Kind::Tree: return tree_.predict(row, n);
            case Kind::Forest: return forest_.predict(row, n);
            case Kind::Gbm: return gbm_.predict(row, n);
        }
        throw std::logic_error("bad model kind");
    }

private:
    Kind kind_;
    TreeModel tree_;
    ForestModel forest_;
    GbmModel gbm_;
    std::array<uint8_t, 32> stored_hash_{};
    bool has_stored_hash_ = false;
};

template <typename Model>
Metrics evaluate(const Model& model, const EncodedMatrix& test,
                 const std::vector<ClassLabel>& labels) {
    if (test.n_rows == 0) throw std::runtime_error("cannot evaluate on an empty set");

    Metrics met;
    met.n_test = test.n_rows;
    std::vector<ProbVector> probs(test.n_rows);
    std::vector<ClassLabel> preds(test.n_rows);

    auto t0 = std::chrono::steady_clock::now();
    for (size_t r = 0; r < test.n_rows; ++r) {
        auto [label, p] = model.predict(&test.values[r * test.n_cols], test.n_cols);
        preds[r] = label;
        probs[r] = p;
    }
    auto t1 = std::chrono::steady_clock::now();
    met.test_time_s = std::chrono::duration<double>(t1 - t0).count();
    met.prediction_time_per_packet_s = met.test_time_s / static_cast<double>(test.n_rows);

    uint64_t correct = 0;
    for (size_t r = 0; r < test.n_rows; ++r) {
        met.confusion[static_cast<size_t>(labels[r])][static_cast<size_t>(preds[r])]++;
        if (preds[r] == labels[r]) ++correct;
    }
    met.accuracy = static_cast<double>(correct) / static_cast<double>(test.n_rows);

    // Macro = unweighted mean over the six classes (absent classes skipped);
    // weighted = support-weighted mean.
    double macro_p = 0, macro_r = 0, macro_f = 0;
    double wsum_p = 0, wsum_r = 0, wsum_f = 0;
    size_t present = 0;
    uint64_t total_support = 0;
    for (size_t c = 0; c < kNumClasses; ++c) {
        uint64_t tp = met.confusion[c][c];
        uint64_t support = met.class_support(c);
        uint64_t pred_as_c = 0;
        for (size_t t = 0; t < kNumClasses; ++t) pred_as_c += met.confusion[t][c];
        if (support == 0) continue;
        ++present;
        total_support += support;
        double prec = pred_as_c ? static_cast<double>(tp) / static_cast<double>(pred_as_c) : 0.0;
        double rec = static_cast<double>(tp) / static_cast<double>(support);
        double f1 = (prec + rec > 0) ? 2 * prec * rec / (prec + rec) : 0.0;
        macro_p += prec;
        macro_r += rec;
        macro_f += f1;
        wsum_p += prec * static_cast<double>(support);
        wsum_r += rec * static_cast<double>(support);
        wsum_f += f1 * static_cast<double>(support);
    }
    if (present) {
        met.macro_precision = macro_p / static_cast<double>(present);
        met.macro_recall = macro_r / static_cast<double>(present);
        met.macro_f1 = macro_f / static_cast<double>(present);
        met.weighted_precision = wsum_p / static_cast<double>(total_support);
        met.weighted_recall = wsum_r / static_cast<double>(total_support);
        met.weighted_f1 = wsum_f / static_cast<double>(total_support);
    }

    for (size_t c = 0; c < kNumClasses; ++c) {
        std::vector<double> scores(test.n_rows);
        std::vector<bool> pos(test.n_rows);
        for (size_t r = 0; r < test.n_rows; ++r) {
            scores[r] = probs[r][c];
            pos[r] = (static_cast<size_t>(labels[r]) == c);
        }
        met.auc[c] = rank_auc(scores, pos);
    }
    return met;
}

// Plain-text report mirroring the usual per-classifier metric tables.
inline std::string format_metrics(const Metrics& m, const std::string& algo) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "algorithm          " << algo << "\n";
    os << "accuracy           " << m.accuracy << "\n";
    os << "precision_macro    " << m.macro_precision << "\n";
    os << "recall_macro       " << m.macro_recall << "\n";
    os << "f1_macro           " << m.macro_f1 << "\n";
    os << "precision_weighted " << m.weighted_precision << "\n";
    os << "recall_weighted    " << m.weighted_recall << "\n";
    os << "f1_weighted        " << m.weighted_f1 << "\n";
    for (size_t c = 0; c < kNumClasses; ++c) {
        os << "auc_" << class_name(static_cast<ClassLabel>(c)) << "  ";
        if (m.auc[c]) os << *m.auc[c];
        else os << "undefined";
        os << "\n";
    }
    os.precision(6);
    os << "train_time_s       " << m.train_time_s << "\n";
    os << "test_time_s        " << m.test_time_s << "\n";
    os << "prediction_time_ms " << m.prediction_time_per_packet_s * 1e3 << "\n";
    os << "model_size_bytes   " << m.model_size_bytes << "\n";
    os << "confusion_matrix (rows=true, cols=predicted)\n";
    for (size_t t = 0; t < kNumClasses; ++t) {
        os << "  " << class_name(static_cast<ClassLabel>(t)) << ":";
        for (size_t p = 0; p < kNumClasses; ++p) os << ' ' << m.confusion[t][p];
        os << "\n";
    }
    return os.str();
}

}  // namespace mqsec
