#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mqsec/dataset.hpp"
#include "mqsec/schema.hpp"
#include "mqsec/tree.hpp"

namespace mqsec {

inline constexpr size_t kGbmMaxEstimators = 20;

// Regression tree used for the boosting stages (MSE splits, f64 leaves).
struct RegNode {
    bool is_leaf = true;
    uint32_t feature = 0;
    double threshold = 0.0;
    std::unique_ptr<RegNode> left, right;
    double value = 0.0;

    double eval(const double* row) const {
        const RegNode* n = this;
        while (!n->is_leaf)
            n = (row[n->feature] <= n->threshold) ? n->left.get() : n->right.get();
        return n->value;
    }
};

struct RegTree {
    std::unique_ptr<RegNode> root;
    double eval(const double* row) const { return root->eval(row); }
};

struct GbmConfig {
    size_t n_estimators = 20;  // hard cap kGbmMaxEstimators
    double learning_rate = 0.1;
    int max_depth = 3;
    size_t min_samples_split = 2;
    uint64_t seed = 0;
};

// Multinomial deviance boosting: one regression tree per class per stage,
// fitted to the softmax residuals; scores combine additively.
struct GbmModel {
    std::vector<std::array<RegTree, kNumClasses>> stages;
    std::array<double, kNumClasses> base_score{};  // initial log-odds
    double learning_rate = 0.1;
    std::vector<std::string> feature_names;
    GbmConfig config;

    std::array<double, kNumClasses> decision_scores(const double* row,
                                                    size_t up_to_stage) const {
        auto f = base_score;
        for (size_t s = 0; s < up_to_stage && s < stages.size(); ++s)
            for (size_t k = 0; k < kNumClasses; ++k)
                f[k] += learning_rate * stages[s][k].eval(row);
        return f;
    }

    std::pair<ClassLabel, ProbVector> predict(const double* row, size_t n) const {
        if (n != feature_names.size())
            throw std::runtime_error("feature vector length does not match model");
        auto f = decision_scores(row, stages.size());
        ProbVector p = softmax(f);
        size_t best = 0;
        for (size_t i = 1; i < kNumClasses; ++i)
            if (p[i] > p[best]) best = i;
        return {static_cast<ClassLabel>(best), p};
    }

    static ProbVector softmax(const std::array<double, kNumClasses>& f) {
        double mx = f[0];
        for (double v : f) mx = std::max(mx, v);
        ProbVector p{};
        double sum = 0.0;
        for (size_t i = 0; i < kNumClasses; ++i) {
            p[i] = std::exp(f[i] - mx);
            sum += p[i];
        }
        for (auto& v : p) v /= sum;
        return p;
    }
};

namespace detail {

struct RegGrowCtx {
    const EncodedMatrix& m;
    const std::vector<double>& targets;   // residuals
    const std::vector<double>& abs_term;  // |r|(1-|r|) per row, for leaf values
    int max_depth;
    size_t min_samples_split;
    std::vector<std::pair<double, double>> scratch;  // (value, target)
};

// Newton-step leaf value for multinomial deviance.
inline double gbm_leaf_value(const RegGrowCtx& ctx, const uint32_t* rows, size_t n) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < n; ++i) {
        num += ctx.targets[rows[i]];
        den += ctx.abs_term[rows[i]];
    }
    if (den < 1e-150) return 0.0;
    constexpr double k = static_cast<double>(kNumClasses);
    return (k - 1.0) / k * num / den;
}

inline std::unique_ptr<RegNode> grow_reg(RegGrowCtx& ctx, uint32_t* rows, size_t n,
                                         int depth) {
    auto node = std::make_unique<RegNode>();
    node->value = gbm_leaf_value(ctx, rows, n);
    if (n < ctx.min_samples_split || (ctx.max_depth >= 0 && depth >= ctx.max_depth))
        return node;

    // Best MSE split: maximize sum_of_squares gain, midpoint thresholds,
    // ties toward lowest feature index then lowest threshold.
    double sum_all = 0.0;
    for (size_t i = 0; i < n; ++i) sum_all += ctx.targets[rows[i]];

    struct Best {
        double gain = 0.0;
        uint32_t feature = 0;
        double threshold = 0.0;
    };
    std::optional<Best> best;

    auto& vals = ctx.scratch;
    for (uint32_t f = 0; f < ctx.m.n_cols; ++f) {
        vals.clear();
        vals.reserve(n);
        for (size_t i = 0; i < n; ++i)
            vals.emplace_back(ctx.m.at(rows[i], f), ctx.targets[rows[i]]);
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        if (vals.front().first == vals.back().first) continue;

        double sum_left = 0.0;
        for (size_t i = 0; i + 1 < n; ++i) {
            sum_left += vals[i].second;
            if (vals[i].first == vals[i + 1].first) continue;
            double nl = static_cast<double>(i + 1);
            double nr = static_cast<double>(n - i - 1);
            double sr = sum_all - sum_left;
            double gain = sum_left * sum_left / nl + sr * sr / nr -
                          sum_all * sum_all / static_cast<double>(n);
            if (gain > 1e-12 && (!best || gain > best->gain + 1e-12)) {
                double thr = vals[i].first + (vals[i + 1].first - vals[i].first) / 2.0;
                if (thr >= vals[i + 1].first) thr = vals[i].first;
                best = Best{gain, f, thr};
            }
        }
    }
    if (!best) return node;

    uint32_t* mid = std::partition(rows, rows + n, [&](uint32_t r) {
        return ctx.m.at(r, best->feature) <= best->threshold;
    });
    size_t nl = static_cast<size_t>(mid - rows);
    if (nl == 0 || nl == n) return node;

    node->is_leaf = false;
    node->feature = best->feature;
    node->threshold = best->threshold;
    node->left = grow_reg(ctx, rows, nl, depth + 1);
    node->right = grow_reg(ctx, mid, n - nl, depth + 1);
    return node;
}

}  // namespace detail

// Mean multinomial deviance of scores vs labels; the per-stage training
// loss that must not increase.
inline double multinomial_deviance(const GbmModel& model, const EncodedMatrix& m,
                                   const std::vector<ClassLabel>& labels,
                                   size_t up_to_stage) {
    double loss = 0.0;
    for (size_t r = 0; r < m.n_rows; ++r) {
        auto f = model.decision_scores(&m.values[r * m.n_cols], up_to_stage);
        auto p = GbmModel::softmax(f);
        double py = std::max(p[static_cast<size_t>(labels[r])], 1e-300);
        loss -= std::log(py);
    }
    return loss / static_cast<double>(m.n_rows);
}

inline GbmModel train_gbm(const EncodedMatrix& train, const std::vector<ClassLabel>& labels,
                          const GbmConfig& cfg = {}) {
    if (train.n_rows == 0) throw std::runtime_error("cannot train on an empty matrix");
    if (cfg.n_estimators < 1 || cfg.n_estimators > kGbmMaxEstimators)
        throw std::runtime_error("n_estimators must be in [1, " +
                                 std::to_string(kGbmMaxEstimators) + "]");

    const size_t n = train.n_rows;
    GbmModel model;
    model.feature_names = train.column_names;
    model.config = cfg;
    model.learning_rate = cfg.learning_rate;

    // Initial scores: log of class priors (floored so empty classes stay finite).
    std::array<double, kNumClasses> prior{};
    for (auto l : labels) prior[static_cast<size_t>(l)] += 1.0;
    for (auto& v : prior) v = std::max(v / static_cast<double>(n), 1e-12);
    for (size_t k = 0; k < kNumClasses; ++k) model.base_score[k] = std::log(prior[k]);

    // Current additive scores per row.
    std::vector<std::array<double, kNumClasses>> scores(n);
    for (auto& s : scores) s = model.base_score;

    std::vector<double> residuals(n), abs_term(n);
    std::vector<uint32_t> rows(n);

    for (size_t stage = 0; stage < cfg.n_estimators; ++stage) {
        std::array<RegTree, kNumClasses> stage_trees;
        // Probabilities from current scores, fixed for the whole stage.
        std::vector<ProbVector> probs(n);
        for (size_t r = 0; r < n; ++r) probs[r] = GbmModel::softmax(scores[r]);

        for (size_t k = 0; k < kNumClasses; ++k) {
            for (size_t r = 0; r < n; ++r) {
                double y = (static_cast<size_t>(labels[r]) == k) ? 1.0 : 0.0;
                double res = y - probs[r][k];
                residuals[r] = res;
                abs_term[r] = std::abs(res) * (1.0 - std::abs(res));
            }
            std::iota(rows.begin(), rows.end(), 0u);
            detail::RegGrowCtx ctx{train, residuals, abs_term, cfg.max_depth,
                                   cfg.min_samples_split};
            stage_trees[k].root = detail::grow_reg(ctx, rows.data(), n, 0);
            for (size_t r = 0; r < n; ++r)
                scores[r][k] += cfg.learning_rate *
                                stage_trees[k].eval(&train.values[r * train.n_cols]);
        }
        model.stages.push_back(std::move(stage_trees));
    }
    return model;
}

}  // namespace mqsec
