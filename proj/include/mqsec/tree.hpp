#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqsec/dataset.hpp"
#include "mqsec/rng.hpp"
#include "mqsec/schema.hpp"

namespace mqsec {

using ProbVector = std::array<double, kNumClasses>;
using CountVector = std::array<uint64_t, kNumClasses>;

// Gini impurity 1 - sum(p_i^2) over the six classes.
inline double gini(const CountVector& counts) {
    uint64_t total = 0;
    for (auto c : counts) total += c;
    if (total == 0) throw std::runtime_error("gini of an empty node");
    double acc = 0.0;
    for (auto c : counts) {
        double p = static_cast<double>(c) / static_cast<double>(total);
        acc += p * p;
    }
    return 1.0 - acc;
}

// Classification tree node. Leaves keep the raw class counts so predicted
// probabilities and serialization fall out of one representation.
struct TreeNode {
    bool is_leaf = true;
    // internal
    uint32_t feature = 0;
    double threshold = 0.0;  // value <= threshold goes left
    std::unique_ptr<TreeNode> left, right;
    // leaf
    CountVector counts{};

    ClassLabel predicted() const {
        size_t best = 0;
        for (size_t i = 1; i < kNumClasses; ++i)
            if (counts[i] > counts[best]) best = i;  // ties -> lowest index
        return static_cast<ClassLabel>(best);
    }
    ProbVector probabilities() const {
        uint64_t total = 0;
        for (auto c : counts) total += c;
        ProbVector p{};
        if (total == 0) return p;
        for (size_t i = 0; i < kNumClasses; ++i)
            p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
        return p;
    }
};

struct Split {
    uint32_t feature = 0;
    double threshold = 0.0;
    double impurity_decrease = 0.0;
};

struct TrainMeta {
    uint64_t seed = 0;
    int max_depth = -1;  // -1: grow until pure / unsplittable
    size_t min_samples_split = 2;
    std::string split_rule = "gini";
};

struct TreeModel {
    std::unique_ptr<TreeNode> root;
    std::vector<std::string> feature_names;
    TrainMeta meta;

    size_t node_count() const {
        size_t n = 0;
        count_nodes(root.get(), n);
        return n;
    }
    size_t depth() const { return node_depth(root.get()); }

    std::pair<ClassLabel, ProbVector> predict(const double* row, size_t n) const {
        if (n != feature_names.size())
            throw std::runtime_error("feature vector length " + std::to_string(n) +
                                     " does not match model (" +
                                     std::to_string(feature_names.size()) + ")");
        const TreeNode* node = root.get();
        while (!node->is_leaf)
            node = (row[node->feature] <= node->threshold) ? node->left.get()
                                                           : node->right.get();
        return {node->predicted(), node->probabilities()};
    }

private:
    static void count_nodes(const TreeNode* n, size_t& acc) {
        if (!n) return;
        ++acc;
        count_nodes(n->left.get(), acc);
        count_nodes(n->right.get(), acc);
    }
    static size_t node_depth(const TreeNode* n) {
        if (!n || n->is_leaf) return 0;
        return 1 + std::max(node_depth(n->left.get()), node_depth(n->right.get()));
    }
};

namespace detail {

struct SortScratch {
    std::vector<std::pair<double, uint8_t>> vals;  // (value, label)
};

// Best Gini split over the given rows and candidate features.
// Thresholds are midpoints between consecutive distinct sorted values.
// Ties in impurity decrease break toward the lowest feature index, then
// the lowest threshold, so training is deterministic.
//
// allow_zero_gain: the grower keeps splitting impure nodes even when no
// split strictly reduces impurity (the XOR case); the public best_split
// contract returns nullopt there instead.
inline std::optional<Split> best_split_rows(const EncodedMatrix& m,
                                            const std::vector<ClassLabel>& labels,
                                            const uint32_t* rows, size_t n_rows,
                                            const std::vector<uint32_t>& features,
                                            SortScratch& scratch,
                                            bool allow_zero_gain = false) {
    if (n_rows < 2) return std::nullopt;

    CountVector total_counts{};
    for (size_t i = 0; i < n_rows; ++i)
        total_counts[static_cast<size_t>(labels[rows[i]])]++;
    const double parent_impurity = gini(total_counts);
    if (parent_impurity == 0.0) return std::nullopt;

    const double n_total = static_cast<double>(n_rows);
    std::optional<Split> best;

    auto& vals = scratch.vals;
    for (uint32_t f : features) {
        vals.clear();
        vals.reserve(n_rows);
        for (size_t i = 0; i < n_rows; ++i)
            vals.emplace_back(m.at(rows[i], f),
                              static_cast<uint8_t>(labels[rows[i]]));
        std::sort(vals.begin(), vals.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        if (vals.front().first == vals.back().first) continue;  // constant feature

        CountVector left{};
        uint64_t n_left = 0;
        for (size_t i = 0; i + 1 < n_rows; ++i) {
            left[vals[i].second]++;
            ++n_left;
            if (vals[i].first == vals[i + 1].first) continue;

            double wl = static_cast<double>(n_left) / n_total;
            double gl = 0.0, gr = 0.0;
            {
                double accl = 0.0, accr = 0.0;
                const double nl = static_cast<double>(n_left);
                const double nr = n_total - nl;
                for (size_t k = 0; k < kNumClasses; ++k) {
                    double cl = static_cast<double>(left[k]);
                    double cr = static_cast<double>(total_counts[k]) - cl;
                    accl += (cl / nl) * (cl / nl);
                    accr += (cr / nr) * (cr / nr);
                }
                gl = 1.0 - accl;
                gr = 1.0 - accr;
            }
            double decrease = parent_impurity - (wl * gl + (1.0 - wl) * gr);
            if (std::abs(decrease) < 1e-12) decrease = 0.0;
            double threshold = vals[i].first + (vals[i + 1].first - vals[i].first) / 2.0;
            // Guard against midpoint rounding onto the upper value.
            if (threshold >= vals[i + 1].first) threshold = vals[i].first;

            if (decrease > 1e-15 || (allow_zero_gain && decrease == 0.0)) {
                bool better = !best || decrease > best->impurity_decrease + 1e-15;
                if (better) best = Split{f, threshold, decrease};
            }
        }
    }
    return best;
}

struct GrowContext {
    const EncodedMatrix& m;
    const std::vector<ClassLabel>& labels;
    int max_depth;
    size_t min_samples_split;
    // When nonempty-capable, a per-split random feature subset is drawn
    // (random forest mode); otherwise all features are candidates.
    size_t features_per_split = 0;  // 0: all
    Rng* rng = nullptr;
    SortScratch scratch;
    std::vector<uint32_t> all_features;
};

inline std::unique_ptr<TreeNode> grow(GrowContext& ctx, uint32_t* rows, size_t n_rows,
                                      int depth) {
    auto node = std::make_unique<TreeNode>();
    for (size_t i = 0; i < n_rows; ++i)
        node->counts[static_cast<size_t>(ctx.labels[rows[i]])]++;

    bool pure = false;
    for (auto c : node->counts)
        if (c == static_cast<uint64_t>(n_rows)) pure = true;
    if (pure || n_rows < ctx.min_samples_split ||
        (ctx.max_depth >= 0 && depth >= ctx.max_depth))
        return node;

    std::optional<Split> split;
    if (ctx.features_per_split > 0 && ctx.rng &&
        ctx.features_per_split < ctx.all_features.size()) {
        // Sample without replacement; retry with all features only if the
        // subset found nothing (scikit-style fallback keeps trees growable).
        std::vector<uint32_t> pool = ctx.all_features;
        std::vector<uint32_t> subset;
        for (size_t i = 0; i < ctx.features_per_split; ++i) {
            size_t j = i + static_cast<size_t>(ctx.rng->bounded(pool.size() - i));
            std::swap(pool[i], pool[j]);
            subset.push_back(pool[i]);
        }
        std::sort(subset.begin(), subset.end());
        split = best_split_rows(ctx.m, ctx.labels, rows, n_rows, subset, ctx.scratch,
                                /*allow_zero_gain=*/true);
        if (!split)
            split = best_split_rows(ctx.m, ctx.labels, rows, n_rows, ctx.all_features,
                                    ctx.scratch, /*allow_zero_gain=*/true);
    } else {
        split = best_split_rows(ctx.m, ctx.labels, rows, n_rows, ctx.all_features,
                                ctx.scratch, /*allow_zero_gain=*/true);
    }
    if (!split) return node;

    uint32_t* mid = std::partition(rows, rows + n_rows, [&](uint32_t r) {
        return ctx.m.at(r, split->feature) <= split->threshold;
    });
    size_t n_left = static_cast<size_t>(mid - rows);
    if (n_left == 0 || n_left == n_rows) return node;  // degenerate, keep as leaf

    node->is_leaf = false;
    node->feature = split->feature;
    node->threshold = split->threshold;
    node->left = grow(ctx, rows, n_left, depth + 1);
    node->right = grow(ctx, mid, n_rows - n_left, depth + 1);
    return node;
}

}  // namespace detail

// Public wrapper matching the per-operation contract: candidate_features
// selects the columns considered; returns nullopt iff no split reduces
// impurity.
inline std::optional<Split> best_split(const EncodedMatrix& m,
                                       const std::vector<ClassLabel>& labels,
                                       const std::vector<uint32_t>& candidate_features) {
    if (m.n_rows != labels.size())
        throw std::runtime_error("matrix/labels size mismatch");
    std::vector<uint32_t> rows(m.n_rows);
    std::iota(rows.begin(), rows.end(), 0u);
    detail::SortScratch scratch;
    return detail::best_split_rows(m, labels, rows.data(), rows.size(),
                                   candidate_features, scratch);
}

struct CartConfig {
    int max_depth = -1;
    size_t min_samples_split = 2;
    uint64_t seed = 0;
};

// Greedy CART growth: recursive best-Gini splits until leaves are pure,
// unsplittable, or the depth cap is hit.
inline TreeModel train_cart(const EncodedMatrix& train, const std::vector<ClassLabel>& labels,
                            const CartConfig& cfg = {}) {
    if (train.n_rows == 0) throw std::runtime_error("cannot train on an empty matrix");
    if (train.n_rows != labels.size())
        throw std::runtime_error("matrix/labels size mismatch");

    detail::GrowContext ctx{train, labels, cfg.max_depth, cfg.min_samples_split};
    ctx.all_features.resize(train.n_cols);
    std::iota(ctx.all_features.begin(), ctx.all_features.end(), 0u);

    std::vector<uint32_t> rows(train.n_rows);
    std::iota(rows.begin(), rows.end(), 0u);

    TreeModel model;
    model.feature_names = train.column_names;
    model.meta = TrainMeta{cfg.seed, cfg.max_depth, cfg.min_samples_split, "gini"};
    model.root = detail::grow(ctx, rows.data(), rows.size(), 0);
    return model;
}

}  // namespace mqsec
