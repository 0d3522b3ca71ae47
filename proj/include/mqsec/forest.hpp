#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <thread>
#include <vector>

#include "mqsec/tree.hpp"

namespace mqsec {

struct ForestConfig {
    size_t n_estimators = 100;
    bool bootstrap = true;
    // 0: floor(sqrt(n_features)) per split; SIZE_MAX: all features.
    size_t features_per_split = 0;
    int max_depth = -1;
    size_t min_samples_split = 2;
    uint64_t seed = 0;
    unsigned n_threads = 0;  // 0: hardware concurrency
};

struct ForestModel {
    std::vector<TreeModel> trees;
    std::vector<std::string> feature_names;
    ForestConfig config;

    // Prediction averages the per-tree leaf probability vectors.
    std::pair<ClassLabel, ProbVector> predict(const double* row, size_t n) const {
        ProbVector acc{};
        for (const auto& t : trees) {
            auto [label, p] = t.predict(row, n);
            (void)label;
            for (size_t i = 0; i < kNumClasses; ++i) acc[i] += p[i];
        }
        for (auto& v : acc) v /= static_cast<double>(trees.size());
        size_t best = 0;
        for (size_t i = 1; i < kNumClasses; ++i)
            if (acc[i] > acc[best]) best = i;
        return {static_cast<ClassLabel>(best), acc};
    }
};

// Bagged trees with per-split random feature subsets. Per-tree seeds are
// derived from the master seed up front and trees are merged in index
// order, so the result is identical however the workers are scheduled.
inline ForestModel train_forest(const EncodedMatrix& train,
                                const std::vector<ClassLabel>& labels,
                                const ForestConfig& cfg = {}) {
    if (train.n_rows == 0) throw std::runtime_error("cannot train on an empty matrix");
    if (cfg.n_estimators < 1) throw std::runtime_error("n_estimators must be >= 1");

    ForestModel model;
    model.feature_names = train.column_names;
    model.config = cfg;
    model.trees.resize(cfg.n_estimators);

    std::vector<uint64_t> tree_seeds(cfg.n_estimators);
    Rng master(cfg.seed);
    for (auto& s : tree_seeds) s = master.next_u64();

    size_t fps = cfg.features_per_split;
    if (fps == 0)
        fps = static_cast<size_t>(std::floor(std::sqrt(static_cast<double>(train.n_cols))));
    if (fps >= train.n_cols) fps = 0;  // 0 means "all" inside GrowContext

    auto build_tree = [&](size_t idx) {
        Rng rng(tree_seeds[idx]);
        std::vector<uint32_t> rows(train.n_rows);
        if (cfg.bootstrap) {
            for (auto& r : rows)
                r = static_cast<uint32_t>(rng.bounded(train.n_rows));
        } else {
            std::iota(rows.begin(), rows.end(), 0u);
        }
        detail::GrowContext ctx{train, labels, cfg.max_depth, cfg.min_samples_split};
        ctx.features_per_split = fps;
        ctx.rng = &rng;
        ctx.all_features.resize(train.n_cols);
        std::iota(ctx.all_features.begin(), ctx.all_features.end(), 0u);

        TreeModel t;
        t.feature_names = train.column_names;
        t.meta = TrainMeta{tree_seeds[idx], cfg.max_depth, cfg.min_samples_split, "gini"};
        t.root = detail::grow(ctx, rows.data(), rows.size(), 0);
        model.trees[idx] = std::move(t);
    };

    unsigned n_threads = cfg.n_threads ? cfg.n_threads : std::thread::hardware_concurrency();
    if (n_threads <= 1 || cfg.n_estimators == 1) {
        for (size_t i = 0; i < cfg.n_estimators; ++i) build_tree(i);
    } else {
        std::vector<std::thread> workers;
        std::atomic<size_t> next{0};
        for (unsigned w = 0; w < n_threads; ++w)
            workers.emplace_back([&] {
                for (;;) {
                    size_t i = next.fetch_add(1);
                    if (i >= cfg.n_estimators) return;
                    build_tree(i);
                }
            });
        for (auto& t : workers) t.join();
    }
    return model;
}

}  // namespace mqsec
