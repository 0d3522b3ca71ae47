#pragma once

#include <cmath>
#include <vector>

#include "mqsec/forest.hpp"
#include "mqsec/gbm.hpp"
#include "mqsec/metrics.hpp"
#include "mqsec/tree.hpp"

namespace mqsec {

namespace detail {

// Weighted impurity decrease accumulated per feature over one
// classification tree. Weights are node sample shares of the root.
inline void accumulate_tree_importance(const TreeNode* node, double n_root,
                                       std::vector<double>& acc) {
    if (!node || node->is_leaf) return;
    uint64_t n = 0, nl = 0;
    for (size_t k = 0; k < kNumClasses; ++k) {
        n += node->counts[k];
        nl += node->left->counts[k];
    }
    double wn = static_cast<double>(n);
    double wl = static_cast<double>(nl);
    double wr = wn - wl;
    double decrease = gini(node->counts) -
                      (wl / wn) * gini(node->left->counts) -
                      (wr / wn) * gini(node->right->counts);
    acc[node->feature] += (wn / n_root) * std::max(decrease, 0.0);
    accumulate_tree_importance(node->left.get(), n_root, acc);
    accumulate_tree_importance(node->right.get(), n_root, acc);
}

inline void normalize(std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    if (s > 0)
        for (double& x : v) x /= s;
}

}  // namespace detail

// Impurity-decrease importance, normalized to sum 1. Features never used
// in any split have importance exactly 0.
inline std::vector<double> feature_importance(const TreeModel& model) {
    std::vector<double> imp(model.feature_names.size(), 0.0);
    double n_root = 0;
    for (auto c : model.root->counts) n_root += static_cast<double>(c);
    detail::accumulate_tree_importance(model.root.get(), n_root, imp);
    detail::normalize(imp);
    return imp;
}

inline std::vector<double> feature_importance(const ForestModel& model) {
    std::vector<double> imp(model.feature_names.size(), 0.0);
    for (const auto& t : model.trees) {
        auto ti = feature_importance(t);
        for (size_t i = 0; i < imp.size(); ++i) imp[i] += ti[i];
    }
    detail::normalize(imp);
    return imp;
}

// GBM importance walks every stage tree; a simple per-split counter-style
// gain works because only the importance>0 set and relative ordering are
// consumed downstream.
inline std::vector<double> feature_importance(const GbmModel& model) {
    std::vector<double> imp(model.feature_names.size(), 0.0);
    struct Walker {
        static void walk(const RegNode* n, std::vector<double>& acc) {
            if (!n || n->is_leaf) return;
            acc[n->feature] += 1.0;
            walk(n->left.get(), acc);
            walk(n->right.get(), acc);
        }
    };
    for (const auto& stage : model.stages)
        for (const auto& t : stage) Walker::walk(t.root.get(), imp);
    detail::normalize(imp);
    return imp;
}

inline std::vector<double> feature_importance(const AnyModel& model) {
    switch (model.kind()) {
        case AnyModel::Kind::Tree: return feature_importance(model.tree());
        case AnyModel::Kind::Forest: return feature_importance(model.forest());
        case AnyModel::Kind::Gbm: return feature_importance(model.gbm());
    }
    throw std::logic_error("bad model kind");
}

// Indices of features with importance > 0, original order preserved.
inline std::vector<size_t> select_features(const std::vector<double>& importance) {
    std::vector<size_t> keep;
    for (size_t i = 0; i < importance.size(); ++i)
        if (importance[i] > 0.0) keep.push_back(i);
    return keep;
}

}  // namespace mqsec
