#pragma once

#include <algorithm>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mqsec/bytes.hpp"
#include "mqsec/crypto.hpp"
#include "mqsec/dataset.hpp"
#include "mqsec/metrics.hpp"

namespace mqsec {

// Model stream format (all integers little-endian):
//   magic "MQBM", u8 format version, u8 model kind (0=tree,1=forest,2=gbm),
//   u32 feature count, 32-byte schema hash (SHA-256 of the feature names
//   joined by '\n'), kind-specific body, trailing CRC-32 over everything
//   before it.
// Each tree body is a u32 node count followed by preorder node records:
//   u8 node kind (0 internal, 1 leaf);
//   internal: u32 feature, f64 threshold;
//   leaf: 6 x u64 class counts.
// GBM stage trees are regression trees; their leaf record carries the
// IEEE-754 bit pattern of the leaf score in count slot 0, slots 1-5 zero.
// See docs/model_format.md.

inline constexpr char kModelMagic[4] = {'M', 'Q', 'B', 'M'};
inline constexpr uint8_t kModelFormatVersion = 1;

enum class ModelIoError {
    BadMagic,
    VersionMismatch,
    Truncated,
    SchemaHashMismatch,
    CrcMismatch,
    BadStructure,
};

class ModelParseError : public std::runtime_error {
public:
    ModelParseError(ModelIoError code, const std::string& what)
        : std::runtime_error(what), code_(code) {}
    ModelIoError code() const { return code_; }

private:
    ModelIoError code_;
};

inline Sha256Digest schema_hash(const std::vector<std::string>& names) {
    std::string joined;
    for (size_t i = 0; i < names.size(); ++i) {
        if (i) joined.push_back('\n');
        joined += names[i];
    }
    return sha256(joined);
}

namespace detail {

inline void write_tree_nodes(Bytes& out, const TreeNode* n) {
    if (n->is_leaf) {
        put_u8(out, 1);
        for (auto c : n->counts) put_u64le(out, c);
    } else {
        put_u8(out, 0);
        put_u32le(out, n->feature);
        put_f64le(out, n->threshold);
        write_tree_nodes(out, n->left.get());
        write_tree_nodes(out, n->right.get());
    }
}

inline void write_reg_nodes(Bytes& out, const RegNode* n) {
    if (n->is_leaf) {
        put_u8(out, 1);
        uint64_t bits;
        std::memcpy(&bits, &n->value, 8);
        put_u64le(out, bits);
        for (int i = 0; i < 5; ++i) put_u64le(out, 0);
    } else {
        put_u8(out, 0);
        put_u32le(out, n->feature);
        put_f64le(out, n->threshold);
        write_reg_nodes(out, n->left.get());
        write_reg_nodes(out, n->right.get());
    }
}

inline size_t count_tree_nodes(const TreeNode* n) {
    if (!n) return 0;
    return 1 + count_tree_nodes(n->left.get()) + count_tree_nodes(n->right.get());
}
inline size_t count_reg_nodes(const RegNode* n) {
    if (!n) return 0;
    return 1 + count_reg_nodes(n->left.get()) + count_reg_nodes(n->right.get());
}

inline std::unique_ptr<TreeNode> read_tree_nodes(ByteReader& r, size_t& budget) {
    if (budget == 0)
        throw ModelParseError(ModelIoError::BadStructure, "node count exceeded");
    --budget;
    auto node = std::make_unique<TreeNode>();
    uint8_t kind = r.u8();
    if (kind == 1) {
        for (auto& c : node->counts) c = r.u64le();
    } else if (kind == 0) {
        node->is_leaf = false;
        node->feature = r.u32le();
        node->threshold = r.f64le();
        node->left = read_tree_nodes(r, budget);
        node->right = read_tree_nodes(r, budget);
    } else {
        throw ModelParseError(ModelIoError::BadStructure, "bad node kind");
    }
    return node;
}

inline std::unique_ptr<RegNode> read_reg_nodes(ByteReader& r, size_t& budget) {
    if (budget == 0)
        throw ModelParseError(ModelIoError::BadStructure, "node count exceeded");
    --budget;
    auto node = std::make_unique<RegNode>();
    uint8_t kind = r.u8();
    if (kind == 1) {
        uint64_t bits = r.u64le();
        std::memcpy(&node->value, &bits, 8);
        for (int i = 0; i < 5; ++i) (void)r.u64le();
    } else if (kind == 0) {
        node->is_leaf = false;
        node->feature = r.u32le();
        node->threshold = r.f64le();
        node->left = read_reg_nodes(r, budget);
        node->right = read_reg_nodes(r, budget);
    } else {
        throw ModelParseError(ModelIoError::BadStructure, "bad node kind");
    }
    return node;
}

inline void validate_features(const TreeNode* n, size_t n_features) {
    if (!n || n->is_leaf) return;
    if (n->feature >= n_features)
        throw ModelParseError(ModelIoError::BadStructure, "feature index out of range");
    validate_features(n->left.get(), n_features);
    validate_features(n->right.get(), n_features);
}
inline void validate_features(const RegNode* n, size_t n_features) {
    if (!n || n->is_leaf) return;
    if (n->feature >= n_features)
        throw ModelParseError(ModelIoError::BadStructure, "feature index out of range");
    validate_features(n->left.get(), n_features);
    validate_features(n->right.get(), n_features);
}

inline void write_one_tree(Bytes& out, const TreeModel& t) {
    put_u32le(out, static_cast<uint32_t>(count_tree_nodes(t.root.get())));
    write_tree_nodes(out, t.root.get());
}

inline TreeModel read_one_tree(ByteReader& r, size_t n_features) {
    size_t budget = r.u32le();
    if (budget == 0)
        throw ModelParseError(ModelIoError::BadStructure, "empty tree");
    TreeModel t;
    t.feature_names.assign(n_features, "");
    t.root = read_tree_nodes(r, budget);
    if (budget != 0)
        throw ModelParseError(ModelIoError::BadStructure, "node count mismatch");
    validate_features(t.root.get(), n_features);
    return t;
}

}  // namespace detail

inline Bytes serialize_model(const AnyModel& model) {
    Bytes out;
    out.insert(out.end(), kModelMagic, kModelMagic + 4);
    put_u8(out, kModelFormatVersion);
    put_u8(out, static_cast<uint8_t>(model.kind()));
    const auto& names = model.feature_names();
    put_u32le(out, static_cast<uint32_t>(names.size()));
    auto hash = model.has_stored_schema_hash() ? model.stored_schema_hash()
                                               : schema_hash(names);
    out.insert(out.end(), hash.begin(), hash.end());

    switch (model.kind()) {
        case AnyModel::Kind::Tree:
            detail::write_one_tree(out, model.tree());
            break;
        case AnyModel::Kind::Forest: {
            const auto& f = model.forest();
            put_u32le(out, static_cast<uint32_t>(f.trees.size()));
            for (const auto& t : f.trees) detail::write_one_tree(out, t);
            break;
        }
        case AnyModel::Kind::Gbm: {
            const auto& g = model.gbm();
            put_u32le(out, static_cast<uint32_t>(g.stages.size()));
            put_f64le(out, g.learning_rate);
            for (double b : g.base_score) put_f64le(out, b);
            for (const auto& stage : g.stages)
                for (const auto& t : stage) {
                    put_u32le(out, static_cast<uint32_t>(
                                       detail::count_reg_nodes(t.root.get())));
                    detail::write_reg_nodes(out, t.root.get());
                }
            break;
        }
    }
    put_u32le(out, crc32_of(out));
    return out;
}

// expected_schema: when nonempty, the stream's schema hash must match it.
inline AnyModel deserialize_model(const Bytes& data,
                                  const std::vector<std::string>& expected_schema = {}) {
    if (data.size() < 4 || std::memcmp(data.data(), kModelMagic, 4) != 0)
        throw ModelParseError(ModelIoError::BadMagic, "bad model magic");
    if (data.size() < 4 + 1 + 1 + 4 + kHashLen + 4)
        throw ModelParseError(ModelIoError::Truncated, "model stream truncated");

    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<uint32_t>(data[data.size() - 4 + i]) << (8 * i);
    if (crc32_of(data.data(), data.size() - 4) != stored_crc)
        throw ModelParseError(ModelIoError::CrcMismatch, "model CRC-32 mismatch");

    ByteReader r(data.data(), data.size() - 4);
    try {
        r.raw(4);  // magic, already checked
        uint8_t version = r.u8();
        if (version != kModelFormatVersion)
            throw ModelParseError(ModelIoError::VersionMismatch,
                                  "unsupported model format version " +
                                      std::to_string(version));
        uint8_t kind = r.u8();
        uint32_t n_features = r.u32le();
        Sha256Digest hash;
        r.copy_to(hash.data(), kHashLen);
        if (!expected_schema.empty() && hash != schema_hash(expected_schema))
            throw ModelParseError(ModelIoError::SchemaHashMismatch,
                                  "model schema hash does not match expected schema");

        if (kind == static_cast<uint8_t>(AnyModel::Kind::Tree)) {
            AnyModel out(detail::read_one_tree(r, n_features));
            out.set_stored_schema_hash(hash);
            return out;
        }
        if (kind == static_cast<uint8_t>(AnyModel::Kind::Forest)) {
            uint32_t n_trees = r.u32le();
            if (n_trees == 0)
                throw ModelParseError(ModelIoError::BadStructure, "empty forest");
            ForestModel f;
            f.feature_names.assign(n_features, "");
            f.config.n_estimators = n_trees;
            for (uint32_t i = 0; i < n_trees; ++i)
                f.trees.push_back(detail::read_one_tree(r, n_features));
            AnyModel out(std::move(f));
            out.set_stored_schema_hash(hash);
            return out;
        }
        if (kind == static_cast<uint8_t>(AnyModel::Kind::Gbm)) {
            uint32_t n_stages = r.u32le();
            GbmModel g;
            g.feature_names.assign(n_features, "");
            g.learning_rate = r.f64le();
            for (auto& b : g.base_score) b = r.f64le();
            for (uint32_t s = 0; s < n_stages; ++s) {
                std::array<RegTree, kNumClasses> stage;
                for (size_t k = 0; k < kNumClasses; ++k) {
                    size_t budget = r.u32le();
                    if (budget == 0)
                        throw ModelParseError(ModelIoError::BadStructure, "empty tree");
                    stage[k].root = detail::read_reg_nodes(r, budget);
                    if (budget != 0)
                        throw ModelParseError(ModelIoError::BadStructure,
                                              "node count mismatch");
                    detail::validate_features(stage[k].root.get(), n_features);
                }
                g.stages.push_back(std::move(stage));
            }
            g.config.n_estimators = n_stages;
            AnyModel out(std::move(g));
            out.set_stored_schema_hash(hash);
            return out;
        }
        throw ModelParseError(ModelIoError::BadStructure,
                              "unknown model kind " + std::to_string(kind));
    } catch (const ModelParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelParseError(ModelIoError::Truncated, e.what());
    }
}

// ---------------------------------------------------------------------------
// Model bundle: the MQBM stream plus the encoder block the edge needs to
// preprocess live packets (full schema, per-column category maps, selected
// feature indices). Bundle layout, little-endian:
//   u32 model stream length, model stream (MQBM), encoder block.
// Encoder block:
//   magic "MQEN", u32 body length, body, trailing CRC-32 over magic+len+body.
// Body: u32 full column count, per column: u16be name len + name,
//   u8 categorical, u32 map size, entries (u16be len + bytes, f64 code);
//   u32 selected count, selected u32 indices (into the full schema).
// ---------------------------------------------------------------------------

inline constexpr char kEncoderMagic[4] = {'M', 'Q', 'E', 'N'};

struct ModelBundle {
    std::shared_ptr<AnyModel> model;
    Encoders encoders;                  // fitted on the full 33-column schema
    std::vector<size_t> selected;       // column indices the model consumes
    Bytes model_stream;                 // the exact MQBM bytes

    std::vector<std::string> selected_names() const {
        std::vector<std::string> names;
        for (size_t i : selected) names.push_back(encoders.schema[i]);
        return names;
    }
};

inline Bytes serialize_bundle(const AnyModel& model, const Encoders& encoders,
                              const std::vector<size_t>& selected) {
    Bytes model_stream = serialize_model(model);
    Bytes out;
    put_u32le(out, static_cast<uint32_t>(model_stream.size()));
    out.insert(out.end(), model_stream.begin(), model_stream.end());

    Bytes block;
    block.insert(block.end(), kEncoderMagic, kEncoderMagic + 4);
    Bytes body;
    put_u32le(body, static_cast<uint32_t>(encoders.schema.size()));
    for (size_t c = 0; c < encoders.schema.size(); ++c) {
        const auto& name = encoders.schema[c];
        put_u16be(body, static_cast<uint16_t>(name.size()));
        body.insert(body.end(), name.begin(), name.end());
        put_u8(body, encoders.categorical[c] ? 1 : 0);
        // Deterministic ordering: sort by code so serialization is stable.
        std::vector<std::pair<double, std::string>> entries;
        for (const auto& [k, v] : encoders.maps[c]) entries.emplace_back(v, k);
        std::sort(entries.begin(), entries.end());
        put_u32le(body, static_cast<uint32_t>(entries.size()));
        for (const auto& [code, key] : entries) {
            put_u16be(body, static_cast<uint16_t>(key.size()));
            body.insert(body.end(), key.begin(), key.end());
            put_f64le(body, code);
        }
    }
    put_u32le(body, static_cast<uint32_t>(selected.size()));
    for (size_t i : selected) put_u32le(body, static_cast<uint32_t>(i));

    put_u32le(block, static_cast<uint32_t>(body.size()));
    block.insert(block.end(), body.begin(), body.end());
    put_u32le(block, crc32_of(block));

    out.insert(out.end(), block.begin(), block.end());
    return out;
}

inline ModelBundle deserialize_bundle(const Bytes& data) {
    if (data.size() < 4)
        throw ModelParseError(ModelIoError::Truncated, "bundle truncated");
    uint32_t model_len = 0;
    for (int i = 0; i < 4; ++i)
        model_len |= static_cast<uint32_t>(data[static_cast<size_t>(i)]) << (8 * i);
    if (data.size() < 4 + static_cast<size_t>(model_len) + 12)
        throw ModelParseError(ModelIoError::Truncated, "bundle truncated");

    Bytes model_bytes(data.begin() + 4, data.begin() + 4 + static_cast<long>(model_len));
    Bytes block(data.begin() + 4 + static_cast<long>(model_len), data.end());
    if (std::memcmp(block.data(), kEncoderMagic, 4) != 0)
        throw ModelParseError(ModelIoError::BadMagic, "bad encoder block magic");
    uint32_t stored_crc = 0;
    for (int i = 0; i < 4; ++i)
        stored_crc |= static_cast<uint32_t>(block[block.size() - 4 + i]) << (8 * i);
    if (crc32_of(block.data(), block.size() - 4) != stored_crc)
        throw ModelParseError(ModelIoError::CrcMismatch, "encoder block CRC mismatch");

    ModelBundle bundle;
    bundle.model_stream = model_bytes;

    ByteReader r(block.data(), block.size() - 4);
    r.raw(4);  // magic
    uint32_t body_len = r.u32le();
    if (body_len + 12 != block.size())
        throw ModelParseError(ModelIoError::BadStructure, "encoder block length mismatch");
    uint32_t n_cols = r.u32le();
    bundle.encoders.schema.resize(n_cols);
    bundle.encoders.categorical.resize(n_cols);
    bundle.encoders.maps.resize(n_cols);
    for (uint32_t c = 0; c < n_cols; ++c) {
        uint16_t len = r.u16be();
        Bytes name = r.raw(len);
        bundle.encoders.schema[c] = std::string(name.begin(), name.end());
        bundle.encoders.categorical[c] = r.u8() != 0;
        uint32_t map_size = r.u32le();
        for (uint32_t i = 0; i < map_size; ++i) {
            uint16_t klen = r.u16be();
            Bytes key = r.raw(klen);
            double code = r.f64le();
            bundle.encoders.maps[c].emplace(std::string(key.begin(), key.end()), code);
        }
    }
    uint32_t n_sel = r.u32le();
    for (uint32_t i = 0; i < n_sel; ++i) {
        uint32_t idx = r.u32le();
        if (idx >= n_cols)
            throw ModelParseError(ModelIoError::BadStructure, "selected index out of range");
        bundle.selected.push_back(idx);
    }

    auto model = deserialize_model(model_bytes, bundle.selected_names());
    model.set_feature_names(bundle.selected_names());
    bundle.model = std::make_shared<AnyModel>(std::move(model));
    return bundle;
}

}  // namespace mqsec
