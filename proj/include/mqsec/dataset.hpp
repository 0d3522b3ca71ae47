#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqsec/csv.hpp"
#include "mqsec/fs.hpp"
#include "mqsec/rng.hpp"
#include "mqsec/schema.hpp"

namespace mqsec {

// Raw labeled rows as read from a dataset CSV: 33 string cells per row
// plus a class label.
struct LabeledTable {
    std::vector<std::string> schema;              // 33 feature column names
    std::vector<std::vector<std::string>> rows;   // rows.size() == labels.size()
    std::vector<ClassLabel> labels;
    size_t unparseable_rows = 0;                  // counted, never silently dropped

    size_t size() const { return rows.size(); }
    bool empty() const { return rows.empty(); }

    std::array<size_t, kNumClasses> class_histogram() const {
        std::array<size_t, kNumClasses> h{};
        for (auto l : labels) h[static_cast<size_t>(l)]++;
        return h;
    }
};

struct LoadOptions {
    // Feature logs append a disposition column after target; retraining
    // reads them with these switched on.
    bool allow_disposition_column = false;
    bool drop_unlabeled = false;  // rows with empty/unknown target are skipped, counted
};

// Load a dataset CSV: header row must carry the 33-column schema plus `target`.
inline LabeledTable load_dataset(const std::string& path, const LoadOptions& opt = {}) {
    auto lines = read_lines(path);
    if (lines.empty()) throw std::runtime_error("empty dataset file: " + path);

    auto header = split_csv_line(lines[0]);
    std::vector<std::string> expected(kFeatureColumns.begin(), kFeatureColumns.end());
    expected.push_back(kTargetColumn);
    if (opt.allow_disposition_column && header.size() == expected.size() + 1 &&
        header.back() == kDispositionColumn) {
        header.pop_back();
    }
    if (header != expected) {
        std::string missing, extra;
        for (const auto& c : expected)
            if (std::find(header.begin(), header.end(), c) == header.end())
                missing += " " + c;
        for (const auto& c : header)
            if (std::find(expected.begin(), expected.end(), c) == expected.end())
                extra += " " + c;
        throw std::runtime_error("dataset header mismatch in " + path +
                                 (missing.empty() ? "" : "; missing:" + missing) +
                                 (extra.empty() ? "" : "; extra:" + extra));
    }

    LabeledTable t;
    t.schema.assign(kFeatureColumns.begin(), kFeatureColumns.end());
    const size_t want = expected.size() + (opt.allow_disposition_column ? 1 : 0);
    for (size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        auto cells = split_csv_line(lines[i]);
        // Tolerate the optional disposition column being present or not per row set.
        if (cells.size() != expected.size() && cells.size() != want) {
            t.unparseable_rows++;
            continue;
        }
        const std::string& label_str = cells[kNumFeatures];
        auto label = class_from_string(label_str);
        if (!label) {
            if (opt.drop_unlabeled) {
                t.unparseable_rows++;
                continue;
            }
            throw std::runtime_error("unknown class label \"" + label_str +
                                     "\" at line " + std::to_string(i + 1) + " of " + path);
        }
        cells.resize(kNumFeatures);
        t.rows.push_back(std::move(cells));
        t.labels.push_back(*label);
    }
    return t;
}

struct SplitResult {
    LabeledTable train;
    LabeledTable test;
    std::vector<size_t> train_indices;  // into the original table
    std::vector<size_t> test_indices;
};

// Exact partition: shuffle uniformly, take round(n*fraction) rows as test.
// Stratification is off by default; when on, the fraction is applied per class.
inline SplitResult split_train_test(const LabeledTable& table, double test_fraction,
                                    uint64_t seed, bool stratified = false) {
    if (table.empty()) throw std::runtime_error("cannot split an empty table");
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::runtime_error("test_fraction must be in (0,1)");

    SplitResult r;
    r.train.schema = table.schema;
    r.test.schema = table.schema;

    auto take = [&](std::vector<size_t>& pool, size_t n_test, Rng& rng) {
        rng.shuffle(pool);
        for (size_t i = 0; i < pool.size(); ++i) {
            if (i < n_test) r.test_indices.push_back(pool[i]);
            else r.train_indices.push_back(pool[i]);
        }
    };

    Rng rng(seed);
    if (stratified) {
        std::array<std::vector<size_t>, kNumClasses> per_class;
        for (size_t i = 0; i < table.size(); ++i)
            per_class[static_cast<size_t>(table.labels[i])].push_back(i);
        for (auto& pool : per_class) {
            if (pool.empty()) continue;
            size_t n_test = static_cast<size_t>(
                std::llround(static_cast<double>(pool.size()) * test_fraction));
            take(pool, n_test, rng);
        }
    } else {
        std::vector<size_t> pool(table.size());
        for (size_t i = 0; i < pool.size(); ++i) pool[i] = i;
        size_t n_test = static_cast<size_t>(
            std::llround(static_cast<double>(pool.size()) * test_fraction));
        take(pool, n_test, rng);
    }
    std::sort(r.train_indices.begin(), r.train_indices.end());
    std::sort(r.test_indices.begin(), r.test_indices.end());

    for (size_t i : r.train_indices) {
        r.train.rows.push_back(table.rows[i]);
        r.train.labels.push_back(table.labels[i]);
    }
    for (size_t i : r.test_indices) {
        r.test.rows.push_back(table.rows[i]);
        r.test.labels.push_back(table.labels[i]);
    }
    return r;
}

// Audit trail for a split: seed, fractions and exact row indices.
inline void write_split_manifest(const std::string& path, uint64_t seed,
                                 double test_fraction, const SplitResult& r) {
    std::ostringstream os;
    os << "seed = " << seed << "\n";
    os << "test_fraction = " << test_fraction << "\n";
    os << "train_count = " << r.train_indices.size() << "\n";
    os << "test_count = " << r.test_indices.size() << "\n";
    os << "train_indices =";
    for (size_t i : r.train_indices) os << ' ' << i;
    os << "\ntest_indices =";
    for (size_t i : r.test_indices) os << ' ' << i;
    os << "\n";
    atomic_write_file(path, os.str());
}

// Per-column categorical-to-integer maps fitted on training rows.
// Code 0 is reserved for unseen/blank values; training values get codes
// 1..k in first-seen order. Numeric columns pass through unchanged
// (blank or unparseable cells encode to 0).
struct Encoders {
    std::vector<std::string> schema;  // the 33 column names these were fitted on
    std::vector<bool> categorical;    // per column
    std::vector<std::unordered_map<std::string, double>> maps;  // per column (empty for numeric)

    double encode_cell(size_t col, const std::string& cell) const {
        if (categorical[col]) {
            auto it = maps[col].find(cell);
            return it == maps[col].end() ? 0.0 : it->second;
        }
        if (cell.empty()) return 0.0;
        char* end = nullptr;
        double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || !std::isfinite(v)) return 0.0;
        return v;
    }
};

inline Encoders fit_encoders(const LabeledTable& train) {
    if (train.empty()) throw std::runtime_error("cannot fit encoders on an empty table");
    Encoders e;
    e.schema = train.schema;
    e.categorical.resize(train.schema.size());
    e.maps.resize(train.schema.size());
    for (size_t c = 0; c < train.schema.size(); ++c)
        e.categorical[c] = is_categorical_column(train.schema[c]);

    for (const auto& row : train.rows) {
        for (size_t c = 0; c < row.size(); ++c) {
            if (!e.categorical[c]) continue;
            auto& m = e.maps[c];
            if (!m.count(row[c]))
                m.emplace(row[c], static_cast<double>(m.size() + 1));
        }
    }
    return e;
}

// Dense numeric matrix produced by applying fitted encoders.
struct EncodedMatrix {
    std::vector<std::string> column_names;
    size_t n_rows = 0;
    size_t n_cols = 0;
    std::vector<double> values;  // row-major

    double at(size_t r, size_t c) const { return values[r * n_cols + c]; }
};

inline EncodedMatrix apply_encoders(const Encoders& e, const LabeledTable& table) {
    if (table.schema != e.schema)
        throw std::runtime_error("encoder schema does not match table schema");
    EncodedMatrix m;
    m.column_names = table.schema;
    m.n_rows = table.size();
    m.n_cols = table.schema.size();
    m.values.resize(m.n_rows * m.n_cols);
    for (size_t r = 0; r < m.n_rows; ++r)
        for (size_t c = 0; c < m.n_cols; ++c)
            m.values[r * m.n_cols + c] = e.encode_cell(c, table.rows[r][c]);
    return m;
}

// Column-subset view used after feature selection.
inline EncodedMatrix select_columns(const EncodedMatrix& m, const std::vector<size_t>& cols) {
    EncodedMatrix out;
    out.n_rows = m.n_rows;
    out.n_cols = cols.size();
    out.values.resize(out.n_rows * out.n_cols);
    for (size_t c : cols) out.column_names.push_back(m.column_names[c]);
    for (size_t r = 0; r < m.n_rows; ++r)
        for (size_t j = 0; j < cols.size(); ++j)
            out.values[r * out.n_cols + j] = m.at(r, cols[j]);
    return out;
}

}  // namespace mqsec
