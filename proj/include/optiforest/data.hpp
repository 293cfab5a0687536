#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "optiforest/error.hpp"
#include "optiforest/random.hpp"

namespace optiforest {

/// Row-major n x m matrix of finite reals with optional 0/1 labels (1 = anomaly).
class DataMatrix {
public:
    DataMatrix() = default;

    DataMatrix(std::size_t rows, std::size_t cols, std::vector<double> values,
               std::optional<std::vector<int>> labels = std::nullopt)
        : rows_(rows), cols_(cols), values_(std::move(values)), labels_(std::move(labels)) {
        if (values_.size() != rows_ * cols_) {
            throw DataError("matrix storage has " + std::to_string(values_.size()) + " values, expected " +
                            std::to_string(rows_ * cols_));
        }
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!std::isfinite(values_[i])) {
                throw DataError("non-finite value at row " + std::to_string(i / std::max<std::size_t>(cols_, 1)) +
                                ", column " + std::to_string(i % std::max<std::size_t>(cols_, 1)));
            }
        }
        if (labels_) {
            if (labels_->size() != rows_) {
                throw DataError("label count " + std::to_string(labels_->size()) + " does not match row count " +
                                std::to_string(rows_));
            }
            for (int l : *labels_) {
                if (l != 0 && l != 1) throw DataError("labels must be 0 or 1, got " + std::to_string(l));
            }
        }
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<const double> row(std::size_t i) const noexcept { return {values_.data() + i * cols_, cols_}; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * cols_ + j]; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool has_labels() const noexcept { return labels_.has_value(); }
    const std::vector<int>& labels() const {
        if (!labels_) throw DataError("dataset has no labels");
        return *labels_;
    }

    const std::vector<std::string>& feature_names() const noexcept { return names_; }
    void set_feature_names(std::vector<std::string> names) { names_ = std::move(names); }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
    std::optional<std::vector<int>> labels_;
    std::vector<std::string> names_;
};

namespace detail {

inline std::string_view trim_space(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::string_view trim(std::string_view s) {
    s = trim_space(s);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

inline std::optional<double> parse_real(std::string_view cell) {
    if (cell.empty()) return std::nullopt;
    if (cell.front() == '+') cell.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

} // namespace detail

/// Parses comma-delimited text with a header row. When `label_column` names a
/// header field, that column is removed from the features and kept as labels.
/// `source` only decorates error messages.
inline DataMatrix parse_csv(std::istream& in, const std::optional<std::string>& label_column = std::nullopt,
                            const std::string& source = "<input>") {
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim_space(line).empty()) {
            have_header = true;
            break;
        }
    }
    if (!have_header) throw DataError(source + ": file is empty");
    if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

    std::vector<std::string> header;
    for (const auto cell : detail::split_commas(line)) header.emplace_back(cell);
    std::optional<std::size_t> label_idx;
    if (label_column) {
        const auto it = std::find(header.begin(), header.end(), *label_column);
        if (it == header.end()) throw DataError(source + ": label column '" + *label_column + "' not found in header");
        label_idx = static_cast<std::size_t>(it - header.begin());
    }
    std::vector<std::string> names;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j != label_idx) names.emplace_back(header[j]);
    }

    const std::size_t cols = names.size();
    std::vector<double> values;
    std::vector<int> labels;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim_space(line).empty()) continue;
        const auto cells = detail::split_commas(line);
        if (cells.size() != header.size()) {
            throw DataError(source + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                            " fields, header has " + std::to_string(header.size()));
        }
        for (std::size_t j = 0; j < cells.size(); ++j) {
            const auto value = detail::parse_real(cells[j]);
            if (!value) {
                throw DataError(source + ": line " + std::to_string(line_no) + ", column '" + header[j] +
                                "': cannot parse '" + std::string(cells[j]) + "' as a finite real");
            }
            if (j == label_idx) {
                if (*value != 0.0 && *value != 1.0) {
                    throw DataError(source + ": line " + std::to_string(line_no) + ", label column '" +
                                    header[j] + "': expected 0 or 1, got '" + std::string(cells[j]) + "'");
                }
                labels.push_back(static_cast<int>(*value));
            } else {
                values.push_back(*value);
            }
        }
        ++rows;
    }

    DataMatrix data(rows, cols, std::move(values),
                    label_idx ? std::optional<std::vector<int>>(std::move(labels)) : std::nullopt);
    data.set_feature_names(std::move(names));
    return data;
}

inline DataMatrix load_csv(const std::string& path, const std::optional<std::string>& label_column = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_csv(in, label_column, path);
}

/// Per-feature affine map to [0, 1]; constant features map to 0.
struct MinMaxScaler {
    std::vector<double> mins;
    std::vector<double> maxs;

    static MinMaxScaler fit(const DataMatrix& data) {
        MinMaxScaler s;
        s.mins.assign(data.cols(), 0.0);
        s.maxs.assign(data.cols(), 0.0);
        for (std::size_t j = 0; j < data.cols(); ++j) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (std::size_t i = 0; i < data.rows(); ++i) {
                lo = std::min(lo, data(i, j));
                hi = std::max(hi, data(i, j));
            }
            s.mins[j] = data.rows() ? lo : 0.0;
            s.maxs[j] = data.rows() ? hi : 0.0;
        }
        return s;
    }

    void apply(std::span<const double> in, std::span<double> out) const {
        for (std::size_t j = 0; j < in.size(); ++j) {
            const double range = maxs[j] - mins[j];
            out[j] = range > 0.0 ? (in[j] - mins[j]) / range : 0.0;
        }
    }

    DataMatrix transform(const DataMatrix& data) const {
        if (data.cols() != mins.size()) {
            throw DataError("scaler expects " + std::to_string(mins.size()) + " features, got " +
                            std::to_string(data.cols()));
        }
        std::vector<double> values(data.values().size());
        for (std::size_t i = 0; i < data.rows(); ++i) {
            apply(data.row(i), std::span<double>(values.data() + i * data.cols(), data.cols()));
        }
        DataMatrix out(data.rows(), data.cols(), std::move(values),
                       data.has_labels() ? std::optional<std::vector<int>>(data.labels()) : std::nullopt);
        out.set_feature_names(data.feature_names());
        return out;
    }
};

/// Distinct row indices drawn for one tree.
struct Subsample {
    std::vector<std::size_t> indices;
    std::size_t size() const noexcept { return indices.size(); }
};

/// Uniform sample of min(psi, n) distinct rows without replacement (partial
/// Fisher-Yates). Indices are returned in draw order.
template <class URBG>
Subsample subsample(const DataMatrix& data, std::size_t psi, URBG& rng) {
    if (psi < 2) throw ConfigError("sample size must be >= 2, got " + std::to_string(psi));
    const std::size_t n = data.rows();
    if (n < 2) throw DataError("at least 2 rows are required to subsample, got " + std::to_string(n));
    const std::size_t k = std::min(psi, n);
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return Subsample{std::move(pool)};
}

} // namespace optiforest
