#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optiforest/data.hpp"
#include "optiforest/error.hpp"
#include "optiforest/forest.hpp"
#include "optiforest/model_io.hpp"

namespace optiforest::eval {

namespace detail {

inline std::size_t count_positives(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw DataError("score count " + std::to_string(scores.size()) + " does not match label count " +
                        std::to_string(labels.size()));
    }
    std::size_t pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw DataError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(l);
    }
    if (pos == 0 || pos == labels.size()) throw DataError("both classes must be present to compute an AUC");
    return pos;
}

} // namespace detail

/// Probability that a random anomaly outscores a random normal instance, ties
/// counted as one half (Mann-Whitney U with mid-ranks).
inline double auc_roc(std::span<const double> scores, std::span<const int> labels) {
    const std::size_t pos = detail::count_positives(scores, labels);
    const std::size_t neg = labels.size() - pos;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of mid-ranks (1-based) of the positives, doubled to stay integral.
    std::uint64_t twice_rank_sum = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i + 1;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const std::uint64_t twice_mid = static_cast<std::uint64_t>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) twice_rank_sum += twice_mid;
        }
        i = j;
    }
    const double u = static_cast<double>(twice_rank_sum - static_cast<std::uint64_t>(pos) * (pos + 1)) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Average precision: sum over descending score thresholds of
/// (recall gain) * precision. Tied scores form a single threshold.
inline double auc_pr(std::span<const double> scores, std::span<const int> labels) {
    const std::size_t pos = detail::count_positives(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    std::size_t tp = 0, seen = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::size_t gained = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            gained += static_cast<std::size_t>(labels[order[j]]);
            ++j;
        }
        tp += gained;
        seen = j;
        if (gained) {
            const double precision = static_cast<double>(tp) / static_cast<double>(seen);
            ap += static_cast<double>(gained) / static_cast<double>(pos) * precision;
        }
        i = j;
    }
    return ap;
}

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0; // population standard deviation
    std::size_t runs = 0;
    std::vector<double> values;

    static MetricSummary of(std::vector<double> values) {
        MetricSummary m;
        m.runs = values.size();
        if (!values.empty()) {
            m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
            double ss = 0.0;
            for (double v : values) ss += (v - m.mean) * (v - m.mean);
            m.std = std::sqrt(ss / static_cast<double>(values.size()));
        }
        m.values = std::move(values);
        return m;
    }
};

struct EvalReport {
    MetricSummary auc_roc;
    MetricSummary auc_pr;
    std::size_t runs = 0;
    double runtime_s = 0.0;
    ForestConfig config;
    std::size_t psi_effective = 0;
    std::size_t epsilon_used = 0;
};

inline nlohmann::json to_json(const MetricSummary& m) {
    return {{"mean", m.mean}, {"std", m.std}, {"runs", m.runs}, {"values", m.values}};
}

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json echo = config_to_json(r.config);
    echo["psi_effective"] = r.psi_effective;
    echo["epsilon_used"] = r.epsilon_used;
    return {{"auc_roc", to_json(r.auc_roc)},
            {"auc_pr", to_json(r.auc_pr)},
            {"runtime_s", r.runtime_s},
            {"config_echo", echo}};
}

/// Fits and scores `repeats` forests with seeds seed, seed+1, ... and
/// summarizes both metrics.
inline EvalReport run_experiment(const DataMatrix& data, const ForestConfig& config, std::size_t repeats = 15,
                                 std::size_t jobs = 1) {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    const auto& labels = data.labels();
    const auto start = std::chrono::steady_clock::now();
    std::vector<double> roc, pr;
    EvalReport report;
    for (std::size_t r = 0; r < repeats; ++r) {
        ForestConfig cfg = config;
        cfg.seed = config.seed + r;
        const Forest forest = fit(data, cfg, jobs);
        const auto scores = score_all(forest, data);
        roc.push_back(auc_roc(scores, labels));
        pr.push_back(auc_pr(scores, labels));
        report.psi_effective = forest.psi_effective;
        report.epsilon_used = forest.epsilon_used;
    }
    report.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.auc_roc = MetricSummary::of(std::move(roc));
    report.auc_pr = MetricSummary::of(std::move(pr));
    report.runs = repeats;
    report.config = config;
    return report;
}

enum class Axis { Branching, Epsilon, SampleSize };

inline std::string axis_name(Axis a) {
    switch (a) {
    case Axis::Branching: return "branching";
    case Axis::Epsilon: return "epsilon";
    case Axis::SampleSize: return "sample_size";
    }
    return "unknown";
}

inline Axis parse_axis(const std::string& s) {
    if (s == "branching") return Axis::Branching;
    if (s == "epsilon") return Axis::Epsilon;
    if (s == "sample_size" || s == "sample-size") return Axis::SampleSize;
    throw ConfigError("unknown ablation axis '" + s + "' (expected branching, epsilon, sample_size)");
}

/// Rounded powers of e used as cut thresholds: e^2 .. e^8.
inline std::int64_t rounded_power_of_e(int k) { return std::llround(std::exp(static_cast<double>(k))); }

/// Default grids for each axis.
inline std::vector<std::int64_t> default_grid(Axis axis) {
    switch (axis) {
    case Axis::Branching: return {2, 3, 4, 8};
    case Axis::Epsilon: return {rounded_power_of_e(2), rounded_power_of_e(3), rounded_power_of_e(4),
                                rounded_power_of_e(5), rounded_power_of_e(6)};
    case Axis::SampleSize: return {64, 128, 256, 512, 1024, 2048};
    }
    return {};
}

struct AblationRow {
    Axis axis = Axis::Branching;
    std::int64_t grid_value = 0;
    EvalReport report;
};

/// One report per grid point.
///   branching:   ε = ψ (no learning) with Fixed(v) and LSH splits spanning v buckets.
///   epsilon:     the given thresholds plus the boundary ε = ψ.
///   sample_size: for each ψ the best mean AUC-ROC over ε ∈ {e^2..e^6, ψ}.
inline std::vector<AblationRow> ablate(const DataMatrix& data, Axis axis, std::vector<std::int64_t> grid,
                                       const ForestConfig& base, std::size_t repeats = 15, std::size_t jobs = 1) {
    if (grid.empty()) throw ConfigError("ablation grid is empty");
    base.validate();
    const std::size_t psi_eff = std::min(base.psi, data.rows());
    std::vector<AblationRow> rows;

    switch (axis) {
    case Axis::Branching:
        for (std::int64_t v : grid) {
            if (v < 2) throw ConfigError("branching grid values must be >= 2, got " + std::to_string(v));
            ForestConfig cfg = base;
            cfg.mode = Mode::LshOnly;
            cfg.epsilon = std::nullopt;
            cfg.distribution = theory::BranchingDistribution::fixed(v);
            cfg.lsh_arity = v;
            rows.push_back({axis, v, run_experiment(data, cfg, repeats, jobs)});
        }
        break;
    case Axis::Epsilon: {
        for (std::int64_t e : grid) {
            if (e < 1 || static_cast<std::size_t>(e) > psi_eff) {
                throw ConfigError("epsilon grid value " + std::to_string(e) + " outside [1, " + std::to_string(psi_eff) + "]");
            }
        }
        if (std::find(grid.begin(), grid.end(), static_cast<std::int64_t>(psi_eff)) == grid.end()) {
            grid.push_back(static_cast<std::int64_t>(psi_eff));
        }
        for (std::int64_t e : grid) {
            ForestConfig cfg = base;
            cfg.mode = Mode::OptIForest;
            cfg.epsilon = static_cast<std::size_t>(e);
            rows.push_back({axis, e, run_experiment(data, cfg, repeats, jobs)});
        }
        break;
    }
    case Axis::SampleSize:
        for (std::int64_t psi : grid) {
            if (psi < 2) throw ConfigError("sample-size grid values must be >= 2, got " + std::to_string(psi));
            const std::size_t eff = std::min<std::size_t>(static_cast<std::size_t>(psi), data.rows());
            std::vector<std::int64_t> eps;
            for (int k = 2; k <= 6; ++k) {
                const auto e = rounded_power_of_e(k);
                if (static_cast<std::size_t>(e) < eff) eps.push_back(e);
            }
            eps.push_back(static_cast<std::int64_t>(eff));
            std::optional<EvalReport> best;
            for (std::int64_t e : eps) {
                ForestConfig cfg = base;
                cfg.mode = Mode::OptIForest;
                cfg.psi = static_cast<std::size_t>(psi);
                cfg.epsilon = static_cast<std::size_t>(e);
                EvalReport r = run_experiment(data, cfg, repeats, jobs);
                if (!best || r.auc_roc.mean > best->auc_roc.mean) best = std::move(r);
            }
            rows.push_back({axis, psi, std::move(*best)});
        }
        break;
    }
    return rows;
}

inline nlohmann::json to_json(const std::vector<AblationRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& row : rows) {
        nlohmann::json j = to_json(row.report);
        j["axis"] = axis_name(row.axis);
        j["grid_value"] = row.grid_value;
        out.push_back(std::move(j));
    }
    return out;
}

/// One CSV row per grid point.
inline std::string to_csv(const std::vector<AblationRow>& rows) {
    std::string out = "axis,grid_value,sample_size,epsilon,distribution,mode,auc_roc_mean,auc_roc_std,auc_pr_mean,auc_pr_std,runs,runtime_s\n";
    char buf[512];
    for (const auto& row : rows) {
        const auto& r = row.report;
        std::snprintf(buf, sizeof buf, "%s,%lld,%zu,%zu,%s,%s,%.6f,%.6f,%.6f,%.6f,%zu,%.3f\n", axis_name(row.axis).c_str(),
                      static_cast<long long>(row.grid_value), r.psi_effective, r.epsilon_used,
                      r.config.distribution.name().c_str(), mode_name(r.config.mode).c_str(), r.auc_roc.mean,
                      r.auc_roc.std, r.auc_pr.mean, r.auc_pr.std, r.runs, r.runtime_s);
        out += buf;
    }
    return out;
}

} // namespace optiforest::eval
