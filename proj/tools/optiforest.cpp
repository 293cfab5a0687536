// Command-line front end: fit, score, eval, ablate, theory.
//
// Exit codes: 0 ok, 2 usage, 3 data, 4 internal.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "optiforest/optiforest.hpp"

namespace {

using optiforest::ConfigError;
using optiforest::DataError;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kInternal = 4 };

struct ForestFlags {
    std::size_t trees = 100;
    std::size_t sample_size = 512;
    std::string epsilon = "auto";
    std::string distribution = "finite23";
    std::string mode = "optiforest";
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> lsh_arity;
    bool scale = false;
    std::size_t jobs = 1;
};

void add_forest_flags(CLI::App& cmd, ForestFlags& f) {
    cmd.add_option("--trees", f.trees, "Number of trees")->capture_default_str()->check(CLI::PositiveNumber);
    cmd.add_option("--sample-size", f.sample_size, "Subsample size per tree")->capture_default_str();
    cmd.add_option("--epsilon", f.epsilon, "Cut threshold: integer, auto, or e2..e8")->capture_default_str();
    cmd.add_option("--distribution", f.distribution, "finite23 | geometric | factorial | fixed:<v>")
        ->capture_default_str();
    cmd.add_option("--mode", f.mode, "optiforest | lsh-only")->capture_default_str();
    cmd.add_option("--seed", f.seed, "Random seed (falls back to $OPTIFOREST_SEED, then 0)");
    cmd.add_option("--lsh-arity", f.lsh_arity, "Buckets spanned by each LSH split (default rule: 3)");
    cmd.add_flag("--scale", f.scale, "Min-max scale features before fitting");
    cmd.add_option("--jobs", f.jobs, "Parallel tree builds (output identical for any value)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
}

std::optional<std::size_t> parse_epsilon(const std::string& text) {
    if (text == "auto") return std::nullopt;
    if (text.size() == 2 && text[0] == 'e' && text[1] >= '2' && text[1] <= '8') {
        return static_cast<std::size_t>(optiforest::eval::rounded_power_of_e(text[1] - '0'));
    }
    std::size_t pos = 0;
    long long value = 0;
    try {
        value = std::stoll(text, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != text.size() || text.empty()) {
        throw ConfigError("--epsilon must be an integer, auto, or e2..e8; got '" + text + "'");
    }
    if (value < 1) throw ConfigError("--epsilon must be >= 1, got " + text);
    return static_cast<std::size_t>(value);
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("OPTIFOREST_SEED")) {
        try {
            std::size_t pos = 0;
            const auto v = std::stoull(env, &pos);
            if (pos == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("OPTIFOREST_SEED is not an unsigned integer: '") + env + "'");
    }
    return 0;
}

optiforest::ForestConfig to_config(const ForestFlags& f) {
    optiforest::ForestConfig c;
    c.trees = f.trees;
    c.psi = f.sample_size;
    c.epsilon = parse_epsilon(f.epsilon);
    c.distribution = optiforest::theory::BranchingDistribution::parse(f.distribution);
    c.mode = optiforest::parse_mode(f.mode);
    c.seed = resolve_seed(f.seed);
    c.lsh_arity = f.lsh_arity;
    c.min_max_scale = f.scale;
    if (c.mode == optiforest::Mode::LshOnly && c.epsilon) {
        throw ConfigError("--epsilon conflicts with --mode lsh-only (which implies epsilon = sample size)");
    }
    c.validate();
    return c;
}

// Writes to `path`, or stdout when empty.
void emit(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        std::cout.flush();
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw DataError("failed writing '" + path + "'");
}

std::optional<std::string> label_opt(const std::string& s) {
    return s.empty() ? std::nullopt : std::optional<std::string>(s);
}

std::string format_scores(const std::vector<double>& scores, const std::string& format) {
    if (format == "json") return json(scores).dump() + "\n";
    std::string out = "row_index,score\n";
    char buf[64];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, scores[i]);
        out += buf;
    }
    return out;
}

json theory_report() {
    namespace th = optiforest::theory;
    json report;
    json optimal = json::array();
    for (double area : {1.0, 2.0, 6.0, 20.0, 100.0}) {
        const double v = th::optimal_branching(area, 1e-6);
        optimal.push_back({{"phi", area}, {"v", v}, {"abs_error_vs_e", std::abs(v - th::kE)}});
    }
    report["optimal_branching"] = optimal;

    json dists = json::array();
    for (const auto& d : {th::BranchingDistribution::finite23(), th::BranchingDistribution::geometric(),
                          th::BranchingDistribution::factorial(), th::BranchingDistribution::fixed(2),
                          th::BranchingDistribution::fixed(3)}) {
        const auto r = th::validate_distribution(d);
        dists.push_back({{"distribution", r.distribution},
                         {"mass", r.mass},
                         {"mean", r.mean},
                         {"p2", r.p2},
                         {"max_bound_violation", r.max_bound_violation},
                         {"tail_v3_to_v20", r.tail},
                         {"mass_ok", r.mass_ok},
                         {"mean_ok", r.mean_ok},
                         {"bound_ok", r.bound_ok},
                         {"p2_ok", r.p2_ok},
                         {"passed", r.passed()},
                         {"failures", r.failures}});
    }
    report["distributions"] = dists;

    json bounds = json::array();
    for (std::int64_t v = 3; v <= 20; ++v) bounds.push_back({{"v", v}, {"bound", th::tail_bound(v)}});
    report["tail_bounds"] = bounds;
    return report;
}

std::string efficiency_curve(double area) {
    std::string out = "v,eta\n";
    char buf[64];
    for (int k = 110; k <= 1000; ++k) {
        const double v = k / 100.0;
        std::snprintf(buf, sizeof buf, "%.2f,%.17g\n", v, optiforest::theory::efficiency_at_fixed_area(v, area));
        out += buf;
    }
    return out;
}

std::vector<std::int64_t> parse_grid(const std::string& text, optiforest::eval::Axis axis) {
    std::vector<std::int64_t> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw ConfigError("empty value in --grid '" + text + "'");
        if (axis == optiforest::eval::Axis::Epsilon) {
            const auto e = parse_epsilon(item);
            if (!e) throw ConfigError("--grid does not accept 'auto'");
            grid.push_back(static_cast<std::int64_t>(*e));
        } else {
            std::size_t pos = 0;
            long long v = 0;
            try {
                v = std::stoll(item, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != item.size()) throw ConfigError("--grid value '" + item + "' is not an integer");
            grid.push_back(v);
        }
    }
    return grid;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal isolation forest anomaly detector"};
    app.require_subcommand(1);

    ForestFlags forest_flags;
    std::string input, label_col, out, model_path, format = "csv", table, axis_text = "branching", grid_text;
    std::size_t repeats = 15;
    std::optional<double> curve;

    auto* fit_cmd = app.add_subcommand("fit", "Fit a forest and write a model file");
    fit_cmd->add_option("--input", input, "CSV with a header row")->required();
    fit_cmd->add_option("--label-col", label_col, "Label column to drop from features");
    fit_cmd->add_option("--out", out, "Model output path")->required();
    add_forest_flags(*fit_cmd, forest_flags);

    auto* score_cmd = app.add_subcommand("score", "Score rows with a fitted model");
    score_cmd->add_option("--model", model_path, "Model file")->required();
    score_cmd->add_option("--input", input, "CSV with a header row")->required();
    score_cmd->add_option("--label-col", label_col, "Label column to drop from features");
    score_cmd->add_option("--out", out, "Output path (default stdout)");
    score_cmd->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();

    auto* eval_cmd = app.add_subcommand("eval", "Repeated fit/score runs with AUC-ROC and AUC-PR");
    eval_cmd->add_option("--input", input, "Labeled CSV")->required();
    eval_cmd->add_option("--label-col", label_col, "Label column (1 = anomaly)");
    eval_cmd->add_option("--repeats", repeats, "Runs with seeds seed..seed+repeats-1")->capture_default_str()->check(CLI::PositiveNumber);
    eval_cmd->add_option("--out", out, "JSON report path (default stdout)");
    add_forest_flags(*eval_cmd, forest_flags);

    auto* ablate_cmd = app.add_subcommand("ablate", "Ablation over branching, epsilon or sample size");
    ablate_cmd->add_option("--input", input, "Labeled CSV")->required();
    ablate_cmd->add_option("--label-col", label_col, "Label column (1 = anomaly)");
    ablate_cmd->add_option("--axis", axis_text, "branching | epsilon | sample_size")->capture_default_str();
    ablate_cmd->add_option("--grid", grid_text, "Comma-separated grid (epsilon accepts e2..e8)");
    ablate_cmd->add_option("--repeats", repeats, "Runs per grid point")->capture_default_str()->check(CLI::PositiveNumber);
    ablate_cmd->add_option("--out", out, "JSON report path (default stdout)");
    ablate_cmd->add_option("--table", table, "CSV table path (default <out>.csv when --out is set)");
    add_forest_flags(*ablate_cmd, forest_flags);

    auto* theory_cmd = app.add_subcommand("theory", "Isolation-efficiency and distribution checks");
    theory_cmd->add_option("--curve", curve, "Emit (v, eta(v)) CSV for this isolation area instead")
        ->check(CLI::PositiveNumber);
    theory_cmd->add_option("--out", out, "Output path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*fit_cmd) {
            const auto config = to_config(forest_flags);
            const auto data = optiforest::load_csv(input, label_opt(label_col));
            const auto start = std::chrono::steady_clock::now();
            const auto forest = optiforest::fit(data, config, forest_flags.jobs);
            const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            optiforest::save_model(forest, out);
            json summary = {{"model", out},
                            {"trees", forest.trees.size()},
                            {"psi_effective", forest.psi_effective},
                            {"epsilon_used", forest.epsilon_used},
                            {"build_time_s", seconds},
                            {"config", optiforest::config_to_json(config)}};
            std::cout << summary.dump(2) << "\n";
        } else if (*score_cmd) {
            const auto forest = optiforest::load_model(model_path);
            const auto data = optiforest::load_csv(input, label_opt(label_col));
            emit(out, format_scores(optiforest::score_all(forest, data), format));
        } else if (*eval_cmd) {
            const auto config = to_config(forest_flags);
            const auto data = optiforest::load_csv(input, label_opt(label_col));
            if (!data.has_labels()) throw DataError("eval needs labels; pass --label-col");
            const auto report = optiforest::eval::run_experiment(data, config, repeats, forest_flags.jobs);
            emit(out, optiforest::eval::to_json(report).dump(2) + "\n");
        } else if (*ablate_cmd) {
            const auto axis = optiforest::eval::parse_axis(axis_text);
            const auto config = to_config(forest_flags);
            const auto data = optiforest::load_csv(input, label_opt(label_col));
            if (!data.has_labels()) throw DataError("ablate needs labels; pass --label-col");
            std::vector<std::int64_t> grid;
            if (grid_text.empty()) {
                grid = optiforest::eval::default_grid(axis);
                if (axis == optiforest::eval::Axis::Epsilon) {
                    const auto psi_eff = static_cast<std::int64_t>(std::min(config.psi, data.rows()));
                    std::erase_if(grid, [psi_eff](std::int64_t e) { return e > psi_eff; });
                }
            } else {
                grid = parse_grid(grid_text, axis);
            }
            const auto rows = optiforest::eval::ablate(data, axis, grid, config, repeats, forest_flags.jobs);
            json report = {{"axis", optiforest::eval::axis_name(axis)},
                           {"grid", grid},
                           {"repeats", repeats},
                           {"base_config", optiforest::config_to_json(config)},
                           {"rows", optiforest::eval::to_json(rows)}};
            emit(out, report.dump(2) + "\n");
            const std::string table_path = !table.empty() ? table : (out.empty() ? "" : out + ".csv");
            if (!table_path.empty()) emit(table_path, optiforest::eval::to_csv(rows));
        } else if (*theory_cmd) {
            emit(out, curve ? efficiency_curve(*curve) : theory_report().dump(2) + "\n");
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kOk;
}
