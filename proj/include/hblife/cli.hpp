// Command-line front end: synth, extract, cluster, fit, predict, evaluate,
// baseline, report. Flags override config-file values override defaults;
// every run writes a manifest and embeds its hash in the artifacts.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hblife/baseline.hpp"
#include "hblife/clustering.hpp"
#include "hblife/common.hpp"
#include "hblife/dataset.hpp"
#include "hblife/eval.hpp"
#include "hblife/features.hpp"
#include "hblife/hbm.hpp"
#include "hblife/manifest.hpp"
#include "hblife/pipeline.hpp"

namespace hblife::cli {

namespace detail {

inline nlohmann::json load_config_file(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    std::ifstream in(path);
    if (!in) fail("cli: cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail("cli: config file '" + path + "' is not valid JSON: " + e.what());
    }
}

/// Config-file fallback for a flag the user did not pass. Key = long flag
/// name without the leading dashes.
template <typename T>
void merge_config(const CLI::App& sub, const nlohmann::json& cfg, const std::string& flag, T& var) {
    if (sub.count(flag) > 0) return;
    const std::string key = flag.substr(2);
    if (cfg.contains(key)) var = cfg.at(key).get<T>();
}

inline std::vector<double> parse_double_list(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const auto& tok : split(text, ',')) {
        double v;
        if (!parse_double(tok, v)) fail("cli: malformed " + what + " entry '" + tok + "'");
        out.push_back(v);
    }
    return out;
}

inline void print_report_summary(const EvalReport& report, std::ostream& os) {
    os << "trials per model: "
       << (report.aggregates.empty() ? 0
                                     : static_cast<int>(report.per_trial.size() / report.aggregates.size()))
       << ", vpc: " << format_double(report.vpc_value) << ", reference: " << report.reference_model
       << "\n";
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %12s %12s %12s %12s %14s %14s\n", "model", "rmse_median",
                  "rmse_mean", "mape_median", "mape_mean", "improv_rmse%", "improv_mape%");
    os << line;
    for (const auto& [tag, a] : report.aggregates) {
        std::snprintf(line, sizeof(line), "%-10s %12.4f %12.4f %12.4f %12.4f %14.2f %14.2f\n", tag.c_str(),
                      a.rmse_median, a.rmse_mean, a.mape_median, a.mape_mean, a.improvement_rmse_median,
                      a.improvement_mape_median);
        os << line;
    }
}

inline void write_json_artifact(const nlohmann::json& j, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail("cli: cannot write '" + path.string() + "'");
    out << j.dump(2) << "\n";
}

struct ClusterFlags {
    int k = 8;
    int min_size = 10;
    int max_size = 100;
    int restarts = 10;

    ClusterConfig to_config() const { return ClusterConfig{k, min_size, max_size, restarts, 100}; }
    nlohmann::json snapshot() const {
        return {{"k", k}, {"min_size", min_size}, {"max_size", max_size}, {"restarts", restarts}};
    }
};

struct McmcFlags {
    int chains = 4;
    int warmup = 1000;
    int samples = 1000;
    double init_step = 0.25;
    int threads = 1;

    McmcConfig to_config() const {
        McmcConfig m;
        m.n_chains = chains;
        m.n_warmup = warmup;
        m.n_samples = samples;
        m.init_step = init_step;
        m.threads = threads;
        return m;
    }
    nlohmann::json snapshot() const {
        return {{"chains", chains}, {"warmup", warmup}, {"samples", samples}, {"init_step", init_step}};
    }
};

} // namespace detail

/// Runs one subcommand; args exclude the program name. Returns the exit code.
inline int run(const std::vector<std::string>& args) {
    CLI::App app{"hblife: early-life battery lifetime prediction pipeline"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic fleet from the generative model");
    struct {
        std::uint64_t seed = 0;
        int groups = 8, cells = 15;
        double g_min = 3.0, g_max = 8.0, sigma_y = 0.05;
        std::string label_transform = "log10";
        std::string config, out;
    } sy;
    synth->add_option("--seed", sy.seed, "master seed (required)");
    synth->add_option("--groups", sy.groups, "number of usage groups");
    synth->add_option("--cells", sy.cells, "cells per group");
    synth->add_option("--g-min", sy.g_min, "lower end of the average C-rate range");
    synth->add_option("--g-max", sy.g_max, "upper end of the average C-rate range");
    synth->add_option("--sigma-y", sy.sigma_y, "level-1 noise scale of the generator");
    synth->add_option("--label-transform", sy.label_transform, "identity or log10");
    synth->add_option("--config", sy.config, "JSON file with the full generator config");
    synth->add_option("--out", sy.out, "output directory (required)");

    // ---- extract ----
    auto* extract = app.add_subcommand("extract", "extract features g, F1-F3 from per-cell cycle data");
    struct {
        std::string data, out;
        double vmin = 2.0, vmax = 3.5, log_clamp = 1e-12;
        int grid_points = 1000;
        std::string label_transform = "log10";
        std::string config;
    } ex;
    extract->add_option("--data", ex.data, "directory with <cell>.meta.json + <cell>.cycles.csv");
    extract->add_option("--out", ex.out, "output directory");
    extract->add_option("--vmin", ex.vmin, "voltage grid lower end");
    extract->add_option("--vmax", ex.vmax, "voltage grid upper end");
    extract->add_option("--grid-points", ex.grid_points, "voltage grid resolution");
    extract->add_option("--log-clamp", ex.log_clamp, "clamp floor inside the F1/F2 logs");
    extract->add_option("--label-transform", ex.label_transform, "identity or log10");
    extract->add_option("--config", ex.config, "JSON config file");

    // ---- cluster ----
    auto* cluster = app.add_subcommand("cluster", "size-constrained K-means over the usage feature g");
    struct {
        std::string features, out, config;
        detail::ClusterFlags flags;
        std::uint64_t seed = 0;
    } cl;
    cluster->add_option("--features", cl.features, "feature table CSV");
    cluster->add_option("--k", cl.flags.k, "cluster count");
    cluster->add_option("--min-size", cl.flags.min_size, "minimum cluster size");
    cluster->add_option("--max-size", cl.flags.max_size, "maximum cluster size");
    cluster->add_option("--restarts", cl.flags.restarts, "k-means++ restarts");
    cluster->add_option("--seed", cl.seed, "seed for the restarts");
    cluster->add_option("--out", cl.out, "output directory");
    cluster->add_option("--config", cl.config, "JSON config file");

    // ---- fit ----
    auto* fit = app.add_subcommand("fit", "fit the hierarchical Bayesian model");
    struct {
        std::string features, out, config;
        std::uint64_t seed = 0;
        detail::ClusterFlags cluster;
        detail::McmcFlags mcmc;
        double sigma_y = 1.0, hyper_prior_scale = 10.0, scale_prior_scale = 1.0;
        double infer_sigma_y = 0.0; // > 0 -> half-normal prior scale on sigma_y
        std::string label_transform = "log10";
    } ft;
    fit->add_option("--features", ft.features, "feature table CSV");
    fit->add_option("--seed", ft.seed, "master seed (required)");
    fit->add_option("--k", ft.cluster.k, "cluster count");
    fit->add_option("--min-size", ft.cluster.min_size, "minimum cluster size");
    fit->add_option("--max-size", ft.cluster.max_size, "maximum cluster size");
    fit->add_option("--restarts", ft.cluster.restarts, "k-means++ restarts");
    fit->add_option("--chains", ft.mcmc.chains, "MCMC chains");
    fit->add_option("--warmup", ft.mcmc.warmup, "warmup iterations per chain");
    fit->add_option("--samples", ft.mcmc.samples, "kept iterations per chain");
    fit->add_option("--init-step", ft.mcmc.init_step, "initial random-walk step size");
    fit->add_option("--threads", ft.mcmc.threads, "parallel chains cap");
    fit->add_option("--sigma-y", ft.sigma_y, "level-1 noise scale (transformed label units)");
    fit->add_option("--hyper-prior-scale", ft.hyper_prior_scale, "std dev of the gamma prior");
    fit->add_option("--scale-prior-scale", ft.scale_prior_scale, "half-normal scale of the sigma prior");
    fit->add_option("--infer-sigma-y", ft.infer_sigma_y,
                    "sample sigma_y under a half-normal prior with this scale (0 = keep fixed)");
    fit->add_option("--label-transform", ft.label_transform, "identity or log10");
    fit->add_option("--out", ft.out, "output directory");
    fit->add_option("--config", ft.config, "JSON config file");

    // ---- predict ----
    auto* predict_cmd = app.add_subcommand("predict", "predict lifetimes from a fitted posterior");
    struct {
        std::string posterior, features, out, config;
        double interval = 0.1;
    } pr;
    predict_cmd->add_option("--posterior", pr.posterior, "directory with posterior.json + samples.csv");
    predict_cmd->add_option("--features", pr.features, "feature table CSV (labels optional)");
    predict_cmd->add_option("--interval", pr.interval, "alpha for the central credible interval");
    predict_cmd->add_option("--out", pr.out, "output directory");
    predict_cmd->add_option("--config", pr.config, "JSON config file");

    // ---- evaluate ----
    auto* evaluate = app.add_subcommand("evaluate", "repeated k-fold CV across models");
    struct {
        std::string features, out, config;
        std::uint64_t seed = 0;
        std::string models = "hbm,ridge3,ridge4";
        int k = 5, repeats = 4;
        detail::ClusterFlags cluster;
        detail::McmcFlags mcmc;
        double sigma_y = 1.0, hyper_prior_scale = 10.0, scale_prior_scale = 1.0;
        std::string label_transform = "log10";
        std::string lambda_grid; // comma separated; empty = default grid
        int inner_folds = 5;
        std::string reference;
    } ev;
    evaluate->add_option("--features", ev.features, "feature table CSV");
    evaluate->add_option("--seed", ev.seed, "master seed (required)");
    evaluate->add_option("--models", ev.models, "comma list from {hbm, ridge3, ridge4, mean}");
    evaluate->add_option("--k", ev.k, "CV folds");
    evaluate->add_option("--repeats", ev.repeats, "CV repeats");
    evaluate->add_option("--clusters", ev.cluster.k, "cluster count");
    evaluate->add_option("--min-size", ev.cluster.min_size, "minimum cluster size");
    evaluate->add_option("--max-size", ev.cluster.max_size, "maximum cluster size");
    evaluate->add_option("--restarts", ev.cluster.restarts, "k-means++ restarts");
    evaluate->add_option("--chains", ev.mcmc.chains, "MCMC chains");
    evaluate->add_option("--warmup", ev.mcmc.warmup, "warmup iterations per chain");
    evaluate->add_option("--samples", ev.mcmc.samples, "kept iterations per chain");
    evaluate->add_option("--init-step", ev.mcmc.init_step, "initial random-walk step size");
    evaluate->add_option("--threads", ev.mcmc.threads, "parallel chains cap");
    evaluate->add_option("--sigma-y", ev.sigma_y, "level-1 noise scale (transformed label units)");
    evaluate->add_option("--hyper-prior-scale", ev.hyper_prior_scale, "std dev of the gamma prior");
    evaluate->add_option("--scale-prior-scale", ev.scale_prior_scale, "half-normal scale of the sigma prior");
    evaluate->add_option("--label-transform", ev.label_transform, "identity or log10");
    evaluate->add_option("--lambda-grid", ev.lambda_grid, "comma list of ridge lambdas");
    evaluate->add_option("--inner-folds", ev.inner_folds, "inner CV folds for lambda selection");
    evaluate->add_option("--reference", ev.reference, "reference model tag for the improvement column");
    evaluate->add_option("--out", ev.out, "output directory");
    evaluate->add_option("--config", ev.config, "JSON config file");

    // ---- baseline ----
    auto* baseline_cmd = app.add_subcommand("baseline", "fit the pooled ridge baseline");
    struct {
        std::string input, out, config;
        std::string features = "f1,f2,f3";
        std::string lambda_grid;
        int inner_folds = 5;
        std::uint64_t seed = 0;
        std::string label_transform = "log10";
    } bl;
    baseline_cmd->add_option("--input", bl.input, "feature table CSV");
    baseline_cmd->add_option("--features", bl.features, "feature columns, e.g. f1,f2,f3,g");
    baseline_cmd->add_option("--lambda-grid", bl.lambda_grid, "comma list of ridge lambdas");
    baseline_cmd->add_option("--inner-folds", bl.inner_folds, "inner CV folds for lambda selection");
    baseline_cmd->add_option("--seed", bl.seed, "seed for lambda selection (required)");
    baseline_cmd->add_option("--label-transform", bl.label_transform, "identity or log10");
    baseline_cmd->add_option("--out", bl.out, "output directory");
    baseline_cmd->add_option("--config", bl.config, "JSON config file");

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "verify and summarize an evaluation directory");
    struct {
        std::string in;
    } rp;
    report_cmd->add_option("--in", rp.in, "directory written by evaluate");

    std::vector<std::string> argv_store;
    argv_store.push_back("hblife");
    for (const auto& a : args) argv_store.push_back(a);
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());

        auto require_opt = [&](const CLI::App& sub, const nlohmann::json& cfg, const char* flag,
                               const std::string& what) {
            if (sub.count(flag) == 0 && !cfg.contains(std::string(flag).substr(2)))
                throw CLI::RequiredError(what + " (" + flag + ")");
        };

        if (app.got_subcommand(synth)) {
            const nlohmann::json cfg = detail::load_config_file(sy.config);
            require_opt(*synth, cfg, "--seed", "synth needs a seed");
            require_opt(*synth, cfg, "--out", "synth needs an output directory");
            SyntheticConfig sc = synthetic_config_from_json(cfg);
            detail::merge_config(*synth, cfg, "--seed", sy.seed);
            detail::merge_config(*synth, cfg, "--out", sy.out);
            if (synth->count("--groups")) sc.n_groups = sy.groups;
            if (synth->count("--cells")) sc.cells_per_group = sy.cells;
            if (synth->count("--g-min")) sc.g_min = sy.g_min;
            if (synth->count("--g-max")) sc.g_max = sy.g_max;
            if (synth->count("--sigma-y")) sc.sigma_y = sy.sigma_y;
            if (synth->count("--label-transform"))
                sc.label_transform = label_transform_from_string(sy.label_transform);

            auto [table, truth] = generate_synthetic(sc, sy.seed);
            Manifest manifest;
            manifest.command = "synth";
            manifest.seed = sy.seed;
            manifest.config = to_json(sc);
            if (!sy.config.empty()) manifest.input_hashes[sy.config] = hash_file(sy.config);
            const std::string hash = manifest.hash();
            std::filesystem::create_directories(sy.out);
            write_feature_table(table, std::filesystem::path(sy.out) / "features.csv", hash);
            nlohmann::json tj = to_json(truth);
            tj["manifest_hash"] = hash;
            detail::write_json_artifact(tj, std::filesystem::path(sy.out) / "truth.json");
            manifest.write(sy.out);
            std::cout << "wrote " << table.rows.size() << " cells to " << sy.out << " (manifest " << hash
                      << ")\n";
            return 0;
        }

        if (app.got_subcommand(extract)) {
            const nlohmann::json cfg = detail::load_config_file(ex.config);
            require_opt(*extract, cfg, "--data", "extract needs a data directory");
            require_opt(*extract, cfg, "--out", "extract needs an output directory");
            detail::merge_config(*extract, cfg, "--data", ex.data);
            detail::merge_config(*extract, cfg, "--out", ex.out);
            detail::merge_config(*extract, cfg, "--vmin", ex.vmin);
            detail::merge_config(*extract, cfg, "--vmax", ex.vmax);
            detail::merge_config(*extract, cfg, "--grid-points", ex.grid_points);
            detail::merge_config(*extract, cfg, "--log-clamp", ex.log_clamp);
            detail::merge_config(*extract, cfg, "--label-transform", ex.label_transform);

            CycleDataResult data = load_cycle_data(ex.data);
            for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
            GridConfig grid{ex.vmax, ex.vmin, ex.grid_points};
            std::vector<std::string> skipped;
            const FeatureTable table = extract_feature_table(
                data.records, grid, ex.log_clamp, label_transform_from_string(ex.label_transform), &skipped);
            for (const auto& id : skipped)
                std::cerr << "warning: cell '" << id << "' skipped (missing required cycles)\n";

            Manifest manifest;
            manifest.command = "extract";
            manifest.config = {{"data", ex.data},
                               {"vmin", ex.vmin},
                               {"vmax", ex.vmax},
                               {"grid_points", ex.grid_points},
                               {"log_clamp", ex.log_clamp},
                               {"label_transform", ex.label_transform}};
            for (const auto& rec : data.records) {
                const auto base = std::filesystem::path(ex.data) / rec.cell_id;
                manifest.input_hashes[rec.cell_id + ".meta.json"] = hash_file(base.string() + ".meta.json");
                manifest.input_hashes[rec.cell_id + ".cycles.csv"] = hash_file(base.string() + ".cycles.csv");
            }
            const std::string hash = manifest.hash();
            std::filesystem::create_directories(ex.out);
            write_feature_table(table, std::filesystem::path(ex.out) / "features.csv", hash);
            manifest.write(ex.out);
            std::cout << "extracted features for " << table.rows.size() << " cells to " << ex.out << "\n";
            return 0;
        }

        if (app.got_subcommand(cluster)) {
            const nlohmann::json cfg = detail::load_config_file(cl.config);
            require_opt(*cluster, cfg, "--features", "cluster needs a feature table");
            require_opt(*cluster, cfg, "--out", "cluster needs an output directory");
            detail::merge_config(*cluster, cfg, "--features", cl.features);
            detail::merge_config(*cluster, cfg, "--out", cl.out);
            detail::merge_config(*cluster, cfg, "--k", cl.flags.k);
            detail::merge_config(*cluster, cfg, "--min-size", cl.flags.min_size);
            detail::merge_config(*cluster, cfg, "--max-size", cl.flags.max_size);
            detail::merge_config(*cluster, cfg, "--restarts", cl.flags.restarts);
            detail::merge_config(*cluster, cfg, "--seed", cl.seed);

            const FeatureTable table = load_feature_table(cl.features, LabelTransform::identity);
            std::map<std::string, double> g_values;
            for (const auto& r : table.rows) g_values[r.cell_id] = r.g;
            const GroupAssignment assignment =
                constrained_kmeans(g_values, cl.flags.k, cl.flags.min_size, cl.flags.max_size,
                                   cl.flags.restarts, derive_seed(cl.seed, 0xC1u));

            Manifest manifest;
            manifest.command = "cluster";
            manifest.seed = cl.seed;
            manifest.config = cl.flags.snapshot();
            manifest.input_hashes[cl.features] = hash_file(cl.features);
            const std::string hash = manifest.hash();
            std::filesystem::create_directories(cl.out);
            {
                csv::Writer w(std::filesystem::path(cl.out) / "assignment.csv", hash);
                w.row({"cell_id", "group"});
                for (const auto& [id, g] : assignment.membership) w.row({id, std::to_string(g)});
            }
            nlohmann::json cj = {{"manifest_hash", hash},
                                 {"k", assignment.k},
                                 {"min_size", assignment.min_size},
                                 {"max_size", assignment.max_size},
                                 {"centroids", assignment.centroids},
                                 {"sizes", assignment.sizes},
                                 {"objective", assignment.objective}};
            detail::write_json_artifact(cj, std::filesystem::path(cl.out) / "centroids.json");
            manifest.write(cl.out);
            std::cout << "clustered " << assignment.membership.size() << " cells into " << assignment.k
                      << " groups (objective " << format_double(assignment.objective) << ")\n";
            return 0;
        }

        if (app.got_subcommand(fit)) {
            const nlohmann::json cfg = detail::load_config_file(ft.config);
            require_opt(*fit, cfg, "--features", "fit needs a feature table");
            require_opt(*fit, cfg, "--seed", "fit needs a seed");
            require_opt(*fit, cfg, "--out", "fit needs an output directory");
            detail::merge_config(*fit, cfg, "--features", ft.features);
            detail::merge_config(*fit, cfg, "--seed", ft.seed);
            detail::merge_config(*fit, cfg, "--out", ft.out);
            detail::merge_config(*fit, cfg, "--k", ft.cluster.k);
            detail::merge_config(*fit, cfg, "--min-size", ft.cluster.min_size);
            detail::merge_config(*fit, cfg, "--max-size", ft.cluster.max_size);
            detail::merge_config(*fit, cfg, "--restarts", ft.cluster.restarts);
            detail::merge_config(*fit, cfg, "--chains", ft.mcmc.chains);
            detail::merge_config(*fit, cfg, "--warmup", ft.mcmc.warmup);
            detail::merge_config(*fit, cfg, "--samples", ft.mcmc.samples);
            detail::merge_config(*fit, cfg, "--init-step", ft.mcmc.init_step);
            detail::merge_config(*fit, cfg, "--threads", ft.mcmc.threads);
            detail::merge_config(*fit, cfg, "--sigma-y", ft.sigma_y);
            detail::merge_config(*fit, cfg, "--hyper-prior-scale", ft.hyper_prior_scale);
            detail::merge_config(*fit, cfg, "--scale-prior-scale", ft.scale_prior_scale);
            detail::merge_config(*fit, cfg, "--infer-sigma-y", ft.infer_sigma_y);
            detail::merge_config(*fit, cfg, "--label-transform", ft.label_transform);

            const LabelTransform transform = label_transform_from_string(ft.label_transform);
            const FeatureTable table = load_feature_table(ft.features, transform);
            HbmFitConfig fc;
            fc.cluster = ft.cluster.to_config();
            fc.mcmc = ft.mcmc.to_config();
            fc.model.sigma_y = ft.sigma_y;
            fc.model.hyper_prior_scale = ft.hyper_prior_scale;
            fc.model.scale_prior =
                ScalePrior::half_normal(Eigen::VectorXd::Constant(4, ft.scale_prior_scale));
            if (ft.infer_sigma_y > 0.0) fc.model.sigma_y_prior_scale = ft.infer_sigma_y;
            fc.model.label_transform = transform;

            const HbmModel model = fit_hbm(table, fc, ft.seed);

            Manifest manifest;
            manifest.command = "fit";
            manifest.seed = ft.seed;
            manifest.config = {{"cluster", ft.cluster.snapshot()},
                               {"mcmc", ft.mcmc.snapshot()},
                               {"sigma_y", ft.sigma_y},
                               {"hyper_prior_scale", ft.hyper_prior_scale},
                               {"scale_prior_scale", ft.scale_prior_scale},
                               {"infer_sigma_y", ft.infer_sigma_y},
                               {"label_transform", ft.label_transform}};
            manifest.input_hashes[ft.features] = hash_file(ft.features);
            const std::string hash = manifest.hash();
            save_hbm_model(model, ft.out, hash);
            manifest.write(ft.out);
            const auto& d = model.posterior.diagnostics;
            std::cout << "fit " << model.posterior.groups.size() << " groups; acceptance "
                      << format_double(d.acceptance_rate) << ", max R-hat "
                      << format_double(d.r_hat.maxCoeff()) << ", min ESS "
                      << format_double(d.ess.minCoeff()) << "\n";
            return 0;
        }

        if (app.got_subcommand(predict_cmd)) {
            const nlohmann::json cfg = detail::load_config_file(pr.config);
            require_opt(*predict_cmd, cfg, "--posterior", "predict needs a posterior directory");
            require_opt(*predict_cmd, cfg, "--features", "predict needs a feature table");
            require_opt(*predict_cmd, cfg, "--out", "predict needs an output directory");
            detail::merge_config(*predict_cmd, cfg, "--posterior", pr.posterior);
            detail::merge_config(*predict_cmd, cfg, "--features", pr.features);
            detail::merge_config(*predict_cmd, cfg, "--interval", pr.interval);
            detail::merge_config(*predict_cmd, cfg, "--out", pr.out);

            const HbmModel model = load_hbm_model(pr.posterior);
            const FeatureTable table =
                load_feature_table(pr.features, model.posterior.config.label_transform);

            Manifest manifest;
            manifest.command = "predict";
            manifest.config = {{"interval", pr.interval}};
            manifest.input_hashes[pr.features] = hash_file(pr.features);
            manifest.input_hashes["posterior.json"] =
                hash_file(std::filesystem::path(pr.posterior) / "posterior.json");
            manifest.input_hashes["samples.csv"] =
                hash_file(std::filesystem::path(pr.posterior) / "samples.csv");
            const std::string hash = manifest.hash();
            std::filesystem::create_directories(pr.out);
            csv::Writer w(std::filesystem::path(pr.out) / "predictions.csv", hash);
            w.row({"cell_id", "group", "predicted_days", "interval_lo_days", "interval_hi_days",
                   "mean_transformed", "variance_transformed", "actual_days"});
            for (const auto& row : table.rows) {
                const int group = assign_group(row.g, model.assignment);
                const PredictiveDistribution dist = model.predict_row(row);
                const CredibleInterval ci = dist.interval(pr.interval);
                w.row({row.cell_id, std::to_string(group), format_double(dist.point_estimate_days()),
                       format_double(ci.lo_days), format_double(ci.hi_days), format_double(dist.mean()),
                       format_double(dist.variance()),
                       row.label ? format_double(*row.label) : std::string{}});
            }
            manifest.write(pr.out);
            std::cout << "predicted " << table.rows.size() << " cells to " << pr.out << "\n";
            return 0;
        }

        if (app.got_subcommand(evaluate)) {
            const nlohmann::json cfg = detail::load_config_file(ev.config);
            require_opt(*evaluate, cfg, "--features", "evaluate needs a feature table");
            require_opt(*evaluate, cfg, "--seed", "evaluate needs a seed");
            require_opt(*evaluate, cfg, "--out", "evaluate needs an output directory");
            detail::merge_config(*evaluate, cfg, "--features", ev.features);
            detail::merge_config(*evaluate, cfg, "--seed", ev.seed);
            detail::merge_config(*evaluate, cfg, "--out", ev.out);
            detail::merge_config(*evaluate, cfg, "--models", ev.models);
            detail::merge_config(*evaluate, cfg, "--k", ev.k);
            detail::merge_config(*evaluate, cfg, "--repeats", ev.repeats);
            detail::merge_config(*evaluate, cfg, "--clusters", ev.cluster.k);
            detail::merge_config(*evaluate, cfg, "--min-size", ev.cluster.min_size);
            detail::merge_config(*evaluate, cfg, "--max-size", ev.cluster.max_size);
            detail::merge_config(*evaluate, cfg, "--restarts", ev.cluster.restarts);
            detail::merge_config(*evaluate, cfg, "--chains", ev.mcmc.chains);
            detail::merge_config(*evaluate, cfg, "--warmup", ev.mcmc.warmup);
            detail::merge_config(*evaluate, cfg, "--samples", ev.mcmc.samples);
            detail::merge_config(*evaluate, cfg, "--init-step", ev.mcmc.init_step);
            detail::merge_config(*evaluate, cfg, "--threads", ev.mcmc.threads);
            detail::merge_config(*evaluate, cfg, "--sigma-y", ev.sigma_y);
            detail::merge_config(*evaluate, cfg, "--hyper-prior-scale", ev.hyper_prior_scale);
            detail::merge_config(*evaluate, cfg, "--scale-prior-scale", ev.scale_prior_scale);
            detail::merge_config(*evaluate, cfg, "--label-transform", ev.label_transform);
            detail::merge_config(*evaluate, cfg, "--lambda-grid", ev.lambda_grid);
            detail::merge_config(*evaluate, cfg, "--inner-folds", ev.inner_folds);
            detail::merge_config(*evaluate, cfg, "--reference", ev.reference);

            const LabelTransform transform = label_transform_from_string(ev.label_transform);
            const FeatureTable table = load_feature_table(ev.features, transform);

            RidgeSpec ridge_base;
            if (!ev.lambda_grid.empty())
                ridge_base.lambda_grid = detail::parse_double_list(ev.lambda_grid, "lambda grid");
            ridge_base.inner_folds = ev.inner_folds;

            ModelConfig hbm_config;
            hbm_config.sigma_y = ev.sigma_y;
            hbm_config.hyper_prior_scale = ev.hyper_prior_scale;
            hbm_config.scale_prior =
                ScalePrior::half_normal(Eigen::VectorXd::Constant(4, ev.scale_prior_scale));
            hbm_config.label_transform = transform;

            std::vector<ModelSpec> specs;
            for (const auto& tok : split(ev.models, ',')) {
                if (tok == "hbm") {
                    specs.push_back(ModelSpec::hbm_spec("hbm", hbm_config, ev.mcmc.to_config()));
                } else if (tok == "ridge3") {
                    RidgeSpec rs = ridge_base;
                    rs.features = {"f1", "f2", "f3"};
                    specs.push_back(ModelSpec::ridge_spec("ridge3", rs));
                } else if (tok == "ridge4") {
                    RidgeSpec rs = ridge_base;
                    rs.features = {"f1", "f2", "f3", "g"};
                    specs.push_back(ModelSpec::ridge_spec("ridge4", rs));
                } else if (tok == "mean") {
                    specs.push_back(ModelSpec::constant_spec("mean"));
                } else {
                    fail("cli: unknown model '" + tok + "' (expected hbm, ridge3, ridge4 or mean)");
                }
            }

            EvalReport report =
                run_cv(table, specs, ev.k, ev.repeats, ev.cluster.to_config(), ev.seed, ev.reference);
            report.config_snapshot = {{"models", ev.models},
                                      {"k", ev.k},
                                      {"repeats", ev.repeats},
                                      {"cluster", ev.cluster.snapshot()},
                                      {"mcmc", ev.mcmc.snapshot()},
                                      {"sigma_y", ev.sigma_y},
                                      {"label_transform", ev.label_transform},
                                      {"inner_folds", ev.inner_folds}};

            Manifest manifest;
            manifest.command = "evaluate";
            manifest.seed = ev.seed;
            manifest.config = report.config_snapshot;
            manifest.input_hashes[ev.features] = hash_file(ev.features);
            const std::string hash = manifest.hash();
            std::filesystem::create_directories(ev.out);
            detail::write_json_artifact(report_to_json(report, hash),
                                        std::filesystem::path(ev.out) / "report.json");
            write_trials_csv(report, std::filesystem::path(ev.out) / "trials.csv", hash);
            emit_plot_data(report, ev.out, hash);
            manifest.write(ev.out);
            detail::print_report_summary(report, std::cout);
            return 0;
        }

        if (app.got_subcommand(baseline_cmd)) {
            const nlohmann::json cfg = detail::load_config_file(bl.config);
            require_opt(*baseline_cmd, cfg, "--input", "baseline needs a feature table");
            require_opt(*baseline_cmd, cfg, "--seed", "baseline needs a seed");
            require_opt(*baseline_cmd, cfg, "--out", "baseline needs an output directory");
            detail::merge_config(*baseline_cmd, cfg, "--input", bl.input);
            detail::merge_config(*baseline_cmd, cfg, "--features", bl.features);
            detail::merge_config(*baseline_cmd, cfg, "--lambda-grid", bl.lambda_grid);
            detail::merge_config(*baseline_cmd, cfg, "--inner-folds", bl.inner_folds);
            detail::merge_config(*baseline_cmd, cfg, "--seed", bl.seed);
            detail::merge_config(*baseline_cmd, cfg, "--label-transform", bl.label_transform);
            detail::merge_config(*baseline_cmd, cfg, "--out", bl.out);

            const LabelTransform transform = label_transform_from_string(bl.label_transform);
            const FeatureTable table = load_feature_table(bl.input, transform);
            RidgeSpec spec;
            spec.features = split(bl.features, ',');
            if (!bl.lambda_grid.empty())
                spec.lambda_grid = detail::parse_double_list(bl.lambda_grid, "lambda grid");
            spec.inner_folds = bl.inner_folds;
            const RidgePipelineModel model = fit_ridge_pipeline(table, spec, bl.seed);

            std::vector<double> pred, truth;
            for (const auto& r : labeled_rows(table)) {
                pred.push_back(model.predict_days(r));
                truth.push_back(*r.label);
            }
            const double in_sample_rmse = rmse(pred, truth);

            Manifest manifest;
            manifest.command = "baseline";
            manifest.seed = bl.seed;
            manifest.config = {{"features", bl.features},
                               {"inner_folds", bl.inner_folds},
                               {"label_transform", bl.label_transform}};
            manifest.input_hashes[bl.input] = hash_file(bl.input);
            const std::string hash = manifest.hash();
            std::filesystem::create_directories(bl.out);
            nlohmann::json mj = {{"manifest_hash", hash},
                                 {"features", spec.features},
                                 {"lambda", model.model.lambda},
                                 {"intercept", model.model.intercept},
                                 {"coefficients", std::vector<double>(model.model.coefficients.begin(),
                                                                      model.model.coefficients.end())},
                                 {"feat_mean", std::vector<double>(model.model.feat_mean.begin(),
                                                                   model.model.feat_mean.end())},
                                 {"feat_scale", std::vector<double>(model.model.feat_scale.begin(),
                                                                    model.model.feat_scale.end())},
                                 {"label_transform", bl.label_transform},
                                 {"in_sample_rmse_days", in_sample_rmse}};
            detail::write_json_artifact(mj, std::filesystem::path(bl.out) / "model.json");
            manifest.write(bl.out);
            std::cout << "ridge lambda " << format_double(model.model.lambda) << ", in-sample RMSE "
                      << format_double(in_sample_rmse) << " days\n";
            return 0;
        }

        if (app.got_subcommand(report_cmd)) {
            if (rp.in.empty()) throw CLI::RequiredError("report needs --in");
            const auto dir = std::filesystem::path(rp.in);
            std::ifstream in(dir / "report.json");
            if (!in) fail("cli: cannot open '" + (dir / "report.json").string() + "'");
            nlohmann::json j = nlohmann::json::parse(in);
            const std::string report_hash = j.value("manifest_hash", std::string{});
            const csv::Table trials = csv::read_file(dir / "trials.csv");
            if (trials.manifest_hash && !report_hash.empty() && *trials.manifest_hash != report_hash)
                fail("cli: report refuses mixed-manifest inputs: trials.csv was produced by manifest " +
                     *trials.manifest_hash + " but report.json by " + report_hash);
            for (const char* name : {"scatter.csv", "hist.csv"}) {
                const auto p = dir / name;
                if (std::filesystem::exists(p)) {
                    const csv::Table t = csv::read_file(p);
                    if (t.manifest_hash && !report_hash.empty() && *t.manifest_hash != report_hash)
                        fail("cli: report refuses mixed-manifest inputs: " + std::string(name) +
                             " was produced by manifest " + *t.manifest_hash);
                }
            }
            const EvalReport report = report_from_json(j);

            // aggregates must be recomputable from the per-trial rows
            std::vector<TrialRow> rows;
            for (const auto& row : trials.rows) {
                if (row.fields.size() != 5) fail("cli: trials.csv row malformed");
                TrialRow t;
                t.model = row.fields[0];
                long long rep_i, fold_i;
                if (!parse_int(row.fields[1], rep_i) || !parse_int(row.fields[2], fold_i) ||
                    !parse_double(row.fields[3], t.rmse_days) || !parse_double(row.fields[4], t.mape_percent))
                    fail("cli: trials.csv row malformed");
                t.repeat_idx = static_cast<int>(rep_i);
                t.fold = static_cast<int>(fold_i);
                rows.push_back(std::move(t));
            }
            const auto recomputed = eval_aggregates_check(rows, report);
            if (!recomputed.empty()) fail("cli: " + recomputed);
            detail::print_report_summary(report, std::cout);
            return 0;
        }

        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace hblife::cli
