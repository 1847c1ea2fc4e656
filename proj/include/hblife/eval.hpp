// Metrics (RMSE, MAPE, VPC), the repeated k-fold cross-validation harness,
// and report / plot-data emission.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hblife/common.hpp"
#include "hblife/csv.hpp"
#include "hblife/dataset.hpp"
#include "hblife/pipeline.hpp"

namespace hblife {

inline double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) fail("eval: rmse length mismatch");
    if (pred.empty()) fail("eval: rmse of empty vectors");
    double sse = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = truth[i] - pred[i];
        sse += e * e;
    }
    return std::sqrt(sse / static_cast<double>(pred.size()));
}

inline double mape(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) fail("eval: mape length mismatch");
    if (pred.empty()) fail("eval: mape of empty vectors");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!(truth[i] > 0.0)) fail("eval: mape requires positive truth values");
        acc += std::abs((truth[i] - pred[i]) / truth[i]);
    }
    return 100.0 * acc / static_cast<double>(pred.size());
}

namespace detail {

inline double sample_var(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size() - 1);
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

} // namespace detail

/// Variance partition coefficient: the share of label variance explained by
/// the grouping. Group deviations and pooled within-group residuals both use
/// n-1 sample variance.
inline double vpc(const std::vector<double>& labels, const std::vector<int>& groups) {
    if (labels.size() != groups.size()) fail("eval: vpc length mismatch");
    if (labels.size() < 2) fail("eval: vpc undefined for fewer than 2 cells");
    int k = 0;
    for (int g : groups) {
        if (g < 0) fail("eval: negative group index");
        k = std::max(k, g + 1);
    }
    std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sums[static_cast<std::size_t>(groups[i])] += labels[i];
        ++counts[static_cast<std::size_t>(groups[i])];
    }
    for (int c : counts)
        if (c == 0) fail("eval: vpc requires every group to be non-empty");

    const double grand = std::accumulate(labels.begin(), labels.end(), 0.0) /
                         static_cast<double>(labels.size());
    std::vector<double> group_means(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j)
        group_means[static_cast<std::size_t>(j)] = sums[static_cast<std::size_t>(j)] /
                                                   static_cast<double>(counts[static_cast<std::size_t>(j)]);

    std::vector<double> deviations(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) deviations[static_cast<std::size_t>(j)] = group_means[static_cast<std::size_t>(j)] - grand;
    const double var_group = k > 1 ? detail::sample_var(deviations) : 0.0;

    std::vector<double> residuals(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
        residuals[i] = labels[i] - group_means[static_cast<std::size_t>(groups[i])];
    const double var_individual = detail::sample_var(residuals);

    const double denom = var_group + var_individual;
    if (!(denom > 0.0)) fail("eval: vpc undefined when labels carry no variance");
    return var_group / denom;
}

// ---------------------------------------------------------------------------
// Cross-validation harness
// ---------------------------------------------------------------------------

struct ModelSpec {
    enum class Kind { hbm, ridge, constant };
    std::string tag;
    Kind kind = Kind::ridge;
    RidgeSpec ridge;   // Kind::ridge
    ModelConfig model; // Kind::hbm
    McmcConfig mcmc;

    static ModelSpec hbm_spec(std::string tag, ModelConfig model = {}, McmcConfig mcmc = {}) {
        ModelSpec s;
        s.tag = std::move(tag);
        s.kind = Kind::hbm;
        s.model = std::move(model);
        s.mcmc = mcmc;
        return s;
    }
    static ModelSpec ridge_spec(std::string tag, RidgeSpec ridge = {}) {
        ModelSpec s;
        s.tag = std::move(tag);
        s.kind = Kind::ridge;
        s.ridge = std::move(ridge);
        return s;
    }
    static ModelSpec constant_spec(std::string tag) {
        ModelSpec s;
        s.tag = std::move(tag);
        s.kind = Kind::constant;
        return s;
    }
};

struct TrialRow {
    std::string model;
    int repeat_idx = 0;
    int fold = 0;
    double rmse_days = 0.0;
    double mape_percent = 0.0;
};

struct PredictionRow {
    std::string model;
    int repeat_idx = 0;
    int fold = 0;
    std::string cell_id;
    double actual_days = 0.0;
    double predicted_days = 0.0;
};

/// Per-fold log of everything that must be training-only (leakage checks).
struct FoldLog {
    int repeat_idx = 0;
    int fold = 0;
    std::vector<std::string> test_cells;
    std::vector<double> centroids;
    std::vector<double> feat_mean;  // f1,f2,f3 standardization fitted on train
    std::vector<double> feat_scale;
};

struct Aggregate {
    double rmse_median = 0.0, rmse_mean = 0.0;
    double mape_median = 0.0, mape_mean = 0.0;
    double improvement_rmse_median = 0.0, improvement_rmse_mean = 0.0;
    double improvement_mape_median = 0.0, improvement_mape_mean = 0.0;
};

struct EvalReport {
    std::vector<TrialRow> per_trial;
    std::vector<PredictionRow> predictions;
    std::vector<FoldLog> folds;
    std::map<std::string, Aggregate> aggregates;
    std::string reference_model;
    double vpc_value = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    nlohmann::json config_snapshot;
};

namespace detail {

inline std::map<std::string, Aggregate> aggregate_trials(const std::vector<TrialRow>& trials,
                                                         const std::string& reference) {
    std::map<std::string, std::vector<double>> rmses, mapes;
    for (const auto& t : trials) {
        rmses[t.model].push_back(t.rmse_days);
        mapes[t.model].push_back(t.mape_percent);
    }
    std::map<std::string, Aggregate> out;
    for (const auto& [tag, values] : rmses) {
        Aggregate a;
        a.rmse_median = median(values);
        a.rmse_mean = mean(values);
        a.mape_median = median(mapes[tag]);
        a.mape_mean = mean(mapes[tag]);
        out[tag] = a;
    }
    const auto ref = out.find(reference);
    if (ref != out.end()) {
        const Aggregate r = ref->second;
        for (auto& [tag, a] : out) {
            a.improvement_rmse_median = 100.0 * (r.rmse_median - a.rmse_median) / r.rmse_median;
            a.improvement_rmse_mean = 100.0 * (r.rmse_mean - a.rmse_mean) / r.rmse_mean;
            a.improvement_mape_median = 100.0 * (r.mape_median - a.mape_median) / r.mape_median;
            a.improvement_mape_mean = 100.0 * (r.mape_mean - a.mape_mean) / r.mape_mean;
        }
    }
    return out;
}

} // namespace detail

/// Repeated k-fold CV. Per trial: clustering and every model are fitted on
/// the training cells only; held-out cells join the nearest training
/// centroid; metrics are computed in days.
inline EvalReport run_cv(const FeatureTable& table, const std::vector<ModelSpec>& models, int k_folds,
                         int repeats, const ClusterConfig& cluster, std::uint64_t seed,
                         std::string reference_tag = {}) {
    table.validate();
    if (models.empty()) fail("eval: no models to evaluate");
    if (k_folds < 2) fail("eval: need k >= 2 folds");
    if (repeats < 1) fail("eval: need repeats >= 1");
    for (const auto& r : table.rows)
        if (!r.label) fail("eval: unlabeled cell '" + r.cell_id + "' in the evaluation dataset");
    const int n = static_cast<int>(table.rows.size());
    if (n < k_folds) fail("eval: fewer cells than folds");
    {
        std::vector<std::string> tags;
        for (const auto& m : models) tags.push_back(m.tag);
        std::sort(tags.begin(), tags.end());
        if (std::adjacent_find(tags.begin(), tags.end()) != tags.end()) fail("eval: duplicate model tags");
    }
    if (reference_tag.empty()) {
        reference_tag = models.front().tag;
        for (const auto& m : models)
            if (m.tag == "ridge3") reference_tag = m.tag;
    }

    EvalReport report;
    report.seed = seed;
    report.reference_model = reference_tag;

    for (int rep = 0; rep < repeats; ++rep) {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(seed, 0x5a0000u + static_cast<std::uint64_t>(rep)));
        shuffle_rng.shuffle(order);

        std::vector<std::size_t> starts(static_cast<std::size_t>(k_folds) + 1, 0);
        for (int f = 0; f < k_folds; ++f)
            starts[static_cast<std::size_t>(f) + 1] = starts[static_cast<std::size_t>(f)] +
                                                      static_cast<std::size_t>(n / k_folds) +
                                                      (f < n % k_folds ? 1 : 0);

        for (int f = 0; f < k_folds; ++f) {
            FeatureTable train, test;
            train.label_transform = table.label_transform;
            test.label_transform = table.label_transform;
            for (int i = 0; i < n; ++i) {
                const bool in_test = static_cast<std::size_t>(i) >= starts[static_cast<std::size_t>(f)] &&
                                     static_cast<std::size_t>(i) < starts[static_cast<std::size_t>(f) + 1];
                (in_test ? test : train).rows.push_back(table.rows[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
            }
            const int train_n = static_cast<int>(train.rows.size());
            if (static_cast<long long>(cluster.min_size) * cluster.k > train_n)
                fail("eval: training fold of " + std::to_string(train_n) +
                     " cells cannot satisfy clustering bounds (min_size*k_clusters = " +
                     std::to_string(cluster.min_size) + "*" + std::to_string(cluster.k) + " = " +
                     std::to_string(static_cast<long long>(cluster.min_size) * cluster.k) +
                     "); reduce min_size or k_clusters");

            std::map<std::string, double> train_g;
            for (const auto& r : train.rows) train_g[r.cell_id] = r.g;
            const GroupAssignment assignment = constrained_kmeans(
                train_g, cluster.k, cluster.min_size, cluster.max_size, cluster.n_restarts,
                derive_seed(seed, 0xC70000u + static_cast<std::uint64_t>(rep * k_folds + f)),
                cluster.max_iters);

            {
                FoldLog log;
                log.repeat_idx = rep;
                log.fold = f;
                for (const auto& r : test.rows) log.test_cells.push_back(r.cell_id);
                log.centroids = assignment.centroids;
                const Standardizer st = Standardizer::fit(individual_features(train.rows));
                log.feat_mean.assign(st.mean.begin(), st.mean.end());
                log.feat_scale.assign(st.scale.begin(), st.scale.end());
                report.folds.push_back(std::move(log));
            }

            std::vector<double> truth_days;
            for (const auto& r : test.rows) truth_days.push_back(*r.label);

            for (std::size_t mi = 0; mi < models.size(); ++mi) {
                const ModelSpec& spec = models[mi];
                const std::uint64_t model_seed = derive_seed(
                    seed, 0xE00000u + static_cast<std::uint64_t>((rep * k_folds + f) * 64 + static_cast<int>(mi)));
                std::vector<double> pred_days(test.rows.size());

                if (spec.kind == ModelSpec::Kind::hbm) {
                    HbmFitConfig fc;
                    fc.cluster = cluster;
                    fc.model = spec.model;
                    fc.mcmc = spec.mcmc;
                    const HbmModel model = fit_hbm(train, fc, model_seed, &assignment);
                    for (std::size_t i = 0; i < test.rows.size(); ++i)
                        pred_days[i] = model.predict_days(test.rows[i]);
                } else if (spec.kind == ModelSpec::Kind::ridge) {
                    const RidgePipelineModel model = fit_ridge_pipeline(train, spec.ridge, model_seed);
                    for (std::size_t i = 0; i < test.rows.size(); ++i)
                        pred_days[i] = model.predict_days(test.rows[i]);
                } else {
                    double mean_days = 0.0;
                    for (const auto& r : train.rows) mean_days += *r.label;
                    mean_days /= static_cast<double>(train.rows.size());
                    std::fill(pred_days.begin(), pred_days.end(), mean_days);
                }

                TrialRow trial;
                trial.model = spec.tag;
                trial.repeat_idx = rep;
                trial.fold = f;
                trial.rmse_days = rmse(pred_days, truth_days);
                trial.mape_percent = mape(pred_days, truth_days);
                report.per_trial.push_back(trial);
                for (std::size_t i = 0; i < test.rows.size(); ++i)
                    report.predictions.push_back({spec.tag, rep, f, test.rows[i].cell_id, truth_days[i],
                                                  pred_days[i]});
            }
        }
    }

    report.aggregates = detail::aggregate_trials(report.per_trial, report.reference_model);

    // Dataset-level VPC under the same clustering config, fitted on all cells.
    {
        std::map<std::string, double> all_g;
        for (const auto& r : table.rows) all_g[r.cell_id] = r.g;
        const GroupAssignment assignment =
            constrained_kmeans(all_g, cluster.k, cluster.min_size, cluster.max_size, cluster.n_restarts,
                               derive_seed(seed, 0x79c0u), cluster.max_iters);
        std::vector<double> labels;
        std::vector<int> groups;
        for (const auto& r : table.rows) {
            labels.push_back(*r.label);
            groups.push_back(assignment.membership.at(r.cell_id));
        }
        report.vpc_value = vpc(labels, groups);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& report,
                                     const std::optional<std::string>& manifest_hash = std::nullopt) {
    nlohmann::json j;
    if (manifest_hash) j["manifest_hash"] = *manifest_hash;
    j["version"] = kVersion;
    j["seed"] = report.seed;
    j["reference_model"] = report.reference_model;
    j["vpc"] = report.vpc_value;
    j["config"] = report.config_snapshot;
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : report.per_trial)
        trials.push_back({{"model", t.model},
                          {"repeat", t.repeat_idx},
                          {"fold", t.fold},
                          {"rmse_days", t.rmse_days},
                          {"mape_percent", t.mape_percent}});
    j["per_trial"] = trials;
    nlohmann::json aggs = nlohmann::json::object();
    for (const auto& [tag, a] : report.aggregates)
        aggs[tag] = {{"rmse_median", a.rmse_median},
                     {"rmse_mean", a.rmse_mean},
                     {"mape_median", a.mape_median},
                     {"mape_mean", a.mape_mean},
                     {"improvement_rmse_median", a.improvement_rmse_median},
                     {"improvement_rmse_mean", a.improvement_rmse_mean},
                     {"improvement_mape_median", a.improvement_mape_median},
                     {"improvement_mape_mean", a.improvement_mape_mean}};
    j["aggregates"] = aggs;
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& fl : report.folds)
        folds.push_back({{"repeat", fl.repeat_idx},
                         {"fold", fl.fold},
                         {"test_cells", fl.test_cells},
                         {"centroids", fl.centroids},
                         {"feat_mean", fl.feat_mean},
                         {"feat_scale", fl.feat_scale}});
    j["folds"] = folds;
    nlohmann::json preds = nlohmann::json::array();
    for (const auto& p : report.predictions)
        preds.push_back({{"model", p.model},
                         {"repeat", p.repeat_idx},
                         {"fold", p.fold},
                         {"cell_id", p.cell_id},
                         {"actual_days", p.actual_days},
                         {"predicted_days", p.predicted_days}});
    j["predictions"] = preds;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    report.seed = j.at("seed").get<std::uint64_t>();
    report.reference_model = j.at("reference_model").get<std::string>();
    report.vpc_value = j.at("vpc").get<double>();
    report.config_snapshot = j.value("config", nlohmann::json::object());
    for (const auto& t : j.at("per_trial"))
        report.per_trial.push_back({t.at("model").get<std::string>(), t.at("repeat").get<int>(),
                                    t.at("fold").get<int>(), t.at("rmse_days").get<double>(),
                                    t.at("mape_percent").get<double>()});
    for (const auto& [tag, a] : j.at("aggregates").items()) {
        Aggregate agg;
        agg.rmse_median = a.at("rmse_median").get<double>();
        agg.rmse_mean = a.at("rmse_mean").get<double>();
        agg.mape_median = a.at("mape_median").get<double>();
        agg.mape_mean = a.at("mape_mean").get<double>();
        agg.improvement_rmse_median = a.at("improvement_rmse_median").get<double>();
        agg.improvement_rmse_mean = a.at("improvement_rmse_mean").get<double>();
        agg.improvement_mape_median = a.at("improvement_mape_median").get<double>();
        agg.improvement_mape_mean = a.at("improvement_mape_mean").get<double>();
        report.aggregates[tag] = agg;
    }
    for (const auto& fl : j.at("folds")) {
        FoldLog log;
        log.repeat_idx = fl.at("repeat").get<int>();
        log.fold = fl.at("fold").get<int>();
        log.test_cells = fl.at("test_cells").get<std::vector<std::string>>();
        log.centroids = fl.at("centroids").get<std::vector<double>>();
        log.feat_mean = fl.at("feat_mean").get<std::vector<double>>();
        log.feat_scale = fl.at("feat_scale").get<std::vector<double>>();
        report.folds.push_back(std::move(log));
    }
    for (const auto& p : j.at("predictions"))
        report.predictions.push_back({p.at("model").get<std::string>(), p.at("repeat").get<int>(),
                                      p.at("fold").get<int>(), p.at("cell_id").get<std::string>(),
                                      p.at("actual_days").get<double>(),
                                      p.at("predicted_days").get<double>()});
    return report;
}

/// Recompute aggregates from trial rows and compare against the report.
/// Returns an empty string when they match, a diagnostic otherwise.
inline std::string eval_aggregates_check(const std::vector<TrialRow>& rows, const EvalReport& report,
                                         double tol = 1e-9) {
    const auto recomputed = detail::aggregate_trials(rows, report.reference_model);
    if (recomputed.size() != report.aggregates.size())
        return "aggregate model set does not match the per-trial rows";
    for (const auto& [tag, a] : recomputed) {
        const auto it = report.aggregates.find(tag);
        if (it == report.aggregates.end()) return "aggregates missing model '" + tag + "'";
        const Aggregate& b = it->second;
        const double diffs[] = {a.rmse_median - b.rmse_median, a.rmse_mean - b.rmse_mean,
                                a.mape_median - b.mape_median, a.mape_mean - b.mape_mean,
                                a.improvement_rmse_median - b.improvement_rmse_median,
                                a.improvement_rmse_mean - b.improvement_rmse_mean,
                                a.improvement_mape_median - b.improvement_mape_median,
                                a.improvement_mape_mean - b.improvement_mape_mean};
        for (double d : diffs)
            if (!(std::abs(d) <= tol))
                return "aggregates for '" + tag + "' do not recompute from the per-trial rows";
    }
    return {};
}

inline void write_trials_csv(const EvalReport& report, const std::filesystem::path& path,
                             const std::optional<std::string>& manifest_hash = std::nullopt) {
    csv::Writer w(path, manifest_hash);
    w.row({"model", "repeat", "fold", "rmse_days", "mape_percent"});
    for (const auto& t : report.per_trial)
        w.row({t.model, std::to_string(t.repeat_idx), std::to_string(t.fold), format_double(t.rmse_days),
               format_double(t.mape_percent)});
}

namespace detail {

inline std::string svg_color(std::size_t model_index) {
    static const char* palette[] = {"#1f6fb4", "#d1495b", "#3a9456", "#8964b0", "#c47f2a", "#4fa3a5"};
    return palette[model_index % 6];
}

} // namespace detail

/// scatter.csv, hist.csv and a minimal SVG scatter with a y = x reference line.
inline void emit_plot_data(const EvalReport& report, const std::filesystem::path& out_dir,
                           const std::optional<std::string>& manifest_hash = std::nullopt) {
    std::filesystem::create_directories(out_dir);
    {
        csv::Writer w(out_dir / "scatter.csv", manifest_hash);
        w.row({"cell_id", "actual_days", "predicted_days", "model"});
        for (const auto& p : report.predictions)
            w.row({p.cell_id, format_double(p.actual_days), format_double(p.predicted_days), p.model});
    }
    {
        csv::Writer w(out_dir / "hist.csv", manifest_hash);
        w.row({"model", "metric", "value"});
        for (const auto& t : report.per_trial) {
            w.row({t.model, "rmse_days", format_double(t.rmse_days)});
            w.row({t.model, "mape_percent", format_double(t.mape_percent)});
        }
    }

    std::ofstream svg(out_dir / "scatter.svg");
    if (!svg) fail("eval: cannot write scatter.svg in '" + out_dir.string() + "'");
    const double width = 640, height = 480, margin = 60;
    double lo = 0.0, hi = 1.0;
    if (!report.predictions.empty()) {
        lo = std::numeric_limits<double>::infinity();
        hi = -std::numeric_limits<double>::infinity();
        for (const auto& p : report.predictions) {
            lo = std::min({lo, p.actual_days, p.predicted_days});
            hi = std::max({hi, p.actual_days, p.predicted_days});
        }
        const double pad = 0.05 * (hi - lo + 1e-12);
        lo -= pad;
        hi += pad;
    }
    auto sx = [&](double v) { return margin + (v - lo) / (hi - lo) * (width - 2 * margin); };
    auto sy = [&](double v) { return height - margin - (v - lo) / (hi - lo) * (height - 2 * margin); };

    std::vector<std::string> model_tags;
    for (const auto& p : report.predictions)
        if (std::find(model_tags.begin(), model_tags.end(), p.model) == model_tags.end())
            model_tags.push_back(p.model);

    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << width - 2 * margin
        << "\" height=\"" << height - 2 * margin << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg << "<line x1=\"" << format_double(sx(lo)) << "\" y1=\"" << format_double(sy(lo)) << "\" x2=\""
        << format_double(sx(hi)) << "\" y2=\"" << format_double(sy(hi))
        << "\" stroke=\"#999\" stroke-dasharray=\"5,4\"/>\n";
    svg << "<text x=\"" << width / 2 << "\" y=\"" << height - margin / 3
        << "\" text-anchor=\"middle\" font-size=\"14\">actual EoL (days)</text>\n";
    svg << "<text x=\"" << margin / 3 << "\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 " << margin / 3 << " "
        << height / 2 << ")\">predicted EoL (days)</text>\n";
    for (const auto& p : report.predictions) {
        const auto mi = static_cast<std::size_t>(
            std::find(model_tags.begin(), model_tags.end(), p.model) - model_tags.begin());
        svg << "<circle cx=\"" << format_double(sx(p.actual_days)) << "\" cy=\""
            << format_double(sy(p.predicted_days)) << "\" r=\"3\" fill=\"" << detail::svg_color(mi)
            << "\" fill-opacity=\"0.6\"/>\n";
    }
    for (std::size_t mi = 0; mi < model_tags.size(); ++mi) {
        const double ly = margin + 18.0 * static_cast<double>(mi + 1);
        svg << "<circle cx=\"" << width - margin - 110 << "\" cy=\"" << ly - 4 << "\" r=\"4\" fill=\""
            << detail::svg_color(mi) << "\"/>\n";
        svg << "<text x=\"" << width - margin - 100 << "\" y=\"" << ly
            << "\" font-size=\"12\">" << model_tags[mi] << "</text>\n";
    }
    svg << "</svg>\n";
}

} // namespace hblife
