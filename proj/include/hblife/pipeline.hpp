// Glue between feature tables and the models: feature standardization,
// fitted-model wrappers used by the CLI and the CV harness, and the
// binary-free JSON/CSV posterior bundle.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hblife/baseline.hpp"
#include "hblife/clustering.hpp"
#include "hblife/common.hpp"
#include "hblife/csv.hpp"
#include "hblife/dataset.hpp"
#include "hblife/hbm.hpp"

namespace hblife {

/// Per-feature zero-mean/unit-variance mapping (population std, fitted on
/// training cells only; constant features keep scale 1).
struct Standardizer {
    Eigen::VectorXd mean;
    Eigen::VectorXd scale;

    static Standardizer fit(const Eigen::MatrixXd& raw) {
        if (raw.rows() < 1) fail("pipeline: cannot standardize an empty matrix");
        Standardizer s;
        s.mean = raw.colwise().mean();
        s.scale.resize(raw.cols());
        for (Eigen::Index j = 0; j < raw.cols(); ++j) {
            const double sd = std::sqrt((raw.col(j).array() - s.mean[j]).square().sum() /
                                        static_cast<double>(raw.rows()));
            s.scale[j] = sd > 0.0 ? sd : 1.0;
        }
        return s;
    }

    Eigen::VectorXd apply(const Eigen::VectorXd& raw) const {
        return ((raw - mean).array() / scale.array()).matrix();
    }
};

inline Eigen::MatrixXd individual_features(const std::vector<FeatureRow>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) << rows[i].f1, rows[i].f2, rows[i].f3;
    return m;
}

// ---------------------------------------------------------------------------
// Hierarchical model pipeline
// ---------------------------------------------------------------------------

struct HbmFitConfig {
    ClusterConfig cluster;
    ModelConfig model;
    McmcConfig mcmc;
};

struct HbmModel {
    GroupAssignment assignment;
    Standardizer standardizer; // over (f1, f2, f3)
    HbmPosterior posterior;

    Eigen::VectorXd design_row(const FeatureRow& row) const {
        Eigen::VectorXd raw(3);
        raw << row.f1, row.f2, row.f3;
        const Eigen::VectorXd std3 = standardizer.apply(raw);
        Eigen::VectorXd x(4);
        x << 1.0, std3[0], std3[1], std3[2];
        return x;
    }

    PredictiveDistribution predict_row(const FeatureRow& row) const {
        const int group = assign_group(row.g, assignment);
        return predict(design_row(row), group, std::nullopt, posterior);
    }

    double predict_days(const FeatureRow& row) const { return predict_row(row).point_estimate_days(); }
};

inline std::vector<FeatureRow> labeled_rows(const FeatureTable& table) {
    std::vector<FeatureRow> rows;
    for (const auto& r : table.rows)
        if (r.label) rows.push_back(r);
    return rows;
}

/// Fit the full pipeline: cluster on g (unless an assignment is supplied),
/// standardize features, build per-group regression data, run MCMC.
inline HbmModel fit_hbm(const FeatureTable& table, const HbmFitConfig& config, std::uint64_t seed,
                        const GroupAssignment* preassigned = nullptr) {
    table.validate();
    const std::vector<FeatureRow> rows = labeled_rows(table);
    if (rows.empty()) fail("pipeline: no labeled cells to fit");

    HbmModel model;
    if (preassigned) {
        model.assignment = *preassigned;
    } else {
        std::map<std::string, double> g_values;
        for (const auto& r : rows) g_values[r.cell_id] = r.g;
        model.assignment = constrained_kmeans(g_values, config.cluster.k, config.cluster.min_size,
                                              config.cluster.max_size, config.cluster.n_restarts,
                                              derive_seed(seed, 0xC1u), config.cluster.max_iters);
    }
    model.standardizer = Standardizer::fit(individual_features(rows));

    const int k = model.assignment.k;
    std::vector<std::vector<const FeatureRow*>> members(static_cast<std::size_t>(k));
    for (const auto& r : rows) {
        auto it = model.assignment.membership.find(r.cell_id);
        if (it == model.assignment.membership.end())
            fail("pipeline: cell '" + r.cell_id + "' missing from the group assignment");
        members[static_cast<std::size_t>(it->second)].push_back(&r);
    }

    std::vector<GroupData> groups;
    for (int j = 0; j < k; ++j) {
        const auto& cells = members[static_cast<std::size_t>(j)];
        if (cells.empty()) continue; // permitted when min_size = 0
        GroupData gd;
        gd.group = j;
        gd.design.resize(static_cast<Eigen::Index>(cells.size()), 4);
        gd.labels.resize(static_cast<Eigen::Index>(cells.size()));
        double g_sum = 0.0;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            const FeatureRow& r = *cells[i];
            Eigen::VectorXd raw(3);
            raw << r.f1, r.f2, r.f3;
            const Eigen::VectorXd std3 = model.standardizer.apply(raw);
            gd.design.row(static_cast<Eigen::Index>(i)) << 1.0, std3[0], std3[1], std3[2];
            gd.labels[static_cast<Eigen::Index>(i)] = apply_transform(table.label_transform, *r.label);
            g_sum += r.g;
        }
        gd.g_vec.resize(2);
        gd.g_vec << 1.0, g_sum / static_cast<double>(cells.size());
        groups.push_back(std::move(gd));
    }
    // group vector index must match the assignment's group id for prediction
    if (static_cast<int>(groups.size()) != k)
        fail("pipeline: empty clusters are not supported by the hierarchical fit; raise min_size");

    ModelConfig mc = config.model;
    mc.label_transform = table.label_transform;
    HbmModel out = std::move(model);
    out.posterior = sample_posterior(groups, mc, config.mcmc, derive_seed(seed, 0xF17u));
    return out;
}

// ---------------------------------------------------------------------------
// Ridge pipeline
// ---------------------------------------------------------------------------

struct RidgeSpec {
    std::vector<std::string> features = {"f1", "f2", "f3"}; // subset of f1,f2,f3,g
    std::vector<double> lambda_grid = default_lambda_grid();
    int inner_folds = 5;
};

inline double feature_by_name(const FeatureRow& row, const std::string& name) {
    if (name == "f1") return row.f1;
    if (name == "f2") return row.f2;
    if (name == "f3") return row.f3;
    if (name == "g") return row.g;
    fail("pipeline: unknown feature '" + name + "' (expected f1, f2, f3 or g)");
}

inline Eigen::MatrixXd design_from_rows(const std::vector<FeatureRow>& rows,
                                        const std::vector<std::string>& features) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(features.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < features.size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = feature_by_name(rows[i], features[j]);
    return m;
}

struct RidgePipelineModel {
    RidgeModel model;
    RidgeSpec spec;
    LabelTransform transform = LabelTransform::identity;

    double predict_days(const FeatureRow& row) const {
        Eigen::VectorXd x(static_cast<Eigen::Index>(spec.features.size()));
        for (std::size_t j = 0; j < spec.features.size(); ++j)
            x[static_cast<Eigen::Index>(j)] = feature_by_name(row, spec.features[j]);
        return invert_transform(transform, model.predict(x));
    }
};

inline RidgePipelineModel fit_ridge_pipeline(const FeatureTable& table, const RidgeSpec& spec,
                                             std::uint64_t seed) {
    const std::vector<FeatureRow> rows = labeled_rows(table);
    if (rows.empty()) fail("pipeline: no labeled cells to fit");
    const Eigen::MatrixXd design = design_from_rows(rows, spec.features);
    Eigen::VectorXd labels(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        labels[static_cast<Eigen::Index>(i)] = apply_transform(table.label_transform, *rows[i].label);
    RidgePipelineModel out;
    out.spec = spec;
    out.transform = table.label_transform;
    const double lambda = spec.lambda_grid.size() == 1
                              ? spec.lambda_grid.front()
                              : select_lambda(design, labels, spec.lambda_grid, spec.inner_folds,
                                              derive_seed(seed, 0x41d9e));
    out.model = fit_ridge(design, labels, lambda);
    return out;
}

// ---------------------------------------------------------------------------
// Posterior bundle persistence: posterior.json + samples.csv
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
    return nlohmann::json(std::vector<double>(v.begin(), v.end()));
}

inline Eigen::VectorXd vec_from_json(const nlohmann::json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j.at(i).get<double>();
    return v;
}

inline nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Eigen::MatrixXd mat_from_json(const nlohmann::json& j) {
    const auto rows = j.size();
    const auto cols = rows > 0 ? j.at(0).size() : 0;
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j.at(r).at(c).get<double>();
    return m;
}

} // namespace detail

inline void save_hbm_model(const HbmModel& model, const std::filesystem::path& dir,
                           const std::optional<std::string>& manifest_hash = std::nullopt) {
    std::filesystem::create_directories(dir);
    const HbmPosterior& post = model.posterior;

    nlohmann::json j;
    if (manifest_hash) j["manifest_hash"] = *manifest_hash;
    j["version"] = kVersion;
    j["p"] = post.p;
    j["q"] = post.q;
    j["label_transform"] = to_string(post.config.label_transform);
    j["config"] = {{"sigma_y", post.config.sigma_y},
                   {"hyper_prior_scale", post.config.hyper_prior_scale},
                   {"scale_prior",
                    {{"kind", post.config.scale_prior.kind == ScalePrior::Kind::half_normal ? "half_normal"
                                                                                            : "fixed"},
                     {"value", detail::vec_to_json(post.config.scale_prior.value)}}}};
    if (post.config.sigma_y_prior_scale) j["config"]["sigma_y_prior_scale"] = *post.config.sigma_y_prior_scale;
    j["mcmc"] = {{"n_chains", post.mcmc.n_chains},   {"n_warmup", post.mcmc.n_warmup},
                 {"n_samples", post.mcmc.n_samples}, {"init_step", post.mcmc.init_step},
                 {"target_accept", post.mcmc.target_accept}};
    j["seed"] = post.seed;
    j["standardizer"] = {{"mean", detail::vec_to_json(model.standardizer.mean)},
                         {"scale", detail::vec_to_json(model.standardizer.scale)}};
    j["assignment"] = {{"k", model.assignment.k},
                       {"min_size", model.assignment.min_size},
                       {"max_size", model.assignment.max_size},
                       {"centroids", model.assignment.centroids},
                       {"sizes", model.assignment.sizes},
                       {"objective", model.assignment.objective},
                       {"membership", model.assignment.membership}};
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : post.groups)
        groups.push_back({{"group", g.group},
                          {"n", g.n},
                          {"sxx", detail::mat_to_json(g.sxx)},
                          {"sxy", detail::vec_to_json(g.sxy)},
                          {"syy", g.syy},
                          {"g_vec", detail::vec_to_json(g.g_vec)}});
    j["groups"] = groups;
    j["diagnostics"] = {{"names", post.diagnostics.names},
                        {"r_hat", detail::vec_to_json(post.diagnostics.r_hat)},
                        {"ess", detail::vec_to_json(post.diagnostics.ess)},
                        {"acceptance_rate", post.diagnostics.acceptance_rate}};
    std::ofstream out(dir / "posterior.json");
    if (!out) fail("pipeline: cannot write posterior.json in '" + dir.string() + "'");
    out << j.dump(2) << "\n";

    csv::Writer w(dir / "samples.csv", manifest_hash);
    std::vector<std::string> header{"chain", "draw"};
    for (int k = 0; k < post.p; ++k)
        for (int c = 0; c < post.q; ++c)
            header.push_back("gamma_" + std::to_string(k) + "_" + std::to_string(c));
    for (int k = 0; k < post.p; ++k) header.push_back("sigma_" + std::to_string(k));
    header.push_back("sigma_y");
    w.row(header);
    const int per_chain = post.mcmc.n_samples;
    for (int s = 0; s < post.n_samples_total(); ++s) {
        std::vector<std::string> fields{std::to_string(s / per_chain), std::to_string(s % per_chain)};
        for (int i = 0; i < post.p * post.q; ++i) fields.push_back(format_double(post.gamma_samples(s, i)));
        for (int i = 0; i < post.p; ++i) fields.push_back(format_double(post.sigma_samples(s, i)));
        fields.push_back(format_double(post.sigma_y_samples[s]));
        w.row(fields);
    }
}

inline HbmModel load_hbm_model(const std::filesystem::path& dir) {
    std::ifstream in(dir / "posterior.json");
    if (!in) fail("pipeline: cannot open '" + (dir / "posterior.json").string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail("pipeline: posterior.json is not valid JSON: " + std::string(e.what()));
    }

    HbmModel model;
    HbmPosterior& post = model.posterior;
    post.p = j.at("p").get<int>();
    post.q = j.at("q").get<int>();
    post.config.label_transform = label_transform_from_string(j.at("label_transform").get<std::string>());
    post.config.sigma_y = j.at("config").at("sigma_y").get<double>();
    post.config.hyper_prior_scale = j.at("config").at("hyper_prior_scale").get<double>();
    post.config.scale_prior.kind = j.at("config").at("scale_prior").at("kind").get<std::string>() ==
                                           "half_normal"
                                       ? ScalePrior::Kind::half_normal
                                       : ScalePrior::Kind::fixed;
    post.config.scale_prior.value = detail::vec_from_json(j.at("config").at("scale_prior").at("value"));
    if (j.at("config").contains("sigma_y_prior_scale"))
        post.config.sigma_y_prior_scale = j.at("config").at("sigma_y_prior_scale").get<double>();
    post.mcmc.n_chains = j.at("mcmc").at("n_chains").get<int>();
    post.mcmc.n_warmup = j.at("mcmc").at("n_warmup").get<int>();
    post.mcmc.n_samples = j.at("mcmc").at("n_samples").get<int>();
    post.mcmc.init_step = j.at("mcmc").at("init_step").get<double>();
    post.mcmc.target_accept = j.at("mcmc").at("target_accept").get<double>();
    post.seed = j.at("seed").get<std::uint64_t>();
    model.standardizer.mean = detail::vec_from_json(j.at("standardizer").at("mean"));
    model.standardizer.scale = detail::vec_from_json(j.at("standardizer").at("scale"));
    const auto& ja = j.at("assignment");
    model.assignment.k = ja.at("k").get<int>();
    model.assignment.min_size = ja.at("min_size").get<int>();
    model.assignment.max_size = ja.at("max_size").get<int>();
    model.assignment.centroids = ja.at("centroids").get<std::vector<double>>();
    model.assignment.sizes = ja.at("sizes").get<std::vector<int>>();
    model.assignment.objective = ja.at("objective").get<double>();
    model.assignment.membership = ja.at("membership").get<std::map<std::string, int>>();

    for (const auto& g : j.at("groups")) {
        GroupStats s;
        s.group = g.at("group").get<int>();
        s.n = g.at("n").get<int>();
        s.sxx = detail::mat_from_json(g.at("sxx"));
        s.sxy = detail::vec_from_json(g.at("sxy"));
        s.syy = g.at("syy").get<double>();
        s.g_vec = detail::vec_from_json(g.at("g_vec"));
        post.groups.push_back(std::move(s));
    }
    post.diagnostics.names = j.at("diagnostics").at("names").get<std::vector<std::string>>();
    post.diagnostics.r_hat = detail::vec_from_json(j.at("diagnostics").at("r_hat"));
    post.diagnostics.ess = detail::vec_from_json(j.at("diagnostics").at("ess"));
    post.diagnostics.acceptance_rate = j.at("diagnostics").at("acceptance_rate").get<double>();

    csv::Table samples = csv::read_file(dir / "samples.csv");
    const int pq = post.p * post.q;
    if (static_cast<int>(samples.header.size()) != 2 + pq + post.p + 1)
        fail("pipeline: samples.csv column count does not match posterior.json dimensions");
    const int s_total = static_cast<int>(samples.rows.size());
    post.gamma_samples.resize(s_total, pq);
    post.sigma_samples.resize(s_total, post.p);
    post.sigma_y_samples.resize(s_total);
    for (int s = 0; s < s_total; ++s) {
        const auto& fields = samples.rows[static_cast<std::size_t>(s)].fields;
        if (static_cast<int>(fields.size()) != 2 + pq + post.p + 1)
            fail("pipeline: samples.csv row " + std::to_string(s) + " malformed");
        double v;
        for (int i = 0; i < pq; ++i) {
            if (!parse_double(fields[static_cast<std::size_t>(2 + i)], v))
                fail("pipeline: samples.csv row " + std::to_string(s) + " malformed");
            post.gamma_samples(s, i) = v;
        }
        for (int i = 0; i < post.p; ++i) {
            if (!parse_double(fields[static_cast<std::size_t>(2 + pq + i)], v))
                fail("pipeline: samples.csv row " + std::to_string(s) + " malformed");
            post.sigma_samples(s, i) = v;
        }
        if (!parse_double(fields.back(), v))
            fail("pipeline: samples.csv row " + std::to_string(s) + " malformed");
        post.sigma_y_samples[s] = v;
    }

    // Rebuild the per-group conditionals from the persisted sufficient stats.
    post.theta_conditionals.resize(post.groups.size());
    for (std::size_t g = 0; g < post.groups.size(); ++g) {
        auto& per_group = post.theta_conditionals[g];
        per_group.reserve(static_cast<std::size_t>(s_total));
        for (int s = 0; s < s_total; ++s)
            per_group.push_back(detail::theta_conditional_stats(post.groups[g], post.gamma_at(s),
                                                                post.sigma_samples.row(s).transpose(),
                                                                post.sigma_y_samples[s]));
    }
    return model;
}

} // namespace hblife
