// Data ingestion (feature tables, per-cell cycle data) and the synthetic
// fleet generator used for testing and calibration.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "hblife/common.hpp"
#include "hblife/csv.hpp"
#include "hblife/rng.hpp"

namespace hblife {

enum class LabelTransform { identity, log10 };

inline std::string to_string(LabelTransform t) {
    return t == LabelTransform::identity ? "identity" : "log10";
}

inline LabelTransform label_transform_from_string(const std::string& s) {
    if (s == "identity") return LabelTransform::identity;
    if (s == "log10") return LabelTransform::log10;
    fail("dataset: unknown label transform '" + s + "'");
}

/// days -> model space
inline double apply_transform(LabelTransform t, double days) {
    return t == LabelTransform::identity ? days : std::log10(days);
}

/// model space -> days
inline double invert_transform(LabelTransform t, double value) {
    return t == LabelTransform::identity ? value : std::pow(10.0, value);
}

struct ProtocolStep {
    double c_rate;   // > 0, dimensionless
    double soc_span; // (0, 1]; spans sum to 1
};

/// Ordered multi-step fast-charge schedule. Datasets here end with a 1C step
/// over the last 20% SOC; that convention is not enforced.
struct ChargeProtocol {
    std::string cell_id;
    std::vector<ProtocolStep> steps;

    void validate() const {
        if (steps.empty()) fail("dataset: protocol for '" + cell_id + "' has no steps");
        double span_sum = 0.0;
        for (const auto& s : steps) {
            if (!(s.c_rate > 0.0)) fail("dataset: protocol for '" + cell_id + "' has non-positive c_rate");
            if (!(s.soc_span > 0.0) || s.soc_span > 1.0)
                fail("dataset: protocol for '" + cell_id + "' has soc_span outside (0,1]");
            span_sum += s.soc_span;
        }
        if (std::abs(span_sum - 1.0) > 1e-9)
            fail("dataset: protocol for '" + cell_id + "' soc_span sum is " + format_double(span_sum) +
                 ", expected 1");
    }
};

/// Voltage non-increasing, discharged capacity non-decreasing, >= 2 points.
struct DischargeCurve {
    std::vector<double> voltage;
    std::vector<double> capacity_ah;

    void validate(const std::string& cell_id, int cycle) const {
        const std::string where = "dataset: cell '" + cell_id + "' cycle " + std::to_string(cycle);
        if (voltage.size() != capacity_ah.size()) fail(where + ": column length mismatch");
        if (voltage.size() < 2) fail(where + ": needs at least 2 samples");
        for (std::size_t i = 0; i + 1 < voltage.size(); ++i) {
            if (voltage[i + 1] > voltage[i]) fail(where + ": voltage not sorted descending");
            if (capacity_ah[i + 1] < capacity_ah[i]) fail(where + ": capacity decreasing");
        }
        for (double v : voltage)
            if (!std::isfinite(v)) fail(where + ": non-finite voltage");
        for (double q : capacity_ah)
            if (!std::isfinite(q)) fail(where + ": non-finite capacity");
    }
};

struct CellRecord {
    std::string cell_id;
    ChargeProtocol protocol;
    std::map<int, DischargeCurve> cycles; // keys strictly positive
    std::optional<double> eol_days;       // absent for unlabeled cells

    void validate() const {
        protocol.validate();
        for (const auto& [idx, curve] : cycles) {
            if (idx <= 0) fail("dataset: cell '" + cell_id + "' has non-positive cycle index");
            curve.validate(cell_id, idx);
        }
        if (eol_days && !(*eol_days > 0.0)) fail("dataset: cell '" + cell_id + "' has non-positive eol_days");
    }
};

struct FeatureRow {
    std::string cell_id;
    double g = 0.0;
    double f1 = 0.0; // log10 Ah^2
    double f2 = 0.0; // log10 Ah
    double f3 = 0.0; // Ah
    std::optional<double> label; // EoL in days; absent = unlabeled
};

struct FeatureTable {
    std::vector<FeatureRow> rows;
    LabelTransform label_transform = LabelTransform::identity;

    void validate() const {
        std::set<std::string> seen;
        for (const auto& r : rows) {
            if (!seen.insert(r.cell_id).second) fail("dataset: duplicate cell_id '" + r.cell_id + "'");
            for (double v : {r.g, r.f1, r.f2, r.f3})
                if (!std::isfinite(v)) fail("dataset: non-finite feature for cell '" + r.cell_id + "'");
            if (r.label) {
                if (!std::isfinite(*r.label)) fail("dataset: non-finite label for cell '" + r.cell_id + "'");
                if (label_transform == LabelTransform::log10 && !(*r.label > 0.0))
                    fail("dataset: cell '" + r.cell_id + "' label must be > 0 under log10 transform");
            }
        }
    }

    std::size_t labeled_count() const {
        std::size_t n = 0;
        for (const auto& r : rows) n += r.label.has_value() ? 1 : 0;
        return n;
    }
};

// ---------------------------------------------------------------------------
// Feature table CSV: header cell_id,g,f1,f2,f3,label; empty label = unlabeled.
// ---------------------------------------------------------------------------

inline FeatureTable load_feature_table(const std::filesystem::path& path,
                                       LabelTransform transform = LabelTransform::log10) {
    csv::Table raw = csv::read_file(path);
    csv::expect_header(raw, {"cell_id", "g", "f1", "f2", "f3", "label"}, path.string());
    FeatureTable table;
    table.label_transform = transform;
    std::set<std::string> seen;
    for (const auto& row : raw.rows) {
        const std::string where = "dataset: " + path.string() + " line " + std::to_string(row.line_no);
        if (row.fields.size() != 6) fail(where + ": expected 6 fields, got " + std::to_string(row.fields.size()));
        FeatureRow r;
        r.cell_id = row.fields[0];
        if (r.cell_id.empty()) fail(where + ": empty cell_id");
        if (!seen.insert(r.cell_id).second) fail(where + ": duplicate cell_id '" + r.cell_id + "'");
        double* nums[4] = {&r.g, &r.f1, &r.f2, &r.f3};
        for (int i = 0; i < 4; ++i) {
            if (!parse_double(row.fields[static_cast<std::size_t>(i + 1)], *nums[i]))
                fail(where + ": malformed numeric field '" + row.fields[static_cast<std::size_t>(i + 1)] + "'");
            if (!std::isfinite(*nums[i])) fail(where + ": non-finite value");
        }
        if (!row.fields[5].empty()) {
            double label;
            if (!parse_double(row.fields[5], label)) fail(where + ": malformed label '" + row.fields[5] + "'");
            if (!std::isfinite(label)) fail(where + ": non-finite label");
            r.label = label;
        }
        table.rows.push_back(std::move(r));
    }
    table.validate();
    return table;
}

inline void write_feature_table(const FeatureTable& table, const std::filesystem::path& path,
                                const std::optional<std::string>& manifest_hash = std::nullopt) {
    csv::Writer w(path, manifest_hash);
    w.row({"cell_id", "g", "f1", "f2", "f3", "label"});
    for (const auto& r : table.rows) {
        w.row({r.cell_id, format_double(r.g), format_double(r.f1), format_double(r.f2),
               format_double(r.f3), r.label ? format_double(*r.label) : std::string{}});
    }
}

// ---------------------------------------------------------------------------
// Cycle data: <dir>/<cell_id>.meta.json + <dir>/<cell_id>.cycles.csv with
// columns cycle,voltage,capacity_ah (rows grouped by ascending cycle).
// ---------------------------------------------------------------------------

struct CycleDataResult {
    std::vector<CellRecord> records;
    std::vector<std::string> warnings; // e.g. cells missing cycle 10 or 100
};

inline CellRecord load_cell(const std::filesystem::path& dir, const std::string& cell_id) {
    const auto meta_path = dir / (cell_id + ".meta.json");
    const auto cycles_path = dir / (cell_id + ".cycles.csv");
    std::ifstream meta_in(meta_path);
    if (!meta_in) fail("dataset: cannot open '" + meta_path.string() + "'");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_in);
    } catch (const nlohmann::json::exception& e) {
        fail("dataset: '" + meta_path.string() + "' is not valid JSON: " + e.what());
    }

    CellRecord rec;
    rec.cell_id = cell_id;
    rec.protocol.cell_id = cell_id;
    try {
        for (const auto& step : meta.at("protocol").at("steps"))
            rec.protocol.steps.push_back({step.at("c_rate").get<double>(), step.at("soc_span").get<double>()});
        if (meta.contains("eol_days") && !meta["eol_days"].is_null())
            rec.eol_days = meta["eol_days"].get<double>();
    } catch (const nlohmann::json::exception& e) {
        fail("dataset: '" + meta_path.string() + "' schema error: " + e.what());
    }

    csv::Table raw = csv::read_file(cycles_path);
    csv::expect_header(raw, {"cycle", "voltage", "capacity_ah"}, cycles_path.string());
    int current_cycle = -1;
    DischargeCurve current;
    auto flush = [&]() {
        if (current_cycle < 0) return;
        if (rec.cycles.count(current_cycle))
            fail("dataset: '" + cycles_path.string() + "' repeats cycle " + std::to_string(current_cycle) +
                 " in a non-contiguous block");
        rec.cycles[current_cycle] = std::move(current);
        current = DischargeCurve{};
    };
    for (const auto& row : raw.rows) {
        const std::string where = "dataset: " + cycles_path.string() + " line " + std::to_string(row.line_no);
        if (row.fields.size() != 3) fail(where + ": expected 3 fields");
        long long cyc;
        double v, q;
        if (!parse_int(row.fields[0], cyc) || !parse_double(row.fields[1], v) || !parse_double(row.fields[2], q))
            fail(where + ": malformed row");
        if (static_cast<int>(cyc) != current_cycle) {
            flush();
            current_cycle = static_cast<int>(cyc);
        }
        current.voltage.push_back(v);
        current.capacity_ah.push_back(q);
    }
    flush();
    rec.validate();
    return rec;
}

inline CycleDataResult load_cycle_data(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) fail("dataset: '" + dir.string() + "' is not a directory");
    std::vector<std::string> ids;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        const std::string suffix = ".meta.json";
        if (name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end()); // directory iteration order is unspecified
    if (ids.empty()) fail("dataset: no *.meta.json files in '" + dir.string() + "'");

    CycleDataResult out;
    for (const auto& id : ids) {
        CellRecord rec = load_cell(dir, id);
        for (int needed : {2, 10, 100})
            if (!rec.cycles.count(needed))
                out.warnings.push_back("cell '" + id + "' missing cycle " + std::to_string(needed));
        out.records.push_back(std::move(rec));
    }
    return out;
}

inline void write_cell(const CellRecord& rec, const std::filesystem::path& dir) {
    nlohmann::json meta;
    meta["cell_id"] = rec.cell_id;
    meta["eol_days"] = rec.eol_days ? nlohmann::json(*rec.eol_days) : nlohmann::json(nullptr);
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : rec.protocol.steps) steps.push_back({{"c_rate", s.c_rate}, {"soc_span", s.soc_span}});
    meta["protocol"] = {{"steps", steps}};
    std::ofstream meta_out(dir / (rec.cell_id + ".meta.json"));
    if (!meta_out) fail("dataset: cannot write meta for '" + rec.cell_id + "'");
    meta_out << meta.dump(2) << "\n";

    csv::Writer w(dir / (rec.cell_id + ".cycles.csv"));
    w.row({"cycle", "voltage", "capacity_ah"});
    for (const auto& [cycle, curve] : rec.cycles)
        for (std::size_t i = 0; i < curve.voltage.size(); ++i)
            w.row({std::to_string(cycle), format_double(curve.voltage[i]), format_double(curve.capacity_ah[i])});
}

inline void write_cycle_data(const std::vector<CellRecord>& records, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& rec : records) write_cell(rec, dir);
}

// ---------------------------------------------------------------------------
// Synthetic fleet generator: samples the two-level generative structure
// forward (group coefficients from the hyper-plane, labels from the
// per-cell linear model).
// ---------------------------------------------------------------------------

struct SyntheticTruth {
    Eigen::MatrixXd gamma;  // 4x2, row k = (intercept, g-slope) for coefficient k
    Eigen::VectorXd sigma;  // 4 level-2 scales
    double sigma_y = 0.0;
    std::map<int, Eigen::VectorXd> theta_by_group;
    std::map<int, double> group_g_values;
};

struct FeatureDistribution {
    double base = 0.0;    // mean at g = 0
    double g_slope = 0.0; // mean shift per unit g
    double sd = 1.0;      // > 0
};

struct SyntheticConfig {
    int n_groups = 8;
    int cells_per_group = 15;
    double g_min = 3.0;
    double g_max = 8.0;
    Eigen::MatrixXd gamma;  // 4x2
    Eigen::VectorXd sigma;  // 4, all > 0
    double sigma_y = 0.05;
    std::array<FeatureDistribution, 3> feature_distributions;
    LabelTransform label_transform = LabelTransform::identity;

    /// Defaults shaped like the combined fast-charge fleet: lifetimes fall
    /// with average charging C-rate, F1 range shifts with g.
    static SyntheticConfig defaults() {
        SyntheticConfig c;
        c.gamma = Eigen::MatrixXd(4, 2);
        c.gamma << 2.2, -0.16,   // intercept: log10 days from ~1.7 at 3C to ~0.9 at 8C
                  -0.10, 0.004,  // slope on f1
                   0.02, 0.0,    // slope on f2
                   0.05, 0.0;    // slope on f3
        c.sigma = Eigen::VectorXd(4);
        c.sigma << 0.08, 0.02, 0.01, 0.01;
        c.sigma_y = 0.05;
        c.feature_distributions = {FeatureDistribution{-5.5, 0.35, 0.35},
                                   FeatureDistribution{-2.8, 0.12, 0.20},
                                   FeatureDistribution{1.07, -0.004, 0.01}};
        c.label_transform = LabelTransform::log10;
        return c;
    }

    void validate() const {
        if (n_groups < 1) fail("dataset: synthetic n_groups must be >= 1");
        if (cells_per_group < 1) fail("dataset: synthetic cells_per_group must be >= 1");
        if (!(g_min <= g_max)) fail("dataset: synthetic g_range is empty");
        if (gamma.rows() != 4 || gamma.cols() != 2) fail("dataset: synthetic gamma must be 4x2");
        if (sigma.size() != 4) fail("dataset: synthetic sigma must have 4 entries");
        for (int i = 0; i < sigma.size(); ++i)
            if (!(sigma[i] > 0.0)) fail("dataset: synthetic sigma entries must be > 0");
        if (!(sigma_y > 0.0)) fail("dataset: synthetic sigma_y must be > 0");
        for (const auto& fd : feature_distributions)
            if (!(fd.sd > 0.0)) fail("dataset: synthetic feature sd must be > 0");
    }
};

/// Rows come out group-major: rows[j*cells_per_group + i] belongs to group j.
inline std::pair<FeatureTable, SyntheticTruth> generate_synthetic(const SyntheticConfig& config,
                                                                  std::uint64_t seed) {
    config.validate();
    Rng rng(derive_seed(seed, 0x517e));
    FeatureTable table;
    table.label_transform = config.label_transform;
    SyntheticTruth truth;
    truth.gamma = config.gamma;
    truth.sigma = config.sigma;
    truth.sigma_y = config.sigma_y;

    char id_buf[32];
    for (int j = 0; j < config.n_groups; ++j) {
        const double g_j = rng.uniform(config.g_min, config.g_max);
        Eigen::Vector2d g_vec(1.0, g_j);
        Eigen::VectorXd theta = config.gamma * g_vec;
        for (int k = 0; k < 4; ++k) theta[k] += config.sigma[k] * rng.normal();
        truth.group_g_values[j] = g_j;
        truth.theta_by_group[j] = theta;

        for (int i = 0; i < config.cells_per_group; ++i) {
            FeatureRow row;
            std::snprintf(id_buf, sizeof(id_buf), "cell_%03d_%04d", j, i);
            row.cell_id = id_buf;
            row.g = g_j;
            double* feats[3] = {&row.f1, &row.f2, &row.f3};
            for (int m = 0; m < 3; ++m) {
                const auto& fd = config.feature_distributions[static_cast<std::size_t>(m)];
                *feats[m] = rng.normal(fd.base + fd.g_slope * g_j, fd.sd);
            }
            const double response = theta[0] + theta[1] * row.f1 + theta[2] * row.f2 + theta[3] * row.f3 +
                                    config.sigma_y * rng.normal();
            row.label = invert_transform(config.label_transform, response);
            table.rows.push_back(std::move(row));
        }
    }
    table.validate();
    return {std::move(table), std::move(truth)};
}

// JSON interop for the synth subcommand and truth artifacts.

inline nlohmann::json to_json(const SyntheticTruth& truth) {
    nlohmann::json j;
    j["gamma"] = nlohmann::json::array();
    for (int r = 0; r < truth.gamma.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < truth.gamma.cols(); ++c) row.push_back(truth.gamma(r, c));
        j["gamma"].push_back(row);
    }
    j["sigma"] = std::vector<double>(truth.sigma.begin(), truth.sigma.end());
    j["sigma_y"] = truth.sigma_y;
    nlohmann::json thetas = nlohmann::json::object();
    for (const auto& [g, th] : truth.theta_by_group)
        thetas[std::to_string(g)] = std::vector<double>(th.begin(), th.end());
    j["theta_by_group"] = thetas;
    nlohmann::json gs = nlohmann::json::object();
    for (const auto& [g, v] : truth.group_g_values) gs[std::to_string(g)] = v;
    j["group_g_values"] = gs;
    return j;
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig c = SyntheticConfig::defaults();
    if (j.contains("n_groups")) c.n_groups = j["n_groups"].get<int>();
    if (j.contains("cells_per_group")) c.cells_per_group = j["cells_per_group"].get<int>();
    if (j.contains("g_range")) {
        c.g_min = j["g_range"].at(0).get<double>();
        c.g_max = j["g_range"].at(1).get<double>();
    }
    if (j.contains("gamma")) {
        const auto& gm = j["gamma"];
        for (int r = 0; r < 4; ++r)
            for (int cc = 0; cc < 2; ++cc)
                c.gamma(r, cc) = gm.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(cc)).get<double>();
    }
    if (j.contains("sigma"))
        for (int i = 0; i < 4; ++i) c.sigma[i] = j["sigma"].at(static_cast<std::size_t>(i)).get<double>();
    if (j.contains("sigma_y")) c.sigma_y = j["sigma_y"].get<double>();
    if (j.contains("feature_distributions")) {
        const auto& fds = j["feature_distributions"];
        for (std::size_t m = 0; m < 3; ++m) {
            c.feature_distributions[m].base = fds.at(m).at("base").get<double>();
            c.feature_distributions[m].g_slope = fds.at(m).at("g_slope").get<double>();
            c.feature_distributions[m].sd = fds.at(m).at("sd").get<double>();
        }
    }
    if (j.contains("label_transform"))
        c.label_transform = label_transform_from_string(j["label_transform"].get<std::string>());
    return c;
}

inline nlohmann::json to_json(const SyntheticConfig& c) {
    nlohmann::json j;
    j["n_groups"] = c.n_groups;
    j["cells_per_group"] = c.cells_per_group;
    j["g_range"] = {c.g_min, c.g_max};
    j["gamma"] = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) j["gamma"].push_back({c.gamma(r, 0), c.gamma(r, 1)});
    j["sigma"] = std::vector<double>(c.sigma.begin(), c.sigma.end());
    j["sigma_y"] = c.sigma_y;
    j["feature_distributions"] = nlohmann::json::array();
    for (const auto& fd : c.feature_distributions)
        j["feature_distributions"].push_back({{"base", fd.base}, {"g_slope", fd.g_slope}, {"sd", fd.sd}});
    j["label_transform"] = to_string(c.label_transform);
    return j;
}

} // namespace hblife
