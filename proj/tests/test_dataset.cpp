#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

#include "hblife/dataset.hpp"
#include "helpers.hpp"

using namespace hblife;

static void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

TEST_CASE("feature table: well-formed CSV parses") {
    testutil::TempDir dir("ft_ok");
    write_text(dir / "f.csv",
               "cell_id,g,f1,f2,f3,label\n"
               "c1,3.8,-4.1,-2.2,1.07,42.5\n"
               "c2,5.0,-3.0,-2.0,1.05,\n"
               "c3,6.2,-2.5,-1.9,1.02,12.25\n");
    const FeatureTable t = load_feature_table(dir / "f.csv", LabelTransform::log10);
    REQUIRE(t.rows.size() == 3);
    CHECK(t.rows[0].label.value() == 42.5);
    CHECK_FALSE(t.rows[1].label.has_value()); // empty label field = unlabeled
    CHECK(t.rows[2].g == 6.2);
    CHECK(t.label_transform == LabelTransform::log10);
}

TEST_CASE("feature table: duplicate cell_id names the cell") {
    testutil::TempDir dir("ft_dup");
    write_text(dir / "f.csv",
               "cell_id,g,f1,f2,f3,label\n"
               "c1,3.8,-4.1,-2.2,1.07,42.5\n"
               "c1,5.0,-3.0,-2.0,1.05,10\n");
    CHECK_THROWS_WITH(load_feature_table(dir / "f.csv"), Catch::Matchers::ContainsSubstring("c1"));
}

TEST_CASE("feature table: malformed rows carry the line number") {
    testutil::TempDir dir("ft_bad");
    write_text(dir / "f.csv",
               "cell_id,g,f1,f2,f3,label\n"
               "c1,3.8,-4.1,-2.2,1.07,42.5\n"
               "c2,oops,-3.0,-2.0,1.05,10\n");
    CHECK_THROWS_WITH(load_feature_table(dir / "f.csv"), Catch::Matchers::ContainsSubstring("line 3"));

    write_text(dir / "nan.csv",
               "cell_id,g,f1,f2,f3,label\n"
               "c1,nan,-4.1,-2.2,1.07,42.5\n");
    CHECK_THROWS_AS(load_feature_table(dir / "nan.csv"), error);

    write_text(dir / "short.csv",
               "cell_id,g,f1,f2,f3,label\n"
               "c1,3.8,-4.1,-2.2\n");
    CHECK_THROWS_WITH(load_feature_table(dir / "short.csv"), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("feature table: log10 transform rejects non-positive labels") {
    testutil::TempDir dir("ft_neg");
    write_text(dir / "f.csv",
               "cell_id,g,f1,f2,f3,label\n"
               "c1,3.8,-4.1,-2.2,1.07,-3\n");
    CHECK_THROWS_AS(load_feature_table(dir / "f.csv", LabelTransform::log10), error);
    CHECK_NOTHROW(load_feature_table(dir / "f.csv", LabelTransform::identity));
}

TEST_CASE("feature table: unlabeled row round-trips as unlabeled") {
    testutil::TempDir dir("ft_rt1");
    FeatureTable t;
    t.label_transform = LabelTransform::identity;
    t.rows = {{"a", 1.0, -4.0, -2.0, 1.07, 3.5}, {"b", 2.0, -3.5, -2.1, 1.06, std::nullopt}};
    write_feature_table(t, dir / "t.csv");
    const FeatureTable back = load_feature_table(dir / "t.csv", LabelTransform::identity);
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].label.has_value());
    CHECK_FALSE(back.rows[1].label.has_value());
}

TEST_CASE("feature table: writer/loader round-trip is lossless on random tables") {
    testutil::TempDir dir("ft_prop");
    Rng rng(20260809);
    for (int rep = 0; rep < 25; ++rep) {
        const FeatureTable t = testutil::random_table(rng, 1 + static_cast<int>(rng.uniform_int(40)));
        write_feature_table(t, dir / "t.csv");
        const FeatureTable back = load_feature_table(dir / "t.csv", t.label_transform);
        REQUIRE(back.rows.size() == t.rows.size());
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            CHECK(back.rows[i].cell_id == t.rows[i].cell_id);
            CHECK(back.rows[i].g == t.rows[i].g); // bit-exact via round-trip formatting
            CHECK(back.rows[i].f1 == t.rows[i].f1);
            CHECK(back.rows[i].f2 == t.rows[i].f2);
            CHECK(back.rows[i].f3 == t.rows[i].f3);
            CHECK(back.rows[i].label == t.rows[i].label);
        }
    }
}

static CellRecord two_cycle_cell(const std::string& id) {
    CellRecord rec;
    rec.cell_id = id;
    rec.protocol.cell_id = id;
    rec.protocol.steps = {{5.4, 0.4}, {3.6, 0.4}, {1.0, 0.2}};
    rec.eol_days = 24.0;
    DischargeCurve base;
    for (int i = 0; i <= 20; ++i) {
        base.voltage.push_back(3.6 - 0.09 * i);
        base.capacity_ah.push_back(0.055 * i);
    }
    rec.cycles[2] = base;
    rec.cycles[10] = base;
    DischargeCurve faded = base;
    for (auto& q : faded.capacity_ah) q *= 0.95;
    rec.cycles[100] = faded;
    return rec;
}

TEST_CASE("cycle data: two-cell fixture loads with cycles 2/10/100") {
    testutil::TempDir dir("cy_ok");
    write_cycle_data({two_cycle_cell("cellA"), two_cycle_cell("cellB")}, dir);
    const CycleDataResult res = load_cycle_data(dir);
    REQUIRE(res.records.size() == 2);
    CHECK(res.warnings.empty());
    for (const auto& rec : res.records) {
        CHECK(rec.cycles.count(2) == 1);
        CHECK(rec.cycles.count(10) == 1);
        CHECK(rec.cycles.count(100) == 1);
        CHECK(rec.eol_days.value() == 24.0);
    }
}

TEST_CASE("cycle data: bad span sum and unsorted voltage are rejected") {
    testutil::TempDir dir("cy_bad");
    CellRecord rec = two_cycle_cell("cellA");
    rec.protocol.steps = {{5.4, 0.4}, {3.6, 0.4}, {1.0, 0.1}}; // sums to 0.9
    write_cycle_data({rec}, dir);
    CHECK_THROWS_WITH(load_cycle_data(dir), Catch::Matchers::ContainsSubstring("soc_span"));

    testutil::TempDir dir2("cy_bad2");
    CellRecord rec2 = two_cycle_cell("cellA");
    rec2.cycles[10].voltage[3] = 4.0; // ascending blip
    write_cycle_data({rec2}, dir2);
    CHECK_THROWS_WITH(load_cycle_data(dir2), Catch::Matchers::ContainsSubstring("descending"));
}

TEST_CASE("cycle data: missing required cycles is flagged but loaded") {
    testutil::TempDir dir("cy_warn");
    CellRecord rec = two_cycle_cell("cellA");
    rec.cycles.erase(100);
    write_cycle_data({rec}, dir);
    const CycleDataResult res = load_cycle_data(dir);
    REQUIRE(res.records.size() == 1);
    REQUIRE(res.warnings.size() == 1);
    CHECK_THAT(res.warnings.front(), Catch::Matchers::ContainsSubstring("cycle 100"));
}

TEST_CASE("cycle data: writer/loader round-trip preserves records") {
    testutil::TempDir dir("cy_rt");
    const std::vector<CellRecord> cells = {two_cycle_cell("cellA"), two_cycle_cell("cellB")};
    write_cycle_data(cells, dir);
    const CycleDataResult res = load_cycle_data(dir);
    REQUIRE(res.records.size() == cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const CellRecord& a = cells[i];
        const CellRecord& b = res.records[i];
        CHECK(a.cell_id == b.cell_id);
        CHECK(a.eol_days == b.eol_days);
        REQUIRE(a.protocol.steps.size() == b.protocol.steps.size());
        for (std::size_t s = 0; s < a.protocol.steps.size(); ++s) {
            CHECK(a.protocol.steps[s].c_rate == b.protocol.steps[s].c_rate);
            CHECK(a.protocol.steps[s].soc_span == b.protocol.steps[s].soc_span);
        }
        REQUIRE(a.cycles.size() == b.cycles.size());
        for (const auto& [cyc, curve] : a.cycles) {
            REQUIRE(b.cycles.count(cyc) == 1);
            CHECK(curve.voltage == b.cycles.at(cyc).voltage);
            CHECK(curve.capacity_ah == b.cycles.at(cyc).capacity_ah);
        }
    }
}

TEST_CASE("synthetic: degenerate noise collapses labels onto the hyper-plane") {
    SyntheticConfig cfg = SyntheticConfig::defaults();
    cfg.label_transform = LabelTransform::identity;
    cfg.n_groups = 5;
    cfg.cells_per_group = 8;
    cfg.sigma = Eigen::VectorXd::Constant(4, 1e-12);
    cfg.sigma_y = 1e-12;
    auto [table, truth] = generate_synthetic(cfg, 11);
    for (int j = 0; j < cfg.n_groups; ++j) {
        const Eigen::Vector2d g_vec(1.0, truth.group_g_values.at(j));
        const Eigen::VectorXd theta_expected = cfg.gamma * g_vec;
        CHECK((truth.theta_by_group.at(j) - theta_expected).cwiseAbs().maxCoeff() < 1e-6);
        for (int i = 0; i < cfg.cells_per_group; ++i) {
            const FeatureRow& row = table.rows[static_cast<std::size_t>(j * cfg.cells_per_group + i)];
            const double expected = theta_expected[0] + theta_expected[1] * row.f1 +
                                    theta_expected[2] * row.f2 + theta_expected[3] * row.f3;
            CHECK(std::abs(*row.label - expected) < 1e-6);
        }
    }
}

TEST_CASE("synthetic: same seed twice is bit-identical") {
    const SyntheticConfig cfg = SyntheticConfig::defaults();
    auto [t1, truth1] = generate_synthetic(cfg, 7);
    auto [t2, truth2] = generate_synthetic(cfg, 7);
    REQUIRE(t1.rows.size() == t2.rows.size());
    for (std::size_t i = 0; i < t1.rows.size(); ++i) {
        CHECK(t1.rows[i].g == t2.rows[i].g);
        CHECK(t1.rows[i].f1 == t2.rows[i].f1);
        CHECK(*t1.rows[i].label == *t2.rows[i].label);
    }
    CHECK(truth1.gamma == truth2.gamma);
    auto [t3, truth3] = generate_synthetic(cfg, 8);
    CHECK(t3.rows[0].g != t1.rows[0].g);
}

TEST_CASE("synthetic: rejects non-positive scales") {
    SyntheticConfig cfg = SyntheticConfig::defaults();
    cfg.sigma[2] = 0.0;
    CHECK_THROWS_AS(generate_synthetic(cfg, 1), error);
    SyntheticConfig cfg2 = SyntheticConfig::defaults();
    cfg2.sigma_y = -1.0;
    CHECK_THROWS_AS(generate_synthetic(cfg2, 1), error);
}

TEST_CASE("synthetic: per-group label variance matches the analytic value") {
    // One large group; everything conditioned on the realized theta.
    SyntheticConfig cfg = SyntheticConfig::defaults();
    cfg.label_transform = LabelTransform::identity;
    cfg.n_groups = 1;
    cfg.cells_per_group = 10000;
    cfg.sigma_y = 0.3;
    auto [table, truth] = generate_synthetic(cfg, 99);
    const Eigen::VectorXd theta = truth.theta_by_group.at(0);

    double analytic = cfg.sigma_y * cfg.sigma_y;
    for (int m = 0; m < 3; ++m) {
        const double sd = cfg.feature_distributions[static_cast<std::size_t>(m)].sd;
        analytic += theta[m + 1] * theta[m + 1] * sd * sd;
    }
    std::vector<double> labels;
    for (const auto& r : table.rows) labels.push_back(*r.label);
    const double mean = std::accumulate(labels.begin(), labels.end(), 0.0) / labels.size();
    double var = 0.0;
    for (double v : labels) var += (v - mean) * (v - mean);
    var /= (labels.size() - 1.0);
    CHECK(std::abs(var - analytic) / analytic < 0.05);
}

TEST_CASE("synthetic: standardized residuals are standard normal") {
    SyntheticConfig cfg = SyntheticConfig::defaults();
    cfg.label_transform = LabelTransform::identity;
    cfg.n_groups = 4;
    cfg.cells_per_group = 2500;
    cfg.sigma_y = 0.2;
    auto [table, truth] = generate_synthetic(cfg, 123);
    const int n = static_cast<int>(table.rows.size());
    std::vector<double> z(static_cast<std::size_t>(n));
    for (int j = 0; j < cfg.n_groups; ++j) {
        const Eigen::VectorXd theta = truth.theta_by_group.at(j);
        for (int i = 0; i < cfg.cells_per_group; ++i) {
            const std::size_t idx = static_cast<std::size_t>(j * cfg.cells_per_group + i);
            const FeatureRow& row = table.rows[idx];
            const double fitted = theta[0] + theta[1] * row.f1 + theta[2] * row.f2 + theta[3] * row.f3;
            z[idx] = (*row.label - fitted) / cfg.sigma_y;
        }
    }
    const double mean = std::accumulate(z.begin(), z.end(), 0.0) / n;
    double var = 0.0;
    for (double v : z) var += (v - mean) * (v - mean);
    var /= (n - 1.0);
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.1);
}

TEST_CASE("synthetic: log10 transform stores labels in days") {
    const SyntheticConfig cfg = SyntheticConfig::defaults(); // log10 by default
    auto [table, truth] = generate_synthetic(cfg, 5);
    double lo = 1e9, hi = 0.0;
    for (const auto& r : table.rows) {
        REQUIRE(r.label.has_value());
        CHECK(*r.label > 0.0);
        lo = std::min(lo, *r.label);
        hi = std::max(hi, *r.label);
    }
    // defaults put lifetimes in a battery-plausible range
    CHECK(lo > 1.0);
    CHECK(hi < 400.0);
}
