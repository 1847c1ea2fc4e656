// Shared fixtures for the test suite.
#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hblife/dataset.hpp"
#include "hblife/rng.hpp"

namespace testutil {

/// Fresh scratch directory under the build tree; wiped on construction.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / ("hblife_test_" + name);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }

    operator std::filesystem::path() const { return path; }
    std::filesystem::path operator/(const std::string& leaf) const { return path / leaf; }
};

inline hblife::FeatureTable random_table(hblife::Rng& rng, int n_cells,
                                         hblife::LabelTransform transform = hblife::LabelTransform::identity,
                                         double unlabeled_fraction = 0.2) {
    hblife::FeatureTable t;
    t.label_transform = transform;
    for (int i = 0; i < n_cells; ++i) {
        hblife::FeatureRow r;
        r.cell_id = "cell_" + std::to_string(i);
        r.g = rng.uniform(1.0, 9.0);
        r.f1 = rng.normal(-4.0, 1.0);
        r.f2 = rng.normal(-2.5, 0.5);
        r.f3 = rng.normal(1.07, 0.01);
        if (rng.uniform() > unlabeled_fraction) r.label = rng.uniform(5.0, 80.0);
        t.rows.push_back(std::move(r));
    }
    return t;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace testutil
