// Early-cycle feature extraction: average charging C-rate g (group level)
// and F1-F3 from the discharge capacity-vs-voltage difference curve between
// cycles 10 and 100 plus the cycle-2 capacity (individual level).
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hblife/common.hpp"
#include "hblife/dataset.hpp"

namespace hblife {

struct GridConfig {
    double v_max = 3.5; // grid start (volts, descending)
    double v_min = 2.0; // grid end
    int points = 1000;

    void validate() const {
        if (points < 2) fail("features: grid needs at least 2 points");
        if (!(v_max > v_min)) fail("features: grid requires v_max > v_min");
    }
};

/// SOC-weighted mean of charging C-rates; equals the SOC-integral of current
/// normalised by nominal capacity.
inline double average_charge_crate(const ChargeProtocol& protocol) {
    protocol.validate();
    double acc = 0.0;
    for (const auto& s : protocol.steps) acc += s.c_rate * s.soc_span;
    return acc;
}

struct DeltaQCurve {
    std::vector<double> voltage_grid; // strictly descending
    std::vector<double> delta_q;      // Ah, same length
};

namespace detail {

/// Linear interpolation of Q(V) on a curve with non-increasing voltage.
/// Flat voltage segments (capacity jump at constant voltage) evaluate to the
/// capacity of the last sample at that voltage.
inline double interp_capacity(const DischargeCurve& curve, double v, const std::string& cell_id) {
    const auto& vs = curve.voltage;
    const auto& qs = curve.capacity_ah;
    if (v > vs.front() || v < vs.back())
        fail("features: cell '" + cell_id + "': grid voltage " + format_double(v) +
             " outside curve support [" + format_double(vs.back()) + ", " + format_double(vs.front()) +
             "]; no extrapolation");
    // first index with voltage <= v (voltage is descending)
    auto it = std::lower_bound(vs.begin(), vs.end(), v, [](double sample, double target) {
        return sample > target;
    });
    std::size_t hi = static_cast<std::size_t>(it - vs.begin());
    if (vs[hi] == v) {
        while (hi + 1 < vs.size() && vs[hi + 1] == v) ++hi;
        return qs[hi];
    }
    const std::size_t lo = hi - 1; // vs[lo] > v > vs[hi]
    const double t = (vs[lo] - v) / (vs[lo] - vs[hi]);
    return qs[lo] + t * (qs[hi] - qs[lo]);
}

inline std::vector<double> make_grid(const GridConfig& grid) {
    std::vector<double> vg(static_cast<std::size_t>(grid.points));
    const double step = (grid.v_min - grid.v_max) / (grid.points - 1);
    for (int i = 0; i < grid.points; ++i) vg[static_cast<std::size_t>(i)] = grid.v_max + step * i;
    vg.back() = grid.v_min;
    return vg;
}

} // namespace detail

/// Q(V) of cycle_b minus Q(V) of cycle_a on a common descending voltage grid.
inline DeltaQCurve delta_q_curve(const CellRecord& cell, int cycle_a = 10, int cycle_b = 100,
                                 const GridConfig& grid = {}) {
    grid.validate();
    for (int cyc : {cycle_a, cycle_b})
        if (!cell.cycles.count(cyc))
            fail("features: cell '" + cell.cell_id + "' missing cycle " + std::to_string(cyc));
    const DischargeCurve& a = cell.cycles.at(cycle_a);
    const DischargeCurve& b = cell.cycles.at(cycle_b);
    DeltaQCurve out;
    out.voltage_grid = detail::make_grid(grid);
    out.delta_q.resize(out.voltage_grid.size());
    for (std::size_t i = 0; i < out.voltage_grid.size(); ++i) {
        const double v = out.voltage_grid[i];
        out.delta_q[i] = detail::interp_capacity(b, v, cell.cell_id) - detail::interp_capacity(a, v, cell.cell_id);
    }
    return out;
}

struct FeatureVector {
    double g = 0.0;
    double f1 = 0.0;
    double f2 = 0.0;
    double f3 = 0.0;
};

/// F1 = log10 of the population variance of dQ over the grid, F2 = log10 of
/// |min dQ|, F3 = total discharge capacity at cycle 2; both logs clamped at
/// eps to keep zero-signal cells finite.
inline FeatureVector extract_features(const CellRecord& cell, const GridConfig& grid = {},
                                      double eps = 1e-12) {
    if (!(eps > 0.0)) fail("features: eps must be > 0");
    if (!cell.cycles.count(2)) fail("features: cell '" + cell.cell_id + "' missing cycle 2");
    const DeltaQCurve dq = delta_q_curve(cell, 10, 100, grid);

    const std::size_t n = dq.delta_q.size();
    double mean = 0.0;
    for (double d : dq.delta_q) mean += d;
    mean /= static_cast<double>(n);
    double var = 0.0;
    double min_dq = dq.delta_q.front();
    for (double d : dq.delta_q) {
        var += (d - mean) * (d - mean);
        min_dq = std::min(min_dq, d);
    }
    var /= static_cast<double>(n); // dense deterministic grid -> population variance

    FeatureVector out;
    out.g = average_charge_crate(cell.protocol);
    out.f1 = std::log10(std::max(var, eps));
    out.f2 = std::log10(std::max(std::abs(min_dq), eps));
    out.f3 = cell.cycles.at(2).capacity_ah.back();
    return out;
}

/// Batch extraction for the CLI: cells without the required cycles are
/// skipped and reported in `skipped`.
inline FeatureTable extract_feature_table(const std::vector<CellRecord>& cells, const GridConfig& grid,
                                          double eps, LabelTransform transform,
                                          std::vector<std::string>* skipped = nullptr) {
    FeatureTable table;
    table.label_transform = transform;
    for (const auto& cell : cells) {
        bool complete = true;
        for (int cyc : {2, 10, 100}) complete = complete && cell.cycles.count(cyc) > 0;
        if (!complete) {
            if (skipped) skipped->push_back(cell.cell_id);
            continue;
        }
        const FeatureVector fv = extract_features(cell, grid, eps);
        FeatureRow row{cell.cell_id, fv.g, fv.f1, fv.f2, fv.f3, cell.eol_days};
        table.rows.push_back(std::move(row));
    }
    table.validate();
    return table;
}

} // namespace hblife
