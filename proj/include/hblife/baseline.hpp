// Pooled ridge-regression baseline with inner-CV lambda selection.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "hblife/common.hpp"
#include "hblife/rng.hpp"

namespace hblife {

struct RidgeModel {
    Eigen::VectorXd coefficients; // for standardized features
    double intercept = 0.0;
    double lambda = 0.0;
    Eigen::VectorXd feat_mean;
    Eigen::VectorXd feat_scale; // population std; constant columns get 1

    double predict(const Eigen::VectorXd& x_raw) const {
        double acc = intercept;
        for (Eigen::Index i = 0; i < coefficients.size(); ++i)
            acc += coefficients[i] * (x_raw[i] - feat_mean[i]) / feat_scale[i];
        return acc;
    }

    Eigen::VectorXd predict_all(const Eigen::MatrixXd& design) const {
        Eigen::VectorXd out(design.rows());
        for (Eigen::Index i = 0; i < design.rows(); ++i) out[i] = predict(design.row(i).transpose());
        return out;
    }
};

/// argmin ||y - X b - b0||^2 + lambda ||b||^2 on internally standardized
/// features; the intercept is unpenalized.
inline RidgeModel fit_ridge(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels, double lambda) {
    const auto n = design.rows();
    const auto p = design.cols();
    if (n < 1) fail("baseline: need at least one row");
    if (design.rows() != labels.size()) fail("baseline: design rows do not match labels");
    if (!(lambda >= 0.0)) fail("baseline: lambda must be >= 0");

    RidgeModel model;
    model.lambda = lambda;
    model.feat_mean = design.colwise().mean();
    model.feat_scale.resize(p);
    Eigen::MatrixXd xs(n, p);
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto centered = design.col(j).array() - model.feat_mean[j];
        const double sd = std::sqrt(centered.square().sum() / static_cast<double>(n));
        model.feat_scale[j] = sd > 0.0 ? sd : 1.0;
        xs.col(j) = centered / model.feat_scale[j];
    }
    model.intercept = labels.mean();
    const Eigen::VectorXd yc = labels.array() - model.intercept;

    Eigen::MatrixXd gram = xs.transpose() * xs;
    gram.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(gram);
    if (llt.info() != Eigen::Success)
        fail("baseline: singular ridge system (collinear features at lambda = " + format_double(lambda) +
             "); use lambda > 0");
    model.coefficients = llt.solve(xs.transpose() * yc);
    if (!model.coefficients.allFinite())
        fail("baseline: singular ridge system (collinear features at lambda = " + format_double(lambda) +
             "); use lambda > 0");
    return model;
}

inline std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int i = 0; i < 13; ++i) grid.push_back(std::pow(10.0, -4.0 + 6.0 * i / 12.0));
    return grid;
}

/// Grid value minimizing inner-CV RMSE; ties break to the smallest lambda.
inline double select_lambda(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                            std::vector<double> lambda_grid, int inner_folds, std::uint64_t seed) {
    const auto n = design.rows();
    if (lambda_grid.empty()) fail("baseline: empty lambda grid");
    if (inner_folds < 2) fail("baseline: need at least 2 inner folds");
    if (n < inner_folds) fail("baseline: fewer samples (" + std::to_string(n) + ") than folds (" +
                              std::to_string(inner_folds) + ")");
    std::sort(lambda_grid.begin(), lambda_grid.end());

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x1abda));
    rng.shuffle(order);

    // fold f owns order[start_f .. start_{f+1})
    std::vector<std::size_t> starts(static_cast<std::size_t>(inner_folds) + 1, 0);
    for (int f = 0; f < inner_folds; ++f)
        starts[static_cast<std::size_t>(f) + 1] =
            starts[static_cast<std::size_t>(f)] +
            static_cast<std::size_t>(n) / static_cast<std::size_t>(inner_folds) +
            (f < static_cast<int>(static_cast<std::size_t>(n) % static_cast<std::size_t>(inner_folds)) ? 1 : 0);

    double best_rmse = std::numeric_limits<double>::infinity();
    double best_lambda = lambda_grid.front();
    for (double lam : lambda_grid) {
        double sse = 0.0;
        std::size_t count = 0;
        for (int f = 0; f < inner_folds; ++f) {
            const std::size_t t0 = starts[static_cast<std::size_t>(f)];
            const std::size_t t1 = starts[static_cast<std::size_t>(f) + 1];
            const auto n_test = t1 - t0;
            if (n_test == 0) continue;
            const auto n_train = static_cast<std::size_t>(n) - n_test;
            Eigen::MatrixXd xtr(static_cast<Eigen::Index>(n_train), design.cols());
            Eigen::VectorXd ytr(static_cast<Eigen::Index>(n_train));
            Eigen::Index r = 0;
            for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
                if (i >= t0 && i < t1) continue;
                xtr.row(r) = design.row(order[i]);
                ytr[r] = labels[order[i]];
                ++r;
            }
            const RidgeModel m = fit_ridge(xtr, ytr, lam);
            for (std::size_t i = t0; i < t1; ++i) {
                const double e = m.predict(design.row(order[i]).transpose()) - labels[order[i]];
                sse += e * e;
            }
            count += n_test;
        }
        const double rmse = std::sqrt(sse / static_cast<double>(count));
        if (rmse < best_rmse) {
            best_rmse = rmse;
            best_lambda = lam;
        }
    }
    return best_lambda;
}

} // namespace hblife
