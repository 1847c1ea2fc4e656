// Independent oracles used by the hbm tests and the acceptance suite. These
// deliberately avoid the library's Woodbury / conjugate code paths: the
// Gaussian log-pdf builds the full covariance, the evidence oracle is plain
// Monte Carlo, the conditional oracle is grid quadrature.
#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "hblife/rng.hpp"

namespace oracle {

/// Generic dense multivariate normal log-density.
inline double dense_gaussian_logpdf(const Eigen::VectorXd& y, const Eigen::VectorXd& mean,
                                    const Eigen::MatrixXd& cov) {
    const auto n = y.size();
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    const Eigen::VectorXd r = y - mean;
    const Eigen::VectorXd alpha = llt.solve(r);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixLLT()(i, i));
    return -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det + r.dot(alpha));
}

/// Marginal covariance of one group assembled explicitly:
/// sigma_y^2 I + X diag(sigma^2) X^T (+ jitter to mirror the library).
inline Eigen::MatrixXd marginal_covariance(const Eigen::MatrixXd& design, const Eigen::VectorXd& sigma,
                                           double sigma_y, double jitter) {
    const auto n = design.rows();
    Eigen::MatrixXd cov = design * sigma.array().square().matrix().asDiagonal() * design.transpose();
    cov.diagonal().array() += sigma_y * sigma_y + jitter;
    (void)n;
    return cov;
}

/// Monte Carlo estimate of log integral P(Y|theta) P(theta|gamma, sigma) dtheta
/// by sampling theta from its level-2 prior; log-sum-exp for stability.
inline double mc_marginal_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                                         const Eigen::VectorXd& prior_mean, const Eigen::VectorXd& sigma,
                                         double sigma_y, int n_draws, hblife::Rng& rng) {
    const auto p = prior_mean.size();
    const auto n = labels.size();
    std::vector<double> log_terms(static_cast<std::size_t>(n_draws));
    Eigen::VectorXd theta(p);
    const double norm_const = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma_y);
    for (int d = 0; d < n_draws; ++d) {
        for (Eigen::Index i = 0; i < p; ++i) theta[i] = prior_mean[i] + sigma[i] * rng.normal();
        const Eigen::VectorXd resid = labels - design * theta;
        double ll = static_cast<double>(n) * norm_const;
        ll -= resid.squaredNorm() / (2.0 * sigma_y * sigma_y);
        log_terms[static_cast<std::size_t>(d)] = ll;
    }
    double max_term = log_terms.front();
    for (double t : log_terms) max_term = std::max(max_term, t);
    double acc = 0.0;
    for (double t : log_terms) acc += std::exp(t - max_term);
    return max_term + std::log(acc / n_draws);
}

struct GridMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    double max_boundary_weight = 0.0; // relative to the peak; must be tiny
};

/// Midpoint-rule quadrature of the unnormalized 2-coefficient conditional
/// posterior P(Y|theta) P(theta|gamma, sigma) over a fixed rectangle.
inline GridMoments grid_quadrature_2d(const Eigen::MatrixXd& design, const Eigen::VectorXd& labels,
                                      const Eigen::VectorXd& prior_mean, const Eigen::VectorXd& sigma,
                                      double sigma_y, double lo, double hi, int points_per_dim) {
    const double h = (hi - lo) / points_per_dim;
    std::vector<double> log_w;
    std::vector<Eigen::Vector2d> nodes;
    log_w.reserve(static_cast<std::size_t>(points_per_dim) * static_cast<std::size_t>(points_per_dim));
    double max_log = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < points_per_dim; ++i) {
        for (int j = 0; j < points_per_dim; ++j) {
            Eigen::Vector2d theta(lo + (i + 0.5) * h, lo + (j + 0.5) * h);
            const Eigen::VectorXd resid = labels - design * theta;
            double lw = -resid.squaredNorm() / (2.0 * sigma_y * sigma_y);
            for (int d = 0; d < 2; ++d) {
                const double z = (theta[d] - prior_mean[d]) / sigma[d];
                lw -= 0.5 * z * z;
            }
            log_w.push_back(lw);
            nodes.push_back(theta);
            max_log = std::max(max_log, lw);
        }
    }
    double total = 0.0;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (std::size_t idx = 0; idx < log_w.size(); ++idx) {
        const double w = std::exp(log_w[idx] - max_log);
        total += w;
        mean += w * nodes[idx];
    }
    mean /= total;
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (std::size_t idx = 0; idx < log_w.size(); ++idx) {
        const double w = std::exp(log_w[idx] - max_log);
        const Eigen::Vector2d d = nodes[idx] - mean;
        cov += w * d * d.transpose();
    }
    cov /= total;

    GridMoments out;
    out.mean = mean;
    out.cov = cov;
    for (int i = 0; i < points_per_dim; ++i) {
        for (int j : {0, points_per_dim - 1}) {
            out.max_boundary_weight = std::max(
                out.max_boundary_weight,
                std::exp(log_w[static_cast<std::size_t>(i) * points_per_dim + j] - max_log));
            out.max_boundary_weight = std::max(
                out.max_boundary_weight,
                std::exp(log_w[static_cast<std::size_t>(j) * points_per_dim + i] - max_log));
        }
    }
    return out;
}

} // namespace oracle
