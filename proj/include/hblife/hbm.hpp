// Two-level hierarchical Bayesian linear model. Group coefficients are
// integrated out analytically (exact Gaussian marginal per group), so MCMC
// runs only over the hyper-coefficients gamma and the level-2 scales.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hblife/common.hpp"
#include "hblife/dataset.hpp"
#include "hblife/rng.hpp"

namespace hblife {

inline constexpr double kCovJitter = 1e-9; // added to the marginal covariance diagonal

/// Prior over the level-2 scales sigma (one scale per coefficient dimension,
/// shared across groups). `fixed` pins the scales instead of sampling them.
struct ScalePrior {
    enum class Kind { half_normal, fixed };
    Kind kind = Kind::half_normal;
    Eigen::VectorXd value; // half_normal: prior scales (empty = unit); fixed: the sigma values

    static ScalePrior half_normal(Eigen::VectorXd scales = {}) { return {Kind::half_normal, std::move(scales)}; }
    static ScalePrior fixed(Eigen::VectorXd sigmas) { return {Kind::fixed, std::move(sigmas)}; }
};

struct ModelConfig {
    double sigma_y = 1.0;            // level-1 noise scale in transformed label units
    double hyper_prior_scale = 10.0; // gamma ~ N(0, hyper_prior_scale^2) per entry
    ScalePrior scale_prior;
    std::optional<double> sigma_y_prior_scale; // set -> sigma_y gets a half-normal prior and is sampled
    LabelTransform label_transform = LabelTransform::log10;

    void validate() const {
        if (!(sigma_y > 0.0)) fail("hbm: sigma_y must be > 0");
        if (!(hyper_prior_scale > 0.0)) fail("hbm: hyper_prior_scale must be > 0");
        for (int i = 0; i < scale_prior.value.size(); ++i)
            if (!(scale_prior.value[i] > 0.0)) fail("hbm: scale prior entries must be > 0");
        if (sigma_y_prior_scale && !(*sigma_y_prior_scale > 0.0)) fail("hbm: sigma_y prior scale must be > 0");
    }
};

/// One usage group's regression data. First design column is the intercept;
/// g_vec = (1, mean g of the group's cells).
struct GroupData {
    int group = 0;
    Eigen::MatrixXd design; // n x p
    Eigen::VectorXd labels; // n
    Eigen::VectorXd g_vec;  // q

    void validate() const {
        if (design.rows() != labels.size()) fail("hbm: design rows do not match labels");
        if (design.cols() < 1) fail("hbm: empty design");
        if (g_vec.size() < 1 || g_vec[0] != 1.0) fail("hbm: g_vec must start with 1");
        for (int i = 0; i < design.rows(); ++i)
            if (design(i, 0) != 1.0) fail("hbm: first design column must be ones");
    }
};

/// Sufficient statistics of a group: everything the marginal likelihood and
/// the conditional posterior need.
struct GroupStats {
    int group = 0;
    int n = 0;
    Eigen::MatrixXd sxx; // X^T X, p x p
    Eigen::VectorXd sxy; // X^T y
    double syy = 0.0;    // y^T y
    Eigen::VectorXd g_vec;

    static GroupStats from(const GroupData& gd) {
        gd.validate();
        GroupStats s;
        s.group = gd.group;
        s.n = static_cast<int>(gd.design.rows());
        s.sxx = gd.design.transpose() * gd.design;
        s.sxy = gd.design.transpose() * gd.labels;
        s.syy = gd.labels.squaredNorm();
        s.g_vec = gd.g_vec;
        return s;
    }
};

namespace detail {

inline void check_model_dims(const Eigen::MatrixXd& gamma, const Eigen::VectorXd& sigma, double sigma_y,
                             int p, int q) {
    if (gamma.rows() != p || gamma.cols() != q) fail("hbm: gamma has wrong shape");
    if (sigma.size() != p) fail("hbm: sigma has wrong length");
    for (int i = 0; i < p; ++i)
        if (!(sigma[i] > 0.0)) fail("hbm: sigma entries must be > 0");
    if (!(sigma_y > 0.0)) fail("hbm: sigma_y must be > 0");
}

/// log N(y; X gamma g, a I + X diag(sigma^2) X^T) with a = sigma_y^2 + jitter,
/// evaluated through the p-dimensional Woodbury / determinant-lemma form.
inline double marginal_log_likelihood_stats(const GroupStats& s, const Eigen::MatrixXd& gamma,
                                            const Eigen::VectorXd& sigma, double sigma_y) {
    if (s.n == 0) return 0.0;
    const int p = static_cast<int>(s.sxx.rows());
    const double a = sigma_y * sigma_y + kCovJitter;
    const Eigen::VectorXd m = gamma * s.g_vec;
    const Eigen::VectorXd xr = s.sxy - s.sxx * m;                    // X^T r
    const double rr = s.syy - 2.0 * m.dot(s.sxy) + m.dot(s.sxx * m); // r^T r
    Eigen::MatrixXd cap = s.sxx / a;                                 // D^-1 + X^T X / a
    double log_det_d = 0.0;
    for (int i = 0; i < p; ++i) {
        cap(i, i) += 1.0 / (sigma[i] * sigma[i]);
        log_det_d += 2.0 * std::log(sigma[i]);
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cap);
    if (llt.info() != Eigen::Success) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cap);
        const double cond = es.eigenvalues().cwiseAbs().maxCoeff() /
                            std::max(es.eigenvalues().cwiseAbs().minCoeff(), 1e-300);
        fail("hbm: marginal covariance not positive definite after jitter (condition number " +
             format_double(cond) + ")");
    }
    double log_det_cap = 0.0;
    const Eigen::MatrixXd& l = llt.matrixLLT();
    for (int i = 0; i < p; ++i) log_det_cap += 2.0 * std::log(l(i, i));
    const double log_det = log_det_cap + log_det_d + s.n * std::log(a);
    const double quad = (rr - xr.dot(llt.solve(xr)) / a) / a;
    return -0.5 * (s.n * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

} // namespace detail

/// Model evidence of one group: the level-1 coefficients integrated out in
/// closed form.
inline double marginal_log_likelihood(const GroupData& group, const Eigen::MatrixXd& gamma,
                                      const Eigen::VectorXd& sigma, double sigma_y) {
    const GroupStats s = GroupStats::from(group);
    detail::check_model_dims(gamma, sigma, sigma_y, static_cast<int>(group.design.cols()),
                             static_cast<int>(group.g_vec.size()));
    return detail::marginal_log_likelihood_stats(s, gamma, sigma, sigma_y);
}

struct GaussianPosterior {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

namespace detail {

inline GaussianPosterior theta_conditional_stats(const GroupStats& s, const Eigen::MatrixXd& gamma,
                                                 const Eigen::VectorXd& sigma, double sigma_y) {
    const int p = static_cast<int>(s.sxx.rows());
    const Eigen::VectorXd prior_mean = gamma * s.g_vec;
    if (s.n == 0) { // no data: conditional equals the level-2 prior
        GaussianPosterior out;
        out.mean = prior_mean;
        out.cov = Eigen::MatrixXd::Zero(p, p);
        for (int i = 0; i < p; ++i) out.cov(i, i) = sigma[i] * sigma[i];
        return out;
    }
    const double inv_noise = 1.0 / (sigma_y * sigma_y);
    Eigen::MatrixXd precision = s.sxx * inv_noise;
    Eigen::VectorXd rhs = s.sxy * inv_noise;
    for (int i = 0; i < p; ++i) {
        const double prior_prec = 1.0 / (sigma[i] * sigma[i]);
        precision(i, i) += prior_prec;
        rhs[i] += prior_prec * prior_mean[i];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) fail("hbm: singular conditional precision matrix");
    GaussianPosterior out;
    out.mean = llt.solve(rhs);
    out.cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
    out.cov = 0.5 * (out.cov + out.cov.transpose().eval());
    if (!out.mean.allFinite() || !out.cov.allFinite()) fail("hbm: singular conditional precision matrix");
    return out;
}

} // namespace detail

/// Conjugate conditional posterior of a group's coefficients given (gamma, sigma).
inline GaussianPosterior theta_conditional(const GroupData& group, const Eigen::MatrixXd& gamma,
                                           const Eigen::VectorXd& sigma, double sigma_y) {
    const GroupStats s = GroupStats::from(group);
    detail::check_model_dims(gamma, sigma, sigma_y, static_cast<int>(group.design.cols()),
                             static_cast<int>(group.g_vec.size()));
    return detail::theta_conditional_stats(s, gamma, sigma, sigma_y);
}

struct McmcConfig {
    int n_chains = 4;
    int n_warmup = 1000;
    int n_samples = 1000;
    double init_step = 0.25;
    double target_accept = 0.44; // per-coordinate random-walk target
    int threads = 1;

    void validate() const {
        if (n_chains < 1 || n_warmup < 1 || n_samples < 1) fail("hbm: mcmc counts must be >= 1");
        if (!(init_step > 0.0)) fail("hbm: init_step must be > 0");
        if (!(target_accept > 0.0 && target_accept < 1.0)) fail("hbm: target_accept must be in (0,1)");
    }
};

struct Diagnostics {
    std::vector<std::string> names; // one per scalar parameter
    Eigen::VectorXd r_hat;          // split R-hat
    Eigen::VectorXd ess;
    double acceptance_rate = 0.0; // sampling phase, pooled over chains and coordinates
};

struct HbmPosterior {
    int p = 0;
    int q = 0;
    Eigen::MatrixXd gamma_samples;   // S x (p*q), flat index k*q + c
    Eigen::MatrixXd sigma_samples;   // S x p
    Eigen::VectorXd sigma_y_samples; // S (constant when sigma_y is fixed)
    std::vector<GroupStats> groups;
    std::vector<std::vector<GaussianPosterior>> theta_conditionals; // [group][sample]
    Diagnostics diagnostics;
    ModelConfig config;
    McmcConfig mcmc;
    std::uint64_t seed = 0;

    int n_samples_total() const { return static_cast<int>(gamma_samples.rows()); }

    Eigen::MatrixXd gamma_at(int s) const {
        Eigen::MatrixXd g(p, q);
        for (int k = 0; k < p; ++k)
            for (int c = 0; c < q; ++c) g(k, c) = gamma_samples(s, k * q + c);
        return g;
    }
};

namespace detail {

/// Log target density over packed parameters
/// [gamma (p*q), log sigma (p, when sampled), log sigma_y (when sampled)].
///
/// The chain walks a centered basis: the non-intercept components of every
/// g_vec are shifted to zero mean across groups, which decorrelates each
/// coefficient's (intercept, slope) pair. The mapping back to the original
/// gamma is an exact unit-Jacobian linear bijection, and the N(0, s0^2)
/// prior is evaluated on the original gamma, so the model is unchanged.
class HbmTarget {
  public:
    HbmTarget(std::vector<GroupStats> groups, const ModelConfig& config, int p, int q)
        : groups_(std::move(groups)), config_(config), p_(p), q_(q) {
        sample_sigma_ = config.scale_prior.kind == ScalePrior::Kind::half_normal;
        if (sample_sigma_) {
            sigma_prior_scales_ =
                config.scale_prior.value.size() == 0 ? Eigen::VectorXd::Ones(p) : config.scale_prior.value;
            if (sigma_prior_scales_.size() != p) fail("hbm: scale prior length must match coefficient count");
        } else {
            fixed_sigma_ = config.scale_prior.value;
            if (fixed_sigma_.size() != p) fail("hbm: fixed sigma length must match coefficient count");
        }
        sample_sigma_y_ = config.sigma_y_prior_scale.has_value();
        dim_ = p_ * q_ + (sample_sigma_ ? p_ : 0) + (sample_sigma_y_ ? 1 : 0);

        center_ = Eigen::VectorXd::Zero(q_);
        for (const auto& g : groups_) center_ += g.g_vec;
        center_ /= static_cast<double>(groups_.size());
        center_[0] = 0.0;
        centered_groups_ = groups_;
        for (auto& g : centered_groups_) g.g_vec -= center_;
    }

    int dim() const { return dim_; }
    int gamma_dim() const { return p_ * q_; }
    bool samples_sigma() const { return sample_sigma_; }
    bool samples_sigma_y() const { return sample_sigma_y_; }

    /// gamma_k0 = tilde_k0 - sum_c center_c * tilde_kc; other entries equal.
    Eigen::MatrixXd gamma_from_tilde(const Eigen::MatrixXd& tilde) const {
        Eigen::MatrixXd gamma = tilde;
        for (int k = 0; k < p_; ++k)
            for (int c = 1; c < q_; ++c) gamma(k, 0) -= center_[c] * tilde(k, c);
        return gamma;
    }

    /// Unpack a chain state into original-basis (gamma, sigma, sigma_y).
    void unpack(const Eigen::VectorXd& params, Eigen::MatrixXd& gamma, Eigen::VectorXd& sigma,
                double& sigma_y) const {
        Eigen::MatrixXd tilde(p_, q_);
        for (int k = 0; k < p_; ++k)
            for (int c = 0; c < q_; ++c) tilde(k, c) = params[k * q_ + c];
        gamma = gamma_from_tilde(tilde);
        if (sample_sigma_) {
            sigma.resize(p_);
            for (int i = 0; i < p_; ++i) sigma[i] = std::exp(params[p_ * q_ + i]);
        } else {
            sigma = fixed_sigma_;
        }
        sigma_y = sample_sigma_y_ ? std::exp(params[dim_ - 1]) : config_.sigma_y;
    }

    double log_density(const Eigen::VectorXd& params) const {
        Eigen::MatrixXd tilde(p_, q_);
        for (int k = 0; k < p_; ++k)
            for (int c = 0; c < q_; ++c) tilde(k, c) = params[k * q_ + c];
        Eigen::VectorXd sigma;
        double sigma_y;
        if (sample_sigma_) {
            sigma.resize(p_);
            for (int i = 0; i < p_; ++i) sigma[i] = std::exp(params[p_ * q_ + i]);
        } else {
            sigma = fixed_sigma_;
        }
        sigma_y = sample_sigma_y_ ? std::exp(params[dim_ - 1]) : config_.sigma_y;

        double lp = 0.0;
        const double s0 = config_.hyper_prior_scale;
        const Eigen::MatrixXd gamma = gamma_from_tilde(tilde);
        for (int k = 0; k < p_; ++k)
            for (int c = 0; c < q_; ++c) lp -= gamma(k, c) * gamma(k, c) / (2.0 * s0 * s0);
        if (sample_sigma_) {
            for (int i = 0; i < p_; ++i) {
                const double hs = sigma_prior_scales_[i];
                // half-normal density plus the log-scale Jacobian
                lp += -sigma[i] * sigma[i] / (2.0 * hs * hs) + params[p_ * q_ + i];
            }
        }
        if (sample_sigma_y_) {
            const double hs = *config_.sigma_y_prior_scale;
            lp += -sigma_y * sigma_y / (2.0 * hs * hs) + params[dim_ - 1];
        }
        for (const auto& g : centered_groups_) lp += marginal_log_likelihood_stats(g, tilde, sigma, sigma_y);
        if (std::isnan(lp)) return -std::numeric_limits<double>::infinity();
        return lp;
    }

    const std::vector<GroupStats>& groups() const { return groups_; }

  private:
    std::vector<GroupStats> groups_;
    std::vector<GroupStats> centered_groups_;
    Eigen::VectorXd center_;
    ModelConfig config_;
    int p_, q_, dim_ = 0;
    bool sample_sigma_ = true;
    bool sample_sigma_y_ = false;
    Eigen::VectorXd sigma_prior_scales_;
    Eigen::VectorXd fixed_sigma_;
};

struct ChainResult {
    Eigen::MatrixXd draws; // n_samples x dim
    long long accepted = 0;
    long long proposed = 0;
};

/// One chain of component-wise adaptive random-walk Metropolis. Step sizes
/// adapt toward target_accept during warmup only.
inline ChainResult run_chain(const HbmTarget& target, const McmcConfig& mcmc, std::uint64_t chain_seed) {
    const int dim = target.dim();
    Rng rng(chain_seed);
    Eigen::VectorXd params(dim);
    for (int i = 0; i < dim; ++i)
        params[i] = i < target.gamma_dim() ? rng.normal(0.0, 1.0) : rng.normal(0.0, 0.5);

    double cur_lp = target.log_density(params);
    if (!std::isfinite(cur_lp)) fail("hbm: initial log-density is not finite");

    Eigen::VectorXd log_step = Eigen::VectorXd::Constant(dim, std::log(mcmc.init_step));
    ChainResult res;
    res.draws.resize(mcmc.n_samples, dim);
    const int total = mcmc.n_warmup + mcmc.n_samples;
    Eigen::VectorXd prop = params;
    for (int t = 1; t <= total; ++t) {
        const bool warming = t <= mcmc.n_warmup;
        const double gain = std::pow(static_cast<double>(t), -0.6);
        for (int i = 0; i < dim; ++i) {
            prop = params;
            prop[i] += std::exp(log_step[i]) * rng.normal();
            const double lp2 = target.log_density(prop);
            const double log_alpha = lp2 - cur_lp;
            const double alpha = log_alpha >= 0.0 ? 1.0 : std::exp(log_alpha);
            const bool accept = rng.uniform() < alpha;
            if (accept) {
                params[i] = prop[i];
                cur_lp = lp2;
            }
            if (warming) {
                log_step[i] += gain * (alpha - mcmc.target_accept);
            } else {
                res.accepted += accept ? 1 : 0;
                ++res.proposed;
            }
        }
        if (!warming) res.draws.row(t - mcmc.n_warmup - 1) = params;
    }
    if (!std::isfinite(cur_lp)) fail("hbm: log-density became non-finite during sampling");
    return res;
}

inline double sample_variance(const Eigen::VectorXd& v) {
    const double mean = v.mean();
    return (v.array() - mean).square().sum() / (v.size() - 1);
}

/// Split R-hat (each chain halved) for one scalar parameter.
inline double split_r_hat(const std::vector<Eigen::VectorXd>& split_chains) {
    const int m = static_cast<int>(split_chains.size());
    const auto len = split_chains.front().size();
    if (len < 2) return std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd means(m), vars(m);
    for (int j = 0; j < m; ++j) {
        means[j] = split_chains[static_cast<std::size_t>(j)].mean();
        vars[j] = sample_variance(split_chains[static_cast<std::size_t>(j)]);
    }
    const double w = vars.mean();
    if (!(w > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double b_over_n = m > 1 ? sample_variance(means) : 0.0;
    const double var_plus = (static_cast<double>(len) - 1.0) / static_cast<double>(len) * w + b_over_n;
    return std::sqrt(var_plus / w);
}

/// Effective sample size via Geyer's initial positive sequence on the
/// chain-averaged autocorrelations.
inline double effective_sample_size(const std::vector<Eigen::VectorXd>& split_chains) {
    const int m = static_cast<int>(split_chains.size());
    const auto len = split_chains.front().size();
    if (len < 4) return static_cast<double>(m) * static_cast<double>(len);
    Eigen::VectorXd means(m), vars(m);
    for (int j = 0; j < m; ++j) {
        means[j] = split_chains[static_cast<std::size_t>(j)].mean();
        vars[j] = sample_variance(split_chains[static_cast<std::size_t>(j)]);
    }
    const double w = vars.mean();
    if (!(w > 0.0)) return static_cast<double>(m) * static_cast<double>(len);
    const double b_over_n = m > 1 ? sample_variance(means) : 0.0;
    const double var_plus = (static_cast<double>(len) - 1.0) / static_cast<double>(len) * w + b_over_n;

    auto mean_acov = [&](Eigen::Index t) {
        double acc = 0.0;
        for (int j = 0; j < m; ++j) {
            const Eigen::VectorXd& x = split_chains[static_cast<std::size_t>(j)];
            double s = 0.0;
            for (Eigen::Index i = 0; i + t < len; ++i) s += (x[i] - means[j]) * (x[i + t] - means[j]);
            acc += s / static_cast<double>(len);
        }
        return acc / m;
    };

    double tau = 1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 1; t + 1 < len; t += 2) {
        const double rho_a = 1.0 - (w - mean_acov(t)) / var_plus;
        const double rho_b = 1.0 - (w - mean_acov(t + 1)) / var_plus;
        double pair = rho_a + rho_b;
        if (pair < 0.0) break;
        pair = std::min(pair, prev_pair); // enforce monotone decrease
        prev_pair = pair;
        tau += 2.0 * pair;
    }
    const double total = static_cast<double>(m) * static_cast<double>(len);
    return std::min(total, total / tau);
}

inline Diagnostics compute_diagnostics(const std::vector<ChainResult>& chains, const HbmTarget& target,
                                       int p, int q) {
    Diagnostics d;
    for (int k = 0; k < p; ++k)
        for (int c = 0; c < q; ++c)
            d.names.push_back("gamma_" + std::to_string(k) + (c == 0 ? "_0" : "_g" + (c > 1 ? std::to_string(c) : std::string{})));
    if (target.samples_sigma())
        for (int k = 0; k < p; ++k) d.names.push_back("sigma_" + std::to_string(k));
    if (target.samples_sigma_y()) d.names.push_back("sigma_y");

    const int dim = target.dim();
    d.r_hat.resize(dim);
    d.ess.resize(dim);
    long long accepted = 0, proposed = 0;
    for (const auto& ch : chains) {
        accepted += ch.accepted;
        proposed += ch.proposed;
    }
    d.acceptance_rate = proposed > 0 ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;

    for (int i = 0; i < dim; ++i) {
        std::vector<Eigen::VectorXd> split;
        for (const auto& ch : chains) {
            const auto n = ch.draws.rows();
            const auto half = n / 2;
            if (half < 1) {
                split.push_back(ch.draws.col(i));
                continue;
            }
            split.push_back(ch.draws.col(i).head(half));
            split.push_back(ch.draws.col(i).segment(half, half));
        }
        d.r_hat[i] = split_r_hat(split);
        d.ess[i] = effective_sample_size(split);
    }
    return d;
}

} // namespace detail

/// MCMC over the level-2 posterior proportional to
/// prod_j P(Y_j | gamma, sigma) * N(gamma; 0, hyper^2 I) * prior(sigma).
inline HbmPosterior sample_posterior(const std::vector<GroupData>& groups, const ModelConfig& config,
                                     const McmcConfig& mcmc, std::uint64_t seed) {
    if (groups.empty()) fail("hbm: need at least one group");
    config.validate();
    mcmc.validate();
    const int p = static_cast<int>(groups.front().design.cols());
    const int q = static_cast<int>(groups.front().g_vec.size());
    std::vector<GroupStats> stats;
    stats.reserve(groups.size());
    for (const auto& g : groups) {
        g.validate();
        if (g.design.cols() != p || g.g_vec.size() != q) fail("hbm: groups disagree on dimensions");
        stats.push_back(GroupStats::from(g));
    }
    detail::HbmTarget target(stats, config, p, q);

    std::vector<detail::ChainResult> chains(static_cast<std::size_t>(mcmc.n_chains));
    auto run_one = [&](int c) {
        chains[static_cast<std::size_t>(c)] = detail::run_chain(target, mcmc, derive_seed(seed, 0xCA11u + static_cast<std::uint64_t>(c)));
    };
    if (mcmc.threads > 1 && mcmc.n_chains > 1) {
        std::vector<std::thread> workers;
        std::vector<std::exception_ptr> errors(static_cast<std::size_t>(mcmc.n_chains));
        for (int c = 0; c < mcmc.n_chains; ++c)
            workers.emplace_back([&, c] {
                try {
                    run_one(c);
                } catch (...) {
                    errors[static_cast<std::size_t>(c)] = std::current_exception();
                }
            });
        for (auto& w : workers) w.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (int c = 0; c < mcmc.n_chains; ++c) run_one(c);
    }

    bool any_alive = false;
    for (const auto& ch : chains)
        any_alive = any_alive || (ch.proposed > 0 && static_cast<double>(ch.accepted) / static_cast<double>(ch.proposed) >= 0.01);
    if (!any_alive)
        fail("hbm: all chains diverged (acceptance < 1%); adjust the mcmc step configuration "
             "(init_step, target_accept) or rescale the data");

    HbmPosterior post;
    post.p = p;
    post.q = q;
    post.config = config;
    post.mcmc = mcmc;
    post.seed = seed;
    post.groups = std::move(stats);

    const int s_total = mcmc.n_chains * mcmc.n_samples;
    post.gamma_samples.resize(s_total, p * q);
    post.sigma_samples.resize(s_total, p);
    post.sigma_y_samples.resize(s_total);
    Eigen::MatrixXd gamma_s;
    Eigen::VectorXd sigma_s;
    double sigma_y_s;
    int row = 0;
    for (const auto& ch : chains) {
        for (int i = 0; i < ch.draws.rows(); ++i, ++row) {
            target.unpack(ch.draws.row(i).transpose(), gamma_s, sigma_s, sigma_y_s);
            for (int k = 0; k < p; ++k)
                for (int c = 0; c < q; ++c) post.gamma_samples(row, k * q + c) = gamma_s(k, c);
            post.sigma_samples.row(row) = sigma_s.transpose();
            post.sigma_y_samples[row] = sigma_y_s;
        }
    }

    post.diagnostics = detail::compute_diagnostics(chains, target, p, q);

    // Materialize the per-group conditional posteriors for every draw.
    post.theta_conditionals.resize(post.groups.size());
    for (std::size_t j = 0; j < post.groups.size(); ++j) {
        auto& per_group = post.theta_conditionals[j];
        per_group.reserve(static_cast<std::size_t>(s_total));
        for (int s = 0; s < s_total; ++s) {
            per_group.push_back(detail::theta_conditional_stats(
                post.groups[j], post.gamma_at(s), post.sigma_samples.row(s).transpose(),
                post.sigma_y_samples[s]));
        }
    }
    return post;
}

// ---------------------------------------------------------------------------
// Posterior prediction
// ---------------------------------------------------------------------------

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

struct CredibleInterval {
    double lo = 0.0, hi = 0.0;           // transformed units
    double lo_days = 0.0, hi_days = 0.0; // original units
};

/// Equal-weight Gaussian mixture over posterior draws.
class PredictiveDistribution {
  public:
    PredictiveDistribution(Eigen::VectorXd mix_means, Eigen::VectorXd mix_vars, LabelTransform transform)
        : mix_means_(std::move(mix_means)), mix_vars_(std::move(mix_vars)), transform_(transform) {
        const auto s = mix_means_.size();
        mean_ = mix_means_.mean();
        const double within = mix_vars_.mean();
        const double between = (mix_means_.array() - mean_).square().sum() / static_cast<double>(s);
        variance_ = within + between;
        point_estimate_days_ = invert_transform(transform_, mean_);
    }

    double mean() const { return mean_; }
    double variance() const { return variance_; }
    double point_estimate_days() const { return point_estimate_days_; }
    LabelTransform transform() const { return transform_; }

    double cdf(double x) const {
        double acc = 0.0;
        for (Eigen::Index s = 0; s < mix_means_.size(); ++s)
            acc += normal_cdf((x - mix_means_[s]) / std::sqrt(mix_vars_[s]));
        return acc / static_cast<double>(mix_means_.size());
    }

    double quantile(double prob) const {
        if (!(prob > 0.0 && prob < 1.0)) fail("hbm: quantile probability must be in (0,1)");
        const double sd_max = std::sqrt(mix_vars_.maxCoeff());
        double lo = mix_means_.minCoeff() - 12.0 * sd_max;
        double hi = mix_means_.maxCoeff() + 12.0 * sd_max;
        for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + std::abs(hi) + std::abs(lo)); ++it) {
            const double mid = 0.5 * (lo + hi);
            (cdf(mid) < prob ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }

    /// Central (1 - alpha) credible interval.
    CredibleInterval interval(double alpha) const {
        if (!(alpha > 0.0 && alpha < 1.0)) fail("hbm: interval alpha must be in (0,1)");
        CredibleInterval ci;
        ci.lo = quantile(alpha / 2.0);
        ci.hi = quantile(1.0 - alpha / 2.0);
        ci.lo_days = invert_transform(transform_, ci.lo);
        ci.hi_days = invert_transform(transform_, ci.hi);
        return ci;
    }

  private:
    Eigen::VectorXd mix_means_, mix_vars_;
    LabelTransform transform_;
    double mean_ = 0.0, variance_ = 0.0, point_estimate_days_ = 0.0;
};

/// Posterior predictive for one cell. `group_index` selects a fitted group's
/// conditionals; for a cell from an unseen usage condition pass g_vec_new
/// instead and the level-2 prior is used per draw.
inline PredictiveDistribution predict(const Eigen::VectorXd& x, std::optional<int> group_index,
                                      const std::optional<Eigen::VectorXd>& g_vec_new,
                                      const HbmPosterior& posterior) {
    if (x.size() != posterior.p) fail("hbm: feature vector has wrong length");
    const int s_total = posterior.n_samples_total();
    if (s_total < 1) fail("hbm: posterior holds no samples");
    Eigen::VectorXd mix_means(s_total), mix_vars(s_total);

    if (group_index) {
        if (*group_index < 0 || *group_index >= static_cast<int>(posterior.groups.size()))
            fail("hbm: group index " + std::to_string(*group_index) + " out of range");
        const auto& cond = posterior.theta_conditionals[static_cast<std::size_t>(*group_index)];
        for (int s = 0; s < s_total; ++s) {
            const double sy = posterior.sigma_y_samples[s];
            mix_means[s] = x.dot(cond[static_cast<std::size_t>(s)].mean);
            mix_vars[s] = x.dot(cond[static_cast<std::size_t>(s)].cov * x) + sy * sy;
        }
    } else {
        if (!g_vec_new) fail("hbm: unseen group requires a g vector");
        if (g_vec_new->size() != posterior.q || (*g_vec_new)[0] != 1.0)
            fail("hbm: g vector must have length q and start with 1");
        for (int s = 0; s < s_total; ++s) {
            const Eigen::VectorXd m = posterior.gamma_at(s) * (*g_vec_new);
            const Eigen::VectorXd sig = posterior.sigma_samples.row(s).transpose();
            const double sy = posterior.sigma_y_samples[s];
            mix_means[s] = x.dot(m);
            mix_vars[s] = (x.array().square() * sig.array().square()).sum() + sy * sy;
        }
    }
    return PredictiveDistribution(std::move(mix_means), std::move(mix_vars),
                                  posterior.config.label_transform);
}

} // namespace hblife
