#pragma once

// Closed-form posteriors for the linear-Gaussian hierarchy.
//
// The posterior over all K action parameters is never formed jointly. Each action
// contributes its sufficient statistics (G_a, B_a) to the latent posterior
// psi | S ~ N(mu_bar, Sigma_bar), and the per-action posterior theta_a | S is
// recovered from the conditional posterior theta_a | psi, S and the latent one.
// Cost is O(K (d^2 + d'^2)(d + d')) time and O(K d^2) memory.

#include <cstddef>
#include <functional>
#include <vector>

#include "sdm/core.hpp"
#include "sdm/model.hpp"

namespace sdm {

struct SufficientStats {
    std::vector<MatrixXd> G;  ///< sigma^-2 sum x x' per action
    std::vector<VectorXd> B;  ///< sigma^-2 sum r x per action
    std::vector<std::size_t> N;

    std::size_t action_count() const { return G.size(); }

    static SufficientStats zeros(std::size_t K, Eigen::Index d) {
        SufficientStats s;
        s.G.assign(K, MatrixXd::Zero(d, d));
        s.B.assign(K, VectorXd::Zero(d));
        s.N.assign(K, 0);
        return s;
    }

    bool is_empty(ActionId a) const { return N[a] == 0 || (G[a].isZero(0.0) && B[a].isZero(0.0)); }
};

struct LatentPosterior {
    VectorXd mean;
    MatrixXd cov;
};

/// Marginal per-action Gaussian posteriors theta_a | S ~ N(means[a], covs[a]).
struct ActionPosteriors {
    std::vector<VectorXd> means;
    std::vector<MatrixXd> covs;

    std::size_t action_count() const { return means.size(); }
};

struct PosteriorState {
    std::vector<MatrixXd> conditional_covs;  ///< (Sigma_a^-1 + G_a)^-1
    LatentPosterior latent;
    ActionPosteriors actions;
};

using FeatureMap = std::function<VectorXd(const VectorXd&)>;

/// Rewrites every context through `phi`. The identity map is the default everywhere else.
inline LoggedDataset apply_feature_map(const LoggedDataset& data, const FeatureMap& phi) {
    LoggedDataset out;
    out.records.reserve(data.size());
    for (const Record& r : data.records) out.records.push_back({phi(r.x), r.a, r.r, r.p0});
    return out;
}

inline SufficientStats accumulate_stats(double noise_sd, const LoggedDataset& data, std::size_t K, Eigen::Index d) {
    if (!(noise_sd > 0.0)) throw ParameterError("noise sd must be positive");
    data.validate(K, d);
    SufficientStats s = SufficientStats::zeros(K, d);
    const double v = 1.0 / (noise_sd * noise_sd);
    for (const Record& rec : data.records) {
        s.G[rec.a].selfadjointView<Eigen::Lower>().rankUpdate(rec.x, v);
        s.B[rec.a].noalias() += (v * rec.r) * rec.x;
        ++s.N[rec.a];
    }
    for (MatrixXd& g : s.G) g = MatrixXd(g.selfadjointView<Eigen::Lower>());
    return s;
}

namespace detail {
inline void check_stats(const StructuredPrior& prior, const SufficientStats& stats) {
    if (stats.action_count() != prior.action_count() || stats.B.size() != prior.action_count() ||
        stats.N.size() != prior.action_count())
        throw ShapeError("sufficient statistics and prior disagree on K");
    for (std::size_t a = 0; a < stats.action_count(); ++a) {
        if (stats.G[a].rows() != prior.dim() || stats.G[a].cols() != prior.dim() || stats.B[a].size() != prior.dim())
            throw ShapeError("sufficient statistics of action " + std::to_string(a) + " have the wrong dimension");
        if (!stats.G[a].allFinite() || !stats.B[a].allFinite())
            throw DataError("sufficient statistics of action " + std::to_string(a) + " are not finite");
    }
}
}  // namespace detail

/// Conditional covariances (Sigma_a^-1 + G_a)^-1. Actions without data keep Sigma_a.
inline std::vector<MatrixXd> conditional_covs(const StructuredPrior& prior, const SufficientStats& stats) {
    detail::check_stats(prior, stats);
    std::vector<MatrixXd> out;
    out.reserve(prior.action_count());
    for (std::size_t a = 0; a < prior.action_count(); ++a) {
        if (stats.is_empty(a)) {
            out.push_back(prior.action_cov(a));
            continue;
        }
        out.push_back(spd_inverse(prior.action_precision(a) + stats.G[a], "conditional precision",
                                  static_cast<std::ptrdiff_t>(a)));
    }
    return out;
}

inline LatentPosterior latent_posterior(const StructuredPrior& prior, const SufficientStats& stats,
                                        const std::vector<MatrixXd>& cond_covs) {
    detail::check_stats(prior, stats);
    MatrixXd precision = prior.latent_precision();
    VectorXd info = prior.latent_precision() * prior.latent_mean();
    for (std::size_t a = 0; a < prior.action_count(); ++a) {
        if (stats.is_empty(a)) continue;
        const MatrixXd& lam = prior.action_precision(a);
        const MatrixXd& w = prior.mixing(a);
        const MatrixXd lam_cond = lam * cond_covs[a];  // Sigma_a^-1 Sigma~_a
        const MatrixXd learned = lam - lam_cond * lam;
        precision.noalias() += w.transpose() * symmetrize(learned) * w;
        info.noalias() += w.transpose() * (lam_cond * stats.B[a]);
    }
    LatentPosterior out;
    out.cov = spd_inverse(precision, "latent posterior precision");
    out.mean = out.cov * info;
    return out;
}

inline LatentPosterior latent_posterior(const StructuredPrior& prior, const SufficientStats& stats) {
    return latent_posterior(prior, stats, conditional_covs(prior, stats));
}

inline ActionPosteriors action_posteriors(const StructuredPrior& prior, const SufficientStats& stats,
                                          const std::vector<MatrixXd>& cond_covs, const LatentPosterior& latent) {
    detail::check_stats(prior, stats);
    if (latent.mean.size() != prior.latent_dim()) throw ShapeError("latent posterior has the wrong dimension");
    ActionPosteriors out;
    out.means.reserve(prior.action_count());
    out.covs.reserve(prior.action_count());
    for (std::size_t a = 0; a < prior.action_count(); ++a) {
        const MatrixXd& w = prior.mixing(a);
        if (stats.is_empty(a)) {
            out.means.push_back(w * latent.mean);
            out.covs.push_back(symmetrize(prior.action_cov(a) + w * latent.cov * w.transpose()));
            continue;
        }
        const MatrixXd& cond = cond_covs[a];
        const MatrixXd& lam = prior.action_precision(a);
        const MatrixXd c = cond * lam * w;  // Sigma~_a Sigma_a^-1 W_a
        out.covs.push_back(symmetrize(cond + c * latent.cov * c.transpose()));
        out.means.push_back(cond * (lam * (w * latent.mean) + stats.B[a]));
    }
    return out;
}

inline ActionPosteriors action_posteriors(const StructuredPrior& prior, const SufficientStats& stats,
                                          const LatentPosterior& latent) {
    return action_posteriors(prior, stats, conditional_covs(prior, stats), latent);
}

/// Full structured update: conditional covariances, latent posterior, action posteriors.
inline PosteriorState structured_posterior(const StructuredPrior& prior, const SufficientStats& stats) {
    PosteriorState st;
    st.conditional_covs = conditional_covs(prior, stats);
    st.latent = latent_posterior(prior, stats, st.conditional_covs);
    st.actions = action_posteriors(prior, stats, st.conditional_covs, st.latent);
    return st;
}

inline PosteriorState structured_posterior(const StructuredPrior& prior, const LoggedDataset& data) {
    return structured_posterior(prior, accumulate_stats(prior.noise_sd(), data, prior.action_count(), prior.dim()));
}

/// Standard conjugate update, independently per action.
inline ActionPosteriors nonstructured_posteriors(const NonStructuredPrior& prior, const SufficientStats& stats) {
    if (stats.action_count() != prior.action_count()) throw ShapeError("sufficient statistics and prior disagree on K");
    ActionPosteriors out;
    out.means.reserve(prior.action_count());
    out.covs.reserve(prior.action_count());
    for (std::size_t a = 0; a < prior.action_count(); ++a) {
        if (stats.G[a].rows() != prior.dim() || stats.B[a].size() != prior.dim())
            throw ShapeError("sufficient statistics of action " + std::to_string(a) + " have the wrong dimension");
        if (stats.is_empty(a)) {
            out.means.push_back(prior.mean(a));
            out.covs.push_back(prior.cov(a));
            continue;
        }
        MatrixXd cov = spd_inverse(prior.precision(a) + stats.G[a], "posterior precision", static_cast<std::ptrdiff_t>(a));
        out.means.push_back(cov * (prior.precision(a) * prior.mean(a) + stats.B[a]));
        out.covs.push_back(std::move(cov));
    }
    return out;
}

inline ActionPosteriors nonstructured_posteriors(const NonStructuredPrior& prior, const LoggedDataset& data) {
    return nonstructured_posteriors(prior, accumulate_stats(prior.noise_sd(), data, prior.action_count(), prior.dim()));
}

/// Non-structured prior obtained by integrating out psi: N(W_a mu, Sigma_a + W_a Sigma W_a').
inline NonStructuredPrior marginalize_structured(const StructuredPrior& prior) {
    std::vector<VectorXd> means;
    std::vector<MatrixXd> covs;
    means.reserve(prior.action_count());
    covs.reserve(prior.action_count());
    for (std::size_t a = 0; a < prior.action_count(); ++a) {
        const MatrixXd& w = prior.mixing(a);
        means.push_back(w * prior.latent_mean());
        covs.push_back(symmetrize(prior.action_cov(a) + w * prior.latent_cov() * w.transpose()));
    }
    return NonStructuredPrior(std::move(means), std::move(covs), prior.noise_sd());
}

/// Posterior mean reward x' mu_hat_a.
inline double reward_estimate(const VectorXd& x, ActionId a, const ActionPosteriors& post) {
    if (a >= post.action_count()) throw DataError("action out of range");
    if (x.size() != post.means[a].size()) throw ShapeError("context dimension mismatch");
    return x.dot(post.means[a]);
}

/// Posterior variance of the mean reward, x' Sigma_hat_a x.
inline double reward_uncertainty(const VectorXd& x, ActionId a, const ActionPosteriors& post) {
    if (a >= post.action_count()) throw DataError("action out of range");
    if (x.size() != post.covs[a].rows()) throw ShapeError("context dimension mismatch");
    return std::max(0.0, x.dot(post.covs[a] * x));
}

}  // namespace sdm
