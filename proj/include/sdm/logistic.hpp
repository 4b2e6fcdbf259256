#pragma once

// Binary rewards under the linear hierarchy. The per-action likelihood is replaced
// by a Gaussian centred at the (lightly ridged) MLE with the observed Fisher
// information as precision; the structured posterior then runs unchanged with
// G_a <- G_breve_a and B_a <- G_breve_a mu_breve_a.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "sdm/core.hpp"
#include "sdm/model.hpp"
#include "sdm/posterior.hpp"

namespace sdm {

enum class Link { logistic, identity };

struct MleOptions {
    double ridge = 1e-4;
    double grad_tol = 1e-8;
    int max_iterations = 100;
    int max_halvings = 30;
    Link link = Link::logistic;
};

struct MleResult {
    VectorXd mean;       ///< mu_breve
    MatrixXd curvature;  ///< G_breve = sum gdot(x' mu) x x'
    bool converged = false;
    int iterations = 0;
};

struct LogisticStats {
    std::vector<VectorXd> means;
    std::vector<MatrixXd> curvatures;
    std::vector<bool> converged;
    std::vector<std::size_t> counts;
};

namespace detail {

/// log(1 + e^v) without overflow.
inline double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

/// Penalized log-likelihood sum_i log p(r_i | x_i' theta) - ridge/2 |theta|^2.
/// For the identity link this is the unit-variance Gaussian log-likelihood.
inline double penalized_loglik(const MatrixXd& X, const VectorXd& r, const VectorXd& theta, const MleOptions& o) {
    const VectorXd u = X * theta;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (o.link == Link::logistic) {
            // log g(u) = -log(1 + e^-u); log(1 - g(u)) = -log(1 + e^u)
            ll -= r(i) * softplus(-u(i)) + (1.0 - r(i)) * softplus(u(i));
        } else {
            ll += -0.5 * (r(i) - u(i)) * (r(i) - u(i));
        }
    }
    return ll - 0.5 * o.ridge * theta.squaredNorm();
}

inline VectorXd mean_fn(const VectorXd& u, Link link) {
    if (link == Link::identity) return u;
    return u.unaryExpr([](double v) { return sigmoid(v); });
}

inline VectorXd mean_deriv(const VectorXd& u, Link link) {
    if (link == Link::identity) return VectorXd::Ones(u.size());
    return u.unaryExpr([](double v) {
        const double g = sigmoid(v);
        return g * (1.0 - g);
    });
}

}  // namespace detail

/// Gradient of the penalized log-likelihood.
inline VectorXd loglik_gradient(const MatrixXd& X, const VectorXd& r, const VectorXd& theta, const MleOptions& o) {
    const VectorXd resid = r - detail::mean_fn(X * theta, o.link);
    return X.transpose() * resid - o.ridge * theta;
}

inline double penalized_loglik(const MatrixXd& X, const VectorXd& r, const VectorXd& theta, const MleOptions& o) {
    return detail::penalized_loglik(X, r, theta, o);
}

/// Newton ascent with step halving. X holds one context per row.
inline MleResult logistic_mle(const MatrixXd& X, const VectorXd& r, Eigen::Index d, const MleOptions& o = {}) {
    if (X.rows() != r.size()) throw ShapeError("contexts and rewards disagree on n");
    if (X.rows() > 0 && X.cols() != d) throw ShapeError("context dimension mismatch");
    if (o.ridge < 0.0) throw ParameterError("ridge must be non-negative");
    if (o.link == Link::logistic) {
        for (Eigen::Index i = 0; i < r.size(); ++i)
            if (r(i) != 0.0 && r(i) != 1.0) throw DataError("logistic MLE requires binary rewards");
    }
    MleResult res;
    res.mean = VectorXd::Zero(d);
    res.curvature = MatrixXd::Zero(d, d);
    if (X.rows() == 0) {
        res.converged = true;
        return res;
    }

    VectorXd theta = VectorXd::Zero(d);
    double ll = detail::penalized_loglik(X, r, theta, o);
    for (int it = 0; it < o.max_iterations; ++it) {
        const VectorXd grad = loglik_gradient(X, r, theta, o);
        if (grad.lpNorm<Eigen::Infinity>() <= o.grad_tol) {
            res.converged = true;
            break;
        }
        const VectorXd w = detail::mean_deriv(X * theta, o.link);
        MatrixXd info = X.transpose() * w.asDiagonal() * X;
        info.diagonal().array() += o.ridge;
        const Eigen::LDLT<MatrixXd> ldlt(symmetrize(info));
        VectorXd step = ldlt.solve(grad);
        if (ldlt.info() != Eigen::Success || !step.allFinite()) {
            // singular information with no ridge: fall back to a gradient step
            step = grad;
        }
        double scale = 1.0;
        bool improved = false;
        for (int h = 0; h <= o.max_halvings; ++h) {
            const VectorXd cand = theta + scale * step;
            const double cll = detail::penalized_loglik(X, r, cand, o);
            // rounding slack so that steps near the optimum are not rejected
            if (std::isfinite(cll) && cll >= ll - 1e-13 * (1.0 + std::abs(ll))) {
                theta = cand;
                ll = cll;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        res.iterations = it + 1;
        if (!improved) break;
    }
    if (!res.converged && loglik_gradient(X, r, theta, o).lpNorm<Eigen::Infinity>() <= o.grad_tol) res.converged = true;

    res.mean = theta;
    const VectorXd w = detail::mean_deriv(X * theta, o.link);
    res.curvature = symmetrize(X.transpose() * w.asDiagonal() * X);
    return res;
}

/// Per-action MLE and curvature for a logged dataset with binary rewards.
inline LogisticStats logistic_stats(const LoggedDataset& data, std::size_t K, Eigen::Index d, const MleOptions& o = {}) {
    data.validate(K, d);
    std::vector<std::vector<std::size_t>> rows(K);
    for (std::size_t i = 0; i < data.size(); ++i) rows[data.records[i].a].push_back(i);
    LogisticStats out;
    out.means.reserve(K);
    out.curvatures.reserve(K);
    for (std::size_t a = 0; a < K; ++a) {
        MatrixXd X(static_cast<Eigen::Index>(rows[a].size()), d);
        VectorXd r(static_cast<Eigen::Index>(rows[a].size()));
        for (std::size_t j = 0; j < rows[a].size(); ++j) {
            X.row(static_cast<Eigen::Index>(j)) = data.records[rows[a][j]].x.transpose();
            r(static_cast<Eigen::Index>(j)) = data.records[rows[a][j]].r;
        }
        MleResult m = logistic_mle(X, r, d, o);
        out.means.push_back(std::move(m.mean));
        out.curvatures.push_back(std::move(m.curvature));
        out.converged.push_back(m.converged);
        out.counts.push_back(rows[a].size());
    }
    return out;
}

/// Gaussian-approximated sufficient statistics (G_breve, G_breve mu_breve).
inline SufficientStats approximate_stats(const LogisticStats& ls) {
    SufficientStats s;
    for (std::size_t a = 0; a < ls.means.size(); ++a) {
        s.G.push_back(ls.curvatures[a]);
        s.B.push_back(ls.curvatures[a] * ls.means[a]);
        s.N.push_back(ls.counts[a]);
    }
    return s;
}

inline PosteriorState structured_update_logistic(const StructuredPrior& prior, const LogisticStats& ls) {
    return structured_posterior(prior, approximate_stats(ls));
}

enum class ProbitCorrection {
    norm,     ///< sqrt(1 + pi/8 |x|_Sigma)
    variance  ///< sqrt(1 + pi/8 |x|_Sigma^2)
};

/// Approximate posterior mean of g(x' theta) for theta ~ N(mu_hat_a, Sigma_hat_a).
inline double logistic_reward_estimate(const VectorXd& x, ActionId a, const ActionPosteriors& post,
                                       ProbitCorrection form = ProbitCorrection::variance) {
    const double m = reward_estimate(x, a, post);
    const double v = reward_uncertainty(x, a, post);
    const double u = form == ProbitCorrection::variance ? v : std::sqrt(v);
    const double p = sigmoid(m / std::sqrt(1.0 + std::numbers::pi / 8.0 * u));
    // keep strictly inside (0, 1)
    constexpr double eps = 1e-15;
    return std::clamp(p, eps, 1.0 - eps);
}

}  // namespace sdm
