#pragma once

// Closed-form quantities from the suboptimality analysis: the Gaussian-norm
// radius alpha(d, delta) and the explicit, n-dependent bound on the Bayes
// suboptimality of the greedy policy.

#include <cmath>
#include <functional>
#include <optional>
#include <span>

#include "sdm/core.hpp"

namespace sdm {

/// alpha(d, delta) = sqrt(d + 2 sqrt(d log(1/delta)) + 2 log(1/delta)).
/// P(|Z| <= alpha) >= 1 - delta for Z ~ N(0, I_d). delta = 1 gives sqrt(d).
inline double alpha_radius(Eigen::Index d, double delta) {
    if (d < 1) throw ParameterError("alpha_radius: d must be positive");
    if (!(delta > 0.0 && delta <= 1.0)) throw ParameterError("alpha_radius: delta must lie in (0, 1]");
    const double dd = static_cast<double>(d);
    const double l = std::log(1.0 / delta);
    return std::sqrt(dd + 2.0 * std::sqrt(dd * l) + 2.0 * l);
}

/// Constants of the explicit bound. Contexts are assumed to satisfy |x| <= 1,
/// Sigma_a = sigma0^2 I, Sigma = tau^2 I and normalized mixing matrices.
struct ExplicitBoundParams {
    std::size_t n = 0;
    Eigen::Index d = 1;
    double g = 0.0;       ///< smallest eigenvalue of E[x x']
    double h = 1.0;       ///< fourth-moment constant
    double sigma = 1.0;   ///< reward noise sd
    double sigma0 = 1.0;  ///< action covariance scale (sd)
    double tau = 1.0;     ///< latent covariance scale (sd)
};

/// alpha_x = floor(p n / 2) - 7 h sqrt(floor(p n / 2) (d + 2 ln n)) for logging
/// mass p = pi_0(pi_*(x) | x) on the optimal action.
inline double explicit_alpha(double mass, const ExplicitBoundParams& p) {
    const double n = static_cast<double>(p.n);
    const double m = std::floor(mass * n / 2.0);
    return m - 7.0 * p.h * std::sqrt(m * (static_cast<double>(p.d) + 2.0 * std::log(n)));
}

/// Evaluates the explicit bound with the expectation over X replaced by the
/// empirical mean over `masses`. Returns nullopt (not applicable) when any
/// alpha_x <= 0.
inline std::optional<double> explicit_bound(const ExplicitBoundParams& p, std::span<const double> masses) {
    if (!(p.g > 0.0)) throw ParameterError("explicit_bound: g must be positive");
    if (!(p.h >= 1.0)) throw ParameterError("explicit_bound: h must be at least 1");
    if (!(p.sigma > 0.0 && p.sigma0 > 0.0 && p.tau > 0.0)) throw ParameterError("explicit_bound: scales must be positive");
    if (p.n < 1 || p.d < 1) throw ParameterError("explicit_bound: n and d must be positive");
    if (masses.empty()) throw ParameterError("explicit_bound: at least one mass sample is required");
    const double d = static_cast<double>(p.d);
    const double n = static_cast<double>(p.n);
    const double s2 = p.sigma * p.sigma;
    const double s02 = p.sigma0 * p.sigma0;
    const double t2 = p.tau * p.tau;
    CompensatedSum acc;
    for (double mass : masses) {
        if (!(mass > 0.0 && mass <= 1.0)) throw ParameterError("explicit_bound: masses must lie in (0, 1]");
        const double ax = explicit_alpha(mass, p);
        if (!(ax > 0.0)) return std::nullopt;
        const double denom = p.g * ax / s2 + 1.0 / s02;
        acc.add(d / denom + t2 * d / (s02 * s02 * denom * denom) + (s02 + t2) * d * std::exp(-n * mass * mass / 2.0));
    }
    const double expectation = acc.value() / static_cast<double>(masses.size());
    return 2.0 * std::sqrt(expectation + 2.0 * d * (s02 + t2) / n);
}

/// Smallest n (searched by doubling then bisection up to `n_max`) at which every
/// alpha_x is positive, or nullopt if none exists below n_max.
inline std::optional<std::size_t> explicit_threshold(ExplicitBoundParams p, std::span<const double> masses,
                                                     std::size_t n_max = std::size_t{1} << 40) {
    auto ok = [&](std::size_t n) {
        p.n = n;
        for (double m : masses)
            if (!(explicit_alpha(m, p) > 0.0)) return false;
        return true;
    };
    std::size_t hi = 2;
    while (hi < n_max && !ok(hi)) hi *= 2;
    if (!ok(hi)) return std::nullopt;
    std::size_t lo = hi / 2;
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        (ok(mid) ? hi : lo) = mid;
    }
    return hi;
}

/// h = max over random unit directions v of sqrt(E[(v'x)^4]) / E[(v'x)^2], with
/// both moments estimated from `samples` (one context per row), scaled by
/// `safety`. Also returns the empirical second-moment matrix.
struct MomentEstimate {
    double h = 1.0;
    double g = 0.0;
    MatrixXd second_moment;
};

inline MomentEstimate estimate_moments(const MatrixXd& samples, std::size_t directions, Rng& rng, double safety = 1.1) {
    if (samples.rows() < 2) throw ParameterError("estimate_moments: need at least two samples");
    const Eigen::Index d = samples.cols();
    MomentEstimate out;
    out.second_moment = symmetrize(samples.transpose() * samples / static_cast<double>(samples.rows()));
    out.g = min_eigenvalue(out.second_moment);
    // E[(v'x)^4] = (v (x) v)' M4 (v (x) v) with M4 = E[vec(xx') vec(xx')']
    MatrixXd outer(samples.rows(), d * d);
    for (Eigen::Index i = 0; i < samples.rows(); ++i)
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b) outer(i, a * d + b) = samples(i, a) * samples(i, b);
    const MatrixXd m4 = outer.transpose() * outer / static_cast<double>(samples.rows());
    double best = 1.0;
    VectorXd vv(d * d);
    for (std::size_t k = 0; k < directions; ++k) {
        VectorXd v = standard_normal(d, rng);
        v.normalize();
        for (Eigen::Index a = 0; a < d; ++a)
            for (Eigen::Index b = 0; b < d; ++b) vv(a * d + b) = v(a) * v(b);
        const double m2 = v.dot(out.second_moment * v);
        const double q4 = vv.dot(m4 * vv);
        if (m2 > 0.0 && q4 > 0.0) best = std::max(best, std::sqrt(q4) / m2);
    }
    out.h = best * safety;
    return out;
}

}  // namespace sdm
