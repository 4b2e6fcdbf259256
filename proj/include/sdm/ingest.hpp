#pragma once

// Priors and environments built from ratings data: CSV ingestion, watch-ratio
// preprocessing, alternating least squares, Gaussian mixtures and the
// mixed-effect prior construction.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sdm/clustering.hpp"
#include "sdm/core.hpp"
#include "sdm/model.hpp"

namespace sdm {

/// Dense user x item matrix with an observation mask. Ids are the original
/// integer ids, sorted; row u corresponds to user_ids[u].
struct RatingsMatrix {
    MatrixXd values;
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> observed;
    std::vector<long long> user_ids;
    std::vector<long long> item_ids;

    Eigen::Index user_count() const { return values.rows(); }
    Eigen::Index item_count() const { return values.cols(); }
    std::size_t observed_count() const { return static_cast<std::size_t>(observed.count()); }

    static RatingsMatrix dense(MatrixXd v) {
        RatingsMatrix m;
        m.observed.setConstant(v.rows(), v.cols(), true);
        for (Eigen::Index u = 0; u < v.rows(); ++u) m.user_ids.push_back(u);
        for (Eigen::Index i = 0; i < v.cols(); ++i) m.item_ids.push_back(i);
        m.values = std::move(v);
        return m;
    }
};

namespace detail {
inline std::string trim_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

inline long long parse_id(const std::string& tok, std::size_t line) {
    std::size_t used = 0;
    long long v = 0;
    try {
        v = std::stoll(tok, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (tok.empty() || used != tok.size())
        throw DataError("line " + std::to_string(line) + ": invalid integer id '" + tok + "'");
    return v;
}

inline double parse_value(const std::string& tok, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (tok.empty() || end != tok.c_str() + tok.size())
        throw DataError("line " + std::to_string(line) + ": invalid value '" + tok + "'");
    if (!std::isfinite(v)) throw DataError("line " + std::to_string(line) + ": non-finite value '" + tok + "'");
    return v;
}
}  // namespace detail

/// Parses `user_id,item_id,value` CSV (header required).
inline RatingsMatrix load_ratings(std::istream& in, const std::string& source = "ratings") {
    std::string line;
    if (!std::getline(in, line)) throw DataError(source + ": empty file");
    if (detail::trim_cr(line) != "user_id,item_id,value")
        throw DataError(source + ": line 1: expected header 'user_id,item_id,value'");
    struct Entry {
        long long u, i;
        double v;
    };
    std::vector<Entry> entries;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim_cr(line);
        if (line.empty()) continue;
        std::vector<std::string> tok;
        std::stringstream ss(line);
        std::string t;
        while (std::getline(ss, t, ',')) tok.push_back(t);
        if (!line.empty() && line.back() == ',') tok.emplace_back();
        if (tok.size() != 3)
            throw DataError(source + ": line " + std::to_string(lineno) + ": expected 3 fields, got " +
                            std::to_string(tok.size()));
        try {
            entries.push_back({detail::parse_id(tok[0], lineno), detail::parse_id(tok[1], lineno),
                               detail::parse_value(tok[2], lineno)});
        } catch (const DataError& e) {
            throw DataError(source + ": " + e.what());
        }
    }
    if (entries.empty()) throw DataError(source + ": no ratings");
    std::map<long long, Eigen::Index> users;
    std::map<long long, Eigen::Index> items;
    for (const Entry& e : entries) {
        users.emplace(e.u, 0);
        items.emplace(e.i, 0);
    }
    RatingsMatrix m;
    for (auto& [id, idx] : users) {
        idx = static_cast<Eigen::Index>(m.user_ids.size());
        m.user_ids.push_back(id);
    }
    for (auto& [id, idx] : items) {
        idx = static_cast<Eigen::Index>(m.item_ids.size());
        m.item_ids.push_back(id);
    }
    m.values.setZero(static_cast<Eigen::Index>(users.size()), static_cast<Eigen::Index>(items.size()));
    m.observed.setConstant(m.values.rows(), m.values.cols(), false);
    for (const Entry& e : entries) {
        const Eigen::Index u = users[e.u];
        const Eigen::Index i = items[e.i];
        if (m.observed(u, i))
            throw DataError(source + ": duplicate rating for user " + std::to_string(e.u) + ", item " +
                            std::to_string(e.i));
        m.values(u, i) = e.v;
        m.observed(u, i) = true;
    }
    return m;
}

inline RatingsMatrix load_ratings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ratings file " + path);
    return load_ratings(in, path);
}

/// Clips observed entries to clip_max, then divides each user's row by its
/// maximum. Users whose maximum is zero are left unchanged.
inline RatingsMatrix preprocess_kuairec(const RatingsMatrix& m, double clip_max = 10.0) {
    if (!(clip_max > 0.0)) throw ParameterError("clip maximum must be positive");
    RatingsMatrix out = m;
    for (Eigen::Index u = 0; u < out.user_count(); ++u) {
        double mx = 0.0;
        for (Eigen::Index i = 0; i < out.item_count(); ++i) {
            if (!out.observed(u, i)) continue;
            if (out.values(u, i) < 0.0)
                throw DataError("negative interaction score for user " + std::to_string(out.user_ids[static_cast<std::size_t>(u)]));
            out.values(u, i) = std::min(out.values(u, i), clip_max);
            mx = std::max(mx, out.values(u, i));
        }
        if (mx <= 0.0) continue;
        for (Eigen::Index i = 0; i < out.item_count(); ++i)
            if (out.observed(u, i)) out.values(u, i) /= mx;
    }
    return out;
}

struct Factorization {
    MatrixXd users;  ///< U x r
    MatrixXd items;  ///< I x r
    std::vector<double> objective;  ///< after initialization, then after each sweep
    bool converged = false;
};

struct AlsOptions {
    int iterations = 100;
    double reg = 1e-2;
    double tol = 1e-6;        ///< relative objective change
    double init_scale = 0.1;
};

inline double als_objective(const RatingsMatrix& m, const MatrixXd& U, const MatrixXd& V, double reg) {
    CompensatedSum s;
    for (Eigen::Index u = 0; u < m.user_count(); ++u)
        for (Eigen::Index i = 0; i < m.item_count(); ++i)
            if (m.observed(u, i)) {
                const double e = m.values(u, i) - U.row(u).dot(V.row(i));
                s.add(e * e);
            }
    return s.value() + reg * (U.squaredNorm() + V.squaredNorm());
}

/// RMSE over observed entries.
inline double reconstruction_rmse(const RatingsMatrix& m, const Factorization& f) {
    const double obj = als_objective(m, f.users, f.items, 0.0);
    return std::sqrt(obj / static_cast<double>(std::max<std::size_t>(m.observed_count(), 1)));
}

namespace detail {
/// Ridge solve for one row: argmin sum_j (y_j - z' f_j)^2 + reg |z|^2 over the rows f_j of F.
inline VectorXd ridge_row(const MatrixXd& F, const VectorXd& y, double reg) {
    MatrixXd A = F.transpose() * F;
    A.diagonal().array() += reg;
    const VectorXd b = F.transpose() * y;
    if (reg > 0.0) return A.llt().solve(b);
    return A.completeOrthogonalDecomposition().solve(b);
}
}  // namespace detail

/// Alternating ridge least squares over the observed entries.
inline Factorization factorize(const RatingsMatrix& m, Eigen::Index rank, Rng& rng, const AlsOptions& o = {}) {
    if (rank < 1) throw ParameterError("factorization rank must be positive");
    if (o.reg < 0.0) throw ParameterError("regularization must be non-negative");
    if (m.observed_count() == 0) throw DataError("ratings matrix has no observed entries");
    const Eigen::Index U = m.user_count();
    const Eigen::Index I = m.item_count();
    Factorization f;
    f.users = o.init_scale * MatrixXd::NullaryExpr(U, rank, [&] { return std::normal_distribution<double>()(rng); });
    f.items = o.init_scale * MatrixXd::NullaryExpr(I, rank, [&] { return std::normal_distribution<double>()(rng); });
    f.objective.push_back(als_objective(m, f.users, f.items, o.reg));

    std::vector<std::vector<Eigen::Index>> by_user(static_cast<std::size_t>(U));
    std::vector<std::vector<Eigen::Index>> by_item(static_cast<std::size_t>(I));
    for (Eigen::Index u = 0; u < U; ++u)
        for (Eigen::Index i = 0; i < I; ++i)
            if (m.observed(u, i)) {
                by_user[static_cast<std::size_t>(u)].push_back(i);
                by_item[static_cast<std::size_t>(i)].push_back(u);
            }

    auto update = [&](MatrixXd& target, const MatrixXd& other, const std::vector<std::vector<Eigen::Index>>& idx,
                      bool rows_are_users) {
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const auto& js = idx[k];
            if (js.empty()) {
                target.row(static_cast<Eigen::Index>(k)).setZero();
                continue;
            }
            MatrixXd F(static_cast<Eigen::Index>(js.size()), rank);
            VectorXd y(static_cast<Eigen::Index>(js.size()));
            for (std::size_t t = 0; t < js.size(); ++t) {
                F.row(static_cast<Eigen::Index>(t)) = other.row(js[t]);
                y(static_cast<Eigen::Index>(t)) = rows_are_users ? m.values(static_cast<Eigen::Index>(k), js[t])
                                                                 : m.values(js[t], static_cast<Eigen::Index>(k));
            }
            target.row(static_cast<Eigen::Index>(k)) = detail::ridge_row(F, y, o.reg).transpose();
        }
    };

    for (int it = 0; it < o.iterations; ++it) {
        update(f.users, f.items, by_user, true);
        update(f.items, f.users, by_item, false);
        const double prev = f.objective.back();
        const double cur = als_objective(m, f.users, f.items, o.reg);
        f.objective.push_back(cur);
        if (std::abs(prev - cur) <= o.tol * std::max(prev, std::numeric_limits<double>::min())) {
            f.converged = true;
            break;
        }
    }
    return f;
}

// ---------------------------------------------------------------------------
// Gaussian mixtures
// ---------------------------------------------------------------------------

struct GaussianMixture {
    VectorXd weights;                 ///< J
    std::vector<VectorXd> means;      ///< J x m
    std::vector<MatrixXd> covs;
    MatrixXd responsibilities;        ///< n x J for the fitting data
    std::vector<double> loglik;       ///< after each E-step
};

namespace detail {
/// log N(x; mean, cov) for every row of X.
inline VectorXd gaussian_logpdf(const MatrixXd& X, const VectorXd& mean, const MatrixXd& cov) {
    const Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw NumericalError("mixture covariance is not positive definite");
    const MatrixXd L = llt.matrixL();
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    const MatrixXd centered = (X.rowwise() - mean.transpose()).transpose();
    const MatrixXd z = L.triangularView<Eigen::Lower>().solve(centered);
    const double c = -0.5 * (static_cast<double>(X.cols()) * std::log(2.0 * 3.14159265358979323846) + logdet);
    return (c - 0.5 * z.colwise().squaredNorm().array()).transpose();
}

/// Per-row log-sum-exp of log weights + log densities; fills normalized responsibilities.
inline double e_step(const MatrixXd& X, const GaussianMixture& g, MatrixXd& resp) {
    const auto J = static_cast<Eigen::Index>(g.means.size());
    MatrixXd logp(X.rows(), J);
    for (Eigen::Index j = 0; j < J; ++j)
        logp.col(j) = gaussian_logpdf(X, g.means[static_cast<std::size_t>(j)], g.covs[static_cast<std::size_t>(j)]).array() +
                      std::log(std::max(g.weights(j), 1e-300));
    resp.resize(X.rows(), J);
    CompensatedSum ll;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double mx = logp.row(i).maxCoeff();
        const double lse = mx + std::log((logp.row(i).array() - mx).exp().sum());
        resp.row(i) = (logp.row(i).array() - lse).exp();
        ll.add(lse);
    }
    return ll.value();
}
}  // namespace detail

/// Log-likelihood and responsibilities of arbitrary points under a fitted mixture.
inline MatrixXd gmm_responsibilities(const GaussianMixture& g, const MatrixXd& X) {
    MatrixXd resp;
    detail::e_step(X, g, resp);
    return resp;
}

/// Full-covariance EM from k-means++ seeds. Covariance eigenvalues are floored at
/// `floor`, which is the constrained maximizer, so the likelihood stays monotone.
inline GaussianMixture fit_gmm(const MatrixXd& X, std::size_t J, int iterations, Rng& rng, double floor = 1e-6,
                               double tol = 1e-10) {
    if (J == 0) throw ParameterError("mixture needs at least one component");
    if (static_cast<Eigen::Index>(J) > X.rows()) throw ParameterError("more mixture components than points");
    if (!X.allFinite()) throw DataError("mixture data is not finite");
    const auto n = static_cast<double>(X.rows());
    GaussianMixture g;
    const VectorXd mean = X.colwise().mean().transpose();
    const MatrixXd centered = X.rowwise() - mean.transpose();
    const MatrixXd pooled = eigen_floor(symmetrize(centered.transpose() * centered / n), floor);
    const auto seeds = kmeanspp_seeds(X, J, rng);
    g.weights = VectorXd::Constant(static_cast<Eigen::Index>(J), 1.0 / static_cast<double>(J));
    for (std::size_t j = 0; j < J; ++j) {
        g.means.push_back(X.row(seeds[j]).transpose());
        g.covs.push_back(pooled);
    }
    MatrixXd resp;
    g.loglik.push_back(detail::e_step(X, g, resp));
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t j = 0; j < J; ++j) {
            const VectorXd r = resp.col(static_cast<Eigen::Index>(j));
            const double nk = r.sum();
            g.weights(static_cast<Eigen::Index>(j)) = nk / n;
            if (nk < 1e-12) continue;  // component collapsed: keep its parameters
            g.means[j] = X.transpose() * r / nk;
            const MatrixXd c = X.rowwise() - g.means[j].transpose();
            g.covs[j] = eigen_floor(symmetrize(c.transpose() * r.asDiagonal() * c / nk), floor);
        }
        g.loglik.push_back(detail::e_step(X, g, resp));
        const double prev = g.loglik[g.loglik.size() - 2];
        if (std::abs(g.loglik.back() - prev) <= tol * std::max(1.0, std::abs(prev))) break;
    }
    g.responsibilities = resp;
    return g;
}

// ---------------------------------------------------------------------------
// Priors from item vectors
// ---------------------------------------------------------------------------

struct MixedEffectPrior {
    std::size_t effect_count = 1;
    MatrixXd weights;  ///< K x J, row a = w_a
    StructuredPrior prior;
};

/// W_a = w_a' (x) I_d, i.e. W_a psi = sum_j w_aj psi_j.
inline MatrixXd kron_mixing(const VectorXd& w, Eigen::Index d) {
    MatrixXd out = MatrixXd::Zero(d, d * w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) out.block(0, j * d, d, d).diagonal().setConstant(w(j));
    return out;
}

struct MixedEffectOptions {
    double noise_sd = 1.0;
    double latent_scale = 1.0;  ///< multiplies the block-diagonal latent covariance
    double action_scale = 1.0;  ///< multiplies eps^2 in Sigma_a
    double floor = 1e-6;
};

/// mu stacks the J cluster means, Sigma is block-diagonal in the cluster
/// covariances, Sigma_a = eps^2 I with eps the RMS residual of the item vectors
/// around their responsibility-weighted cluster mean.
inline MixedEffectPrior build_mixed_effect_prior(const GaussianMixture& g, const MatrixXd& items,
                                                 const MixedEffectOptions& o = {}) {
    const auto J = static_cast<Eigen::Index>(g.means.size());
    if (J == 0) throw ParameterError("mixture has no components");
    const Eigen::Index d = items.cols();
    const MatrixXd resp = gmm_responsibilities(g, items);
    VectorXd mu(d * J);
    MatrixXd cov = MatrixXd::Zero(d * J, d * J);
    for (Eigen::Index j = 0; j < J; ++j) {
        if (g.means[static_cast<std::size_t>(j)].size() != d) throw ShapeError("mixture and item dimensions disagree");
        mu.segment(j * d, d) = g.means[static_cast<std::size_t>(j)];
        cov.block(j * d, j * d, d, d) = o.latent_scale * eigen_floor(g.covs[static_cast<std::size_t>(j)], o.floor);
    }
    std::vector<MatrixXd> mixing;
    CompensatedSum resid;
    for (Eigen::Index a = 0; a < items.rows(); ++a) {
        const VectorXd w = resp.row(a).transpose();
        mixing.push_back(kron_mixing(w, d));
        resid.add((items.row(a).transpose() - mixing.back() * mu).squaredNorm());
    }
    const double eps2 = std::max(resid.value() / static_cast<double>(items.rows() * d), o.floor);
    std::vector<MatrixXd> action_covs(static_cast<std::size_t>(items.rows()),
                                      o.action_scale * eps2 * MatrixXd::Identity(d, d));
    return {static_cast<std::size_t>(J), resp,
            StructuredPrior(std::move(mu), std::move(cov), std::move(mixing), std::move(action_covs), o.noise_sd)};
}

/// Shared N(mean item, diag(per-dimension population variance)) for K actions.
inline NonStructuredPrior build_nonstructured_prior(const MatrixXd& items, std::size_t K, double noise_sd = 1.0,
                                                    double floor = 1e-6) {
    if (items.rows() == 0) throw DataError("no item vectors");
    const VectorXd mean = items.colwise().mean().transpose();
    VectorXd var = (items.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
    var = var.cwiseMax(floor);
    MatrixXd cov = var.asDiagonal();
    return NonStructuredPrior(std::vector<VectorXd>(K, mean), std::vector<MatrixXd>(K, cov), noise_sd);
}

/// CSV `id,v1,...,vr` with one row per id.
inline void write_factors(std::ostream& out, const std::vector<long long>& ids, const MatrixXd& factors) {
    if (static_cast<Eigen::Index>(ids.size()) != factors.rows()) throw ShapeError("ids and factor rows disagree");
    out << "id";
    for (Eigen::Index j = 0; j < factors.cols(); ++j) out << ",v" << (j + 1);
    out << '\n';
    char buf[64];
    for (Eigen::Index i = 0; i < factors.rows(); ++i) {
        out << ids[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < factors.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", factors(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
}

inline void write_factors(const std::string& path, const std::vector<long long>& ids, const MatrixXd& factors) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    write_factors(out, ids, factors);
}

}  // namespace sdm
