#pragma once

// Off-policy value estimators (direct method and importance-sampling family) and
// the gradient-ascent wrapper that turns the importance-sampling estimators into
// policy learners over softmax-linear policies.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sdm/clustering.hpp"
#include "sdm/core.hpp"
#include "sdm/model.hpp"
#include "sdm/policies.hpp"

namespace sdm {

struct ValueEstimate {
    double value = 0.0;
    std::string estimator;
    std::size_t n = 0;
    bool degenerate = false;  ///< snIPS with an all-zero weight sum
};

/// Action clusters (for MIPS) and nearest-neighbour orderings (for PC).
class ActionStructure {
public:
    /// `neighbor_order[a]` lists actions by increasing embedding distance from a,
    /// starting with a itself.
    ActionStructure(std::vector<std::size_t> cluster_of, std::vector<std::vector<ActionId>> neighbor_order)
        : cluster_of_(std::move(cluster_of)), order_(std::move(neighbor_order)) {
        if (cluster_of_.empty()) throw ShapeError("action structure needs at least one action");
        if (!order_.empty() && order_.size() != cluster_of_.size())
            throw ShapeError("cluster map and neighbour lists disagree on K");
        clusters_ = *std::max_element(cluster_of_.begin(), cluster_of_.end()) + 1;
        for (std::size_t a = 0; a < order_.size(); ++a)
            if (order_[a].empty() || order_[a].front() != a)
                throw DataError("neighbour list of action " + std::to_string(a) + " must start with the action");
    }

    /// Clusters from k-means over embedding rows; neighbours by Euclidean distance
    /// (ties by action id).
    static ActionStructure from_embeddings(const MatrixXd& embeddings, std::size_t clusters, Rng& rng,
                                           int kmeans_iterations = 50) {
        const auto K = static_cast<std::size_t>(embeddings.rows());
        const std::size_t L = std::min(std::max<std::size_t>(clusters, 1), K);
        KMeansResult km = kmeans(embeddings, L, kmeans_iterations, rng);
        std::vector<std::vector<ActionId>> order(K);
        for (std::size_t a = 0; a < K; ++a) {
            const VectorXd dist = (embeddings.rowwise() - embeddings.row(static_cast<Eigen::Index>(a))).rowwise().squaredNorm();
            std::vector<ActionId> idx(K);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [&](ActionId i, ActionId j) {
                if (i == a) return j != a;
                if (j == a) return false;
                return dist(static_cast<Eigen::Index>(i)) < dist(static_cast<Eigen::Index>(j));
            });
            order[a] = std::move(idx);
        }
        return ActionStructure(std::move(km.assignment), std::move(order));
    }

    std::size_t action_count() const { return cluster_of_.size(); }
    std::size_t cluster_count() const { return clusters_; }
    std::size_t cluster_of(ActionId a) const { return cluster_of_.at(a); }

    /// First k entries of the neighbour ordering of a (a itself included).
    std::span<const ActionId> neighbors(ActionId a, std::size_t k) const {
        if (order_.empty()) throw DataError("action structure has no neighbour lists");
        const auto& o = order_.at(a);
        return {o.data(), std::min(std::max<std::size_t>(k, 1), o.size())};
    }

private:
    std::vector<std::size_t> cluster_of_;
    std::vector<std::vector<ActionId>> order_;
    std::size_t clusters_ = 1;
};

namespace detail {
inline void check_policy(const Policy& pi, const LoggedDataset& data) {
    for (const Record& r : data.records)
        if (r.a >= pi.action_count()) throw DataError("logged action outside the policy's action set");
}
inline double clip_denominator(double p0, double tau) { return std::max(p0, tau); }
}  // namespace detail

/// (1/n) sum_i sum_a pi(a | x_i) r_hat(x_i, a)
inline ValueEstimate dm_value(const Policy& pi, const LoggedDataset& data, const RewardModel& model) {
    ValueEstimate v{0.0, "dm", data.size(), false};
    CompensatedSum s;
    for (const Record& r : data.records) s.add(pi.probabilities(r.x).dot(model.predict_all(r.x)));
    if (!data.empty()) v.value = s.value() / static_cast<double>(data.size());
    return v;
}

inline ValueEstimate ips_value(const Policy& pi, const LoggedDataset& data, double tau = 0.0) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ParameterError("clip tau must lie in [0, 1]");
    detail::check_policy(pi, data);
    ValueEstimate v{0.0, "ips", data.size(), false};
    CompensatedSum s;
    for (const Record& r : data.records) s.add(pi.propensity(r.x, r.a) / detail::clip_denominator(r.p0, tau) * r.r);
    if (!data.empty()) v.value = s.value() / static_cast<double>(data.size());
    return v;
}

inline ValueEstimate snips_value(const Policy& pi, const LoggedDataset& data) {
    detail::check_policy(pi, data);
    ValueEstimate v{0.0, "snips", data.size(), false};
    CompensatedSum num;
    CompensatedSum den;
    for (const Record& r : data.records) {
        const double w = pi.propensity(r.x, r.a) / r.p0;
        num.add(w * r.r);
        den.add(w);
    }
    if (den.value() == 0.0) {
        v.degenerate = true;
        return v;
    }
    v.value = num.value() / den.value();
    return v;
}

/// Doubly robust: clipped IPS on the residuals plus the direct-method term.
inline ValueEstimate dr_value(const Policy& pi, const LoggedDataset& data, const RewardModel& model, double tau = 0.0) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ParameterError("clip tau must lie in [0, 1]");
    detail::check_policy(pi, data);
    ValueEstimate v{0.0, "dr", data.size(), false};
    CompensatedSum s;
    for (const Record& r : data.records) {
        const VectorXd probs = pi.probabilities(r.x);
        const VectorXd rhat = model.predict_all(r.x);
        const auto a = static_cast<Eigen::Index>(r.a);
        s.add(probs(a) / detail::clip_denominator(r.p0, tau) * (r.r - rhat(a)) + probs.dot(rhat));
    }
    if (!data.empty()) v.value = s.value() / static_cast<double>(data.size());
    return v;
}

/// Marginalized IPS: weights are cluster-level probability ratios.
inline ValueEstimate mips_value(const Policy& pi, const Policy& logging, const LoggedDataset& data,
                                const ActionStructure& structure) {
    detail::check_policy(pi, data);
    ValueEstimate v{0.0, "mips", data.size(), false};
    CompensatedSum s;
    for (const Record& r : data.records) {
        const VectorXd p = pi.probabilities(r.x);
        const VectorXd p0 = logging.probabilities(r.x);
        const std::size_t c = structure.cluster_of(r.a);
        double num = 0.0;
        double den = 0.0;
        for (std::size_t b = 0; b < structure.action_count(); ++b) {
            if (structure.cluster_of(b) != c) continue;
            num += p(static_cast<Eigen::Index>(b));
            den += p0(static_cast<Eigen::Index>(b));
        }
        s.add(num / den * r.r);
    }
    if (!data.empty()) v.value = s.value() / static_cast<double>(data.size());
    return v;
}

/// Pooled-neighbourhood IPS over the k nearest actions of each logged action.
inline ValueEstimate pc_value(const Policy& pi, const Policy& logging, const LoggedDataset& data,
                              const ActionStructure& structure, std::size_t k) {
    detail::check_policy(pi, data);
    ValueEstimate v{0.0, "pc", data.size(), false};
    CompensatedSum s;
    for (const Record& r : data.records) {
        const VectorXd p = pi.probabilities(r.x);
        const VectorXd p0 = logging.probabilities(r.x);
        double num = 0.0;
        double den = 0.0;
        for (ActionId b : structure.neighbors(r.a, k)) {
            num += p(static_cast<Eigen::Index>(b));
            den += p0(static_cast<Eigen::Index>(b));
        }
        s.add(num / den * r.r);
    }
    if (!data.empty()) v.value = s.value() / static_cast<double>(data.size());
    return v;
}

/// Per-action ridge regression with unscaled sums: mu_a = (G_a + lambda I)^-1 B_a.
inline std::shared_ptr<const LinearRewardModel> dm_freq_model(const LoggedDataset& data, double ridge, std::size_t K,
                                                              Eigen::Index d) {
    if (!(ridge >= 0.0)) throw ParameterError("ridge must be non-negative");
    data.validate(K, d);
    std::vector<MatrixXd> G(K, MatrixXd::Zero(d, d));
    std::vector<VectorXd> B(K, VectorXd::Zero(d));
    std::vector<std::size_t> N(K, 0);
    for (const Record& r : data.records) {
        G[r.a].noalias() += r.x * r.x.transpose();
        B[r.a].noalias() += r.r * r.x;
        ++N[r.a];
    }
    MatrixXd coefs = MatrixXd::Zero(static_cast<Eigen::Index>(K), d);
    for (std::size_t a = 0; a < K; ++a) {
        if (N[a] == 0) continue;
        MatrixXd A = G[a];
        A.diagonal().array() += ridge;
        const Eigen::LDLT<MatrixXd> ldlt(A);
        VectorXd mu = ldlt.solve(B[a]);
        if (ldlt.info() != Eigen::Success || !mu.allFinite()) {
            // rank-deficient with no ridge: minimum-norm least squares
            mu = A.completeOrthogonalDecomposition().solve(B[a]);
        }
        coefs.row(static_cast<Eigen::Index>(a)) = mu.transpose();
    }
    return std::make_shared<const LinearRewardModel>(std::move(coefs));
}

// ---------------------------------------------------------------------------
// Off-policy learning over softmax-linear policies
// ---------------------------------------------------------------------------

enum class OplObjective { ips, snips, dr, mips, pc };

inline std::string to_string(OplObjective o) {
    switch (o) {
        case OplObjective::ips: return "ips";
        case OplObjective::snips: return "snips";
        case OplObjective::dr: return "dr";
        case OplObjective::mips: return "mips";
        case OplObjective::pc: return "pc";
    }
    return "unknown";
}

struct OplOptions {
    std::size_t steps = 2000;
    double step_size = 0.1;
    double temperature = 1.0;
    double clip = 0.0;          ///< tau for IPS and DR
    std::size_t neighbors = 5;  ///< k for PC
};

/// Every supported objective is linear in the per-record policy vector p_i, or
/// a ratio of two such sums (snIPS):
///     V = (1/n) sum_i C_i . p_i        or        V = (sum_i C_i . p_i) / (sum_i D_i . p_i)
/// The coefficient rows are precomputed once from the data.
class OplProblem {
public:
    OplProblem(OplObjective objective, const LoggedDataset& data, std::size_t K, const Policy* logging,
               const ActionStructure* structure, const RewardModel* model, const OplOptions& opts)
        : objective_(objective), temperature_(opts.temperature) {
        if (data.empty()) throw DataError("off-policy learning needs a non-empty dataset");
        const auto n = static_cast<Eigen::Index>(data.size());
        const Eigen::Index d = data.records.front().x.size();
        data.validate(K, d);
        X_ = data.context_matrix();
        num_ = MatrixXd::Zero(n, static_cast<Eigen::Index>(K));
        if (objective == OplObjective::snips) den_ = MatrixXd::Zero(n, static_cast<Eigen::Index>(K));
        for (Eigen::Index i = 0; i < n; ++i) {
            const Record& r = data.records[static_cast<std::size_t>(i)];
            const auto a = static_cast<Eigen::Index>(r.a);
            switch (objective) {
                case OplObjective::ips: num_(i, a) = r.r / std::max(r.p0, opts.clip); break;
                case OplObjective::snips:
                    num_(i, a) = r.r / r.p0;
                    den_(i, a) = 1.0 / r.p0;
                    break;
                case OplObjective::dr: {
                    if (!model) throw ParameterError("DR objective needs a reward model");
                    const VectorXd rhat = model->predict_all(r.x);
                    num_.row(i) = rhat.transpose();
                    num_(i, a) += (r.r - rhat(a)) / std::max(r.p0, opts.clip);
                    break;
                }
                case OplObjective::mips: {
                    if (!logging || !structure) throw ParameterError("MIPS objective needs the logging policy and clusters");
                    const VectorXd p0 = logging->probabilities(r.x);
                    const std::size_t c = structure->cluster_of(r.a);
                    double mass = 0.0;
                    for (std::size_t b = 0; b < K; ++b)
                        if (structure->cluster_of(b) == c) mass += p0(static_cast<Eigen::Index>(b));
                    for (std::size_t b = 0; b < K; ++b)
                        if (structure->cluster_of(b) == c) num_(i, static_cast<Eigen::Index>(b)) = r.r / mass;
                    break;
                }
                case OplObjective::pc: {
                    if (!logging || !structure) throw ParameterError("PC objective needs the logging policy and neighbours");
                    const VectorXd p0 = logging->probabilities(r.x);
                    const auto nb = structure->neighbors(r.a, opts.neighbors);
                    double mass = 0.0;
                    for (ActionId b : nb) mass += p0(static_cast<Eigen::Index>(b));
                    for (ActionId b : nb) num_(i, static_cast<Eigen::Index>(b)) = r.r / mass;
                    break;
                }
            }
        }
    }

    Eigen::Index action_count() const { return num_.cols(); }
    Eigen::Index dim() const { return X_.cols(); }

    /// Row-wise softmax policy probabilities for all logged contexts.
    MatrixXd probabilities(const MatrixXd& params) const {
        MatrixXd logits = X_ * params.transpose() / temperature_;
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            logits.row(i).array() -= logits.row(i).maxCoeff();
            logits.row(i) = logits.row(i).array().exp();
            logits.row(i) /= logits.row(i).sum();
        }
        return logits;
    }

    double value(const MatrixXd& params) const {
        const MatrixXd P = probabilities(params);
        return value_from(P);
    }

    /// Gradient of value() with respect to the K x d parameter matrix.
    MatrixXd gradient(const MatrixXd& params) const {
        const MatrixXd P = probabilities(params);
        return gradient_from(P);
    }

    double value_from(const MatrixXd& P) const {
        const double n = static_cast<double>(X_.rows());
        const double num = num_.cwiseProduct(P).sum();
        if (objective_ != OplObjective::snips) return num / n;
        const double den = den_.cwiseProduct(P).sum();
        return den == 0.0 ? 0.0 : num / den;
    }

    MatrixXd gradient_from(const MatrixXd& P) const {
        const double n = static_cast<double>(X_.rows());
        const MatrixXd gnum = coef_gradient(num_, P);
        if (objective_ != OplObjective::snips) return gnum / n;
        const MatrixXd gden = coef_gradient(den_, P);
        const double num = num_.cwiseProduct(P).sum();
        const double den = den_.cwiseProduct(P).sum();
        if (den == 0.0) return MatrixXd::Zero(gnum.rows(), gnum.cols());
        return (gnum * den - gden * num) / (den * den);
    }

private:
    /// d/dTheta of sum_i C_i . p_i:  row b = sum_i p_ib (C_ib - C_i . p_i) x_i' / T
    MatrixXd coef_gradient(const MatrixXd& C, const MatrixXd& P) const {
        const VectorXd s = C.cwiseProduct(P).rowwise().sum();
        const MatrixXd A = P.cwiseProduct(C - s.replicate(1, C.cols()));
        return A.transpose() * X_ / temperature_;
    }

    OplObjective objective_;
    double temperature_;
    MatrixXd X_;
    MatrixXd num_;
    MatrixXd den_;
};

struct OplResult {
    Policy policy;
    double best_value = 0.0;
    std::size_t best_step = 0;
};

/// Constant-step gradient ascent from zero parameters (the uniform softmax);
/// returns the best iterate by objective value.
inline OplResult opl_optimize(const OplProblem& problem, const OplOptions& opts) {
    MatrixXd params = MatrixXd::Zero(problem.action_count(), problem.dim());
    MatrixXd best = params;
    MatrixXd P = problem.probabilities(params);
    double best_value = problem.value_from(P);
    std::size_t best_step = 0;
    for (std::size_t step = 1; step <= opts.steps; ++step) {
        const MatrixXd grad = problem.gradient_from(P);
        if (!grad.allFinite())
            throw NumericalError("non-finite gradient in off-policy learning at step " + std::to_string(step) +
                                 " (parameter norm " + std::to_string(params.norm()) + ")");
        params.noalias() += opts.step_size * grad;
        P = problem.probabilities(params);
        const double v = problem.value_from(P);
        if (!std::isfinite(v))
            throw NumericalError("non-finite objective in off-policy learning at step " + std::to_string(step));
        if (v > best_value) {
            best_value = v;
            best = params;
            best_step = step;
        }
    }
    return {Policy::softmax(std::move(best), opts.temperature), best_value, best_step};
}

inline OplResult opl_optimize(OplObjective objective, const LoggedDataset& data, std::size_t K, const Policy* logging,
                              const ActionStructure* structure, const RewardModel* model, const OplOptions& opts) {
    return opl_optimize(OplProblem(objective, data, K, logging, structure, model, opts), opts);
}

}  // namespace sdm
