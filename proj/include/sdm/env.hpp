#pragma once

// Synthetic bandit environments drawn from a structured prior.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sdm/core.hpp"
#include "sdm/model.hpp"
#include "sdm/policies.hpp"

namespace sdm {

enum class RewardKind { linear_gaussian, bernoulli_logistic };

/// Either uniform on scale * [-1, 1]^d or uniform over a finite list of contexts.
class ContextDistribution {
public:
    static ContextDistribution uniform_cube(Eigen::Index d, double scale = 1.0) {
        if (d < 1) throw ParameterError("context dimension must be positive");
        if (!(scale > 0.0)) throw ParameterError("context scale must be positive");
        ContextDistribution c;
        c.dim_ = d;
        c.scale_ = scale;
        return c;
    }

    static ContextDistribution finite_pool(std::vector<VectorXd> pool) {
        if (pool.empty()) throw ParameterError("context pool must not be empty");
        ContextDistribution c;
        c.dim_ = pool.front().size();
        for (const VectorXd& x : pool)
            if (x.size() != c.dim_) throw ShapeError("context pool entries disagree on dimension");
        c.pool_ = std::make_shared<const std::vector<VectorXd>>(std::move(pool));
        return c;
    }

    bool is_pool() const { return pool_ != nullptr; }
    Eigen::Index dim() const { return dim_; }
    double scale() const { return scale_; }
    const std::vector<VectorXd>& pool() const {
        if (!pool_) throw Error("context distribution is not a finite pool");
        return *pool_;
    }

    VectorXd sample(Rng& rng) const {
        if (pool_) return (*pool_)[std::uniform_int_distribution<std::size_t>(0, pool_->size() - 1)(rng)];
        std::uniform_real_distribution<double> u(-scale_, scale_);
        VectorXd x(dim_);
        for (Eigen::Index j = 0; j < dim_; ++j) x(j) = u(rng);
        return x;
    }

    /// n samples stacked as rows.
    MatrixXd sample_matrix(std::size_t n, Rng& rng) const {
        MatrixXd m(static_cast<Eigen::Index>(n), dim_);
        for (std::size_t i = 0; i < n; ++i) m.row(static_cast<Eigen::Index>(i)) = sample(rng).transpose();
        return m;
    }

private:
    Eigen::Index dim_ = 1;
    double scale_ = 1.0;
    std::shared_ptr<const std::vector<VectorXd>> pool_;
};

struct ProblemInstance {
    MatrixXd theta;  ///< K x d, row a = theta*_a
    VectorXd psi;
    RewardKind reward_kind = RewardKind::linear_gaussian;
    ContextDistribution contexts = ContextDistribution::uniform_cube(1);

    std::size_t action_count() const { return static_cast<std::size_t>(theta.rows()); }
    Eigen::Index dim() const { return theta.cols(); }

    /// r(x, a; theta*) for every action.
    VectorXd mean_rewards(const VectorXd& x) const {
        VectorXd u = theta * x;
        if (reward_kind == RewardKind::bernoulli_logistic) u = u.unaryExpr([](double v) { return sigmoid(v); });
        return u;
    }
    double mean_reward(const VectorXd& x, ActionId a) const {
        const double u = theta.row(static_cast<Eigen::Index>(a)).dot(x);
        return reward_kind == RewardKind::bernoulli_logistic ? sigmoid(u) : u;
    }
};

inline ProblemInstance sample_instance(const StructuredPrior& prior, RewardKind kind, ContextDistribution contexts,
                                       Rng& rng) {
    if (contexts.dim() != prior.dim()) throw ShapeError("context and parameter dimensions disagree");
    ProblemInstance inst;
    inst.reward_kind = kind;
    inst.contexts = std::move(contexts);
    inst.psi = sample_gaussian(prior.latent_mean(), prior.latent_factor(), rng);
    inst.theta.resize(static_cast<Eigen::Index>(prior.action_count()), prior.dim());
    for (std::size_t a = 0; a < prior.action_count(); ++a)
        inst.theta.row(static_cast<Eigen::Index>(a)) =
            sample_gaussian(prior.mixing(a) * inst.psi, prior.action_factor(a), rng).transpose();
    return inst;
}

inline ProblemInstance sample_instance(const StructuredPrior& prior, RewardKind kind, Rng& rng) {
    return sample_instance(prior, kind, ContextDistribution::uniform_cube(prior.dim()), rng);
}

/// Draws n interactions: x ~ contexts, a ~ logging, reward by the instance's kind.
/// The stored propensity is logging.propensity(x, a).
inline LoggedDataset generate_log(const ProblemInstance& inst, const Policy& logging, std::size_t n, double noise_sd,
                                  Rng& rng) {
    if (!(noise_sd >= 0.0)) throw ParameterError("noise sd must be non-negative");
    if (logging.action_count() != inst.action_count()) throw ShapeError("logging policy and instance disagree on K");
    LoggedDataset out;
    out.records.reserve(n);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        Record rec;
        rec.x = inst.contexts.sample(rng);
        const VectorXd probs = logging.probabilities(rec.x);
        // inverse-cdf draw so that the stored propensity is exactly probs(a)
        const double w = u(rng);
        double c = 0.0;
        rec.a = static_cast<ActionId>(probs.size() - 1);
        for (Eigen::Index a = 0; a < probs.size(); ++a) {
            c += probs(a);
            if (w < c) {
                rec.a = static_cast<ActionId>(a);
                break;
            }
        }
        while (probs(static_cast<Eigen::Index>(rec.a)) == 0.0 && rec.a > 0) --rec.a;
        rec.p0 = probs(static_cast<Eigen::Index>(rec.a));
        const double m = inst.mean_reward(rec.x, rec.a);
        if (inst.reward_kind == RewardKind::bernoulli_logistic)
            rec.r = u(rng) < m ? 1.0 : 0.0;
        else
            rec.r = noise_sd == 0.0 ? m : m + noise_sd * z(rng);
        out.records.push_back(std::move(rec));
    }
    return out;
}

/// argmax_a x' theta*_a (identical for both reward kinds).
inline ActionId optimal_action(const ProblemInstance& inst, const VectorXd& x) { return argmax(inst.theta * x); }

inline Policy optimal_policy(const ProblemInstance& inst) {
    return Policy::greedy(std::make_shared<const LinearRewardModel>(inst.theta));
}

/// Value of pi averaged over the rows of `contexts`.
inline double value_on(const ProblemInstance& inst, const Policy& pi, const MatrixXd& contexts) {
    CompensatedSum s;
    for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        const VectorXd x = contexts.row(i).transpose();
        if (pi.is_deterministic())
            s.add(inst.mean_reward(x, pi.decide(x)));
        else
            s.add(pi.probabilities(x).dot(inst.mean_rewards(x)));
    }
    return contexts.rows() == 0 ? 0.0 : s.value() / static_cast<double>(contexts.rows());
}

/// Evaluation contexts: the whole pool for finite pools, otherwise n_mc draws.
inline MatrixXd evaluation_contexts(const ContextDistribution& ctx, std::size_t n_mc, Rng& rng) {
    if (ctx.is_pool()) {
        const auto& pool = ctx.pool();
        MatrixXd m(static_cast<Eigen::Index>(pool.size()), ctx.dim());
        for (std::size_t i = 0; i < pool.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pool[i].transpose();
        return m;
    }
    return ctx.sample_matrix(n_mc, rng);
}

/// V(pi; theta*): exact over a finite pool, Monte Carlo with n_mc contexts otherwise.
inline double true_value(const ProblemInstance& inst, const Policy& pi, std::size_t n_mc, Rng& rng) {
    return value_on(inst, pi, evaluation_contexts(inst.contexts, n_mc, rng));
}

/// Adds Uniform[v, v + width] noise entry-wise to mu, Sigma, W_a and Sigma_a.
/// Covariances are re-symmetrized and their eigenvalues floored at `floor`.
inline StructuredPrior perturb_prior(const StructuredPrior& prior, double v, Rng& rng, double width = 0.5,
                                     double floor = 1e-6) {
    if (!(width >= 0.0)) throw ParameterError("perturbation width must be non-negative");
    auto noise = [&](Eigen::Index r, Eigen::Index c) -> MatrixXd {
        if (width == 0.0) return MatrixXd::Constant(r, c, v);
        return uniform_matrix(r, c, v, v + width, rng);
    };
    auto repair = [&](const MatrixXd& m) { return eigen_floor(symmetrize(m), floor); };
    const Eigen::Index dl = prior.latent_dim();
    const Eigen::Index d = prior.dim();
    VectorXd mu = prior.latent_mean() + noise(dl, 1);
    MatrixXd cov = prior.latent_cov() + noise(dl, dl);
    if (v != 0.0 || width != 0.0) cov = repair(cov);
    std::vector<MatrixXd> mixing;
    std::vector<MatrixXd> action_covs;
    for (std::size_t a = 0; a < prior.action_count(); ++a) {
        mixing.push_back(prior.mixing(a) + noise(d, dl));
        MatrixXd ca = prior.action_cov(a) + noise(d, d);
        if (v != 0.0 || width != 0.0) ca = repair(ca);
        action_covs.push_back(std::move(ca));
    }
    return StructuredPrior(std::move(mu), std::move(cov), std::move(mixing), std::move(action_covs), prior.noise_sd());
}

/// Synthetic prior: mu and W_a uniform on [-1, 1], Sigma = latent_var I, Sigma_a = action_var I.
inline StructuredPrior synthetic_prior(Eigen::Index d, Eigen::Index d_latent, std::size_t K, Rng& rng,
                                       double latent_var = 3.0, double action_var = 1.0, double noise_sd = 1.0) {
    if (d < 1 || d_latent < 1 || K < 1) throw ParameterError("dimensions and K must be positive");
    VectorXd mu = uniform_matrix(d_latent, 1, -1.0, 1.0, rng);
    std::vector<MatrixXd> mixing;
    mixing.reserve(K);
    for (std::size_t a = 0; a < K; ++a) mixing.push_back(uniform_matrix(d, d_latent, -1.0, 1.0, rng));
    return StructuredPrior(std::move(mu), latent_var * MatrixXd::Identity(d_latent, d_latent), std::move(mixing),
                           std::vector<MatrixXd>(K, action_var * MatrixXd::Identity(d, d)), noise_sd);
}

/// Prior satisfying the explicit-bound assumptions: d' = d, W_a orthogonal,
/// Sigma_a = sigma0^2 I, Sigma = tau^2 I.
inline StructuredPrior orthogonal_prior(Eigen::Index d, std::size_t K, Rng& rng, double sigma0 = 1.0, double tau = 1.0,
                                        double noise_sd = 1.0) {
    std::vector<MatrixXd> mixing;
    mixing.reserve(K);
    for (std::size_t a = 0; a < K; ++a) {
        MatrixXd g(d, d);
        for (Eigen::Index j = 0; j < d; ++j) g.col(j) = standard_normal(d, rng);
        mixing.push_back(Eigen::HouseholderQR<MatrixXd>(g).householderQ() * MatrixXd::Identity(d, d));
    }
    return StructuredPrior(VectorXd::Zero(d), tau * tau * MatrixXd::Identity(d, d), std::move(mixing),
                           std::vector<MatrixXd>(K, sigma0 * sigma0 * MatrixXd::Identity(d, d)), noise_sd);
}

struct LoggingSpec {
    enum class Kind { uniform, epsilon_greedy };
    Kind kind = Kind::uniform;
    double epsilon = 1.0;  ///< for epsilon-greedy on theta*
};

inline Policy make_logging_policy(const LoggingSpec& spec, const ProblemInstance& inst) {
    if (spec.kind == LoggingSpec::Kind::uniform) return Policy::uniform(inst.action_count());
    return Policy::epsilon_greedy(std::make_shared<const LinearRewardModel>(inst.theta), spec.epsilon);
}

}  // namespace sdm
