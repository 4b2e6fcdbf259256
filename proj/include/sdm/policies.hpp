#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <utility>
#include <variant>

#include "sdm/bounds.hpp"
#include "sdm/core.hpp"
#include "sdm/logistic.hpp"
#include "sdm/posterior.hpp"

namespace sdm {

/// Reward estimate r_hat(x, a) for every action at once.
class RewardModel {
public:
    virtual ~RewardModel() = default;
    virtual std::size_t action_count() const = 0;
    virtual VectorXd predict_all(const VectorXd& x) const = 0;
    virtual double predict(const VectorXd& x, ActionId a) const { return predict_all(x)(static_cast<Eigen::Index>(a)); }
};

using RewardModelPtr = std::shared_ptr<const RewardModel>;

/// r_hat(x, a) = x' theta_a with theta_a stored as row a of `coefs`.
class LinearRewardModel final : public RewardModel {
public:
    explicit LinearRewardModel(MatrixXd coefs) : coefs_(std::move(coefs)) {
        if (coefs_.rows() == 0) throw ShapeError("linear reward model needs at least one action");
    }

    static std::shared_ptr<const LinearRewardModel> from_posterior(const ActionPosteriors& post) {
        return from_vectors(post.means);
    }

    static std::shared_ptr<const LinearRewardModel> from_vectors(const std::vector<VectorXd>& rows) {
        if (rows.empty()) throw ShapeError("linear reward model needs at least one action");
        MatrixXd c(static_cast<Eigen::Index>(rows.size()), rows.front().size());
        for (std::size_t a = 0; a < rows.size(); ++a) c.row(static_cast<Eigen::Index>(a)) = rows[a].transpose();
        return std::make_shared<const LinearRewardModel>(std::move(c));
    }

    std::size_t action_count() const override { return static_cast<std::size_t>(coefs_.rows()); }
    VectorXd predict_all(const VectorXd& x) const override {
        if (x.size() != coefs_.cols()) throw ShapeError("context dimension mismatch");
        return coefs_ * x;
    }
    double predict(const VectorXd& x, ActionId a) const override {
        return coefs_.row(static_cast<Eigen::Index>(a)).dot(x);
    }
    const MatrixXd& coefs() const { return coefs_; }

private:
    MatrixXd coefs_;
};

/// Sigmoid-Gaussian approximation of E[g(x' theta_a) | S].
class LogisticPosteriorModel final : public RewardModel {
public:
    explicit LogisticPosteriorModel(ActionPosteriors post, ProbitCorrection form = ProbitCorrection::variance)
        : post_(std::move(post)), form_(form) {}

    std::size_t action_count() const override { return post_.action_count(); }
    VectorXd predict_all(const VectorXd& x) const override {
        VectorXd out(static_cast<Eigen::Index>(post_.action_count()));
        for (std::size_t a = 0; a < post_.action_count(); ++a)
            out(static_cast<Eigen::Index>(a)) = logistic_reward_estimate(x, a, post_, form_);
        return out;
    }

private:
    ActionPosteriors post_;
    ProbitCorrection form_;
};

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

struct GreedyPolicy {
    RewardModelPtr model;
};

/// argmax_a x' mu_hat_a - alpha(d, delta) |x|_{Sigma_hat_a}
struct PessimisticPolicy {
    std::shared_ptr<const ActionPosteriors> posterior;
    double delta = 0.1;
};

struct EpsilonGreedyPolicy {
    RewardModelPtr model;
    double epsilon = 0.5;
};

struct UniformPolicy {
    std::size_t actions = 1;
};

/// pi(a | x) proportional to exp(x' theta_a / temperature), theta_a = row a of params.
struct SoftmaxPolicy {
    MatrixXd params;
    double temperature = 1.0;
};

class Policy {
public:
    using Kind = std::variant<GreedyPolicy, PessimisticPolicy, EpsilonGreedyPolicy, UniformPolicy, SoftmaxPolicy>;

    static Policy greedy(RewardModelPtr model) {
        if (!model) throw ParameterError("greedy policy needs a reward model");
        return Policy(GreedyPolicy{std::move(model)});
    }
    static Policy pessimistic(ActionPosteriors post, double delta) {
        if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("pessimism delta must lie in (0, 1)");
        if (post.action_count() == 0) throw ShapeError("pessimistic policy needs at least one action");
        return Policy(PessimisticPolicy{std::make_shared<const ActionPosteriors>(std::move(post)), delta});
    }
    static Policy epsilon_greedy(RewardModelPtr model, double epsilon) {
        if (!model) throw ParameterError("epsilon-greedy policy needs a reward model");
        if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ParameterError("epsilon must lie in [0, 1]");
        return Policy(EpsilonGreedyPolicy{std::move(model), epsilon});
    }
    static Policy uniform(std::size_t K) {
        if (K == 0) throw ParameterError("uniform policy needs at least one action");
        return Policy(UniformPolicy{K});
    }
    static Policy softmax(MatrixXd params, double temperature = 1.0) {
        if (!(temperature > 0.0)) throw ParameterError("softmax temperature must be positive");
        if (params.rows() == 0) throw ShapeError("softmax policy needs at least one action");
        return Policy(SoftmaxPolicy{std::move(params), temperature});
    }

    const Kind& kind() const { return kind_; }

    std::size_t action_count() const {
        return std::visit(
            [](const auto& p) -> std::size_t {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GreedyPolicy> || std::is_same_v<T, EpsilonGreedyPolicy>)
                    return p.model->action_count();
                else if constexpr (std::is_same_v<T, PessimisticPolicy>)
                    return p.posterior->action_count();
                else if constexpr (std::is_same_v<T, UniformPolicy>)
                    return p.actions;
                else
                    return static_cast<std::size_t>(p.params.rows());
            },
            kind_);
    }

    bool is_deterministic() const {
        return std::holds_alternative<GreedyPolicy>(kind_) || std::holds_alternative<PessimisticPolicy>(kind_);
    }

    /// The action a deterministic policy plays at x; for stochastic policies the mode.
    ActionId decide(const VectorXd& x) const {
        return std::visit(
            [&](const auto& p) -> ActionId {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, GreedyPolicy> || std::is_same_v<T, EpsilonGreedyPolicy>)
                    return argmax(p.model->predict_all(x));
                else if constexpr (std::is_same_v<T, PessimisticPolicy>)
                    return pessimistic_choice(x, *p.posterior, p.delta);
                else if constexpr (std::is_same_v<T, UniformPolicy>)
                    return 0;
                else
                    return argmax(p.params * x);
            },
            kind_);
    }

    /// Full action distribution at x; entries are non-negative and sum to 1.
    VectorXd probabilities(const VectorXd& x) const {
        const auto K = static_cast<Eigen::Index>(action_count());
        return std::visit(
            [&](const auto& p) -> VectorXd {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, UniformPolicy>) {
                    return VectorXd::Constant(K, 1.0 / static_cast<double>(K));
                } else if constexpr (std::is_same_v<T, EpsilonGreedyPolicy>) {
                    VectorXd pr = VectorXd::Constant(K, p.epsilon / static_cast<double>(K));
                    pr(static_cast<Eigen::Index>(argmax(p.model->predict_all(x)))) += 1.0 - p.epsilon;
                    return pr;
                } else if constexpr (std::is_same_v<T, SoftmaxPolicy>) {
                    return softmax_probs(p.params, p.temperature, x);
                } else {
                    VectorXd pr = VectorXd::Zero(K);
                    pr(static_cast<Eigen::Index>(decide(x))) = 1.0;
                    return pr;
                }
            },
            kind_);
    }

    double propensity(const VectorXd& x, ActionId a) const {
        if (a >= action_count()) throw DataError("action out of range");
        return probabilities(x)(static_cast<Eigen::Index>(a));
    }

    ActionId sample(const VectorXd& x, Rng& rng) const {
        return std::visit(
            [&](const auto& p) -> ActionId {
                using T = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<T, UniformPolicy>) {
                    return std::uniform_int_distribution<std::size_t>(0, p.actions - 1)(rng);
                } else if constexpr (std::is_same_v<T, EpsilonGreedyPolicy>) {
                    const std::size_t K = p.model->action_count();
                    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p.epsilon)
                        return std::uniform_int_distribution<std::size_t>(0, K - 1)(rng);
                    return argmax(p.model->predict_all(x));
                } else if constexpr (std::is_same_v<T, SoftmaxPolicy>) {
                    const VectorXd pr = softmax_probs(p.params, p.temperature, x);
                    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
                    double c = 0.0;
                    for (Eigen::Index a = 0; a < pr.size(); ++a) {
                        c += pr(a);
                        if (u < c) return static_cast<ActionId>(a);
                    }
                    return static_cast<ActionId>(pr.size() - 1);
                } else {
                    return decide(x);
                }
            },
            kind_);
    }

    static VectorXd softmax_probs(const MatrixXd& params, double temperature, const VectorXd& x) {
        if (x.size() != params.cols()) throw ShapeError("context dimension mismatch");
        VectorXd logits = params * x / temperature;
        logits.array() -= logits.maxCoeff();
        VectorXd e = logits.array().exp();
        return e / e.sum();
    }

    static ActionId pessimistic_choice(const VectorXd& x, const ActionPosteriors& post, double delta) {
        const double alpha = alpha_radius(x.size(), delta);
        VectorXd scores(static_cast<Eigen::Index>(post.action_count()));
        for (std::size_t a = 0; a < post.action_count(); ++a)
            scores(static_cast<Eigen::Index>(a)) =
                reward_estimate(x, a, post) - alpha * std::sqrt(reward_uncertainty(x, a, post));
        return argmax(scores);
    }

private:
    explicit Policy(Kind k) : kind_(std::move(k)) {}
    Kind kind_;
};

inline ActionId greedy_action(const VectorXd& x, const RewardModel& model) { return argmax(model.predict_all(x)); }

inline ActionId pessimistic_action(const VectorXd& x, const ActionPosteriors& post, double delta) {
    if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("pessimism delta must lie in (0, 1)");
    return Policy::pessimistic_choice(x, post, delta);
}

inline ActionId sample_action(const Policy& pi, const VectorXd& x, Rng& rng) { return pi.sample(x, rng); }

inline double propensity(const Policy& pi, const VectorXd& x, ActionId a) { return pi.propensity(x, a); }

}  // namespace sdm
