#include <catch_amalgamated.hpp>

#include <vector>

#include "oracles.hpp"
#include "sdm/policies.hpp"

using namespace sdm;
using Catch::Approx;

namespace {

// Constant reward model that ignores the context.
class FixedScores final : public RewardModel {
public:
    explicit FixedScores(VectorXd s) : s_(std::move(s)) {}
    std::size_t action_count() const override { return static_cast<std::size_t>(s_.size()); }
    VectorXd predict_all(const VectorXd&) const override { return s_; }

private:
    VectorXd s_;
};

RewardModelPtr fixed(std::initializer_list<double> v) {
    VectorXd s(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) s(i++) = x;
    return std::make_shared<FixedScores>(s);
}

std::vector<double> frequencies(const Policy& pi, const VectorXd& x, int draws, Rng& rng) {
    std::vector<double> f(pi.action_count(), 0.0);
    for (int i = 0; i < draws; ++i) f[pi.sample(x, rng)] += 1.0 / draws;
    return f;
}

}  // namespace

TEST_CASE("greedy action") {
    const VectorXd x = VectorXd::Ones(2);
    CHECK(greedy_action(x, *fixed({0.5, 0.3})) == 0);
    CHECK(greedy_action(x, *fixed({0.4, 0.4})) == 0);

    Rng rng(1);
    const VectorXd s = uniform_matrix(100, 1, -1, 1, rng);
    std::size_t best = 0;
    for (Eigen::Index a = 1; a < s.size(); ++a)
        if (s(a) > s(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(a);
    CHECK(greedy_action(x, FixedScores(s)) == best);
    CHECK(greedy_action(x, FixedScores(VectorXd(s.array() + 7.5))) == best);
}

TEST_CASE("pessimistic action") {
    Rng rng(2);
    const int d = 3;
    const VectorXd x = uniform_matrix(d, 1, -1, 1, rng);
    SECTION("isotropic equal covariances agree with greedy") {
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<VectorXd> means;
            std::vector<MatrixXd> covs;
            for (int a = 0; a < 8; ++a) {
                means.push_back(uniform_matrix(d, 1, -1, 1, rng));
                covs.push_back(0.7 * MatrixXd::Identity(d, d));
            }
            const ActionPosteriors post{means, covs};
            CHECK(pessimistic_action(x, post, 0.1) == greedy_action(x, *LinearRewardModel::from_posterior(post)));
        }
    }
    SECTION("smaller uncertainty wins when means tie") {
        const ActionPosteriors post{{VectorXd::Ones(d), VectorXd::Ones(d)},
                                    {0.1 * MatrixXd::Identity(d, d), MatrixXd::Identity(d, d)}};
        CHECK(pessimistic_action(x, post, 0.3) == 0);
        const ActionPosteriors swapped{{VectorXd::Ones(d), VectorXd::Ones(d)},
                                       {MatrixXd::Identity(d, d), 0.1 * MatrixXd::Identity(d, d)}};
        CHECK(pessimistic_action(x, swapped, 0.3) == 1);
    }
    SECTION("penalty coefficient tends to sqrt(d)") {
        // x = e1, means 0 and 1.74, variances 0 and 1: score of action 1 is 1.74 - alpha(3, delta)
        const ActionPosteriors post{{VectorXd::Zero(d), 1.74 * VectorXd::Unit(d, 0)},
                                    {1e-12 * MatrixXd::Identity(d, d), MatrixXd::Identity(d, d)}};
        CHECK(pessimistic_action(VectorXd::Unit(d, 0), post, 1.0 - 1e-9) == 1);
        CHECK(pessimistic_action(VectorXd::Unit(d, 0), post, 0.5) == 0);
    }
    SECTION("delta must be in (0, 1)") {
        const ActionPosteriors post{{VectorXd::Zero(d)}, {MatrixXd::Identity(d, d)}};
        CHECK_THROWS_AS(pessimistic_action(x, post, 0.0), ParameterError);
        CHECK_THROWS_AS(Policy::pessimistic(post, 1.0), ParameterError);
    }
}

TEST_CASE("sampling matches propensities") {
    Rng rng(3);
    const VectorXd x = VectorXd::Ones(2);
    SECTION("uniform") {
        const Policy pi = Policy::uniform(4);
        const auto f = frequencies(pi, x, 100000, rng);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(std::abs(f[a] - 0.25) < 0.01);
            CHECK(propensity(pi, x, a) == 0.25);
        }
    }
    SECTION("epsilon zero is greedy") {
        const Policy pi = Policy::epsilon_greedy(fixed({0.1, 0.9, 0.3}), 0.0);
        for (int i = 0; i < 100; ++i) CHECK(sample_action(pi, x, rng) == 1);
        CHECK(propensity(pi, x, 1) == 1.0);
        CHECK(propensity(pi, x, 0) == 0.0);
    }
    SECTION("epsilon one is uniform") {
        const Policy pi = Policy::epsilon_greedy(fixed({0.1, 0.9, 0.3}), 1.0);
        const auto f = frequencies(pi, x, 100000, rng);
        for (std::size_t a = 0; a < 3; ++a) {
            CHECK(propensity(pi, x, a) == Approx(1.0 / 3.0));
            CHECK(std::abs(f[a] - 1.0 / 3.0) < 0.01);
        }
    }
    SECTION("epsilon one half") {
        const Policy pi = Policy::epsilon_greedy(fixed({0.1, 0.9, 0.3, 0.0}), 0.5);
        CHECK(propensity(pi, x, 1) == Approx(0.5 + 0.5 / 4));
        CHECK(propensity(pi, x, 0) == Approx(0.5 / 4));
        const auto f = frequencies(pi, x, 100000, rng);
        for (std::size_t a = 0; a < 4; ++a) CHECK(std::abs(f[a] - propensity(pi, x, a)) < 0.01);
    }
    SECTION("softmax") {
        MatrixXd params(3, 2);
        params << 1.0, 0.0, 0.0, 1.0, -1.0, 0.5;
        const Policy pi = Policy::softmax(params, 0.7);
        const auto f = frequencies(pi, x, 100000, rng);
        for (std::size_t a = 0; a < 3; ++a) CHECK(std::abs(f[a] - propensity(pi, x, a)) < 0.01);
    }
}

TEST_CASE("every policy puts unit mass on the actions") {
    Rng rng(5);
    const int d = 3, K = 7;
    const auto prior = oracle::random_prior(d, 2, K, rng);
    const auto post = structured_posterior(prior, oracle::random_dataset(K, d, 40, rng)).actions;
    const auto model = LinearRewardModel::from_posterior(post);
    std::vector<Policy> policies{Policy::greedy(model), Policy::pessimistic(post, 0.1),
                                 Policy::epsilon_greedy(model, 0.3), Policy::uniform(K),
                                 Policy::softmax(uniform_matrix(K, d, -3, 3, rng), 0.5)};
    for (int i = 0; i < 50; ++i) {
        const VectorXd x = uniform_matrix(d, 1, -1, 1, rng);
        for (const Policy& pi : policies) {
            const VectorXd p = pi.probabilities(x);
            CHECK(std::abs(p.sum() - 1.0) <= 1e-9);
            CHECK(p.minCoeff() >= 0.0);
            if (pi.is_deterministic()) CHECK(p(static_cast<Eigen::Index>(pi.decide(x))) == 1.0);
        }
    }
}

TEST_CASE("softmax is stable for large logits") {
    MatrixXd params(2, 1);
    params << 1000.0, -1000.0;
    const Policy pi = Policy::softmax(params);
    const VectorXd p = pi.probabilities(VectorXd::Ones(1));
    CHECK(p.allFinite());
    CHECK(p(0) == 1.0);
}
