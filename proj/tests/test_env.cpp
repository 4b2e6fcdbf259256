#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sdm/env.hpp"

using namespace sdm;
using Catch::Approx;
using oracle::max_abs_diff;

TEST_CASE("sample_instance") {
    Rng rng(1);
    SECTION("vanishing covariances pin theta to W mu") {
        std::vector<MatrixXd> w{uniform_matrix(3, 2, -1, 1, rng), uniform_matrix(3, 2, -1, 1, rng)};
        const MatrixXd tiny2 = 1e-9 * MatrixXd::Identity(2, 2), tiny3 = 1e-9 * MatrixXd::Identity(3, 3);
        StructuredPrior p(VectorXd::Ones(2), tiny2, w, {tiny3, tiny3}, 1.0);
        const auto inst = sample_instance(p, RewardKind::linear_gaussian, rng);
        for (std::size_t a = 0; a < 2; ++a)
            CHECK(max_abs_diff(inst.theta.row(a).transpose(), w[a] * VectorXd::Ones(2)) < 1e-3);
    }
    SECTION("moments match the marginal prior") {
        const auto p = oracle::random_prior(2, 2, 2, rng);
        const auto flat = marginalize_structured(p);
        const int N = 10000;
        for (std::size_t a = 0; a < 2; ++a) {
            MatrixXd draws(N, 2);
            Rng r2(100 + a);
            for (int i = 0; i < N; ++i) draws.row(i) = sample_instance(p, RewardKind::linear_gaussian, r2).theta.row(a);
            const VectorXd m = draws.colwise().mean().transpose();
            const MatrixXd c = draws.rowwise() - m.transpose();
            const MatrixXd cov = c.transpose() * c / (N - 1);
            for (int j = 0; j < 2; ++j) {
                CHECK(std::abs(m(j) - flat.mean(a)(j)) <= 3 * std::sqrt(flat.cov(a)(j, j) / N));
                const double s = flat.cov(a)(j, j);
                CHECK(std::abs(cov(j, j) - s) <= 3 * std::sqrt(2 * s * s / N));
            }
        }
    }
    SECTION("deterministic given the seed") {
        const auto p = oracle::random_prior(3, 2, 4, rng);
        Rng a = derive_rng(5, 2, stream::kInstance), b = derive_rng(5, 2, stream::kInstance);
        const auto i1 = sample_instance(p, RewardKind::linear_gaussian, a);
        const auto i2 = sample_instance(p, RewardKind::linear_gaussian, b);
        CHECK(i1.theta == i2.theta);
        CHECK(i1.psi == i2.psi);
    }
}

TEST_CASE("generate_log") {
    Rng rng(2);
    const auto p = synthetic_prior(3, 2, 10, rng);
    const auto inst = sample_instance(p, RewardKind::linear_gaussian, rng);
    const Policy uniform = Policy::uniform(10);
    CHECK(generate_log(inst, uniform, 0, 1.0, rng).empty());

    const auto exact = generate_log(inst, uniform, 50, 0.0, rng);
    for (const auto& r : exact.records) CHECK(r.r == inst.theta.row(r.a).dot(r.x));

    const std::size_t n = 10000;
    const auto big = generate_log(inst, uniform, n, 1.0, rng);
    std::vector<double> counts(10, 0.0);
    for (const auto& r : big.records) counts[r.a] += 1;
    for (double c : counts) CHECK(std::abs(c - n / 10.0) <= 4 * std::sqrt(n / 10.0));

    const Policy eg = Policy::epsilon_greedy(std::make_shared<LinearRewardModel>(inst.theta), 0.3);
    const auto logged = generate_log(inst, eg, 200, 1.0, rng);
    for (const auto& r : logged.records) {
        CHECK(r.p0 == eg.propensity(r.x, r.a));
        CHECK(r.x.cwiseAbs().maxCoeff() <= 1.0);
        CHECK(r.x.norm() <= std::sqrt(3.0));
    }

    Rng a = derive_rng(9, 1, stream::kLog), b = derive_rng(9, 1, stream::kLog);
    const auto l1 = generate_log(inst, eg, 30, 1.0, a);
    const auto l2 = generate_log(inst, eg, 30, 1.0, b);
    for (std::size_t i = 0; i < 30; ++i) {
        CHECK(l1.records[i].x == l2.records[i].x);
        CHECK(l1.records[i].a == l2.records[i].a);
        CHECK(l1.records[i].r == l2.records[i].r);
    }

    ProblemInstance bern = inst;
    bern.reward_kind = RewardKind::bernoulli_logistic;
    for (const auto& r : generate_log(bern, uniform, 100, 1.0, rng).records) CHECK((r.r == 0.0 || r.r == 1.0));
}

TEST_CASE("true value and optimal actions") {
    Rng rng(3);
    SECTION("single action is the mean linear reward") {
        ProblemInstance inst;
        inst.theta = MatrixXd(1, 2);
        inst.theta << 0.5, -1.0;
        std::vector<VectorXd> pool{VectorXd::Constant(2, 1.0), VectorXd::Constant(2, -3.0)};
        inst.contexts = ContextDistribution::finite_pool(pool);
        CHECK(true_value(inst, Policy::uniform(1), 0, rng) == Approx(0.5 * (-0.5 + 1.5)));
        inst.contexts = ContextDistribution::uniform_cube(2);
        // E[x] = 0 on the cube
        CHECK(std::abs(true_value(inst, Policy::uniform(1), 100000, rng)) < 0.02);
    }
    SECTION("two-context pool with a deterministic policy") {
        ProblemInstance inst;
        inst.theta = MatrixXd(2, 1);
        inst.theta << 1.0, -1.0;
        inst.contexts = ContextDistribution::finite_pool({VectorXd::Constant(1, 2.0), VectorXd::Constant(1, -1.0)});
        const Policy always0 = Policy::greedy(std::make_shared<LinearRewardModel>(MatrixXd::Constant(2, 1, 0.0)));
        CHECK(true_value(inst, always0, 0, rng) == Approx(0.5 * (2.0 - 1.0)));
        CHECK(true_value(inst, optimal_policy(inst), 0, rng) == Approx(0.5 * (2.0 + 1.0)));
    }
    SECTION("optimal policy dominates random policies") {
        const auto p = synthetic_prior(3, 3, 6, rng);
        const auto inst = sample_instance(p, RewardKind::linear_gaussian, rng);
        const MatrixXd ctx = evaluation_contexts(inst.contexts, 5000, rng);
        const double best = value_on(inst, optimal_policy(inst), ctx);
        for (int i = 0; i < 10; ++i) {
            const Policy pi = Policy::softmax(uniform_matrix(6, 3, -3, 3, rng));
            CHECK(value_on(inst, pi, ctx) <= best + 1e-12);
        }
    }
    SECTION("optimal action") {
        ProblemInstance inst;
        inst.theta = MatrixXd(2, 1);
        inst.theta << 0.5, 0.3;
        CHECK(optimal_action(inst, VectorXd::Ones(1)) == 0);
        inst.theta << 0.4, 0.4;
        CHECK(optimal_action(inst, VectorXd::Ones(1)) == 0);
        inst.theta = uniform_matrix(100, 2, -1, 1, rng);
        const VectorXd x = uniform_matrix(2, 1, -1, 1, rng);
        std::size_t best = 0;
        for (Eigen::Index a = 1; a < 100; ++a)
            if (inst.theta.row(a).dot(x) > inst.theta.row(best).dot(x)) best = a;
        CHECK(optimal_action(inst, x) == best);
    }
}

TEST_CASE("perturb_prior") {
    Rng rng(4);
    const auto p = oracle::random_prior(3, 2, 3, rng);
    SECTION("zero width and zero shift leave the prior unchanged") {
        const auto q = perturb_prior(p, 0.0, rng, 0.0);
        CHECK(q.latent_mean() == p.latent_mean());
        CHECK(q.latent_cov() == p.latent_cov());
        for (std::size_t a = 0; a < 3; ++a) {
            CHECK(q.mixing(a) == p.mixing(a));
            CHECK(q.action_cov(a) == p.action_cov(a));
        }
    }
    SECTION("covariances stay positive definite") {
        for (double v : {-3.0, -1.0, 0.0, 0.5, 2.0}) {
            const auto q = perturb_prior(p, v, rng);
            CHECK(min_eigenvalue(q.latent_cov()) >= 1e-6 * (1 - 1e-9));
            for (std::size_t a = 0; a < 3; ++a) {
                CHECK(min_eigenvalue(q.action_cov(a)) >= 1e-6 * (1 - 1e-9));
                CHECK(asymmetry(q.action_cov(a)) <= 1e-12);
            }
        }
    }
    SECTION("mean shift is v + width / 2") {
        const double v = 1.0;
        const int N = 4000;
        double s = 0.0;
        for (int i = 0; i < N; ++i) s += (perturb_prior(p, v, rng).latent_mean() - p.latent_mean()).sum();
        // two entries per draw, each with variance 1/48
        const double se = std::sqrt(1.0 / 48.0 / (2.0 * N));
        CHECK(std::abs(s / (2.0 * N) - 1.25) <= 3 * se);
    }
}

TEST_CASE("posterior means average to the prior mean") {
    Rng rng(5);
    const auto p = synthetic_prior(2, 2, 3, rng);
    const Policy uniform = Policy::uniform(3);
    const int R = 200;
    std::vector<std::vector<double>> vals(3 * 2);
    for (int r = 0; r < R; ++r) {
        Rng ri = derive_rng(11, r, stream::kInstance);
        const auto inst = sample_instance(p, RewardKind::linear_gaussian, ri);
        const auto data = generate_log(inst, uniform, 30, p.noise_sd(), ri);
        const auto post = structured_posterior(p, data).actions;
        for (std::size_t a = 0; a < 3; ++a)
            for (int j = 0; j < 2; ++j) vals[a * 2 + j].push_back(post.means[a](j));
    }
    for (std::size_t a = 0; a < 3; ++a) {
        const VectorXd m = p.mixing(a) * p.latent_mean();
        for (int j = 0; j < 2; ++j) {
            const auto& v = vals[a * 2 + j];
            CHECK(std::abs(mean_of(v) - m(j)) <= 3 * std_error_of(v));
        }
    }
}

TEST_CASE("orthogonal prior") {
    Rng rng(6);
    const auto p = orthogonal_prior(3, 4, rng, 0.5, 2.0);
    for (std::size_t a = 0; a < 4; ++a)
        CHECK(max_abs_diff(p.mixing(a).transpose() * p.mixing(a), MatrixXd::Identity(3, 3)) < 1e-12);
    CHECK(p.action_cov(0)(0, 0) == Approx(0.25));
    CHECK(p.latent_cov()(1, 1) == Approx(4.0));
}
