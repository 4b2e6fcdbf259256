#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "sdm/logistic.hpp"

using namespace sdm;
using Catch::Approx;
using oracle::max_abs_diff;

namespace {

struct Sample {
    MatrixXd X;
    VectorXd r;
};

Sample bernoulli_sample(const VectorXd& theta, int n, Rng& rng) {
    Sample s{uniform_matrix(n, theta.size(), -2.0, 2.0, rng), VectorXd(n)};
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) s.r(i) = u(rng) < sigmoid(s.X.row(i).dot(theta)) ? 1.0 : 0.0;
    return s;
}

}  // namespace

TEST_CASE("logistic MLE edge cases") {
    MleOptions o;
    o.ridge = 1.0;
    const auto empty = logistic_mle(MatrixXd(0, 3), VectorXd(0), 3, o);
    CHECK(empty.mean.isZero(0.0));
    CHECK(empty.curvature.isZero(0.0));
    CHECK(empty.converged);

    MatrixXd X(4, 2);
    X << 1.0, 0.5, 1.0, 0.5, -0.3, 2.0, -0.3, 2.0;
    VectorXd r(4);
    r << 1, 0, 1, 0;
    const auto bal = logistic_mle(X, r, 2, MleOptions{});
    CHECK(bal.converged);
    CHECK(bal.mean.norm() < 1e-8);

    r(0) = 0.5;
    CHECK_THROWS_AS(logistic_mle(X, r, 2), DataError);
}

TEST_CASE("logistic MLE matches a grid search in one dimension") {
    Rng rng(4);
    VectorXd theta(1);
    theta << 1.5;
    Sample s = bernoulli_sample(theta, 2000, rng);
    // two-point design at the most informative contexts for theta = 1.5
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        s.X(i, 0) = i % 2 ? 1.6 : -1.6;
        s.r(i) = u(rng) < sigmoid(1.5 * s.X(i, 0)) ? 1.0 : 0.0;
    }
    const MleOptions o;
    const auto m = logistic_mle(s.X, s.r, 1, o);
    REQUIRE(m.converged);
    double best = -INFINITY, arg = 0.0;
    for (double t = -5.0; t <= 5.0; t += 1e-4) {
        const double ll = penalized_loglik(s.X, s.r, VectorXd::Constant(1, t), o);
        if (ll > best) {
            best = ll;
            arg = t;
        }
    }
    CHECK(std::abs(m.mean(0) - arg) < 2e-4);
    double info = 0.0;
    for (int i = 0; i < 2000; ++i) {
        const double p = sigmoid(m.mean(0) * s.X(i, 0));
        info += s.X(i, 0) * s.X(i, 0) * p * (1.0 - p);
    }
    CHECK(std::abs(m.mean(0) - 1.5) < 4.0 / std::sqrt(info));
}

TEST_CASE("logistic gradient matches central differences at the MLE and elsewhere") {
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const VectorXd theta = uniform_matrix(3, 1, -1, 1, rng);
        const Sample s = bernoulli_sample(theta, 80, rng);
        const MleOptions o;
        const auto m = logistic_mle(s.X, s.r, 3, o);
        CHECK(m.converged);
        CHECK(loglik_gradient(s.X, s.r, m.mean, o).lpNorm<Eigen::Infinity>() <= 1e-8);
        for (const VectorXd& at : {m.mean, VectorXd(uniform_matrix(3, 1, -1, 1, rng))}) {
            const VectorXd g = loglik_gradient(s.X, s.r, at, o);
            const double h = 1e-5;
            for (int j = 0; j < 3; ++j) {
                VectorXd p = at, q = at;
                p(j) += h;
                q(j) -= h;
                const double fd = (penalized_loglik(s.X, s.r, p, o) - penalized_loglik(s.X, s.r, q, o)) / (2 * h);
                CHECK(std::abs(fd - g(j)) <= 1e-4 * std::max(1.0, std::abs(g(j))));
            }
        }
        CHECK(asymmetry(m.curvature) == 0.0);
        CHECK(min_eigenvalue(m.curvature) >= -1e-12);
    }
}

TEST_CASE("separable data stays bounded thanks to the ridge") {
    MatrixXd X(4, 1);
    X << 1, 2, -1, -2;
    VectorXd r(4);
    r << 1, 1, 0, 0;
    const auto m = logistic_mle(X, r, 1);
    CHECK(std::isfinite(m.mean(0)));
    CHECK(m.mean(0) > 1.0);
}

TEST_CASE("logistic structured update") {
    Rng rng(2);
    const auto prior = oracle::random_prior(3, 2, 4, rng);
    SECTION("zero curvature gives the marginalized prior") {
        LogisticStats ls;
        for (int a = 0; a < 4; ++a) {
            ls.means.push_back(VectorXd::Zero(3));
            ls.curvatures.push_back(MatrixXd::Zero(3, 3));
            ls.converged.push_back(true);
            ls.counts.push_back(0);
        }
        const auto st = structured_update_logistic(prior, ls);
        const auto flat = marginalize_structured(prior);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(max_abs_diff(st.actions.means[a], flat.mean(a)) < 1e-12);
            CHECK(max_abs_diff(st.actions.covs[a], flat.cov(a)) < 1e-12);
        }
    }
    SECTION("identity link reproduces the Gaussian update") {
        StructuredPrior unit_noise(prior.latent_mean(), prior.latent_cov(), prior.mixing(), prior.action_covs(),
                                   1.0);
        const auto data = oracle::random_dataset(4, 3, 60, rng);
        MleOptions o;
        o.link = Link::identity;
        o.ridge = 0.0;
        const auto ls = logistic_stats(data, 4, 3, o);
        const auto bvm = structured_update_logistic(unit_noise, ls);
        const auto exact = structured_posterior(unit_noise, data);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(max_abs_diff(bvm.actions.means[a], exact.actions.means[a]) < 1e-8);
            CHECK(max_abs_diff(bvm.actions.covs[a], exact.actions.covs[a]) < 1e-8);
        }
    }
    SECTION("random logistic instance gives a valid posterior") {
        auto data = oracle::random_dataset(4, 3, 100, rng);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& r : data.records) r.r = u(rng) < 0.4 ? 1.0 : 0.0;
        const auto st = structured_update_logistic(prior, logistic_stats(data, 4, 3));
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(st.actions.means[a].allFinite());
            CHECK(asymmetry(st.actions.covs[a]) <= 1e-10);
            CHECK(min_eigenvalue(st.actions.covs[a]) > 0.0);
        }
    }
}

TEST_CASE("sigmoid-Gaussian reward estimate") {
    Rng rng(17);
    const VectorXd x = uniform_matrix(3, 1, -1, 1, rng);
    SECTION("zero mean gives one half") {
        ActionPosteriors post{{VectorXd::Zero(3)}, {oracle::random_spd(3, rng)}};
        CHECK(logistic_reward_estimate(x, 0, post) == 0.5);
        CHECK(logistic_reward_estimate(x, 0, post, ProbitCorrection::norm) == 0.5);
    }
    SECTION("vanishing covariance gives the plug-in sigmoid") {
        const VectorXd mu = uniform_matrix(3, 1, -1, 1, rng);
        ActionPosteriors post{{mu}, {1e-14 * MatrixXd::Identity(3, 3)}};
        CHECK(logistic_reward_estimate(x, 0, post) == Approx(sigmoid(x.dot(mu))).epsilon(1e-10));
    }
    SECTION("variance form against sampling") {
        const VectorXd mu = uniform_matrix(3, 1, -1, 1, rng);
        const MatrixXd cov = oracle::random_spd(3, rng);
        ActionPosteriors post{{mu}, {cov}};
        const MatrixXd f = sqrt_factor(cov);
        CompensatedSum s;
        const int N = 1000000;
        for (int i = 0; i < N; ++i) s.add(sigmoid(x.dot(sample_gaussian(mu, f, rng))));
        CHECK(std::abs(logistic_reward_estimate(x, 0, post) - s.value() / N) < 0.02);
    }
    SECTION("monotone in the mean for fixed uncertainty") {
        const MatrixXd cov = oracle::random_spd(3, rng);
        double prev = 0.0;
        for (double t = -3.0; t <= 3.0; t += 0.25) {
            ActionPosteriors post{{t * VectorXd::Unit(3, 0)}, {cov}};
            const double p = logistic_reward_estimate(VectorXd::Unit(3, 0), 0, post);
            CHECK(p > prev);
            CHECK(p > 0.0);
            CHECK(p < 1.0);
            prev = p;
        }
    }
    SECTION("ranking follows the mean when uncertainties are equal") {
        std::vector<VectorXd> means;
        std::vector<MatrixXd> covs;
        const MatrixXd c = MatrixXd::Identity(3, 3);
        for (int a = 0; a < 6; ++a) {
            means.push_back(uniform_matrix(3, 1, -2, 2, rng));
            covs.push_back(c);
        }
        const ActionPosteriors post{means, covs};
        const LogisticPosteriorModel model(post);
        VectorXd lin(6);
        for (int a = 0; a < 6; ++a) lin(a) = x.dot(means[a]);
        CHECK(argmax(model.predict_all(x)) == argmax(lin));
    }
}
