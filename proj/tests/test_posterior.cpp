#include <catch_amalgamated.hpp>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "sdm/model.hpp"
#include "sdm/posterior.hpp"

using namespace sdm;
using Catch::Approx;
using oracle::max_abs_diff;

namespace {

void require_valid_cov(const MatrixXd& c) {
    REQUIRE(asymmetry(c) <= 1e-10);
    REQUIRE(min_eigenvalue(c) > 0.0);
}

}  // namespace

TEST_CASE("prior construction validates shapes and definiteness") {
    const MatrixXd I2 = MatrixXd::Identity(2, 2);
    CHECK_NOTHROW(StructuredPrior(VectorXd::Zero(2), I2, {I2}, {I2}, 1.0));
    CHECK_THROWS_AS(StructuredPrior(VectorXd::Zero(2), I2, {I2}, {I2}, 0.0), ParameterError);
    CHECK_THROWS_AS(StructuredPrior(VectorXd::Zero(3), I2, {I2}, {I2}, 1.0), ShapeError);
    CHECK_THROWS_AS(StructuredPrior(VectorXd::Zero(2), I2, {I2, I2}, {I2}, 1.0), ShapeError);
    MatrixXd bad = I2;
    bad(1, 1) = 1e-12;
    CHECK_THROWS_AS(StructuredPrior(VectorXd::Zero(2), bad, {I2}, {I2}, 1.0), NumericalError);
    CHECK_THROWS_AS(StructuredPrior(VectorXd::Zero(2), I2, {I2}, {bad}, 1.0), NumericalError);
}

TEST_CASE("accumulate_stats") {
    SECTION("empty dataset") {
        const auto s = accumulate_stats(1.0, LoggedDataset{}, 3, 2);
        for (std::size_t a = 0; a < 3; ++a) {
            CHECK(s.G[a].isZero(0.0));
            CHECK(s.B[a].isZero(0.0));
            CHECK(s.N[a] == 0);
        }
    }
    SECTION("one record") {
        LoggedDataset data;
        data.records.push_back({VectorXd::Unit(3, 0), 0, 2.0, 1.0});
        const auto s = accumulate_stats(1.0, data, 2, 3);
        MatrixXd e = MatrixXd::Zero(3, 3);
        e(0, 0) = 1.0;
        CHECK(s.G[0] == e);
        CHECK(s.B[0] == 2.0 * VectorXd::Unit(3, 0));
        CHECK(s.N[0] == 1);
        CHECK(s.G[1].isZero(0.0));
        CHECK(s.B[1].isZero(0.0));
        CHECK(s.N[1] == 0);
    }
    SECTION("naive loop oracle") {
        Rng rng(11);
        const auto data = oracle::random_dataset(3, 4, 50, rng);
        const double sigma = 0.8;
        const auto s = accumulate_stats(sigma, data, 3, 4);
        for (std::size_t a = 0; a < 3; ++a) {
            MatrixXd g = MatrixXd::Zero(4, 4);
            VectorXd b = VectorXd::Zero(4);
            for (const auto& r : data.records) {
                if (r.a != a) continue;
                for (int i = 0; i < 4; ++i) {
                    b(i) += r.r * r.x(i) / (sigma * sigma);
                    for (int j = 0; j < 4; ++j) g(i, j) += r.x(i) * r.x(j) / (sigma * sigma);
                }
            }
            CHECK(max_abs_diff(s.G[a], g) < 1e-12);
            CHECK(max_abs_diff(s.B[a], b) < 1e-12);
        }
    }
    SECTION("errors") {
        LoggedDataset data;
        data.records.push_back({VectorXd::Zero(2), 0, 1.0, 1.0});
        CHECK_THROWS_AS(accumulate_stats(1.0, data, 1, 3), ShapeError);
        data.records[0].r = std::nan("");
        CHECK_THROWS_AS(accumulate_stats(1.0, data, 1, 2), DataError);
        data.records[0].r = 1.0;
        data.records[0].x(0) = INFINITY;
        CHECK_THROWS_AS(accumulate_stats(1.0, data, 1, 2), DataError);
        data.records[0].x(0) = 0.0;
        data.records[0].a = 5;
        CHECK_THROWS_AS(accumulate_stats(1.0, data, 1, 2), DataError);
    }
}

TEST_CASE("latent posterior") {
    Rng rng(5);
    SECTION("no data returns the latent prior") {
        const auto prior = oracle::random_prior(3, 2, 4, rng);
        const auto lat = latent_posterior(prior, SufficientStats::zeros(4, 3));
        CHECK(max_abs_diff(lat.mean, prior.latent_mean()) < 1e-12);
        CHECK(max_abs_diff(lat.cov, prior.latent_cov()) < 1e-12);
    }
    SECTION("scalar hierarchy against hand arithmetic") {
        const double tau2 = 2.0, s02 = 0.5, sigma = 0.7, mu = 0.3, r = 1.9;
        MatrixXd one = MatrixXd::Ones(1, 1);
        StructuredPrior prior(VectorXd::Constant(1, mu), tau2 * one, {one}, {s02 * one}, sigma);
        LoggedDataset data;
        data.records.push_back({VectorXd::Ones(1), 0, r, 1.0});
        const auto lat = latent_posterior(prior, accumulate_stats(sigma, data, 1, 1));
        // marginally r = psi + eta + eps with eta ~ N(0, s02), eps ~ N(0, sigma^2)
        const double noise = s02 + sigma * sigma;
        const double post_var = 1.0 / (1.0 / tau2 + 1.0 / noise);
        const double post_mean = post_var * (mu / tau2 + r / noise);
        CHECK(lat.cov(0, 0) == Approx(post_var).epsilon(1e-12));
        CHECK(lat.mean(0) == Approx(post_mean).epsilon(1e-12));
    }
    SECTION("joint Gaussian oracle") {
        const auto prior = oracle::random_prior(3, 2, 4, rng);
        const auto data = oracle::random_dataset(4, 3, 30, rng);
        const auto lat = latent_posterior(prior, accumulate_stats(prior.noise_sd(), data, 4, 3));
        const auto joint = oracle::joint_posterior(prior, data);
        CHECK(max_abs_diff(lat.mean, joint.psi_mean) < 1e-8);
        CHECK(max_abs_diff(lat.cov, joint.psi_cov) < 1e-8);
        require_valid_cov(lat.cov);
    }
}

TEST_CASE("action posteriors") {
    Rng rng(6);
    SECTION("no data gives the marginalized prior exactly") {
        const auto prior = oracle::random_prior(3, 2, 4, rng);
        const auto st = structured_posterior(prior, LoggedDataset{});
        const auto flat = marginalize_structured(prior);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(max_abs_diff(st.actions.means[a], prior.mixing(a) * prior.latent_mean()) < 1e-12);
            CHECK(max_abs_diff(st.actions.covs[a], flat.cov(a)) < 1e-12);
        }
    }
    SECTION("vanishing latent covariance leaves the conditional covariance") {
        std::vector<MatrixXd> w, c;
        for (int a = 0; a < 3; ++a) {
            w.push_back(uniform_matrix(2, 2, -1, 1, rng));
            c.push_back(oracle::random_spd(2, rng));
        }
        // 1e-9 rather than smaller: the prior rejects eigenvalues below 1e-10
        StructuredPrior prior(VectorXd::Ones(2), 1e-9 * MatrixXd::Identity(2, 2), w, c, 1.0);
        const auto data = oracle::random_dataset(3, 2, 20, rng);
        const auto st = structured_posterior(prior, data);
        for (std::size_t a = 0; a < 3; ++a) CHECK(max_abs_diff(st.actions.covs[a], st.conditional_covs[a]) < 1e-8);
    }
    SECTION("joint Gaussian oracle") {
        const auto prior = oracle::random_prior(3, 2, 4, rng);
        const auto data = oracle::random_dataset(4, 3, 30, rng);
        const auto st = structured_posterior(prior, data);
        const auto joint = oracle::joint_posterior(prior, data);
        for (std::size_t a = 0; a < 4; ++a) {
            CHECK(max_abs_diff(st.actions.means[a], joint.theta_means[a]) < 1e-8);
            CHECK(max_abs_diff(st.actions.covs[a], joint.theta_covs[a]) < 1e-8);
            require_valid_cov(st.actions.covs[a]);
        }
    }
    SECTION("actions without data still learn through the latent") {
        const auto prior = oracle::random_prior(2, 2, 3, rng);
        auto data = oracle::random_dataset(3, 2, 40, rng);
        for (auto& r : data.records) r.a = r.a == 2 ? 0 : r.a;
        const auto st = structured_posterior(prior, data);
        const auto joint = oracle::joint_posterior(prior, data);
        CHECK(max_abs_diff(st.actions.means[2], joint.theta_means[2]) < 1e-8);
        CHECK(max_abs_diff(st.actions.covs[2], joint.theta_covs[2]) < 1e-8);
    }
}

TEST_CASE("posterior invariants on random instances") {
    Rng rng(77);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Index d = 1 + trial % 4;
        const Eigen::Index dl = 1 + trial % 3;
        const std::size_t K = 1 + static_cast<std::size_t>(trial % 5);
        const auto prior = oracle::random_prior(d, dl, K, rng);
        auto data = oracle::random_dataset(K, d, static_cast<std::size_t>(trial * 13 % 51), rng);
        const auto st = structured_posterior(prior, data);
        for (std::size_t a = 0; a < K; ++a) {
            // contraction
            const Eigen::SelfAdjointEigenSolver<MatrixXd> es(prior.action_cov(a) - st.conditional_covs[a]);
            CHECK(es.eigenvalues().minCoeff() >= -1e-10);
            CHECK(asymmetry(st.conditional_covs[a]) <= 1e-10);
            CHECK(asymmetry(st.actions.covs[a]) <= 1e-10);
            CHECK(min_eigenvalue(st.actions.covs[a]) > 0.0);
        }
        CHECK(asymmetry(st.latent.cov) <= 1e-10);
        // permutation equivariance
        std::shuffle(data.records.begin(), data.records.end(), rng);
        const auto st2 = structured_posterior(prior, data);
        for (std::size_t a = 0; a < K; ++a) {
            CHECK(max_abs_diff(st.actions.means[a], st2.actions.means[a]) < 1e-12);
            CHECK(max_abs_diff(st.actions.covs[a], st2.actions.covs[a]) < 1e-12);
        }
    }
}

TEST_CASE("non-structured posteriors") {
    Rng rng(8);
    SECTION("no data returns the prior") {
        const auto flat = marginalize_structured(oracle::random_prior(3, 2, 2, rng));
        const auto post = nonstructured_posteriors(flat, LoggedDataset{});
        for (std::size_t a = 0; a < 2; ++a) {
            CHECK(post.means[a] == flat.mean(a));
            CHECK(post.covs[a] == flat.cov(a));
        }
    }
    SECTION("flat prior approaches least squares") {
        const Eigen::Index d = 3;
        NonStructuredPrior flat({VectorXd::Zero(d)}, {1e6 * MatrixXd::Identity(d, d)}, 1.0);
        LoggedDataset data;
        VectorXd theta(3);
        theta << 0.5, -1.0, 2.0;
        std::normal_distribution<double> z;
        for (int i = 0; i < 500; ++i) {
            VectorXd x = uniform_matrix(d, 1, -1, 1, rng);
            data.records.push_back({x, 0, x.dot(theta) + z(rng), 1.0});
        }
        const auto post = nonstructured_posteriors(flat, data);
        const MatrixXd X = data.context_matrix();
        VectorXd r(500);
        for (int i = 0; i < 500; ++i) r(i) = data.records[i].r;
        const VectorXd ls = X.colPivHouseholderQr().solve(r);
        CHECK(max_abs_diff(post.means[0], ls) < 1e-3);
    }
    SECTION("scalar conjugate update") {
        const double m0 = 0.2, v0 = 1.5, sigma = 0.5, x = 2.0, r = 1.1;
        NonStructuredPrior flat({VectorXd::Constant(1, m0)}, {MatrixXd::Constant(1, 1, v0)}, sigma);
        LoggedDataset data;
        data.records.push_back({VectorXd::Constant(1, x), 0, r, 1.0});
        const auto post = nonstructured_posteriors(flat, data);
        const double prec = 1.0 / v0 + x * x / (sigma * sigma);
        CHECK(post.covs[0](0, 0) == Approx(1.0 / prec).epsilon(1e-12));
        CHECK(post.means[0](0) == Approx((m0 / v0 + x * r / (sigma * sigma)) / prec).epsilon(1e-12));
    }
}

TEST_CASE("marginalize_structured") {
    Rng rng(21);
    const MatrixXd I3 = MatrixXd::Identity(3, 3);
    SECTION("zero mixing") {
        const MatrixXd sa = oracle::random_spd(3, rng);
        StructuredPrior p(VectorXd::Ones(2), MatrixXd::Identity(2, 2), {MatrixXd::Zero(3, 2)}, {sa}, 1.0);
        const auto flat = marginalize_structured(p);
        CHECK(flat.mean(0).isZero(0.0));
        CHECK(max_abs_diff(flat.cov(0), sa) < 1e-15);
    }
    SECTION("identity mixing") {
        const MatrixXd sa = oracle::random_spd(3, rng);
        const MatrixXd s = oracle::random_spd(3, rng);
        StructuredPrior p(VectorXd::Ones(3), s, {I3}, {sa}, 1.0);
        CHECK(max_abs_diff(marginalize_structured(p).cov(0), sa + s) < 1e-14);
    }
    SECTION("hierarchical sampling moments") {
        const auto p = oracle::random_prior(2, 2, 1, rng);
        const auto flat = marginalize_structured(p);
        const int N = 20000;
        MatrixXd draws(N, 2);
        for (int i = 0; i < N; ++i) {
            const VectorXd psi = sample_gaussian(p.latent_mean(), p.latent_factor(), rng);
            draws.row(i) = sample_gaussian(p.mixing(0) * psi, p.action_factor(0), rng).transpose();
        }
        const VectorXd mean = draws.colwise().mean().transpose();
        for (int j = 0; j < 2; ++j) {
            const double se = std::sqrt(flat.cov(0)(j, j) / N);
            CHECK(std::abs(mean(j) - flat.mean(0)(j)) <= 3 * se);
        }
        const MatrixXd c = draws.rowwise() - mean.transpose();
        const MatrixXd cov = c.transpose() * c / (N - 1);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                // SE of a sample covariance entry for Gaussian data
                const double s = flat.cov(0)(i, j);
                const double se = std::sqrt((flat.cov(0)(i, i) * flat.cov(0)(j, j) + s * s) / N);
                CHECK(std::abs(cov(i, j) - s) <= 3 * se);
            }
    }
}

TEST_CASE("reward estimate and uncertainty") {
    Rng rng(31);
    const auto prior = oracle::random_prior(3, 2, 3, rng);
    const auto data = oracle::random_dataset(3, 3, 25, rng);
    const auto post = structured_posterior(prior, data).actions;
    CHECK(reward_estimate(VectorXd::Zero(3), 1, post) == 0.0);
    CHECK(reward_uncertainty(VectorXd::Zero(3), 1, post) == 0.0);

    const auto prior_post = structured_posterior(prior, LoggedDataset{}).actions;
    CHECK(reward_estimate(VectorXd::Unit(3, 0), 2, prior_post) == Approx((prior.mixing(2) * prior.latent_mean())(0)));

    ActionPosteriors unit{{VectorXd::Zero(5)}, {MatrixXd::Identity(5, 5)}};
    VectorXd x = VectorXd::Zero(5);
    x(0) = 3;
    x(1) = 4;
    CHECK(reward_uncertainty(x, 0, unit) == Approx(25.0));

    // sampling oracle
    const VectorXd xs = uniform_matrix(3, 1, -1, 1, rng);
    const MatrixXd f = sqrt_factor(post.covs[1]);
    const int N = 100000;
    std::vector<double> vals(N);
    for (int i = 0; i < N; ++i) vals[i] = xs.dot(sample_gaussian(post.means[1], f, rng));
    const double m = mean_of(vals);
    CHECK(std::abs(m - reward_estimate(xs, 1, post)) <= 3 * std_error_of(vals));
    double var = 0.0;
    for (double v : vals) var += (v - m) * (v - m);
    var /= N - 1;
    CHECK(var == Approx(reward_uncertainty(xs, 1, post)).epsilon(0.05));
}

TEST_CASE("stats-based API agrees with a feature map") {
    Rng rng(41);
    const auto data = oracle::random_dataset(2, 2, 10, rng);
    const auto mapped = apply_feature_map(data, [](const VectorXd& x) { return VectorXd(2.0 * x); });
    CHECK(mapped.records[3].x == 2.0 * data.records[3].x);
    CHECK(mapped.records[3].a == data.records[3].a);
}
