#pragma once

// Monte Carlo Bayesian metrics. Every replication r draws its instance, log and
// evaluation contexts from streams derived from (seed, r), so separate metric
// calls with the same setting see identical (theta*, S) and are paired.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "sdm/bounds.hpp"
#include "sdm/core.hpp"
#include "sdm/env.hpp"
#include "sdm/model.hpp"
#include "sdm/policies.hpp"
#include "sdm/posterior.hpp"

namespace sdm {

struct McReport {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t replications = 0;
    std::size_t skipped = 0;  ///< replications excluded by a guard
    std::vector<double> values;

    static McReport from(std::vector<double> values, std::size_t skipped = 0) {
        McReport r;
        r.mean = mean_of(values);
        r.std_error = std_error_of(values);
        r.replications = values.size();
        r.skipped = skipped;
        r.values = std::move(values);
        return r;
    }
};

/// Standard error of the per-replication difference a - b.
inline double paired_std_error(const McReport& a, const McReport& b) {
    if (a.values.size() != b.values.size()) throw ShapeError("paired reports must have equal replication counts");
    std::vector<double> diff(a.values.size());
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a.values[i] - b.values[i];
    return std_error_of(diff);
}

inline double combined_std_error(const McReport& a, const McReport& b) {
    return std::sqrt(a.std_error * a.std_error + b.std_error * b.std_error);
}

/// Runs f(0..reps-1) on up to `workers` threads; results are stored by index so
/// the output does not depend on scheduling. The first exception (by index) is
/// rethrown after all workers finish.
template <class F>
auto run_replications(std::size_t reps, std::size_t workers, F&& f) -> std::vector<decltype(f(std::size_t{}))> {
    using T = decltype(f(std::size_t{}));
    std::vector<std::optional<T>> slots(reps);
    std::vector<std::exception_ptr> errors(reps);
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (std::size_t i = next++; i < reps; i = next++) {
            try {
                slots[i].emplace(f(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t w = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(reps, 1));
    if (w == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(w);
        for (std::size_t t = 0; t < w; ++t) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<T> out;
    out.reserve(reps);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

struct McSetting {
    std::shared_ptr<const StructuredPrior> env_prior;
    RewardKind reward_kind = RewardKind::linear_gaussian;
    ContextDistribution contexts = ContextDistribution::uniform_cube(1);
    LoggingSpec logging;
    std::size_t n = 0;
    double noise_sd = 1.0;
    std::size_t reps = 100;
    std::size_t n_mc = 1000;  ///< evaluation contexts per replication (ignored for pools)
    std::uint64_t seed = 0;
    std::size_t workers = 1;
    /// When set, every replication reuses this instance and only the log varies.
    std::shared_ptr<const ProblemInstance> fixed_instance;
};

struct Replication {
    ProblemInstance instance;
    Policy logging;
    LoggedDataset data;
    MatrixXd eval_contexts;
};

inline Replication draw_replication(const McSetting& s, std::size_t r) {
    ProblemInstance inst;
    if (s.fixed_instance) {
        inst = *s.fixed_instance;
    } else {
        if (!s.env_prior) throw ParameterError("setting has no environment prior");
        Rng inst_rng = derive_rng(s.seed, r, stream::kInstance);
        inst = sample_instance(*s.env_prior, s.reward_kind, s.contexts, inst_rng);
    }
    Policy logging = make_logging_policy(s.logging, inst);
    Rng log_rng = derive_rng(s.seed, r, stream::kLog);
    LoggedDataset data = generate_log(inst, logging, s.n, s.noise_sd, log_rng);
    Rng ctx_rng = derive_rng(s.seed, r, stream::kContexts);
    MatrixXd ctx = evaluation_contexts(inst.contexts, s.n_mc, ctx_rng);
    return {std::move(inst), std::move(logging), std::move(data), std::move(ctx)};
}

/// Maps a replication to a learned policy. Honest learners read only `data`
/// and `logging`; the oracle reads the instance.
using Learner = std::function<Policy(const Replication&)>;

inline Learner oracle_learner() {
    return [](const Replication& rep) { return optimal_policy(rep.instance); };
}

inline Learner uniform_learner() {
    return [](const Replication& rep) { return Policy::uniform(rep.instance.action_count()); };
}

inline Learner sdm_greedy_learner(std::shared_ptr<const StructuredPrior> prior) {
    return [prior](const Replication& rep) {
        return Policy::greedy(LinearRewardModel::from_posterior(structured_posterior(*prior, rep.data).actions));
    };
}

inline Learner sdm_pessimistic_learner(std::shared_ptr<const StructuredPrior> prior, double delta) {
    return [prior, delta](const Replication& rep) {
        return Policy::pessimistic(structured_posterior(*prior, rep.data).actions, delta);
    };
}

inline Learner sdm_epsilon_greedy_learner(std::shared_ptr<const StructuredPrior> prior, double epsilon) {
    return [prior, epsilon](const Replication& rep) {
        return Policy::epsilon_greedy(LinearRewardModel::from_posterior(structured_posterior(*prior, rep.data).actions),
                                      epsilon);
    };
}

/// Greedy on the non-structured posterior with the marginalized prior.
inline Learner dm_bayes_learner(std::shared_ptr<const StructuredPrior> prior) {
    auto flat = std::make_shared<const NonStructuredPrior>(marginalize_structured(*prior));
    return [flat](const Replication& rep) {
        return Policy::greedy(LinearRewardModel::from_posterior(nonstructured_posteriors(*flat, rep.data)));
    };
}

/// BSO per learner: V(pi*; theta*) - V(pi_hat; theta*) on matched replications.
inline std::vector<McReport> mc_bso(const McSetting& s, std::span<const Learner> learners) {
    auto rows = run_replications(s.reps, s.workers, [&](std::size_t r) {
        const Replication rep = draw_replication(s, r);
        const double v_star = value_on(rep.instance, optimal_policy(rep.instance), rep.eval_contexts);
        std::vector<double> out;
        for (const Learner& l : learners) out.push_back(v_star - value_on(rep.instance, l(rep), rep.eval_contexts));
        return out;
    });
    std::vector<McReport> reports;
    for (std::size_t m = 0; m < learners.size(); ++m) {
        std::vector<double> col;
        for (const auto& row : rows) col.push_back(row[m]);
        reports.push_back(McReport::from(std::move(col)));
    }
    return reports;
}

inline McReport mc_bso(const McSetting& s, const Learner& learner) {
    return mc_bso(s, std::span<const Learner>(&learner, 1)).front();
}

/// V(pi_hat)/V(pi*) per learner; replications with |V(pi*)| < 1e-9 are skipped
/// for every learner alike so the values stay paired.
inline std::vector<McReport> relative_reward(const McSetting& s, std::span<const Learner> learners) {
    auto rows = run_replications(s.reps, s.workers, [&](std::size_t r) {
        const Replication rep = draw_replication(s, r);
        const double v_star = value_on(rep.instance, optimal_policy(rep.instance), rep.eval_contexts);
        std::vector<double> out;
        if (std::abs(v_star) < 1e-9) return out;
        for (const Learner& l : learners) out.push_back(value_on(rep.instance, l(rep), rep.eval_contexts) / v_star);
        return out;
    });
    std::size_t skipped = 0;
    std::vector<std::vector<double>> cols(learners.size());
    for (const auto& row : rows) {
        if (row.empty()) {
            ++skipped;
            continue;
        }
        for (std::size_t m = 0; m < learners.size(); ++m) cols[m].push_back(row[m]);
    }
    std::vector<McReport> reports;
    for (auto& c : cols) reports.push_back(McReport::from(std::move(c), skipped));
    return reports;
}

inline McReport relative_reward(const McSetting& s, const Learner& learner) {
    return relative_reward(s, std::span<const Learner>(&learner, 1)).front();
}

struct Probe {
    VectorXd x;
    ActionId a = 0;
};

struct BmseReport {
    McReport bmse;         ///< (x' mu_hat_a - x' theta*_a)^2
    McReport uncertainty;  ///< x' Sigma_hat_a x
};

/// Squared error of the structured estimate at each probe, alongside its
/// posterior variance, on matched replications.
inline std::vector<BmseReport> mc_bmse(const McSetting& s, const StructuredPrior& learner_prior,
                                       std::span<const Probe> probes) {
    auto rows = run_replications(s.reps, s.workers, [&](std::size_t r) {
        const Replication rep = draw_replication(s, r);
        const ActionPosteriors post = structured_posterior(learner_prior, rep.data).actions;
        std::vector<std::pair<double, double>> out;
        for (const Probe& p : probes) {
            const double err = reward_estimate(p.x, p.a, post) - rep.instance.theta.row(static_cast<Eigen::Index>(p.a)).dot(p.x);
            out.emplace_back(err * err, reward_uncertainty(p.x, p.a, post));
        }
        return out;
    });
    std::vector<BmseReport> reports;
    for (std::size_t k = 0; k < probes.size(); ++k) {
        std::vector<double> e;
        std::vector<double> u;
        for (const auto& row : rows) {
            e.push_back(row[k].first);
            u.push_back(row[k].second);
        }
        reports.push_back({McReport::from(std::move(e)), McReport::from(std::move(u))});
    }
    return reports;
}

inline BmseReport mc_bmse(const McSetting& s, const StructuredPrior& learner_prior, const VectorXd& x, ActionId a) {
    const Probe p{x, a};
    return mc_bmse(s, learner_prior, std::span<const Probe>(&p, 1)).front();
}

/// 2 sqrt(d) E[|x|_{Sigma_hat_{pi*(x)}}] per replication.
inline McReport covariance_bound(const McSetting& s, const StructuredPrior& learner_prior) {
    auto vals = run_replications(s.reps, s.workers, [&](std::size_t r) {
        const Replication rep = draw_replication(s, r);
        const ActionPosteriors post = structured_posterior(learner_prior, rep.data).actions;
        CompensatedSum acc;
        for (Eigen::Index i = 0; i < rep.eval_contexts.rows(); ++i) {
            const VectorXd x = rep.eval_contexts.row(i).transpose();
            acc.add(std::sqrt(reward_uncertainty(x, optimal_action(rep.instance, x), post)));
        }
        const auto d = static_cast<double>(learner_prior.dim());
        const double m = rep.eval_contexts.rows() == 0 ? 0.0 : acc.value() / static_cast<double>(rep.eval_contexts.rows());
        return 2.0 * std::sqrt(d) * m;
    });
    return McReport::from(std::move(vals));
}

/// Average trace of Sigma_hat_a over replications.
inline McReport posterior_trace(const McSetting& s, const StructuredPrior& learner_prior, ActionId a) {
    auto vals = run_replications(s.reps, s.workers, [&](std::size_t r) {
        const Replication rep = draw_replication(s, r);
        return structured_posterior(learner_prior, rep.data).actions.covs.at(a).trace();
    });
    return McReport::from(std::move(vals));
}

enum class CoverageMode { bayes, freq };

struct CoverageReport {
    double rate = 0.0;
    double std_error = 0.0;  ///< binomial sqrt(p (1 - p) / reps) at the empirical rate
    std::size_t replications = 0;
    double radius = 0.0;     ///< multiplier applied to |x|_{Sigma_hat}
    std::vector<bool> covered;
};

/// Fraction of replications whose interval contains r(x, a; theta*).
///
/// bayes: fresh (theta*, S) per replication, structured posterior, radius alpha(d, delta).
/// freq:  theta* and the logged (x, a) pairs fixed at replication 0, reward noise
///        redrawn, non-structured posterior under the marginalized prior, radius
///        alpha(d, delta) + (c_a + |mu_a|) / sqrt(lambda_min(Sigma_a)).
inline CoverageReport ci_coverage(const McSetting& s, const StructuredPrior& learner_prior, const Probe& probe,
                                  double delta, CoverageMode mode, double c_a = 0.0) {
    if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("coverage delta must lie in (0, 1)");
    const double alpha = alpha_radius(learner_prior.dim(), delta);
    CoverageReport out;
    std::vector<char> hits;
    if (mode == CoverageMode::bayes) {
        out.radius = alpha;
        hits = run_replications(s.reps, s.workers, [&](std::size_t r) -> char {
            const Replication rep = draw_replication(s, r);
            const ActionPosteriors post = structured_posterior(learner_prior, rep.data).actions;
            const double truth = rep.instance.theta.row(static_cast<Eigen::Index>(probe.a)).dot(probe.x);
            const double est = reward_estimate(probe.x, probe.a, post);
            return std::abs(truth - est) <= alpha * std::sqrt(reward_uncertainty(probe.x, probe.a, post));
        });
    } else {
        if (!(c_a >= 0.0)) throw ParameterError("c_a must be non-negative");
        const NonStructuredPrior flat = marginalize_structured(learner_prior);
        const double extra = (c_a + flat.mean(probe.a).norm()) / std::sqrt(min_eigenvalue(flat.cov(probe.a)));
        out.radius = alpha + extra;
        const Replication base = draw_replication(s, 0);
        hits = run_replications(s.reps, s.workers, [&](std::size_t r) -> char {
            Rng noise = derive_rng(s.seed, r, stream::kLog);
            std::normal_distribution<double> z(0.0, 1.0);
            LoggedDataset data = base.data;
            for (Record& rec : data.records) rec.r = base.instance.mean_reward(rec.x, rec.a) + s.noise_sd * z(noise);
            const ActionPosteriors post = nonstructured_posteriors(flat, data);
            const double truth = base.instance.theta.row(static_cast<Eigen::Index>(probe.a)).dot(probe.x);
            const double est = reward_estimate(probe.x, probe.a, post);
            return std::abs(truth - est) <= out.radius * std::sqrt(reward_uncertainty(probe.x, probe.a, post));
        });
    }
    std::size_t k = 0;
    for (char h : hits) {
        out.covered.push_back(h != 0);
        k += h != 0;
    }
    out.replications = hits.size();
    out.rate = hits.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(hits.size());
    out.std_error = hits.empty() ? 0.0 : std::sqrt(out.rate * (1.0 - out.rate) / static_cast<double>(hits.size()));
    return out;
}

/// pi_0(pi*(x) | x) at each row of `contexts`.
inline std::vector<double> optimal_masses(const ProblemInstance& inst, const Policy& logging, const MatrixXd& contexts) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(contexts.rows()));
    for (Eigen::Index i = 0; i < contexts.rows(); ++i) {
        const VectorXd x = contexts.row(i).transpose();
        out.push_back(logging.propensity(x, optimal_action(inst, x)));
    }
    return out;
}

}  // namespace sdm
