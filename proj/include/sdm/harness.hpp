#pragma once

// Experiment orchestration: builds the scenario from a config, runs paired
// replications for every n, scores each method on each metric and aggregates.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "sdm/bounds.hpp"
#include "sdm/config.hpp"
#include "sdm/core.hpp"
#include "sdm/env.hpp"
#include "sdm/estimators.hpp"
#include "sdm/ingest.hpp"
#include "sdm/logistic.hpp"
#include "sdm/metrics.hpp"
#include "sdm/policies.hpp"
#include "sdm/posterior.hpp"

namespace sdm {

struct ReportRow {
    std::string method;
    std::size_t n = 0;
    std::string metric;
    std::optional<double> mean;  ///< nullopt = not applicable
    std::optional<double> std_error;
    std::size_t reps = 0;

    bool operator==(const ReportRow&) const = default;
};

struct ExperimentReport {
    std::vector<ReportRow> rows;
    std::string config_hash;
    std::uint64_t seed = 0;
    double wall_time_s = 0.0;
    std::vector<std::string> notes;
    std::map<std::string, std::size_t> failures;  ///< failed method fits per method
    std::size_t attempted = 0;                    ///< method fits attempted

    std::size_t failed() const {
        std::size_t s = 0;
        for (const auto& [m, k] : failures) s += k;
        return s;
    }
    double failure_fraction() const {
        return attempted == 0 ? 0.0 : static_cast<double>(failed()) / static_cast<double>(attempted);
    }

    void sort_rows() {
        std::sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
            return std::tie(a.method, a.n, a.metric) < std::tie(b.method, b.n, b.metric);
        });
    }

    bool operator==(const ExperimentReport&) const = default;
};

/// Everything a run needs that does not change across replications.
struct Scenario {
    std::shared_ptr<const StructuredPrior> env_prior;      ///< synthetic only
    std::shared_ptr<const StructuredPrior> learner_prior;  ///< prior given to the Bayesian methods
    std::shared_ptr<const NonStructuredPrior> flat_prior;  ///< prior of DM (Bayes)
    std::shared_ptr<const ProblemInstance> fixed_instance; ///< ratings only
    std::shared_ptr<const ActionStructure> structure;      ///< MIPS clusters and PC neighbours
    RewardKind reward_kind = RewardKind::linear_gaussian;
    ContextDistribution contexts = ContextDistribution::uniform_cube(1);
    std::size_t K = 1;
    Eigen::Index d = 1;
    std::vector<std::string> notes;
};

namespace detail {

inline MatrixXd prior_embeddings(const StructuredPrior& p) {
    MatrixXd e(static_cast<Eigen::Index>(p.action_count()), p.dim());
    for (std::size_t a = 0; a < p.action_count(); ++a)
        e.row(static_cast<Eigen::Index>(a)) = (p.mixing(a) * p.latent_mean()).transpose();
    return e;
}

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace detail

inline Scenario build_scenario(const ExperimentConfig& c) {
    Scenario s;
    Rng prior_rng = derive_rng(c.seed, 0, stream::kPrior);
    if (c.scenario == "ratings") {
        RatingsMatrix m = load_ratings(c.ratings_path);
        if (c.ratings_preprocess == "kuairec") m = preprocess_kuairec(m);
        const Eigen::Index U = std::min<Eigen::Index>(m.user_count(), static_cast<Eigen::Index>(c.ratings_max_users));
        const Eigen::Index I = c.ratings_max_items == 0
                                   ? m.item_count()
                                   : std::min<Eigen::Index>(m.item_count(), static_cast<Eigen::Index>(c.ratings_max_items));
        RatingsMatrix sub;
        sub.values = m.values.topLeftCorner(U, I);
        sub.observed = m.observed.topLeftCorner(U, I);
        sub.user_ids.assign(m.user_ids.begin(), m.user_ids.begin() + U);
        sub.item_ids.assign(m.item_ids.begin(), m.item_ids.begin() + I);
        AlsOptions als;
        als.iterations = c.als_iterations;
        als.reg = c.als_reg;
        const Factorization f = factorize(sub, c.ratings_rank, prior_rng, als);
        const GaussianMixture g =
            fit_gmm(f.items, std::min<std::size_t>(c.ratings_clusters, static_cast<std::size_t>(I)), c.gmm_iterations,
                    prior_rng);
        MixedEffectOptions mo;
        mo.noise_sd = c.noise_sd;
        const MixedEffectPrior mixed = build_mixed_effect_prior(g, f.items, mo);
        s.K = static_cast<std::size_t>(I);
        s.d = c.ratings_rank;
        std::vector<VectorXd> pool;
        for (Eigen::Index u = 0; u < U; ++u) pool.push_back(f.users.row(u).transpose());
        s.contexts = ContextDistribution::finite_pool(std::move(pool));
        auto inst = std::make_shared<ProblemInstance>();
        inst->theta = f.items;
        inst->psi = VectorXd::Zero(0);
        inst->reward_kind = RewardKind::linear_gaussian;
        inst->contexts = s.contexts;
        s.fixed_instance = inst;
        auto learner = std::make_shared<const StructuredPrior>(mixed.prior);
        s.flat_prior = std::make_shared<const NonStructuredPrior>(build_nonstructured_prior(f.items, s.K, c.noise_sd));
        if (c.misspec_target == "prior") {
            learner = std::make_shared<const StructuredPrior>(
                perturb_prior(*learner, c.misspec_v, prior_rng, c.misspec_width));
        }
        s.learner_prior = learner;
        s.notes.push_back("ratings: " + std::to_string(U) + " users x " + std::to_string(I) + " items, rank " +
                          std::to_string(c.ratings_rank) + ", " + std::to_string(mixed.effect_count) +
                          " mixture components; item factors are the true action parameters, user factors the context pool");
        s.notes.push_back("ratings: latent covariance is block-diagonal in the mixture covariances; Sigma_a = eps^2 I with eps the residual RMS");
    } else {
        s.K = c.K;
        s.d = c.d;
        s.env_prior = std::make_shared<const StructuredPrior>(
            synthetic_prior(c.d, c.d_latent, c.K, prior_rng, c.latent_var, c.action_var, c.noise_sd));
        s.contexts = ContextDistribution::uniform_cube(c.d, c.context_scale);
        s.reward_kind = (c.scenario == "synthetic_logistic" || c.misspec_target == "likelihood")
                            ? RewardKind::bernoulli_logistic
                            : RewardKind::linear_gaussian;
        if (c.misspec_target == "prior") {
            s.learner_prior = std::make_shared<const StructuredPrior>(
                perturb_prior(*s.env_prior, c.misspec_v, prior_rng, c.misspec_width));
            s.notes.push_back("prior misspecification: Uniform[v, v + width] noise added entry-wise to mu, Sigma, W_a, "
                              "Sigma_a; covariances re-symmetrized and eigenvalue-floored at 1e-6");
        } else {
            s.learner_prior = s.env_prior;
        }
        s.flat_prior = std::make_shared<const NonStructuredPrior>(marginalize_structured(*s.learner_prior));
        if (s.reward_kind == RewardKind::bernoulli_logistic)
            s.notes.push_back("binary rewards: r ~ Bernoulli(sigmoid(x' theta*_a)); Gaussian learners keep noise sd " +
                              detail::fmt("%g", c.noise_sd));
    }
    const bool needs_structure = c.has_method("mips") || c.has_method("pc");
    if (needs_structure) {
        Rng srng = derive_rng(c.seed, 0, stream::kMethod);
        s.structure = std::make_shared<const ActionStructure>(
            ActionStructure::from_embeddings(detail::prior_embeddings(*s.learner_prior), c.mips_clusters, srng));
        s.notes.push_back("MIPS clusters and PC neighbours use the learner prior means W_a mu as action embeddings");
    }
    return s;
}

/// What a fitted method exposes to the metrics.
struct MethodFit {
    std::optional<Policy> policy;
    RewardModelPtr model;                      ///< for DM-type value estimates and BMSE
    std::optional<ActionPosteriors> posterior; ///< for uncertainty-based metrics
};

namespace detail {

inline bool is_opl_method(const std::string& m) {
    return m == "ips" || m == "snips" || m == "dr" || m == "mips" || m == "pc";
}

inline OplObjective opl_objective(const std::string& m) {
    if (m == "ips") return OplObjective::ips;
    if (m == "snips") return OplObjective::snips;
    if (m == "dr") return OplObjective::dr;
    if (m == "mips") return OplObjective::mips;
    return OplObjective::pc;
}

inline bool metric_applies(const std::string& method, const std::string& metric) {
    if (metric == "bso" || metric == "relative_reward") return true;
    if (metric == "mse_ope") return method != "sdm_pessimistic";
    if (metric == "bmse") return method == "sdm" || method == "sdm_logistic" || method == "dm_bayes" || method == "dm_freq";
    if (metric == "bounds" || metric == "coverage")
        return method == "sdm" || method == "sdm_pessimistic" || method == "sdm_logistic" || method == "dm_bayes";
    if (metric == "explicit_bound") return method == "sdm";
    return false;
}

inline bool needs_policy(const ExperimentConfig& c) { return c.has_metric("bso") || c.has_metric("relative_reward"); }

}  // namespace detail

inline OplOptions opl_options(const ExperimentConfig& c) {
    OplOptions o;
    o.steps = c.opl_steps;
    o.step_size = c.opl_step_size;
    o.clip = c.clip;
    o.neighbors = c.pc_neighbors;
    return o;
}

/// Fits one method on one replication's log.
inline MethodFit fit_method(const std::string& method, const ExperimentConfig& c, const Scenario& s,
                            const Replication& rep, bool with_policy) {
    MethodFit out;
    if (method == "sdm" || method == "sdm_pessimistic") {
        ActionPosteriors post = structured_posterior(*s.learner_prior, rep.data).actions;
        out.model = LinearRewardModel::from_posterior(post);
        if (method == "sdm")
            out.policy = Policy::greedy(out.model);
        else
            out.policy = Policy::pessimistic(post, c.pessimism_delta);
        out.posterior = std::move(post);
    } else if (method == "sdm_logistic") {
        const LogisticStats ls = logistic_stats(rep.data, s.K, s.d);
        ActionPosteriors post = structured_update_logistic(*s.learner_prior, ls).actions;
        out.model = std::make_shared<const LogisticPosteriorModel>(post);
        out.policy = Policy::greedy(out.model);
        out.posterior = std::move(post);
    } else if (method == "dm_bayes") {
        ActionPosteriors post = nonstructured_posteriors(*s.flat_prior, rep.data);
        out.model = LinearRewardModel::from_posterior(post);
        out.policy = Policy::greedy(out.model);
        out.posterior = std::move(post);
    } else if (method == "dm_freq") {
        out.model = dm_freq_model(rep.data, c.ridge, s.K, s.d);
        out.policy = Policy::greedy(out.model);
    } else if (detail::is_opl_method(method)) {
        if (with_policy) {
            if (rep.data.empty()) {
                out.policy = Policy::softmax(MatrixXd::Zero(static_cast<Eigen::Index>(s.K), s.d));
            } else {
                RewardModelPtr dr_model;
                if (method == "dr") dr_model = dm_freq_model(rep.data, c.ridge, s.K, s.d);
                out.policy = opl_optimize(detail::opl_objective(method), rep.data, s.K, &rep.logging,
                                          s.structure.get(), dr_model.get(), opl_options(c))
                                 .policy;
            }
        }
    } else {
        throw ParameterError("unknown method " + method);
    }
    return out;
}

/// Value estimate of `target` by the named method.
inline double ope_estimate(const std::string& method, const ExperimentConfig& c, const Scenario& s,
                           const Replication& rep, const MethodFit& fit, const Policy& target) {
    if (fit.model && !detail::is_opl_method(method)) return dm_value(target, rep.data, *fit.model).value;
    if (method == "ips") return ips_value(target, rep.data, c.clip).value;
    if (method == "snips") return snips_value(target, rep.data).value;
    if (method == "dr") return dr_value(target, rep.data, *dm_freq_model(rep.data, c.ridge, s.K, s.d), c.clip).value;
    if (method == "mips") return mips_value(target, rep.logging, rep.data, *s.structure).value;
    if (method == "pc") return pc_value(target, rep.logging, rep.data, *s.structure, c.pc_neighbors).value;
    throw ParameterError("method " + method + " has no value estimate");
}

/// Constants of the explicit bound derived from the config's environment.
struct ExplicitConstants {
    double g = 0.0;
    double h = 1.0;
    double sigma = 1.0;
    double sigma0 = 1.0;
    double tau = 1.0;
};

inline ExplicitConstants explicit_constants(const ExperimentConfig& c, const Scenario& s) {
    Rng rng = derive_rng(c.seed, 0, stream::kProbe);
    const MatrixXd samples = s.contexts.sample_matrix(s.contexts.is_pool() ? 10000 : 100000, rng);
    const MomentEstimate me = estimate_moments(samples, 10000, rng);
    return {me.g, me.h, c.noise_sd, std::sqrt(c.action_var), std::sqrt(c.latent_var)};
}

/// Per-replication metric values: values[method][metric], nullopt on failure.
struct ReplicationScores {
    std::map<std::string, std::map<std::string, std::optional<double>>> values;
    std::map<std::string, bool> failed;
    bool skipped_relative = false;
};

inline ReplicationScores score_replication(const ExperimentConfig& c, const Scenario& s, const McSetting& setting,
                                           std::size_t r, const std::optional<ExplicitConstants>& ec) {
    ReplicationScores out;
    const Replication rep = draw_replication(setting, r);
    const Policy star = optimal_policy(rep.instance);
    const double v_star = value_on(rep.instance, star, rep.eval_contexts);
    out.skipped_relative = std::abs(v_star) < 1e-9;

    std::optional<Policy> target;
    double v_target = 0.0;
    if (c.has_metric("mse_ope")) {
        target = Policy::epsilon_greedy(std::make_shared<const LinearRewardModel>(rep.instance.theta), c.target_epsilon);
        v_target = value_on(rep.instance, *target, rep.eval_contexts);
    }
    std::vector<Probe> probes;
    if (c.has_metric("bmse") || c.has_metric("coverage")) {
        Rng prng = derive_rng(setting.seed, r, stream::kProbe);
        for (std::size_t k = 0; k < c.bmse_probes; ++k)
            probes.push_back({s.contexts.sample(prng), std::uniform_int_distribution<std::size_t>(0, s.K - 1)(prng)});
    }
    const bool with_policy = detail::needs_policy(c);

    for (const std::string& m : c.methods) {
        auto& row = out.values[m];
        try {
            const MethodFit fit = fit_method(m, c, s, rep, with_policy);
            for (const std::string& metric : c.metrics) {
                if (!detail::metric_applies(m, metric)) continue;
                double v = 0.0;
                if (metric == "bso") {
                    v = v_star - value_on(rep.instance, *fit.policy, rep.eval_contexts);
                } else if (metric == "relative_reward") {
                    if (out.skipped_relative) continue;
                    v = value_on(rep.instance, *fit.policy, rep.eval_contexts) / v_star;
                } else if (metric == "mse_ope") {
                    const double e = ope_estimate(m, c, s, rep, fit, *target) - v_target;
                    v = e * e;
                } else if (metric == "bmse") {
                    CompensatedSum acc;
                    for (const Probe& p : probes) {
                        const double e = fit.model->predict(p.x, p.a) - rep.instance.mean_reward(p.x, p.a);
                        acc.add(e * e);
                    }
                    v = acc.value() / static_cast<double>(probes.size());
                } else if (metric == "bounds") {
                    CompensatedSum acc;
                    for (Eigen::Index i = 0; i < rep.eval_contexts.rows(); ++i) {
                        const VectorXd x = rep.eval_contexts.row(i).transpose();
                        acc.add(std::sqrt(reward_uncertainty(x, optimal_action(rep.instance, x), *fit.posterior)));
                    }
                    v = 2.0 * std::sqrt(static_cast<double>(s.d)) * acc.value() /
                        static_cast<double>(rep.eval_contexts.rows());
                } else if (metric == "coverage") {
                    const double alpha = alpha_radius(s.d, c.coverage_delta);
                    std::size_t hit = 0;
                    for (const Probe& p : probes) {
                        const double truth = rep.instance.theta.row(static_cast<Eigen::Index>(p.a)).dot(p.x);
                        const double est = reward_estimate(p.x, p.a, *fit.posterior);
                        hit += std::abs(truth - est) <= alpha * std::sqrt(reward_uncertainty(p.x, p.a, *fit.posterior));
                    }
                    v = static_cast<double>(hit) / static_cast<double>(probes.size());
                } else if (metric == "explicit_bound") {
                    if (setting.n == 0) {
                        row[metric] = std::nullopt;
                        continue;
                    }
                    ExplicitBoundParams bp{setting.n, s.d, ec->g, ec->h, ec->sigma, ec->sigma0, ec->tau};
                    const auto masses = optimal_masses(rep.instance, rep.logging, rep.eval_contexts);
                    const auto b = explicit_bound(bp, masses);
                    if (!b) {
                        row[metric] = std::nullopt;
                        continue;
                    }
                    v = *b;
                }
                if (!std::isfinite(v)) throw NumericalError("non-finite " + metric + " for method " + m);
                row[metric] = v;
            }
            out.failed[m] = false;
        } catch (const std::exception&) {
            row.clear();
            out.failed[m] = true;
        }
    }
    return out;
}

/// Runs the full grid. Method failures are isolated per (replication, method)
/// and counted; they never abort the run.
inline ExperimentReport run_experiment(const ExperimentConfig& c) {
    if (auto p = validate_config(c); !p.empty()) throw ConfigError(std::move(p));
    const auto t0 = std::chrono::steady_clock::now();
    const Scenario s = build_scenario(c);
    ExperimentReport rep;
    rep.config_hash = config_hash(c);
    rep.seed = c.seed;
    rep.notes = s.notes;
    rep.notes.push_back("replication r draws theta*, the log and evaluation contexts from streams derived from (seed, r); "
                        "all methods in a replication share them");
    rep.notes.push_back("OPL baselines: softmax-linear policies, temperature 1, zero initialization, " +
                        std::to_string(c.opl_steps) + " constant steps of size " + detail::fmt("%g", c.opl_step_size) +
                        ", best iterate");
    std::optional<ExplicitConstants> ec;
    if (c.has_metric("explicit_bound") && c.has_method("sdm")) {
        ec = explicit_constants(c, s);
        rep.notes.push_back("explicit bound constants: g = " + detail::fmt("%.6g", ec->g) +
                            ", h = " + detail::fmt("%.6g", ec->h) + " (estimated, 1.1 safety factor)");
    }
    for (const std::string& m : c.methods) rep.failures[m] = 0;

    for (std::size_t n : c.n) {
        McSetting setting;
        setting.env_prior = s.env_prior;
        setting.fixed_instance = s.fixed_instance;
        setting.reward_kind = s.reward_kind;
        setting.contexts = s.contexts;
        setting.logging.kind =
            c.logging_policy == "uniform" ? LoggingSpec::Kind::uniform : LoggingSpec::Kind::epsilon_greedy;
        setting.logging.epsilon = c.logging_epsilon;
        setting.n = n;
        setting.noise_sd = c.noise_sd;
        setting.reps = c.reps;
        setting.n_mc = c.eval_contexts;
        setting.seed = c.seed;
        setting.workers = c.workers;

        const auto scores = run_replications(c.reps, c.workers, [&](std::size_t r) {
            try {
                return score_replication(c, s, setting, r, ec);
            } catch (const std::exception&) {
                ReplicationScores fail;
                for (const std::string& m : c.methods) fail.failed[m] = true;
                return fail;
            }
        });
        for (const std::string& m : c.methods) {
            for (const auto& sc : scores) {
                ++rep.attempted;
                if (sc.failed.at(m)) ++rep.failures[m];
            }
            for (const std::string& metric : c.metrics) {
                ReportRow row{m, n, metric, std::nullopt, std::nullopt, 0};
                if (detail::metric_applies(m, metric)) {
                    std::vector<double> vals;
                    bool not_applicable = false;
                    for (const auto& sc : scores) {
                        if (sc.failed.at(m)) continue;
                        auto it = sc.values.at(m).find(metric);
                        if (it == sc.values.at(m).end()) continue;
                        if (!it->second) {
                            not_applicable = true;
                            continue;
                        }
                        vals.push_back(*it->second);
                    }
                    if (!not_applicable && !vals.empty()) {
                        row.mean = mean_of(vals);
                        row.std_error = std_error_of(vals);
                        row.reps = vals.size();
                    }
                }
                rep.rows.push_back(std::move(row));
            }
        }
    }
    rep.sort_rows();
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

inline std::string format_number(const std::optional<double>& v) {
    if (!v) return "NA";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", *v);
    return buf;
}

inline std::string report_csv(const ExperimentReport& r) {
    ExperimentReport sorted = r;
    sorted.sort_rows();
    std::string out = "method,n,metric,mean,stderr,reps\n";
    for (const ReportRow& row : sorted.rows)
        out += row.method + "," + std::to_string(row.n) + "," + row.metric + "," + format_number(row.mean) + "," +
               format_number(row.std_error) + "," + std::to_string(row.reps) + "\n";
    return out;
}

inline nlohmann::json report_json(const ExperimentReport& r) {
    using nlohmann::json;
    ExperimentReport sorted = r;
    sorted.sort_rows();
    json rows = json::array();
    for (const ReportRow& row : sorted.rows) {
        rows.push_back({{"method", row.method},
                        {"n", row.n},
                        {"metric", row.metric},
                        {"mean", row.mean ? json(*row.mean) : json(nullptr)},
                        {"stderr", row.std_error ? json(*row.std_error) : json(nullptr)},
                        {"reps", row.reps}});
    }
    json meta = {{"config_hash", r.config_hash}, {"seed", r.seed},           {"wall_time_s", r.wall_time_s},
                 {"notes", r.notes},             {"failures", r.failures}, {"attempted", r.attempted}};
    return {{"metadata", meta}, {"rows", rows}};
}

inline ExperimentReport report_from_json(const nlohmann::json& j) {
    ExperimentReport r;
    const auto& meta = j.at("metadata");
    r.config_hash = meta.at("config_hash").get<std::string>();
    r.seed = meta.at("seed").get<std::uint64_t>();
    r.wall_time_s = meta.at("wall_time_s").get<double>();
    r.notes = meta.at("notes").get<std::vector<std::string>>();
    r.failures = meta.at("failures").get<std::map<std::string, std::size_t>>();
    r.attempted = meta.at("attempted").get<std::size_t>();
    for (const auto& row : j.at("rows")) {
        ReportRow x;
        x.method = row.at("method").get<std::string>();
        x.n = row.at("n").get<std::size_t>();
        x.metric = row.at("metric").get<std::string>();
        if (!row.at("mean").is_null()) x.mean = row.at("mean").get<double>();
        if (!row.at("stderr").is_null()) x.std_error = row.at("stderr").get<double>();
        x.reps = row.at("reps").get<std::size_t>();
        r.rows.push_back(std::move(x));
    }
    return r;
}

/// Writes results.csv and results.json into `dir` (created if missing).
inline void emit_report(const ExperimentReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(std::filesystem::path(dir) / "results.csv", std::ios::binary);
        if (!f) throw DataError("cannot write " + dir + "/results.csv");
        f << report_csv(r);
    }
    {
        std::ofstream f(std::filesystem::path(dir) / "results.json", std::ios::binary);
        if (!f) throw DataError("cannot write " + dir + "/results.json");
        f << report_json(r).dump(2) << '\n';
    }
}

}  // namespace sdm
