#pragma once

// Experiment configuration (TOML). Unknown keys and invalid values are errors;
// validation collects every problem before throwing.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <toml.hpp>

#include "sdm/core.hpp"

namespace sdm {

class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid configuration:";
        for (const auto& x : p) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"sdm", "sdm_pessimistic", "sdm_logistic", "dm_bayes", "dm_freq",
                                            "ips", "snips",           "dr",           "mips",     "pc"};
    return m;
}

inline const std::vector<std::string>& known_metrics() {
    static const std::vector<std::string> m{"bso",    "bmse",     "relative_reward", "mse_ope",
                                            "bounds", "coverage", "explicit_bound"};
    return m;
}

struct ExperimentConfig {
    std::string scenario = "synthetic_linear";  ///< synthetic_linear | synthetic_logistic | ratings
    std::uint64_t seed = 0;
    std::size_t reps = 50;
    std::size_t workers = 1;
    std::vector<std::size_t> n{100, 1000};
    std::vector<std::string> methods{"sdm", "dm_bayes"};
    std::vector<std::string> metrics{"relative_reward"};
    std::string output_dir = "results";
    double max_failure_fraction = 0.1;
    std::size_t eval_contexts = 1000;

    // [dims]
    std::int64_t d = 10;
    std::int64_t d_latent = 10;
    std::size_t K = 100;

    // [environment]
    double latent_var = 3.0;
    double action_var = 1.0;
    double noise_sd = 1.0;
    double context_scale = 1.0;

    // [logging]
    std::string logging_policy = "uniform";  ///< uniform | epsilon_greedy (on theta*)
    double logging_epsilon = 0.5;

    // [misspecification]
    std::string misspec_target = "none";  ///< none | prior | likelihood
    double misspec_v = 0.0;
    double misspec_width = 0.5;

    // [estimators]
    double clip = 0.0;
    double ridge = 1.0;
    std::size_t mips_clusters = 10;
    std::size_t pc_neighbors = 5;
    std::size_t opl_steps = 2000;
    double opl_step_size = 0.1;
    double pessimism_delta = 0.1;
    double target_epsilon = 0.5;
    double coverage_delta = 0.1;
    std::size_t bmse_probes = 20;

    // [ratings]
    std::string ratings_path;
    std::string ratings_preprocess = "none";  ///< none | kuairec
    std::int64_t ratings_rank = 5;
    std::size_t ratings_clusters = 5;
    std::size_t ratings_max_users = 1000;
    std::size_t ratings_max_items = 0;  ///< 0 = all
    int als_iterations = 50;
    double als_reg = 1e-2;
    int gmm_iterations = 100;

    bool has_method(const std::string& m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }
    bool has_metric(const std::string& m) const { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); }
};

namespace detail {

class TomlReader {
public:
    explicit TomlReader(std::vector<std::string>& problems) : problems_(problems) {}

    void check_keys(const toml::table& t, const std::string& prefix, const std::set<std::string>& allowed) {
        for (auto&& [k, v] : t) {
            const std::string key(k.str());
            if (!allowed.count(key)) problems_.push_back("unknown key '" + prefix + key + "'");
        }
    }

    template <class T>
    void get(const toml::table& t, const std::string& prefix, const std::string& key, T& out) {
        const toml::node* n = t.get(key);
        if (!n) return;
        const std::string name = prefix + key;
        if constexpr (std::is_same_v<T, std::string>) {
            if (auto v = n->value<std::string>()) out = *v;
            else problems_.push_back("'" + name + "' must be a string");
        } else if constexpr (std::is_same_v<T, double>) {
            if (n->is_number()) out = *n->value<double>();
            else problems_.push_back("'" + name + "' must be a number");
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            const toml::array* a = n->as_array();
            if (!a) {
                problems_.push_back("'" + name + "' must be an array of strings");
                return;
            }
            out.clear();
            for (auto&& e : *a) {
                if (auto v = e.value<std::string>()) out.push_back(*v);
                else problems_.push_back("'" + name + "' must contain only strings");
            }
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            const toml::array* a = n->as_array();
            if (!a) {
                problems_.push_back("'" + name + "' must be an array of integers");
                return;
            }
            out.clear();
            for (auto&& e : *a) {
                if (e.is_integer() && *e.value<std::int64_t>() >= 0)
                    out.push_back(static_cast<std::size_t>(*e.value<std::int64_t>()));
                else
                    problems_.push_back("'" + name + "' must contain only non-negative integers");
            }
        } else {
            if (!n->is_integer()) {
                problems_.push_back("'" + name + "' must be an integer");
                return;
            }
            const std::int64_t v = *n->value<std::int64_t>();
            if constexpr (std::is_unsigned_v<T>) {
                if (v < 0) {
                    problems_.push_back("'" + name + "' must be non-negative");
                    return;
                }
            }
            out = static_cast<T>(v);
        }
    }

    const toml::table* section(const toml::table& root, const std::string& name) {
        const toml::node* n = root.get(name);
        if (!n) return nullptr;
        if (!n->is_table()) {
            problems_.push_back("'" + name + "' must be a table");
            return nullptr;
        }
        return n->as_table();
    }

private:
    std::vector<std::string>& problems_;
};

}  // namespace detail

/// Field-level validation; returns the list of problems (empty when valid).
inline std::vector<std::string> validate_config(const ExperimentConfig& c) {
    std::vector<std::string> p;
    auto in = [](const std::string& v, std::initializer_list<const char*> opts) {
        return std::any_of(opts.begin(), opts.end(), [&](const char* o) { return v == o; });
    };
    if (!in(c.scenario, {"synthetic_linear", "synthetic_logistic", "ratings"}))
        p.push_back("'scenario' must be one of synthetic_linear, synthetic_logistic, ratings");
    if (c.reps < 1) p.push_back("'reps' must be at least 1");
    if (c.workers < 1) p.push_back("'workers' must be at least 1");
    if (c.n.empty()) p.push_back("'n' must be a non-empty list");
    for (std::size_t i = 1; i < c.n.size(); ++i)
        if (c.n[i] <= c.n[i - 1]) {
            p.push_back("'n' must be strictly ascending");
            break;
        }
    if (c.methods.empty()) p.push_back("'methods' must be non-empty");
    std::set<std::string> seen;
    for (const auto& m : c.methods) {
        if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end())
            p.push_back("'methods' contains unknown method '" + m + "'");
        if (!seen.insert(m).second) p.push_back("'methods' lists '" + m + "' twice");
    }
    if (c.metrics.empty()) p.push_back("'metrics' must be non-empty");
    seen.clear();
    for (const auto& m : c.metrics) {
        if (std::find(known_metrics().begin(), known_metrics().end(), m) == known_metrics().end())
            p.push_back("'metrics' contains unknown metric '" + m + "'");
        if (!seen.insert(m).second) p.push_back("'metrics' lists '" + m + "' twice");
    }
    if (!(c.max_failure_fraction >= 0.0 && c.max_failure_fraction <= 1.0))
        p.push_back("'max_failure_fraction' must lie in [0, 1]");
    if (c.eval_contexts < 1) p.push_back("'eval_contexts' must be at least 1");
    if (c.scenario != "ratings") {
        if (c.d < 1) p.push_back("'dims.d' must be positive");
        if (c.d_latent < 1) p.push_back("'dims.d_latent' must be positive");
    }
    if (c.K < 1) p.push_back("'dims.K' must be positive");
    if (!(c.latent_var > 0.0)) p.push_back("'environment.latent_var' must be positive");
    if (!(c.action_var > 0.0)) p.push_back("'environment.action_var' must be positive");
    if (!(c.noise_sd > 0.0)) p.push_back("'environment.noise_sd' must be positive");
    if (!(c.context_scale > 0.0)) p.push_back("'environment.context_scale' must be positive");
    if (!in(c.logging_policy, {"uniform", "epsilon_greedy"}))
        p.push_back("'logging.policy' must be uniform or epsilon_greedy");
    if (!(c.logging_epsilon > 0.0 && c.logging_epsilon <= 1.0))
        p.push_back("'logging.epsilon' must lie in (0, 1] so every action has positive propensity");
    if (!in(c.misspec_target, {"none", "prior", "likelihood"}))
        p.push_back("'misspecification.target' must be none, prior or likelihood");
    if (!(c.misspec_width >= 0.0)) p.push_back("'misspecification.width' must be non-negative");
    if (c.misspec_target == "likelihood" && c.scenario == "ratings")
        p.push_back("'misspecification.target = likelihood' is only available for synthetic scenarios");
    if (!(c.clip >= 0.0 && c.clip <= 1.0)) p.push_back("'estimators.clip' must lie in [0, 1]");
    if (!(c.ridge >= 0.0)) p.push_back("'estimators.ridge' must be non-negative");
    if (c.mips_clusters < 1) p.push_back("'estimators.mips_clusters' must be at least 1");
    if (c.pc_neighbors < 1) p.push_back("'estimators.pc_neighbors' must be at least 1");
    if (!(c.opl_step_size > 0.0)) p.push_back("'estimators.opl_step_size' must be positive");
    if (!(c.pessimism_delta > 0.0 && c.pessimism_delta < 1.0))
        p.push_back("'estimators.pessimism_delta' must lie in (0, 1)");
    if (!(c.target_epsilon >= 0.0 && c.target_epsilon <= 1.0))
        p.push_back("'estimators.target_epsilon' must lie in [0, 1]");
    if (!(c.coverage_delta > 0.0 && c.coverage_delta < 1.0))
        p.push_back("'estimators.coverage_delta' must lie in (0, 1)");
    if (c.bmse_probes < 1) p.push_back("'estimators.bmse_probes' must be at least 1");
    const bool binary = c.scenario == "synthetic_logistic" || c.misspec_target == "likelihood";
    if (c.has_method("sdm_logistic") && !binary)
        p.push_back("method 'sdm_logistic' needs binary rewards (synthetic_logistic or likelihood misspecification)");
    if (c.scenario == "ratings") {
        if (c.ratings_path.empty()) p.push_back("'ratings.path' is required for the ratings scenario");
        if (!in(c.ratings_preprocess, {"none", "kuairec"})) p.push_back("'ratings.preprocess' must be none or kuairec");
        if (c.ratings_rank < 1) p.push_back("'ratings.rank' must be positive");
        if (c.ratings_clusters < 1) p.push_back("'ratings.clusters' must be at least 1");
        if (c.ratings_max_users < 1) p.push_back("'ratings.max_users' must be at least 1");
        if (c.als_iterations < 1) p.push_back("'ratings.als_iterations' must be at least 1");
        if (!(c.als_reg >= 0.0)) p.push_back("'ratings.als_reg' must be non-negative");
        if (c.gmm_iterations < 1) p.push_back("'ratings.gmm_iterations' must be at least 1");
    }
    return p;
}

/// Reads a parsed TOML table into a config; throws ConfigError listing every problem.
inline ExperimentConfig config_from_toml(const toml::table& root) {
    std::vector<std::string> problems;
    detail::TomlReader rd(problems);
    ExperimentConfig c;
    rd.check_keys(root, "",
                  {"scenario", "seed", "reps", "workers", "n", "methods", "metrics", "output_dir",
                   "max_failure_fraction", "eval_contexts", "dims", "environment", "logging", "misspecification",
                   "estimators", "ratings"});
    rd.get(root, "", "scenario", c.scenario);
    {
        std::int64_t seed = 0;
        if (const toml::node* s = root.get("seed")) {
            if (s->is_integer()) {
                seed = *s->value<std::int64_t>();
                if (seed < 0) problems.push_back("'seed' must be non-negative");
                c.seed = static_cast<std::uint64_t>(seed);
            } else {
                problems.push_back("'seed' must be an integer");
            }
        }
    }
    rd.get(root, "", "reps", c.reps);
    rd.get(root, "", "workers", c.workers);
    rd.get(root, "", "n", c.n);
    rd.get(root, "", "methods", c.methods);
    rd.get(root, "", "metrics", c.metrics);
    rd.get(root, "", "output_dir", c.output_dir);
    rd.get(root, "", "max_failure_fraction", c.max_failure_fraction);
    rd.get(root, "", "eval_contexts", c.eval_contexts);
    if (const toml::table* t = rd.section(root, "dims")) {
        rd.check_keys(*t, "dims.", {"d", "d_latent", "K"});
        rd.get(*t, "dims.", "d", c.d);
        rd.get(*t, "dims.", "d_latent", c.d_latent);
        rd.get(*t, "dims.", "K", c.K);
    }
    if (const toml::table* t = rd.section(root, "environment")) {
        rd.check_keys(*t, "environment.", {"latent_var", "action_var", "noise_sd", "context_scale"});
        rd.get(*t, "environment.", "latent_var", c.latent_var);
        rd.get(*t, "environment.", "action_var", c.action_var);
        rd.get(*t, "environment.", "noise_sd", c.noise_sd);
        rd.get(*t, "environment.", "context_scale", c.context_scale);
    }
    if (const toml::table* t = rd.section(root, "logging")) {
        rd.check_keys(*t, "logging.", {"policy", "epsilon"});
        rd.get(*t, "logging.", "policy", c.logging_policy);
        rd.get(*t, "logging.", "epsilon", c.logging_epsilon);
    }
    if (const toml::table* t = rd.section(root, "misspecification")) {
        rd.check_keys(*t, "misspecification.", {"target", "v", "width"});
        rd.get(*t, "misspecification.", "target", c.misspec_target);
        rd.get(*t, "misspecification.", "v", c.misspec_v);
        rd.get(*t, "misspecification.", "width", c.misspec_width);
    }
    if (const toml::table* t = rd.section(root, "estimators")) {
        rd.check_keys(*t, "estimators.",
                      {"clip", "ridge", "mips_clusters", "pc_neighbors", "opl_steps", "opl_step_size",
                       "pessimism_delta", "target_epsilon", "coverage_delta", "bmse_probes"});
        rd.get(*t, "estimators.", "clip", c.clip);
        rd.get(*t, "estimators.", "ridge", c.ridge);
        rd.get(*t, "estimators.", "mips_clusters", c.mips_clusters);
        rd.get(*t, "estimators.", "pc_neighbors", c.pc_neighbors);
        rd.get(*t, "estimators.", "opl_steps", c.opl_steps);
        rd.get(*t, "estimators.", "opl_step_size", c.opl_step_size);
        rd.get(*t, "estimators.", "pessimism_delta", c.pessimism_delta);
        rd.get(*t, "estimators.", "target_epsilon", c.target_epsilon);
        rd.get(*t, "estimators.", "coverage_delta", c.coverage_delta);
        rd.get(*t, "estimators.", "bmse_probes", c.bmse_probes);
    }
    if (const toml::table* t = rd.section(root, "ratings")) {
        rd.check_keys(*t, "ratings.",
                      {"path", "preprocess", "rank", "clusters", "max_users", "max_items", "als_iterations", "als_reg",
                       "gmm_iterations"});
        rd.get(*t, "ratings.", "path", c.ratings_path);
        rd.get(*t, "ratings.", "preprocess", c.ratings_preprocess);
        rd.get(*t, "ratings.", "rank", c.ratings_rank);
        rd.get(*t, "ratings.", "clusters", c.ratings_clusters);
        rd.get(*t, "ratings.", "max_users", c.ratings_max_users);
        rd.get(*t, "ratings.", "max_items", c.ratings_max_items);
        rd.get(*t, "ratings.", "als_iterations", c.als_iterations);
        rd.get(*t, "ratings.", "als_reg", c.als_reg);
        rd.get(*t, "ratings.", "gmm_iterations", c.gmm_iterations);
    }
    if (problems.empty()) {
        auto more = validate_config(c);
        problems.insert(problems.end(), more.begin(), more.end());
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return c;
}

inline ExperimentConfig parse_config(std::string_view text, const std::string& source = "config") {
    try {
        return config_from_toml(toml::parse(text, source));
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        throw ConfigError({os.str()});
    }
}

inline ExperimentConfig load_config(const std::string& path) {
    try {
        return config_from_toml(toml::parse_file(path));
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << path << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
        throw ConfigError({os.str()});
    }
}

/// Canonical single-line text of the effective configuration (used for hashing).
inline std::string canonical_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    auto list = [&](const auto& v) {
        os << '[';
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
        os << ']';
    };
    os << "scenario=" << c.scenario << ";seed=" << c.seed << ";reps=" << c.reps << ";n=";
    list(c.n);
    os << ";methods=";
    list(c.methods);
    os << ";metrics=";
    list(c.metrics);
    os << ";max_failure_fraction=" << c.max_failure_fraction << ";eval_contexts=" << c.eval_contexts << ";d=" << c.d
       << ";d_latent=" << c.d_latent << ";K=" << c.K << ";latent_var=" << c.latent_var << ";action_var=" << c.action_var
       << ";noise_sd=" << c.noise_sd << ";context_scale=" << c.context_scale << ";logging=" << c.logging_policy << ":"
       << c.logging_epsilon << ";misspec=" << c.misspec_target << ":" << c.misspec_v << ":" << c.misspec_width
       << ";clip=" << c.clip << ";ridge=" << c.ridge << ";mips_clusters=" << c.mips_clusters
       << ";pc_neighbors=" << c.pc_neighbors << ";opl=" << c.opl_steps << ":" << c.opl_step_size
       << ";pessimism_delta=" << c.pessimism_delta << ";target_epsilon=" << c.target_epsilon
       << ";coverage_delta=" << c.coverage_delta << ";bmse_probes=" << c.bmse_probes;
    if (c.scenario == "ratings")
        os << ";ratings=" << c.ratings_path << ":" << c.ratings_preprocess << ":" << c.ratings_rank << ":"
           << c.ratings_clusters << ":" << c.ratings_max_users << ":" << c.ratings_max_items << ":" << c.als_iterations
           << ":" << c.als_reg << ":" << c.gmm_iterations;
    return os.str();
}

/// 64-bit FNV-1a as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : canonical_config(c)) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace sdm
