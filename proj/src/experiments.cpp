#include "ivr/experiments.hpp"

#include "ivr/exact_solver.hpp"
#include "ivr/extrema.hpp"
#include "ivr/regularizers.hpp"
#include "ivr/report.hpp"

#include <fmt/format.h>

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace ivr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Exceptions are caught
/// per cell and reported through `on_error`.
template <typename Fn, typename OnError>
void run_parallel(std::size_t n, int jobs, Fn&& fn, OnError&& on_error) {
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    auto worker = [&]() {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                on_error(i, e.what());
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min<std::size_t>(n, static_cast<std::size_t>(jobs)));
    if (threads == 1) {
        worker();
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

const std::set<std::string>& learner_keys() {
    static const std::set<std::string> keys{
        "steps",         "batch_size",    "lr",           "lr_v",         "lr_q",
        "lr_pi",         "lambda",        "double_q",     "eql_clip",     "eql_residual_scale",
        "eql_exp_normalize", "sql_drop_one_plus", "beta_awr", "cql_weight", "checkpoint_every",
        "eval_cap",      "eval_episodes", "iql_weight_cap", "alpha",      "tau",
        "sql_alpha",     "eql_alpha",     "sql_u_alpha",  "iql_tau"};
    return keys;
}

std::set<std::string> with_learner_keys(std::set<std::string> keys) {
    keys.insert(learner_keys().begin(), learner_keys().end());
    return keys;
}

std::vector<Algo> parse_algos(const std::vector<std::string>& names) {
    if (names.empty()) throw InvalidArgument("algorithm list is empty");
    std::vector<Algo> out;
    for (const auto& n : names) out.push_back(algo_from_name(n));
    return out;
}

std::vector<bool> visited_states(const OfflineDataset& data) {
    std::vector<bool> visited(static_cast<std::size_t>(data.meta.n_states), false);
    for (const auto& t : data.transitions) visited[static_cast<std::size_t>(t.s)] = true;
    return visited;
}

bool is_value_learner(Algo a) { return a != Algo::kCql && a != Algo::kOosQ; }

double param_of(const LearnerConfig& c) { return c.algo == Algo::kIql ? c.tau : c.alpha; }

void check_seeds(const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw InvalidArgument("seed list is empty");
}

}  // namespace

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? ";" : "") + std::to_string(seeds[i]);
    return out;
}

std::string Params::get_string(const std::string& key, const std::string& fallback) {
    const std::string v = src_.get_string(key, fallback);
    used_[key] = v;
    return v;
}

double Params::get_double(const std::string& key, double fallback) {
    const double v = src_.get_double(key, fallback);
    used_[key] = format_number(v);
    return v;
}

std::int64_t Params::get_int(const std::string& key, std::int64_t fallback) {
    const std::int64_t v = src_.get_int(key, fallback);
    used_[key] = std::to_string(v);
    return v;
}

bool Params::get_bool(const std::string& key, bool fallback) {
    const bool v = src_.get_bool(key, fallback);
    used_[key] = v ? "true" : "false";
    return v;
}

std::vector<double> Params::get_doubles(const std::string& key, const std::vector<double>& fallback) {
    const auto v = src_.get_doubles(key, fallback);
    std::vector<std::string> text;
    for (double x : v) text.push_back(format_number(x));
    used_[key] = join(text);
    return v;
}

std::vector<std::string> Params::get_strings(const std::string& key, const std::vector<std::string>& fallback) {
    const auto v = src_.get_strings(key, fallback);
    used_[key] = join(v);
    return v;
}

std::vector<std::uint64_t> Params::get_seeds(const std::string& key, const std::vector<std::uint64_t>& fallback) {
    const auto v = src_.get_seeds(key, fallback);
    std::vector<std::string> text;
    for (auto x : v) text.push_back(std::to_string(x));
    used_[key] = join(text);
    return v;
}

std::uint64_t Params::hash() const {
    std::string canon;
    for (const auto& [k, v] : used_) canon += k + "=" + v + "\n";
    return fnv1a(canon);
}

const std::map<std::string, std::set<std::string>>& known_config_keys() {
    static const std::map<std::string, std::set<std::string>> keys{
        {"solve",
         {"env", "states", "actions", "gamma", "branching", "env_seed", "model", "dataset", "regularizer", "alpha",
          "tol", "max_iter", "n_traj", "cap", "seeds"}},
        {"fourrooms", with_learner_keys({"algos", "n_traj", "cap", "seeds"})},
        {"noisy", with_learner_keys({"algos", "ratios", "total", "epsilon", "cap", "seeds"})},
        {"smalldata",
         with_learner_keys({"algos", "levels", "hardness", "total", "expert_ratio", "epsilon", "cap", "seeds",
                            "features"})},
        {"toy", {"n_points", "noise_sigma", "bins", "alphas", "taus", "seeds"}},
        {"sweep", with_learner_keys({"env", "algos", "alphas", "n_traj", "cap", "seeds"})},
        {"train",
         with_learner_keys({"env", "states", "actions", "gamma", "branching", "env_seed", "algo", "dataset",
                            "parametrization", "features", "n_traj", "cap", "seeds"})},
    };
    return keys;
}

TabularMDP make_env(Params& params) {
    const std::string env = params.get_string("env", "fourrooms");
    if (env == "fourrooms") return build_four_rooms();
    if (env == "random") {
        const auto states = params.get_int("states", 8);
        const auto actions = params.get_int("actions", 3);
        const double gamma = params.get_double("gamma", 0.9);
        const auto branching = params.get_int("branching", 3);
        const auto env_seed = params.get_int("env_seed", 0);
        if (env_seed < 0) throw InvalidArgument("env_seed must be nonnegative");
        return make_random_mdp(states, actions, gamma, static_cast<std::uint64_t>(env_seed), branching);
    }
    throw InvalidArgument("unknown env '" + env + "'");
}

OfflineDataset uniform_behavior_data(const TabularMDP& mdp, int n_traj, int cap, std::uint64_t seed) {
    CollectOptions opts;
    opts.n_traj = n_traj;
    opts.cap = cap;
    opts.seed = seed;
    opts.start_dist = uniform_nonterminal_starts(mdp);
    opts.policy_name = "uniform";
    return collect(mdp, Policy::uniform(mdp.n_states, mdp.n_actions), opts);
}

OfflineDataset collect_at_least(const TabularMDP& mdp, const Policy& behavior, std::size_t size, int cap,
                                std::uint64_t seed, const std::string& name) {
    OfflineDataset out;
    for (int chunk = 0; out.size() < size; ++chunk) {
        if (chunk > 100000) throw Error("collect_at_least made no progress");
        CollectOptions opts;
        opts.n_traj = 64;
        opts.cap = cap;
        opts.seed = substream_seed(seed, fmt::format("{}:{}", name, chunk));
        opts.start_dist = uniform_nonterminal_starts(mdp);
        opts.policy_name = name;
        OfflineDataset part = collect(mdp, behavior, opts);
        if (chunk == 0) out.meta = part.meta;
        out.transitions.insert(out.transitions.end(), part.transitions.begin(), part.transitions.end());
    }
    out.meta.seed = seed;
    return out;
}

namespace {

/// Temperatures used on the Four Rooms experiments unless configured.
void four_rooms_presets(Params& p) {
    p.set_default("sql_alpha", "0.5");
    p.set_default("sql_u_alpha", "0.5");
    p.set_default("eql_alpha", "0.5");
    p.set_default("iql_tau", "0.9");
}

}  // namespace

Policy epsilon_greedy(const Policy& greedy, double epsilon) {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidArgument("epsilon must lie in [0, 1]");
    Policy out = greedy;
    out.probs = (1.0 - epsilon) * greedy.probs +
                Matrix::Constant(greedy.n_states(), greedy.n_actions(), epsilon / greedy.n_actions());
    return out;
}

LearnerConfig learner_from_params(Params& p, Algo algo, Parametrization parametrization,
                                  std::optional<FeatureMap> features) {
    LearnerConfig c = default_config(algo, parametrization);
    c.features = std::move(features);
    c.steps = p.get_int("steps", c.steps);
    c.batch_size = static_cast<int>(p.get_int("batch_size", c.batch_size));
    const double lr = p.get_double("lr", c.lr_v);
    c.lr_v = p.get_double("lr_v", lr);
    c.lr_q = p.get_double("lr_q", lr);
    c.lr_pi = p.get_double("lr_pi", lr);
    c.soft_update_lambda = p.get_double("lambda", c.soft_update_lambda);
    c.double_q = p.get_bool("double_q", c.double_q);
    c.eql_clip = p.get_double("eql_clip", c.eql_clip);
    c.eql_residual_scale = p.get_double("eql_residual_scale", c.eql_residual_scale);
    c.eql_exp_normalize = p.get_bool("eql_exp_normalize", c.eql_exp_normalize);
    c.sql_drop_one_plus = p.get_bool("sql_drop_one_plus", c.sql_drop_one_plus);
    c.beta_awr = p.get_double("beta_awr", c.beta_awr);
    c.cql_weight = p.get_double("cql_weight", c.cql_weight);
    c.iql_weight_cap = p.get_double("iql_weight_cap", c.iql_weight_cap);
    c.checkpoint_every = p.get_int("checkpoint_every", c.checkpoint_every);
    c.eval_cap = static_cast<int>(p.get_int("eval_cap", c.eval_cap));
    c.eval_episodes = static_cast<int>(p.get_int("eval_episodes", c.eval_episodes));
    const double alpha = p.get_double("alpha", c.alpha);
    c.alpha = p.get_double(to_string(algo) + "_alpha", alpha);
    const double tau = p.get_double("tau", c.tau);
    c.tau = p.get_double("iql_tau", tau);
    c.validate();
    return c;
}

double exact_return(const TabularMDP& mdp, const Policy& pi) {
    return mdp.initial_dist.dot(policy_evaluation(mdp, pi, 1e-12).v);
}

Anchors compute_anchors(const TabularMDP& mdp) {
    Anchors a;
    a.random_return = exact_return(mdp, Policy::uniform(mdp.n_states, mdp.n_actions));
    a.oracle_return = exact_return(mdp, value_iteration(mdp, 1e-12).greedy);
    return a;
}

Policy acting_policy(const LearnerState& state, const LearnerConfig& config, const OfflineDataset& data) {
    const Policy extracted = extract_policy(state, config, data);
    if (!state.features.is_tabular() || !is_value_learner(config.algo)) return Policy::greedy(extracted.probs);
    // Tabular value learners act on Q restricted to the dataset actions; the
    // other table entries never receive an update.
    const EmpiricalModel emp = empirical_model(data);
    const Matrix q = state.target_min_table();
    Policy pi = extracted;
    for (Index s = 0; s < pi.n_states(); ++s) {
        if (!emp.visited[static_cast<std::size_t>(s)]) continue;
        Index best = -1;
        for (Index a = 0; a < pi.n_actions(); ++a)
            if (emp.supported(s, a) && (best < 0 || q(s, a) > q(s, best))) best = a;
        pi.probs.row(s).setZero();
        pi.probs(s, best) = 1.0;
    }
    return pi;
}

ExperimentResult<FourRoomsRow> fourrooms_experiment(Params& p, int jobs) {
    four_rooms_presets(p);
    const auto algos = parse_algos(p.get_strings("algos", {"sql", "eql", "iql"}));
    const int n_traj = static_cast<int>(p.get_int("n_traj", 30));
    const int cap = static_cast<int>(p.get_int("cap", 20));
    std::vector<LearnerConfig> configs;
    for (Algo a : algos) {
        LearnerConfig c = learner_from_params(p, a, Parametrization::kTabular);
        configs.push_back(c);
    }
    // The sql settings used for the gap of the three-table scheme.
    LearnerConfig sql_reference = learner_from_params(p, Algo::kSql, Parametrization::kTabular);
    ExperimentResult<FourRoomsRow> result;
    result.seeds = p.get_seeds("seeds", {0, 1, 2, 3, 4});
    check_seeds(result.seeds);
    result.config_hash = p.hash();

    const TabularMDP mdp = build_four_rooms();
    const ValueSolution oracle = value_iteration(mdp, 1e-12);
    const std::size_t n_cells = result.seeds.size() * algos.size();
    std::vector<std::optional<FourRoomsRow>> rows(n_cells);
    std::vector<std::vector<MetricsRow>> traces(n_cells);
    run_parallel(
        n_cells, jobs,
        [&](std::size_t i) {
            const std::uint64_t seed = result.seeds[i / algos.size()];
            LearnerConfig cfg = configs[i % algos.size()];
            cfg.seed = seed;
            const OfflineDataset data = uniform_behavior_data(mdp, n_traj, cap, substream_seed(seed, "data"));
            const LearnerState st = train(data, cfg, &mdp);
            const auto visited = visited_states(data);
            const Policy pi = acting_policy(st, cfg, data);
            FourRoomsRow row;
            row.seed = seed;
            row.algo = to_string(cfg.algo);
            row.param = param_of(cfg);
            row.transitions = data.size();
            row.success = rollout(mdp, pi, cfg.eval_episodes, cfg.eval_cap, substream_seed(seed, "eval")).success_rate;
            row.ret = exact_return(mdp, pi);
            const Vector v = st.v_table();
            row.u_gap = kNaN;
            LearnerState reference;
            if (cfg.algo == Algo::kSqlU) {
                LearnerConfig ref = sql_reference;
                ref.alpha = cfg.alpha;
                ref.seed = seed;
                reference = train(data, ref);
            }
            const Vector u = st.u_table();
            const Vector v_sql = cfg.algo == Algo::kSqlU ? reference.v_table() : Vector();
            double gap = 0.0;
            for (Index s = 0; s < mdp.n_states; ++s) {
                if (!visited[static_cast<std::size_t>(s)]) continue;
                ++row.visited;
                row.value_error = std::max(row.value_error, std::abs(v[s] - oracle.v[s]));
                if (cfg.algo == Algo::kSqlU) gap = std::max(gap, std::abs(u[s] - (v_sql[s] - cfg.alpha)));
            }
            if (cfg.algo == Algo::kSqlU) row.u_gap = gap;
            rows[i] = row;
            traces[i] = st.trace;
        },
        [&](std::size_t i, const std::string& what) {
            result.failures.push_back({fmt::format("seed={} algo={}", result.seeds[i / algos.size()],
                                                   to_string(algos[i % algos.size()])),
                                       what});
        });
    for (std::size_t i = 0; i < n_cells; ++i) {
        if (!rows[i]) continue;
        result.traces[fmt::format("{}_seed{}", rows[i]->algo, rows[i]->seed)] = traces[i];
        result.rows.push_back(*rows[i]);
    }
    return result;
}

ExperimentResult<NoisyRow> noisy_experiment(Params& p, int jobs) {
    four_rooms_presets(p);
    const auto algos = parse_algos(p.get_strings("algos", {"sql", "eql", "iql"}));
    const auto ratios = p.get_doubles("ratios", {0.01, 0.05, 0.1, 0.2, 0.3});
    if (ratios.empty()) throw InvalidArgument("ratio list is empty");
    for (double r : ratios)
        if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument("ratios must lie in [0, 1]");
    const auto total = p.get_int("total", 10000);
    if (total <= 0) throw InvalidArgument("total must be positive");
    const double epsilon = p.get_double("epsilon", 0.1);
    const int cap = static_cast<int>(p.get_int("cap", 20));
    std::vector<LearnerConfig> configs;
    for (Algo a : algos) configs.push_back(learner_from_params(p, a, Parametrization::kTabular));
    ExperimentResult<NoisyRow> result;
    result.seeds = p.get_seeds("seeds", {0, 1, 2, 3, 4});
    check_seeds(result.seeds);
    result.config_hash = p.hash();

    const TabularMDP mdp = build_four_rooms();
    const Anchors anchors = compute_anchors(mdp);
    const Policy expert = epsilon_greedy(value_iteration(mdp, 1e-12).greedy, epsilon);
    const Policy uniform = Policy::uniform(mdp.n_states, mdp.n_actions);
    const std::size_t per_seed = ratios.size() * algos.size();
    const std::size_t n_cells = result.seeds.size() * per_seed;
    std::vector<std::optional<NoisyRow>> rows(n_cells);
    auto describe_cell = [&](std::size_t i) {
        return fmt::format("seed={} ratio={} algo={}", result.seeds[i / per_seed],
                           format_number(ratios[(i % per_seed) / algos.size()]), to_string(algos[i % algos.size()]));
    };
    run_parallel(
        n_cells, jobs,
        [&](std::size_t i) {
            const std::uint64_t seed = result.seeds[i / per_seed];
            const double ratio = ratios[(i % per_seed) / algos.size()];
            LearnerConfig cfg = configs[i % algos.size()];
            cfg.seed = seed;
            const auto size = static_cast<std::size_t>(total);
            const OfflineDataset expert_pool =
                collect_at_least(mdp, expert, size, cap, substream_seed(seed, "expert"), "expert");
            const OfflineDataset random_pool =
                collect_at_least(mdp, uniform, size, cap, substream_seed(seed, "random"), "random");
            const OfflineDataset data = mix(expert_pool, random_pool, ratio, size, substream_seed(seed, "mix"));
            const LearnerState st = train(data, cfg);
            const Policy pi = acting_policy(st, cfg, data);
            NoisyRow row;
            row.seed = seed;
            row.ratio = ratio;
            row.algo = to_string(cfg.algo);
            row.transitions = data.size();
            row.ret = exact_return(mdp, pi);
            row.nr = anchors.normalized(row.ret);
            row.success = rollout(mdp, pi, cfg.eval_episodes, cfg.eval_cap, substream_seed(seed, "eval")).success_rate;
            rows[i] = row;
        },
        [&](std::size_t i, const std::string& what) { result.failures.push_back({describe_cell(i), what}); });
    for (auto& r : rows)
        if (r) result.rows.push_back(*r);
    return result;
}

ExperimentResult<SmallDataRow> smalldata_experiment(Params& p, int jobs) {
    four_rooms_presets(p);
    const auto algos = parse_algos(p.get_strings("algos", {"sql", "eql", "oos_q", "cql"}));
    const auto levels = p.get_strings("levels", {"vanilla", "easy", "medium", "hard"});
    const auto hardness = p.get_doubles("hardness", {0.0, 0.25, 0.5, 0.75});
    if (levels.empty() || levels.size() != hardness.size())
        throw InvalidArgument("levels and hardness must be nonempty lists of equal length");
    for (double h : hardness)
        if (!(h >= 0.0)) throw InvalidArgument("hardness must be nonnegative");
    const auto total = p.get_int("total", 2000);
    if (total <= 0) throw InvalidArgument("total must be positive");
    const double expert_ratio = p.get_double("expert_ratio", 0.3);
    const double epsilon = p.get_double("epsilon", 0.1);
    const int cap = static_cast<int>(p.get_int("cap", 20));
    const std::string features = p.get_string("features", "coordinate");
    if (features != "coordinate" && features != "one_hot") throw InvalidArgument("features must be coordinate or one_hot");
    const TabularMDP mdp = build_four_rooms();
    const Parametrization param = features == "one_hot" ? Parametrization::kTabular : Parametrization::kLinear;
    std::vector<LearnerConfig> configs;
    for (Algo a : algos) {
        LearnerConfig c = learner_from_params(
            p, a, param,
            param == Parametrization::kLinear ? std::optional(make_coordinate_features(mdp)) : std::nullopt);
        configs.push_back(c);
    }
    ExperimentResult<SmallDataRow> result;
    result.seeds = p.get_seeds("seeds", {0, 1, 2, 3, 4});
    check_seeds(result.seeds);
    result.config_hash = p.hash();

    const Anchors anchors = compute_anchors(mdp);
    const Policy expert = epsilon_greedy(value_iteration(mdp, 1e-12).greedy, epsilon);
    const Policy uniform = Policy::uniform(mdp.n_states, mdp.n_actions);
    const std::size_t per_seed = levels.size() * algos.size();
    const std::size_t n_cells = result.seeds.size() * per_seed;
    std::vector<std::optional<SmallDataRow>> rows(n_cells);
    auto describe_cell = [&](std::size_t i) {
        return fmt::format("seed={} level={} algo={}", result.seeds[i / per_seed],
                           levels[(i % per_seed) / algos.size()], to_string(algos[i % algos.size()]));
    };
    run_parallel(
        n_cells, jobs,
        [&](std::size_t i) {
            const std::uint64_t seed = result.seeds[i / per_seed];
            const std::size_t level = (i % per_seed) / algos.size();
            LearnerConfig cfg = configs[i % algos.size()];
            cfg.seed = seed;
            const auto size = static_cast<std::size_t>(total);
            const OfflineDataset expert_pool =
                collect_at_least(mdp, expert, size, cap, substream_seed(seed, "expert"), "expert");
            const OfflineDataset random_pool =
                collect_at_least(mdp, uniform, size, cap, substream_seed(seed, "random"), "random");
            const OfflineDataset base = mix(expert_pool, random_pool, expert_ratio, size, substream_seed(seed, "mix"));
            const OfflineDataset data =
                distance_discard(base, *mdp.grid, hardness[level], substream_seed(seed, "discard"));
            SmallDataRow row;
            row.seed = seed;
            row.level = levels[level];
            row.hardness = hardness[level];
            row.algo = to_string(cfg.algo);
            row.kept = data.size();
            for (const auto& t : data.transitions)
                if (t.r > 0.0) ++row.reward_signals;
            try {
                const LearnerState st = train(data, cfg);
                const Policy pi = acting_policy(st, cfg, data);
                row.ret = exact_return(mdp, pi);
                row.nr = anchors.normalized(row.ret);
                row.success =
                    rollout(mdp, pi, cfg.eval_episodes, cfg.eval_cap, substream_seed(seed, "eval")).success_rate;
                row.bellman_error = st.trace.back().bellman_error;
            } catch (const DivergenceError&) {
                row.status = "diverged";
                row.ret = row.nr = row.success = kNaN;
                row.bellman_error = std::numeric_limits<double>::infinity();
            }
            rows[i] = row;
        },
        [&](std::size_t i, const std::string& what) { result.failures.push_back({describe_cell(i), what}); });
    for (auto& r : rows)
        if (r) result.rows.push_back(*r);
    return result;
}

ExperimentResult<SweepRow> sweep_experiment(Params& p, int jobs,
                                            const std::set<std::pair<std::string, std::uint64_t>>& done) {
    const std::string env = p.get_string("env", "fourrooms");
    if (env != "fourrooms") throw InvalidArgument("sweep supports env = fourrooms only");
    const int n_traj = static_cast<int>(p.get_int("n_traj", 30));
    const int cap = static_cast<int>(p.get_int("cap", 20));
    const auto names = p.get_strings("algos", {"sql"});
    const auto algos = parse_algos(names);
    std::vector<LearnerConfig> configs;
    for (Algo a : algos) configs.push_back(learner_from_params(p, a, Parametrization::kTabular));
    // Cell identity excludes the grid itself so that extending it keeps old cells.
    const std::uint64_t base_hash = p.hash();
    const auto alphas = p.get_doubles("alphas", {0.1, 0.5, 1.0, 2.0, 10.0});
    ExperimentResult<SweepRow> result;
    result.seeds = p.get_seeds("seeds", {0, 1, 2, 3, 4});
    if (alphas.empty() || result.seeds.empty()) throw InvalidArgument("sweep grid is empty");
    result.config_hash = p.hash();

    struct Cell {
        std::size_t algo;
        double alpha;
        std::uint64_t seed;
        std::string hash;
    };
    std::vector<Cell> cells;
    for (std::size_t a = 0; a < algos.size(); ++a)
        for (double alpha : alphas)
            for (std::uint64_t seed : result.seeds) {
                const std::string h = hex_hash(
                    fnv1a(fmt::format("{}|{}|{}", hex_hash(base_hash), to_string(algos[a]), format_number(alpha))));
                if (done.count({h, seed})) continue;
                cells.push_back({a, alpha, seed, h});
            }
    const TabularMDP mdp = build_four_rooms();
    std::vector<std::optional<SweepRow>> rows(cells.size());
    run_parallel(
        cells.size(), jobs,
        [&](std::size_t i) {
            const Cell& cell = cells[i];
            LearnerConfig cfg = configs[cell.algo];
            cfg.alpha = cell.alpha;
            cfg.seed = cell.seed;
            const OfflineDataset data = uniform_behavior_data(mdp, n_traj, cap, substream_seed(cell.seed, "data"));
            const LearnerState st = train(data, cfg);
            const Policy pi = acting_policy(st, cfg, data);
            SweepRow row;
            row.cell_hash = cell.hash;
            row.algo = to_string(cfg.algo);
            row.alpha = cell.alpha;
            row.seed = cell.seed;
            row.success = rollout(mdp, pi, cfg.eval_episodes, cfg.eval_cap, substream_seed(cell.seed, "eval")).success_rate;
            row.ret = exact_return(mdp, pi);
            row.sparsity_ratio = sparsity_ratio(st, data, cfg.alpha);
            rows[i] = row;
        },
        [&](std::size_t i, const std::string& what) {
            result.failures.push_back({fmt::format("algo={} alpha={} seed={}", to_string(algos[cells[i].algo]),
                                                   format_number(cells[i].alpha), cells[i].seed),
                                       what});
        });
    for (auto& r : rows)
        if (r) result.rows.push_back(*r);
    return result;
}

namespace {

Params section_params(const CommandOptions& options, const std::string& name) {
    Params p(options.config.section(name));
    if (options.seed) p.set("seeds", std::to_string(*options.seed));
    return p;
}

int report_failures(const std::vector<CellFailure>& failures, std::ostream& log) {
    for (const auto& f : failures) log << "failed cell " << f.cell << ": " << f.message << "\n";
    return failures.empty() ? 0 : 1;
}

int cmd_solve(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "solve");
    const TabularMDP mdp = make_env(p);
    const std::string model_kind = p.get_string("model", mdp.grid ? "empirical" : "true");
    const Regularizer reg = regularizer_from_name(p.get_string("regularizer", "chi_square"));
    const double alpha = p.get_double("alpha", 0.5);
    const double tol = p.get_double("tol", 1e-10);
    const auto max_iter = p.get_int("max_iter", 100000);
    if (max_iter < 1) throw InvalidArgument("max_iter must be positive");
    const auto seeds = p.get_seeds("seeds", {0});
    check_seeds(seeds);
    const std::uint64_t seed = seeds.front();
    RegularizedModel model;
    if (model_kind == "true") {
        model = model_from_mdp(mdp, Policy::uniform(mdp.n_states, mdp.n_actions));
    } else if (model_kind == "empirical") {
        const std::string path = p.get_string("dataset", "");
        OfflineDataset data;
        if (path.empty()) {
            data = uniform_behavior_data(mdp, static_cast<int>(p.get_int("n_traj", 30)),
                                       static_cast<int>(p.get_int("cap", 20)), substream_seed(seed, "data"));
        } else {
            data = load(path);
        }
        if (data.meta.n_states != mdp.n_states || data.meta.n_actions != mdp.n_actions)
            throw InvalidArgument("dataset shape does not match the environment");
        model = model_from_empirical(empirical_model(data));
    } else {
        throw InvalidArgument("model must be true or empirical");
    }
    const std::uint64_t hash = p.hash();
    const std::string seed_label = std::to_string(seed);
    SolutionTables sol;
    try {
        sol = solve_fixed_point(model, alpha, reg, tol, static_cast<int>(max_iter));
    } catch (const SolverError& e) {
        log << "solver failed at state " << e.state() << ": " << e.what() << "\n";
        return 3;
    } catch (const ConvergenceError& e) {
        log << "solver failed: " << e.what() << "\n";
        return 3;
    }
    const KktReport kkt = kkt_residual(sol, model, alpha, reg);
    CsvTable values;
    values.header = {"state", "U", "V"};
    for (Index s = 0; s < model.n_states; ++s)
        values.add({std::to_string(s), format_number(sol.u[s]), format_number(sol.v[s])});
    CsvTable actions;
    actions.header = {"state", "action", "Q", "pi"};
    for (Index s = 0; s < model.n_states; ++s)
        for (Index a = 0; a < model.n_actions; ++a)
            actions.add({std::to_string(s), std::to_string(a), format_number(sol.q(s, a)),
                         format_number(sol.pi.probs(s, a))});
    write_csv(options.out / "values.csv", values, hash, seed_label);
    write_csv(options.out / "actions.csv", actions, hash, seed_label);
    nlohmann::ordered_json doc;
    doc["config_hash"] = hex_hash(hash);
    doc["seed"] = seed;
    doc["regularizer"] = reg.name;
    doc["alpha"] = alpha;
    doc["iterations"] = sol.iterations;
    doc["final_residual"] = sol.residual_trace.empty() ? 0.0 : sol.residual_trace.back();
    doc["max_stationarity"] = kkt.max_stationarity;
    doc["max_slackness"] = kkt.max_slackness;
    doc["max_normalization"] = kkt.max_normalization;
    doc["max_support_violation"] = kkt.max_support_violation;
    doc["worst_state"] = kkt.worst_state;
    doc["excluded_states"] = sol.excluded_states;
    write_json(options.out / "kkt.json", doc);
    log << fmt::format("solved {} alpha={} in {} iterations; stationarity residual {:.3e}\n", reg.name,
                       format_number(alpha), sol.iterations, kkt.max_stationarity);
    return 0;
}

int cmd_fourrooms(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "fourrooms");
    const auto result = fourrooms_experiment(p, options.jobs);
    const std::string seeds = join_seeds(result.seeds);
    CsvTable t;
    t.header = {"seed", "algo", "param", "transitions", "visited", "success", "return", "value_error", "u_gap"};
    for (const auto& r : result.rows)
        t.add({std::to_string(r.seed), r.algo, format_number(r.param), std::to_string(r.transitions),
               std::to_string(r.visited), format_number(r.success), format_number(r.ret),
               format_number(r.value_error), format_number(r.u_gap)});
    write_csv(options.out / "fourrooms.csv", t, result.config_hash, seeds);
    for (const auto& [label, trace] : result.traces)
        write_csv(options.out / "metrics" / ("fourrooms_" + label + ".csv"), metrics_table(trace), result.config_hash,
                  seeds);
    for (const auto& r : result.rows)
        log << fmt::format("seed {} {:<6} success {} value error {:.4f}\n", r.seed, r.algo, format_number(r.success),
                           r.value_error);
    return report_failures(result.failures, log);
}

int cmd_noisy(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "noisy");
    const auto result = noisy_experiment(p, options.jobs);
    CsvTable t;
    t.header = {"seed", "ratio", "algo", "transitions", "return", "nr", "success"};
    for (const auto& r : result.rows)
        t.add({std::to_string(r.seed), format_number(r.ratio), r.algo, std::to_string(r.transitions),
               format_number(r.ret), format_number(r.nr), format_number(r.success)});
    write_csv(options.out / "noisy.csv", t, result.config_hash, join_seeds(result.seeds));
    log << fmt::format("noisy: {} rows\n", result.rows.size());
    return report_failures(result.failures, log);
}

int cmd_smalldata(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "smalldata");
    const auto result = smalldata_experiment(p, options.jobs);
    CsvTable t;
    t.header = {"seed", "level", "hardness", "algo", "kept", "reward_signals", "return", "nr", "success",
                "bellman_error", "status"};
    for (const auto& r : result.rows)
        t.add({std::to_string(r.seed), r.level, format_number(r.hardness), r.algo, std::to_string(r.kept),
               std::to_string(r.reward_signals), format_number(r.ret), format_number(r.nr), format_number(r.success),
               format_number(r.bellman_error), r.status});
    write_csv(options.out / "smalldata.csv", t, result.config_hash, join_seeds(result.seeds));
    log << fmt::format("smalldata: {} rows\n", result.rows.size());
    return report_failures(result.failures, log);
}

int cmd_toy(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "toy");
    SineDemoConfig cfg;
    cfg.n_points = static_cast<int>(p.get_int("n_points", cfg.n_points));
    cfg.noise_sigma = p.get_double("noise_sigma", cfg.noise_sigma);
    cfg.bins = static_cast<int>(p.get_int("bins", cfg.bins));
    cfg.alphas = p.get_doubles("alphas", cfg.alphas);
    cfg.taus = p.get_doubles("taus", cfg.taus);
    const auto seeds = p.get_seeds("seeds", {0});
    check_seeds(seeds);
    cfg.seed = seeds.front();
    const auto rows = sine_demo(cfg);
    CsvTable t;
    t.header = {"bin_center", "alpha_or_tau", "method", "m"};
    for (const auto& r : rows) t.add({format_number(r.bin_center), format_number(r.alpha_or_tau), r.method, format_number(r.m)});
    write_csv(options.out / "toy.csv", t, p.hash(), std::to_string(cfg.seed));
    log << fmt::format("toy: {} rows\n", rows.size());
    return 0;
}

int cmd_sweep(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "sweep");
    const auto path = options.out / "sweep.csv";
    const std::vector<std::string> header{"cell_hash", "env", "algo", "alpha", "seed", "success", "return",
                                          "sparsity_ratio"};
    std::map<std::pair<std::string, std::uint64_t>, std::vector<std::string>> existing;
    if (std::filesystem::exists(path)) {
        const CsvTable old = read_csv(path);
        if (old.header == header)
            for (const auto& row : old.rows) existing[{row[0], static_cast<std::uint64_t>(parse_int(row[4]))}] = row;
    }
    std::set<std::pair<std::string, std::uint64_t>> done;
    for (const auto& [key, row] : existing) done.insert(key);
    const auto result = sweep_experiment(p, options.jobs, done);
    for (const auto& r : result.rows)
        existing[{r.cell_hash, r.seed}] = {r.cell_hash,        "fourrooms",         r.algo,
                                           format_number(r.alpha), std::to_string(r.seed), format_number(r.success),
                                           format_number(r.ret),  format_number(r.sparsity_ratio)};
    // Rows in grid order: algo, alpha, seed.
    std::vector<std::vector<std::string>> ordered;
    for (const auto& [key, row] : existing) ordered.push_back(row);
    std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
        if (a[2] != b[2]) return a[2] < b[2];
        const double aa = parse_double(a[3]), ba = parse_double(b[3]);
        if (aa != ba) return aa < ba;
        return parse_int(a[4]) < parse_int(b[4]);
    });
    CsvTable t;
    t.header = header;
    for (auto& row : ordered) t.add(row);
    write_csv(path, t, result.config_hash, join_seeds(result.seeds));
    log << fmt::format("sweep: {} new cells, {} skipped\n", result.rows.size(), done.size());
    return report_failures(result.failures, log);
}

int cmd_train(const CommandOptions& options, std::ostream& log) {
    Params p = section_params(options, "train");
    const TabularMDP mdp = make_env(p);
    const Algo algo = algo_from_name(p.get_string("algo", "sql"));
    const std::string param_name = p.get_string("parametrization", "tabular");
    Parametrization param;
    if (param_name == "tabular") {
        param = Parametrization::kTabular;
    } else if (param_name == "linear") {
        param = Parametrization::kLinear;
    } else {
        throw InvalidArgument("parametrization must be tabular or linear");
    }
    std::optional<FeatureMap> feature_map;
    if (param == Parametrization::kLinear) {
        const std::string features = p.get_string("features", "coordinate");
        if (features == "coordinate") {
            feature_map = make_coordinate_features(mdp);
        } else if (features == "one_hot") {
            feature_map = make_one_hot_features(mdp);
        } else {
            throw InvalidArgument("features must be coordinate or one_hot");
        }
    }
    LearnerConfig cfg = learner_from_params(p, algo, param, std::move(feature_map));
    const std::string path = p.get_string("dataset", "");
    const int n_traj = static_cast<int>(p.get_int("n_traj", 30));
    const int cap = static_cast<int>(p.get_int("cap", 20));
    const auto seeds = p.get_seeds("seeds", {0});
    check_seeds(seeds);
    const std::uint64_t hash = p.hash();
    std::vector<CellFailure> failures;
    for (std::uint64_t seed : seeds) {
        try {
            const OfflineDataset data =
                path.empty() ? uniform_behavior_data(mdp, n_traj, cap, substream_seed(seed, "data")) : load(path);
            cfg.seed = seed;
            const LearnerState st = train(data, cfg, &mdp);
            const Policy pi = extract_policy(st, cfg, data);
            const std::string label = std::to_string(seed);
            write_csv(options.out / fmt::format("metrics_seed{}.csv", seed), metrics_table(st.trace), hash, label);
            CsvTable policy;
            policy.header = {"state", "action", "pi"};
            for (Index s = 0; s < pi.n_states(); ++s)
                for (Index a = 0; a < pi.n_actions(); ++a)
                    policy.add({std::to_string(s), std::to_string(a), format_number(pi.probs(s, a))});
            write_csv(options.out / fmt::format("policy_seed{}.csv", seed), policy, hash, label);
            CsvTable values;
            values.header = {"state", "V"};
            const Vector v = st.v_table();
            for (Index s = 0; s < v.size(); ++s) values.add({std::to_string(s), format_number(v[s])});
            write_csv(options.out / fmt::format("values_seed{}.csv", seed), values, hash, label);
            const MetricsRow& last = st.trace.back();
            log << fmt::format("seed {} {} bellman error {:.4g} eval success {}\n", seed, to_string(algo),
                               last.bellman_error, format_number(last.eval_success));
        } catch (const ParseError&) {
            throw;
        } catch (const DivergenceError& e) {
            failures.push_back({fmt::format("seed={}", seed), e.what()});
        }
    }
    return report_failures(failures, log);
}

}  // namespace

int run_command(const std::string& name, const CommandOptions& options, std::ostream& log) {
    if (options.jobs < 1) throw InvalidArgument("jobs must be at least 1");
    options.config.require_known(known_config_keys());
    if (name == "solve") return cmd_solve(options, log);
    if (name == "fourrooms") return cmd_fourrooms(options, log);
    if (name == "noisy") return cmd_noisy(options, log);
    if (name == "smalldata") return cmd_smalldata(options, log);
    if (name == "toy") return cmd_toy(options, log);
    if (name == "sweep") return cmd_sweep(options, log);
    if (name == "train") return cmd_train(options, log);
    throw InvalidArgument("unknown command '" + name + "'");
}

}  // namespace ivr
