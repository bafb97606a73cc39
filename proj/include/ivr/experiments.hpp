#pragma once

#include "ivr/config.hpp"
#include "ivr/datasets.hpp"
#include "ivr/learners.hpp"
#include "ivr/mdp.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace ivr {

/// Records every parameter a command reads together with its effective value,
/// so the config hash covers defaults as well as explicit keys.
class Params {
public:
    explicit Params(Config section) : src_(std::move(section)) {}

    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key, double fallback);
    std::int64_t get_int(const std::string& key, std::int64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback);
    std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback);
    std::vector<std::uint64_t> get_seeds(const std::string& key, const std::vector<std::uint64_t>& fallback);

    /// Overrides a key before it is read.
    void set(const std::string& key, const std::string& value) { src_.set(key, value); }
    /// Sets a key only when the configuration leaves it out.
    void set_default(const std::string& key, const std::string& value) {
        if (!src_.has(key)) src_.set(key, value);
    }
    std::uint64_t hash() const;
    const std::map<std::string, std::string>& used() const { return used_; }

private:
    Config src_;
    std::map<std::string, std::string> used_;
};

struct CommandOptions {
    Config config;
    std::filesystem::path out = "out";
    std::optional<std::uint64_t> seed;  // replaces the configured seed list
    int jobs = 1;
};

/// Sections and keys accepted in config files.
const std::map<std::string, std::set<std::string>>& known_config_keys();

/// Exit codes: 0 success, 1 some cells failed, 2 bad configuration or input,
/// 3 solver failure.
int run_command(const std::string& name, const CommandOptions& options, std::ostream& log);

// Shared experiment pieces, also used by the acceptance suite.

TabularMDP make_env(Params& params);

/// Uniform behavior from uniformly drawn non-terminal starts.
OfflineDataset uniform_behavior_data(const TabularMDP& mdp, int n_traj, int cap, std::uint64_t seed);

/// Trajectories of `behavior` from uniformly drawn non-terminal starts until at
/// least `size` transitions are collected.
OfflineDataset collect_at_least(const TabularMDP& mdp, const Policy& behavior, std::size_t size, int cap,
                                std::uint64_t seed, const std::string& name);

Policy epsilon_greedy(const Policy& greedy, double epsilon);

/// Learner settings from the shared keys; per-algorithm `<algo>_alpha` and
/// `iql_tau` override `alpha` and `tau`.
LearnerConfig learner_from_params(Params& params, Algo algo, Parametrization parametrization,
                                  std::optional<FeatureMap> features = std::nullopt);

/// Exact discounted return of `pi` from the initial distribution.
double exact_return(const TabularMDP& mdp, const Policy& pi);

struct Anchors {
    double random_return = 0.0;
    double oracle_return = 0.0;
    double normalized(double value) const {
        return 100.0 * (value - random_return) / (oracle_return - random_return);
    }
};
Anchors compute_anchors(const TabularMDP& mdp);

/// Deterministic acting policy. Tabular value learners take the best dataset
/// action under the (minimum) target Q on visited states and keep the
/// extracted row elsewhere; other learners act greedily on the extracted policy.
Policy acting_policy(const LearnerState& state, const LearnerConfig& config, const OfflineDataset& data);

struct FourRoomsRow {
    std::uint64_t seed = 0;
    std::string algo;
    double param = 0.0;
    std::size_t transitions = 0;
    std::size_t visited = 0;
    double success = 0.0;
    double ret = 0.0;
    double value_error = 0.0;
    double u_gap = 0.0;  // three-table scheme only: max |U - (V_sql - alpha)|
};

struct SmallDataRow {
    std::uint64_t seed = 0;
    std::string level;
    double hardness = 0.0;
    std::string algo;
    std::size_t kept = 0;
    std::size_t reward_signals = 0;
    double ret = 0.0;
    double nr = 0.0;
    double success = 0.0;
    double bellman_error = 0.0;
    std::string status = "ok";
};

struct NoisyRow {
    std::uint64_t seed = 0;
    double ratio = 0.0;
    std::string algo;
    std::size_t transitions = 0;
    double ret = 0.0;
    double nr = 0.0;
    double success = 0.0;
};

struct SweepRow {
    std::string cell_hash;
    std::string algo;
    double alpha = 0.0;
    std::uint64_t seed = 0;
    double success = 0.0;
    double ret = 0.0;
    double sparsity_ratio = 0.0;
};

struct CellFailure {
    std::string cell;
    std::string message;
};

template <typename Row>
struct ExperimentResult {
    std::vector<Row> rows;
    std::vector<CellFailure> failures;
    std::uint64_t config_hash = 0;
    std::vector<std::uint64_t> seeds;
    /// Per-run metrics traces keyed by a run label.
    std::map<std::string, std::vector<MetricsRow>> traces;
};

ExperimentResult<FourRoomsRow> fourrooms_experiment(Params& params, int jobs);
ExperimentResult<NoisyRow> noisy_experiment(Params& params, int jobs);
ExperimentResult<SmallDataRow> smalldata_experiment(Params& params, int jobs);
/// `done` lists (cell hash, seed) pairs to skip; skipped cells are absent from
/// the returned rows.
ExperimentResult<SweepRow> sweep_experiment(Params& params, int jobs,
                                            const std::set<std::pair<std::string, std::uint64_t>>& done);

std::string join_seeds(const std::vector<std::uint64_t>& seeds);

}  // namespace ivr
