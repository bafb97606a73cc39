#pragma once

#include "ivr/mdp.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ivr {

struct Transition {
    Index s = 0;
    Index a = 0;
    double r = 0.0;
    Index s_next = 0;
    bool done = false;
    bool operator==(const Transition&) const = default;
};

/// Provenance and geometry carried alongside the transitions. `extra` holds
/// free-form key/value pairs (ratios, hardness, ...); keys and values must not
/// contain whitespace or '='.
struct DatasetMeta {
    Index n_states = 0;
    Index n_actions = 0;
    double gamma = 0.9;
    std::string policy = "unknown";
    std::uint64_t seed = 0;
    std::optional<GridPosition> goal;
    std::optional<GridPosition> minimal;
    std::map<std::string, std::string> extra;
    bool operator==(const DatasetMeta&) const = default;
};

struct OfflineDataset {
    std::vector<Transition> transitions;
    DatasetMeta meta;
    bool empty_file_warning = false;

    std::size_t size() const { return transitions.size(); }
    bool empty() const { return transitions.empty(); }
};

/// Maximum-likelihood tabular model of a dataset.
struct EmpiricalModel {
    Index n_states = 0;
    Index n_actions = 0;
    double gamma = 0.9;
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> counts;  // S x A
    Matrix mu_hat;   // S x A, zero rows on unvisited states
    Matrix t_hat;    // (S*A) x S, zero rows on unsupported pairs
    Matrix r_hat;    // S x A
    std::vector<bool> visited;   // state appears as a source
    std::vector<bool> terminal;  // state appears as a done successor
    Vector state_frequency;      // empirical distribution of source states

    bool supported(Index s, Index a) const { return counts(s, a) > 0; }
};

struct CollectOptions {
    int n_traj = 30;
    int cap = 20;
    std::uint64_t seed = 0;
    /// Start-state distribution; the MDP's initial distribution when empty.
    Vector start_dist;
    std::string policy_name = "behavior";
};

/// Rolls out `behavior` and records every transition; a trajectory ends on
/// entering a terminal state or after `cap` steps.
OfflineDataset collect(const TabularMDP& mdp, const Policy& behavior, const CollectOptions& options);

/// Uniform distribution over the non-terminal states.
Vector uniform_nonterminal_starts(const TabularMDP& mdp);

EmpiricalModel empirical_model(const OfflineDataset& dataset);

/// round-half-up(expert_ratio * total) expert transitions plus random ones,
/// each drawn without replacement, then shuffled.
OfflineDataset mix(const OfflineDataset& expert, const OfflineDataset& random, double expert_ratio,
                   std::size_t total, std::uint64_t seed);

/// Normalized squared distance from the minimal position:
/// ||p - minimal||^2 / ||goal - minimal||^2.
double normalized_goal_distance(GridPosition p, GridPosition goal, GridPosition minimal);

/// Keeps a transition iff uniform(0, 1) > DIS * hardness, with DIS the
/// normalized distance of the transition's source state.
OfflineDataset distance_discard(const OfflineDataset& dataset, const GridLayout& grid,
                                double hardness, std::uint64_t seed);

/// Plain-text format: a header line `# key=value ...` followed by one
/// `s a r s_next done` line per transition.
void save(const OfflineDataset& dataset, const std::filesystem::path& path);
std::string to_text(const OfflineDataset& dataset);
OfflineDataset load(const std::filesystem::path& path);
OfflineDataset from_text(const std::string& text);

}  // namespace ivr
