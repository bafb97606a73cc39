#pragma once

#include "ivr/rng.hpp"
#include "ivr/types.hpp"

#include <Eigen/SparseCore>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ivr {

/// Cell coordinates in a grid: x grows to the right, y grows upward.
struct GridPosition {
    int x = 0;
    int y = 0;
    bool operator==(const GridPosition&) const = default;
};

/// Geometry attached to grid-world MDPs.
struct GridLayout {
    int width = 0;
    int height = 0;
    std::vector<GridPosition> positions;  // per state
    std::vector<std::string> rows;        // ASCII map, top row first
    Index start_state = 0;
    Index goal_state = 0;
    GridPosition minimal_position;  // farthest-from-goal reference corner

    /// Returns -1 for wall or out-of-bounds cells.
    Index state_at(GridPosition p) const;
};

/// Finite MDP. Transition rows are indexed by s * n_actions + a.
struct TabularMDP {
    Index n_states = 0;
    Index n_actions = 0;
    Matrix transition;  // (S*A) x S
    Matrix reward;      // S x A
    double gamma = 0.9;
    Vector initial_dist;
    std::vector<bool> terminal;
    std::optional<GridLayout> grid;

    Index row(Index s, Index a) const { return s * n_actions + a; }

    /// Q(s, a) = r(s, a) + gamma E[V(s')].
    Matrix backup_q(const Vector& values) const;

    /// Throws InvalidArgument when an invariant is violated.
    void validate() const;
};

/// Stochastic policy, one distribution over actions per state.
struct Policy {
    Matrix probs;  // S x A

    static Policy uniform(Index n_states, Index n_actions);
    /// Deterministic policy taking the lowest-index maximizer of each row.
    static Policy greedy(const Matrix& scores);

    Index n_states() const { return probs.rows(); }
    Index n_actions() const { return probs.cols(); }
    void validate(double tol = 1e-10) const;
};

struct ValueSolution {
    Vector v;
    Matrix q;
    Policy greedy;
    int iterations = 0;
    double residual = 0.0;
};

/// Unregularized optimal values by value iteration from V = 0, stopping when
/// the sup-norm Bellman residual is at most `tol`.
ValueSolution value_iteration(const TabularMDP& mdp, double tol = 1e-10, int max_iter = 100000);

struct PolicyValues {
    Vector v;
    Matrix q;
    int iterations = 0;
};

/// Iterative policy evaluation, V <- r_pi + gamma P_pi V until the update is
/// at most `tol` in sup norm.
PolicyValues policy_evaluation(const TabularMDP& mdp, const Policy& pi, double tol = 1e-10,
                               int max_iter = 1000000);

struct RolloutStats {
    double mean_return = 0.0;  // discounted
    double success_rate = 0.0;
    double mean_length = 0.0;
};

/// Monte Carlo evaluation from the initial distribution. An episode succeeds
/// when it enters a terminal state within `cap` steps.
RolloutStats rollout(const TabularMDP& mdp, const Policy& pi, int episodes, int cap,
                     std::uint64_t seed);

/// Four-rooms gridworld on an 11x11 grid: start bottom-left, goal top-right,
/// actions {up, down, right, left}, +10 on entering the goal, gamma 0.9.
TabularMDP build_four_rooms();

enum Action : Index { kUp = 0, kDown = 1, kRight = 2, kLeft = 3 };

/// Random MDP with Dirichlet-like transition rows over `branching` successors
/// and uniform rewards in [0, 1). No terminal states unless `n_terminal` > 0.
TabularMDP make_random_mdp(Index n_states, Index n_actions, double gamma, std::uint64_t seed,
                           Index branching = 3, Index n_terminal = 0);

/// Linear features for state-action pairs and for states.
struct FeatureMap {
    std::string name;
    Index n_states = 0;
    Index n_actions = 0;
    Eigen::SparseMatrix<double, Eigen::RowMajor> pair;   // (S*A) x dim
    Eigen::SparseMatrix<double, Eigen::RowMajor> state;  // S x state_dim

    Index dim() const { return pair.cols(); }
    Index state_dim() const { return state.cols(); }
    bool is_tabular() const { return name == "one_hot"; }
    Vector phi(Index s, Index a) const;
};

/// Indicator features; reproduces tabular learning exactly.
FeatureMap make_one_hot_features(const TabularMDP& mdp);
FeatureMap make_one_hot_features(Index n_states, Index n_actions);
/// Pair features (x, y, one-hot(a), 1) of the normalized position, dimension
/// A + 3; state features are (x, y, 1). Non-grid MDPs use x = s / (S - 1)
/// and y = 0.
FeatureMap make_coordinate_features(const TabularMDP& mdp);

/// Human-readable dump of the MDP.
std::string describe(const TabularMDP& mdp);

}  // namespace ivr
