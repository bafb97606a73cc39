#pragma once

#include "ivr/datasets.hpp"
#include "ivr/mdp.hpp"
#include "ivr/regularizers.hpp"

#include <string>
#include <vector>

namespace ivr {

/// Everything the regularized Bellman operator needs: dynamics, rewards and
/// the behavior policy mu. Either the true MDP with a chosen mu, or an
/// empirical model restricted to the states that appear in the data.
struct RegularizedModel {
    Index n_states = 0;
    Index n_actions = 0;
    double gamma = 0.9;
    Matrix transition;  // (S*A) x S
    Matrix reward;      // S x A
    Matrix mu;          // S x A
    Vector initial_dist;
    std::vector<bool> terminal;
    std::vector<bool> active;  // non-terminal states that take part in the fixed point

    Index row(Index s, Index a) const { return s * n_actions + a; }
    Matrix backup_q(const Vector& values) const;
    /// Non-terminal states left out of the fixed point (absent from the data).
    std::vector<Index> excluded_states() const;
};

RegularizedModel model_from_mdp(const TabularMDP& mdp, const Policy& mu);
/// Initial distribution is the empirical source-state frequency.
RegularizedModel model_from_empirical(const EmpiricalModel& model);

/// Solver failure tagged with the offending state.
class SolverError : public ConvergenceError {
public:
    SolverError(const std::string& what, double residual, Index state)
        : ConvergenceError(what, residual), state_(state) {}
    Index state() const noexcept { return state_; }

private:
    Index state_;
};

/// Normalizer U with sum_a mu(a) max{g_f((q(a) - U)/alpha), 0} = 1, found by
/// bisection on the decreasing left-hand side.
double solve_normalizer(const Eigen::Ref<const Vector>& q_row, const Eigen::Ref<const Vector>& mu_row,
                        double alpha, const Regularizer& reg);

/// pi(a) = mu(a) max{g_f((q(a) - U)/alpha), 0}.
Vector optimal_policy_row(const Eigen::Ref<const Vector>& q_row, const Eigen::Ref<const Vector>& mu_row,
                          double alpha, const Regularizer& reg, double normalizer);

/// V = U + alpha E_mu[(pi/mu)^2 f'(pi/mu)]; exactly U + alpha for reverse KL.
double regularized_state_value(const Eigen::Ref<const Vector>& q_row,
                               const Eigen::Ref<const Vector>& mu_row,
                               const Eigen::Ref<const Vector>& pi_row, double alpha,
                               const Regularizer& reg, double normalizer);

/// One application of the optimal regularized Bellman operator to V.
Vector regularized_backup(const RegularizedModel& model, const Vector& values, double alpha,
                          const Regularizer& reg);

struct SolutionTables {
    Vector u;
    Vector v;
    Matrix q;
    Policy pi;
    double alpha = 0.0;
    std::string regularizer;
    int iterations = 0;
    std::vector<double> residual_trace;
    std::vector<Index> excluded_states;
};

/// Fixed-point iteration V <- T V from V = 0 until the sup-norm update is at
/// most `tol`; U, Q and pi are then recomputed from the final V.
SolutionTables solve_fixed_point(const RegularizedModel& model, double alpha, const Regularizer& reg,
                                 double tol = 1e-10, int max_iter = 100000);

struct KktReport {
    double max_stationarity = 0.0;     // |Q - alpha h_f'(pi/mu) - U| over pi > 0
    double max_slackness = 0.0;        // max(0, Q - U - alpha h_f'(0)) over pi = 0
    double max_normalization = 0.0;    // |sum pi - 1|
    double max_support_violation = 0.0;  // pi mass where mu = 0
    Index worst_state = -1;
};

KktReport kkt_residual(const SolutionTables& sol, const RegularizedModel& model, double alpha,
                       const Regularizer& reg);

/// Expected discounted sum of r - alpha f(pi/mu) under pi from the model's
/// initial distribution. Throws InvalidArgument when pi puts mass outside the
/// support of mu or alpha <= 0.
double regularized_objective(const RegularizedModel& model, const Policy& pi, double alpha,
                             const Regularizer& reg, double tol = 1e-12);

struct BruteForceResult {
    Policy pi;
    double objective = 0.0;
    std::size_t evaluated = 0;
};

/// Exhaustive search over the product of per-state simplex grids (step
/// `grid_resolution`) restricted to mu's support. Limited to 4 states and 3
/// actions.
BruteForceResult brute_force_policy_search(const RegularizedModel& model, double alpha,
                                           const Regularizer& reg, double grid_resolution);

}  // namespace ivr
