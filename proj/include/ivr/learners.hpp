#pragma once

#include "ivr/datasets.hpp"
#include "ivr/mdp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ivr {

enum class Algo { kSql, kEql, kSqlU, kIql, kCql, kOosQ };

std::string to_string(Algo algo);
Algo algo_from_name(const std::string& name);

enum class Parametrization { kTabular, kLinear };

struct LearnerConfig {
    Algo algo = Algo::kSql;
    double alpha = 1.0;
    double tau = 0.7;
    double beta_awr = 3.0;
    double lr_v = 3e-2;
    double lr_q = 3e-2;
    double lr_pi = 3e-2;
    double soft_update_lambda = 0.05;
    std::int64_t steps = 50000;
    int batch_size = 256;  // 0 means the full dataset every step
    Parametrization parametrization = Parametrization::kTabular;
    std::optional<FeatureMap> features;  // required for kLinear
    bool double_q = false;
    double eql_clip = 5.0;
    double eql_residual_scale = 10.0;
    bool eql_exp_normalize = false;
    bool sql_drop_one_plus = true;
    double iql_weight_cap = 100.0;
    double cql_weight = 1.0;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
    int eval_episodes = 20;
    int eval_cap = 50;

    /// Throws InvalidArgument when a field is out of range.
    void validate() const;
};

/// Per-algorithm presets: full batch for tables, Adam for linear models.
LearnerConfig default_config(Algo algo, Parametrization parametrization = Parametrization::kTabular);

struct MetricsRow {
    std::int64_t step = 0;
    double v_loss = 0.0;
    double q_loss = 0.0;
    double pi_loss = 0.0;
    double sparsity_ratio = 0.0;
    double bellman_error = 0.0;
    double eval_return = 0.0;
    double eval_success = 0.0;
};

/// Parameters are weight vectors over the feature map; with one-hot features
/// they are tables indexed by state or by s * A + a.
struct LearnerState {
    Algo algo = Algo::kSql;
    FeatureMap features;
    Vector v;        // state_dim
    Vector u;        // state_dim, three-table scheme only
    Vector q1, q2;   // dim
    Vector q1_target, q2_target;
    Matrix pi_weights;  // A x state_dim, logits = pi_weights * phi_state(s)
    bool double_q = false;
    std::int64_t step = 0;
    std::vector<MetricsRow> trace;

    Vector v_table() const;
    Vector u_table() const;
    Matrix q_table(int which = 1) const;          // S x A
    Matrix target_min_table() const;              // min of the targets when double_q
    Matrix logits_table() const;                  // S x A
};

/// Trains any algorithm. `eval_env`, when given, is rolled out at every
/// checkpoint with the greedy extracted policy. Deterministic given the seed.
LearnerState train(const OfflineDataset& dataset, const LearnerConfig& config,
                   const TabularMDP* eval_env = nullptr);

/// U, V and Q tables of the three-table scheme; tabular only.
LearnerState sql_u_train(const OfflineDataset& dataset, const LearnerConfig& config);
LearnerState cql_baseline_train(const OfflineDataset& dataset, const LearnerConfig& config,
                                 const TabularMDP* eval_env = nullptr);
LearnerState oos_q_train(const OfflineDataset& dataset, const LearnerConfig& config,
                         const TabularMDP* eval_env = nullptr);

/// Per-transition extraction weight of the weighted behavior cloning step.
double extraction_weight(const LearnerConfig& config, double q, double v);

/// Tabular: pi(a|s) proportional to the summed weights of the dataset hits of
/// (s, a); all-zero rows fall back to the behavior estimate, unvisited states
/// to uniform. Linear: softmax of the trained logits. Q-only learners return
/// the greedy policy of Q1 (uniform on unvisited states when tabular).
Policy extract_policy(const LearnerState& state, const LearnerConfig& config, const OfflineDataset& dataset);

/// Fraction of dataset pairs with 1 + (Q - V) / (2 alpha) > 0, Q the target
/// (minimum) table.
double sparsity_ratio(const LearnerState& state, const OfflineDataset& dataset, double alpha);

/// mean[(r + gamma (1 - done) E_{a'~pi} Q1(s', a') - Q1(s, a))^2].
double bellman_error(const LearnerState& state, const OfflineDataset& dataset, const Policy& pi);

}  // namespace ivr
