#include "ivr/learners.hpp"

#include "ivr/losses.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

namespace ivr {

namespace {

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double dot_row(const SparseRows& m, Index row, const double* w) {
    double acc = 0.0;
    for (SparseRows::InnerIterator it(m, row); it; ++it) acc += it.value() * w[it.col()];
    return acc;
}

double dot_row(const SparseRows& m, Index row, const Vector& w) { return dot_row(m, row, w.data()); }

struct Adam {
    Vector m, s;
    std::int64_t t = 0;
};

/// Collects per-sample gradients and applies one update. Tabular features
/// take a preconditioned step on the per-entry mean gradient; other features
/// take an Adam step on the batch-mean gradient.
class Updater {
public:
    Updater() = default;
    Updater(bool tabular, Index dim) : tabular_(tabular), sum_(Vector::Zero(dim)), count_(dim, 0.0) {}

    /// `g` is the summed gradient of `count` identical samples.
    void add(const SparseRows& feats, Index row, double g, Index offset = 0, double count = 1.0) {
        for (SparseRows::InnerIterator it(feats, row); it; ++it) {
            const Index c = offset + it.col();
            if (count_[static_cast<std::size_t>(c)] == 0.0) touched_.push_back(c);
            count_[static_cast<std::size_t>(c)] += count;
            sum_[c] += g * it.value();
        }
    }

    void apply(Vector& w, double lr, double precond, Adam& adam, double n) {
        if (tabular_) {
            for (Index c : touched_) w[c] -= lr * precond * sum_[c] / count_[static_cast<std::size_t>(c)];
        } else {
            if (adam.m.size() != w.size()) {
                adam.m = Vector::Zero(w.size());
                adam.s = Vector::Zero(w.size());
            }
            ++adam.t;
            const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
            for (Index c = 0; c < w.size(); ++c) {
                const double g = sum_[c] / n;
                adam.m[c] = b1 * adam.m[c] + (1.0 - b1) * g;
                adam.s[c] = b2 * adam.s[c] + (1.0 - b2) * g * g;
                w[c] -= lr * (adam.m[c] / c1) / (std::sqrt(adam.s[c] / c2) + eps);
            }
        }
        for (Index c : touched_) {
            sum_[c] = 0.0;
            count_[static_cast<std::size_t>(c)] = 0.0;
        }
        touched_.clear();
    }

private:
    bool tabular_ = true;
    Vector sum_;
    std::vector<double> count_;
    std::vector<Index> touched_;
};

bool is_value_algo(Algo algo) { return algo != Algo::kCql && algo != Algo::kOosQ; }

/// Extraction weights in log space for the exponential rules, linear for SQL.
bool exponential_weights(Algo algo) { return algo == Algo::kEql || algo == Algo::kIql; }

double log_extraction_weight(const LearnerConfig& config, double q, double v) {
    if (config.algo == Algo::kEql) return config.eql_residual_scale * (q - v) / config.alpha;
    return std::min(config.beta_awr * (q - v), std::log(config.iql_weight_cap));
}

double linear_extraction_weight(const LearnerConfig& config, double q, double v) {
    if (config.sql_drop_one_plus) return std::max(q - v, 0.0);
    return std::max(1.0 + (q - v) / (2.0 * config.alpha), 0.0);
}

/// Batch weights rescaled so the largest is one; the weighted likelihood's
/// maximizer is unchanged.
Vector normalized_weights(const LearnerConfig& config, const Vector& q, const Vector& v) {
    const Index n = q.size();
    Vector w(n);
    if (exponential_weights(config.algo)) {
        for (Index i = 0; i < n; ++i) w[i] = log_extraction_weight(config, q[i], v[i]);
        w = (w.array() - w.maxCoeff()).exp().matrix();
    } else {
        for (Index i = 0; i < n; ++i) w[i] = linear_extraction_weight(config, q[i], v[i]);
        const double top = w.maxCoeff();
        if (top > 0.0) w /= top;
    }
    return w;
}

bool all_finite(const Vector& v) { return v.allFinite(); }

class Trainer {
public:
    Trainer(const OfflineDataset& dataset, const LearnerConfig& config, const TabularMDP* env)
        : data_(dataset), cfg_(config), env_(env) {
        cfg_.validate();
        if (data_.empty()) throw InvalidArgument("cannot train on an empty dataset");
        S_ = data_.meta.n_states;
        A_ = data_.meta.n_actions;
        gamma_ = data_.meta.gamma;
        if (cfg_.parametrization == Parametrization::kTabular) {
            st_.features = make_one_hot_features(S_, A_);
        } else {
            st_.features = *cfg_.features;
            if (st_.features.n_states != S_ || st_.features.n_actions != A_)
                throw InvalidArgument("feature map shape does not match the dataset");
        }
        if (cfg_.algo == Algo::kSqlU && !st_.features.is_tabular())
            throw InvalidArgument("the three-table scheme is tabular only");
        tabular_ = st_.features.is_tabular();
        st_.algo = cfg_.algo;
        st_.double_q = cfg_.double_q;
        const Index dim = st_.features.dim();
        const Index sdim = st_.features.state_dim();
        st_.v = Vector::Zero(sdim);
        st_.u = Vector::Zero(sdim);
        Rng init1 = make_rng(cfg_.seed, "init_q1");
        Rng init2 = make_rng(cfg_.seed, "init_q2");
        st_.q1.resize(dim);
        st_.q2.resize(dim);
        for (Index i = 0; i < dim; ++i) st_.q1[i] = 1e-2 * standard_normal(init1);
        for (Index i = 0; i < dim; ++i) st_.q2[i] = 1e-2 * standard_normal(init2);
        st_.q1_target = st_.q1;
        st_.q2_target = st_.q2;
        st_.pi_weights = Matrix::Zero(A_, sdim);
        v_upd_ = Updater(tabular_, sdim);
        q_upd_ = Updater(tabular_, dim);
        p_upd_ = Updater(tabular_, A_ * sdim);
        for (const auto& t : data_.transitions)
            if (t.s < 0 || t.s >= S_ || t.s_next < 0 || t.s_next >= S_ || t.a < 0 || t.a >= A_)
                throw InvalidArgument("transition indices outside the dataset shape");
    }

    LearnerState run() {
        const std::size_t n_data = data_.size();
        Rng batch_rng = make_rng(cfg_.seed, "batch");
        std::vector<std::size_t> idx;
        if (cfg_.batch_size == 0) {
            full_batch(idx);
        } else {
            idx.resize(static_cast<std::size_t>(cfg_.batch_size));
            total_ = static_cast<double>(cfg_.batch_size);
        }
        for (std::int64_t step = 1; step <= cfg_.steps; ++step) {
            if (cfg_.batch_size != 0)
                for (auto& i : idx) i = static_cast<std::size_t>(uniform_index(batch_rng, n_data));
            if (is_value_algo(cfg_.algo)) {
                value_step(idx);
            } else {
                q_only_step(idx);
            }
            st_.step = step;
            if (!std::isfinite(v_loss_) || !std::isfinite(q_loss_) || !std::isfinite(pi_loss_))
                throw DivergenceError("non-finite loss", step);
            if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0 && step != cfg_.steps)
                checkpoint();
        }
        checkpoint();
        return st_;
    }

private:
    Index pair_row(Index s, Index a) const { return s * A_ + a; }

    /// The whole dataset as unique transitions with multiplicities; every
    /// loss and update is unchanged by the grouping.
    void full_batch(std::vector<std::size_t>& idx) {
        std::map<std::tuple<Index, Index, double, Index, bool>, std::size_t> first;
        std::vector<double> counts;
        for (std::size_t i = 0; i < data_.size(); ++i) {
            const Transition& t = data_.transitions[i];
            const auto [it, fresh] = first.try_emplace({t.s, t.a, t.r, t.s_next, t.done}, idx.size());
            if (fresh) {
                idx.push_back(i);
                counts.push_back(1.0);
            } else {
                counts[it->second] += 1.0;
            }
        }
        counts_ = Eigen::Map<const Vector>(counts.data(), static_cast<Index>(counts.size()));
        total_ = static_cast<double>(data_.size());
    }

    double count(Index i) const { return counts_.size() == 0 ? 1.0 : counts_[i]; }

    double q_target_min(Index row) const {
        const double a = dot_row(st_.features.pair, row, st_.q1_target);
        if (!cfg_.double_q) return a;
        return std::min(a, dot_row(st_.features.pair, row, st_.q2_target));
    }

    double v_at(Index s) const { return dot_row(st_.features.state, s, st_.v); }

    void value_step(const std::vector<std::size_t>& idx) {
        const auto& fm = st_.features;
        const Index n = static_cast<Index>(idx.size());
        Vector qt(n), v(n);
        for (Index i = 0; i < n; ++i) {
            const Transition& t = data_.transitions[idx[static_cast<std::size_t>(i)]];
            qt[i] = q_target_min(pair_row(t.s, t.a));
            v[i] = v_at(t.s);
        }
        const double a2 = cfg_.alpha * cfg_.alpha;
        Updater& v_upd = v_upd_;
        if (cfg_.algo == Algo::kSqlU) {
            Vector u(n);
            for (Index i = 0; i < n; ++i) u[i] = dot_row(fm.state, data_.transitions[idx[static_cast<std::size_t>(i)]].s, st_.u);
            const LossGrad<double> lu = sql_v_loss<double>(qt, u, cfg_.alpha, 0.5, counts_);
            for (Index i = 0; i < n; ++i)
                v_upd.add(fm.state, data_.transitions[idx[static_cast<std::size_t>(i)]].s, lu.grad[i] * total_, 0, count(i));
            v_upd.apply(st_.u, cfg_.lr_v, 2.0 * a2, adam_u_, total_);
            Vector target(n);
            for (Index i = 0; i < n; ++i) {
                const double ui = dot_row(fm.state, data_.transitions[idx[static_cast<std::size_t>(i)]].s, st_.u);
                const double z = std::max(0.5 + (qt[i] - ui) / (2.0 * cfg_.alpha), 0.0);
                target[i] = ui + cfg_.alpha * z * z;
            }
            const LossGrad<double> lv = q_loss<double>(v, target, counts_);
            for (Index i = 0; i < n; ++i)
                v_upd.add(fm.state, data_.transitions[idx[static_cast<std::size_t>(i)]].s, lv.grad[i] * total_, 0, count(i));
            v_upd.apply(st_.v, cfg_.lr_v, 0.5, adam_v_, total_);
            v_loss_ = lu.loss;
        } else {
            LossGrad<double> lv;
            double precond = 0.5;
            if (cfg_.algo == Algo::kSql) {
                lv = sql_v_loss<double>(qt, v, cfg_.alpha, 1.0, counts_);
                precond = 2.0 * a2;
            } else if (cfg_.algo == Algo::kEql) {
                lv = eql_v_loss<double>(qt, v, cfg_.alpha, cfg_.eql_clip, cfg_.eql_exp_normalize, counts_);
                precond = a2;
            } else {
                lv = iql_v_loss<double>(qt, v, cfg_.tau, counts_);
            }
            for (Index i = 0; i < n; ++i)
                v_upd.add(fm.state, data_.transitions[idx[static_cast<std::size_t>(i)]].s, lv.grad[i] * total_, 0, count(i));
            v_upd.apply(st_.v, cfg_.lr_v, precond, adam_v_, total_);
            v_loss_ = lv.loss;
        }

        // Q step toward r + gamma V(s') with the updated V.
        Vector target(n), q1(n), q2(n);
        for (Index i = 0; i < n; ++i) {
            const Transition& t = data_.transitions[idx[static_cast<std::size_t>(i)]];
            target[i] = t.r + (t.done ? 0.0 : gamma_ * v_at(t.s_next));
            q1[i] = dot_row(fm.pair, pair_row(t.s, t.a), st_.q1);
            q2[i] = dot_row(fm.pair, pair_row(t.s, t.a), st_.q2);
        }
        const LossGrad<double> l1 = q_loss<double>(q1, target, counts_);
        Updater& q_upd = q_upd_;
        for (Index i = 0; i < n; ++i) {
            const Transition& t = data_.transitions[idx[static_cast<std::size_t>(i)]];
            q_upd.add(fm.pair, pair_row(t.s, t.a), l1.grad[i] * total_, 0, count(i));
        }
        q_upd.apply(st_.q1, cfg_.lr_q, 0.5, adam_q1_, total_);
        q_loss_ = l1.loss;
        if (cfg_.double_q) {
            const LossGrad<double> l2 = q_loss<double>(q2, target, counts_);
            for (Index i = 0; i < n; ++i) {
                const Transition& t = data_.transitions[idx[static_cast<std::size_t>(i)]];
                q_upd.add(fm.pair, pair_row(t.s, t.a), l2.grad[i] * total_, 0, count(i));
            }
            q_upd.apply(st_.q2, cfg_.lr_q, 0.5, adam_q2_, total_);
            q_loss_ = 0.5 * (l1.loss + l2.loss);
        }
        soft_update();

        // Weighted behavior cloning step.
        Vector qpi(n), vpi(n);
        Matrix logits(n, A_);
        Eigen::VectorXi actions(n);
        for (Index i = 0; i < n; ++i) {
            const Transition& t = data_.transitions[idx[static_cast<std::size_t>(i)]];
            qpi[i] = q_target_min(pair_row(t.s, t.a));
            vpi[i] = v_at(t.s);
            actions[i] = static_cast<int>(t.a);
            for (Index b = 0; b < A_; ++b)
                logits(i, b) = dot_row(fm.state, t.s, st_.pi_weights.data() + b * fm.state_dim());
        }
        policy_step(idx, logits, actions, normalized_weights(cfg_, qpi, vpi));
    }

    void policy_step(const std::vector<std::size_t>& idx, const Matrix& logits, const Eigen::VectorXi& actions,
                     const Vector& weights) {
        const auto& fm = st_.features;
        const Index n = static_cast<Index>(idx.size());
        const Index sdim = fm.state_dim();
        const RowLossGrad<double> lp = weighted_bc_loss<double>(logits, actions, weights, counts_);
        Updater& p_upd = p_upd_;
        for (Index i = 0; i < n; ++i) {
            const Index s = data_.transitions[idx[static_cast<std::size_t>(i)]].s;
            for (Index b = 0; b < A_; ++b) p_upd.add(fm.state, s, lp.grad(i, b) * total_, b * sdim, count(i));
        }
        // pi_weights is row-major A x sdim, so its storage is the flat vector.
        Vector flat = Eigen::Map<const Vector>(st_.pi_weights.data(), A_ * sdim);
        p_upd.apply(flat, cfg_.lr_pi, 1.0, adam_pi_, total_);
        st_.pi_weights = Eigen::Map<const Matrix>(flat.data(), A_, sdim);
        pi_loss_ = lp.loss;
    }

    void q_only_step(const std::vector<std::size_t>& idx) {
        const auto& fm = st_.features;
        const Index n = static_cast<Index>(idx.size());
        Matrix q(n, A_);
        Vector target(n);
        Eigen::VectorXi actions(n);
        for (Index i = 0; i < n; ++i) {
            const Transition& t = data_.transitions[idx[static_cast<std::size_t>(i)]];
            double best = -std::numeric_limits<double>::infinity();
            for (Index b = 0; b < A_; ++b) {
                q(i, b) = dot_row(fm.pair, pair_row(t.s, b), st_.q1);
                best = std::max(best, dot_row(fm.pair, pair_row(t.s_next, b), st_.q1_target));
            }
            target[i] = t.r + (t.done ? 0.0 : gamma_ * best);
            actions[i] = static_cast<int>(t.a);
        }
        const double weight = cfg_.algo == Algo::kCql ? cfg_.cql_weight : 0.0;
        const RowLossGrad<double> l = cql_loss<double>(q, actions, target, weight, counts_);
        Updater& q_upd = q_upd_;
        for (Index i = 0; i < n; ++i) {
            const Index s = data_.transitions[idx[static_cast<std::size_t>(i)]].s;
            for (Index b = 0; b < A_; ++b) {
                // Untouched actions only receive a gradient from the penalty.
                if (weight == 0.0 && b != actions[i]) continue;
                q_upd.add(fm.pair, pair_row(s, b), l.grad(i, b) * total_, 0, count(i));
            }
        }
        q_upd.apply(st_.q1, cfg_.lr_q, 0.5, adam_q1_, total_);
        st_.q2 = st_.q1;
        soft_update();
        q_loss_ = l.loss;
        v_loss_ = 0.0;
        pi_loss_ = 0.0;
    }

    void soft_update() {
        const double lam = cfg_.soft_update_lambda;
        st_.q1_target = lam * st_.q1 + (1.0 - lam) * st_.q1_target;
        st_.q2_target = lam * st_.q2 + (1.0 - lam) * st_.q2_target;
    }

    void checkpoint() {
        if (!all_finite(st_.v) || !all_finite(st_.u) || !all_finite(st_.q1) || !all_finite(st_.q2) ||
            !st_.pi_weights.allFinite())
            throw DivergenceError("non-finite parameters", st_.step);
        MetricsRow row;
        row.step = st_.step;
        row.v_loss = v_loss_;
        row.q_loss = q_loss_;
        row.pi_loss = pi_loss_;
        row.sparsity_ratio = is_value_algo(cfg_.algo) ? sparsity_ratio(st_, data_, cfg_.alpha) : kNaN;
        const Policy pi = extract_policy(st_, cfg_, data_);
        row.bellman_error = bellman_error(st_, data_, pi);
        row.eval_return = kNaN;
        row.eval_success = kNaN;
        if (env_ != nullptr) {
            const RolloutStats stats = rollout(*env_, Policy::greedy(pi.probs), cfg_.eval_episodes, cfg_.eval_cap,
                                               substream_seed(cfg_.seed, "eval"));
            row.eval_return = stats.mean_return;
            row.eval_success = stats.success_rate;
        }
        st_.trace.push_back(row);
    }

    const OfflineDataset& data_;
    LearnerConfig cfg_;
    const TabularMDP* env_;
    LearnerState st_;
    Index S_ = 0, A_ = 0;
    double gamma_ = 0.9;
    bool tabular_ = true;
    Adam adam_v_, adam_u_, adam_q1_, adam_q2_, adam_pi_;
    Updater v_upd_, q_upd_, p_upd_;
    double v_loss_ = 0.0, q_loss_ = 0.0, pi_loss_ = 0.0;
    Vector counts_;  // multiplicities of the full batch, empty for minibatches
    double total_ = 0.0;
};

}  // namespace

std::string to_string(Algo algo) {
    switch (algo) {
        case Algo::kSql: return "sql";
        case Algo::kEql: return "eql";
        case Algo::kSqlU: return "sql_u";
        case Algo::kIql: return "iql";
        case Algo::kCql: return "cql";
        case Algo::kOosQ: return "oos_q";
    }
    return "unknown";
}

Algo algo_from_name(const std::string& name) {
    for (Algo a : {Algo::kSql, Algo::kEql, Algo::kSqlU, Algo::kIql, Algo::kCql, Algo::kOosQ})
        if (to_string(a) == name) return a;
    throw InvalidArgument("unknown algorithm '" + name + "'");
}

void LearnerConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw InvalidArgument(what);
    };
    require(alpha > 0.0 && std::isfinite(alpha), "alpha must be positive");
    require(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
    require(beta_awr > 0.0, "beta_awr must be positive");
    require(lr_v > 0.0 && lr_q > 0.0 && lr_pi > 0.0, "learning rates must be positive");
    require(soft_update_lambda > 0.0 && soft_update_lambda <= 1.0, "soft_update_lambda must lie in (0, 1]");
    require(steps >= 0, "steps must be nonnegative");
    require(batch_size >= 0, "batch_size must be nonnegative");
    require(eql_clip > 0.0, "eql_clip must be positive");
    require(eql_residual_scale > 0.0, "eql_residual_scale must be positive");
    require(iql_weight_cap > 0.0, "iql_weight_cap must be positive");
    require(cql_weight >= 0.0, "cql_weight must be nonnegative");
    require(checkpoint_every >= 0, "checkpoint_every must be nonnegative");
    require(eval_episodes > 0 && eval_cap > 0, "evaluation settings must be positive");
    require(parametrization == Parametrization::kTabular || features.has_value(),
            "linear parametrization needs a feature map");
}

LearnerConfig default_config(Algo algo, Parametrization parametrization) {
    LearnerConfig c;
    c.algo = algo;
    c.parametrization = parametrization;
    c.alpha = algo == Algo::kEql ? 2.0 : 1.0;
    c.double_q = true;
    if (parametrization == Parametrization::kTabular) {
        // Tabular datasets here hold a few thousand transitions at most.
        c.batch_size = 0;
        c.steps = 5000;
    } else {
        c.steps = 20000;
        c.lr_v = c.lr_q = c.lr_pi = 3e-3;
        c.soft_update_lambda = 5e-3;
        c.eql_exp_normalize = true;
    }
    return c;
}

Vector LearnerState::v_table() const { return features.state * v; }
Vector LearnerState::u_table() const { return features.state * u; }

Matrix LearnerState::q_table(int which) const {
    const Vector flat = features.pair * (which == 2 ? q2 : q1);
    return Eigen::Map<const Matrix>(flat.data(), features.n_states, features.n_actions);
}

Matrix LearnerState::target_min_table() const {
    const Vector t1 = features.pair * q1_target;
    Vector flat = t1;
    if (double_q) flat = t1.cwiseMin(Vector(features.pair * q2_target));
    return Eigen::Map<const Matrix>(flat.data(), features.n_states, features.n_actions);
}

Matrix LearnerState::logits_table() const {
    const Matrix dense_state = Matrix(features.state);
    return dense_state * pi_weights.transpose();
}

LearnerState train(const OfflineDataset& dataset, const LearnerConfig& config, const TabularMDP* eval_env) {
    return Trainer(dataset, config, eval_env).run();
}

LearnerState sql_u_train(const OfflineDataset& dataset, const LearnerConfig& config) {
    LearnerConfig c = config;
    c.algo = Algo::kSqlU;
    c.parametrization = Parametrization::kTabular;
    return train(dataset, c);
}

LearnerState cql_baseline_train(const OfflineDataset& dataset, const LearnerConfig& config,
                                const TabularMDP* eval_env) {
    LearnerConfig c = config;
    c.algo = Algo::kCql;
    return train(dataset, c, eval_env);
}

LearnerState oos_q_train(const OfflineDataset& dataset, const LearnerConfig& config, const TabularMDP* eval_env) {
    LearnerConfig c = config;
    c.algo = Algo::kOosQ;
    return train(dataset, c, eval_env);
}

double extraction_weight(const LearnerConfig& config, double q, double v) {
    if (exponential_weights(config.algo)) return std::exp(log_extraction_weight(config, q, v));
    return linear_extraction_weight(config, q, v);
}

Policy extract_policy(const LearnerState& state, const LearnerConfig& config, const OfflineDataset& dataset) {
    const Index S = state.features.n_states;
    const Index A = state.features.n_actions;
    std::vector<bool> visited(static_cast<std::size_t>(S), false);
    for (const auto& t : dataset.transitions) visited[static_cast<std::size_t>(t.s)] = true;

    if (!is_value_algo(state.algo)) {
        Policy pi = Policy::greedy(state.q_table(1));
        if (state.features.is_tabular())
            for (Index s = 0; s < S; ++s)
                if (!visited[static_cast<std::size_t>(s)]) pi.probs.row(s).setConstant(1.0 / A);
        return pi;
    }
    if (!state.features.is_tabular()) {
        const Matrix logits = state.logits_table();
        Policy pi;
        pi.probs.resize(S, A);
        for (Index s = 0; s < S; ++s) pi.probs.row(s) = softmax<double>(logits.row(s).transpose()).transpose();
        return pi;
    }

    LearnerConfig c = config;
    c.algo = state.algo == Algo::kSqlU ? Algo::kSql : state.algo;
    const Matrix q = state.target_min_table();
    const Vector v = state.v_table();
    Matrix counts = Matrix::Zero(S, A);
    Matrix weight_sum = Matrix::Zero(S, A);
    if (exponential_weights(c.algo)) {
        Vector top = Vector::Constant(S, -std::numeric_limits<double>::infinity());
        for (const auto& t : dataset.transitions)
            top[t.s] = std::max(top[t.s], log_extraction_weight(c, q(t.s, t.a), v[t.s]));
        for (const auto& t : dataset.transitions)
            weight_sum(t.s, t.a) += std::exp(log_extraction_weight(c, q(t.s, t.a), v[t.s]) - top[t.s]);
    } else {
        for (const auto& t : dataset.transitions)
            weight_sum(t.s, t.a) += linear_extraction_weight(c, q(t.s, t.a), v[t.s]);
    }
    for (const auto& t : dataset.transitions) counts(t.s, t.a) += 1.0;

    Policy pi = Policy::uniform(S, A);
    for (Index s = 0; s < S; ++s) {
        if (!visited[static_cast<std::size_t>(s)]) continue;
        const double total = weight_sum.row(s).sum();
        if (total > 0.0) {
            pi.probs.row(s) = weight_sum.row(s) / total;
        } else {
            pi.probs.row(s) = counts.row(s) / counts.row(s).sum();
        }
    }
    return pi;
}

double sparsity_ratio(const LearnerState& state, const OfflineDataset& dataset, double alpha) {
    if (dataset.empty()) return kNaN;
    const Matrix q = state.target_min_table();
    const Vector v = state.v_table();
    std::size_t active = 0;
    for (const auto& t : dataset.transitions)
        if (1.0 + (q(t.s, t.a) - v[t.s]) / (2.0 * alpha) > 0.0) ++active;
    return static_cast<double>(active) / static_cast<double>(dataset.size());
}

double bellman_error(const LearnerState& state, const OfflineDataset& dataset, const Policy& pi) {
    if (dataset.empty()) return kNaN;
    const Matrix q = state.q_table(1);
    double total = 0.0;
    for (const auto& t : dataset.transitions) {
        const double next = t.done ? 0.0 : pi.probs.row(t.s_next).dot(q.row(t.s_next));
        const double d = t.r + dataset.meta.gamma * next - q(t.s, t.a);
        total += d * d;
    }
    return total / static_cast<double>(dataset.size());
}

}  // namespace ivr
