#include "ivr/exact_solver.hpp"

#include <Eigen/LU>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ivr {

namespace {

constexpr double kNormalizerTolerance = 1e-10;
constexpr int kNormalizerIterations = 2000;

double normalization_lhs(const Eigen::Ref<const Vector>& q_row, const Eigen::Ref<const Vector>& mu_row,
                         double alpha, const Regularizer& reg, double u) {
    double total = 0.0;
    for (Index a = 0; a < q_row.size(); ++a) {
        if (mu_row[a] <= 0.0) continue;
        total += mu_row[a] * reg.ratio((q_row[a] - u) / alpha);
    }
    return total;
}

// h_f(x) = x f(x) with the x -> 0 limit taken as 0.
double h_of(const Regularizer& reg, double x) { return x > 0.0 ? x * reg.f(x) : 0.0; }

void enumerate_compositions(int total, int parts, std::vector<int>& current,
                            std::vector<std::vector<int>>& out) {
    if (parts == 1) {
        current.push_back(total);
        out.push_back(current);
        current.pop_back();
        return;
    }
    for (int k = 0; k <= total; ++k) {
        current.push_back(k);
        enumerate_compositions(total - k, parts - 1, current, out);
        current.pop_back();
    }
}

}  // namespace

Matrix RegularizedModel::backup_q(const Vector& values) const {
    const Vector next = transition * values;
    Matrix q = reward;
    q += gamma * Eigen::Map<const Matrix>(next.data(), n_states, n_actions);
    return q;
}

std::vector<Index> RegularizedModel::excluded_states() const {
    std::vector<Index> out;
    for (Index s = 0; s < n_states; ++s)
        if (!active[static_cast<std::size_t>(s)] && !terminal[static_cast<std::size_t>(s)]) out.push_back(s);
    return out;
}

RegularizedModel model_from_mdp(const TabularMDP& mdp, const Policy& mu) {
    if (mu.n_states() != mdp.n_states || mu.n_actions() != mdp.n_actions)
        throw InvalidArgument("behavior policy shape does not match the MDP");
    mu.validate();
    RegularizedModel m;
    m.n_states = mdp.n_states;
    m.n_actions = mdp.n_actions;
    m.gamma = mdp.gamma;
    m.transition = mdp.transition;
    m.reward = mdp.reward;
    m.mu = mu.probs;
    m.initial_dist = mdp.initial_dist;
    m.terminal = mdp.terminal;
    m.active.resize(m.terminal.size());
    for (std::size_t s = 0; s < m.terminal.size(); ++s) m.active[s] = !m.terminal[s];
    return m;
}

RegularizedModel model_from_empirical(const EmpiricalModel& model) {
    RegularizedModel m;
    m.n_states = model.n_states;
    m.n_actions = model.n_actions;
    m.gamma = model.gamma;
    m.transition = model.t_hat;
    m.reward = model.r_hat;
    m.mu = model.mu_hat;
    m.initial_dist = model.state_frequency;
    m.terminal = model.terminal;
    m.active.resize(m.terminal.size());
    for (std::size_t s = 0; s < m.terminal.size(); ++s) m.active[s] = model.visited[s] && !model.terminal[s];
    return m;
}

double solve_normalizer(const Eigen::Ref<const Vector>& q_row, const Eigen::Ref<const Vector>& mu_row,
                        double alpha, const Regularizer& reg) {
    if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
    if (q_row.size() != mu_row.size()) throw InvalidArgument("q and mu rows differ in length");
    double q_min = std::numeric_limits<double>::infinity();
    double q_max = -std::numeric_limits<double>::infinity();
    for (Index a = 0; a < mu_row.size(); ++a) {
        if (mu_row[a] <= 0.0) continue;
        q_min = std::min(q_min, q_row[a]);
        q_max = std::max(q_max, q_row[a]);
    }
    if (!std::isfinite(q_min) || !std::isfinite(q_max))
        throw InvalidArgument("behavior row has no support or Q is not finite");

    auto lhs = [&](double u) { return normalization_lhs(q_row, mu_row, alpha, reg, u); };
    double width = 1.0;
    double lo = q_min - alpha * width;
    double hi = q_max + alpha * width;
    for (int grow = 0; lhs(lo) < 1.0 || lhs(hi) > 1.0; ++grow) {
        if (grow > 200) throw ConvergenceError("cannot bracket the normalizer", std::abs(lhs(lo) - 1.0));
        width *= 2.0;
        lo = q_min - alpha * width;
        hi = q_max + alpha * width;
    }

    double best = lo;
    double best_residual = std::abs(lhs(lo) - 1.0);
    for (int it = 0; it < kNormalizerIterations; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double value = lhs(mid);
        const double residual = std::abs(value - 1.0);
        if (residual < best_residual) {
            best = mid;
            best_residual = residual;
        }
        if (residual == 0.0 || mid <= lo || mid >= hi) break;
        // The left-hand side decreases in u.
        if (value > 1.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (best_residual > kNormalizerTolerance)
        throw ConvergenceError(fmt::format("normalizer residual {} above tolerance", best_residual),
                               best_residual);
    return best;
}

Vector optimal_policy_row(const Eigen::Ref<const Vector>& q_row, const Eigen::Ref<const Vector>& mu_row,
                          double alpha, const Regularizer& reg, double normalizer) {
    Vector pi = Vector::Zero(q_row.size());
    for (Index a = 0; a < q_row.size(); ++a)
        if (mu_row[a] > 0.0) pi[a] = mu_row[a] * reg.ratio((q_row[a] - normalizer) / alpha);
    return pi;
}

double regularized_state_value(const Eigen::Ref<const Vector>& /*q_row*/,
                               const Eigen::Ref<const Vector>& mu_row,
                               const Eigen::Ref<const Vector>& pi_row, double alpha,
                               const Regularizer& reg, double normalizer) {
    if (reg.unit_value_term) return normalizer + alpha;
    double term = 0.0;
    for (Index a = 0; a < mu_row.size(); ++a) {
        if (mu_row[a] <= 0.0 || pi_row[a] <= 0.0) continue;
        const double ratio = pi_row[a] / mu_row[a];
        term += mu_row[a] * ratio * ratio * reg.f_prime(ratio);
    }
    return normalizer + alpha * term;
}

Vector regularized_backup(const RegularizedModel& model, const Vector& values, double alpha,
                          const Regularizer& reg) {
    const Matrix q = model.backup_q(values);
    Vector next = Vector::Zero(model.n_states);
    for (Index s = 0; s < model.n_states; ++s) {
        if (!model.active[static_cast<std::size_t>(s)]) continue;
        const Vector q_row = q.row(s).transpose();
        const Vector mu_row = model.mu.row(s).transpose();
        try {
            const double u = solve_normalizer(q_row, mu_row, alpha, reg);
            const Vector pi = optimal_policy_row(q_row, mu_row, alpha, reg, u);
            next[s] = regularized_state_value(q_row, mu_row, pi, alpha, reg, u);
        } catch (const ConvergenceError& e) {
            throw SolverError(fmt::format("state {}: {}", s, e.what()), e.residual(), s);
        } catch (const InvalidArgument& e) {
            throw SolverError(fmt::format("state {}: {}", s, e.what()),
                              std::numeric_limits<double>::quiet_NaN(), s);
        }
    }
    return next;
}

SolutionTables solve_fixed_point(const RegularizedModel& model, double alpha, const Regularizer& reg,
                                 double tol, int max_iter) {
    if (!(tol > 0.0)) throw InvalidArgument("solve_fixed_point tolerance must be positive");
    if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
    SolutionTables sol;
    sol.alpha = alpha;
    sol.regularizer = reg.name;
    sol.excluded_states = model.excluded_states();

    Vector v = Vector::Zero(model.n_states);
    bool converged = false;
    for (int it = 1; it <= max_iter; ++it) {
        Vector next = regularized_backup(model, v, alpha, reg);
        const double delta = (next - v).lpNorm<Eigen::Infinity>();
        sol.residual_trace.push_back(delta);
        v.swap(next);
        sol.iterations = it;
        // With gamma = 0 the first backup is already the fixed point.
        if (delta <= tol || model.gamma == 0.0) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        std::string tail;
        const std::size_t n = sol.residual_trace.size();
        for (std::size_t i = n >= 5 ? n - 5 : 0; i < n; ++i) tail += fmt::format(" {:.3e}", sol.residual_trace[i]);
        throw ConvergenceError(fmt::format("fixed point not reached in {} iterations; last residuals:{}",
                                           max_iter, tail),
                               sol.residual_trace.empty() ? 0.0 : sol.residual_trace.back());
    }

    sol.v = v;
    sol.q = model.backup_q(v);
    sol.u = Vector::Zero(model.n_states);
    sol.pi = Policy::uniform(model.n_states, model.n_actions);
    for (Index s = 0; s < model.n_states; ++s) {
        if (!model.active[static_cast<std::size_t>(s)]) continue;
        const Vector q_row = sol.q.row(s).transpose();
        const Vector mu_row = model.mu.row(s).transpose();
        sol.u[s] = solve_normalizer(q_row, mu_row, alpha, reg);
        sol.pi.probs.row(s) = optimal_policy_row(q_row, mu_row, alpha, reg, sol.u[s]).transpose();
    }
    return sol;
}

KktReport kkt_residual(const SolutionTables& sol, const RegularizedModel& model, double alpha,
                       const Regularizer& reg) {
    KktReport report;
    double worst = -1.0;
    auto note = [&](double value, Index s) {
        if (value > worst) {
            worst = value;
            report.worst_state = s;
        }
    };
    for (Index s = 0; s < model.n_states; ++s) {
        if (!model.active[static_cast<std::size_t>(s)]) continue;
        const double u = sol.u[s];
        const double total = sol.pi.probs.row(s).sum();
        report.max_normalization = std::max(report.max_normalization, std::abs(total - 1.0));
        note(std::abs(total - 1.0), s);
        for (Index a = 0; a < model.n_actions; ++a) {
            const double mu = model.mu(s, a);
            const double pi = sol.pi.probs(s, a);
            const double q = sol.q(s, a);
            if (mu <= 0.0) {
                report.max_support_violation = std::max(report.max_support_violation, std::abs(pi));
                note(std::abs(pi), s);
                continue;
            }
            if (pi > 0.0) {
                const double stationarity = std::abs(q - alpha * reg.hf_prime(pi / mu) - u);
                report.max_stationarity = std::max(report.max_stationarity, stationarity);
                note(stationarity, s);
            } else if (std::isfinite(reg.hf_prime_at_zero)) {
                // The multiplier beta = u + alpha h_f'(0) - q must be nonnegative.
                const double violation = std::max(0.0, q - u - alpha * reg.hf_prime_at_zero);
                report.max_slackness = std::max(report.max_slackness, violation);
                note(violation, s);
            }
            // pi == 0 with h_f'(0) = -inf only arises from exp underflow.
        }
    }
    return report;
}

double regularized_objective(const RegularizedModel& model, const Policy& pi, double alpha,
                             const Regularizer& reg, double tol) {
    if (!(alpha > 0.0)) throw InvalidArgument("regularized_objective: alpha must be positive");
    if (pi.n_states() != model.n_states || pi.n_actions() != model.n_actions)
        throw InvalidArgument("regularized_objective: policy shape mismatch");
    const Index S = model.n_states;
    Vector r_pi = Vector::Zero(S);
    Matrix p_pi = Matrix::Zero(S, S);
    for (Index s = 0; s < S; ++s) {
        if (!model.active[static_cast<std::size_t>(s)]) continue;
        for (Index a = 0; a < model.n_actions; ++a) {
            const double p = pi.probs(s, a);
            if (p <= 0.0) continue;
            const double mu = model.mu(s, a);
            if (mu <= 0.0)
                throw InvalidArgument(fmt::format(
                    "policy puts mass {} on ({}, {}) outside the behavior support", p, s, a));
            r_pi[s] += p * model.reward(s, a) - alpha * mu * h_of(reg, p / mu);
            p_pi.row(s) += p * model.transition.row(model.row(s, a));
        }
    }
    Vector v = Vector::Zero(S);
    for (int it = 0; it < 10000000; ++it) {
        Vector next = r_pi + model.gamma * p_pi * v;
        const double delta = (next - v).lpNorm<Eigen::Infinity>();
        v.swap(next);
        if (delta <= tol) break;
    }
    return model.initial_dist.dot(v);
}

BruteForceResult brute_force_policy_search(const RegularizedModel& model, double alpha,
                                           const Regularizer& reg, double grid_resolution) {
    if (model.n_states > 4 || model.n_actions > 3)
        throw InvalidArgument("brute_force_policy_search is limited to 4 states and 3 actions");
    if (!(grid_resolution > 0.0 && grid_resolution <= 1.0))
        throw InvalidArgument("grid resolution must lie in (0, 1]");
    if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
    const int steps = static_cast<int>(std::lround(1.0 / grid_resolution));
    const Index S = model.n_states;

    // Per active state: candidate rows with their reward and transition rows.
    struct Candidate {
        Vector probs;
        double reward = 0.0;
        Vector next;
    };
    std::vector<std::vector<Candidate>> candidates(static_cast<std::size_t>(S));
    std::vector<Index> active;
    for (Index s = 0; s < S; ++s) {
        if (!model.active[static_cast<std::size_t>(s)]) continue;
        active.push_back(s);
        std::vector<Index> support;
        for (Index a = 0; a < model.n_actions; ++a)
            if (model.mu(s, a) > 0.0) support.push_back(a);
        std::vector<std::vector<int>> comps;
        std::vector<int> scratch;
        enumerate_compositions(steps, static_cast<int>(support.size()), scratch, comps);
        for (const auto& comp : comps) {
            Candidate c;
            c.probs = Vector::Zero(model.n_actions);
            c.next = Vector::Zero(S);
            for (std::size_t k = 0; k < support.size(); ++k) {
                const Index a = support[k];
                const double p = comp[k] / static_cast<double>(steps);
                c.probs[a] = p;
                if (p == 0.0) continue;
                c.reward += p * model.reward(s, a) - alpha * model.mu(s, a) * h_of(reg, p / model.mu(s, a));
                c.next += p * model.transition.row(model.row(s, a)).transpose();
            }
            candidates[static_cast<std::size_t>(s)].push_back(std::move(c));
        }
    }

    using Small = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;
    using SmallVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;
    BruteForceResult result;
    result.objective = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> choice(active.size(), 0);
    std::vector<std::size_t> best_choice = choice;
    Small system(S, S);
    SmallVec rhs(S);
    while (true) {
        system.setIdentity();
        rhs.setZero();
        for (std::size_t k = 0; k < active.size(); ++k) {
            const Index s = active[k];
            const Candidate& c = candidates[static_cast<std::size_t>(s)][choice[k]];
            system.row(s) -= model.gamma * c.next.transpose();
            rhs[s] = c.reward;
        }
        const SmallVec v = system.partialPivLu().solve(rhs);
        const double objective = model.initial_dist.dot(v);
        ++result.evaluated;
        if (objective > result.objective) {
            result.objective = objective;
            best_choice = choice;
        }
        std::size_t k = 0;
        for (; k < active.size(); ++k) {
            if (++choice[k] < candidates[static_cast<std::size_t>(active[k])].size()) break;
            choice[k] = 0;
        }
        if (k == active.size()) break;
    }
    result.pi = Policy::uniform(model.n_states, model.n_actions);
    for (std::size_t k = 0; k < active.size(); ++k)
        result.pi.probs.row(active[k]) =
            candidates[static_cast<std::size_t>(active[k])][best_choice[k]].probs.transpose();
    return result;
}

}  // namespace ivr
