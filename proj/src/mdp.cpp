#include "ivr/mdp.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

namespace ivr {

namespace {

constexpr std::array<const char*, 11> kFourRoomsMap = {
    "     #     ",
    "     #     ",
    "           ",
    "     #     ",
    "     #     ",
    "# ####     ",
    "     ### ##",
    "     #     ",
    "     #     ",
    "           ",
    "     #     ",
};

constexpr double kGoalReward = 10.0;

Matrix policy_transition(const TabularMDP& mdp, const Policy& pi) {
    Matrix p = Matrix::Zero(mdp.n_states, mdp.n_states);
    for (Index s = 0; s < mdp.n_states; ++s)
        for (Index a = 0; a < mdp.n_actions; ++a)
            if (pi.probs(s, a) != 0.0) p.row(s) += pi.probs(s, a) * mdp.transition.row(mdp.row(s, a));
    return p;
}

}  // namespace

Index GridLayout::state_at(GridPosition p) const {
    for (std::size_t s = 0; s < positions.size(); ++s)
        if (positions[s] == p) return static_cast<Index>(s);
    return -1;
}

Matrix TabularMDP::backup_q(const Vector& values) const {
    const Vector next = transition * values;
    Matrix q = reward;
    q += gamma * Eigen::Map<const Matrix>(next.data(), n_states, n_actions);
    return q;
}

void TabularMDP::validate() const {
    if (n_states <= 0 || n_actions <= 0) throw InvalidArgument("MDP needs states and actions");
    if (transition.rows() != n_states * n_actions || transition.cols() != n_states)
        throw InvalidArgument("transition tensor has the wrong shape");
    if (reward.rows() != n_states || reward.cols() != n_actions)
        throw InvalidArgument("reward tensor has the wrong shape");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("gamma must lie in [0, 1)");
    if (initial_dist.size() != n_states || std::abs(initial_dist.sum() - 1.0) > 1e-12 ||
        (initial_dist.array() < 0.0).any())
        throw InvalidArgument("initial distribution is not a distribution");
    if (static_cast<Index>(terminal.size()) != n_states)
        throw InvalidArgument("terminal flags have the wrong size");
    for (Index r = 0; r < transition.rows(); ++r) {
        if ((transition.row(r).array() < 0.0).any() || std::abs(transition.row(r).sum() - 1.0) > 1e-12)
            throw InvalidArgument(fmt::format("transition row {} is not a distribution", r));
    }
    for (Index s = 0; s < n_states; ++s) {
        if (!terminal[static_cast<std::size_t>(s)]) continue;
        for (Index a = 0; a < n_actions; ++a) {
            if (transition(row(s, a), s) != 1.0 || reward(s, a) != 0.0)
                throw InvalidArgument(fmt::format("terminal state {} must self-loop with reward 0", s));
        }
    }
}

Policy Policy::uniform(Index n_states, Index n_actions) {
    return Policy{Matrix::Constant(n_states, n_actions, 1.0 / static_cast<double>(n_actions))};
}

Policy Policy::greedy(const Matrix& scores) {
    Policy pi{Matrix::Zero(scores.rows(), scores.cols())};
    for (Index s = 0; s < scores.rows(); ++s) {
        Index best = 0;
        for (Index a = 1; a < scores.cols(); ++a)
            if (scores(s, a) > scores(s, best)) best = a;
        pi.probs(s, best) = 1.0;
    }
    return pi;
}

void Policy::validate(double tol) const {
    for (Index s = 0; s < probs.rows(); ++s) {
        if ((probs.row(s).array() < 0.0).any() || std::abs(probs.row(s).sum() - 1.0) > tol)
            throw InvalidArgument(fmt::format("policy row {} is not a distribution", s));
    }
}

ValueSolution value_iteration(const TabularMDP& mdp, double tol, int max_iter) {
    if (!(tol > 0.0)) throw InvalidArgument("value_iteration tolerance must be positive");
    ValueSolution out;
    Vector v = Vector::Zero(mdp.n_states);
    for (int it = 1; it <= max_iter; ++it) {
        const Vector next = mdp.backup_q(v).rowwise().maxCoeff();
        out.residual = (next - v).lpNorm<Eigen::Infinity>();
        v = next;
        out.iterations = it;
        if (out.residual <= tol) break;
    }
    out.v = v;
    out.q = mdp.backup_q(v);
    out.greedy = Policy::greedy(out.q);
    return out;
}

PolicyValues policy_evaluation(const TabularMDP& mdp, const Policy& pi, double tol, int max_iter) {
    if (!(tol > 0.0)) throw InvalidArgument("policy_evaluation tolerance must be positive");
    const Matrix p = policy_transition(mdp, pi);
    const Vector r = (pi.probs.array() * mdp.reward.array()).rowwise().sum();
    PolicyValues out;
    Vector v = Vector::Zero(mdp.n_states);
    for (int it = 1; it <= max_iter; ++it) {
        Vector next = r + mdp.gamma * p * v;
        const double delta = (next - v).lpNorm<Eigen::Infinity>();
        v.swap(next);
        out.iterations = it;
        if (delta <= tol) break;
    }
    out.v = v;
    out.q = mdp.backup_q(v);
    return out;
}

RolloutStats rollout(const TabularMDP& mdp, const Policy& pi, int episodes, int cap,
                     std::uint64_t seed) {
    if (episodes <= 0) throw InvalidArgument("rollout needs at least one episode");
    if (cap < 1) throw InvalidArgument("rollout cap must be at least 1");
    Rng rng(seed);
    RolloutStats stats;
    for (int ep = 0; ep < episodes; ++ep) {
        Index s = sample_discrete(rng, mdp.initial_dist);
        double ret = 0.0;
        double discount = 1.0;
        int steps = 0;
        while (steps < cap && !mdp.terminal[static_cast<std::size_t>(s)]) {
            const Index a = sample_discrete(rng, pi.probs.row(s));
            const Index next = sample_discrete(rng, mdp.transition.row(mdp.row(s, a)));
            ret += discount * mdp.reward(s, a);
            discount *= mdp.gamma;
            s = next;
            ++steps;
        }
        stats.mean_return += ret;
        stats.mean_length += steps;
        if (mdp.terminal[static_cast<std::size_t>(s)]) stats.success_rate += 1.0;
    }
    stats.mean_return /= episodes;
    stats.success_rate /= episodes;
    stats.mean_length /= episodes;
    return stats;
}

TabularMDP build_four_rooms() {
    GridLayout grid;
    grid.height = static_cast<int>(kFourRoomsMap.size());
    grid.width = 11;
    for (const char* row : kFourRoomsMap) grid.rows.emplace_back(row);
    for (int row = 0; row < grid.height; ++row)
        for (int col = 0; col < grid.width; ++col)
            if (kFourRoomsMap[static_cast<std::size_t>(row)][col] != '#')
                grid.positions.push_back({col, grid.height - 1 - row});
    grid.minimal_position = {0, 0};
    grid.start_state = grid.state_at({0, 0});
    grid.goal_state = grid.state_at({grid.width - 1, grid.height - 1});

    TabularMDP mdp;
    mdp.n_states = static_cast<Index>(grid.positions.size());
    mdp.n_actions = 4;
    mdp.gamma = 0.9;
    mdp.transition = Matrix::Zero(mdp.n_states * mdp.n_actions, mdp.n_states);
    mdp.reward = Matrix::Zero(mdp.n_states, mdp.n_actions);
    mdp.terminal.assign(static_cast<std::size_t>(mdp.n_states), false);
    mdp.terminal[static_cast<std::size_t>(grid.goal_state)] = true;
    mdp.initial_dist = Vector::Zero(mdp.n_states);
    mdp.initial_dist[grid.start_state] = 1.0;

    constexpr std::array<GridPosition, 4> moves = {{{0, 1}, {0, -1}, {1, 0}, {-1, 0}}};
    for (Index s = 0; s < mdp.n_states; ++s) {
        for (Index a = 0; a < mdp.n_actions; ++a) {
            Index next = s;
            if (s != grid.goal_state) {
                const GridPosition p = grid.positions[static_cast<std::size_t>(s)];
                const GridPosition m = moves[static_cast<std::size_t>(a)];
                const Index candidate = grid.state_at({p.x + m.x, p.y + m.y});
                if (candidate >= 0) next = candidate;
                if (next == grid.goal_state) mdp.reward(s, a) = kGoalReward;
            }
            mdp.transition(mdp.row(s, a), next) = 1.0;
        }
    }
    mdp.grid = std::move(grid);
    mdp.validate();
    return mdp;
}

TabularMDP make_random_mdp(Index n_states, Index n_actions, double gamma, std::uint64_t seed,
                           Index branching, Index n_terminal) {
    if (n_states < 1 || n_actions < 1 || branching < 1 || n_terminal >= n_states)
        throw InvalidArgument("make_random_mdp: bad sizes");
    Rng rng(seed);
    TabularMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition = Matrix::Zero(n_states * n_actions, n_states);
    mdp.reward = Matrix::Zero(n_states, n_actions);
    mdp.terminal.assign(static_cast<std::size_t>(n_states), false);
    const Index first_terminal = n_states - n_terminal;
    for (Index s = first_terminal; s < n_states; ++s) mdp.terminal[static_cast<std::size_t>(s)] = true;

    std::vector<Index> order(static_cast<std::size_t>(n_states));
    for (Index s = 0; s < n_states; ++s) {
        for (Index a = 0; a < n_actions; ++a) {
            const Index r = mdp.row(s, a);
            if (mdp.terminal[static_cast<std::size_t>(s)]) {
                mdp.transition(r, s) = 1.0;
                continue;
            }
            mdp.reward(s, a) = uniform01(rng);
            std::iota(order.begin(), order.end(), Index{0});
            shuffle_in_place(rng, order);
            const Index k = std::min(branching, n_states);
            double total = 0.0;
            for (Index j = 0; j < k; ++j) {
                const double w = 0.05 + uniform01(rng);
                mdp.transition(r, order[static_cast<std::size_t>(j)]) += w;
                total += w;
            }
            mdp.transition.row(r) /= total;
            // Exact unit row sums.
            const double drift = 1.0 - mdp.transition.row(r).sum();
            mdp.transition(r, order[0]) += drift;
        }
    }
    mdp.initial_dist = Vector::Zero(n_states);
    mdp.initial_dist.head(first_terminal).setConstant(1.0 / static_cast<double>(first_terminal));
    return mdp;
}

Vector FeatureMap::phi(Index s, Index a) const {
    return Vector(pair.row(s * n_actions + a).transpose());
}

FeatureMap make_one_hot_features(Index n_states, Index n_actions) {
    if (n_states <= 0 || n_actions <= 0) throw InvalidArgument("one-hot features need a nonempty model");
    FeatureMap fm;
    fm.name = "one_hot";
    fm.n_states = n_states;
    fm.n_actions = n_actions;
    const Index pairs = n_states * n_actions;
    fm.pair.resize(pairs, pairs);
    fm.pair.setIdentity();
    fm.state.resize(n_states, n_states);
    fm.state.setIdentity();
    return fm;
}

FeatureMap make_one_hot_features(const TabularMDP& mdp) {
    return make_one_hot_features(mdp.n_states, mdp.n_actions);
}

FeatureMap make_coordinate_features(const TabularMDP& mdp) {
    FeatureMap fm;
    fm.name = "coordinate";
    fm.n_states = mdp.n_states;
    fm.n_actions = mdp.n_actions;
    const Index dim = 3 + mdp.n_actions;
    std::vector<Eigen::Triplet<double>> pair_entries;
    std::vector<Eigen::Triplet<double>> state_entries;
    for (Index s = 0; s < mdp.n_states; ++s) {
        double x = 0.0;
        double y = 0.0;
        if (mdp.grid) {
            const GridPosition p = mdp.grid->positions[static_cast<std::size_t>(s)];
            x = mdp.grid->width > 1 ? p.x / static_cast<double>(mdp.grid->width - 1) : 0.0;
            y = mdp.grid->height > 1 ? p.y / static_cast<double>(mdp.grid->height - 1) : 0.0;
        } else if (mdp.n_states > 1) {
            x = s / static_cast<double>(mdp.n_states - 1);
        }
        state_entries.emplace_back(s, 0, x);
        state_entries.emplace_back(s, 1, y);
        state_entries.emplace_back(s, 2, 1.0);
        for (Index a = 0; a < mdp.n_actions; ++a) {
            const Index r = s * mdp.n_actions + a;
            pair_entries.emplace_back(r, 0, x);
            pair_entries.emplace_back(r, 1, y);
            pair_entries.emplace_back(r, 2 + a, 1.0);
            pair_entries.emplace_back(r, 2 + mdp.n_actions, 1.0);
        }
    }
    fm.pair.resize(mdp.n_states * mdp.n_actions, dim);
    fm.pair.setFromTriplets(pair_entries.begin(), pair_entries.end());
    fm.state.resize(mdp.n_states, 3);
    fm.state.setFromTriplets(state_entries.begin(), state_entries.end());
    return fm;
}

std::string describe(const TabularMDP& mdp) {
    std::string out = fmt::format("mdp states={} actions={} gamma={}\n", mdp.n_states, mdp.n_actions,
                                  mdp.gamma);
    if (mdp.grid) {
        for (const auto& row : mdp.grid->rows) out += "|" + row + "|\n";
        const auto start = mdp.grid->positions[static_cast<std::size_t>(mdp.grid->start_state)];
        const auto goal = mdp.grid->positions[static_cast<std::size_t>(mdp.grid->goal_state)];
        out += fmt::format("start=({},{}) goal=({},{})\n", start.x, start.y, goal.x, goal.y);
    }
    for (Index s = 0; s < mdp.n_states; ++s) {
        out += fmt::format("s{}{}", s, mdp.terminal[static_cast<std::size_t>(s)] ? " terminal" : "");
        if (mdp.grid) {
            const auto p = mdp.grid->positions[static_cast<std::size_t>(s)];
            out += fmt::format(" at ({},{})", p.x, p.y);
        }
        out += "\n";
        for (Index a = 0; a < mdp.n_actions; ++a) {
            out += fmt::format("  a{} r={}", a, mdp.reward(s, a));
            for (Index t = 0; t < mdp.n_states; ++t) {
                const double p = mdp.transition(mdp.row(s, a), t);
                if (p != 0.0) out += fmt::format(" ->s{}:{}", t, p);
            }
            out += "\n";
        }
    }
    return out;
}

}  // namespace ivr
