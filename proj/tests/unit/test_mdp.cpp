#include "doctest.h"

#include "ivr/mdp.hpp"

#include <Eigen/LU>

using namespace ivr;
using doctest::Approx;

namespace {

Index next_state(const TabularMDP& mdp, Index s, Index a) {
    Index nx = 0;
    mdp.transition.row(mdp.row(s, a)).maxCoeff(&nx);
    return nx;
}

// Two states, one action each way; the uniform policy is solved directly.
TabularMDP two_state_chain(double gamma) {
    TabularMDP m;
    m.n_states = 2;
    m.n_actions = 2;
    m.gamma = gamma;
    m.transition = Matrix::Zero(4, 2);
    m.transition(m.row(0, 0), 0) = 1.0;
    m.transition(m.row(0, 1), 1) = 1.0;
    m.transition(m.row(1, 0), 0) = 0.3;
    m.transition(m.row(1, 0), 1) = 0.7;
    m.transition(m.row(1, 1), 1) = 1.0;
    m.reward = Matrix(2, 2);
    m.reward << 1.0, 0.0, 0.5, 2.0;
    m.initial_dist = Vector::Constant(2, 0.5);
    m.terminal = {false, false};
    m.validate();
    return m;
}

}  // namespace

TEST_CASE("four rooms geometry and rewards") {
    const TabularMDP mdp = build_four_rooms();
    const GridLayout& g = *mdp.grid;
    CHECK(mdp.gamma == 0.9);
    CHECK(g.positions[static_cast<std::size_t>(g.start_state)] == GridPosition{0, 0});
    CHECK(g.positions[static_cast<std::size_t>(g.goal_state)] == GridPosition{10, 10});

    // (5, 0) is wall, so moving right from (4, 0) stays put.
    const Index s = g.state_at({4, 0});
    CHECK(g.state_at({5, 0}) == -1);
    CHECK(next_state(mdp, s, kRight) == s);
    CHECK(mdp.reward(s, kRight) == 0.0);

    const Index before_goal = g.state_at({9, 10});
    CHECK(next_state(mdp, before_goal, kRight) == g.goal_state);
    CHECK(mdp.reward(before_goal, kRight) == 10.0);
    CHECK(mdp.terminal[static_cast<std::size_t>(g.goal_state)]);
    for (Index a = 0; a < 4; ++a) {
        CHECK(next_state(mdp, g.goal_state, a) == g.goal_state);
        CHECK(mdp.reward(g.goal_state, a) == 0.0);
    }
    for (Index r = 0; r < mdp.transition.rows(); ++r) CHECK(std::abs(mdp.transition.row(r).sum() - 1.0) <= 1e-12);
}

TEST_CASE("value iteration on four rooms") {
    const TabularMDP mdp = build_four_rooms();
    const GridLayout& g = *mdp.grid;
    const ValueSolution sol = value_iteration(mdp, 1e-12);
    CHECK(sol.v[g.state_at({9, 10})] == Approx(10.0));
    CHECK(sol.v[g.state_at({8, 10})] == Approx(9.0));
    CHECK(sol.v[g.goal_state] == 0.0);
    CHECK(sol.residual <= 1e-12);
    // Greedy rows are one-hot.
    for (Index s = 0; s < mdp.n_states; ++s) CHECK(sol.greedy.probs.row(s).maxCoeff() == 1.0);

    const PolicyValues pv = policy_evaluation(mdp, sol.greedy, 1e-12);
    CHECK((pv.v - sol.v).lpNorm<Eigen::Infinity>() <= 1e-9);
}

TEST_CASE("value iteration iterates increase from zero") {
    const TabularMDP mdp = build_four_rooms();
    Vector prev = Vector::Zero(mdp.n_states);
    for (int k = 1; k < 40; ++k) {
        const Vector v = value_iteration(mdp, 1e-300, k).v;
        CHECK((v - prev).minCoeff() >= -1e-12);
        prev = v;
    }
}

TEST_CASE("policy evaluation matches a direct linear solve") {
    const TabularMDP m = two_state_chain(0.8);
    const Policy pi = Policy::uniform(2, 2);
    Matrix p = Matrix::Zero(2, 2);
    Vector r = Vector::Zero(2);
    for (Index s = 0; s < 2; ++s)
        for (Index a = 0; a < 2; ++a) {
            p.row(s) += 0.5 * m.transition.row(m.row(s, a));
            r[s] += 0.5 * m.reward(s, a);
        }
    const Vector direct = (Matrix::Identity(2, 2) - m.gamma * p).lu().solve(r);
    const PolicyValues pv = policy_evaluation(m, pi, 1e-13);
    CHECK(pv.v[0] == Approx(direct[0]).epsilon(1e-10));
    CHECK(pv.v[1] == Approx(direct[1]).epsilon(1e-10));
}

TEST_CASE("zero discount evaluates the immediate reward") {
    const TabularMDP m = two_state_chain(0.0);
    Policy pi{Matrix(2, 2)};
    pi.probs << 0.25, 0.75, 0.6, 0.4;
    const PolicyValues pv = policy_evaluation(m, pi, 1e-12);
    CHECK(pv.v[0] == Approx(0.25));
    CHECK(pv.v[1] == Approx(0.6 * 0.5 + 0.4 * 2.0));
}

TEST_CASE("rollouts") {
    const TabularMDP mdp = build_four_rooms();
    const ValueSolution sol = value_iteration(mdp, 1e-12);
    const RolloutStats oracle = rollout(mdp, sol.greedy, 10, 100, 3);
    CHECK(oracle.success_rate == 1.0);
    CHECK(oracle.mean_return == Approx(sol.v[mdp.grid->start_state]));

    const RolloutStats random = rollout(mdp, Policy::uniform(mdp.n_states, 4), 200, 20, 3);
    CHECK(random.success_rate < 0.05);

    const RolloutStats again = rollout(mdp, Policy::uniform(mdp.n_states, 4), 200, 20, 3);
    CHECK(again.mean_length == random.mean_length);
    CHECK_THROWS_AS(rollout(mdp, sol.greedy, 0, 100, 3), InvalidArgument);
}

TEST_CASE("feature maps") {
    const TabularMDP mdp = build_four_rooms();
    const FeatureMap one_hot = make_one_hot_features(mdp);
    CHECK(one_hot.dim() == mdp.n_states * mdp.n_actions);
    CHECK(one_hot.is_tabular());
    const Matrix gram = Matrix(one_hot.pair.transpose() * one_hot.pair);
    CHECK(gram.isIdentity(0.0));

    const FeatureMap coord = make_coordinate_features(mdp);
    CHECK(coord.dim() == 2 + mdp.n_actions + 1);
    CHECK_FALSE(coord.is_tabular());
    for (Index s = 0; s < mdp.n_states; ++s)
        for (Index a = 0; a < mdp.n_actions; ++a) {
            const Vector phi = coord.phi(s, a);
            CHECK(phi.minCoeff() >= 0.0);
            CHECK(phi.maxCoeff() <= 1.0);
            CHECK(phi[2 + a] == 1.0);
        }
}

TEST_CASE("random MDPs are valid") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const TabularMDP m = make_random_mdp(6, 3, 0.9, seed, 3, 1);
        CHECK_NOTHROW(m.validate());
        CHECK(m.initial_dist.sum() == Approx(1.0));
    }
    CHECK_THROWS_AS(make_random_mdp(0, 3, 0.9, 1), InvalidArgument);
}
