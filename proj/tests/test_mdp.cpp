#include "doctest.h"
#include "sdq/envs.hpp"
#include "sdq/mdp.hpp"

#include <cmath>

using namespace sdq;

namespace {

// Exhaustive policy evaluation: solve (I - gamma P_pi) v = r_pi for every
// deterministic policy and keep the pointwise best.
QTable enumerate_policies(const TabularMdp& mdp) {
    const int ns = mdp.n_states, na = mdp.n_actions;
    Eigen::VectorXd best = Eigen::VectorXd::Constant(ns, -1e300);
    std::vector<int> pi(ns, 0);
    long total = 1;
    for (int s = 0; s < ns; ++s) total *= na;
    for (long code = 0; code < total; ++code) {
        long c = code;
        for (int s = 0; s < ns; ++s) pi[s] = static_cast<int>(c % na), c /= na;
        Eigen::MatrixXd p(ns, ns);
        Eigen::VectorXd r(ns);
        for (int s = 0; s < ns; ++s) {
            r[s] = 0.0;
            for (int n = 0; n < ns; ++n) {
                p(s, n) = mdp.p(s, pi[s], n);
                r[s] += mdp.p(s, pi[s], n) * mdp.r(s, pi[s], n);
            }
        }
        const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(ns, ns) - mdp.gamma * p;
        const Eigen::VectorXd v = m.fullPivLu().solve(r);
        best = best.cwiseMax(v);
    }
    QTable q(ns, na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
            double x = 0.0;
            for (int n = 0; n < ns; ++n) x += mdp.p(s, a, n) * (mdp.r(s, a, n) + mdp.gamma * best[n]);
            q(s, a) = x;
        }
    return q;
}

}  // namespace

TEST_SUITE("mdp") {

TEST_CASE("stacked layout is action-major") {
    CHECK(stacked_index(3, 0, 0) == 0);
    CHECK(stacked_index(3, 2, 0) == 2);
    CHECK(stacked_index(3, 0, 1) == 3);
    CHECK(stacked_index(3, 2, 1) == 5);
}

TEST_CASE("validate rejects broken MDPs") {
    TabularMdp m = TabularMdp::make(2, 1, 0.9);
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // empty rows
    m.set(0, 0, 0, 1.0, 0.0);
    m.set(1, 0, 1, 1.0, 0.0);
    CHECK_NOTHROW(m.validate());
    m.set(1, 0, 0, 0.5, 0.0);
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // row sums to 1.5
    m.set(1, 0, 0, -0.5, 0.0);
    m.set(1, 0, 1, 1.5, 0.0);
    CHECK_THROWS_AS(m.validate(), std::invalid_argument);  // negative entry
    TabularMdp g = TabularMdp::make(1, 1, 1.0);
    g.set(0, 0, 0, 1.0, 0.0);
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);  // gamma = 1
}

TEST_CASE("value iteration on a single self-loop is a geometric series") {
    TabularMdp m = TabularMdp::make(1, 1, 0.5);
    m.set(0, 0, 0, 1.0, 1.0);
    const QTable q = value_iteration(m);
    CHECK(q(0, 0) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("value iteration reports non-convergence") {
    TabularMdp m = TabularMdp::make(1, 1, 0.999);
    m.set(0, 0, 0, 1.0, 1.0);
    CHECK_THROWS_AS(value_iteration(m, 1e-10, 5), ConvergenceError);
}

TEST_CASE("value iteration matches exhaustive policy enumeration") {
    for (std::uint64_t seed : {7u, 8u, 9u}) {
        Rng rng(seed);
        const TabularMdp m = random_mdp(4, 2, 0.9, rng);
        const QTable vi = value_iteration(m);
        const QTable oracle = enumerate_policies(m);
        CHECK((vi.values - oracle.values).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("value iteration output satisfies the Bellman equation") {
    Rng rng(21);
    const TabularMdp m = random_mdp(5, 3, 0.95, rng);
    const QTable q = value_iteration(m, 1e-12);
    CHECK((bellman_optimality(m, q).values - q.values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("bias MDP optimum") {
    const Env env = make_bias_mdp(0.9);
    const QTable q = value_iteration(env.mdp);
    CHECK(q(bias_mdp::kStateA, bias_mdp::kRight) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(q(bias_mdp::kStateA, bias_mdp::kLeft) == doctest::Approx(-0.09).epsilon(1e-10));
    CHECK(greedy_action(q, bias_mdp::kStateA, env.mdp.legal_actions(bias_mdp::kStateA)) == bias_mdp::kRight);
}

TEST_CASE("greedy tie break picks the lowest index") {
    QTable q(1, 3);
    CHECK(greedy_action(q, 0) == 0);
    q(0, 0) = 1;
    q(0, 1) = 3;
    q(0, 2) = 2;
    CHECK(greedy_action(q, 0) == 1);
    q(0, 2) = 3;
    CHECK(greedy_action(q, 0) == 1);
    CHECK(greedy_action(q, 0, 1) == 0);  // restricted to action 0
}

TEST_CASE("policy matrix selects stacked entries") {
    Policy pi{{0, 0}};
    Eigen::MatrixXd m = policy_matrix(pi, 2, 2);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 4);
    CHECK(m(0, 0) == 1.0);
    CHECK(m(1, 1) == 1.0);
    CHECK(m.sum() == 2.0);
    pi = Policy{{1, 0}};
    m = policy_matrix(pi, 2, 2);
    CHECK(m(0, stacked_index(2, 0, 1)) == 1.0);
    CHECK(m(1, stacked_index(2, 1, 0)) == 1.0);
    CHECK(m.sum() == 2.0);
}

TEST_CASE("greedy policy matrix picks the row maxima") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        QTable q(3, 4);
        for (Eigen::Index i = 0; i < q.values.size(); ++i) q.values[i] = rng.uniform(-1, 1);
        const Eigen::VectorXd v = policy_matrix(greedy_policy(q), 3, 4) * q.values;
        for (int s = 0; s < 3; ++s) CHECK(v[s] == max_value(q, s, 4));
    }
}

TEST_CASE("state-action transition matrices are row stochastic") {
    TabularMdp one = TabularMdp::make(1, 1, 0.5);
    one.set(0, 0, 0, 1.0, 0.0);
    const Eigen::MatrixXd m1 = sa_transition_matrix(one, Policy{{0}});
    CHECK(m1.rows() == 1);
    CHECK(m1(0, 0) == 1.0);
    Rng rng(4);
    const TabularMdp m = random_mdp(5, 3, 0.9, rng);
    const Eigen::MatrixXd pp = sa_transition_matrix(m, greedy_policy(value_iteration(m), m));
    for (Eigen::Index r = 0; r < pp.rows(); ++r) CHECK(std::abs(pp.row(r).sum() - 1.0) < 1e-12);
    const Env bias = make_bias_mdp(0.9);
    const Eigen::MatrixXd pb = sa_transition_matrix(bias.mdp, greedy_policy(value_iteration(bias.mdp), bias.mdp));
    // (A, right) moves to T, whose greedy action is 0: all mass on stacked (T, 0).
    CHECK(pb(stacked_index(3, bias_mdp::kStateA, bias_mdp::kRight), stacked_index(3, bias_mdp::kTerminal, 0)) == 1.0);
    for (Eigen::Index r = 0; r < pb.rows(); ++r) CHECK(std::abs(pb.row(r).sum() - 1.0) < 1e-12);
}

TEST_CASE("decay rate and Q_max arithmetic") {
    CHECK(decay_rate(0.1, 0.02, 0.9) == doctest::Approx(0.9998).epsilon(1e-14));
    CHECK(decay_rate(0.5, 0.25, 0.5) == doctest::Approx(0.9375).epsilon(1e-14));
    CHECK(decay_rate(1e-9, 0.5, 0.5) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(q_max_bound(1.0, 1.0, 0.9) == doctest::Approx(10.0));
    CHECK(q_max_bound(0.0, 0.0, 0.9) == 0.0);
    CHECK(q_max_bound(2.0, 1.0, 0.5) == doctest::Approx(4.0));
}

TEST_CASE("mdp text format round trips and fails closed") {
    Rng rng(5);
    TabularMdp m = random_mdp(3, 2, 0.8, rng);
    m.terminals = {2};
    m.make_terminals_absorbing();
    const std::string text = mdp_to_text(m);
    const TabularMdp back = mdp_from_text(text);
    CHECK(back.n_states == m.n_states);
    CHECK(back.n_actions == m.n_actions);
    CHECK(back.gamma == m.gamma);
    CHECK(back.transition == m.transition);
    CHECK(back.reward == m.reward);
    CHECK(back.terminals == m.terminals);
    CHECK(back.action_counts == m.action_counts);
    CHECK(mdp_to_text(back) == text);

    std::string bad = text;
    bad.insert(bad.find('{') + 1, "\"surprise\": 1,");
    CHECK_THROWS_AS(mdp_from_text(bad), std::invalid_argument);
    CHECK_THROWS(mdp_from_text("not json"));
}

}
