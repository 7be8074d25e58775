#include "doctest.h"
#include "sdq/agents.hpp"

#include <array>
#include <cmath>
#include <cstring>

using namespace sdq;

namespace {

TabularMdp chain(int n_states, int n_actions, double gamma) {
    TabularMdp m = TabularMdp::make(n_states, n_actions, gamma);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) m.set(s, a, (s + a) % n_states, 1.0, 0.0);
    return m;
}

QTable random_table(int ns, int na, Rng& rng) {
    QTable q(ns, na);
    for (Eigen::Index i = 0; i < q.values.size(); ++i) q.values[i] = rng.uniform(-1, 1);
    return q;
}

bool bitwise_equal(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_SUITE("agents") {

TEST_CASE("q_step examples") {
    const TabularMdp m = chain(2, 2, 0.9);
    AgentState st = make_agent(AgentKind::q, m, QTable(2, 2));
    st = q_step(st, Transition{0, 1, 1.0, 1, false}, 0.5);
    CHECK(st.qa(0, 1) == 0.5);

    AgentState term = make_agent(AgentKind::q, m, QTable(2, 2));
    term = q_step(term, Transition{0, 0, 1.0, 1, true}, 1.0);
    CHECK(term.qa(0, 0) == 1.0);

    TabularMdp g0 = chain(1, 1, 0.0);
    AgentState avg = make_agent(AgentKind::q, g0, QTable(1, 1));
    avg = q_step(avg, Transition{0, 0, 1.0, 0, false}, 0.1);
    avg = q_step(avg, Transition{0, 0, 1.0, 0, false}, 0.1);
    CHECK(avg.qa(0, 0) == doctest::Approx(1.0 - 0.9 * 0.9).epsilon(1e-15));
}

TEST_CASE("double_q_step examples") {
    const TabularMdp m = chain(2, 2, 0.9);
    AgentState st = make_agent(AgentKind::double_q, m, QTable(2, 2), QTable(2, 2));
    AgentState up_a = double_q_step(st, Transition{0, 0, 1.0, 1, false}, 0.5, 1);
    CHECK(up_a.qa(0, 0) == 0.5);
    CHECK(up_a.qb.values.isZero());
    AgentState up_b = double_q_step(st, Transition{0, 0, 1.0, 1, false}, 0.5, 0);
    CHECK(up_b.qb(0, 0) == 0.5);
    CHECK(up_b.qa.values.isZero());

    QTable qa(2, 2), qb(2, 2);
    qa(1, 0) = 1.0;
    qb(1, 1) = 5.0;
    AgentState cross = make_agent(AgentKind::double_q, m, qa, qb);
    cross = double_q_step(cross, Transition{0, 0, 0.0, 1, false}, 1.0, 1);
    // argmax qa(1, .) = 0 and qb(1, 0) = 0.
    CHECK(cross.qa(0, 0) == 0.0);
}

TEST_CASE("sdq_step examples") {
    TabularMdp m = chain(2, 2, 1.0 - 1e-12);
    m.gamma = 1.0;  // direct step arithmetic only; never validated
    QTable qa(2, 2), qb(2, 2);
    qa(1, 0) = 2.0;
    qb(1, 1) = 3.0;
    AgentState st = make_agent(AgentKind::sdq, m, qa, qb);
    st = sdq_step(st, Transition{0, 0, 0.0, 1, false}, 1.0);
    CHECK(st.qa(0, 0) == 0.0);  // qa(1, argmax qb = 1) = 0
    CHECK(st.qb(0, 0) == 0.0);  // qb(1, argmax qa = 0) = 0

    const TabularMdp m2 = chain(2, 2, 0.9);
    AgentState t = make_agent(AgentKind::sdq, m2, QTable(2, 2), QTable(2, 2));
    t = sdq_step(t, Transition{0, 1, 1.0, 1, true}, 0.5);
    CHECK(t.qa(0, 1) == 0.5);
    CHECK(t.qb(0, 1) == 0.5);
}

TEST_CASE("sdq with equal tables equals q-learning") {
    Rng rng(1);
    const TabularMdp m = chain(4, 3, 0.9);
    for (int trial = 0; trial < 50; ++trial) {
        const QTable q0 = random_table(4, 3, rng);
        const Transition t{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(3)), rng.uniform(-1, 1),
                           static_cast<int>(rng.below(4)), rng.coin()};
        const double alpha = rng.uniform(0.01, 0.99);
        const AgentState s = sdq_step(make_agent(AgentKind::sdq, m, q0, q0), t, alpha);
        const AgentState q = q_step(make_agent(AgentKind::q, m, q0), t, alpha);
        CHECK(bitwise_equal(s.qa.values, s.qb.values));
        CHECK(bitwise_equal(s.qa.values, q.qa.values));
    }
}

TEST_CASE("sdq_step is symmetric in its tables") {
    Rng rng(2);
    const TabularMdp m = chain(5, 3, 0.9);
    for (int trial = 0; trial < 100; ++trial) {
        const QTable qa = random_table(5, 3, rng), qb = random_table(5, 3, rng);
        const Transition t{static_cast<int>(rng.below(5)), static_cast<int>(rng.below(3)), rng.uniform(-1, 1),
                           static_cast<int>(rng.below(5)), false};
        const AgentState ab = sdq_step(make_agent(AgentKind::sdq, m, qa, qb), t, 0.3);
        const AgentState ba = sdq_step(make_agent(AgentKind::sdq, m, qb, qa), t, 0.3);
        CHECK(bitwise_equal(ab.qa.values, ba.qb.values));
        CHECK(bitwise_equal(ab.qb.values, ba.qa.values));
    }
}

TEST_CASE("one step touches only the sampled entry") {
    Rng rng(3);
    const TabularMdp m = chain(4, 2, 0.9);
    for (AgentKind kind : {AgentKind::q, AgentKind::double_q, AgentKind::sdq}) {
        for (int trial = 0; trial < 50; ++trial) {
            const QTable qa = random_table(4, 2, rng), qb = random_table(4, 2, rng);
            const AgentState before = make_agent(kind, m, qa, qb);
            const Transition t{static_cast<int>(rng.below(4)), static_cast<int>(rng.below(2)), rng.uniform(-1, 1),
                               static_cast<int>(rng.below(4)), false};
            AgentState after = before;
            if (kind == AgentKind::q) after = q_step(after, t, 0.4);
            if (kind == AgentKind::double_q) after = double_q_step(after, t, 0.4, static_cast<int>(rng.below(2)));
            if (kind == AgentKind::sdq) after = sdq_step(after, t, 0.4);
            const int touched = stacked_index(4, t.s, t.a);
            for (int i = 0; i < 8; ++i) {
                if (i == touched) continue;
                CHECK(std::memcmp(&after.qa.values[i], &before.qa.values[i], sizeof(double)) == 0);
                if (kind != AgentKind::q)
                    CHECK(std::memcmp(&after.qb.values[i], &before.qb.values[i], sizeof(double)) == 0);
            }
        }
    }
}

TEST_CASE("q-learning never touches qb") {
    const TabularMdp m = chain(2, 2, 0.9);
    AgentState st = make_agent(AgentKind::q, m, QTable(2, 2), QTable(2, 2, 7.0));
    CHECK(st.qb.values.size() == 0);
    Rng zeta(0);
    st = learn(st, Transition{0, 0, 1.0, 1, false}, Schedule::constant(0.1, 0.5), zeta);
    CHECK(st.qb.values.size() == 0);
    CHECK(zeta.counter() == 0);
}

TEST_CASE("double q with zeta fixed to one never modifies qb") {
    Rng rng(4);
    const TabularMdp m = chain(3, 2, 0.9);
    const QTable qb = random_table(3, 2, rng);
    AgentState st = make_agent(AgentKind::double_q, m, random_table(3, 2, rng), qb);
    for (int k = 0; k < 1000; ++k) {
        const Transition t{static_cast<int>(rng.below(3)), static_cast<int>(rng.below(2)), rng.uniform(-1, 1),
                           static_cast<int>(rng.below(3)), false};
        st = double_q_step(st, t, 0.2, 1);
    }
    CHECK(bitwise_equal(st.qb.values, qb.values));
}

TEST_CASE("learn increments exactly the used counters") {
    const TabularMdp m = chain(2, 2, 0.9);
    const Schedule sch = Schedule::constant(0.1, 0.5);
    Rng zeta(9);
    AgentState q = learn(make_agent(AgentKind::q, m, QTable(2, 2)), Transition{1, 1, 0, 0, false}, sch, zeta);
    CHECK(q.count(Estimator::single, stacked_index(2, 1, 1)) == 1);
    AgentState s = make_agent(AgentKind::sdq, m, QTable(2, 2), QTable(2, 2));
    s = learn(s, Transition{1, 0, 0, 0, false}, sch, zeta);
    CHECK(s.count(Estimator::a, 1) == 1);
    CHECK(s.count(Estimator::b, 1) == 1);
    AgentState d = make_agent(AgentKind::double_q, m, QTable(2, 2), QTable(2, 2));
    long total = 0;
    for (int k = 0; k < 100; ++k) {
        d = learn(d, Transition{0, 0, 0, 0, false}, sch, zeta);
        total = d.count(Estimator::a, 0) + d.count(Estimator::b, 0);
        CHECK(total == k + 1);
    }
    // A fair coin splits 100 updates roughly evenly.
    CHECK(std::abs(d.count(Estimator::a, 0) - 50) < 4 * 5);
}

TEST_CASE("schedules") {
    Schedule inv = Schedule::visit_based();
    CHECK(exploration_rate(inv, 4) == 0.5);
    CHECK(exploration_rate(inv, 1) == 1.0);
    CHECK(exploration_rate(Schedule::constant(0.1, 0.01), 1000) == 0.1);

    const TabularMdp m = chain(2, 2, 0.9);
    AgentState st = make_agent(AgentKind::double_q, m, QTable(2, 2), QTable(2, 2));
    st.n_a[stacked_index(2, 1, 0)] = 1;
    CHECK(step_size(inv, st, 1, 0, Estimator::a) == 1.0);
    st.n_a[stacked_index(2, 1, 0)] = 4;
    CHECK(step_size(inv, st, 1, 0, Estimator::a) == 0.25);
    CHECK(step_size(Schedule::constant(0.1, 0.01), st, 1, 0, Estimator::a) == 0.01);
    CHECK_THROWS(step_size(inv, st, 0, 0, Estimator::b));  // count 0

    CHECK_THROWS_AS(Schedule::constant(0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(Schedule::constant(1.5, 0.1), std::invalid_argument);
    Schedule bad;
    bad.alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("first update under the inverse schedule overwrites the entry") {
    const TabularMdp m = chain(2, 2, 0.9);
    Rng zeta(1);
    AgentState st = make_agent(AgentKind::q, m, QTable(2, 2, 3.0));
    st = learn(st, Transition{0, 0, 1.0, 1, true}, Schedule::visit_based(), zeta);
    CHECK(st.qa(0, 0) == 1.0);
}

TEST_CASE("epsilon-greedy action selection") {
    QTable q(1, 4);
    q(0, 2) = 1.0;
    Rng rng(5);
    for (int i = 0; i < 100; ++i) CHECK(select_action(q, 0, 4, Schedule::constant(0.0, 0.1), 1, rng) == 2);

    std::array<int, 4> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[select_action(q, 0, 4, Schedule::constant(1.0, 0.1), 1, rng)];
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (int c : counts) CHECK(std::abs(c - n / 4.0) < 3.0 * sd);

    // Only the legal prefix is ever chosen.
    for (int i = 0; i < 1000; ++i) CHECK(select_action(q, 0, 2, Schedule::constant(1.0, 0.1), 1, rng) < 2);
}

TEST_CASE("two-estimator agents act on the mean table") {
    const TabularMdp m = chain(1, 2, 0.9);
    QTable qa(1, 2), qb(1, 2);
    qa(0, 0) = 1.0;
    qb(0, 1) = 3.0;
    const AgentState st = make_agent(AgentKind::sdq, m, qa, qb);
    const QTable act = acting_table(st);
    CHECK(act(0, 0) == 0.5);
    CHECK(act(0, 1) == 1.5);
    CHECK(agent_inf_norm(st) == 3.0);
}

TEST_CASE("agent kind names round trip") {
    for (AgentKind k : {AgentKind::q, AgentKind::double_q, AgentKind::sdq}) CHECK(agent_kind_from(to_string(k)) == k);
    CHECK_THROWS(agent_kind_from("sarsa"));
}

TEST_CASE("q-learning with one B action estimates B near its mean") {
    const Env env = make_bias_mdp(0.9, 1, -0.1, 1.0);
    AgentState st = make_agent(AgentKind::q, env.mdp, QTable(3, 2));
    const Schedule sch{Schedule::Epsilon::constant, 0.1, Schedule::Alpha::inverse_sa_visits, 1.0};
    Rng env_rng(1), act_rng(2), zeta(3);
    for (int ep = 0; ep < 100000; ++ep) {
        int s = env.reset();
        for (;;) {
            ++st.state_visits[s];
            const int a = select_action(acting_table(st), s, env.mdp.legal_actions(s), sch, st.state_visits[s],
                                        act_rng);
            const Transition t = env.step(s, a, env_rng);
            st = learn(std::move(st), t, sch, zeta);
            s = t.s_next;
            if (t.done) break;
        }
    }
    CHECK(std::abs(st.qa(bias_mdp::kStateB, 0) + 0.1) < 0.02);
}

}
