#include "sdq/agents.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdq {

std::string_view to_string(AgentKind kind) {
    switch (kind) {
        case AgentKind::q: return "q";
        case AgentKind::double_q: return "double_q";
        case AgentKind::sdq: return "sdq";
    }
    return "?";
}

AgentKind agent_kind_from(std::string_view name) {
    if (name == "q") return AgentKind::q;
    if (name == "double_q") return AgentKind::double_q;
    if (name == "sdq") return AgentKind::sdq;
    throw std::invalid_argument("unknown algorithm \"" + std::string(name) + "\"");
}

long AgentState::count(Estimator e, int pair) const {
    switch (e) {
        case Estimator::single: return n[pair];
        case Estimator::a: return n_a[pair];
        case Estimator::b: return n_b[pair];
    }
    return 0;
}

AgentState make_agent(AgentKind kind, const TabularMdp& mdp, QTable qa, QTable qb) {
    if (qa.n_states != mdp.n_states || qa.n_actions != mdp.n_actions)
        throw std::invalid_argument("make_agent: qa shape does not match the mdp");
    AgentState st;
    st.kind = kind;
    st.gamma = mdp.gamma;
    st.legal = mdp.action_counts;
    st.qa = std::move(qa);
    if (kind != AgentKind::q) {
        if (qb.n_states != mdp.n_states || qb.n_actions != mdp.n_actions)
            throw std::invalid_argument("make_agent: qb shape does not match the mdp");
        st.qb = std::move(qb);
    }
    const auto pairs = static_cast<std::size_t>(mdp.n_pairs());
    st.n.assign(pairs, 0);
    st.n_a.assign(pairs, 0);
    st.n_b.assign(pairs, 0);
    st.state_visits.assign(mdp.n_states, 0);
    return st;
}

AgentState q_step(AgentState state, const Transition& t, double alpha) {
    if (state.kind != AgentKind::q) throw std::logic_error("q_step: agent is not a Q-learner");
    QTable& q = state.qa;
    const double bootstrap = t.done ? 0.0 : max_value(q, t.s_next, state.legal[t.s_next]);
    const double target = t.r + state.gamma * bootstrap;
    q(t.s, t.a) += alpha * (target - q(t.s, t.a));
    ++state.step_index;
    return state;
}

AgentState double_q_step(AgentState state, const Transition& t, double alpha, int zeta) {
    if (state.kind != AgentKind::double_q) throw std::logic_error("double_q_step: agent is not double Q");
    QTable& updated = zeta == 1 ? state.qa : state.qb;
    const QTable& other = zeta == 1 ? state.qb : state.qa;
    double bootstrap = 0.0;
    if (!t.done) bootstrap = other(t.s_next, greedy_action(updated, t.s_next, state.legal[t.s_next]));
    const double target = t.r + state.gamma * bootstrap;
    updated(t.s, t.a) += alpha * (target - updated(t.s, t.a));
    ++state.step_index;
    return state;
}

AgentState sdq_step(AgentState state, const Transition& t, double alpha) {
    if (state.kind != AgentKind::sdq) throw std::logic_error("sdq_step: agent is not SDQ");
    QTable& qa = state.qa;
    QTable& qb = state.qb;
    double boot_a = 0.0;
    double boot_b = 0.0;
    if (!t.done) {
        const int legal = state.legal[t.s_next];
        boot_a = qa(t.s_next, greedy_action(qb, t.s_next, legal));
        boot_b = qb(t.s_next, greedy_action(qa, t.s_next, legal));
    }
    // Both targets are read before either table is written.
    const double target_a = t.r + state.gamma * boot_a;
    const double target_b = t.r + state.gamma * boot_b;
    qa(t.s, t.a) += alpha * (target_a - qa(t.s, t.a));
    qb(t.s, t.a) += alpha * (target_b - qb(t.s, t.a));
    ++state.step_index;
    return state;
}

Schedule Schedule::constant(double epsilon, double alpha) {
    Schedule s;
    s.epsilon = epsilon;
    s.alpha = alpha;
    s.validate();
    return s;
}

Schedule Schedule::visit_based() {
    Schedule s;
    s.epsilon_rule = Epsilon::inverse_sqrt_state_visits;
    s.alpha_rule = Alpha::inverse_sa_visits;
    return s;
}

void Schedule::validate() const {
    if (epsilon_rule == Epsilon::constant && !(epsilon >= 0.0 && epsilon <= 1.0))
        throw std::invalid_argument("schedule: constant epsilon must lie in [0, 1]");
    if (alpha_rule == Alpha::constant && !(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("schedule: constant alpha must lie in (0, 1)");
}

double exploration_rate(const Schedule& schedule, long visits) {
    if (schedule.epsilon_rule == Schedule::Epsilon::constant) return schedule.epsilon;
    return visits <= 1 ? 1.0 : 1.0 / std::sqrt(static_cast<double>(visits));
}

double step_size(const Schedule& schedule, const AgentState& state, int s, int a, Estimator estimator) {
    if (schedule.alpha_rule == Schedule::Alpha::constant) return schedule.alpha;
    const long c = state.count(estimator, state.qa.n_states * a + s);
    if (c < 1) throw std::logic_error("step_size: counter must be incremented before use");
    return 1.0 / static_cast<double>(c);
}

QTable acting_table(const AgentState& state) {
    if (!state.two_estimators()) return state.qa;
    return QTable(state.qa.n_states, state.qa.n_actions, (state.qa.values + state.qb.values) * 0.5);
}

int select_action(const QTable& q_for_acting, int s, int legal, const Schedule& schedule, long state_visits,
                  Rng& rng) {
    const double eps = exploration_rate(schedule, state_visits);
    if (rng.uniform() < eps) return static_cast<int>(rng.below(static_cast<std::uint64_t>(legal)));
    return greedy_action(q_for_acting, s, legal);
}

AgentState learn(AgentState state, const Transition& t, const Schedule& schedule, Rng& zeta_rng) {
    const int pair = state.qa.n_states * t.a + t.s;
    switch (state.kind) {
        case AgentKind::q: {
            ++state.n[pair];
            const double alpha = step_size(schedule, state, t.s, t.a, Estimator::single);
            return q_step(std::move(state), t, alpha);
        }
        case AgentKind::double_q: {
            const int zeta = zeta_rng.coin() ? 1 : 0;
            const Estimator e = zeta == 1 ? Estimator::a : Estimator::b;
            ++(zeta == 1 ? state.n_a : state.n_b)[pair];
            const double alpha = step_size(schedule, state, t.s, t.a, e);
            return double_q_step(std::move(state), t, alpha, zeta);
        }
        case AgentKind::sdq: {
            ++state.n_a[pair];
            ++state.n_b[pair];
            const double alpha = step_size(schedule, state, t.s, t.a, Estimator::a);
            return sdq_step(std::move(state), t, alpha);
        }
    }
    return state;
}

double agent_inf_norm(const AgentState& state) {
    double m = state.qa.inf_norm();
    if (state.two_estimators()) m = std::max(m, state.qb.inf_norm());
    return m;
}

}  // namespace sdq
