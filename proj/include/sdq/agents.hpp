#pragma once

#include "sdq/envs.hpp"
#include "sdq/mdp.hpp"
#include "sdq/rng.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace sdq {

enum class AgentKind { q, double_q, sdq };

std::string_view to_string(AgentKind kind);
AgentKind agent_kind_from(std::string_view name);

enum class Estimator { single, a, b };

struct AgentState {
    AgentKind kind = AgentKind::q;
    double gamma = 0.0;
    std::vector<int> legal;  // legal action count per state
    QTable qa;
    QTable qb;               // empty for AgentKind::q
    std::vector<long> n;     // updates per stacked pair (single estimator)
    std::vector<long> n_a;
    std::vector<long> n_b;
    std::vector<long> state_visits;
    long step_index = 0;

    bool two_estimators() const { return kind != AgentKind::q; }
    long count(Estimator e, int pair) const;
};

// qb is ignored for AgentKind::q.
AgentState make_agent(AgentKind kind, const TabularMdp& mdp, QTable qa, QTable qb = {});

// Standard Q-learning update at (s, a).
AgentState q_step(AgentState state, const Transition& t, double alpha);

// Double Q-learning: zeta = 1 updates qa (action picked by qa, value read
// from qb); zeta = 0 is the mirror image. The other table is untouched.
AgentState double_q_step(AgentState state, const Transition& t, double alpha, int zeta);

// Simultaneous double Q-learning: both tables update at (s, a) from the
// pre-step tables. qa bootstraps from itself at argmax of qb and vice versa.
AgentState sdq_step(AgentState state, const Transition& t, double alpha);

struct Schedule {
    enum class Epsilon { constant, inverse_sqrt_state_visits };
    enum class Alpha { constant, inverse_sa_visits };
    Epsilon epsilon_rule = Epsilon::constant;
    double epsilon = 0.1;
    Alpha alpha_rule = Alpha::constant;
    double alpha = 0.1;

    static Schedule constant(double epsilon, double alpha);
    static Schedule visit_based();
    void validate() const;
};

// Exploration rate for a state visited `visits` times (including this one).
double exploration_rate(const Schedule& schedule, long visits);

// Step size for the given estimator's counter; counters are incremented
// before this is queried, so the first update sees count 1.
double step_size(const Schedule& schedule, const AgentState& state, int s, int a, Estimator estimator);

// Table used for acting: qa for Q-learning, (qa + qb) / 2 otherwise.
QTable acting_table(const AgentState& state);

// Epsilon-greedy over the legal actions of s. Always consumes one uniform
// draw for the exploration coin and, when exploring, one integer draw.
int select_action(const QTable& q_for_acting, int s, int legal, const Schedule& schedule, long state_visits,
                  Rng& rng);

// Full learning step: increments counters, computes alpha, draws zeta from
// zeta_rng for double Q-learning, and applies the algorithm's update.
AgentState learn(AgentState state, const Transition& t, const Schedule& schedule, Rng& zeta_rng);

// Largest |Q| across the agent's tables.
double agent_inf_norm(const AgentState& state);

}  // namespace sdq
