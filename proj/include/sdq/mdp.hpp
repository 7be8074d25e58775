#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdq {

class Rng;

// Stacked index layout used everywhere: action-major blocks, i.e. all states
// for action 0, then all states for action 1, and so on.
inline int stacked_index(int n_states, int s, int a) { return a * n_states + s; }

// Finite MDP with dense (s, a, s') tables. Rewards are expected rewards;
// environments may layer sampled noise on top.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    double gamma = 0.0;
    std::vector<double> transition;  // [stacked(s,a) * n_states + s']
    std::vector<double> reward;      // same layout as transition
    std::vector<int> terminals;      // sorted, unique
    // Number of legal actions per state; legal actions are the prefix
    // [0, action_counts[s]). Other actions still have well-defined dynamics.
    std::vector<int> action_counts;

    static TabularMdp make(int n_states, int n_actions, double gamma);

    int n_pairs() const { return n_states * n_actions; }
    int pair(int s, int a) const { return stacked_index(n_states, s, a); }
    std::size_t cell(int s, int a, int next) const {
        return static_cast<std::size_t>(pair(s, a)) * n_states + next;
    }

    double p(int s, int a, int next) const { return transition[cell(s, a, next)]; }
    double r(int s, int a, int next) const { return reward[cell(s, a, next)]; }
    void set(int s, int a, int next, double prob, double rew) {
        transition[cell(s, a, next)] = prob;
        reward[cell(s, a, next)] = rew;
    }

    double expected_reward(int s, int a) const;
    bool is_terminal(int s) const;
    int legal_actions(int s) const { return action_counts[s]; }
    // Largest |r(s,a,s')| over triples with positive probability.
    double reward_bound() const;

    // Turns every listed terminal into a zero-reward absorbing self-loop.
    void make_terminals_absorbing();

    // Throws std::invalid_argument describing the first violated invariant.
    void validate() const;
};

struct QTable {
    int n_states = 0;
    int n_actions = 0;
    Eigen::VectorXd values;

    QTable() = default;
    QTable(int n_states, int n_actions, double fill = 0.0)
        : n_states(n_states), n_actions(n_actions),
          values(Eigen::VectorXd::Constant(n_states * n_actions, fill)) {}
    QTable(int n_states, int n_actions, Eigen::VectorXd v)
        : n_states(n_states), n_actions(n_actions), values(std::move(v)) {}

    double& operator()(int s, int a) { return values[stacked_index(n_states, s, a)]; }
    double operator()(int s, int a) const { return values[stacked_index(n_states, s, a)]; }

    double inf_norm() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }
    bool finite() const { return values.allFinite(); }
};

// Lowest action index attaining the maximum over [0, limit).
int greedy_action(const Eigen::Ref<const Eigen::VectorXd>& stacked, int n_states, int s, int limit);
int greedy_action(const QTable& q, int s, int limit);
inline int greedy_action(const QTable& q, int s) { return greedy_action(q, s, q.n_actions); }
double max_value(const QTable& q, int s, int limit);

struct SamplingDistribution {
    Eigen::VectorXd d;  // stacked layout
    double d_min = 0.0;
    double d_max = 0.0;

    static SamplingDistribution from(Eigen::VectorXd d);
    static SamplingDistribution uniform(int n_pairs);
};

struct Policy {
    std::vector<int> action;
};

// Bellman optimality operator over the legal action sets.
QTable bellman_optimality(const TabularMdp& mdp, const QTable& q);

struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, double residual, long sweeps)
        : std::runtime_error(what), residual(residual), sweeps(sweeps) {}
    double residual;
    long sweeps;
};

inline constexpr double kValueIterationTol = 1e-10;
inline constexpr long kValueIterationMaxSweeps = 1'000'000;

// Returns Q with ||T(Q) - Q||_inf <= tol.
QTable value_iteration(const TabularMdp& mdp, double tol = kValueIterationTol,
                       long max_sweeps = kValueIterationMaxSweeps);

Policy greedy_policy(const QTable& q);
Policy greedy_policy(const QTable& q, const TabularMdp& mdp);

// Pi^pi: |S| x |S||A|, row s selects stacked index (pi(s), s).
Eigen::MatrixXd policy_matrix(const Policy& policy, int n_states, int n_actions);

// P: |S||A| x |S| in the stacked layout.
Eigen::MatrixXd stacked_transition(const TabularMdp& mdp);
// R: expected one-step reward per stacked pair.
Eigen::VectorXd expected_reward_vector(const TabularMdp& mdp);
// P Pi^pi: transition matrix over state-action pairs.
Eigen::MatrixXd sa_transition_matrix(const TabularMdp& mdp, const Policy& policy);

// rho = 1 - alpha * d_min * (1 - gamma).
double decay_rate(double alpha, double d_min, double gamma);
// max(R_max, ||Q_0||_inf) / (1 - gamma).
double q_max_bound(double r_max, double q0_inf_norm, double gamma);

// Dense random MDP: rows drawn from normalized uniforms, rewards uniform in
// [-reward_scale, reward_scale]. No terminal states.
TabularMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng,
                      double reward_scale = 1.0);

// Plain-text (JSON) serialization, schema "sdq-mdp" version 1.
std::string mdp_to_text(const TabularMdp& mdp);
TabularMdp mdp_from_text(const std::string& text);
void save_mdp(const TabularMdp& mdp, const std::filesystem::path& path);
TabularMdp load_mdp(const std::filesystem::path& path);

}  // namespace sdq
