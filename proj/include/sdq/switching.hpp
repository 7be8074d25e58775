#pragma once

#include "sdq/envs.hpp"
#include "sdq/mdp.hpp"
#include "sdq/rng.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace sdq {

// Everything the vectorized dynamics need, precomputed once per
// (mdp, sampling distribution, alpha).
struct DynamicsContext {
    TabularMdp mdp;
    std::vector<RewardNoise> noise;  // empty: rewards are deterministic
    Eigen::VectorXd d;               // diagonal of D
    double d_min = 0.0;
    double d_max = 0.0;
    Eigen::MatrixXd P;               // |S||A| x |S|
    Eigen::VectorXd R;
    Eigen::VectorXd DR;
    Eigen::MatrixXd DP;
    double alpha = 0.0;
    double gamma = 0.0;
    double rho = 0.0;
    QTable q_star;
    Policy pi_star;
    Eigen::MatrixXd pi_star_matrix;

    int n_states() const { return mdp.n_states; }
    int n_pairs() const { return mdp.n_pairs(); }
};

inline constexpr double kBellmanResidualTol = 1e-8;

// Builds the context. Q* comes from value iteration at `vi_tol`. Throws if
// d has a non-positive entry or the Bellman identity residual exceeds 1e-8.
DynamicsContext assemble_dynamics(const TabularMdp& mdp, const SamplingDistribution& d, double alpha,
                                  double vi_tol = 1e-13);
// Same, with the env's reward noise used by the i.i.d. sampler.
DynamicsContext assemble_dynamics(const Env& env, const SamplingDistribution& d, double alpha,
                                  double vi_tol = 1e-13);

// ||(gamma D P Pi_{Q*} - D) Q* + D R||_inf.
double bellman_identity_residual(const DynamicsContext& ctx);

// Greedy policy of a stacked vector over each state's legal actions.
Policy switching_policy(const DynamicsContext& ctx, const Eigen::VectorXd& q);

// P Pi^pi x, computed without forming the matrix.
Eigen::VectorXd apply_p_pi(const DynamicsContext& ctx, const Policy& pi, const Eigen::VectorXd& x);
// D P Pi^pi x.
Eigen::VectorXd apply_dp_pi(const DynamicsContext& ctx, const Policy& pi, const Eigen::VectorXd& x);
// (I + alpha * gamma * D P Pi^pi - alpha * D) x.
Eigen::VectorXd apply_system(const DynamicsContext& ctx, const Policy& pi, const Eigen::VectorXd& x);

// A_Q = I + alpha * (gamma * D P Pi_Q - D), dense.
Eigen::MatrixXd system_matrix(const DynamicsContext& ctx, const Eigen::VectorXd& q);
Eigen::MatrixXd system_matrix(const DynamicsContext& ctx, const Policy& pi);

// Max absolute row sum.
double induced_inf_norm(const Eigen::MatrixXd& m);

struct Sample {
    int s = 0;
    int a = 0;
    int s_next = 0;
    double r = 0.0;
};

// (s, a) ~ d, s' ~ P(.|s, a), r from the reward noise model when present.
Sample iid_sampler(const DynamicsContext& ctx, Rng& rng);
// The same sample as an infinite-horizon transition (never done).
Transition to_transition(const Sample& x);

struct VectorStep {
    Eigen::VectorXd qa;
    Eigen::VectorXd qb;
    Eigen::VectorXd w_a;
    Eigen::VectorXd w_b;
};

// Mean drift DR + gamma D P Pi_{q_select} q_eval - D q_eval.
Eigen::VectorXd mean_drift(const DynamicsContext& ctx, const Eigen::VectorXd& q_eval, const Eigen::VectorXd& q_select);
// Martingale-difference noise of one sample for estimator q_eval whose
// greedy action is chosen by q_select.
Eigen::VectorXd sample_noise(const DynamicsContext& ctx, const Eigen::VectorXd& q_eval,
                             const Eigen::VectorXd& q_select, const Sample& x);

// One SDQ step written in switched-system form:
// q' = q + alpha * (DR + gamma D P Pi_{other} q - D q + w).
VectorStep sdq_vector_step(const DynamicsContext& ctx, const Eigen::VectorXd& qa, const Eigen::VectorXd& qb,
                           const Sample& x);

// State of every tracked system at one step. The comparison systems are
// stored as offsets from Q* (upper_a = Q^{A_U} - Q*, and so on).
struct LockstepState {
    Eigen::VectorXd qa;
    Eigen::VectorXd qb;
    Eigen::VectorXd upper_a;
    Eigen::VectorXd upper_b;
    Eigen::VectorXd lower_a;
    Eigen::VectorXd lower_b;
    Eigen::VectorXd err;              // propagated by its own recursion
    Eigen::VectorXd err_upper;
    Eigen::VectorXd err_lower;
    Eigen::VectorXd err_upper_lower;
};

struct LockstepTrace {
    std::vector<LockstepState> states;  // steps + 1 entries
    std::vector<Sample> samples;        // samples[k] drives k -> k + 1
    std::vector<Eigen::VectorXd> w_a;
    std::vector<Eigen::VectorXd> w_b;

    int steps() const { return static_cast<int>(samples.size()); }
};

// Comparison systems start at the equality case: upper/lower offsets equal
// the original offsets, and every error system starts at qa0 - qb0.
LockstepState equality_initial_state(const DynamicsContext& ctx, const Eigen::VectorXd& qa0,
                                     const Eigen::VectorXd& qb0);

// Advances one step with one shared sample.
LockstepState lockstep_advance(const DynamicsContext& ctx, const LockstepState& cur, const Sample& x,
                               Eigen::VectorXd* w_a_out = nullptr, Eigen::VectorXd* w_b_out = nullptr);

LockstepTrace lockstep_simulate(const DynamicsContext& ctx, const Eigen::VectorXd& qa0, const Eigen::VectorXd& qb0,
                                int steps, Rng& rng);

struct Violation {
    int step = 0;
    int coordinate = 0;
    std::string relation;
    double amount = 0.0;  // how far the ordering is broken
};

struct SandwichReport {
    long checks = 0;
    long violations = 0;
    std::vector<Violation> first;     // up to kMaxListed
    double min_slack_upper = 0.0;     // min over k of (upper - original), A and B
    double min_slack_lower = 0.0;     // min over k of (original - lower), A and B
    double min_slack_err = 0.0;       // min of err_upper - err and err - err_lower
    double min_slack_err_ul = 0.0;    // min of err_upper - err_upper_lower
    double max_identity_error = 0.0;  // max ||err - (qa - qb)||_inf

    static constexpr std::size_t kMaxListed = 20;
    bool ok() const { return violations == 0; }
};

inline constexpr double kSandwichTol = 1e-9;

// Checks, at every step, every elementwise ordering and the identity
// err = qa - qb.
SandwichReport verify_sandwich(const LockstepTrace& trace, const DynamicsContext& ctx, double tol = kSandwichTol);
// Accumulates into an existing report (for streaming checks).
void check_sandwich_step(const LockstepState& st, const DynamicsContext& ctx, int step, double tol,
                         SandwichReport& report);

struct RecursionReport {
    double err_upper_minus_upper_lower = 0.0;
    double err_upper_minus_lower = 0.0;
    double upper_minus_lower_a = 0.0;
    double upper_minus_lower_b = 0.0;

    double max() const;
    bool ok(double tol = 1e-10) const { return max() <= tol; }
};

// Recomputes each subtraction sequence from its noise-free recursion and
// compares against the direct difference of stored states.
RecursionReport subtraction_recursions(const LockstepTrace& trace, const DynamicsContext& ctx);

// CSV: k, ||qa-Q*||, ||qb-Q*||, ||err||, ||qa_U-Q*||, ||qa_L-Q*||,
// min_slack_upper, min_slack_lower.
void write_trace_csv(const LockstepTrace& trace, const DynamicsContext& ctx, const std::filesystem::path& path);
std::string trace_csv(const LockstepTrace& trace, const DynamicsContext& ctx);

}  // namespace sdq
