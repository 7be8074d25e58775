#pragma once

#include "sdq/mdp.hpp"
#include "sdq/rng.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sdq {

struct Transition {
    int s = 0;
    int a = 0;
    double r = 0.0;
    int s_next = 0;
    bool done = false;
};

// Zero-mean noise added to the expected reward of a (s, a, s') triple.
struct RewardNoise {
    enum class Kind { none, gaussian, two_point };
    Kind kind = Kind::none;
    // gaussian: standard deviation; two_point: +/- offset with equal odds.
    double scale = 0.0;

    double sample(Rng& rng) const;
    double stddev() const { return kind == Kind::none ? 0.0 : scale; }
    bool bounded() const { return kind != Kind::gaussian || scale == 0.0; }
};

inline constexpr long kEpisodeStepCap = 10'000;

// Sampling environment together with its exact expected-reward MDP.
struct Env {
    std::string id;
    TabularMdp mdp;
    std::vector<RewardNoise> noise;  // same layout as mdp.reward
    int start_state = 0;

    // Sampled reward for one triple; mean equals mdp.r(s, a, next).
    double sample_reward(int s, int a, int next, Rng& rng) const;
    // Samples s' ~ P(.|s, a) and a reward. done is set when s' is terminal.
    Transition step(int s, int a, Rng& rng) const;
    int reset() const { return start_state; }

    // Bound on every sampled reward, if one exists.
    std::optional<double> reward_bound() const;
    const RewardNoise& noise_at(int s, int a, int next) const { return noise[mdp.cell(s, a, next)]; }
};

// Rescales rewards (expected and noise) so every sampled |r| <= 1.
// Returns the rescaled env and the factor applied.
std::pair<Env, double> rescale_rewards(const Env& env);

namespace bias_mdp {
inline constexpr int kStateA = 0;
inline constexpr int kStateB = 1;
inline constexpr int kTerminal = 2;
inline constexpr int kLeft = 0;
inline constexpr int kRight = 1;
}  // namespace bias_mdp

// States {A, B, T}. A: left -> B (reward 0), right -> T (reward 0).
// B: n_b_actions actions, each -> T with reward N(mean, stddev).
// Actions beyond a state's legal count are padded copies and never chosen.
Env make_bias_mdp(double gamma = 0.9, int n_b_actions = 10, double mean = -0.1, double stddev = 1.0);

namespace grid_action {
inline constexpr int kUp = 0;
inline constexpr int kRight = 1;
inline constexpr int kDown = 2;
inline constexpr int kLeft = 3;
}  // namespace grid_action

// size x size grid, start lower-left, terminal goal upper-right. Every
// non-goal move pays step_rewards.first or .second with equal odds; entering
// the goal pays goal_reward. Off-grid moves stay in place.
Env make_stochastic_grid(int size = 8, std::pair<double, double> step_rewards = {-10.0, 2.0},
                         double goal_reward = 20.0, double gamma = 0.95);

// "cliffwalk" (4x12) or "frozenlake_det" (deterministic 4x4).
Env make_named_env(std::string_view name, double gamma);

// Builds any env by CLI-facing name: "bias", "grid", "cliffwalk", "frozenlake_det".
Env make_env_by_name(std::string_view name, double gamma);

// Row-major cell index of a grid with row 0 on top.
inline int grid_cell(int cols, int row, int col) { return row * cols + col; }

// Textual dump of a grid env's greedy policy (arrows) for inspection.
std::string render_grid_policy(const Env& env, const Policy& policy, int rows, int cols);

}  // namespace sdq
