#include "sdq/envs.hpp"

#include "sdq/env_assets.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sdq {

double RewardNoise::sample(Rng& rng) const {
    switch (kind) {
        case Kind::none: return 0.0;
        case Kind::gaussian: return scale * rng.normal();
        case Kind::two_point: return rng.coin() ? scale : -scale;
    }
    return 0.0;
}

double Env::sample_reward(int s, int a, int next, Rng& rng) const {
    const RewardNoise& n = noise_at(s, a, next);
    const double mean = mdp.r(s, a, next);
    return n.kind == RewardNoise::Kind::none ? mean : mean + n.sample(rng);
}

Transition Env::step(int s, int a, Rng& rng) const {
    Transition t;
    t.s = s;
    t.a = a;
    const std::size_t base = mdp.cell(s, a, 0);
    t.s_next = static_cast<int>(
        rng.categorical(std::span<const double>(mdp.transition.data() + base, mdp.n_states)));
    t.r = sample_reward(s, a, t.s_next, rng);
    t.done = mdp.is_terminal(t.s_next);
    return t;
}

std::optional<double> Env::reward_bound() const {
    double bound = 0.0;
    for (std::size_t i = 0; i < noise.size(); ++i) {
        if (mdp.transition[i] <= 0.0) continue;
        if (!noise[i].bounded()) return std::nullopt;
        bound = std::max(bound, std::abs(mdp.reward[i]) + noise[i].stddev());
    }
    return bound;
}

std::pair<Env, double> rescale_rewards(const Env& env) {
    Env out = env;
    double bound = 0.0;
    for (std::size_t i = 0; i < env.noise.size(); ++i) {
        if (env.mdp.transition[i] <= 0.0) continue;
        // Gaussian noise is unbounded; scale by mean + 4 sigma instead.
        const double spread = env.noise[i].kind == RewardNoise::Kind::gaussian ? 4.0 * env.noise[i].scale
                                                                                : env.noise[i].stddev();
        bound = std::max(bound, std::abs(env.mdp.reward[i]) + spread);
    }
    const double factor = bound > 1.0 ? 1.0 / bound : 1.0;
    for (double& r : out.mdp.reward) r *= factor;
    for (RewardNoise& n : out.noise) n.scale *= factor;
    return {std::move(out), factor};
}

Env make_bias_mdp(double gamma, int n_b_actions, double mean, double stddev) {
    using namespace bias_mdp;
    if (n_b_actions < 1) throw std::invalid_argument("bias mdp: need at least one action at B");
    Env env;
    env.id = "bias";
    const int n_actions = std::max(2, n_b_actions);
    env.mdp = TabularMdp::make(3, n_actions, gamma);
    env.mdp.terminals = {kTerminal};
    env.mdp.action_counts = {2, n_b_actions, n_actions};
    env.noise.assign(env.mdp.transition.size(), RewardNoise{});
    for (int a = 0; a < n_actions; ++a) {
        // Padded actions at A behave like "right".
        env.mdp.set(kStateA, a, a == kLeft ? kStateB : kTerminal, 1.0, 0.0);
        env.mdp.set(kStateB, a, kTerminal, 1.0, mean);
        env.noise[env.mdp.cell(kStateB, a, kTerminal)] = {RewardNoise::Kind::gaussian, stddev};
    }
    env.mdp.make_terminals_absorbing();
    env.mdp.validate();
    env.start_state = kStateA;
    return env;
}

namespace {

struct GridLayout {
    int rows = 0;
    int cols = 0;
    std::vector<std::string> cells;
};

GridLayout parse_layout(std::string_view text) {
    GridLayout g;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        if (g.cols == 0) g.cols = static_cast<int>(line.size());
        if (static_cast<int>(line.size()) != g.cols) throw std::invalid_argument("grid asset: ragged rows");
        g.cells.push_back(line);
    }
    g.rows = static_cast<int>(g.cells.size());
    return g;
}

// Cell reached by moving from (row, col); off-grid moves stay put.
std::pair<int, int> move(int rows, int cols, int row, int col, int action) {
    using namespace grid_action;
    switch (action) {
        case kUp: row = std::max(0, row - 1); break;
        case kDown: row = std::min(rows - 1, row + 1); break;
        case kLeft: col = std::max(0, col - 1); break;
        case kRight: col = std::min(cols - 1, col + 1); break;
        default: break;
    }
    return {row, col};
}

int find_cell(const GridLayout& g, char c) {
    for (int r = 0; r < g.rows; ++r)
        for (int col = 0; col < g.cols; ++col)
            if (g.cells[r][col] == c) return grid_cell(g.cols, r, col);
    throw std::invalid_argument(std::string("grid asset: missing '") + c + "'");
}

Env make_frozenlake_det(double gamma) {
    const GridLayout g = parse_layout(assets::kFrozenLakeMap);
    Env env;
    env.id = "frozenlake_det";
    env.mdp = TabularMdp::make(g.rows * g.cols, 4, gamma);
    env.noise.assign(env.mdp.transition.size(), RewardNoise{});
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c)
            if (g.cells[r][c] == 'H' || g.cells[r][c] == 'G') env.mdp.terminals.push_back(grid_cell(g.cols, r, c));
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const int s = grid_cell(g.cols, r, c);
            for (int a = 0; a < 4; ++a) {
                const auto [nr, nc] = move(g.rows, g.cols, r, c, a);
                const int next = grid_cell(g.cols, nr, nc);
                env.mdp.set(s, a, next, 1.0, g.cells[nr][nc] == 'G' ? 1.0 : 0.0);
            }
        }
    }
    env.mdp.make_terminals_absorbing();
    env.mdp.validate();
    env.start_state = find_cell(g, 'S');
    return env;
}

Env make_cliffwalk(double gamma) {
    const GridLayout g = parse_layout(assets::kCliffWalkMap);
    Env env;
    env.id = "cliffwalk";
    env.mdp = TabularMdp::make(g.rows * g.cols, 4, gamma);
    env.noise.assign(env.mdp.transition.size(), RewardNoise{});
    const int start = find_cell(g, 'S');
    env.mdp.terminals = {find_cell(g, 'G')};
    for (int r = 0; r < g.rows; ++r) {
        for (int c = 0; c < g.cols; ++c) {
            const int s = grid_cell(g.cols, r, c);
            for (int a = 0; a < 4; ++a) {
                const auto [nr, nc] = move(g.rows, g.cols, r, c, a);
                if (g.cells[nr][nc] == 'C') {
                    env.mdp.set(s, a, start, 1.0, -100.0);
                } else {
                    env.mdp.set(s, a, grid_cell(g.cols, nr, nc), 1.0, -1.0);
                }
            }
        }
    }
    // Cliff cells are unreachable; give them the same reset dynamics.
    env.mdp.make_terminals_absorbing();
    env.mdp.validate();
    env.start_state = start;
    return env;
}

}  // namespace

Env make_stochastic_grid(int size, std::pair<double, double> step_rewards, double goal_reward, double gamma) {
    if (size < 2) throw std::invalid_argument("stochastic grid: size must be at least 2");
    Env env;
    env.id = "grid";
    env.mdp = TabularMdp::make(size * size, 4, gamma);
    env.noise.assign(env.mdp.transition.size(), RewardNoise{});
    const int goal = grid_cell(size, 0, size - 1);
    env.mdp.terminals = {goal};
    const double mean = 0.5 * (step_rewards.first + step_rewards.second);
    const double offset = 0.5 * std::abs(step_rewards.second - step_rewards.first);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const int s = grid_cell(size, r, c);
            for (int a = 0; a < 4; ++a) {
                const auto [nr, nc] = move(size, size, r, c, a);
                const int next = grid_cell(size, nr, nc);
                if (next == goal) {
                    env.mdp.set(s, a, next, 1.0, goal_reward);
                } else {
                    env.mdp.set(s, a, next, 1.0, mean);
                    if (offset > 0.0) env.noise[env.mdp.cell(s, a, next)] = {RewardNoise::Kind::two_point, offset};
                }
            }
        }
    }
    env.mdp.make_terminals_absorbing();
    // Terminal self-loops carry no noise.
    for (int a = 0; a < 4; ++a) env.noise[env.mdp.cell(goal, a, goal)] = {};
    env.mdp.validate();
    env.start_state = grid_cell(size, size - 1, 0);
    return env;
}

Env make_named_env(std::string_view name, double gamma) {
    if (name == "cliffwalk") return make_cliffwalk(gamma);
    if (name == "frozenlake_det") return make_frozenlake_det(gamma);
    throw std::invalid_argument("unknown environment \"" + std::string(name) + "\"");
}

Env make_env_by_name(std::string_view name, double gamma) {
    if (name == "bias") return make_bias_mdp(gamma);
    if (name == "grid") return make_stochastic_grid(8, {-10.0, 2.0}, 20.0, gamma);
    return make_named_env(name, gamma);
}

std::string render_grid_policy(const Env& env, const Policy& policy, int rows, int cols) {
    static const char arrows[] = {'^', '>', 'v', '<'};
    std::string out;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const int s = grid_cell(cols, r, c);
            if (env.mdp.is_terminal(s)) out += 'T';
            else if (s == env.start_state) out += 'S';
            else out += arrows[policy.action[s] & 3];
        }
        out += '\n';
    }
    return out;
}

}  // namespace sdq
