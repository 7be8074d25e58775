#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sdq/agents.hpp"
#include "sdq/bounds.hpp"
#include "sdq/envs.hpp"
#include "sdq/switching.hpp"

namespace sdq {

inline constexpr int kConfigVersion = 1;

enum class Mode { episodic, iid_analysis, lockstep_verify, bound_check };

std::string_view to_string(Mode mode);
Mode mode_from(std::string_view name);

struct InitSpec {
    enum class Kind { zero, uniform };
    Kind kind = Kind::zero;
    double lo = 0.0;
    double hi = 0.0;
    // Two-estimator agents: start qb as a copy of qa instead of an independent draw.
    bool shared = false;

    static InitSpec zero() { return {}; }
    static InitSpec uniform(double lo, double hi, bool shared = false) { return {Kind::uniform, lo, hi, shared}; }
};

struct AlgorithmSpec {
    std::string name;  // label used in file names and CSV headers
    AgentKind kind = AgentKind::q;
    InitSpec init;
};

struct EnvSpec {
    // bias, grid, cliffwalk, frozenlake_det, random, or file (reads mdp_file).
    std::string name = "bias";
    double gamma = 0.9;
    std::map<std::string, double> params;
    std::string mdp_file;
};

struct ExperimentConfig {
    std::string id = "experiment";
    Mode mode = Mode::episodic;
    EnvSpec env;
    std::vector<AlgorithmSpec> algorithms;
    Schedule schedule;
    long episodes = 0;  // episodic mode: episode budget
    long steps = 0;     // step budget (episodic step mode and the analysis modes)
    int runs = 1;
    std::uint64_t base_seed = 1;
    std::string out_dir;
    long checkpoint_every = 0;  // 0: every episode, or every 10 steps
    bool rescale_rewards = false;
    int moving_average = 0;
    int mdps = 0;  // lockstep_verify: number of random MDPs

    bool step_budget() const { return steps > 0 && episodes == 0; }
    long checkpoint_interval() const;
    // Throws std::invalid_argument on the first inconsistency.
    void validate() const;
};

std::string config_to_text(const ExperimentConfig& cfg);
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Stable hex digest of the canonical serialization.
std::string config_hash(const ExperimentConfig& cfg);

Env build_env(const EnvSpec& spec);
QTable initial_table(const InitSpec& init, const TabularMdp& mdp, Rng& rng);

struct RunRecord {
    std::uint64_t seed = 0;
    std::vector<long> checkpoints;
    std::vector<std::vector<double>> rows;  // [checkpoint][metric]
    long q_bound_checks = 0;
    long q_bound_violations = 0;
};

struct AlgorithmResult {
    AlgorithmSpec spec;
    std::vector<RunRecord> runs;
};

struct VerifyOptions {
    int mdps = 50;
    int seeds = 10;
    int steps = 2000;
    std::uint64_t base_seed = 1;
    int jobs = 1;
    int max_states = 6;
    int max_actions = 4;
    double tol = kSandwichTol;
};

struct VerifySummary {
    int traces = 0;
    long checks = 0;
    long violations = 0;
    double min_slack_upper = 0.0;
    double min_slack_lower = 0.0;
    double min_slack_err = 0.0;
    double min_slack_err_ul = 0.0;
    double max_identity_error = 0.0;
    double max_recursion_error = 0.0;
    std::vector<std::string> failures;  // one line per failing (mdp, seed)

    bool ok() const { return violations == 0 && max_recursion_error <= 1e-10; }
};

VerifySummary verify_suite(const VerifyOptions& opt);
std::string verify_report(const VerifySummary& s, const VerifyOptions& opt);

struct BoundCheck {
    std::string algorithm;
    char estimator = 'a';
    ErrorCurve curve;
    BoundParams params;
    long violations = 0;  // k with mean + 2 SE > theorem1 bound
    double min_slack = 0.0;
};

struct RunResult {
    std::string config_hash;
    std::string checkpoint_label;
    std::vector<std::string> metrics;
    std::vector<AlgorithmResult> algorithms;
    double reward_scale = 1.0;
    double start_value = 0.0;  // max_a Q*(s0, a) on the scale actually used
    std::vector<BoundCheck> bounds;
    VerifySummary verify;
    long failures = 0;  // verify violations, bound violations, Q-bound violations

    int metric_index(std::string_view name) const;
    // values[run][checkpoint] of one metric for one algorithm.
    std::vector<std::vector<double>> series(std::string_view algorithm, std::string_view metric) const;
};

// Executes every run. Writes files only when cfg.out_dir is nonempty.
// jobs > 1 spreads runs over threads; results do not depend on it.
RunResult run_experiment(const ExperimentConfig& cfg, int jobs = 1);

struct Summary {
    std::vector<double> mean;
    std::vector<double> se;
};

// Trailing moving average; window <= 1 returns the input.
std::vector<double> moving_average(const std::vector<double>& xs, int window);
// values[run][checkpoint]; runs must share a length.
Summary aggregate(const std::vector<std::vector<double>>& values, int window = 0);

// Reads the per-run CSVs under dir, writes summary_<metric>.csv and
// plot_<metric>.svg. Returns the files written.
std::vector<std::filesystem::path> report(const std::filesystem::path& dir);

// SVG line chart of a summary CSV: one polyline and one SE band per series,
// in header order. Throws on empty or malformed input.
std::string render_plot(const std::string& summary_csv, const std::string& title = "");

// Runs fn(i) for i in [0, n) across up to `jobs` threads.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace sdq
