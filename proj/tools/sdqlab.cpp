// sdqlab: command-line front end for the tabular SDQ lab.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sdq/harness.hpp"

namespace {

struct Globals {
    std::uint64_t seed = 1;
    std::string out;
    int jobs = 1;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
};

sdq::ExperimentConfig load_with_overrides(const std::string& path, const Globals& g) {
    sdq::ExperimentConfig cfg = sdq::load_config(path);
    if (g.seed_opt->count()) cfg.base_seed = g.seed;
    if (g.out_opt->count()) cfg.out_dir = g.out;
    return cfg;
}

int cmd_solve(const std::string& file, double tol) {
    const sdq::TabularMdp mdp = sdq::load_mdp(file);
    const sdq::QTable q = sdq::value_iteration(mdp, tol);
    const sdq::Policy pi = sdq::greedy_policy(q, mdp);
    std::printf("# Q* for %s (gamma=%.10g, %d states, %d actions)\n", file.c_str(), mdp.gamma, mdp.n_states,
                mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.legal_actions(s); ++a) std::printf("Q*(%d,%d) = %.10g\n", s, a, q(s, a));
    for (int s = 0; s < mdp.n_states; ++s) std::printf("pi*(%d) = %d\n", s, pi.action[s]);
    return 0;
}

int cmd_export(const std::string& name, double gamma, const Globals& g) {
    const sdq::Env env = sdq::make_env_by_name(name, gamma);
    if (g.out_opt->count()) {
        sdq::save_mdp(env.mdp, g.out);
        std::printf("wrote %s\n", g.out.c_str());
    } else {
        std::cout << sdq::mdp_to_text(env.mdp);
    }
    return 0;
}

int cmd_train(const std::string& config, const Globals& g) {
    const sdq::ExperimentConfig cfg = load_with_overrides(config, g);
    const sdq::RunResult res = sdq::run_experiment(cfg, g.jobs);
    std::printf("experiment %s mode %s hash %s\n", cfg.id.c_str(), std::string(sdq::to_string(cfg.mode)).c_str(),
                res.config_hash.c_str());
    for (const auto& a : res.algorithms) {
        long checks = 0, bad = 0;
        for (const auto& r : a.runs) checks += r.q_bound_checks, bad += r.q_bound_violations;
        std::printf("  %-20s runs %zu  boundedness checks %ld violations %ld\n", a.spec.name.c_str(), a.runs.size(),
                    checks, bad);
    }
    if (cfg.mode == sdq::Mode::lockstep_verify) std::printf("  verify violations %ld\n", res.verify.violations);
    for (const auto& b : res.bounds)
        std::printf("  bound %s/%c violations %ld min slack %.6g\n", b.algorithm.c_str(), b.estimator, b.violations,
                    b.min_slack);
    if (!cfg.out_dir.empty()) std::printf("output %s\n", cfg.out_dir.c_str());
    if (res.failures) std::fprintf(stderr, "error: %ld check failures\n", res.failures);
    return res.failures ? 1 : 0;
}

int cmd_verify(sdq::VerifyOptions opt, const Globals& g) {
    opt.base_seed = g.seed;
    opt.jobs = g.jobs;
    const sdq::VerifySummary s = sdq::verify_suite(opt);
    const std::string text = sdq::verify_report(s, opt);
    std::cout << text;
    if (g.out_opt->count()) {
        std::filesystem::create_directories(g.out);
        const auto path = std::filesystem::path(g.out) / "verify_report.txt";
        std::FILE* f = std::fopen(path.string().c_str(), "wb");
        if (!f) throw std::runtime_error("cannot write " + path.string());
        std::fwrite(text.data(), 1, text.size(), f);
        std::fclose(f);
    }
    if (!s.ok()) std::fprintf(stderr, "error: %ld ordering violations\n", s.violations);
    return s.ok() ? 0 : 1;
}

int cmd_bound(const std::string& config, const Globals& g) {
    sdq::ExperimentConfig cfg = load_with_overrides(config, g);
    if (cfg.mode != sdq::Mode::bound_check)
        throw std::invalid_argument("bound: config mode must be bound_check, got " +
                                    std::string(sdq::to_string(cfg.mode)));
    const sdq::RunResult res = sdq::run_experiment(cfg, g.jobs);
    std::printf("reward scale %.10g\n", res.reward_scale);
    for (const auto& b : res.bounds) {
        std::printf("%s/%c: rho %.10g, bound at k=0 %.6g, violations %ld, min slack %.6g\n", b.algorithm.c_str(),
                    b.estimator, b.params.rho(), sdq::theorem1_bound(b.params), b.violations, b.min_slack);
        if (cfg.out_dir.empty()) std::cout << sdq::bound_csv(b.curve, b.params);
    }
    if (res.failures) std::fprintf(stderr, "error: %ld bound violations\n", res.failures);
    return res.failures ? 1 : 0;
}

int cmd_report(const std::string& dir) {
    for (const auto& p : sdq::report(dir)) std::printf("wrote %s\n", p.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sdqlab: tabular Q-learning, double Q-learning and SDQ experiments"};
    app.fallthrough();
    Globals g;
    g.seed_opt = app.add_option("--seed", g.seed, "Base seed (overrides the config)");
    g.out_opt = app.add_option("--out", g.out, "Output directory (or file for export-mdp)");
    app.add_option("--jobs", g.jobs, "Worker threads across runs")->check(CLI::PositiveNumber);

    std::string mdp_file;
    double tol = sdq::kValueIterationTol;
    auto* solve = app.add_subcommand("solve", "Print Q* and the greedy policy of an MDP file");
    solve->add_option("mdp-file", mdp_file)->required()->check(CLI::ExistingFile);
    solve->add_option("--tol", tol, "Value iteration tolerance");

    std::string env_name;
    double gamma = 0.9;
    auto* exp = app.add_subcommand("export-mdp", "Write a built-in env's expected-reward MDP as a file");
    exp->add_option("env", env_name, "bias, grid, cliffwalk or frozenlake_det")->required();
    exp->add_option("--gamma", gamma, "Discount factor");

    std::string config;
    auto* train = app.add_subcommand("train", "Run an experiment config");
    train->add_option("--config", config)->required()->check(CLI::ExistingFile);

    sdq::VerifyOptions vopt;
    auto* verify = app.add_subcommand("verify", "Lockstep comparison-system ordering suite");
    verify->add_option("--mdps", vopt.mdps)->check(CLI::PositiveNumber);
    verify->add_option("--seeds", vopt.seeds)->check(CLI::PositiveNumber);
    verify->add_option("--steps", vopt.steps)->check(CLI::NonNegativeNumber);
    verify->add_option("--max-states", vopt.max_states)->check(CLI::PositiveNumber);
    verify->add_option("--max-actions", vopt.max_actions)->check(CLI::PositiveNumber);
    verify->add_option("--tol", vopt.tol);

    std::string bound_config;
    auto* bound = app.add_subcommand("bound", "Empirical error curve against the finite-time bound");
    bound->add_option("--config", bound_config)->required()->check(CLI::ExistingFile);

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "Aggregate per-run CSVs and render plots");
    rep->add_option("dir", report_dir)->required()->check(CLI::ExistingDirectory);

    app.require_subcommand(1);
    if (argc <= 1) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        if (*solve) return cmd_solve(mdp_file, tol);
        if (*exp) return cmd_export(env_name, gamma, g);
        if (*train) return cmd_train(config, g);
        if (*verify) return cmd_verify(vopt, g);
        if (*bound) return cmd_bound(bound_config, g);
        if (*rep) return cmd_report(report_dir);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    std::cerr << app.help();
    return 2;
}
