#include "sdq/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace sdq {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kRunCsvTag = "# sdq-run-csv v1";
constexpr const char* kSummaryCsvTag = "# sdq-summary-csv v1";
constexpr const char* kManifestSchema = "sdq-run-manifest";
constexpr const char* kConfigSchema = "sdq-experiment";

std::string num(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

double parse_num(std::string_view s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double x = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::runtime_error("malformed number '" + std::string(s) + "'");
    return x;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void require_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be an object");
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw std::invalid_argument("unknown key '" + item.key() + "' in " + where);
    }
}

std::set<std::string> allowed_env_params(const std::string& env) {
    if (env == "bias") return {"n_b_actions", "mean", "stddev"};
    if (env == "grid") return {"size", "step_low", "step_high", "goal_reward"};
    if (env == "random") return {"n_states", "n_actions", "mdp_seed", "reward_scale", "noise", "max_states", "max_actions"};
    if (env == "cliffwalk" || env == "frozenlake_det" || env == "file") return {};
    throw std::invalid_argument("unknown env '" + env + "'");
}

double param(const EnvSpec& spec, const std::string& key, double fallback) {
    const auto it = spec.params.find(key);
    return it == spec.params.end() ? fallback : it->second;
}

json init_to_json(const InitSpec& init) {
    json j;
    j["type"] = init.kind == InitSpec::Kind::zero ? "zero" : "uniform";
    j["lo"] = init.lo;
    j["hi"] = init.hi;
    j["shared"] = init.shared;
    return j;
}

InitSpec init_from_json(const json& j) {
    require_keys(j, {"type", "lo", "hi", "shared"}, "init");
    InitSpec init;
    const std::string type = j.at("type").get<std::string>();
    if (type == "zero") init.kind = InitSpec::Kind::zero;
    else if (type == "uniform") init.kind = InitSpec::Kind::uniform;
    else throw std::invalid_argument("init type must be zero or uniform, got '" + type + "'");
    init.lo = j.value("lo", 0.0);
    init.hi = j.value("hi", 0.0);
    init.shared = j.value("shared", false);
    return init;
}

}  // namespace

std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::episodic: return "episodic";
        case Mode::iid_analysis: return "iid_analysis";
        case Mode::lockstep_verify: return "lockstep_verify";
        case Mode::bound_check: return "bound_check";
    }
    return "?";
}

Mode mode_from(std::string_view name) {
    for (Mode m : {Mode::episodic, Mode::iid_analysis, Mode::lockstep_verify, Mode::bound_check})
        if (to_string(m) == name) return m;
    throw std::invalid_argument("unknown mode '" + std::string(name) + "'");
}

long ExperimentConfig::checkpoint_interval() const {
    if (checkpoint_every > 0) return checkpoint_every;
    if (mode == Mode::bound_check) return 1;
    if (mode == Mode::episodic && !step_budget()) return 1;
    return 10;
}

void ExperimentConfig::validate() const {
    if (runs < 1) throw std::invalid_argument("config: runs must be at least 1");
    if (checkpoint_every < 0) throw std::invalid_argument("config: checkpoint_every must be nonnegative");
    if (moving_average < 0) throw std::invalid_argument("config: moving_average must be nonnegative");
    if (!(env.gamma >= 0.0 && env.gamma < 1.0)) throw std::invalid_argument("config: gamma must lie in [0,1)");
    const std::set<std::string> allowed = allowed_env_params(env.name);
    for (const auto& [k, v] : env.params)
        if (!allowed.count(k)) throw std::invalid_argument("config: env '" + env.name + "' has no parameter '" + k + "'");
    if (env.name == "file" && env.mdp_file.empty()) throw std::invalid_argument("config: env 'file' needs mdp_file");
    schedule.validate();

    if (mode == Mode::lockstep_verify) {
        if (env.name != "random") throw std::invalid_argument("config: lockstep_verify runs on env 'random'");
        if (mdps < 1) throw std::invalid_argument("config: lockstep_verify needs mdps >= 1");
        if (steps < 1) throw std::invalid_argument("config: lockstep_verify needs steps >= 1");
        return;
    }
    if (algorithms.empty()) throw std::invalid_argument("config: at least one algorithm is required");
    std::set<std::string> names;
    for (const auto& a : algorithms) {
        if (a.name.empty() || !std::all_of(a.name.begin(), a.name.end(), [](char c) {
                return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
            }))
            throw std::invalid_argument("config: algorithm names must be nonempty [A-Za-z0-9_-]");
        if (!names.insert(a.name).second) throw std::invalid_argument("config: duplicate algorithm '" + a.name + "'");
        if (a.init.kind == InitSpec::Kind::uniform && !(a.init.lo <= a.init.hi))
            throw std::invalid_argument("config: init needs lo <= hi");
    }
    if (mode == Mode::episodic) {
        if ((episodes > 0) == (steps > 0))
            throw std::invalid_argument("config: episodic mode needs exactly one of episodes or steps");
        return;
    }
    if (steps < 1 || episodes != 0) throw std::invalid_argument("config: analysis modes need steps and no episodes");
    if (schedule.alpha_rule != Schedule::Alpha::constant)
        throw std::invalid_argument("config: analysis modes need a constant step size");
    if (mode == Mode::bound_check) {
        if (!rescale_rewards) throw std::invalid_argument("config: bound_check requires rescale_rewards");
        for (const auto& a : algorithms)
            if (a.init.kind == InitSpec::Kind::uniform && (std::abs(a.init.lo) > 1.0 || std::abs(a.init.hi) > 1.0))
                throw std::invalid_argument("config: bound_check needs initial values within [-1, 1]");
    }
}

std::string config_to_text(const ExperimentConfig& cfg) {
    json j;
    j["schema"] = kConfigSchema;
    j["version"] = kConfigVersion;
    j["id"] = cfg.id;
    j["mode"] = std::string(to_string(cfg.mode));
    json env;
    env["name"] = cfg.env.name;
    env["gamma"] = cfg.env.gamma;
    env["params"] = json::object();
    for (const auto& [k, v] : cfg.env.params) env["params"][k] = v;
    if (!cfg.env.mdp_file.empty()) env["mdp_file"] = cfg.env.mdp_file;
    j["env"] = env;
    j["algorithms"] = json::array();
    for (const auto& a : cfg.algorithms) {
        json aj;
        aj["name"] = a.name;
        aj["kind"] = std::string(to_string(a.kind));
        aj["init"] = init_to_json(a.init);
        j["algorithms"].push_back(aj);
    }
    json sch;
    sch["epsilon_rule"] =
        cfg.schedule.epsilon_rule == Schedule::Epsilon::constant ? "constant" : "inverse_sqrt_state_visits";
    sch["epsilon"] = cfg.schedule.epsilon;
    sch["alpha_rule"] = cfg.schedule.alpha_rule == Schedule::Alpha::constant ? "constant" : "inverse_sa_visits";
    sch["alpha"] = cfg.schedule.alpha;
    j["schedule"] = sch;
    j["episodes"] = cfg.episodes;
    j["steps"] = cfg.steps;
    j["runs"] = cfg.runs;
    j["base_seed"] = cfg.base_seed;
    j["out_dir"] = cfg.out_dir;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["rescale_rewards"] = cfg.rescale_rewards;
    j["moving_average"] = cfg.moving_average;
    j["mdps"] = cfg.mdps;
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    require_keys(j,
                 {"schema", "version", "id", "mode", "env", "algorithms", "schedule", "episodes", "steps", "runs",
                  "base_seed", "out_dir", "checkpoint_every", "rescale_rewards", "moving_average", "mdps"},
                 "config");
    if (j.value("schema", std::string()) != kConfigSchema)
        throw std::invalid_argument(std::string("config: schema must be '") + kConfigSchema + "'");
    if (j.value("version", 0) != kConfigVersion)
        throw std::invalid_argument("config: unsupported version " + std::to_string(j.value("version", 0)));
    ExperimentConfig cfg;
    try {
        cfg.id = j.value("id", cfg.id);
        cfg.mode = mode_from(j.at("mode").get<std::string>());
        const json& env = j.at("env");
        require_keys(env, {"name", "gamma", "params", "mdp_file"}, "env");
        cfg.env.name = env.at("name").get<std::string>();
        cfg.env.gamma = env.at("gamma").get<double>();
        if (env.contains("params")) {
            if (!env["params"].is_object()) throw std::invalid_argument("env.params must be an object");
            for (const auto& item : env["params"].items()) cfg.env.params[item.key()] = item.value().get<double>();
        }
        cfg.env.mdp_file = env.value("mdp_file", std::string());
        if (j.contains("algorithms")) {
            for (const auto& aj : j["algorithms"]) {
                require_keys(aj, {"name", "kind", "init"}, "algorithm");
                AlgorithmSpec a;
                a.kind = agent_kind_from(aj.at("kind").get<std::string>());
                a.name = aj.value("name", std::string(to_string(a.kind)));
                if (aj.contains("init")) a.init = init_from_json(aj["init"]);
                cfg.algorithms.push_back(a);
            }
        }
        if (j.contains("schedule")) {
            const json& s = j["schedule"];
            require_keys(s, {"epsilon_rule", "epsilon", "alpha_rule", "alpha"}, "schedule");
            const std::string er = s.value("epsilon_rule", std::string("constant"));
            if (er == "constant") cfg.schedule.epsilon_rule = Schedule::Epsilon::constant;
            else if (er == "inverse_sqrt_state_visits") cfg.schedule.epsilon_rule = Schedule::Epsilon::inverse_sqrt_state_visits;
            else throw std::invalid_argument("unknown epsilon_rule '" + er + "'");
            const std::string ar = s.value("alpha_rule", std::string("constant"));
            if (ar == "constant") cfg.schedule.alpha_rule = Schedule::Alpha::constant;
            else if (ar == "inverse_sa_visits") cfg.schedule.alpha_rule = Schedule::Alpha::inverse_sa_visits;
            else throw std::invalid_argument("unknown alpha_rule '" + ar + "'");
            cfg.schedule.epsilon = s.value("epsilon", cfg.schedule.epsilon);
            cfg.schedule.alpha = s.value("alpha", cfg.schedule.alpha);
        }
        cfg.episodes = j.value("episodes", 0L);
        cfg.steps = j.value("steps", 0L);
        cfg.runs = j.value("runs", 1);
        cfg.base_seed = j.value("base_seed", std::uint64_t{1});
        cfg.out_dir = j.value("out_dir", std::string());
        cfg.checkpoint_every = j.value("checkpoint_every", 0L);
        cfg.rescale_rewards = j.value("rescale_rewards", false);
        cfg.moving_average = j.value("moving_average", 0);
        cfg.mdps = j.value("mdps", 0);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return config_from_text(read_file(path));
}

std::string config_hash(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    c.out_dir.clear();
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_string(config_to_text(c))));
    return buf;
}

Env build_env(const EnvSpec& spec) {
    if (spec.name == "bias")
        return make_bias_mdp(spec.gamma, static_cast<int>(param(spec, "n_b_actions", 10)), param(spec, "mean", -0.1),
                             param(spec, "stddev", 1.0));
    if (spec.name == "grid")
        return make_stochastic_grid(static_cast<int>(param(spec, "size", 8)),
                                    {param(spec, "step_low", -10.0), param(spec, "step_high", 2.0)},
                                    param(spec, "goal_reward", 20.0), spec.gamma);
    if (spec.name == "random" || spec.name == "file") {
        Env env;
        env.id = spec.name;
        if (spec.name == "random") {
            Rng rng = Rng::stream(static_cast<std::uint64_t>(param(spec, "mdp_seed", 1)), 0, "random-mdp");
            env.mdp = random_mdp(static_cast<int>(param(spec, "n_states", 4)),
                                 static_cast<int>(param(spec, "n_actions", 2)), spec.gamma, rng,
                                 param(spec, "reward_scale", 1.0));
        } else {
            env.mdp = load_mdp(spec.mdp_file);
            env.mdp.gamma = spec.gamma;
        }
        const double noise = param(spec, "noise", 0.0);
        RewardNoise rn;
        if (noise > 0.0) rn = RewardNoise{RewardNoise::Kind::two_point, noise};
        env.noise.assign(env.mdp.transition.size(), rn);
        env.start_state = 0;
        return env;
    }
    return make_named_env(spec.name, spec.gamma);
}

QTable initial_table(const InitSpec& init, const TabularMdp& mdp, Rng& rng) {
    QTable q(mdp.n_states, mdp.n_actions);
    if (init.kind == InitSpec::Kind::uniform)
        for (Eigen::Index i = 0; i < q.values.size(); ++i) q.values[i] = rng.uniform(init.lo, init.hi);
    return q;
}

int RunResult::metric_index(std::string_view name) const {
    for (std::size_t i = 0; i < metrics.size(); ++i)
        if (metrics[i] == name) return static_cast<int>(i);
    throw std::invalid_argument("no metric '" + std::string(name) + "'");
}

std::vector<std::vector<double>> RunResult::series(std::string_view algorithm, std::string_view metric) const {
    const int m = metric_index(metric);
    for (const auto& a : algorithms) {
        if (a.spec.name != algorithm) continue;
        std::vector<std::vector<double>> out;
        for (const auto& r : a.runs) {
            std::vector<double> col;
            col.reserve(r.rows.size());
            for (const auto& row : r.rows) col.push_back(row[m]);
            out.push_back(std::move(col));
        }
        return out;
    }
    throw std::invalid_argument("no algorithm '" + std::string(algorithm) + "'");
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> pool;
    const int workers = std::min(jobs, n);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

namespace {

struct RunContext {
    const ExperimentConfig& cfg;
    const Env& env;
    double start_value;
    const DynamicsContext* ctx;  // analysis modes only
};

AgentState fresh_agent(const AlgorithmSpec& spec, const TabularMdp& mdp, Rng& init_rng) {
    QTable qa = initial_table(spec.init, mdp, init_rng);
    QTable qb = spec.init.shared ? qa : initial_table(spec.init, mdp, init_rng);
    return make_agent(spec.kind, mdp, std::move(qa), std::move(qb));
}

double start_max_q(const AgentState& agent, const Env& env) {
    const QTable act = acting_table(agent);
    return max_value(act, env.start_state, env.mdp.legal_actions(env.start_state));
}

struct QBoundGuard {
    bool active = false;
    double limit = 0.0;

    QBoundGuard(const Env& env, const AgentState& agent) {
        if (const auto rb = env.reward_bound()) {
            active = true;
            limit = q_max_bound(*rb, agent_inf_norm(agent), env.mdp.gamma) * (1.0 + 1e-12) + 1e-12;
        }
    }
    void check(const AgentState& agent, RunRecord& rec) const {
        if (!active) return;
        ++rec.q_bound_checks;
        if (!(agent_inf_norm(agent) <= limit)) ++rec.q_bound_violations;
    }
};

std::vector<std::string> episodic_metrics(const ExperimentConfig& cfg) {
    if (cfg.step_budget()) return {"reward_per_step", "start_max_q", "start_q_error", "episodes_completed", "q_inf_norm"};
    std::vector<std::string> m = {"episode_return", "episode_length"};
    if (cfg.env.name == "bias") m.push_back("left_at_A");
    m.insert(m.end(), {"start_max_q", "start_q_error", "q_inf_norm"});
    return m;
}

RunRecord run_episodic(const RunContext& rc, const AlgorithmSpec& spec, int run) {
    const ExperimentConfig& cfg = rc.cfg;
    const Env& env = rc.env;
    RunRecord rec;
    rec.seed = cfg.base_seed + static_cast<std::uint64_t>(run);
    Rng init_rng = Rng::stream(cfg.base_seed, run, "init:" + spec.name);
    Rng env_rng = Rng::stream(cfg.base_seed, run, "env");
    Rng act_rng = Rng::stream(cfg.base_seed, run, "act");
    Rng zeta_rng = Rng::stream(cfg.base_seed, run, "zeta");
    AgentState agent = fresh_agent(spec, env.mdp, init_rng);
    const QBoundGuard guard(env, agent);
    const long interval = cfg.checkpoint_interval();
    const bool bias = cfg.env.name == "bias";

    auto act_and_learn = [&](int s) {
        ++agent.state_visits[s];
        const int a = select_action(acting_table(agent), s, env.mdp.legal_actions(s), cfg.schedule,
                                    agent.state_visits[s], act_rng);
        const Transition t = env.step(s, a, env_rng);
        agent = learn(std::move(agent), t, cfg.schedule, zeta_rng);
        guard.check(agent, rec);
        return t;
    };

    if (cfg.step_budget()) {
        double total = 0.0;
        long completed = 0;
        long in_episode = 0;
        int s = env.reset();
        for (long k = 1; k <= cfg.steps; ++k) {
            const Transition t = act_and_learn(s);
            total += t.r;
            ++in_episode;
            s = t.s_next;
            if (t.done || in_episode >= kEpisodeStepCap) {
                if (t.done) ++completed;
                s = env.reset();
                in_episode = 0;
            }
            if (k % interval == 0 || k == cfg.steps) {
                const double smq = start_max_q(agent, env);
                rec.checkpoints.push_back(k);
                rec.rows.push_back({total / static_cast<double>(k), smq, smq - rc.start_value,
                                    static_cast<double>(completed), agent_inf_norm(agent)});
            }
        }
        return rec;
    }

    for (long ep = 1; ep <= cfg.episodes; ++ep) {
        int s = env.reset();
        double ret = 0.0;
        long len = 0;
        double left = 0.0;
        while (len < kEpisodeStepCap) {
            const int s_before = s;
            const Transition t = act_and_learn(s);
            if (bias && s_before == bias_mdp::kStateA && len == 0) left = t.a == bias_mdp::kLeft ? 1.0 : 0.0;
            ret += t.r;
            ++len;
            s = t.s_next;
            if (t.done) break;
        }
        if (ep % interval == 0 || ep == cfg.episodes) {
            const double smq = start_max_q(agent, env);
            std::vector<double> row = {ret, static_cast<double>(len)};
            if (bias) row.push_back(left);
            row.insert(row.end(), {smq, smq - rc.start_value, agent_inf_norm(agent)});
            rec.checkpoints.push_back(ep);
            rec.rows.push_back(std::move(row));
        }
    }
    return rec;
}

RunRecord run_iid(const RunContext& rc, const AlgorithmSpec& spec, int run) {
    const ExperimentConfig& cfg = rc.cfg;
    const DynamicsContext& ctx = *rc.ctx;
    RunRecord rec;
    rec.seed = cfg.base_seed + static_cast<std::uint64_t>(run);
    Rng init_rng = Rng::stream(cfg.base_seed, run, "init:" + spec.name);
    Rng sample_rng = Rng::stream(cfg.base_seed, run, "iid");
    Rng zeta_rng = Rng::stream(cfg.base_seed, run, "zeta");
    AgentState agent = fresh_agent(spec, ctx.mdp, init_rng);
    const QBoundGuard guard(rc.env, agent);
    const long interval = cfg.checkpoint_interval();
    const Eigen::VectorXd& q_star = ctx.q_star.values;

    auto record = [&](long k) {
        const double ea = (agent.qa.values - q_star).cwiseAbs().maxCoeff();
        const double eb = agent.two_estimators() ? (agent.qb.values - q_star).cwiseAbs().maxCoeff() : ea;
        rec.checkpoints.push_back(k);
        rec.rows.push_back({ea, eb, agent_inf_norm(agent)});
    };
    record(0);
    for (long k = 1; k <= cfg.steps; ++k) {
        const Sample x = iid_sampler(ctx, sample_rng);
        ++agent.state_visits[x.s];
        agent = learn(std::move(agent), to_transition(x), cfg.schedule, zeta_rng);
        guard.check(agent, rec);
        if (k % interval == 0 || k == cfg.steps) record(k);
    }
    return rec;
}

std::string run_csv(const std::string& label, const std::vector<std::string>& metrics, const RunRecord& rec) {
    std::ostringstream os;
    os << kRunCsvTag << '\n' << label;
    for (const auto& m : metrics) os << ',' << m;
    os << '\n';
    for (std::size_t i = 0; i < rec.rows.size(); ++i) {
        os << rec.checkpoints[i];
        for (double v : rec.rows[i]) os << ',' << num(v);
        os << '\n';
    }
    return os.str();
}

std::string run_file_name(int run) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "run_%04d.csv", run);
    return buf;
}

void write_outputs(const ExperimentConfig& cfg, const RunResult& result) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());

    ExperimentConfig stored = cfg;
    stored.out_dir.clear();
    write_file(dir / "config.json", config_to_text(stored));

    json manifest;
    manifest["schema"] = kManifestSchema;
    manifest["version"] = 1;
    manifest["id"] = cfg.id;
    manifest["config_hash"] = result.config_hash;
    manifest["mode"] = std::string(to_string(cfg.mode));
    manifest["checkpoint_label"] = result.checkpoint_label;
    manifest["metrics"] = result.metrics;
    manifest["algorithms"] = json::array();
    for (const auto& a : result.algorithms) manifest["algorithms"].push_back(a.spec.name);
    manifest["runs"] = cfg.runs;
    manifest["seeds"] = json::array();
    for (int i = 0; i < cfg.runs; ++i) manifest["seeds"].push_back(cfg.base_seed + static_cast<std::uint64_t>(i));
    manifest["reward_scale"] = result.reward_scale;
    manifest["start_value"] = result.start_value;
    manifest["moving_average"] = cfg.moving_average;
    manifest["failures"] = result.failures;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    for (const auto& a : result.algorithms) {
        const fs::path adir = dir / a.spec.name;
        fs::create_directories(adir);
        for (std::size_t r = 0; r < a.runs.size(); ++r)
            write_file(adir / run_file_name(static_cast<int>(r)),
                       run_csv(result.checkpoint_label, result.metrics, a.runs[r]));
    }
    for (const auto& b : result.bounds) {
        std::string csv = bound_csv(b.curve, b.params);
        write_file(dir / ("bound_" + b.algorithm + "_" + b.estimator + ".csv"), csv);
    }
    if (cfg.mode == Mode::lockstep_verify) {
        VerifyOptions opt;
        opt.mdps = cfg.mdps;
        opt.seeds = cfg.runs;
        opt.steps = static_cast<int>(cfg.steps);
        opt.base_seed = cfg.base_seed;
        write_file(dir / "verify_report.txt", verify_report(result.verify, opt));
    }
    if (!result.algorithms.empty()) report(dir);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, int jobs) {
    cfg.validate();
    RunResult result;
    result.config_hash = config_hash(cfg);

    if (cfg.mode == Mode::lockstep_verify) {
        VerifyOptions opt;
        opt.mdps = cfg.mdps;
        opt.seeds = cfg.runs;
        opt.steps = static_cast<int>(cfg.steps);
        opt.base_seed = cfg.base_seed;
        opt.jobs = jobs;
        opt.max_states = static_cast<int>(param(cfg.env, "max_states", 6));
        opt.max_actions = static_cast<int>(param(cfg.env, "max_actions", 4));
        result.checkpoint_label = "trace";
        result.verify = verify_suite(opt);
        result.failures = result.verify.violations + (result.verify.max_recursion_error > 1e-10 ? 1 : 0);
        if (!cfg.out_dir.empty()) write_outputs(cfg, result);
        return result;
    }

    Env env = build_env(cfg.env);
    if (cfg.rescale_rewards) {
        auto [scaled, factor] = rescale_rewards(env);
        env = std::move(scaled);
        result.reward_scale = factor;
    }
    env.mdp.validate();
    const QTable q_star = value_iteration(env.mdp);
    result.start_value = max_value(q_star, env.start_state, env.mdp.legal_actions(env.start_state));

    std::optional<DynamicsContext> ctx;
    if (cfg.mode != Mode::episodic) {
        if (cfg.mode == Mode::bound_check && !env.reward_bound())
            throw std::invalid_argument("bound_check needs bounded rewards; env '" + cfg.env.name + "' has none");
        ctx = assemble_dynamics(env, SamplingDistribution::uniform(env.mdp.n_pairs()), cfg.schedule.alpha);
        result.checkpoint_label = "step";
        result.metrics = {"err_a", "err_b", "q_inf_norm"};
    } else {
        result.checkpoint_label = cfg.step_budget() ? "step" : "episode";
        result.metrics = episodic_metrics(cfg);
    }

    const RunContext rc{cfg, env, result.start_value, ctx ? &*ctx : nullptr};
    const int n_alg = static_cast<int>(cfg.algorithms.size());
    result.algorithms.resize(n_alg);
    for (int a = 0; a < n_alg; ++a) {
        result.algorithms[a].spec = cfg.algorithms[a];
        result.algorithms[a].runs.resize(cfg.runs);
    }
    parallel_for(n_alg * cfg.runs, jobs, [&](int task) {
        const int a = task / cfg.runs;
        const int r = task % cfg.runs;
        result.algorithms[a].runs[r] =
            cfg.mode == Mode::episodic ? run_episodic(rc, cfg.algorithms[a], r) : run_iid(rc, cfg.algorithms[a], r);
    });
    for (const auto& a : result.algorithms)
        for (const auto& r : a.runs) result.failures += r.q_bound_violations;

    if (cfg.mode == Mode::bound_check) {
        for (const auto& a : result.algorithms) {
            for (char est : {'a', 'b'}) {
                BoundCheck bc;
                bc.algorithm = a.spec.name;
                bc.estimator = est;
                bc.curve = empirical_error_curve(result.series(a.spec.name, est == 'a' ? "err_a" : "err_b"));
                bc.params = BoundParams::from(*ctx);
                bc.min_slack = std::numeric_limits<double>::infinity();
                for (std::size_t k = 0; k < bc.curve.size(); ++k) {
                    BoundParams p = bc.params;
                    p.k = static_cast<long long>(k);
                    const double slack = theorem1_bound(p) - (bc.curve.mean[k] + 2.0 * bc.curve.se[k]);
                    bc.min_slack = std::min(bc.min_slack, slack);
                    if (slack < 0.0) ++bc.violations;
                }
                result.failures += bc.violations;
                result.bounds.push_back(std::move(bc));
            }
        }
    }
    if (!cfg.out_dir.empty()) write_outputs(cfg, result);
    return result;
}

VerifySummary verify_suite(const VerifyOptions& opt) {
    if (opt.mdps < 1 || opt.seeds < 1 || opt.steps < 0)
        throw std::invalid_argument("verify: need mdps >= 1, seeds >= 1, steps >= 0");
    if (opt.max_states < 1 || opt.max_actions < 1) throw std::invalid_argument("verify: bad MDP size limits");

    struct Task {
        SandwichReport sandwich;
        RecursionReport recursion;
    };
    const int n = opt.mdps * opt.seeds;
    std::vector<Task> tasks(n);
    parallel_for(n, opt.jobs, [&](int i) {
        const int m = i / opt.seeds;
        const int seed = i % opt.seeds;
        Rng mdp_rng = Rng::stream(opt.base_seed, static_cast<std::uint64_t>(m), "verify-mdp");
        const int ns = 1 + static_cast<int>(mdp_rng.below(static_cast<std::uint64_t>(opt.max_states)));
        const int na = 1 + static_cast<int>(mdp_rng.below(static_cast<std::uint64_t>(opt.max_actions)));
        const double gamma = mdp_rng.uniform(0.5, 0.95);
        const double alpha = mdp_rng.uniform(0.05, 0.5);
        Env env;
        env.id = "random";
        // Mean rewards in [-0.5, 0.5] plus +/-0.5 noise keeps samples in [-1, 1].
        env.mdp = random_mdp(ns, na, gamma, mdp_rng, 0.5);
        env.noise.assign(env.mdp.transition.size(), RewardNoise{RewardNoise::Kind::two_point, 0.5});
        Eigen::VectorXd d(env.mdp.n_pairs());
        for (Eigen::Index j = 0; j < d.size(); ++j) d[j] = mdp_rng.uniform(0.2, 1.0);
        const DynamicsContext ctx = assemble_dynamics(env, SamplingDistribution::from(d / d.sum()), alpha);

        Rng run_rng = Rng::stream(opt.base_seed + static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(m),
                                  "verify-run");
        Rng init_rng = run_rng.split("init");
        Rng sample_rng = run_rng.split("samples");
        Eigen::VectorXd qa0(ctx.n_pairs()), qb0(ctx.n_pairs());
        for (Eigen::Index j = 0; j < qa0.size(); ++j) qa0[j] = init_rng.uniform(-1.0, 1.0);
        for (Eigen::Index j = 0; j < qb0.size(); ++j) qb0[j] = init_rng.uniform(-1.0, 1.0);
        const LockstepTrace trace = lockstep_simulate(ctx, qa0, qb0, opt.steps, sample_rng);
        tasks[i].sandwich = verify_sandwich(trace, ctx, opt.tol);
        tasks[i].recursion = subtraction_recursions(trace, ctx);
    });

    VerifySummary s;
    s.traces = n;
    s.min_slack_upper = s.min_slack_lower = s.min_slack_err = s.min_slack_err_ul =
        std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        const SandwichReport& r = tasks[i].sandwich;
        s.checks += r.checks;
        s.violations += r.violations;
        s.min_slack_upper = std::min(s.min_slack_upper, r.min_slack_upper);
        s.min_slack_lower = std::min(s.min_slack_lower, r.min_slack_lower);
        s.min_slack_err = std::min(s.min_slack_err, r.min_slack_err);
        s.min_slack_err_ul = std::min(s.min_slack_err_ul, r.min_slack_err_ul);
        s.max_identity_error = std::max(s.max_identity_error, r.max_identity_error);
        s.max_recursion_error = std::max(s.max_recursion_error, tasks[i].recursion.max());
        if (!r.ok() || !tasks[i].recursion.ok()) {
            std::ostringstream os;
            os << "mdp " << i / opt.seeds << " seed " << i % opt.seeds << ": " << r.violations << " violations";
            if (!r.first.empty()) {
                const Violation& v = r.first.front();
                os << ", first " << v.relation << " at step " << v.step << " coordinate " << v.coordinate << " by "
                   << v.amount;
            }
            if (!tasks[i].recursion.ok()) os << ", recursion mismatch " << tasks[i].recursion.max();
            s.failures.push_back(os.str());
        }
    }
    return s;
}

std::string verify_report(const VerifySummary& s, const VerifyOptions& opt) {
    std::ostringstream os;
    os << std::setprecision(6);
    os << "sdq verify report v1\n";
    os << "mdps " << opt.mdps << " seeds " << opt.seeds << " steps " << opt.steps << " base_seed " << opt.base_seed
       << " tol " << opt.tol << '\n';
    os << "traces " << s.traces << '\n';
    os << "checks " << s.checks << '\n';
    os << "violations " << s.violations << '\n';
    os << "min_slack_upper " << s.min_slack_upper << '\n';
    os << "min_slack_lower " << s.min_slack_lower << '\n';
    os << "min_slack_err " << s.min_slack_err << '\n';
    os << "min_slack_err_upper_lower " << s.min_slack_err_ul << '\n';
    os << "max_identity_error " << s.max_identity_error << '\n';
    os << "max_recursion_error " << s.max_recursion_error << '\n';
    for (const auto& f : s.failures) os << "failure " << f << '\n';
    os << "status " << (s.ok() ? "PASS" : "FAIL") << '\n';
    return os.str();
}

std::vector<double> moving_average(const std::vector<double>& xs, int window) {
    if (window <= 1) return xs;
    std::vector<double> out(xs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sum += xs[i];
        if (i >= static_cast<std::size_t>(window)) sum -= xs[i - window];
        const std::size_t n = std::min<std::size_t>(i + 1, window);
        // Recompute exactly when the window holds identical values so constants stay constant.
        const std::size_t lo = i + 1 - n;
        const bool flat = std::all_of(xs.begin() + lo, xs.begin() + i + 1, [&](double v) { return v == xs[i]; });
        out[i] = flat ? xs[i] : sum / static_cast<double>(n);
    }
    return out;
}

Summary aggregate(const std::vector<std::vector<double>>& values, int window) {
    if (values.empty()) throw std::invalid_argument("aggregate: need at least one run");
    const std::size_t len = values.front().size();
    std::vector<std::vector<double>> runs;
    runs.reserve(values.size());
    for (const auto& v : values) {
        if (v.size() != len) throw std::invalid_argument("aggregate: runs have different lengths");
        runs.push_back(moving_average(v, window));
    }
    Summary s;
    s.mean.resize(len);
    s.se.resize(len);
    const double n = static_cast<double>(runs.size());
    for (std::size_t k = 0; k < len; ++k) {
        const double first = runs.front()[k];
        if (std::all_of(runs.begin(), runs.end(), [&](const auto& r) { return r[k] == first; })) {
            s.mean[k] = first;
            s.se[k] = 0.0;
            continue;
        }
        double sum = 0.0;
        for (const auto& r : runs) sum += r[k];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& r : runs) ss += (r[k] - mean) * (r[k] - mean);
        s.mean[k] = mean;
        s.se[k] = std::sqrt(ss / (n - 1.0) / n);
    }
    return s;
}

namespace {

struct ParsedRun {
    std::vector<std::string> header;
    std::vector<long> checkpoints;
    std::vector<std::vector<double>> rows;
};

ParsedRun parse_run_csv(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != kRunCsvTag)
        throw std::runtime_error(path.string() + ": missing '" + kRunCsvTag + "' header");
    ParsedRun pr;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing column header");
    pr.header = split_csv(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_csv(line);
        if (cells.size() != pr.header.size()) throw std::runtime_error(path.string() + ": ragged row");
        pr.checkpoints.push_back(static_cast<long>(parse_num(cells[0])));
        std::vector<double> row;
        for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_num(cells[i]));
        pr.rows.push_back(std::move(row));
    }
    return pr;
}

}  // namespace

std::vector<std::filesystem::path> report(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    json manifest;
    try {
        manifest = json::parse(read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw std::runtime_error("report: bad manifest in " + dir.string() + ": " + e.what());
    }
    if (manifest.value("schema", std::string()) != kManifestSchema)
        throw std::runtime_error("report: " + dir.string() + " has no run manifest");
    const std::string label = manifest.at("checkpoint_label").get<std::string>();
    const auto metrics = manifest.at("metrics").get<std::vector<std::string>>();
    const auto algorithms = manifest.at("algorithms").get<std::vector<std::string>>();
    const int runs = manifest.at("runs").get<int>();
    const int window = manifest.value("moving_average", 0);
    const std::string id = manifest.value("id", std::string());
    if (algorithms.empty()) throw std::runtime_error("report: no algorithm runs in " + dir.string());

    std::vector<std::string> expected_header = {label};
    expected_header.insert(expected_header.end(), metrics.begin(), metrics.end());
    std::vector<long> checkpoints;
    bool have_checkpoints = false;
    // data[alg][run] parsed rows
    std::vector<std::vector<ParsedRun>> data(algorithms.size());
    for (std::size_t a = 0; a < algorithms.size(); ++a) {
        for (int r = 0; r < runs; ++r) {
            ParsedRun pr = parse_run_csv(dir / algorithms[a] / run_file_name(r));
            if (pr.header != expected_header)
                throw std::runtime_error("report: schema mismatch in " + algorithms[a] + "/" + run_file_name(r));
            if (!have_checkpoints) {
                checkpoints = pr.checkpoints;
                have_checkpoints = true;
            } else if (pr.checkpoints != checkpoints) {
                throw std::runtime_error("report: checkpoint mismatch in " + algorithms[a] + "/" + run_file_name(r));
            }
            data[a].push_back(std::move(pr));
        }
    }

    std::vector<fs::path> written;
    for (std::size_t m = 0; m < metrics.size(); ++m) {
        std::ostringstream os;
        os << kSummaryCsvTag << '\n' << label;
        std::vector<Summary> sums;
        for (std::size_t a = 0; a < algorithms.size(); ++a) {
            os << ',' << algorithms[a] << "_mean," << algorithms[a] << "_se";
            std::vector<std::vector<double>> values;
            for (const auto& pr : data[a]) {
                std::vector<double> col;
                for (const auto& row : pr.rows) col.push_back(row[m]);
                values.push_back(std::move(col));
            }
            sums.push_back(aggregate(values, window));
        }
        os << '\n';
        for (std::size_t k = 0; k < checkpoints.size(); ++k) {
            os << checkpoints[k];
            for (const auto& s : sums) os << ',' << num(s.mean[k]) << ',' << num(s.se[k]);
            os << '\n';
        }
        const fs::path csv = dir / ("summary_" + metrics[m] + ".csv");
        const fs::path svg = dir / ("plot_" + metrics[m] + ".svg");
        write_file(csv, os.str());
        write_file(svg, render_plot(os.str(), id.empty() ? metrics[m] : id + ": " + metrics[m]));
        written.push_back(csv);
        written.push_back(svg);
    }
    return written;
}

namespace {

std::string fmt2(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", x);
    return buf;
}

std::string fmt_tick(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_plot(const std::string& summary_csv, const std::string& title) {
    std::istringstream in(summary_csv);
    std::string line;
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (header.empty()) {
            header = split_csv(line);
            continue;
        }
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) throw std::invalid_argument("render_plot: ragged row");
        std::vector<double> row;
        for (const auto& c : cells) row.push_back(parse_num(c));
        rows.push_back(std::move(row));
    }
    if (header.empty() || rows.empty()) throw std::invalid_argument("render_plot: empty summary");
    if (header.size() < 3 || (header.size() - 1) % 2 != 0)
        throw std::invalid_argument("render_plot: expected a label column followed by mean/se pairs");
    std::vector<std::string> names;
    for (std::size_t c = 1; c < header.size(); c += 2) {
        const std::string& h = header[c];
        const std::string suffix = "_mean";
        if (h.size() <= suffix.size() || h.compare(h.size() - suffix.size(), suffix.size(), suffix) != 0)
            throw std::invalid_argument("render_plot: column '" + h + "' is not a mean column");
        names.push_back(h.substr(0, h.size() - suffix.size()));
    }

    double x_lo = rows.front()[0], x_hi = rows.back()[0];
    double y_lo = std::numeric_limits<double>::infinity(), y_hi = -y_lo;
    for (const auto& r : rows) {
        x_lo = std::min(x_lo, r[0]);
        x_hi = std::max(x_hi, r[0]);
        for (std::size_t c = 1; c < r.size(); c += 2) {
            if (!std::isfinite(r[c]) || !std::isfinite(r[c + 1])) continue;
            y_lo = std::min(y_lo, r[c] - r[c + 1]);
            y_hi = std::max(y_hi, r[c] + r[c + 1]);
        }
    }
    if (!std::isfinite(y_lo)) y_lo = 0.0, y_hi = 1.0;
    if (x_hi == x_lo) x_lo -= 0.5, x_hi += 0.5;
    if (y_hi == y_lo) y_lo -= 0.5, y_hi += 0.5;
    const double pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    const double width = 760, height = 440, left = 70, right = 170, top = 40, bottom = 50;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph; };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
                                    "#17becf"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (!title.empty())
        os << "<text x=\"" << fmt2(left) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
           << xml_escape(title) << "</text>\n";
    os << "<g stroke=\"#444\" stroke-width=\"1\">\n";
    os << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(top + ph) << "\" x2=\"" << fmt2(left + pw) << "\" y2=\""
       << fmt2(top + ph) << "\"/>\n";
    os << "<line x1=\"" << fmt2(left) << "\" y1=\"" << fmt2(top) << "\" x2=\"" << fmt2(left) << "\" y2=\""
       << fmt2(top + ph) << "\"/>\n";
    os << "</g>\n<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">\n";
    for (int t = 0; t <= 4; ++t) {
        const double xv = x_lo + (x_hi - x_lo) * t / 4.0;
        const double yv = y_lo + (y_hi - y_lo) * t / 4.0;
        os << "<text x=\"" << fmt2(px(xv)) << "\" y=\"" << fmt2(top + ph + 18) << "\" text-anchor=\"middle\">"
           << fmt_tick(xv) << "</text>\n";
        os << "<text x=\"" << fmt2(left - 6) << "\" y=\"" << fmt2(py(yv) + 4) << "\" text-anchor=\"end\">"
           << fmt_tick(yv) << "</text>\n";
    }
    os << "<text x=\"" << fmt2(left + pw / 2) << "\" y=\"" << fmt2(height - 10) << "\" text-anchor=\"middle\">"
       << xml_escape(header[0]) << "</text>\n</g>\n";

    for (std::size_t sidx = 0; sidx < names.size(); ++sidx) {
        const std::size_t c = 1 + 2 * sidx;
        const char* color = palette[sidx % (sizeof palette / sizeof *palette)];
        std::string band, line_pts;
        for (const auto& r : rows) {
            if (!std::isfinite(r[c])) continue;
            band += fmt2(px(r[0])) + "," + fmt2(py(r[c] + r[c + 1])) + " ";
            line_pts += fmt2(px(r[0])) + "," + fmt2(py(r[c])) + " ";
        }
        for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
            const auto& r = *it;
            if (!std::isfinite(r[c])) continue;
            band += fmt2(px(r[0])) + "," + fmt2(py(r[c] - r[c + 1])) + " ";
        }
        if (!band.empty()) band.pop_back();
        if (!line_pts.empty()) line_pts.pop_back();
        os << "<polygon points=\"" << band << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
        os << "<polyline points=\"" << line_pts << "\" fill=\"none\" stroke=\"" << color
           << "\" stroke-width=\"1.5\"><title>" << xml_escape(names[sidx]) << "</title></polyline>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(sidx);
        os << "<line x1=\"" << fmt2(left + pw + 12) << "\" y1=\"" << fmt2(ly) << "\" x2=\"" << fmt2(left + pw + 32)
           << "\" y2=\"" << fmt2(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << fmt2(left + pw + 38) << "\" y=\"" << fmt2(ly + 4)
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(names[sidx]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace sdq
