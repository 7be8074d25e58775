#include "sdq/mdp.hpp"

#include "sdq/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace sdq {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

TabularMdp TabularMdp::make(int n_states, int n_actions, double gamma) {
    require(n_states > 0 && n_actions > 0, "mdp: state and action counts must be positive");
    TabularMdp m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.gamma = gamma;
    const auto cells = static_cast<std::size_t>(n_states) * n_actions * n_states;
    m.transition.assign(cells, 0.0);
    m.reward.assign(cells, 0.0);
    m.action_counts.assign(n_states, n_actions);
    return m;
}

double TabularMdp::expected_reward(int s, int a) const {
    double acc = 0.0;
    for (int next = 0; next < n_states; ++next) acc += p(s, a, next) * r(s, a, next);
    return acc;
}

bool TabularMdp::is_terminal(int s) const {
    return std::binary_search(terminals.begin(), terminals.end(), s);
}

double TabularMdp::reward_bound() const {
    double m = 0.0;
    for (std::size_t i = 0; i < reward.size(); ++i)
        if (transition[i] > 0.0) m = std::max(m, std::abs(reward[i]));
    return m;
}

void TabularMdp::make_terminals_absorbing() {
    std::sort(terminals.begin(), terminals.end());
    terminals.erase(std::unique(terminals.begin(), terminals.end()), terminals.end());
    for (int t : terminals) {
        for (int a = 0; a < n_actions; ++a) {
            for (int next = 0; next < n_states; ++next) set(t, a, next, 0.0, 0.0);
            set(t, a, t, 1.0, 0.0);
        }
    }
}

void TabularMdp::validate() const {
    require(n_states > 0 && n_actions > 0, "mdp: state and action counts must be positive");
    require(gamma >= 0.0 && gamma < 1.0, "mdp: gamma must lie in [0, 1)");
    const auto cells = static_cast<std::size_t>(n_states) * n_actions * n_states;
    require(transition.size() == cells && reward.size() == cells, "mdp: table size mismatch");
    require(static_cast<int>(action_counts.size()) == n_states, "mdp: action_counts size mismatch");
    for (int c : action_counts) require(c >= 1 && c <= n_actions, "mdp: action count out of range");
    require(std::is_sorted(terminals.begin(), terminals.end()), "mdp: terminals must be sorted");
    for (int t : terminals) require(t >= 0 && t < n_states, "mdp: terminal index out of range");
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (int next = 0; next < n_states; ++next) {
                const double prob = p(s, a, next);
                require(prob >= 0.0 && prob <= 1.0, "mdp: probability outside [0, 1]");
                require(std::isfinite(r(s, a, next)), "mdp: non-finite reward");
                sum += prob;
            }
            if (std::abs(sum - 1.0) > 1e-12) {
                std::ostringstream os;
                os << "mdp: transition row (s=" << s << ", a=" << a << ") sums to " << sum;
                throw std::invalid_argument(os.str());
            }
        }
    }
    for (int t : terminals) {
        for (int a = 0; a < n_actions; ++a) {
            require(p(t, a, t) == 1.0 && r(t, a, t) == 0.0,
                    "mdp: terminal state " + std::to_string(t) + " is not a zero-reward self-loop");
        }
    }
}

int greedy_action(const Eigen::Ref<const Eigen::VectorXd>& stacked, int n_states, int s, int limit) {
    int best = 0;
    double best_value = stacked[s];
    for (int a = 1; a < limit; ++a) {
        const double v = stacked[stacked_index(n_states, s, a)];
        if (v > best_value) {
            best_value = v;
            best = a;
        }
    }
    return best;
}

int greedy_action(const QTable& q, int s, int limit) {
    return greedy_action(q.values, q.n_states, s, limit);
}

double max_value(const QTable& q, int s, int limit) {
    return q(s, greedy_action(q, s, limit));
}

SamplingDistribution SamplingDistribution::from(Eigen::VectorXd d) {
    require(d.size() > 0, "sampling distribution: empty");
    require((d.array() > 0.0).all(), "sampling distribution: every pair needs positive probability");
    require(std::abs(d.sum() - 1.0) <= 1e-12, "sampling distribution: entries must sum to 1");
    SamplingDistribution out;
    out.d_min = d.minCoeff();
    out.d_max = d.maxCoeff();
    out.d = std::move(d);
    return out;
}

SamplingDistribution SamplingDistribution::uniform(int n_pairs) {
    require(n_pairs > 0, "sampling distribution: empty");
    SamplingDistribution out;
    out.d = Eigen::VectorXd::Constant(n_pairs, 1.0 / n_pairs);
    out.d_min = out.d_max = 1.0 / n_pairs;
    return out;
}

QTable bellman_optimality(const TabularMdp& mdp, const QTable& q) {
    const int ns = mdp.n_states;
    std::vector<double> vmax(ns);
    for (int s = 0; s < ns; ++s) vmax[s] = max_value(q, s, mdp.legal_actions(s));
    QTable out(ns, mdp.n_actions);
    for (int a = 0; a < mdp.n_actions; ++a) {
        for (int s = 0; s < ns; ++s) {
            double acc = 0.0;
            const std::size_t base = mdp.cell(s, a, 0);
            for (int next = 0; next < ns; ++next) {
                const double prob = mdp.transition[base + next];
                if (prob != 0.0) acc += prob * (mdp.reward[base + next] + mdp.gamma * vmax[next]);
            }
            out(s, a) = acc;
        }
    }
    return out;
}

QTable value_iteration(const TabularMdp& mdp, double tol, long max_sweeps) {
    require(tol > 0.0, "value_iteration: tol must be positive");
    mdp.validate();
    QTable q(mdp.n_states, mdp.n_actions);
    double residual = 0.0;
    for (long sweep = 0; sweep < max_sweeps; ++sweep) {
        QTable next = bellman_optimality(mdp, q);
        residual = (next.values - q.values).cwiseAbs().maxCoeff();
        q = std::move(next);
        // ||T(q_new) - q_new|| <= gamma * residual <= tol.
        if (residual <= tol) return q;
    }
    std::ostringstream os;
    os << "value_iteration: no convergence after " << max_sweeps << " sweeps (residual " << residual << ")";
    throw ConvergenceError(os.str(), residual, max_sweeps);
}

Policy greedy_policy(const QTable& q) {
    Policy p;
    p.action.resize(q.n_states);
    for (int s = 0; s < q.n_states; ++s) p.action[s] = greedy_action(q, s);
    return p;
}

Policy greedy_policy(const QTable& q, const TabularMdp& mdp) {
    Policy p;
    p.action.resize(q.n_states);
    for (int s = 0; s < q.n_states; ++s) p.action[s] = greedy_action(q, s, mdp.legal_actions(s));
    return p;
}

Eigen::MatrixXd policy_matrix(const Policy& policy, int n_states, int n_actions) {
    require(static_cast<int>(policy.action.size()) == n_states, "policy_matrix: policy size mismatch");
    Eigen::MatrixXd pi = Eigen::MatrixXd::Zero(n_states, n_states * n_actions);
    for (int s = 0; s < n_states; ++s) {
        const int a = policy.action[s];
        require(a >= 0 && a < n_actions, "policy_matrix: action out of range");
        pi(s, stacked_index(n_states, s, a)) = 1.0;
    }
    return pi;
}

Eigen::MatrixXd stacked_transition(const TabularMdp& mdp) {
    Eigen::MatrixXd p(mdp.n_pairs(), mdp.n_states);
    for (int a = 0; a < mdp.n_actions; ++a)
        for (int s = 0; s < mdp.n_states; ++s)
            for (int next = 0; next < mdp.n_states; ++next) p(mdp.pair(s, a), next) = mdp.p(s, a, next);
    return p;
}

Eigen::VectorXd expected_reward_vector(const TabularMdp& mdp) {
    Eigen::VectorXd r(mdp.n_pairs());
    for (int a = 0; a < mdp.n_actions; ++a)
        for (int s = 0; s < mdp.n_states; ++s) r[mdp.pair(s, a)] = mdp.expected_reward(s, a);
    return r;
}

Eigen::MatrixXd sa_transition_matrix(const TabularMdp& mdp, const Policy& policy) {
    return stacked_transition(mdp) * policy_matrix(policy, mdp.n_states, mdp.n_actions);
}

double decay_rate(double alpha, double d_min, double gamma) {
    require(alpha > 0.0 && alpha < 1.0, "decay_rate: alpha must lie in (0, 1)");
    require(d_min > 0.0 && d_min < 1.0 + 1e-15, "decay_rate: d_min must lie in (0, 1]");
    require(gamma >= 0.0 && gamma < 1.0, "decay_rate: gamma must lie in [0, 1)");
    return 1.0 - alpha * d_min * (1.0 - gamma);
}

double q_max_bound(double r_max, double q0_inf_norm, double gamma) {
    require(r_max >= 0.0 && q0_inf_norm >= 0.0, "q_max_bound: norms must be nonnegative");
    require(gamma >= 0.0 && gamma < 1.0, "q_max_bound: gamma must lie in [0, 1)");
    return std::max(r_max, q0_inf_norm) / (1.0 - gamma);
}

TabularMdp random_mdp(int n_states, int n_actions, double gamma, Rng& rng, double reward_scale) {
    TabularMdp m = TabularMdp::make(n_states, n_actions, gamma);
    for (int a = 0; a < n_actions; ++a) {
        for (int s = 0; s < n_states; ++s) {
            std::vector<double> row(n_states);
            double sum = 0.0;
            for (double& x : row) sum += (x = rng.uniform() + 1e-3);
            // Renormalize, then push the rounding residue onto the largest entry.
            double acc = 0.0;
            int largest = 0;
            for (int next = 0; next < n_states; ++next) {
                row[next] /= sum;
                if (row[next] > row[largest]) largest = next;
            }
            for (int next = 0; next < n_states; ++next)
                if (next != largest) acc += row[next];
            row[largest] = 1.0 - acc;
            for (int next = 0; next < n_states; ++next)
                m.set(s, a, next, row[next], rng.uniform(-reward_scale, reward_scale));
        }
    }
    return m;
}

std::string mdp_to_text(const TabularMdp& mdp) {
    nlohmann::ordered_json j;
    j["schema"] = "sdq-mdp";
    j["version"] = 1;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    j["terminals"] = mdp.terminals;
    j["action_counts"] = mdp.action_counts;
    auto rows = nlohmann::ordered_json::array();
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            for (int next = 0; next < mdp.n_states; ++next)
                if (mdp.p(s, a, next) != 0.0)
                    rows.push_back({s, a, next, mdp.p(s, a, next), mdp.r(s, a, next)});
    j["transitions"] = std::move(rows);
    return j.dump(1) + "\n";
}

TabularMdp mdp_from_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("mdp file: ") + e.what());
    }
    require(j.value("schema", "") == "sdq-mdp", "mdp file: missing schema tag \"sdq-mdp\"");
    require(j.value("version", 0) == 1, "mdp file: unsupported schema version");
    for (const auto& item : j.items()) {
        static const char* known[] = {"schema", "version", "n_states", "n_actions", "gamma",
                                      "terminals", "action_counts", "transitions"};
        require(std::find(std::begin(known), std::end(known), item.key()) != std::end(known),
                "mdp file: unknown key \"" + item.key() + "\"");
    }
    TabularMdp m = TabularMdp::make(j.at("n_states").get<int>(), j.at("n_actions").get<int>(),
                                    j.at("gamma").get<double>());
    m.terminals = j.value("terminals", std::vector<int>{});
    if (j.contains("action_counts")) m.action_counts = j["action_counts"].get<std::vector<int>>();
    for (const auto& row : j.at("transitions")) {
        require(row.is_array() && row.size() == 5, "mdp file: transition rows are [s, a, s', p, r]");
        const int s = row[0].get<int>(), a = row[1].get<int>(), next = row[2].get<int>();
        require(s >= 0 && s < m.n_states && next >= 0 && next < m.n_states && a >= 0 && a < m.n_actions,
                "mdp file: transition index out of range");
        m.set(s, a, next, row[3].get<double>(), row[4].get<double>());
    }
    std::sort(m.terminals.begin(), m.terminals.end());
    m.validate();
    return m;
}

void save_mdp(const TabularMdp& mdp, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << mdp_to_text(mdp);
}

TabularMdp load_mdp(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return mdp_from_text(ss.str());
}

}  // namespace sdq
