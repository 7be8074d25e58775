#include "sdq/switching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sdq {

namespace {

DynamicsContext build(const TabularMdp& mdp, std::vector<RewardNoise> noise, const SamplingDistribution& dist,
                      double alpha, double vi_tol) {
    mdp.validate();
    if (dist.d.size() != mdp.n_pairs())
        throw std::invalid_argument("assemble_dynamics: sampling distribution has the wrong length");
    if (!(dist.d.array() > 0.0).all())
        throw std::invalid_argument("assemble_dynamics: every state-action pair needs d(s,a) > 0");
    DynamicsContext ctx;
    ctx.mdp = mdp;
    ctx.noise = std::move(noise);
    ctx.d = dist.d;
    ctx.d_min = dist.d.minCoeff();
    ctx.d_max = dist.d.maxCoeff();
    ctx.P = stacked_transition(mdp);
    ctx.R = expected_reward_vector(mdp);
    ctx.DR = ctx.d.cwiseProduct(ctx.R);
    ctx.DP = ctx.d.asDiagonal() * ctx.P;
    ctx.alpha = alpha;
    ctx.gamma = mdp.gamma;
    ctx.rho = decay_rate(alpha, ctx.d_min, mdp.gamma);
    ctx.q_star = value_iteration(mdp, vi_tol);
    ctx.pi_star = greedy_policy(ctx.q_star, mdp);
    ctx.pi_star_matrix = policy_matrix(ctx.pi_star, mdp.n_states, mdp.n_actions);
    const double residual = bellman_identity_residual(ctx);
    if (residual > kBellmanResidualTol) {
        std::ostringstream os;
        os << "assemble_dynamics: Bellman identity residual " << residual << " exceeds " << kBellmanResidualTol;
        throw std::runtime_error(os.str());
    }
    return ctx;
}

}  // namespace

DynamicsContext assemble_dynamics(const TabularMdp& mdp, const SamplingDistribution& d, double alpha, double vi_tol) {
    return build(mdp, {}, d, alpha, vi_tol);
}

DynamicsContext assemble_dynamics(const Env& env, const SamplingDistribution& d, double alpha, double vi_tol) {
    return build(env.mdp, env.noise, d, alpha, vi_tol);
}

double bellman_identity_residual(const DynamicsContext& ctx) {
    const Eigen::VectorXd& q = ctx.q_star.values;
    const Eigen::VectorXd lhs =
        ctx.gamma * ctx.DP * (ctx.pi_star_matrix * q) - ctx.d.cwiseProduct(q) + ctx.DR;
    return lhs.cwiseAbs().maxCoeff();
}

Policy switching_policy(const DynamicsContext& ctx, const Eigen::VectorXd& q) {
    Policy p;
    p.action.resize(ctx.n_states());
    for (int s = 0; s < ctx.n_states(); ++s) p.action[s] = greedy_action(q, ctx.n_states(), s, ctx.mdp.legal_actions(s));
    return p;
}

Eigen::VectorXd apply_p_pi(const DynamicsContext& ctx, const Policy& pi, const Eigen::VectorXd& x) {
    const int ns = ctx.n_states();
    Eigen::VectorXd selected(ns);
    for (int s = 0; s < ns; ++s) selected[s] = x[stacked_index(ns, s, pi.action[s])];
    return ctx.P * selected;
}

Eigen::VectorXd apply_dp_pi(const DynamicsContext& ctx, const Policy& pi, const Eigen::VectorXd& x) {
    return ctx.d.cwiseProduct(apply_p_pi(ctx, pi, x));
}

Eigen::VectorXd apply_system(const DynamicsContext& ctx, const Policy& pi, const Eigen::VectorXd& x) {
    return x + ctx.alpha * ctx.gamma * apply_dp_pi(ctx, pi, x) - ctx.alpha * ctx.d.cwiseProduct(x);
}

Eigen::MatrixXd system_matrix(const DynamicsContext& ctx, const Policy& pi) {
    const int n = ctx.n_pairs();
    const Eigen::MatrixXd pi_m = policy_matrix(pi, ctx.n_states(), ctx.mdp.n_actions);
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    a += ctx.alpha * (ctx.gamma * ctx.DP * pi_m);
    a.diagonal() -= ctx.alpha * ctx.d;
    return a;
}

Eigen::MatrixXd system_matrix(const DynamicsContext& ctx, const Eigen::VectorXd& q) {
    return system_matrix(ctx, switching_policy(ctx, q));
}

double induced_inf_norm(const Eigen::MatrixXd& m) {
    return m.cwiseAbs().rowwise().sum().maxCoeff();
}

Sample iid_sampler(const DynamicsContext& ctx, Rng& rng) {
    Sample x;
    const int pair = static_cast<int>(rng.categorical(std::span<const double>(ctx.d.data(), ctx.d.size())));
    x.s = pair % ctx.n_states();
    x.a = pair / ctx.n_states();
    const std::size_t base = ctx.mdp.cell(x.s, x.a, 0);
    x.s_next = static_cast<int>(
        rng.categorical(std::span<const double>(ctx.mdp.transition.data() + base, ctx.n_states())));
    x.r = ctx.mdp.r(x.s, x.a, x.s_next);
    if (!ctx.noise.empty()) {
        const RewardNoise& n = ctx.noise[base + x.s_next];
        if (n.kind != RewardNoise::Kind::none) x.r += n.sample(rng);
    }
    return x;
}

Transition to_transition(const Sample& x) {
    return Transition{x.s, x.a, x.r, x.s_next, false};
}

Eigen::VectorXd mean_drift(const DynamicsContext& ctx, const Eigen::VectorXd& q_eval, const Eigen::VectorXd& q_select) {
    const Policy pi = switching_policy(ctx, q_select);
    return ctx.DR + ctx.gamma * apply_dp_pi(ctx, pi, q_eval) - ctx.d.cwiseProduct(q_eval);
}

Eigen::VectorXd sample_noise(const DynamicsContext& ctx, const Eigen::VectorXd& q_eval,
                             const Eigen::VectorXd& q_select, const Sample& x) {
    const int ns = ctx.n_states();
    const int i = stacked_index(ns, x.s, x.a);
    const int greedy = greedy_action(q_select, ns, x.s_next, ctx.mdp.legal_actions(x.s_next));
    const double td = x.r + ctx.gamma * q_eval[stacked_index(ns, x.s_next, greedy)] - q_eval[i];
    Eigen::VectorXd w = -mean_drift(ctx, q_eval, q_select);
    w[i] += td;
    return w;
}

VectorStep sdq_vector_step(const DynamicsContext& ctx, const Eigen::VectorXd& qa, const Eigen::VectorXd& qb,
                           const Sample& x) {
    VectorStep out;
    out.w_a = sample_noise(ctx, qa, qb, x);
    out.w_b = sample_noise(ctx, qb, qa, x);
    out.qa = qa + ctx.alpha * (mean_drift(ctx, qa, qb) + out.w_a);
    out.qb = qb + ctx.alpha * (mean_drift(ctx, qb, qa) + out.w_b);
    return out;
}

LockstepState equality_initial_state(const DynamicsContext& ctx, const Eigen::VectorXd& qa0,
                                     const Eigen::VectorXd& qb0) {
    LockstepState st;
    st.qa = qa0;
    st.qb = qb0;
    st.upper_a = st.lower_a = qa0 - ctx.q_star.values;
    st.upper_b = st.lower_b = qb0 - ctx.q_star.values;
    st.err = st.err_upper = st.err_lower = st.err_upper_lower = qa0 - qb0;
    return st;
}

LockstepState lockstep_advance(const DynamicsContext& ctx, const LockstepState& cur, const Sample& x,
                               Eigen::VectorXd* w_a_out, Eigen::VectorXd* w_b_out) {
    const double alpha = ctx.alpha;
    const double ag = ctx.alpha * ctx.gamma;
    const int ns = ctx.n_states();
    const Policy pi_a = switching_policy(ctx, cur.qa);
    const Policy pi_b = switching_policy(ctx, cur.qb);
    const Policy& pi_star = ctx.pi_star;
    const Policy pi_err_u = switching_policy(ctx, cur.err_upper);

    const Eigen::VectorXd w_a = sample_noise(ctx, cur.qa, cur.qb, x);
    const Eigen::VectorXd w_b = sample_noise(ctx, cur.qb, cur.qa, x);
    const Eigen::VectorXd w_diff = w_a - w_b;
    const Eigen::VectorXd diff = cur.qa - cur.qb;

    LockstepState nx;

    // Original SDQ iterate, tabular form.
    nx.qa = cur.qa;
    nx.qb = cur.qb;
    {
        const int i = stacked_index(ns, x.s, x.a);
        const int legal = ctx.mdp.legal_actions(x.s_next);
        const double boot_a = cur.qa[stacked_index(ns, x.s_next, greedy_action(cur.qb, ns, x.s_next, legal))];
        const double boot_b = cur.qb[stacked_index(ns, x.s_next, greedy_action(cur.qa, ns, x.s_next, legal))];
        nx.qa[i] += alpha * (x.r + ctx.gamma * boot_a - cur.qa[i]);
        nx.qb[i] += alpha * (x.r + ctx.gamma * boot_b - cur.qb[i]);
    }

    nx.upper_a = apply_system(ctx, pi_b, cur.upper_a) + alpha * w_a;
    nx.upper_b = apply_system(ctx, pi_a, cur.upper_b) + alpha * w_b;

    const Eigen::VectorXd dp_star_diff = apply_dp_pi(ctx, pi_star, diff);
    nx.lower_a = apply_system(ctx, pi_star, cur.lower_a) + ag * (apply_dp_pi(ctx, pi_b, diff) - dp_star_diff) +
                 alpha * w_a;
    nx.lower_b = apply_system(ctx, pi_star, cur.lower_b) + ag * (dp_star_diff - apply_dp_pi(ctx, pi_a, diff)) +
                 alpha * w_b;

    nx.err = cur.err - alpha * ctx.d.cwiseProduct(cur.err) + ag * apply_dp_pi(ctx, pi_b, cur.qa) -
             ag * apply_dp_pi(ctx, pi_a, cur.qb) + alpha * w_diff;
    nx.err_upper = apply_system(ctx, pi_err_u, cur.err_upper) + alpha * w_diff;
    nx.err_upper_lower = apply_system(ctx, pi_star, cur.err_upper_lower) + alpha * w_diff;
    nx.err_lower = apply_system(ctx, pi_b, cur.err_lower) + alpha * w_diff;

    if (w_a_out) *w_a_out = w_a;
    if (w_b_out) *w_b_out = w_b;
    return nx;
}

LockstepTrace lockstep_simulate(const DynamicsContext& ctx, const Eigen::VectorXd& qa0, const Eigen::VectorXd& qb0,
                                int steps, Rng& rng) {
    LockstepTrace trace;
    trace.states.reserve(static_cast<std::size_t>(steps) + 1);
    trace.samples.reserve(steps);
    trace.w_a.reserve(steps);
    trace.w_b.reserve(steps);
    trace.states.push_back(equality_initial_state(ctx, qa0, qb0));
    for (int k = 0; k < steps; ++k) {
        const Sample x = iid_sampler(ctx, rng);
        Eigen::VectorXd w_a, w_b;
        trace.states.push_back(lockstep_advance(ctx, trace.states.back(), x, &w_a, &w_b));
        trace.samples.push_back(x);
        trace.w_a.push_back(std::move(w_a));
        trace.w_b.push_back(std::move(w_b));
    }
    return trace;
}

void check_sandwich_step(const LockstepState& st, const DynamicsContext& ctx, int step, double tol,
                         SandwichReport& report) {
    const Eigen::VectorXd dev_a = st.qa - ctx.q_star.values;
    const Eigen::VectorXd dev_b = st.qb - ctx.q_star.values;

    // Each relation is "small <= big" elementwise.
    auto check = [&](const char* name, const Eigen::VectorXd& small, const Eigen::VectorXd& big, double& min_slack) {
        for (Eigen::Index i = 0; i < small.size(); ++i) {
            const double slack = big[i] - small[i];
            ++report.checks;
            min_slack = std::min(min_slack, slack);
            if (!(slack >= -tol)) {
                ++report.violations;
                if (report.first.size() < SandwichReport::kMaxListed)
                    report.first.push_back({step, static_cast<int>(i), name, -slack});
            }
        }
    };
    check("upper_a", dev_a, st.upper_a, report.min_slack_upper);
    check("upper_b", dev_b, st.upper_b, report.min_slack_upper);
    check("lower_a", st.lower_a, dev_a, report.min_slack_lower);
    check("lower_b", st.lower_b, dev_b, report.min_slack_lower);
    check("err_upper", st.err, st.err_upper, report.min_slack_err);
    check("err_lower", st.err_lower, st.err, report.min_slack_err);
    check("err_upper_lower", st.err_upper_lower, st.err_upper, report.min_slack_err_ul);

    const double identity = (st.err - (st.qa - st.qb)).cwiseAbs().maxCoeff();
    report.max_identity_error = std::max(report.max_identity_error, identity);
    ++report.checks;
    if (!(identity <= tol)) {
        ++report.violations;
        if (report.first.size() < SandwichReport::kMaxListed) report.first.push_back({step, -1, "err_identity", identity});
    }
}

SandwichReport verify_sandwich(const LockstepTrace& trace, const DynamicsContext& ctx, double tol) {
    SandwichReport report;
    report.min_slack_upper = report.min_slack_lower = report.min_slack_err = report.min_slack_err_ul =
        std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < trace.states.size(); ++k)
        check_sandwich_step(trace.states[k], ctx, static_cast<int>(k), tol, report);
    return report;
}

double RecursionReport::max() const {
    return std::max({err_upper_minus_upper_lower, err_upper_minus_lower, upper_minus_lower_a, upper_minus_lower_b});
}

RecursionReport subtraction_recursions(const LockstepTrace& trace, const DynamicsContext& ctx) {
    RecursionReport rep;
    const double ag = ctx.alpha * ctx.gamma;
    const Policy& pi_star = ctx.pi_star;
    auto track = [](double& slot, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        slot = std::max(slot, (a - b).cwiseAbs().maxCoeff());
    };
    for (int k = 0; k < trace.steps(); ++k) {
        const LockstepState& c = trace.states[k];
        const LockstepState& n = trace.states[k + 1];
        const Policy pi_a = switching_policy(ctx, c.qa);
        const Policy pi_b = switching_policy(ctx, c.qb);
        const Policy pi_eu = switching_policy(ctx, c.err_upper);
        const Eigen::VectorXd diff = c.qa - c.qb;

        // err_U - err_UL: switches on Pi_{err_U}, driven by Pi_{err_U} - Pi*.
        const Eigen::VectorXd d1 = c.err_upper - c.err_upper_lower;
        const Eigen::VectorXd r1 =
            apply_system(ctx, pi_eu, d1) + ag * (apply_dp_pi(ctx, pi_eu, c.err_upper_lower) -
                                                 apply_dp_pi(ctx, pi_star, c.err_upper_lower));
        track(rep.err_upper_minus_upper_lower, n.err_upper - n.err_upper_lower, r1);

        // err_U - err_L: switches on Pi_{Q^B}, driven by Pi_{err_U} - Pi_{Q^B}.
        const Eigen::VectorXd d2 = c.err_upper - c.err_lower;
        const Eigen::VectorXd r2 =
            apply_system(ctx, pi_b, d2) +
            ag * (apply_dp_pi(ctx, pi_eu, c.err_upper) - apply_dp_pi(ctx, pi_b, c.err_upper));
        track(rep.err_upper_minus_lower, n.err_upper - n.err_lower, r2);

        // Q^{A_U} - Q^{A_L} and the B analogue.
        const Eigen::VectorXd d3 = c.upper_a - c.lower_a;
        const Eigen::VectorXd r3 = d3 - ctx.alpha * ctx.d.cwiseProduct(d3) +
                                   ag * (apply_dp_pi(ctx, pi_b, c.upper_a) - apply_dp_pi(ctx, pi_star, c.lower_a)) -
                                   ag * (apply_dp_pi(ctx, pi_b, diff) - apply_dp_pi(ctx, pi_star, diff));
        track(rep.upper_minus_lower_a, n.upper_a - n.lower_a, r3);

        const Eigen::VectorXd d4 = c.upper_b - c.lower_b;
        const Eigen::VectorXd r4 = d4 - ctx.alpha * ctx.d.cwiseProduct(d4) +
                                   ag * (apply_dp_pi(ctx, pi_a, c.upper_b) - apply_dp_pi(ctx, pi_star, c.lower_b)) -
                                   ag * (apply_dp_pi(ctx, pi_star, diff) - apply_dp_pi(ctx, pi_a, diff));
        track(rep.upper_minus_lower_b, n.upper_b - n.lower_b, r4);
    }
    return rep;
}

std::string trace_csv(const LockstepTrace& trace, const DynamicsContext& ctx) {
    std::ostringstream os;
    os << "# sdq-trace-csv v1\n";
    os << "k,err_a_inf,err_b_inf,q_err_inf,upper_a_inf,lower_a_inf,min_slack_upper,min_slack_lower\n";
    os << std::setprecision(17);
    for (std::size_t k = 0; k < trace.states.size(); ++k) {
        const LockstepState& st = trace.states[k];
        const Eigen::VectorXd dev_a = st.qa - ctx.q_star.values;
        const Eigen::VectorXd dev_b = st.qb - ctx.q_star.values;
        const double slack_upper = std::min((st.upper_a - dev_a).minCoeff(), (st.upper_b - dev_b).minCoeff());
        const double slack_lower = std::min((dev_a - st.lower_a).minCoeff(), (dev_b - st.lower_b).minCoeff());
        os << k << ',' << dev_a.cwiseAbs().maxCoeff() << ',' << dev_b.cwiseAbs().maxCoeff() << ','
           << st.err.cwiseAbs().maxCoeff() << ',' << st.upper_a.cwiseAbs().maxCoeff() << ','
           << st.lower_a.cwiseAbs().maxCoeff() << ',' << slack_upper << ',' << slack_lower << '\n';
    }
    return os.str();
}

void write_trace_csv(const LockstepTrace& trace, const DynamicsContext& ctx, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << trace_csv(trace, ctx);
}

}  // namespace sdq
