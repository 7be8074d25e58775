#include "sdq/bounds.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace sdq {

void BoundParams::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("BoundParams: alpha must lie in (0,1)");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("BoundParams: gamma must lie in [0,1)");
    if (!(d_min > 0.0 && d_min <= d_max && d_max < 1.0 + 1e-15))
        throw std::invalid_argument("BoundParams: need 0 < d_min <= d_max <= 1");
    if (n_sa < 1) throw std::invalid_argument("BoundParams: n_sa must be positive");
    if (k < 0) throw std::invalid_argument("BoundParams: k must be nonnegative");
}

BoundParams BoundParams::from(const DynamicsContext& ctx, long long k) {
    BoundParams p;
    p.alpha = ctx.alpha;
    p.gamma = ctx.gamma;
    p.d_min = ctx.d_min;
    p.d_max = ctx.d_max;
    p.n_sa = ctx.n_pairs();
    p.k = k;
    return p;
}

namespace {

// k^m rho^(k-e), zero at k = 0.
double poly_geo(double rho, long long k, int m, int e) {
    if (k == 0) return 0.0;
    const double kd = static_cast<double>(k);
    return std::exp(m * std::log(kd) + (kd - e) * std::log(rho));
}

double first_term(const BoundParams& p) {
    const double n = p.n_sa;
    return 120.0 * std::sqrt(p.alpha) * n / (std::pow(p.d_min, 4.5) * std::pow(1.0 - p.gamma, 5.5));
}

}  // namespace

double polynomial_geometric_term(double rho, long long k) { return poly_geo(rho, k, 4, 4); }

double corollary_envelope(double rho, long long k) {
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("corollary_envelope: rho must lie in (0,1)");
    const double l = std::log(rho);
    const double c = std::pow(rho, -4.0) * 4096.0 / std::pow(l, 4) * std::exp(-4.0);
    return c * std::pow(rho, static_cast<double>(k) / 2.0);
}

double theorem1_bound(const BoundParams& p) {
    p.validate();
    const double n = p.n_sa;
    return first_term(p) + 48.0 * poly_geo(p.rho(), p.k, 4, 4) * std::pow(n, 1.5) / (1.0 - p.gamma);
}

double corollary1_bound(const BoundParams& p) {
    p.validate();
    const double rho = p.rho();
    if (!(rho < 1.0)) throw std::invalid_argument("corollary1_bound: rho = 1 makes ln(rho) vanish");
    const double n = p.n_sa;
    return first_term(p) + 48.0 * std::pow(n, 1.5) / (1.0 - p.gamma) * corollary_envelope(rho, p.k);
}

IntermediateBounds intermediate_bounds(const BoundParams& p) {
    p.validate();
    const double a = p.alpha, g = p.gamma, dm = p.d_min, dx = p.d_max, n = p.n_sa, rho = p.rho();
    const double sa = std::sqrt(a), n15 = std::pow(n, 1.5), og = 1.0 - g;
    const long long k = p.k;
    const double kd = static_cast<double>(k);
    IntermediateBounds b;
    b.err_bound = 8.0 * g * dx * n * sa / (std::pow(dm, 2.5) * std::pow(og, 3.5)) +
                  8.0 * sa * n / (std::pow(dm, 1.5) * std::pow(og, 2.5)) +
                  4.0 * poly_geo(rho, k, 2, 2) * a * g * dx * n15 / og +
                  4.0 * (k == 0 ? 0.0 : kd * std::pow(rho, kd - 1.0)) * n15 / og;
    b.lcs_bound = 16.0 * g * dx * n * sa / (std::pow(dm, 3.5) * std::pow(og, 4.5)) +
                  24.0 * poly_geo(rho, k, 3, 3) * n15 / og + 4.0 * sa * n / (std::pow(dm, 0.5) * std::pow(og, 1.5));
    b.subtraction_bound = 40.0 * g * dx * n * sa / (std::pow(dm, 4.5) * std::pow(og, 5.5)) +
                          20.0 * poly_geo(rho, k, 4, 4) * a * g * dx * n15 / og;
    return b;
}

double linear_system_bound(long long k, double alpha, int n, double d_min, double gamma, double x0_norm) {
    const double rho = 1.0 - alpha * d_min * (1.0 - gamma);
    return 3.0 * std::sqrt(alpha) * n / (std::sqrt(d_min) * std::pow(1.0 - gamma, 1.5)) +
           n * x0_norm * std::pow(rho, static_cast<double>(k));
}

double noise_energy_limit(double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("noise_energy_limit: gamma must lie in [0,1)");
    return 16.0 / ((1.0 - gamma) * (1.0 - gamma));
}

ErrorCurve empirical_error_curve(const std::vector<std::vector<double>>& errors) {
    if (errors.empty()) throw std::invalid_argument("empirical_error_curve: need at least one run");
    const std::size_t len = errors.front().size();
    for (const auto& run : errors)
        if (run.size() != len) throw std::invalid_argument("empirical_error_curve: runs have different lengths");
    ErrorCurve c;
    c.runs = static_cast<int>(errors.size());
    c.mean.assign(len, 0.0);
    c.se.assign(len, 0.0);
    const double m = static_cast<double>(errors.size());
    for (std::size_t k = 0; k < len; ++k) {
        double sum = 0.0;
        for (const auto& run : errors) sum += run[k];
        const double mean = sum / m;
        double ss = 0.0;
        for (const auto& run : errors) ss += (run[k] - mean) * (run[k] - mean);
        c.mean[k] = mean;
        c.se[k] = errors.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
    }
    return c;
}

ErrorCurve empirical_error_curve(const std::vector<LockstepTrace>& traces, const Eigen::VectorXd& q_star,
                                 bool use_b) {
    std::vector<std::vector<double>> errors;
    errors.reserve(traces.size());
    for (const auto& t : traces) {
        std::vector<double> e;
        e.reserve(t.states.size());
        for (const auto& st : t.states) e.push_back(((use_b ? st.qb : st.qa) - q_star).cwiseAbs().maxCoeff());
        errors.push_back(std::move(e));
    }
    return empirical_error_curve(errors);
}

std::string bound_csv(const ErrorCurve& curve, const BoundParams& base) {
    std::ostringstream os;
    os << "# sdq-bound-csv v1\n";
    os << "k,empirical_mean,empirical_se,theorem1,corollary1\n";
    os << std::setprecision(17);
    BoundParams p = base;
    for (std::size_t k = 0; k < curve.size(); ++k) {
        p.k = static_cast<long long>(k);
        os << k << ',' << curve.mean[k] << ',' << curve.se[k] << ',' << theorem1_bound(p) << ','
           << corollary1_bound(p) << '\n';
    }
    return os.str();
}

void write_bound_csv(const ErrorCurve& curve, const BoundParams& base, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << bound_csv(curve, base);
}

}  // namespace sdq
