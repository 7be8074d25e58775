#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sdq/switching.hpp"

namespace sdq {

struct BoundParams {
    double alpha = 0.1;
    double gamma = 0.9;
    double d_min = 0.25;
    double d_max = 0.25;
    int n_sa = 4;
    long long k = 0;

    double rho() const { return 1.0 - alpha * d_min * (1.0 - gamma); }
    // Throws std::invalid_argument when the parameter ranges are violated.
    void validate() const;

    static BoundParams from(const DynamicsContext& ctx, long long k = 0);
};

double theorem1_bound(const BoundParams& p);
// Requires rho in (0,1).
double corollary1_bound(const BoundParams& p);

struct IntermediateBounds {
    double err_bound = 0.0;
    double lcs_bound = 0.0;
    double subtraction_bound = 0.0;
};
IntermediateBounds intermediate_bounds(const BoundParams& p);

// k^4 rho^(k-4) and the envelope that dominates it.
double polynomial_geometric_term(double rho, long long k);
double corollary_envelope(double rho, long long k);

double linear_system_bound(long long k, double alpha, int n, double d_min, double gamma, double x0_norm);

double noise_energy_limit(double gamma);

struct ErrorCurve {
    std::vector<double> mean;
    std::vector<double> se;
    int runs = 0;

    std::size_t size() const { return mean.size(); }
};

// errors[run][k]; all runs must share one length.
ErrorCurve empirical_error_curve(const std::vector<std::vector<double>>& errors);
// Uses ||qa_k - Q*||_inf (or qb when use_b) from each trace.
ErrorCurve empirical_error_curve(const std::vector<LockstepTrace>& traces, const Eigen::VectorXd& q_star,
                                 bool use_b = false);

std::string bound_csv(const ErrorCurve& curve, const BoundParams& base);
void write_bound_csv(const ErrorCurve& curve, const BoundParams& base, const std::filesystem::path& path);

}  // namespace sdq
