#include "doctest.h"
#include "sdq/bounds.hpp"

#include <cmath>

using namespace sdq;

namespace {

BoundParams params(double alpha, double gamma, double dmin, double dmax, int n, long long k) {
    BoundParams p;
    p.alpha = alpha;
    p.gamma = gamma;
    p.d_min = dmin;
    p.d_max = dmax;
    p.n_sa = n;
    p.k = k;
    return p;
}

void check_rel(double got, double want, double rel = 1e-9) {
    CHECK(std::abs(got - want) <= rel * std::abs(want));
}

}  // namespace

TEST_SUITE("bounds") {

// Reference values from tests/oracles/bound_oracle.py (50-digit arithmetic).
TEST_CASE("high precision oracle values") {
    const BoundParams a = params(0.1, 0.5, 0.25, 0.25, 4, 10);
    check_rel(a.rho(), 0.98749999999999999931);
    check_rel(theorem1_bound(a), 10638733.621829026164);
    check_rel(corollary1_bound(a), 2272618962666.4277138);
    IntermediateBounds ib = intermediate_bounds(a);
    check_rel(ib.err_bound, 1559.7317732885987577);
    check_rel(ib.lcs_bound, 358989.84489308140236);
    check_rel(ib.subtraction_bound, 183635.1530487741239);

    const BoundParams a0 = params(0.1, 0.5, 0.25, 0.25, 4, 0);
    check_rel(theorem1_bound(a0), 3517030.8233622293187);
    check_rel(corollary1_bound(a0), 2420143198149.0791233);
    ib = intermediate_bounds(a0);
    check_rel(ib.err_bound, 915.89344358391388507);
    check_rel(ib.lcs_bound, 7355.7692187833083895);
    check_rel(ib.subtraction_bound, 146542.95097342622161);

    const BoundParams b = params(0.05, 0.9, 0.1, 0.4, 6, 50);
    check_rel(theorem1_bound(b), 1653056995700.392757);
    check_rel(corollary1_bound(b), 8370946803451506098.2);
    ib = intermediate_bounds(b);
    check_rel(ib.err_bound, 4025766.0142342522227);
    check_rel(ib.lcs_bound, 1203450708.4261655807);
    check_rel(ib.subtraction_bound, 193519433645.2361076);

    const BoundParams c = params(0.5, 0.99, 0.05, 0.3, 12, 2000);
    check_rel(theorem1_bound(c), 74797052565085689030.0);
    check_rel(corollary1_bound(c), 3.0586888725294723249e+21);
    ib = intermediate_bounds(c);
    check_rel(ib.err_bound, 367272006101.52362198);
    check_rel(ib.lcs_bound, 1927028453246291.9405);
    check_rel(ib.subtraction_bound, 7332953446866287728.0);

    check_rel(linear_system_bound(0, 0.05, 4, 0.25, 0.5, 1.0), 19.178932768808221215);
    check_rel(linear_system_bound(100, 0.05, 4, 0.25, 0.5, 1.0), 17.315783362306956065);
}

TEST_CASE("k = 0 drops the transient term") {
    const BoundParams p = params(0.1, 0.5, 0.25, 0.25, 4, 0);
    const double first = 120.0 * std::sqrt(0.1) * 4 / (std::pow(0.25, 4.5) * std::pow(0.5, 5.5));
    check_rel(theorem1_bound(p), first, 1e-14);
}

TEST_CASE("small step size shrinks the constant term") {
    // With rho held fixed through d, the constant term scales as sqrt(alpha).
    const double hi = theorem1_bound(params(1e-10, 0.5, 0.25, 0.25, 4, 0));
    const double lo = theorem1_bound(params(1e-12, 0.5, 0.25, 0.25, 4, 0));
    check_rel(lo / hi, 0.1, 1e-12);
    CHECK(linear_system_bound(0, 1e-16, 4, 0.25, 0.5, 0.0) < 1e-6);
}

TEST_CASE("corollary envelope dominates the polynomial-geometric term") {
    for (double rho : {0.9, 0.99, 0.999}) {
        for (long long k = 0; k <= 100000; ++k) {
            const double lhs = polynomial_geometric_term(rho, k);
            const double rhs = corollary_envelope(rho, k);
            if (!(lhs <= rhs * (1.0 + 1e-12))) {
                FAIL("envelope broken at rho=" << rho << " k=" << k);
            }
        }
    }
    const BoundParams base = params(0.1, 0.5, 0.25, 0.25, 4, 0);
    for (long long k = 0; k <= 100000; k += 7) {
        BoundParams p = base;
        p.k = k;
        REQUIRE(corollary1_bound(p) >= theorem1_bound(p));
    }
}

TEST_CASE("corollary decays to the constant term") {
    BoundParams p = params(0.5, 0.5, 0.5, 0.5, 2, 0);
    const double first = theorem1_bound(p);
    p.k = 200000;
    check_rel(corollary1_bound(p), first, 1e-12);
}

TEST_CASE("corollary rejects rho = 1") {
    BoundParams p = params(0.1, 0.5, 0.25, 0.25, 4, 3);
    p.d_min = 0.0;
    CHECK_THROWS_AS(corollary1_bound(p), std::invalid_argument);
    CHECK_THROWS_AS(corollary_envelope(1.0, 3), std::invalid_argument);
}

TEST_CASE("parameter validation") {
    CHECK_THROWS_AS(theorem1_bound(params(1.0, 0.5, 0.25, 0.25, 4, 0)), std::invalid_argument);
    CHECK_THROWS_AS(theorem1_bound(params(0.1, 1.0, 0.25, 0.25, 4, 0)), std::invalid_argument);
    CHECK_THROWS_AS(theorem1_bound(params(0.1, 0.5, 0.3, 0.25, 4, 0)), std::invalid_argument);
    CHECK_THROWS_AS(theorem1_bound(params(0.1, 0.5, 0.25, 0.25, 0, 0)), std::invalid_argument);
}

TEST_CASE("theorem1 bound dominates its composition terms") {
    // The theorem adds the lower comparison bound and the subtraction bound.
    for (double alpha : {0.01, 0.1, 0.5})
        for (double gamma : {0.0, 0.5, 0.9})
            for (double dmin : {0.05, 0.25})
                for (long long k : {0LL, 1LL, 10LL, 100LL, 1000LL, 100000LL}) {
                    const BoundParams p = params(alpha, gamma, dmin, dmin, 4, k);
                    const IntermediateBounds ib = intermediate_bounds(p);
                    CHECK(theorem1_bound(p) >= ib.lcs_bound + ib.subtraction_bound);
                }
}

TEST_CASE("theorem1 bound is eventually nonincreasing in k") {
    BoundParams p = params(0.5, 0.5, 0.25, 0.25, 4, 0);
    const double peak = -4.0 / std::log(p.rho());
    double prev = std::numeric_limits<double>::infinity();
    for (long long k = static_cast<long long>(peak) + 1; k < 20000; ++k) {
        p.k = k;
        const double v = theorem1_bound(p);
        REQUIRE(v <= prev);
        prev = v;
    }
}

TEST_CASE("noise energy limit") {
    CHECK(noise_energy_limit(0.5) == 64.0);
    CHECK(noise_energy_limit(0.0) == 16.0);
    CHECK_THROWS(noise_energy_limit(1.0));
}

TEST_CASE("empirical error curves") {
    const ErrorCurve zero = empirical_error_curve({{0.0, 0.0, 0.0}});
    CHECK(zero.runs == 1);
    CHECK(zero.mean == std::vector<double>{0.0, 0.0, 0.0});
    CHECK(zero.se == std::vector<double>{0.0, 0.0, 0.0});
    const ErrorCurve two = empirical_error_curve({{1.0, 1.0}, {3.0, 3.0}});
    CHECK(two.mean == std::vector<double>{2.0, 2.0});
    CHECK(two.se[0] == doctest::Approx(1.0));
    CHECK_THROWS_AS(empirical_error_curve({{1.0}, {1.0, 2.0}}), std::invalid_argument);
    CHECK_THROWS_AS(empirical_error_curve(std::vector<std::vector<double>>{}), std::invalid_argument);
}

TEST_CASE("empirical curve on a single state follows the scalar contraction") {
    // One state, one action, deterministic reward: qa_k - Q* = (1 - alpha(1 - gamma))^k (qa_0 - Q*)
    // and the sampled path equals the mean path.
    TabularMdp m = TabularMdp::make(1, 1, 0.5);
    m.set(0, 0, 0, 1.0, 1.0);
    const DynamicsContext ctx = assemble_dynamics(m, SamplingDistribution::uniform(1), 0.1);
    std::vector<LockstepTrace> traces;
    for (int r = 0; r < 100; ++r) {
        Rng rng = Rng::stream(3, r, "curve");
        Eigen::VectorXd q0(1);
        q0 << rng.uniform(-1, 1);
        traces.push_back(lockstep_simulate(ctx, q0, q0, 60, rng));
    }
    const ErrorCurve c = empirical_error_curve(traces, ctx.q_star.values);
    double mean0 = 0.0;
    for (const auto& t : traces) mean0 += std::abs(t.states[0].qa[0] - 2.0);
    mean0 /= 100.0;
    for (int k = 0; k <= 60; ++k) {
        const double expected = mean0 * std::pow(ctx.rho, k);
        CHECK(std::abs(c.mean[k] - expected) <= std::max(c.se[k], 1e-12));
    }
}

TEST_CASE("bound CSV layout") {
    const ErrorCurve c = empirical_error_curve({{1.0, 0.5}});
    const std::string csv = bound_csv(c, params(0.1, 0.5, 0.25, 0.25, 4, 0));
    CHECK(csv.rfind("# sdq-bound-csv v1\nk,empirical_mean,empirical_se,theorem1,corollary1\n0,1,0,", 0) == 0);
}

}
