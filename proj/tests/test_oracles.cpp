#include <doctest.h>

#include <floq/expr.hpp>
#include <floq/model.hpp>
#include <floq/oracles.hpp>

#include <cmath>
#include <complex>
#include <random>
#include <vector>

using floq::oracles::brute_force_multipliers;
using floq::oracles::integrate_scalar_coeff;
using floq::oracles::lambert_w;
using floq::oracles::scalar_characteristic_roots;
using cxd = std::complex<double>;

namespace {
// reference values computed with mpmath at 30 digits
struct WRef {
    int k;
    cxd z;
    cxd w;
};
const WRef kWTable[] = {
    {0, {2.5, 0.0}, {0.95858635672870291217, 0.0}},
    {0, {-0.2, 0.0}, {-0.25917110181907374506, 0.0}},
    {0, {-0.35, 0.1}, {-0.4782641209902557508, 0.34075489030867201095}},
    {0, {0.3, -0.7}, {0.3697613865115330302, -0.37434567008335483512}},
    {0, {M_E, 0.0}, {1.0, 0.0}},
    {0, {-1.5, 0.0}, {-0.032783735915572522991, 1.5496438233501592257}},
    {-1, {-0.2, 0.0}, {-2.5426413577735264243, 0.0}},
    {-1, {-1.5, 0.0}, {-0.032783735915572522991, -1.5496438233501592257}},
    {-1, {-0.35, -0.05}, {-3.1122038621941933143, -7.3095604923253549197}},
    {-1, {2.0, -1.0}, {-0.82069322764636878931, -5.0137881918681247226}},
    {1, {2.0, 1.0}, {-0.82069322764636878931, 5.0137881918681247226}},
    {1, {M_E, 0.0}, {-0.53209212198637990545, 4.5971580133025732772}},
    {2, {M_E, 0.0}, {-1.3939822411584432345, 10.868006057533692802}},
    {-2, {M_E, 0.0}, {-1.3939822411584432345, -10.868006057533692802}},
    {2, {-3.0, 2.0}, {-1.3213988309335913279, 13.451242332438282448}},
    {-2, {0.5, -0.5}, {-2.8215217216881520883, -11.541201616900859499}},
    // branch-cut closures on the negative real axis (continuity from above)
    {-1, {-0.35, 0.0}, {-1.3497172521922489762, 0.0}},
    {-1, {-0.35, 0.05}, {-1.4576304675351410919, -0.42663425992469628395}},
};
}  // namespace

TEST_CASE("lambert_w reproduces reference table") {
    for (const auto& r : kWTable) {
        CAPTURE(r.k);
        CAPTURE(r.z.real());
        CAPTURE(r.z.imag());
        const cxd w = lambert_w(r.k, r.z);
        CHECK(std::abs(w - r.w) < 1e-13 * std::max(1.0, std::abs(r.w)));
    }
    // just below the (-1/e, 0) segment the -1 branch jumps to the lower strip
    const cxd below = lambert_w(-1, cxd(-0.35, -1e-12));
    CHECK(std::abs(below - cxd(-3.140418145211839, -7.455306321796082)) < 1e-6);
}

TEST_CASE("lambert_w special points and defining identity") {
    CHECK(lambert_w(0, 0.0) == cxd(0.0, 0.0));
    CHECK_THROWS_AS(lambert_w(-1, 0.0), std::domain_error);
    CHECK(std::abs(lambert_w(0, M_E) - 1.0) < 1e-15);
    CHECK(std::abs(lambert_w(0, -1.0 / M_E) + 1.0) < 2e-7);   // sqrt-type point
    CHECK(std::abs(lambert_w(-1, -1.0 / M_E) + 1.0) < 2e-7);

    std::mt19937_64 rng(2026);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = -2; k <= 2; ++k) {
        for (int i = 0; i < 1000; ++i) {
            cxd z(u(rng), u(rng));
            if (std::abs(z) < 1e-3) z += 0.5;
            const cxd w = lambert_w(k, z);
            const cxd resid = w * std::exp(w) - z;
            CAPTURE(k);
            CAPTURE(z.real());
            CAPTURE(z.imag());
            REQUIRE(std::abs(resid) < 1e-13 * std::max(1.0, std::abs(z)));
        }
    }
}

TEST_CASE("lambert_w conjugate symmetry across branches") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int k = 0; k <= 2; ++k) {
        for (int i = 0; i < 300; ++i) {
            cxd z(u(rng), u(rng));
            if (std::abs(z.imag()) < 0.05) z += cxd(0.0, 0.1);  // stay off the cuts
            const cxd a = lambert_w(k, std::conj(z));
            const cxd b = std::conj(lambert_w(-k, z));
            CAPTURE(k);
            CAPTURE(z.real());
            CAPTURE(z.imag());
            REQUIRE(std::abs(a - b) < 1e-12 * std::max(1.0, std::abs(a)));
        }
    }
}

TEST_CASE("scalar coefficient integrals of the delayed-oscillator builtin") {
    auto sys = floq::model::make_scalar_lambert(M_E / M_PI);
    const double K = M_E / M_PI;
    const double p[1] = {K};
    CHECK(std::abs(integrate_scalar_coeff(sys, 0, p)) < 1e-14);
    CHECK(integrate_scalar_coeff(sys, 1, p) ==
          doctest::Approx(K * M_PI).epsilon(1e-14));
    CHECK(std::abs(integrate_scalar_coeff(sys, 2, p)) < 1e-14);
}

TEST_CASE("characteristic roots match the Lambert-W closed form") {
    const double K = M_E / M_PI;
    const double a[] = {0.0, K * M_PI, 0.0};
    // closed form: mu_k = K pi / W_k(K pi); seed Newton from perturbed values
    std::vector<cxd> seeds;
    std::vector<cxd> expect;
    for (int k = -3; k <= 3; ++k) {
        const cxd mu = K * M_PI / lambert_w(k, K * M_PI);
        expect.push_back(mu);
        seeds.push_back(mu * cxd(1.02, 0.01));
    }
    auto roots = scalar_characteristic_roots(a, seeds);
    REQUIRE(roots.size() >= 5);
    std::sort(expect.begin(), expect.end(), [](cxd x, cxd y) {
        return std::abs(x) > std::abs(y);
    });
    for (std::size_t i = 0; i < 5; ++i) {
        CAPTURE(i);
        CHECK(std::abs(roots[i] - expect[i]) < 1e-10 * std::abs(expect[i]));
    }
    CHECK(std::abs(roots[0] - M_E) < 1e-10);
}

TEST_CASE("brute force on a plain ODE reproduces exp(a T)") {
    auto sys = floq::model::PeriodicDelaySystem{};
    sys.d = 1;
    sys.T = 2.0;
    sys.delays = {0.0};
    sys.coeffs.push_back(floq::model::Coeff::from_entries(
        1, {floq::expr::Expr::parse("0.3", {})}, sys.T));
    sys.name = "ode1";
    sys.validate();
    auto grid = floq::model::build_grid(sys);
    auto mults = brute_force_multipliers(sys, grid, {}, 64, 8);
    REQUIRE(!mults.empty());
    CHECK(std::abs(mults[0] - std::exp(0.6)) < 1e-10);
}

TEST_CASE("brute force on a constant-delay equation matches a/W_0(a)") {
    // x'(t) = a x(t-1) with period 1: multipliers a / W_k(a)
    auto sys = floq::model::PeriodicDelaySystem{};
    sys.d = 1;
    sys.T = 1.0;
    sys.delays = {0.0, 1.0};
    sys.coeffs.push_back(
        floq::model::Coeff::from_entries(1, {floq::expr::Expr()}, sys.T));
    sys.coeffs.push_back(floq::model::Coeff::from_entries(
        1, {floq::expr::Expr::parse("0.5", {})}, sys.T));
    sys.name = "dde1";
    sys.validate();
    auto grid = floq::model::build_grid(sys);
    auto mults = brute_force_multipliers(sys, grid, {}, 64, 8);
    REQUIRE(!mults.empty());
    const cxd mu0 = 0.5 / lambert_w(0, 0.5);
    CHECK(std::abs(mults[0] - mu0) < 1e-5);
}

TEST_CASE("brute force dominant multiplier of the delayed oscillator") {
    auto sys = floq::model::make_scalar_lambert(M_E / M_PI);
    auto grid = floq::model::build_grid(sys);
    const double p[1] = {M_E / M_PI};
    auto mults = brute_force_multipliers(sys, grid, p, 64, 8);
    REQUIRE(!mults.empty());
    CHECK(std::abs(mults[0] - M_E) < 1e-5);
    // second pair from the closed form
    const cxd mu1(-0.067534082205177609811, -0.58347950355204472207);
    bool found = false;
    for (std::size_t i = 1; i < std::min<std::size_t>(mults.size(), 6); ++i)
        if (std::abs(mults[i] - mu1) < 1e-4 ||
            std::abs(mults[i] - std::conj(mu1)) < 1e-4)
            found = true;
    CHECK(found);
}
