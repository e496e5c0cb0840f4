#include <doctest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <random>

#include "floq/charfun.hpp"
#include "floq/model.hpp"
#include "floq/oracles.hpp"
#include "floq/support.hpp"

using floq::charfun::CharEvalContext;
using floq::charfun::Scheme;
using floq::expr::Expr;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using cxd = std::complex<double>;

namespace {

floq::model::PeriodicDelaySystem pure_ode(const std::string& entry, double T) {
    floq::model::PeriodicDelaySystem sys;
    sys.d = 1;
    sys.T = T;
    sys.delays = {0.0};
    sys.coeffs = {floq::model::Coeff::from_entries(1, {Expr::parse(entry, {})}, T)};
    return sys;
}

// d = 1, delays {0, T/2}: two blocks, the delay block is not a multiple of
// the period, so the trapezoidal steps couple both blocks
floq::model::PeriodicDelaySystem two_block() {
    floq::model::PeriodicDelaySystem sys;
    sys.d = 1;
    sys.T = 2.0;
    sys.delays = {0.0, 1.0};
    sys.coeffs = {
        floq::model::Coeff::from_entries(1, {Expr::parse("0.2+0.1*cos(pi*t)", {})},
                                         2.0),
        floq::model::Coeff::from_entries(1, {Expr::parse("0.3*sin(pi*t)+0.05", {})},
                                         2.0)};
    return sys;
}

// d = 2 with a whole-period delay; a delta hint of T/2 forces two blocks
// that stay decoupled (n = {0, 4})
floq::model::PeriodicDelaySystem decoupled_pair() {
    floq::model::PeriodicDelaySystem sys;
    sys.d = 2;
    sys.T = 1.0;
    sys.delays = {0.0, 2.0};
    sys.coeffs = {
        floq::model::Coeff::from_entries(
            2,
            {Expr::parse("0.1*sin(2*pi*t)", {}), Expr::parse("1", {}),
             Expr::parse("-0.4", {}), Expr::parse("0.2*cos(2*pi*t)", {})},
            1.0),
        floq::model::Coeff::from_entries(
            2,
            {Expr::parse("0.05", {}), Expr::parse("0", {}),
             Expr::parse("0.1*cos(2*pi*t)", {}), Expr::parse("-0.03", {})},
            1.0)};
    sys.delta_hint = 0.5;
    return sys;
}

// constant coefficients, delay equal to the period: the block ODE has the
// closed form N(mu) = exp(T(A0 + A1/mu)) - mu
struct ConstDde {
    floq::model::PeriodicDelaySystem sys;
    Eigen::Matrix2d a0, a1;
};
ConstDde const_dde() {
    ConstDde r;
    r.a0 << 0.1, 0.7, -0.5, -0.2;
    r.a1 << 0.0, 0.3, -0.2, 0.1;
    r.sys.d = 2;
    r.sys.T = 1.5;
    r.sys.delays = {0.0, 1.5};
    auto entries = [](const Eigen::Matrix2d& a) {
        std::vector<Expr> e;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) e.push_back(Expr::constant(a(i, j)));
        return e;
    };
    r.sys.coeffs = {floq::model::Coeff::from_entries(2, entries(r.a0), 1.5),
                    floq::model::Coeff::from_entries(2, entries(r.a1), 1.5)};
    return r;
}

// coupled blocks with sparse step assembly (prefer_sparse forces it)
floq::model::PeriodicDelaySystem sparse_coupled() {
    floq::model::PeriodicDelaySystem sys;
    sys.d = 2;
    sys.T = 1.0;
    sys.delays = {0.0, 0.5};
    Eigen::SparseMatrix<double> c0(2, 2), c1(2, 2);
    c0.insert(0, 1) = 1.0;
    c0.insert(1, 0) = -0.8;
    c1.insert(1, 1) = 0.5;
    c1.insert(0, 0) = 0.2;
    std::vector<floq::model::CoeffTerm> t0, t1;
    t0.push_back({Expr::parse("1+0.2*sin(2*pi*t)", {}), c0});
    t1.push_back({Expr::parse("0.5+0.1*cos(2*pi*t)", {}), c1});
    sys.coeffs = {floq::model::Coeff::from_terms(2, std::move(t0), 1.0, true),
                  floq::model::Coeff::from_terms(2, std::move(t1), 1.0, true)};
    return sys;
}

VectorXcd random_cvec(int n, unsigned seed) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    VectorXcd v(n);
    for (int i = 0; i < n; ++i) v[i] = cxd(u(gen), u(gen));
    return v;
}

double rel_err(const VectorXcd& got, const VectorXcd& want) {
    return (got - want).norm() / std::max(want.norm(), 1e-300);
}

}  // namespace

TEST_CASE("context snaps the step and validates inputs") {
    auto sys = floq::model::make_scalar_lambert(M_E / M_PI);
    auto grid = floq::model::build_grid(sys);
    CharEvalContext c1(sys, grid, VectorXd(), Scheme::rk4, 0.3);
    CHECK(c1.steps() == 4);
    CHECK(c1.step() == doctest::Approx(0.25));
    CHECK(c1.params().size() == 1);
    CHECK(c1.params()[0] == doctest::Approx(M_E / M_PI));
    CharEvalContext c2(sys, grid, VectorXd(), Scheme::rk4, 0.5);
    CHECK(c2.steps() == 2);
    CharEvalContext c3(sys, grid, VectorXd(), Scheme::trapezoidal, 1e-3);
    CHECK(c3.steps() == 1000);

    CHECK_THROWS_AS(CharEvalContext(sys, grid, VectorXd(), Scheme::rk4, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(CharEvalContext(sys, grid, VectorXd(), Scheme::rk4, 0.6),
                    std::invalid_argument);
    VectorXd bad(2);
    bad << 1.0, 2.0;
    CHECK_THROWS_AS(CharEvalContext(sys, grid, bad, Scheme::rk4, 1e-2),
                    std::invalid_argument);

    VectorXcd v = random_cvec(c1.nd() + 1, 1);
    CHECK_THROWS_AS(c1.n_action(cxd(1.0, 0.0), v), std::invalid_argument);
}

TEST_CASE("apply_A matches the scalar closed form") {
    const double K = 0.7;
    auto sys = floq::model::make_scalar_lambert(K);
    auto grid = floq::model::build_grid(sys);
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::rk4, 1e-2);
    REQUIRE(ctx.big_n() == 1);
    REQUIRE(ctx.nd() == 1);

    for (double s : {0.0, 0.17, 0.5, 0.93, 1.0}) {
        for (cxd mu : {cxd(1.3, 0.0), cxd(0.4, 0.9), cxd(-0.7, 0.2)}) {
            VectorXcd q(1);
            q << cxd(0.8, -0.3);
            const VectorXcd got = ctx.apply_A(s, mu, q);
            const double c2 = std::cos(2.0 * M_PI * s);
            const double s2 = std::sin(2.0 * M_PI * s);
            const cxd want = M_PI *
                             (K * c2 + (s2 + K) / mu +
                              0.1 * c2 * std::exp(s2) / (mu * mu)) *
                             q[0];
            CHECK(std::abs(got[0] - want) <= 1e-13 * std::abs(want));
        }
    }
    VectorXcd q(1);
    q << cxd(1.0, 0.0);
    CHECK_THROWS_AS(ctx.apply_A(0.3, cxd(0.0, 0.0), q), floq::charfun::MuZero);
    CHECK_THROWS_AS(ctx.n_action(cxd(0.0, 0.0), q), floq::charfun::MuZero);
}

TEST_CASE("B and B^T shift blocks with the mu wrap") {
    auto sys = two_block();
    auto grid = floq::model::build_grid(sys);
    REQUIRE(grid.N == 2);
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::rk4, 1e-2);
    const cxd mu(0.3, 1.1);
    VectorXcd v(2);
    v << cxd(1.0, 2.0), cxd(-0.5, 0.25);
    const VectorXcd bv = ctx.apply_B(mu, v);
    CHECK(bv[0] == v[1]);
    CHECK(bv[1] == mu * v[0]);
    const VectorXcd btv = ctx.apply_B_transpose(mu, v);
    CHECK(btv[0] == mu * v[1]);
    CHECK(btv[1] == v[0]);

    // adjoint pairing of the wrap itself: <B(conj mu)u, v> = <u, B(mu)^T v>
    const VectorXcd u = random_cvec(2, 7);
    const cxd lhs = ctx.apply_B(std::conj(mu), u).dot(v);
    const cxd rhs = u.dot(ctx.apply_B_transpose(mu, v));
    CHECK(std::abs(lhs - rhs) <= 1e-14);
}

TEST_CASE("delay-free closed form: N(mu) = (e^{aT} - mu) I") {
    auto sys = pure_ode("0.3", 2.0);
    auto grid = floq::model::build_grid(sys);
    const double phi = std::exp(0.6);
    for (Scheme sch : {Scheme::rk4, Scheme::trapezoidal}) {
        const double delta = sch == Scheme::rk4 ? 1e-3 : 1e-4;
        CharEvalContext ctx(sys, grid, VectorXd(), sch, delta);
        VectorXcd v(1);
        v << cxd(1.0, -0.5);
        const cxd mu(0.9, 0.1);
        const VectorXcd nv = ctx.n_action(mu, v);
        CHECK(std::abs(nv[0] - (phi - mu) * v[0]) <= 1e-7 * phi);
        // dN/dmu v = -v exactly: no negative mu powers exist here
        const VectorXcd dv = ctx.dn_dmu_action(mu, v);
        CHECK(dv[0] == -v[0]);
        const MatrixXd U = ctx.ode_monodromy();
        CHECK(std::abs(U(0, 0) - phi) <= 1e-7 * phi);
    }
}

TEST_CASE("delay-free monodromy matches the brute-force oracle") {
    auto sys = pure_ode("0.2+0.3*sin(pi*t)", 2.0);
    auto grid = floq::model::build_grid(sys);
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::rk4, 1e-4);
    const MatrixXd got = ctx.ode_monodromy();
    const MatrixXd want =
        floq::oracles::brute_force_monodromy(sys, grid, {}, 64, 8);
    REQUIRE(want.rows() == 1);
    CHECK(std::abs(got(0, 0) - want(0, 0)) <= 1e-8 * std::abs(want(0, 0)));
}

TEST_CASE("constant-coefficient delay system matches the matrix exponential") {
    auto [sys, a0, a1] = const_dde();
    auto grid = floq::model::build_grid(sys);
    REQUIRE(grid.N == 1);
    REQUIRE(grid.n_h == 1);
    for (Scheme sch : {Scheme::rk4, Scheme::trapezoidal}) {
        const double delta = sch == Scheme::rk4 ? 1e-3 : 2e-5;
        const double tol = 1e-8;
        CharEvalContext ctx(sys, grid, VectorXd(), sch, delta);
        for (cxd mu : {cxd(1.2, 0.4), cxd(-0.3, 0.8), cxd(0.05, -0.6)}) {
            Eigen::Matrix2cd gen = (a0.cast<cxd>() + a1.cast<cxd>() / mu) * sys.T;
            Eigen::Matrix2cd want = gen.exp();
            want(0, 0) -= mu;
            want(1, 1) -= mu;
            const MatrixXcd got = ctx.n_matrix(mu);
            CHECK((got - want).norm() <= tol * want.norm());
        }
    }
}

TEST_CASE("n_matrix columns reproduce n_action") {
    auto mat_vs_action = [](const floq::model::PeriodicDelaySystem& sys,
                            Scheme sch, double delta) {
        auto grid = floq::model::build_grid(sys);
        CharEvalContext ctx(sys, grid, VectorXd(), sch, delta);
        const cxd mu(0.7, 0.45);
        const VectorXcd v = random_cvec(ctx.nd(), 11);
        const VectorXcd via_mat = ctx.n_matrix(mu) * v;
        const VectorXcd direct = ctx.n_action(mu, v);
        CHECK(rel_err(via_mat, direct) <= 1e-12);
    };
    mat_vs_action(floq::model::make_scalar_lambert(0.5), Scheme::rk4, 1e-2);
    mat_vs_action(two_block(), Scheme::trapezoidal, 1e-2);
    mat_vs_action(two_block(), Scheme::rk4, 1e-2);
    mat_vs_action(floq::model::make_mathieu_pid(floq::model::Controller::PID, 4.0,
                                                2.0, 3.0 * M_PI / 4.0, 0.4, 0.6,
                                                0.2),
                  Scheme::trapezoidal, 5e-3);
}

TEST_CASE("actions are linear in the seed vector") {
    auto sys = two_block();
    auto grid = floq::model::build_grid(sys);
    for (Scheme sch : {Scheme::rk4, Scheme::trapezoidal}) {
        CharEvalContext ctx(sys, grid, VectorXd(), sch, 1e-2);
        const cxd mu(1.1, -0.3);
        const VectorXcd u = random_cvec(ctx.nd(), 21);
        const VectorXcd v = random_cvec(ctx.nd(), 22);
        const cxd al(0.3, -1.2), be(-0.8, 0.45);
        const VectorXcd lhs = ctx.n_action(mu, al * u + be * v);
        const VectorXcd rhs = al * ctx.n_action(mu, u) + be * ctx.n_action(mu, v);
        CHECK(rel_err(lhs, rhs) <= 1e-13);
        const VectorXcd ml = ctx.m_action(mu, al * u + be * v);
        const VectorXcd mr = al * ctx.m_action(mu, u) + be * ctx.m_action(mu, v);
        CHECK(rel_err(ml, mr) <= 1e-13);
    }
}

// the scalar test x' = x over one period: the propagated seed must hit e^1,
// and the error has to contract at the scheme's order under step halving
TEST_CASE("rk4 error contracts by ~16 per step halving") {
    auto sys = pure_ode("1", 1.0);
    auto grid = floq::model::build_grid(sys);
    VectorXcd v(1);
    v << cxd(1.0, 0.0);
    const cxd mu(0.5, 0.0);  // arbitrary: the B part cancels below
    std::vector<double> errs;
    for (double delta : {1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128}) {
        CharEvalContext ctx(sys, grid, VectorXd(), Scheme::rk4, delta);
        const VectorXcd phiv = ctx.n_action(mu, v) + ctx.apply_B(mu, v);
        errs.push_back(std::abs(phiv[0] - M_E));
    }
    for (size_t i = 0; i + 1 < errs.size(); ++i) {
        CAPTURE(i);
        CHECK(errs[i] < 1e-6);
        const double ratio = errs[i] / errs[i + 1];
        CHECK(ratio >= 12.0);
        CHECK(ratio <= 20.0);
    }
}

TEST_CASE("trapezoidal error contracts by ~4 per step halving") {
    auto sys = pure_ode("1", 1.0);
    auto grid = floq::model::build_grid(sys);
    VectorXcd v(1);
    v << cxd(1.0, 0.0);
    const cxd mu(0.5, 0.0);
    std::vector<double> errs;
    for (double delta : {1.0 / 1024, 1.0 / 2048, 1.0 / 4096}) {
        CharEvalContext ctx(sys, grid, VectorXd(), Scheme::trapezoidal, delta);
        const VectorXcd phiv = ctx.n_action(mu, v) + ctx.apply_B(mu, v);
        errs.push_back(std::abs(phiv[0] - M_E));
    }
    for (size_t i = 0; i + 1 < errs.size(); ++i) {
        CAPTURE(i);
        CHECK(errs[i] < 1e-6);
        const double ratio = errs[i] / errs[i + 1];
        CHECK(ratio >= 3.5);
        CHECK(ratio <= 4.5);
    }
}

TEST_CASE("trapezoidal M is the exact adjoint of N") {
    auto check_adjoint = [](const floq::model::PeriodicDelaySystem& sys,
                            std::optional<double> hint, double delta,
                            unsigned seed) {
        auto grid = floq::model::build_grid(sys, hint);
        CharEvalContext ctx(sys, grid, VectorXd(), Scheme::trapezoidal, delta);
        const VectorXcd u = random_cvec(ctx.nd(), seed);
        const VectorXcd v = random_cvec(ctx.nd(), seed + 1);
        for (cxd mu : {cxd(1.1, 0.0), cxd(0.6, 0.8), cxd(-0.4, 0.2)}) {
            const cxd lhs = ctx.n_action(std::conj(mu), u).dot(v);
            const cxd rhs = u.dot(ctx.m_action(mu, v));
            CAPTURE(mu.real());
            CAPTURE(mu.imag());
            CHECK(std::abs(lhs - rhs) <=
                  1e-12 * std::max({std::abs(lhs), std::abs(rhs), 1e-30}));
        }
    };
    check_adjoint(floq::model::make_scalar_lambert(0.6), std::nullopt, 1e-2, 31);
    check_adjoint(two_block(), std::nullopt, 1e-2, 33);
    check_adjoint(decoupled_pair(), 0.5, 1e-2, 35);
    check_adjoint(sparse_coupled(), std::nullopt, 1e-2, 37);
    check_adjoint(floq::model::make_mathieu_pid(floq::model::Controller::PID, 4.0,
                                                2.0, 3.0 * M_PI / 4.0, 0.4, 0.6,
                                                0.2),
                  std::nullopt, 1e-2, 39);
    check_adjoint(floq::model::make_milling(2, 0.25), 1.0 / 26.0, 0.05, 41);
}

TEST_CASE("rk4 M agrees with the adjoint identity to scheme order") {
    auto sys = two_block();
    auto grid = floq::model::build_grid(sys);
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::rk4, 1e-3);
    const VectorXcd u = random_cvec(ctx.nd(), 51);
    const VectorXcd v = random_cvec(ctx.nd(), 52);
    const cxd mu(0.7, 0.5);
    const cxd lhs = ctx.n_action(std::conj(mu), u).dot(v);
    const cxd rhs = u.dot(ctx.m_action(mu, v));
    CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max(std::abs(lhs), 1.0));
}

TEST_CASE("mu derivatives match central differences") {
    auto check_fd = [](const floq::model::PeriodicDelaySystem& sys,
                       std::optional<double> hint, Scheme sch, double delta,
                       unsigned seed) {
        auto grid = floq::model::build_grid(sys, hint);
        CharEvalContext ctx(sys, grid, VectorXd(), sch, delta);
        const VectorXcd v = random_cvec(ctx.nd(), seed);
        const cxd mu(0.9, 0.35);
        const double eps = 1e-5;
        // real and imaginary probe directions agree for a holomorphic family
        const VectorXcd fd_re =
            (ctx.n_action(mu + eps, v) - ctx.n_action(mu - eps, v)) / (2 * eps);
        const VectorXcd fd_im = (ctx.n_action(mu + cxd(0, eps), v) -
                                 ctx.n_action(mu - cxd(0, eps), v)) /
                                cxd(0, 2 * eps);
        const VectorXcd dn = ctx.dn_dmu_action(mu, v);
        CHECK(rel_err(fd_re, dn) <= 1e-7);
        CHECK(rel_err(fd_im, dn) <= 1e-7);

        const VectorXcd fm_re =
            (ctx.m_action(mu + eps, v) - ctx.m_action(mu - eps, v)) / (2 * eps);
        const VectorXcd dm = ctx.dm_dmu_action(mu, v);
        CHECK(rel_err(fm_re, dm) <= 1e-7);
    };
    check_fd(floq::model::make_scalar_lambert(0.6), std::nullopt, Scheme::rk4,
             2e-3, 61);
    check_fd(floq::model::make_scalar_lambert(0.6), std::nullopt,
             Scheme::trapezoidal, 2e-3, 62);
    check_fd(two_block(), std::nullopt, Scheme::trapezoidal, 5e-3, 63);
    check_fd(floq::model::make_milling(2, 0.3), 1.0 / 26.0, Scheme::trapezoidal,
             0.05, 64);
}

TEST_CASE("scalar root residual vanishes at mu = e") {
    auto sys = floq::model::make_scalar_lambert(M_E / M_PI);
    auto grid = floq::model::build_grid(sys);
    VectorXcd v(1);
    v << cxd(1.0, 0.0);
    CharEvalContext rk(sys, grid, VectorXd(), Scheme::rk4, 1e-3);
    CHECK(rk.n_action(cxd(M_E, 0.0), v).norm() <= 1e-9);
    CharEvalContext tr(sys, grid, VectorXd(), Scheme::trapezoidal, 1e-3);
    CHECK(tr.n_action(cxd(M_E, 0.0), v).norm() <= 1e-4);
}

TEST_CASE("param derivative ingredients") {
    const double K = 0.8;
    auto sys = floq::model::make_scalar_lambert(K);
    auto grid = floq::model::build_grid(sys);
    const cxd mu(1.2, 0.5);
    for (Scheme sch : {Scheme::rk4, Scheme::trapezoidal}) {
        CharEvalContext ctx(sys, grid, VectorXd(), sch, 2e-3);
        const VectorXcd v = random_cvec(ctx.nd(), 71);
        const auto ing = ctx.param_derivative_ingredients(mu, v, 0);

        // q_mu(1) is the dN/dmu action with the wrap derivative added back
        VectorXcd dn = ctx.dn_dmu_action(mu, v);
        dn.segment((ctx.big_n() - 1) * ctx.dim(), ctx.dim()) += v.head(ctx.dim());
        CHECK(rel_err(ing.qmu1, dn) <= 1e-14);

        // q(1) closes the loop with the N action
        const VectorXcd n = ctx.n_action(mu, v);
        CHECK(rel_err(ing.q1, n + ctx.apply_B(mu, v)) <= 1e-14);

        // q_K(1) against a central difference across parameter contexts
        const double eps = 1e-5;
        VectorXd kp(1), km(1);
        kp << K + eps;
        km << K - eps;
        CharEvalContext cp(sys, grid, kp, sch, 2e-3);
        CharEvalContext cm(sys, grid, km, sch, 2e-3);
        const VectorXcd fd =
            (cp.n_action(mu, v) - cm.n_action(mu, v)) / (2 * eps);
        CHECK(rel_err(ing.qk1, fd) <= 1e-7);

        CHECK_THROWS_AS(ctx.param_derivative_ingredients(mu, v, 1),
                        floq::charfun::MissingParamDerivative);
        CHECK_THROWS_AS(ctx.param_derivative_ingredients(mu, v, -1),
                        floq::charfun::MissingParamDerivative);
    }
}

TEST_CASE("independent parameter gives exactly zero sensitivity") {
    // coefficient never mentions the declared parameter
    floq::model::PeriodicDelaySystem sys;
    sys.d = 1;
    sys.T = 1.0;
    sys.delays = {0.0, 1.0};
    sys.param_names = {"K"};
    sys.param_defaults = VectorXd::Constant(1, 2.5);
    sys.coeffs = {
        floq::model::Coeff::from_entries(1, {Expr::parse("cos(2*pi*t)", {"K"})},
                                         1.0),
        floq::model::Coeff::from_entries(1, {Expr::parse("0.4", {"K"})}, 1.0)};
    auto grid = floq::model::build_grid(sys);
    for (Scheme sch : {Scheme::rk4, Scheme::trapezoidal}) {
        CharEvalContext ctx(sys, grid, VectorXd(), sch, 1e-2);
        const VectorXcd v = random_cvec(ctx.nd(), 81);
        const auto ing = ctx.param_derivative_ingredients(cxd(0.9, 0.2), v, 0);
        CHECK(ing.qk1.norm() == 0.0);
    }
}

TEST_CASE("a singular step matrix is reported") {
    auto sys = pure_ode("4", 1.0);
    auto grid = floq::model::build_grid(sys);
    // h = 1/2, so (1 - (h/2) * 4) = 0 exactly
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::trapezoidal, 0.5);
    VectorXcd v(1);
    v << cxd(1.0, 0.0);
    CHECK_THROWS_AS(ctx.n_action(cxd(1.0, 0.0), v), floq::charfun::SingularStep);
}

TEST_CASE("eigenfunction reconstruction") {
    auto sys = floq::model::make_scalar_lambert(M_E / M_PI);
    auto grid = floq::model::build_grid(sys);
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::rk4, 1e-3);
    VectorXcd v(1);
    v << cxd(1.0, 0.0);
    const cxd mu(M_E, 0.0);
    const auto ef = ctx.reconstruct_eigenfunction(mu, v);
    const int expected = grid.n_h * ctx.steps() + 1;
    REQUIRE(static_cast<int>(ef.t.size()) == expected);
    REQUIRE(ef.values.cols() == expected);
    CHECK(ef.t.front() == doctest::Approx(-2.0 * M_PI));
    CHECK(ef.t.back() == 0.0);
    for (size_t i = 0; i + 1 < ef.t.size(); ++i) CHECK(ef.t[i] < ef.t[i + 1]);
    // the seam sample is the seed head, exactly
    CHECK(ef.values(0, expected - 1) == v[0]);
    // a Floquet solution gains a factor mu per period, so phi(-T) = phi(0)/mu
    int at_mt = -1;
    for (size_t i = 0; i < ef.t.size(); ++i)
        if (std::abs(ef.t[i] + M_PI) < 1e-12) at_mt = static_cast<int>(i);
    REQUIRE(at_mt >= 0);
    CHECK(std::abs(ef.values(0, at_mt) * mu - ef.values(0, expected - 1)) <=
          1e-6);

    // delay-free systems reduce to the single seam sample
    auto ode = pure_ode("0.3", 2.0);
    auto ogrid = floq::model::build_grid(ode);
    CharEvalContext octx(ode, ogrid, VectorXd(), Scheme::rk4, 1e-2);
    VectorXcd w(1);
    w << cxd(0.5, 0.5);
    const auto oef = octx.reconstruct_eigenfunction(cxd(1.5, 0.0), w);
    REQUIRE(oef.t.size() == 1);
    CHECK(oef.t[0] == 0.0);
    CHECK(oef.values(0, 0) == w[0]);
}

TEST_CASE("concurrent actions on one context agree with serial") {
    auto sys = floq::model::make_mathieu_pid(floq::model::Controller::PID, 4.0,
                                             2.0, 3.0 * M_PI / 4.0, 0.3, 0.5,
                                             0.1);
    auto grid = floq::model::build_grid(sys);
    CharEvalContext ctx(sys, grid, VectorXd(), Scheme::trapezoidal, 1e-2);
    const cxd mu(0.8, 0.4);
    const VectorXcd v = random_cvec(ctx.nd(), 91);
    const VectorXcd serial = ctx.n_action(mu, v);
    std::vector<VectorXcd> out(8);
    floq::support::parallel_for(8, [&](std::size_t i) {
        out[i] = ctx.n_action(mu, v);
    });
    for (const auto& o : out) CHECK((o - serial).norm() == 0.0);
}
