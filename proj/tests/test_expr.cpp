#include <doctest.h>

#include <floq/expr.hpp>

#include <cmath>
#include <random>
#include <vector>

using floq::expr::Expr;
using floq::expr::NonDifferentiable;
using floq::expr::SyntaxError;
using floq::expr::UnknownIdentifier;

namespace {
const std::vector<std::string> kp = {"K", "zeta"};

double ev(const Expr& e, double t, double K, double zeta = 0.0) {
    const double p[2] = {K, zeta};
    return e.eval(t, p);
}
}  // namespace

TEST_CASE("arithmetic, precedence and unary minus") {
    CHECK(ev(Expr::parse("1+2*3", kp), 0, 0) == 7.0);
    CHECK(ev(Expr::parse("(1+2)*3", kp), 0, 0) == 9.0);
    CHECK(ev(Expr::parse("2^3^2", kp), 0, 0) == 512.0);  // right-assoc
    CHECK(ev(Expr::parse("-2^2", kp), 0, 0) == -4.0);    // '-' binds looser than '^'
    CHECK(ev(Expr::parse("2^-1", kp), 0, 0) == 0.5);
    CHECK(ev(Expr::parse("6/3/2", kp), 0, 0) == 1.0);    // left-assoc
    CHECK(ev(Expr::parse("1-2-3", kp), 0, 0) == -4.0);
    CHECK(ev(Expr::parse("--3", kp), 0, 0) == 3.0);
    CHECK(ev(Expr::parse("2*pi", kp), 0, 0) == doctest::Approx(2 * M_PI).epsilon(1e-16));
    CHECK(ev(Expr::parse("e", kp), 0, 0) == doctest::Approx(M_E).epsilon(1e-16));
    CHECK(ev(Expr::parse("t^2 + K*t", kp), 3.0, 2.0) == 15.0);
    CHECK(ev(Expr::parse("zeta", kp), 0, 0, -2.5) == -2.5);
}

TEST_CASE("functions") {
    CHECK(ev(Expr::parse("sin(pi/2)", kp), 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(ev(Expr::parse("cos(0)", kp), 0, 0) == 1.0);
    CHECK(ev(Expr::parse("exp(log(4))", kp), 0, 0) == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(ev(Expr::parse("sqrt(2)^2", kp), 0, 0) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(ev(Expr::parse("abs(-3)", kp), 0, 0) == 3.0);
    CHECK(ev(Expr::parse("tan(0.5)", kp), 0, 0) == doctest::Approx(std::tan(0.5)).epsilon(1e-16));
    // heaviside: 1 at and right of zero
    auto h = Expr::parse("heaviside(0.5-t)", kp);
    CHECK(ev(h, 0.0, 0) == 1.0);
    CHECK(ev(h, 0.5, 0) == 1.0);
    CHECK(ev(h, 0.50001, 0) == 0.0);
}

TEST_CASE("syntax errors carry offsets") {
    CHECK_THROWS_AS(Expr::parse("2**t", kp), SyntaxError);
    try {
        Expr::parse("2**t", kp);
    } catch (const SyntaxError& e) {
        CHECK(e.offset == 2);
    }
    CHECK_THROWS_AS(Expr::parse("", kp), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("(1+2", kp), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("1+", kp), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("sin 2", kp), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("1 2", kp), SyntaxError);

    CHECK_THROWS_AS(Expr::parse("Q+1", kp), UnknownIdentifier);
    try {
        Expr::parse("2*omega", kp);
    } catch (const UnknownIdentifier& e) {
        CHECK(e.name == "omega");
        CHECK(e.offset == 2);
    }

    // parameters may not reach a heaviside argument
    CHECK_THROWS_AS(Expr::parse("heaviside(K)", kp), SyntaxError);
    CHECK_THROWS_AS(Expr::parse("heaviside(t-K*2)", kp), SyntaxError);
    CHECK_NOTHROW(Expr::parse("K*heaviside(t-1)", kp));
}

TEST_CASE("print round-trips with identical values") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    const char* exprs[] = {
        "K*cos(2*t)",
        "sin(2*t)+K",
        "0.1*cos(2*t)*exp(sin(2*t))",
        "t^2-K/(1+zeta^2)",
        "1-2-3+t",
        "6/t/2",
        "2*t/3*5",
        "-t^2",
        "(t+1)*(t-1)",
        "heaviside(0.5-t)*(sin(2*pi*t)^2+0.5*sin(4*pi*t))",
        "2^-t",
        "-(t+K)^3",
        "abs(t-1)+sqrt(abs(K))",
    };
    for (const char* s : exprs) {
        CAPTURE(s);
        auto e1 = Expr::parse(s, kp);
        auto e2 = Expr::parse(e1.print(), kp);
        for (int i = 0; i < 50; ++i) {
            const double t = u(rng), K = u(rng), z = u(rng);
            const double a = ev(e1, t, K, z), b = ev(e2, t, K, z);
            if (std::isnan(a)) {
                CHECK(std::isnan(b));
            } else {
                CHECK(a == b);  // bit-identical, not approximately equal
            }
        }
    }
}

TEST_CASE("symbolic parameter derivative matches finite differences") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const char* exprs[] = {
        "K*cos(2*t)",
        "sin(2*t)+K",
        "K^3-2*K",
        "exp(K*t)",
        "log(K^2+1)",
        "sqrt(K^2+4)",
        "K/(zeta^2+0.5)",
        "t^K",
        "K^K",
        "abs(K)+K*zeta",
        "sin(K*cos(K))",
        "heaviside(t-0.5)*K^2",
    };
    for (const char* s : exprs) {
        CAPTURE(s);
        auto e = Expr::parse(s, kp);
        auto dK = e.diff_param(0);
        for (int i = 0; i < 100; ++i) {
            const double t = u(rng) + 1.1, z = u(rng);
            double K = u(rng);
            if (std::abs(K) < 0.1) K += 0.5;  // keep away from abs kink / log pole
            const double h = 1e-7 * std::max(1.0, std::abs(K));
            const double fd = (ev(e, t, K + h, z) - ev(e, t, K - h, z)) / (2 * h);
            const double sym = ev(dK, t, K, z);
            if (!std::isfinite(fd) || !std::isfinite(sym)) continue;
            CHECK(sym == doctest::Approx(fd).epsilon(1e-6).scale(std::max(1.0, std::abs(fd))));
        }
    }

    // zero derivative collapses to a literal
    CHECK(Expr::parse("sin(2*t)", kp).diff_param(0).is_literal_zero());
    CHECK(Expr::parse("K", kp).diff_param(1).is_literal_zero());
    CHECK(Expr::parse("K", kp).diff_param(0).is_literal());
    CHECK(Expr::parse("K", kp).diff_param(0).literal_value() == 1.0);
}

TEST_CASE("heaviside differentiation rules") {
    // param-free argument: acts as a constant factor
    auto e = Expr::parse("heaviside(t-1)*K", kp);
    auto d = e.diff_param(0);
    CHECK(ev(d, 2.0, 5.0) == 1.0);
    CHECK(ev(d, 0.0, 5.0) == 0.0);
    // derivative w.r.t. an unused parameter is zero even with heaviside present
    CHECK(e.diff_param(1).is_literal_zero());
}

TEST_CASE("dependency queries") {
    CHECK(Expr::parse("t", kp).depends_on_t());
    CHECK_FALSE(Expr::parse("K+1", kp).depends_on_t());
    CHECK(Expr::parse("K+1", kp).depends_on_param(0));
    CHECK_FALSE(Expr::parse("K+1", kp).depends_on_param(1));
    CHECK(Expr::parse("3*4", kp).is_literal());
    CHECK(Expr::parse("3*4", kp).literal_value() == 12.0);
    CHECK(Expr::parse("0", kp).is_literal_zero());
    CHECK(Expr::constant(2.5).literal_value() == 2.5);
    CHECK(Expr().is_literal_zero());
}
