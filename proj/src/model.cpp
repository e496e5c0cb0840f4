#include "floq/model.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "floq/support.hpp"

namespace floq::model {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Eigen::SparseMatrix<double> unit_entry(int d, int r, int c) {
    Eigen::SparseMatrix<double> m(d, d);
    m.insert(r, c) = 1.0;
    m.makeCompressed();
    return m;
}

Eigen::SparseMatrix<double> to_sparse(const Eigen::MatrixXd& m) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int c = 0; c < m.cols(); ++c)
        for (int r = 0; r < m.rows(); ++r)
            if (m(r, c) != 0.0) trip.emplace_back(r, c, m(r, c));
    Eigen::SparseMatrix<double> s(m.rows(), m.cols());
    s.setFromTriplets(trip.begin(), trip.end());
    return s;
}

}  // namespace

// -------------------------------------------------------------------- Coeff

Coeff Coeff::from_entries(int d, const std::vector<expr::Expr>& entries,
                          double period) {
    Coeff c;
    c.d_ = d;
    c.period_ = period;
    for (int r = 0; r < d; ++r)
        for (int col = 0; col < d; ++col) {
            const expr::Expr& e = entries[static_cast<std::size_t>(r * d + col)];
            if (e.is_literal_zero()) continue;
            c.terms_.push_back({e, unit_entry(d, r, col)});
        }
    return c;
}

Coeff Coeff::from_terms(int d, std::vector<CoeffTerm> terms, double period,
                        bool prefer_sparse) {
    Coeff c;
    c.d_ = d;
    c.period_ = period;
    c.prefer_sparse_ = prefer_sparse;
    for (auto& t : terms) {
        if (t.scale.is_literal_zero()) continue;
        t.mat.makeCompressed();
        c.terms_.push_back(std::move(t));
    }
    return c;
}

double Coeff::map_time(double t) const {
    return support::euclid_mod(tscale_ * t + tshift_, period_);
}

void Coeff::eval_dense(double t, std::span<const double> k,
                       Eigen::MatrixXd& out) const {
    out.setZero(d_, d_);
    const double targ = map_time(t);
    for (const auto& term : terms_) {
        const double g = term.scale.eval(targ, k);
        if (g == 0.0) continue;
        for (int outer = 0; outer < term.mat.outerSize(); ++outer)
            for (Eigen::SparseMatrix<double>::InnerIterator it(term.mat, outer); it;
                 ++it)
                out(it.row(), it.col()) += g * it.value();
    }
}

void Coeff::add_triplets(double t, std::span<const double> k, double scale,
                         int row0, int col0,
                         std::vector<Eigen::Triplet<double>>& out) const {
    const double targ = map_time(t);
    for (const auto& term : terms_) {
        const double g = scale * term.scale.eval(targ, k);
        if (g == 0.0) continue;
        for (int outer = 0; outer < term.mat.outerSize(); ++outer)
            for (Eigen::SparseMatrix<double>::InnerIterator it(term.mat, outer); it;
                 ++it)
                out.emplace_back(row0 + static_cast<int>(it.row()),
                                 col0 + static_cast<int>(it.col()), g * it.value());
    }
}

Coeff Coeff::param_derivative(int j) const {
    Coeff c;
    c.d_ = d_;
    c.period_ = period_;
    c.tscale_ = tscale_;
    c.tshift_ = tshift_;
    c.prefer_sparse_ = prefer_sparse_;
    for (const auto& term : terms_) {
        expr::Expr dg = term.scale.diff_param(j);
        if (dg.is_literal_zero()) continue;
        c.terms_.push_back({std::move(dg), term.mat});
    }
    return c;
}

Coeff Coeff::transposed_time_reflected(double tau) const {
    Coeff c;
    c.d_ = d_;
    c.period_ = period_;
    c.prefer_sparse_ = prefer_sparse_;
    // compose t -> tau - t with the existing transform
    c.tscale_ = -tscale_;
    c.tshift_ = tscale_ * tau + tshift_;
    for (const auto& term : terms_)
        c.terms_.push_back({term.scale, term.mat.transpose()});
    return c;
}

bool Coeff::depends_on_t() const {
    return std::any_of(terms_.begin(), terms_.end(),
                       [](const CoeffTerm& t) { return t.scale.depends_on_t(); });
}

bool Coeff::depends_on_param(int j) const {
    return std::any_of(terms_.begin(), terms_.end(), [j](const CoeffTerm& t) {
        return t.scale.depends_on_param(j);
    });
}

// ---------------------------------------------------------------- system ---

void PeriodicDelaySystem::validate() const {
    if (d < 1) throw ModelError("dimension must be positive");
    if (!(T > 0.0)) throw ModelError("period must be positive");
    if (delays.empty() || delays.front() != 0.0)
        throw ModelError("delay list must start with tau_0 = 0");
    for (std::size_t j = 1; j < delays.size(); ++j)
        if (!(delays[j] > delays[j - 1]))
            throw ModelError("delays must be strictly increasing");
    if (coeffs.size() != delays.size())
        throw ModelError("need one coefficient matrix per delay");
    for (const auto& c : coeffs)
        if (c.dim() != d) throw ModelError("coefficient dimension mismatch");
    if (param_defaults.size() != static_cast<Eigen::Index>(param_names.size()))
        throw ModelError("parameter names/defaults length mismatch");
    if (mass) {
        if (mass->rows() != d || mass->cols() != d)
            throw InvalidMass("mass matrix dimension mismatch");
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        Eigen::SparseMatrix<double> m = *mass;
        m.makeCompressed();
        lu.compute(m);
        if (lu.info() != Eigen::Success)
            throw InvalidMass("mass matrix is singular");
    }
}

Eigen::MatrixXd PeriodicDelaySystem::eval_coeff(int j, double t,
                                                std::span<const double> k) const {
    Eigen::MatrixXd out;
    coeffs[static_cast<std::size_t>(j)].eval_dense(t, k, out);
    return out;
}

// ------------------------------------------------------------------ grid ---

namespace {

// Best rational p/q ~ x with q <= qmax via continued fractions.
// Continued-fraction rationalization. A ratio counts as rational only when
// the expansion terminates structurally, i.e. the next partial quotient
// explodes, which is how a decimal approximation of p/q looks. Irrational
// ratios keep producing small quotients; sqrt(2) in particular has some
// convergent inside the snapping tolerance, but is still rejected because
// its expansion never terminates before the denominator bound.
bool rationalize(double x, long long qmax, long long& p, long long& q) {
    long long p0 = 1, q0 = 0, p1 = static_cast<long long>(std::floor(x)), q1 = 1;
    double frac = x - std::floor(x);
    bool terminated = false;
    for (int iter = 0; iter < 64; ++iter) {
        // frac < 1e-6 is the structural stop (next quotient would be > 1e6);
        // the ulp-level check catches convergents the fractional arithmetic
        // can no longer distinguish from x.
        if (frac < 1e-6 ||
            std::abs(x - static_cast<double>(p1) / static_cast<double>(q1)) <=
                4.0 * std::numeric_limits<double>::epsilon() *
                    std::max(std::abs(x), 1.0)) {
            terminated = true;
            break;
        }
        const double inv = 1.0 / frac;
        const long long a = static_cast<long long>(std::floor(inv));
        frac = inv - std::floor(inv);
        const long long p2 = a * p1 + p0, q2 = a * q1 + q0;
        if (q2 > qmax) break;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
    }
    p = p1;
    q = q1;
    return terminated &&
           std::abs(x - static_cast<double>(p) / static_cast<double>(q)) <=
               1e-9 * std::max(std::abs(x), 1.0);
}

}  // namespace

CommensurateGrid build_grid(const PeriodicDelaySystem& sys,
                            std::optional<double> delta_hint) {
    constexpr long long kQMax = 1000000;
    CommensurateGrid g;
    if (delta_hint) {
        const double dh = *delta_hint;
        if (!(dh > 0.0)) throw HintInvalid("delta hint must be positive");
        const double Nreal = sys.T / dh;
        const long long N = std::llround(Nreal);
        if (N < 1 || std::abs(Nreal - static_cast<double>(N)) > 1e-9 * std::max(Nreal, 1.0))
            throw HintInvalid("delta hint does not divide the period");
        g.N = static_cast<int>(N);
        g.delta = sys.T / static_cast<double>(N);  // snapped
        for (double tau : sys.delays) {
            const double nreal = tau / g.delta;
            const long long nj = std::llround(nreal);
            if (std::abs(nreal - static_cast<double>(nj)) >
                1e-9 * std::max(std::abs(nreal), 1.0))
                throw HintInvalid("delta hint does not divide delay " + fmt(tau));
            g.n.push_back(static_cast<int>(nj));
        }
    } else {
        long long N = 1;
        std::vector<long long> pj, qj;
        for (std::size_t j = 1; j < sys.delays.size(); ++j) {
            long long p = 0, q = 1;
            if (!rationalize(sys.delays[j] / sys.T, kQMax, p, q))
                throw NonCommensurate("delay " + fmt(sys.delays[j]) +
                                      " is not commensurate with the period");
            pj.push_back(p);
            qj.push_back(q);
            N = std::lcm(N, q);
            if (N > kQMax)
                throw NonCommensurate("commensurate grid needs more than 1e6 intervals");
        }
        g.N = static_cast<int>(N);
        g.delta = sys.T / static_cast<double>(N);
        g.n.push_back(0);
        for (std::size_t j = 0; j < pj.size(); ++j)
            g.n.push_back(static_cast<int>(pj[j] * (N / qj[j])));
    }
    for (std::size_t j = 1; j < g.n.size(); ++j)
        if (g.n[j] <= g.n[j - 1])
            throw HintInvalid("snapped delays are no longer strictly increasing");
    g.n_h = g.n.back();
    return g;
}

CommensurateGrid build_grid(const PeriodicDelaySystem& sys) {
    return build_grid(sys, sys.delta_hint);
}

// ------------------------------------------------------------------ dual ---

PeriodicDelaySystem dual_system(const PeriodicDelaySystem& sys) {
    PeriodicDelaySystem dual;
    dual.d = sys.d;
    dual.T = sys.T;
    dual.delays = sys.delays;
    dual.param_names = sys.param_names;
    dual.param_defaults = sys.param_defaults;
    dual.delta_hint = sys.delta_hint;
    dual.name = sys.name.empty() ? "dual" : sys.name + "_dual";
    for (std::size_t j = 0; j < sys.coeffs.size(); ++j)
        dual.coeffs.push_back(
            sys.coeffs[j].transposed_time_reflected(sys.delays[j]));
    if (sys.mass) {
        Eigen::SparseMatrix<double> mt = sys.mass->transpose();
        dual.mass = std::move(mt);
    }
    for (double p : sys.discontinuities)
        for (std::size_t j = 0; j < sys.delays.size(); ++j) {
            const double q = support::euclid_mod(sys.delays[j] - p, sys.T);
            bool seen = false;
            for (double existing : dual.discontinuities)
                if (std::abs(existing - q) < 1e-12 * std::max(1.0, sys.T)) seen = true;
            if (!seen) dual.discontinuities.push_back(q);
        }
    std::sort(dual.discontinuities.begin(), dual.discontinuities.end());
    return dual;
}

// -------------------------------------------------------------- builtins ---

PeriodicDelaySystem make_scalar_lambert(double K_default) {
    PeriodicDelaySystem sys;
    sys.name = "scalar_lambert";
    sys.d = 1;
    sys.T = M_PI;
    sys.delays = {0.0, M_PI, 2.0 * M_PI};
    sys.param_names = {"K"};
    sys.param_defaults = Eigen::VectorXd::Constant(1, K_default);
    const std::vector<std::string> pn = {"K"};
    auto entry = [&](const char* text) {
        return std::vector<expr::Expr>{expr::Expr::parse(text, pn)};
    };
    sys.coeffs.push_back(Coeff::from_entries(1, entry("K*cos(2*t)"), sys.T));
    sys.coeffs.push_back(Coeff::from_entries(1, entry("sin(2*t)+K"), sys.T));
    sys.coeffs.push_back(
        Coeff::from_entries(1, entry("0.1*cos(2*t)*exp(sin(2*t))"), sys.T));
    return sys;
}

PeriodicDelaySystem make_mathieu_pid(Controller ctl, double nu, double eps,
                                     double tau, double ki, double kp, double kd) {
    PeriodicDelaySystem sys;
    sys.name = "mathieu_pid";
    sys.T = M_PI;
    sys.delays = {0.0, tau};
    const std::string cospart = "-" + fmt(nu) + "-" + fmt(eps) + "*cos(2*t)";
    if (ctl == Controller::PD) {
        sys.d = 2;
        sys.param_names = {"k_p", "k_d"};
        sys.param_defaults = Eigen::Vector2d(kp, kd);
        const std::vector<std::string> pn = sys.param_names;
        auto E = [&](const std::string& s) { return expr::Expr::parse(s, pn); };
        sys.coeffs.push_back(Coeff::from_entries(
            2, {E("0"), E("1"), E(cospart), E("0")}, sys.T));
        sys.coeffs.push_back(Coeff::from_entries(
            2, {E("0"), E("0"), E("-k_p"), E("-k_d")}, sys.T));
        return sys;
    }
    sys.d = 3;
    if (ctl == Controller::PI) {
        sys.param_names = {"k_i", "k_p"};
        sys.param_defaults = Eigen::Vector2d(ki, kp);
    } else {
        sys.param_names = {"k_i", "k_p", "k_d"};
        sys.param_defaults = Eigen::Vector3d(ki, kp, kd);
    }
    const std::vector<std::string> pn = sys.param_names;
    auto E = [&](const std::string& s) { return expr::Expr::parse(s, pn); };
    sys.coeffs.push_back(Coeff::from_entries(
        3,
        {E("0"), E("1"), E("0"),  //
         E("0"), E("0"), E("1"),  //
         E("0"), E(cospart), E("0")},
        sys.T));
    const char* kd_entry = (ctl == Controller::PI) ? "0" : "-k_d";
    sys.coeffs.push_back(Coeff::from_entries(
        3,
        {E("0"), E("0"), E("0"),  //
         E("0"), E("0"), E("0"),  //
         E("-k_i"), E("-k_p"), E(kd_entry)},
        sys.T));
    return sys;
}

PeriodicDelaySystem make_milling(int n, double K_default) {
    if (n < 1) throw ModelError("milling needs at least one element");
    PeriodicDelaySystem sys;
    sys.name = "milling";
    const int d = 2 * (n + 1);
    sys.d = d;
    sys.T = 1.0;
    sys.delays = {0.0, 1.0};
    sys.param_names = {"K"};
    sys.param_defaults = Eigen::VectorXd::Constant(1, K_default);
    sys.discontinuities = {0.0, 0.5};
    sys.delta_hint = 1.0 / 26.0;

    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        P(i, i) = (i == n - 1 ? 2.0 : 4.0) / (6.0 * n);
        D(i, i) = (i == n - 1 ? 1.0 : 2.0) * n;
        if (i + 1 < n) {
            P(i, i + 1) = P(i + 1, i) = 1.0 / (6.0 * n);
            D(i, i + 1) = D(i + 1, i) = -1.0 * n;
        }
    }

    // mass E = blkdiag(I_n, 1, P, 1)
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(d, d);
    E.topLeftCorner(n, n).setIdentity();
    E(n, n) = 1.0;
    E.block(n + 1, n + 1, n, n) = P;
    E(d - 1, d - 1) = 1.0;
    sys.mass = to_sparse(E);

    // A(K) = A_const + K * A_lin
    Eigen::MatrixXd A0 = Eigen::MatrixXd::Zero(d, d);
    A0.block(0, n + 1, n, n).setIdentity();
    A0(n, d - 1) = 1.0;
    A0.block(n + 1, 0, n, n) = -D;
    A0.block(n + 1, n + 1, n, n) = -D;
    A0(d - 1, n) = -1.0;
    Eigen::MatrixXd Alin = Eigen::MatrixXd::Zero(d, d);
    Alin(d - 1, d - 1) = -2.0;

    // F couples the contact rows to the tool-edge displacement states
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(d, d);
    F(n + 1 + (n - 1), n - 1) = 1.0;  // e_n e_n^T block
    F(n + 1 + (n - 1), n) = 1.0;
    F(d - 1, n - 1) = 1.0;
    F(d - 1, n) = 1.0;

    const std::vector<std::string> pn = {"K"};
    auto E_of = [&](const char* s) { return expr::Expr::parse(s, pn); };
    const char* w_text = "heaviside(0.5-t)*(sin(2*pi*t)^2+0.5*sin(4*pi*t))";

    std::vector<CoeffTerm> a0_terms;
    a0_terms.push_back({E_of("1"), to_sparse(A0)});
    a0_terms.push_back({E_of("K"), to_sparse(Alin)});
    a0_terms.push_back({expr::Expr::parse(std::string("-(") + w_text + ")", pn),
                        to_sparse(F)});
    sys.coeffs.push_back(Coeff::from_terms(d, std::move(a0_terms), sys.T, true));

    std::vector<CoeffTerm> a1_terms;
    a1_terms.push_back({E_of(w_text), to_sparse(F)});
    sys.coeffs.push_back(Coeff::from_terms(d, std::move(a1_terms), sys.T, true));
    return sys;
}

}  // namespace floq::model
