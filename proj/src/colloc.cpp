#include "floq/colloc.hpp"

#include <Eigen/LU>

#include <cmath>
#include <vector>

#include "floq/support.hpp"

namespace floq::colloc {

namespace {

using Eigen::MatrixXd;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using Trip = Eigen::Triplet<double>;

// U_{i-1}(alpha) at a mesh point, stable at the closed endpoints.
double second_kind(int im1, double alpha) {
    if (alpha >= 1.0) return static_cast<double>(im1 + 1);
    if (alpha <= -1.0) {
        double s = (im1 % 2 == 0) ? 1.0 : -1.0;
        return s * (im1 + 1);
    }
    double theta = std::acos(alpha);
    return std::sin((im1 + 1) * theta) / std::sin(theta);
}

// P_n and P_n' by the three-term recurrence; only called with |x| < 1.
void legendre_pd(int n, double x, double& p, double& dp) {
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    p = (n == 0) ? 1.0 : p1;
    dp = (n == 0) ? 0.0 : n * (x * p1 - p0) / (x * x - 1.0);
}

}  // namespace

ChebBasis ChebBasis::build(int M) {
    if (M < 2) throw std::invalid_argument("ChebBasis: M must be >= 2");
    ChebBasis b;
    b.M = M;
    b.alpha.resize(M);
    b.xi.resize(M);
    b.val.resize(M, M + 1);
    b.dval.resize(M, M + 1);
    b.left.resize(M + 1);
    b.right.resize(M + 1);
    for (int m = 0; m < M; ++m) {
        // Lobatto mesh of degree M-1: endpoints plus the roots of P'_{M-1},
        // refined by Newton from the corresponding cosine guess.
        double a;
        if (m == 0) {
            a = -1.0;
        } else if (m == M - 1) {
            a = 1.0;
        } else {
            a = -std::cos(m * M_PI / (M - 1));
            for (int it = 0; it < 100; ++it) {
                double p, dp;
                legendre_pd(M - 1, a, p, dp);
                double n1 = static_cast<double>(M - 1) * M;  // n(n+1)
                double ddp = (2.0 * a * dp - n1 * p) / (1.0 - a * a);
                double step = dp / ddp;
                a -= step;
                if (std::abs(step) <= 1e-15) break;
            }
        }
        b.alpha(m) = a;
        b.xi(m) = 0.5 * (a + 1.0);
        double theta = std::acos(std::clamp(a, -1.0, 1.0));
        for (int i = 0; i <= M; ++i) {
            b.val(m, i) = std::cos(i * theta);
            b.dval(m, i) = 2.0 * i * (i == 0 ? 0.0 : second_kind(i - 1, a));
        }
    }
    for (int i = 0; i <= M; ++i) {
        b.left(i) = (i % 2 == 0) ? 1.0 : -1.0;
        b.right(i) = 1.0;
    }
    return b;
}

VectorXd ChebBasis::eval(double s) const {
    double x = std::clamp(2.0 * s - 1.0, -1.0, 1.0);
    double theta = std::acos(x);
    VectorXd p(M + 1);
    for (int i = 0; i <= M; ++i) p(i) = std::cos(i * theta);
    return p;
}

CollocationSystem assemble(const model::PeriodicDelaySystem& sys,
                           const model::CommensurateGrid& grid, int M,
                           std::span<const double> params) {
    sys.validate();
    if (grid.n_h < 1)
        throw model::ModelError("assemble: system has no delay content (n_h = 0)");
    std::vector<double> defaults;
    if (params.empty() && sys.num_params() > 0) {
        defaults.assign(sys.param_defaults.data(),
                        sys.param_defaults.data() + sys.param_defaults.size());
        params = defaults;
    }

    CollocationSystem cs;
    cs.d = sys.d;
    cs.N = grid.N;
    cs.n_h = grid.n_h;
    cs.M = M;
    cs.delta = grid.delta;
    cs.basis = ChebBasis::build(M);
    cs.n_delays = grid.n;
    cs.sys = sys;
    cs.params = Eigen::Map<const Eigen::VectorXd>(params.data(),
                                                  static_cast<long>(params.size()));

    const int d = cs.d;
    const int blk = cs.blk();
    const int rows = cs.N * blk;
    const int cols = (cs.n_h + cs.N) * blk;
    auto coloff = [&](int n) { return (n + cs.n_h - 1) * blk; };

    // Mass entries once; identity when absent.
    std::vector<Trip> mass_ent;
    if (sys.mass) {
        for (int k = 0; k < sys.mass->outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(*sys.mass, k); it; ++it)
                if (it.value() != 0.0)
                    mass_ent.emplace_back(it.row(), it.col(), it.value());
    } else {
        for (int r = 0; r < d; ++r) mass_ent.emplace_back(r, r, 1.0);
    }

    std::vector<Trip> trip;
    trip.reserve(static_cast<std::size_t>(cs.N) *
                 (2 * blk + M * (M + 1) * (mass_ent.size() + std::size_t(d))));
    MatrixXd Aj(d, d);
    for (int n = 1; n <= cs.N; ++n) {
        const int r0 = (n - 1) * blk;
        // Continuity q_n(0) - q_{n-1}(1) = 0.
        for (int i = 0; i <= M; ++i) {
            for (int c = 0; c < d; ++c) {
                trip.emplace_back(r0 + c, coloff(n) + i * d + c, cs.basis.left(i));
                trip.emplace_back(r0 + c, coloff(n - 1) + i * d + c, -1.0);
            }
        }
        for (int m = 0; m < M; ++m) {
            const int r = r0 + d + m * d;
            for (int i = 1; i <= M; ++i) {
                double w = cs.basis.dval(m, i);
                for (const auto& e : mass_ent)
                    trip.emplace_back(r + e.row(), coloff(n) + i * d + e.col(),
                                      e.value() * w);
            }
            const double tm = (cs.basis.xi(m) + n - 1) * cs.delta;
            for (int j = 0; j <= sys.h(); ++j) {
                const int off = coloff(n - grid.n[j]);
                sys.coeffs[j].eval_dense(tm, params, Aj);
                for (int i = 0; i <= M; ++i) {
                    const double f = -cs.delta * cs.basis.val(m, i);
                    for (int cc = 0; cc < d; ++cc)
                        for (int rr = 0; rr < d; ++rr)
                            if (Aj(rr, cc) != 0.0)
                                trip.emplace_back(r + rr, off + i * d + cc,
                                                  f * Aj(rr, cc));
                }
            }
        }
    }

    cs.S.resize(rows, cols);
    cs.S.setFromTriplets(trip.begin(), trip.end());
    cs.S_phi = cs.S.leftCols(cs.phi_dim());
    cs.S_q = cs.S.rightCols(cs.q_dim());
    return cs;
}

MatrixXd monodromy_matrix(const CollocationSystem& cs) {
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(cs.S_q);
    if (lu.info() != Eigen::Success)
        throw SingularDiscretization("monodromy_matrix: S_q factorization failed");
    const int phi = cs.phi_dim();
    const int qd = cs.q_dim();
    MatrixXd Cq(qd, phi);
    // Column images of -S_q^{-1} S_phi; chunks are independent solves.
    const int chunk = 64;
    const std::size_t nchunks = static_cast<std::size_t>((phi + chunk - 1) / chunk);
    support::parallel_for(nchunks, [&](std::size_t c) {
        int c0 = static_cast<int>(c) * chunk;
        int w = std::min(chunk, phi - c0);
        MatrixXd rhs = MatrixXd(cs.S_phi.middleCols(c0, w));
        Cq.middleCols(c0, w) = -lu.solve(rhs);
    });
    MatrixXd U(phi, phi);
    for (int r = 0; r < phi; ++r) {
        int g = qd + r;  // row of the stacked vector (c_phi; c_q), tail slice
        if (g < phi) {
            U.row(r).setZero();
            U(r, g) = 1.0;
        } else {
            U.row(r) = Cq.row(g - phi);
        }
    }
    return U;
}

MatrixXd pencil_std(const CollocationSystem& cs) {
    const int phi = cs.phi_dim();
    const int total = phi + cs.q_dim();
    MatrixXd P = MatrixXd::Zero(total, total);
    P.topRows(cs.q_dim()) = MatrixXd(cs.S);
    P.bottomLeftCorner(phi, phi).setIdentity();  // B_sel
    Eigen::FullPivLU<MatrixXd> lu(P);
    if (!lu.isInvertible())
        throw SingularDiscretization("pencil_std: stacked matrix is singular");
    MatrixXd Q = MatrixXd::Zero(total, total);
    Q.bottomRightCorner(phi, phi).setIdentity();  // E_sel
    return lu.solve(Q);
}

Eigen::SparseMatrix<cxd> build_R_of_mu(const CollocationSystem& cs, cxd mu) {
    if (mu == 0.0) throw MuZero("build_R_of_mu: mu = 0");
    const int blk = cs.blk();
    Eigen::SparseMatrix<cxd> R(cs.phi_dim(), cs.q_dim());
    std::vector<Eigen::Triplet<cxd>> trip;
    trip.reserve(cs.phi_dim());
    for (int n = -cs.n_h + 1; n <= 0; ++n) {
        long long a = support::floor_div(n - 1, cs.N);
        int b = static_cast<int>(support::euclid_mod_int(n - 1, cs.N)) + 1;
        cxd w = std::pow(mu, static_cast<double>(a));
        int r0 = (n + cs.n_h - 1) * blk;
        int c0 = (b - 1) * blk;
        for (int k = 0; k < blk; ++k) trip.emplace_back(r0 + k, c0 + k, w);
    }
    R.setFromTriplets(trip.begin(), trip.end());
    return R;
}

VectorXcd extract_nlevp_seed(const CollocationSystem& cs, const VectorXcd& c_q) {
    const int blk = cs.blk();
    VectorXcd v = VectorXcd::Zero(cs.N * cs.d);
    for (int n = 0; n < cs.N; ++n)
        for (int i = 0; i <= cs.M; ++i)
            v.segment(n * cs.d, cs.d) +=
                cs.basis.left(i) * c_q.segment(n * blk + i * cs.d, cs.d);
    double nv = v.norm();
    if (nv <= 1e-13 * std::max(1.0, c_q.norm()))
        throw ZeroVector("extract_nlevp_seed: endpoint trace vanishes");
    return v / nv;
}

VectorXcd reconstruct_c_q_from_c_phi(const CollocationSystem& cs,
                                     const VectorXcd& c_phi) {
    StageOperator op(cs);
    return op.reconstruct(c_phi);
}

VectorXcd spline_eval(const CollocationSystem& cs, const VectorXcd& c_phi,
                      double t) {
    const int blk = cs.blk();
    double s_all = t / cs.delta;  // in [-n_h, 0]
    int n = static_cast<int>(std::floor(s_all)) + 1;
    n = std::min(0, std::max(-cs.n_h + 1, n));
    double s = s_all - (n - 1);
    VectorXd p = cs.basis.eval(std::clamp(s, 0.0, 1.0));
    VectorXcd out = VectorXcd::Zero(cs.d);
    int off = (n + cs.n_h - 1) * blk;
    for (int i = 0; i <= cs.M; ++i)
        out += p(i) * c_phi.segment(off + i * cs.d, cs.d);
    return out;
}

StageOperator::StageOperator(const CollocationSystem& cs)
    : blk_(cs.blk()), phi_(cs.phi_dim()), qdim_(cs.q_dim()),
      S_phi_(cs.S_phi), S_q_(cs.S_q) {
    lu_.compute(S_q_);
    if (lu_.info() != Eigen::Success)
        throw SingularSq("StageOperator: S_q factorization failed");
}

VectorXd StageOperator::tail(const VectorXd& c_phi, const VectorXd& c_q) const {
    VectorXd out(phi_);
    for (int r = 0; r < phi_; ++r) {
        int g = qdim_ + r;
        out(r) = (g < phi_) ? c_phi(g) : c_q(g - phi_);
    }
    return out;
}

VectorXd StageOperator::apply(const VectorXd& c_phi) const {
    VectorXd c_q = -lu_.solve(VectorXd(S_phi_ * c_phi));
    return tail(c_phi, c_q);
}

VectorXcd StageOperator::apply(const VectorXcd& c_phi) const {
    VectorXd re = apply(VectorXd(c_phi.real()));
    VectorXd im = apply(VectorXd(c_phi.imag()));
    return re + cxd(0.0, 1.0) * im;
}

VectorXcd StageOperator::reconstruct(const VectorXcd& c_phi) const {
    VectorXd rr = -lu_.solve(VectorXd(S_phi_ * c_phi.real()));
    VectorXd ri = -lu_.solve(VectorXd(S_phi_ * c_phi.imag()));
    return rr + cxd(0.0, 1.0) * ri;
}

}  // namespace floq::colloc
