#include "floq/solve.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>

#include "floq/support.hpp"

namespace floq::solve {

namespace {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
}

void sort_by_modulus(std::vector<SeedPair>& seeds) {
    std::stable_sort(seeds.begin(), seeds.end(),
                     [](const SeedPair& a, const SeedPair& b) {
                         return std::abs(a.mu) > std::abs(b.mu);
                     });
}

// ---------------------------------------------------------------- Ritz data

struct RitzSet {
    std::vector<cxd> theta;         // sorted by descending modulus
    std::vector<VectorXcd> y;       // unit Krylov-coordinate vectors
    std::vector<double> res;        // |h_{m+1,m}| |last component of y|
};

RitzSet ritz_pairs(const MatrixXd& H, int m, double h_next) {
    Eigen::EigenSolver<MatrixXd> eig(H.topLeftCorner(m, m));
    std::vector<int> order(m);
    for (int i = 0; i < m; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(eig.eigenvalues()(a)) > std::abs(eig.eigenvalues()(b));
    });
    RitzSet rs;
    rs.theta.reserve(m);
    for (int k : order) {
        VectorXcd yk = eig.eigenvectors().col(k);
        rs.theta.push_back(eig.eigenvalues()(k));
        rs.res.push_back(h_next * std::abs(yk(m - 1)));
        rs.y.push_back(std::move(yk));
    }
    return rs;
}

// Seed for the nonlinear eigenproblem from a history spline: integrate the
// system over one period by the trapezoidal method of steps (substeps align
// with the delay grid, so delayed values are table lookups) and sample the
// solution at the block boundaries (n-1)*delta.
VectorXcd seed_from_history(const colloc::CollocationSystem& cs,
                            const VectorXcd& c_phi) {
    const int d = cs.d, N = cs.N, n_h = cs.n_h;
    const double delta = cs.delta;
    const int sub = std::clamp(static_cast<int>(std::ceil(delta / 0.01)), 8, 64);
    const double h = delta / sub;
    const int hist = n_h * sub;
    const int total = (n_h + N) * sub;
    std::span<const double> params(cs.params.data(),
                                   static_cast<std::size_t>(cs.params.size()));

    MatrixXcd X(d, total + 1);
    for (int g = 0; g <= hist; ++g)
        X.col(g) = colloc::spline_eval(cs, c_phi, (g - hist) * h);

    MatrixXd E = cs.sys.mass ? MatrixXd(*cs.sys.mass)
                             : MatrixXd::Identity(d, d);
    // factor once when the undelayed coefficient does not depend on t
    const MatrixXd A0a = cs.sys.eval_coeff(0, 0.1234567 * delta, params);
    const MatrixXd A0b = cs.sys.eval_coeff(0, 0.7654321 * delta, params);
    const bool a0_const = A0a == A0b;
    Eigen::PartialPivLU<MatrixXd> lu;
    if (a0_const) lu.compute(E - 0.5 * h * A0a);

    const int nj = static_cast<int>(cs.n_delays.size());
    auto rhs_known = [&](int g, bool with_a0) {
        const double t = (g - hist) * h;
        VectorXcd f = VectorXcd::Zero(d);
        for (int j = with_a0 ? 0 : 1; j < nj; ++j)
            f += cs.sys.eval_coeff(j, t, params) * X.col(g - cs.n_delays[j] * sub);
        return f;
    };
    auto lu_solve = [&](const Eigen::PartialPivLU<MatrixXd>& f, VectorXcd& x) {
        VectorXd re = f.solve(VectorXd(x.real()));
        VectorXd im = f.solve(VectorXd(x.imag()));
        x.real() = re;
        x.imag() = im;
    };

    for (int g = hist; g < total; ++g) {
        VectorXcd b = E * X.col(g) + 0.5 * h * (rhs_known(g, true) + rhs_known(g + 1, false));
        if (a0_const) {
            lu_solve(lu, b);
        } else {
            const double t1 = (g + 1 - hist) * h;
            Eigen::PartialPivLU<MatrixXd> step(
                E - 0.5 * h * cs.sys.eval_coeff(0, t1, params));
            lu_solve(step, b);
        }
        X.col(g + 1) = b;
    }

    VectorXcd v(N * d);
    for (int n = 1; n <= N; ++n) v.segment((n - 1) * d, d) = X.col(hist + (n - 1) * sub);
    const double nrm = v.norm();
    if (nrm <= 1e-13)
        throw colloc::ZeroVector("seed_from_history: block boundary trace is null");
    return v / nrm;
}

// ------------------------------------------------------ bordered correction

// F(v, mu) = (action(mu) v, w*v - 1) stacked as x = (v, mu) in C^{m+1}.
struct BorderedProblem {
    int m = 0;
    std::function<VectorXcd(cxd, const VectorXcd&)> action;
    std::function<VectorXcd(cxd, const VectorXcd&)> daction;
    std::function<MatrixXcd(cxd)> matrix;  // dense block, only for Jacobians
};

bool eval_bordered(const BorderedProblem& pb, const VectorXcd& w,
                   const VectorXcd& x, VectorXcd& F) {
    const cxd mu = x(pb.m);
    if (mu == 0.0) return false;
    try {
        F.head(pb.m) = pb.action(mu, x.head(pb.m));
    } catch (const charfun::MuZero&) {
        return false;
    }
    F(pb.m) = w.dot(x.head(pb.m)) - 1.0;
    return F.allFinite();
}

FloquetPair finish_pair(const VectorXcd& x, const VectorXcd& F, bool converged,
                        int iters, int m) {
    VectorXcd v = x.head(m);
    const double vn = v.norm();
    if (vn <= 1e-300) throw Diverged("corrector: eigenvector collapsed to zero");
    FloquetPair p;
    p.mu = x(m);
    p.v = v / vn;
    p.residual_right = F.head(m).norm() / vn;
    p.stage = Stage::corrected;
    p.converged = converged;
    p.iterations = iters;
    return p;
}

MatrixXcd bordered_jacobian(const BorderedProblem& pb, const VectorXcd& w,
                            cxd mu, const VectorXcd& v) {
    const int n = pb.m + 1;
    MatrixXcd J(n, n);
    J.topLeftCorner(pb.m, pb.m) = pb.matrix(mu);
    J.topRightCorner(pb.m, 1) = pb.daction(mu, v);
    J.bottomLeftCorner(1, pb.m) = w.adjoint();
    J(pb.m, pb.m) = 0.0;
    return J;
}

// Damped step: try gamma = 1, 1/2, ..., 1/16, accept the first improvement
// or the best candidate seen. Returns false when no candidate is evaluable.
bool damped_step(const BorderedProblem& pb, const VectorXcd& w,
                 const VectorXcd& y, VectorXcd& x, VectorXcd& F, double& fn,
                 double& gamma_used) {
    const int n = static_cast<int>(x.size());
    VectorXcd xt(n), Ft(n), xb(n), Fb(n);
    double fb = std::numeric_limits<double>::infinity(), gb = 0.0;
    double gamma = 1.0;
    for (int half = 0; half <= 4; ++half, gamma *= 0.5) {
        xt = x + gamma * y;
        if (eval_bordered(pb, w, xt, Ft)) {
            const double ft = Ft.norm();
            if (ft < fn) {
                x = xt;
                F = Ft;
                fn = ft;
                gamma_used = gamma;
                return true;
            }
            if (ft < fb) {
                fb = ft;
                xb = xt;
                Fb = Ft;
                gb = gamma;
            }
        }
    }
    if (!std::isfinite(fb)) return false;
    x = xb;
    F = Fb;
    fn = fb;
    gamma_used = gb;
    return true;
}

FloquetPair broyden_core(const BorderedProblem& pb, cxd mu0,
                         const VectorXcd& v0, const CorrectorOpts& opts) {
    const int m = pb.m, n = m + 1;
    const double tol = opts.tol > 0 ? opts.tol : 1e-12 * m;
    const VectorXcd w = v0 / v0.squaredNorm();

    VectorXcd x(n);
    x << v0, mu0;
    VectorXcd F(n);
    if (!eval_bordered(pb, w, x, F))
        throw Diverged("corrector: start point is not evaluable");
    double fn = F.norm();
    auto tol_at = [&](const VectorXcd& xx) {
        return tol * std::min(1.0, xx.head(m).norm());
    };
    if (fn <= tol_at(x)) return finish_pair(x, F, true, 0, m);

    MatrixXcd H;
    if (opts.init_jacobian && pb.matrix) {
        Eigen::FullPivLU<MatrixXcd> lu(bordered_jacobian(pb, w, mu0, v0));
        if (lu.isInvertible())
            H = lu.inverse();
        else
            H = MatrixXcd::Identity(n, n);
    } else {
        H = MatrixXcd::Identity(n, n);
    }

    double best = fn;
    VectorXcd xbest = x, Fbest = F;
    int stall = 0;
    for (int it = 1; it <= opts.max_iter; ++it) {
        const VectorXcd y = -(H * F);
        double gamma = 1.0;
        if (!damped_step(pb, w, y, x, F, fn, gamma))
            throw Diverged("corrector: iterate left the evaluable domain");
        if (fn < best) {
            best = fn;
            xbest = x;
            Fbest = F;
            stall = 0;
        } else if (++stall >= 10) {
            throw Stagnated("corrector: 10 steps without residual improvement");
        }
        if (fn <= tol_at(x)) return finish_pair(x, F, true, it, m);
        if (fn > 10.0 * best)
            throw Diverged("corrector: residual grew tenfold over the best iterate");

        const VectorXcd HFp = H * F;
        const VectorXcd num = HFp + (1.0 - gamma) * y;
        const cxd den = y.dot(HFp + y);
        if (std::abs(den) > 1e-14 * y.norm() * (HFp + y).norm())
            H -= (num * (y.adjoint() * H)) / den;
    }
    return finish_pair(xbest, Fbest, false, opts.max_iter, m);
}

BorderedProblem forward_problem(const charfun::CharEvalContext& ctx) {
    BorderedProblem pb;
    pb.m = ctx.nd();
    pb.action = [&ctx](cxd mu, const VectorXcd& v) { return ctx.n_action(mu, v); };
    pb.daction = [&ctx](cxd mu, const VectorXcd& v) {
        return ctx.dn_dmu_action(mu, v);
    };
    pb.matrix = [&ctx](cxd mu) { return ctx.n_matrix(mu); };
    return pb;
}

BorderedProblem adjoint_problem(const charfun::CharEvalContext& ctx) {
    BorderedProblem pb;
    pb.m = ctx.nd();
    pb.action = [&ctx](cxd nu, const VectorXcd& u) { return ctx.m_action(nu, u); };
    pb.daction = [&ctx](cxd nu, const VectorXcd& u) {
        return ctx.dm_dmu_action(nu, u);
    };
    pb.matrix = [&ctx](cxd nu) {
        return MatrixXcd(ctx.n_matrix(std::conj(nu)).adjoint());
    };
    return pb;
}

void check_start(cxd mu0, const VectorXcd& v0) {
    if (mu0 == 0.0) throw std::invalid_argument("corrector: mu0 must be nonzero");
    if (v0.norm() == 0.0)
        throw std::invalid_argument("corrector: v0 must be nonzero");
}

}  // namespace

// ----------------------------------------------------------------- stage 1

std::vector<SeedPair> direct_stage(const colloc::CollocationSystem& cs,
                                   double floor) {
    if (cs.phi_dim() > 4000)
        throw TooLargeForDirect("direct_stage: history dimension " +
                                std::to_string(cs.phi_dim()) + " exceeds 4000");
    const MatrixXd U = colloc::monodromy_matrix(cs);
    Eigen::EigenSolver<MatrixXd> eig(U);
    if (eig.info() != Eigen::Success)
        throw NoConvergence("direct_stage: dense eigensolver did not converge");
    colloc::StageOperator op(cs);

    std::vector<SeedPair> out;
    for (int k = 0; k < U.rows(); ++k) {
        const cxd mu = eig.eigenvalues()(k);
        if (std::abs(mu) <= floor) continue;
        const VectorXcd c_q = op.reconstruct(eig.eigenvectors().col(k));
        try {
            out.push_back({mu, colloc::extract_nlevp_seed(cs, c_q), 0.0});
        } catch (const colloc::ZeroVector&) {
            // spline mode with a null endpoint trace: discretization artifact
        }
    }
    sort_by_modulus(out);
    return out;
}

std::vector<SeedPair> arnoldi_stage(const colloc::CollocationSystem& cs,
                                    int krylov_dim, int num_wanted,
                                    double ritz_tol, int* iterations) {
    if (num_wanted < 1) throw std::invalid_argument("arnoldi_stage: num_wanted < 1");
    if (krylov_dim < num_wanted)
        throw std::invalid_argument("arnoldi_stage: krylov_dim < num_wanted");
    colloc::StageOperator op(cs);
    const int dim = op.dim();
    const int mmax = std::min(krylov_dim, dim);

    std::mt19937 rng(20240817u);
    std::normal_distribution<double> gauss;
    VectorXd start(dim);
    for (int i = 0; i < dim; ++i) start(i) = gauss(rng);

    MatrixXd V(dim, mmax + 1), H;
    int applies = 0, m_final = 0;
    RitzSet rs;
    bool settled = false;

    for (int sweep = 0; sweep <= 2 && !settled; ++sweep) {
        H = MatrixXd::Zero(mmax + 1, mmax);
        V.col(0) = start.normalized();
        for (int m = 1; m <= mmax; ++m) {
            VectorXd wv = op.apply(VectorXd(V.col(m - 1)));
            ++applies;
            for (int pass = 0; pass < 2; ++pass)  // MGS with reorthogonalization
                for (int i = 0; i < m; ++i) {
                    const double hij = V.col(i).dot(wv);
                    H(i, m - 1) += hij;
                    wv -= hij * V.col(i);
                }
            const double hm = wv.norm();
            H(m, m - 1) = hm;
            const bool breakdown = hm <= 1e-13 * std::max(1.0, H.norm());
            if (!breakdown) V.col(m) = wv / hm;

            rs = ritz_pairs(H, m, hm);
            const int take = std::min(num_wanted, m);
            bool ok = true;
            for (int k = 0; k < take; ++k) ok = ok && rs.res[k] <= ritz_tol;
            m_final = m;
            if (ok || breakdown) {
                settled = true;
                break;
            }
        }
        if (!settled) {
            const int take = std::min(num_wanted, m_final);
            bool ok = true;
            for (int k = 0; k < take; ++k) ok = ok && rs.res[k] <= 1e-6;
            if (ok) {
                settled = true;
            } else {
                // restart from the dominant Ritz directions
                VectorXd next = VectorXd::Zero(dim);
                for (int k = 0; k < take; ++k) {
                    const VectorXcd dir = V.leftCols(m_final) * rs.y[k];
                    next += dir.real() + dir.imag();
                }
                start = next.norm() > 1e-300 ? next : VectorXd::Random(dim);
            }
        }
    }
    if (iterations) *iterations = applies;
    if (!settled)
        throw NoConvergence(
            "arnoldi_stage: Ritz residuals stagnate above 1e-6 after restarts");

    std::vector<SeedPair> out;
    for (int k = 0; k < m_final && static_cast<int>(out.size()) < num_wanted; ++k) {
        if (rs.res[k] > 1e-6) continue;
        VectorXcd c_phi = V.leftCols(m_final) * rs.y[k];
        c_phi /= c_phi.norm();
        try {
            out.push_back({rs.theta[k], seed_from_history(cs, c_phi), rs.res[k]});
        } catch (const colloc::ZeroVector&) {
        }
    }
    sort_by_modulus(out);
    return out;
}

// ----------------------------------------------------------------- stage 2

FloquetPair broyden_correct(const charfun::CharEvalContext& ctx, cxd mu0,
                            const Eigen::VectorXcd& v0,
                            const CorrectorOpts& opts) {
    check_start(mu0, v0);
    return broyden_core(forward_problem(ctx), mu0, v0, opts);
}

FloquetPair newton_correct(const charfun::CharEvalContext& ctx, cxd mu0,
                           const Eigen::VectorXcd& v0,
                           const CorrectorOpts& opts) {
    check_start(mu0, v0);
    const BorderedProblem pb = forward_problem(ctx);
    const int m = pb.m, n = m + 1;
    const double tol = opts.tol > 0 ? opts.tol : 1e-12 * m;
    const VectorXcd w = v0 / v0.squaredNorm();

    VectorXcd x(n);
    x << v0, mu0;
    VectorXcd F(n);
    if (!eval_bordered(pb, w, x, F))
        throw Diverged("newton_correct: start point is not evaluable");
    double fn = F.norm();
    auto tol_at = [&](const VectorXcd& xx) {
        return tol * std::min(1.0, xx.head(m).norm());
    };
    if (fn <= tol_at(x)) return finish_pair(x, F, true, 0, m);

    double best = fn;
    VectorXcd xbest = x, Fbest = F;
    for (int it = 1; it <= opts.max_iter; ++it) {
        Eigen::FullPivLU<MatrixXcd> lu(bordered_jacobian(pb, w, x(m), x.head(m)));
        if (!lu.isInvertible())
            throw SingularJacobian("newton_correct: bordered Jacobian is singular");
        const VectorXcd y = lu.solve(-F);
        double gamma = 1.0;
        if (!damped_step(pb, w, y, x, F, fn, gamma))
            throw Diverged("newton_correct: iterate left the evaluable domain");
        if (fn < best) {
            best = fn;
            xbest = x;
            Fbest = F;
        }
        if (fn <= tol_at(x)) return finish_pair(x, F, true, it, m);
        if (fn > 10.0 * best)
            throw Diverged("newton_correct: residual grew tenfold over the best iterate");
    }
    return finish_pair(xbest, Fbest, false, opts.max_iter, m);
}

// ------------------------------------------------------------- left vectors

Eigen::VectorXcd left_eigenvector_small(const charfun::CharEvalContext& ctx,
                                        cxd mu) {
    if (ctx.nd() > 2000)
        throw std::invalid_argument("left_eigenvector_small: N*d exceeds 2000");
    const MatrixXcd Nm = ctx.n_matrix(mu);
    Eigen::BDCSVD<MatrixXcd> svd(Nm, Eigen::ComputeFullU);
    return svd.matrixU().col(ctx.nd() - 1);
}

Eigen::VectorXcd left_eigenvector_large(const model::PeriodicDelaySystem& sys,
                                        const model::CommensurateGrid& grid,
                                        cxd mu, const LeftLargeOpts& opts) {
    const model::PeriodicDelaySystem dual = model::dual_system(sys);
    std::span<const double> pspan(opts.params.data(),
                                  static_cast<std::size_t>(opts.params.size()));
    const colloc::CollocationSystem cs = colloc::assemble(dual, grid, opts.M, pspan);
    const std::vector<SeedPair> seeds =
        arnoldi_stage(cs, opts.krylov_dim, opts.num_wanted);

    const cxd target = std::conj(mu);
    int pick = -1;
    double gap = std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(seeds.size()); ++i) {
        const double g = std::abs(seeds[i].mu - target);
        if (g < gap) {
            gap = g;
            pick = i;
        }
    }
    if (pick < 0 || gap > opts.match_tol * std::max(1.0, std::abs(mu)))
        throw PairingFailed("left_eigenvector_large: no dual Ritz value near conj(mu)");

    // dual solution sampled at (N-n)*delta: reverse the block order
    const int d = sys.d, N = grid.N;
    VectorXcd u0(N * d);
    for (int n = 1; n <= N; ++n)
        u0.segment((n - 1) * d, d) = seeds[pick].v.segment((N - n) * d, d);
    u0 /= u0.norm();

    charfun::CharEvalContext ctx(sys, grid, opts.params, opts.scheme, opts.delta);
    const FloquetPair p = broyden_core(adjoint_problem(ctx), target, u0, opts.corrector);
    return p.v;
}

// ---------------------------------------------------------------- full run

SpectrumReport two_stage(const model::PeriodicDelaySystem& sys,
                         const model::CommensurateGrid& grid,
                         const TwoStageOpts& opts) {
    const auto t0 = std::chrono::steady_clock::now();
    std::span<const double> pspan(opts.params.data(),
                                  static_cast<std::size_t>(opts.params.size()));
    const colloc::CollocationSystem cs = colloc::assemble(sys, grid, opts.M, pspan);

    bool use_direct = true;
    switch (opts.method) {
        case StageMethod::direct: use_direct = true; break;
        case StageMethod::arnoldi: use_direct = false; break;
        case StageMethod::automatic: use_direct = cs.phi_dim() <= 4000; break;
    }
    std::vector<SeedPair> seeds =
        use_direct ? direct_stage(cs, opts.dominance_floor)
                   : arnoldi_stage(cs, opts.krylov_dim, opts.num_wanted);
    std::erase_if(seeds, [&](const SeedPair& s) {
        return std::abs(s.mu) <= opts.dominance_floor;
    });
    sort_by_modulus(seeds);
    const int take = std::min<int>(opts.num_wanted, static_cast<int>(seeds.size()));
    seeds.resize(take);

    SpectrumReport rep;
    rep.M = opts.M;
    rep.delta = opts.delta;
    rep.scheme = opts.scheme;
    rep.stage1_seconds = seconds_since(t0);

    const auto t1 = std::chrono::steady_clock::now();
    charfun::CharEvalContext ctx(sys, grid, opts.params, opts.scheme, opts.delta);

    std::vector<FloquetPair> cand(take);
    std::vector<char> keep(take, 1);
    if (opts.correct) {
        support::parallel_for(take, [&](std::size_t i) {
            try {
                FloquetPair p = broyden_correct(ctx, seeds[i].mu, seeds[i].v,
                                                opts.corrector);
                const double drift = std::abs(std::abs(p.mu) - std::abs(seeds[i].mu)) /
                                     std::abs(seeds[i].mu);
                if (!p.converged || drift > opts.spurious_drift)
                    keep[i] = 0;
                else
                    cand[i] = std::move(p);
            } catch (const std::runtime_error&) {
                keep[i] = 0;  // Diverged / Stagnated: spurious seed
            }
        });
    } else {
        for (int i = 0; i < take; ++i) {
            FloquetPair p;
            p.mu = seeds[i].mu;
            p.v = seeds[i].v;
            p.residual_right = ctx.n_action(seeds[i].mu, seeds[i].v).norm();
            p.stage = Stage::collocation;
            cand[i] = std::move(p);
        }
    }

    // merge: drop spurious, dedup against the retained list
    const auto same = [&](cxd a, cxd b) {
        return std::abs(a - b) <= opts.dedup_tol * std::max(1.0, std::abs(a));
    };
    for (int i = 0; i < take; ++i) {
        if (!keep[i]) {
            ++rep.discarded;
            continue;
        }
        bool merged = false;
        for (FloquetPair& q : rep.pairs)
            if (same(q.mu, cand[i].mu)) {
                if (cand[i].residual_right < q.residual_right) q = std::move(cand[i]);
                merged = true;
                ++rep.discarded;
                break;
            }
        if (!merged) rep.pairs.push_back(std::move(cand[i]));
    }

    // real coefficients: complete conjugate partners the seed cut left out
    const int present = static_cast<int>(rep.pairs.size());
    for (int i = 0; i < present; ++i) {
        const cxd mu = rep.pairs[i].mu;
        if (std::abs(mu.imag()) <= 1e-10) continue;
        bool found = false;
        for (const FloquetPair& q : rep.pairs) found = found || same(q.mu, std::conj(mu));
        if (!found) {
            FloquetPair q = rep.pairs[i];
            q.mu = std::conj(mu);
            q.v = rep.pairs[i].v.conjugate();
            if (rep.pairs[i].u) q.u = rep.pairs[i].u->conjugate();
            rep.pairs.push_back(std::move(q));
        }
    }

    std::stable_sort(rep.pairs.begin(), rep.pairs.end(),
                     [](const FloquetPair& a, const FloquetPair& b) {
                         const double ma = std::abs(a.mu), mb = std::abs(b.mu);
                         if (std::abs(ma - mb) > 1e-14 * std::max(ma, mb))
                             return ma > mb;
                         return a.mu.imag() > b.mu.imag();
                     });
    // truncate, but never through the middle of a conjugate pair
    if (static_cast<int>(rep.pairs.size()) > opts.num_wanted) {
        int cut = opts.num_wanted;
        if (cut > 0 && same(rep.pairs[cut].mu, std::conj(rep.pairs[cut - 1].mu)) &&
            std::abs(rep.pairs[cut].mu.imag()) > 1e-10)
            ++cut;
        rep.pairs.resize(cut);
    }

    if (opts.left_vectors) {
        LeftLargeOpts lopts;
        lopts.M = opts.M;
        lopts.delta = opts.delta;
        lopts.scheme = opts.scheme;
        lopts.krylov_dim = opts.krylov_dim;
        lopts.num_wanted = opts.num_wanted;
        lopts.params = opts.params;
        for (FloquetPair& p : rep.pairs) {
            p.u = ctx.nd() <= 2000
                      ? left_eigenvector_small(ctx, p.mu)
                      : left_eigenvector_large(sys, grid, p.mu, lopts);
            p.residual_left = ctx.m_action(std::conj(p.mu), *p.u).norm();
        }
    }
    rep.stage2_seconds = seconds_since(t1);
    return rep;
}

}  // namespace floq::solve
