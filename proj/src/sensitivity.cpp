#include "floq/sensitivity.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "floq/support.hpp"

namespace floq::sensitivity {

namespace {

using Eigen::VectorXcd;
using Eigen::VectorXd;

VectorXd resolve_params(const model::PeriodicDelaySystem& sys,
                        const VectorXd& params) {
    if (params.size() == 0) return sys.param_defaults;
    if (params.size() != sys.num_params())
        throw std::invalid_argument("parameter vector does not match the system");
    return params;
}

VectorXcd left_vector_for(const model::PeriodicDelaySystem& sys,
                          const model::CommensurateGrid& grid,
                          const charfun::CharEvalContext& ctx,
                          const solve::FloquetPair& pair, const VectorXd& pv,
                          const GradientOpts& opts) {
    if (pair.u && pair.u->size() == ctx.nd()) return *pair.u;
    if (!opts.auto_left)
        throw MissingLeftVector(
            "pair carries no left vector and recomputation is disabled");
    if (ctx.nd() <= 2000) return solve::left_eigenvector_small(ctx, pair.mu);
    solve::LeftLargeOpts lo;
    lo.M = opts.left_M;
    lo.delta = opts.delta;
    lo.scheme = opts.scheme;
    lo.krylov_dim = opts.left_krylov;
    lo.params = pv;
    return solve::left_eigenvector_large(sys, grid, pair.mu, lo);
}

}  // namespace

GradientResult gradient(const model::PeriodicDelaySystem& sys,
                        const model::CommensurateGrid& grid,
                        const solve::FloquetPair& pair,
                        const Eigen::VectorXd& params,
                        const GradientOpts& opts) {
    const VectorXd pv = resolve_params(sys, params);
    const charfun::CharEvalContext ctx(sys, grid, pv, opts.scheme, opts.delta);
    if (pair.v.size() != ctx.nd())
        throw std::invalid_argument("right vector does not match N*d");
    const VectorXcd u = left_vector_for(sys, grid, ctx, pair, pv, opts);

    const int k = sys.num_params();
    const int d = ctx.dim();
    GradientResult out;
    out.mu = pair.mu;
    out.dmu_dK = VectorXcd::Zero(k);

    // u* v_N touches only the last block, which holds v_1.
    const cxd u_vN = u.tail(d).dot(pair.v.head(d));

    VectorXcd numer = VectorXcd::Zero(k);
    cxd u_qmu1;
    if (k == 0) {
        u_qmu1 = u.dot(ctx.dn_dmu_action(pair.mu, pair.v)) + u_vN;
    } else {
        // One (q, q_mu, q_Kj) pass per parameter; q and q_mu repeat bitwise
        // across passes, so the denominator comes from the first.
        std::vector<cxd> qmu(static_cast<std::size_t>(k));
        auto one = [&](std::size_t j) {
            const auto ing = ctx.param_derivative_ingredients(
                pair.mu, pair.v, static_cast<int>(j));
            numer[static_cast<long>(j)] = u.dot(ing.qk1);
            qmu[j] = u.dot(ing.qmu1);
        };
        if (k > 8)
            support::parallel_for(static_cast<std::size_t>(k), one);
        else
            for (std::size_t j = 0; j < static_cast<std::size_t>(k); ++j) one(j);
        u_qmu1 = qmu[0];
    }

    out.denominator = u_qmu1 - u_vN;
    const double dn = std::abs(out.denominator);
    out.flagged = !(dn >= 1e-8 * std::abs(u_qmu1) && dn > 0.0);
    if (out.flagged && !opts.allow_flagged)
        throw NearDefective("derivative denominator degenerate: |u* dN/dmu v| = " +
                            std::to_string(dn));
    for (int j = 0; j < k; ++j) out.dmu_dK[j] = -numer[j] / out.denominator;
    return out;
}

double gradient_fd_check(const model::PeriodicDelaySystem& sys,
                         const model::CommensurateGrid& grid,
                         const solve::FloquetPair& pair,
                         const Eigen::VectorXd& params, double h_rel,
                         const GradientOpts& opts) {
    if (!(h_rel > 0.0)) throw std::invalid_argument("h_rel must be positive");
    const GradientResult g = gradient(sys, grid, pair, params, opts);
    const VectorXd base = resolve_params(sys, params);

    double worst = 0.0;
    for (int j = 0; j < sys.num_params(); ++j) {
        const double h = h_rel * std::max(1.0, std::abs(base[j]));
        cxd wing[2];
        for (int s = 0; s < 2; ++s) {
            VectorXd pj = base;
            pj[j] += (s == 0) ? h : -h;
            const charfun::CharEvalContext cj(sys, grid, pj, opts.scheme,
                                              opts.delta);
            const auto rp =
                solve::broyden_correct(cj, pair.mu, pair.v, opts.corrector);
            if (!rp.converged)
                throw std::runtime_error(
                    "finite-difference wing failed to re-converge");
            wing[s] = rp.mu;
        }
        const cxd fd = (wing[0] - wing[1]) / (2.0 * h);
        const double diff = std::abs(fd - g.dmu_dK[j]);
        const double ref = std::abs(g.dmu_dK[j]);
        worst = std::max(worst, ref > 0.0 ? diff / ref : diff);
    }
    return worst;
}

}  // namespace floq::sensitivity
