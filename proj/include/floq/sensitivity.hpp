#pragma once

#include <Eigen/Dense>

#include <complex>
#include <stdexcept>

#include "floq/charfun.hpp"
#include "floq/model.hpp"
#include "floq/solve.hpp"

// Parameter derivatives of simple Floquet multipliers. With (mu, v) a
// converged right pair and u the matching left vector,
//
//   dmu/dK_j = -u* q_Kj(1) / (u* q_mu(1) - u* v_N),
//
// where q, q_mu and q_Kj solve one co-integrated variational system over the
// period (q(0) = v, zero initial derivatives) and v_N places v_1 in the last
// block. The same integrator and step as the forward solve is used
// throughout, so the result is the exact-to-round-off derivative of the
// eigenvalue of N_delta, not just an O(delta^p) estimate of it.

namespace floq::sensitivity {

using cxd = std::complex<double>;

// Denominator degenerate: the eigenvalue is (numerically) not simple.
struct NearDefective : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Pair carries no left vector and recomputation was disabled.
struct MissingLeftVector : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GradientResult {
    cxd mu;
    Eigen::VectorXcd dmu_dK;  // one entry per system parameter
    cxd denominator = 0.0;    // u* q_mu(1) - u* v_N
    // |denominator| < 1e-8 |u* q_mu(1)| (or exactly zero): the derivative
    // entries are unreliable and the eigenvalue is close to defective.
    bool flagged = false;
};

struct GradientOpts {
    double delta = 1e-3;  // step hint; keep equal to the forward solve
    charfun::Scheme scheme = charfun::Scheme::rk4;
    bool allow_flagged = false;  // return flagged results instead of throwing
    bool auto_left = true;       // recompute u when the pair lacks one
    int left_M = 15;             // dual collocation degree, large systems only
    int left_krylov = 60;
    solve::CorrectorOpts corrector;  // finite-difference reconvergence
};

/// Derivative of pair.mu with respect to every system parameter. The left
/// vector is taken from the pair when present; otherwise it is recomputed
/// (SVD of the dense characteristic matrix for N*d <= 2000, the dual
/// collocation path above that) unless opts.auto_left forbids it. Throws
/// NearDefective when the denominator check flags the eigenvalue, unless
/// opts.allow_flagged asks for the flagged result instead.
GradientResult gradient(const model::PeriodicDelaySystem& sys,
                        const model::CommensurateGrid& grid,
                        const solve::FloquetPair& pair,
                        const Eigen::VectorXd& params,
                        const GradientOpts& opts = {});

/// Central finite differences of mu(K) against gradient, entrywise; returns
/// the worst relative deviation (absolute where the analytic entry is zero).
/// Each wing evaluation re-converges the pair with Broyden at the perturbed
/// parameters, step h_rel * max(1, |K_j|).
double gradient_fd_check(const model::PeriodicDelaySystem& sys,
                         const model::CommensurateGrid& grid,
                         const solve::FloquetPair& pair,
                         const Eigen::VectorXd& params, double h_rel,
                         const GradientOpts& opts = {});

}  // namespace floq::sensitivity
