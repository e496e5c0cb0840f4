#pragma once

#include <Eigen/Dense>

#include <vector>

#include "floq/model.hpp"
#include "floq/sensitivity.hpp"
#include "floq/solve.hpp"

// Spectral-radius minimization over the system parameters. The objective is
// the squared modulus of the corrected dominant multiplier, its gradient
// 2 Re(conj(mu_D) dmu_D/dK) comes from the eigenvalue derivative module, and
// the minimizer is BFGS with a weak-Wolfe bisection line search. rho(K) is
// nonsmooth where distinct multiplier moduli tie, so curvature-failing
// updates are skipped and a failed line search restarts the model from a
// scaled identity before giving up.

namespace floq::optimize {

struct ObjectiveEval {
    Eigen::VectorXd K;
    double rho_sq = 0.0;     // |mu_D|^2
    Eigen::VectorXd grad;    // 2 Re(conj(mu_D) dmu_D/dK)
    solve::FloquetPair pair;  // dominant corrected pair
    // Modulus gap |mu_D| - |mu_second| to the nearest pair that is not the
    // conjugate partner (conjugates tie identically without making rho_sq
    // nonsmooth). The gap to zero when no such pair was requested.
    double tie_gap = 0.0;
    // Eigenvalue derivative was flagged near-defective: rho_sq is not
    // differentiable here and grad (returned when finite) is one-sided.
    bool nonsmooth = false;
};

struct ObjectiveOpts {
    // Discretization of every evaluation; held constant across a whole
    // optimization run so iterates see one consistent objective.
    solve::TwoStageOpts stage;
    bool want_gradient = true;
};

/// Full two-stage sweep at parameters K plus the rho_sq gradient. The
/// dominant pair's left vector is recomputed on demand; a near-defective
/// derivative marks the evaluation nonsmooth instead of throwing.
ObjectiveEval objective(const model::PeriodicDelaySystem& sys,
                        const model::CommensurateGrid& grid,
                        const Eigen::VectorXd& K, const ObjectiveOpts& opts = {});

enum class StopReason {
    gradient_norm,       // ||grad|| <= gtol
    step_size,           // accepted step shorter than step_tol
    max_iterations,
    line_search_failed,  // no decrease found after the allowed restarts
};

struct MinimizeOpts {
    ObjectiveOpts objective;
    double gtol = 1e-6;
    double step_tol = 1e-12;
    int max_iter = 200;
    double c1 = 1e-4;          // Armijo slope fraction
    double c2 = 0.5;           // weak curvature fraction
    int max_bisections = 50;   // line-search evaluation budget
    int max_restarts = 3;      // scaled-identity restarts after failures
    double warm_radius = 0.1;  // ||dK|| below this corrects cached pairs
};

struct OptimizerTrace {
    std::vector<Eigen::VectorXd> iterates;  // accepted K_i, K0 first
    std::vector<double> rho_sq;             // objective at each iterate
    std::vector<double> step_lengths;       // alpha per accepted step
    std::vector<int> line_search_evals;     // objective calls per step
    StopReason reason = StopReason::max_iterations;
    int restarts = 0;
    int full_sweeps = 0;  // objective evaluations that ran stage 1
    int warm_evals = 0;   // evaluations served by correcting cached pairs
    MinimizeOpts opts;    // constants echoed for reproducibility
};

struct MinimizeResult {
    Eigen::VectorXd K;    // best accepted iterate
    ObjectiveEval eval;   // objective at K
    OptimizerTrace trace;
};

/// BFGS on rho_sq from K0. Inverse-Hessian updates are skipped when the
/// curvature condition fails; the weak-Wolfe search brackets by doubling and
/// then bisects. rho_sq is non-increasing along accepted iterates. Requires
/// at least one system parameter.
MinimizeResult minimize(const model::PeriodicDelaySystem& sys,
                        const model::CommensurateGrid& grid,
                        const Eigen::VectorXd& K0, const MinimizeOpts& opts = {});

const char* to_string(StopReason reason);

}  // namespace floq::optimize
