#pragma once

#include <Eigen/Dense>

#include <complex>
#include <optional>
#include <stdexcept>
#include <vector>

#include "floq/charfun.hpp"
#include "floq/colloc.hpp"
#include "floq/model.hpp"

// Two-stage Floquet solver: a collocation eigensolve supplies approximate
// multipliers with eigenfunction seeds, then a damped Broyden (or exact
// Newton) iteration on the bordered system F(v, mu) = (N_delta(mu) v, w*v - 1)
// polishes each pair to integrator accuracy and weeds out discretization
// artifacts. Left eigenvectors come from an SVD of the dense characteristic
// matrix when N*d is small, or from the dual system's collocation otherwise.

namespace floq::solve {

using cxd = std::complex<double>;

struct TooLargeForDirect : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NoConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct Diverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct Stagnated : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularJacobian : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct PairingFailed : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Stage { collocation, corrected };

struct FloquetPair {
    cxd mu;
    Eigen::VectorXcd v;                 // right vector, unit norm, length N*d
    std::optional<Eigen::VectorXcd> u;  // left vector, unit norm
    double residual_right = 0.0;        // ||N_delta(mu) v||
    double residual_left = 0.0;         // ||M_delta(conj mu) u||
    Stage stage = Stage::collocation;
    bool converged = false;
    int iterations = 0;  // corrector steps taken
};

/// Stage-1 output: collocation eigenvalue plus the endpoint-trace seed for
/// the nonlinear eigenproblem. stage_residual is the Ritz residual bound for
/// Arnoldi pairs and 0 for dense eigensolves.
struct SeedPair {
    cxd mu;
    Eigen::VectorXcd v;
    double stage_residual = 0.0;
};

struct CorrectorOpts {
    double tol = -1.0;  // <= 0 picks 1e-12 * N*d
    int max_iter = 60;
    // H_0 = J(x_0)^{-1} assembled once (costs one dense characteristic
    // matrix); otherwise H_0 = I, the cheap choice for large problems.
    bool init_jacobian = true;
};

/// All eigenvalues of the dense collocation operator with |mu| above floor,
/// mapped to seeds. Guard: history dimension n_h*d*(M+1) <= 4000, otherwise
/// TooLargeForDirect.
std::vector<SeedPair> direct_stage(const colloc::CollocationSystem& cs,
                                   double floor = 1e-8);

/// Ritz pairs of the collocation operator from a Krylov space grown one
/// matrix-free application at a time. Stops early once the num_wanted most
/// dominant Ritz values have residual <= ritz_tol; restarts (at most twice)
/// if residuals are still above 1e-6 when krylov_dim is exhausted, then
/// throws NoConvergence. Ritz vectors become seeds by integrating the system
/// over one period from the spline history segment. iterations, when given,
/// receives the number of operator applications used.
std::vector<SeedPair> arnoldi_stage(const colloc::CollocationSystem& cs,
                                    int krylov_dim, int num_wanted,
                                    double ritz_tol = 1e-12,
                                    int* iterations = nullptr);

/// Damped good-Broyden iteration on the bordered system with the constraint
/// functional w = v0/||v0||^2, so w*v0 = 1 exactly. Throws Diverged when the
/// residual grows tenfold over the best seen and Stagnated when ten steps in
/// a row fail to improve it; returns with converged=false when max_iter runs
/// out first.
FloquetPair broyden_correct(const charfun::CharEvalContext& ctx, cxd mu0,
                            const Eigen::VectorXcd& v0,
                            const CorrectorOpts& opts = {});

/// Same bordered system with the exact Jacobian rebuilt every step: one
/// dense characteristic matrix plus one derivative action per iteration,
/// quadratic convergence near simple roots.
FloquetPair newton_correct(const charfun::CharEvalContext& ctx, cxd mu0,
                           const Eigen::VectorXcd& v0,
                           const CorrectorOpts& opts = {});

/// Left null vector of N_delta(mu) as the singular vector of the smallest
/// singular value. Assembles the dense characteristic matrix, so N*d must
/// stay <= 2000.
Eigen::VectorXcd left_eigenvector_small(const charfun::CharEvalContext& ctx,
                                        cxd mu);

struct LeftLargeOpts {
    int M = 15;
    double delta = 1e-3;
    charfun::Scheme scheme = charfun::Scheme::rk4;
    int krylov_dim = 60;
    int num_wanted = 10;
    double match_tol = 1e-2;  // relative gap allowed between dual Ritz and conj(mu)
    Eigen::VectorXd params;   // empty picks system defaults
    CorrectorOpts corrector{.init_jacobian = false};
};

/// Left vector without ever forming N_delta: run the Arnoldi stage on the
/// dual system (reversed, transposed coefficients), pick the Ritz value
/// nearest conj(mu), reverse the block order of its seed (the dual solution
/// sampled at (N-n)*delta is a null vector of M_delta), and polish with
/// Broyden on G(u, nu) = (M_delta(nu) u, w*u - 1) started at nu = conj(mu).
/// Throws PairingFailed when no dual Ritz value lands within match_tol.
Eigen::VectorXcd left_eigenvector_large(const model::PeriodicDelaySystem& sys,
                                        const model::CommensurateGrid& grid,
                                        cxd mu, const LeftLargeOpts& opts = {});

enum class StageMethod { automatic, direct, arnoldi };

struct TwoStageOpts {
    int M = 15;
    double delta = 1e-3;
    charfun::Scheme scheme = charfun::Scheme::rk4;
    int num_wanted = 10;
    StageMethod method = StageMethod::automatic;
    bool correct = true;        // stage 2 on/off
    bool left_vectors = false;
    int krylov_dim = 60;
    Eigen::VectorXd params;     // empty picks system defaults
    CorrectorOpts corrector;
    double dominance_floor = 1e-8;
    double spurious_drift = 0.5;  // relative modulus drift seed -> corrected
    double dedup_tol = 1e-8;
};

struct SpectrumReport {
    std::vector<FloquetPair> pairs;  // sorted by |mu| descending, deduplicated
    int M = 0;
    double delta = 0.0;
    charfun::Scheme scheme = charfun::Scheme::rk4;
    double stage1_seconds = 0.0;
    double stage2_seconds = 0.0;
    int discarded = 0;  // seeds dropped as spurious or duplicate
};

/// Collocation sweep, correction of the num_wanted most dominant seeds,
/// spurious filtering, deduplication, and conjugate completion (real
/// coefficients force a conjugate-closed spectrum).
SpectrumReport two_stage(const model::PeriodicDelaySystem& sys,
                         const model::CommensurateGrid& grid,
                         const TwoStageOpts& opts = {});

}  // namespace floq::solve
