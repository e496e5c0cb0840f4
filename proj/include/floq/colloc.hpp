#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <complex>
#include <span>
#include <stdexcept>

#include "floq/model.hpp"

namespace floq::colloc {

using cxd = std::complex<double>;

struct SingularDiscretization : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularSq : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ZeroVector : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MuZero : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Chebyshev basis tables on the Lobatto mesh of degree M-1:
// alpha_1 = -1, alpha_M = 1, interior points the roots of P'_{M-1}, so
// xi_1 = 0 and xi_M = 1. Collocating at Lobatto points is superconvergent
// for the ODE conditions; a plain Chebyshev mesh loses several digits on
// smooth coefficients at the same M. The basis on each unit interval is
// p_i(s) = T_i(2s - 1), i = 0..M.
struct ChebBasis {
    int M = 0;
    Eigen::VectorXd alpha;  // mesh points in [-1, 1]
    Eigen::VectorXd xi;
    Eigen::MatrixXd val;    // val(m-1, i)  = T_i(alpha_m)
    Eigen::MatrixXd dval;   // dval(m-1, i) = d/ds p_i at xi_m = 2 i U_{i-1}(alpha_m)
    Eigen::VectorXd left;   // p_i(0) = (-1)^i
    Eigen::VectorXd right;  // p_i(1) = 1

    static ChebBasis build(int M);  // M >= 2

    /// p_i(s) for all i at one point, s in [0, 1].
    Eigen::VectorXd eval(double s) const;
};

// Collocated boundary-value discretization of one period. Coefficient
// vectors stack spline blocks n = -n_h+1..N, each of length d*(M+1) laid
// out basis-major: entry i*d + r is component r of c_{i,n}. Rows of S
// come in N groups of d*(M+1): d continuity rows (q_n(0) = q_{n-1}(1))
// followed by M*d collocation rows
//   E dq_n/ds(xi_m) - Delta * sum_j A_j((xi_m + n - 1) Delta) q_{n-n_j}(xi_m) = 0,
// with E the mass matrix (identity when absent). S_phi holds the first
// n_h blocks of columns (the history segments), S_q the remaining N.
struct CollocationSystem {
    int d = 0;
    int N = 0;
    int n_h = 0;
    int M = 0;
    double delta = 0.0;
    ChebBasis basis;
    std::vector<int> n_delays;        // grid.n
    model::PeriodicDelaySystem sys;   // retained for seed conversions
    Eigen::VectorXd params;           // parameter values the assembly used
    Eigen::SparseMatrix<double> S;    // N*blk x (n_h+N)*blk
    Eigen::SparseMatrix<double> S_phi;
    Eigen::SparseMatrix<double> S_q;

    int blk() const { return d * (M + 1); }
    int phi_dim() const { return n_h * blk(); }
    int q_dim() const { return N * blk(); }
};

CollocationSystem assemble(const model::PeriodicDelaySystem& sys,
                           const model::CommensurateGrid& grid, int M,
                           std::span<const double> params = {});

/// Dense monodromy matrix on history-spline coefficients, order n_h*d*(M+1):
/// the last n_h blocks of the stacked solve [S; B_sel] c = E_sel^T c_phi.
Eigen::MatrixXd monodromy_matrix(const CollocationSystem& cs);

/// Companion-style standard form P^{-1} Q with P = [S; B_sel], Q = [0; E_sel],
/// order (n_h+N)*d*(M+1). Its nonzero eigenvalues match monodromy_matrix;
/// the rest is a zero eigenvalue of multiplicity >= N*d*(M+1). Small-size
/// cross-check only: dense and cubic in the full stacked dimension.
Eigen::MatrixXd pencil_std(const CollocationSystem& cs);

/// History map R(mu): c_phi = R(mu) c_q with block rule c_n = mu^{a_n} c_{b_n},
/// a_n = floor((n-1)/N), b_n = ((n-1) mod N) + 1, for n = -n_h+1..0.
Eigen::SparseMatrix<cxd> build_R_of_mu(const CollocationSystem& cs, cxd mu);

/// Endpoint trace v_n = q_n(0) = sum_i (-1)^i c_{i,n}, n = 1..N, unit norm.
Eigen::VectorXcd extract_nlevp_seed(const CollocationSystem& cs,
                                    const Eigen::VectorXcd& c_q);

/// c_q = -S_q^{-1} S_phi c_phi (one-shot; StageOperator caches the factor).
Eigen::VectorXcd reconstruct_c_q_from_c_phi(const CollocationSystem& cs,
                                            const Eigen::VectorXcd& c_phi);

/// Spline value of the history segments at t in [-n_h*delta, 0].
Eigen::VectorXcd spline_eval(const CollocationSystem& cs,
                             const Eigen::VectorXcd& c_phi, double t);

// Matrix-free action c_phi -> U_M c_phi behind a cached real factorization
// of S_q; complex vectors are solved as two real systems.
class StageOperator {
public:
    explicit StageOperator(const CollocationSystem& cs);  // throws SingularSq

    int dim() const { return phi_; }
    Eigen::VectorXd apply(const Eigen::VectorXd& c_phi) const;
    Eigen::VectorXcd apply(const Eigen::VectorXcd& c_phi) const;
    Eigen::VectorXcd reconstruct(const Eigen::VectorXcd& c_phi) const;

private:
    Eigen::VectorXd tail(const Eigen::VectorXd& c_phi,
                         const Eigen::VectorXd& c_q) const;

    int blk_ = 0, phi_ = 0, qdim_ = 0;
    Eigen::SparseMatrix<double> S_phi_, S_q_;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

}  // namespace floq::colloc
