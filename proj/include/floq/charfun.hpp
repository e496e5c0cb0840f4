#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <complex>
#include <optional>
#include <stdexcept>
#include <vector>

#include "floq/model.hpp"

// Characteristic-matrix actions. An eigenpair (mu, v) of the delay system's
// monodromy operator satisfies N(mu)v = 0, where N(mu)v is evaluated by
// integrating a block ODE for q(s) on the unit interval: block n carries the
// solution segment on [(n-1)delta, n*delta], delayed arguments turn into
// block shifts with integer powers of mu picking up the period wrap. The
// transposed problem M(mu) drives left eigenvectors; with the trapezoidal
// scheme its discretization is the exact adjoint of the forward one.

namespace floq::charfun {

using cxd = std::complex<double>;

struct MuZero : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SingularStep : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingParamDerivative : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Scheme { rk4, trapezoidal };

/// Eigenfunction samples on [-tau_h, 0]: column i is the state at t[i].
struct EigenfunctionSample {
    std::vector<double> t;
    Eigen::MatrixXcd values;  // d x t.size()
};

class CharEvalContext {
public:
    /// Binds system+grid+parameter values. The requested step is snapped to
    /// 1/ceil(1/delta) so the unit interval holds a whole number of steps;
    /// an empty params vector selects the system defaults.
    CharEvalContext(const model::PeriodicDelaySystem& sys,
                    const model::CommensurateGrid& grid,
                    const Eigen::VectorXd& params, Scheme scheme, double delta);

    int dim() const { return d_; }
    int big_n() const { return N_; }
    int nd() const { return N_ * d_; }
    int steps() const { return K_; }
    double step() const { return hs_; }
    Scheme scheme() const { return scheme_; }
    const model::PeriodicDelaySystem& system() const { return sys_; }
    const model::CommensurateGrid& grid() const { return grid_; }
    const Eigen::VectorXd& params() const { return params_; }

    /// A(s, mu) q: block n is delta * sum_j A_j((s+n-1)delta) mu^{a} q_{b},
    /// with (a, b) the period/block split of n - n_j. Evaluates coefficients
    /// at the given s directly (the integrators use cached slices instead).
    Eigen::VectorXcd apply_A(double s, cxd mu, const Eigen::VectorXcd& q) const;

    /// B(mu): blocks shift down, block N wraps to mu * v_1.
    Eigen::VectorXcd apply_B(cxd mu, const Eigen::VectorXcd& v) const;
    /// B(mu)^T: block 1 is mu * v_N, block k is v_{k-1}.
    Eigen::VectorXcd apply_B_transpose(cxd mu, const Eigen::VectorXcd& v) const;

    /// N(mu) v = q(1) - B(mu) v with q(0) = v.
    Eigen::VectorXcd n_action(cxd mu, const Eigen::VectorXcd& v) const;

    /// dN/dmu v via co-integration of the mu-variational state.
    Eigen::VectorXcd dn_dmu_action(cxd mu, const Eigen::VectorXcd& v) const;

    /// M(mu) v = p(0) - B(mu)^T v, where p solves the transposed equation
    /// backward from p(1) = v. Trapezoidal scheme: exactly N_delta(conj mu)*.
    Eigen::VectorXcd m_action(cxd mu, const Eigen::VectorXcd& v) const;

    /// dM/dmu v, co-integrated on the backward problem.
    Eigen::VectorXcd dm_dmu_action(cxd mu, const Eigen::VectorXcd& v) const;

    /// Dense N_delta(mu), one matrix-valued integration. Meant for small
    /// N*d (Jacobian seeds, left vectors); cost grows with (N*d)^3.
    Eigen::MatrixXcd n_matrix(cxd mu) const;

    /// Monodromy matrix of a delay-free system (h = 0 only).
    Eigen::MatrixXd ode_monodromy() const;

    struct ParamDerivIngredients {
        Eigen::VectorXcd q1;    // q(1)
        Eigen::VectorXcd qmu1;  // dq/dmu (1)
        Eigen::VectorXcd qk1;   // dq/dK_j (1)
    };
    /// Endpoints of the co-integrated (q, q_mu, q_K) system feeding the
    /// eigenvalue parameter derivative. One pass, shared step matrices.
    ParamDerivIngredients param_derivative_ingredients(cxd mu,
                                                       const Eigen::VectorXcd& v,
                                                       int param_index) const;

    /// Samples the eigenfunction on [-tau_h, 0] at the integration nodes via
    /// phi(t) = mu^{a_n} q_{b_n}(s) over the history blocks; phi(0) is v_1
    /// exactly (the seam value of the forward segment).
    EigenfunctionSample reconstruct_eigenfunction(cxd mu,
                                                  const Eigen::VectorXcd& v) const;

private:
    using RowMat =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    struct SpMat {  // coordinate list; small and iteration-friendly
        std::vector<int> r, c;
        std::vector<double> v;
    };
    struct PlanTerm {
        RowMat dm;
        SpMat sp;
        bool sparse = false;
        Eigen::ArrayXXd vals;  // (2K+1) x N scale samples, vals(m, n-1)
    };
    // One coefficient, parameter values folded in: a static part (terms whose
    // scale does not involve t) plus per-node sampled time-dependent terms.
    struct CoeffPlan {
        bool has_static = false;
        bool static_sparse = false;
        RowMat sdm;
        SpMat ssp;
        std::vector<PlanTerm> tdep;
        bool empty() const { return !has_static && tdep.empty(); }
    };
    struct MuPowers {
        std::vector<cxd> pow;   // pow[i] = mu^{-i}
        std::vector<cxd> dpow;  // dpow[i] = d/dmu mu^{-i}
    };
    enum class Pw { val, dmu };

    MuPowers powers(cxd mu) const;
    std::vector<CoeffPlan> build_plans(const std::vector<model::Coeff>& coeffs) const;

    // node-level actions on full N*d vectors; out must be pre-zeroed
    void plan_apply(const CoeffPlan& plan, int m, int n, cxd f, const cxd* x,
                    cxd* y, bool transposed) const;
    void apply_A_node(int m, const MuPowers& p, const cxd* q, cxd* out) const;
    void apply_AT_node(int m, const MuPowers& p, const cxd* q, cxd* out) const;
    void apply_Amu_node(int m, const MuPowers& p, const cxd* q, cxd* out) const;
    void apply_AmuT_node(int m, const MuPowers& p, const cxd* q, cxd* out) const;
    void apply_AK_node(int m, const std::vector<CoeffPlan>& plans,
                       const MuPowers& p, const cxd* q, cxd* out) const;

    // single-block actions, valid on the block-diagonal (decoupled) grid
    void apply_block(const std::vector<CoeffPlan>& plans, int m, int n,
                     const MuPowers& p, Pw pw, const cxd* x, cxd* y,
                     bool transposed) const;

    // step-matrix assembly: M = mass + coef * delta * sum_j mu^{a} C_j(node)
    void plan_add_dense(const CoeffPlan& plan, int m, int n, cxd f,
                        Eigen::MatrixXcd& tgt, int r0, int c0) const;
    void plan_add_triplets(const CoeffPlan& plan, int m, int n, cxd f, int r0,
                           int c0, std::vector<Eigen::Triplet<cxd>>& out) const;
    void assemble_block_dense(int m, int n, const MuPowers& p, cxd coef,
                              Eigen::MatrixXcd& M) const;
    void assemble_block_sp(int m, int n, const MuPowers& p, cxd coef,
                           Eigen::SparseMatrix<cxd>& M,
                           std::vector<Eigen::Triplet<cxd>>& scratch) const;
    void assemble_full_dense(int m, const MuPowers& p, cxd coef,
                             Eigen::MatrixXcd& M) const;
    void assemble_full_sp(int m, const MuPowers& p, cxd coef,
                          Eigen::SparseMatrix<cxd>& M,
                          std::vector<Eigen::Triplet<cxd>>& scratch) const;

    void mass_block_mul(const cxd* x, cxd* y) const;    // y = E x, one block
    void mass_block_mul_t(const cxd* x, cxd* y) const;  // y = E^T x
    void mass_mul(const Eigen::VectorXcd& x, Eigen::VectorXcd& y) const;
    void solve_mass(Eigen::VectorXcd& x) const;    // blockdiag(E) z = x
    void solve_mass_t(Eigen::VectorXcd& x) const;  // blockdiag(E^T) z = x

    // forward propagation of q with optional variational co-states (shared
    // step factorizations) and optional per-step snapshots of q
    void integrate_forward(const MuPowers& p, Eigen::VectorXcd& q,
                           Eigen::VectorXcd* qmu, Eigen::VectorXcd* qk,
                           const std::vector<CoeffPlan>* kplans,
                           Eigen::MatrixXcd* snaps) const;
    void rk4_forward(const MuPowers& p, Eigen::VectorXcd& q,
                     Eigen::VectorXcd* qmu, Eigen::VectorXcd* qk,
                     const std::vector<CoeffPlan>* kplans,
                     Eigen::MatrixXcd* snaps) const;
    void trap_forward(const MuPowers& p, Eigen::VectorXcd& q,
                      Eigen::VectorXcd* qmu, Eigen::VectorXcd* qk,
                      const std::vector<CoeffPlan>* kplans,
                      Eigen::MatrixXcd* snaps) const;

    // backward sweeps returning w(0) (and optionally its mu derivative);
    // the callers subtract the B(mu)^T part
    Eigen::VectorXcd trap_backward(const MuPowers& p, const Eigen::VectorXcd& v,
                                   Eigen::VectorXcd* wmu) const;
    Eigen::VectorXcd rk4_backward(const MuPowers& p, const Eigen::VectorXcd& v,
                                  Eigen::VectorXcd* wmu) const;

    model::PeriodicDelaySystem sys_;
    model::CommensurateGrid grid_;
    Eigen::VectorXd params_;
    Scheme scheme_;
    int d_ = 0, N_ = 0, K_ = 0, amax_ = 0;
    double hs_ = 0.0, delta_ = 0.0;
    bool decoupled_ = false;    // every n_j is a multiple of N
    bool sparse_steps_ = false; // sparse step matrices / plan terms
    bool steps_tfree_ = false;  // no coefficient depends on t
    std::vector<std::vector<int>> a_tab_, b_tab_;  // [n-1][j] split of n - n_j
    std::vector<CoeffPlan> plans_;
    std::vector<std::vector<CoeffPlan>> param_plans_;  // [param][delay]
    bool has_mass_ = false;
    Eigen::SparseMatrix<double> mass_, mass_t_;
    Eigen::MatrixXd mass_dense_;
    std::optional<Eigen::SparseLU<Eigen::SparseMatrix<double>>> mass_lu_, mass_lu_t_;
};

}  // namespace floq::charfun
