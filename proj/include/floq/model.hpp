#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "floq/expr.hpp"

namespace floq::model {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonCommensurate : ModelError {
    using ModelError::ModelError;
};
struct HintInvalid : ModelError {
    using ModelError::ModelError;
};
struct InvalidMass : ModelError {
    using ModelError::ModelError;
};

/// One summand of a coefficient matrix: scale(t, K) * mat.
struct CoeffTerm {
    expr::Expr scale;
    Eigen::SparseMatrix<double> mat;
};

// T-periodic real matrix coefficient A(t; K) = sum_p scale_p(t', K) * C_p,
// where t' = euclid_mod(tscale*t + tshift, T). The affine time transform
// exists so the dual system's A(tau - t)^T reuses the original expressions,
// with piecewise (heaviside) definitions still evaluated inside [0, T).
class Coeff {
public:
    Coeff() = default;

    /// Entry-wise definition; entries row-major, literal zeros dropped.
    static Coeff from_entries(int d, const std::vector<expr::Expr>& entries,
                              double period);
    static Coeff from_terms(int d, std::vector<CoeffTerm> terms, double period,
                            bool prefer_sparse);

    int dim() const { return d_; }
    double period() const { return period_; }

    /// Argument actually seen by the stored expressions for query time t.
    double map_time(double t) const;

    /// out is resized and overwritten.
    void eval_dense(double t, std::span<const double> k, Eigen::MatrixXd& out) const;

    /// Appends scale * A(t;K) entries shifted by (row0, col0).
    void add_triplets(double t, std::span<const double> k, double scale, int row0,
                      int col0, std::vector<Eigen::Triplet<double>>& out) const;

    Coeff param_derivative(int j) const;

    /// A(t) -> A(tau - t)^T, the coefficient transform of the dual system.
    Coeff transposed_time_reflected(double tau) const;

    bool depends_on_t() const;
    bool depends_on_param(int j) const;
    bool prefer_sparse() const { return prefer_sparse_; }
    const std::vector<CoeffTerm>& terms() const { return terms_; }

private:
    int d_ = 0;
    double period_ = 1.0;
    double tscale_ = 1.0;
    double tshift_ = 0.0;
    bool prefer_sparse_ = false;
    std::vector<CoeffTerm> terms_;
};

struct PeriodicDelaySystem {
    int d = 0;
    double T = 0.0;
    std::vector<double> delays;  // tau_0 = 0 first, strictly ascending
    std::vector<Coeff> coeffs;   // one per delay
    std::vector<std::string> param_names;
    Eigen::VectorXd param_defaults;
    std::optional<Eigen::SparseMatrix<double>> mass;  // E on the left of x'
    std::vector<double> discontinuities;              // within [0, T)
    std::optional<double> delta_hint;
    std::string name;

    int h() const { return static_cast<int>(delays.size()) - 1; }
    int num_params() const { return static_cast<int>(param_names.size()); }

    /// Throws ModelError/InvalidMass on inconsistent dimensions, unsorted
    /// delays, or a singular mass matrix.
    void validate() const;

    /// A_j(t; K) with t reduced into [0, T).
    Eigen::MatrixXd eval_coeff(int j, double t, std::span<const double> k) const;
};

/// T = N*delta, tau_j = n_j*delta.
struct CommensurateGrid {
    double delta = 0.0;
    int N = 0;
    std::vector<int> n;  // n_0 = 0 first
    int n_h = 0;         // n.back()
};

/// Finds the coarsest commensurate grid by rationalizing tau_j / T
/// (continued fractions, denominators up to 1e6, relative tolerance 1e-9).
/// A delta hint is validated against the same tolerance and then snapped to
/// delta = T/N exactly. Throws NonCommensurate / HintInvalid.
CommensurateGrid build_grid(const PeriodicDelaySystem& sys,
                            std::optional<double> delta_hint);
CommensurateGrid build_grid(const PeriodicDelaySystem& sys);

/// Same delays and period, coefficients A_j(tau_j - t)^T, mass E^T. The dual
/// of the dual is the original system.
PeriodicDelaySystem dual_system(const PeriodicDelaySystem& sys);

enum class Controller { PI, PD, PID };

/// x' = K cos(2t) x + (sin(2t)+K) x(t-pi) + 0.1 cos(2t) e^{sin 2t} x(t-2pi).
PeriodicDelaySystem make_scalar_lambert(double K_default);

/// Delayed-feedback Mathieu oscillator. PI exposes (k_i, k_p) with d = 3,
/// PID all three gains with d = 3; PD is reduced to d = 2, which removes the
/// non-physical multiplier 1 that a decoupled integrator state would add.
PeriodicDelaySystem make_mathieu_pid(Controller ctl, double nu = 4.0,
                                     double eps = 2.0,
                                     double tau = 3.0 * M_PI / 4.0,
                                     double ki = 0.0, double kp = 0.0,
                                     double kd = 0.0);

/// Finite-element milling model, d = 2(n+1), one unit delay, mass matrix,
/// damping gain K. Ships with a delta hint of 1/26.
PeriodicDelaySystem make_milling(int n, double K_default = 0.0);

}  // namespace floq::model
