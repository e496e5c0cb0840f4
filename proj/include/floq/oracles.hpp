#pragma once

#include <Eigen/Dense>

#include <complex>
#include <span>
#include <vector>

#include "floq/model.hpp"

// Independent reference computations used by the test suite to validate the
// production pipeline. Nothing here shares code with the collocation or
// characteristic-map implementations.

namespace floq::oracles {

using cxd = std::complex<double>;

/// Branch k of the Lambert W function (w e^w = z), Halley iteration from
/// branch-appropriate seeds. W_0(0) = 0; z = 0 on any other branch throws
/// std::domain_error.
cxd lambert_w(int k, cxd z);

/// Integral of the single entry of a 1x1 coefficient over one period,
/// composite Gauss-Legendre with 64 panels.
double integrate_scalar_coeff(const model::PeriodicDelaySystem& sys, int j,
                              std::span<const double> params);

/// Roots of exp(sum_j mu^{-j} a_j) - mu = 0 by Newton from the given seeds.
/// Non-converged seeds are dropped; results are deduplicated (1e-8 relative)
/// and sorted by descending modulus.
std::vector<cxd> scalar_characteristic_roots(std::span<const double> a,
                                             std::span<const cxd> seeds,
                                             double tol = 1e-12,
                                             int max_iter = 100);

/// Dense monodromy matrix on a uniform mesh over [-tau_h, 0] with mesh_n
/// intervals per grid step delta: columns are images of unit mesh basis
/// functions after one period, advanced by RK4 with `substeps` steps per mesh
/// interval and cubic interpolation for off-grid delayed arguments.
Eigen::MatrixXd brute_force_monodromy(const model::PeriodicDelaySystem& sys,
                                      const model::CommensurateGrid& grid,
                                      std::span<const double> params, int mesh_n,
                                      int substeps);

/// Eigenvalues of brute_force_monodromy, sorted by descending modulus.
std::vector<cxd> brute_force_multipliers(const model::PeriodicDelaySystem& sys,
                                         const model::CommensurateGrid& grid,
                                         std::span<const double> params,
                                         int mesh_n, int substeps);

}  // namespace floq::oracles
