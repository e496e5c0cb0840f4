#include "floq/oracles.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "floq/support.hpp"

namespace floq::oracles {

// ------------------------------------------------------------- lambert_w ---

namespace {

cxd halley(cxd w, cxd z) {
    for (int it = 0; it < 80; ++it) {
        const cxd ew = std::exp(w);
        const cxd f = w * ew - z;
        if (std::abs(f) <= 1e-15 * std::max(std::abs(z), 1.0)) break;
        const cxd wp1 = w + 1.0;
        if (std::abs(wp1) < 1e-14) break;  // at the branch point W = -1
        const cxd denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        const cxd step = f / denom;
        w -= step;
        if (std::abs(step) <= 1e-16 * std::max(std::abs(w), 1.0)) break;
    }
    return w;
}

}  // namespace

cxd lambert_w(int k, cxd z) {
    if (z == 0.0) {
        if (k == 0) return 0.0;
        throw std::domain_error("lambert_w: z = 0 is a singularity off branch 0");
    }
    const bool on_axis = z.imag() == 0.0;
    // Branch-cut closures follow the counter-clockwise-continuity convention:
    // real z < -1/e sits on branch 0 with Im W > 0, and W_{-1} there is its
    // conjugate; W_{-1} on [-1/e, 0) is real.
    if (k == -1 && on_axis && z.real() < -1.0 / M_E)
        return std::conj(lambert_w(0, z));

    const cxd ez1 = M_E * z + 1.0;
    cxd w0;
    if (k == 0 && std::abs(ez1) < 0.3) {
        const cxd p = std::sqrt(2.0 * ez1);  // principal sqrt picks the sheet
        w0 = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
    } else if (k == 0 && std::abs(z) < 0.5) {
        w0 = z * (1.0 - z + 1.5 * z * z);
    } else if (k == 0) {
        const cxd L = std::log(z);
        w0 = L - std::log(1.0 + L);
    } else if (k == -1 && on_axis && z.real() < 0.0) {
        const double lz = std::log(-z.real());  // z in [-1/e, 0): real branch
        w0 = cxd(lz - std::log(-lz), 0.0);
    } else if ((k == -1 && z.imag() > 0.0 && std::abs(ez1) < 0.3) ||
               (k == 1 && z.imag() < 0.0 && std::abs(ez1) < 0.3)) {
        const cxd p = -std::sqrt(2.0 * ez1);
        w0 = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p;
    } else {
        const cxd L = std::log(z) + cxd(0.0, 2.0 * M_PI * k);
        w0 = L - std::log(L);
    }
    cxd w = halley(w0, z);
    if (on_axis && std::abs(w.imag()) < 1e-13 &&
        (k == 0 ? z.real() >= -1.0 / M_E
                : (k == -1 && z.real() < 0.0 && z.real() >= -1.0 / M_E)))
        w = cxd(w.real(), 0.0);
    return w;
}

// ---------------------------------------------------- scalar char. roots ---

double integrate_scalar_coeff(const model::PeriodicDelaySystem& sys, int j,
                              std::span<const double> params) {
    // 8-point Gauss-Legendre on [-1, 1]
    static const double gx[4] = {0.18343464249564980, 0.52553240991632899,
                                 0.79666647741362674, 0.96028985649753623};
    static const double gw[4] = {0.36268378337836198, 0.31370664587788729,
                                 0.22238103445337447, 0.10122853629037626};
    const int panels = 64;
    const double hp = sys.T / panels;
    Eigen::MatrixXd a;
    double total = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = (p + 0.5) * hp;
        for (int q = 0; q < 4; ++q) {
            for (double sgn : {-1.0, 1.0}) {
                sys.coeffs[static_cast<std::size_t>(j)].eval_dense(
                    mid + sgn * gx[q] * hp / 2.0, params, a);
                total += gw[q] * (hp / 2.0) * a(0, 0);
            }
        }
    }
    return total;
}

std::vector<cxd> scalar_characteristic_roots(std::span<const double> a,
                                             std::span<const cxd> seeds,
                                             double tol, int max_iter) {
    std::vector<cxd> roots;
    for (cxd mu : seeds) {
        bool ok = false;
        for (int it = 0; it < max_iter; ++it) {
            if (std::abs(mu) < 1e-14) break;
            cxd s = 0.0, ds = 0.0;
            for (std::size_t j = 0; j < a.size(); ++j) {
                const cxd mj = std::pow(mu, -static_cast<double>(j));
                s += mj * a[j];
                ds += -static_cast<double>(j) * mj / mu * a[j];
            }
            const cxd es = std::exp(s);
            const cxd g = es - mu;
            if (std::abs(g) <= tol * std::max(1.0, std::abs(mu))) {
                ok = true;
                break;
            }
            const cxd dg = es * ds - 1.0;
            if (std::abs(dg) < 1e-300) break;
            mu -= g / dg;
        }
        if (!ok) continue;
        bool dup = false;
        for (cxd r : roots)
            if (std::abs(r - mu) <= 1e-8 * std::max(1.0, std::abs(r))) dup = true;
        if (!dup) roots.push_back(mu);
    }
    std::sort(roots.begin(), roots.end(),
              [](cxd x, cxd y) { return std::abs(x) > std::abs(y); });
    return roots;
}

// ------------------------------------------------- brute-force monodromy ---

namespace {

// cubic Lagrange through the four mesh points around x (clamped at the ends);
// values[i] is the sample at grid index i
template <typename Getter>
Eigen::VectorXd cubic_interp(double x, int npoints, int dim, Getter&& value_at) {
    int i1 = static_cast<int>(std::floor(x));
    int i0 = std::clamp(i1 - 1, 0, npoints - 4);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim);
    double w[4];
    for (int a = 0; a < 4; ++a) {
        w[a] = 1.0;
        for (int b = 0; b < 4; ++b)
            if (b != a)
                w[a] *= (x - (i0 + b)) / static_cast<double>(a - b);
    }
    for (int a = 0; a < 4; ++a) out += w[a] * value_at(i0 + a);
    return out;
}

}  // namespace

Eigen::MatrixXd brute_force_monodromy(const model::PeriodicDelaySystem& sys,
                                      const model::CommensurateGrid& grid,
                                      std::span<const double> params, int mesh_n,
                                      int substeps) {
    if (mesh_n < 4 && grid.n_h > 0)
        throw std::invalid_argument("brute_force_monodromy: mesh too coarse");
    std::vector<double> defaults;
    if (params.empty() && sys.num_params() > 0) {
        defaults.assign(sys.param_defaults.data(),
                        sys.param_defaults.data() + sys.param_defaults.size());
        params = defaults;
    }
    const int d = sys.d;
    const int h = sys.h();
    const int mesh_pts = grid.n_h * mesh_n + 1;  // on [-tau_h, 0]
    const int dim = mesh_pts * d;
    const double gstep = grid.n_h > 0 ? grid.delta / mesh_n : 0.0;
    const double hf = grid.n_h > 0 ? gstep / substeps : sys.T / (mesh_n * substeps);
    const int fine_per_mesh = substeps;
    const int total_steps = grid.n_h > 0
                                ? grid.N * mesh_n * substeps
                                : mesh_n * substeps;  // pure ODE fallback

    std::optional<Eigen::SparseLU<Eigen::SparseMatrix<double>>> mass_lu;
    if (sys.mass) {
        mass_lu.emplace();
        Eigen::SparseMatrix<double> m = *sys.mass;
        m.makeCompressed();
        mass_lu->compute(m);
        if (mass_lu->info() != Eigen::Success)
            throw model::InvalidMass("mass matrix is singular");
    }

    Eigen::MatrixXd R(dim, dim);

    support::parallel_for(static_cast<std::size_t>(dim), [&](std::size_t col) {
        const int p0 = static_cast<int>(col) / d;
        const int c0 = static_cast<int>(col) % d;

        Eigen::MatrixXd mesh_vals = Eigen::MatrixXd::Zero(d, mesh_pts);
        mesh_vals(c0, p0) = 1.0;

        // trajectory on the fine grid over [0, T]
        Eigen::MatrixXd traj = Eigen::MatrixXd::Zero(d, total_steps + 1);
        traj.col(0) = mesh_vals.col(mesh_pts - 1);

        // delayed value at time th (fine index space when th > 0)
        auto delayed = [&](double th) -> Eigen::VectorXd {
            if (th <= 0.0) {
                const double x = (th + grid.n_h * grid.delta) / gstep;
                if (mesh_pts == 1) return mesh_vals.col(0);
                return cubic_interp(x, mesh_pts, d,
                                    [&](int i) { return mesh_vals.col(i); });
            }
            const double x = th / hf;
            const double xr = std::round(x);
            if (std::abs(x - xr) < 1e-9)  // exact fine-grid hit
                return traj.col(static_cast<int>(xr));
            return cubic_interp(x, total_steps + 1, d,
                                [&](int i) { return traj.col(i); });
        };

        Eigen::MatrixXd a(d, d);
        auto rhs = [&](double t, const Eigen::VectorXd& x) -> Eigen::VectorXd {
            Eigen::VectorXd f = Eigen::VectorXd::Zero(d);
            for (int j = 0; j <= h; ++j) {
                sys.coeffs[static_cast<std::size_t>(j)].eval_dense(t, params, a);
                f += a * (j == 0 ? x : delayed(t - sys.delays[static_cast<std::size_t>(j)]));
            }
            if (mass_lu) f = mass_lu->solve(f);
            return f;
        };

        for (int i = 0; i < total_steps; ++i) {
            const double t = i * hf;
            const Eigen::VectorXd& x = traj.col(i);
            const Eigen::VectorXd k1 = rhs(t, x);
            const Eigen::VectorXd k2 = rhs(t + hf / 2, x + (hf / 2) * k1);
            const Eigen::VectorXd k3 = rhs(t + hf / 2, x + (hf / 2) * k2);
            const Eigen::VectorXd k4 = rhs(t + hf, x + hf * k3);
            traj.col(i + 1) = x + (hf / 6) * (k1 + 2 * k2 + 2 * k3 + k4);
        }

        // rows: values on the mesh over [T - tau_h, T]; with tau_h > T the
        // early points never leave the original history, shifted one period
        for (int p = 0; p < mesh_pts; ++p) {
            const int idx = total_steps - (mesh_pts - 1 - p) * fine_per_mesh;
            if (idx < 0)
                R.block(p * d, static_cast<Eigen::Index>(col), d, 1) =
                    mesh_vals.col(p + grid.N * mesh_n);
            else
                R.block(p * d, static_cast<Eigen::Index>(col), d, 1) = traj.col(idx);
        }
    });
    return R;
}

std::vector<cxd> brute_force_multipliers(const model::PeriodicDelaySystem& sys,
                                         const model::CommensurateGrid& grid,
                                         std::span<const double> params,
                                         int mesh_n, int substeps) {
    const Eigen::MatrixXd R = brute_force_monodromy(sys, grid, params, mesh_n, substeps);
    Eigen::EigenSolver<Eigen::MatrixXd> es(R, false);
    std::vector<cxd> mus(static_cast<std::size_t>(R.rows()));
    for (Eigen::Index i = 0; i < R.rows(); ++i) mus[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
    std::sort(mus.begin(), mus.end(),
              [](cxd x, cxd y) { return std::abs(x) > std::abs(y); });
    return mus;
}

}  // namespace floq::oracles
