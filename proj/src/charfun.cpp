#include "floq/charfun.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "floq/kernels.hpp"
#include "floq/support.hpp"

namespace floq::charfun {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;
using support::euclid_mod_int;
using support::floor_div;

namespace {

void check_pivots(const Eigen::PartialPivLU<MatrixXcd>& lu) {
    const auto& m = lu.matrixLU();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double a = std::abs(m(i, i));
        if (!(a > 0.0) || !std::isfinite(a))
            throw SingularStep("singular step matrix in the time integration");
    }
}

void check_info(Eigen::ComputationInfo info) {
    if (info != Eigen::Success)
        throw SingularStep("singular step matrix in the time integration");
}

}  // namespace

CharEvalContext::CharEvalContext(const model::PeriodicDelaySystem& sys,
                                 const model::CommensurateGrid& grid,
                                 const VectorXd& params, Scheme scheme,
                                 double delta)
    : sys_(sys), grid_(grid), params_(params), scheme_(scheme) {
    sys_.validate();
    d_ = sys_.d;
    N_ = grid_.N;
    if (N_ <= 0 || grid_.n.size() != sys_.delays.size() || grid_.n[0] != 0)
        throw std::invalid_argument("grid does not match the system's delays");
    if (params_.size() == 0) params_ = sys_.param_defaults;
    if (params_.size() != sys_.num_params())
        throw std::invalid_argument("parameter count mismatch");
    if (!(delta > 0.0) || delta > 0.5)
        throw std::invalid_argument("integration step must lie in (0, 0.5]");
    K_ = static_cast<int>(std::ceil(1.0 / delta - 1e-9));
    hs_ = 1.0 / K_;
    delta_ = grid_.delta;
    amax_ = static_cast<int>(-floor_div(-grid_.n_h, N_));

    const int h = sys_.h();
    a_tab_.assign(N_, std::vector<int>(h + 1, 0));
    b_tab_.assign(N_, std::vector<int>(h + 1, 0));
    decoupled_ = true;
    for (int j = 0; j <= h; ++j) decoupled_ = decoupled_ && grid_.n[j] % N_ == 0;
    for (int n = 1; n <= N_; ++n)
        for (int j = 0; j <= h; ++j) {
            const long long k = n - grid_.n[j];
            a_tab_[n - 1][j] = static_cast<int>(floor_div(k - 1, N_));
            b_tab_[n - 1][j] = static_cast<int>(euclid_mod_int(k - 1, N_)) + 1;
        }

    sparse_steps_ = d_ > 64;
    steps_tfree_ = true;
    for (const auto& cf : sys_.coeffs) {
        sparse_steps_ = sparse_steps_ || cf.prefer_sparse();
        steps_tfree_ = steps_tfree_ && !cf.depends_on_t();
    }

    plans_ = build_plans(sys_.coeffs);
    param_plans_.resize(sys_.num_params());
    for (int jp = 0; jp < sys_.num_params(); ++jp) {
        std::vector<model::Coeff> dcf;
        dcf.reserve(sys_.coeffs.size());
        for (const auto& cf : sys_.coeffs) dcf.push_back(cf.param_derivative(jp));
        param_plans_[jp] = build_plans(dcf);
    }

    if (sys_.mass) {
        has_mass_ = true;
        mass_ = *sys_.mass;
        mass_.makeCompressed();
        mass_t_ = mass_.transpose();
        mass_t_.makeCompressed();
        mass_dense_ = MatrixXd(mass_);
        mass_lu_.emplace();
        mass_lu_->compute(mass_);
        if (mass_lu_->info() != Eigen::Success)
            throw model::InvalidMass("mass matrix is singular");
        mass_lu_t_.emplace();
        mass_lu_t_->compute(mass_t_);
        if (mass_lu_t_->info() != Eigen::Success)
            throw model::InvalidMass("mass matrix is singular");
    }
}

auto CharEvalContext::build_plans(const std::vector<model::Coeff>& coeffs) const
    -> std::vector<CoeffPlan> {
    std::vector<CoeffPlan> plans;
    plans.reserve(coeffs.size());
    const std::span<const double> kv(params_.data(),
                                     static_cast<size_t>(params_.size()));
    for (const auto& cf : coeffs) {
        CoeffPlan plan;
        MatrixXd acc = MatrixXd::Zero(d_, d_);
        for (const auto& term : cf.terms()) {
            if (!term.scale.depends_on_t()) {
                const double w = term.scale.eval(0.0, kv);
                if (w != 0.0)
                    for (int oc = 0; oc < term.mat.outerSize(); ++oc)
                        for (Eigen::SparseMatrix<double>::InnerIterator it(term.mat,
                                                                           oc);
                             it; ++it)
                            acc(it.row(), it.col()) += w * it.value();
                continue;
            }
            PlanTerm pt;
            pt.sparse = sparse_steps_;
            if (pt.sparse) {
                for (int oc = 0; oc < term.mat.outerSize(); ++oc)
                    for (Eigen::SparseMatrix<double>::InnerIterator it(term.mat, oc);
                         it; ++it) {
                        pt.sp.r.push_back(static_cast<int>(it.row()));
                        pt.sp.c.push_back(static_cast<int>(it.col()));
                        pt.sp.v.push_back(it.value());
                    }
            } else {
                pt.dm = MatrixXd(term.mat);
            }
            pt.vals.resize(2 * K_ + 1, N_);
            for (int n = 1; n <= N_; ++n)
                for (int m = 0; m <= 2 * K_; ++m) {
                    const double t = (n - 1 + 0.5 * hs_ * m) * delta_;
                    pt.vals(m, n - 1) = term.scale.eval(cf.map_time(t), kv);
                }
            plan.tdep.push_back(std::move(pt));
        }
        plan.has_static = (acc.array() != 0.0).any();
        if (plan.has_static) {
            plan.static_sparse = sparse_steps_;
            if (plan.static_sparse) {
                for (int r = 0; r < d_; ++r)
                    for (int c = 0; c < d_; ++c)
                        if (acc(r, c) != 0.0) {
                            plan.ssp.r.push_back(r);
                            plan.ssp.c.push_back(c);
                            plan.ssp.v.push_back(acc(r, c));
                        }
            } else {
                plan.sdm = acc;
            }
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

auto CharEvalContext::powers(cxd mu) const -> MuPowers {
    MuPowers p;
    p.pow.assign(amax_ + 1, cxd(1.0, 0.0));
    p.dpow.assign(amax_ + 1, cxd(0.0, 0.0));
    if (amax_ > 0) {
        if (mu == 0.0) throw MuZero("mu = 0: negative powers are undefined");
        const cxd inv = 1.0 / mu;
        for (int i = 1; i <= amax_; ++i) {
            p.pow[i] = p.pow[i - 1] * inv;
            p.dpow[i] = -static_cast<double>(i) * p.pow[i] * inv;
        }
    }
    return p;
}

void CharEvalContext::plan_apply(const CoeffPlan& plan, int m, int n, cxd f,
                                 const cxd* x, cxd* y, bool transposed) const {
    const auto dense_apply = [&](const RowMat& a, cxd g) {
        if (transposed)
            kernels::matvec_rc_t(static_cast<size_t>(d_), a.data(),
                                 static_cast<size_t>(d_), g, x, y);
        else
            kernels::matvec_rc(static_cast<size_t>(d_), a.data(),
                               static_cast<size_t>(d_), g, x, y);
    };
    const auto sp_apply = [&](const SpMat& s, cxd g) {
        const size_t nz = s.v.size();
        if (transposed)
            for (size_t i = 0; i < nz; ++i) y[s.c[i]] += g * s.v[i] * x[s.r[i]];
        else
            for (size_t i = 0; i < nz; ++i) y[s.r[i]] += g * s.v[i] * x[s.c[i]];
    };
    if (plan.has_static) {
        if (plan.static_sparse)
            sp_apply(plan.ssp, f);
        else
            dense_apply(plan.sdm, f);
    }
    for (const auto& pt : plan.tdep) {
        const double w = pt.vals(m, n - 1);
        if (w == 0.0) continue;
        const cxd g = f * w;
        if (pt.sparse)
            sp_apply(pt.sp, g);
        else
            dense_apply(pt.dm, g);
    }
}

void CharEvalContext::apply_A_node(int m, const MuPowers& p, const cxd* q,
                                   cxd* out) const {
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n) {
        cxd* y = out + static_cast<size_t>(n - 1) * d_;
        for (int j = 0; j <= h; ++j) {
            const cxd f = delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
            const cxd* x = q + static_cast<size_t>(b_tab_[n - 1][j] - 1) * d_;
            plan_apply(plans_[j], m, n, f, x, y, false);
        }
    }
}

void CharEvalContext::apply_AT_node(int m, const MuPowers& p, const cxd* q,
                                    cxd* out) const {
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n) {
        const cxd* x = q + static_cast<size_t>(n - 1) * d_;
        for (int j = 0; j <= h; ++j) {
            const cxd f = delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
            cxd* y = out + static_cast<size_t>(b_tab_[n - 1][j] - 1) * d_;
            plan_apply(plans_[j], m, n, f, x, y, true);
        }
    }
}

void CharEvalContext::apply_Amu_node(int m, const MuPowers& p, const cxd* q,
                                     cxd* out) const {
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n) {
        cxd* y = out + static_cast<size_t>(n - 1) * d_;
        for (int j = 0; j <= h; ++j) {
            const int a = a_tab_[n - 1][j];
            if (a == 0) continue;  // the term carries no mu factor at all
            const cxd f = delta_ * p.dpow[static_cast<size_t>(-a)];
            const cxd* x = q + static_cast<size_t>(b_tab_[n - 1][j] - 1) * d_;
            plan_apply(plans_[j], m, n, f, x, y, false);
        }
    }
}

void CharEvalContext::apply_AmuT_node(int m, const MuPowers& p, const cxd* q,
                                      cxd* out) const {
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n) {
        const cxd* x = q + static_cast<size_t>(n - 1) * d_;
        for (int j = 0; j <= h; ++j) {
            const int a = a_tab_[n - 1][j];
            if (a == 0) continue;
            const cxd f = delta_ * p.dpow[static_cast<size_t>(-a)];
            cxd* y = out + static_cast<size_t>(b_tab_[n - 1][j] - 1) * d_;
            plan_apply(plans_[j], m, n, f, x, y, true);
        }
    }
}

void CharEvalContext::apply_AK_node(int m, const std::vector<CoeffPlan>& plans,
                                    const MuPowers& p, const cxd* q,
                                    cxd* out) const {
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n) {
        cxd* y = out + static_cast<size_t>(n - 1) * d_;
        for (int j = 0; j <= h; ++j) {
            if (plans[j].empty()) continue;
            const cxd f = delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
            const cxd* x = q + static_cast<size_t>(b_tab_[n - 1][j] - 1) * d_;
            plan_apply(plans[j], m, n, f, x, y, false);
        }
    }
}

void CharEvalContext::apply_block(const std::vector<CoeffPlan>& plans, int m,
                                  int n, const MuPowers& p, Pw pw, const cxd* x,
                                  cxd* y, bool transposed) const {
    const int h = sys_.h();
    for (int j = 0; j <= h; ++j) {
        if (plans[j].empty()) continue;
        const int a = a_tab_[n - 1][j];
        if (pw == Pw::dmu && a == 0) continue;
        const cxd f =
            delta_ * (pw == Pw::val ? p.pow[static_cast<size_t>(-a)]
                                    : p.dpow[static_cast<size_t>(-a)]);
        plan_apply(plans[j], m, n, f, x, y, transposed);
    }
}

void CharEvalContext::plan_add_dense(const CoeffPlan& plan, int m, int n, cxd f,
                                     MatrixXcd& tgt, int r0, int c0) const {
    if (plan.has_static) {
        if (plan.static_sparse) {
            for (size_t i = 0; i < plan.ssp.v.size(); ++i)
                tgt(r0 + plan.ssp.r[i], c0 + plan.ssp.c[i]) += f * plan.ssp.v[i];
        } else {
            tgt.block(r0, c0, d_, d_) += f * plan.sdm.cast<cxd>();
        }
    }
    for (const auto& pt : plan.tdep) {
        const cxd g = f * pt.vals(m, n - 1);
        if (g == 0.0) continue;
        if (pt.sparse) {
            for (size_t i = 0; i < pt.sp.v.size(); ++i)
                tgt(r0 + pt.sp.r[i], c0 + pt.sp.c[i]) += g * pt.sp.v[i];
        } else {
            tgt.block(r0, c0, d_, d_) += g * pt.dm.cast<cxd>();
        }
    }
}

void CharEvalContext::plan_add_triplets(
    const CoeffPlan& plan, int m, int n, cxd f, int r0, int c0,
    std::vector<Eigen::Triplet<cxd>>& out) const {
    if (plan.has_static) {
        for (size_t i = 0; i < plan.ssp.v.size(); ++i)
            out.emplace_back(r0 + plan.ssp.r[i], c0 + plan.ssp.c[i],
                             f * plan.ssp.v[i]);
    }
    // zero values are kept so the sparsity pattern is node-independent
    for (const auto& pt : plan.tdep) {
        const cxd g = f * pt.vals(m, n - 1);
        for (size_t i = 0; i < pt.sp.v.size(); ++i)
            out.emplace_back(r0 + pt.sp.r[i], c0 + pt.sp.c[i], g * pt.sp.v[i]);
    }
}

void CharEvalContext::assemble_block_dense(int m, int n, const MuPowers& p,
                                           cxd coef, MatrixXcd& M) const {
    M.setZero(d_, d_);
    const int h = sys_.h();
    for (int j = 0; j <= h; ++j) {
        const cxd f =
            coef * delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
        plan_add_dense(plans_[j], m, n, f, M, 0, 0);
    }
    if (has_mass_)
        M += mass_dense_.cast<cxd>();
    else
        M.diagonal().array() += 1.0;
}

void CharEvalContext::assemble_block_sp(
    int m, int n, const MuPowers& p, cxd coef, Eigen::SparseMatrix<cxd>& M,
    std::vector<Eigen::Triplet<cxd>>& scratch) const {
    scratch.clear();
    const int h = sys_.h();
    for (int j = 0; j <= h; ++j) {
        const cxd f =
            coef * delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
        plan_add_triplets(plans_[j], m, n, f, 0, 0, scratch);
    }
    if (has_mass_) {
        for (int oc = 0; oc < mass_.outerSize(); ++oc)
            for (Eigen::SparseMatrix<double>::InnerIterator it(mass_, oc); it;
                 ++it)
                scratch.emplace_back(static_cast<int>(it.row()),
                                     static_cast<int>(it.col()),
                                     cxd(it.value(), 0.0));
    } else {
        for (int i = 0; i < d_; ++i) scratch.emplace_back(i, i, cxd(1.0, 0.0));
    }
    M.resize(d_, d_);
    M.setFromTriplets(scratch.begin(), scratch.end());
}

void CharEvalContext::assemble_full_dense(int m, const MuPowers& p, cxd coef,
                                          MatrixXcd& M) const {
    const int nd_ = nd();
    M.setZero(nd_, nd_);
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n)
        for (int j = 0; j <= h; ++j) {
            const cxd f =
                coef * delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
            plan_add_dense(plans_[j], m, n, f, M, (n - 1) * d_,
                           (b_tab_[n - 1][j] - 1) * d_);
        }
    for (int n = 0; n < N_; ++n) {
        if (has_mass_)
            M.block(n * d_, n * d_, d_, d_) += mass_dense_.cast<cxd>();
        else
            M.block(n * d_, n * d_, d_, d_).diagonal().array() += 1.0;
    }
}

void CharEvalContext::assemble_full_sp(
    int m, const MuPowers& p, cxd coef, Eigen::SparseMatrix<cxd>& M,
    std::vector<Eigen::Triplet<cxd>>& scratch) const {
    const int nd_ = nd();
    scratch.clear();
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n)
        for (int j = 0; j <= h; ++j) {
            const cxd f =
                coef * delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
            plan_add_triplets(plans_[j], m, n, f, (n - 1) * d_,
                              (b_tab_[n - 1][j] - 1) * d_, scratch);
        }
    for (int n = 0; n < N_; ++n) {
        if (has_mass_) {
            for (int oc = 0; oc < mass_.outerSize(); ++oc)
                for (Eigen::SparseMatrix<double>::InnerIterator it(mass_, oc); it;
                     ++it)
                    scratch.emplace_back(n * d_ + static_cast<int>(it.row()),
                                         n * d_ + static_cast<int>(it.col()),
                                         cxd(it.value(), 0.0));
        } else {
            for (int i = 0; i < d_; ++i)
                scratch.emplace_back(n * d_ + i, n * d_ + i, cxd(1.0, 0.0));
        }
    }
    M.resize(nd_, nd_);
    M.setFromTriplets(scratch.begin(), scratch.end());
}

void CharEvalContext::mass_block_mul(const cxd* x, cxd* y) const {
    if (!has_mass_) {
        std::copy(x, x + d_, y);
        return;
    }
    std::fill(y, y + d_, cxd(0.0, 0.0));
    for (int oc = 0; oc < mass_.outerSize(); ++oc)
        for (Eigen::SparseMatrix<double>::InnerIterator it(mass_, oc); it; ++it)
            y[it.row()] += it.value() * x[it.col()];
}

void CharEvalContext::mass_block_mul_t(const cxd* x, cxd* y) const {
    if (!has_mass_) {
        std::copy(x, x + d_, y);
        return;
    }
    std::fill(y, y + d_, cxd(0.0, 0.0));
    for (int oc = 0; oc < mass_.outerSize(); ++oc)
        for (Eigen::SparseMatrix<double>::InnerIterator it(mass_, oc); it; ++it)
            y[it.col()] += it.value() * x[it.row()];
}

void CharEvalContext::mass_mul(const VectorXcd& x, VectorXcd& y) const {
    y.resize(x.size());
    for (int n = 0; n < N_; ++n)
        mass_block_mul(x.data() + static_cast<size_t>(n) * d_,
                       y.data() + static_cast<size_t>(n) * d_);
}

void CharEvalContext::solve_mass(VectorXcd& x) const {
    if (!has_mass_) return;
    VectorXd re(d_), im(d_);
    for (int n = 0; n < N_; ++n) {
        auto seg = x.segment(n * d_, d_);
        re = seg.real();
        im = seg.imag();
        const VectorXd sre = mass_lu_->solve(re);
        const VectorXd sim = mass_lu_->solve(im);
        seg.real() = sre;
        seg.imag() = sim;
    }
}

void CharEvalContext::solve_mass_t(VectorXcd& x) const {
    if (!has_mass_) return;
    VectorXd re(d_), im(d_);
    for (int n = 0; n < N_; ++n) {
        auto seg = x.segment(n * d_, d_);
        re = seg.real();
        im = seg.imag();
        const VectorXd sre = mass_lu_t_->solve(re);
        const VectorXd sim = mass_lu_t_->solve(im);
        seg.real() = sre;
        seg.imag() = sim;
    }
}

VectorXcd CharEvalContext::apply_A(double s, cxd mu, const VectorXcd& q) const {
    if (q.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    const MuPowers p = powers(mu);
    VectorXcd out = VectorXcd::Zero(nd());
    MatrixXd c;
    const std::span<const double> kv(params_.data(),
                                     static_cast<size_t>(params_.size()));
    const int h = sys_.h();
    for (int n = 1; n <= N_; ++n)
        for (int j = 0; j <= h; ++j) {
            sys_.coeffs[j].eval_dense((s + n - 1) * delta_, kv, c);
            const cxd f = delta_ * p.pow[static_cast<size_t>(-a_tab_[n - 1][j])];
            const auto src = q.segment((b_tab_[n - 1][j] - 1) * d_, d_);
            const VectorXd xr = src.real(), xi = src.imag();
            const VectorXd yr = c * xr, yi = c * xi;
            auto dst = out.segment((n - 1) * d_, d_);
            dst.real() += (f.real() * yr - f.imag() * yi).eval();
            dst.imag() += (f.real() * yi + f.imag() * yr).eval();
        }
    return out;
}

VectorXcd CharEvalContext::apply_B(cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    VectorXcd out(nd());
    for (int n = 1; n < N_; ++n)
        out.segment((n - 1) * d_, d_) = v.segment(n * d_, d_);
    out.segment((N_ - 1) * d_, d_) = mu * v.head(d_);
    return out;
}

VectorXcd CharEvalContext::apply_B_transpose(cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    VectorXcd out(nd());
    out.head(d_) = mu * v.segment((N_ - 1) * d_, d_);
    for (int n = 2; n <= N_; ++n)
        out.segment((n - 1) * d_, d_) = v.segment((n - 2) * d_, d_);
    return out;
}

void CharEvalContext::integrate_forward(const MuPowers& p, VectorXcd& q,
                                        VectorXcd* qmu, VectorXcd* qk,
                                        const std::vector<CoeffPlan>* kplans,
                                        MatrixXcd* snaps) const {
    if (scheme_ == Scheme::rk4)
        rk4_forward(p, q, qmu, qk, kplans, snaps);
    else
        trap_forward(p, q, qmu, qk, kplans, snaps);
}

void CharEvalContext::rk4_forward(const MuPowers& p, VectorXcd& q,
                                  VectorXcd* qmu, VectorXcd* qk,
                                  const std::vector<CoeffPlan>* kplans,
                                  MatrixXcd* snaps) const {
    const int nd_ = nd();
    const size_t un = static_cast<size_t>(nd_);
    if (snaps) {
        snaps->resize(nd_, K_ + 1);
        snaps->col(0) = q;
    }
    VectorXcd x(nd_), k1(nd_), k2(nd_), k3(nd_), k4(nd_);
    VectorXcd xm, m1, m2, m3, m4, xk, n1, n2, n3, n4;
    if (qmu) {
        xm.resize(nd_);
        m1.resize(nd_); m2.resize(nd_); m3.resize(nd_); m4.resize(nd_);
    }
    if (qk) {
        xk.resize(nd_);
        n1.resize(nd_); n2.resize(nd_); n3.resize(nd_); n4.resize(nd_);
    }

    const auto f_q = [&](int m, const VectorXcd& xin, VectorXcd& out) {
        out.setZero();
        apply_A_node(m, p, xin.data(), out.data());
        solve_mass(out);
    };
    const auto f_mu = [&](int m, const VectorXcd& xin, const VectorXcd& xmu,
                          VectorXcd& out) {
        out.setZero();
        apply_Amu_node(m, p, xin.data(), out.data());
        apply_A_node(m, p, xmu.data(), out.data());
        solve_mass(out);
    };
    const auto f_k = [&](int m, const VectorXcd& xin, const VectorXcd& xkv,
                         VectorXcd& out) {
        out.setZero();
        apply_AK_node(m, *kplans, p, xin.data(), out.data());
        apply_A_node(m, p, xkv.data(), out.data());
        solve_mass(out);
    };

    for (int k = 0; k < K_; ++k) {
        const int m0 = 2 * k, mh = 2 * k + 1, m1n = 2 * k + 2;
        f_q(m0, q, k1);
        if (qmu) f_mu(m0, q, *qmu, m1);
        if (qk) f_k(m0, q, *qk, n1);

        kernels::add_scaled(un, q.data(), k1.data(), 0.5 * hs_, x.data());
        if (qmu) kernels::add_scaled(un, qmu->data(), m1.data(), 0.5 * hs_, xm.data());
        if (qk) kernels::add_scaled(un, qk->data(), n1.data(), 0.5 * hs_, xk.data());
        f_q(mh, x, k2);
        if (qmu) f_mu(mh, x, xm, m2);
        if (qk) f_k(mh, x, xk, n2);

        kernels::add_scaled(un, q.data(), k2.data(), 0.5 * hs_, x.data());
        if (qmu) kernels::add_scaled(un, qmu->data(), m2.data(), 0.5 * hs_, xm.data());
        if (qk) kernels::add_scaled(un, qk->data(), n2.data(), 0.5 * hs_, xk.data());
        f_q(mh, x, k3);
        if (qmu) f_mu(mh, x, xm, m3);
        if (qk) f_k(mh, x, xk, n3);

        kernels::add_scaled(un, q.data(), k3.data(), hs_, x.data());
        if (qmu) kernels::add_scaled(un, qmu->data(), m3.data(), hs_, xm.data());
        if (qk) kernels::add_scaled(un, qk->data(), n3.data(), hs_, xk.data());
        f_q(m1n, x, k4);
        if (qmu) f_mu(m1n, x, xm, m4);
        if (qk) f_k(m1n, x, xk, n4);

        kernels::rk4_combine(un, q.data(), k1.data(), k2.data(), k3.data(),
                             k4.data(), hs_, q.data());
        if (qmu)
            kernels::rk4_combine(un, qmu->data(), m1.data(), m2.data(), m3.data(),
                                 m4.data(), hs_, qmu->data());
        if (qk)
            kernels::rk4_combine(un, qk->data(), n1.data(), n2.data(), n3.data(),
                                 n4.data(), hs_, qk->data());
        if (snaps) snaps->col(k + 1) = q;
    }
}

void CharEvalContext::trap_forward(const MuPowers& p, VectorXcd& q,
                                   VectorXcd* qmu, VectorXcd* qk,
                                   const std::vector<CoeffPlan>* kplans,
                                   MatrixXcd* snaps) const {
    const int nd_ = nd();
    const double c = 0.5 * hs_;
    if (snaps) {
        snaps->resize(nd_, K_ + 1);
        snaps->col(0) = q;
    }

    if (decoupled_) {
        // block-diagonal grid: every block integrates independently with its
        // own d x d step matrices
        VectorXcd rhs(d_), rmu(d_), rk_(d_), tmp(d_), bq(d_), bm(d_), bk(d_);
        MatrixXcd Mstep(d_, d_);
        Eigen::SparseMatrix<cxd> Msp;
        std::vector<Eigen::Triplet<cxd>> scratch;
        for (int n = 1; n <= N_; ++n) {
            auto qn = q.segment((n - 1) * d_, d_);
            bq = qn;
            if (qmu) bm = qmu->segment((n - 1) * d_, d_);
            if (qk) bk = qk->segment((n - 1) * d_, d_);
            Eigen::PartialPivLU<MatrixXcd> lu;
            Eigen::SparseLU<Eigen::SparseMatrix<cxd>> slu;
            for (int k = 0; k < K_; ++k) {
                const int m0 = 2 * k, m1 = 2 * k + 2;
                // right-hand sides from the state at the old node
                mass_block_mul(bq.data(), rhs.data());
                tmp.setZero();
                apply_block(plans_, m0, n, p, Pw::val, bq.data(), tmp.data(), false);
                rhs += c * tmp;
                if (qmu) {
                    mass_block_mul(bm.data(), rmu.data());
                    tmp.setZero();
                    apply_block(plans_, m0, n, p, Pw::val, bm.data(), tmp.data(), false);
                    rmu += c * tmp;
                    tmp.setZero();
                    apply_block(plans_, m0, n, p, Pw::dmu, bq.data(), tmp.data(), false);
                    rmu += c * tmp;
                }
                if (qk) {
                    mass_block_mul(bk.data(), rk_.data());
                    tmp.setZero();
                    apply_block(plans_, m0, n, p, Pw::val, bk.data(), tmp.data(), false);
                    rk_ += c * tmp;
                    tmp.setZero();
                    apply_block(*kplans, m0, n, p, Pw::val, bq.data(), tmp.data(), false);
                    rk_ += c * tmp;
                }
                const bool refactor = !steps_tfree_ || k == 0;
                if (sparse_steps_) {
                    if (refactor) {
                        assemble_block_sp(m1, n, p, cxd(-c, 0.0), Msp, scratch);
                        slu.compute(Msp);
                        check_info(slu.info());
                    }
                    bq = slu.solve(rhs);
                } else {
                    if (refactor) {
                        assemble_block_dense(m1, n, p, cxd(-c, 0.0), Mstep);
                        lu.compute(Mstep);
                        check_pivots(lu);
                    }
                    bq = lu.solve(rhs);
                }
                if (qmu) {
                    tmp.setZero();
                    apply_block(plans_, m1, n, p, Pw::dmu, bq.data(), tmp.data(), false);
                    rmu += c * tmp;
                    bm = sparse_steps_ ? VectorXcd(slu.solve(rmu))
                                       : VectorXcd(lu.solve(rmu));
                }
                if (qk) {
                    tmp.setZero();
                    apply_block(*kplans, m1, n, p, Pw::val, bq.data(), tmp.data(), false);
                    rk_ += c * tmp;
                    bk = sparse_steps_ ? VectorXcd(slu.solve(rk_))
                                       : VectorXcd(lu.solve(rk_));
                }
                if (snaps) snaps->col(k + 1).segment((n - 1) * d_, d_) = bq;
            }
            qn = bq;
            if (qmu) qmu->segment((n - 1) * d_, d_) = bm;
            if (qk) qk->segment((n - 1) * d_, d_) = bk;
        }
        return;
    }

    // coupled blocks: one N*d x N*d step system
    const bool big_dense = !sparse_steps_ && nd_ <= 400;
    VectorXcd rhs(nd_), rmu(nd_), rk_(nd_), tmp(nd_);
    MatrixXcd Mstep;
    Eigen::SparseMatrix<cxd> Msp;
    std::vector<Eigen::Triplet<cxd>> scratch;
    Eigen::PartialPivLU<MatrixXcd> lu;
    Eigen::SparseLU<Eigen::SparseMatrix<cxd>> slu;
    for (int k = 0; k < K_; ++k) {
        const int m0 = 2 * k, m1 = 2 * k + 2;
        mass_mul(q, rhs);
        tmp.setZero();
        apply_A_node(m0, p, q.data(), tmp.data());
        rhs += c * tmp;
        if (qmu) {
            mass_mul(*qmu, rmu);
            tmp.setZero();
            apply_A_node(m0, p, qmu->data(), tmp.data());
            rmu += c * tmp;
            tmp.setZero();
            apply_Amu_node(m0, p, q.data(), tmp.data());
            rmu += c * tmp;
        }
        if (qk) {
            mass_mul(*qk, rk_);
            tmp.setZero();
            apply_A_node(m0, p, qk->data(), tmp.data());
            rk_ += c * tmp;
            tmp.setZero();
            apply_AK_node(m0, *kplans, p, q.data(), tmp.data());
            rk_ += c * tmp;
        }
        const bool refactor = !steps_tfree_ || k == 0;
        if (big_dense) {
            if (refactor) {
                assemble_full_dense(m1, p, cxd(-c, 0.0), Mstep);
                lu.compute(Mstep);
                check_pivots(lu);
            }
            q = lu.solve(rhs);
        } else {
            if (refactor) {
                assemble_full_sp(m1, p, cxd(-c, 0.0), Msp, scratch);
                slu.compute(Msp);
                check_info(slu.info());
            }
            q = slu.solve(rhs);
        }
        if (qmu) {
            tmp.setZero();
            apply_Amu_node(m1, p, q.data(), tmp.data());
            rmu += c * tmp;
            *qmu = big_dense ? VectorXcd(lu.solve(rmu)) : VectorXcd(slu.solve(rmu));
        }
        if (qk) {
            tmp.setZero();
            apply_AK_node(m1, *kplans, p, q.data(), tmp.data());
            rk_ += c * tmp;
            *qk = big_dense ? VectorXcd(lu.solve(rk_)) : VectorXcd(slu.solve(rk_));
        }
        if (snaps) snaps->col(k + 1) = q;
    }
}

VectorXcd CharEvalContext::trap_backward(const MuPowers& p, const VectorXcd& v,
                                         VectorXcd* wmu) const {
    // w_k = (E^T + c A_k^T) (E^T - c A_{k+1}^T)^{-1} w_{k+1} reproduces the
    // adjoint of the forward one-step map exactly, so M_delta(mu) =
    // N_delta(conj mu)^* holds to rounding. The solves reuse the forward step
    // factorizations through their transposes.
    const int nd_ = nd();
    const double c = 0.5 * hs_;
    VectorXcd w = v;
    VectorXcd wm;
    if (wmu) wm = VectorXcd::Zero(nd_);

    if (decoupled_) {
        VectorXcd bw(d_), bm(d_), z(d_), zm(d_), tmp(d_), rhs(d_);
        MatrixXcd Mstep(d_, d_);
        Eigen::SparseMatrix<cxd> Msp;
        std::vector<Eigen::Triplet<cxd>> scratch;
        for (int n = 1; n <= N_; ++n) {
            bw = w.segment((n - 1) * d_, d_);
            if (wmu) bm.setZero();
            Eigen::PartialPivLU<MatrixXcd> lu;
            Eigen::SparseLU<Eigen::SparseMatrix<cxd>> slu;
            bool ready = false;
            for (int k = K_ - 1; k >= 0; --k) {
                const int m0 = 2 * k, m1 = 2 * k + 2;
                const bool refactor = !steps_tfree_ || !ready;
                if (sparse_steps_) {
                    if (refactor) {
                        assemble_block_sp(m1, n, p, cxd(-c, 0.0), Msp, scratch);
                        slu.compute(Msp);
                        check_info(slu.info());
                        ready = true;
                    }
                    z = slu.transpose().solve(bw);
                } else {
                    if (refactor) {
                        assemble_block_dense(m1, n, p, cxd(-c, 0.0), Mstep);
                        lu.compute(Mstep);
                        check_pivots(lu);
                        ready = true;
                    }
                    z = lu.transpose().solve(bw);
                }
                if (wmu) {
                    tmp.setZero();
                    apply_block(plans_, m1, n, p, Pw::dmu, z.data(), tmp.data(), true);
                    rhs = bm + c * tmp;
                    zm = sparse_steps_ ? VectorXcd(slu.transpose().solve(rhs))
                                       : VectorXcd(lu.transpose().solve(rhs));
                    mass_block_mul_t(zm.data(), bm.data());
                    tmp.setZero();
                    apply_block(plans_, m0, n, p, Pw::val, zm.data(), tmp.data(), true);
                    bm += c * tmp;
                    tmp.setZero();
                    apply_block(plans_, m0, n, p, Pw::dmu, z.data(), tmp.data(), true);
                    bm += c * tmp;
                }
                mass_block_mul_t(z.data(), bw.data());
                tmp.setZero();
                apply_block(plans_, m0, n, p, Pw::val, z.data(), tmp.data(), true);
                bw += c * tmp;
            }
            w.segment((n - 1) * d_, d_) = bw;
            if (wmu) wm.segment((n - 1) * d_, d_) = bm;
        }
        if (wmu) *wmu = wm;
        return w;
    }

    const bool big_dense = !sparse_steps_ && nd_ <= 400;
    VectorXcd z(nd_), zm(nd_), tmp(nd_), rhs(nd_), acc(nd_);
    MatrixXcd Mstep;
    Eigen::SparseMatrix<cxd> Msp;
    std::vector<Eigen::Triplet<cxd>> scratch;
    Eigen::PartialPivLU<MatrixXcd> lu;
    Eigen::SparseLU<Eigen::SparseMatrix<cxd>> slu;
    bool ready = false;
    for (int k = K_ - 1; k >= 0; --k) {
        const int m0 = 2 * k, m1 = 2 * k + 2;
        const bool refactor = !steps_tfree_ || !ready;
        if (big_dense) {
            if (refactor) {
                assemble_full_dense(m1, p, cxd(-c, 0.0), Mstep);
                lu.compute(Mstep);
                check_pivots(lu);
                ready = true;
            }
            z = lu.transpose().solve(w);
        } else {
            if (refactor) {
                assemble_full_sp(m1, p, cxd(-c, 0.0), Msp, scratch);
                slu.compute(Msp);
                check_info(slu.info());
                ready = true;
            }
            z = slu.transpose().solve(w);
        }
        if (wmu) {
            tmp.setZero();
            apply_AmuT_node(m1, p, z.data(), tmp.data());
            rhs = wm + c * tmp;
            zm = big_dense ? VectorXcd(lu.transpose().solve(rhs))
                           : VectorXcd(slu.transpose().solve(rhs));
            for (int n = 0; n < N_; ++n)
                mass_block_mul_t(zm.data() + static_cast<size_t>(n) * d_,
                                 wm.data() + static_cast<size_t>(n) * d_);
            tmp.setZero();
            apply_AT_node(m0, p, zm.data(), tmp.data());
            wm += c * tmp;
            tmp.setZero();
            apply_AmuT_node(m0, p, z.data(), tmp.data());
            wm += c * tmp;
        }
        for (int n = 0; n < N_; ++n)
            mass_block_mul_t(z.data() + static_cast<size_t>(n) * d_,
                             acc.data() + static_cast<size_t>(n) * d_);
        tmp.setZero();
        apply_AT_node(m0, p, z.data(), tmp.data());
        w = acc + c * tmp;
    }
    if (wmu) *wmu = wm;
    return w;
}

VectorXcd CharEvalContext::rk4_backward(const MuPowers& p, const VectorXcd& v,
                                        VectorXcd* wmu) const {
    // integrates the transposed equation in the reversed variable: with
    // g(sigma) = p(1-sigma), E^T g' = +A(1-sigma)^T g, g(0) = E^{-T} v; the
    // sigma nodes land on the same cached half-grid, mirrored
    const int nd_ = nd();
    const size_t un = static_cast<size_t>(nd_);
    VectorXcd g = v;
    solve_mass_t(g);
    VectorXcd gm;
    if (wmu) gm = VectorXcd::Zero(nd_);

    VectorXcd x(nd_), k1(nd_), k2(nd_), k3(nd_), k4(nd_);
    VectorXcd xm, m1, m2, m3, m4;
    if (wmu) {
        xm.resize(nd_);
        m1.resize(nd_); m2.resize(nd_); m3.resize(nd_); m4.resize(nd_);
    }
    const auto f_g = [&](int msig, const VectorXcd& xin, VectorXcd& out) {
        out.setZero();
        apply_AT_node(2 * K_ - msig, p, xin.data(), out.data());
        solve_mass_t(out);
    };
    const auto f_gm = [&](int msig, const VectorXcd& xin, const VectorXcd& xmu,
                          VectorXcd& out) {
        out.setZero();
        apply_AmuT_node(2 * K_ - msig, p, xin.data(), out.data());
        apply_AT_node(2 * K_ - msig, p, xmu.data(), out.data());
        solve_mass_t(out);
    };
    for (int k = 0; k < K_; ++k) {
        const int m0 = 2 * k, mh = 2 * k + 1, m1n = 2 * k + 2;
        f_g(m0, g, k1);
        if (wmu) f_gm(m0, g, gm, m1);
        kernels::add_scaled(un, g.data(), k1.data(), 0.5 * hs_, x.data());
        if (wmu) kernels::add_scaled(un, gm.data(), m1.data(), 0.5 * hs_, xm.data());
        f_g(mh, x, k2);
        if (wmu) f_gm(mh, x, xm, m2);
        kernels::add_scaled(un, g.data(), k2.data(), 0.5 * hs_, x.data());
        if (wmu) kernels::add_scaled(un, gm.data(), m2.data(), 0.5 * hs_, xm.data());
        f_g(mh, x, k3);
        if (wmu) f_gm(mh, x, xm, m3);
        kernels::add_scaled(un, g.data(), k3.data(), hs_, x.data());
        if (wmu) kernels::add_scaled(un, gm.data(), m3.data(), hs_, xm.data());
        f_g(m1n, x, k4);
        if (wmu) f_gm(m1n, x, xm, m4);
        kernels::rk4_combine(un, g.data(), k1.data(), k2.data(), k3.data(),
                             k4.data(), hs_, g.data());
        if (wmu)
            kernels::rk4_combine(un, gm.data(), m1.data(), m2.data(), m3.data(),
                                 m4.data(), hs_, gm.data());
    }
    if (has_mass_) {
        VectorXcd w(nd_);
        for (int n = 0; n < N_; ++n)
            mass_block_mul_t(g.data() + static_cast<size_t>(n) * d_,
                             w.data() + static_cast<size_t>(n) * d_);
        g = w;
        if (wmu) {
            for (int n = 0; n < N_; ++n)
                mass_block_mul_t(gm.data() + static_cast<size_t>(n) * d_,
                                 w.data() + static_cast<size_t>(n) * d_);
            gm = w;
        }
    }
    if (wmu) *wmu = gm;
    return g;
}

VectorXcd CharEvalContext::n_action(cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    const MuPowers p = powers(mu);
    VectorXcd q = v;
    integrate_forward(p, q, nullptr, nullptr, nullptr, nullptr);
    return q - apply_B(mu, v);
}

VectorXcd CharEvalContext::dn_dmu_action(cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    const MuPowers p = powers(mu);
    VectorXcd q = v;
    VectorXcd qmu = VectorXcd::Zero(nd());
    integrate_forward(p, q, &qmu, nullptr, nullptr, nullptr);
    qmu.segment((N_ - 1) * d_, d_) -= v.head(d_);  // d/dmu of the B(mu) wrap
    return qmu;
}

VectorXcd CharEvalContext::m_action(cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    const MuPowers p = powers(mu);
    const VectorXcd w = scheme_ == Scheme::trapezoidal
                            ? trap_backward(p, v, nullptr)
                            : rk4_backward(p, v, nullptr);
    return w - apply_B_transpose(mu, v);
}

VectorXcd CharEvalContext::dm_dmu_action(cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    const MuPowers p = powers(mu);
    VectorXcd wmu;
    if (scheme_ == Scheme::trapezoidal)
        trap_backward(p, v, &wmu);
    else
        rk4_backward(p, v, &wmu);
    wmu.head(d_) -= v.segment((N_ - 1) * d_, d_);  // d/dmu of the B^T wrap
    return wmu;
}

MatrixXcd CharEvalContext::n_matrix(cxd mu) const {
    const int nd_ = nd();
    const MuPowers p = powers(mu);
    MatrixXcd Q = MatrixXcd::Identity(nd_, nd_);
    if (scheme_ == Scheme::rk4) {
        MatrixXcd X(nd_, nd_), K1(nd_, nd_), K2(nd_, nd_), K3(nd_, nd_),
            K4(nd_, nd_);
        const auto f_mat = [&](int m, const MatrixXcd& Xin, MatrixXcd& out) {
            out.setZero();
            for (int cidx = 0; cidx < nd_; ++cidx)
                apply_A_node(m, p, Xin.data() + static_cast<size_t>(cidx) * nd_,
                             out.data() + static_cast<size_t>(cidx) * nd_);
            if (has_mass_) {
                VectorXcd col(nd_);
                for (int cidx = 0; cidx < nd_; ++cidx) {
                    col = out.col(cidx);
                    solve_mass(col);
                    out.col(cidx) = col;
                }
            }
        };
        for (int k = 0; k < K_; ++k) {
            const int m0 = 2 * k, mh = 2 * k + 1, m1n = 2 * k + 2;
            f_mat(m0, Q, K1);
            X = Q + (0.5 * hs_) * K1;
            f_mat(mh, X, K2);
            X = Q + (0.5 * hs_) * K2;
            f_mat(mh, X, K3);
            X = Q + hs_ * K3;
            f_mat(m1n, X, K4);
            Q += (hs_ / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4);
        }
    } else {
        const double c = 0.5 * hs_;
        MatrixXcd rhs(nd_, nd_), Mstep;
        Eigen::PartialPivLU<MatrixXcd> lu;
        VectorXcd coltmp(nd_);
        for (int k = 0; k < K_; ++k) {
            const int m0 = 2 * k, m1 = 2 * k + 2;
            rhs.setZero();
            for (int cidx = 0; cidx < nd_; ++cidx) {
                apply_A_node(m0, p, Q.data() + static_cast<size_t>(cidx) * nd_,
                             rhs.data() + static_cast<size_t>(cidx) * nd_);
                mass_mul(Q.col(cidx), coltmp);
                rhs.col(cidx) = c * rhs.col(cidx) + coltmp;
            }
            if (!steps_tfree_ || k == 0) {
                assemble_full_dense(m1, p, cxd(-c, 0.0), Mstep);
                lu.compute(Mstep);
                check_pivots(lu);
            }
            Q = lu.solve(rhs);
        }
    }
    for (int n = 1; n < N_; ++n)
        Q.block((n - 1) * d_, n * d_, d_, d_).diagonal().array() -= 1.0;
    Q.block((N_ - 1) * d_, 0, d_, d_).diagonal().array() -= mu;
    return Q;
}

MatrixXd CharEvalContext::ode_monodromy() const {
    if (sys_.h() != 0 || N_ != 1)
        throw std::logic_error("ode_monodromy requires a delay-free system");
    MatrixXcd Q = n_matrix(cxd(1.0, 0.0));
    Q.diagonal().array() += 1.0;
    return Q.real();
}

auto CharEvalContext::param_derivative_ingredients(cxd mu, const VectorXcd& v,
                                                   int param_index) const
    -> ParamDerivIngredients {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    if (param_index < 0 || param_index >= sys_.num_params())
        throw MissingParamDerivative("parameter index out of range");
    const MuPowers p = powers(mu);
    ParamDerivIngredients out;
    out.q1 = v;
    out.qmu1 = VectorXcd::Zero(nd());
    out.qk1 = VectorXcd::Zero(nd());
    integrate_forward(p, out.q1, &out.qmu1, &out.qk1,
                      &param_plans_[param_index], nullptr);
    return out;
}

EigenfunctionSample CharEvalContext::reconstruct_eigenfunction(
    cxd mu, const VectorXcd& v) const {
    if (v.size() != nd()) throw std::invalid_argument("block vector size mismatch");
    EigenfunctionSample out;
    const int n_h = grid_.n_h;
    if (n_h == 0) {
        out.t = {0.0};
        out.values = v.head(d_);
        return out;
    }
    const MuPowers p = powers(mu);
    VectorXcd q = v;
    MatrixXcd snaps;
    integrate_forward(p, q, nullptr, nullptr, nullptr, &snaps);
    const int count = n_h * K_ + 1;
    out.t.reserve(count);
    out.values.resize(d_, count);
    int idx = 0;
    for (int n = -n_h + 1; n <= 0; ++n) {
        const int a = static_cast<int>(floor_div(n - 1, N_));
        const int b = static_cast<int>(euclid_mod_int(n - 1, N_)) + 1;
        const cxd f = p.pow[static_cast<size_t>(-a)];
        for (int k = 0; k < K_; ++k) {
            out.t.push_back((n - 1 + k * hs_) * delta_);
            out.values.col(idx++) = f * snaps.col(k).segment((b - 1) * d_, d_);
        }
    }
    out.t.push_back(0.0);
    out.values.col(idx) = v.head(d_);  // seam value of the forward segment
    return out;
}

}  // namespace floq::charfun
