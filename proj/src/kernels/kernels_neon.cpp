// NEON backend for aarch64. One 128-bit vector holds a single complex double,
// so the wins here are modest; the matvecs reuse the scalar inner loops.

#include "floq/kernels.hpp"

#if defined(FLOQ_WITH_NEON)

#include <arm_neon.h>

namespace floq::kernels {

namespace {

void axpy_c_neon(std::size_t n, cxd alpha, const cxd* x, cxd* y) {
    const double* xp = reinterpret_cast<const double*>(x);
    double* yp = reinterpret_cast<double*>(y);
    const float64x2_t var = vdupq_n_f64(alpha.real());
    const float64x2_t vsgn = {-alpha.imag(), alpha.imag()};
    for (std::size_t i = 0; i < n; ++i) {
        const float64x2_t vx = vld1q_f64(xp + 2 * i);
        const float64x2_t sw = vextq_f64(vx, vx, 1);
        float64x2_t res = vld1q_f64(yp + 2 * i);
        res = vfmaq_f64(res, vx, var);
        res = vfmaq_f64(res, sw, vsgn);
        vst1q_f64(yp + 2 * i, res);
    }
}

void add_scaled_neon(std::size_t n, const cxd* base, const cxd* k, double c,
                     cxd* out) {
    const double* bp = reinterpret_cast<const double*>(base);
    const double* kp = reinterpret_cast<const double*>(k);
    double* op = reinterpret_cast<double*>(out);
    const float64x2_t vc = vdupq_n_f64(c);
    const std::size_t m = 2 * n;
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2)
        vst1q_f64(op + i, vfmaq_f64(vld1q_f64(bp + i), vld1q_f64(kp + i), vc));
    for (; i < m; ++i) op[i] = bp[i] + c * kp[i];
}

void rk4_combine_neon(std::size_t n, const cxd* base, const cxd* k1,
                      const cxd* k2, const cxd* k3, const cxd* k4, double h,
                      cxd* out) {
    const double w = h / 6.0;
    const double* bp = reinterpret_cast<const double*>(base);
    const double* p1 = reinterpret_cast<const double*>(k1);
    const double* p2 = reinterpret_cast<const double*>(k2);
    const double* p3 = reinterpret_cast<const double*>(k3);
    const double* p4 = reinterpret_cast<const double*>(k4);
    double* op = reinterpret_cast<double*>(out);
    const float64x2_t vw = vdupq_n_f64(w);
    const float64x2_t two = vdupq_n_f64(2.0);
    const std::size_t m = 2 * n;
    std::size_t i = 0;
    for (; i + 2 <= m; i += 2) {
        float64x2_t sum = vaddq_f64(vld1q_f64(p1 + i), vld1q_f64(p4 + i));
        sum = vfmaq_f64(sum, vaddq_f64(vld1q_f64(p2 + i), vld1q_f64(p3 + i)), two);
        vst1q_f64(op + i, vfmaq_f64(vld1q_f64(bp + i), sum, vw));
    }
    for (; i < m; ++i)
        op[i] = bp[i] + w * (p1[i] + 2.0 * p2[i] + 2.0 * p3[i] + p4[i]);
}

void matvec_rc_neon(std::size_t d, const double* a, std::size_t lda, cxd alpha,
                    const cxd* x, cxd* y) {
    const double* xp = reinterpret_cast<const double*>(x);
    const double ar = alpha.real(), ai = alpha.imag();
    for (std::size_t i = 0; i < d; ++i) {
        const double* row = a + i * lda;
        float64x2_t acc = vdupq_n_f64(0.0);
        for (std::size_t j = 0; j < d; ++j)
            acc = vfmaq_f64(acc, vdupq_n_f64(row[j]), vld1q_f64(xp + 2 * j));
        const double sr = vgetq_lane_f64(acc, 0), si = vgetq_lane_f64(acc, 1);
        y[i] += cxd(ar * sr - ai * si, ar * si + ai * sr);
    }
}

void matvec_rc_t_neon(std::size_t d, const double* a, std::size_t lda, cxd alpha,
                      const cxd* x, cxd* y) {
    double* yp = reinterpret_cast<double*>(y);
    for (std::size_t j = 0; j < d; ++j) {
        const cxd c = alpha * x[j];
        const float64x2_t vc = {c.real(), c.imag()};
        const double* row = a + j * lda;
        for (std::size_t i = 0; i < d; ++i) {
            float64x2_t vy = vld1q_f64(yp + 2 * i);
            vst1q_f64(yp + 2 * i, vfmaq_f64(vy, vdupq_n_f64(row[i]), vc));
        }
    }
}

constexpr Backend neon_impl{
    "neon",           axpy_c_neon,    add_scaled_neon,
    rk4_combine_neon, matvec_rc_neon, matvec_rc_t_neon,
};

}  // namespace

const Backend* neon_backend() { return &neon_impl; }

}  // namespace floq::kernels

#endif  // FLOQ_WITH_NEON
