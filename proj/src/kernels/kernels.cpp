#include "floq/kernels.hpp"

#include <cstdlib>
#include <string_view>

namespace floq::kernels {

// ---------------------------------------------------------------- scalar ---

namespace {

void axpy_c_scalar(std::size_t n, cxd alpha, const cxd* x, cxd* y) {
    const double ar = alpha.real(), ai = alpha.imag();
    const double* xp = reinterpret_cast<const double*>(x);
    double* yp = reinterpret_cast<double*>(y);
    for (std::size_t i = 0; i < n; ++i) {
        const double xr = xp[2 * i], xi = xp[2 * i + 1];
        yp[2 * i] += ar * xr - ai * xi;
        yp[2 * i + 1] += ar * xi + ai * xr;
    }
}

void add_scaled_scalar(std::size_t n, const cxd* base, const cxd* k, double c,
                       cxd* out) {
    const double* bp = reinterpret_cast<const double*>(base);
    const double* kp = reinterpret_cast<const double*>(k);
    double* op = reinterpret_cast<double*>(out);
    for (std::size_t i = 0; i < 2 * n; ++i) op[i] = bp[i] + c * kp[i];
}

void rk4_combine_scalar(std::size_t n, const cxd* base, const cxd* k1,
                        const cxd* k2, const cxd* k3, const cxd* k4, double h,
                        cxd* out) {
    const double w = h / 6.0;
    const double* bp = reinterpret_cast<const double*>(base);
    const double* p1 = reinterpret_cast<const double*>(k1);
    const double* p2 = reinterpret_cast<const double*>(k2);
    const double* p3 = reinterpret_cast<const double*>(k3);
    const double* p4 = reinterpret_cast<const double*>(k4);
    double* op = reinterpret_cast<double*>(out);
    for (std::size_t i = 0; i < 2 * n; ++i)
        op[i] = bp[i] + w * (p1[i] + 2.0 * p2[i] + 2.0 * p3[i] + p4[i]);
}

void matvec_rc_scalar(std::size_t d, const double* a, std::size_t lda,
                      cxd alpha, const cxd* x, cxd* y) {
    const double* xp = reinterpret_cast<const double*>(x);
    const double ar = alpha.real(), ai = alpha.imag();
    for (std::size_t i = 0; i < d; ++i) {
        const double* row = a + i * lda;
        double sr = 0.0, si = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            sr += row[j] * xp[2 * j];
            si += row[j] * xp[2 * j + 1];
        }
        y[i] += cxd(ar * sr - ai * si, ar * si + ai * sr);
    }
}

void matvec_rc_t_scalar(std::size_t d, const double* a, std::size_t lda,
                        cxd alpha, const cxd* x, cxd* y) {
    const double* xp = reinterpret_cast<const double*>(x);
    const double ar = alpha.real(), ai = alpha.imag();
    for (std::size_t i = 0; i < d; ++i) {
        double sr = 0.0, si = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double aji = a[j * lda + i];
            sr += aji * xp[2 * j];
            si += aji * xp[2 * j + 1];
        }
        y[i] += cxd(ar * sr - ai * si, ar * si + ai * sr);
    }
}

constexpr Backend scalar_backend{
    "scalar",          axpy_c_scalar,    add_scaled_scalar,
    rk4_combine_scalar, matvec_rc_scalar, matvec_rc_t_scalar,
};

}  // namespace

// ------------------------------------------------------------- dispatch ----

#if defined(FLOQ_WITH_AVX2)
const Backend* avx2_backend();  // defined in kernels_avx2.cpp
#endif
#if defined(FLOQ_WITH_NEON)
const Backend* neon_backend();  // defined in kernels_neon.cpp
#endif

const Backend* backend_by_name(std::string_view name) {
    if (name == "scalar") return &scalar_backend;
#if defined(FLOQ_WITH_AVX2)
    if (name == "avx2") return avx2_backend();
#endif
#if defined(FLOQ_WITH_NEON)
    if (name == "neon") return neon_backend();
#endif
    return nullptr;
}

namespace {

const Backend& pick() {
    if (const char* env = std::getenv("FLOQUET_KERNELS")) {
        if (const Backend* b = backend_by_name(env)) return *b;
        return scalar_backend;
    }
#if defined(FLOQ_WITH_AVX2)
    if (const Backend* b = avx2_backend()) return *b;
#endif
#if defined(FLOQ_WITH_NEON)
    if (const Backend* b = neon_backend()) return *b;
#endif
    return scalar_backend;
}

}  // namespace

const Backend& active() {
    static const Backend& chosen = pick();
    return chosen;
}

}  // namespace floq::kernels
