#pragma once

#include <complex>
#include <cstddef>
#include <string_view>

// Inner-loop primitives for the time steppers. Every routine has a scalar
// reference implementation plus SIMD variants (AVX2 on x86-64, NEON on
// aarch64) selected once at runtime; the backends are interchangeable and
// equivalence-tested against each other.
//
// Complex arrays are interleaved (re, im), i.e. std::complex<double> layout,
// so Eigen vectors can be passed through .data() without conversion.

namespace floq::kernels {

using cxd = std::complex<double>;

struct Backend {
    const char* name;

    /// y[i] += alpha * x[i]
    void (*axpy_c)(std::size_t n, cxd alpha, const cxd* x, cxd* y);

    /// out[i] = base[i] + c * k[i] (real c; used for RK4 stage arguments)
    void (*add_scaled)(std::size_t n, const cxd* base, const cxd* k, double c,
                       cxd* out);

    /// out[i] = base[i] + (h/6) * (k1[i] + 2 k2[i] + 2 k3[i] + k4[i])
    void (*rk4_combine)(std::size_t n, const cxd* base, const cxd* k1,
                        const cxd* k2, const cxd* k3, const cxd* k4, double h,
                        cxd* out);

    /// y[i] += alpha * sum_j a[i*lda + j] * x[j], with a real d-by-d row-major
    void (*matvec_rc)(std::size_t d, const double* a, std::size_t lda,
                      cxd alpha, const cxd* x, cxd* y);

    /// y[i] += alpha * sum_j a[j*lda + i] * x[j] (transposed matvec)
    void (*matvec_rc_t)(std::size_t d, const double* a, std::size_t lda,
                        cxd alpha, const cxd* x, cxd* y);
};

/// The runtime-selected backend. Picks the widest supported instruction set;
/// FLOQUET_KERNELS=scalar|avx2|neon forces a specific one (falling back to
/// scalar if the request is unavailable).
const Backend& active();

/// Lookup by name for tests; nullptr when the backend is not compiled in or
/// the CPU lacks the feature.
const Backend* backend_by_name(std::string_view name);

inline void axpy_c(std::size_t n, cxd alpha, const cxd* x, cxd* y) {
    active().axpy_c(n, alpha, x, y);
}
inline void add_scaled(std::size_t n, const cxd* base, const cxd* k, double c,
                       cxd* out) {
    active().add_scaled(n, base, k, c, out);
}
inline void rk4_combine(std::size_t n, const cxd* base, const cxd* k1,
                        const cxd* k2, const cxd* k3, const cxd* k4, double h,
                        cxd* out) {
    active().rk4_combine(n, base, k1, k2, k3, k4, h, out);
}
inline void matvec_rc(std::size_t d, const double* a, std::size_t lda, cxd alpha,
                      const cxd* x, cxd* y) {
    active().matvec_rc(d, a, lda, alpha, x, y);
}
inline void matvec_rc_t(std::size_t d, const double* a, std::size_t lda,
                        cxd alpha, const cxd* x, cxd* y) {
    active().matvec_rc_t(d, a, lda, alpha, x, y);
}

}  // namespace floq::kernels
