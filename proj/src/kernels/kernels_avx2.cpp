// AVX2+FMA backend. Compiled with -mavx2 -mfma on x86-64 only; the dispatcher
// checks CPU support at runtime before handing out this backend.

#include "floq/kernels.hpp"

#if defined(FLOQ_WITH_AVX2)

#include <immintrin.h>

namespace floq::kernels {

namespace {

// One 256-bit vector holds two interleaved complex doubles [r0 i0 r1 i1].
// alpha * x uses fmaddsub: even lanes ar*r - ai*i, odd lanes ar*i + ai*r.

void axpy_c_avx2(std::size_t n, cxd alpha, const cxd* x, cxd* y) {
    const double* xp = reinterpret_cast<const double*>(x);
    double* yp = reinterpret_cast<double*>(y);
    const __m256d var = _mm256_set1_pd(alpha.real());
    const __m256d vai = _mm256_set1_pd(alpha.imag());
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const __m256d vx = _mm256_loadu_pd(xp + 2 * i);
        const __m256d vy = _mm256_loadu_pd(yp + 2 * i);
        const __m256d sw = _mm256_permute_pd(vx, 0x5);
        const __m256d prod = _mm256_fmaddsub_pd(vx, var, _mm256_mul_pd(sw, vai));
        _mm256_storeu_pd(yp + 2 * i, _mm256_add_pd(vy, prod));
    }
    for (; i < n; ++i) {
        const double xr = xp[2 * i], xi = xp[2 * i + 1];
        yp[2 * i] += alpha.real() * xr - alpha.imag() * xi;
        yp[2 * i + 1] += alpha.real() * xi + alpha.imag() * xr;
    }
}

void add_scaled_avx2(std::size_t n, const cxd* base, const cxd* k, double c,
                     cxd* out) {
    const double* bp = reinterpret_cast<const double*>(base);
    const double* kp = reinterpret_cast<const double*>(k);
    double* op = reinterpret_cast<double*>(out);
    const __m256d vc = _mm256_set1_pd(c);
    const std::size_t m = 2 * n;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const __m256d vb = _mm256_loadu_pd(bp + i);
        const __m256d vk = _mm256_loadu_pd(kp + i);
        _mm256_storeu_pd(op + i, _mm256_fmadd_pd(vk, vc, vb));
    }
    for (; i < m; ++i) op[i] = bp[i] + c * kp[i];
}

void rk4_combine_avx2(std::size_t n, const cxd* base, const cxd* k1,
                      const cxd* k2, const cxd* k3, const cxd* k4, double h,
                      cxd* out) {
    const double w = h / 6.0;
    const double* bp = reinterpret_cast<const double*>(base);
    const double* p1 = reinterpret_cast<const double*>(k1);
    const double* p2 = reinterpret_cast<const double*>(k2);
    const double* p3 = reinterpret_cast<const double*>(k3);
    const double* p4 = reinterpret_cast<const double*>(k4);
    double* op = reinterpret_cast<double*>(out);
    const __m256d vw = _mm256_set1_pd(w);
    const __m256d two = _mm256_set1_pd(2.0);
    const std::size_t m = 2 * n;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const __m256d outer = _mm256_add_pd(_mm256_loadu_pd(p1 + i), _mm256_loadu_pd(p4 + i));
        const __m256d inner = _mm256_add_pd(_mm256_loadu_pd(p2 + i), _mm256_loadu_pd(p3 + i));
        const __m256d sum = _mm256_fmadd_pd(inner, two, outer);
        _mm256_storeu_pd(op + i, _mm256_fmadd_pd(sum, vw, _mm256_loadu_pd(bp + i)));
    }
    for (; i < m; ++i)
        op[i] = bp[i] + w * (p1[i] + 2.0 * p2[i] + 2.0 * p3[i] + p4[i]);
}

// [a_j a_j a_{j+1} a_{j+1}] from two packed row entries
inline __m256d dup_pair(const double* p) {
    return _mm256_permute4x64_pd(_mm256_castpd128_pd256(_mm_loadu_pd(p)), 0x50);
}

void matvec_rc_avx2(std::size_t d, const double* a, std::size_t lda, cxd alpha,
                    const cxd* x, cxd* y) {
    const double* xp = reinterpret_cast<const double*>(x);
    const double ar = alpha.real(), ai = alpha.imag();
    for (std::size_t i = 0; i < d; ++i) {
        const double* row = a + i * lda;
        __m256d acc = _mm256_setzero_pd();
        std::size_t j = 0;
        for (; j + 2 <= d; j += 2)
            acc = _mm256_fmadd_pd(dup_pair(row + j), _mm256_loadu_pd(xp + 2 * j), acc);
        const __m128d lo = _mm256_castpd256_pd128(acc);
        const __m128d hi = _mm256_extractf128_pd(acc, 1);
        alignas(16) double s[2];
        _mm_store_pd(s, _mm_add_pd(lo, hi));
        double sr = s[0], si = s[1];
        for (; j < d; ++j) {
            sr += row[j] * xp[2 * j];
            si += row[j] * xp[2 * j + 1];
        }
        y[i] += cxd(ar * sr - ai * si, ar * si + ai * sr);
    }
}

void matvec_rc_t_avx2(std::size_t d, const double* a, std::size_t lda, cxd alpha,
                      const cxd* x, cxd* y) {
    // Transposed product walks rows of a, scattering alpha*x[j]*row into y,
    // which keeps the inner loop contiguous.
    double* yp = reinterpret_cast<double*>(y);
    for (std::size_t j = 0; j < d; ++j) {
        const cxd c = alpha * x[j];
        const double* row = a + j * lda;
        const __m256d vc = _mm256_setr_pd(c.real(), c.imag(), c.real(), c.imag());
        std::size_t i = 0;
        for (; i + 2 <= d; i += 2) {
            const __m256d vy = _mm256_loadu_pd(yp + 2 * i);
            _mm256_storeu_pd(yp + 2 * i, _mm256_fmadd_pd(dup_pair(row + i), vc, vy));
        }
        for (; i < d; ++i) {
            yp[2 * i] += c.real() * row[i];
            yp[2 * i + 1] += c.imag() * row[i];
        }
    }
}

constexpr Backend avx2_impl{
    "avx2",           axpy_c_avx2,    add_scaled_avx2,
    rk4_combine_avx2, matvec_rc_avx2, matvec_rc_t_avx2,
};

}  // namespace

const Backend* avx2_backend() {
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
        return &avx2_impl;
    return nullptr;
}

}  // namespace floq::kernels

#endif  // FLOQ_WITH_AVX2
