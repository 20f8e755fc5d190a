#include "ofnet/kern.hpp"

#ifdef OFNET_HAVE_AVX2
#include <immintrin.h>

namespace ofnet::kern {
namespace {

double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc);
    }
    double s = hsum(acc);
    for (; i < n; ++i) s += x[i] * y[i];
    return s;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void matvec_avx2(const double* A, const double* x, double* y,
                 std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) y[i] = dot_avx2(A + i * n, x, n);
}

void matvec_t_avx2(const double* A, const double* x, double* y,
                   std::size_t m, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) y[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) axpy_avx2(x[i], A + i * n, y, n);
}

void ger_avx2(const double* x, const double* y, double* A,
              std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) axpy_avx2(x[i], y, A + i * n, n);
}

}  // namespace

const Ops& avx2() {
    static const Ops ops{"avx2", dot_avx2, axpy_avx2,
                         matvec_avx2, matvec_t_avx2, ger_avx2};
    return ops;
}

bool avx2_available() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace ofnet::kern

#else

namespace ofnet::kern {
const Ops& avx2() { return scalar(); }
bool avx2_available() { return false; }
}  // namespace ofnet::kern

#endif
