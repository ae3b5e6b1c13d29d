// AVX2/FMA variants of the microkernels.  This translation unit is compiled
// with -mavx2 -mfma on x86-64 only; callers must gate on avx2_supported().

#include "osdn/simd.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <algorithm>

namespace osdn::simd {
namespace {

double dot_f64(const double* x, const double* y, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vx = _mm256_loadu_pd(x + i);
        __m256d vy = _mm256_loadu_pd(y + i);
        acc = _mm256_fmadd_pd(vx, vy, acc);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    // fixed reduction order: lanes first, then the scalar tail
    double sum = ((lanes[0] + lanes[1]) + lanes[2]) + lanes[3];
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

void axpy_f64(double* y, const double* x, double a, std::size_t n) {
    __m256d va = _mm256_set1_pd(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d vx = _mm256_loadu_pd(x + i);
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, vx, vy));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void hadamard_f64(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void retain_step_clamp_f64(double* d, const double* s, double r, double step,
                           double lo, double hi, std::size_t n) {
    __m256d vr = _mm256_set1_pd(r);
    __m256d vstep = _mm256_set1_pd(step);
    __m256d vlo = _mm256_set1_pd(lo);
    __m256d vhi = _mm256_set1_pd(hi);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        // mul+add (no fma): bitwise identical to the scalar reference
        __m256d vd = _mm256_add_pd(_mm256_mul_pd(vr, _mm256_loadu_pd(d + i)),
                                   _mm256_mul_pd(vstep, _mm256_loadu_pd(s + i)));
        vd = _mm256_min_pd(_mm256_max_pd(vd, vlo), vhi);
        _mm256_storeu_pd(d + i, vd);
    }
    for (; i < n; ++i) {
        double v = r * d[i] + step * s[i];
        d[i] = std::min(std::max(v, lo), hi);
    }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    __m256 acc = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
    }
    alignas(32) float lanes[8];
    _mm256_store_ps(lanes, acc);
    float sum = (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) +
                 ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])));
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

void axpy_f32(float* y, const float* x, float a, std::size_t n) {
    __m256 va = _mm256_set1_ps(a);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Kernels& avx2_kernels() {
    static const Kernels k = {
        "avx2", dot_f64, axpy_f64, hadamard_f64, retain_step_clamp_f64, dot_f32, axpy_f32,
    };
    return k;
}

}  // namespace osdn::simd

#else

namespace osdn::simd {

const Kernels& avx2_kernels() { return scalar_kernels(); }

}  // namespace osdn::simd

#endif
