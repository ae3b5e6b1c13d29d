// NEON variants for aarch64.  Mirrors the scalar semantics with 2-wide f64 /
// 4-wide f32 lanes and the same fixed reduction order as the AVX2 path.

#include "osdn/simd.hpp"

#if defined(__ARM_NEON) && defined(__aarch64__)
#include <arm_neon.h>

#include <algorithm>

namespace osdn::simd {
namespace {

double dot_f64(const double* x, const double* y, std::size_t n) {
    float64x2_t acc = vdupq_n_f64(0.0);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        acc = vfmaq_f64(acc, vld1q_f64(x + i), vld1q_f64(y + i));
    }
    double sum = vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1);
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

void axpy_f64(double* y, const double* x, double a, std::size_t n) {
    float64x2_t va = vdupq_n_f64(a);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(y + i, vfmaq_f64(vld1q_f64(y + i), va, vld1q_f64(x + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void hadamard_f64(double* out, const double* a, const double* b, std::size_t n) {
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void retain_step_clamp_f64(double* d, const double* s, double r, double step,
                           double lo, double hi, std::size_t n) {
    float64x2_t vr = vdupq_n_f64(r);
    float64x2_t vstep = vdupq_n_f64(step);
    float64x2_t vlo = vdupq_n_f64(lo);
    float64x2_t vhi = vdupq_n_f64(hi);
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        // mul+add (no fma): bitwise identical to the scalar reference
        float64x2_t vd = vaddq_f64(vmulq_f64(vr, vld1q_f64(d + i)),
                                   vmulq_f64(vstep, vld1q_f64(s + i)));
        vd = vminq_f64(vmaxq_f64(vd, vlo), vhi);
        vst1q_f64(d + i, vd);
    }
    for (; i < n; ++i) {
        double v = r * d[i] + step * s[i];
        d[i] = std::min(std::max(v, lo), hi);
    }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    float32x4_t acc = vdupq_n_f32(0.0f);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc = vfmaq_f32(acc, vld1q_f32(x + i), vld1q_f32(y + i));
    }
    float sum = (vgetq_lane_f32(acc, 0) + vgetq_lane_f32(acc, 1)) +
                (vgetq_lane_f32(acc, 2) + vgetq_lane_f32(acc, 3));
    for (; i < n; ++i) sum += x[i] * y[i];
    return sum;
}

void axpy_f32(float* y, const float* x, float a, std::size_t n) {
    float32x4_t va = vdupq_n_f32(a);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        vst1q_f32(y + i, vfmaq_f32(vld1q_f32(y + i), va, vld1q_f32(x + i)));
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Kernels& neon_kernels() {
    static const Kernels k = {
        "neon", dot_f64, axpy_f64, hadamard_f64, retain_step_clamp_f64, dot_f32, axpy_f32,
    };
    return k;
}

}  // namespace osdn::simd

#else

namespace osdn::simd {

const Kernels& neon_kernels() { return scalar_kernels(); }

}  // namespace osdn::simd

#endif
