#include "osdn/simd.hpp"

#include <algorithm>

namespace osdn::simd {
namespace {

double dot_f64(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_f64(double* y, const double* x, double a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void hadamard_f64(double* out, const double* a, const double* b, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void retain_step_clamp_f64(double* d, const double* s, double r, double step,
                           double lo, double hi, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        double v = r * d[i] + step * s[i];
        d[i] = std::min(std::max(v, lo), hi);
    }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_f32(float* y, const float* x, float a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k = {
        "scalar", dot_f64, axpy_f64, hadamard_f64, retain_step_clamp_f64, dot_f32, axpy_f32,
    };
    return k;
}

}  // namespace osdn::simd
