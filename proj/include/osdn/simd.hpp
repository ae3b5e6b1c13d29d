#pragma once

#include <cstddef>
#include <cstdint>

// Runtime-dispatched microkernels for the dense inner loops shared by the
// phase-1 scan, the recurrent references, and the chunk kernels.  Every entry
// point has a scalar reference implementation; AVX2 (x86-64) and NEON
// (aarch64) variants are selected at runtime and are equivalence-tested
// against the scalar path.  Reductions use a fixed lane-then-tail order, so a
// given variant is deterministic run-to-run.

namespace osdn::simd {

enum class Mode { auto_detect, scalar, avx2, neon };

struct Kernels {
    const char* name;

    // sum_i x[i]*y[i]
    double (*dot_f64)(const double* x, const double* y, std::size_t n);
    // y[i] += a*x[i]
    void (*axpy_f64)(double* y, const double* x, double a, std::size_t n);
    // out[i] = a[i]*b[i]
    void (*hadamard_f64)(double* out, const double* a, const double* b, std::size_t n);
    // d[i] = clamp(r*d[i] + step*s[i], lo, hi) -- the phase-1 streaming update
    void (*retain_step_clamp_f64)(double* d, const double* s, double r, double step,
                                  double lo, double hi, std::size_t n);

    float (*dot_f32)(const float* x, const float* y, std::size_t n);
    void (*axpy_f32)(float* y, const float* x, float a, std::size_t n);
};

const Kernels& scalar_kernels();
bool avx2_supported();
const Kernels& avx2_kernels();  // only callable when avx2_supported()
bool neon_supported();
const Kernels& neon_kernels();  // only callable when neon_supported()

// Dispatch control.  Default resolves OSDN_SIMD={auto,scalar,avx2,neon} from
// the environment, falling back to the best supported variant.
void set_mode(Mode m);
Mode mode();
const Kernels& active();

}  // namespace osdn::simd
