#include "osdn/simd.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace osdn::simd {
namespace {

std::atomic<Mode> g_mode{Mode::auto_detect};

Mode env_mode() {
    const char* env = std::getenv("OSDN_SIMD");
    if (env == nullptr) return Mode::auto_detect;
    if (std::strcmp(env, "scalar") == 0) return Mode::scalar;
    if (std::strcmp(env, "avx2") == 0) return Mode::avx2;
    if (std::strcmp(env, "neon") == 0) return Mode::neon;
    return Mode::auto_detect;
}

const Kernels& resolve(Mode m) {
    switch (m) {
        case Mode::scalar: return scalar_kernels();
        case Mode::avx2: return avx2_supported() ? avx2_kernels() : scalar_kernels();
        case Mode::neon: return neon_supported() ? neon_kernels() : scalar_kernels();
        case Mode::auto_detect: break;
    }
    if (avx2_supported()) return avx2_kernels();
    if (neon_supported()) return neon_kernels();
    return scalar_kernels();
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(_M_X64) || defined(__i386__)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

bool neon_supported() {
#if defined(__ARM_NEON) && defined(__aarch64__)
    return true;
#else
    return false;
#endif
}

void set_mode(Mode m) { g_mode.store(m); }

Mode mode() {
    Mode m = g_mode.load(std::memory_order_relaxed);
    if (m != Mode::auto_detect) return m;
    static const Mode from_env = env_mode();  // resolved once per process
    return from_env;
}

const Kernels& active() { return resolve(mode()); }

}  // namespace osdn::simd
