#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "osdn/simd.hpp"

using namespace osdn;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = gauss(rng);
    return v;
}

// Every available variant must agree with the scalar reference.
std::vector<const simd::Kernels*> variants_under_test() {
    std::vector<const simd::Kernels*> out{&simd::scalar_kernels()};
    if (simd::avx2_supported()) out.push_back(&simd::avx2_kernels());
    if (simd::neon_supported()) out.push_back(&simd::neon_kernels());
    return out;
}

}  // namespace

TEST_CASE("simd variants match scalar reference") {
    std::mt19937_64 rng(7);
    const auto& ref = simd::scalar_kernels();
    for (const auto* k : variants_under_test()) {
        CAPTURE(k->name);
        for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 17u, 64u, 129u, 1000u}) {
            auto a = random_vec(rng, n);
            auto b = random_vec(rng, n);

            const double d_ref = ref.dot_f64(a.data(), b.data(), n);
            const double d_var = k->dot_f64(a.data(), b.data(), n);
            CHECK(std::abs(d_ref - d_var) <= 1e-13 * (1.0 + std::abs(d_ref)));

            auto y_ref = random_vec(rng, n);
            auto y_var = y_ref;
            ref.axpy_f64(y_ref.data(), a.data(), 0.37, n);
            k->axpy_f64(y_var.data(), a.data(), 0.37, n);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::abs(y_ref[i] - y_var[i]) <= 1e-15 * (1.0 + std::abs(y_ref[i])));
            }

            std::vector<double> h_ref(n), h_var(n);
            ref.hadamard_f64(h_ref.data(), a.data(), b.data(), n);
            k->hadamard_f64(h_var.data(), a.data(), b.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(h_ref[i] == h_var[i]);

            auto d_refv = random_vec(rng, n);
            auto d_varv = d_refv;
            ref.retain_step_clamp_f64(d_refv.data(), a.data(), 0.9, 0.01, 0.5, 2.0, n);
            k->retain_step_clamp_f64(d_varv.data(), a.data(), 0.9, 0.01, 0.5, 2.0, n);
            for (std::size_t i = 0; i < n; ++i) {
                CHECK(std::abs(d_refv[i] - d_varv[i]) <= 1e-15);
            }
        }
    }
}

TEST_CASE("simd f32 kernels match scalar") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto& ref = simd::scalar_kernels();
    for (const auto* k : variants_under_test()) {
        for (std::size_t n : {1u, 8u, 9u, 33u, 250u}) {
            std::vector<float> a(n), b(n);
            for (auto& x : a) x = static_cast<float>(gauss(rng));
            for (auto& x : b) x = static_cast<float>(gauss(rng));
            const float d_ref = ref.dot_f32(a.data(), b.data(), n);
            const float d_var = k->dot_f32(a.data(), b.data(), n);
            CHECK(std::abs(d_ref - d_var) <= 1e-4f * (1.0f + std::abs(d_ref)));
        }
    }
}

TEST_CASE("dispatch honors forced modes") {
    simd::set_mode(simd::Mode::scalar);
    CHECK(std::string(simd::active().name) == "scalar");
    simd::set_mode(simd::Mode::avx2);
    if (simd::avx2_supported()) {
        CHECK(std::string(simd::active().name) == "avx2");
    } else {
        CHECK(std::string(simd::active().name) == "scalar");
    }
    simd::set_mode(simd::Mode::auto_detect);
}

TEST_CASE("reductions are deterministic run-to-run") {
    std::mt19937_64 rng(13);
    auto a = random_vec(rng, 513);
    auto b = random_vec(rng, 513);
    for (const auto* k : variants_under_test()) {
        const double first = k->dot_f64(a.data(), b.data(), a.size());
        for (int i = 0; i < 5; ++i) {
            CHECK(k->dot_f64(a.data(), b.data(), a.size()) == first);
        }
    }
}
