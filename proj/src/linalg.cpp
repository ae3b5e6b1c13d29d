#include "osdn/linalg.hpp"

#include <cmath>
#include <cstring>

namespace osdn::linalg {

void eig_sym(const double* a, std::int64_t n, double* eigvals, double* eigvecs) {
    std::vector<double> m(a, a + n * n);
    // eigvecs starts as identity and accumulates the rotations.
    std::memset(eigvecs, 0, sizeof(double) * n * n);
    for (std::int64_t i = 0; i < n; ++i) eigvecs[i * n + i] = 1.0;

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) off += m[p * n + q] * m[p * n + q];
        }
        if (off < 1e-300) break;
        for (std::int64_t p = 0; p < n; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                const double apq = m[p * n + q];
                if (apq == 0.0) continue;
                const double app = m[p * n + p];
                const double aqq = m[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                              : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double mip = m[i * n + p];
                    const double miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const double mpi = m[p * n + i];
                    const double mqi = m[q * n + i];
                    m[p * n + i] = c * mpi - s * mqi;
                    m[q * n + i] = s * mpi + c * mqi;
                }
                for (std::int64_t i = 0; i < n; ++i) {
                    const double vip = eigvecs[i * n + p];
                    const double viq = eigvecs[i * n + q];
                    eigvecs[i * n + p] = c * vip - s * viq;
                    eigvecs[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    for (std::int64_t i = 0; i < n; ++i) eigvals[i] = m[i * n + i];
}

std::vector<double> pinv_psd(const double* a, std::int64_t n, double cutoff_rel,
                             double* cutoff_used) {
    std::vector<double> w(n), v(n * n);
    eig_sym(a, n, w.data(), v.data());
    double lam_max = 0.0;
    for (std::int64_t i = 0; i < n; ++i) lam_max = std::max(lam_max, std::abs(w[i]));
    const double cutoff = cutoff_rel * lam_max;
    if (cutoff_used != nullptr) *cutoff_used = cutoff;

    std::vector<double> out(n * n, 0.0);
    for (std::int64_t e = 0; e < n; ++e) {
        if (std::abs(w[e]) <= cutoff || w[e] == 0.0) continue;
        const double inv = 1.0 / w[e];
        for (std::int64_t i = 0; i < n; ++i) {
            const double vie = v[i * n + e];
            if (vie == 0.0) continue;
            for (std::int64_t j = 0; j < n; ++j) {
                out[i * n + j] += inv * vie * v[j * n + e];
            }
        }
    }
    return out;
}

void matmul(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
            std::int64_t n) {
    std::memset(c, 0, sizeof(double) * m * n);
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t l = 0; l < k; ++l) {
            const double av = a[i * k + l];
            if (av == 0.0) continue;
            const double* brow = b + l * n;
            double* crow = c + i * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace osdn::linalg
