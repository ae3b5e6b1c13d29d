#include "osdn/precond.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "osdn/simd.hpp"

namespace osdn {

HypergradSample hypergrad_eval(std::span<const double> d, std::span<const double> k,
                               double beta, double epsilon) {
    const std::size_t K = k.size();
    if (d.size() != K) throw ValidationError("hypergrad_eval: d/k size mismatch");
    for (std::size_t i = 0; i < K; ++i) {
        if (!std::isfinite(d[i]) || !std::isfinite(k[i])) {
            throw ValidationError("hypergrad_eval: non-finite input", -1, -1, -1,
                                  static_cast<std::int64_t>(i));
        }
    }
    if (!std::isfinite(beta)) throw ValidationError("hypergrad_eval: non-finite beta");

    const auto& kr = simd::active();
    HypergradSample out;
    out.h_grad.resize(K);
    std::vector<double> ksq(K);
    kr.hadamard_f64(ksq.data(), k.data(), k.data(), K);
    const double norm_sq = kr.dot_f64(k.data(), k.data(), K);
    out.key_norm_sq = std::max(norm_sq, epsilon);
    out.alignment = kr.dot_f64(d.data(), ksq.data(), K);
    const double miss = 1.0 - beta * out.alignment;
    out.h_value = (miss * miss - 1.0) / (2.0 * out.key_norm_sq);
    const double coef = -beta * miss / out.key_norm_sq;
    for (std::size_t i = 0; i < K; ++i) out.h_grad[i] = coef * ksq[i];
    return out;
}

void precond_step_lane(double* d, const double* k, double beta, double retention,
                       const PrecondParams& p, std::int64_t K, double* scratch) {
    const auto& kr = simd::active();
    const auto n = static_cast<std::size_t>(K);
    double* ksq = scratch;
    kr.hadamard_f64(ksq, k, k, n);
    const double norm_sq = std::max(kr.dot_f64(k, k, n), p.epsilon);
    const double beta_ph = p.beta_aware ? beta : 1.0;
    const double alignment = kr.dot_f64(d, ksq, n);
    const double step = p.eta * beta_ph * (1.0 - beta_ph * alignment) / norm_sq;
    kr.retain_step_clamp_f64(d, ksq, retention, step, p.d_min, p.d_max, n);
}

std::vector<double> precond_step(std::span<const double> d, std::span<const double> k,
                                 double beta, double retention, const PrecondParams& p) {
    if (d.size() != k.size()) throw ValidationError("precond_step: d/k size mismatch");
    std::vector<double> out(d.begin(), d.end());
    std::vector<double> scratch(k.size());
    precond_step_lane(out.data(), k.data(), beta, retention, p,
                      static_cast<std::int64_t>(k.size()), scratch.data());
    return out;
}

AffineMap affine_map_coefficients(std::span<const double> k, double beta, double retention,
                                  const PrecondParams& p) {
    const std::size_t K = k.size();
    const auto& kr = simd::active();
    std::vector<double> ksq(K);
    kr.hadamard_f64(ksq.data(), k.data(), k.data(), K);
    const double norm_sq = std::max(kr.dot_f64(k.data(), k.data(), K), p.epsilon);
    const double beta_ph = p.beta_aware ? beta : 1.0;

    AffineMap m;
    m.a.assign(K * K, 0.0);
    m.b.resize(K);
    const double quad = p.eta * beta_ph * beta_ph / norm_sq;
    for (std::size_t i = 0; i < K; ++i) {
        m.a[i * K + i] = retention;
        for (std::size_t j = 0; j < K; ++j) m.a[i * K + j] -= quad * ksq[i] * ksq[j];
        m.b[i] = p.eta * beta_ph / norm_sq * ksq[i];
    }
    return m;
}

double retention_at(const PreconditionerState& init, const GateSequence& gates,
                    const TokenStream& stream, std::int64_t b, std::int64_t t, std::int64_t h) {
    switch (init.retention_mode) {
        case PreconditionerState::Retention::none: return 1.0;
        case PreconditionerState::Retention::constant: return init.rho;
        case PreconditionerState::Retention::data_dependent:
            if (!gates.has_retention()) {
                throw ValidationError("data_dependent retention requires GateSequence.retention");
            }
            return gates.retention[stream.b_offset(b, t, h)];
    }
    return 1.0;
}

WriteKeySequence phase1_sweep(const TokenStream& stream, const PreconditionerState& init,
                              const GateSequence& gates, bool keep_trajectory) {
    const auto B = stream.batch, T = stream.length, H = stream.heads, K = stream.key_dim;
    if (init.batch != B || init.heads != H || init.key_dim != K) {
        throw ValidationError("phase1_sweep: preconditioner shape mismatch");
    }
    const PrecondParams p = PrecondParams::from(init);
    const auto& kr = simd::active();

    WriteKeySequence out;
    out.batch = B;
    out.length = T;
    out.heads = H;
    out.key_dim = K;
    out.write_keys.resize(static_cast<std::size_t>(B * T * H * K));
    out.d_final.resize(static_cast<std::size_t>(B * H * K));
    if (keep_trajectory) out.d_trajectory.resize(out.write_keys.size());

    std::vector<double> d(static_cast<std::size_t>(K));
    std::vector<double> scratch(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t h = 0; h < H; ++h) {
            std::memcpy(d.data(), init.lane(b, h), sizeof(double) * K);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* k = stream.key(b, t, h);
                double* wk = out.write_keys.data() + out.k_offset(b, t, h);
                kr.hadamard_f64(wk, d.data(), k, static_cast<std::size_t>(K));
                if (keep_trajectory) {
                    std::memcpy(out.d_trajectory.data() + out.k_offset(b, t, h), d.data(),
                                sizeof(double) * K);
                }
                const double r = retention_at(init, gates, stream, b, t, h);
                precond_step_lane(d.data(), k, stream.beta(b, t, h), r, p, K, scratch.data());
            }
            std::memcpy(out.d_final.data() + (b * H + h) * K, d.data(), sizeof(double) * K);
        }
    }
    return out;
}

}  // namespace osdn
