#include "osdn/recurrent.hpp"

#include <cmath>
#include <cstring>

#include "osdn/simd.hpp"

namespace osdn {
namespace {

// out[v] = sum_j S[v,j] k[j] for a [V,K] row-major state
void read_vxk(const double* s, const double* k, std::int64_t K, std::int64_t V, double* out) {
    const auto& kr = simd::active();
    for (std::int64_t v = 0; v < V; ++v) {
        out[v] = kr.dot_f64(s + v * K, k, static_cast<std::size_t>(K));
    }
}

// out[v] = sum_j S[j,v] k[j] for a [K,V] row-major state (transposed read)
void read_kxv_t(const double* s, const double* k, std::int64_t K, std::int64_t V, double* out) {
    const auto& kr = simd::active();
    std::memset(out, 0, sizeof(double) * V);
    for (std::int64_t j = 0; j < K; ++j) {
        kr.axpy_f64(out, s + j * V, k[j], static_cast<std::size_t>(V));
    }
}

double half_norm_sq(const double* x, std::int64_t n) {
    return 0.5 * simd::active().dot_f64(x, x, static_cast<std::size_t>(n));
}

}  // namespace

const char* BackboneSpec::name() const {
    switch (backbone) {
        case Backbone::delta_net: return online_scaled ? (apf ? "osdn-apf" : "osdn") : "deltanet";
        case Backbone::gated_delta_net:
            return online_scaled ? (apf ? "osgdn-apf" : "osgdn") : "gdn";
        case Backbone::kda: return online_scaled ? (apf ? "oskda-apf" : "oskda") : "kda";
    }
    return "?";
}

void BackboneSpec::require_gates(const GateSequence& gates) const {
    if (backbone == Backbone::gated_delta_net && !gates.has_alpha_scalar()) {
        throw ValidationError("gated_delta_net requires alpha_scalar gates");
    }
    if (backbone == Backbone::kda && !gates.has_alpha_vector()) {
        throw ValidationError("kda requires alpha_vector gates");
    }
    if (apf && !gates.has_retention()) {
        throw ValidationError("apf requires retention gates");
    }
}

void step_delta(double* s, const double* q, const double* k, const double* kt,
                const double* v, double beta, std::int64_t K, std::int64_t V,
                double q_scale, double* out, double* residual) {
    const auto& kr = simd::active();
    read_vxk(s, k, K, V, residual);
    for (std::int64_t i = 0; i < V; ++i) residual[i] = v[i] - residual[i];
    for (std::int64_t i = 0; i < V; ++i) {
        kr.axpy_f64(s + i * K, kt, beta * residual[i], static_cast<std::size_t>(K));
    }
    if (out != nullptr) {
        read_vxk(s, q, K, V, out);
        for (std::int64_t i = 0; i < V; ++i) out[i] *= q_scale;
    }
}

void step_gdn(double* s, const double* q, const double* k, const double* kt,
              const double* v, double beta, double alpha, std::int64_t K, std::int64_t V,
              double q_scale, double* out, double* residual) {
    for (std::int64_t i = 0; i < V * K; ++i) s[i] *= alpha;
    step_delta(s, q, k, kt, v, beta, K, V, q_scale, out, residual);
}

void step_kda(double* s, const double* q, const double* k, const double* kt,
              const double* v, double beta, const double* alpha_vec, std::int64_t K,
              std::int64_t V, double q_scale, double* out, double* residual) {
    const auto& kr = simd::active();
    for (std::int64_t j = 0; j < K; ++j) {
        const double a = alpha_vec[j];
        double* row = s + j * V;
        for (std::int64_t i = 0; i < V; ++i) row[i] *= a;
    }
    read_kxv_t(s, k, K, V, residual);
    for (std::int64_t i = 0; i < V; ++i) residual[i] = v[i] - residual[i];
    for (std::int64_t j = 0; j < K; ++j) {
        kr.axpy_f64(s + j * V, residual, beta * kt[j], static_cast<std::size_t>(V));
    }
    if (out != nullptr) {
        read_kxv_t(s, q, K, V, out);
        for (std::int64_t i = 0; i < V; ++i) out[i] *= q_scale;
    }
}

void residual_read(const FastWeightState& state, std::int64_t b, std::int64_t h,
                   const double* k, const double* v, double* out) {
    const double* s = state.lane(b, h);
    if (state.orientation == FastWeightState::Orientation::vxk) {
        read_vxk(s, k, state.cols, state.rows, out);
    } else {
        read_kxv_t(s, k, state.rows, state.cols, out);
    }
    const std::int64_t V =
        state.orientation == FastWeightState::Orientation::vxk ? state.rows : state.cols;
    for (std::int64_t i = 0; i < V; ++i) out[i] = v[i] - out[i];
}

ForwardResult run_recurrent(const TokenStream& stream, const BackboneSpec& spec,
                            const GateSequence& gates, const FastWeightState* init_state,
                            const PreconditionerState* init_precond, const ForwardOptions& opts) {
    const auto B = stream.batch, T = stream.length, H = stream.heads;
    const auto K = stream.key_dim, V = stream.value_dim;
    spec.require_gates(gates);
    check_gates(gates, stream);

    ForwardResult res;
    res.outputs.assign(static_cast<std::size_t>(B * T * H * V), 0.0);

    // Phase 1: materialise write keys (host variants write with the raw key).
    if (spec.online_scaled) {
        PreconditionerState precond =
            init_precond != nullptr ? *init_precond : PreconditionerState::make(B, H, K);
        if (spec.apf && precond.retention_mode == PreconditionerState::Retention::none) {
            precond.retention_mode = PreconditionerState::Retention::data_dependent;
        }
        res.write_keys = phase1_sweep(stream, precond, gates, opts.keep_trajectory);
    } else {
        res.write_keys.batch = B;
        res.write_keys.length = T;
        res.write_keys.heads = H;
        res.write_keys.key_dim = K;
        res.write_keys.write_keys = stream.keys;
        res.write_keys.d_final.assign(static_cast<std::size_t>(B * H * K), 1.0);
    }

    res.final_state = init_state != nullptr
                          ? *init_state
                          : FastWeightState::zeros(spec.orientation(), B, H, K, V);
    if (res.final_state.orientation != spec.orientation()) {
        throw ValidationError("state orientation does not match the backbone convention");
    }

    if (opts.with_trace) {
        res.trace.batch = B;
        res.trace.length = T;
        res.trace.heads = H;
        res.trace.entries.resize(static_cast<std::size_t>(B * T * H));
    }

    const double q_scale = opts.scale_queries ? 1.0 / std::sqrt(static_cast<double>(K)) : 1.0;
    std::vector<double> residual(static_cast<std::size_t>(V));
    std::vector<double> after(static_cast<std::size_t>(V));
    const auto& kr = simd::active();

    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t h = 0; h < H; ++h) {
            double* s = res.final_state.lane(b, h);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* q = stream.query(b, t, h);
                const double* k = stream.key(b, t, h);
                const double* v = stream.value(b, t, h);
                const double* kt = res.write_keys.write_key(b, t, h);
                const double beta = stream.beta(b, t, h);
                double* out = res.outputs.data() + stream.v_offset(b, t, h);

                switch (spec.backbone) {
                    case BackboneSpec::Backbone::delta_net:
                        step_delta(s, q, k, kt, v, beta, K, V, q_scale, out, residual.data());
                        break;
                    case BackboneSpec::Backbone::gated_delta_net:
                        step_gdn(s, q, k, kt, v, beta,
                                 gates.alpha_scalar[stream.b_offset(b, t, h)], K, V, q_scale, out,
                                 residual.data());
                        break;
                    case BackboneSpec::Backbone::kda:
                        step_kda(s, q, k, kt, v, beta,
                                 gates.alpha_vector.data() + stream.k_offset(b, t, h), K, V,
                                 q_scale, out, residual.data());
                        break;
                }

                if (opts.with_trace) {
                    // f_before is measured against the post-gate reference state,
                    // so it is |residual|^2/2 for every backbone.
                    double f_before = half_norm_sq(residual.data(), V);
                    if (spec.backbone == BackboneSpec::Backbone::kda) {
                        read_kxv_t(s, k, K, V, after.data());
                    } else {
                        read_vxk(s, k, K, V, after.data());
                    }
                    for (std::int64_t i = 0; i < V; ++i) after[i] -= v[i];
                    double f_after = half_norm_sq(after.data(), V);
                    auto& e = res.trace.at(b, t, h);
                    e.f_before = f_before;
                    e.f_after = f_after;
                    e.grad_norm_sq =
                        2.0 * f_before * kr.dot_f64(k, k, static_cast<std::size_t>(K));
                    e.q = f_before < kResidualZeroFloor ? 1.0 : f_after / f_before;
                    e.position_bin = static_cast<std::int32_t>((t * opts.trace_bins) / T);
                }
            }
        }
    }
    return res;
}

}  // namespace osdn
