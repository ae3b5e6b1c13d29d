#include "osdn/chunk.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "osdn/simd.hpp"

namespace osdn {
namespace {

constexpr double kDecayFloor = 1e-6;

// dispatch is resolved once per forward call and threaded through
inline double kdot(const simd::Kernels& kr, const double* a, const double* b, std::size_t n) {
    return kr.dot_f64(a, b, n);
}
inline float kdot(const simd::Kernels& kr, const float* a, const float* b, std::size_t n) {
    return kr.dot_f32(a, b, n);
}
inline void kaxpy(const simd::Kernels& kr, double* y, const double* x, double a,
                  std::size_t n) {
    kr.axpy_f64(y, x, a, n);
}
inline void kaxpy(const simd::Kernels& kr, float* y, const float* x, float a, std::size_t n) {
    kr.axpy_f32(y, x, a, n);
}

enum class Variant { delta, gdn, kda };

template <typename T>
void ut_solve_t(const simd::Kernels& kr, const T* gram, std::int64_t C, T* rhs,
                std::int64_t ncols) {
    for (std::int64_t i = 1; i < C; ++i) {
        T* row = rhs + i * ncols;
        const T* grow = gram + i * C;
        for (std::int64_t j = 0; j < i; ++j) {
            if (grow[j] != T(0)) {
                kaxpy(kr, row, rhs + j * ncols, -grow[j], static_cast<std::size_t>(ncols));
            }
        }
    }
}

// Per-lane gathered inputs, padded to a multiple of C with beta=0 no-op
// tokens (the rank-one write vanishes for every variant when beta=0).
template <typename T>
struct LaneBuffers {
    std::int64_t padded = 0;
    std::vector<T> query;      // [Tp,K] already query-scaled
    std::vector<T> key;        // [Tp,K]
    std::vector<T> write_key;  // [Tp,K]
    std::vector<T> value;      // [Tp,V]
    std::vector<T> beta;       // [Tp]
    std::vector<T> alpha_s;    // [Tp] (1 on padding)
    std::vector<T> alpha_v;    // [Tp,K] (1 on padding)
    std::vector<T> state;      // [V,K] or [K,V]
};

template <typename T>
void gather_lane(const TokenStream& stream, const WriteKeySequence* wk,
                 const GateSequence& gates, const FastWeightState& init, Variant variant,
                 std::int64_t b, std::int64_t h, std::int64_t padded, double q_scale,
                 LaneBuffers<T>& lane) {
    const auto Tn = stream.length, K = stream.key_dim, V = stream.value_dim;
    lane.padded = padded;
    lane.query.assign(static_cast<std::size_t>(padded * K), T(0));
    lane.key.assign(static_cast<std::size_t>(padded * K), T(0));
    lane.write_key.assign(static_cast<std::size_t>(padded * K), T(0));
    lane.value.assign(static_cast<std::size_t>(padded * V), T(0));
    lane.beta.assign(static_cast<std::size_t>(padded), T(0));
    if (variant == Variant::gdn) lane.alpha_s.assign(static_cast<std::size_t>(padded), T(1));
    if (variant == Variant::kda) lane.alpha_v.assign(static_cast<std::size_t>(padded * K), T(1));

    for (std::int64_t t = 0; t < Tn; ++t) {
        const double* q = stream.query(b, t, h);
        const double* k = stream.key(b, t, h);
        const double* w = wk != nullptr ? wk->write_key(b, t, h) : k;
        const double* v = stream.value(b, t, h);
        for (std::int64_t i = 0; i < K; ++i) {
            lane.query[t * K + i] = static_cast<T>(q_scale * q[i]);
            lane.key[t * K + i] = static_cast<T>(k[i]);
            lane.write_key[t * K + i] = static_cast<T>(w[i]);
        }
        for (std::int64_t i = 0; i < V; ++i) lane.value[t * V + i] = static_cast<T>(v[i]);
        lane.beta[t] = static_cast<T>(stream.beta(b, t, h));
        if (variant == Variant::gdn) {
            lane.alpha_s[t] = static_cast<T>(gates.alpha_scalar[stream.b_offset(b, t, h)]);
        } else if (variant == Variant::kda) {
            const double* a = gates.alpha_vector.data() + stream.k_offset(b, t, h);
            for (std::int64_t i = 0; i < K; ++i) lane.alpha_v[t * K + i] = static_cast<T>(a[i]);
        }
    }
    const double* s0 = init.lane(b, h);
    lane.state.resize(static_cast<std::size_t>(init.rows * init.cols));
    for (std::int64_t i = 0; i < init.rows * init.cols; ++i) {
        lane.state[i] = static_cast<T>(s0[i]);
    }
}

template <typename T>
void ChunkWorkspace_resize(ChunkWorkspace<T>& w, std::int64_t C, std::int64_t K, std::int64_t V) {
    w.chunk_size = C;
    w.gram.assign(static_cast<std::size_t>(C * C), T(0));
    w.solved_key.assign(static_cast<std::size_t>(C * K), T(0));
    w.solved_value.assign(static_cast<std::size_t>(C * V), T(0));
    w.chunk_update.assign(static_cast<std::size_t>(C * V), T(0));
    w.score.assign(static_cast<std::size_t>(C * C), T(0));
    w.gamma.assign(static_cast<std::size_t>(C), T(1));
    w.gamma_vec.assign(static_cast<std::size_t>(C * K), T(1));
    w.gated_key.assign(static_cast<std::size_t>(C * K), T(0));
    w.gated_query.assign(static_cast<std::size_t>(C * K), T(0));
    w.norm_write_key.assign(static_cast<std::size_t>(C * K), T(0));
}

// One chunk of the WY pass; state advances in place.
template <typename T>
void run_chunk(const simd::Kernels& kr, Variant variant, const LaneBuffers<T>& lane,
               std::int64_t base, std::int64_t C, std::int64_t K, std::int64_t V,
               ChunkWorkspace<T>& w, T* state, T* out_rows, std::int64_t* floor_hits) {
    const T* key = lane.key.data() + base * K;
    const T* wkey = lane.write_key.data() + base * K;
    const T* query = lane.query.data() + base * K;
    const T* value = lane.value.data() + base * V;
    const T* beta = lane.beta.data() + base;
    const auto floor = static_cast<T>(kDecayFloor);

    // Decay prefixes and the gated/normalized key factors.
    if (variant == Variant::delta) {
        std::memcpy(w.gated_key.data(), key, sizeof(T) * C * K);
        std::memcpy(w.gated_query.data(), query, sizeof(T) * C * K);
        std::memcpy(w.norm_write_key.data(), wkey, sizeof(T) * C * K);
    } else if (variant == Variant::gdn) {
        const T* alpha = lane.alpha_s.data() + base;
        T run = T(1);
        for (std::int64_t i = 0; i < C; ++i) {
            run *= alpha[i];
            w.gamma[i] = run;
            T g = run;
            if (g < floor) {
                g = floor;
                ++*floor_hits;
            }
            for (std::int64_t j = 0; j < K; ++j) {
                w.gated_key[i * K + j] = run * key[i * K + j];
                w.gated_query[i * K + j] = run * query[i * K + j];
                w.norm_write_key[i * K + j] = wkey[i * K + j] / g;
            }
        }
    } else {
        const T* alpha = lane.alpha_v.data() + base * K;
        for (std::int64_t j = 0; j < K; ++j) w.gamma_vec[j] = alpha[j];
        for (std::int64_t i = 1; i < C; ++i) {
            for (std::int64_t j = 0; j < K; ++j) {
                w.gamma_vec[i * K + j] = w.gamma_vec[(i - 1) * K + j] * alpha[i * K + j];
            }
        }
        for (std::int64_t i = 0; i < C; ++i) {
            for (std::int64_t j = 0; j < K; ++j) {
                const T run = w.gamma_vec[i * K + j];
                T g = run;
                if (g < floor) {
                    g = floor;
                    ++*floor_hits;
                }
                w.gated_key[i * K + j] = run * key[i * K + j];
                w.gated_query[i * K + j] = run * query[i * K + j];
                w.norm_write_key[i * K + j] = wkey[i * K + j] / g;
            }
        }
    }

    // Strictly lower asymmetric Gram: beta_i <gated_k_i, norm_wk_j>, j < i.
    std::fill(w.gram.begin(), w.gram.end(), T(0));
    for (std::int64_t i = 1; i < C; ++i) {
        for (std::int64_t j = 0; j < i; ++j) {
            w.gram[i * C + j] = beta[i] * kdot(kr, w.gated_key.data() + i * K,
                                               w.norm_write_key.data() + j * K,
                                               static_cast<std::size_t>(K));
        }
    }

    // W = (I+G)^-1 (beta . gated_key), U = (I+G)^-1 (beta . value).
    for (std::int64_t i = 0; i < C; ++i) {
        for (std::int64_t j = 0; j < K; ++j) {
            w.solved_key[i * K + j] = beta[i] * w.gated_key[i * K + j];
        }
        for (std::int64_t j = 0; j < V; ++j) {
            w.solved_value[i * V + j] = beta[i] * value[i * V + j];
        }
    }
    ut_solve_t(kr, w.gram.data(), C, w.solved_key.data(), K);
    ut_solve_t(kr, w.gram.data(), C, w.solved_value.data(), V);

    // chunk_update = U - W S^T (vxk) or U - W S (kxv).
    if (variant == Variant::kda) {
        std::fill(w.chunk_update.begin(), w.chunk_update.end(), T(0));
        for (std::int64_t i = 0; i < C; ++i) {
            T* row = w.chunk_update.data() + i * V;
            for (std::int64_t j = 0; j < K; ++j) {
                kaxpy(kr, row, state + j * V, -w.solved_key[i * K + j],
                      static_cast<std::size_t>(V));
            }
            for (std::int64_t j = 0; j < V; ++j) row[j] += w.solved_value[i * V + j];
        }
    } else {
        for (std::int64_t i = 0; i < C; ++i) {
            T* row = w.chunk_update.data() + i * V;
            for (std::int64_t j = 0; j < V; ++j) {
                row[j] = w.solved_value[i * V + j] -
                         kdot(kr, w.solved_key.data() + i * K, state + j * K,
                              static_cast<std::size_t>(K));
            }
        }
    }

    // Inclusive-lower local score tril(gated_q norm_wk^T).
    for (std::int64_t i = 0; i < C; ++i) {
        for (std::int64_t j = 0; j <= i; ++j) {
            w.score[i * C + j] = kdot(kr, w.gated_query.data() + i * K,
                                      w.norm_write_key.data() + j * K,
                                      static_cast<std::size_t>(K));
        }
    }

    // Outputs: boundary-state read plus the intra-chunk score against the
    // cumulative update rows.
    if (variant == Variant::kda) {
        for (std::int64_t i = 0; i < C; ++i) {
            T* row = out_rows + i * V;
            std::memset(row, 0, sizeof(T) * V);
            for (std::int64_t j = 0; j < K; ++j) {
                kaxpy(kr, row, state + j * V, w.gated_query[i * K + j],
                      static_cast<std::size_t>(V));
            }
            for (std::int64_t j = 0; j <= i; ++j) {
                kaxpy(kr, row, w.chunk_update.data() + j * V, w.score[i * C + j],
                      static_cast<std::size_t>(V));
            }
        }
    } else {
        for (std::int64_t i = 0; i < C; ++i) {
            T* row = out_rows + i * V;
            for (std::int64_t j = 0; j < V; ++j) {
                row[j] = kdot(kr, w.gated_query.data() + i * K, state + j * K,
                              static_cast<std::size_t>(K));
            }
            for (std::int64_t j = 0; j <= i; ++j) {
                kaxpy(kr, row, w.chunk_update.data() + j * V, w.score[i * C + j],
                      static_cast<std::size_t>(V));
            }
        }
    }

    // State advance with the suffix-decayed write keys.
    if (variant == Variant::delta) {
        for (std::int64_t i = 0; i < C; ++i) {
            const T* wrow = wkey + i * K;
            for (std::int64_t j = 0; j < V; ++j) {
                kaxpy(kr, state + j * K, wrow, w.chunk_update[i * V + j],
                      static_cast<std::size_t>(K));
            }
        }
    } else if (variant == Variant::gdn) {
        const T gamma_c = w.gamma[C - 1];
        for (std::int64_t j = 0; j < V * K; ++j) state[j] *= gamma_c;
        for (std::int64_t i = 0; i < C; ++i) {
            const T suffix = gamma_c / w.gamma[i];
            for (std::int64_t j = 0; j < V; ++j) {
                kaxpy(kr, state + j * K, wkey + i * K, suffix * w.chunk_update[i * V + j],
                      static_cast<std::size_t>(K));
            }
        }
    } else {
        const T* gamma_c = w.gamma_vec.data() + (C - 1) * K;
        for (std::int64_t j = 0; j < K; ++j) {
            T* row = state + j * V;
            for (std::int64_t i = 0; i < V; ++i) row[i] *= gamma_c[j];
        }
        for (std::int64_t i = 0; i < C; ++i) {
            for (std::int64_t j = 0; j < K; ++j) {
                const T swk = gamma_c[j] / w.gamma_vec[i * K + j] * wkey[i * K + j];
                kaxpy(kr, state + j * V, w.chunk_update.data() + i * V, swk,
                      static_cast<std::size_t>(V));
            }
        }
    }
}

template <typename T>
ChunkForwardResult chunk_forward_impl(const TokenStream& stream, Variant variant,
                                      const WriteKeySequence* wk, const GateSequence& gates,
                                      const FastWeightState* init_state, std::int64_t C,
                                      const ForwardOptions& opts) {
    const auto B = stream.batch, Tn = stream.length, H = stream.heads;
    const auto K = stream.key_dim, V = stream.value_dim;
    if (C <= 0) throw ValidationError("chunk_size must be positive");
    const std::int64_t padded = ((Tn + C - 1) / C) * C;
    const std::int64_t n_chunks = padded / C;
    const double q_scale = opts.scale_queries ? 1.0 / std::sqrt(static_cast<double>(K)) : 1.0;

    const auto orientation = variant == Variant::kda ? FastWeightState::Orientation::kxv
                                                     : FastWeightState::Orientation::vxk;
    FastWeightState init = init_state != nullptr
                               ? *init_state
                               : FastWeightState::zeros(orientation, B, H, K, V);
    if (init.orientation != orientation) {
        throw ValidationError("state orientation does not match the backbone convention");
    }

    ChunkForwardResult res;
    res.outputs.assign(static_cast<std::size_t>(B * Tn * H * V), 0.0);
    res.final_state = init;

    LaneBuffers<T> lane;
    ChunkWorkspace<T> w;
    ChunkWorkspace_resize(w, C, K, V);
    std::vector<T> out_rows(static_cast<std::size_t>(padded * V));
    const simd::Kernels& kr = simd::active();

    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t h = 0; h < H; ++h) {
            gather_lane(stream, wk, gates, init, variant, b, h, padded, q_scale, lane);
            for (std::int64_t n = 0; n < n_chunks; ++n) {
                run_chunk(kr, variant, lane, n * C, C, K, V, w, lane.state.data(),
                          out_rows.data() + n * C * V, &res.decay_floor_hits);
            }
            for (std::int64_t t = 0; t < Tn; ++t) {
                double* dst = res.outputs.data() + stream.v_offset(b, t, h);
                for (std::int64_t i = 0; i < V; ++i) {
                    dst[i] = static_cast<double>(out_rows[t * V + i]);
                }
            }
            double* s_out = res.final_state.lane(b, h);
            for (std::int64_t i = 0; i < init.rows * init.cols; ++i) {
                s_out[i] = static_cast<double>(lane.state[i]);
            }
        }
    }
    return res;
}

ChunkForwardResult run_variant(const TokenStream& stream, Variant variant,
                               const WriteKeySequence* wk, const GateSequence& gates,
                               const FastWeightState* init_state, std::int64_t C,
                               const ForwardOptions& opts, Precision prec) {
    if (wk != nullptr &&
        (wk->length != stream.length || wk->key_dim != stream.key_dim ||
         wk->batch != stream.batch || wk->heads != stream.heads)) {
        throw ValidationError("write-key sequence shape mismatch");
    }
    if (prec == Precision::f32) {
        return chunk_forward_impl<float>(stream, variant, wk, gates, init_state, C, opts);
    }
    return chunk_forward_impl<double>(stream, variant, wk, gates, init_state, C, opts);
}

}  // namespace

template <typename T>
void ChunkWorkspace<T>::resize(std::int64_t C, std::int64_t K, std::int64_t V) {
    ChunkWorkspace_resize(*this, C, K, V);
}

template struct ChunkWorkspace<double>;
template struct ChunkWorkspace<float>;

void ut_solve(const double* gram_strict_lower, std::int64_t chunk_size, double* rhs,
              std::int64_t ncols) {
    for (std::int64_t i = 0; i < chunk_size; ++i) {
        for (std::int64_t j = 0; j < chunk_size; ++j) {
            const double g = gram_strict_lower[i * chunk_size + j];
            if (!std::isfinite(g)) throw ValidationError("ut_solve: non-finite gram entry");
            if (j >= i && g != 0.0) {
                throw ValidationError("ut_solve: gram must be strictly lower triangular");
            }
        }
    }
    for (std::int64_t i = 0; i < chunk_size * ncols; ++i) {
        if (!std::isfinite(rhs[i])) throw ValidationError("ut_solve: non-finite rhs entry");
    }
    ut_solve_t(simd::active(), gram_strict_lower, chunk_size, rhs, ncols);
}

ChunkForwardResult chunk_forward_delta(const TokenStream& stream,
                                       const WriteKeySequence* write_keys,
                                       const FastWeightState* init_state,
                                       std::int64_t chunk_size, const ForwardOptions& opts,
                                       Precision prec) {
    GateSequence none;
    return run_variant(stream, Variant::delta, write_keys, none, init_state, chunk_size, opts,
                       prec);
}

ChunkForwardResult chunk_forward_gdn(const TokenStream& stream,
                                     const WriteKeySequence* write_keys,
                                     const GateSequence& gates,
                                     const FastWeightState* init_state, std::int64_t chunk_size,
                                     const ForwardOptions& opts, Precision prec) {
    if (!gates.has_alpha_scalar()) {
        throw ValidationError("chunk_forward_gdn requires alpha_scalar gates");
    }
    return run_variant(stream, Variant::gdn, write_keys, gates, init_state, chunk_size, opts,
                       prec);
}

ChunkForwardResult chunk_forward_kda(const TokenStream& stream,
                                     const WriteKeySequence* write_keys,
                                     const GateSequence& gates,
                                     const FastWeightState* init_state, std::int64_t chunk_size,
                                     const ForwardOptions& opts, Precision prec) {
    if (!gates.has_alpha_vector()) {
        throw ValidationError("chunk_forward_kda requires alpha_vector gates");
    }
    return run_variant(stream, Variant::kda, write_keys, gates, init_state, chunk_size, opts,
                       prec);
}

ChunkForwardResult chunk_forward(const TokenStream& stream, const BackboneSpec& spec,
                                 const GateSequence& gates,
                                 const PreconditionerState* init_precond,
                                 const FastWeightState* init_state, std::int64_t chunk_size,
                                 const ForwardOptions& opts, Precision prec) {
    spec.require_gates(gates);
    WriteKeySequence wk;
    const WriteKeySequence* wk_ptr = nullptr;
    if (spec.online_scaled) {
        PreconditionerState precond =
            init_precond != nullptr
                ? *init_precond
                : PreconditionerState::make(stream.batch, stream.heads, stream.key_dim);
        if (spec.apf && precond.retention_mode == PreconditionerState::Retention::none) {
            precond.retention_mode = PreconditionerState::Retention::data_dependent;
        }
        wk = phase1_sweep(stream, precond, gates, /*keep_trajectory=*/false);
        wk_ptr = &wk;
    }
    switch (spec.backbone) {
        case BackboneSpec::Backbone::delta_net:
            return chunk_forward_delta(stream, wk_ptr, init_state, chunk_size, opts, prec);
        case BackboneSpec::Backbone::gated_delta_net:
            return chunk_forward_gdn(stream, wk_ptr, gates, init_state, chunk_size, opts, prec);
        case BackboneSpec::Backbone::kda:
            return chunk_forward_kda(stream, wk_ptr, gates, init_state, chunk_size, opts, prec);
    }
    throw ValidationError("unknown backbone");
}

}  // namespace osdn
