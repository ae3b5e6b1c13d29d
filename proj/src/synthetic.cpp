#include "osdn/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "osdn/simd.hpp"

namespace osdn {

void ReplayConfig::validate() const {
    if (batch <= 0 || length <= 0 || heads <= 0 || key_dim <= 0 || value_dim <= 0 ||
        chunk_size <= 0 || n_dict <= 0) {
        throw ValidationError("replay config: all counts must be positive");
    }
    if (repeat < 1) throw ValidationError("replay config: repeat factor must be >= 1");
    if (length % repeat != 0) {
        throw ValidationError("replay config: length must be divisible by repeat");
    }
    if (orthogonal_dict && n_dict > key_dim) {
        throw ValidationError("replay config: dictionary larger than K in orthogonal mode");
    }
    if (!(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max)) {
        throw ValidationError("replay config: beta interval must sit inside (0,1)");
    }
    if (position_bins <= 0) throw ValidationError("replay config: position bins must be positive");
}

PreconditionerState ReplayConfig::make_precond() const {
    PreconditionerState p = PreconditionerState::make(batch, heads, key_dim);
    p.d_min = d_min;
    p.d_max = d_max;
    p.eta = eta;
    p.epsilon = epsilon;
    p.beta_aware = beta_aware;
    p.retention_mode = retention_mode;
    p.rho = rho;
    return p;
}

SyntheticStream make_replay_stream(const ReplayConfig& config) {
    config.validate();
    const auto B = config.batch, T = config.length, H = config.heads;
    const auto K = config.key_dim, V = config.value_dim, D = config.n_dict;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> beta_dist(config.beta_min, config.beta_max);

    SyntheticStream out;
    out.dict_keys.assign(D * K, 0.0);
    out.dict_values.assign(D * V, 0.0);
    if (config.orthogonal_dict) {
        // Disjoint coordinate blocks, one random unit vector per block.
        const std::int64_t block = K / D;
        for (std::int64_t c = 0; c < D; ++c) {
            const std::int64_t lo = c * block;
            const std::int64_t hi = (c == D - 1) ? K : lo + block;
            double norm_sq = 0.0;
            for (std::int64_t i = lo; i < hi; ++i) {
                const double x = gauss(rng);
                out.dict_keys[c * K + i] = x;
                norm_sq += x * x;
            }
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (std::int64_t i = lo; i < hi; ++i) out.dict_keys[c * K + i] *= inv;
        }
    } else {
        for (std::int64_t c = 0; c < D; ++c) {
            double norm_sq = 0.0;
            for (std::int64_t i = 0; i < K; ++i) {
                const double x = gauss(rng);
                out.dict_keys[c * K + i] = x;
                norm_sq += x * x;
            }
            const double inv = 1.0 / std::sqrt(norm_sq);
            for (std::int64_t i = 0; i < K; ++i) out.dict_keys[c * K + i] *= inv;
        }
    }
    for (std::int64_t c = 0; c < D * V; ++c) out.dict_values[c] = gauss(rng);

    // Base segment, then concatenation with itself (classes, keys, values,
    // betas all repeat; queries are fresh noise).  Classes are balanced
    // round-robin then shuffled, and the write gate is typed by class, so
    // every class has a fixed gated Newton point 1/beta_c.
    const std::int64_t base = T / config.repeat;
    if (base < D) {
        throw ValidationError("replay config: base segment shorter than the dictionary");
    }
    std::vector<std::int32_t> base_ids(base);
    for (std::int64_t t = 0; t < base; ++t) base_ids[t] = static_cast<std::int32_t>(t % D);
    std::shuffle(base_ids.begin(), base_ids.end(), rng);

    std::vector<double> class_betas(D);
    for (auto& x : class_betas) x = beta_dist(rng);

    std::vector<double> base_values(base * V);
    for (std::int64_t t = 0; t < base; ++t) {
        for (std::int64_t i = 0; i < V; ++i) {
            base_values[t * V + i] = config.typed_values
                                         ? out.dict_values[base_ids[t] * V + i]
                                         : gauss(rng);
        }
    }

    out.class_ids.resize(T);
    out.stream = TokenStream::zeros(B, T, H, K, V);
    out.stream.keys_unit_norm = true;
    for (std::int64_t t = 0; t < T; ++t) {
        out.class_ids[t] = base_ids[t % base];
    }
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < T; ++t) {
            const std::int32_t c = out.class_ids[t];
            for (std::int64_t h = 0; h < H; ++h) {
                double* k = out.stream.keys.data() + out.stream.k_offset(b, t, h);
                double* v = out.stream.values.data() + out.stream.v_offset(b, t, h);
                double* q = out.stream.queries.data() + out.stream.k_offset(b, t, h);
                for (std::int64_t i = 0; i < K; ++i) k[i] = out.dict_keys[c * K + i];
                for (std::int64_t i = 0; i < V; ++i) v[i] = base_values[(t % base) * V + i];
                for (std::int64_t i = 0; i < K; ++i) q[i] = gauss(rng);
                out.stream.betas[out.stream.b_offset(b, t, h)] = class_betas[c];
            }
        }
    }

    if (config.spec.backbone == BackboneSpec::Backbone::gated_delta_net) {
        std::uniform_real_distribution<double> alpha_dist(0.9, 1.0);
        out.gates.alpha_scalar.resize(static_cast<std::size_t>(B * T * H));
        for (auto& x : out.gates.alpha_scalar) x = alpha_dist(rng);
    } else if (config.spec.backbone == BackboneSpec::Backbone::kda) {
        std::uniform_real_distribution<double> alpha_dist(0.9, 1.0);
        out.gates.alpha_vector.resize(static_cast<std::size_t>(B * T * H * K));
        for (auto& x : out.gates.alpha_vector) x = alpha_dist(rng);
    }
    if (config.retention_mode == PreconditionerState::Retention::data_dependent ||
        config.spec.apf) {
        std::uniform_real_distribution<double> r_dist(0.95, 1.0);
        out.gates.retention.resize(static_cast<std::size_t>(B * T * H));
        for (auto& x : out.gates.retention) x = r_dist(rng);
    }
    return out;
}

TokenStream random_stream(std::mt19937_64& rng, std::int64_t B, std::int64_t T, std::int64_t H,
                          std::int64_t K, std::int64_t V, double beta_min, double beta_max,
                          bool unit_keys) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> beta_dist(beta_min, beta_max);
    TokenStream s = TokenStream::zeros(B, T, H, K, V);
    for (auto& x : s.queries) x = gauss(rng);
    for (auto& x : s.keys) x = gauss(rng);
    for (auto& x : s.values) x = gauss(rng);
    for (auto& x : s.betas) x = beta_dist(rng);
    if (unit_keys) s = normalize_keys(std::move(s));
    return s;
}

GateSequence random_gates(std::mt19937_64& rng, const BackboneSpec& spec,
                          const TokenStream& stream, double alpha_min, double alpha_max,
                          double retention_min, double retention_max) {
    std::uniform_real_distribution<double> alpha_dist(alpha_min, alpha_max);
    std::uniform_real_distribution<double> r_dist(retention_min, retention_max);
    GateSequence g;
    const auto n = static_cast<std::size_t>(stream.batch * stream.length * stream.heads);
    if (spec.backbone == BackboneSpec::Backbone::gated_delta_net) {
        g.alpha_scalar.resize(n);
        for (auto& x : g.alpha_scalar) x = alpha_dist(rng);
    } else if (spec.backbone == BackboneSpec::Backbone::kda) {
        g.alpha_vector.resize(n * static_cast<std::size_t>(stream.key_dim));
        for (auto& x : g.alpha_vector) x = alpha_dist(rng);
    }
    if (spec.apf) {
        g.retention.resize(n);
        for (auto& x : g.retention) x = r_dist(rng);
    }
    return g;
}

}  // namespace osdn
