#include "osdn/types.hpp"

#include <cmath>
#include <cstddef>

#include "osdn/simd.hpp"

namespace osdn {
namespace {

std::string at(std::int64_t b, std::int64_t t, std::int64_t h, std::int64_t i = -1) {
    std::string s = " at (b=" + std::to_string(b) + ", t=" + std::to_string(t) +
                    ", h=" + std::to_string(h);
    if (i >= 0) s += ", i=" + std::to_string(i);
    return s + ")";
}

void check_finite(const std::vector<double>& v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw ValidationError(std::string(what) + " has non-finite entry at flat index " +
                                  std::to_string(i));
        }
    }
}

}  // namespace

TokenStream TokenStream::zeros(std::int64_t B, std::int64_t T, std::int64_t H,
                               std::int64_t K, std::int64_t V) {
    TokenStream s;
    s.batch = B;
    s.length = T;
    s.heads = H;
    s.key_dim = K;
    s.value_dim = V;
    s.queries.assign(static_cast<std::size_t>(B * T * H * K), 0.0);
    s.keys.assign(static_cast<std::size_t>(B * T * H * K), 0.0);
    s.values.assign(static_cast<std::size_t>(B * T * H * V), 0.0);
    s.betas.assign(static_cast<std::size_t>(B * T * H), 0.5);
    return s;
}

TokenStream validate_stream(TokenStream stream) {
    const auto B = stream.batch, T = stream.length, H = stream.heads;
    const auto K = stream.key_dim, V = stream.value_dim;
    if (B <= 0 || T <= 0 || H <= 0 || K <= 0 || V <= 0) {
        throw ValidationError("stream dimensions must be positive");
    }
    auto expect = [](std::size_t got, std::int64_t want, const char* what) {
        if (got != static_cast<std::size_t>(want)) {
            throw ValidationError(std::string(what) + " size mismatch: got " +
                                  std::to_string(got) + ", want " + std::to_string(want));
        }
    };
    expect(stream.queries.size(), B * T * H * K, "queries");
    expect(stream.keys.size(), B * T * H * K, "keys");
    expect(stream.values.size(), B * T * H * V, "values");
    expect(stream.betas.size(), B * T * H, "betas");

    check_finite(stream.queries, "queries");
    check_finite(stream.keys, "keys");
    check_finite(stream.values, "values");

    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t h = 0; h < H; ++h) {
                const double beta = stream.beta(b, t, h);
                if (!(beta > 0.0 && beta < 1.0)) {
                    throw ValidationError("gate out of open interval (0,1)" + at(b, t, h), b, t, h);
                }
                if (stream.keys_unit_norm) {
                    const double* k = stream.key(b, t, h);
                    const double norm = std::sqrt(simd::active().dot_f64(
                        k, k, static_cast<std::size_t>(K)));
                    if (std::abs(norm - 1.0) > 1e-12) {
                        throw ValidationError("keys_unit_norm set but |norm-1| > 1e-12" +
                                                  at(b, t, h),
                                              b, t, h);
                    }
                }
            }
        }
    }
    return stream;
}

TokenStream normalize_keys(TokenStream stream) {
    const auto K = stream.key_dim;
    for (std::int64_t b = 0; b < stream.batch; ++b) {
        for (std::int64_t t = 0; t < stream.length; ++t) {
            for (std::int64_t h = 0; h < stream.heads; ++h) {
                double* k = stream.keys.data() + stream.k_offset(b, t, h);
                const double norm =
                    std::sqrt(simd::active().dot_f64(k, k, static_cast<std::size_t>(K)));
                if (norm == 0.0) {
                    throw ValidationError("zero key cannot be normalized" + at(b, t, h), b, t, h);
                }
                const double inv = 1.0 / norm;
                for (std::int64_t i = 0; i < K; ++i) k[i] *= inv;
            }
        }
    }
    stream.keys_unit_norm = true;
    return stream;
}

PreconditionerState PreconditionerState::make(std::int64_t B, std::int64_t H, std::int64_t K,
                                              double d0) {
    PreconditionerState s;
    s.batch = B;
    s.heads = H;
    s.key_dim = K;
    s.d.assign(static_cast<std::size_t>(B * H * K), d0);
    return s;
}

void PreconditionerState::check() const {
    if (!(d_min > 0.0) || !(d_max >= d_min)) {
        throw ValidationError("preconditioner box requires 0 < d_min <= d_max");
    }
    if (!std::isfinite(eta) || !(eta > 0.0)) {
        throw ValidationError("eta must be finite and positive");
    }
    if (!std::isfinite(epsilon) || !(epsilon > 0.0)) {
        throw ValidationError("epsilon must be finite and positive");
    }
    if (d.size() != static_cast<std::size_t>(batch * heads * key_dim)) {
        throw ValidationError("preconditioner tensor size mismatch");
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(d[i] >= d_min && d[i] <= d_max)) {
            throw ValidationError("preconditioner entry outside [d_min,d_max] at flat index " +
                                  std::to_string(i));
        }
    }
}

FastWeightState FastWeightState::zeros(Orientation o, std::int64_t B, std::int64_t H,
                                       std::int64_t K, std::int64_t V) {
    FastWeightState s;
    s.orientation = o;
    s.batch = B;
    s.heads = H;
    s.rows = (o == Orientation::vxk) ? V : K;
    s.cols = (o == Orientation::vxk) ? K : V;
    s.s.assign(static_cast<std::size_t>(B * H * s.rows * s.cols), 0.0);
    return s;
}

void FastWeightState::check() const {
    if (s.size() != static_cast<std::size_t>(batch * heads * rows * cols)) {
        throw ValidationError("fast-weight tensor size mismatch");
    }
    check_finite(s, "fast-weight state");
}

void check_gates(const GateSequence& gates, const TokenStream& stream) {
    const auto n_scalar = static_cast<std::size_t>(stream.batch * stream.length * stream.heads);
    const auto n_vector = n_scalar * static_cast<std::size_t>(stream.key_dim);
    auto check_range = [](const std::vector<double>& v, const char* what) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!(v[i] > 0.0 && v[i] <= 1.0)) {
                throw ValidationError(std::string(what) + " outside (0,1] at flat index " +
                                      std::to_string(i));
            }
        }
    };
    if (gates.has_alpha_scalar()) {
        if (gates.alpha_scalar.size() != n_scalar) {
            throw ValidationError("alpha_scalar size mismatch");
        }
        check_range(gates.alpha_scalar, "alpha_scalar");
    }
    if (gates.has_alpha_vector()) {
        if (gates.alpha_vector.size() != n_vector) {
            throw ValidationError("alpha_vector size mismatch");
        }
        check_range(gates.alpha_vector, "alpha_vector");
    }
    if (gates.has_retention()) {
        if (gates.retention.size() != n_scalar) {
            throw ValidationError("retention size mismatch");
        }
        check_range(gates.retention, "retention");
    }
}

}  // namespace osdn
