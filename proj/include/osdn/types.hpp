#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace osdn {

// Thrown by validating constructors/checkers; carries the offending index.
struct ValidationError : std::runtime_error {
    ValidationError(std::string msg, std::int64_t b = -1, std::int64_t t = -1,
                    std::int64_t h = -1, std::int64_t i = -1)
        : std::runtime_error(std::move(msg)), batch(b), token(t), head(h), coord(i) {}
    std::int64_t batch, token, head, coord;
};

// Batched per-token layer inputs in [B,T,H,*] row-major layout.
// betas live in the open interval (0,1); keys_unit_norm asserts |norm-1| <= 1e-12.
struct TokenStream {
    std::int64_t batch = 0;
    std::int64_t length = 0;
    std::int64_t heads = 0;
    std::int64_t key_dim = 0;
    std::int64_t value_dim = 0;
    std::vector<double> queries;  // [B,T,H,K]
    std::vector<double> keys;     // [B,T,H,K]
    std::vector<double> values;   // [B,T,H,V]
    std::vector<double> betas;    // [B,T,H]
    bool keys_unit_norm = false;

    static TokenStream zeros(std::int64_t B, std::int64_t T, std::int64_t H,
                             std::int64_t K, std::int64_t V);

    std::int64_t lane_count() const { return batch * heads; }
    std::int64_t k_offset(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return (((b * length) + t) * heads + h) * key_dim;
    }
    std::int64_t v_offset(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return (((b * length) + t) * heads + h) * value_dim;
    }
    std::int64_t b_offset(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return ((b * length) + t) * heads + h;
    }
    const double* key(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return keys.data() + k_offset(b, t, h);
    }
    const double* query(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return queries.data() + k_offset(b, t, h);
    }
    const double* value(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return values.data() + v_offset(b, t, h);
    }
    double beta(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return betas[b_offset(b, t, h)];
    }
};

// Checks shapes, finiteness, beta range, and (when flagged) unit key norms.
TokenStream validate_stream(TokenStream stream);

// Scales every key to unit l2 norm and sets keys_unit_norm.
// Throws ValidationError at the first zero key.
TokenStream normalize_keys(TokenStream stream);

// Diagonal preconditioner state per (batch, head) lane plus the online
// hyperparameters: feasible box [d_min,d_max], online step eta, key-norm
// floor epsilon, the beta-aware switch, and the retention mode for the
// forgetting gate applied to d (never to the fast-weight state).
struct PreconditionerState {
    enum class Retention { none, constant, data_dependent };

    std::int64_t batch = 0;
    std::int64_t heads = 0;
    std::int64_t key_dim = 0;
    std::vector<double> d;  // [B,H,K]
    double d_min = 0.5;
    double d_max = 2.0;
    double eta = 0.003;
    double epsilon = 1e-6;
    bool beta_aware = true;
    Retention retention_mode = Retention::none;
    double rho = 0.999;  // constant-mode retention value

    static PreconditionerState make(std::int64_t B, std::int64_t H, std::int64_t K,
                                    double d0 = 1.0);
    double* lane(std::int64_t b, std::int64_t h) {
        return d.data() + (b * heads + h) * key_dim;
    }
    const double* lane(std::int64_t b, std::int64_t h) const {
        return d.data() + (b * heads + h) * key_dim;
    }
    void check() const;  // throws ValidationError on any violated invariant
};

// Matrix-valued fast-weight memory.  DeltaNet/GDN store [V,K] per lane
// (orientation vxk); KDA stores the transposed [K,V] (orientation kxv).
struct FastWeightState {
    enum class Orientation { vxk, kxv };

    Orientation orientation = Orientation::vxk;
    std::int64_t batch = 0;
    std::int64_t heads = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> s;  // [B,H,rows,cols]

    static FastWeightState zeros(Orientation o, std::int64_t B, std::int64_t H,
                                 std::int64_t K, std::int64_t V);
    double* lane(std::int64_t b, std::int64_t h) {
        return s.data() + (b * heads + h) * rows * cols;
    }
    const double* lane(std::int64_t b, std::int64_t h) const {
        return s.data() + (b * heads + h) * rows * cols;
    }
    void check() const;
};

// Backbone decay signals.  A field is present iff its vector is non-empty;
// which fields are required depends on the backbone and retention mode.
struct GateSequence {
    std::vector<double> alpha_scalar;  // [B,T,H], GDN forget gate in (0,1]
    std::vector<double> alpha_vector;  // [B,T,H,K], KDA channel gate in (0,1]
    std::vector<double> retention;     // [B,T,H], preconditioner retention in (0,1]

    bool has_alpha_scalar() const { return !alpha_scalar.empty(); }
    bool has_alpha_vector() const { return !alpha_vector.empty(); }
    bool has_retention() const { return !retention.empty(); }
};

void check_gates(const GateSequence& gates, const TokenStream& stream);

// Phase-1 output: the preconditioned write keys plus the final d state and,
// when requested, the full d trajectory (d at entry to each token).
struct WriteKeySequence {
    std::int64_t batch = 0;
    std::int64_t length = 0;
    std::int64_t heads = 0;
    std::int64_t key_dim = 0;
    std::vector<double> write_keys;    // [B,T,H,K]
    std::vector<double> d_final;       // [B,H,K]
    std::vector<double> d_trajectory;  // [B,T,H,K] when retained, else empty

    std::int64_t k_offset(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return (((b * length) + t) * heads + h) * key_dim;
    }
    const double* write_key(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return write_keys.data() + k_offset(b, t, h);
    }
    bool has_trajectory() const { return !d_trajectory.empty(); }
    const double* d_at(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return d_trajectory.data() + k_offset(b, t, h);
    }
};

// Per-token residual records feeding the q_geo diagnostic and theorem audits.
// q = f_after/f_before with q := 1 whenever f_before is (numerically) zero.
struct ResidualTrace {
    struct Entry {
        double f_before = 0.0;
        double f_after = 0.0;
        double grad_norm_sq = 0.0;
        double q = 1.0;
        std::int32_t position_bin = 0;
    };

    std::int64_t batch = 0;
    std::int64_t length = 0;
    std::int64_t heads = 0;
    std::vector<Entry> entries;  // [B,T,H]

    Entry& at(std::int64_t b, std::int64_t t, std::int64_t h) {
        return entries[((b * length) + t) * heads + h];
    }
    const Entry& at(std::int64_t b, std::int64_t t, std::int64_t h) const {
        return entries[((b * length) + t) * heads + h];
    }
};

// Below this threshold f_before is treated as exactly zero when forming q.
inline constexpr double kResidualZeroFloor = 1e-30;

}  // namespace osdn
