#pragma once

#include <cstdint>
#include <vector>

#include "osdn/precond.hpp"
#include "osdn/types.hpp"

// Exact token-by-token recurrences for the six variants (DeltaNet, OSDN,
// GDN, OSGDN, KDA, OSKDA).  This path is the ground truth for the chunk
// kernels and the substrate of the residual diagnostic; the backward pass
// also runs over it.

namespace osdn {

struct BackboneSpec {
    enum class Backbone { delta_net, gated_delta_net, kda };

    Backbone backbone = Backbone::delta_net;
    bool online_scaled = false;
    bool apf = false;  // data-dependent retention on the preconditioner state

    FastWeightState::Orientation orientation() const {
        return backbone == Backbone::kda ? FastWeightState::Orientation::kxv
                                         : FastWeightState::Orientation::vxk;
    }
    const char* name() const;
    // Throws unless the gates required by this backbone are present.
    void require_gates(const GateSequence& gates) const;
};

struct ForwardOptions {
    bool scale_queries = true;   // apply K^{-1/2} to queries in both paths
    std::int32_t trace_bins = 1;
    bool with_trace = true;
    bool keep_trajectory = false;  // retain d_t per token in write_keys
};

struct ForwardResult {
    std::vector<double> outputs;  // [B,T,H,V]
    FastWeightState final_state;
    ResidualTrace trace;
    WriteKeySequence write_keys;  // phase-1 product; mirrors keys for host variants
};

// One DeltaNet step on a [V,K] state, in place.
//   u = v - S k;  S += beta * u * kt^T;  out = S' (q_scale * q)
// residual receives u.
void step_delta(double* s, const double* q, const double* k, const double* kt,
                const double* v, double beta, std::int64_t K, std::int64_t V,
                double q_scale, double* out, double* residual);

// Gated DeltaNet step: S_bar = alpha*S; e = v - S_bar k; S = S_bar + beta e kt^T.
// residual receives the post-gate e.
void step_gdn(double* s, const double* q, const double* k, const double* kt,
              const double* v, double beta, double alpha, std::int64_t K, std::int64_t V,
              double q_scale, double* out, double* residual);

// KDA step on the transposed [K,V] state:
//   S_bar = Diag(alpha) S; u = v - S_bar^T k; S = S_bar + beta kt u^T; out = S'^T q.
void step_kda(double* s, const double* q, const double* k, const double* kt,
              const double* v, double beta, const double* alpha_vec, std::int64_t K,
              std::int64_t V, double q_scale, double* out, double* residual);

// Full forward pass.  init_state / init_precond may be null (zero state,
// default preconditioner).  Phase 1 runs first for online-scaled variants;
// host variants use the raw keys as write keys.
ForwardResult run_recurrent(const TokenStream& stream, const BackboneSpec& spec,
                            const GateSequence& gates, const FastWeightState* init_state,
                            const PreconditionerState* init_precond,
                            const ForwardOptions& opts = {});

// Residual read for a given state/orientation: out[V] = v - read(S, k).
// Exposed for the audits, which recompute per-class losses independently.
void residual_read(const FastWeightState& state, std::int64_t b, std::int64_t h,
                   const double* k, const double* v, double* out);

}  // namespace osdn
