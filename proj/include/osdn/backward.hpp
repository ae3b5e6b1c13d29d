#pragma once

#include <cstdint>
#include <vector>

#include "osdn/recurrent.hpp"
#include "osdn/types.hpp"

// Reverse-mode gradients of a scalar loss through the layer.  The backward
// sweep runs over the recurrent formulation only (chunk kernels are forward
// surfaces): phase 2 produces the write-key cotangent, which factors into
// per-token d cotangents, and those are propagated by a reverse sweep over
// the projected affine d recurrence.  Clamped coordinates pass zero gradient.

namespace osdn {

struct WriteKeyBackward {
    std::vector<double> grad_keys_partial;  // [B,T,H,K]: d_t (.) grad_wk
    std::vector<double> grad_d;             // [B,T,H,K]: k_t (.) grad_wk
};

// Factors the write-key cotangent through k~ = d (.) k.  Requires the d
// trajectory retained during the forward sweep.
WriteKeyBackward backward_write_key(const std::vector<double>& grad_wrt_write_keys,
                                    const TokenStream& stream, const WriteKeySequence& wk);

struct DRecurrenceBackward {
    std::vector<double> grad_keys;       // [B,T,H,K]
    std::vector<double> grad_betas;      // [B,T,H] (zero unless beta-aware)
    std::vector<double> grad_d0;         // [B,H,K]
    std::vector<double> grad_retention;  // [B,T,H] when data_dependent, else empty
    double grad_rho = 0.0;               // constant retention mode
};

// Reverse accumulation through d_{t+1} = clamp(r_t d_t + step_t k_t^2).
DRecurrenceBackward backward_d_recurrence(const std::vector<double>& grad_d_per_token,
                                          const TokenStream& stream,
                                          const PreconditionerState& init,
                                          const GateSequence& gates,
                                          const WriteKeySequence& wk);

struct LayerGradients {
    std::vector<double> queries;       // [B,T,H,K]
    std::vector<double> keys;          // [B,T,H,K]
    std::vector<double> values;        // [B,T,H,V]
    std::vector<double> betas;         // [B,T,H]
    std::vector<double> alpha_scalar;  // [B,T,H] when present
    std::vector<double> alpha_vector;  // [B,T,H,K] when present
    std::vector<double> retention;     // [B,T,H] when data_dependent
    double rho = 0.0;
    std::vector<double> d0;          // [B,H,K] for online-scaled variants
    std::vector<double> init_state;  // [B,H,rows,cols]
};

// Full-layer reverse pass for a loss with cotangent grad_outputs [B,T,H,V]
// (and optionally a cotangent on the final state).
LayerGradients layer_backward(const TokenStream& stream, const BackboneSpec& spec,
                              const GateSequence& gates, const FastWeightState* init_state,
                              const PreconditionerState* init_precond,
                              const std::vector<double>& grad_outputs,
                              const std::vector<double>* grad_final_state = nullptr,
                              const ForwardOptions& opts = {});

}  // namespace osdn
