#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "osdn/types.hpp"

// Phase-1 online preconditioner sweep: closed-form hypergradient feedback on
// the per-token write loss, the projected affine d recurrence (with optional
// retention), and write-key materialization.  Everything here is a pure
// function of keys, scalar gates, and retention signals; values and queries
// never enter.

namespace osdn {

// Closed-form feedback of one preconditioned write:
//   h(d) = ((1 - beta<d,k^2>)^2 - 1) / (2 * max(|k|^2, epsilon))
//   grad = -beta * (1 - beta<d,k^2>) / max(|k|^2, epsilon) * k^2
// key_norm_sq stores the floored norm actually used.
struct HypergradSample {
    double h_value = 0.0;
    std::vector<double> h_grad;
    double alignment = 0.0;    // <d, k^2>
    double key_norm_sq = 0.0;  // max(|k|^2, epsilon)
};

HypergradSample hypergrad_eval(std::span<const double> d, std::span<const double> k,
                               double beta, double epsilon);

// Hyperparameters of the online update, shared by all lanes.
struct PrecondParams {
    double d_min = 0.5;
    double d_max = 2.0;
    double eta = 0.003;
    double epsilon = 1e-6;
    bool beta_aware = true;

    static PrecondParams from(const PreconditionerState& s) {
        return {s.d_min, s.d_max, s.eta, s.epsilon, s.beta_aware};
    }
};

// One projected step of the d recurrence on a single lane, in place:
//   d <- clamp(retention*d + eta*b*(1 - b*<d,k^2>)/max(|k|^2,eps) * k^2, box)
// with b = beta when beta_aware, else 1.  scratch must hold K doubles.
void precond_step_lane(double* d, const double* k, double beta, double retention,
                       const PrecondParams& p, std::int64_t K, double* scratch);

// Value-returning single-lane step (the spec-level operation).
std::vector<double> precond_step(std::span<const double> d, std::span<const double> k,
                                 double beta, double retention, const PrecondParams& p);

// Pre-projection affine map of one step: d_bar = A d + b with
//   A = r*I - eta*b^2/max(|k|^2,eps) * k^2 (k^2)^T
//   b = eta*b/max(|k|^2,eps) * k^2.
struct AffineMap {
    std::vector<double> a;  // [K,K] row-major
    std::vector<double> b;  // [K]
};

AffineMap affine_map_coefficients(std::span<const double> k, double beta, double retention,
                                  const PrecondParams& p);

// Full sweep over a validated stream: emits write_keys[t] = d_t (.) k_t with
// the pre-update d (emit-before-update), then advances d.  Lanes (b,h) are
// independent; within a lane tokens are strictly sequential.
WriteKeySequence phase1_sweep(const TokenStream& stream, const PreconditionerState& init,
                              const GateSequence& gates, bool keep_trajectory);

// Retention signal for one token under the configured mode.
double retention_at(const PreconditionerState& init, const GateSequence& gates,
                    const TokenStream& stream, std::int64_t b, std::int64_t t, std::int64_t h);

}  // namespace osdn
