#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osdn/recurrent.hpp"
#include "osdn/types.hpp"

// Token-local theorem audits over traced runs: the residual-contraction bound
// against diagonal comparators, the repeated-key telescoping identity, and
// the numerically minimized comparator gap.  Products of ratios accumulate in
// log domain throughout (exact zeros become -inf).

namespace osdn {

struct EpsMinResult {
    std::vector<double> d;       // [K] box-constrained minimizer
    double eps = 0.0;            // achieved epsilon_T(d)
    double stationarity = 0.0;   // max violated first-order condition on the box
    std::int64_t iterations = 0;
};

// Minimizes eps_T(d) = (1/2T) sum_t (1 - beta_t <d, k_t^2>)^2 over the box by
// projected gradient.  keys is [T,K] for one lane.
EpsMinResult minimize_eps_diag(const std::vector<double>& keys, const std::vector<double>& betas,
                               std::int64_t K, double d_min, double d_max);

// Convenience wrapper over one (b,h) lane of a stream.
EpsMinResult minimize_eps_diag(const TokenStream& stream, double d_min, double d_max,
                               std::int64_t b = 0, std::int64_t h = 0);

double eps_of_comparator(const std::vector<double>& keys, const std::vector<double>& betas,
                         std::int64_t K, const std::vector<double>& d);

struct ComparatorVerdict {
    std::string label;
    double eps = 0.0;         // eps_T(d)
    double regret = 0.0;      // R_T(d) measured at the trajectory
    double bound_log = 0.0;   // T log(2 eps + 2 R_T/T)
    bool holds = true;
};

struct TokenLocalLaneReport {
    std::int64_t b = 0, h = 0;
    double log_q_product = 0.0;  // sum log q_t (can be -inf)
    std::int64_t tokens = 0;
    std::int64_t degenerate_tokens = 0;  // f_before at the zero floor; excluded
    std::vector<ComparatorVerdict> comparators;
    bool all_hold = true;
};

struct TokenLocalAuditReport {
    std::vector<TokenLocalLaneReport> lanes;
    bool all_hold = true;
};

// Checks prod q_t <= (2 eps_T(d) + 2 R_T(d)/T)^T per lane for the minimized
// comparator, the initial d, and the all-ones comparator.  Requires unit-norm
// keys and a forward trace with the d trajectory retained.
TokenLocalAuditReport token_local_audit(const TokenStream& stream, const ResidualTrace& trace,
                                        const WriteKeySequence& wk,
                                        const PreconditionerState& params);

struct RepeatedKeyAuditReport {
    double per_class_log = 0.0;  // sum_c log F_c(S_T)/F_c(S_0)
    double trace_log = 0.0;      // sum_t log q_t
    std::int64_t classes = 0;
    bool both_zero = false;  // both sides collapsed to an exact zero product
    bool holds = true;       // equality within 1e-10 in log domain
};

// Telescoping identity for block-orthogonal typed keys: the product of
// per-class loss ratios between the initial and final states equals the
// product of traced per-token ratios.  class_keys/class_values are
// [n_class,K] / [n_class,V]; class_ids maps token t of lane (b,h)=(0,0).
RepeatedKeyAuditReport repeated_key_audit(const TokenStream& stream,
                                          const std::vector<std::int32_t>& class_ids,
                                          const std::vector<double>& class_keys,
                                          const std::vector<double>& class_values,
                                          std::int64_t n_class, const ResidualTrace& trace,
                                          const FastWeightState& initial_state,
                                          const FastWeightState& final_state);

struct AlternatingCounterexampleReport {
    double log_q_product = 0.0;       // -inf under exact per-token writes
    double distance_to_optimum = 0.0; // |S_T - S_population*|_F
    bool contraction_total = false;   // log product collapsed to -inf
};

// The K=V=1 alternating-target stream driven at the gated Newton point:
// every token-local residual is annihilated while the state oscillates at
// distance 1 from the population optimum.
AlternatingCounterexampleReport run_alternating_counterexample(std::int64_t horizon);

}  // namespace osdn
