#include "osdn/audits.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "osdn/precond.hpp"
#include "osdn/simd.hpp"

namespace osdn {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double dot(const double* a, const double* b, std::int64_t n) {
    return simd::active().dot_f64(a, b, static_cast<std::size_t>(n));
}

}  // namespace

double eps_of_comparator(const std::vector<double>& keys, const std::vector<double>& betas,
                         std::int64_t K, const std::vector<double>& d) {
    const auto T = static_cast<std::int64_t>(betas.size());
    double acc = 0.0;
    std::vector<double> ksq(K);
    for (std::int64_t t = 0; t < T; ++t) {
        const double* k = keys.data() + t * K;
        simd::active().hadamard_f64(ksq.data(), k, k, static_cast<std::size_t>(K));
        const double miss = 1.0 - betas[t] * dot(d.data(), ksq.data(), K);
        acc += miss * miss;
    }
    return acc / (2.0 * static_cast<double>(T));
}

EpsMinResult minimize_eps_diag(const std::vector<double>& keys, const std::vector<double>& betas,
                               std::int64_t K, double d_min, double d_max) {
    const auto T = static_cast<std::int64_t>(betas.size());
    // eps is a convex least-squares objective in d with Hessian
    // (1/T) sum_t beta_t^2 s_t s_t^T; its trace bounds the step size.
    std::vector<double> ksq(T * K);
    for (std::int64_t t = 0; t < T; ++t) {
        simd::active().hadamard_f64(ksq.data() + t * K, keys.data() + t * K,
                                    keys.data() + t * K, static_cast<std::size_t>(K));
    }
    double lip = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
        lip += betas[t] * betas[t] * dot(ksq.data() + t * K, ksq.data() + t * K, K);
    }
    lip = std::max(lip / static_cast<double>(T), 1e-12);
    const double lr = 1.0 / lip;

    EpsMinResult res;
    res.d.assign(K, std::min(std::max(1.0, d_min), d_max));
    std::vector<double> grad(K);
    const std::int64_t max_iters = 100000;
    for (res.iterations = 0; res.iterations < max_iters; ++res.iterations) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::int64_t t = 0; t < T; ++t) {
            const double miss = 1.0 - betas[t] * dot(res.d.data(), ksq.data() + t * K, K);
            simd::active().axpy_f64(grad.data(), ksq.data() + t * K,
                                    -betas[t] * miss / static_cast<double>(T),
                                    static_cast<std::size_t>(K));
        }
        // projected-gradient residual on the box
        double pg_norm = 0.0;
        for (std::int64_t i = 0; i < K; ++i) {
            double next = std::min(std::max(res.d[i] - lr * grad[i], d_min), d_max);
            pg_norm += (next - res.d[i]) * (next - res.d[i]);
            res.d[i] = next;
        }
        if (std::sqrt(pg_norm) / lr <= 1e-10) break;
    }
    res.eps = eps_of_comparator(keys, betas, K, res.d);

    // First-order stationarity certificate on the box.
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
        const double miss = 1.0 - betas[t] * dot(res.d.data(), ksq.data() + t * K, K);
        simd::active().axpy_f64(grad.data(), ksq.data() + t * K,
                                -betas[t] * miss / static_cast<double>(T),
                                static_cast<std::size_t>(K));
    }
    double worst = 0.0;
    const double edge = 1e-12 * std::max(1.0, d_max);
    for (std::int64_t i = 0; i < K; ++i) {
        if (res.d[i] <= d_min + edge) {
            worst = std::max(worst, -grad[i]);  // must be >= 0 at the lower face
        } else if (res.d[i] >= d_max - edge) {
            worst = std::max(worst, grad[i]);  // must be <= 0 at the upper face
        } else {
            worst = std::max(worst, std::abs(grad[i]));
        }
    }
    res.stationarity = worst;
    return res;
}

EpsMinResult minimize_eps_diag(const TokenStream& stream, double d_min, double d_max,
                               std::int64_t b, std::int64_t h) {
    const auto T = stream.length, K = stream.key_dim;
    std::vector<double> keys(T * K), betas(T);
    for (std::int64_t t = 0; t < T; ++t) {
        const double* k = stream.key(b, t, h);
        std::copy(k, k + K, keys.begin() + t * K);
        betas[t] = stream.beta(b, t, h);
    }
    return minimize_eps_diag(keys, betas, K, d_min, d_max);
}

TokenLocalAuditReport token_local_audit(const TokenStream& stream, const ResidualTrace& trace,
                                        const WriteKeySequence& wk,
                                        const PreconditionerState& params) {
    if (!stream.keys_unit_norm) {
        throw ValidationError("token_local_audit requires unit-norm keys");
    }
    if (!wk.has_trajectory()) {
        throw ValidationError("token_local_audit requires a retained d trajectory");
    }
    const auto B = stream.batch, T = stream.length, H = stream.heads, K = stream.key_dim;

    TokenLocalAuditReport rep;
    std::vector<double> keys(T * K), betas(T), ksq(K);
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t h = 0; h < H; ++h) {
            TokenLocalLaneReport lane;
            lane.b = b;
            lane.h = h;
            lane.tokens = T;

            double h_traj_sum = 0.0;
            double log_q = 0.0;
            for (std::int64_t t = 0; t < T; ++t) {
                const double* k = stream.key(b, t, h);
                std::copy(k, k + K, keys.begin() + t * K);
                betas[t] = stream.beta(b, t, h);

                const auto& e = trace.at(b, t, h);
                if (e.f_before < kResidualZeroFloor) {
                    // degenerate token: q := 1, h := 0; excluded from the sums
                    ++lane.degenerate_tokens;
                    continue;
                }
                if (e.q == 0.0) {
                    log_q = kNegInf;
                } else if (!std::isinf(log_q)) {
                    log_q += std::log(e.q);
                }
                // h_t at the trajectory from the closed form (unit keys: n = 1)
                simd::active().hadamard_f64(ksq.data(), k, k, static_cast<std::size_t>(K));
                const double align = dot(wk.d_at(b, t, h), ksq.data(), K);
                const double miss = 1.0 - betas[t] * align;
                h_traj_sum += (miss * miss - 1.0) / 2.0;
            }
            lane.log_q_product = log_q;
            const auto T_eff = static_cast<double>(T - lane.degenerate_tokens);

            auto add_comparator = [&](const std::string& label, const std::vector<double>& d) {
                ComparatorVerdict v;
                v.label = label;
                v.eps = eps_of_comparator(keys, betas, K, d);
                // R_T(d) = sum h_t(d_t) - sum h_t(d); sum h_t(d) = T eps - T/2.
                const double h_comp_sum = T_eff * v.eps - T_eff / 2.0;
                v.regret = h_traj_sum - h_comp_sum;
                const double inside = 2.0 * v.eps + 2.0 * v.regret / T_eff;
                v.bound_log = inside <= 0.0 ? kNegInf : T_eff * std::log(inside);
                v.holds = lane.log_q_product <= v.bound_log + 1e-9 ||
                          (std::isinf(lane.log_q_product) && lane.log_q_product < 0.0);
                lane.all_hold = lane.all_hold && v.holds;
                lane.comparators.push_back(std::move(v));
            };

            if (T > lane.degenerate_tokens) {
                EpsMinResult mini = minimize_eps_diag(keys, betas, K, params.d_min, params.d_max);
                add_comparator("eps_minimizer", mini.d);
                std::vector<double> d0(params.lane(b, h), params.lane(b, h) + K);
                add_comparator("initial_d", d0);
                add_comparator("ones", std::vector<double>(K, 1.0));
            }
            rep.all_hold = rep.all_hold && lane.all_hold;
            rep.lanes.push_back(std::move(lane));
        }
    }
    return rep;
}

RepeatedKeyAuditReport repeated_key_audit(const TokenStream& stream,
                                          const std::vector<std::int32_t>& class_ids,
                                          const std::vector<double>& class_keys,
                                          const std::vector<double>& class_values,
                                          std::int64_t n_class, const ResidualTrace& trace,
                                          const FastWeightState& initial_state,
                                          const FastWeightState& final_state) {
    const auto T = stream.length, K = stream.key_dim, V = stream.value_dim;
    if (stream.batch != 1 || stream.heads != 1) {
        throw ValidationError("repeated_key_audit expects a single (b,h) lane");
    }
    if (static_cast<std::int64_t>(class_ids.size()) != T) {
        throw ValidationError("repeated_key_audit: class id per token required");
    }
    // Disjoint-support orthogonality of the dictionary.
    for (std::int64_t c1 = 0; c1 < n_class; ++c1) {
        for (std::int64_t c2 = c1 + 1; c2 < n_class; ++c2) {
            for (std::int64_t i = 0; i < K; ++i) {
                if (class_keys[c1 * K + i] != 0.0 && class_keys[c2 * K + i] != 0.0) {
                    throw ValidationError("repeated_key_audit: dictionary supports overlap");
                }
            }
        }
    }

    std::vector<bool> seen(n_class, false);
    for (auto c : class_ids) {
        if (c < 0 || c >= n_class) throw ValidationError("repeated_key_audit: bad class id");
        seen[c] = true;
    }
    for (std::int64_t c = 0; c < n_class; ++c) {
        if (!seen[c]) throw ValidationError("repeated_key_audit: every class must appear");
    }

    RepeatedKeyAuditReport rep;
    rep.classes = n_class;

    std::vector<double> resid(V);
    auto class_loss = [&](const FastWeightState& s, std::int64_t c) {
        residual_read(s, 0, 0, class_keys.data() + c * K, class_values.data() + c * V,
                      resid.data());
        return 0.5 * dot(resid.data(), resid.data(), V);
    };

    double lhs = 0.0;
    for (std::int64_t c = 0; c < n_class; ++c) {
        const double f0 = class_loss(initial_state, c);
        const double fT = class_loss(final_state, c);
        if (f0 < kResidualZeroFloor) {
            throw ValidationError("repeated_key_audit: initial per-class loss is zero");
        }
        if (fT < kResidualZeroFloor) {
            lhs = kNegInf;
        } else if (!std::isinf(lhs)) {
            lhs += std::log(fT / f0);
        }
    }
    double rhs = 0.0;
    for (std::int64_t t = 0; t < T; ++t) {
        const auto& e = trace.at(0, t, 0);
        const double q = e.f_before < kResidualZeroFloor ? 1.0 : e.q;
        if (q == 0.0) {
            rhs = kNegInf;
        } else if (!std::isinf(rhs)) {
            rhs += std::log(q);
        }
    }
    rep.per_class_log = lhs;
    rep.trace_log = rhs;
    rep.both_zero = std::isinf(lhs) && std::isinf(rhs);
    if (rep.both_zero) {
        rep.holds = true;
    } else if (std::isinf(lhs) != std::isinf(rhs)) {
        rep.holds = false;
    } else {
        const double scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
        rep.holds = std::abs(lhs - rhs) <= 1e-10 * scale;
    }
    return rep;
}

AlternatingCounterexampleReport run_alternating_counterexample(std::int64_t horizon) {
    // K = V = 1, k = 1, v_t = (-1)^t, beta = 1/2, d fixed at 2: the write is an
    // exact per-token Newton step (beta*<d,k^2> = 1).
    TokenStream stream = TokenStream::zeros(1, horizon, 1, 1, 1);
    for (std::int64_t t = 0; t < horizon; ++t) {
        stream.keys[t] = 1.0;
        stream.queries[t] = 1.0;
        stream.values[t] = (t % 2 == 0) ? -1.0 : 1.0;
        stream.betas[t] = 0.5;
    }
    stream.keys_unit_norm = true;
    stream = validate_stream(std::move(stream));

    PreconditionerState precond = PreconditionerState::make(1, 1, 1, 2.0);
    precond.eta = 0.0;  // frozen at the gated Newton point

    BackboneSpec spec;
    spec.backbone = BackboneSpec::Backbone::delta_net;
    spec.online_scaled = true;

    ForwardOptions opts;
    opts.keep_trajectory = true;
    GateSequence gates;
    ForwardResult fwd = run_recurrent(stream, spec, gates, nullptr, &precond, opts);

    AlternatingCounterexampleReport rep;
    double log_q = 0.0;
    for (std::int64_t t = 0; t < horizon; ++t) {
        const auto& e = fwd.trace.at(0, t, 0);
        if (e.f_before < kResidualZeroFloor) continue;
        if (e.q == 0.0) {
            log_q = kNegInf;
        } else if (!std::isinf(log_q)) {
            log_q += std::log(e.q);
        }
    }
    rep.log_q_product = log_q;
    rep.contraction_total = std::isinf(log_q) && log_q < 0.0;
    // Population optimum for the balanced alternating stream is S = 0.
    rep.distance_to_optimum = std::abs(fwd.final_state.s[0]);
    return rep;
}

}  // namespace osdn
