#include "osdn/backward.hpp"

#include <cmath>
#include <cstring>

#include "osdn/precond.hpp"
#include "osdn/simd.hpp"

namespace osdn {
namespace {

const auto& kr() { return simd::active(); }

}  // namespace

WriteKeyBackward backward_write_key(const std::vector<double>& grad_wrt_write_keys,
                                    const TokenStream& stream, const WriteKeySequence& wk) {
    if (!wk.has_trajectory()) {
        throw ValidationError("backward_write_key requires a retained d trajectory");
    }
    const std::size_t n = stream.keys.size();
    if (grad_wrt_write_keys.size() != n) {
        throw ValidationError("backward_write_key: cotangent shape mismatch");
    }
    WriteKeyBackward out;
    out.grad_keys_partial.resize(n);
    out.grad_d.resize(n);
    kr().hadamard_f64(out.grad_keys_partial.data(), wk.d_trajectory.data(),
                      grad_wrt_write_keys.data(), n);
    kr().hadamard_f64(out.grad_d.data(), stream.keys.data(), grad_wrt_write_keys.data(), n);
    return out;
}

DRecurrenceBackward backward_d_recurrence(const std::vector<double>& grad_d_per_token,
                                          const TokenStream& stream,
                                          const PreconditionerState& init,
                                          const GateSequence& gates,
                                          const WriteKeySequence& wk) {
    const auto B = stream.batch, T = stream.length, H = stream.heads, K = stream.key_dim;
    if (!wk.has_trajectory()) {
        throw ValidationError("backward_d_recurrence requires a retained d trajectory");
    }
    if (grad_d_per_token.size() != stream.keys.size()) {
        throw ValidationError("backward_d_recurrence: cotangent shape mismatch");
    }
    const PrecondParams p = PrecondParams::from(init);

    DRecurrenceBackward out;
    out.grad_keys.assign(stream.keys.size(), 0.0);
    out.grad_betas.assign(stream.betas.size(), 0.0);
    out.grad_d0.assign(static_cast<std::size_t>(B * H * K), 0.0);
    if (init.retention_mode == PreconditionerState::Retention::data_dependent) {
        out.grad_retention.assign(stream.betas.size(), 0.0);
    }

    std::vector<double> lambda(static_cast<std::size_t>(K));
    std::vector<double> lambda_bar(static_cast<std::size_t>(K));
    std::vector<double> ksq(static_cast<std::size_t>(K));
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t h = 0; h < H; ++h) {
            std::fill(lambda.begin(), lambda.end(), 0.0);
            for (std::int64_t t = T - 1; t >= 0; --t) {
                const double* k = stream.key(b, t, h);
                const double* d = wk.d_at(b, t, h);
                const double beta = stream.beta(b, t, h);
                const double r = retention_at(init, gates, stream, b, t, h);
                const double beta_ph = p.beta_aware ? beta : 1.0;

                kr().hadamard_f64(ksq.data(), k, k, static_cast<std::size_t>(K));
                const double raw_norm = kr().dot_f64(k, k, static_cast<std::size_t>(K));
                const double n = std::max(raw_norm, p.epsilon);
                const double align = kr().dot_f64(d, ksq.data(), static_cast<std::size_t>(K));
                const double step = p.eta * beta_ph * (1.0 - beta_ph * align) / n;

                // Projection subgradient: zero through coordinates whose
                // pre-projection value fell outside the box.
                for (std::int64_t i = 0; i < K; ++i) {
                    const double bar = r * d[i] + step * ksq[i];
                    lambda_bar[i] = (bar >= p.d_min && bar <= p.d_max) ? lambda[i] : 0.0;
                }

                const double g_step =
                    kr().dot_f64(lambda_bar.data(), ksq.data(), static_cast<std::size_t>(K));
                if (init.retention_mode == PreconditionerState::Retention::data_dependent) {
                    out.grad_retention[stream.b_offset(b, t, h)] =
                        kr().dot_f64(lambda_bar.data(), d, static_cast<std::size_t>(K));
                } else if (init.retention_mode == PreconditionerState::Retention::constant) {
                    out.grad_rho +=
                        kr().dot_f64(lambda_bar.data(), d, static_cast<std::size_t>(K));
                }

                const double dstep_dalign = -p.eta * beta_ph * beta_ph / n;
                const double dstep_dnorm =
                    raw_norm >= p.epsilon ? -p.eta * beta_ph * (1.0 - beta_ph * align) / (n * n)
                                          : 0.0;
                if (p.beta_aware) {
                    out.grad_betas[stream.b_offset(b, t, h)] +=
                        g_step * p.eta * (1.0 - 2.0 * beta_ph * align) / n;
                }

                double* gk = out.grad_keys.data() + stream.k_offset(b, t, h);
                for (std::int64_t i = 0; i < K; ++i) {
                    const double g_sq = step * lambda_bar[i] +
                                        g_step * (dstep_dalign * d[i] + dstep_dnorm);
                    gk[i] += 2.0 * k[i] * g_sq;
                }

                const double* g_emit = grad_d_per_token.data() + stream.k_offset(b, t, h);
                for (std::int64_t i = 0; i < K; ++i) {
                    lambda[i] = r * lambda_bar[i] + g_step * dstep_dalign * ksq[i] + g_emit[i];
                }
            }
            std::memcpy(out.grad_d0.data() + (b * H + h) * K, lambda.data(),
                        sizeof(double) * K);
        }
    }
    return out;
}

namespace {

struct LaneTape {
    std::vector<double> states;  // [T+1, rows*cols]; states[t] = S before token t
    double* at(std::int64_t t, std::int64_t n) { return states.data() + t * n; }
    const double* at(std::int64_t t, std::int64_t n) const { return states.data() + t * n; }
};

}  // namespace

LayerGradients layer_backward(const TokenStream& stream, const BackboneSpec& spec,
                              const GateSequence& gates, const FastWeightState* init_state,
                              const PreconditionerState* init_precond,
                              const std::vector<double>& grad_outputs,
                              const std::vector<double>* grad_final_state,
                              const ForwardOptions& opts) {
    const auto B = stream.batch, T = stream.length, H = stream.heads;
    const auto K = stream.key_dim, V = stream.value_dim;
    spec.require_gates(gates);
    if (grad_outputs.size() != stream.values.size()) {
        throw ValidationError("layer_backward: output cotangent shape mismatch");
    }

    PreconditionerState precond =
        init_precond != nullptr ? *init_precond : PreconditionerState::make(B, H, K);
    if (spec.apf && precond.retention_mode == PreconditionerState::Retention::none) {
        precond.retention_mode = PreconditionerState::Retention::data_dependent;
    }

    // Forward with tape.
    WriteKeySequence wk;
    if (spec.online_scaled) {
        wk = phase1_sweep(stream, precond, gates, /*keep_trajectory=*/true);
    } else {
        wk.batch = B;
        wk.length = T;
        wk.heads = H;
        wk.key_dim = K;
        wk.write_keys = stream.keys;
    }
    FastWeightState state = init_state != nullptr
                                ? *init_state
                                : FastWeightState::zeros(spec.orientation(), B, H, K, V);
    if (state.orientation != spec.orientation()) {
        throw ValidationError("state orientation does not match the backbone convention");
    }
    const std::int64_t cells = state.rows * state.cols;
    const double q_scale = opts.scale_queries ? 1.0 / std::sqrt(static_cast<double>(K)) : 1.0;
    const bool kda = spec.backbone == BackboneSpec::Backbone::kda;
    const bool gdn = spec.backbone == BackboneSpec::Backbone::gated_delta_net;

    LayerGradients g;
    g.queries.assign(stream.queries.size(), 0.0);
    g.keys.assign(stream.keys.size(), 0.0);
    g.values.assign(stream.values.size(), 0.0);
    g.betas.assign(stream.betas.size(), 0.0);
    if (gates.has_alpha_scalar()) g.alpha_scalar.assign(gates.alpha_scalar.size(), 0.0);
    if (gates.has_alpha_vector()) g.alpha_vector.assign(gates.alpha_vector.size(), 0.0);
    g.init_state.assign(state.s.size(), 0.0);
    std::vector<double> grad_wk(spec.online_scaled ? stream.keys.size() : 0, 0.0);

    LaneTape tape;
    tape.states.resize(static_cast<std::size_t>((T + 1) * cells));
    std::vector<double> residual(static_cast<std::size_t>(V));
    std::vector<double> sbar(static_cast<std::size_t>(cells));
    std::vector<double> grad_state(static_cast<std::size_t>(cells));
    std::vector<double> grad_u(static_cast<std::size_t>(V));
    std::vector<double> gkt_vec(static_cast<std::size_t>(std::max(K, V)));

    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t h = 0; h < H; ++h) {
            double* s = state.lane(b, h);
            std::memcpy(tape.at(0, cells), s, sizeof(double) * cells);
            for (std::int64_t t = 0; t < T; ++t) {
                const double* q = stream.query(b, t, h);
                const double* k = stream.key(b, t, h);
                const double* v = stream.value(b, t, h);
                const double* kt = wk.write_key(b, t, h);
                const double beta = stream.beta(b, t, h);
                switch (spec.backbone) {
                    case BackboneSpec::Backbone::delta_net:
                        step_delta(s, q, k, kt, v, beta, K, V, q_scale, nullptr,
                                   residual.data());
                        break;
                    case BackboneSpec::Backbone::gated_delta_net:
                        step_gdn(s, q, k, kt, v, beta,
                                 gates.alpha_scalar[stream.b_offset(b, t, h)], K, V, q_scale,
                                 nullptr, residual.data());
                        break;
                    case BackboneSpec::Backbone::kda:
                        step_kda(s, q, k, kt, v, beta,
                                 gates.alpha_vector.data() + stream.k_offset(b, t, h), K, V,
                                 q_scale, nullptr, residual.data());
                        break;
                }
                std::memcpy(tape.at(t + 1, cells), s, sizeof(double) * cells);
            }

            // Reverse sweep.
            double* G = grad_state.data();
            if (grad_final_state != nullptr) {
                std::memcpy(G, grad_final_state->data() + (b * H + h) * cells,
                            sizeof(double) * cells);
            } else {
                std::memset(G, 0, sizeof(double) * cells);
            }
            for (std::int64_t t = T - 1; t >= 0; --t) {
                const double* q = stream.query(b, t, h);
                const double* k = stream.key(b, t, h);
                const double* v = stream.value(b, t, h);
                const double* kt = wk.write_key(b, t, h);
                const double beta = stream.beta(b, t, h);
                const double* s_prev = tape.at(t, cells);
                const double* s_post = tape.at(t + 1, cells);
                const double* go = grad_outputs.data() + stream.v_offset(b, t, h);
                double* gq = g.queries.data() + stream.k_offset(b, t, h);
                double* gk = g.keys.data() + stream.k_offset(b, t, h);
                double* gv = g.values.data() + stream.v_offset(b, t, h);

                if (!kda) {
                    // o = S_post (q_scale q):  dL/dS_post += go (x) q_scale q,
                    // dL/dq += q_scale S_post^T go.
                    for (std::int64_t i = 0; i < V; ++i) {
                        kr().axpy_f64(G + i * K, q, q_scale * go[i], static_cast<std::size_t>(K));
                    }
                    for (std::int64_t j = 0; j < K; ++j) gkt_vec[j] = 0.0;
                    for (std::int64_t i = 0; i < V; ++i) {
                        kr().axpy_f64(gkt_vec.data(), s_post + i * K, go[i],
                                      static_cast<std::size_t>(K));
                    }
                    for (std::int64_t j = 0; j < K; ++j) gq[j] += q_scale * gkt_vec[j];

                    // Recompute the gated reference state and the residual.
                    const double alpha =
                        gdn ? gates.alpha_scalar[stream.b_offset(b, t, h)] : 1.0;
                    for (std::int64_t i = 0; i < cells; ++i) sbar[i] = alpha * s_prev[i];
                    for (std::int64_t i = 0; i < V; ++i) {
                        residual[i] =
                            v[i] - kr().dot_f64(sbar.data() + i * K, k,
                                                static_cast<std::size_t>(K));
                    }
                    // S_post = S_bar + beta u kt^T
                    double* gwk = spec.online_scaled
                                      ? grad_wk.data() + stream.k_offset(b, t, h)
                                      : gk;
                    for (std::int64_t j = 0; j < K; ++j) gkt_vec[j] = 0.0;
                    for (std::int64_t i = 0; i < V; ++i) {
                        kr().axpy_f64(gkt_vec.data(), G + i * K, beta * residual[i],
                                      static_cast<std::size_t>(K));
                    }
                    for (std::int64_t j = 0; j < K; ++j) gwk[j] += gkt_vec[j];
                    double gbeta = 0.0;
                    for (std::int64_t i = 0; i < V; ++i) {
                        const double gki =
                            kr().dot_f64(G + i * K, kt, static_cast<std::size_t>(K));
                        grad_u[i] = beta * gki;
                        gbeta += residual[i] * gki;
                    }
                    g.betas[stream.b_offset(b, t, h)] += gbeta;
                    for (std::int64_t i = 0; i < V; ++i) gv[i] += grad_u[i];
                    // u = v - S_bar k: push into S_bar and k, G becomes dL/dS_bar.
                    for (std::int64_t i = 0; i < V; ++i) {
                        kr().axpy_f64(G + i * K, k, -grad_u[i], static_cast<std::size_t>(K));
                    }
                    for (std::int64_t i = 0; i < V; ++i) {
                        kr().axpy_f64(gk, sbar.data() + i * K, -grad_u[i],
                                      static_cast<std::size_t>(K));
                    }
                    if (gdn) {
                        const double alpha_g =
                            kr().dot_f64(G, s_prev, static_cast<std::size_t>(cells));
                        g.alpha_scalar[stream.b_offset(b, t, h)] += alpha_g;
                        for (std::int64_t i = 0; i < cells; ++i) G[i] *= alpha;
                    }
                } else {
                    // KDA with the [K,V] state.
                    const double* alpha = gates.alpha_vector.data() + stream.k_offset(b, t, h);
                    for (std::int64_t j = 0; j < K; ++j) {
                        kr().axpy_f64(G + j * V, go, q_scale * q[j], static_cast<std::size_t>(V));
                        gq[j] += q_scale *
                                 kr().dot_f64(s_post + j * V, go, static_cast<std::size_t>(V));
                    }
                    for (std::int64_t j = 0; j < K; ++j) {
                        const double a = alpha[j];
                        for (std::int64_t i = 0; i < V; ++i) sbar[j * V + i] = a * s_prev[j * V + i];
                    }
                    for (std::int64_t i = 0; i < V; ++i) residual[i] = v[i];
                    for (std::int64_t j = 0; j < K; ++j) {
                        kr().axpy_f64(residual.data(), sbar.data() + j * V, -k[j],
                                      static_cast<std::size_t>(V));
                    }
                    // S_post = S_bar + beta kt u^T
                    double* gwk = spec.online_scaled
                                      ? grad_wk.data() + stream.k_offset(b, t, h)
                                      : gk;
                    double gbeta = 0.0;
                    for (std::int64_t j = 0; j < K; ++j) {
                        const double gu_row = kr().dot_f64(G + j * V, residual.data(),
                                                           static_cast<std::size_t>(V));
                        gwk[j] += beta * gu_row;
                        gbeta += kt[j] * gu_row;
                    }
                    g.betas[stream.b_offset(b, t, h)] += gbeta;
                    std::memset(grad_u.data(), 0, sizeof(double) * V);
                    for (std::int64_t j = 0; j < K; ++j) {
                        kr().axpy_f64(grad_u.data(), G + j * V, beta * kt[j],
                                      static_cast<std::size_t>(V));
                    }
                    for (std::int64_t i = 0; i < V; ++i) gv[i] += grad_u[i];
                    // u = v - S_bar^T k
                    for (std::int64_t j = 0; j < K; ++j) {
                        kr().axpy_f64(G + j * V, grad_u.data(), -k[j],
                                      static_cast<std::size_t>(V));
                        gk[j] -= kr().dot_f64(sbar.data() + j * V, grad_u.data(),
                                              static_cast<std::size_t>(V));
                    }
                    double* ga = g.alpha_vector.data() + stream.k_offset(b, t, h);
                    for (std::int64_t j = 0; j < K; ++j) {
                        ga[j] += kr().dot_f64(G + j * V, s_prev + j * V,
                                              static_cast<std::size_t>(V));
                        const double a = alpha[j];
                        for (std::int64_t i = 0; i < V; ++i) G[j * V + i] *= a;
                    }
                }
            }
            std::memcpy(g.init_state.data() + (b * H + h) * cells, G, sizeof(double) * cells);
        }
    }

    if (spec.online_scaled) {
        WriteKeyBackward wkb = backward_write_key(grad_wk, stream, wk);
        for (std::size_t i = 0; i < g.keys.size(); ++i) g.keys[i] += wkb.grad_keys_partial[i];
        DRecurrenceBackward drb =
            backward_d_recurrence(wkb.grad_d, stream, precond, gates, wk);
        for (std::size_t i = 0; i < g.keys.size(); ++i) g.keys[i] += drb.grad_keys[i];
        for (std::size_t i = 0; i < g.betas.size(); ++i) g.betas[i] += drb.grad_betas[i];
        g.d0 = std::move(drb.grad_d0);
        g.retention = std::move(drb.grad_retention);
        g.rho = drb.grad_rho;
    }
    return g;
}

}  // namespace osdn
