#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "osdn/recurrent.hpp"
#include "osdn/synthetic.hpp"

using namespace osdn;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace

TEST_CASE("step_delta") {
    SUBCASE("exact write then read at beta=1, unit key") {
        const std::int64_t K = 3, V = 2;
        std::vector<double> s(V * K, 0.0);
        std::vector<double> k = {1.0, 0.0, 0.0};
        std::vector<double> q = {0.5, 0.5, 0.0};
        std::vector<double> v = {2.0, -1.0};
        std::vector<double> out(V), u(V);
        // beta must live in (0,1) at the stream level, but the step itself is
        // total; drive it directly at beta = 1.
        step_delta(s.data(), q.data(), k.data(), k.data(), v.data(), 1.0, K, V, 1.0,
                   out.data(), u.data());
        CHECK(s[0] == 2.0);
        CHECK(s[3] == -1.0);
        CHECK(out[0] == doctest::Approx(0.5 * 2.0));  // <k,q> v
        CHECK(out[1] == doctest::Approx(0.5 * -1.0));
        CHECK(u[0] == 2.0);
        CHECK(u[1] == -1.0);
    }
    SUBCASE("two algebraic forms agree") {
        std::mt19937_64 rng(21);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const std::int64_t K = 4, V = 4;
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> s(V * K), k(K), kt(K), q(K), v(V);
            for (auto& x : s) x = gauss(rng);
            for (auto& x : k) x = gauss(rng);
            for (auto& x : kt) x = gauss(rng);
            for (auto& x : q) x = gauss(rng);
            for (auto& x : v) x = gauss(rng);
            const double beta = 0.7;

            // residual form (implementation)
            std::vector<double> s1 = s, out(V), u(V);
            step_delta(s1.data(), q.data(), k.data(), kt.data(), v.data(), beta, K, V, 1.0,
                       out.data(), u.data());

            // expanded transition form S (I - beta k kt^T) + beta v kt^T
            std::vector<double> s2(V * K, 0.0);
            for (std::int64_t a = 0; a < V; ++a) {
                double sk = 0.0;
                for (std::int64_t i = 0; i < K; ++i) sk += s[a * K + i] * k[i];
                for (std::int64_t j = 0; j < K; ++j) {
                    s2[a * K + j] = s[a * K + j] - beta * sk * kt[j] + beta * v[a] * kt[j];
                }
            }
            REQUIRE(max_abs_diff(s1, s2) <= 1e-14);
        }
    }
}

TEST_CASE("step_gdn") {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::int64_t K = 4, V = 3;
    std::vector<double> s(V * K), k(K), kt(K), q(K), v(V);
    for (auto& x : s) x = gauss(rng);
    for (auto& x : k) x = gauss(rng);
    for (auto& x : kt) x = gauss(rng);
    for (auto& x : q) x = gauss(rng);
    for (auto& x : v) x = gauss(rng);

    SUBCASE("alpha=1 reduces to step_delta bitwise") {
        std::vector<double> s1 = s, s2 = s, o1(V), o2(V), u1(V), u2(V);
        step_gdn(s1.data(), q.data(), k.data(), kt.data(), v.data(), 0.6, 1.0, K, V, 1.0,
                 o1.data(), u1.data());
        step_delta(s2.data(), q.data(), k.data(), kt.data(), v.data(), 0.6, K, V, 1.0,
                   o2.data(), u2.data());
        CHECK(std::memcmp(s1.data(), s2.data(), s1.size() * sizeof(double)) == 0);
        CHECK(std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(double)) == 0);
    }
    SUBCASE("alpha=0 keeps only the fresh write") {
        std::vector<double> s1 = s, o1(V), u1(V);
        step_gdn(s1.data(), q.data(), k.data(), kt.data(), v.data(), 0.6, 0.0, K, V, 1.0,
                 o1.data(), u1.data());
        for (std::int64_t a = 0; a < V; ++a) {
            for (std::int64_t j = 0; j < K; ++j) {
                REQUIRE(s1[a * K + j] == doctest::Approx(0.6 * v[a] * kt[j]).epsilon(1e-14));
            }
        }
    }
    SUBCASE("expanded transition form agrees") {
        const double alpha = 0.9, beta = 0.45;
        std::vector<double> s1 = s, o1(V), u1(V);
        step_gdn(s1.data(), q.data(), k.data(), kt.data(), v.data(), beta, alpha, K, V, 1.0,
                 o1.data(), u1.data());
        std::vector<double> s2(V * K, 0.0);
        for (std::int64_t a = 0; a < V; ++a) {
            double sk = 0.0;
            for (std::int64_t i = 0; i < K; ++i) sk += s[a * K + i] * k[i];
            for (std::int64_t j = 0; j < K; ++j) {
                s2[a * K + j] =
                    alpha * (s[a * K + j] - beta * sk * kt[j]) + beta * v[a] * kt[j];
            }
        }
        REQUIRE(max_abs_diff(s1, s2) <= 1e-14);
    }
}

TEST_CASE("step_kda") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::int64_t K = 4, V = 3;
    std::vector<double> s(K * V), k(K), kt(K), q(K), v(V), alpha(K, 1.0);
    for (auto& x : s) x = gauss(rng);
    for (auto& x : k) x = gauss(rng);
    for (auto& x : kt) x = gauss(rng);
    for (auto& x : q) x = gauss(rng);
    for (auto& x : v) x = gauss(rng);

    SUBCASE("orientation duality against step_delta at alpha=1") {
        std::vector<double> s_kda = s, o1(V), u1(V);
        step_kda(s_kda.data(), q.data(), k.data(), kt.data(), v.data(), 0.7, alpha.data(), K, V,
                 1.0, o1.data(), u1.data());
        // transpose into the VxK convention and run the delta step
        std::vector<double> s_delta(V * K), o2(V), u2(V);
        for (std::int64_t j = 0; j < K; ++j) {
            for (std::int64_t a = 0; a < V; ++a) s_delta[a * K + j] = s[j * V + a];
        }
        step_delta(s_delta.data(), q.data(), k.data(), kt.data(), v.data(), 0.7, K, V, 1.0,
                   o2.data(), u2.data());
        for (std::int64_t j = 0; j < K; ++j) {
            for (std::int64_t a = 0; a < V; ++a) {
                REQUIRE(s_kda[j * V + a] == doctest::Approx(s_delta[a * K + j]).epsilon(1e-14));
            }
        }
        for (std::int64_t a = 0; a < V; ++a) REQUIRE(o1[a] == doctest::Approx(o2[a]).epsilon(1e-14));
    }
    SUBCASE("beta=0 is a read-only decayed step") {
        for (auto& x : alpha) x = 0.5;
        std::vector<double> s1 = s, o1(V), u1(V);
        step_kda(s1.data(), q.data(), k.data(), kt.data(), v.data(), 0.0, alpha.data(), K, V,
                 1.0, o1.data(), u1.data());
        for (std::int64_t j = 0; j < K; ++j) {
            for (std::int64_t a = 0; a < V; ++a) {
                REQUIRE(s1[j * V + a] == doctest::Approx(0.5 * s[j * V + a]).epsilon(1e-15));
            }
        }
    }
    SUBCASE("expanded transition form agrees") {
        for (auto& x : alpha) x = 0.6 + 0.4 * std::abs(gauss(rng)) / 3.0;
        const double beta = 0.55;
        std::vector<double> s1 = s, o1(V), u1(V);
        step_kda(s1.data(), q.data(), k.data(), kt.data(), v.data(), beta, alpha.data(), K, V,
                 1.0, o1.data(), u1.data());
        // (I - beta kt k^T) Diag(alpha) S + beta kt v^T
        std::vector<double> sbar(K * V), s2(K * V, 0.0);
        for (std::int64_t j = 0; j < K; ++j) {
            for (std::int64_t a = 0; a < V; ++a) sbar[j * V + a] = alpha[j] * s[j * V + a];
        }
        for (std::int64_t j = 0; j < K; ++j) {
            for (std::int64_t a = 0; a < V; ++a) {
                double acc = sbar[j * V + a];
                double ksbar = 0.0;
                for (std::int64_t l = 0; l < K; ++l) ksbar += k[l] * sbar[l * V + a];
                acc -= beta * kt[j] * ksbar;
                acc += beta * kt[j] * v[a];
                s2[j * V + a] = acc;
            }
        }
        REQUIRE(max_abs_diff(s1, s2) <= 1e-14);
    }
}

TEST_CASE("run_recurrent host equals online-scaled with frozen identity preconditioner") {
    std::mt19937_64 rng(24);
    for (auto backbone : {BackboneSpec::Backbone::delta_net,
                          BackboneSpec::Backbone::gated_delta_net, BackboneSpec::Backbone::kda}) {
        TokenStream stream = random_stream(rng, 2, 12, 2, 4, 3);
        BackboneSpec host{backbone, false, false};
        BackboneSpec scaled{backbone, true, false};
        GateSequence gates = random_gates(rng, scaled, stream);

        PreconditionerState frozen = PreconditionerState::make(2, 2, 4, 1.0);
        frozen.eta = 1e-320;  // underflows to zero update

        auto a = run_recurrent(stream, host, gates, nullptr, nullptr);
        auto b = run_recurrent(stream, scaled, gates, nullptr, &frozen);
        REQUIRE(std::memcmp(a.outputs.data(), b.outputs.data(),
                            a.outputs.size() * sizeof(double)) == 0);
        REQUIRE(std::memcmp(a.final_state.s.data(), b.final_state.s.data(),
                            a.final_state.s.size() * sizeof(double)) == 0);
    }
}

TEST_CASE("trace: exact write kills the residual at T=1") {
    TokenStream s = TokenStream::zeros(1, 1, 1, 2, 2);
    s.keys[0] = 1.0;
    s.betas[0] = 0.999999999999;  // open interval; d compensates the rest
    s.values[0] = 1.0;
    s.values[1] = -2.0;
    // with d = 1/beta the write is exactly Newton
    PreconditionerState p = PreconditionerState::make(1, 1, 2, 1.0 / 0.999999999999);
    p.eta = 1e-320;
    p.d_max = 2.0;
    BackboneSpec spec{BackboneSpec::Backbone::delta_net, true, false};
    GateSequence gates;
    auto r = run_recurrent(s, spec, gates, nullptr, &p);
    CHECK(r.trace.at(0, 0, 0).f_after <= 1e-24);
    CHECK(r.trace.at(0, 0, 0).q <= 1e-20);
}

TEST_CASE("trace: residual identity and q = 1 + 2h on unit keys") {
    std::mt19937_64 rng(25);
    TokenStream stream = random_stream(rng, 1, 48, 1, 6, 4);
    stream = normalize_keys(std::move(stream));
    BackboneSpec spec{BackboneSpec::Backbone::delta_net, true, false};
    PreconditionerState precond = PreconditionerState::make(1, 1, 6);
    precond.eta = 0.02;
    GateSequence gates;
    ForwardOptions opts;
    opts.keep_trajectory = true;
    auto r = run_recurrent(stream, spec, gates, nullptr, &precond, opts);
    for (std::int64_t t = 0; t < stream.length; ++t) {
        const auto& e = r.trace.at(0, t, 0);
        if (e.f_before < 1e-30) continue;
        const double* d = r.write_keys.d_at(0, t, 0);
        const double* k = stream.key(0, t, 0);
        double align = 0.0;
        for (std::int64_t i = 0; i < 6; ++i) align += d[i] * k[i] * k[i];
        const double beta = stream.beta(0, t, 0);
        const double contraction = (1.0 - beta * align) * (1.0 - beta * align);
        // residual identity f_after = f_before (1 - beta <d,k^2>)^2
        REQUIRE(std::abs(e.f_after - e.f_before * contraction) <=
                1e-12 * std::max(1.0, e.f_before));
        // q = 1 + 2 h on unit keys
        const double h = (contraction - 1.0) / 2.0;
        REQUIRE(std::abs(e.q - (1.0 + 2.0 * h)) <= 1e-12);
    }
}

TEST_CASE("trace: fixed contraction for constant d and beta on unit keys") {
    // beta = 0.5, d = 1 on unit keys contracts every non-degenerate token by 0.25
    std::mt19937_64 rng(26);
    TokenStream stream = random_stream(rng, 1, 16, 1, 4, 4);
    stream = normalize_keys(std::move(stream));
    for (auto& b : stream.betas) b = 0.5;
    BackboneSpec spec{BackboneSpec::Backbone::delta_net, false, false};
    GateSequence gates;
    auto r = run_recurrent(stream, spec, gates, nullptr, nullptr);
    for (std::int64_t t = 0; t < stream.length; ++t) {
        const auto& e = r.trace.at(0, t, 0);
        if (e.f_before < 1e-30) continue;
        REQUIRE(e.q == doctest::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("gate requirements are enforced") {
    TokenStream stream = TokenStream::zeros(1, 2, 1, 2, 2);
    stream.keys[0] = 1.0;
    stream.keys[2] = 1.0;
    GateSequence none;
    BackboneSpec gdn{BackboneSpec::Backbone::gated_delta_net, false, false};
    CHECK_THROWS_AS(run_recurrent(stream, gdn, none, nullptr, nullptr), ValidationError);
    BackboneSpec kda{BackboneSpec::Backbone::kda, false, false};
    CHECK_THROWS_AS(run_recurrent(stream, kda, none, nullptr, nullptr), ValidationError);
}

TEST_CASE("query scaling flag is honored") {
    std::mt19937_64 rng(27);
    TokenStream stream = random_stream(rng, 1, 4, 1, 4, 2);
    BackboneSpec spec{BackboneSpec::Backbone::delta_net, false, false};
    GateSequence gates;
    ForwardOptions scaled, unscaled;
    scaled.scale_queries = true;
    unscaled.scale_queries = false;
    auto a = run_recurrent(stream, spec, gates, nullptr, nullptr, scaled);
    auto b = run_recurrent(stream, spec, gates, nullptr, nullptr, unscaled);
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
        REQUIRE(a.outputs[i] == doctest::Approx(b.outputs[i] * 0.5).epsilon(1e-14));
    }
}
