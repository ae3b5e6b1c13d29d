#include <doctest.h>

#include <cmath>
#include <random>

#include "osdn/chunk.hpp"
#include "osdn/synthetic.hpp"

using namespace osdn;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

struct Case {
    TokenStream stream;
    GateSequence gates;
    PreconditionerState precond;
    BackboneSpec spec;
};

Case make_case(std::uint64_t seed, BackboneSpec::Backbone backbone, bool scaled, std::int64_t B,
               std::int64_t T, std::int64_t H, std::int64_t K, std::int64_t V) {
    std::mt19937_64 rng(seed);
    Case c;
    c.spec.backbone = backbone;
    c.spec.online_scaled = scaled;
    c.stream = random_stream(rng, B, T, H, K, V);
    c.gates = random_gates(rng, c.spec, c.stream);
    c.precond = PreconditionerState::make(B, H, K);
    return c;
}

}  // namespace

TEST_CASE("ut_solve") {
    SUBCASE("identity system") {
        std::vector<double> gram(9, 0.0);
        std::vector<double> rhs = {1.0, 2.0, 3.0};
        ut_solve(gram.data(), 3, rhs.data(), 1);
        CHECK(rhs == std::vector<double>{1.0, 2.0, 3.0});
    }
    SUBCASE("single substitution") {
        std::vector<double> gram = {0.0, 0.0, 0.5, 0.0};
        std::vector<double> rhs = {2.0, 3.0};
        ut_solve(gram.data(), 2, rhs.data(), 1);
        CHECK(rhs[0] == 2.0);
        CHECK(rhs[1] == doctest::Approx(3.0 - 0.5 * 2.0));
    }
    SUBCASE("random residual check at C=64") {
        const std::int64_t C = 64, N = 8;
        std::mt19937_64 rng(31);
        std::normal_distribution<double> gauss(0.0, 0.3);
        std::vector<double> gram(C * C, 0.0);
        for (std::int64_t i = 1; i < C; ++i) {
            for (std::int64_t j = 0; j < i; ++j) gram[i * C + j] = gauss(rng);
        }
        std::vector<double> rhs(C * N);
        for (auto& x : rhs) x = gauss(rng);
        std::vector<double> x = rhs;
        ut_solve(gram.data(), C, x.data(), N);
        // (I + G) x must reproduce rhs
        for (std::int64_t i = 0; i < C; ++i) {
            for (std::int64_t c = 0; c < N; ++c) {
                double acc = x[i * N + c];
                for (std::int64_t j = 0; j < i; ++j) acc += gram[i * C + j] * x[j * N + c];
                REQUIRE(std::abs(acc - rhs[i * N + c]) <= 1e-12);
            }
        }
    }
    SUBCASE("ut solve inverts I + gram to 1e-12") {
        const std::int64_t C = 16;
        std::mt19937_64 rng(32);
        std::normal_distribution<double> gauss(0.0, 0.5);
        std::vector<double> gram(C * C, 0.0);
        for (std::int64_t i = 1; i < C; ++i) {
            for (std::int64_t j = 0; j < i; ++j) gram[i * C + j] = gauss(rng);
        }
        std::vector<double> inv(C * C, 0.0);
        for (std::int64_t i = 0; i < C; ++i) inv[i * C + i] = 1.0;
        ut_solve(gram.data(), C, inv.data(), C);
        // (I + G) inv == I
        for (std::int64_t i = 0; i < C; ++i) {
            for (std::int64_t j = 0; j < C; ++j) {
                double acc = inv[i * C + j];
                for (std::int64_t l = 0; l < i; ++l) acc += gram[i * C + l] * inv[l * C + j];
                REQUIRE(std::abs(acc - (i == j ? 1.0 : 0.0)) <= 1e-12);
            }
        }
    }
    SUBCASE("rejects non-strictly-lower or non-finite gram") {
        std::vector<double> gram = {1.0, 0.0, 0.0, 0.0};
        std::vector<double> rhs = {1.0, 1.0};
        CHECK_THROWS_AS(ut_solve(gram.data(), 2, rhs.data(), 1), ValidationError);
        gram = {0.0, 0.0, std::nan(""), 0.0};
        CHECK_THROWS_AS(ut_solve(gram.data(), 2, rhs.data(), 1), ValidationError);
    }
}

TEST_CASE("chunk C=1 degenerates to the recurrent step exactly") {
    for (auto backbone : {BackboneSpec::Backbone::delta_net,
                          BackboneSpec::Backbone::gated_delta_net, BackboneSpec::Backbone::kda}) {
        Case c = make_case(41, backbone, true, 1, 8, 1, 4, 3);
        auto ref = run_recurrent(c.stream, c.spec, c.gates, nullptr, &c.precond,
                                 ForwardOptions{.with_trace = false});
        auto chunk = chunk_forward(c.stream, c.spec, c.gates, &c.precond, nullptr, 1);
        REQUIRE(max_abs_diff(chunk.outputs, ref.outputs) <= 1e-13);
        REQUIRE(max_abs_diff(chunk.final_state.s, ref.final_state.s) <= 1e-13);
    }
}

TEST_CASE("orthogonal keys within a chunk produce a zero gram") {
    // keys chosen mutually orthogonal: the UT system is the identity, so the
    // chunk pass must agree with recurrent at full precision
    const std::int64_t K = 8, T = 8;
    TokenStream stream = TokenStream::zeros(1, T, 1, K, 4);
    std::mt19937_64 rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::int64_t t = 0; t < T; ++t) {
        stream.keys[stream.k_offset(0, t, 0) + t] = 1.0 + std::abs(gauss(rng));
        for (std::int64_t i = 0; i < K; ++i) {
            stream.queries[stream.k_offset(0, t, 0) + i] = gauss(rng);
        }
        for (std::int64_t i = 0; i < 4; ++i) {
            stream.values[stream.v_offset(0, t, 0) + i] = gauss(rng);
        }
    }
    BackboneSpec spec{BackboneSpec::Backbone::delta_net, false, false};
    GateSequence gates;
    auto ref = run_recurrent(stream, spec, gates, nullptr, nullptr,
                             ForwardOptions{.with_trace = false});
    auto chunk = chunk_forward_delta(stream, nullptr, nullptr, T);
    REQUIRE(max_abs_diff(chunk.outputs, ref.outputs) <= 1e-13);
}

TEST_CASE("chunk vs recurrent for all six variants on a random case") {
    for (auto backbone : {BackboneSpec::Backbone::delta_net,
                          BackboneSpec::Backbone::gated_delta_net, BackboneSpec::Backbone::kda}) {
        for (bool scaled : {false, true}) {
            Case c = make_case(43 + static_cast<int>(backbone), backbone, scaled, 2, 128, 2, 16,
                               16);
            auto ref = run_recurrent(c.stream, c.spec, c.gates, nullptr, &c.precond,
                                     ForwardOptions{.with_trace = false});
            auto chunk = chunk_forward(c.stream, c.spec, c.gates, &c.precond, nullptr, 32);
            const std::string variant = c.spec.name();
            CAPTURE(variant);
            REQUIRE(max_abs_diff(chunk.outputs, ref.outputs) <= 1e-9);
            REQUIRE(max_abs_diff(chunk.final_state.s, ref.final_state.s) <= 1e-9);
        }
    }
}

TEST_CASE("gdn chunk with alpha=1 reduces to the delta chunk") {
    Case c = make_case(44, BackboneSpec::Backbone::gated_delta_net, true, 1, 64, 1, 8, 8);
    for (auto& a : c.gates.alpha_scalar) a = 1.0;
    auto wk = phase1_sweep(c.stream, c.precond, c.gates, false);
    auto gdn = chunk_forward_gdn(c.stream, &wk, c.gates, nullptr, 16);
    auto delta = chunk_forward_delta(c.stream, &wk, nullptr, 16);
    REQUIRE(max_abs_diff(gdn.outputs, delta.outputs) <= 1e-12);
    REQUIRE(max_abs_diff(gdn.final_state.s, delta.final_state.s) <= 1e-12);
}

TEST_CASE("gdn two-token chunk matches two recurrent steps by hand") {
    // T = C = 2, K = V = 2, everything pinned
    TokenStream stream = TokenStream::zeros(1, 2, 1, 2, 2);
    stream.keys = {1.0, 0.5, -0.25, 1.0};
    stream.queries = {0.3, -0.2, 0.8, 0.1};
    stream.values = {1.0, -1.0, 0.5, 2.0};
    stream.betas = {0.5, 0.5};
    GateSequence gates;
    gates.alpha_scalar = {0.5, 0.5};
    BackboneSpec spec{BackboneSpec::Backbone::gated_delta_net, false, false};
    auto ref = run_recurrent(stream, spec, gates, nullptr, nullptr,
                             ForwardOptions{.with_trace = false});
    auto chunk = chunk_forward_gdn(stream, nullptr, gates, nullptr, 2);
    REQUIRE(max_abs_diff(chunk.outputs, ref.outputs) <= 1e-13);
    REQUIRE(max_abs_diff(chunk.final_state.s, ref.final_state.s) <= 1e-13);
}

TEST_CASE("kda chunk with alpha=1 matches the delta chunk transposed") {
    Case c = make_case(45, BackboneSpec::Backbone::kda, true, 1, 32, 1, 6, 5);
    for (auto& a : c.gates.alpha_vector) a = 1.0;
    auto wk = phase1_sweep(c.stream, c.precond, c.gates, false);
    auto kda = chunk_forward_kda(c.stream, &wk, c.gates, nullptr, 8);
    auto delta = chunk_forward_delta(c.stream, &wk, nullptr, 8);
    REQUIRE(max_abs_diff(kda.outputs, delta.outputs) <= 1e-12);
    // final states are transposes of each other (accumulation orders differ)
    const auto K = c.stream.key_dim, V = c.stream.value_dim;
    for (std::int64_t j = 0; j < K; ++j) {
        for (std::int64_t a = 0; a < V; ++a) {
            REQUIRE(std::abs(kda.final_state.s[j * V + a] - delta.final_state.s[a * K + j]) <=
                    1e-11);
        }
    }
}

TEST_CASE("kda beta=0 stream only reads and decays") {
    Case c = make_case(46, BackboneSpec::Backbone::kda, false, 1, 8, 1, 4, 3);
    for (auto& b : c.stream.betas) b = 1e-300;  // effectively zero inside (0,1)
    FastWeightState init =
        FastWeightState::zeros(FastWeightState::Orientation::kxv, 1, 1, 4, 3);
    std::mt19937_64 rng(47);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& x : init.s) x = gauss(rng);
    auto chunk = chunk_forward_kda(c.stream, nullptr, c.gates, &init, 4);
    // state decays by the cumulative channel gate only
    std::vector<double> expect = init.s;
    for (std::int64_t t = 0; t < 8; ++t) {
        const double* a = c.gates.alpha_vector.data() + c.stream.k_offset(0, t, 0);
        for (std::int64_t j = 0; j < 4; ++j) {
            for (std::int64_t vv = 0; vv < 3; ++vv) expect[j * 3 + vv] *= a[j];
        }
    }
    REQUIRE(max_abs_diff(chunk.final_state.s, expect) <= 1e-12);
}

TEST_CASE("chunk-size independence") {
    for (auto backbone : {BackboneSpec::Backbone::delta_net,
                          BackboneSpec::Backbone::gated_delta_net, BackboneSpec::Backbone::kda}) {
        Case c = make_case(48, backbone, true, 1, 64, 1, 8, 8);
        std::vector<std::vector<double>> outs;
        std::vector<std::vector<double>> states;
        for (std::int64_t C : {1, 2, 16, 64}) {
            auto r = chunk_forward(c.stream, c.spec, c.gates, &c.precond, nullptr, C);
            outs.push_back(std::move(r.outputs));
            states.push_back(std::move(r.final_state.s));
        }
        for (std::size_t i = 1; i < outs.size(); ++i) {
            REQUIRE(max_abs_diff(outs[0], outs[i]) <= 1e-9);
            REQUIRE(max_abs_diff(states[0], states[i]) <= 1e-9);
        }
    }
}

TEST_CASE("ragged tail is padded with no-op tokens") {
    for (auto backbone : {BackboneSpec::Backbone::delta_net,
                          BackboneSpec::Backbone::gated_delta_net, BackboneSpec::Backbone::kda}) {
        Case c = make_case(49, backbone, true, 1, 45, 1, 6, 4);  // 45 % 16 != 0
        auto ref = run_recurrent(c.stream, c.spec, c.gates, nullptr, &c.precond,
                                 ForwardOptions{.with_trace = false});
        auto chunk = chunk_forward(c.stream, c.spec, c.gates, &c.precond, nullptr, 16);
        REQUIRE(max_abs_diff(chunk.outputs, ref.outputs) <= 1e-10);
        REQUIRE(max_abs_diff(chunk.final_state.s, ref.final_state.s) <= 1e-10);
    }
}

TEST_CASE("asymmetric gram collapses to symmetric when d == 1") {
    // with write keys equal to keys the intra-chunk gram K Kt^T is symmetric
    std::mt19937_64 rng(50);
    const std::int64_t C = 8, K = 6;
    std::vector<double> keys(C * K);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& x : keys) x = gauss(rng);
    for (std::int64_t i = 0; i < C; ++i) {
        for (std::int64_t j = 0; j < C; ++j) {
            double gij = 0.0, gji = 0.0;
            for (std::int64_t l = 0; l < K; ++l) {
                gij += keys[i * K + l] * keys[j * K + l];
                gji += keys[j * K + l] * keys[i * K + l];
            }
            REQUIRE(gij == doctest::Approx(gji).epsilon(1e-15));
        }
    }
}

TEST_CASE("f32 path stays within the cross-precision tolerance") {
    for (auto backbone : {BackboneSpec::Backbone::delta_net,
                          BackboneSpec::Backbone::gated_delta_net, BackboneSpec::Backbone::kda}) {
        Case c = make_case(51, backbone, true, 1, 128, 1, 16, 16);
        auto ref = run_recurrent(c.stream, c.spec, c.gates, nullptr, &c.precond,
                                 ForwardOptions{.with_trace = false});
        auto c32 = chunk_forward(c.stream, c.spec, c.gates, &c.precond, nullptr, 32,
                                 ForwardOptions{}, Precision::f32);
        double scale = 0.0;
        for (auto x : ref.outputs) scale = std::max(scale, std::abs(x));
        REQUIRE(max_abs_diff(c32.outputs, ref.outputs) / scale <= 7e-3);
    }
}

TEST_CASE("decay floor hits are counted") {
    Case c = make_case(52, BackboneSpec::Backbone::kda, false, 1, 32, 1, 4, 4);
    for (auto& a : c.gates.alpha_vector) a = 0.3;  // collapses within a 32-token chunk
    auto chunk = chunk_forward_kda(c.stream, nullptr, c.gates, nullptr, 32);
    CHECK(chunk.decay_floor_hits > 0);
}
