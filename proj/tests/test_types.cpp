#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <random>

#include "osdn/tensor_io.hpp"
#include "osdn/types.hpp"

using namespace osdn;

TEST_CASE("validate_stream accepts a well-formed minimal stream") {
    TokenStream s = TokenStream::zeros(1, 4, 1, 2, 2);
    for (std::int64_t t = 0; t < 4; ++t) s.keys[s.k_offset(0, t, 0)] = 1.0;
    CHECK_NOTHROW(validate_stream(s));
}

TEST_CASE("validate_stream rejects boundary and malformed inputs") {
    TokenStream s = TokenStream::zeros(1, 4, 1, 2, 2);

    SUBCASE("beta at the closed boundary") {
        s.betas[2] = 1.0;
        CHECK_THROWS_AS(validate_stream(s), ValidationError);
    }
    SUBCASE("beta zero") {
        s.betas[0] = 0.0;
        CHECK_THROWS_AS(validate_stream(s), ValidationError);
    }
    SUBCASE("non-finite key") {
        s.keys[1] = std::nan("");
        CHECK_THROWS_AS(validate_stream(s), ValidationError);
    }
    SUBCASE("unit norm flag with non-unit key") {
        s.keys_unit_norm = true;
        s.keys[s.k_offset(0, 0, 0)] = 1.0;
        s.keys[s.k_offset(0, 0, 0) + 1] = 1.0;
        CHECK_THROWS_AS(validate_stream(s), ValidationError);
    }
    SUBCASE("shape mismatch") {
        s.keys.pop_back();
        CHECK_THROWS_AS(validate_stream(s), ValidationError);
    }
}

TEST_CASE("validation errors carry the offending index") {
    TokenStream s = TokenStream::zeros(1, 4, 1, 2, 2);
    s.betas[s.b_offset(0, 2, 0)] = 1.0;
    try {
        validate_stream(s);
        FAIL("expected throw");
    } catch (const ValidationError& e) {
        CHECK(e.token == 2);
    }
}

TEST_CASE("normalize_keys") {
    TokenStream s = TokenStream::zeros(1, 2, 1, 2, 2);
    s.keys[0] = 3.0;
    s.keys[1] = 4.0;
    s.keys[2] = 1.0;
    s.keys[3] = 0.0;

    SUBCASE("scales to unit norm") {
        TokenStream n = normalize_keys(s);
        CHECK(n.keys[0] == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(n.keys[1] == doctest::Approx(0.8).epsilon(1e-15));
        CHECK(n.keys[2] == 1.0);  // already unit
        CHECK(n.keys[3] == 0.0);
        CHECK(n.keys_unit_norm);
        CHECK_NOTHROW(validate_stream(n));
    }
    SUBCASE("zero key reports its token") {
        s.keys[2] = 0.0;
        try {
            normalize_keys(s);
            FAIL("expected throw");
        } catch (const ValidationError& e) {
            CHECK(e.token == 1);
        }
    }
}

TEST_CASE("preconditioner state invariants") {
    PreconditionerState p = PreconditionerState::make(1, 2, 3);
    CHECK_NOTHROW(p.check());
    SUBCASE("entry outside the box") {
        p.d[2] = 3.0;
        CHECK_THROWS_AS(p.check(), ValidationError);
    }
    SUBCASE("bad box") {
        p.d_min = 0.0;
        CHECK_THROWS_AS(p.check(), ValidationError);
    }
    SUBCASE("bad eta") {
        p.eta = -1.0;
        CHECK_THROWS_AS(p.check(), ValidationError);
    }
}

TEST_CASE("gate range checks") {
    TokenStream s = TokenStream::zeros(1, 3, 2, 2, 2);
    GateSequence g;
    g.alpha_scalar.assign(6, 0.5);
    CHECK_NOTHROW(check_gates(g, s));
    g.alpha_scalar[4] = 0.0;
    CHECK_THROWS_AS(check_gates(g, s), ValidationError);
    g.alpha_scalar[4] = 1.0;  // closed right end is allowed
    CHECK_NOTHROW(check_gates(g, s));
}

TEST_CASE("tensor container round trip is bit exact") {
    std::vector<double> payload = {0.1, -3.5e300, 1e-308, 0.0, 7.25};
    io::Tensor t = io::tensor_f64("payload", {5}, payload);
    io::Tensor u;
    u.name = "half";
    u.dtype = io::DType::f32;
    u.dims = {2, 2};
    u.f32 = {1.5f, -2.25f, 3.0e-30f, 4.0f};

    const std::string path = "roundtrip_test.ostb";
    io::write_bundle(path, {t, u});
    auto back = io::read_bundle(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].name == "payload");
    REQUIRE(back[0].f64.size() == payload.size());
    for (std::size_t i = 0; i < payload.size(); ++i) {
        CHECK(std::memcmp(&back[0].f64[i], &payload[i], sizeof(double)) == 0);
    }
    CHECK(back[1].dims == std::vector<std::int64_t>{2, 2});
    for (std::size_t i = 0; i < u.f32.size(); ++i) {
        CHECK(std::memcmp(&back[1].f32[i], &u.f32[i], sizeof(float)) == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("domain types round trip bit exactly through the container") {
    std::mt19937_64 rng(77);
    std::normal_distribution<double> gauss(0.0, 1.0);

    TokenStream stream = TokenStream::zeros(2, 3, 2, 4, 3);
    for (auto& x : stream.queries) x = gauss(rng);
    for (auto& x : stream.keys) x = gauss(rng);
    for (auto& x : stream.values) x = gauss(rng);
    for (auto& x : stream.betas) x = 0.25 + 0.5 * std::abs(gauss(rng)) / 10.0;
    io::save_stream("rt_stream.ostb", stream);
    TokenStream s2 = io::load_stream("rt_stream.ostb");
    CHECK(std::memcmp(s2.keys.data(), stream.keys.data(),
                      stream.keys.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(s2.queries.data(), stream.queries.data(),
                      stream.queries.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(s2.values.data(), stream.values.data(),
                      stream.values.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(s2.betas.data(), stream.betas.data(),
                      stream.betas.size() * sizeof(double)) == 0);
    CHECK(s2.value_dim == 3);

    PreconditionerState p = PreconditionerState::make(1, 2, 4, 1.3);
    p.retention_mode = PreconditionerState::Retention::constant;
    p.rho = 0.991;
    io::save_precond("rt_precond.ostb", p);
    PreconditionerState p2 = io::load_precond("rt_precond.ostb");
    CHECK(std::memcmp(p2.d.data(), p.d.data(), p.d.size() * sizeof(double)) == 0);
    CHECK(p2.retention_mode == p.retention_mode);
    CHECK(p2.rho == p.rho);

    FastWeightState f = FastWeightState::zeros(FastWeightState::Orientation::kxv, 1, 1, 3, 2);
    for (auto& x : f.s) x = gauss(rng);
    io::save_state("rt_state.ostb", f);
    FastWeightState f2 = io::load_state("rt_state.ostb");
    CHECK(f2.orientation == f.orientation);
    CHECK(std::memcmp(f2.s.data(), f.s.data(), f.s.size() * sizeof(double)) == 0);

    GateSequence g;
    g.alpha_scalar = {0.5, 0.75, 1.0};
    g.retention = {0.99, 0.98, 1.0};
    io::save_gates("rt_gates.ostb", g);
    GateSequence g2 = io::load_gates("rt_gates.ostb");
    CHECK(g2.alpha_scalar == g.alpha_scalar);
    CHECK(g2.retention == g.retention);
    CHECK(!g2.has_alpha_vector());

    WriteKeySequence wk;
    wk.batch = 1;
    wk.length = 2;
    wk.heads = 1;
    wk.key_dim = 3;
    wk.write_keys = {1.0, -2.5, 0.125, 3.5, 0.0, -1e-300};
    wk.d_final = {1.0, 2.0, 0.5};
    io::save_write_keys("rt_wk.ostb", wk);
    WriteKeySequence wk2 = io::load_write_keys("rt_wk.ostb");
    CHECK(std::memcmp(wk2.write_keys.data(), wk.write_keys.data(),
                      wk.write_keys.size() * sizeof(double)) == 0);
    CHECK(!wk2.has_trajectory());

    for (const char* f_name : {"rt_stream.ostb", "rt_precond.ostb", "rt_state.ostb",
                               "rt_gates.ostb", "rt_wk.ostb"}) {
        std::remove(f_name);
    }
}

TEST_CASE("trace CSV carries every field") {
    ResidualTrace trace;
    trace.batch = 1;
    trace.length = 2;
    trace.heads = 1;
    trace.entries.resize(2);
    trace.entries[0] = {0.5, 0.125, 1.0, 0.25, 0};
    trace.entries[1] = {0.0, 0.0, 0.0, 1.0, 1};
    std::string csv = io::trace_to_csv(trace);
    CHECK(csv.find("f_before") != std::string::npos);
    CHECK(csv.find("0.25") != std::string::npos);
}
