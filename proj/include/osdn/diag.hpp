#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osdn/synthetic.hpp"

// Diagnostic engines behind the CLI subcommands: the chunk-vs-recurrent
// equivalence grid, the residual-ratio replay, the theorem audit bundle, and
// the microbenchmark.  Numeric payloads are deterministic given (seed,
// config); only measured timings vary.

namespace osdn {

struct EquivConfig {
    std::uint64_t seed = 1;
    double tol_f64 = 1e-9;
    double tol_f32 = 7e-3;
    bool include_f32 = true;
    std::vector<std::int64_t> batches{1, 2};
    std::vector<std::int64_t> lengths{32, 128};
    std::vector<std::int64_t> heads{1, 2};
    std::vector<std::int64_t> key_dims{8, 16};
    std::vector<std::int64_t> value_dims{8, 16};
    std::vector<std::int64_t> chunk_sizes{1, 16, 32, -1};  // -1 means C = T
};

struct EquivCase {
    std::string variant;
    std::int64_t B, T, H, K, V, C;
    double max_output_err = 0.0;      // f64 chunk vs recurrent, max abs
    double max_state_err = 0.0;       // f64 final state, max abs
    double rel_output_err_f32 = 0.0;  // f32 chunk vs f64 recurrent, scaled max
    double rel_state_err_f32 = 0.0;
    bool pass = true;
};

struct EquivReport {
    std::vector<EquivCase> cases;
    double worst_f64 = 0.0;
    double worst_f32 = 0.0;
    bool all_pass = true;
    std::string to_csv() const;
};

EquivReport run_equiv(const EquivConfig& config);

struct ReplayBinStat {
    std::int32_t bin = 0;
    double q_geo = 1.0;
    std::int64_t tokens = 0;
};

struct ReplayVariantStats {
    std::string variant;
    double q_geo_overall = 1.0;
    double q_geo_first_half = 1.0;
    double q_geo_second_half = 1.0;
    std::vector<ReplayBinStat> bins;
    std::vector<double> q_geo_per_class;
    std::int64_t floored_tokens = 0;  // log-domain floor hits (q at 1e-300)
};

struct ReplayReport {
    ReplayVariantStats host;
    ReplayVariantStats online;
    double second_half_reduction = 0.0;  // host minus online, second half
    bool online_below_host_second_half = false;
    std::int32_t repeat_boundary_bin = 0;
    std::string to_csv() const;
};

ReplayReport run_replay(const ReplayConfig& config);

struct TheoryConfig {
    std::uint64_t seed = 1;
    std::int64_t n_problems = 10;
    std::int64_t population_horizon = 200;
    std::int64_t population_key_dim = 4;   // capped at 8
    std::int64_t population_value_dim = 3;
    std::int64_t n_streams = 10;
    std::int64_t stream_length = 64;
    std::int64_t stream_key_dim = 8;
    bool monotone_guard = true;
    bool include_adversarial = true;  // guard-off run reported as N/A
};

struct TheoryVerdict {
    std::string id;
    std::uint64_t seed = 0;
    double lhs = 0.0;
    double rhs = 0.0;
    std::string verdict;  // PASS / FAIL / NA
};

struct TheoryReport {
    std::vector<TheoryVerdict> verdicts;
    bool all_pass = true;  // NA entries do not fail the bundle
    std::string to_json() const;
};

TheoryReport run_theory(const TheoryConfig& config);

struct BenchConfig {
    std::uint64_t seed = 1;
    std::int64_t batch = 1;
    std::int64_t length = 4096;
    std::int64_t heads = 2;
    std::int64_t key_dim = 16;
    std::int64_t value_dim = 16;
    std::int64_t chunk_size = 64;
    int repeats = 5;
    int warmup = 1;
};

struct BenchRow {
    std::string variant;
    std::string phase;  // phase1 / chunk / recurrent
    double median_ms = 0.0;
    double tokens_per_sec = 0.0;
    double checksum = 0.0;  // deterministic output digest
};

struct BenchReport {
    std::vector<BenchRow> rows;
    double phase1_fraction = 0.0;  // phase-1 share of phase1 + chunk forward
    std::string to_csv() const;
    std::string checksums_csv() const;  // timing-free payload
};

BenchReport run_bench(const BenchConfig& config);

}  // namespace osdn
