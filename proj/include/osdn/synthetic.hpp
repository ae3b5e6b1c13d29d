#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "osdn/recurrent.hpp"
#include "osdn/types.hpp"

// Seeded generators for synthetic streams: fully random streams for the
// equivalence grid, and typed-key replay streams (dictionary keys, repeated
// segments) for the residual-ratio diagnostic.

namespace osdn {

struct ReplayConfig {
    std::uint64_t seed = 1;
    BackboneSpec spec;  // replay compares spec's host against its OS variant
    std::int64_t batch = 1;
    std::int64_t length = 512;
    std::int64_t heads = 1;
    std::int64_t key_dim = 8;
    std::int64_t value_dim = 8;
    std::int64_t chunk_size = 64;
    std::int64_t n_dict = 8;
    std::int64_t repeat = 2;
    bool orthogonal_dict = true;
    // typed_values pins the target to the class (the no-conflict regime of the
    // per-class audits); otherwise values are fresh per base-segment token and
    // repeat only across the concatenation seam.
    bool typed_values = false;
    double eta = 0.003;
    double d_min = 0.5;
    double d_max = 2.0;
    double epsilon = 1e-6;
    bool beta_aware = true;
    PreconditionerState::Retention retention_mode = PreconditionerState::Retention::none;
    double rho = 0.999;
    double beta_min = 0.55;
    double beta_max = 0.9;
    std::int32_t position_bins = 8;

    void validate() const;
    PreconditionerState make_precond() const;
};

struct SyntheticStream {
    TokenStream stream;
    GateSequence gates;
    std::vector<std::int32_t> class_ids;  // per token, shared across lanes
    std::vector<double> dict_keys;        // [n_dict,K]
    std::vector<double> dict_values;      // [n_dict,V]
};

// Typed-key stream: a base segment of length/repeat tokens with dictionary
// keys and per-class values, concatenated with itself repeat times.
SyntheticStream make_replay_stream(const ReplayConfig& config);

// Unstructured random stream: Gaussian queries/values, unit-norm Gaussian
// key directions (the write recurrences contract only under bounded key
// norms), uniform betas.
TokenStream random_stream(std::mt19937_64& rng, std::int64_t B, std::int64_t T, std::int64_t H,
                          std::int64_t K, std::int64_t V, double beta_min = 0.05,
                          double beta_max = 0.95, bool unit_keys = true);
// Decay gates default to the near-one regime of trained forget gates; strong
// decay over a long chunk drives the cumulative prefix below the 1e-6 kernel
// floor, where the decay-ratio gauge intentionally saturates.
GateSequence random_gates(std::mt19937_64& rng, const BackboneSpec& spec,
                          const TokenStream& stream, double alpha_min = 0.95,
                          double alpha_max = 1.0, double retention_min = 0.9,
                          double retention_max = 1.0);

}  // namespace osdn
