#pragma once

#include <cstdint>
#include <vector>

#include "osdn/recurrent.hpp"
#include "osdn/types.hpp"

// Chunk-parallel WY forward passes for the three backbones and their
// online-scaled variants.  Within a chunk of C tokens all work is dense
// matrix arithmetic on an asymmetric key Gram (physical keys against write
// keys); only the chunk-boundary state is carried sequentially.  The 32-bit
// path exists only here and is equivalence-tested against the 64-bit path.

namespace osdn {

enum class Precision { f64, f32 };

// Per-chunk scratch.  gram holds the strictly lower intra-chunk key
// interactions; solved starts as the beta-scaled right-hand sides and is
// overwritten in place by the unit-lower-triangular solve.
template <typename T>
struct ChunkWorkspace {
    std::int64_t chunk_size = 0;
    std::vector<T> gram;             // [C,C] strictly lower
    std::vector<T> solved_key;       // W: [C,K]
    std::vector<T> solved_value;     // U: [C,V]
    std::vector<T> chunk_update;     // U - W S^T (or U - W S): [C,V]
    std::vector<T> score;            // [C,C] inclusive lower
    std::vector<T> gamma;            // [C] scalar decay prefixes (GDN)
    std::vector<T> gamma_vec;        // [C,K] channel decay prefixes (KDA)
    std::vector<T> gated_key;        // [C,K]
    std::vector<T> gated_query;      // [C,K]
    std::vector<T> norm_write_key;   // [C,K] write keys divided by decay prefix

    void resize(std::int64_t C, std::int64_t K, std::int64_t V);
};

struct ChunkForwardResult {
    std::vector<double> outputs;  // [B,T,H,V]
    FastWeightState final_state;
    std::int64_t decay_floor_hits = 0;  // decay prefixes clamped at 1e-6 before division
};

// Solves (I + gram) X = rhs in place by forward substitution, where gram is
// strictly lower triangular [C,C] and rhs is [C,ncols].  No inversion.
void ut_solve(const double* gram_strict_lower, std::int64_t chunk_size, double* rhs,
              std::int64_t ncols);

// Forward passes.  write_keys == nullptr uses the stream's raw keys (host
// variants).  T can be any positive length: tails are padded with beta=0
// no-op tokens and outputs truncated.
ChunkForwardResult chunk_forward_delta(const TokenStream& stream,
                                       const WriteKeySequence* write_keys,
                                       const FastWeightState* init_state,
                                       std::int64_t chunk_size, const ForwardOptions& opts = {},
                                       Precision prec = Precision::f64);

ChunkForwardResult chunk_forward_gdn(const TokenStream& stream,
                                     const WriteKeySequence* write_keys,
                                     const GateSequence& gates,
                                     const FastWeightState* init_state, std::int64_t chunk_size,
                                     const ForwardOptions& opts = {},
                                     Precision prec = Precision::f64);

ChunkForwardResult chunk_forward_kda(const TokenStream& stream,
                                     const WriteKeySequence* write_keys,
                                     const GateSequence& gates,
                                     const FastWeightState* init_state, std::int64_t chunk_size,
                                     const ForwardOptions& opts = {},
                                     Precision prec = Precision::f64);

// Dispatch on the backbone; runs phase 1 internally for online-scaled specs.
ChunkForwardResult chunk_forward(const TokenStream& stream, const BackboneSpec& spec,
                                 const GateSequence& gates,
                                 const PreconditionerState* init_precond,
                                 const FastWeightState* init_state, std::int64_t chunk_size,
                                 const ForwardOptions& opts = {},
                                 Precision prec = Precision::f64);

}  // namespace osdn
