#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osdn/types.hpp"

// On-disk tensor container: a fixed header (magic, dtype, layout tag, dims)
// followed by the row-major payload.  Bundles store several named tensors in
// one file.  Round trips are bit-exact.

namespace osdn::io {

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

struct Tensor {
    std::string name;
    DType dtype = DType::f64;
    std::vector<std::int64_t> dims;
    std::vector<double> f64;  // payload when dtype == f64
    std::vector<float> f32;   // payload when dtype == f32

    std::int64_t element_count() const;
};

Tensor tensor_f64(std::string name, std::vector<std::int64_t> dims, std::vector<double> data);

void write_bundle(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_bundle(const std::string& path);

// Domain types map onto named tensor bundles; round trips are bit-exact.
void save_stream(const std::string& path, const TokenStream& stream);
TokenStream load_stream(const std::string& path);
void save_precond(const std::string& path, const PreconditionerState& state);
PreconditionerState load_precond(const std::string& path);
void save_state(const std::string& path, const FastWeightState& state);
FastWeightState load_state(const std::string& path);
void save_gates(const std::string& path, const GateSequence& gates);
GateSequence load_gates(const std::string& path);
void save_write_keys(const std::string& path, const WriteKeySequence& wk);
WriteKeySequence load_write_keys(const std::string& path);

// Traces are CSV on disk (b,t,h,f_before,f_after,grad_norm_sq,q,position_bin).
std::string trace_to_csv(const ResidualTrace& trace);

}  // namespace osdn::io
