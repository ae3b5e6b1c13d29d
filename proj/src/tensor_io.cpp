#include "osdn/tensor_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace osdn::io {
namespace {

constexpr char kMagic[4] = {'O', 'S', 'T', '1'};
constexpr std::uint32_t kEndianProbe = 0x01020304u;
constexpr std::uint8_t kRowMajor = 0;

void put(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get(std::ifstream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("tensor container: truncated file");
}

}  // namespace

std::int64_t Tensor::element_count() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

Tensor tensor_f64(std::string name, std::vector<std::int64_t> dims, std::vector<double> data) {
    Tensor t;
    t.name = std::move(name);
    t.dtype = DType::f64;
    t.dims = std::move(dims);
    t.f64 = std::move(data);
    if (t.element_count() != static_cast<std::int64_t>(t.f64.size())) {
        throw std::runtime_error("tensor container: dims/payload mismatch for " + t.name);
    }
    return t;
}

void write_bundle(const std::string& path, const std::vector<Tensor>& tensors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("tensor container: cannot open " + path);
    put(out, kMagic, 4);
    put(out, &kEndianProbe, 4);
    const auto count = static_cast<std::uint32_t>(tensors.size());
    put(out, &count, 4);
    for (const auto& t : tensors) {
        const auto name_len = static_cast<std::uint16_t>(t.name.size());
        put(out, &name_len, 2);
        put(out, t.name.data(), name_len);
        const auto dtype = static_cast<std::uint8_t>(t.dtype);
        put(out, &dtype, 1);
        put(out, &kRowMajor, 1);
        const auto rank = static_cast<std::uint16_t>(t.dims.size());
        put(out, &rank, 2);
        for (auto d : t.dims) {
            const auto d64 = static_cast<std::int64_t>(d);
            put(out, &d64, 8);
        }
        if (t.dtype == DType::f64) {
            put(out, t.f64.data(), t.f64.size() * sizeof(double));
        } else {
            put(out, t.f32.data(), t.f32.size() * sizeof(float));
        }
    }
    if (!out) throw std::runtime_error("tensor container: write failed for " + path);
}

namespace {

const Tensor& find(const std::vector<Tensor>& tensors, const std::string& name) {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::runtime_error("tensor container: missing tensor " + name);
}

Tensor scalar(std::string name, double v) { return tensor_f64(std::move(name), {1}, {v}); }

double scalar_of(const std::vector<Tensor>& tensors, const std::string& name) {
    return find(tensors, name).f64.at(0);
}

}  // namespace

std::vector<Tensor> read_bundle(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("tensor container: cannot open " + path);
    char magic[4];
    get(in, magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("tensor container: bad magic in " + path);
    }
    std::uint32_t probe = 0;
    get(in, &probe, 4);
    if (probe != kEndianProbe) {
        throw std::runtime_error("tensor container: endianness mismatch in " + path);
    }
    std::uint32_t count = 0;
    get(in, &count, 4);
    std::vector<Tensor> tensors(count);
    for (auto& t : tensors) {
        std::uint16_t name_len = 0;
        get(in, &name_len, 2);
        t.name.resize(name_len);
        get(in, t.name.data(), name_len);
        std::uint8_t dtype = 0, layout = 0;
        get(in, &dtype, 1);
        get(in, &layout, 1);
        if (layout != kRowMajor) throw std::runtime_error("tensor container: unknown layout tag");
        t.dtype = static_cast<DType>(dtype);
        std::uint16_t rank = 0;
        get(in, &rank, 2);
        t.dims.resize(rank);
        for (auto& d : t.dims) get(in, &d, 8);
        const auto n = static_cast<std::size_t>(t.element_count());
        if (t.dtype == DType::f64) {
            t.f64.resize(n);
            get(in, t.f64.data(), n * sizeof(double));
        } else if (t.dtype == DType::f32) {
            t.f32.resize(n);
            get(in, t.f32.data(), n * sizeof(float));
        } else {
            throw std::runtime_error("tensor container: unknown dtype");
        }
    }
    return tensors;
}


void save_stream(const std::string& path, const TokenStream& stream) {
    std::vector<Tensor> t;
    t.push_back(tensor_f64("queries", {stream.batch, stream.length, stream.heads, stream.key_dim},
                           stream.queries));
    t.push_back(tensor_f64("keys", {stream.batch, stream.length, stream.heads, stream.key_dim},
                           stream.keys));
    t.push_back(tensor_f64("values", {stream.batch, stream.length, stream.heads, stream.value_dim},
                           stream.values));
    t.push_back(tensor_f64("betas", {stream.batch, stream.length, stream.heads}, stream.betas));
    t.push_back(scalar("keys_unit_norm", stream.keys_unit_norm ? 1.0 : 0.0));
    write_bundle(path, t);
}

TokenStream load_stream(const std::string& path) {
    auto t = read_bundle(path);
    const Tensor& q = find(t, "queries");
    if (q.dims.size() != 4) throw std::runtime_error("tensor container: bad stream rank");
    TokenStream s;
    s.batch = q.dims[0];
    s.length = q.dims[1];
    s.heads = q.dims[2];
    s.key_dim = q.dims[3];
    s.value_dim = find(t, "values").dims[3];
    s.queries = q.f64;
    s.keys = find(t, "keys").f64;
    s.values = find(t, "values").f64;
    s.betas = find(t, "betas").f64;
    s.keys_unit_norm = scalar_of(t, "keys_unit_norm") != 0.0;
    return s;
}

void save_precond(const std::string& path, const PreconditionerState& state) {
    std::vector<Tensor> t;
    t.push_back(tensor_f64("d", {state.batch, state.heads, state.key_dim}, state.d));
    t.push_back(scalar("d_min", state.d_min));
    t.push_back(scalar("d_max", state.d_max));
    t.push_back(scalar("eta", state.eta));
    t.push_back(scalar("epsilon", state.epsilon));
    t.push_back(scalar("beta_aware", state.beta_aware ? 1.0 : 0.0));
    t.push_back(scalar("retention_mode", static_cast<double>(state.retention_mode)));
    t.push_back(scalar("rho", state.rho));
    write_bundle(path, t);
}

PreconditionerState load_precond(const std::string& path) {
    auto t = read_bundle(path);
    const Tensor& d = find(t, "d");
    PreconditionerState s;
    s.batch = d.dims[0];
    s.heads = d.dims[1];
    s.key_dim = d.dims[2];
    s.d = d.f64;
    s.d_min = scalar_of(t, "d_min");
    s.d_max = scalar_of(t, "d_max");
    s.eta = scalar_of(t, "eta");
    s.epsilon = scalar_of(t, "epsilon");
    s.beta_aware = scalar_of(t, "beta_aware") != 0.0;
    s.retention_mode =
        static_cast<PreconditionerState::Retention>(static_cast<int>(scalar_of(t, "retention_mode")));
    s.rho = scalar_of(t, "rho");
    return s;
}

void save_state(const std::string& path, const FastWeightState& state) {
    std::vector<Tensor> t;
    t.push_back(tensor_f64("s", {state.batch, state.heads, state.rows, state.cols}, state.s));
    t.push_back(scalar("orientation", state.orientation == FastWeightState::Orientation::vxk
                                          ? 0.0
                                          : 1.0));
    write_bundle(path, t);
}

FastWeightState load_state(const std::string& path) {
    auto t = read_bundle(path);
    const Tensor& m = find(t, "s");
    FastWeightState s;
    s.batch = m.dims[0];
    s.heads = m.dims[1];
    s.rows = m.dims[2];
    s.cols = m.dims[3];
    s.s = m.f64;
    s.orientation = scalar_of(t, "orientation") == 0.0 ? FastWeightState::Orientation::vxk
                                                       : FastWeightState::Orientation::kxv;
    return s;
}

void save_gates(const std::string& path, const GateSequence& gates) {
    std::vector<Tensor> t;
    t.push_back(tensor_f64("alpha_scalar",
                           {static_cast<std::int64_t>(gates.alpha_scalar.size())},
                           gates.alpha_scalar));
    t.push_back(tensor_f64("alpha_vector",
                           {static_cast<std::int64_t>(gates.alpha_vector.size())},
                           gates.alpha_vector));
    t.push_back(tensor_f64("retention", {static_cast<std::int64_t>(gates.retention.size())},
                           gates.retention));
    write_bundle(path, t);
}

GateSequence load_gates(const std::string& path) {
    auto t = read_bundle(path);
    GateSequence g;
    g.alpha_scalar = find(t, "alpha_scalar").f64;
    g.alpha_vector = find(t, "alpha_vector").f64;
    g.retention = find(t, "retention").f64;
    return g;
}

void save_write_keys(const std::string& path, const WriteKeySequence& wk) {
    std::vector<Tensor> t;
    t.push_back(tensor_f64("write_keys", {wk.batch, wk.length, wk.heads, wk.key_dim},
                           wk.write_keys));
    t.push_back(tensor_f64("d_final", {wk.batch, wk.heads, wk.key_dim}, wk.d_final));
    t.push_back(tensor_f64("d_trajectory",
                           {static_cast<std::int64_t>(wk.d_trajectory.size())},
                           wk.d_trajectory));
    write_bundle(path, t);
}

WriteKeySequence load_write_keys(const std::string& path) {
    auto t = read_bundle(path);
    const Tensor& w = find(t, "write_keys");
    WriteKeySequence wk;
    wk.batch = w.dims[0];
    wk.length = w.dims[1];
    wk.heads = w.dims[2];
    wk.key_dim = w.dims[3];
    wk.write_keys = w.f64;
    wk.d_final = find(t, "d_final").f64;
    wk.d_trajectory = find(t, "d_trajectory").f64;
    return wk;
}

std::string trace_to_csv(const ResidualTrace& trace) {
    std::string out = "b,t,h,f_before,f_after,grad_norm_sq,q,position_bin\n";
    char buf[256];
    for (std::int64_t b = 0; b < trace.batch; ++b) {
        for (std::int64_t t = 0; t < trace.length; ++t) {
            for (std::int64_t h = 0; h < trace.heads; ++h) {
                const auto& e = trace.at(b, t, h);
                std::snprintf(buf, sizeof(buf), "%lld,%lld,%lld,%.17g,%.17g,%.17g,%.17g,%d\n",
                              static_cast<long long>(b), static_cast<long long>(t),
                              static_cast<long long>(h), e.f_before, e.f_after, e.grad_norm_sq,
                              e.q, e.position_bin);
                out += buf;
            }
        }
    }
    return out;
}

}  // namespace osdn::io
