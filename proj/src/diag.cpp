#include "osdn/diag.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "osdn/audits.hpp"
#include "osdn/chunk.hpp"
#include "osdn/quadratic.hpp"
#include "osdn/report.hpp"
#include "osdn/simd.hpp"

namespace osdn {
namespace {

using report::format_double;

constexpr double kLogFloor = 1e-300;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (salt * 0x9e3779b97f4a7c15ull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

std::vector<BackboneSpec> all_variants() {
    std::vector<BackboneSpec> out;
    for (auto backbone :
         {BackboneSpec::Backbone::delta_net, BackboneSpec::Backbone::gated_delta_net,
          BackboneSpec::Backbone::kda}) {
        for (bool scaled : {false, true}) {
            BackboneSpec s;
            s.backbone = backbone;
            s.online_scaled = scaled;
            out.push_back(s);
        }
    }
    return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

double max_abs(const std::vector<double>& a) {
    double worst = 0.0;
    for (double x : a) worst = std::max(worst, std::abs(x));
    return worst;
}

}  // namespace

EquivReport run_equiv(const EquivConfig& config) {
    EquivReport rep;
    std::uint64_t case_index = 0;
    for (const auto& spec : all_variants()) {
        for (auto B : config.batches) {
            for (auto T : config.lengths) {
                for (auto H : config.heads) {
                    for (auto K : config.key_dims) {
                        for (auto V : config.value_dims) {
                            std::vector<std::int64_t> chunks;
                            for (auto c : config.chunk_sizes) {
                                const std::int64_t cc = c == -1 ? T : c;
                                if (cc <= T && std::find(chunks.begin(), chunks.end(), cc) ==
                                                   chunks.end()) {
                                    chunks.push_back(cc);
                                }
                            }
                            std::mt19937_64 rng(mix_seed(config.seed, ++case_index));
                            TokenStream stream = random_stream(rng, B, T, H, K, V);
                            GateSequence gates = random_gates(rng, spec, stream);
                            PreconditionerState precond = PreconditionerState::make(B, H, K);
                            ForwardOptions opts;
                            opts.with_trace = false;
                            ForwardResult ref =
                                run_recurrent(stream, spec, gates, nullptr, &precond, opts);
                            for (auto C : chunks) {
                                EquivCase ec;
                                ec.variant = spec.name();
                                ec.B = B;
                                ec.T = T;
                                ec.H = H;
                                ec.K = K;
                                ec.V = V;
                                ec.C = C;
                                ChunkForwardResult chunk = chunk_forward(
                                    stream, spec, gates, &precond, nullptr, C, opts);
                                ec.max_output_err = max_abs_diff(chunk.outputs, ref.outputs);
                                ec.max_state_err =
                                    max_abs_diff(chunk.final_state.s, ref.final_state.s);
                                ec.pass = ec.max_output_err <= config.tol_f64 &&
                                          ec.max_state_err <= config.tol_f64;
                                if (config.include_f32) {
                                    ChunkForwardResult c32 =
                                        chunk_forward(stream, spec, gates, &precond, nullptr, C,
                                                      opts, Precision::f32);
                                    const double out_scale =
                                        std::max(max_abs(ref.outputs), 1e-30);
                                    const double state_scale =
                                        std::max(max_abs(ref.final_state.s), 1e-30);
                                    ec.rel_output_err_f32 =
                                        max_abs_diff(c32.outputs, ref.outputs) / out_scale;
                                    ec.rel_state_err_f32 =
                                        max_abs_diff(c32.final_state.s, ref.final_state.s) /
                                        state_scale;
                                    ec.pass = ec.pass &&
                                              ec.rel_output_err_f32 <= config.tol_f32 &&
                                              ec.rel_state_err_f32 <= config.tol_f32;
                                }
                                rep.worst_f64 = std::max(
                                    rep.worst_f64,
                                    std::max(ec.max_output_err, ec.max_state_err));
                                rep.worst_f32 = std::max(
                                    rep.worst_f32,
                                    std::max(ec.rel_output_err_f32, ec.rel_state_err_f32));
                                rep.all_pass = rep.all_pass && ec.pass;
                                rep.cases.push_back(std::move(ec));
                            }
                        }
                    }
                }
            }
        }
    }
    return rep;
}

std::string EquivReport::to_csv() const {
    report::Csv csv;
    csv.header = {"variant", "B",           "T",           "H",
                  "K",       "V",           "C",           "max_output_err",
                  "max_state_err", "rel_output_err_f32", "rel_state_err_f32", "pass"};
    for (const auto& c : cases) {
        csv.add_row({c.variant, std::to_string(c.B), std::to_string(c.T), std::to_string(c.H),
                     std::to_string(c.K), std::to_string(c.V), std::to_string(c.C),
                     format_double(c.max_output_err), format_double(c.max_state_err),
                     format_double(c.rel_output_err_f32), format_double(c.rel_state_err_f32),
                     c.pass ? "1" : "0"});
    }
    return csv.to_string();
}

namespace {

struct QGeoAccumulator {
    double log_sum = 0.0;
    std::int64_t count = 0;
    std::int64_t floored = 0;

    void add(double q) {
        double x = q;
        if (x < kLogFloor) {
            x = kLogFloor;
            ++floored;
        }
        log_sum += std::log(x);
        ++count;
    }
    double geo() const { return count == 0 ? 1.0 : std::exp(log_sum / count); }
};

ReplayVariantStats aggregate_replay(const ReplayConfig& config, const SyntheticStream& synth,
                                    const BackboneSpec& spec) {
    ForwardOptions opts;
    opts.trace_bins = config.position_bins;
    PreconditionerState precond = config.make_precond();
    if (spec.apf && precond.retention_mode == PreconditionerState::Retention::none) {
        precond.retention_mode = PreconditionerState::Retention::data_dependent;
    }
    ForwardResult fwd =
        run_recurrent(synth.stream, spec, synth.gates, nullptr, &precond, opts);

    const auto B = config.batch, T = config.length, H = config.heads;
    ReplayVariantStats stats;
    stats.variant = spec.name();
    QGeoAccumulator overall, first_half, second_half;
    std::vector<QGeoAccumulator> bins(config.position_bins);
    std::vector<QGeoAccumulator> classes(config.n_dict);
    for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t t = 0; t < T; ++t) {
            for (std::int64_t h = 0; h < H; ++h) {
                const auto& e = fwd.trace.at(b, t, h);
                overall.add(e.q);
                (t < T / 2 ? first_half : second_half).add(e.q);
                bins[e.position_bin].add(e.q);
                classes[synth.class_ids[t]].add(e.q);
            }
        }
    }
    stats.q_geo_overall = overall.geo();
    stats.q_geo_first_half = first_half.geo();
    stats.q_geo_second_half = second_half.geo();
    stats.floored_tokens = overall.floored;
    for (std::int32_t i = 0; i < config.position_bins; ++i) {
        stats.bins.push_back({i, bins[i].geo(), bins[i].count});
    }
    for (std::int64_t c = 0; c < config.n_dict; ++c) {
        stats.q_geo_per_class.push_back(classes[c].geo());
    }
    return stats;
}

}  // namespace

ReplayReport run_replay(const ReplayConfig& config) {
    SyntheticStream synth = make_replay_stream(config);
    synth.stream = validate_stream(std::move(synth.stream));

    BackboneSpec host = config.spec;
    host.online_scaled = false;
    host.apf = false;
    BackboneSpec online = config.spec;
    online.online_scaled = true;

    ReplayReport rep;
    rep.host = aggregate_replay(config, synth, host);
    rep.online = aggregate_replay(config, synth, online);
    rep.second_half_reduction = rep.host.q_geo_second_half - rep.online.q_geo_second_half;
    rep.online_below_host_second_half =
        rep.online.q_geo_second_half < rep.host.q_geo_second_half;
    rep.repeat_boundary_bin =
        static_cast<std::int32_t>(config.position_bins / std::max<std::int64_t>(config.repeat, 1));
    return rep;
}

std::string ReplayReport::to_csv() const {
    report::Csv csv;
    csv.header = {"backbone", "variant", "bin", "q_geo", "n_tokens"};
    auto emit = [&](const ReplayVariantStats& s) {
        for (const auto& b : s.bins) {
            csv.add_row({s.variant, s.variant, std::to_string(b.bin), format_double(b.q_geo),
                         std::to_string(b.tokens)});
        }
        csv.add_row({s.variant, s.variant, "overall", format_double(s.q_geo_overall), ""});
        csv.add_row({s.variant, s.variant, "first_half", format_double(s.q_geo_first_half), ""});
        csv.add_row(
            {s.variant, s.variant, "second_half", format_double(s.q_geo_second_half), ""});
        for (std::size_t c = 0; c < s.q_geo_per_class.size(); ++c) {
            csv.add_row({s.variant, s.variant, "class_" + std::to_string(c),
                         format_double(s.q_geo_per_class[c]), ""});
        }
        csv.add_row({s.variant, s.variant, "floored_tokens", "",
                     std::to_string(s.floored_tokens)});
    };
    emit(host);
    emit(online);
    csv.add_row({"summary", "reduction", "second_half", format_double(second_half_reduction),
                 online_below_host_second_half ? "1" : "0"});
    csv.add_row({"summary", "repeat_boundary", std::to_string(repeat_boundary_bin), "", ""});
    return csv.to_string();
}

namespace {

QuadraticProblem make_problem(std::uint64_t seed, std::int64_t K, std::int64_t V,
                              bool diagonal_covariance) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const std::int64_t M = diagonal_covariance ? K : 2 * K;
    std::vector<double> keys(M * K, 0.0), values(M * V);
    if (diagonal_covariance) {
        std::uniform_real_distribution<double> scale(0.5, 2.0);
        for (std::int64_t m = 0; m < M; ++m) keys[m * K + m] = scale(rng);
    } else {
        for (auto& x : keys) x = gauss(rng);
    }
    for (auto& x : values) x = gauss(rng);
    return QuadraticProblem::from_atoms(std::move(keys), std::move(values), {}, K, V);
}

}  // namespace

TheoryReport run_theory(const TheoryConfig& config) {
    TheoryReport rep;
    auto push = [&](std::string id, std::uint64_t seed, double lhs, double rhs, bool ok,
                    bool not_applicable = false) {
        TheoryVerdict v;
        v.id = std::move(id);
        v.seed = seed;
        v.lhs = lhs;
        v.rhs = rhs;
        v.verdict = not_applicable ? "NA" : (ok ? "PASS" : "FAIL");
        if (!not_applicable && !ok) rep.all_pass = false;
        rep.verdicts.push_back(std::move(v));
    };

    const std::int64_t Kcap = std::min<std::int64_t>(config.population_key_dim + 4, 8);
    for (std::int64_t p = 0; p < config.n_problems; ++p) {
        const std::uint64_t seed = mix_seed(config.seed, 100 + p);
        const std::int64_t K = 2 + (p % std::max<std::int64_t>(Kcap - 1, 1));
        const bool diag = (p % 3 == 0);
        QuadraticProblem problem =
            make_problem(seed, K, config.population_value_dim, diag);
        problem.check();

        PopulationRunConfig run_cfg;
        run_cfg.horizon = config.population_horizon;
        run_cfg.learner = LearnerKind::diagonal_ogd;
        run_cfg.seed = seed;
        run_cfg.monotone_guard = config.monotone_guard;
        PopulationRunReport run = run_population_osgm(problem, run_cfg);
        push("population_prefix_bound", seed, run.log_ratio_product, run.bound_log,
             run.bound_holds_all_prefixes);
        push("population_rayleigh", seed, 0.0, 2.0 * problem.smoothness, run.rayleigh_ok);

        // One exact right-Newton step from a fresh random state.
        std::mt19937_64 rng(seed ^ 0xabcdef);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> s(problem.value_dim * problem.key_dim);
        for (auto& x : s) x = gauss(rng);
        std::vector<double> g0(s.size()), g1(s.size());
        problem.gradient(s.data(), g0.data());
        PopulationStep newton = population_step(s.data(), problem.d_star.data(), problem);
        problem.gradient(newton.next_state.data(), g1.data());
        const double n0 = std::sqrt(simd::active().dot_f64(g0.data(), g0.data(), g0.size()));
        const double n1 = std::sqrt(simd::active().dot_f64(g1.data(), g1.data(), g1.size()));
        push("newton_one_step", seed, n1, 1e-10 * n0, n1 <= 1e-10 * n0);

        if (p == 0) {
            // degenerate horizon: the bound must hold after a single step
            PopulationRunConfig one = run_cfg;
            one.horizon = 1;
            PopulationRunReport r1 = run_population_osgm(problem, one);
            push("population_t1_bound", seed, r1.log_ratio_product, r1.bound_log,
                 r1.bound_holds_all_prefixes);
        }

        if (p == 0) {
            RegretDecomposition dec = decompose_regret(problem, run, 0.5, 2.0);
            const double sum = dec.ogd_term + dec.box_gap + dec.diagonal_gap;
            const double scale = std::max(1.0, std::abs(dec.total));
            push("regret_decomposition", seed, sum, dec.total,
                 std::abs(sum - dec.total) <= 1e-10 * scale);
        }
    }

    if (config.include_adversarial) {
        const std::uint64_t seed = mix_seed(config.seed, 999);
        QuadraticProblem problem = make_problem(seed, 4, config.population_value_dim, false);
        PopulationRunConfig run_cfg;
        run_cfg.horizon = std::min<std::int64_t>(config.population_horizon, 40);
        run_cfg.learner = LearnerKind::dense_ogd;
        run_cfg.seed = seed;
        run_cfg.monotone_guard = false;
        run_cfg.learner_step = 5.0 / problem.smoothness;  // oscillates without diverging
        PopulationRunReport run = run_population_osgm(problem, run_cfg);
        bool monotone = true;
        for (const auto& st : run.ledger.steps) {
            if (st.applied && st.h_decision > 0.0) monotone = false;
        }
        // Assumption unmet -> N/A rather than FAIL.
        push("population_prefix_bound_no_guard", seed, run.log_ratio_product, run.bound_log,
             run.bound_holds_all_prefixes, /*not_applicable=*/!monotone);
    }

    // Token-local audits on unit-key streams.
    for (std::int64_t si = 0; si < config.n_streams; ++si) {
        const std::uint64_t seed = mix_seed(config.seed, 5000 + si);
        std::mt19937_64 rng(seed);
        TokenStream stream =
            random_stream(rng, 1, config.stream_length, 1, config.stream_key_dim, 4);
        stream = normalize_keys(std::move(stream));
        stream = validate_stream(std::move(stream));
        BackboneSpec spec;
        spec.backbone = BackboneSpec::Backbone::delta_net;
        spec.online_scaled = true;
        PreconditionerState precond = PreconditionerState::make(1, 1, config.stream_key_dim);
        GateSequence gates;
        ForwardOptions opts;
        opts.keep_trajectory = true;
        ForwardResult fwd = run_recurrent(stream, spec, gates, nullptr, &precond, opts);
        TokenLocalAuditReport audit =
            token_local_audit(stream, fwd.trace, fwd.write_keys, precond);
        const auto& lane = audit.lanes.front();
        const double rhs = lane.comparators.empty() ? 0.0 : lane.comparators.front().bound_log;
        push("tokenlocal_bound", seed, lane.log_q_product, rhs, audit.all_hold);
    }

    // Repeated-key identity on a typed orthogonal stream.
    {
        const std::uint64_t seed = mix_seed(config.seed, 7777);
        ReplayConfig rc;
        rc.seed = seed;
        rc.length = 32;
        rc.key_dim = config.stream_key_dim;
        rc.value_dim = 4;
        rc.n_dict = 4;
        rc.repeat = 2;
        rc.typed_values = true;
        SyntheticStream synth = make_replay_stream(rc);
        synth.stream = validate_stream(std::move(synth.stream));
        BackboneSpec spec;
        spec.backbone = BackboneSpec::Backbone::delta_net;
        spec.online_scaled = true;
        PreconditionerState precond = rc.make_precond();
        FastWeightState s0 = FastWeightState::zeros(FastWeightState::Orientation::vxk, 1, 1,
                                                    rc.key_dim, rc.value_dim);
        ForwardOptions opts;
        ForwardResult fwd = run_recurrent(synth.stream, spec, synth.gates, &s0, &precond, opts);
        RepeatedKeyAuditReport audit = repeated_key_audit(
            synth.stream, synth.class_ids, synth.dict_keys, synth.dict_values, rc.n_dict,
            fwd.trace, s0, fwd.final_state);
        push("repeated_key_identity", seed, audit.per_class_log, audit.trace_log, audit.holds);
    }

    // Alternating-target non-implication example.
    {
        AlternatingCounterexampleReport alt = run_alternating_counterexample(64);
        push("alternating_counterexample", config.seed, alt.log_q_product,
             alt.distance_to_optimum, alt.contraction_total && alt.distance_to_optimum >= 0.5);
    }
    return rep;
}

std::string TheoryReport::to_json() const {
    std::string out = "{\n  \"audits\": [\n";
    for (std::size_t i = 0; i < verdicts.size(); ++i) {
        const auto& v = verdicts[i];
        out += "    {\"theorem\": \"" + v.id + "\", \"seed\": " + std::to_string(v.seed) +
               ", \"lhs\": \"" + format_double(v.lhs) + "\", \"rhs\": \"" +
               format_double(v.rhs) + "\", \"verdict\": \"" + v.verdict + "\"}";
        out += (i + 1 < verdicts.size()) ? ",\n" : "\n";
    }
    out += "  ],\n  \"all_pass\": ";
    out += all_pass ? "true" : "false";
    out += "\n}\n";
    return out;
}

namespace {

template <typename F>
double median_ms(F&& fn, int warmup, int repeats, double* checksum) {
    for (int i = 0; i < warmup; ++i) *checksum = fn();
    std::vector<double> times;
    times.reserve(repeats);
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        *checksum = fn();
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

double vec_checksum(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc;
}

}  // namespace

BenchReport run_bench(const BenchConfig& config) {
    BenchReport rep;
    const double tokens =
        static_cast<double>(config.batch) * config.length * config.heads;
    double phase1_ms_total = 0.0;
    double chunk_ms_total = 0.0;

    for (const auto& spec : all_variants()) {
        std::mt19937_64 rng(mix_seed(config.seed, 31));
        TokenStream stream = random_stream(rng, config.batch, config.length, config.heads,
                                           config.key_dim, config.value_dim);
        GateSequence gates = random_gates(rng, spec, stream);
        PreconditionerState precond =
            PreconditionerState::make(config.batch, config.heads, config.key_dim);
        ForwardOptions opts;
        opts.with_trace = false;

        if (spec.online_scaled) {
            double checksum = 0.0;
            const double ms = median_ms(
                [&] {
                    WriteKeySequence wk = phase1_sweep(stream, precond, gates, false);
                    return vec_checksum(wk.write_keys);
                },
                config.warmup, config.repeats, &checksum);
            rep.rows.push_back(
                {spec.name(), "phase1", ms, tokens / (ms / 1000.0), checksum});
            phase1_ms_total += ms;
        }
        {
            double checksum = 0.0;
            const double ms = median_ms(
                [&] {
                    ChunkForwardResult r = chunk_forward(stream, spec, gates, &precond,
                                                         nullptr, config.chunk_size, opts);
                    return vec_checksum(r.outputs) + vec_checksum(r.final_state.s);
                },
                config.warmup, config.repeats, &checksum);
            rep.rows.push_back({spec.name(), "chunk", ms, tokens / (ms / 1000.0), checksum});
            if (spec.online_scaled) chunk_ms_total += ms;
        }
        {
            double checksum = 0.0;
            const double ms = median_ms(
                [&] {
                    ForwardResult r =
                        run_recurrent(stream, spec, gates, nullptr, &precond, opts);
                    return vec_checksum(r.outputs) + vec_checksum(r.final_state.s);
                },
                config.warmup, config.repeats, &checksum);
            rep.rows.push_back(
                {spec.name(), "recurrent", ms, tokens / (ms / 1000.0), checksum});
        }
    }
    rep.phase1_fraction = (phase1_ms_total + chunk_ms_total) > 0.0
                              ? phase1_ms_total / (phase1_ms_total + chunk_ms_total)
                              : 0.0;
    return rep;
}

std::string BenchReport::to_csv() const {
    report::Csv csv;
    csv.header = {"variant", "phase", "median_ms", "tokens_per_sec", "checksum"};
    for (const auto& r : rows) {
        csv.add_row({r.variant, r.phase, format_double(r.median_ms),
                     format_double(r.tokens_per_sec), format_double(r.checksum)});
    }
    csv.add_row({"summary", "phase1_fraction", format_double(phase1_fraction), "", ""});
    return csv.to_string();
}

std::string BenchReport::checksums_csv() const {
    report::Csv csv;
    csv.header = {"variant", "phase", "checksum"};
    for (const auto& r : rows) {
        csv.add_row({r.variant, r.phase, format_double(r.checksum)});
    }
    return csv.to_string();
}

}  // namespace osdn
