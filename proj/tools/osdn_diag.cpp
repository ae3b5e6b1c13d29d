// Diagnostic CLI: chunk-vs-recurrent equivalence checks, synthetic
// residual-ratio replay, theorem audits, and microbenchmarks.  Reports are
// deterministic given (seed, config); timings are reported but excluded from
// the determinism contract.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "osdn/diag.hpp"
#include "osdn/report.hpp"
#include "osdn/tensor_io.hpp"

namespace {

using nlohmann::json;

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    json j;
    in >> j;
    return j;
}

// config file overrides the default; an explicitly passed flag overrides both
template <typename T>
void apply(const json& cfg, const CLI::App& app, const std::string& flag,
           const std::string& key, T& value) {
    if (app.count("--" + flag) > 0) return;
    if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

osdn::BackboneSpec parse_backbone(const std::string& name) {
    osdn::BackboneSpec spec;
    if (name == "deltanet" || name == "delta_net") {
        spec.backbone = osdn::BackboneSpec::Backbone::delta_net;
    } else if (name == "gdn" || name == "gated_delta_net") {
        spec.backbone = osdn::BackboneSpec::Backbone::gated_delta_net;
    } else if (name == "kda") {
        spec.backbone = osdn::BackboneSpec::Backbone::kda;
    } else {
        throw CLI::ValidationError("--backbone", "unknown backbone " + name);
    }
    return spec;
}

std::string out_path(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / name).string();
}

std::string theory_csv(const osdn::TheoryReport& rep) {
    osdn::report::Csv csv;
    csv.header = {"theorem", "seed", "lhs", "rhs", "verdict"};
    for (const auto& v : rep.verdicts) {
        csv.add_row({v.id, std::to_string(v.seed), osdn::report::format_double(v.lhs),
                     osdn::report::format_double(v.rhs), v.verdict});
    }
    return csv.to_string();
}

json equiv_json(const osdn::EquivReport& rep) {
    json cases = json::array();
    for (const auto& c : rep.cases) {
        cases.push_back({{"variant", c.variant},
                         {"B", c.B},
                         {"T", c.T},
                         {"H", c.H},
                         {"K", c.K},
                         {"V", c.V},
                         {"C", c.C},
                         {"max_output_err", osdn::report::format_double(c.max_output_err)},
                         {"max_state_err", osdn::report::format_double(c.max_state_err)},
                         {"rel_output_err_f32",
                          osdn::report::format_double(c.rel_output_err_f32)},
                         {"rel_state_err_f32", osdn::report::format_double(c.rel_state_err_f32)},
                         {"pass", c.pass}});
    }
    return {{"cases", cases},
            {"worst_f64", osdn::report::format_double(rep.worst_f64)},
            {"worst_f32", osdn::report::format_double(rep.worst_f32)},
            {"all_pass", rep.all_pass}};
}

json replay_json(const osdn::ReplayReport& rep) {
    auto variant = [](const osdn::ReplayVariantStats& s) {
        json bins = json::array();
        for (const auto& b : s.bins) {
            bins.push_back({{"bin", b.bin},
                            {"q_geo", osdn::report::format_double(b.q_geo)},
                            {"n_tokens", b.tokens}});
        }
        json classes = json::array();
        for (double c : s.q_geo_per_class) classes.push_back(osdn::report::format_double(c));
        return json{{"variant", s.variant},
                    {"q_geo_overall", osdn::report::format_double(s.q_geo_overall)},
                    {"q_geo_first_half", osdn::report::format_double(s.q_geo_first_half)},
                    {"q_geo_second_half", osdn::report::format_double(s.q_geo_second_half)},
                    {"bins", bins},
                    {"per_class", classes},
                    {"floored_tokens", s.floored_tokens}};
    };
    return {{"host", variant(rep.host)},
            {"online_scaled", variant(rep.online)},
            {"second_half_reduction", osdn::report::format_double(rep.second_half_reduction)},
            {"online_below_host_second_half", rep.online_below_host_second_half},
            {"repeat_boundary_bin", rep.repeat_boundary_bin}};
}

json bench_json(const osdn::BenchReport& rep) {
    json rows = json::array();
    for (const auto& r : rep.rows) {
        rows.push_back({{"variant", r.variant},
                        {"phase", r.phase},
                        {"median_ms", osdn::report::format_double(r.median_ms)},
                        {"tokens_per_sec", osdn::report::format_double(r.tokens_per_sec)},
                        {"checksum", osdn::report::format_double(r.checksum)}});
    }
    return {{"rows", rows},
            {"phase1_fraction", osdn::report::format_double(rep.phase1_fraction)}};
}

void dump_stream(const osdn::SyntheticStream& synth, const std::string& path) {
    const auto& s = synth.stream;
    std::vector<osdn::io::Tensor> tensors;
    tensors.push_back(osdn::io::tensor_f64(
        "queries", {s.batch, s.length, s.heads, s.key_dim}, s.queries));
    tensors.push_back(
        osdn::io::tensor_f64("keys", {s.batch, s.length, s.heads, s.key_dim}, s.keys));
    tensors.push_back(osdn::io::tensor_f64(
        "values", {s.batch, s.length, s.heads, s.value_dim}, s.values));
    tensors.push_back(osdn::io::tensor_f64("betas", {s.batch, s.length, s.heads}, s.betas));
    std::vector<double> ids(synth.class_ids.begin(), synth.class_ids.end());
    tensors.push_back(osdn::io::tensor_f64("class_ids", {s.length}, ids));
    osdn::io::write_bundle(path, tensors);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fast-weight sequence-kernel diagnostics"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = ".";
    std::string format = "csv";
    std::uint64_t seed = 1;

    // equiv
    auto* equiv = app.add_subcommand("equiv", "chunkwise vs recurrent equivalence grid");
    double tol_f64 = 1e-9, tol_f32 = 7e-3;
    bool no_f32 = false;
    equiv->add_option("--seed", seed);
    equiv->add_option("--config", config_path);
    equiv->add_option("--out", out_dir);
    equiv->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
    equiv->add_option("--tol-f64", tol_f64);
    equiv->add_option("--tol-f32", tol_f32);
    equiv->add_flag("--no-f32", no_f32);

    // replay
    auto* replay = app.add_subcommand("replay", "synthetic residual-ratio replay (q_geo)");
    std::string backbone = "deltanet";
    std::int64_t r_B = 1, r_T = 512, r_H = 1, r_K = 8, r_V = 8, r_C = 64, r_dict = 8,
                 r_repeat = 2;
    double r_eta = 0.003, r_dmin = 0.5, r_dmax = 2.0, r_beta_min = 0.55, r_beta_max = 0.9;
    std::int32_t r_bins = 8;
    bool r_general_dict = false, r_apf = false;
    std::string dump_path;
    replay->add_option("--seed", seed);
    replay->add_option("--config", config_path);
    replay->add_option("--out", out_dir);
    replay->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
    replay->add_option("--backbone", backbone)
        ->check(CLI::IsMember({"deltanet", "gdn", "kda"}));
    replay->add_option("--batch", r_B);
    replay->add_option("--length", r_T);
    replay->add_option("--heads", r_H);
    replay->add_option("--key-dim", r_K);
    replay->add_option("--value-dim", r_V);
    replay->add_option("--chunk-size", r_C);
    replay->add_option("--dict", r_dict);
    replay->add_option("--repeat", r_repeat);
    replay->add_option("--eta", r_eta);
    replay->add_option("--d-min", r_dmin);
    replay->add_option("--d-max", r_dmax);
    replay->add_option("--beta-min", r_beta_min);
    replay->add_option("--beta-max", r_beta_max);
    replay->add_option("--bins", r_bins);
    replay->add_flag("--general-dict", r_general_dict,
                     "normalized Gaussian dictionary instead of orthogonal blocks");
    bool r_typed_values = false;
    replay->add_flag("--typed-values", r_typed_values,
                     "pin values to the key class (no-conflict audit regime)");
    std::string r_retention = "none";
    double r_rho = 0.999, r_epsilon = 1e-6;
    bool r_no_beta_aware = false;
    replay->add_option("--retention", r_retention)
        ->check(CLI::IsMember({"none", "constant", "data_dependent"}));
    replay->add_option("--rho", r_rho, "constant-mode retention value");
    replay->add_option("--epsilon", r_epsilon, "key-norm floor");
    replay->add_flag("--no-beta-aware", r_no_beta_aware,
                     "drive phase 1 with beta_phase1 = 1");
    replay->add_flag("--apf", r_apf, "data-dependent preconditioner retention");
    replay->add_option("--dump-stream", dump_path,
                       "write the generated stream as a tensor bundle");

    // theory
    auto* theory = app.add_subcommand("theory", "theorem audit bundle");
    std::int64_t t_problems = 10, t_horizon = 200, t_streams = 10, t_stream_len = 64,
                 t_stream_k = 8;
    bool t_no_guard = false;
    theory->add_option("--seed", seed);
    theory->add_option("--config", config_path);
    theory->add_option("--out", out_dir);
    theory->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
    theory->add_option("--problems", t_problems);
    theory->add_option("--horizon", t_horizon);
    theory->add_option("--streams", t_streams);
    theory->add_option("--stream-length", t_stream_len);
    theory->add_option("--stream-key-dim", t_stream_k);
    theory->add_flag("--no-monotone-guard", t_no_guard);

    // bench
    auto* bench = app.add_subcommand("bench", "tokens/sec microbenchmark");
    std::int64_t b_B = 1, b_T = 4096, b_H = 2, b_K = 16, b_V = 16, b_C = 64;
    int b_repeats = 5, b_warmup = 1;
    bench->add_option("--seed", seed);
    bench->add_option("--config", config_path);
    bench->add_option("--out", out_dir);
    bench->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));
    bench->add_option("--batch", b_B);
    bench->add_option("--length", b_T);
    bench->add_option("--heads", b_H);
    bench->add_option("--key-dim", b_K);
    bench->add_option("--value-dim", b_V);
    bench->add_option("--chunk-size", b_C);
    bench->add_option("--repeats", b_repeats)->check(CLI::PositiveNumber);
    bench->add_option("--warmup", b_warmup)->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (equiv->parsed()) {
            json cfg = load_config(config_path);
            apply(cfg, *equiv, "seed", "seed", seed);
            apply(cfg, *equiv, "out", "out", out_dir);
            apply(cfg, *equiv, "format", "format", format);
            apply(cfg, *equiv, "tol-f64", "tol_f64", tol_f64);
            apply(cfg, *equiv, "tol-f32", "tol_f32", tol_f32);
            osdn::EquivConfig ec;
            ec.seed = seed;
            ec.tol_f64 = tol_f64;
            ec.tol_f32 = tol_f32;
            ec.include_f32 = !no_f32;
            osdn::EquivReport rep = osdn::run_equiv(ec);
            if (format == "json") {
                osdn::report::write_file(out_path(out_dir, "equiv.json"),
                                         equiv_json(rep).dump(2) + "\n");
            } else {
                osdn::report::write_file(out_path(out_dir, "equiv.csv"), rep.to_csv());
            }
            const osdn::EquivCase* worst = nullptr;
            for (const auto& c : rep.cases) {
                if (!c.pass && (worst == nullptr || c.max_output_err > worst->max_output_err)) {
                    worst = &c;
                }
            }
            std::cout << "equiv: " << rep.cases.size() << " cases, worst f64 err "
                      << osdn::report::format_double(rep.worst_f64) << ", worst f32 rel err "
                      << osdn::report::format_double(rep.worst_f32) << ", "
                      << (rep.all_pass ? "all pass" : "FAILURES") << "\n";
            if (worst != nullptr) {
                std::cout << "worst failing case: " << worst->variant << " B=" << worst->B
                          << " T=" << worst->T << " H=" << worst->H << " K=" << worst->K
                          << " V=" << worst->V << " C=" << worst->C << "\n";
            }
            return rep.all_pass ? 0 : 1;
        }

        if (replay->parsed()) {
            json cfg = load_config(config_path);
            apply(cfg, *replay, "seed", "seed", seed);
            apply(cfg, *replay, "out", "out", out_dir);
            apply(cfg, *replay, "format", "format", format);
            apply(cfg, *replay, "backbone", "backbone", backbone);
            apply(cfg, *replay, "batch", "batch", r_B);
            apply(cfg, *replay, "length", "length", r_T);
            apply(cfg, *replay, "heads", "heads", r_H);
            apply(cfg, *replay, "key-dim", "key_dim", r_K);
            apply(cfg, *replay, "value-dim", "value_dim", r_V);
            apply(cfg, *replay, "chunk-size", "chunk_size", r_C);
            apply(cfg, *replay, "dict", "n_dict", r_dict);
            apply(cfg, *replay, "repeat", "repeat", r_repeat);
            apply(cfg, *replay, "eta", "eta", r_eta);
            apply(cfg, *replay, "d-min", "d_min", r_dmin);
            apply(cfg, *replay, "d-max", "d_max", r_dmax);
            apply(cfg, *replay, "beta-min", "beta_min", r_beta_min);
            apply(cfg, *replay, "beta-max", "beta_max", r_beta_max);
            apply(cfg, *replay, "bins", "bins", r_bins);
            osdn::ReplayConfig rc;
            rc.seed = seed;
            rc.spec = parse_backbone(backbone);
            rc.spec.apf = r_apf;
            rc.batch = r_B;
            rc.length = r_T;
            rc.heads = r_H;
            rc.key_dim = r_K;
            rc.value_dim = r_V;
            rc.chunk_size = r_C;
            rc.n_dict = r_dict;
            rc.repeat = r_repeat;
            rc.orthogonal_dict = !r_general_dict;
            rc.eta = r_eta;
            rc.d_min = r_dmin;
            rc.d_max = r_dmax;
            rc.beta_min = r_beta_min;
            rc.beta_max = r_beta_max;
            rc.position_bins = r_bins;
            rc.typed_values = r_typed_values;
            rc.epsilon = r_epsilon;
            rc.rho = r_rho;
            rc.beta_aware = !r_no_beta_aware;
            if (r_retention == "constant") {
                rc.retention_mode = osdn::PreconditionerState::Retention::constant;
            } else if (r_retention == "data_dependent") {
                rc.retention_mode = osdn::PreconditionerState::Retention::data_dependent;
            }
            if (r_apf) rc.retention_mode = osdn::PreconditionerState::Retention::data_dependent;
            if (!dump_path.empty()) {
                dump_stream(osdn::make_replay_stream(rc), dump_path);
            }
            osdn::ReplayReport rep = osdn::run_replay(rc);
            if (format == "json") {
                osdn::report::write_file(out_path(out_dir, "replay.json"),
                                         replay_json(rep).dump(2) + "\n");
            } else {
                osdn::report::write_file(out_path(out_dir, "replay.csv"), rep.to_csv());
            }
            std::cout << "replay: host q_geo "
                      << osdn::report::format_double(rep.host.q_geo_overall) << " -> "
                      << rep.online.variant << " q_geo "
                      << osdn::report::format_double(rep.online.q_geo_overall)
                      << "; second half " << osdn::report::format_double(rep.host.q_geo_second_half)
                      << " -> "
                      << osdn::report::format_double(rep.online.q_geo_second_half) << "\n";
            return 0;
        }

        if (theory->parsed()) {
            json cfg = load_config(config_path);
            apply(cfg, *theory, "seed", "seed", seed);
            apply(cfg, *theory, "out", "out", out_dir);
            apply(cfg, *theory, "format", "format", format);
            apply(cfg, *theory, "problems", "problems", t_problems);
            apply(cfg, *theory, "horizon", "horizon", t_horizon);
            apply(cfg, *theory, "streams", "streams", t_streams);
            apply(cfg, *theory, "stream-length", "stream_length", t_stream_len);
            apply(cfg, *theory, "stream-key-dim", "stream_key_dim", t_stream_k);
            osdn::TheoryConfig tc;
            tc.seed = seed;
            tc.n_problems = t_problems;
            tc.population_horizon = t_horizon;
            tc.n_streams = t_streams;
            tc.stream_length = t_stream_len;
            tc.stream_key_dim = t_stream_k;
            tc.monotone_guard = !t_no_guard;
            osdn::TheoryReport rep = osdn::run_theory(tc);
            if (format == "csv") {
                osdn::report::write_file(out_path(out_dir, "theory.csv"), theory_csv(rep));
            } else {
                osdn::report::write_file(out_path(out_dir, "theory.json"), rep.to_json());
            }
            int pass = 0, fail = 0, na = 0;
            for (const auto& v : rep.verdicts) {
                if (v.verdict == "PASS") ++pass;
                else if (v.verdict == "FAIL") ++fail;
                else ++na;
            }
            std::cout << "theory: " << pass << " pass, " << fail << " fail, " << na
                      << " n/a\n";
            return rep.all_pass ? 0 : 1;
        }

        if (bench->parsed()) {
            json cfg = load_config(config_path);
            apply(cfg, *bench, "seed", "seed", seed);
            apply(cfg, *bench, "out", "out", out_dir);
            apply(cfg, *bench, "format", "format", format);
            apply(cfg, *bench, "batch", "batch", b_B);
            apply(cfg, *bench, "length", "length", b_T);
            apply(cfg, *bench, "heads", "heads", b_H);
            apply(cfg, *bench, "key-dim", "key_dim", b_K);
            apply(cfg, *bench, "value-dim", "value_dim", b_V);
            apply(cfg, *bench, "chunk-size", "chunk_size", b_C);
            apply(cfg, *bench, "repeats", "repeats", b_repeats);
            apply(cfg, *bench, "warmup", "warmup", b_warmup);
            osdn::BenchConfig bc;
            bc.seed = seed;
            bc.batch = b_B;
            bc.length = b_T;
            bc.heads = b_H;
            bc.key_dim = b_K;
            bc.value_dim = b_V;
            bc.chunk_size = b_C;
            bc.repeats = b_repeats;
            bc.warmup = b_warmup;
            osdn::BenchReport rep = osdn::run_bench(bc);
            if (format == "json") {
                osdn::report::write_file(out_path(out_dir, "bench.json"),
                                         bench_json(rep).dump(2) + "\n");
            } else {
                osdn::report::write_file(out_path(out_dir, "bench.csv"), rep.to_csv());
            }
            // timing-free payload for reproducibility checks
            osdn::report::write_file(out_path(out_dir, "bench_checksums.csv"),
                                     rep.checksums_csv());
            std::cout << "bench: phase-1 share of forward "
                      << osdn::report::format_double(100.0 * rep.phase1_fraction) << "%\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
