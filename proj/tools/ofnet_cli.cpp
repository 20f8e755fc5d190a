// Command-line front end: expression encoding, matrix-driven solving, the
// benchmark harness, toy training, and gradient checks.  Every command is
// deterministic given --seed; artifacts land under --out with a manifest.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ofnet/bench.hpp"
#include "ofnet/net.hpp"

namespace fs = std::filesystem;
using namespace ofnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNoResult = 1;
constexpr int kExitUsage = 2;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

struct Output {
    std::string dir;  // empty: stdout only

    void write(const std::string& name, const std::string& content) const {
        if (dir.empty()) return;
        fs::create_directories(dir);
        std::ofstream f(dir + "/" + name, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + dir + "/" + name);
        f << content;
    }

    void manifest(const std::string& command, std::uint64_t seed,
                  const std::string& config) const {
        std::ostringstream m;
        m << "command: " << command << "\n";
        m << "seed: " << seed << "\n";
        m << "config_hash: " << std::hex << fnv1a(config) << std::dec << "\n";
        m << "config:\n" << config;
        write("manifest.txt", m.str());
    }
};

std::string describe(const PipelineConfig& cfg, int samples,
                     const std::string& source, int repeats) {
    std::ostringstream s;
    s << "  matrix_source=" << source << "\n  samples=" << samples
      << "\n  repeats=" << repeats
      << "\n  max_candidates=" << cfg.max_candidates
      << "\n  time_budget_s=" << cfg.time_budget_s
      << "\n  strict=" << cfg.search.strict
      << "\n  restarts=" << cfg.opt.restarts_unit << "+"
      << cfg.opt.restarts_wide << "\n";
    return s.str();
}

// matrix-source selector: oracle | noisy:<k> | model:<checkpoint>
struct MatrixSource {
    std::string spec = "oracle";
    int noise_flips = 0;
    std::string model_path;

    void parse_spec() {
        if (spec == "oracle") return;
        if (spec.rfind("noisy:", 0) == 0) {
            noise_flips = std::stoi(spec.substr(6));
            if (noise_flips < 1)
                throw CLI::ValidationError("--matrix-source",
                                           "noisy:<k> needs k >= 1");
            return;
        }
        if (spec.rfind("model:", 0) == 0) {
            model_path = spec.substr(6);
            if (model_path.empty())
                throw CLI::ValidationError("--matrix-source",
                                           "model:<path> needs a path");
            return;
        }
        throw CLI::ValidationError("--matrix-source",
                                   "expected oracle | noisy:<k> | model:<path>");
    }
};

AdjacencyMatrix model_matrix(const Model& model, const Benchmark& b,
                             const Dataset& data) {
    std::vector<std::pair<double, double>> pos;
    std::vector<double> vals;
    std::size_t n = std::min<std::size_t>(data.size(), 256);
    for (std::size_t i = 0; i < n; ++i) {
        double x2 = b.n_vars() > 1 ? data[i].x[1] : 0.0;
        pos.push_back({data[i].x[0], x2});
        vals.push_back(data[i].y);
    }
    auto target = invert_feature(model, numerical_decode(model, pos, vals));
    return binarize(judge_adjacency(model, basic_features(model), target));
}

Pipeline build_pipeline(const PipelineConfig& cfg, int samples,
                        const MatrixSource& src) {
    if (src.model_path.empty())
        return make_oracle_pipeline(cfg, samples, src.noise_flips);
    auto model = std::make_shared<Model>(load_checkpoint(src.model_path));
    return [cfg, samples, model](const Benchmark& b, std::uint64_t seed) {
        Dataset data = sample_dataset(b, samples, seed ^ 0xB5297A4D3F84D5B3ULL);
        AdjacencyMatrix m = model_matrix(*model, b, data);
        return solve_matrix(m, data, benchmark_domain(b), b.label.get(), cfg,
                            seed);
    };
}

Benchmark benchmark_from_expr(const std::string& text, double lo, double hi) {
    Benchmark b;
    b.name = "expr";
    b.expression = text;
    b.label = parse(text);
    int nv = std::max(1, num_vars(*b.label));
    for (int i = 0; i < nv; ++i) b.ranges.push_back({Interval{lo, hi}});
    return b;
}

Benchmark find_benchmark(const std::string& file, const std::string& name) {
    for (auto& b : load_benchmarks(file))
        if (b.name == name) return b;
    throw std::runtime_error("benchmark '" + name + "' not found in " + file);
}

std::string outcome_line(int run, const SolveOutcome& s) {
    std::ostringstream o;
    o << "run " << run << ": ";
    if (s.has_r2) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.8f", s.r2);
        o << "r2=" << buf;
    } else {
        o << "r2=None";
    }
    o << " recovered=" << (s.recovered ? "yes" : "no")
      << " strategy=" << strategy_name(s.strategy)
      << " candidates=" << s.candidates;
    if (s.expr) o << " expr=" << serialize(*s.expr);
    if (!s.recovered && !s.has_r2) o << " detail=" << s.detail;
    return o.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OF-Net symbolic regression engine"};
    app.require_subcommand(1);
    argv = app.ensure_utf8(argv);

    std::uint64_t seed = 0;
    Output out;
    int jobs = 1;

    auto add_common = [&](CLI::App* cmd, bool need_seed) {
        auto* s = cmd->add_option("--seed", seed, "RNG seed");
        if (need_seed) s->required();
        cmd->add_option("--out", out.dir, "output directory for artifacts");
        cmd->add_option("--jobs", jobs, "worker count (output order is fixed)");
        cmd->set_config("--config");
    };

    // ---- encode ----
    std::string encode_text;
    auto* enc = app.add_subcommand("encode", "print the operator-graph matrix");
    enc->add_option("expression", encode_text, "expression text")->required();
    add_common(enc, false);

    // ---- solve ----
    std::string solve_expr, bench_file, bench_name, matrix_file;
    double range_lo = -1.0, range_hi = 1.0;
    int repeats = 1, samples = 1000;
    PipelineConfig pcfg;
    MatrixSource src;
    auto* sol = app.add_subcommand("solve", "matrix-driven expression recovery");
    sol->add_option("--expr", solve_expr, "label expression text");
    sol->add_option("--benchmark-file", bench_file, "benchmark data file");
    sol->add_option("--name", bench_name, "benchmark name inside the file");
    sol->add_option("--matrix", matrix_file, "adjacency matrix file (overrides source)");
    sol->add_option("--matrix-source", src.spec, "oracle | noisy:<k> | model:<path>");
    sol->add_option("--range-lo", range_lo, "sampling range low (with --expr)");
    sol->add_option("--range-hi", range_hi, "sampling range high (with --expr)");
    sol->add_option("--repeats", repeats, "seeded repeats");
    sol->add_option("--samples", samples, "dataset size");
    sol->add_option("--max-candidates", pcfg.max_candidates, "search budget");
    sol->add_option("--time-budget", pcfg.time_budget_s, "seconds per run");
    sol->add_flag("--strict", pcfg.search.strict, "strict search mode");
    add_common(sol, true);

    // ---- bench ----
    int bench_limit = 0;
    bool zero_times = false;
    auto* ben = app.add_subcommand("bench", "run the evaluation protocol");
    ben->add_option("--benchmark-file", bench_file, "benchmark data file")
        ->required();
    ben->add_option("--matrix-source", src.spec, "oracle | noisy:<k> | model:<path>");
    ben->add_option("--repeats", repeats, "runs per benchmark")->default_val(10);
    ben->add_option("--samples", samples, "dataset size");
    ben->add_option("--max-candidates", pcfg.max_candidates, "search budget");
    ben->add_option("--time-budget", pcfg.time_budget_s, "seconds per run");
    ben->add_option("--limit", bench_limit, "only the first N benchmarks");
    ben->add_flag("--zero-times", zero_times,
                  "report 0 in the time column (byte-reproducible reports)");
    add_common(ben, true);

    // ---- train ----
    HyperParams hp;
    auto* trn = app.add_subcommand("train", "toy training of the neural stack");
    trn->add_option("--forward-steps", hp.forward_steps, "DeepONet steps");
    trn->add_option("--backward-steps", hp.backward_steps, "decoder steps");
    trn->add_option("--judgment-steps", hp.judgment_steps, "judgment steps");
    trn->add_option("--corpus", hp.corpus_size, "judgment corpus size");
    trn->add_option("--lr", hp.lr, "learning rate");
    trn->add_flag("--poly-only", hp.poly_only, "cubic-only input functions");
    add_common(trn, true);

    // ---- gradcheck ----
    std::string selector = "all", checkpoint;
    auto* grd = app.add_subcommand("gradcheck", "finite-difference gradient check");
    grd->add_option("--selector", selector,
                    "trunk|encoder|decoder|setenc|inverse|judge|all");
    grd->add_option("--checkpoint", checkpoint, "check a trained checkpoint");
    add_common(grd, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*enc) {
            AdjacencyMatrix m = encode_expression(*parse(encode_text));
            std::string text = matrix_to_text(m);
            std::cout << text << "\n";
            out.write("matrix.json", text + "\n");
            out.manifest("encode", seed, "  expression=" + encode_text + "\n");
            return kExitOk;
        }

        if (*sol) {
            src.parse_spec();
            Benchmark b;
            if (!bench_name.empty()) {
                if (bench_file.empty())
                    throw CLI::ValidationError("--name", "needs --benchmark-file");
                b = find_benchmark(bench_file, bench_name);
            } else if (!solve_expr.empty()) {
                b = benchmark_from_expr(solve_expr, range_lo, range_hi);
            } else {
                throw CLI::ValidationError("solve", "need --expr or --name");
            }
            Pipeline pipe;
            if (!matrix_file.empty()) {
                std::ifstream mf(matrix_file);
                if (!mf) throw std::runtime_error("cannot open " + matrix_file);
                std::ostringstream ss;
                ss << mf.rdbuf();
                AdjacencyMatrix m = matrix_from_text(ss.str());
                PipelineConfig cfg = pcfg;
                int n = samples;
                pipe = [cfg, n, m](const Benchmark& bb, std::uint64_t s) {
                    Dataset data = sample_dataset(bb, n, s ^ 0xB5297A4D3F84D5B3ULL);
                    return solve_matrix(m, data, benchmark_domain(bb),
                                        bb.label.get(), cfg, s);
                };
            } else {
                pipe = build_pipeline(pcfg, samples, src);
            }
            bool any_recovered = false, any_result = false;
            std::string report;
            for (int i = 0; i < repeats; ++i) {
                SolveOutcome s =
                    pipe(b, seed ^ (0x9E3779B97F4A7C15ULL * (i + 1)));
                std::string line = outcome_line(i, s);
                std::cout << line << "\n";
                report += line + "\n";
                any_recovered = any_recovered || s.recovered;
                any_result = any_result || s.expr != nullptr;
            }
            out.write("solve.txt", report);
            out.manifest("solve", seed,
                         "  target=" + b.name + "\n" +
                             describe(pcfg, samples, src.spec, repeats));
            if (any_recovered) return kExitOk;
            std::cout << (any_result ? "no recovery\n" : "no candidates\n");
            return kExitNoResult;
        }

        if (*ben) {
            src.parse_spec();
            auto bs = load_benchmarks(bench_file);
            if (bench_limit > 0 && bench_limit < static_cast<int>(bs.size()))
                bs.resize(bench_limit);
            Pipeline pipe = build_pipeline(pcfg, samples, src);
            std::vector<RunRecord> records;
            for (std::size_t i = 0; i < bs.size(); ++i) {
                records.push_back(run_benchmark(
                    bs[i], pipe, repeats,
                    seed ^ (0xD1B54A32D192ED03ULL * (i + 1))));
                std::cout << records.back().name << ": recovery "
                          << records.back().recovery_rate << "\n";
            }
            Metrics m = aggregate_metrics(records);
            std::string csv = report_csv(records, zero_times);
            std::string text = report_text(m, records);
            std::cout << text;
            out.write("report.csv", csv);
            out.write("report.txt", text);
            out.write("plot.tsv", plot_data(m));
            out.manifest("bench", seed,
                         "  file=" + bench_file + "\n" +
                             describe(pcfg, samples, src.spec, repeats));
            return kExitOk;
        }

        if (*trn) {
            if (out.dir.empty())
                throw CLI::ValidationError("train", "needs --out for the checkpoint");
            hp.seed = seed;
            Model m = make_model(hp);
            std::vector<Kind> kinds;
            for (int k = 1; k <= kNumKinds; ++k)
                kinds.push_back(static_cast<Kind>(k));
            auto fr = train_forward(m, kinds, hp.forward_steps, seed ^ 1);
            auto br = train_backward(m, kinds, hp.backward_steps, seed ^ 2);
            auto corpus = random_corpus(hp.corpus_size, seed ^ 3);
            auto jr = train_judgment(m, corpus, hp.judgment_steps, seed ^ 4);
            save_checkpoint(m, out.dir + "/checkpoint.bin");
            std::ostringstream losses;
            losses << "phase,step_index,loss\n";
            auto dump = [&losses](const char* phase, const std::vector<double>& c) {
                for (std::size_t i = 0; i < c.size(); ++i)
                    losses << phase << "," << i << "," << c[i] << "\n";
            };
            dump("forward", fr.loss_curve);
            dump("backward", br.loss_curve);
            dump("judgment", jr.loss_curve);
            out.write("losses.csv", losses.str());
            std::ostringstream cfg;
            cfg << "  forward_steps=" << hp.forward_steps
                << "\n  backward_steps=" << hp.backward_steps
                << "\n  judgment_steps=" << hp.judgment_steps
                << "\n  corpus=" << hp.corpus_size << "\n  lr=" << hp.lr
                << "\n  poly_only=" << hp.poly_only << "\n";
            out.manifest("train", seed, cfg.str());
            std::cout << "forward loss " << fr.final_loss << ", backward loss "
                      << br.final_loss << ", judgment loss " << jr.final_loss
                      << ", edge accuracy " << jr.edge_accuracy << "\n";
            return kExitOk;
        }

        if (*grd) {
            HyperParams ghp;
            ghp.seed = seed;
            Model m = checkpoint.empty() ? make_model(ghp)
                                         : load_checkpoint(checkpoint);
            std::vector<std::string> sels;
            if (selector == "all")
                sels = {"trunk", "encoder", "decoder", "setenc", "inverse",
                        "judge"};
            else
                sels = {selector};
            bool ok = true;
            std::string report;
            for (const auto& s : sels) {
                double err = gradient_check(m, s, seed ^ fnv1a(s));
                char buf[64];
                std::snprintf(buf, sizeof buf, "%-8s max rel err %.3e\n",
                              s.c_str(), err);
                report += buf;
                ok = ok && err < 1e-4;
            }
            std::cout << report << (ok ? "PASS" : "FAIL") << "\n";
            out.write("gradcheck.txt", report);
            out.manifest("gradcheck", seed, "  selector=" + selector + "\n");
            return ok ? kExitOk : kExitNoResult;
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ParseError& e) {
        std::cerr << "syntax error: " << e.what() << " (offset " << e.offset
                  << ")\n";
        return kExitUsage;
    } catch (const BenchmarkFileError& e) {
        std::cerr << "benchmark file error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNoResult;
    }
    return kExitUsage;
}
