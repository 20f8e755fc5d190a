#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofnet/constopt.hpp"
#include "ofnet/expr.hpp"
#include "ofnet/opgraph.hpp"
#include "ofnet/search.hpp"

namespace ofnet {

// One benchmark row: name, label expression (text kept verbatim for
// round-tripping), per-variable interval unions.
struct Benchmark {
    std::string name;
    std::string expression;
    ExprPtr label;
    std::vector<std::vector<Interval>> ranges;  // ranges[i] for x_{i+1}

    int n_vars() const { return static_cast<int>(ranges.size()); }
};

struct BenchmarkFileError : std::runtime_error {
    int line;
    BenchmarkFileError(const std::string& msg, int line_no);
};

// File format: one record per line, '#' comments, fields separated by '|':
//   name|expression|range;range;...
// where a range is "(lo,hi)" or a union "(lo,hi and lo,hi)".
std::vector<Benchmark> load_benchmarks(const std::string& path);
std::vector<Benchmark> parse_benchmarks(const std::string& text);
std::string serialize_benchmarks(const std::vector<Benchmark>& bs);

EvalDomain benchmark_domain(const Benchmark& b);

// n uniform points per benchmark within the range unions (guard zones of the
// label respected by construction of the published ranges).
Dataset sample_dataset(const Benchmark& b, int n, std::uint64_t seed);

// ---- pipeline -------------------------------------------------------------

struct PipelineConfig {
    SearchConfig search;
    OptConfig opt;
    int max_candidates = 200;
    double time_budget_s = 60.0;
    // retry with the complex-BFGS objective when the routed strategy fails
    bool complex_retry = true;
};

struct SolveOutcome {
    ExprPtr expr;  // best candidate with constants bound; null if none
    double r2 = -std::numeric_limits<double>::infinity();
    bool has_r2 = false;     // false: no candidate produced any score ("None")
    bool recovered = false;
    Strategy strategy = Strategy::PlainBfgs;
    int candidates = 0;
    double seconds = 0.0;
    std::string detail;  // "ok", "no-candidate", "no-score", or "error:..."
};

// Matrix-driven solve: stream skeletons from m, route each through
// select_strategy, fit constants, keep the best r2; stops early on recovery
// (label non-null) or when the candidate/time budget is exhausted.
SolveOutcome solve_matrix(const AdjacencyMatrix& m, const Dataset& data,
                          const EvalDomain& domain, const Expr* label,
                          const PipelineConfig& cfg, std::uint64_t seed);

// Matrix sources for the harness: the label's own encoding, or a noisy copy
// with k random bit flips.
AdjacencyMatrix oracle_matrix(const Benchmark& b);
AdjacencyMatrix flip_random_bits(const AdjacencyMatrix& m, int k,
                                 std::uint64_t seed);

// A pipeline maps (benchmark, run seed) to one run outcome.
using Pipeline = std::function<SolveOutcome(const Benchmark&, std::uint64_t)>;

// Standard pipeline: matrix from the oracle source (optionally noised),
// dataset of n_samples points, solve_matrix against the label.
Pipeline make_oracle_pipeline(const PipelineConfig& cfg, int n_samples = 1000,
                              int noise_flips = 0);

// ---- evaluation protocol --------------------------------------------------

struct RunOutcome {
    double r2 = -std::numeric_limits<double>::infinity();
    bool has_r2 = false;  // false is recorded as None
    bool recovered = false;
    double seconds = 0.0;
    std::string detail;
};

struct Recorded {
    bool is_none = true;  // no usable score (prints as "None")
    double value = 0.0;
};

// Recording rule: 1 on any recovery; otherwise the mean of the two middle
// order statistics with None ordered below every score.  None results when
// the mean is not finite.
Recorded record_r2(const std::vector<RunOutcome>& outcomes);

struct RunRecord {
    std::string name;
    int vars = 1;
    int length = 0;  // char_length of the label
    std::vector<RunOutcome> outcomes;
    Recorded recorded;
    double recovery_rate = 0.0;
    std::string strategy;  // strategy of the best run
    double mean_time_s = 0.0;
};

// repeats runs with derived seeds; pipeline exceptions are caught and
// recorded as None outcomes.
RunRecord run_benchmark(const Benchmark& b, const Pipeline& pipeline,
                        int repeats = 10, std::uint64_t seed = 0);

struct Metrics {
    double recovery_rate = 0.0;    // mean of per-benchmark recovery rates
    double mean_recorded_r2 = 0.0; // over records with a non-None recorded R²
    std::vector<int> bin_counts;   // n_i
    std::vector<double> bin_means; // x̄_i (mean recovery per length bin)
    std::vector<double> bin_edges; // bins+1 boundaries over char length
    double grand_mean = 0.0;       // x̄
    double variance = 0.0;         // Σ n_i (x̄_i − x̄)² / Σ n_i
};

// bins equal-width length bins over the observed char-length range; empty
// bins carry n_i = 0 and do not contribute.
Metrics aggregate_metrics(const std::vector<RunRecord>& records, int bins = 5);

// CSV columns: name,vars,length,recorded_r2,recovery_rate,strategy,mean_time_s
// (recorded_r2 prints None when unusable).  zero_times replaces wall times
// with 0 for byte-reproducible reports.
std::string report_csv(const std::vector<RunRecord>& records,
                       bool zero_times = false);
std::string report_text(const Metrics& m, const std::vector<RunRecord>& records);
std::string plot_data(const Metrics& m);  // length-bin series

}  // namespace ofnet
