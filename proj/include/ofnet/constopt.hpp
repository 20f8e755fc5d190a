#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "ofnet/expr.hpp"

namespace ofnet {

enum class Strategy { PlainBfgs, IntegerTraversal, ComplexBfgs };
const char* strategy_name(Strategy s);

struct OptConfig {
    int restarts_unit = 10;    // initializations drawn from U(0,1)
    int restarts_wide = 20;    // initializations drawn from U(-10,10)
    int reference_points = 80; // optimization subsample of the dataset
    bool redraw_per_restart = false;  // default: one draw per skeleton
    int max_iters = 200;
    double grad_tol = 1e-10;
    int exp_threshold_univariate = 5;
    int exp_threshold_bivariate = 3;
    int sweep_cap = 625;  // hard cap on integer exponent combinations
    // per-combination restarts inside the integer sweep; with exponents fixed
    // the remaining fit is quasi-linear and needs far fewer restarts
    int sweep_restarts_unit = 4;
    int sweep_restarts_wide = 8;
    // wall-clock cap per fit call; restart/sweep loops stop early and keep the
    // best point found (infinite by default so fits stay fully deterministic)
    double time_budget_s = std::numeric_limits<double>::infinity();
};

struct Sample {
    std::vector<double> x;
    double y = 0.0;
};
using Dataset = std::vector<Sample>;

struct FitResult {
    Bindings constants;  // indexed by slot id
    double r2 = -std::numeric_limits<double>::infinity();
    double objective = std::numeric_limits<double>::infinity();
    Strategy strategy = Strategy::PlainBfgs;
    bool recovered = false;
    bool budget_exceeded = false;  // integer sweep hit the combination cap
};

// objective: f(x) and optionally its gradient (when grad != nullptr)
using ObjFn = std::function<double(const std::vector<double>&, std::vector<double>*)>;

struct BfgsResult {
    std::vector<double> x;
    double f = std::numeric_limits<double>::infinity();
    int iters = 0;
    bool converged = false;
};

// Quasi-Newton minimization with inverse-Hessian updates and a strong Wolfe
// line search (c1=1e-4, c2=0.9).  Accepted steps never increase f; the
// returned point satisfies f <= f(x0).  Non-finite objective values abandon
// the run with the best point so far.
BfgsResult bfgs_minimize(const ObjFn& fg, std::vector<double> x0,
                         const OptConfig& cfg = {});

// 1 - sum|pred-truth|^2 / sum|truth-mean|^2.  With complex_safe the residuals
// use the complex modulus, which keeps the score <= 1; without it the squares
// are taken in complex arithmetic and the real part is returned (the naive
// score that can exceed 1).  Throws std::invalid_argument on degenerate truth.
double r_squared(const std::vector<std::complex<double>>& pred,
                 const std::vector<std::complex<double>>& truth,
                 bool complex_safe = true);
double r_squared(const std::vector<double>& pred, const std::vector<double>& truth);

int exponent_threshold(const OptConfig& cfg, int n_vars);

// integer traversal iff every pow exponent fits under the arity threshold;
// complex optimization above it; plain BFGS without pow slots
Strategy select_strategy(const Expr& skeleton, int n_vars, const OptConfig& cfg = {});

// Multi-restart BFGS over the skeleton's slots: reference points drawn once
// per skeleton without replacement, 10 + 20 restarts with the two init ranges
// (pow exponent slots always U(0,1)), best objective kept, r2 scored on the
// full dataset.  Total failure yields the -inf r2 sentinel.
FitResult fit_constants(const Expr& skeleton, const Dataset& data,
                        const EvalDomain& domain, const OptConfig& cfg,
                        std::uint64_t seed, bool complex_objective = false);

// Exponent slots swept over the integers 2..threshold (Cartesian product,
// capped); the remaining slots fit by BFGS per combination; best r2 kept.
FitResult integer_exponent_sweep(const Expr& skeleton, const Dataset& data,
                                 const EvalDomain& domain, const OptConfig& cfg,
                                 std::uint64_t seed);

FitResult fit_with_strategy(const Expr& skeleton, const Dataset& data,
                            const EvalDomain& domain, const OptConfig& cfg,
                            std::uint64_t seed, Strategy strategy);

// r2 above 0.999999 and numeric equivalence of the bound candidate to the label
bool recovery_check(const FitResult& fit, const Expr& skeleton,
                    const Expr& label, const EvalDomain& domain);

}  // namespace ofnet
