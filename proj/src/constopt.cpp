#include "ofnet/constopt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace ofnet {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::PlainBfgs: return "plain-bfgs";
        case Strategy::IntegerTraversal: return "integer-traversal";
        case Strategy::ComplexBfgs: return "complex-bfgs";
    }
    return "?";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double inf_norm(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

bool finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

constexpr double kC1 = 1e-4;
constexpr double kC2 = 0.9;

struct LsPoint {
    double a, f, d;  // step, value, directional derivative
    std::vector<double> g;
};

// phi(a) = f(x + a*p) evaluated through the objective
struct Phi {
    const ObjFn& fg;
    const std::vector<double>& x;
    const std::vector<double>& p;
    std::vector<double> xt, gt;

    LsPoint eval(double a) {
        xt.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xt[i] = x[i] + a * p[i];
        gt.assign(x.size(), 0.0);
        double f = fg(xt, &gt);
        double d = std::isfinite(f) && finite(gt) ? dot(gt, p)
                                                  : std::numeric_limits<double>::quiet_NaN();
        return {a, f, d, gt};
    }
};

// Strong Wolfe line search (bracket + bisection zoom).
bool line_search(Phi& phi, double f0, double d0, LsPoint& out) {
    auto wolfe_ok = [&](const LsPoint& p) {
        return p.f <= f0 + kC1 * p.a * d0 && std::abs(p.d) <= -kC2 * d0;
    };
    auto zoom = [&](LsPoint lo, LsPoint hi) {
        for (int i = 0; i < 30; ++i) {
            LsPoint mid = phi.eval(0.5 * (lo.a + hi.a));
            if (!std::isfinite(mid.f)) {
                hi = mid;
                continue;
            }
            if (mid.f > f0 + kC1 * mid.a * d0 || mid.f >= lo.f) {
                hi = mid;
            } else {
                if (wolfe_ok(mid)) {
                    out = mid;
                    return true;
                }
                if (mid.d * (hi.a - lo.a) >= 0) hi = lo;
                lo = mid;
            }
            if (std::abs(hi.a - lo.a) < 1e-16) break;
        }
        if (std::isfinite(lo.f) && lo.f < f0 && lo.a > 0) {
            out = lo;
            return true;
        }
        return false;
    };

    LsPoint prev{0.0, f0, d0, {}};
    double a = 1.0;
    for (int i = 0; i < 20; ++i) {
        LsPoint cur = phi.eval(a);
        if (!std::isfinite(cur.f) || !std::isfinite(cur.d)) {
            // step into a guarded region: shrink toward the last good point
            a = 0.5 * (prev.a + a);
            if (a < 1e-16) return false;
            continue;
        }
        if (cur.f > f0 + kC1 * a * d0 || (i > 0 && cur.f >= prev.f))
            return zoom(prev, cur);
        if (wolfe_ok(cur)) {
            out = cur;
            return true;
        }
        if (cur.d >= 0) return zoom(cur, prev);
        prev = cur;
        a = std::min(2.0 * a, 1e3);
    }
    if (prev.a > 0 && prev.f < f0) {
        out = prev;
        return true;
    }
    return false;
}

}  // namespace

BfgsResult bfgs_minimize(const ObjFn& fg, std::vector<double> x0, const OptConfig& cfg) {
    const int n = static_cast<int>(x0.size());
    BfgsResult res;
    res.x = x0;
    if (n == 0) {
        res.f = fg(x0, nullptr);
        res.converged = std::isfinite(res.f);
        return res;
    }
    std::vector<double> g(n, 0.0);
    double f = fg(x0, &g);
    if (!std::isfinite(f) || !finite(g)) {
        res.f = f;
        return res;  // discarded restart: objective not finite at x0
    }
    res.f = f;

    // inverse Hessian approximation, row-major
    std::vector<double> H(static_cast<std::size_t>(n) * n, 0.0);
    auto reset_H = [&] {
        std::fill(H.begin(), H.end(), 0.0);
        for (int i = 0; i < n; ++i) H[static_cast<std::size_t>(i) * n + i] = 1.0;
    };
    reset_H();

    std::vector<double> x = std::move(x0), p(n), s(n), y(n), Hy(n);
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        if (inf_norm(g) < cfg.grad_tol) {
            res.converged = true;
            break;
        }
        for (int i = 0; i < n; ++i) {
            double v = 0.0;
            for (int j = 0; j < n; ++j) v += H[static_cast<std::size_t>(i) * n + j] * g[j];
            p[i] = -v;
        }
        double d0 = dot(p, g);
        if (!(d0 < 0)) {  // not a descent direction: restart from steepest descent
            reset_H();
            for (int i = 0; i < n; ++i) p[i] = -g[i];
            d0 = dot(p, g);
            if (!(d0 < 0)) break;
        }
        Phi phi{fg, x, p, {}, {}};
        LsPoint step;
        if (!line_search(phi, f, d0, step)) break;
        res.iters = iter + 1;

        for (int i = 0; i < n; ++i) {
            s[i] = step.a * p[i];
            y[i] = step.g[i] - g[i];
            x[i] += s[i];
        }
        double sy = dot(s, y);
        double sn = std::sqrt(dot(s, s)), yn = std::sqrt(dot(y, y));
        if (sy > 1e-12 * sn * yn) {
            // H <- (I - r s y^T) H (I - r y s^T) + r s s^T
            double r = 1.0 / sy;
            for (int i = 0; i < n; ++i) {
                double v = 0.0;
                for (int j = 0; j < n; ++j) v += H[static_cast<std::size_t>(i) * n + j] * y[j];
                Hy[i] = v;
            }
            double yHy = dot(y, Hy);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j)
                    H[static_cast<std::size_t>(i) * n + j] +=
                        -r * (Hy[i] * s[j] + s[i] * Hy[j]) +
                        r * (1.0 + r * yHy) * s[i] * s[j];
        } else {
            reset_H();
        }
        f = step.f;
        g = step.g;
        if (f < res.f) {
            res.f = f;
            res.x = x;
        }
    }
    if (f <= res.f) {
        res.f = f;
        res.x = x;
    }
    return res;
}

double r_squared(const std::vector<std::complex<double>>& pred,
                 const std::vector<std::complex<double>>& truth, bool complex_safe) {
    if (pred.size() != truth.size() || truth.size() < 2)
        throw std::invalid_argument("r_squared: need equal lengths >= 2");
    std::complex<double> mean(0.0, 0.0);
    for (const auto& t : truth) mean += t;
    mean /= static_cast<double>(truth.size());
    if (complex_safe) {
        double ssr = 0.0, sst = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            ssr += std::norm(pred[i] - truth[i]);
            sst += std::norm(truth[i] - mean);
        }
        if (sst <= 0.0)
            throw std::invalid_argument("r_squared: degenerate truth variance");
        return 1.0 - ssr / sst;
    }
    std::complex<double> ssr(0.0, 0.0), sst(0.0, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        auto r = pred[i] - truth[i], d = truth[i] - mean;
        ssr += r * r;
        sst += d * d;
    }
    if (sst == std::complex<double>(0.0, 0.0))
        throw std::invalid_argument("r_squared: degenerate truth variance");
    return (1.0 - ssr / sst).real();
}

double r_squared(const std::vector<double>& pred, const std::vector<double>& truth) {
    std::vector<std::complex<double>> p(pred.begin(), pred.end()),
        t(truth.begin(), truth.end());
    return r_squared(p, t, true);
}

int exponent_threshold(const OptConfig& cfg, int n_vars) {
    return n_vars <= 1 ? cfg.exp_threshold_univariate : cfg.exp_threshold_bivariate;
}

Strategy select_strategy(const Expr& skeleton, int n_vars, const OptConfig& cfg) {
    std::vector<int> exps = exponent_slots(skeleton);
    bool has_pow_const = false;
    double max_exp = 0.0;
    std::function<void(const Expr&)> walk = [&](const Expr& e) {
        if (e.tag != Expr::Tag::Op) return;
        if ((e.kind == Kind::PowHi || e.kind == Kind::PowLo) && e.param &&
            !e.param->is_slot) {
            has_pow_const = true;
            max_exp = std::max(max_exp, std::abs(e.param->value));
        }
        for (const auto& k : e.kids) walk(*k);
    };
    walk(skeleton);
    if (exps.empty() && !has_pow_const) return Strategy::PlainBfgs;
    int t = exponent_threshold(cfg, n_vars);
    if (!exps.empty()) return Strategy::IntegerTraversal;  // sweep covers 2..t
    return max_exp <= t ? Strategy::IntegerTraversal : Strategy::ComplexBfgs;
}

namespace {

// MSE over the reference points, with analytic slot gradients and a central
// finite-difference fallback near domain guards.
struct SkeletonObjective {
    const Expr& e;
    const Dataset* ref;
    const EvalDomain& dom;
    const std::vector<int>& free_slots;  // slots being optimized
    Bindings base;                       // fixed slot values (others overwritten)
    bool complex_mode;
    int n_slots;

    double value_only(const std::vector<double>& x, Bindings& full) const {
        for (std::size_t i = 0; i < free_slots.size(); ++i)
            full[free_slots[i]] = x[i];
        double sse = 0.0;
        for (const auto& p : *ref) {
            try {
                if (complex_mode) {
                    std::vector<std::complex<double>> cv(p.x.begin(), p.x.end());
                    auto v = evaluate_complex(e, cv, full);
                    sse += std::norm(v - std::complex<double>(p.y, 0.0));
                } else {
                    double v = evaluate(e, p.x, full, dom);
                    sse += (v - p.y) * (v - p.y);
                }
            } catch (const EvalError&) {
                return kInf;
            }
        }
        return sse / static_cast<double>(ref->size());
    }

    double operator()(const std::vector<double>& x, std::vector<double>* grad) const {
        Bindings full = base;
        if (!grad) return value_only(x, full);
        for (std::size_t i = 0; i < free_slots.size(); ++i)
            full[free_slots[i]] = x[i];
        grad->assign(x.size(), 0.0);
        double sse = 0.0;
        bool need_fd = false;
        for (const auto& p : *ref) {
            try {
                if (complex_mode) {
                    std::vector<std::complex<double>> cv(p.x.begin(), p.x.end());
                    auto d = differentiate_constants_complex(e, cv, full, n_slots);
                    auto r = d.value - std::complex<double>(p.y, 0.0);
                    sse += std::norm(r);
                    for (std::size_t i = 0; i < free_slots.size(); ++i)
                        (*grad)[i] +=
                            2.0 * (std::conj(r) * d.grad[free_slots[i]]).real();
                } else {
                    auto d = differentiate_constants(e, p.x, full, dom, n_slots);
                    double r = d.value - p.y;
                    sse += r * r;
                    if (d.fallback_requested) need_fd = true;
                    for (std::size_t i = 0; i < free_slots.size(); ++i)
                        (*grad)[i] += 2.0 * r * d.grad[free_slots[i]];
                }
            } catch (const EvalError&) {
                return kInf;
            }
        }
        double n = static_cast<double>(ref->size());
        for (double& gi : *grad) gi /= n;
        if (need_fd) {
            const double h = 1e-6;
            std::vector<double> xt = x;
            for (std::size_t i = 0; i < x.size(); ++i) {
                xt[i] = x[i] + h;
                double fp = value_only(xt, full);
                xt[i] = x[i] - h;
                double fm = value_only(xt, full);
                xt[i] = x[i];
                if (std::isfinite(fp) && std::isfinite(fm))
                    (*grad)[i] = (fp - fm) / (2.0 * h);
            }
        }
        return sse / n;
    }
};

std::mt19937_64 restart_rng(std::uint64_t seed, int restart) {
    // counter-derived substream: identical per restart index regardless of
    // how many restarts run or in what order
    return std::mt19937_64(seed ^ (0x9E3779B97F4A7C15ULL *
                                   (static_cast<std::uint64_t>(restart) + 1)));
}

Dataset draw_reference(const Dataset& data, int count, std::uint64_t seed) {
    if (static_cast<int>(data.size()) <= count) return data;
    Dataset ref;
    std::mt19937_64 rng(seed);
    std::sample(data.begin(), data.end(), std::back_inserter(ref), count, rng);
    return ref;
}

double score_r2(const Expr& e, const Bindings& consts, const Dataset& data,
                const EvalDomain& dom, bool complex_mode) {
    std::vector<std::complex<double>> pred, truth;
    for (const auto& p : data) {
        try {
            if (complex_mode) {
                std::vector<std::complex<double>> cv(p.x.begin(), p.x.end());
                pred.push_back(evaluate_complex(e, cv, consts));
            } else {
                pred.push_back(evaluate(e, p.x, consts, dom));
            }
        } catch (const EvalError&) {
            continue;  // guarded point: skipped in scoring
        }
        truth.emplace_back(p.y, 0.0);
    }
    if (truth.size() < 2) return -kInf;
    try {
        return r_squared(pred, truth, true);
    } catch (const std::invalid_argument&) {
        return -kInf;
    }
}

FitResult fit_masked(const Expr& skeleton, const Dataset& data,
                     const EvalDomain& domain, const OptConfig& cfg,
                     std::uint64_t seed, const Bindings& fixed,
                     const std::vector<char>& is_fixed, bool complex_objective) {
    const int n_slots = num_slots(skeleton);
    FitResult out;
    out.strategy = complex_objective ? Strategy::ComplexBfgs : Strategy::PlainBfgs;
    out.constants.assign(n_slots, 0.0);
    for (int i = 0; i < n_slots; ++i)
        if (i < static_cast<int>(is_fixed.size()) && is_fixed[i])
            out.constants[i] = fixed[i];

    std::vector<int> free_slots;
    for (int i = 0; i < n_slots; ++i)
        if (i >= static_cast<int>(is_fixed.size()) || !is_fixed[i])
            free_slots.push_back(i);

    std::set<int> exp_slots;
    for (int s : exponent_slots(skeleton)) exp_slots.insert(s);

    Dataset ref = draw_reference(data, cfg.reference_points, seed);
    SkeletonObjective obj{skeleton,      &ref,              domain, free_slots,
                          out.constants, complex_objective, n_slots};

    if (free_slots.empty()) {
        Bindings full = out.constants;
        out.objective = obj.value_only({}, full);
        out.r2 = score_r2(skeleton, out.constants, data, domain, complex_objective);
        return out;
    }

    const auto start = std::chrono::steady_clock::now();
    auto over_time = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             start)
                   .count() > cfg.time_budget_s;
    };
    const int total = cfg.restarts_unit + cfg.restarts_wide;
    std::vector<double> best_x;
    double best_f = kInf;
    for (int r = 0; r < total; ++r) {
        if (r > 0 && over_time()) break;
        auto rng = restart_rng(seed, r);
        std::uniform_real_distribution<double> unit(0.0, 1.0), wide(-10.0, 10.0);
        std::vector<double> x0(free_slots.size());
        for (std::size_t i = 0; i < free_slots.size(); ++i)
            x0[i] = (r < cfg.restarts_unit || exp_slots.count(free_slots[i]))
                        ? unit(rng)
                        : wide(rng);
        Dataset ref_r;
        if (cfg.redraw_per_restart) {
            ref_r = draw_reference(data, cfg.reference_points,
                                   seed ^ (0xD1B54A32D192ED03ULL * (r + 1)));
            obj.ref = &ref_r;
        }
        auto br = bfgs_minimize([&obj](const std::vector<double>& x,
                                       std::vector<double>* g) { return obj(x, g); },
                                x0, cfg);
        if (std::isfinite(br.f) && br.f < best_f) {
            best_f = br.f;
            best_x = br.x;
        }
        if (best_f < 1e-18) break;  // interpolating fit; restarts cannot improve
    }
    if (!std::isfinite(best_f)) return out;  // total failure: r2 = -inf sentinel

    for (std::size_t i = 0; i < free_slots.size(); ++i)
        out.constants[free_slots[i]] = best_x[i];
    out.objective = best_f;
    out.r2 = score_r2(skeleton, out.constants, data, domain, complex_objective);
    return out;
}

}  // namespace

FitResult fit_constants(const Expr& skeleton, const Dataset& data,
                        const EvalDomain& domain, const OptConfig& cfg,
                        std::uint64_t seed, bool complex_objective) {
    return fit_masked(skeleton, data, domain, cfg, seed, {}, {}, complex_objective);
}

FitResult integer_exponent_sweep(const Expr& skeleton, const Dataset& data,
                                 const EvalDomain& domain, const OptConfig& cfg,
                                 std::uint64_t seed) {
    std::vector<int> exps = exponent_slots(skeleton);
    if (exps.empty()) {
        FitResult r = fit_constants(skeleton, data, domain, cfg, seed, false);
        r.strategy = Strategy::IntegerTraversal;
        return r;
    }
    const int n_slots = num_slots(skeleton);
    const int t = exponent_threshold(cfg, domain.n_vars());
    const int radix = std::max(1, t - 1);  // integers 2..t per slot

    long long combos = 1;
    for (std::size_t i = 0; i < exps.size() && combos <= cfg.sweep_cap; ++i)
        combos *= radix;
    bool over_budget = combos > cfg.sweep_cap;

    Bindings fixed(n_slots, 0.0);
    std::vector<char> is_fixed(n_slots, 0);
    for (int s : exps) is_fixed[s] = 1;

    FitResult best;
    best.strategy = Strategy::IntegerTraversal;
    best.budget_exceeded = over_budget;
    std::vector<int> digit(exps.size(), 0);
    int tried = 0;
    const auto start = std::chrono::steady_clock::now();
    while (true) {
        if (tried >= cfg.sweep_cap) break;
        double left =
            cfg.time_budget_s -
            std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                          start)
                .count();
        if (tried > 0 && left <= 0.0) {
            best.budget_exceeded = true;
            break;
        }
        ++tried;
        for (std::size_t i = 0; i < exps.size(); ++i)
            fixed[exps[i]] = static_cast<double>(2 + digit[i]);
        OptConfig inner = cfg;
        inner.time_budget_s = left;
        inner.restarts_unit = cfg.sweep_restarts_unit;
        inner.restarts_wide = cfg.sweep_restarts_wide;
        FitResult r = fit_masked(skeleton, data, domain, inner, seed, fixed,
                                 is_fixed, false);
        if (r.r2 > best.r2 ||
            (r.r2 == best.r2 && r.objective < best.objective)) {
            r.strategy = Strategy::IntegerTraversal;
            r.budget_exceeded = over_budget;
            best = std::move(r);
        }
        if (best.r2 > 0.999999) break;  // past the recovery bar; stop sweeping
        // next combination (mixed radix)
        std::size_t i = 0;
        for (; i < digit.size(); ++i) {
            if (++digit[i] < radix) break;
            digit[i] = 0;
        }
        if (i == digit.size()) break;
    }
    return best;
}

FitResult fit_with_strategy(const Expr& skeleton, const Dataset& data,
                            const EvalDomain& domain, const OptConfig& cfg,
                            std::uint64_t seed, Strategy strategy) {
    switch (strategy) {
        case Strategy::PlainBfgs:
            return fit_constants(skeleton, data, domain, cfg, seed, false);
        case Strategy::IntegerTraversal:
            return integer_exponent_sweep(skeleton, data, domain, cfg, seed);
        case Strategy::ComplexBfgs: {
            FitResult r = fit_constants(skeleton, data, domain, cfg, seed, true);
            r.strategy = Strategy::ComplexBfgs;
            // score/report against the real-valued data as well; keep the
            // complex-safe r2 already computed
            return r;
        }
    }
    return {};
}

bool recovery_check(const FitResult& fit, const Expr& skeleton, const Expr& label,
                    const EvalDomain& domain) {
    if (!(fit.r2 > 0.999999)) return false;
    if (num_slots(skeleton) > static_cast<int>(fit.constants.size())) return false;
    ExprPtr bound = bind_constants(skeleton, fit.constants);
    return numeric_equivalent(*bound, label, domain, 1000, 1e-5) == Equiv::Yes;
}

}  // namespace ofnet
