#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "ofnet/constopt.hpp"
#include "ofnet/search.hpp"

using namespace ofnet;

namespace {

Dataset sample_data(const Expr& target, const EvalDomain& dom, int n,
                    std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Dataset out;
    while (static_cast<int>(out.size()) < n) {
        Sample s;
        for (int v = 0; v < dom.n_vars(); ++v) {
            const auto& iv = dom.var_ranges[v].front();
            std::uniform_real_distribution<double> d(iv.lo, iv.hi);
            s.x.push_back(d(rng));
        }
        try {
            s.y = evaluate(target, s.x, {}, dom);
        } catch (const EvalError&) {
            continue;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("bfgs quadratic") {
    auto f = [](const std::vector<double>& x, std::vector<double>* g) {
        if (g) (*g)[0] = 2.0 * (x[0] - 3.0);
        return (x[0] - 3.0) * (x[0] - 3.0);
    };
    auto r = bfgs_minimize(f, {0.0});
    CHECK(r.converged);
    CHECK(std::abs(r.x[0] - 3.0) < 1e-8);
}

TEST_CASE("bfgs rosenbrock") {
    auto f = [](const std::vector<double>& x, std::vector<double>* g) {
        double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
        if (g) {
            (*g)[0] = -2.0 * a - 400.0 * x[0] * b;
            (*g)[1] = 200.0 * b;
        }
        return a * a + 100.0 * b * b;
    };
    OptConfig cfg;
    cfg.max_iters = 500;
    auto r = bfgs_minimize(f, {-1.2, 1.0}, cfg);
    CHECK(std::abs(r.x[0] - 1.0) < 1e-5);
    CHECK(std::abs(r.x[1] - 1.0) < 1e-5);
    CHECK(r.f <= f({-1.2, 1.0}, nullptr));  // never worse than the start
}

TEST_CASE("bfgs discards a start with NaN gradient") {
    auto f = [](const std::vector<double>& x, std::vector<double>* g) {
        if (g) (*g)[0] = std::numeric_limits<double>::quiet_NaN();
        return x[0] * x[0];
    };
    auto r = bfgs_minimize(f, {2.0});
    CHECK_FALSE(r.converged);
    CHECK(r.x[0] == 2.0);
}

TEST_CASE("bfgs result never exceeds the starting objective") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    auto f = [](const std::vector<double>& x, std::vector<double>* g) {
        double s = std::sin(3.0 * x[0]) + 0.1 * x[0] * x[0];
        if (g) (*g)[0] = 3.0 * std::cos(3.0 * x[0]) + 0.2 * x[0];
        return s;
    };
    for (int i = 0; i < 50; ++i) {
        std::vector<double> x0{d(rng)};
        double f0 = f(x0, nullptr);
        auto r = bfgs_minimize(f, x0);
        CHECK(r.f <= f0 + 1e-12);
    }
}

TEST_CASE("r_squared basics") {
    std::vector<double> t{1.0, 2.0, 3.0, 4.0};
    CHECK(r_squared(t, t) == doctest::Approx(1.0));
    std::vector<double> mean(4, 2.5);
    CHECK(r_squared(mean, t) == doctest::Approx(0.0));
    std::vector<double> flat{2.0, 2.0}, one{1.0};
    CHECK_THROWS_AS(r_squared(std::vector<double>{1.0, 1.0}, flat),
                    std::invalid_argument);
    CHECK_THROWS_AS(r_squared(one, std::vector<double>{2.0}),
                    std::invalid_argument);
}

TEST_CASE("complex-safe r_squared stays below one; naive mode does not") {
    std::vector<std::complex<double>> truth{{1, 0}, {2, 0}, {3, 0}, {5, 0}};
    std::vector<std::complex<double>> pred = truth;
    for (auto& p : pred) p += std::complex<double>(0.0, 0.3);  // imaginary residual
    double safe = r_squared(pred, truth, true);
    CHECK(safe < 1.0);
    // naive complex squares: (i*eps)^2 is negative, inflating the score
    double naive = r_squared(pred, truth, false);
    CHECK(naive > 1.0);
}

TEST_CASE("complex-safe r_squared fuzz never exceeds one") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-50.0, 50.0);
    for (int rep = 0; rep < 500; ++rep) {
        int n = 2 + static_cast<int>(rng() % 20);
        std::vector<std::complex<double>> p, t;
        for (int i = 0; i < n; ++i) {
            p.emplace_back(d(rng), d(rng));
            t.emplace_back(d(rng), d(rng));
        }
        try {
            CHECK(r_squared(p, t, true) <= 1.0);
        } catch (const std::invalid_argument&) {
            // degenerate truth draw
        }
    }
}

TEST_CASE("select_strategy routing") {
    OptConfig cfg;
    CHECK(select_strategy(*parse("c1*sin(c2*x_1)"), 1, cfg) == Strategy::PlainBfgs);
    CHECK(select_strategy(*parse("c1*pow(x_1,4)"), 1, cfg) ==
          Strategy::IntegerTraversal);
    CHECK(select_strategy(*parse("c1*pow(x_1,6)"), 1, cfg) == Strategy::ComplexBfgs);
    CHECK(select_strategy(*parse("c1*pow(x_1,4)+c2*x_2"), 2, cfg) ==
          Strategy::ComplexBfgs);
    CHECK(select_strategy(*parse("c1*pow(x_1,c2)"), 1, cfg) ==
          Strategy::IntegerTraversal);
}

TEST_CASE("fit recovers the Constant-1 coefficients") {
    auto target = parse("3.39*pow(x_1,3)+2.12*pow(x_1,2)+1.78*x_1");
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    auto data = sample_data(*target, dom, 200, 42);
    auto skel = parse("c1*pow(x_1,3)+c2*pow(x_1,2)+c3*x_1");
    auto fit = fit_constants(*skel, data, dom, {}, 1);
    REQUIRE(fit.constants.size() == 3);
    CHECK(std::abs(fit.constants[0] - 3.39) < 1e-4);
    CHECK(std::abs(fit.constants[1] - 2.12) < 1e-4);
    CHECK(std::abs(fit.constants[2] - 1.78) < 1e-4);
    CHECK(fit.r2 > 0.999999);
    CHECK(recovery_check(fit, *skel, *target, dom));
}

TEST_CASE("slotless skeleton scores without optimizing") {
    auto target = parse("sin(x_1)");
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    auto data = sample_data(*target, dom, 100, 3);
    auto fit = fit_constants(*target, data, dom, {}, 1);
    CHECK(fit.r2 == doctest::Approx(1.0));
}

TEST_CASE("wrong skeleton is not recovered") {
    auto target = parse("sin(x_1)");
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    auto data = sample_data(*target, dom, 200, 9);
    auto skel = parse("c1*cos(c2*x_1)");
    auto fit = fit_constants(*skel, data, dom, {}, 1);
    CHECK(fit.r2 < 0.999999);
    CHECK_FALSE(recovery_check(fit, *skel, *target, dom));
}

TEST_CASE("integer exponent sweep finds the power") {
    auto target = parse("pow(x_1,4)");
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    auto data = sample_data(*target, dom, 200, 17);
    auto skel = parse("c1*pow(x_1,c2)");
    auto fit = integer_exponent_sweep(*skel, data, dom, {}, 1);
    CHECK(fit.strategy == Strategy::IntegerTraversal);
    CHECK_FALSE(fit.budget_exceeded);
    REQUIRE(fit.constants.size() == 2);
    CHECK(std::abs(fit.constants[0] - 1.0) < 1e-6);
    CHECK(fit.constants[1] == doctest::Approx(4.0));
    CHECK(fit.r2 > 0.999999);
}

TEST_CASE("integer exponent sweep handles x^2 exactly") {
    auto target = parse("pow(x_1,2)");
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    auto data = sample_data(*target, dom, 200, 21);
    auto fit = integer_exponent_sweep(*parse("c1*pow(x_1,c2)"), data, dom, {}, 1);
    CHECK(fit.constants[1] == doctest::Approx(2.0));
    CHECK(fit.r2 > 0.999999);
}

TEST_CASE("more restarts never hurt the best objective") {
    auto target = parse("sin(3*x_1)+0.5*x_1");
    auto dom = EvalDomain::uniform(1, -3.0, 3.0);
    auto data = sample_data(*target, dom, 150, 33);
    auto skel = parse("c1*sin(c2*x_1)+c3*x_1");
    OptConfig ten;
    ten.restarts_unit = 10;
    ten.restarts_wide = 0;
    OptConfig thirty;  // default 10 + 20
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        auto a = fit_constants(*skel, data, dom, ten, seed);
        auto b = fit_constants(*skel, data, dom, thirty, seed);
        CHECK(b.objective <= a.objective + 1e-12);
    }
}

TEST_CASE("recovery_check implies the r2 threshold") {
    auto target = parse("x_1+1");
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    FitResult low;
    low.constants = {1.0, 1.0};
    low.r2 = 0.9999;
    CHECK_FALSE(recovery_check(low, *parse("c1*x_1+c2"), *target, dom));
    // high r2 but perturbed constants: structurally wrong value
    FitResult off;
    off.constants = {1.0, 1.01};
    off.r2 = 0.9999999;
    CHECK_FALSE(recovery_check(off, *parse("c1*x_1+c2"), *target, dom));
    FitResult good;
    good.constants = {1.0, 1.0};
    good.r2 = 1.0;
    CHECK(recovery_check(good, *parse("c1*x_1+c2"), *target, dom));
}

TEST_CASE("true skeletons fit the table benchmarks across seeds") {
    struct Case {
        const char* target;
    } cases[] = {
        {"pow(x_1,3)+pow(x_1,2)+x_1"},   // Nguyen-1
        {"0.5*x_1*(x_1+1)"},             // Keijzer-6
        {"exp(-1*pow(x_1,2))"},          // Livermore-20
    };
    auto dom = EvalDomain::uniform(1, -1.0, 1.0);
    for (const auto& c : cases) {
        CAPTURE(c.target);
        auto target = parse(c.target);
        auto skel = full_skeleton(*target);
        auto data = sample_data(*target, dom, 300, 1234);
        int ok = 0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            auto strat = select_strategy(*skel, dom.n_vars());
            auto fit = fit_with_strategy(*skel, data, dom, {}, seed, strat);
            if (fit.r2 > 0.999999) ++ok;
        }
        CHECK(ok >= 9);
    }
}

TEST_CASE("total failure yields the minus-infinity sentinel") {
    // log over strictly negative inputs: every evaluation throws
    auto skel = parse("c1*log(c2*x_1)");
    auto dom = EvalDomain::uniform(1, -2.0, -1.0);
    Dataset data;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(-2.0, -1.0);
    for (int i = 0; i < 100; ++i) data.push_back({{d(rng)}, 1.0});
    OptConfig cfg;
    cfg.restarts_unit = 2;
    cfg.restarts_wide = 0;  // U(0,1) starts keep c2*x_1 negative
    auto fit = fit_constants(*skel, data, dom, cfg, 1);
    CHECK(std::isinf(fit.r2));
    CHECK(fit.r2 < 0);
    CHECK_FALSE(fit.recovered);
}
