#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <vector>

#include "ofnet/kern.hpp"

using namespace ofnet;

namespace {
std::vector<double> rand_vec(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}
}  // namespace

TEST_CASE("scalar and active kernels agree") {
    std::mt19937_64 rng(7);
    const auto& s = kern::scalar();
    const auto& a = kern::active();
    for (std::size_t n : {1u, 3u, 4u, 7u, 16u, 33u, 100u}) {
        auto x = rand_vec(rng, n), y = rand_vec(rng, n);
        CHECK(s.dot(x.data(), y.data(), n) ==
              doctest::Approx(a.dot(x.data(), y.data(), n)).epsilon(1e-12));

        auto y1 = y, y2 = y;
        s.axpy(0.37, x.data(), y1.data(), n);
        a.axpy(0.37, x.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));
    }
}

TEST_CASE("matvec variants agree across implementations") {
    std::mt19937_64 rng(11);
    const auto& s = kern::scalar();
    const auto& a = kern::active();
    std::size_t m = 13, n = 21;
    auto A = rand_vec(rng, m * n);
    auto x = rand_vec(rng, n);
    auto xm = rand_vec(rng, m);

    std::vector<double> y1(m), y2(m);
    s.matvec(A.data(), x.data(), y1.data(), m, n);
    a.matvec(A.data(), x.data(), y2.data(), m, n);
    for (std::size_t i = 0; i < m; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-12));

    std::vector<double> t1(n), t2(n);
    s.matvec_t(A.data(), xm.data(), t1.data(), m, n);
    a.matvec_t(A.data(), xm.data(), t2.data(), m, n);
    for (std::size_t j = 0; j < n; ++j) CHECK(t1[j] == doctest::Approx(t2[j]).epsilon(1e-12));

    auto G1 = A, G2 = A;
    s.ger(xm.data(), x.data(), G1.data(), m, n);
    a.ger(xm.data(), x.data(), G2.data(), m, n);
    for (std::size_t i = 0; i < m * n; ++i) CHECK(G1[i] == doctest::Approx(G2[i]).epsilon(1e-12));
}

TEST_CASE("matvec_t matches transpose-by-hand oracle") {
    std::mt19937_64 rng(3);
    std::size_t m = 5, n = 4;
    auto A = rand_vec(rng, m * n);
    auto x = rand_vec(rng, m);
    std::vector<double> want(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) want[j] += A[i * n + j] * x[i];
    std::vector<double> got(n);
    kern::active().matvec_t(A.data(), x.data(), got.data(), m, n);
    for (std::size_t j = 0; j < n; ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("force selects implementations") {
    CHECK(kern::force("scalar"));
    CHECK(std::string(kern::active().name) == "scalar");
    CHECK(kern::force(""));
    CHECK_FALSE(kern::force("no-such-isa"));
}
