#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "ofnet/net.hpp"

using namespace ofnet;

namespace {

HyperParams toy() {
    HyperParams hp;
    hp.seed = 7;
    return hp;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

void zero_blocks(Model& m, const std::string& prefix) {
    for (int b = 0; b < m.params.n_blocks(); ++b)
        if (m.params.name(b).rfind(prefix, 0) == 0)
            std::fill(m.params.values(b).begin(), m.params.values(b).end(), 0.0);
}

}  // namespace

TEST_CASE("zero single layer maps everything to zero") {
    ParamStore ps;
    int W = ps.add("W", 4, 3, 0.0, 0);
    int b = ps.add("b", 4, 1, 0.0, 0);
    Tape t(&ps);
    int y = t.tanh_(t.linear(t.param(W), t.param(b), t.leaf({1.0, -2.0, 3.0})));
    for (double v : t.val(y)) CHECK(v == 0.0);
}

TEST_CASE("residual block with zero weights is the identity") {
    HyperParams hp = toy();
    Model m = make_model(hp);
    // zero the inverse net's residual block: output = out-layer(single(x))
    // checked structurally instead via a hand-built residual block
    ParamStore ps;
    int W1 = ps.add("W1", 3, 3, 0.5, 11);
    int b1 = ps.add("b1", 3, 1, 0.0, 0);
    int W2 = ps.add("W2", 3, 3, 0.0, 0);  // zero second matrix
    int b2 = ps.add("b2", 3, 1, 0.0, 0);
    Tape t(&ps);
    int x = t.leaf({0.3, -0.7, 1.1});
    int h = t.tanh_(t.linear(t.param(W1), t.param(b1), x));
    int y = t.add(x, t.linear(t.param(W2), t.param(b2), h));
    CHECK(t.val(y) == t.val(x));
}

TEST_CASE("gradient checks pass for every block family") {
    Model m = make_model(toy());
    for (const char* sel :
         {"trunk", "encoder", "decoder", "setenc", "inverse", "judge"}) {
        CAPTURE(sel);
        CHECK(gradient_check(m, sel, 3) < 1e-4);
    }
}

TEST_CASE("frozen parameters receive exactly zero gradient") {
    ParamStore ps;
    int W = ps.add("W", 2, 2, 0.5, 5, /*trainable=*/false);
    int b = ps.add("b", 2, 1, 0.0, 0);
    Tape t(&ps);
    int y = t.linear(t.param(W), t.param(b), t.leaf({1.0, 2.0}));
    int loss = t.sum(t.mul(y, y));
    t.backward(loss);
    for (double g : ps.grads(W)) CHECK(g == 0.0);
    bool b_nonzero = false;
    for (double g : ps.grads(b)) b_nonzero = b_nonzero || g != 0.0;
    CHECK(b_nonzero);
}

TEST_CASE("trunk features depend only on position") {
    Model m = make_model(toy());
    auto a = trunk_features(m, 0.25, -0.5);
    auto b = trunk_features(m, 0.25, -0.5);
    CHECK(a == b);  // bitwise
    CHECK(static_cast<int>(a.size()) == m.hp.opfeat_dim);
    // deeponet runs over two different kinds leave the trunk untouched
    std::vector<double> fn(m.hp.branch_samples, 0.3);
    std::vector<std::pair<double, double>> pos{{0.25, -0.5}};
    deeponet_forward(m, Kind::Sin, fn, pos);
    deeponet_forward(m, Kind::Exp, fn, pos);
    CHECK(trunk_features(m, 0.25, -0.5) == a);
}

TEST_CASE("deeponet output is the branch-trunk dot product") {
    Model m = make_model(toy());
    std::vector<double> fn(m.hp.branch_samples);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (double& v : fn) v = d(rng);
    std::vector<std::pair<double, double>> pos{{0.1, 0.0}, {-0.6, 0.0}};
    auto out = deeponet_forward(m, Kind::Cos, fn, pos);
    // independent recomputation
    Tape t(&m.params);
    int branch = decoder_forward(m, t, encoder_forward(m, t, Kind::Cos, t.leaf(fn)));
    for (std::size_t i = 0; i < pos.size(); ++i) {
        auto trunk = trunk_features(m, pos[i].first, pos[i].second);
        double dp = 0.0;
        const auto& bv = t.val(branch);
        for (std::size_t j = 0; j < bv.size(); ++j) dp += bv[j] * trunk[j];
        CHECK(out[i] == doctest::Approx(dp).epsilon(1e-12));
    }
}

TEST_CASE("zeroed branch nets produce all-zero outputs") {
    Model m = make_model(toy());
    zero_blocks(m, "enc.");
    zero_blocks(m, "dec.");
    std::vector<double> fn(m.hp.branch_samples, 0.7);
    auto out = deeponet_forward(m, Kind::Log, fn,
                                {{0.2, 0.0}, {0.9, 0.0}, {-0.4, 0.0}});
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("numerical decoder is permutation invariant") {
    Model m = make_model(toy());
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<std::pair<double, double>> pos;
    std::vector<double> vals;
    for (int i = 0; i < 20; ++i) {
        pos.push_back({d(rng), d(rng)});
        vals.push_back(d(rng));
    }
    auto base = numerical_decode(m, pos, vals);
    CHECK(static_cast<int>(base.size()) == m.hp.numfeat_dim);
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<int> perm(pos.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::pair<double, double>> pp;
        std::vector<double> pv;
        for (int i : perm) {
            pp.push_back(pos[i]);
            pv.push_back(vals[i]);
        }
        auto out = numerical_decode(m, pp, pv);
        for (std::size_t i = 0; i < out.size(); ++i)
            CHECK(std::abs(out[i] - base[i]) < 1e-9);
    }
}

TEST_CASE("numerical decoder handles degenerate sets and rejects empty ones") {
    Model m = make_model(toy());
    std::vector<std::pair<double, double>> pos(5, {0.3, 0.3});
    std::vector<double> vals(5, 1.0);
    auto out = numerical_decode(m, pos, vals);
    for (double v : out) CHECK(std::isfinite(v));
    CHECK_THROWS(numerical_decode(m, {}, {}));
}

TEST_CASE("inverse decoder maps numfeat to opfeat dims") {
    Model m = make_model(toy());
    std::vector<double> nf(m.hp.numfeat_dim, 0.1);
    auto of = invert_feature(m, nf);
    CHECK(static_cast<int>(of.size()) == m.hp.opfeat_dim);
    CHECK_THROWS(invert_feature(m, std::vector<double>(7, 0.0)));
}

TEST_CASE("operator features differ across kinds and match across calls") {
    Model m = make_model(toy());
    auto probe = probe_samples(m.hp);
    auto fs = extract_operator_feature(m, Kind::Sin, probe);
    auto fc = extract_operator_feature(m, Kind::Cos, probe);
    CHECK(fs == extract_operator_feature(m, Kind::Sin, probe));
    double dist = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i) dist += std::abs(fs[i] - fc[i]);
    CHECK(dist > 0.0);
    CHECK(static_cast<int>(fs.size()) == m.hp.opfeat_dim);
}

TEST_CASE("judgment probabilities are valid and symmetric under equal inputs") {
    Model m = make_model(toy());
    auto basic = basic_features(m);
    std::vector<double> target(m.hp.opfeat_dim, 0.2);
    // make two kinds' features identical
    basic[3] = basic[4];
    auto probs = judge_adjacency(m, basic, target);
    REQUIRE(probs.size() == kNumKinds + 2);
    for (const auto& row : probs)
        for (double p : row) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    // variable rows are structurally zero
    for (int r = kNumKinds; r < kNumKinds + 2; ++r)
        for (double p : probs[r]) CHECK(p == 0.0);
    // identical basic features yield identical rows
    CHECK(probs[3] == probs[4]);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Model m = make_model(toy());
    std::string p1 = "ckpt_a.bin", p2 = "ckpt_b.bin";
    save_checkpoint(m, p1);
    Model l = load_checkpoint(p1);
    save_checkpoint(l, p2);
    CHECK(slurp(p1) == slurp(p2));
    for (int b = 0; b < m.params.n_blocks(); ++b)
        CHECK(m.params.values(b) == l.params.values(b));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("model construction and training are deterministic per seed") {
    Model a = make_model(toy());
    Model b = make_model(toy());
    for (int i = 0; i < a.params.n_blocks(); ++i)
        REQUIRE(a.params.values(i) == b.params.values(i));
    auto ra = train_forward(a, {Kind::Sin}, 40, 11);
    auto rb = train_forward(b, {Kind::Sin}, 40, 11);
    CHECK(ra.final_loss == rb.final_loss);  // bitwise
    CHECK(ra.loss_curve == rb.loss_curve);
    for (int i = 0; i < a.params.n_blocks(); ++i)
        CHECK(a.params.values(i) == b.params.values(i));
}

TEST_CASE("linear operator kind trains to near-zero loss") {
    HyperParams hp = toy();
    hp.seed = 3;
    hp.poly_only = true;  // the exactly-representable setting
    Model m = make_model(hp);
    auto rep = train_forward(m, {Kind::MulConst}, 10000, 21);
    // average the tail of the curve to smooth minibatch noise
    double tail = 0.0;
    int n = 0;
    for (std::size_t i = rep.loss_curve.size() - 10; i < rep.loss_curve.size(); ++i) {
        tail += rep.loss_curve[i];
        ++n;
    }
    CAPTURE(tail / n);
    CHECK(tail / n < 1e-4);
}

namespace {

// Average round-trip cosine over random quadratic inputs to a sine operator:
// decode (positions, values) data, invert to an operator feature, compare
// with the encoder's feature for the same input function.
double round_trip_cosine(const Model& m, int n_fns, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    auto grid_x = [&](int i) { return -1.0 + 2.0 * i / (m.hp.branch_samples - 1); };
    double total = 0.0;
    for (int f = 0; f < n_fns; ++f) {
        std::vector<double> coef{d(rng) * 0.5, d(rng), d(rng) * 0.5};
        auto u = [&](double x) { return coef[0] + coef[1] * x + coef[2] * x * x; };
        std::vector<double> fn(m.hp.branch_samples);
        for (int i = 0; i < m.hp.branch_samples; ++i) fn[i] = u(grid_x(i));
        std::vector<std::pair<double, double>> pos;
        std::vector<double> vals;
        for (int i = 0; i < 48; ++i) {
            double p = d(rng);
            pos.push_back({p, 0.0});
            vals.push_back(std::sin(u(p)));
        }
        auto truth = extract_operator_feature(m, Kind::Sin, fn);
        auto got = invert_feature(m, numerical_decode(m, pos, vals));
        double dt = 0.0, nt = 0.0, ng = 0.0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            dt += truth[i] * got[i];
            nt += truth[i] * truth[i];
            ng += got[i] * got[i];
        }
        total += dt / std::sqrt(nt * ng);
    }
    return total / n_fns;
}

}  // namespace

TEST_CASE("backward path reproduces operator features on a trained kind") {
    // The numerical decoder is a lossy funnel (48 scattered samples ->
    // 16-dim set summary -> 32-dim feature), so the round trip is scored by
    // average cosine against a configured threshold rather than exactness.
    constexpr double kCosineThreshold = 0.35;
    HyperParams hp = toy();
    hp.seed = 5;
    Model m = make_model(hp);
    train_forward(m, {Kind::MulConst, Kind::Sin}, 2000, 31);
    double before = round_trip_cosine(m, 10, 40);
    train_backward(m, {Kind::MulConst, Kind::Sin}, 3000, 32);
    double after = round_trip_cosine(m, 10, 40);
    CAPTURE(before);
    CAPTURE(after);
    CHECK(after > kCosineThreshold);
    CHECK(after > before);  // backward training must improve the round trip
}

TEST_CASE("random corpus has labeled operator graphs") {
    auto corpus = random_corpus(20, 99);
    REQUIRE(corpus.size() == 20);
    for (const auto& e : corpus) {
        auto m = encode_expression(*e, 2);
        CHECK(m.edge_count() > 0);
        std::vector<std::pair<double, double>> pos;
        std::vector<double> vals;
        sample_expression(*e, 64, 99, &pos, &vals);
        CHECK(vals.size() >= 32);
    }
}

TEST_CASE("judgment training runs and scores") {
    HyperParams hp = toy();
    hp.seed = 13;
    Model m = make_model(hp);
    auto corpus = random_corpus(5, 77);
    auto rep = train_judgment(m, corpus, 200, 55);
    CHECK(std::isfinite(rep.final_loss));
    CHECK(rep.edge_accuracy >= 0.0);
    CHECK(rep.edge_accuracy <= 1.0);
    CHECK(rep.exact_match_rate >= 0.0);
    CHECK(rep.exact_match_rate <= 1.0);
    CHECK(rep.final_loss < rep.loss_curve.front());
}
