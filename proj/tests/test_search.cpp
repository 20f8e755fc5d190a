#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <set>

#include "ofnet/search.hpp"

using namespace ofnet;

namespace {

bool stream_contains_key(const std::vector<SkeletonCandidate>& cs,
                         const std::string& key) {
    for (const auto& c : cs)
        if (skeleton_key(*c.expr) == key) return true;
    return false;
}

std::set<std::pair<int, int>> edges(const AdjacencyMatrix& m) {
    std::set<std::pair<int, int>> s;
    for (int x = 0; x < m.n_labels(); ++x)
        for (int y = 0; y < m.n_labels(); ++y)
            if (m.at(x, y)) s.insert({x, y});
    return s;
}

}  // namespace

TEST_CASE("check_nesting rules") {
    SearchConfig cfg;
    CHECK(check_nesting({Kind::Exp}, cfg));
    CHECK_FALSE(check_nesting({Kind::Sin, Kind::ScaledAdd, Kind::Sin}, cfg));
    CHECK_FALSE(check_nesting({Kind::Sin, Kind::Cos}, cfg));
    CHECK(check_nesting({Kind::Sin, Kind::ScaledAdd, Kind::Log}, cfg));
    CHECK(check_nesting({Kind::ScaledAdd, Kind::ScaledMul, Kind::ScaledAdd,
                         Kind::ScaledMul, Kind::ScaledAdd},
                        cfg));
    CHECK_FALSE(check_nesting({Kind::ScaledAdd, Kind::ScaledMul, Kind::ScaledAdd,
                               Kind::ScaledMul, Kind::ScaledAdd, Kind::ScaledMul,
                               Kind::ScaledAdd},
                              cfg));

    SearchConfig cross = cfg;
    cross.allow_cross_class_nesting = true;
    CHECK(check_nesting({Kind::ScaledAdd, Kind::Cos, Kind::ScaledAdd, Kind::Cos},
                        cross));
    CHECK_FALSE(check_nesting({Kind::Sin, Kind::Cos}, cross));
}

TEST_CASE("oracle matrix search recovers the three-term candidate") {
    auto target = parse("sin(x_1)+cos(x_2)+x_1");
    auto m = encode_expression(*target);
    auto cs = search(m, {}, 200);
    REQUIRE(!cs.empty());
    CHECK(stream_contains_key(cs, skeleton_key(*full_skeleton(*target))));
    // rounds are non-decreasing along the stream
    for (std::size_t i = 1; i < cs.size(); ++i) CHECK(cs[i - 1].round <= cs[i].round);
    // a binary sum is emitted before the ternary one
    std::size_t first2 = cs.size(), first3 = cs.size();
    for (std::size_t i = 0; i < cs.size(); ++i) {
        int terms = 1;
        const Expr* e = cs[i].expr.get();
        while (e->tag == Expr::Tag::Op && e->kind == Kind::ScaledAdd) {
            ++terms;
            e = e->kids[1].get();
        }
        if (terms == 3 && first2 == cs.size()) first2 = i;
        if (terms == 4 && first3 == cs.size()) first3 = i;
    }
    CHECK(first2 < first3);
}

TEST_CASE("all-zero matrix yields an empty stream") {
    AdjacencyMatrix zero(2);
    SkeletonStream st(zero);
    CHECK_FALSE(st.next().has_value());
    CHECK(search(zero, {}, 10).empty());
}

TEST_CASE("dangling operator is filled with the initial variable") {
    AdjacencyMatrix m(2);
    int add = AdjacencyMatrix::kind_label(Kind::ScaledAdd);
    int sin = AdjacencyMatrix::kind_label(Kind::Sin);
    m.set(add, sin, true);
    m.set(add, m.var_label(1), true);
    // sin row left empty: a defective matrix
    auto cs = search(m, {}, 100);
    REQUIRE(!cs.empty());
    auto want = skeleton_key(*full_skeleton(*parse("sin(x_1)+x_1")));
    CHECK(stream_contains_key(cs, want));

    SearchConfig strict;
    strict.strict = true;
    for (const auto& c : search(m, strict, 100)) {
        bool has_sin = false;
        std::function<void(const Expr&)> walk = [&](const Expr& e) {
            if (e.tag == Expr::Tag::Op) {
                if (e.kind == Kind::Sin) has_sin = true;
                for (const auto& k : e.kids) walk(*k);
            }
        };
        walk(*c.expr);
        CHECK_FALSE(has_sin);
    }
}

TEST_CASE("stream is deterministic") {
    auto m = encode_expression(*parse("x_1+x_1*x_2+sin(x_1)"));
    auto a = search(m, {}, 80);
    auto b = search(m, {}, 80);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(serialize(*a[i].expr) == serialize(*b[i].expr));
        CHECK(a[i].placeholders == b[i].placeholders);
        CHECK(a[i].round == b[i].round);
    }
}

TEST_CASE("strict-mode soundness on random matrices") {
    std::mt19937_64 rng(11);
    SearchConfig cfg;
    cfg.strict = true;
    cfg.max_depth = 4;
    cfg.max_candidates_per_round = 30;
    for (int rep = 0; rep < 100; ++rep) {
        AdjacencyMatrix m(2);
        std::uniform_int_distribution<int> dx(0, kNumKinds - 1), dy(0, m.n_labels() - 1);
        int ne = 1 + static_cast<int>(rng() % 8);
        for (int i = 0; i < ne; ++i) m.set(dx(rng), dy(rng), true);
        auto me = edges(m);
        for (const auto& c : search(m, cfg, 60)) {
            auto ce = edges(encode_expression(*c.expr));
            for (const auto& e : ce) CHECK(me.count(e));
        }
    }
}

TEST_CASE("completeness on small oracle instances") {
    const char* targets[] = {
        "sin(x_1)+cos(x_2)+x_1",
        "x_1*x_1",
        "sin(log(x_1))",
        "log(x_1)+x_2",
        "exp(x_1)*x_1",
        "sin(x_1*x_2)",
        "x_1+x_1*x_2+sin(x_1)",
        "exp(x_1*x_2)+cos(x_1)",
        "log(x_1+x_2)",
    };
    for (const char* t : targets) {
        CAPTURE(t);
        auto e = parse(t);
        auto m = encode_expression(*e);
        auto cs = search(m, {}, 200);
        CHECK(stream_contains_key(cs, skeleton_key(*full_skeleton(*e))));
    }
}

TEST_CASE("placeholder expansion grows a third term") {
    auto target = parse("x_1+x_2+sin(x_1)");
    auto m = encode_expression(*target);
    SearchConfig base;
    base.max_expansions = 0;  // binary sums only
    auto cs = search(m, base, 100);
    REQUIRE(!cs.empty());
    auto two = skeleton_key(*full_skeleton(*parse("x_1+sin(x_1)")));
    const SkeletonCandidate* s = nullptr;
    for (const auto& c : cs)
        if (skeleton_key(*c.expr) == two) s = &c;
    REQUIRE(s != nullptr);
    REQUIRE(!s->placeholders.empty());

    CHECK(expand_placeholder(*s, m, base).empty());  // budget exhausted

    SearchConfig one = base;
    one.max_expansions = 1;
    auto grown = expand_placeholder(*s, m, one);
    REQUIRE(!grown.empty());
    auto want = skeleton_key(*full_skeleton(*target));
    bool found = false;
    for (const auto& g : grown) {
        CHECK(g.expansions == 1);
        if (skeleton_key(*g.expr) == want) found = true;
    }
    CHECK(found);
}

TEST_CASE("render marks placeholders") {
    auto m = encode_expression(*parse("x_1+sin(x_1)"));
    auto cs = search(m, {}, 50);
    bool saw_hole = false;
    for (const auto& c : cs)
        if (!c.placeholders.empty()) {
            auto r = render(c);
            CHECK(r.find("⟨hole⟩") != std::string::npos);
            saw_hole = true;
            break;
        }
    CHECK(saw_hole);
}

TEST_CASE("robust to any single-bit flip of the oracle matrix") {
    auto m0 = encode_expression(*parse("sin(x_1)+cos(x_2)+x_1"));
    SearchConfig cfg;
    cfg.max_depth = 4;
    cfg.max_candidates_per_round = 30;
    for (int x = 0; x < m0.n_labels(); ++x)
        for (int y = 0; y < m0.n_labels(); ++y) {
            auto m = m0;
            m.set(x, y, !m.at(x, y));
            CHECK_NOTHROW(search(m, cfg, 40));
        }
}

TEST_CASE("full_skeleton shapes") {
    CHECK(serialize(*full_skeleton(*parse("sin(x_1)"))) == "sin(c1*x_1)");
    CHECK(skeleton_key(*full_skeleton(*parse("x_1+1"))) ==
          skeleton_key(*parse("c1*x_1+c2")));
    // fully slotted three-term sum matches the hand-written form
    CHECK(skeleton_key(*full_skeleton(*parse("sin(x_1)+cos(x_2)+x_1"))) ==
          skeleton_key(*parse("c1*sin(c2*x_1)+c3*cos(c4*x_2)+c5*x_1")));
}
