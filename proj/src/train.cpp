#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "ofnet/net.hpp"

namespace ofnet {

namespace {

std::mt19937_64 step_rng(std::uint64_t seed, std::uint64_t step) {
    return std::mt19937_64(seed * 0x9E3779B97F4A7C15ULL +
                           step * 0xD1B54A32D192ED03ULL + 0x94D049BB133111EBULL);
}

// random cubic or sinusoid with moderate coefficients
struct Fn {
    bool sinusoid;
    double a0, a1, a2, a3;
    double shift = 0.0;  // per-kind domain adaptation
    double operator()(double x) const {
        double u = sinusoid ? a0 + a1 * std::sin(2.0 * a2 * x + a3)
                            : a0 + a1 * x + a2 * x * x + a3 * x * x * x;
        return u + shift;
    }
};

Fn random_fn(std::mt19937_64& rng, bool poly_only) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    bool sinusoid = !poly_only && (rng() & 1) != 0;
    Fn f{sinusoid, d(rng), d(rng), d(rng), d(rng)};
    return f;
}

// kinds with constrained input ranges get their function shifted positive
bool needs_positive(Kind k) {
    return k == Kind::Log || k == Kind::PowLo || k == Kind::Inv;
}

void adapt_domain(Fn& f) {
    double mn = 1e300;
    for (int i = 0; i <= 64; ++i) {
        double x = -1.0 + 2.0 * i / 64.0;
        mn = std::min(mn, f(x));
    }
    if (mn < 0.5) f.shift += 0.5 - mn;
}

// fixed constants used for the forward-training operator instances
constexpr double kC = 1.5;

double apply_kind(Kind k, double u1, double u2) {
    switch (k) {
        case Kind::ScaledAdd: return kC * u1 + u2;
        case Kind::ScaledMul: return kC * u1 * u2;
        case Kind::Inv: return 1.0 / u1;
        case Kind::Sin: return std::sin(u1);
        case Kind::Cos: return std::cos(u1);
        case Kind::Exp: return std::exp(u1);
        case Kind::PowHi: return u1 * u1;
        case Kind::PowLo: return std::sqrt(u1);
        case Kind::Log: return std::log(u1);
        case Kind::AddConst: return u1 + kC;
        case Kind::MulConst: return kC * u1;
    }
    return 0.0;
}

struct OperatorSample {
    std::vector<double> fn_samples;                 // branch input
    std::vector<std::pair<double, double>> positions;
    std::vector<double> values;
};

// Branch layout: unary kinds sample one function at the full grid; binary
// kinds split the budget, first half u1, second half u2, on a coarser grid.
OperatorSample make_operator_sample(const HyperParams& hp, Kind k,
                                    std::mt19937_64& rng, int n_positions) {
    OperatorSample s;
    int arity = kind_info(k).arity;
    Fn f1 = random_fn(rng, hp.poly_only), f2 = random_fn(rng, hp.poly_only);
    if (needs_positive(k)) adapt_domain(f1);
    int grid = arity == 2 ? hp.branch_samples / 2 : hp.branch_samples;
    auto grid_x = [&](int i) { return -1.0 + 2.0 * i / (grid - 1); };
    for (int i = 0; i < grid; ++i) s.fn_samples.push_back(f1(grid_x(i)));
    if (arity == 2)
        for (int i = 0; i < grid; ++i) s.fn_samples.push_back(f2(grid_x(i)));
    std::uniform_real_distribution<double> dp(-1.0, 1.0);
    for (int i = 0; i < n_positions; ++i) {
        double p = dp(rng);
        s.positions.push_back({p, 0.0});
        s.values.push_back(apply_kind(k, f1(p), arity == 2 ? f2(p) : 0.0));
    }
    return s;
}

}  // namespace

TrainReport train_forward(Model& m, const std::vector<Kind>& kinds, int steps,
                          std::uint64_t seed) {
    if (kinds.empty()) throw std::invalid_argument("train_forward: no kinds");
    TrainReport rep;
    m.params.zero_grads();
    const int n_pos = 16;
    const int batch = 4;
    for (int step = 0; step < steps; ++step) {
        Kind k = kinds[step % kinds.size()];
        auto rng = step_rng(seed, static_cast<std::uint64_t>(step));
        Tape t(&m.params);
        int loss = -1;
        for (int bi = 0; bi < batch; ++bi) {
            OperatorSample s = make_operator_sample(m.hp, k, rng, n_pos);
            int branch = decoder_forward(
                m, t, encoder_forward(m, t, k, t.leaf(s.fn_samples)));
            std::vector<int> preds;
            for (const auto& p : s.positions)
                preds.push_back(t.dot(branch, trunk_forward(m, t, p.first, p.second)));
            int l = t.mse(t.concat(preds), s.values);
            loss = bi == 0 ? l : t.add(loss, l);
        }
        loss = t.scale(loss, 1.0 / batch);
        double lv = t.val(loss)[0];
        if (!std::isfinite(lv))
            throw std::runtime_error("train_forward: loss diverged at step " +
                                     std::to_string(step));
        t.backward(loss);
        m.params.clip_grads(5.0);
        m.params.sgd_step(m.hp.lr / (1.0 + step / m.hp.lr_decay_steps), m.hp.momentum);
        if (step % 50 == 0 || step == steps - 1) rep.loss_curve.push_back(lv);
        rep.final_loss = lv;
    }
    return rep;
}

TrainReport train_backward(Model& m, const std::vector<Kind>& kinds, int steps,
                           std::uint64_t seed) {
    if (kinds.empty()) throw std::invalid_argument("train_backward: no kinds");
    TrainReport rep;
    m.params.zero_grads();
    const int n_pos = 48;
    const int batch = 4;
    for (int step = 0; step < steps; ++step) {
        Kind k = kinds[step % kinds.size()];
        auto rng = step_rng(seed ^ 0x5151515151515151ULL,
                            static_cast<std::uint64_t>(step));
        Tape t(&m.params);
        int loss = -1;
        for (int bi = 0; bi < batch; ++bi) {
            OperatorSample s = make_operator_sample(m.hp, k, rng, n_pos);
            // the operator feature of this exact input function is the target
            std::vector<double> target = extract_operator_feature(m, k, s.fn_samples);
            std::vector<int> pf;
            for (const auto& p : s.positions)
                pf.push_back(t.leaf(trunk_features(m, p.first, p.second)));
            int nf = setenc_forward(m, t, pf, s.values);
            int of = m.inverse.forward(t, nf);
            int l = t.mse(of, target);
            loss = bi == 0 ? l : t.add(loss, l);
        }
        loss = t.scale(loss, 1.0 / batch);
        double lv = t.val(loss)[0];
        if (!std::isfinite(lv))
            throw std::runtime_error("train_backward: loss diverged at step " +
                                     std::to_string(step));
        t.backward(loss);
        m.params.clip_grads(5.0);
        m.params.sgd_step(m.hp.lr / (1.0 + step / m.hp.lr_decay_steps),
                          m.hp.momentum);
        if (step % 50 == 0 || step == steps - 1) rep.loss_curve.push_back(lv);
        rep.final_loss = lv;
    }
    return rep;
}

// ---------- judgment corpus ----------

namespace {

ExprPtr random_expr(std::mt19937_64& rng, int depth) {
    std::uniform_real_distribution<double> dc(0.5, 2.0);
    std::uniform_int_distribution<int> dv(1, 2);
    if (depth <= 0 || (rng() % 4) == 0) return Expr::variable(dv(rng));
    Kind k = static_cast<Kind>(1 + rng() % kNumKinds);
    const KindInfo& info = kind_info(k);
    std::vector<ExprPtr> kids;
    for (int i = 0; i < info.arity; ++i) kids.push_back(random_expr(rng, depth - 1));
    std::optional<ConstParam> c;
    if (info.has_const) {
        double v = dc(rng);
        if (k == Kind::PowHi) v = 2.0 + static_cast<double>(rng() % 3);
        if (k == Kind::PowLo) v = 0.5;
        c = ConstParam::of_value(v);
    }
    return Expr::op(k, std::move(kids), c);
}

}  // namespace

void sample_expression(const Expr& e, int n, std::uint64_t seed,
                       std::vector<std::pair<double, double>>* positions,
                       std::vector<double>* values) {
    positions->clear();
    values->clear();
    auto dom = EvalDomain::uniform(2, -1.0, 1.0);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    int attempts = 0;
    while (static_cast<int>(values->size()) < n && attempts < 20 * n) {
        ++attempts;
        double x1 = d(rng), x2 = d(rng);
        double xs[2] = {x1, x2};
        double y;
        try {
            y = evaluate(e, xs, {}, dom);
        } catch (const EvalError&) {
            continue;
        }
        if (!std::isfinite(y) || std::abs(y) > 10.0) continue;
        positions->push_back({x1, x2});
        values->push_back(y);
    }
}

std::vector<ExprPtr> random_corpus(int n, std::uint64_t seed) {
    std::vector<ExprPtr> out;
    std::mt19937_64 rng(seed);
    int guard = 0;
    while (static_cast<int>(out.size()) < n && ++guard < 100000) {
        ExprPtr e = random_expr(rng, 4);
        if (e->tag != Expr::Tag::Op) continue;
        AdjacencyMatrix m = encode_expression(*e, 2);
        if (m.edge_count() == 0) continue;
        std::vector<std::pair<double, double>> pos;
        std::vector<double> vals;
        sample_expression(*e, 64, seed ^ (out.size() + 1), &pos, &vals);
        if (vals.size() < 32) continue;  // too little valid data on (-1,1)^2
        out.push_back(std::move(e));
    }
    if (static_cast<int>(out.size()) < n)
        throw std::runtime_error("random_corpus: generation stalled");
    return out;
}

namespace {

struct CorpusItem {
    std::vector<std::pair<double, double>> positions;
    std::vector<double> values;
    std::vector<double> target;  // 11 x 13 edge labels, row-major
};

std::vector<double> edge_labels(const AdjacencyMatrix& m) {
    std::vector<double> t;
    for (int x = 0; x < kNumKinds; ++x)
        for (int y = 0; y < m.n_labels(); ++y) t.push_back(m.at(x, y) ? 1.0 : 0.0);
    return t;
}

CorpusItem prepare_item(const Expr& e, std::uint64_t seed, std::size_t idx) {
    CorpusItem it;
    sample_expression(e, 64, seed ^ (idx + 1), &it.positions, &it.values);
    it.target = edge_labels(encode_expression(e, 2));
    return it;
}

int target_token(const Model& m, Tape& t, const CorpusItem& it) {
    std::vector<int> pf;
    for (const auto& p : it.positions)
        pf.push_back(t.leaf(trunk_features(m, p.first, p.second)));
    return m.inverse.forward(t, setenc_forward(m, t, pf, it.values));
}

}  // namespace

JudgmentReport train_judgment(Model& m, const std::vector<ExprPtr>& corpus,
                              int steps, std::uint64_t seed) {
    if (corpus.empty()) throw std::invalid_argument("train_judgment: empty corpus");
    JudgmentReport rep;
    m.params.zero_grads();
    std::vector<std::vector<double>> basic = basic_features(m);
    std::vector<CorpusItem> items;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        items.push_back(prepare_item(*corpus[i], seed, i));

    for (int step = 0; step < steps; ++step) {
        const CorpusItem& it = items[step % items.size()];
        Tape t(&m.params);
        std::vector<int> tokens;
        for (const auto& f : basic) tokens.push_back(t.leaf(f));
        tokens.push_back(target_token(m, t, it));
        int loss = t.bce_logits(judge_forward(m, t, tokens), it.target);
        double lv = t.val(loss)[0];
        if (!std::isfinite(lv))
            throw std::runtime_error("train_judgment: loss diverged at step " +
                                     std::to_string(step));
        t.backward(loss);
        m.params.clip_grads(5.0);
        m.params.sgd_step(m.hp.lr, m.hp.momentum);
        if (step % 50 == 0 || step == steps - 1) rep.loss_curve.push_back(lv);
        rep.final_loss = lv;
    }
    JudgmentReport eval = evaluate_judgment(m, corpus, seed);
    rep.edge_accuracy = eval.edge_accuracy;
    rep.exact_match_rate = eval.exact_match_rate;
    return rep;
}

JudgmentReport evaluate_judgment(const Model& m, const std::vector<ExprPtr>& corpus,
                                 std::uint64_t seed) {
    JudgmentReport rep;
    std::vector<std::vector<double>> basic = basic_features(m);
    long long correct = 0, total = 0;
    int exact = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        CorpusItem it = prepare_item(*corpus[i], seed, i);
        std::vector<double> nf = numerical_decode(m, it.positions, it.values);
        std::vector<double> of = invert_feature(m, nf);
        auto probs = judge_adjacency(m, basic, of);
        bool all_ok = true;
        for (int x = 0; x < kNumKinds; ++x)
            for (int y = 0; y < kNumKinds + 2; ++y) {
                bool pred = probs[x][y] > 0.5;
                bool truth = it.target[static_cast<std::size_t>(x) * (kNumKinds + 2) + y] > 0.5;
                ++total;
                if (pred == truth) ++correct;
                else all_ok = false;
            }
        if (all_ok) ++exact;
    }
    rep.edge_accuracy = total ? static_cast<double>(correct) / total : 0.0;
    rep.exact_match_rate =
        corpus.empty() ? 0.0 : static_cast<double>(exact) / corpus.size();
    return rep;
}

}  // namespace ofnet
