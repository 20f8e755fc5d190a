#include "ofnet/search.hpp"

#include <algorithm>
#include <stdexcept>

namespace ofnet {

namespace {

int restricted_class(Kind k) {
    switch (k) {
        case Kind::Sin:
        case Kind::Cos:
            return 1;
        case Kind::PowHi:
        case Kind::PowLo:
            return 2;
        case Kind::Exp:
            return 3;
        case Kind::Log:
            return 4;
        default:
            return 0;
    }
}

ConstParam slot0() { return ConstParam::of_slot(0); }
ConstParam one() { return ConstParam::of_value(1.0); }

bool is_chain(Kind k) { return k == Kind::ScaledAdd || k == Kind::ScaledMul; }

// Fresh slot id per slot occurrence; shared subtrees inside one candidate must
// not tie their constants together.
ExprPtr uniquify(const Expr& e, int& next) {
    switch (e.tag) {
        case Expr::Tag::Variable:
        case Expr::Tag::ConstValue:
            return std::make_shared<Expr>(e);
        case Expr::Tag::ConstSlot:
            return Expr::slot_ref(next++);
        case Expr::Tag::Op:
            break;
    }
    std::optional<ConstParam> p = e.param;
    if (p && p->is_slot) p = ConstParam::of_slot(next++);
    std::vector<ExprPtr> kids;
    for (const auto& k : e.kids) kids.push_back(uniquify(*k, next));
    return Expr::op(e.kind, std::move(kids), p);
}

// n-ary sum of pre-scaled terms: chain links carry a literal 1 that folds away
// under canonicalization, so the terms read as siblings of one add node.
ExprPtr build_add(const std::vector<ExprPtr>& terms) {
    ExprPtr acc = terms.back();
    for (std::size_t i = terms.size() - 1; i-- > 0;)
        acc = Expr::op(Kind::ScaledAdd, {terms[i], acc}, one());
    return acc;
}

// n-ary product: one coefficient slot at the head, bare factors below.
ExprPtr build_mul(const std::vector<ExprPtr>& factors) {
    ExprPtr acc = factors.back();
    for (std::size_t i = factors.size() - 1; i-- > 1;)
        acc = Expr::op(Kind::ScaledMul, {factors[i], acc}, one());
    return Expr::op(Kind::ScaledMul, {factors[0], acc}, slot0());
}

ExprPtr leaf(int var) {
    return Expr::op(Kind::MulConst, {Expr::variable(var)}, slot0());
}

struct Shape {
    ExprPtr e;
    int extras = 0;  // add/mul terms beyond two consumed in this subtree
};

struct Gen {
    const AdjacencyMatrix& m;
    const SearchConfig& cfg;
    long fuel;
    std::vector<Kind> path;

    std::vector<int> licensed(Kind k) const {
        std::vector<int> out;
        int row = AdjacencyMatrix::kind_label(k);
        for (int y = 0; y < m.n_labels(); ++y)
            if (m.at(row, y)) out.push_back(y);
        return out;
    }

    // shapes a child label contributes as a direct operand
    std::vector<Shape> child(int label, int budget, int extras) {
        if (m.is_var_label(label))
            return {{leaf(label - kNumKinds + 1), 0}};
        return node(static_cast<Kind>(label + 1), budget, extras);
    }

    std::vector<Shape> node(Kind k, int budget, int extras) {
        if (budget <= 0 || fuel <= 0) return {};
        --fuel;
        path.push_back(k);
        std::vector<Shape> out;
        if (!check_nesting(path, cfg)) {
            path.pop_back();
            return out;
        }
        std::vector<int> lic = licensed(k);
        bool fallback = false;
        if (lic.empty()) {
            if (cfg.strict) {
                path.pop_back();
                return out;
            }
            lic = {m.var_label(1)};  // dangling kind: fill with the initial variable
            fallback = true;
        }
        switch (k) {
            case Kind::Inv:
            case Kind::Sin:
            case Kind::Cos:
            case Kind::Exp:
            case Kind::Log:
                for (int y : lic)
                    for (auto& s : child(y, budget - 1, extras))
                        out.push_back({Expr::op(k, {s.e}), s.extras});
                break;
            case Kind::PowHi:
            case Kind::PowLo:
                for (int y : lic)
                    for (auto& s : child(y, budget - 1, extras))
                        out.push_back({Expr::op(k, {s.e}, slot0()), s.extras});
                break;
            case Kind::AddConst:
                // the operand is a scaled term, like the terms of an add node
                for (auto& s : term_options(Kind::AddConst, lic, budget, extras))
                    out.push_back({Expr::op(k, {s.e}, slot0()), s.extras});
                break;
            case Kind::MulConst:
                for (int y : lic) {
                    if (!fallback && m.is_var_label(y))
                        continue;  // c*x is already the variable leaf
                    if (!fallback && static_cast<Kind>(y + 1) == Kind::MulConst)
                        continue;
                    for (auto& s : child(y, budget - 1, extras))
                        out.push_back({Expr::op(k, {s.e}, slot0()), s.extras});
                }
                break;
            case Kind::ScaledAdd:
            case Kind::ScaledMul: {
                std::vector<Shape> opts = k == Kind::ScaledAdd
                                              ? term_options(k, lic, budget, extras)
                                              : factor_options(lic, budget, extras);
                int tmax = std::min(cfg.add_mul_self_limit + 1, 2 + extras);
                for (int t = 2; t <= tmax && !opts.empty(); ++t) {
                    std::vector<std::size_t> idx(t, 0);
                    while (true) {
                        if (--fuel <= 0) break;
                        int used = t - 2;
                        for (std::size_t i : idx) used += opts[i].extras;
                        if (used <= extras) {
                            std::vector<ExprPtr> parts;
                            for (std::size_t i : idx) parts.push_back(opts[i].e);
                            ExprPtr e = k == Kind::ScaledAdd ? build_add(parts)
                                                             : build_mul(parts);
                            out.push_back({e, used});
                        }
                        // next non-decreasing index vector
                        int j = t - 1;
                        while (j >= 0 && idx[j] + 1 == opts.size()) --j;
                        if (j < 0) break;
                        ++idx[j];
                        for (int l = j + 1; l < t; ++l) idx[l] = idx[j];
                    }
                }
                break;
            }
        }
        path.pop_back();
        return out;
    }

    // slot-scaled term options for an add or add-const node; the caller has
    // already pushed the consuming kind on the path
    std::vector<Shape> term_options(Kind consumer, const std::vector<int>& lic,
                                    int budget, int extras) {
        std::vector<Shape> opts;
        for (int y : lic) {
            if (m.is_var_label(y)) {
                opts.push_back({leaf(y - kNumKinds + 1), 0});
                continue;
            }
            Kind ck = static_cast<Kind>(y + 1);
            // sub-sums, additive constants, and scalar wraps flatten into the
            // consuming node's own constant positions
            if (ck == Kind::ScaledAdd && consumer == Kind::ScaledAdd) continue;
            if (ck == Kind::AddConst || ck == Kind::MulConst) continue;
            for (auto& s : node(ck, budget - 1, extras)) {
                bool scaled = ck == Kind::ScaledMul || ck == Kind::ScaledAdd;
                opts.push_back({scaled ? s.e
                                       : Expr::op(Kind::MulConst, {s.e}, slot0()),
                                s.extras});
            }
        }
        return opts;
    }

    // bare factor options for a mul node
    std::vector<Shape> factor_options(const std::vector<int>& lic, int budget,
                                      int extras) {
        std::vector<Shape> opts;
        for (int y : lic) {
            if (m.is_var_label(y)) {
                opts.push_back({Expr::variable(y - kNumKinds + 1), 0});
                continue;
            }
            Kind ck = static_cast<Kind>(y + 1);
            if (ck == Kind::ScaledMul || ck == Kind::MulConst) continue;
            for (auto& s : node(ck, budget - 1, extras)) opts.push_back(s);
        }
        return opts;
    }
};

const Expr* at_path(const Expr& e, const std::vector<int>& p) {
    const Expr* cur = &e;
    for (int i : p) {
        if (cur->tag != Expr::Tag::Op || i >= static_cast<int>(cur->kids.size()))
            throw std::out_of_range("bad placeholder path");
        cur = cur->kids[i].get();
    }
    return cur;
}

int chain_length(const Expr& top) {
    Kind k = top.kind;
    int n = 1;
    const Expr* cur = &top;
    while (cur->kids.size() == 2 && cur->kids[1]->tag == Expr::Tag::Op &&
           cur->kids[1]->kind == k) {
        ++n;
        cur = cur->kids[1].get();
    }
    return n + 1;  // the terminal child holds the last term/factor
}

void scan_rec(const Expr& e, std::vector<int>& p, Kind from, int limit,
              std::vector<std::vector<int>>& out) {
    if (e.tag != Expr::Tag::Op) return;
    if (is_chain(e.kind)) {
        if (e.kind != from && chain_length(e) <= limit) out.push_back(p);
        p.push_back(0);
        scan_rec(*e.kids[0], p, Kind::ScaledAdd == e.kind ? Kind::MulConst : e.kind,
                 limit, out);
        p.back() = 1;
        scan_rec(*e.kids[1], p, e.kind, limit, out);
        p.pop_back();
        return;
    }
    for (std::size_t i = 0; i < e.kids.size(); ++i) {
        p.push_back(static_cast<int>(i));
        scan_rec(*e.kids[i], p, e.kind, limit, out);
        p.pop_back();
    }
}

std::vector<std::vector<int>> scan_placeholders(const Expr& e, const SearchConfig& cfg) {
    std::vector<std::vector<int>> out;
    std::vector<int> p;
    scan_rec(e, p, Kind::AddConst, cfg.add_mul_self_limit, out);
    return out;
}

// append one element (scaled term for add, bare factor for mul) to the chain at p
ExprPtr append_at(const Expr& e, const std::vector<int>& p, std::size_t at,
                  const ExprPtr& element) {
    if (at < p.size()) {
        std::vector<ExprPtr> kids = e.kids;
        kids[p[at]] = append_at(*e.kids[p[at]], p, at + 1, element);
        return Expr::op(e.kind, std::move(kids), e.param);
    }
    Kind k = e.kind;
    if (k == Kind::ScaledAdd) {
        std::vector<ExprPtr> terms;
        const Expr* cur = &e;
        while (cur->tag == Expr::Tag::Op && cur->kind == k && cur->param &&
               !cur->param->is_slot && cur->param->value == 1.0) {
            terms.push_back(cur->kids[0]);
            cur = cur->kids[1].get();
        }
        terms.push_back(std::make_shared<Expr>(*cur));
        terms.push_back(element);
        return build_add(terms);
    }
    if (k == Kind::ScaledMul) {
        std::optional<ConstParam> coeff = e.param;
        std::vector<ExprPtr> factors = {e.kids[0]};
        const Expr* cur = e.kids[1].get();
        while (cur->tag == Expr::Tag::Op && cur->kind == k && cur->param &&
               !cur->param->is_slot && cur->param->value == 1.0) {
            factors.push_back(cur->kids[0]);
            cur = cur->kids[1].get();
        }
        factors.push_back(std::make_shared<Expr>(*cur));
        factors.push_back(element);
        ExprPtr acc = factors.back();
        for (std::size_t i = factors.size() - 1; i-- > 1;)
            acc = Expr::op(k, {factors[i], acc}, one());
        return Expr::op(k, {factors[0], acc}, coeff);
    }
    throw std::invalid_argument("placeholder does not point at an add/mul node");
}

std::vector<Kind> kinds_along(const Expr& root, const std::vector<int>& p) {
    std::vector<Kind> out;
    const Expr* cur = &root;
    for (std::size_t i = 0; i <= p.size(); ++i) {
        if (cur->tag == Expr::Tag::Op &&
            (out.empty() || out.back() != cur->kind || !is_chain(cur->kind)))
            out.push_back(cur->kind);
        if (i < p.size()) cur = cur->kids[p[i]].get();
    }
    return out;
}

}  // namespace

bool check_nesting(const std::vector<Kind>& path, const SearchConfig& cfg) {
    int kind_count[kNumKinds + 1] = {0};
    int class_count[5] = {0};
    for (std::size_t i = 0; i < path.size(); ++i) {
        Kind k = path[i];
        int c = restricted_class(k);
        if (c) {
            ++class_count[c];
            if (!cfg.allow_cross_class_nesting) {
                if (class_count[c] > 1) return false;
            } else {
                if (i > 0 && restricted_class(path[i - 1]) == c) return false;
                if (class_count[c] > cfg.add_mul_self_limit) return false;
            }
        } else {
            // 1/(1/u) cancels outright, so direct inverse nesting is sterile
            if (k == Kind::Inv && i > 0 && path[i - 1] == Kind::Inv) return false;
            if (++kind_count[static_cast<int>(k)] > cfg.add_mul_self_limit)
                return false;
        }
    }
    return true;
}

std::string skeleton_key(const Expr& e) {
    ExprPtr cur = canonicalize(e);
    std::string best;
    for (int i = 0; i < 8; ++i) {
        cur = canonicalize(*renumber_slots(*cur));
        std::string s = canonical_string(*cur);
        if (s == best) break;
        if (best.empty() || s < best) best = s;
    }
    return best;
}

SkeletonStream::SkeletonStream(const AdjacencyMatrix& m, SearchConfig cfg)
    : m_(m), cfg_(cfg), roots_(root_candidates(m)) {}

void SkeletonStream::fill_round() {
    ++round_;
    Gen g{m_, cfg_, 200000, {}};
    int emitted = 0;
    for (Kind r : roots_) {
        auto shapes = g.node(r, round_, cfg_.max_expansions);
        // simpler candidates first: fewer extra terms ahead of richer ones,
        // lexicographic generation order within a tier
        std::stable_sort(shapes.begin(), shapes.end(),
                         [](const Shape& a, const Shape& b) {
                             return a.extras < b.extras;
                         });
        for (auto& sh : shapes) {
            if (emitted >= cfg_.max_candidates_per_round) return;
            int next = 0;
            ExprPtr e = uniquify(*sh.e, next);
            if (!seen_.insert(skeleton_key(*e)).second) continue;
            queue_.push_back(
                {e, scan_placeholders(*e, cfg_), r, round_, sh.extras});
            ++emitted;
        }
    }
}

std::optional<SkeletonCandidate> SkeletonStream::next() {
    while (queue_.empty() && round_ < cfg_.max_depth) fill_round();
    if (queue_.empty()) return std::nullopt;
    SkeletonCandidate c = std::move(queue_.front());
    queue_.pop_front();
    return c;
}

std::vector<SkeletonCandidate> search(const AdjacencyMatrix& m,
                                      const SearchConfig& cfg, int max_total) {
    SkeletonStream st(m, cfg);
    std::vector<SkeletonCandidate> out;
    while (static_cast<int>(out.size()) < max_total) {
        auto c = st.next();
        if (!c) break;
        out.push_back(std::move(*c));
    }
    return out;
}

std::vector<SkeletonCandidate> expand_placeholder(const SkeletonCandidate& s,
                                                  const AdjacencyMatrix& m,
                                                  const SearchConfig& cfg) {
    std::vector<SkeletonCandidate> out;
    if (s.expansions >= cfg.max_expansions) return out;
    std::set<std::string> seen;
    for (const auto& p : s.placeholders) {
        const Expr* node = at_path(*s.expr, p);
        if (node->tag != Expr::Tag::Op || !is_chain(node->kind)) continue;
        if (chain_length(*node) > cfg.add_mul_self_limit) continue;
        std::vector<Kind> kpath = kinds_along(*s.expr, p);
        Gen g{m, cfg, 50000, kpath};
        int budget = std::max(1, cfg.max_depth - static_cast<int>(kpath.size()));
        auto opts = node->kind == Kind::ScaledAdd
                        ? g.term_options(Kind::ScaledAdd, g.licensed(node->kind),
                                         budget + 1, 0)
                        : g.factor_options(g.licensed(node->kind), budget + 1, 0);
        for (auto& opt : opts) {
            ExprPtr ne = append_at(*s.expr, p, 0, opt.e);
            int next = 0;
            ne = uniquify(*ne, next);
            if (!seen.insert(skeleton_key(*ne)).second) continue;
            out.push_back({ne, scan_placeholders(*ne, cfg), s.root, s.round,
                           s.expansions + 1});
        }
    }
    return out;
}

namespace {

ExprPtr fs(const Expr& e, bool scaled, int& next);

ExprPtr fs_scale(const Expr& e, int& next) {
    // slot-scaled form of one add term / wrapped single factor
    if (e.tag == Expr::Tag::Op &&
        (e.kind == Kind::ScaledMul || e.kind == Kind::MulConst ||
         e.kind == Kind::ScaledAdd))
        return fs(e, false, next);
    ExprPtr core = fs(e, true, next);
    return Expr::op(Kind::MulConst, {core}, ConstParam::of_slot(next++));
}

ExprPtr fs(const Expr& e, bool scaled, int& next) {
    switch (e.tag) {
        case Expr::Tag::Variable:
            if (scaled) return std::make_shared<Expr>(e);
            return Expr::op(Kind::MulConst, {std::make_shared<Expr>(e)},
                            ConstParam::of_slot(next++));
        case Expr::Tag::ConstValue:
        case Expr::Tag::ConstSlot:
            return Expr::slot_ref(next++);
        case Expr::Tag::Op:
            break;
    }
    switch (e.kind) {
        case Kind::ScaledAdd: {
            std::vector<ExprPtr> terms;  // each pre-scaled, as the search emits
            const Expr* cur = &e;
            while (cur->tag == Expr::Tag::Op && cur->kind == Kind::ScaledAdd) {
                terms.push_back(fs_scale(*cur->kids[0], next));
                cur = cur->kids[1].get();
            }
            terms.push_back(fs_scale(*cur, next));
            return build_add(terms);
        }
        case Kind::ScaledMul: {
            int coeff = next++;
            std::vector<ExprPtr> factors;
            const Expr* cur = &e;
            while (cur->tag == Expr::Tag::Op && cur->kind == Kind::ScaledMul) {
                factors.push_back(fs(*cur->kids[0], true, next));
                cur = cur->kids[1].get();
            }
            factors.push_back(fs(*cur, true, next));
            ExprPtr acc = factors.back();
            for (std::size_t i = factors.size() - 1; i-- > 1;)
                acc = Expr::op(Kind::ScaledMul, {factors[i], acc}, one());
            return Expr::op(Kind::ScaledMul, {factors[0], acc},
                            ConstParam::of_slot(coeff));
        }
        case Kind::Inv:
        case Kind::Sin:
        case Kind::Cos:
        case Kind::Exp:
        case Kind::Log:
            return Expr::op(e.kind, {fs(*e.kids[0], false, next)});
        case Kind::PowHi:
        case Kind::PowLo: {
            ConstParam p = *e.param;
            if (p.is_slot) p = ConstParam::of_slot(next++);
            return Expr::op(e.kind, {fs(*e.kids[0], false, next)}, p);
        }
        case Kind::AddConst:
            return Expr::op(Kind::AddConst, {fs(*e.kids[0], false, next)},
                            ConstParam::of_slot(next++));
        case Kind::MulConst:
            return Expr::op(Kind::MulConst, {fs(*e.kids[0], true, next)},
                            ConstParam::of_slot(next++));
    }
    return nullptr;
}

}  // namespace

ExprPtr full_skeleton(const Expr& e) {
    ExprPtr canon = canonicalize(e);
    int next = 0;
    return fs(*canon, false, next);
}

std::string render(const SkeletonCandidate& s) {
    std::vector<std::vector<int>> paths = s.placeholders;
    std::sort(paths.begin(), paths.end(),
              [](const auto& a, const auto& b) { return a > b; });
    ExprPtr e = s.expr;
    const int kHoleVar = 99;
    for (const auto& p : paths)
        e = append_at(*e, p, 0, Expr::variable(kHoleVar));
    std::string t = serialize(*e);
    const std::string needle = "x_99";
    for (std::size_t pos; (pos = t.find(needle)) != std::string::npos;)
        t.replace(pos, needle.size(), "⟨hole⟩");
    return t;
}

}  // namespace ofnet
