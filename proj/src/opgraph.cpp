#include "ofnet/opgraph.hpp"

#include <algorithm>
#include <deque>

#include <json.hpp>

namespace ofnet {

AdjacencyMatrix::AdjacencyMatrix(int n_var_kinds)
    : nv_(n_var_kinds), m_(static_cast<std::size_t>(kNumKinds + n_var_kinds) *
                               (kNumKinds + n_var_kinds),
                           0) {}

std::string AdjacencyMatrix::label_name(int i) const {
    if (i < kNumKinds) return kind_info(static_cast<Kind>(i + 1)).name;
    return "x_" + std::to_string(i - kNumKinds + 1);
}

int AdjacencyMatrix::edge_count() const {
    int n = 0;
    for (auto b : m_) n += b;
    return n;
}

namespace {

// Head label of a canonical subexpression: the node kind that produces its
// value, or the variable label for leaves.  The elemental input c*x_i is a
// variable leaf, not a mul-const node.  Returns -1 for bare constants.
int head_label(const Expr& e, const AdjacencyMatrix& m) {
    switch (e.tag) {
        case Expr::Tag::Variable:
            return m.var_label(e.var);
        case Expr::Tag::ConstValue:
        case Expr::Tag::ConstSlot:
            return -1;
        case Expr::Tag::Op:
            break;
    }
    if (e.kind == Kind::MulConst && e.kids[0]->tag == Expr::Tag::Variable)
        return m.var_label(e.kids[0]->var);
    return AdjacencyMatrix::kind_label(e.kind);
}

// Same-kind chains of the four scale/add kinds are the canonical encoding of
// n-ary sums and products; they collapse to a single node without self-edges.
bool chain_kind(Kind k) {
    return k == Kind::ScaledAdd || k == Kind::ScaledMul || k == Kind::AddConst ||
           k == Kind::MulConst;
}

// Add terms carry their coefficients in the add node itself (c*u1+u2), so a
// scalar wrap around a term is not a mul-const node of its own.
const Expr& term_core(const Expr& e) {
    const Expr* c = &e;
    while (c->tag == Expr::Tag::Op && c->kind == Kind::MulConst &&
           c->kids[0]->tag != Expr::Tag::Variable)
        c = c->kids[0].get();
    return *c;
}

void collect_edges(const Expr& e, AdjacencyMatrix& m) {
    if (e.tag != Expr::Tag::Op) return;
    if (e.kind == Kind::MulConst && e.kids[0]->tag == Expr::Tag::Variable)
        return;  // leaf form
    bool strip = e.kind == Kind::ScaledAdd || e.kind == Kind::AddConst;
    int self = AdjacencyMatrix::kind_label(e.kind);
    for (const auto& kid : e.kids) {
        const Expr& k = strip ? term_core(*kid) : *kid;
        int h = head_label(k, m);
        if (h >= 0 && !(h == self && chain_kind(e.kind))) m.set(self, h, true);
        collect_edges(k, m);
    }
}

}  // namespace

AdjacencyMatrix encode_expression(const Expr& e, int n_var_kinds) {
    int needed = num_vars(e);
    if (needed > n_var_kinds)
        throw std::invalid_argument("expression uses more variables than the matrix holds");
    AdjacencyMatrix m(n_var_kinds);
    ExprPtr canon = canonicalize(e);
    collect_edges(*canon, m);
    return m;
}

DegreeProfile degree_profile(const AdjacencyMatrix& m) {
    DegreeProfile p;
    int n = m.n_labels();
    p.out_deg.assign(n, 0);
    p.in_deg.assign(n, 0);
    for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
            if (m.at(x, y)) {
                ++p.out_deg[x];
                ++p.in_deg[y];
            }
    return p;
}

std::vector<Kind> root_candidates(const AdjacencyMatrix& m) {
    DegreeProfile p = degree_profile(m);
    std::vector<int> tier1, tier2;
    for (int i = 0; i < kNumKinds; ++i) {
        if (p.out_deg[i] == 0) continue;
        if (p.in_deg[i] == 0) tier1.push_back(i);
        else if (p.out_deg[i] > p.in_deg[i]) tier2.push_back(i);
    }
    auto by_spread = [&](int a, int b) {
        int da = p.out_deg[a] - p.in_deg[a], db = p.out_deg[b] - p.in_deg[b];
        if (da != db) return da > db;
        return a < b;
    };
    std::sort(tier1.begin(), tier1.end(), by_spread);
    std::sort(tier2.begin(), tier2.end(), by_spread);
    std::vector<Kind> out;
    for (int i : tier1) out.push_back(static_cast<Kind>(i + 1));
    for (int i : tier2) out.push_back(static_cast<Kind>(i + 1));
    return out;
}

std::vector<Diagnostic> validate_matrix(const AdjacencyMatrix& m) {
    std::vector<Diagnostic> out;
    DegreeProfile p = degree_profile(m);

    std::vector<int> roots;
    for (int i = 0; i < kNumKinds; ++i) {
        Kind k = static_cast<Kind>(i + 1);
        if (p.in_deg[i] > 0 && p.out_deg[i] == 0)
            out.push_back({DiagKind::DanglingOperator, k,
                           std::string("operator '") + kind_info(k).name +
                               "' is consumed but has no out-edges"});
        if (p.in_deg[i] == 0 && p.out_deg[i] > 0) roots.push_back(i);
    }
    if (roots.size() > 1)
        out.push_back({DiagKind::MultipleRoots, static_cast<Kind>(roots[0] + 1),
                       std::to_string(roots.size()) + " operators have in-degree zero"});

    // reachability from the in-degree-zero roots
    std::vector<char> seen(m.n_labels(), 0);
    std::deque<int> q(roots.begin(), roots.end());
    for (int r : roots) seen[r] = 1;
    while (!q.empty()) {
        int x = q.front();
        q.pop_front();
        for (int y = 0; y < m.n_labels(); ++y)
            if (m.at(x, y) && !seen[y]) {
                seen[y] = 1;
                q.push_back(y);
            }
    }
    for (int i = 0; i < kNumKinds; ++i)
        if ((p.in_deg[i] > 0 || p.out_deg[i] > 0) && !seen[i])
            out.push_back({DiagKind::UnreachableKind, static_cast<Kind>(i + 1),
                           std::string("operator '") +
                               kind_info(static_cast<Kind>(i + 1)).name +
                               "' is not reachable from any root"});
    return out;
}

std::string matrix_to_text(const AdjacencyMatrix& m) {
    nlohmann::json j;
    std::vector<std::string> labels;
    for (int i = 0; i < m.n_labels(); ++i) labels.push_back(m.label_name(i));
    j["labels"] = labels;
    std::vector<std::vector<int>> rows;
    for (int x = 0; x < m.n_labels(); ++x) {
        std::vector<int> row;
        for (int y = 0; y < m.n_labels(); ++y) row.push_back(m.at(x, y) ? 1 : 0);
        rows.push_back(std::move(row));
    }
    j["matrix"] = rows;
    return j.dump(2) + "\n";
}

AdjacencyMatrix matrix_from_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    const auto& labels = j.at("labels");
    int n = static_cast<int>(labels.size());
    if (n < kNumKinds + 1)
        throw std::runtime_error("matrix text must carry the 11 operator labels");
    AdjacencyMatrix m(n - kNumKinds);
    const auto& rows = j.at("matrix");
    if (static_cast<int>(rows.size()) != n)
        throw std::runtime_error("matrix row count does not match labels");
    for (int x = 0; x < n; ++x) {
        if (static_cast<int>(rows[x].size()) != n)
            throw std::runtime_error("matrix is not square");
        for (int y = 0; y < n; ++y) m.set(x, y, rows[x][y].get<int>() != 0);
    }
    return m;
}

}  // namespace ofnet
