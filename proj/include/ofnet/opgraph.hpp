#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ofnet/expr.hpp"

namespace ofnet {

// Kind-level operator graph as a boolean adjacency matrix.  Labels are the
// eleven operator kinds followed by one variable kind per variable.  Entry
// [x,y] set means kind x consumes the output of kind y.  Multiple instances
// of one kind collapse onto a single node, so decoding is not a bijection.
class AdjacencyMatrix {
public:
    explicit AdjacencyMatrix(int n_var_kinds = 2);

    int n_vars() const { return nv_; }
    int n_labels() const { return kNumKinds + nv_; }

    bool at(int x, int y) const { return m_[x * n_labels() + y] != 0; }
    void set(int x, int y, bool v) { m_[x * n_labels() + y] = v ? 1 : 0; }

    static int kind_label(Kind k) { return static_cast<int>(k) - 1; }
    int var_label(int var_index) const { return kNumKinds + var_index - 1; }
    bool is_var_label(int i) const { return i >= kNumKinds; }
    std::string label_name(int i) const;

    int edge_count() const;
    bool operator==(const AdjacencyMatrix& o) const = default;

private:
    int nv_;
    std::vector<std::uint8_t> m_;
};

struct DegreeProfile {
    // indexed by label; out = row popcount, in = column popcount
    std::vector<int> out_deg, in_deg;
};

AdjacencyMatrix encode_expression(const Expr& e, int n_var_kinds = 2);

DegreeProfile degree_profile(const AdjacencyMatrix& m);

// Ranked root candidates: tier 1 holds operators with in-degree zero and
// out-degree nonzero, tier 2 those with out-degree exceeding a nonzero
// in-degree.  Within a tier: (out-in) descending, kind index ascending.
std::vector<Kind> root_candidates(const AdjacencyMatrix& m);

enum class DiagKind { DanglingOperator, MultipleRoots, UnreachableKind };

struct Diagnostic {
    DiagKind kind;
    Kind op;  // meaningful for DanglingOperator / UnreachableKind
    std::string message;
};

std::vector<Diagnostic> validate_matrix(const AdjacencyMatrix& m);

// Text (JSON) serialization; round-trips bit-exactly.
std::string matrix_to_text(const AdjacencyMatrix& m);
AdjacencyMatrix matrix_from_text(const std::string& text);

}  // namespace ofnet
