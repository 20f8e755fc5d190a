#pragma once

#include <deque>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ofnet/opgraph.hpp"

namespace ofnet {

struct SearchConfig {
    int max_expansions = 2;        // extra add/mul terms beyond the binary base
    int add_mul_self_limit = 3;    // per-path repetitions of each scale/add kind
    int max_candidates_per_round = 200;
    int max_depth = 8;
    bool strict = false;                    // no fallbacks for defective matrices
    bool allow_cross_class_nesting = false; // same-class nesting across add/mul
};

struct SkeletonCandidate {
    ExprPtr expr;  // slots only, no literal constants
    // paths (child-index chains from the root) to add/mul nodes that can still
    // take an extra term; ignored during constant optimization
    std::vector<std::vector<int>> placeholders;
    Kind root = Kind::ScaledAdd;  // root kind the search started from
    int round = 0;                // depth round that produced the candidate
    int expansions = 0;           // extra terms consumed so far
};

// True when the root-to-leaf kind path respects the nesting rules: the four
// restricted classes {sin,cos}, {pow-hi,pow-lo}, {exp}, {log} may not repeat
// on a path (with allow_cross_class_nesting, only directly nested repeats are
// banned and on-path occurrences are counted against add_mul_self_limit); the
// scale/add kinds may each appear at most add_mul_self_limit times.
bool check_nesting(const std::vector<Kind>& path, const SearchConfig& cfg);

// Ordered lazy stream of skeleton candidates decoded from the matrix.
// Deterministic given (m, cfg); empty when the matrix offers no root.
class SkeletonStream {
public:
    SkeletonStream(const AdjacencyMatrix& m, SearchConfig cfg = {});
    std::optional<SkeletonCandidate> next();

private:
    void fill_round();
    AdjacencyMatrix m_;
    SearchConfig cfg_;
    std::vector<Kind> roots_;
    int round_ = 0;
    std::deque<SkeletonCandidate> queue_;
    std::set<std::string> seen_;
};

// Convenience: collect up to max_total candidates from the stream.
std::vector<SkeletonCandidate> search(const AdjacencyMatrix& m,
                                      const SearchConfig& cfg = {},
                                      int max_total = 200);

// Replace one placeholder of s with an independently searched extra term;
// empty when the expansion budget is exhausted or no placeholder remains.
std::vector<SkeletonCandidate> expand_placeholder(const SkeletonCandidate& s,
                                                  const AdjacencyMatrix& m,
                                                  const SearchConfig& cfg = {});

// The fully slotted skeleton of an expression: one free slot per structural
// constant position (add-term coefficients, product/scalar coefficients,
// additive constants) and every variable consumed through the c*x leaf form.
// Numeric pow exponents are kept. This is the shape the search emits for the
// expression's own oracle matrix.
ExprPtr full_skeleton(const Expr& e);

// Canonical comparison key for skeletons: canonicalization and slot
// renumbering iterated to a fixpoint so structurally equal skeletons with
// different slot ids map to the same string.
std::string skeleton_key(const Expr& e);

// Serialization with placeholders rendered as ⟨hole⟩.
std::string render(const SkeletonCandidate& s);

}  // namespace ofnet
