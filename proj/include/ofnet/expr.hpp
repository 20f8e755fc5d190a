#pragma once

#include <complex>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ofnet {

// The eleven operator kinds.  Indices match the engine's operator table:
//  1  c*u1+u2        2  c*u1*u2      3  1/u          4  sin(u)
//  5  cos(u)         6  exp(u)       7  pow(u,c) c>1 8  pow(u,c) 0<c<1
//  9  log(u)        10  u+c         11  c*u
enum class Kind : int {
    ScaledAdd = 1,
    ScaledMul = 2,
    Inv = 3,
    Sin = 4,
    Cos = 5,
    Exp = 6,
    PowHi = 7,
    PowLo = 8,
    Log = 9,
    AddConst = 10,
    MulConst = 11,
};

constexpr int kNumKinds = 11;

struct KindInfo {
    int arity;        // number of function children
    bool has_const;   // carries one tunable constant
    const char* name;
};
const KindInfo& kind_info(Kind k);

// Input-range thresholds for the guarded operators.
struct Thresholds {
    double exp_max = 20.0;   // exp: |u| <= exp_max
    double log_min = 1e-6;   // log: u >= log_min
    double inv_min = 1e-6;   // inv: |u| >= inv_min
    double pow_max = 10.0;   // pow (c>1): |u| <= pow_max
};

struct Interval {
    double lo, hi;
};

struct EvalDomain {
    // var_ranges[i] holds the interval union for x_{i+1}
    std::vector<std::vector<Interval>> var_ranges;
    Thresholds th;

    static EvalDomain uniform(int n_vars, double lo, double hi);
    int n_vars() const { return static_cast<int>(var_ranges.size()); }
};

// Tunable constant of an operator: either an unresolved slot or a value.
struct ConstParam {
    bool is_slot = false;
    int slot = -1;
    double value = 0.0;

    static ConstParam of_slot(int id) { return {true, id, 0.0}; }
    static ConstParam of_value(double v) { return {false, -1, v}; }
};

class Expr;
using ExprPtr = std::shared_ptr<const Expr>;

class Expr {
public:
    enum class Tag { Variable, ConstValue, ConstSlot, Op };

    Tag tag = Tag::ConstValue;
    int var = 0;                      // Variable: 1-based index
    double value = 0.0;               // ConstValue
    int slot = -1;                    // ConstSlot
    Kind kind = Kind::ScaledAdd;      // Op
    std::optional<ConstParam> param;  // Op, when kind has a constant
    std::vector<ExprPtr> kids;        // Op children (arity-checked)

    static ExprPtr variable(int index);
    static ExprPtr constant(double v);
    static ExprPtr slot_ref(int id);
    static ExprPtr op(Kind k, std::vector<ExprPtr> kids,
                      std::optional<ConstParam> c = std::nullopt);
};

struct ParseError : std::runtime_error {
    std::size_t offset;
    ParseError(const std::string& msg, std::size_t off);
};

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : EvalError {
    Kind op_kind;
    double input;
    DomainError(Kind k, double u);
};

struct UnboundSlotError : EvalError {
    int slot;
    explicit UnboundSlotError(int s);
};

ExprPtr parse(const std::string& text);

// Whitespace-free textual form; parseable by parse().
std::string serialize(const Expr& e);

// Slot bindings indexed by slot id; accessing an id >= size() throws.
using Bindings = std::vector<double>;

double evaluate(const Expr& e, std::span<const double> vars,
                const Bindings& consts, const EvalDomain& domain);

// No real-domain guards; principal branches.  Division by exact zero throws.
std::complex<double> evaluate_complex(const Expr& e,
                                      std::span<const std::complex<double>> vars,
                                      const Bindings& consts);

template <typename T>
struct DiffResult {
    T value{};
    std::vector<T> grad;       // d value / d slot_k, length n_slots
    bool fallback_requested = false;  // near a domain guard; prefer finite differences
};

DiffResult<double> differentiate_constants(const Expr& e,
                                           std::span<const double> vars,
                                           const Bindings& consts,
                                           const EvalDomain& domain,
                                           int n_slots);

DiffResult<std::complex<double>> differentiate_constants_complex(
    const Expr& e, std::span<const std::complex<double>> vars,
    const Bindings& consts, int n_slots);

// Deterministic normal form: flattened/sorted commutative chains, folded
// numeric arithmetic, merged scale factors.  Idempotent.
ExprPtr canonicalize(const Expr& e);
std::string canonical_string(const Expr& e);
int char_length(const Expr& e);

// Slots renumbered 0.. in first-occurrence order of the serialization.
ExprPtr renumber_slots(const Expr& e);

enum class Equiv { No, Yes, Indeterminate };

Equiv numeric_equivalent(const Expr& a, const Expr& b, const EvalDomain& domain,
                         int n_samples, double tol);

// ConstValues and non-exponent operator constants become fresh slots;
// a bare variable becomes the leaf form c*x_i.
ExprPtr skeletonize(const Expr& e, int* n_slots_out = nullptr);

int num_slots(const Expr& e);              // max slot id + 1
int num_vars(const Expr& e);               // max variable index
std::vector<int> exponent_slots(const Expr& e);  // slots used as pow exponents

// Substitute slot values, producing a fully bound expression.
ExprPtr bind_constants(const Expr& e, const Bindings& consts);

}  // namespace ofnet
