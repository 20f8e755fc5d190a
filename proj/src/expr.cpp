#include "ofnet/expr.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

namespace ofnet {

const KindInfo& kind_info(Kind k) {
    static const KindInfo table[] = {
        {2, true, "scaled-add"},   // 1: c*u1+u2
        {2, true, "scaled-mul"},   // 2: c*u1*u2
        {1, false, "inv"},         // 3
        {1, false, "sin"},         // 4
        {1, false, "cos"},         // 5
        {1, false, "exp"},         // 6
        {1, true, "pow-hi"},       // 7: pow(u,c), c>1
        {1, true, "pow-lo"},       // 8: pow(u,c), 0<c<1
        {1, false, "log"},         // 9
        {1, true, "add-const"},    // 10: u+c
        {1, true, "mul-const"},    // 11: c*u
    };
    return table[static_cast<int>(k) - 1];
}

EvalDomain EvalDomain::uniform(int n_vars, double lo, double hi) {
    EvalDomain d;
    d.var_ranges.assign(n_vars, {Interval{lo, hi}});
    return d;
}

ExprPtr Expr::variable(int index) {
    auto e = std::make_shared<Expr>();
    e->tag = Tag::Variable;
    e->var = index;
    return e;
}

ExprPtr Expr::constant(double v) {
    auto e = std::make_shared<Expr>();
    e->tag = Tag::ConstValue;
    e->value = v;
    return e;
}

ExprPtr Expr::slot_ref(int id) {
    auto e = std::make_shared<Expr>();
    e->tag = Tag::ConstSlot;
    e->slot = id;
    return e;
}

ExprPtr Expr::op(Kind k, std::vector<ExprPtr> kids, std::optional<ConstParam> c) {
    const KindInfo& info = kind_info(k);
    if (static_cast<int>(kids.size()) != info.arity)
        throw std::invalid_argument(std::string("arity mismatch for ") + info.name);
    if (info.has_const && !c)
        throw std::invalid_argument(std::string(info.name) + " requires a constant");
    if (!info.has_const && c)
        throw std::invalid_argument(std::string(info.name) + " takes no constant");
    auto e = std::make_shared<Expr>();
    e->tag = Tag::Op;
    e->kind = k;
    e->param = c;
    e->kids = std::move(kids);
    return e;
}

ParseError::ParseError(const std::string& msg, std::size_t off)
    : std::runtime_error(msg + " at offset " + std::to_string(off)), offset(off) {}

DomainError::DomainError(Kind k, double u)
    : EvalError(std::string("domain violation: ") + kind_info(k).name +
                " at input " + std::to_string(u)),
      op_kind(k), input(u) {}

UnboundSlotError::UnboundSlotError(int s)
    : EvalError("unbound constant slot c" + std::to_string(s + 1)), slot(s) {}

// ---------------------------------------------------------------------------
// Parsing

namespace {

std::string num_str(double v) {
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

struct Parser {
    const std::string& s;
    std::size_t pos = 0;

    explicit Parser(const std::string& text) : s(text) {}

    void skip_ws() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }
    char peek() {
        skip_ws();
        return pos < s.size() ? s[pos] : '\0';
    }
    bool eat(char c) {
        if (peek() == c) { ++pos; return true; }
        return false;
    }
    void expect(char c) {
        if (!eat(c)) throw ParseError(std::string("expected '") + c + "'", pos);
    }

    bool is_const(const ExprPtr& e) const { return e->tag == Expr::Tag::ConstValue; }

    ExprPtr mk_add(ExprPtr a, ExprPtr b) {
        if (is_const(a) && is_const(b)) return Expr::constant(a->value + b->value);
        if (is_const(b)) return Expr::op(Kind::AddConst, {a}, ConstParam::of_value(b->value));
        if (is_const(a)) return Expr::op(Kind::AddConst, {b}, ConstParam::of_value(a->value));
        return Expr::op(Kind::ScaledAdd, {a, b}, ConstParam::of_value(1.0));
    }
    ExprPtr mk_sub(ExprPtr a, ExprPtr b) {
        if (is_const(a) && is_const(b)) return Expr::constant(a->value - b->value);
        if (is_const(b)) return Expr::op(Kind::AddConst, {a}, ConstParam::of_value(-b->value));
        if (is_const(a)) {
            auto neg = Expr::op(Kind::MulConst, {b}, ConstParam::of_value(-1.0));
            return Expr::op(Kind::AddConst, {neg}, ConstParam::of_value(a->value));
        }
        // a - b == (-1)*b + a
        return Expr::op(Kind::ScaledAdd, {b, a}, ConstParam::of_value(-1.0));
    }
    ExprPtr mk_mul(ExprPtr a, ExprPtr b) {
        if (is_const(a) && is_const(b)) return Expr::constant(a->value * b->value);
        if (is_const(a)) return Expr::op(Kind::MulConst, {b}, ConstParam::of_value(a->value));
        if (is_const(b)) return Expr::op(Kind::MulConst, {a}, ConstParam::of_value(b->value));
        return Expr::op(Kind::ScaledMul, {a, b}, ConstParam::of_value(1.0));
    }
    ExprPtr mk_div(ExprPtr a, ExprPtr b) {
        if (is_const(a) && is_const(b)) return Expr::constant(a->value / b->value);
        if (is_const(b)) return Expr::op(Kind::MulConst, {a}, ConstParam::of_value(1.0 / b->value));
        auto invb = Expr::op(Kind::Inv, {b});
        if (is_const(a)) return Expr::op(Kind::MulConst, {invb}, ConstParam::of_value(a->value));
        return Expr::op(Kind::ScaledMul, {a, invb}, ConstParam::of_value(1.0));
    }
    ExprPtr mk_pow(ExprPtr a, ExprPtr b, std::size_t at) {
        if (b->tag == Expr::Tag::ConstSlot)
            return Expr::op(Kind::PowHi, {a}, ConstParam::of_slot(b->slot));
        if (!is_const(b)) {
            // pow(a, b) == exp(b*log(a))
            auto loga = Expr::op(Kind::Log, {a});
            auto prod = is_const(a)
                ? mk_mul(b, loga)
                : Expr::op(Kind::ScaledMul, {b, loga}, ConstParam::of_value(1.0));
            return Expr::op(Kind::Exp, {prod});
        }
        double c = b->value;
        if (is_const(a)) return Expr::constant(std::pow(a->value, c));
        if (c == 0.0) return Expr::constant(1.0);
        if (c == 1.0) return a;
        if (c == -1.0) return Expr::op(Kind::Inv, {a});
        if (c > 1.0) return Expr::op(Kind::PowHi, {a}, ConstParam::of_value(c));
        if (c > 0.0) return Expr::op(Kind::PowLo, {a}, ConstParam::of_value(c));
        // negative exponent: 1/pow(a,-c)
        return Expr::op(Kind::Inv, {mk_pow(a, Expr::constant(-c), at)});
    }

    ExprPtr parse_expr() {
        ExprPtr e = parse_term();
        for (;;) {
            if (eat('+')) e = mk_add(e, parse_term());
            else if (eat('-')) e = mk_sub(e, parse_term());
            else break;
        }
        return e;
    }

    ExprPtr parse_term() {
        ExprPtr e = parse_factor();
        for (;;) {
            if (eat('*')) e = mk_mul(e, parse_factor());
            else if (eat('/')) e = mk_div(e, parse_factor());
            else break;
        }
        return e;
    }

    ExprPtr parse_factor() {
        char c = peek();
        if (c == '-') { ++pos; return mk_mul(Expr::constant(-1.0), parse_factor()); }
        if (c == '(') {
            ++pos;
            ExprPtr e = parse_expr();
            expect(')');
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c))) return parse_ident();
        throw ParseError("unexpected character", pos);
    }

    ExprPtr parse_number() {
        skip_ws();
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) throw ParseError("malformed number", pos);
        pos += static_cast<std::size_t>(end - begin);
        return Expr::constant(v);
    }

    ExprPtr parse_ident() {
        skip_ws();
        std::size_t start = pos;
        while (pos < s.size() &&
               (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
            ++pos;
        std::string name = s.substr(start, pos - start);

        if (name == "pi") return Expr::constant(M_PI);

        // variables: x1, x_1, ...
        if (name.size() >= 2 && name[0] == 'x') {
            std::size_t d = (name[1] == '_') ? 2 : 1;
            if (d < name.size() &&
                std::all_of(name.begin() + d, name.end(),
                            [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
                int idx = std::stoi(name.substr(d));
                if (idx < 1) throw ParseError("variable index must be >= 1", start);
                return Expr::variable(idx);
            }
        }
        // unresolved constant slots: c1, c2, ...
        if (name.size() >= 2 && name[0] == 'c' &&
            std::all_of(name.begin() + 1, name.end(),
                        [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
            int id = std::stoi(name.substr(1));
            if (id < 1) throw ParseError("slot index must be >= 1", start);
            return Expr::slot_ref(id - 1);
        }

        if (peek() != '(')
            throw ParseError("unknown identifier '" + name + "'", start);
        ++pos;
        ExprPtr a = parse_expr();
        ExprPtr b;
        if (eat(',')) b = parse_expr();
        std::size_t close_at = pos;
        expect(')');

        auto need1 = [&] { if (b) throw ParseError(name + " takes one argument", start); };
        auto need2 = [&] { if (!b) throw ParseError(name + " takes two arguments", start); };

        if (name == "sin") { need1(); return Expr::op(Kind::Sin, {a}); }
        if (name == "cos") { need1(); return Expr::op(Kind::Cos, {a}); }
        if (name == "exp") { need1(); return Expr::op(Kind::Exp, {a}); }
        if (name == "log") { need1(); return Expr::op(Kind::Log, {a}); }
        if (name == "inv") { need1(); return Expr::op(Kind::Inv, {a}); }
        if (name == "sqrt") {
            need1();
            if (is_const(a)) return Expr::constant(std::sqrt(a->value));
            return Expr::op(Kind::PowLo, {a}, ConstParam::of_value(0.5));
        }
        if (name == "cot") {
            need1();
            // cos(u)/sin(u)
            auto invsin = Expr::op(Kind::Inv, {Expr::op(Kind::Sin, {a})});
            return Expr::op(Kind::ScaledMul, {Expr::op(Kind::Cos, {a}), invsin},
                            ConstParam::of_value(1.0));
        }
        if (name == "pow") { need2(); return mk_pow(a, b, close_at); }
        if (name == "div") { need2(); return mk_div(a, b); }
        throw ParseError("unknown function '" + name + "'", start);
    }
};

}  // namespace

ExprPtr parse(const std::string& text) {
    Parser p(text);
    ExprPtr e = p.parse_expr();
    p.skip_ws();
    if (p.pos != text.size()) throw ParseError("trailing input", p.pos);
    return e;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

// precedence levels: 1 add, 2 mul, 3 atom
std::string ser(const Expr& e, int parent_level);

std::string param_str(const ConstParam& p) {
    return p.is_slot ? "c" + std::to_string(p.slot + 1) : num_str(p.value);
}

std::string wrap(std::string s, int level, int parent_level) {
    if (level < parent_level || (!s.empty() && s[0] == '-' && parent_level >= 2))
        return "(" + std::move(s) + ")";
    return s;
}

std::string join_add(const std::string& a, const std::string& b) {
    if (!b.empty() && b[0] == '-') return a + b;
    return a + "+" + b;
}

std::string ser(const Expr& e, int parent_level) {
    switch (e.tag) {
        case Expr::Tag::Variable:
            return "x_" + std::to_string(e.var);
        case Expr::Tag::ConstValue: {
            std::string s = num_str(e.value);
            return wrap(std::move(s), 3, parent_level);
        }
        case Expr::Tag::ConstSlot:
            return "c" + std::to_string(e.slot + 1);
        case Expr::Tag::Op:
            break;
    }
    const ConstParam* p = e.param ? &*e.param : nullptr;
    auto scaled = [&](const ExprPtr& u) -> std::string {
        if (!p->is_slot && p->value == 1.0) return ser(*u, 2);
        if (!p->is_slot && p->value == -1.0) return "-" + ser(*u, 3);
        return param_str(*p) + "*" + ser(*u, 3);
    };
    switch (e.kind) {
        case Kind::ScaledAdd:
            return wrap(join_add(scaled(e.kids[0]), ser(*e.kids[1], 1)), 1, parent_level);
        case Kind::ScaledMul: {
            std::string s;
            if (!p->is_slot && p->value == 1.0)
                s = ser(*e.kids[0], 2) + "*" + ser(*e.kids[1], 2);
            else if (!p->is_slot && p->value == -1.0)
                s = "-" + ser(*e.kids[0], 3) + "*" + ser(*e.kids[1], 2);
            else
                s = param_str(*p) + "*" + ser(*e.kids[0], 3) + "*" + ser(*e.kids[1], 2);
            return wrap(std::move(s), 2, parent_level);
        }
        case Kind::Inv:
            return "inv(" + ser(*e.kids[0], 1) + ")";
        case Kind::Sin:
            return "sin(" + ser(*e.kids[0], 1) + ")";
        case Kind::Cos:
            return "cos(" + ser(*e.kids[0], 1) + ")";
        case Kind::Exp:
            return "exp(" + ser(*e.kids[0], 1) + ")";
        case Kind::Log:
            return "log(" + ser(*e.kids[0], 1) + ")";
        case Kind::PowHi:
        case Kind::PowLo:
            return "pow(" + ser(*e.kids[0], 1) + "," + param_str(*p) + ")";
        case Kind::AddConst: {
            std::string c = p->is_slot ? "+" + param_str(*p)
                                       : (p->value < 0 ? num_str(p->value) : "+" + num_str(p->value));
            return wrap(ser(*e.kids[0], 1) + c, 1, parent_level);
        }
        case Kind::MulConst:
            return wrap(scaled(e.kids[0]), 2, parent_level);
    }
    return {};
}

}  // namespace

std::string serialize(const Expr& e) { return ser(e, 1); }

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double slot_value(const Bindings& consts, int slot) {
    if (slot < 0 || slot >= static_cast<int>(consts.size())) throw UnboundSlotError(slot);
    return consts[slot];
}

double const_of(const ConstParam& p, const Bindings& consts) {
    return p.is_slot ? slot_value(consts, p.slot) : p.value;
}

double eval_real(const Expr& e, std::span<const double> vars, const Bindings& consts,
                 const Thresholds& th) {
    switch (e.tag) {
        case Expr::Tag::Variable:
            if (e.var < 1 || e.var > static_cast<int>(vars.size()))
                throw EvalError("variable x_" + std::to_string(e.var) + " not assigned");
            return vars[e.var - 1];
        case Expr::Tag::ConstValue:
            return e.value;
        case Expr::Tag::ConstSlot:
            return slot_value(consts, e.slot);
        case Expr::Tag::Op:
            break;
    }
    auto kid = [&](int i) { return eval_real(*e.kids[i], vars, consts, th); };
    switch (e.kind) {
        case Kind::ScaledAdd:
            return const_of(*e.param, consts) * kid(0) + kid(1);
        case Kind::ScaledMul:
            return const_of(*e.param, consts) * kid(0) * kid(1);
        case Kind::Inv: {
            double u = kid(0);
            if (std::abs(u) < th.inv_min) throw DomainError(Kind::Inv, u);
            return 1.0 / u;
        }
        case Kind::Sin:
            return std::sin(kid(0));
        case Kind::Cos:
            return std::cos(kid(0));
        case Kind::Exp: {
            double u = kid(0);
            if (std::abs(u) > th.exp_max) throw DomainError(Kind::Exp, u);
            return std::exp(u);
        }
        case Kind::PowHi: {
            double u = kid(0);
            double c = const_of(*e.param, consts);
            if (std::abs(u) > th.pow_max) throw DomainError(Kind::PowHi, u);
            if (u < 0.0 && c != std::floor(c)) throw DomainError(Kind::PowHi, u);
            return std::pow(u, c);
        }
        case Kind::PowLo: {
            double u = kid(0);
            if (u < 0.0) throw DomainError(Kind::PowLo, u);
            return std::pow(u, const_of(*e.param, consts));
        }
        case Kind::Log: {
            double u = kid(0);
            if (u < th.log_min) throw DomainError(Kind::Log, u);
            return std::log(u);
        }
        case Kind::AddConst:
            return kid(0) + const_of(*e.param, consts);
        case Kind::MulConst:
            return const_of(*e.param, consts) * kid(0);
    }
    return 0.0;
}

std::complex<double> eval_cplx(const Expr& e, std::span<const std::complex<double>> vars,
                               const Bindings& consts) {
    using C = std::complex<double>;
    switch (e.tag) {
        case Expr::Tag::Variable:
            if (e.var < 1 || e.var > static_cast<int>(vars.size()))
                throw EvalError("variable x_" + std::to_string(e.var) + " not assigned");
            return vars[e.var - 1];
        case Expr::Tag::ConstValue:
            return C(e.value, 0.0);
        case Expr::Tag::ConstSlot:
            return C(slot_value(consts, e.slot), 0.0);
        case Expr::Tag::Op:
            break;
    }
    auto kid = [&](int i) { return eval_cplx(*e.kids[i], vars, consts); };
    switch (e.kind) {
        case Kind::ScaledAdd:
            return const_of(*e.param, consts) * kid(0) + kid(1);
        case Kind::ScaledMul:
            return const_of(*e.param, consts) * kid(0) * kid(1);
        case Kind::Inv: {
            C u = kid(0);
            if (u == 0.0) throw DomainError(Kind::Inv, 0.0);
            return 1.0 / u;
        }
        case Kind::Sin:
            return std::sin(kid(0));
        case Kind::Cos:
            return std::cos(kid(0));
        case Kind::Exp:
            return std::exp(kid(0));
        case Kind::PowHi:
        case Kind::PowLo: {
            C u = kid(0);
            double c = const_of(*e.param, consts);
            if (u == 0.0) return C(0.0, 0.0);
            return std::pow(u, C(c, 0.0));
        }
        case Kind::Log: {
            C u = kid(0);
            if (u == 0.0) throw DomainError(Kind::Log, 0.0);
            return std::log(u);
        }
        case Kind::AddConst:
            return kid(0) + const_of(*e.param, consts);
        case Kind::MulConst:
            return const_of(*e.param, consts) * kid(0);
    }
    return {};
}

}  // namespace

double evaluate(const Expr& e, std::span<const double> vars, const Bindings& consts,
                const EvalDomain& domain) {
    return eval_real(e, vars, consts, domain.th);
}

std::complex<double> evaluate_complex(const Expr& e,
                                      std::span<const std::complex<double>> vars,
                                      const Bindings& consts) {
    return eval_cplx(e, vars, consts);
}

// ---------------------------------------------------------------------------
// Differentiation with respect to constant slots

namespace {

template <typename T>
struct DV {
    T v{};
    std::vector<T> g;
};

template <typename T>
struct DiffCtx {
    std::span<const T> vars;
    const Bindings& consts;
    const Thresholds* th;  // nullptr: complex mode, no guards
    int n_slots;
    bool fallback = false;
    static constexpr double kEdge = 1e-7;
};

template <typename T>
DV<T> diff_node(const Expr& e, DiffCtx<T>& cx) {
    DV<T> r;
    r.g.assign(cx.n_slots, T{});
    switch (e.tag) {
        case Expr::Tag::Variable:
            r.v = cx.vars[e.var - 1];
            return r;
        case Expr::Tag::ConstValue:
            r.v = T(e.value);
            return r;
        case Expr::Tag::ConstSlot:
            r.v = T(slot_value(cx.consts, e.slot));
            if (e.slot < cx.n_slots) r.g[e.slot] = T(1.0);
            return r;
        case Expr::Tag::Op:
            break;
    }

    double cval = 0.0;
    int cslot = -1;
    if (e.param) {
        cval = const_of(*e.param, cx.consts);
        if (e.param->is_slot && e.param->slot < cx.n_slots) cslot = e.param->slot;
    }
    auto add_cgrad = [&](std::vector<T>& g, T factor) {
        if (cslot >= 0) g[cslot] += factor;
    };
    auto real_part = [](T x) {
        if constexpr (std::is_same_v<T, double>) return x;
        else return x.real();
    };
    auto abs_of = [](T x) {
        if constexpr (std::is_same_v<T, double>) return std::abs(x);
        else return std::abs(x);
    };

    switch (e.kind) {
        case Kind::ScaledAdd: {
            DV<T> a = diff_node(*e.kids[0], cx), b = diff_node(*e.kids[1], cx);
            r.v = T(cval) * a.v + b.v;
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = T(cval) * a.g[k] + b.g[k];
            add_cgrad(r.g, a.v);
            return r;
        }
        case Kind::ScaledMul: {
            DV<T> a = diff_node(*e.kids[0], cx), b = diff_node(*e.kids[1], cx);
            r.v = T(cval) * a.v * b.v;
            for (int k = 0; k < cx.n_slots; ++k)
                r.g[k] = T(cval) * (a.g[k] * b.v + a.v * b.g[k]);
            add_cgrad(r.g, a.v * b.v);
            return r;
        }
        case Kind::Inv: {
            DV<T> a = diff_node(*e.kids[0], cx);
            if (cx.th) {
                double u = real_part(a.v);
                if (std::abs(u) < cx.th->inv_min) throw DomainError(Kind::Inv, u);
                if (std::abs(u) < cx.th->inv_min + DiffCtx<T>::kEdge) cx.fallback = true;
            } else if (a.v == T{}) {
                throw DomainError(Kind::Inv, 0.0);
            }
            r.v = T(1.0) / a.v;
            T d = T(-1.0) / (a.v * a.v);
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = d * a.g[k];
            return r;
        }
        case Kind::Sin: {
            DV<T> a = diff_node(*e.kids[0], cx);
            r.v = std::sin(a.v);
            T d = std::cos(a.v);
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = d * a.g[k];
            return r;
        }
        case Kind::Cos: {
            DV<T> a = diff_node(*e.kids[0], cx);
            r.v = std::cos(a.v);
            T d = -std::sin(a.v);
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = d * a.g[k];
            return r;
        }
        case Kind::Exp: {
            DV<T> a = diff_node(*e.kids[0], cx);
            if (cx.th) {
                double u = real_part(a.v);
                if (std::abs(u) > cx.th->exp_max) throw DomainError(Kind::Exp, u);
                if (std::abs(u) > cx.th->exp_max - DiffCtx<T>::kEdge) cx.fallback = true;
            }
            r.v = std::exp(a.v);
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = r.v * a.g[k];
            return r;
        }
        case Kind::PowHi:
        case Kind::PowLo: {
            DV<T> a = diff_node(*e.kids[0], cx);
            if (cx.th) {
                double u = real_part(a.v);
                if (e.kind == Kind::PowHi) {
                    if (std::abs(u) > cx.th->pow_max) throw DomainError(Kind::PowHi, u);
                    if (u < 0.0 && cval != std::floor(cval)) throw DomainError(Kind::PowHi, u);
                } else if (u < 0.0) {
                    throw DomainError(Kind::PowLo, u);
                }
                if (std::abs(u) < DiffCtx<T>::kEdge) cx.fallback = true;
            }
            if (a.v == T{}) {
                r.v = T{};
                // derivative limit at the origin; flagged for finite differences
                cx.fallback = true;
                return r;
            }
            r.v = std::pow(a.v, T(cval));
            T d = T(cval) * std::pow(a.v, T(cval - 1.0));
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = d * a.g[k];
            if (cslot >= 0) {
                if constexpr (std::is_same_v<T, double>) {
                    if (a.v > 0.0) {
                        r.g[cslot] += r.v * std::log(a.v);
                    } else {
                        cx.fallback = true;
                    }
                } else {
                    r.g[cslot] += r.v * std::log(a.v);
                }
            }
            (void)abs_of;
            return r;
        }
        case Kind::Log: {
            DV<T> a = diff_node(*e.kids[0], cx);
            if (cx.th) {
                double u = real_part(a.v);
                if (u < cx.th->log_min) throw DomainError(Kind::Log, u);
                if (u < cx.th->log_min + DiffCtx<T>::kEdge) cx.fallback = true;
            } else if (a.v == T{}) {
                throw DomainError(Kind::Log, 0.0);
            }
            r.v = std::log(a.v);
            T d = T(1.0) / a.v;
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = d * a.g[k];
            return r;
        }
        case Kind::AddConst: {
            DV<T> a = diff_node(*e.kids[0], cx);
            r.v = a.v + T(cval);
            r.g = std::move(a.g);
            add_cgrad(r.g, T(1.0));
            return r;
        }
        case Kind::MulConst: {
            DV<T> a = diff_node(*e.kids[0], cx);
            r.v = T(cval) * a.v;
            for (int k = 0; k < cx.n_slots; ++k) r.g[k] = T(cval) * a.g[k];
            add_cgrad(r.g, a.v);
            return r;
        }
    }
    return r;
}

}  // namespace

DiffResult<double> differentiate_constants(const Expr& e, std::span<const double> vars,
                                           const Bindings& consts,
                                           const EvalDomain& domain, int n_slots) {
    DiffCtx<double> cx{vars, consts, &domain.th, n_slots};
    DV<double> dv = diff_node(e, cx);
    return {dv.v, std::move(dv.g), cx.fallback};
}

DiffResult<std::complex<double>> differentiate_constants_complex(
    const Expr& e, std::span<const std::complex<double>> vars, const Bindings& consts,
    int n_slots) {
    DiffCtx<std::complex<double>> cx{vars, consts, nullptr, n_slots};
    DV<std::complex<double>> dv = diff_node(e, cx);
    return {dv.v, std::move(dv.g), cx.fallback};
}

// ---------------------------------------------------------------------------
// Canonicalization

namespace {

struct CF;
using CFP = std::shared_ptr<const CF>;

struct CF {
    enum T { Num, Var, Slot, Add, Mul, Pow, Fun } t;
    double num = 0.0;
    int idx = 0;
    Kind fun = Kind::Sin;
    bool lo = false;  // Pow with slot exponent: pow-lo (0<c<1) vs pow-hi
    CFP base, expo;
    std::vector<CFP> kids;

    static CFP mknum(double v) { auto f = std::make_shared<CF>(); f->t = Num; f->num = v; return f; }
    static CFP mkvar(int i) { auto f = std::make_shared<CF>(); f->t = Var; f->idx = i; return f; }
    static CFP mkslot(int i) { auto f = std::make_shared<CF>(); f->t = Slot; f->idx = i; return f; }
    static CFP mkadd(std::vector<CFP> k) { auto f = std::make_shared<CF>(); f->t = Add; f->kids = std::move(k); return f; }
    static CFP mkmul(std::vector<CFP> k) { auto f = std::make_shared<CF>(); f->t = Mul; f->kids = std::move(k); return f; }
    static CFP mkpow(CFP b, CFP e, bool lo = false) { auto f = std::make_shared<CF>(); f->t = Pow; f->base = std::move(b); f->expo = std::move(e); f->lo = lo; return f; }
    static CFP mkfun(Kind k, CFP a) { auto f = std::make_shared<CF>(); f->t = Fun; f->fun = k; f->base = std::move(a); return f; }

    bool scalar() const { return t == Num || t == Slot; }
};

CFP param_cf(const ConstParam& p) {
    return p.is_slot ? CF::mkslot(p.slot) : CF::mknum(p.value);
}

CFP to_cf(const Expr& e) {
    switch (e.tag) {
        case Expr::Tag::Variable: return CF::mkvar(e.var);
        case Expr::Tag::ConstValue: return CF::mknum(e.value);
        case Expr::Tag::ConstSlot: return CF::mkslot(e.slot);
        case Expr::Tag::Op: break;
    }
    switch (e.kind) {
        case Kind::ScaledAdd:
            return CF::mkadd({CF::mkmul({param_cf(*e.param), to_cf(*e.kids[0])}),
                              to_cf(*e.kids[1])});
        case Kind::ScaledMul:
            return CF::mkmul({param_cf(*e.param), to_cf(*e.kids[0]), to_cf(*e.kids[1])});
        case Kind::Inv:
            return CF::mkpow(to_cf(*e.kids[0]), CF::mknum(-1.0));
        case Kind::Sin:
        case Kind::Cos:
        case Kind::Exp:
        case Kind::Log:
            return CF::mkfun(e.kind, to_cf(*e.kids[0]));
        case Kind::PowHi:
        case Kind::PowLo:
            return CF::mkpow(to_cf(*e.kids[0]), param_cf(*e.param),
                             e.kind == Kind::PowLo);
        case Kind::AddConst:
            return CF::mkadd({to_cf(*e.kids[0]), param_cf(*e.param)});
        case Kind::MulConst:
            return CF::mkmul({param_cf(*e.param), to_cf(*e.kids[0])});
    }
    return CF::mknum(0.0);
}

std::string cf_str(const CF& f) {
    switch (f.t) {
        case CF::Num: return "#" + num_str(f.num);
        case CF::Var: return "x" + std::to_string(f.idx);
        case CF::Slot: return "s" + std::to_string(f.idx);
        case CF::Pow:
            return std::string(f.lo && f.expo->t == CF::Slot ? "powlo(" : "pow(") +
                   cf_str(*f.base) + "," + cf_str(*f.expo) + ")";
        case CF::Fun: return std::string(kind_info(f.fun).name) + "(" + cf_str(*f.base) + ")";
        case CF::Add:
        case CF::Mul: {
            std::string s = f.t == CF::Add ? "+(" : "*(";
            for (std::size_t i = 0; i < f.kids.size(); ++i) {
                if (i) s += ",";
                s += cf_str(*f.kids[i]);
            }
            return s + ")";
        }
    }
    return {};
}

int cf_rank(const CF& f) {
    switch (f.t) {
        case CF::Fun: return static_cast<int>(f.fun);
        case CF::Var: return 12;
        case CF::Slot: return 13;
        case CF::Pow: return 14;
        case CF::Add: return 15;
        case CF::Mul: return 16;
        case CF::Num: return 17;
    }
    return 18;
}

// structural string with slot ids masked, so ordering cannot depend on how
// the slots happen to be numbered
std::string cf_str_blind(const CF& f) {
    switch (f.t) {
        case CF::Num: return "#" + num_str(f.num);
        case CF::Var: return "x" + std::to_string(f.idx);
        case CF::Slot: return "s";
        case CF::Pow:
            return std::string(f.lo && f.expo->t == CF::Slot ? "powlo(" : "pow(") +
                   cf_str_blind(*f.base) + "," + cf_str_blind(*f.expo) + ")";
        case CF::Fun:
            return std::string(kind_info(f.fun).name) + "(" + cf_str_blind(*f.base) + ")";
        case CF::Add:
        case CF::Mul: {
            std::string s = f.t == CF::Add ? "+(" : "*(";
            for (std::size_t i = 0; i < f.kids.size(); ++i) {
                if (i) s += ",";
                s += cf_str_blind(*f.kids[i]);
            }
            return s + ")";
        }
    }
    return {};
}

bool cf_less(const CFP& a, const CFP& b) {
    int ra = cf_rank(*a), rb = cf_rank(*b);
    if (ra != rb) return ra < rb;
    if (a->t == CF::Num) return a->num < b->num;
    if (a->t == CF::Var || a->t == CF::Slot) return a->idx < b->idx;
    std::string sa = cf_str_blind(*a), sb = cf_str_blind(*b);
    if (sa != sb) return sa < sb;
    return cf_str(*a) < cf_str(*b);  // deterministic final tie-break
}

CFP cf_norm(const CFP& f0) {
    const CF& f = *f0;
    switch (f.t) {
        case CF::Num:
        case CF::Var:
        case CF::Slot:
            return f0;
        case CF::Fun: {
            CFP a = cf_norm(f.base);
            if (a->t == CF::Num) {
                double v = a->num;
                double r;
                switch (f.fun) {
                    case Kind::Sin: r = std::sin(v); break;
                    case Kind::Cos: r = std::cos(v); break;
                    case Kind::Exp: r = std::exp(v); break;
                    case Kind::Log: r = v > 0 ? std::log(v) : std::nan(""); break;
                    default: r = std::nan("");
                }
                if (std::isfinite(r)) return CF::mknum(r);
            }
            return CF::mkfun(f.fun, a);
        }
        case CF::Pow: {
            CFP b = cf_norm(f.base), e = cf_norm(f.expo);
            if (e->t == CF::Num) {
                if (e->num == 1.0) return b;
                if (e->num == 0.0) return CF::mknum(1.0);
                if (b->t == CF::Num) {
                    double r = std::pow(b->num, e->num);
                    if (std::isfinite(r)) return CF::mknum(r);
                }
                if (b->t == CF::Pow && b->expo->t == CF::Num)
                    return cf_norm(CF::mkpow(b->base, CF::mknum(b->expo->num * e->num)));
            }
            return CF::mkpow(b, e, f.lo);
        }
        case CF::Add: {
            std::vector<CFP> out, slots;
            double csum = 0.0;
            bool has_num = false;
            std::vector<CFP> stack(f.kids.rbegin(), f.kids.rend());
            while (!stack.empty()) {
                CFP k = cf_norm(stack.back());
                stack.pop_back();
                if (k->t == CF::Add) {
                    for (auto it = k->kids.rbegin(); it != k->kids.rend(); ++it)
                        stack.push_back(*it);
                } else if (k->t == CF::Num) {
                    csum += k->num;
                    has_num = true;
                } else if (k->t == CF::Slot) {
                    slots.push_back(k);
                } else {
                    out.push_back(k);
                }
            }
            std::sort(out.begin(), out.end(), cf_less);
            std::sort(slots.begin(), slots.end(), cf_less);
            out.insert(out.end(), slots.begin(), slots.end());
            if (out.empty()) return CF::mknum(csum);
            if (has_num && csum != 0.0) out.push_back(CF::mknum(csum));
            if (out.size() == 1) return out[0];
            return CF::mkadd(std::move(out));
        }
        case CF::Mul: {
            std::vector<CFP> out, slots;
            double cprod = 1.0;
            std::vector<CFP> stack(f.kids.rbegin(), f.kids.rend());
            while (!stack.empty()) {
                CFP k = cf_norm(stack.back());
                stack.pop_back();
                if (k->t == CF::Mul) {
                    for (auto it = k->kids.rbegin(); it != k->kids.rend(); ++it)
                        stack.push_back(*it);
                } else if (k->t == CF::Num) {
                    cprod *= k->num;
                } else if (k->t == CF::Slot) {
                    slots.push_back(k);
                } else {
                    out.push_back(k);
                }
            }
            if (cprod == 0.0) return CF::mknum(0.0);
            std::sort(out.begin(), out.end(), cf_less);
            std::sort(slots.begin(), slots.end(), cf_less);
            std::vector<CFP> kids;
            if (cprod != 1.0 || (out.empty() && slots.empty()))
                kids.push_back(CF::mknum(cprod));
            kids.insert(kids.end(), slots.begin(), slots.end());
            kids.insert(kids.end(), out.begin(), out.end());
            if (kids.size() == 1) return kids[0];
            return CF::mkmul(std::move(kids));
        }
    }
    return f0;
}

ExprPtr cf_to_expr(const CFP& f);

// split a product term into (scale param, remaining factor expression)
std::pair<ConstParam, ExprPtr> split_coeff(const CFP& t) {
    if (t->t == CF::Mul && !t->kids.empty() &&
        (t->kids[0]->t == CF::Num || t->kids[0]->t == CF::Slot)) {
        ConstParam p = t->kids[0]->t == CF::Num ? ConstParam::of_value(t->kids[0]->num)
                                                : ConstParam::of_slot(t->kids[0]->idx);
        std::vector<CFP> rest(t->kids.begin() + 1, t->kids.end());
        CFP r = rest.size() == 1 ? rest[0] : CF::mkmul(std::move(rest));
        return {p, cf_to_expr(r)};
    }
    return {ConstParam::of_value(1.0), cf_to_expr(t)};
}

ExprPtr cf_to_expr(const CFP& f) {
    switch (f->t) {
        case CF::Num: return Expr::constant(f->num);
        case CF::Var: return Expr::variable(f->idx);
        case CF::Slot: return Expr::slot_ref(f->idx);
        case CF::Fun: return Expr::op(f->fun, {cf_to_expr(f->base)});
        case CF::Pow: {
            ExprPtr b = cf_to_expr(f->base);
            if (f->expo->t == CF::Slot)
                return Expr::op(f->lo ? Kind::PowLo : Kind::PowHi, {b},
                                ConstParam::of_slot(f->expo->idx));
            if (f->expo->t == CF::Num) {
                double e = f->expo->num;
                if (e == -1.0) return Expr::op(Kind::Inv, {b});
                if (e > 1.0) return Expr::op(Kind::PowHi, {b}, ConstParam::of_value(e));
                if (e > 0.0 && e < 1.0)
                    return Expr::op(Kind::PowLo, {b}, ConstParam::of_value(e));
                if (e < 0.0) {
                    ExprPtr p = e == -1.0 ? b
                        : (-e > 1.0 ? Expr::op(Kind::PowHi, {b}, ConstParam::of_value(-e))
                                    : Expr::op(Kind::PowLo, {b}, ConstParam::of_value(-e)));
                    return Expr::op(Kind::Inv, {p});
                }
                return b;  // e == 1 (not reached after normalization)
            }
            // general exponent: exp(e*log(b))
            ExprPtr loga = Expr::op(Kind::Log, {b});
            ExprPtr prod = Expr::op(Kind::ScaledMul, {cf_to_expr(f->expo), loga},
                                    ConstParam::of_value(1.0));
            return Expr::op(Kind::Exp, {prod});
        }
        case CF::Mul: {
            std::vector<ConstParam> scalars;
            std::size_t i = 0;
            while (i < f->kids.size() && f->kids[i]->scalar()) {
                scalars.push_back(f->kids[i]->t == CF::Num
                                      ? ConstParam::of_value(f->kids[i]->num)
                                      : ConstParam::of_slot(f->kids[i]->idx));
                ++i;
            }
            std::vector<ExprPtr> factors;
            for (; i < f->kids.size(); ++i) factors.push_back(cf_to_expr(f->kids[i]));
            if (factors.empty())
                return scalars.size() == 1 && !scalars[0].is_slot
                           ? Expr::constant(scalars[0].value)
                           : Expr::constant(1.0);  // not reached after normalization
            ExprPtr acc;
            if (factors.size() == 1) {
                acc = factors[0];
            } else {
                acc = factors.back();
                for (std::size_t j = factors.size() - 1; j-- > 1;)
                    acc = Expr::op(Kind::ScaledMul, {factors[j], acc},
                                   ConstParam::of_value(1.0));
                ConstParam head = scalars.empty() ? ConstParam::of_value(1.0) : scalars.back();
                if (!scalars.empty()) scalars.pop_back();
                acc = Expr::op(Kind::ScaledMul, {factors[0], acc}, head);
            }
            for (auto it = scalars.rbegin(); it != scalars.rend(); ++it)
                acc = Expr::op(Kind::MulConst, {acc}, *it);
            return acc;
        }
        case CF::Add: {
            std::vector<CFP> terms = f->kids;
            std::vector<ConstParam> tail;  // trailing slot/num terms become u+c wraps
            while (!terms.empty() && terms.back()->scalar()) {
                tail.push_back(terms.back()->t == CF::Num
                                   ? ConstParam::of_value(terms.back()->num)
                                   : ConstParam::of_slot(terms.back()->idx));
                terms.pop_back();
            }
            ExprPtr acc;
            if (terms.empty()) {
                acc = Expr::constant(0.0);
            } else {
                acc = cf_to_expr(terms.back());
                for (std::size_t j = terms.size() - 1; j-- > 0;) {
                    auto [p, rest] = split_coeff(terms[j]);
                    acc = Expr::op(Kind::ScaledAdd, {rest, acc}, p);
                }
            }
            for (auto it = tail.rbegin(); it != tail.rend(); ++it)
                acc = Expr::op(Kind::AddConst, {acc}, *it);
            return acc;
        }
    }
    return Expr::constant(0.0);
}

}  // namespace

ExprPtr canonicalize(const Expr& e) { return cf_to_expr(cf_norm(to_cf(e))); }

std::string canonical_string(const Expr& e) { return serialize(*canonicalize(e)); }

int char_length(const Expr& e) { return static_cast<int>(canonical_string(e).size()); }

// ---------------------------------------------------------------------------
// Slot and variable helpers

namespace {

void walk(const Expr& e, const std::function<void(const Expr&)>& fn) {
    fn(e);
    if (e.tag == Expr::Tag::Op)
        for (const auto& k : e.kids) walk(*k, fn);
}

ExprPtr map_slots(const Expr& e, const std::function<int(int)>& remap) {
    switch (e.tag) {
        case Expr::Tag::Variable:
        case Expr::Tag::ConstValue:
            return std::make_shared<Expr>(e);
        case Expr::Tag::ConstSlot:
            return Expr::slot_ref(remap(e.slot));
        case Expr::Tag::Op:
            break;
    }
    std::vector<ExprPtr> kids;
    for (const auto& k : e.kids) kids.push_back(map_slots(*k, remap));
    std::optional<ConstParam> p = e.param;
    if (p && p->is_slot) p = ConstParam::of_slot(remap(p->slot));
    return Expr::op(e.kind, std::move(kids), p);
}

}  // namespace

int num_slots(const Expr& e) {
    int mx = -1;
    walk(e, [&](const Expr& n) {
        if (n.tag == Expr::Tag::ConstSlot) mx = std::max(mx, n.slot);
        if (n.tag == Expr::Tag::Op && n.param && n.param->is_slot)
            mx = std::max(mx, n.param->slot);
    });
    return mx + 1;
}

int num_vars(const Expr& e) {
    int mx = 0;
    walk(e, [&](const Expr& n) {
        if (n.tag == Expr::Tag::Variable) mx = std::max(mx, n.var);
    });
    return mx;
}

std::vector<int> exponent_slots(const Expr& e) {
    std::vector<int> out;
    walk(e, [&](const Expr& n) {
        if (n.tag == Expr::Tag::Op && (n.kind == Kind::PowHi || n.kind == Kind::PowLo) &&
            n.param && n.param->is_slot)
            out.push_back(n.param->slot);
    });
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

ExprPtr renumber_slots(const Expr& e) {
    std::map<int, int> seen;
    // first-occurrence order of a left-to-right traversal (slot params visited
    // after the node's children, matching serialization order of pow exponents)
    std::function<void(const Expr&)> visit = [&](const Expr& n) {
        if (n.tag == Expr::Tag::ConstSlot && !seen.count(n.slot)) {
            int id = static_cast<int>(seen.size());
            seen[n.slot] = id;
        }
        if (n.tag == Expr::Tag::Op) {
            if (n.param && n.param->is_slot && !seen.count(n.param->slot)) {
                int id = static_cast<int>(seen.size());
                seen[n.param->slot] = id;
            }
            for (const auto& k : n.kids) visit(*k);
        }
    };
    visit(e);
    return map_slots(e, [&](int s) { return seen.count(s) ? seen[s] : s; });
}

ExprPtr bind_constants(const Expr& e, const Bindings& consts) {
    switch (e.tag) {
        case Expr::Tag::Variable:
        case Expr::Tag::ConstValue:
            return std::make_shared<Expr>(e);
        case Expr::Tag::ConstSlot:
            return Expr::constant(slot_value(consts, e.slot));
        case Expr::Tag::Op:
            break;
    }
    std::vector<ExprPtr> kids;
    for (const auto& k : e.kids) kids.push_back(bind_constants(*k, consts));
    std::optional<ConstParam> p = e.param;
    if (p && p->is_slot) p = ConstParam::of_value(slot_value(consts, p->slot));
    return Expr::op(e.kind, std::move(kids), p);
}

ExprPtr skeletonize(const Expr& e, int* n_slots_out) {
    int next = 0;
    std::function<ExprPtr(const Expr&)> skel = [&](const Expr& n) -> ExprPtr {
        switch (n.tag) {
            case Expr::Tag::Variable:
                return std::make_shared<Expr>(n);
            case Expr::Tag::ConstValue:
                return Expr::slot_ref(next++);
            case Expr::Tag::ConstSlot:
                return Expr::slot_ref(next++);
            case Expr::Tag::Op:
                break;
        }
        std::vector<ExprPtr> kids;
        for (const auto& k : n.kids) kids.push_back(skel(*k));
        std::optional<ConstParam> p = n.param;
        if (p && n.kind != Kind::PowHi && n.kind != Kind::PowLo)
            p = ConstParam::of_slot(next++);
        return Expr::op(n.kind, std::move(kids), p);
    };
    ExprPtr out;
    if (e.tag == Expr::Tag::Variable) {
        out = Expr::op(Kind::MulConst, {std::make_shared<Expr>(e)},
                       ConstParam::of_slot(next++));
    } else {
        out = skel(e);
    }
    if (n_slots_out) *n_slots_out = next;
    return out;
}

// ---------------------------------------------------------------------------
// Numeric equivalence

namespace {

double halton(int index, int base) {
    double f = 1.0, r = 0.0;
    int i = index;
    while (i > 0) {
        f /= base;
        r += f * (i % base);
        i /= base;
    }
    return r;
}

double pick_in_union(const std::vector<Interval>& ivs, double u) {
    double total = 0.0;
    for (const auto& iv : ivs) total += iv.hi - iv.lo;
    double t = u * total;
    for (const auto& iv : ivs) {
        double len = iv.hi - iv.lo;
        if (t <= len) return iv.lo + t;
        t -= len;
    }
    return ivs.back().hi;
}

}  // namespace

Equiv numeric_equivalent(const Expr& a, const Expr& b, const EvalDomain& domain,
                         int n_samples, double tol) {
    static const int bases[] = {2, 3, 5, 7};
    const int nv = domain.n_vars();
    Bindings empty;
    int valid = 0;
    for (int i = 0; i < n_samples; ++i) {
        std::vector<double> pt(nv);
        for (int v = 0; v < nv; ++v)
            pt[v] = pick_in_union(domain.var_ranges[v], halton(i + 1, bases[v % 4]));
        double va, vb;
        try {
            va = evaluate(a, pt, empty, domain);
            vb = evaluate(b, pt, empty, domain);
        } catch (const EvalError&) {
            continue;
        }
        if (!std::isfinite(va) || !std::isfinite(vb)) continue;
        ++valid;
        if (std::abs(va - vb) > tol * (1.0 + std::abs(vb))) return Equiv::No;
    }
    if (valid * 2 < n_samples) return Equiv::Indeterminate;
    return Equiv::Yes;
}

}  // namespace ofnet
