#pragma once

#include "tangfam/rational.hpp"
#include "tangfam/scalar.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tangfam {

/// Names bound to variable slots 0, 1, 2 of an expression.
struct VariableSet {
    std::array<std::string, 3> names;

    int find(std::string_view name) const
    {
        for (int i = 0; i < 3; ++i)
            if (!names[std::size_t(i)].empty() && names[std::size_t(i)] == name)
                return i;
        return -1;
    }

    /// Family germs: xi, t and the deformation parameter lam.
    static VariableSet germ() { return {{"xi", "t", "lam"}}; }
    /// Metric components on a chart with coordinates (u, v).
    static VariableSet chart() { return {{"u", "v", ""}}; }
    /// Support curves parameterized by xi.
    static VariableSet curve() { return {{"xi", "", ""}}; }
};

inline constexpr int var_xi = 0;
inline constexpr int var_t = 1;
inline constexpr int var_lam = 2;

class ParseError : public std::runtime_error {
public:
    enum class Kind { syntax, unknown_identifier, non_integer_exponent };

    ParseError(Kind kind, std::size_t position, const std::string& what)
        : std::runtime_error(what + " at position " + std::to_string(position)), kind_(kind), position_(position)
    {
    }

    Kind kind() const { return kind_; }
    std::size_t position() const { return position_; }

private:
    Kind kind_;
    std::size_t position_;
};

enum class Op { constant, variable, add, sub, mul, div, neg, pow, sin, cos, sqrt };

struct ExprNode {
    Op op = Op::constant;
    double value = 0.0;
    std::optional<Rational> exact;
    int var = -1;
    int exponent = 0;
    std::shared_ptr<const ExprNode> lhs;
    std::shared_ptr<const ExprNode> rhs;
};

/// Immutable scalar expression tree over up to three variables.
class Expr {
public:
    Expr() : Expr(constant(Rational(0))) {}

    static Expr constant(const Rational& q)
    {
        auto n = std::make_shared<ExprNode>();
        n->op = Op::constant;
        n->value = to_double(q);
        n->exact = q;
        return Expr(std::move(n));
    }

    /// Floating constant with no exact value; expressions containing one cannot be
    /// expanded by the exact backend.
    static Expr inexact(double v)
    {
        auto n = std::make_shared<ExprNode>();
        n->op = Op::constant;
        n->value = v;
        return Expr(std::move(n));
    }

    static Expr variable(int slot)
    {
        auto n = std::make_shared<ExprNode>();
        n->op = Op::variable;
        n->var = slot;
        return Expr(std::move(n));
    }

    static Expr xi() { return variable(var_xi); }
    static Expr t() { return variable(var_t); }
    static Expr lam() { return variable(var_lam); }

    const ExprNode& node() const { return *node_; }
    Op op() const { return node_->op; }

    bool is_constant() const { return node_->op == Op::constant; }
    bool is_constant(long v) const
    {
        return is_constant() && node_->exact && *node_->exact == Rational(v);
    }

    friend Expr operator+(const Expr& a, const Expr& b)
    {
        if (a.is_constant(0))
            return b;
        if (b.is_constant(0))
            return a;
        if (a.is_constant() && b.is_constant())
            return fold(a, b, Op::add);
        return binary(Op::add, a, b);
    }
    friend Expr operator-(const Expr& a, const Expr& b)
    {
        if (b.is_constant(0))
            return a;
        if (a.is_constant(0))
            return -b;
        if (a.is_constant() && b.is_constant())
            return fold(a, b, Op::sub);
        return binary(Op::sub, a, b);
    }
    friend Expr operator*(const Expr& a, const Expr& b)
    {
        if (a.is_constant(0) || b.is_constant(0))
            return constant(Rational(0));
        if (a.is_constant(1))
            return b;
        if (b.is_constant(1))
            return a;
        if (a.is_constant() && b.is_constant())
            return fold(a, b, Op::mul);
        return binary(Op::mul, a, b);
    }
    friend Expr operator/(const Expr& a, const Expr& b)
    {
        if (b.is_constant(1))
            return a;
        if (a.is_constant(0) && !b.is_constant(0))
            return a;
        if (a.is_constant() && b.is_constant() && !b.is_constant(0))
            return fold(a, b, Op::div);
        return binary(Op::div, a, b);
    }
    friend Expr operator-(const Expr& a)
    {
        if (a.is_constant()) {
            auto n = std::make_shared<ExprNode>(*a.node_);
            n->value = -n->value;
            if (n->exact)
                n->exact = -*n->exact;
            return Expr(std::move(n));
        }
        auto n = std::make_shared<ExprNode>();
        n->op = Op::neg;
        n->lhs = a.node_;
        return Expr(std::move(n));
    }

    Expr pow(int e) const
    {
        if (e == 1)
            return *this;
        if (e == 0)
            return constant(Rational(1));
        auto n = std::make_shared<ExprNode>();
        n->op = Op::pow;
        n->exponent = e;
        n->lhs = node_;
        return Expr(std::move(n));
    }

    static Expr apply(Op fn, const Expr& a)
    {
        auto n = std::make_shared<ExprNode>();
        n->op = fn;
        n->lhs = a.node_;
        return Expr(std::move(n));
    }

    /// True when no sin/cos/sqrt occurs and every constant is exact.
    bool exact_capable() const { return exact_capable(*node_); }
    bool uses_variable(int slot) const { return uses_variable(*node_, slot); }

    /// Generic recursive evaluation; `vars` holds the values of slots 0..2.
    template <class T>
    T evaluate(std::span<const T> vars) const
    {
        return eval_node<T>(*node_, vars);
    }

    double operator()(double xi, double t, double lam = 0.0) const
    {
        const std::array<double, 3> v{xi, t, lam};
        return evaluate<double>(v);
    }

    /// Replaces variable `slot` by `with`.
    Expr substitute(int slot, const Expr& with) const { return subst(node_, slot, with); }

    /// Symbolic partial derivative (no simplification beyond constant folding).
    Expr derivative(int slot) const { return diff(node_, slot); }

    std::string to_string(const VariableSet& vars = VariableSet::germ()) const
    {
        std::string out;
        print(*node_, vars, out, 0);
        return out;
    }

private:
    explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}

    static Expr binary(Op op, const Expr& a, const Expr& b)
    {
        auto n = std::make_shared<ExprNode>();
        n->op = op;
        n->lhs = a.node_;
        n->rhs = b.node_;
        return Expr(std::move(n));
    }

    static Expr fold(const Expr& a, const Expr& b, Op op)
    {
        const ExprNode& x = *a.node_;
        const ExprNode& y = *b.node_;
        if (x.exact && y.exact) {
            switch (op) {
            case Op::add: return constant(*x.exact + *y.exact);
            case Op::sub: return constant(*x.exact - *y.exact);
            case Op::mul: return constant(*x.exact * *y.exact);
            default: return constant(*x.exact / *y.exact);
            }
        }
        switch (op) {
        case Op::add: return inexact(x.value + y.value);
        case Op::sub: return inexact(x.value - y.value);
        case Op::mul: return inexact(x.value * y.value);
        default: return inexact(x.value / y.value);
        }
    }

    static bool exact_capable(const ExprNode& n)
    {
        switch (n.op) {
        case Op::constant: return n.exact.has_value();
        case Op::variable: return true;
        case Op::sin:
        case Op::cos:
        case Op::sqrt: return false;
        case Op::neg:
        case Op::pow: return exact_capable(*n.lhs);
        default: return exact_capable(*n.lhs) && exact_capable(*n.rhs);
        }
    }

    static bool uses_variable(const ExprNode& n, int slot)
    {
        if (n.op == Op::variable)
            return n.var == slot;
        if (n.op == Op::constant)
            return false;
        return uses_variable(*n.lhs, slot) || (n.rhs && uses_variable(*n.rhs, slot));
    }

    template <class T>
    static T eval_node(const ExprNode& n, std::span<const T> vars)
    {
        using ops = scalar_ops<T>;
        switch (n.op) {
        case Op::constant:
            if constexpr (requires { ops::from_constant(0.0, nullptr); })
                return ops::from_constant(n.value, n.exact ? &*n.exact : nullptr);
            else
                return constant_like(vars[0], n);
        case Op::variable: return vars[std::size_t(n.var)];
        case Op::add: return eval_node<T>(*n.lhs, vars) + eval_node<T>(*n.rhs, vars);
        case Op::sub: return eval_node<T>(*n.lhs, vars) - eval_node<T>(*n.rhs, vars);
        case Op::mul: return eval_node<T>(*n.lhs, vars) * eval_node<T>(*n.rhs, vars);
        case Op::div: return eval_node<T>(*n.lhs, vars) / eval_node<T>(*n.rhs, vars);
        case Op::neg: return -eval_node<T>(*n.lhs, vars);
        case Op::pow: return power(eval_node<T>(*n.lhs, vars), n.exponent);
        case Op::sin: return ops::sin(eval_node<T>(*n.lhs, vars));
        case Op::cos: return ops::cos(eval_node<T>(*n.lhs, vars));
        case Op::sqrt: return ops::sqrt(eval_node<T>(*n.lhs, vars));
        }
        throw std::logic_error("bad expression node");
    }

    // Series-like scalars build constants with the order of their operands.
    template <class T>
    static T constant_like(const T& like, const ExprNode& n)
    {
        using S = typename T::scalar_type;
        return T::constant(scalar_ops<S>::from_constant(n.value, n.exact ? &*n.exact : nullptr), like.order());
    }

    template <class T>
    static T power(const T& base, int e)
    {
        if constexpr (requires { base.pow(e); }) {
            return base.pow(e);
        } else {
            if (e < 0)
                return power(T(scalar_ops<T>::from_int(1)) / base, -e);
            T result = scalar_ops<T>::from_int(1);
            T b = base;
            while (e > 0) {
                if (e & 1)
                    result = result * b;
                e >>= 1;
                if (e > 0)
                    b = b * b;
            }
            return result;
        }
    }

    static Expr subst(const std::shared_ptr<const ExprNode>& n, int slot, const Expr& with)
    {
        switch (n->op) {
        case Op::constant: return Expr(n);
        case Op::variable: return n->var == slot ? with : Expr(n);
        case Op::add: return subst(n->lhs, slot, with) + subst(n->rhs, slot, with);
        case Op::sub: return subst(n->lhs, slot, with) - subst(n->rhs, slot, with);
        case Op::mul: return subst(n->lhs, slot, with) * subst(n->rhs, slot, with);
        case Op::div: return subst(n->lhs, slot, with) / subst(n->rhs, slot, with);
        case Op::neg: return -subst(n->lhs, slot, with);
        case Op::pow: return subst(n->lhs, slot, with).pow(n->exponent);
        default: return apply(n->op, subst(n->lhs, slot, with));
        }
    }

    static Expr diff(const std::shared_ptr<const ExprNode>& n, int slot)
    {
        const Expr zero = constant(Rational(0));
        switch (n->op) {
        case Op::constant: return zero;
        case Op::variable: return n->var == slot ? constant(Rational(1)) : zero;
        case Op::add: return diff(n->lhs, slot) + diff(n->rhs, slot);
        case Op::sub: return diff(n->lhs, slot) - diff(n->rhs, slot);
        case Op::mul: {
            const Expr a(n->lhs), b(n->rhs);
            return diff(n->lhs, slot) * b + a * diff(n->rhs, slot);
        }
        case Op::div: {
            const Expr a(n->lhs), b(n->rhs);
            return (diff(n->lhs, slot) * b - a * diff(n->rhs, slot)) / b.pow(2);
        }
        case Op::neg: return -diff(n->lhs, slot);
        case Op::pow: {
            const Expr a(n->lhs);
            return constant(Rational(n->exponent)) * a.pow(n->exponent - 1) * diff(n->lhs, slot);
        }
        case Op::sin: return apply(Op::cos, Expr(n->lhs)) * diff(n->lhs, slot);
        case Op::cos: return -(apply(Op::sin, Expr(n->lhs)) * diff(n->lhs, slot));
        case Op::sqrt:
            return diff(n->lhs, slot) / (constant(Rational(2)) * Expr(n));
        }
        throw std::logic_error("bad expression node");
    }

    static int precedence(const ExprNode& n)
    {
        switch (n.op) {
        case Op::add:
        case Op::sub: return 1;
        case Op::mul:
        case Op::div: return 2;
        case Op::neg: return 3;
        case Op::pow: return 4;
        case Op::constant:
            if (n.exact ? (n.exact->sign() < 0 || denominator(*n.exact) != 1) : n.value < 0)
                return 0;
            return 5;
        default: return 5;
        }
    }

    static void print(const ExprNode& n, const VariableSet& vars, std::string& out, int parent_prec, bool right = false)
    {
        const int p = precedence(n);
        const bool paren = p < parent_prec || (right && p == parent_prec && p <= 2);
        if (paren)
            out += '(';
        switch (n.op) {
        case Op::constant:
            if (n.exact) {
                out += numerator(*n.exact).str();
                if (denominator(*n.exact) != 1)
                    out += "/" + denominator(*n.exact).str();
            } else {
                char buf[40];
                std::snprintf(buf, sizeof buf, "%.17g", n.value);
                std::string s = buf;
                // Keep the literal parseable as a plain decimal.
                if (s.find_first_of("ni") != std::string::npos)
                    throw std::domain_error("non-finite constant in expression");
                out += s;
            }
            break;
        case Op::variable: out += vars.names[std::size_t(n.var)]; break;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div: {
            print(*n.lhs, vars, out, p);
            out += n.op == Op::add ? " + " : n.op == Op::sub ? " - " : n.op == Op::mul ? "*" : "/";
            print(*n.rhs, vars, out, p, true);
            break;
        }
        case Op::neg:
            out += '-';
            print(*n.lhs, vars, out, p + 1);
            break;
        case Op::pow:
            print(*n.lhs, vars, out, p + 1);
            out += '^';
            if (n.exponent < 0)
                out += "(" + std::to_string(n.exponent) + ")";
            else
                out += std::to_string(n.exponent);
            break;
        case Op::sin:
        case Op::cos:
        case Op::sqrt:
            out += n.op == Op::sin ? "sin(" : n.op == Op::cos ? "cos(" : "sqrt(";
            print(*n.lhs, vars, out, 0);
            out += ')';
            break;
        }
        if (paren)
            out += ')';
    }

    std::shared_ptr<const ExprNode> node_;
};

namespace detail {

class Parser {
public:
    Parser(std::string_view text, const VariableSet& vars) : s_(text), vars_(vars) {}

    Expr parse()
    {
        skip();
        if (pos_ >= s_.size())
            throw ParseError(ParseError::Kind::syntax, pos_, "empty expression");
        Expr e = expr();
        skip();
        if (pos_ < s_.size())
            throw ParseError(ParseError::Kind::syntax, pos_, std::string("unexpected '") + s_[pos_] + "'");
        return e;
    }

private:
    void skip()
    {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
            ++pos_;
    }

    bool accept(char c)
    {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr expr()
    {
        Expr lhs = term();
        for (;;) {
            if (accept('+'))
                lhs = lhs + term();
            else if (accept('-'))
                lhs = lhs - term();
            else
                return lhs;
        }
    }

    Expr term()
    {
        Expr lhs = unary();
        for (;;) {
            if (accept('*'))
                lhs = lhs * unary();
            else if (accept('/'))
                lhs = lhs / unary();
            else
                return lhs;
        }
    }

    Expr unary()
    {
        if (accept('-'))
            return -unary();
        if (accept('+'))
            return unary();
        return power();
    }

    Expr power()
    {
        Expr base = primary();
        if (accept('^'))
            return base.pow(exponent());
        return base;
    }

    int exponent()
    {
        skip();
        const std::size_t start = pos_;
        bool parens = accept('(');
        skip();
        int sign = 1;
        if (accept('-'))
            sign = -1;
        else
            accept('+');
        skip();
        std::size_t digits_start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
        const bool trailing_fraction =
            pos_ < s_.size() && (s_[pos_] == '.' || s_[pos_] == 'e' || s_[pos_] == 'E');
        if (pos_ == digits_start || trailing_fraction)
            throw ParseError(ParseError::Kind::non_integer_exponent, start, "non-integer exponent");
        if (pos_ - digits_start > 4)
            throw ParseError(ParseError::Kind::syntax, digits_start, "exponent too large");
        int value = std::stoi(std::string(s_.substr(digits_start, pos_ - digits_start)));
        if (parens && !accept(')'))
            throw ParseError(ParseError::Kind::non_integer_exponent, start, "non-integer exponent");
        return sign * value;
    }

    Expr primary()
    {
        skip();
        if (pos_ >= s_.size())
            throw ParseError(ParseError::Kind::syntax, pos_, "unexpected end of input");
        const char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expr e = expr();
            if (!accept(')'))
                throw ParseError(ParseError::Kind::syntax, pos_, "expected ')'");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_')
            return identifier();
        throw ParseError(ParseError::Kind::syntax, pos_, std::string("unexpected '") + c + "'");
    }

    Expr number()
    {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.'))
            ++pos_;
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-'))
                ++pos_;
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
                    ++pos_;
            } else {
                pos_ = save;
            }
        }
        Rational q;
        if (!parse_decimal(s_.substr(start, pos_ - start), q))
            throw ParseError(ParseError::Kind::syntax, start, "malformed number");
        return Expr::constant(q);
    }

    Expr identifier()
    {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            ++pos_;
        const std::string_view name = s_.substr(start, pos_ - start);
        if (name == "sin" || name == "cos" || name == "sqrt") {
            if (!accept('('))
                throw ParseError(ParseError::Kind::syntax, pos_, "expected '(' after function name");
            Expr arg = expr();
            if (!accept(')'))
                throw ParseError(ParseError::Kind::syntax, pos_, "expected ')'");
            return Expr::apply(name == "sin" ? Op::sin : name == "cos" ? Op::cos : Op::sqrt, arg);
        }
        if (name == "pi")
            return Expr::inexact(3.141592653589793238462643383279502884);
        const int slot = vars_.find(name);
        if (slot < 0)
            throw ParseError(ParseError::Kind::unknown_identifier, start,
                             "unknown identifier '" + std::string(name) + "'");
        return Expr::variable(slot);
    }

    std::string_view s_;
    const VariableSet& vars_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parses an expression. Grammar: numbers, the variables named by `vars`,
/// + - * / ^ (integer exponents only), parentheses, sin/cos/sqrt and `pi`.
inline Expr parse_expression(std::string_view text, const VariableSet& vars = VariableSet::germ())
{
    return detail::Parser(text, vars).parse();
}

/// Flat postfix form of an expression for fast repeated floating evaluation.
class CompiledExpr {
public:
    CompiledExpr() = default;
    explicit CompiledExpr(const Expr& e)
    {
        emit(e.node());
        int depth = 0;
        for (const Instr& in : code_) {
            depth += stack_effect(in.op);
            max_depth_ = std::max(max_depth_, depth);
        }
    }

    template <class T>
    T run(std::span<const T> vars) const
    {
        using ops = scalar_ops<T>;
        // Reused per thread; run() is not reentrant for a given T.
        thread_local std::vector<T> st;
        st.clear();
        st.reserve(std::size_t(max_depth_));
        for (const Instr& in : code_) {
            switch (in.op) {
            case Op::constant:
                if constexpr (requires { ops::from_constant(0.0, nullptr); })
                    st.push_back(ops::from_constant(in.value, nullptr));
                else
                    st.push_back(T::constant(in.value, vars[0].order()));
                break;
            case Op::variable: st.push_back(vars[std::size_t(in.var)]); break;
            case Op::neg: st.back() = -st.back(); break;
            case Op::sin: st.back() = ops::sin(st.back()); break;
            case Op::cos: st.back() = ops::cos(st.back()); break;
            case Op::sqrt: st.back() = ops::sqrt(st.back()); break;
            case Op::pow: st.back() = ipow(st.back(), in.var); break;
            default: {
                T b = std::move(st.back());
                st.pop_back();
                T& a = st.back();
                switch (in.op) {
                case Op::add: a = a + b; break;
                case Op::sub: a = a - b; break;
                case Op::mul: a = a * b; break;
                default: a = a / b; break;
                }
            }
            }
        }
        return st.back();
    }

    double operator()(double u, double v, double w = 0.0) const
    {
        const std::array<double, 3> vars{u, v, w};
        return run<double>(vars);
    }

private:
    struct Instr {
        Op op;
        double value = 0.0;
        int var = 0;
    };

    static int stack_effect(Op op)
    {
        switch (op) {
        case Op::constant:
        case Op::variable: return 1;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div: return -1;
        default: return 0;
        }
    }

    template <class T>
    static T ipow(const T& base, int e)
    {
        if constexpr (requires { base.pow(e); }) {
            return base.pow(e);
        } else {
            if (e < 0)
                return ipow(T(1) / base, -e);
            T result = T(1);
            T b = base;
            while (e > 0) {
                if (e & 1)
                    result = result * b;
                e >>= 1;
                if (e > 0)
                    b = b * b;
            }
            return result;
        }
    }

    void emit(const ExprNode& n)
    {
        switch (n.op) {
        case Op::constant: code_.push_back({Op::constant, n.value, 0}); return;
        case Op::variable: code_.push_back({Op::variable, 0.0, n.var}); return;
        case Op::pow:
            emit(*n.lhs);
            code_.push_back({Op::pow, 0.0, n.exponent});
            return;
        case Op::neg:
        case Op::sin:
        case Op::cos:
        case Op::sqrt:
            emit(*n.lhs);
            code_.push_back({n.op, 0.0, 0});
            return;
        default:
            emit(*n.lhs);
            emit(*n.rhs);
            code_.push_back({n.op, 0.0, 0});
        }
    }

    std::vector<Instr> code_;
    int max_depth_ = 1;
};

} // namespace tangfam
