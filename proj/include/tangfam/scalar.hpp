#pragma once

#include "tangfam/rational.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tangfam {

/// Raised when an operation needs a value that the exact backend cannot represent
/// (an irrational constant, a transcendental function, ...).
class InexactError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-scalar operations used by expression evaluation and series arithmetic.
template <class T>
struct scalar_ops;

template <>
struct scalar_ops<double> {
    static constexpr bool exact = false;
    static double from_constant(double v, const Rational*) { return v; }
    static double from_int(long v) { return static_cast<double>(v); }
    static double sin(double x) { return std::sin(x); }
    static double cos(double x) { return std::cos(x); }
    static double sqrt(double x) { return std::sqrt(x); }
    static double value(double x) { return x; }
};

template <>
struct scalar_ops<Rational> {
    static constexpr bool exact = true;
    static Rational from_constant(double, const Rational* q)
    {
        if (q == nullptr)
            throw InexactError("constant has no exact rational value");
        return *q;
    }
    static Rational from_int(long v) { return Rational(v); }
    static Rational sin(const Rational&) { throw InexactError("sin is not available in exact mode"); }
    static Rational cos(const Rational&) { throw InexactError("cos is not available in exact mode"); }
    static Rational sqrt(const Rational&) { throw InexactError("sqrt is not available in exact mode"); }
    static double value(const Rational& x) { return to_double(x); }
};

/// Forward-mode dual number: value plus one directional derivative.
template <class S>
struct Dual {
    S v{};
    S d{};

    Dual() = default;
    Dual(S value) : v(value) {}
    Dual(S value, S deriv) : v(value), d(deriv) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
    Dual& operator/=(const Dual& o)
    {
        d = (d * o.v - v * o.d) / (o.v * o.v);
        v /= o.v;
        return *this;
    }

    friend Dual operator+(Dual a, const Dual& b) { return a += b; }
    friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
    friend Dual operator*(Dual a, const Dual& b) { return a *= b; }
    friend Dual operator/(Dual a, const Dual& b) { return a /= b; }
    friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
};

template <class S>
struct scalar_ops<Dual<S>> {
    using base = scalar_ops<S>;
    static constexpr bool exact = base::exact;
    static Dual<S> from_constant(double v, const Rational* q) { return Dual<S>(base::from_constant(v, q)); }
    static Dual<S> from_int(long v) { return Dual<S>(base::from_int(v)); }
    static Dual<S> sin(const Dual<S>& x) { return {base::sin(x.v), base::cos(x.v) * x.d}; }
    static Dual<S> cos(const Dual<S>& x) { return {base::cos(x.v), -base::sin(x.v) * x.d}; }
    static Dual<S> sqrt(const Dual<S>& x)
    {
        S r = base::sqrt(x.v);
        return {r, x.d / (base::from_int(2) * r)};
    }
    static double value(const Dual<S>& x) { return base::value(x.v); }
};

template <class T>
bool is_zero(const T& x)
{
    return x == T(0);
}

template <class S>
bool is_zero(const Dual<S>& x)
{
    return is_zero(x.v) && is_zero(x.d);
}

} // namespace tangfam
