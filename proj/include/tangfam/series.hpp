#pragma once

#include "tangfam/scalar.hpp"

#include <algorithm>
#include <array>
#include <span>
#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace tangfam {

/// Bivariate truncated Taylor series in offsets (dx, dt) around a base point.
///
/// Holds the coefficients of every monomial dx^a dt^b with a + b <= order().
/// Storage is fixed-capacity so that series over doubles never allocate; the
/// runtime order may be anything up to MaxOrder. All arithmetic truncates at
/// the smaller order of its operands.
template <class S, int MaxOrder = 8>
class TruncatedSeries {
public:
    using scalar_type = S;
    static constexpr int max_order = MaxOrder;
    static constexpr std::size_t capacity = std::size_t(MaxOrder + 1) * (MaxOrder + 2) / 2;

    TruncatedSeries() = default;

    explicit TruncatedSeries(int order) : order_(order)
    {
        if (order < 0 || order > MaxOrder)
            throw std::out_of_range("series order out of range");
    }

    static TruncatedSeries constant(const S& c, int order)
    {
        TruncatedSeries s(order);
        s.c_[0] = c;
        return s;
    }

    /// `base + d<var>` where var 0 is the first offset variable and var 1 the second.
    static TruncatedSeries variable(int var, const S& base, int order)
    {
        TruncatedSeries s(order);
        s.c_[0] = base;
        if (order >= 1)
            s.c_[var == 0 ? index(1, 0) : index(0, 1)] = scalar_ops<S>::from_int(1);
        return s;
    }

    static constexpr std::size_t index(int a, int b)
    {
        const int d = a + b;
        return std::size_t(d) * (d + 1) / 2 + b;
    }

    static constexpr std::size_t size_for(int order) { return std::size_t(order + 1) * (order + 2) / 2; }

    int order() const { return order_; }
    std::size_t size() const { return size_for(order_); }

    const S& coeff(int a, int b) const
    {
        assert(a >= 0 && b >= 0 && a + b <= order_);
        return c_[index(a, b)];
    }
    S& coeff(int a, int b)
    {
        assert(a >= 0 && b >= 0 && a + b <= order_);
        return c_[index(a, b)];
    }
    /// Coefficient or zero when the monomial lies beyond the truncation order.
    S coeff_or_zero(int a, int b) const { return a + b <= order_ ? c_[index(a, b)] : S{}; }

    const S& constant_term() const { return c_[0]; }

    TruncatedSeries truncated(int order) const
    {
        if (order > order_)
            throw std::invalid_argument("cannot raise the order of a truncated series");
        TruncatedSeries r(order);
        for (std::size_t i = 0; i < size_for(order); ++i)
            r.c_[i] = c_[i];
        return r;
    }

    /// Same coefficients with the constant term removed.
    TruncatedSeries nilpotent_part() const
    {
        TruncatedSeries r = *this;
        r.c_[0] = S{};
        return r;
    }

    TruncatedSeries& operator+=(const TruncatedSeries& o)
    {
        shrink_to(o.order_);
        for (std::size_t i = 0; i < size(); ++i)
            c_[i] += o.c_[i];
        return *this;
    }
    TruncatedSeries& operator-=(const TruncatedSeries& o)
    {
        shrink_to(o.order_);
        for (std::size_t i = 0; i < size(); ++i)
            c_[i] -= o.c_[i];
        return *this;
    }
    TruncatedSeries& operator*=(const S& k)
    {
        for (std::size_t i = 0; i < size(); ++i)
            c_[i] *= k;
        return *this;
    }
    TruncatedSeries& operator+=(const S& k)
    {
        c_[0] += k;
        return *this;
    }
    TruncatedSeries& operator-=(const S& k)
    {
        c_[0] -= k;
        return *this;
    }

    friend TruncatedSeries operator+(TruncatedSeries a, const TruncatedSeries& b) { return a += b; }
    friend TruncatedSeries operator-(TruncatedSeries a, const TruncatedSeries& b) { return a -= b; }
    friend TruncatedSeries operator*(TruncatedSeries a, const S& k) { return a *= k; }
    friend TruncatedSeries operator*(const S& k, TruncatedSeries a) { return a *= k; }
    friend TruncatedSeries operator+(TruncatedSeries a, const S& k) { return a += k; }
    friend TruncatedSeries operator-(TruncatedSeries a, const S& k) { return a -= k; }
    friend TruncatedSeries operator-(TruncatedSeries a)
    {
        for (std::size_t i = 0; i < a.size(); ++i)
            a.c_[i] = -a.c_[i];
        return a;
    }

    friend TruncatedSeries operator*(const TruncatedSeries& x, const TruncatedSeries& y)
    {
        const int n = x.order_ < y.order_ ? x.order_ : y.order_;
        TruncatedSeries r(n);
        for (int d1 = 0; d1 <= n; ++d1) {
            for (int b1 = 0; b1 <= d1; ++b1) {
                const S& xv = x.c_[index(d1 - b1, b1)];
                if (is_zero(xv))
                    continue;
                for (int d2 = 0; d1 + d2 <= n; ++d2) {
                    const std::size_t base = index(d1 + d2 - b1, b1);
                    for (int b2 = 0; b2 <= d2; ++b2)
                        r.c_[base + b2] += xv * y.c_[index(d2 - b2, b2)];
                }
            }
        }
        return r;
    }
    TruncatedSeries& operator*=(const TruncatedSeries& o) { return *this = *this * o; }

    /// Applies a univariate function given by its Taylor coefficients
    /// taylor[k] = phi^(k)(c0)/k! to this series.
    TruncatedSeries apply_taylor(std::span<const S> taylor) const
    {
        const TruncatedSeries n = nilpotent_part();
        const int top = order_ < int(taylor.size()) - 1 ? order_ : int(taylor.size()) - 1;
        TruncatedSeries r = constant(taylor[std::size_t(top)], order_);
        for (int k = top - 1; k >= 0; --k) {
            r = r * n;
            r.c_[0] += taylor[std::size_t(k)];
        }
        return r;
    }

    TruncatedSeries reciprocal() const
    {
        const S c0 = c_[0];
        if (is_zero(c0))
            throw std::domain_error("reciprocal of a series with zero constant term");
        std::array<S, MaxOrder + 1> t{};
        S inv = scalar_ops<S>::from_int(1) / c0;
        S p = inv;
        for (int k = 0; k <= order_; ++k) {
            t[std::size_t(k)] = (k % 2 == 0) ? p : -p;
            p = p * inv;
        }
        return apply_taylor(std::span<const S>(t.data(), std::size_t(order_) + 1));
    }

    friend TruncatedSeries operator/(const TruncatedSeries& a, const TruncatedSeries& b) { return a * b.reciprocal(); }

    TruncatedSeries pow(int e) const
    {
        if (e < 0)
            return reciprocal().pow(-e);
        TruncatedSeries result = constant(scalar_ops<S>::from_int(1), order_);
        TruncatedSeries base = *this;
        while (e > 0) {
            if (e & 1)
                result = result * base;
            e >>= 1;
            if (e > 0)
                base = base * base;
        }
        return result;
    }

    TruncatedSeries sin() const
    {
        const auto t = trig_taylor(false);
        return apply_taylor(std::span<const S>(t.data(), std::size_t(order_) + 1));
    }
    TruncatedSeries cos() const
    {
        const auto t = trig_taylor(true);
        return apply_taylor(std::span<const S>(t.data(), std::size_t(order_) + 1));
    }

    TruncatedSeries sqrt() const
    {
        using ops = scalar_ops<S>;
        const S c0 = c_[0];
        if (!(ops::value(c0) > 0.0))
            throw std::domain_error("sqrt of a series needs a positive constant term");
        std::array<S, MaxOrder + 1> t{};
        // binom(1/2, k) * c0^(1/2 - k)
        S coef = ops::sqrt(c0);
        const S inv = ops::from_int(1) / c0;
        for (int k = 0; k <= order_; ++k) {
            t[std::size_t(k)] = coef;
            // binom(1/2,k+1) = binom(1/2,k) * (1/2 - k) / (k + 1)
            coef = coef * (ops::from_int(1) - ops::from_int(2L * k)) / ops::from_int(2L * (k + 1)) * inv;
        }
        return apply_taylor(std::span<const S>(t.data(), std::size_t(order_) + 1));
    }

    /// Partial derivative with respect to offset variable `var` (0 or 1).
    TruncatedSeries derivative(int var) const
    {
        if (order_ == 0)
            return TruncatedSeries(0);
        TruncatedSeries r(order_ - 1);
        for (int d = 0; d <= order_ - 1; ++d)
            for (int b = 0; b <= d; ++b) {
                const int a = d - b;
                r.c_[index(a, b)] = var == 0 ? c_[index(a + 1, b)] * ops_int(a + 1)
                                             : c_[index(a, b + 1)] * ops_int(b + 1);
            }
        return r;
    }

    /// Exact quotient by the second variable; requires every pure dx^a coefficient to vanish
    /// (checked by the caller with its own zero policy).
    TruncatedSeries divide_by_second() const
    {
        if (order_ == 0)
            return TruncatedSeries(0);
        TruncatedSeries r(order_ - 1);
        for (int d = 0; d <= order_ - 1; ++d)
            for (int b = 0; b <= d; ++b)
                r.c_[index(d - b, b)] = c_[index(d - b, b + 1)];
        return r;
    }

    /// Polynomial substitution P(u, v) of two series. The truncated polynomial is
    /// treated as exact, so u and v may carry constant terms.
    TruncatedSeries substitute(const TruncatedSeries& u, const TruncatedSeries& v) const
    {
        const int n = std::min(u.order_, v.order_);
        // Horner in the first variable, with inner Horner in the second.
        TruncatedSeries result(n);
        for (int a = order_; a >= 0; --a) {
            TruncatedSeries inner(n);
            for (int b = order_ - a; b >= 0; --b) {
                inner = inner * v;
                inner.c_[0] += c_[index(a, b)];
            }
            result = result * u + inner;
        }
        return result;
    }

    /// Polynomial value at a concrete point of the offset variables.
    S evaluate(const S& x, const S& y) const
    {
        S acc{};
        for (int a = order_; a >= 0; --a) {
            S inner{};
            for (int b = order_ - a; b >= 0; --b)
                inner = inner * y + c_[index(a, b)];
            acc = acc * x + inner;
        }
        return acc;
    }

    /// Largest coefficient magnitude (as double) among monomials of total degree <= upto.
    double max_abs(int upto = -1) const
    {
        if (upto < 0 || upto > order_)
            upto = order_;
        double m = 0.0;
        for (std::size_t i = 0; i < size_for(upto); ++i) {
            double v = scalar_ops<S>::value(c_[i]);
            v = v < 0 ? -v : v;
            if (v > m)
                m = v;
        }
        return m;
    }

    template <class T, class Fn>
    TruncatedSeries<T, MaxOrder> map(Fn&& fn) const
    {
        TruncatedSeries<T, MaxOrder> r(order_);
        for (int d = 0; d <= order_; ++d)
            for (int b = 0; b <= d; ++b)
                r.coeff(d - b, b) = fn(c_[index(d - b, b)]);
        return r;
    }

private:
    static S ops_int(long v) { return scalar_ops<S>::from_int(v); }

    void shrink_to(int o)
    {
        if (o < order_) {
            for (std::size_t i = size_for(o); i < size(); ++i)
                c_[i] = S{};
            order_ = o;
        }
    }

    std::array<S, MaxOrder + 1> trig_taylor(bool cosine) const
    {
        using ops = scalar_ops<S>;
        const S s = ops::sin(c_[0]);
        const S c = ops::cos(c_[0]);
        std::array<S, MaxOrder + 1> t{};
        S fact = ops::from_int(1);
        for (int k = 0; k <= order_; ++k) {
            if (k > 0)
                fact = fact * ops::from_int(k);
            // k-th derivative of sin: sin, cos, -sin, -cos; cos is sin shifted by one.
            const int phase = (k + (cosine ? 1 : 0)) % 4;
            S dk = phase == 0 ? s : phase == 1 ? c : phase == 2 ? -s : -c;
            t[std::size_t(k)] = dk / fact;
        }
        return t;
    }

    int order_ = 0;
    std::array<S, capacity> c_{};
};

template <class S, int N>
struct scalar_ops<TruncatedSeries<S, N>> {
    using series = TruncatedSeries<S, N>;
    static constexpr bool exact = scalar_ops<S>::exact;
    static series sin(const series& x) { return x.sin(); }
    static series cos(const series& x) { return x.cos(); }
    static series sqrt(const series& x) { return x.sqrt(); }
    static double value(const series& x) { return scalar_ops<S>::value(x.constant_term()); }
};

/// Univariate truncated power series helpers (coefficient vectors, index = degree).
template <class S>
using Poly1 = std::vector<S>;

template <class S>
Poly1<S> poly_mul(const Poly1<S>& a, const Poly1<S>& b, int order)
{
    Poly1<S> r(std::size_t(order) + 1);
    for (std::size_t i = 0; i < a.size() && int(i) <= order; ++i) {
        if (is_zero(a[i]))
            continue;
        for (std::size_t j = 0; j < b.size() && int(i + j) <= order; ++j)
            r[i + j] += a[i] * b[j];
    }
    return r;
}

/// p(q(z)) truncated at `order`; q may have a constant term only if p is a polynomial
/// that is meant to be re-expanded exactly.
template <class S>
Poly1<S> poly_compose(const Poly1<S>& p, const Poly1<S>& q, int order)
{
    Poly1<S> r(std::size_t(order) + 1);
    for (std::size_t k = p.size(); k-- > 0;) {
        r = poly_mul(r, q, order);
        r[0] += p[k];
    }
    return r;
}

/// Compositional inverse of q with q(0) = 0 and q'(0) != 0, truncated at `order`.
template <class S>
Poly1<S> poly_revert(const Poly1<S>& q, int order)
{
    if (q.size() < 2 || is_zero(q[1]))
        throw std::domain_error("series is not invertible: vanishing linear term");
    const S inv1 = scalar_ops<S>::from_int(1) / q[1];
    Poly1<S> g(std::size_t(order) + 1);
    if (order >= 1)
        g[1] = inv1;
    // Each Newton-like sweep fixes one more coefficient.
    for (int it = 1; it < order; ++it) {
        Poly1<S> qg = poly_compose(q, g, order);
        if (order >= 1)
            qg[1] -= scalar_ops<S>::from_int(1);
        for (int k = 0; k <= order; ++k)
            g[std::size_t(k)] -= qg[std::size_t(k)] * inv1;
    }
    return g;
}

} // namespace tangfam
