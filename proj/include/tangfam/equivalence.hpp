#pragma once

#include "tangfam/germ.hpp"

#include <random>

namespace tangfam {

/// Source change phi(xi, t) = (xi + p, t (1 + q)); keeps the line t = 0.
struct SourceDiffeo {
    Expr p = Expr::constant(Rational(0)); ///< no constant term
    Expr q = Expr::constant(Rational(0)); ///< q(0, 0) != -1
};

/// Target change psi(x, y) = (x + P, y + Q), written in the slots (xi, t) for (x, y).
struct TargetDiffeo {
    Expr P = Expr::constant(Rational(0)); ///< no constant term
    Expr Q = Expr::constant(Rational(0));
};

namespace detail {

/// e(a, b) with a, b substituted for (xi, t) simultaneously.
inline Expr compose2(const Expr& e, const Expr& a, const Expr& b)
{
    return e.substitute(var_t, Expr::lam()).substitute(var_xi, a).substitute(var_lam, b);
}

} // namespace detail

/// psi o f o phi as an expression germ.
inline PlaneMapGerm apply_equivalence(const PlaneMapGerm& f, const SourceDiffeo& phi, const TargetDiffeo& psi)
{
    const Expr a = Expr::xi() + phi.p;
    const Expr b = Expr::t() + Expr::t() * phi.q;
    const Expr x = detail::compose2(f.x(), a, b);
    const Expr y = detail::compose2(f.y(), a, b);
    return PlaneMapGerm::from_expressions(x + detail::compose2(psi.P, x, y), y + detail::compose2(psi.Q, x, y),
                                          f.box());
}

/// Random polynomial sum c_ij xi^i t^j over min_deg <= i + j <= max_deg, c_ij = k / 1000 with |k| <= kmax.
inline Expr random_polynomial(std::mt19937_64& rng, int min_deg, int max_deg, int kmax)
{
    std::uniform_int_distribution<int> coef(-kmax, kmax);
    Expr p = Expr::constant(Rational(0));
    for (int d = min_deg; d <= max_deg; ++d)
        for (int i = 0; i <= d; ++i)
            p = p + Expr::constant(Rational(coef(rng), 1000)) * Expr::xi().pow(i) * Expr::t().pow(d - i);
    return p;
}

/// Linear parts stay within 0.3 of the identity, so the changes are invertible at 0.
inline SourceDiffeo random_source_diffeo(std::mt19937_64& rng)
{
    return {random_polynomial(rng, 1, 2, 300), random_polynomial(rng, 0, 1, 300)};
}

inline TargetDiffeo random_target_diffeo(std::mt19937_64& rng)
{
    return {random_polynomial(rng, 1, 2, 300), random_polynomial(rng, 1, 2, 300)};
}

} // namespace tangfam
