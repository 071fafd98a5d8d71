#pragma once

#include "tangfam/germ.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tangfam {

class NotTangentialError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class VerdictType { type_I, type_II, degenerate };

enum class DegenerateReason {
    none,
    k1_zero,          ///< k0 = 0 and k1 = 0
    k1_equals_alpha,  ///< k0 = 0 and k1 = alpha
    branch_not_smooth,
    branch_not_transversal,
    branch_vertical,
    undecidable,
    disagreement,
};

inline const char* to_string(VerdictType v)
{
    switch (v) {
    case VerdictType::type_I: return "I";
    case VerdictType::type_II: return "II";
    default: return "degenerate";
    }
}

inline const char* to_string(DegenerateReason r)
{
    switch (r) {
    case DegenerateReason::none: return "";
    case DegenerateReason::k1_zero: return "k0=0 and k1=0";
    case DegenerateReason::k1_equals_alpha: return "k0=0 and k1=alpha";
    case DegenerateReason::branch_not_smooth: return "second criminant branch not smooth";
    case DegenerateReason::branch_not_transversal: return "criminant branches not transversal";
    case DegenerateReason::branch_vertical: return "criminant branch vertical";
    case DegenerateReason::undecidable: return "undecidable within tolerance";
    default: return "classifiers disagree";
    }
}

struct Verdict {
    VerdictType type = VerdictType::degenerate;
    DegenerateReason reason = DegenerateReason::none;

    static Verdict I() { return {VerdictType::type_I, DegenerateReason::none}; }
    static Verdict II() { return {VerdictType::type_II, DegenerateReason::none}; }
    static Verdict degenerate(DegenerateReason r) { return {VerdictType::degenerate, r}; }

    bool undecidable() const
    {
        return type == VerdictType::degenerate &&
               (reason == DegenerateReason::undecidable || reason == DegenerateReason::disagreement);
    }
    friend bool operator==(const Verdict&, const Verdict&) = default;
};

/// Outcome of a thresholded zero test.
enum class ZeroTest { zero, nonzero, undecidable };

/// `eps` <= 0 means an exact test. Otherwise: zero below eps*scale, nonzero from
/// 10*eps*scale, undecidable in between.
inline ZeroTest zero_test(double v, double eps, double scale)
{
    const double a = std::fabs(v);
    if (eps <= 0)
        return a == 0 ? ZeroTest::zero : ZeroTest::nonzero;
    if (a < eps * scale)
        return ZeroTest::zero;
    if (a >= 10 * eps * scale)
        return ZeroTest::nonzero;
    return ZeroTest::undecidable;
}

struct PrenormalInvariants {
    double k0 = 0.0;
    double k1 = 0.0;
    double alpha = 0.0;
    /// Present in exact mode.
    std::optional<Rational> k0_exact, k1_exact, alpha_exact;
    NumericMode mode = NumericMode::floating;
    double epsilon = 0.0;

    bool exact() const { return k0_exact.has_value(); }
};

/// Similarity plus shear taking the support to y = 0.
struct FlatteningMap {
    double angle = 0.0;            ///< angle of the support tangent
    double scale = 1.0;            ///< 1/|T|
    std::array<double, 4> matrix{}; ///< row-major similarity
    std::vector<double> shear;     ///< s(x) coefficients, index = degree

    Vec2 apply(Vec2 p) const
    {
        const double X = matrix[0] * p.x + matrix[1] * p.y;
        const double Y = matrix[2] * p.x + matrix[3] * p.y;
        double s = 0.0;
        for (std::size_t k = shear.size(); k-- > 0;)
            s = s * X + shear[k];
        return {X, Y - s};
    }
};

namespace detail {

template <class S>
double dbl(const S& v)
{
    return scalar_ops<S>::value(v);
}

template <class S>
Jet<S> horner(const Poly1<S>& p, const Jet<S>& x)
{
    Jet<S> r = Jet<S>::constant(S{}, x.order());
    for (std::size_t k = p.size(); k-- > 0;) {
        r = r * x;
        r += p[k];
    }
    return r;
}

template <class S>
struct Flattened {
    S m11, m12, m21, m22;
    Poly1<S> shear;
    MapJet<S> jet;
};

/// Rotates and scales the support tangent to (1, 0), then shears the support onto y = 0.
template <class S>
Flattened<S> flatten_jet(const MapJet<S>& j)
{
    const int n = j.order();
    const S a = j.x.coeff(1, 0);
    const S b = j.y.coeff(1, 0);
    const S n2 = a * a + b * b;
    if (is_zero(n2) || dbl(n2) < 1e-24)
        throw DomainError("support is not immersed at the origin");
    Flattened<S> out;
    out.m11 = a / n2;
    out.m12 = b / n2;
    out.m21 = -b / n2;
    out.m22 = a / n2;
    Jet<S> X = j.x * out.m11 + j.y * out.m12;
    Jet<S> Yr = j.x * out.m21 + j.y * out.m22;
    Poly1<S> p(std::size_t(n) + 1), q(std::size_t(n) + 1);
    for (int k = 0; k <= n; ++k) {
        p[std::size_t(k)] = X.coeff(k, 0);
        q[std::size_t(k)] = Yr.coeff(k, 0);
    }
    p[0] = S{};
    q[0] = S{};
    out.shear = poly_compose(q, poly_revert(p, n), n);
    out.shear[0] = S{};
    Jet<S> Y = Yr - horner(out.shear, X);
    // The support is y = 0 through order n; clear round-off residue.
    for (int k = 0; k <= n; ++k)
        Y.coeff(k, 0) = S{};
    out.jet = {X, Y};
    return out;
}

/// Graph expansion of the family curves in flattened coordinates.
/// Returns C with C(a, k) the coefficient of xi^a (x - x(xi))^k.
template <class S>
Jet<S> graph_series(const MapJet<S>& flat, int order)
{
    const int n = std::min(order, flat.order());
    Jet<S> A = flat.x.truncated(n);
    Jet<S> a1(n);
    for (int a = 0; a <= n; ++a)
        A.coeff(a, 0) = S{};
    for (int a = 0; a + 1 <= n; ++a)
        a1.coeff(a, 0) = A.coeff(a, 1);
    if (is_zero(a1.coeff(0, 0)) || std::fabs(dbl(a1.coeff(0, 0))) < 1e-14)
        throw DomainError("family curve is vertical: d/dt x vanishes at the tangency point");
    const Jet<S> R = a1.reciprocal();
    const Jet<S> Xi = Jet<S>::variable(0, S{}, n);
    const Jet<S> U = Jet<S>::variable(1, S{}, n);
    Jet<S> tau = U * R;
    for (int it = 0; it < n; ++it)
        tau = tau - (A.substitute(Xi, tau) - U) * R;
    Jet<S> Y = flat.y.truncated(n);
    Jet<S> Y0(n);
    for (int a = 0; a <= n; ++a)
        Y0.coeff(a, 0) = Y.coeff(a, 0);
    return Y.substitute(Xi, tau) - Y0;
}

template <class S>
PrenormalInvariants invariants_from_jet(const MapJet<S>& j, NumericMode mode, double eps)
{
    const Flattened<S> fl = flatten_jet(j);
    const Jet<S> C = graph_series(fl.jet, 3);
    PrenormalInvariants inv;
    inv.k0 = dbl(C.coeff(0, 2));
    inv.k1 = dbl(C.coeff(1, 2));
    inv.alpha = dbl(C.coeff(0, 3));
    if constexpr (scalar_ops<S>::exact) {
        inv.k0_exact = C.coeff(0, 2);
        inv.k1_exact = C.coeff(1, 2);
        inv.alpha_exact = C.coeff(0, 3);
    }
    inv.mode = mode;
    inv.epsilon = scalar_ops<S>::exact ? 0.0 : eps;
    return inv;
}

} // namespace detail

struct ClassifyOptions {
    /// Backend; unset picks the most precise one available for the germ.
    std::optional<NumericMode> mode;
    /// Relative zero threshold for numeric modes.
    double epsilon = 1e-6;
};

inline NumericMode resolve_mode(const PlaneMapGerm& f, const ClassifyOptions& opt)
{
    return opt.mode ? *opt.mode : default_mode(f);
}

/// Flattening of f at the origin and the flattened germ.
inline std::pair<FlatteningMap, PlaneMapGerm> flatten_support(const PlaneMapGerm& f, int order = max_jet_order,
                                                              std::optional<NumericMode> mode = {})
{
    const NumericMode m = mode ? *mode : default_mode(f);
    FlatteningMap map;
    std::optional<std::array<Rational, 4>> exact_matrix;
    std::vector<Rational> exact_shear;
    if (m == NumericMode::exact) {
        const auto fl = detail::flatten_jet(exact_map_jet(f, Rational(0), Rational(0), order));
        exact_matrix = std::array<Rational, 4>{fl.m11, fl.m12, fl.m21, fl.m22};
        exact_shear = fl.shear;
        map.matrix = {to_double(fl.m11), to_double(fl.m12), to_double(fl.m21), to_double(fl.m22)};
        for (const Rational& s : fl.shear)
            map.shear.push_back(to_double(s));
    } else {
        const auto fl = detail::flatten_jet(map_jet(f, {0, 0}, order, m));
        map.matrix = {fl.m11, fl.m12, fl.m21, fl.m22};
        map.shear = fl.shear;
    }
    map.angle = std::atan2(-map.matrix[2], map.matrix[0]);
    map.scale = std::hypot(map.matrix[0], map.matrix[2]);
    // Trailing zero shear terms carry no information.
    while (!map.shear.empty() && map.shear.back() == 0.0) {
        map.shear.pop_back();
        if (!exact_shear.empty())
            exact_shear.pop_back();
    }

    if (f.has_expressions()) {
        auto cst = [&](std::size_t i, double v) {
            if (exact_matrix)
                return Expr::constant(i < 4 ? (*exact_matrix)[i] : exact_shear[i - 4]);
            return Expr::inexact(v);
        };
        const Expr X = cst(0, map.matrix[0]) * f.x() + cst(1, map.matrix[1]) * f.y();
        Expr Y = cst(2, map.matrix[2]) * f.x() + cst(3, map.matrix[3]) * f.y();
        Expr s = Expr::constant(Rational(0));
        for (std::size_t k = map.shear.size(); k-- > 0;)
            s = s * X + cst(4 + k, map.shear[k]);
        return {map, PlaneMapGerm::from_expressions(X, Y - s, f.box())};
    }
    const FlatteningMap copy = map;
    return {map, PlaneMapGerm::black_box([f, copy](double xi, double t) { return copy.apply(f.raw(xi, t)); },
                                         f.box())};
}

/// Graph coefficients c_2..c_order of the family curve through the support point xi0.
/// `f` is taken to be flattened already (support on y = 0), e.g. the output of
/// flatten_support. Index k holds c_k; entries 0 and 1 are zero.
inline std::vector<double> graph_coefficients(const PlaneMapGerm& f, double xi0, int order = 3,
                                              std::optional<NumericMode> mode = {})
{
    detail::check_order(order, max_jet_order);
    const PlaneMapGerm g = xi0 == 0.0 ? f : f.recentered(xi0);
    const NumericMode m = mode ? *mode : default_mode(g);
    std::vector<double> c(std::size_t(order) + 1, 0.0);
    if (m == NumericMode::exact) {
        const Jet<Rational> C = detail::graph_series(exact_map_jet(g, Rational(0), Rational(0), order), order);
        for (int k = 2; k <= order; ++k)
            c[std::size_t(k)] = to_double(C.coeff(0, k));
    } else {
        const Jet<double> C = detail::graph_series(map_jet(g, {0, 0}, order, m), order);
        for (int k = 2; k <= order; ++k)
            c[std::size_t(k)] = C.coeff(0, k);
    }
    return c;
}

inline PrenormalInvariants prenormal_invariants(const PlaneMapGerm& f, const ClassifyOptions& opt = {})
{
    const NumericMode m = resolve_mode(f, opt);
    if (m == NumericMode::exact)
        return detail::invariants_from_jet(exact_map_jet(f, Rational(0), Rational(0), 3), m, 0.0);
    return detail::invariants_from_jet(map_jet(f, {0, 0}, 3, m), m, opt.epsilon);
}

/// Jet-predicate classifier.
inline Verdict classify_by_invariants(const PrenormalInvariants& inv, std::optional<double> eps = {})
{
    if (inv.exact() && !eps) {
        if (*inv.k0_exact != 0)
            return Verdict::I();
        if (*inv.k1_exact == 0)
            return Verdict::degenerate(DegenerateReason::k1_zero);
        if (*inv.k1_exact == *inv.alpha_exact)
            return Verdict::degenerate(DegenerateReason::k1_equals_alpha);
        return Verdict::II();
    }
    const double e = eps ? *eps : inv.epsilon;
    const double scale = std::max({1.0, std::fabs(inv.k0), std::fabs(inv.k1), std::fabs(inv.alpha)});
    switch (zero_test(inv.k0, e, scale)) {
    case ZeroTest::nonzero: return Verdict::I();
    case ZeroTest::undecidable: return Verdict::degenerate(DegenerateReason::undecidable);
    default: break;
    }
    const ZeroTest t1 = zero_test(inv.k1, e, scale);
    const ZeroTest t2 = zero_test(inv.k1 - inv.alpha, e, scale);
    if (t1 == ZeroTest::undecidable || t2 == ZeroTest::undecidable)
        return Verdict::degenerate(DegenerateReason::undecidable);
    if (t1 == ZeroTest::zero)
        return Verdict::degenerate(DegenerateReason::k1_zero);
    if (t2 == ZeroTest::zero)
        return Verdict::degenerate(DegenerateReason::k1_equals_alpha);
    return Verdict::II();
}

/// Leading data of det Df = t * u(xi, t) at the origin.
struct CriminantData {
    double u00 = 0.0;
    double u_xi = 0.0;
    double u_t = 0.0;
    /// Df(0) applied to the tangent of the second branch, divided by the largest |Df(0)| entry.
    Vec2 image_of_tangent;
    Verdict verdict;
};

namespace detail {

template <class S>
CriminantData criminant_from_jet(const MapJet<S>& j, double eps)
{
    const Jet<S> d = j.det().truncated(std::min(4, j.order() - 1));
    const bool exact = scalar_ops<S>::exact;
    // d(xi, 0) must vanish for a tangential germ.
    for (int a = 0; a <= d.order(); ++a)
        if (zero_test(dbl(d.coeff(a, 0)), exact ? 0.0 : eps, 1.0) == ZeroTest::nonzero ||
            (exact && !is_zero(d.coeff(a, 0))))
            throw NotTangentialError("det Df does not vanish on t = 0");
    const Jet<S> u = d.divide_by_second();
    CriminantData out;
    const S u00 = u.coeff(0, 0), uxi = u.coeff(1, 0), ut = u.coeff(0, 1);
    out.u00 = dbl(u00);
    out.u_xi = dbl(uxi);
    out.u_t = dbl(ut);
    // Second-branch tangent w = (u_t, -u_xi); its image under Df(0).
    const S wx = j.x.coeff(1, 0) * ut - j.x.coeff(0, 1) * uxi;
    const S wy = j.y.coeff(1, 0) * ut - j.y.coeff(0, 1) * uxi;
    const double dfmax = std::max({std::fabs(dbl(j.x.coeff(1, 0))), std::fabs(dbl(j.x.coeff(0, 1))),
                                   std::fabs(dbl(j.y.coeff(1, 0))), std::fabs(dbl(j.y.coeff(0, 1)))});
    out.image_of_tangent = Vec2{dbl(wx), dbl(wy)} / (dfmax > 0 ? dfmax : 1.0);

    auto test = [&](const S& v, double scale) {
        if constexpr (scalar_ops<S>::exact)
            return is_zero(v) ? ZeroTest::zero : ZeroTest::nonzero;
        else
            return zero_test(v, eps, scale);
    };
    const double scale = std::max({1.0, std::fabs(out.u00), std::fabs(out.u_xi), std::fabs(out.u_t)});
    switch (test(u00, scale)) {
    case ZeroTest::nonzero: out.verdict = Verdict::I(); return out;
    case ZeroTest::undecidable: out.verdict = Verdict::degenerate(DegenerateReason::undecidable); return out;
    default: break;
    }
    const ZeroTest txi = test(uxi, scale);
    const ZeroTest tt = test(ut, scale);
    if (txi == ZeroTest::undecidable) {
        out.verdict = Verdict::degenerate(DegenerateReason::undecidable);
        return out;
    }
    if (txi == ZeroTest::zero) {
        if (tt == ZeroTest::undecidable)
            out.verdict = Verdict::degenerate(DegenerateReason::undecidable);
        else
            out.verdict = Verdict::degenerate(tt == ZeroTest::zero ? DegenerateReason::branch_not_smooth
                                                                   : DegenerateReason::branch_not_transversal);
        return out;
    }
    ZeroTest tv;
    if constexpr (scalar_ops<S>::exact)
        tv = is_zero(wx) && is_zero(wy) ? ZeroTest::zero : ZeroTest::nonzero;
    else
        tv = zero_test(norm(out.image_of_tangent), eps, scale);
    if (tv == ZeroTest::undecidable)
        out.verdict = Verdict::degenerate(DegenerateReason::undecidable);
    else if (tv == ZeroTest::zero)
        out.verdict = Verdict::degenerate(DegenerateReason::branch_vertical);
    else
        out.verdict = Verdict::II();
    return out;
}

} // namespace detail

/// Criminant-geometry classifier on the order-4 jet of det Df.
inline CriminantData criminant_data(const PlaneMapGerm& f, const ClassifyOptions& opt = {})
{
    const NumericMode m = resolve_mode(f, opt);
    if (m == NumericMode::exact)
        return detail::criminant_from_jet(exact_map_jet(f, Rational(0), Rational(0), 5), 0.0);
    return detail::criminant_from_jet(map_jet(f, {0, 0}, 5, m), opt.epsilon);
}

inline Verdict classify_by_criminant(const PlaneMapGerm& f, const ClassifyOptions& opt = {})
{
    return criminant_data(f, opt).verdict;
}

struct TangencyOrder {
    int order = 0;
    bool at_least = false; ///< order exceeds what the jet can resolve

    friend bool operator==(const TangencyOrder&, const TangencyOrder&) = default;
};

/// Tangency order of the family curve through f(xi0, 0) with the support.
inline TangencyOrder support_tangency_order(const PlaneMapGerm& f, double xi0, const ClassifyOptions& opt = {})
{
    const int n = max_jet_order;
    const NumericMode m = resolve_mode(f, opt);
    std::vector<bool> zero(std::size_t(n) + 1, false);
    if (m == NumericMode::exact) {
        const PlaneMapGerm g = xi0 == 0.0 ? f : f.recentered(xi0);
        const Jet<Rational> C = detail::graph_series(
            detail::flatten_jet(exact_map_jet(g, Rational(0), Rational(0), n)).jet, n);
        for (int k = 2; k <= n; ++k)
            zero[std::size_t(k)] = C.coeff(0, k) == 0;
    } else {
        // Finite differences cannot reach order 8 reliably; cap at 5 there.
        const int cap = m == NumericMode::finite_difference ? 5 : n;
        const PlaneMapGerm g = xi0 == 0.0 ? f : f.recentered(xi0);
        const Jet<double> C = detail::graph_series(detail::flatten_jet(map_jet(g, {0, 0}, cap, m)).jet, cap);
        double scale = 1.0;
        for (int k = 2; k <= cap; ++k)
            scale = std::max(scale, std::fabs(C.coeff(0, k)));
        for (int k = 2; k <= cap; ++k)
            if (zero_test(C.coeff(0, k), opt.epsilon, scale) != ZeroTest::zero)
                return {k - 1, false};
        return {cap - 1, true};
    }
    for (int k = 2; k <= n; ++k)
        if (!zero[std::size_t(k)])
            return {k - 1, false};
    return {n - 1, true};
}

struct Classification {
    Verdict verdict;
    Verdict by_invariants;
    Verdict by_criminant;
    bool agree = false;
    PrenormalInvariants invariants;
    CriminantData criminant;
    NumericMode mode = NumericMode::exact;
};

/// Runs both classifiers; a disagreement is reported as degenerate, never resolved.
inline Classification classify(const PlaneMapGerm& f, const ClassifyOptions& opt = {})
{
    Classification out;
    out.mode = resolve_mode(f, opt);
    if (out.mode == NumericMode::exact) {
        const MapJet<Rational> j = exact_map_jet(f, Rational(0), Rational(0), 5);
        out.criminant = detail::criminant_from_jet(j, 0.0);
        out.invariants = detail::invariants_from_jet(j, out.mode, 0.0);
    } else {
        const MapJet<double> j = map_jet(f, {0, 0}, 5, out.mode);
        out.criminant = detail::criminant_from_jet(j, opt.epsilon);
        out.invariants = detail::invariants_from_jet(j, out.mode, opt.epsilon);
    }
    out.by_criminant = out.criminant.verdict;
    out.by_invariants = classify_by_invariants(out.invariants);
    // Degenerate reasons are phrased differently by the two methods; only the type is compared.
    out.agree = out.by_criminant.type == out.by_invariants.type;
    if (!out.agree)
        out.verdict = Verdict::degenerate(DegenerateReason::disagreement);
    else if (out.by_criminant.undecidable() || out.by_invariants.undecidable())
        out.verdict = Verdict::degenerate(DegenerateReason::undecidable);
    else
        out.verdict = out.by_invariants;
    return out;
}

} // namespace tangfam
