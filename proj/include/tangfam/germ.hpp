#pragma once

#include "tangfam/expression.hpp"
#include "tangfam/series.hpp"
#include "tangfam/vec2.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tangfam {

class DomainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Finite differences produced a coefficient too large to trust.
class IllConditionedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Box {
    double xi_min = -1.0;
    double xi_max = 1.0;
    double t_min = -1.0;
    double t_max = 1.0;

    bool contains(double xi, double t) const { return xi >= xi_min && xi <= xi_max && t >= t_min && t <= t_max; }
    bool interior(double xi, double t) const { return xi > xi_min && xi < xi_max && t > t_min && t < t_max; }
    double xi_width() const { return xi_max - xi_min; }
    double t_width() const { return t_max - t_min; }
    friend bool operator==(const Box&, const Box&) = default;

    static Box square(double half) { return {-half, half, -half, half}; }
};

enum class NumericMode { exact, floating, finite_difference };

inline const char* to_string(NumericMode m)
{
    switch (m) {
    case NumericMode::exact: return "exact";
    case NumericMode::floating: return "floating";
    default: return "finite_difference";
    }
}

inline constexpr int max_jet_order = 8;

/// Storage one order above the cap so that det Df can be expanded to the cap.
template <class S>
using Jet = TruncatedSeries<S, max_jet_order + 1>;

/// Plane map germ (xi, t) -> (x, y), given by expressions or by a numeric evaluator.
class PlaneMapGerm {
public:
    using Evaluator = std::function<Vec2(double xi, double t)>;
    using JacobianFn = std::function<Mat2(double xi, double t)>;

    PlaneMapGerm() = default;

    static PlaneMapGerm from_expressions(const Expr& x, const Expr& y, const Box& box = {})
    {
        if (x.uses_variable(var_lam) || y.uses_variable(var_lam))
            throw std::invalid_argument("germ components depend on lam; specialize the deformation first");
        auto impl = std::make_shared<Impl>();
        impl->x = x;
        impl->y = y;
        impl->cx = CompiledExpr(x);
        impl->cy = CompiledExpr(y);
        impl->jac = {CompiledExpr(x.derivative(var_xi)), CompiledExpr(y.derivative(var_xi)),
                     CompiledExpr(x.derivative(var_t)), CompiledExpr(y.derivative(var_t))};
        PlaneMapGerm g;
        g.impl_ = std::move(impl);
        g.box_ = box;
        return g;
    }

    static PlaneMapGerm parse(std::string_view x, std::string_view y, const Box& box = {})
    {
        return from_expressions(parse_expression(x), parse_expression(y), box);
    }

    /// Numeric evaluator; `jacobian` is optional and replaces finite differences when given.
    static PlaneMapGerm black_box(Evaluator f, const Box& box = {}, JacobianFn jacobian = {})
    {
        auto impl = std::make_shared<Impl>();
        impl->eval = std::move(f);
        impl->jac_fn = std::move(jacobian);
        PlaneMapGerm g;
        g.impl_ = std::move(impl);
        g.box_ = box;
        return g;
    }

    bool valid() const { return impl_ != nullptr; }
    bool has_expressions() const { return impl_ && impl_->x.has_value(); }
    /// Both components are expressions that the exact backend can expand.
    bool exact_polynomial() const
    {
        return has_expressions() && impl_->x->exact_capable() && impl_->y->exact_capable();
    }
    bool has_jacobian() const { return has_expressions() || (impl_ && impl_->jac_fn); }

    const Expr& x() const { return need_expr(impl_->x); }
    const Expr& y() const { return need_expr(impl_->y); }

    const Box& box() const { return box_; }
    bool strict_bounds() const { return strict_; }

    PlaneMapGerm with_box(const Box& b) const
    {
        PlaneMapGerm g = *this;
        g.box_ = b;
        return g;
    }
    PlaneMapGerm with_strict_bounds(bool on = true) const
    {
        PlaneMapGerm g = *this;
        g.strict_ = on;
        return g;
    }
    /// Drops the expressions so that every analysis takes the numeric path.
    PlaneMapGerm as_black_box() const
    {
        const PlaneMapGerm self = *this;
        return black_box([self](double xi, double t) { return self.raw(xi, t); }, box_).with_strict_bounds(strict_);
    }

    Vec2 operator()(double xi, double t) const
    {
        if (strict_ && !box_.contains(xi, t))
            throw DomainError("point (" + std::to_string(xi) + ", " + std::to_string(t) + ") outside the germ box");
        const Vec2 p = raw(xi, t);
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw EvaluationError("non-finite value at (" + std::to_string(xi) + ", " + std::to_string(t) + ")");
        return p;
    }
    Vec2 operator()(const Vec2& p) const { return (*this)(p.x, p.y); }

    /// Columns are the partial derivatives in xi and t.
    Mat2 jacobian(double xi, double t) const
    {
        if (has_expressions()) {
            const std::array<double, 3> v{xi, t, 0.0};
            return {{impl_->jac[0].run<double>(v), impl_->jac[1].run<double>(v)},
                    {impl_->jac[2].run<double>(v), impl_->jac[3].run<double>(v)}};
        }
        if (impl_->jac_fn)
            return impl_->jac_fn(xi, t);
        // Central differences with one Richardson level.
        auto central = [&](double h) {
            const Vec2 dxi = (raw(xi + h, t) - raw(xi - h, t)) / (2 * h);
            const Vec2 dt = (raw(xi, t + h) - raw(xi, t - h)) / (2 * h);
            return Mat2{dxi, dt};
        };
        const double h = 1e-3;
        const Mat2 a = central(h);
        const Mat2 b = central(2 * h);
        return {(4.0 * a.c0 - b.c0) / 3.0, (4.0 * a.c1 - b.c1) / 3.0};
    }

    double det(double xi, double t) const { return jacobian(xi, t).det(); }

    /// Germ at the support point xi0: g(xi, t) = f(xi0 + xi, t) - f(xi0, 0).
    PlaneMapGerm recentered(double xi0) const
    {
        const Box b{box_.xi_min - xi0, box_.xi_max - xi0, box_.t_min, box_.t_max};
        if (has_expressions()) {
            const Expr c = Expr::constant(Rational(xi0));
            auto shift = [&](const Expr& e) {
                const Expr moved = e.substitute(var_xi, Expr::xi() + c);
                const Expr at = e.substitute(var_xi, c).substitute(var_t, Expr::constant(Rational(0)));
                return moved - at;
            };
            return from_expressions(shift(*impl_->x), shift(*impl_->y), b).with_strict_bounds(strict_);
        }
        const PlaneMapGerm self = *this;
        const Vec2 origin = raw(xi0, 0.0);
        JacobianFn jac;
        if (impl_->jac_fn)
            jac = [self, xi0](double xi, double t) { return self.impl_->jac_fn(xi + xi0, t); };
        return black_box([self, xi0, origin](double xi, double t) { return self.raw(xi + xi0, t) - origin; }, b,
                         std::move(jac))
            .with_strict_bounds(strict_);
    }

    /// Unchecked evaluation.
    Vec2 raw(double xi, double t) const
    {
        if (has_expressions()) {
            const std::array<double, 3> v{xi, t, 0.0};
            return {impl_->cx.run<double>(v), impl_->cy.run<double>(v)};
        }
        return impl_->eval(xi, t);
    }

private:
    struct Impl {
        std::optional<Expr> x, y;
        CompiledExpr cx, cy;
        std::array<CompiledExpr, 4> jac;
        Evaluator eval;
        JacobianFn jac_fn;
    };

    static const Expr& need_expr(const std::optional<Expr>& e)
    {
        if (!e)
            throw std::logic_error("germ has no expression form");
        return *e;
    }

    std::shared_ptr<const Impl> impl_;
    Box box_{};
    bool strict_ = false;
};

template <class S>
struct MapJet {
    Jet<S> x;
    Jet<S> y;

    int order() const { return x.order(); }

    /// det Df = x_xi y_t - x_t y_xi, one order lower than the map jet.
    Jet<S> det() const
    {
        return x.derivative(0) * y.derivative(1) - x.derivative(1) * y.derivative(0);
    }
};

namespace detail {

inline void check_order(int order, int cap)
{
    if (order < 0 || order > cap)
        throw std::invalid_argument("jet order " + std::to_string(order) + " exceeds the cap of " +
                                    std::to_string(cap));
}

template <class S>
MapJet<S> expression_jet(const PlaneMapGerm& f, const S& xi0, const S& t0, int order)
{
    using J = Jet<S>;
    const std::array<J, 3> vars{J::variable(0, xi0, order), J::variable(1, t0, order),
                                J::constant(scalar_ops<S>::from_int(0), order)};
    MapJet<S> j{f.x().evaluate<J>(vars), f.y().evaluate<J>(vars)};
    for (const J* s : {&j.x, &j.y})
        for (int d = 0; d <= order; ++d)
            for (int b = 0; b <= d; ++b)
                if (!std::isfinite(scalar_ops<S>::value(s->coeff(d - b, b))))
                    throw EvaluationError("non-finite jet coefficient");
    return j;
}

struct Stencil {
    std::vector<int> offset;
    std::vector<double> weight;
};

/// Central stencil for the m-th derivative in units of the step (second-order accurate).
inline Stencil central_stencil(int m)
{
    Stencil s;
    if (m == 0) {
        s.offset = {0};
        s.weight = {1.0};
        return s;
    }
    if (m % 2 == 0) {
        double c = 1.0;
        for (int j = 0; j <= m; ++j) {
            s.offset.push_back(m / 2 - j);
            s.weight.push_back((j % 2 == 0 ? 1.0 : -1.0) * c);
            c = c * (m - j) / (j + 1);
        }
        return s;
    }
    const Stencil even = central_stencil(m - 1);
    const int half = (m + 1) / 2;
    s.offset.resize(std::size_t(2 * half + 1));
    s.weight.assign(std::size_t(2 * half + 1), 0.0);
    for (int i = -half; i <= half; ++i)
        s.offset[std::size_t(i + half)] = i;
    for (std::size_t k = 0; k < even.offset.size(); ++k) {
        s.weight[std::size_t(even.offset[k] + 1 + half)] += 0.5 * even.weight[k];
        s.weight[std::size_t(even.offset[k] - 1 + half)] -= 0.5 * even.weight[k];
    }
    return s;
}

/// Step used for derivatives of total order k; grows with k to hold down round-off.
inline double fd_step(int k) { return k <= 1 ? 1e-3 : 1e-3 * double(1 << (k - 1)); }

inline double factorial(int n)
{
    double r = 1.0;
    for (int i = 2; i <= n; ++i)
        r *= i;
    return r;
}

} // namespace detail

/// Jet of both components by central finite differences with one Richardson level.
inline MapJet<double> fd_map_jet(const PlaneMapGerm& f, double xi0, double t0, int order)
{
    detail::check_order(order, max_jet_order + 1);
    if (!f.box().interior(xi0, t0))
        throw DomainError("finite-difference base point must be interior to the germ box");
    std::map<std::pair<double, double>, Vec2> cache;
    auto at = [&](double dxi, double dt) {
        const auto key = std::make_pair(dxi, dt);
        auto it = cache.find(key);
        if (it != cache.end())
            return it->second;
        const Vec2 v = f(xi0 + dxi, t0 + dt);
        cache.emplace(key, v);
        return v;
    };
    MapJet<double> j{Jet<double>(order), Jet<double>(order)};
    for (int d = 0; d <= order; ++d) {
        const double h = detail::fd_step(d);
        for (int b = 0; b <= d; ++b) {
            const int a = d - b;
            const detail::Stencil sa = detail::central_stencil(a);
            const detail::Stencil sb = detail::central_stencil(b);
            auto derivative = [&](double step) {
                Vec2 acc;
                for (std::size_t i = 0; i < sa.offset.size(); ++i)
                    for (std::size_t k = 0; k < sb.offset.size(); ++k) {
                        const double w = sa.weight[i] * sb.weight[k];
                        if (w != 0.0)
                            acc += w * at(sa.offset[i] * step, sb.offset[k] * step);
                    }
                return acc / std::pow(step, d);
            };
            Vec2 value;
            if (d == 0)
                value = at(0.0, 0.0);
            else
                value = (4.0 * derivative(h) - derivative(2 * h)) / 3.0;
            value = value / (detail::factorial(a) * detail::factorial(b));
            if (std::fabs(value.x) > 1e6 || std::fabs(value.y) > 1e6)
                throw IllConditionedError("finite-difference coefficient of xi^" + std::to_string(a) + " t^" +
                                          std::to_string(b) + " exceeds 1e6");
            j.x.coeff(a, b) = value.x;
            j.y.coeff(a, b) = value.y;
        }
    }
    return j;
}

/// Exact jet of an expression germ with rational coefficients.
inline MapJet<Rational> exact_map_jet(const PlaneMapGerm& f, const Rational& xi0, const Rational& t0, int order)
{
    detail::check_order(order, max_jet_order + 1);
    if (!f.exact_polynomial())
        throw InexactError("germ is not an exact expression");
    return detail::expression_jet<Rational>(f, xi0, t0, order);
}

/// Jet in double precision; `mode` picks the backend. Exact results are rounded.
inline MapJet<double> map_jet(const PlaneMapGerm& f, Vec2 base, int order, NumericMode mode)
{
    detail::check_order(order, max_jet_order + 1);
    switch (mode) {
    case NumericMode::exact: {
        const MapJet<Rational> e = exact_map_jet(f, Rational(base.x), Rational(base.y), order);
        auto conv = [](const Rational& q) { return to_double(q); };
        return {e.x.map<double>(conv), e.y.map<double>(conv)};
    }
    case NumericMode::floating:
        if (!f.has_expressions())
            throw std::invalid_argument("floating jets need an expression germ");
        return detail::expression_jet<double>(f, base.x, base.y, order);
    default: return fd_map_jet(f, base.x, base.y, order);
    }
}

/// Most precise backend available for the germ.
inline NumericMode default_mode(const PlaneMapGerm& f)
{
    if (f.exact_polynomial())
        return NumericMode::exact;
    return f.has_expressions() ? NumericMode::floating : NumericMode::finite_difference;
}

enum class Quantity { x, y, det };

/// Taylor jet of one scalar quantity of f at `base`, order <= 8.
inline Jet<double> taylor_jet(const PlaneMapGerm& f, Quantity q, Vec2 base, int order, NumericMode mode)
{
    detail::check_order(order, max_jet_order);
    const MapJet<double> j = map_jet(f, base, q == Quantity::det ? order + 1 : order, mode);
    switch (q) {
    case Quantity::x: return j.x;
    case Quantity::y: return j.y;
    default: return j.det();
    }
}

inline Jet<Rational> taylor_jet_exact(const PlaneMapGerm& f, Quantity q, const Rational& xi0, const Rational& t0,
                                      int order)
{
    detail::check_order(order, max_jet_order);
    const MapJet<Rational> j = exact_map_jet(f, xi0, t0, q == Quantity::det ? order + 1 : order);
    switch (q) {
    case Quantity::x: return j.x;
    case Quantity::y: return j.y;
    default: return j.det();
    }
}

/// det Df as an evaluable, jet-capable field.
class JacobianDeterminant {
public:
    explicit JacobianDeterminant(PlaneMapGerm f) : f_(std::move(f))
    {
        if (f_.has_expressions()) {
            const Expr& x = f_.x();
            const Expr& y = f_.y();
            expr_ = x.derivative(var_xi) * y.derivative(var_t) - x.derivative(var_t) * y.derivative(var_xi);
        }
    }

    /// Present only when f is given by expressions.
    const std::optional<Expr>& expression() const { return expr_; }
    const PlaneMapGerm& germ() const { return f_; }

    double operator()(double xi, double t) const { return f_.det(xi, t); }

    Jet<double> jet(Vec2 base, int order, NumericMode mode) const
    {
        return taylor_jet(f_, Quantity::det, base, order, mode);
    }

private:
    PlaneMapGerm f_;
    std::optional<Expr> expr_;
};

inline JacobianDeterminant jacobian_determinant(const PlaneMapGerm& f) { return JacobianDeterminant(f); }

inline Vec2 evaluate_map(const PlaneMapGerm& f, Vec2 p) { return f(p.x, p.y); }

enum class Tangency { tangential, not_tangential, inconclusive };

inline const char* to_string(Tangency v)
{
    switch (v) {
    case Tangency::tangential: return "tangential";
    case Tangency::not_tangential: return "not_tangential";
    default: return "inconclusive";
    }
}

struct TangencySample {
    double xi = 0.0;
    Vec2 d_xi;
    Vec2 d_t;
    double defect = 0.0; ///< |d_xi x d_t|
    double threshold = 0.0;
    bool parallel = false;
    bool nonzero = false;
    bool borderline = false;
};

struct TangencyDiagnostics {
    std::vector<TangencySample> samples;
    Tangency verdict = Tangency::inconclusive;
    /// Only local immersion of the support is checked.
    bool embeddedness_checked = false;
    std::string reason;

    bool tangential() const { return verdict == Tangency::tangential; }
};

/// Checks that d/dxi f and d/dt f are parallel and nonzero along t = 0.
inline TangencyDiagnostics is_tangential_family(const PlaneMapGerm& f, int samples = 21)
{
    if (samples < 3)
        throw std::invalid_argument("need at least 3 samples");
    constexpr double eps_rel = 1e-9;
    constexpr double eps_nz = 1e-9;
    TangencyDiagnostics out;
    const Box& b = f.box();
    bool failed = false;
    bool borderline = false;
    // Keep away from the box edge so that finite differences stay inside.
    const double margin = f.has_jacobian() ? 0.0 : std::min(0.01, 0.1 * b.xi_width());
    for (int i = 0; i < samples; ++i) {
        const double xi = b.xi_min + margin + (b.xi_width() - 2 * margin) * i / double(samples - 1);
        const Mat2 J = f.jacobian(xi, 0.0);
        TangencySample s;
        s.xi = xi;
        s.d_xi = J.c0;
        s.d_t = J.c1;
        s.defect = std::fabs(cross(J.c0, J.c1));
        const double n0 = norm(J.c0);
        const double n1 = norm(J.c1);
        s.threshold = eps_rel * n0 * n1;
        s.nonzero = n0 > eps_nz && n1 > eps_nz;
        s.parallel = s.defect < s.threshold;
        auto near = [](double v, double thr) { return thr > 0 && v >= thr / 10 && v < thr * 10; };
        s.borderline = near(n0, eps_nz) || near(n1, eps_nz) || (s.threshold > 0 && near(s.defect, s.threshold));
        if (!s.nonzero || !s.parallel) {
            // A failure inside the guard band is not conclusive.
            if (!s.borderline && !failed) {
                out.reason = std::string(!s.nonzero ? (n1 <= eps_nz ? "d/dt f vanishes" : "d/dxi f vanishes")
                                                    : "d/dxi f and d/dt f are not parallel") +
                             " at xi=" + std::to_string(xi);
                failed = true;
            }
        }
        borderline = borderline || s.borderline;
        out.samples.push_back(s);
    }
    if (failed) {
        out.verdict = Tangency::not_tangential;
    } else if (borderline) {
        out.verdict = Tangency::inconclusive;
        out.reason = "a sample lies within 10x of a threshold";
    } else {
        out.verdict = Tangency::tangential;
    }
    return out;
}

} // namespace tangfam
