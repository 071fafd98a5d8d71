#pragma once

#include "tangfam/classify.hpp"
#include "tangfam/envelope.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tangfam {

class MetricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A geodesic left the chart domain.
class ChartExitError : public std::runtime_error {
public:
    ChartExitError(Vec2 where, double t)
        : std::runtime_error("geodesic left the chart at (" + std::to_string(where.x) + ", " +
                             std::to_string(where.y) + "), t=" + std::to_string(t)),
          exit_point(where), exit_time(t)
    {
    }
    Vec2 exit_point;
    double exit_time;
};

class EnergyDriftError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class BranchNotFoundError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Christoffel symbols G[k][i][j] = Gamma^k_ij.
struct Christoffel {
    double G[2][2][2] = {};
    double operator()(int k, int i, int j) const { return G[k][i][j]; }
};

/// Metric, Christoffel symbols and their first derivatives at a point.
struct LocalGeometry {
    double g[2][2] = {};
    Christoffel gamma;
    double dgamma[2][2][2][2] = {}; ///< [l][k][i][j] = d_l Gamma^k_ij
};

/// Surface metric on a coordinate chart (u, v).
class MetricChart {
public:
    using MetricFn = std::function<std::array<double, 3>(double u, double v)>;
    using EmbeddingFn = std::function<std::array<double, 3>(double u, double v)>;

    static MetricChart from_expressions(const Expr& g11, const Expr& g12, const Expr& g22, const Box& domain,
                                        std::string name = "custom")
    {
        MetricChart m;
        m.name_ = std::move(name);
        m.domain_ = domain;
        m.exprs_ = {g11, g12, g22};
        m.compiled_ = {CompiledExpr(g11), CompiledExpr(g12), CompiledExpr(g22)};
        m.flat_ = g11.is_constant(1) && g12.is_constant(0) && g22.is_constant(1);
        return m;
    }

    static MetricChart parse(std::string_view g11, std::string_view g12, std::string_view g22, const Box& domain,
                             std::string name = "custom")
    {
        const VariableSet vars = VariableSet::chart();
        return from_expressions(parse_expression(g11, vars), parse_expression(g12, vars), parse_expression(g22, vars),
                                domain, std::move(name));
    }

    /// Metric known only numerically; derivatives by central differences.
    static MetricChart black_box(MetricFn g, const Box& domain, std::string name = "custom")
    {
        MetricChart m;
        m.name_ = std::move(name);
        m.domain_ = domain;
        m.fn_ = std::move(g);
        return m;
    }

    static MetricChart flat()
    {
        return parse("1", "0", "1", {-1e6, 1e6, -1e6, 1e6}, "flat");
    }

    /// Unit sphere in polar coordinates about a pole: g = du^2 + sin(u)^2 dv^2.
    static MetricChart sphere()
    {
        MetricChart m = parse("1", "0", "sin(u)^2", polar_domain(), "sphere");
        m.polar_ = true;
        m.embedding_ = [](double u, double v) {
            return std::array<double, 3>{std::cos(u), std::sin(u) * std::cos(v), std::sin(u) * std::sin(v)};
        };
        return m;
    }

    /// Spheroid with semi-axes (1, 1, 1 + eps), charted by polar coordinates about the
    /// equatorial point (1, 0, 0): X = (cos u, sin u cos v, (1 + eps) sin u sin v).
    static MetricChart ellipsoid(double eps)
    {
        if (!(eps > -1.0))
            throw std::invalid_argument("ellipsoid needs eps > -1");
        const double c = (1 + eps) * (1 + eps);
        const std::string k = to_decimal(c);
        const std::string km1 = to_decimal(c - 1);
        MetricChart m = parse("sin(u)^2 + cos(u)^2*cos(v)^2 + " + k + "*cos(u)^2*sin(v)^2",
                              km1 + "*sin(u)*cos(u)*sin(v)*cos(v)", "sin(u)^2*(sin(v)^2 + " + k + "*cos(v)^2)",
                              polar_domain(), "ellipsoid(" + to_decimal(eps) + ")");
        m.polar_ = true;
        m.embedding_ = [eps](double u, double v) {
            return std::array<double, 3>{std::cos(u), std::sin(u) * std::cos(v), (1 + eps) * std::sin(u) * std::sin(v)};
        };
        return m;
    }

    /// Same spheroid charted about its symmetry axis: X = (sin u cos v, sin u sin v, (1 + eps) cos u).
    static MetricChart ellipsoid_axial(double eps)
    {
        if (!(eps > -1.0))
            throw std::invalid_argument("ellipsoid needs eps > -1");
        const std::string k = to_decimal((1 + eps) * (1 + eps));
        MetricChart m = parse("cos(u)^2 + " + k + "*sin(u)^2", "0", "sin(u)^2", polar_domain(),
                              "ellipsoid-axial(" + to_decimal(eps) + ")");
        m.polar_ = true;
        m.embedding_ = [eps](double u, double v) {
            return std::array<double, 3>{std::sin(u) * std::cos(v), std::sin(u) * std::sin(v), (1 + eps) * std::cos(u)};
        };
        return m;
    }

    /// "flat", "sphere", "ellipsoid(0.05)" / "ellipsoid:0.05", or "ellipsoid-axial:0.05".
    static MetricChart preset(std::string_view name)
    {
        if (name == "flat")
            return flat();
        if (name == "sphere")
            return sphere();
        if (name.starts_with("ellipsoid")) {
            const bool axial = name.starts_with("ellipsoid-axial");
            std::string_view rest = name.substr(axial ? 15 : 9);
            if (rest.starts_with(":"))
                rest.remove_prefix(1);
            else if (rest.starts_with("(") && rest.ends_with(")"))
                rest = rest.substr(1, rest.size() - 2);
            else
                throw std::invalid_argument("bad metric preset: " + std::string(name));
            Rational e;
            if (!parse_decimal(rest, e))
                throw std::invalid_argument("bad ellipsoid parameter: " + std::string(rest));
            return axial ? ellipsoid_axial(to_double(e)) : ellipsoid(to_double(e));
        }
        throw std::invalid_argument("unknown metric preset: " + std::string(name));
    }

    /// Marks (u, v) as polar coordinates (u from the pole, v the angle).
    MetricChart with_polar(bool polar) const
    {
        MetricChart m = *this;
        m.polar_ = polar;
        return m;
    }

    const std::string& name() const { return name_; }
    const Box& domain() const { return domain_; }
    bool is_flat() const { return flat_; }
    /// Chart coordinates are polar (u = distance-like angle from the pole, v = angle).
    bool polar() const { return polar_; }
    const std::optional<EmbeddingFn>& embedding() const { return embedding_; }
    bool has_expressions() const { return exprs_.has_value(); }
    const std::array<Expr, 3>& expressions() const { return *exprs_; }

    std::array<double, 3> metric(double u, double v) const
    {
        if (fn_)
            return fn_(u, v);
        const std::array<double, 3> p{u, v, 0.0};
        return {compiled_[0].run<double>(p), compiled_[1].run<double>(p), compiled_[2].run<double>(p)};
    }

    LocalGeometry geometry(Vec2 q) const
    {
        using S = TruncatedSeries<double, 2>;
        std::array<S, 3> g;
        if (fn_) {
            g = fd_metric_series(q);
        } else {
            const std::array<S, 3> vars{S::variable(0, q.x, 2), S::variable(1, q.y, 2), S::constant(0.0, 2)};
            for (int c = 0; c < 3; ++c)
                g[std::size_t(c)] = compiled_[std::size_t(c)].run<S>(vars);
        }
        const S& g11 = g[0];
        const S& g12 = g[1];
        const S& g22 = g[2];
        const double d0 = g11.coeff(0, 0) * g22.coeff(0, 0) - g12.coeff(0, 0) * g12.coeff(0, 0);
        if (!(g11.coeff(0, 0) > 0) || !(d0 > 0))
            throw MetricError("metric not positive definite at (" + std::to_string(q.x) + ", " + std::to_string(q.y) +
                              ")");
        const S det = g11 * g22 - g12 * g12;
        const S rd = det.reciprocal();
        // Inverse metric, order 2 kept for the product below.
        const S inv[2][2] = {{g22 * rd, -(g12 * rd)}, {-(g12 * rd), g11 * rd}};
        const S* gm[2][2] = {{&g11, &g12}, {&g12, &g22}};
        S dg[2][2][2]; // [a][i][j] = d_a g_ij, order 1
        for (int a = 0; a < 2; ++a)
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                    dg[a][i][j] = gm[i][j]->derivative(a);
        LocalGeometry out;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                out.g[i][j] = gm[i][j]->coeff(0, 0);
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 2; ++i)
                for (int j = i; j < 2; ++j) {
                    S sum = S::constant(0.0, 1);
                    for (int l = 0; l < 2; ++l)
                        sum += inv[k][l].truncated(1) * (dg[i][j][l] + dg[j][i][l] - dg[l][i][j]);
                    sum *= 0.5;
                    out.gamma.G[k][i][j] = out.gamma.G[k][j][i] = sum.coeff(0, 0);
                    out.dgamma[0][k][i][j] = out.dgamma[0][k][j][i] = sum.coeff(1, 0);
                    out.dgamma[1][k][i][j] = out.dgamma[1][k][j][i] = sum.coeff(0, 1);
                }
        return out;
    }

    Christoffel christoffel(Vec2 q) const { return geometry(q).gamma; }

    /// g11 > 0 and det g > 0 on an n x n sample of the domain (clipped to |.| <= 10).
    bool positive_definite_on_samples(int n = 20) const
    {
        const double u0 = std::max(domain_.xi_min, -10.0), u1 = std::min(domain_.xi_max, 10.0);
        const double v0 = std::max(domain_.t_min, -10.0), v1 = std::min(domain_.t_max, 10.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                const auto g = metric(u0 + (u1 - u0) * (i + 0.5) / n, v0 + (v1 - v0) * (j + 0.5) / n);
                if (!(g[0] > 0) || !(g[0] * g[2] - g[1] * g[1] > 0))
                    return false;
            }
        return true;
    }

    /// Plane picture of chart points: (u cos v, u sin v) for polar charts.
    Vec2 to_plane(Vec2 q) const
    {
        if (!polar_)
            return q;
        return {q.x * std::cos(q.y), q.x * std::sin(q.y)};
    }
    Mat2 plane_jacobian(Vec2 q) const
    {
        if (!polar_)
            return {{1, 0}, {0, 1}};
        const double c = std::cos(q.y), s = std::sin(q.y);
        return {{c, s}, {-q.x * s, q.x * c}};
    }

private:
    static Box polar_domain() { return {1e-3, std::numbers::pi - 1e-3, -1e6, 1e6}; }

    static std::string to_decimal(double q)
    {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(17);
        os << q;
        return os.str();
    }

    std::array<TruncatedSeries<double, 2>, 3> fd_metric_series(Vec2 q) const
    {
        using S = TruncatedSeries<double, 2>;
        const double h = 1e-4;
        auto at = [&](double du, double dv) { return fn_(q.x + du, q.y + dv); };
        const auto c = at(0, 0), up = at(h, 0), um = at(-h, 0), vp = at(0, h), vm = at(0, -h);
        const auto pp = at(h, h), pm = at(h, -h), mp = at(-h, h), mm = at(-h, -h);
        std::array<S, 3> out;
        for (std::size_t k = 0; k < 3; ++k) {
            S s(2);
            s.coeff(0, 0) = c[k];
            s.coeff(1, 0) = (up[k] - um[k]) / (2 * h);
            s.coeff(0, 1) = (vp[k] - vm[k]) / (2 * h);
            s.coeff(2, 0) = 0.5 * (up[k] - 2 * c[k] + um[k]) / (h * h);
            s.coeff(1, 1) = (pp[k] - pm[k] - mp[k] + mm[k]) / (4 * h * h);
            s.coeff(0, 2) = 0.5 * (vp[k] - 2 * c[k] + vm[k]) / (h * h);
            out[k] = s;
        }
        return out;
    }

    std::string name_;
    Box domain_;
    std::optional<std::array<Expr, 3>> exprs_;
    std::array<CompiledExpr, 3> compiled_;
    MetricFn fn_;
    std::optional<EmbeddingFn> embedding_;
    bool flat_ = false;
    bool polar_ = false;
};

struct IntegratorSettings {
    double max_step = 4e-3;  ///< also at least 1000 steps per integration
    double drift_abort = 1e-6;
};

namespace detail {

/// Geodesic state with a Jacobi field: q, v = q', J, W = J'.
struct GeoState {
    Vec2 q, v, J, W;

    GeoState operator+(const GeoState& o) const { return {q + o.q, v + o.v, J + o.J, W + o.W}; }
    GeoState operator*(double k) const { return {q * k, v * k, J * k, W * k}; }
};

inline Vec2 quad(const Christoffel& G, Vec2 a, Vec2 b)
{
    const double A[2] = {a.x, a.y}, B[2] = {b.x, b.y};
    double out[2] = {0, 0};
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                out[k] += G.G[k][i][j] * A[i] * B[j];
    return {out[0], out[1]};
}

/// Derivative of the state; the Jacobi part is skipped when `jacobi` is false.
inline GeoState geo_rhs(const LocalGeometry& geo, const GeoState& s, bool jacobi)
{
    GeoState d;
    d.q = s.v;
    d.v = -quad(geo.gamma, s.v, s.v);
    if (jacobi) {
        d.J = s.W;
        Vec2 dg;
        const double Jl[2] = {s.J.x, s.J.y};
        for (int l = 0; l < 2; ++l) {
            Christoffel dl;
            for (int k = 0; k < 2; ++k)
                for (int i = 0; i < 2; ++i)
                    for (int j = 0; j < 2; ++j)
                        dl.G[k][i][j] = geo.dgamma[l][k][i][j];
            dg += quad(dl, s.v, s.v) * Jl[l];
        }
        d.W = -(dg + 2.0 * quad(geo.gamma, s.v, s.W));
    }
    return d;
}

inline double energy(const LocalGeometry& geo, Vec2 v)
{
    return geo.g[0][0] * v.x * v.x + 2 * geo.g[0][1] * v.x * v.y + geo.g[1][1] * v.y * v.y;
}

struct Trajectory {
    std::vector<double> t;
    std::vector<GeoState> state;
    std::vector<GeoState> rate; ///< derivative at each node
    double energy0 = 0.0;
    double max_drift = 0.0;
};

/// Classical RK4 from 0 to t_end with n = max(1000, |t_end| / max_step) equal steps.
/// Nodes with t outside [keep_lo, keep_hi] are not stored.
inline Trajectory integrate(const MetricChart& m, GeoState s, double t_end, bool jacobi, const IntegratorSettings& st,
                            double keep_lo = -1e300, double keep_hi = 1e300)
{
    Trajectory tr;
    const int n = std::max(1000, int(std::ceil(std::fabs(t_end) / st.max_step)));
    const double h = t_end / n;
    const Box& dom = m.domain();
    LocalGeometry geo = m.geometry(s.q);
    tr.energy0 = energy(geo, s.v);
    auto keep = [&](double t) { return t >= keep_lo && t <= keep_hi; };
    GeoState k1 = geo_rhs(geo, s, jacobi);
    for (int i = 0; i < n; ++i) {
        const double t = i * h;
        if (keep(t)) {
            tr.t.push_back(t);
            tr.state.push_back(s);
            tr.rate.push_back(k1);
        }
        const GeoState s2 = s + k1 * (0.5 * h);
        if (!dom.contains(s2.q.x, s2.q.y))
            throw ChartExitError(s2.q, t + 0.5 * h);
        const GeoState k2 = geo_rhs(m.geometry(s2.q), s2, jacobi);
        const GeoState s3 = s + k2 * (0.5 * h);
        if (!dom.contains(s3.q.x, s3.q.y))
            throw ChartExitError(s3.q, t + 0.5 * h);
        const GeoState k3 = geo_rhs(m.geometry(s3.q), s3, jacobi);
        const GeoState s4 = s + k3 * h;
        if (!dom.contains(s4.q.x, s4.q.y))
            throw ChartExitError(s4.q, t + h);
        const GeoState k4 = geo_rhs(m.geometry(s4.q), s4, jacobi);
        s = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if (!dom.contains(s.q.x, s.q.y))
            throw ChartExitError(s.q, t + h);
        geo = m.geometry(s.q);
        const double drift = std::fabs(energy(geo, s.v) - tr.energy0) / tr.energy0;
        tr.max_drift = std::max(tr.max_drift, drift);
        if (drift > st.drift_abort)
            throw EnergyDriftError("energy drift " + std::to_string(drift) + " at t=" + std::to_string(t + h));
        k1 = geo_rhs(geo, s, jacobi);
    }
    if (keep(t_end)) {
        tr.t.push_back(t_end);
        tr.state.push_back(s);
        tr.rate.push_back(k1);
    }
    return tr;
}

inline Vec2 hermite(double s, double h, Vec2 p0, Vec2 d0, Vec2 p1, Vec2 d1)
{
    const double s2 = s * s, s3 = s2 * s;
    return p0 * (2 * s3 - 3 * s2 + 1) + d0 * (h * (s3 - 2 * s2 + s)) + p1 * (-2 * s3 + 3 * s2) + d1 * (h * (s3 - s2));
}

/// Cubic Hermite interpolation of every state component on a sorted node list.
inline GeoState interpolate(const std::vector<double>& ts, const std::vector<GeoState>& st,
                            const std::vector<GeoState>& rt, double t)
{
    if (ts.empty())
        throw std::logic_error("empty trajectory");
    if (ts.size() == 1)
        return st[0];
    std::size_t k = std::size_t(std::upper_bound(ts.begin(), ts.end(), t) - ts.begin());
    k = std::clamp<std::size_t>(k, 1, ts.size() - 1) - 1;
    const double h = ts[k + 1] - ts[k];
    const double s = (t - ts[k]) / h;
    const GeoState &a = st[k], &b = st[k + 1], &da = rt[k], &db = rt[k + 1];
    return {hermite(s, h, a.q, da.q, b.q, db.q), hermite(s, h, a.v, da.v, b.v, db.v),
            hermite(s, h, a.J, da.J, b.J, db.J), hermite(s, h, a.W, da.W, b.W, db.W)};
}

} // namespace detail

/// Integrated geodesic with dense output.
struct GeodesicPath {
    std::vector<double> t;
    std::vector<Vec2> q, v;
    double energy0 = 0.0;
    double max_drift = 0.0; ///< max |E(t) - E(0)| / E(0)

    Vec2 position(double s) const { return sample(s).q; }
    Vec2 velocity(double s) const { return sample(s).v; }
    Vec2 end() const { return q.back(); }

    detail::GeoState sample(double s) const
    {
        std::vector<double> ts = t;
        bool rev = ts.size() > 1 && ts.back() < ts.front();
        if (rev)
            std::reverse(ts.begin(), ts.end());
        std::vector<detail::GeoState> st(q.size()), rt(q.size());
        for (std::size_t k = 0; k < q.size(); ++k) {
            const std::size_t i = rev ? q.size() - 1 - k : k;
            st[k] = {q[i], v[i], {}, {}};
            rt[k] = {v[i], a[i], {}, {}};
        }
        return detail::interpolate(ts, st, rt, s);
    }

    std::vector<Vec2> a; ///< accelerations at the nodes
};

/// Geodesic from q with unit velocity v (|v|_g = 1), integrated to t_end by RK4.
inline GeodesicPath integrate_geodesic(const MetricChart& m, Vec2 q, Vec2 v, double t_end,
                                       const IntegratorSettings& st = {})
{
    if (!m.domain().contains(q.x, q.y))
        throw ChartExitError(q, 0.0);
    const double e = detail::energy(m.geometry(q), v);
    if (std::fabs(e - 1.0) > 1e-8)
        throw std::invalid_argument("initial velocity must have unit length, |v|_g^2 = " + std::to_string(e));
    const detail::Trajectory tr = detail::integrate(m, {q, v, {}, {}}, t_end, false, st);
    GeodesicPath p;
    p.t = tr.t;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
        p.q.push_back(tr.state[k].q);
        p.v.push_back(tr.state[k].v);
        p.a.push_back(tr.rate[k].v);
    }
    p.energy0 = tr.energy0;
    p.max_drift = tr.max_drift;
    return p;
}

/// Support curve xi -> (u(xi), v(xi)) in chart coordinates.
class SupportCurve {
public:
    /// `period` > 0 for closed curves (xi in [0, period)); otherwise xi in [lo, hi].
    static SupportCurve from_expressions(const Expr& u, const Expr& v, double period, double lo = 0.0,
                                         double hi = 0.0)
    {
        SupportCurve c;
        c.u_ = u;
        c.v_ = v;
        c.period_ = period;
        c.lo_ = period > 0 ? 0.0 : lo;
        c.hi_ = period > 0 ? period : hi;
        if (!(c.hi_ > c.lo_))
            throw std::invalid_argument("empty support parameter range");
        c.cu_ = {CompiledExpr(u), CompiledExpr(u.derivative(var_xi)), CompiledExpr(u.derivative(var_xi).derivative(var_xi))};
        c.cv_ = {CompiledExpr(v), CompiledExpr(v.derivative(var_xi)), CompiledExpr(v.derivative(var_xi).derivative(var_xi))};
        return c;
    }

    static SupportCurve parse(std::string_view u, std::string_view v, double period, double lo = 0.0,
                              double hi = 0.0)
    {
        const VariableSet vars = VariableSet::curve();
        return from_expressions(parse_expression(u, vars), parse_expression(v, vars), period, lo, hi);
    }

    /// Circle of radius r: about the pole of a polar chart, about the origin otherwise.
    static SupportCurve circle(double r, bool polar)
    {
        const std::string rs = number(r);
        if (polar)
            return parse(rs, "xi", 2 * std::numbers::pi);
        return parse(rs + "*cos(xi)", rs + "*sin(xi)", 2 * std::numbers::pi);
    }
    static SupportCurve cubic(double half = 0.5) { return parse("xi", "xi^3", 0.0, -half, half); }
    static SupportCurve sine(double half = 2.0) { return parse("xi", "sin(xi)", 0.0, -half, half); }

    /// "circle:R", "cubic" or "sine".
    static SupportCurve preset(std::string_view spec, bool polar)
    {
        if (spec.starts_with("circle:")) {
            Rational r;
            if (!parse_decimal(spec.substr(7), r) || !(r > 0))
                throw std::invalid_argument("bad circle radius: " + std::string(spec.substr(7)));
            return circle(to_double(r), polar);
        }
        if (spec == "cubic")
            return cubic();
        if (spec == "sine")
            return sine();
        throw std::invalid_argument("unknown support preset: " + std::string(spec));
    }

    const Expr& u() const { return u_; }
    const Expr& v() const { return v_; }
    double period() const { return period_; }
    bool closed() const { return period_ > 0; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

    Vec2 point(double xi) const { return {cu_[0](xi, 0), cv_[0](xi, 0)}; }
    Vec2 tangent(double xi) const { return {cu_[1](xi, 0), cv_[1](xi, 0)}; }
    Vec2 second(double xi) const { return {cu_[2](xi, 0), cv_[2](xi, 0)}; }

    /// |gamma'| > 0 at n samples.
    bool immersed(int n = 200) const
    {
        for (int i = 0; i < n; ++i)
            if (!(norm(tangent(lo_ + (hi_ - lo_) * (i + 0.5) / n)) > 1e-12))
                return false;
        return true;
    }

private:
    static std::string number(double x)
    {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(17);
        os << x;
        return os.str();
    }

    Expr u_ = Expr::constant(Rational(0));
    Expr v_ = Expr::constant(Rational(0));
    double period_ = 0.0, lo_ = 0.0, hi_ = 1.0;
    std::array<CompiledExpr, 3> cu_, cv_;
};

/// f(xi, t): geodesic from gamma(xi) with unit initial velocity along gamma'(xi), at arc
/// length t. Points are in chart coordinates; germ() maps them to the plane picture.
class GeodesicFamily {
public:
    GeodesicFamily(MetricChart m, SupportCurve s, IntegratorSettings st = {})
        : metric_(std::move(m)), support_(std::move(s)), settings_(st), cache_(std::make_shared<StateCache>())
    {
        if (!support_.immersed())
            throw std::invalid_argument("support curve is not immersed");
        if (metric_.polar()) {
            // Geodesics tangent to the support keep at least its pole distance; the step
            // shrinks with it since the chart degenerates at the poles.
            double gap = std::numbers::pi;
            for (int i = 0; i < 64; ++i) {
                const double u = support_.point(support_.lo() + (support_.hi() - support_.lo()) * i / 64).x;
                gap = std::min({gap, u, std::numbers::pi - u});
            }
            settings_.max_step = std::min(settings_.max_step, std::max(1e-4, 0.01 * gap));
        }
    }

    const MetricChart& metric() const { return metric_; }
    const SupportCurve& support() const { return support_; }
    const IntegratorSettings& settings() const { return settings_; }

    /// State at t = 0 with the xi-derivative as Jacobi field.
    detail::GeoState initial(double xi) const
    {
        const Vec2 q = support_.point(xi);
        if (!metric_.domain().contains(q.x, q.y))
            throw ChartExitError(q, 0.0);
        const Vec2 d1 = support_.tangent(xi), d2 = support_.second(xi);
        const LocalGeometry geo = metric_.geometry(q);
        const double s = std::sqrt(detail::energy(geo, d1));
        // d/dxi of |gamma'|_g: (d_k g_ij g'^k g'^i g'^j + 2 g_ij g''^i g'^j) / (2 s), with
        // d_k g_ij = g_lj Gamma^l_ki + g_il Gamma^l_kj.
        const Vec2 gv = detail::quad(geo.gamma, d1, d1);
        const double cubic = 2 * (geo.g[0][0] * gv.x * d1.x + geo.g[0][1] * (gv.x * d1.y + gv.y * d1.x) +
                                  geo.g[1][1] * gv.y * d1.y);
        const double mixed = geo.g[0][0] * d2.x * d1.x + geo.g[0][1] * (d2.x * d1.y + d2.y * d1.x) +
                             geo.g[1][1] * d2.y * d1.y;
        const double ds = (cubic + 2 * mixed) / (2 * s);
        return {q, d1 / s, d1, d2 / s - d1 * (ds / (s * s))};
    }

    detail::GeoState evaluate(double xi, double t, bool jacobi = true) const
    {
        if (auto hit = cache_->find(key(xi, t)))
            return *hit;
        const detail::Trajectory tr = detail::integrate(metric_, initial(xi), t, jacobi, settings_, t, t);
        return tr.state.back();
    }

    /// Computes and keeps the states at the given (xi, t), one integration per distinct xi.
    void prefetch(const std::vector<Vec2>& points) const
    {
        std::map<double, std::vector<double>> groups;
        for (const Vec2& p : points)
            if (!cache_->find(key(p.x, p.y)))
                groups[p.x].push_back(p.y);
        std::vector<std::pair<double, std::vector<double>>> work(groups.begin(), groups.end());
        parallel_for(work.size(), [&](std::size_t i) {
            const auto& [xi, ts] = work[i];
            const auto [lo, hi] = std::minmax_element(ts.begin(), ts.end());
            const Column col = column(xi, *lo, *hi);
            for (double t : ts)
                cache_->insert(key(xi, t), col.sample(t));
        });
    }

    Vec2 chart_point(double xi, double t) const { return evaluate(xi, t, false).q; }
    Vec2 plane_point(double xi, double t) const { return metric_.to_plane(chart_point(xi, t)); }

    /// det of the chart Jacobian [J, q'].
    double chart_det(double xi, double t) const
    {
        const auto s = evaluate(xi, t);
        return cross(s.J, s.v);
    }

    Mat2 plane_jacobian(double xi, double t) const
    {
        const auto s = evaluate(xi, t);
        const Mat2 P = metric_.plane_jacobian(s.q);
        return {P * s.J, P * s.v};
    }

    /// Dense output of one geodesic over [t_lo, t_hi], for tracing along t.
    class Column {
    public:
        double operator()(double t) const
        {
            const auto s = sample(t);
            return cross(s.J, s.v);
        }
        detail::GeoState sample(double t) const { return detail::interpolate(t_, st_, rt_, t); }
        double max_drift() const { return drift_; }

    private:
        friend class GeodesicFamily;
        std::vector<double> t_;
        std::vector<detail::GeoState> st_, rt_;
        double drift_ = 0.0;
    };

    Column column(double xi, double t_lo, double t_hi) const
    {
        Column c;
        const detail::GeoState s0 = initial(xi);
        const double pad = 0.05;
        auto add = [&](const detail::Trajectory& tr, bool reverse) {
            std::vector<std::size_t> idx(tr.t.size());
            std::iota(idx.begin(), idx.end(), 0);
            if (reverse)
                std::reverse(idx.begin(), idx.end());
            for (std::size_t k : idx) {
                if (!c.t_.empty() && tr.t[k] <= c.t_.back())
                    continue;
                c.t_.push_back(tr.t[k]);
                c.st_.push_back(tr.state[k]);
                c.rt_.push_back(tr.rate[k]);
            }
            c.drift_ = std::max(c.drift_, tr.max_drift);
        };
        if (t_lo < 0)
            add(detail::integrate(metric_, s0, t_lo - pad, true, settings_, t_lo - pad, std::min(0.0, t_hi + pad)), true);
        if (t_hi > 0)
            add(detail::integrate(metric_, s0, t_hi + pad, true, settings_, std::max(0.0, t_lo - pad), t_hi + pad), false);
        return c;
    }

    /// Field for the criminant tracer: chart det with whole columns from one integration.
    struct DetField {
        const GeodesicFamily* fam;
        double t_lo, t_hi;
        double operator()(double xi, double t) const { return fam->chart_det(xi, t); }
        Column column(double xi) const { return fam->column(xi, t_lo, t_hi); }
    };
    DetField det_field(double t_lo, double t_hi) const { return {this, t_lo, t_hi}; }

    /// Tracing box: xi over the support range, t over [t_lo, t_hi].
    Box box(double t_lo, double t_hi) const { return {support_.lo(), support_.hi(), t_lo, t_hi}; }

    /// Closed form gamma + t gamma'/|gamma'| for the flat metric.
    std::optional<PlaneMapGerm> flat_expression_germ(const Box& b) const
    {
        if (!metric_.is_flat())
            return std::nullopt;
        const Expr du = support_.u().derivative(var_xi), dv = support_.v().derivative(var_xi);
        const Expr len = Expr::apply(Op::sqrt, du * du + dv * dv);
        return PlaneMapGerm::from_expressions(support_.u() + Expr::t() * du / len, support_.v() + Expr::t() * dv / len,
                                              b);
    }

    /// The family as a plane map germ (black box unless the closed form applies).
    PlaneMapGerm germ(const Box& b) const
    {
        if (auto g = flat_expression_germ(b))
            return *g;
        const GeodesicFamily self = *this;
        return PlaneMapGerm::black_box([self](double xi, double t) { return self.plane_point(xi, t); }, b,
                                       [self](double xi, double t) { return self.plane_jacobian(xi, t); });
    }

private:
    using Key = std::pair<long long, long long>;

    /// States at traced vertices, shared by copies of the family.
    struct StateCache {
        std::mutex mutex;
        std::map<Key, detail::GeoState> map;

        std::optional<detail::GeoState> find(const Key& k)
        {
            std::lock_guard lock(mutex);
            auto it = map.find(k);
            if (it == map.end())
                return std::nullopt;
            return it->second;
        }
        void insert(const Key& k, const detail::GeoState& s)
        {
            std::lock_guard lock(mutex);
            map.emplace(k, s);
        }
    };

    /// xi reduced by the period, both coordinates quantized at 1e-11.
    Key key(double xi, double t) const
    {
        if (support_.closed())
            xi -= support_.period() * std::floor((xi - support_.lo()) / support_.period());
        return {std::llround(xi * 1e11), std::llround(t * 1e11)};
    }

    MetricChart metric_;
    SupportCurve support_;
    IntegratorSettings settings_;
    std::shared_ptr<StateCache> cache_;
};

inline GeodesicFamily build_geodesic_family(const MetricChart& m, const SupportCurve& s,
                                            const IntegratorSettings& st = {})
{
    return GeodesicFamily(m, s, st);
}

/// Classifier settings for integrated (non closed form) families: finite differences with a
/// zero threshold above the integrator noise.
inline ClassifyOptions geodesic_classify_options()
{
    ClassifyOptions o;
    o.mode = NumericMode::finite_difference;
    o.epsilon = 1e-4;
    return o;
}

struct GeodesicTraceOptions {
    int columns = 256; ///< cells along xi
    int rows = 256;    ///< cells along t
};

/// Criminant branches of a geodesic family for t in [t_lo, t_hi], with plane images.
inline EnvelopeReport trace_geodesic_envelope(const GeodesicFamily& fam, double t_lo, double t_hi,
                                              const GeodesicTraceOptions& opt = {})
{
    const Box b = fam.box(t_lo, t_hi);
    TraceOptions to;
    to.grid = opt.columns;
    to.t_grid = opt.rows;
    to.periodic_xi = fam.support().closed();
    if (auto g = fam.flat_expression_germ(b))
        return map_to_envelope(*g, trace_criminant(*g, b, to));
    if (to.grid < 64)
        throw std::invalid_argument("grid must be at least 64");
    const TraceResult tr = trace_zero_set(fam.det_field(t_lo, t_hi), b, to);
    EnvelopeReport rep;
    rep.branches = tr.branches;
    rep.branch_points = tr.branch_points;
    rep.ambiguous_cells = tr.ambiguous_cells;
    rep.cell_xi = tr.cell_xi;
    rep.cell_t = tr.cell_t;
    std::vector<Vec2> all;
    for (const CurveBranch& br : rep.branches)
        all.insert(all.end(), br.params.begin(), br.params.end());
    fam.prefetch(all);
    for (CurveBranch& br : rep.branches) {
        br.image.resize(br.params.size());
        parallel_for(br.params.size(),
                     [&](std::size_t k) { br.image[k] = fam.plane_point(br.params[k].x, br.params[k].y); });
        br.tangents = polyline_tangents(br.image, br.closed);
        double tmax = 0.0;
        for (const Vec2& q : br.params)
            tmax = std::max(tmax, std::fabs(q.y));
        br.support = tmax < 0.25 * tr.cell_t;
    }
    return rep;
}

/// Branch C_n in the band |t - n pi| < 1 and its image E_n.
inline CurveBranch order_n_envelope(const GeodesicFamily& fam, int n, const GeodesicTraceOptions& opt = {})
{
    if (std::abs(n) > 5)
        throw std::invalid_argument("|n| must be at most 5");
    const double c = n * std::numbers::pi;
    const EnvelopeReport rep = trace_geodesic_envelope(fam, c - 1.0, c + 1.0, opt);
    const CurveBranch* best = nullptr;
    for (const CurveBranch& b : rep.branches) {
        if (fam.support().closed() && !b.closed)
            continue;
        if (!best || b.size() > best->size())
            best = &b;
    }
    if (!best)
        throw BranchNotFoundError("no criminant branch in the band around t = " + std::to_string(c));
    return *best;
}

namespace detail {

/// Criminant crossing of one column near t_guess, with the det gradient in (xi, t).
struct CriminantPoint {
    bool ok = false;
    double t = 0.0;
    GeoState s;
    Vec2 grad;
};

inline CriminantPoint criminant_on_column(const GeodesicFamily& fam, double xi, double t_guess, double w,
                                          double hx = 1e-5)
{
    CriminantPoint cp;
    const double lo = t_guess - w, hi = t_guess + w;
    const auto col = fam.column(xi, lo, hi);
    const int n = 32;
    double best = 1e300;
    double prev = col(lo);
    for (int i = 1; i <= n; ++i) {
        const double a = lo + (hi - lo) * (i - 1) / n, b = lo + (hi - lo) * i / n;
        const double cur = col(b);
        if ((prev < 0) != (cur < 0)) {
            const double r = refine_root([&](double t) { return col(t); }, a, b, prev, cur, 0.0);
            if (std::fabs(r - t_guess) < best) {
                best = std::fabs(r - t_guess);
                cp.t = r;
                cp.ok = true;
            }
        }
        prev = cur;
    }
    if (!cp.ok)
        return cp;
    cp.s = col.sample(cp.t);
    const double dt = 1e-6;
    cp.grad.y = (col(cp.t + dt) - col(cp.t - dt)) / (2 * dt);
    const auto plus = fam.column(xi + hx, lo, hi), minus = fam.column(xi - hx, lo, hi);
    cp.grad.x = (plus(cp.t) - minus(cp.t)) / (2 * hx);
    return cp;
}

} // namespace detail

/// Cusps on a traced geodesic envelope branch.
/// Each sign flip of Df tau between vertices is refined along xi: on the criminant the kernel
/// of Df is (1, -mu) with J = mu q', and a cusp is where it is tangent to the criminant.
/// Falls back to the generic detector when a flip cannot be bracketed that way.
inline std::vector<Cusp> geodesic_cusps(const GeodesicFamily& fam, const CurveBranch& branch)
{
    auto generic = [&] {
        double lo = 1e300, hi = -1e300;
        for (const Vec2& p : branch.params) {
            lo = std::min(lo, p.y);
            hi = std::max(hi, p.y);
        }
        return detect_cusps(fam.germ(fam.box(lo - 1.0, hi + 1.0)), branch);
    };
    const std::size_t m = branch.params.size();
    if (fam.metric().is_flat() || m < 20)
        return generic();
    const auto& P = branch.params;
    const bool closed = branch.closed;
    const double period = closed ? branch.xi_period : 0.0;
    auto dxi = [&](std::size_t a, std::size_t b) {
        double d = P[b].x - P[a].x;
        if (period > 0)
            d -= period * std::round(d / period);
        return d;
    };
    auto at = [&](long k) { return std::size_t(closed ? ((k % long(m)) + long(m)) % long(m) : std::clamp(k, 0L, long(m) - 1)); };
    fam.prefetch(P);
    std::vector<Vec2> v(m);
    std::vector<double> speed(m);
    parallel_for(m, [&](std::size_t k) {
        const std::size_t a = at(long(k) - 1), b = at(long(k) + 1);
        const Vec2 tau = normalized(Vec2{dxi(a, b), P[b].y - P[a].y});
        v[k] = fam.plane_jacobian(P[k].x, P[k].y) * tau;
        speed[k] = norm(v[k]);
    });
    std::vector<double> sorted = speed;
    std::nth_element(sorted.begin(), sorted.begin() + long(m / 2), sorted.end());
    const double median = sorted[m / 2];
    if (median <= 0)
        return {};
    const std::size_t half = 3;
    std::vector<std::size_t> flips;
    for (std::size_t k = 0; k < (closed ? m : m - 1); ++k) {
        const std::size_t k1 = at(long(k) + 1);
        if (!closed && (k < half || k1 + half >= m))
            continue;
        if (dot(v[k], v[k1]) < 0)
            flips.push_back(k);
    }
    std::vector<Cusp> out(flips.size());
    std::vector<char> found(flips.size(), 0), failed(flips.size(), 0);
    parallel_for(flips.size(), [&](std::size_t i) {
        const std::size_t a = at(long(flips[i]) - 1), b = at(long(flips[i]) + 2);
        const double xa = P[a].x, span = dxi(a, b);
        const double ta = P[a].y, tb = P[b].y;
        if (std::fabs(span) < 1e-9) {
            failed[i] = 1;
            return;
        }
        const double w = 0.05 + std::fabs(tb - ta);
        auto g = [&](double x, detail::CriminantPoint* keep = nullptr) {
            const double guess = ta + (tb - ta) * (x - xa) / span;
            const auto cp = detail::criminant_on_column(fam, x, guess, w);
            if (!cp.ok)
                throw BranchNotFoundError("criminant lost during cusp refinement");
            if (keep)
                *keep = cp;
            const double mu = dot(cp.s.J, cp.s.v) / dot(cp.s.v, cp.s.v);
            return cp.grad.x - mu * cp.grad.y;
        };
        try {
            const double xb = xa + span;
            const double ga = g(xa), gb = g(xb);
            if ((ga < 0) == (gb < 0)) {
                failed[i] = 1;
                return;
            }
            const double x = detail::refine_root([&](double s) { return g(s); }, xa, xb, ga, gb, 0.0);
            detail::CriminantPoint cp;
            g(x, &cp);
            const Mat2 P2 = fam.metric().plane_jacobian(cp.s.q);
            const Mat2 D{P2 * cp.s.J, P2 * cp.s.v};
            const double depth = norm(D * normalized(perp(cp.grad))) / median;
            if (depth < 1e-4) {
                double xr = x;
                if (period > 0)
                    xr -= period * std::floor((xr - fam.support().lo()) / period);
                out[i] = {fam.metric().to_plane(cp.s.q), {xr, cp.t}, branch.label, depth};
                found[i] = 1;
            }
        } catch (const BranchNotFoundError&) {
            failed[i] = 1;
        }
    });
    if (std::find(failed.begin(), failed.end(), 1) != failed.end())
        return generic();
    std::vector<Cusp> res;
    for (std::size_t i = 0; i < flips.size(); ++i)
        if (found[i])
            res.push_back(out[i]);
    return res;
}

inline int count_cusps(const GeodesicFamily& fam, const CurveBranch& br)
{
    return int(geodesic_cusps(fam, br).size());
}

struct InflectionMatch {
    double xi = 0.0;   ///< inflection parameter
    Vec2 point;        ///< support point
    int tangency = -1; ///< index into `tangencies`, -1 if unmatched
    double distance = 0.0;
};

struct InflectionReport {
    std::vector<InflectionMatch> inflections;
    std::vector<SelfTangency> tangencies; ///< order-2 self-tangencies
    std::vector<int> unmatched_tangencies;
    bool matched = false;
};

/// Pairs order-2 self-tangencies of the envelope with inflection points of the support.
inline InflectionReport inflection_selftangency_check(const GeodesicFamily& fam, double tolerance = 1e-4,
                                                      int grid = 512, double t_half = 0.5,
                                                      EnvelopeReport* envelope = nullptr)
{
    if (!fam.metric().is_flat())
        throw std::invalid_argument("inflection check needs the flat metric");
    const SupportCurve& s = fam.support();
    InflectionReport out;
    auto curvature = [&](double xi) { return cross(s.tangent(xi), s.second(xi)); };
    const int n = 4000;
    const double a = s.lo(), b = s.hi();
    const int count = s.closed() ? n : n + 1;
    std::vector<double> k(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        k[std::size_t(i)] = curvature(a + (b - a) * i / n);
    for (int i = 0; i + 1 < count || (s.closed() && i < count); ++i) {
        const int j = (i + 1) % count;
        const double xa = a + (b - a) * i / n, xb = a + (b - a) * (i + 1) / n;
        const double ka = k[std::size_t(i)], kb = k[std::size_t(j)];
        double root;
        if (ka == 0.0)
            root = xa;
        else if ((ka < 0) != (kb < 0) && kb != 0.0)
            root = detail::refine_root(curvature, xa, xb, ka, kb, 0.0);
        else
            continue;
        out.inflections.push_back({root, s.point(root), -1, 0.0});
    }
    const Box box = fam.box(-t_half, t_half);
    const PlaneMapGerm g = fam.germ(box);
    TraceOptions to;
    to.grid = grid;
    to.periodic_xi = s.closed();
    const EnvelopeReport rep = analyze_envelope(g, box, to);
    for (const SelfTangency& t : rep.tangencies)
        if (t.contact_order == 2)
            out.tangencies.push_back(t);
    if (envelope)
        *envelope = rep;
    std::vector<char> used(out.tangencies.size(), 0);
    for (InflectionMatch& m : out.inflections) {
        double best = 1e300;
        for (std::size_t i = 0; i < out.tangencies.size(); ++i) {
            const double d = distance(out.tangencies[i].point, m.point);
            if (d < best) {
                best = d;
                m.tangency = int(i);
            }
        }
        m.distance = best;
        if (best > tolerance)
            m.tangency = -1;
        else
            used[std::size_t(m.tangency)] = 1;
    }
    for (std::size_t i = 0; i < out.tangencies.size(); ++i)
        if (!used[i])
            out.unmatched_tangencies.push_back(int(i));
    out.matched = out.unmatched_tangencies.empty() &&
                  std::all_of(out.inflections.begin(), out.inflections.end(), [](const InflectionMatch& m) {
                      return m.tangency >= 0;
                  });
    return out;
}

} // namespace tangfam
