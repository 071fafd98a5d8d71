#pragma once

#include "tangfam/classify.hpp"
#include "tangfam/envelope.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tangfam {

/// F(xi, t; lam) with F(., .; 0) = f.
class DeformedFamily {
public:
    /// F = f + (dx, dy); the added terms must vanish at lam = 0.
    static DeformedFamily additive(const PlaneMapGerm& f, const Expr& dx, const Expr& dy, double lam_min = -1.0,
                                   double lam_max = 1.0)
    {
        DeformedFamily F;
        F.base_ = f;
        F.dx_ = dx;
        F.dy_ = dy;
        F.lam_min_ = lam_min;
        F.lam_max_ = lam_max;
        F.check();
        return F;
    }

    /// F given whole; the base germ is its lam = 0 slice.
    static DeformedFamily from_expressions(const Expr& Fx, const Expr& Fy, double lam_min = -1.0, double lam_max = 1.0,
                                           const Box& box = {})
    {
        const Expr zero = Expr::constant(Rational(0));
        const PlaneMapGerm f =
            PlaneMapGerm::from_expressions(Fx.substitute(var_lam, zero), Fy.substitute(var_lam, zero), box);
        return additive(f, Fx - f.x(), Fy - f.y(), lam_min, lam_max);
    }

    static DeformedFamily parse(std::string_view Fx, std::string_view Fy, double lam_min = -1.0,
                                double lam_max = 1.0, const Box& box = {})
    {
        return from_expressions(parse_expression(Fx), parse_expression(Fy), lam_min, lam_max, box);
    }

    const PlaneMapGerm& base() const { return base_; }
    const Expr& delta_x() const { return dx_; }
    const Expr& delta_y() const { return dy_; }
    double lam_min() const { return lam_min_; }
    double lam_max() const { return lam_max_; }
    bool in_range(double lam) const { return lam >= lam_min_ && lam <= lam_max_; }

    /// F(., .; lam). Components are expressions when the base germ is.
    PlaneMapGerm specialize(const Rational& lam) const
    {
        const double l = to_double(lam);
        if (!in_range(l))
            throw std::out_of_range("lam = " + std::to_string(l) + " outside [" + std::to_string(lam_min_) + ", " +
                                    std::to_string(lam_max_) + "]");
        const Expr c = Expr::constant(lam);
        const Expr ex = dx_.substitute(var_lam, c);
        const Expr ey = dy_.substitute(var_lam, c);
        if (base_.has_expressions())
            return PlaneMapGerm::from_expressions(base_.x() + ex, base_.y() + ey, base_.box())
                .with_strict_bounds(base_.strict_bounds());
        const PlaneMapGerm b = base_;
        const CompiledExpr cx(ex), cy(ey);
        const CompiledExpr jx0(ex.derivative(var_xi)), jy0(ey.derivative(var_xi)), jx1(ex.derivative(var_t)),
            jy1(ey.derivative(var_t));
        PlaneMapGerm::JacobianFn jac;
        if (b.has_jacobian())
            jac = [b, jx0, jy0, jx1, jy1](double xi, double t) {
                const Mat2 J = b.jacobian(xi, t);
                return Mat2{J.c0 + Vec2{jx0(xi, t), jy0(xi, t)}, J.c1 + Vec2{jx1(xi, t), jy1(xi, t)}};
            };
        return PlaneMapGerm::black_box([b, cx, cy](double xi, double t) { return b.raw(xi, t) + Vec2{cx(xi, t), cy(xi, t)}; },
                                       b.box(), std::move(jac))
            .with_strict_bounds(b.strict_bounds());
    }
    PlaneMapGerm specialize(double lam) const { return specialize(Rational(lam)); }

private:
    void check() const
    {
        const Expr zero = Expr::constant(Rational(0));
        const Expr x0 = dx_.substitute(var_lam, zero), y0 = dy_.substitute(var_lam, zero);
        if (lam_min_ > 0 || lam_max_ < 0)
            throw std::invalid_argument("lam range must contain 0");
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 10; ++j) {
                const double xi = -0.45 + 0.1 * i, t = -0.45 + 0.1 * j;
                if (std::fabs(x0(xi, t)) > 1e-12 || std::fabs(y0(xi, t)) > 1e-12)
                    throw std::invalid_argument("deformation does not reduce to the base germ at lam = 0");
            }
    }

    PlaneMapGerm base_;
    Expr dx_ = Expr::constant(Rational(0));
    Expr dy_ = Expr::constant(Rational(0));
    double lam_min_ = -1.0, lam_max_ = 1.0;
};

struct DeformationDiagnostics {
    Tangency verdict = Tangency::inconclusive;
    std::vector<double> lams;
    std::vector<TangencyDiagnostics> per_lam;
    std::string reason;

    bool tangential() const { return verdict == Tangency::tangential; }
};

/// Runs the tangency check on every specialization.
inline DeformationDiagnostics is_tangential_deformation(const DeformedFamily& F, const std::vector<double>& lams,
                                                        int samples = 21)
{
    if (lams.size() < 5 || std::find(lams.begin(), lams.end(), 0.0) == lams.end())
        throw std::invalid_argument("need at least 5 lam samples including 0");
    DeformationDiagnostics out;
    out.lams = lams;
    bool failed = false, unsure = false;
    for (double l : lams) {
        out.per_lam.push_back(is_tangential_family(F.specialize(l), samples));
        const auto& d = out.per_lam.back();
        if (d.verdict == Tangency::not_tangential && !failed) {
            failed = true;
            out.reason = "lam=" + std::to_string(l) + ": " + d.reason;
        }
        unsure = unsure || d.verdict == Tangency::inconclusive;
    }
    out.verdict = failed ? Tangency::not_tangential : unsure ? Tangency::inconclusive : Tangency::tangential;
    if (!failed && unsure)
        out.reason = "some specialization is inconclusive";
    return out;
}

/// (xi, xi t^2 + t^3 + lam t)
inline DeformedFamily beak_to_beak_family(double lam_min = -1.0, double lam_max = 1.0)
{
    return DeformedFamily::parse("xi", "xi*t^2 + t^3 + lam*t", lam_min, lam_max);
}

/// f + lam (0, t^3 + xi t^2), added literally.
inline DeformedFamily cubic_deformation(const PlaneMapGerm& f, double lam_min = -1.0, double lam_max = 1.0)
{
    return DeformedFamily::additive(f, Expr::constant(Rational(0)), Expr::lam() * parse_expression("t^3 + xi*t^2"),
                                    lam_min, lam_max);
}

struct SectionPoint {
    Vec2 point; ///< image on the section line
    Vec2 param; ///< (xi, t)
    bool refined = false;
};

struct SectionCensus {
    double lam = 0.0;
    int count = 0;
    std::vector<SectionPoint> points;
    bool ambiguous = false;
    std::string note;
};

/// Points where the critical value set meets the line x = x0.
inline SectionCensus section_census(const PlaneMapGerm& f, const Box& box, int grid = 512, double x0 = 0.0)
{
    const EnvelopeReport rep = map_to_envelope(f, trace_criminant(f, box, {.grid = grid}));
    const double cell = std::max(rep.cell_xi, rep.cell_t);
    SectionCensus out;
    // Newton on (det, x - x0) = 0.
    auto refine = [&](Vec2 q, bool* ok) {
        Vec2 p = q;
        const double h = 1e-6;
        for (int it = 0; it < 40; ++it) {
            const double g1 = f.det(p.x, p.y), g2 = f.raw(p.x, p.y).x - x0;
            if (std::fabs(g1) < 1e-14 && std::fabs(g2) < 1e-14) {
                *ok = distance(p, q) < 2 * cell;
                return p;
            }
            const Vec2 dg = detail::det_gradient(f, p, h);
            const Vec2 dx = f.jacobian(p.x, p.y) * Vec2{1, 0};
            const Vec2 dxt = f.jacobian(p.x, p.y) * Vec2{0, 1};
            // Rows: (dg.x, dg.y), (dx.x, dxt.x)
            const double a = dg.x, b = dg.y, c = dx.x, d = dxt.x;
            const double den = a * d - b * c;
            if (std::fabs(den) < 1e-12 * (std::fabs(a * d) + std::fabs(b * c) + 1e-300))
                break;
            const Vec2 step{(d * g1 - b * g2) / den, (a * g2 - c * g1) / den};
            p -= step;
            if (distance(p, q) > 2 * cell)
                break;
        }
        *ok = false;
        return q;
    };
    std::vector<SectionPoint> raw;
    for (const CurveBranch& b : rep.branches) {
        const std::size_t m = b.image.size();
        const std::size_t count = b.closed ? m : m - 1;
        for (std::size_t k = 0; k < count && m >= 2; ++k) {
            const std::size_t k1 = (k + 1) % m;
            const double a = b.image[k].x - x0, c = b.image[k1].x - x0;
            // Half-open rule so a vertex on the line is counted once per branch.
            if (!((a < 0 && c >= 0) || (a >= 0 && c < 0)))
                continue;
            const double w = a == c ? 0.0 : a / (a - c);
            const Vec2 q = b.params[k] * (1 - w) + b.params[k1] * w;
            SectionPoint sp;
            sp.param = refine(q, &sp.refined);
            if (!sp.refined) {
                sp.param = q;
                out.note = "some points kept at polyline accuracy";
            }
            sp.point = f.raw(sp.param.x, sp.param.y);
            raw.push_back(sp);
        }
    }
    for (const SectionPoint& sp : raw) {
        bool dup = false;
        for (const SectionPoint& o : out.points)
            if (distance(o.param, sp.param) < 1e-8)
                dup = true;
        if (!dup)
            out.points.push_back(sp);
    }
    std::sort(out.points.begin(), out.points.end(),
              [](const SectionPoint& l, const SectionPoint& r) { return l.point.y < r.point.y; });
    out.count = int(out.points.size());
    for (std::size_t i = 0; i < out.points.size(); ++i)
        for (std::size_t j = i + 1; j < out.points.size(); ++j)
            if (distance(out.points[i].param, out.points[j].param) < cell)
                out.ambiguous = true;
    for (const Vec2& c : rep.ambiguous_cells)
        if (std::fabs(f.raw(c.x, c.y).x - x0) < cell)
            out.ambiguous = true;
    if (out.ambiguous && out.note.empty())
        out.note = "section points within one grid cell";
    return out;
}

/// Section census of the beak-to-beak family at each lam.
inline std::vector<SectionCensus> beak_to_beak_scan(const std::vector<double>& lams, const Box& box = Box::square(0.5),
                                                    int grid = 512)
{
    const DeformedFamily H = beak_to_beak_family();
    std::vector<SectionCensus> out;
    for (double l : lams) {
        SectionCensus c = section_census(H.specialize(l), box, grid);
        c.lam = l;
        out.push_back(std::move(c));
    }
    return out;
}

/// Deformation of f that turns the degenerate germ into type II. The added term is
/// lam (2u^3 + s u^2) N, with s, u the support coordinate and offset along the tangent
/// T = d/dxi f(0, 0) and N = perp(T); for (xi + t, t^3 + xi t^2) this is lam (0, 2t^3 + xi t^2).
inline DeformedFamily type_inducing_family(const PlaneMapGerm& f, double lam_min = -1.0, double lam_max = 1.0)
{
    const Mat2 J = f.jacobian(0.0, 0.0);
    const Rational a(J.c0.x), b(J.c0.y);
    const Rational n2 = a * a + b * b;
    if (n2 == 0)
        throw NotTangentialError("d/dxi f vanishes at the origin");
    auto along = [&](const Expr& x, const Expr& y) {
        return Expr::constant(a / n2) * x + Expr::constant(b / n2) * y;
    };
    if (!f.has_expressions())
        throw std::invalid_argument("type-inducing deformation needs an expression germ");
    const Expr zero = Expr::constant(Rational(0));
    const Expr X = along(f.x(), f.y());
    const Expr s = X.substitute(var_t, zero);
    const Expr u = X - s;
    const Expr delta = Expr::lam() * (Expr::constant(Rational(2)) * u.pow(3) + s * u.pow(2));
    return DeformedFamily::additive(f, Expr::constant(-b) * delta, Expr::constant(a) * delta, lam_min, lam_max);
}

struct TypeInducingResult {
    PlaneMapGerm germ;
    Classification classification;
};

template <class L>
    requires std::same_as<L, double> || std::same_as<L, Rational>
inline TypeInducingResult type_inducing_deformation(const PlaneMapGerm& f, const L& lam, const ClassifyOptions& opt = {})
{
    TypeInducingResult r;
    r.germ = type_inducing_family(f).specialize(lam);
    r.classification = classify(r.germ, opt);
    return r;
}

struct RecenteredClassification {
    double xi0 = 0.0;
    bool root_found = false;
    Classification result;
};

/// Classifies g at the support point near the origin where k0 changes sign; at the
/// origin when k0 keeps its sign over |xi0| <= window.
inline RecenteredClassification classify_recentered(const PlaneMapGerm& g, double window = 0.2, double step = 1e-3,
                                                    ClassifyOptions opt = {.mode = NumericMode::floating})
{
    auto k0 = [&](double xi0) { return prenormal_invariants(xi0 == 0.0 ? g : g.recentered(xi0), opt).k0; };
    const int n = int(std::lround(window / step));
    std::vector<double> vals(std::size_t(2 * n + 1));
    parallel_for(vals.size(), [&](std::size_t i) { vals[i] = k0((long(i) - n) * step); });
    RecenteredClassification out;
    double best = std::numeric_limits<double>::infinity();
    for (int i = -n; i < n; ++i) {
        const double a = vals[std::size_t(i + n)], b = vals[std::size_t(i + n + 1)];
        const double xa = i * step, xb = (i + 1) * step;
        double root;
        if (a == 0.0)
            root = xa;
        else if (b == 0.0)
            root = xb;
        else if ((a < 0) != (b < 0))
            root = detail::refine_root(k0, xa, xb, a, b, 1e-15);
        else
            continue;
        if (std::fabs(root) < std::fabs(best))
            best = root;
    }
    if (std::isfinite(best)) {
        out.root_found = true;
        out.xi0 = best;
    }
    out.result = classify(out.xi0 == 0.0 ? g : g.recentered(out.xi0), opt);
    return out;
}

struct StabilityTrial {
    Expr dx, dy; ///< added terms at the sampled lam
    double lam = 0.0;
    RecenteredClassification outcome;
};

/// Random tangential deformations f + lam (t^2 p1, t^2 p2), p1, p2 of degree <= 2 with
/// coefficients in [-1, 1], reclassified after recentering.
inline std::vector<StabilityTrial> stability_suite(const PlaneMapGerm& f, int trials, double lam_abs,
                                                   std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> coef(-1000, 1000);
    std::bernoulli_distribution sign(0.5);
    auto poly = [&] {
        Expr p = Expr::constant(Rational(0));
        for (int i = 0; i <= 2; ++i)
            for (int j = 0; i + j <= 2; ++j)
                p = p + Expr::constant(Rational(coef(rng), 1000)) * Expr::xi().pow(i) * Expr::t().pow(j);
        return p;
    };
    std::vector<StabilityTrial> out;
    for (int k = 0; k < trials; ++k) {
        StabilityTrial tr;
        const Expr t2 = Expr::t().pow(2);
        const Expr p1 = poly(), p2 = poly();
        tr.lam = sign(rng) ? lam_abs : -lam_abs;
        const DeformedFamily F = DeformedFamily::additive(f, Expr::lam() * t2 * p1, Expr::lam() * t2 * p2);
        tr.dx = (Expr::constant(Rational(tr.lam)) * t2 * p1);
        tr.dy = (Expr::constant(Rational(tr.lam)) * t2 * p2);
        tr.outcome = classify_recentered(F.specialize(tr.lam));
        out.push_back(std::move(tr));
    }
    return out;
}

} // namespace tangfam
