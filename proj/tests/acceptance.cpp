// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "tangfam/tangfam.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <tuple>

using namespace tangfam;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
    bool pass = false;
    std::string detail;
};

PlaneMapGerm fI() { return PlaneMapGerm::parse("xi + t", "t^2", Box::square(0.5)); }
PlaneMapGerm fII() { return PlaneMapGerm::parse("xi + t", "xi*t^2", Box::square(0.5)); }
PlaneMapGerm fdeg() { return PlaneMapGerm::parse("xi + t", "t^3 + xi*t^2", Box::square(0.5)); }

Expr q(long n, long d = 1) { return Expr::constant(Rational(n, d)); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Largest distance from any branch of `a` to its closest branch of `b`.
double branch_shift(const std::vector<CurveBranch>& a, const std::vector<CurveBranch>& b)
{
    double worst = 0.0;
    for (const CurveBranch& x : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const CurveBranch& y : b)
            best = std::min(best, hausdorff(x.image, y.image));
        worst = std::max(worst, best);
    }
    return worst;
}

std::vector<int> contact_orders(const EnvelopeReport& r)
{
    std::vector<int> out;
    for (const SelfTangency& t : r.tangencies)
        out.push_back(t.contact_order);
    std::sort(out.begin(), out.end());
    return out;
}

Outcome normal_forms()
{
    const auto t0 = std::chrono::steady_clock::now();
    const Classification a = classify(fI()), b = classify(fII());
    bool ok = a.verdict.type == VerdictType::type_I && b.verdict.type == VerdictType::type_II;
    ok = ok && a.invariants.exact() && b.invariants.exact();
    ok = ok && *a.invariants.k0_exact == 1 && *a.invariants.k1_exact == 0 && *a.invariants.alpha_exact == 0;
    ok = ok && *b.invariants.k0_exact == 0 && *b.invariants.k1_exact == 1 && *b.invariants.alpha_exact == 0;
    ClassifyOptions bb;
    bb.mode = NumericMode::finite_difference;
    const Classification c = classify(fI().as_black_box(), bb), d = classify(fII().as_black_box(), bb);
    const double err = std::max({std::fabs(c.invariants.k0 - 1), std::fabs(c.invariants.k1),
                                 std::fabs(c.invariants.alpha), std::fabs(d.invariants.k0),
                                 std::fabs(d.invariants.k1 - 1), std::fabs(d.invariants.alpha)});
    ok = ok && c.verdict.type == VerdictType::type_I && d.verdict.type == VerdictType::type_II && err < 1e-6;
    const double s = seconds_since(t0);
    return {ok && s < 1.0, fmt("exact (1,0,0) and (0,1,0); black-box max error %.2e; %.2f s", err, s)};
}

Outcome type_two_envelope()
{
    const auto t0 = std::chrono::steady_clock::now();
    const EnvelopeReport rep = analyze_envelope(fII(), Box::square(0.5), {.grid = 512});
    double dev_line = 0.0, dev_cubic = 0.0;
    bool covered_line = false, covered_cubic = false;
    for (const CurveBranch& b : rep.branches) {
        double lo = 1e300, hi = -1e300;
        for (const Vec2& p : b.image) {
            if (std::fabs(p.x) > 0.3)
                continue;
            lo = std::min(lo, p.x);
            hi = std::max(hi, p.x);
            if (b.support)
                dev_line = std::max(dev_line, std::fabs(p.y));
            else
                dev_cubic = std::max(dev_cubic, std::fabs(p.y - 4.0 / 27.0 * p.x * p.x * p.x));
        }
        const bool covers = lo < -0.29 && hi > 0.29;
        (b.support ? covered_line : covered_cubic) = covers;
    }
    const bool order2 = rep.tangencies.size() == 1 && rep.tangencies[0].contact_order == 2 &&
                        !rep.tangencies[0].at_least;
    const double s = seconds_since(t0);
    const bool ok = rep.branches.size() == 2 && covered_line && covered_cubic && dev_line < 1e-4 &&
                    dev_cubic < 1e-4 && order2 && s < 10.0;
    return {ok, fmt("%zu branches; deviation line %.2e, cubic %.2e; %zu tangency, contact order %d; %.2f s",
                    rep.branches.size(), dev_line, dev_cubic, rep.tangencies.size(),
                    rep.tangencies.empty() ? -1 : rep.tangencies[0].contact_order, s)};
}

/// Random tangential germ of degree <= 4: x = xi + t (1 + ...), y = t^2 (...).
PlaneMapGerm random_tangential_germ(std::mt19937_64& rng)
{
    std::uniform_int_distribution<int> c(-20, 20), pick(0, 3);
    const Expr xi = Expr::xi(), t = Expr::t();
    const Expr k0 = pick(rng) == 0 ? q(0) : q(c(rng) | 1, 10);
    const Expr a = q(c(rng), 10);
    const int p = pick(rng);
    const Expr k1 = p == 0 ? q(0) : p == 1 ? a : q(c(rng) | 1, 7);
    const Expr y = t.pow(2) * (k0 + k1 * xi + a * t + q(c(rng), 10) * xi.pow(2) + q(c(rng), 10) * xi * t +
                               q(c(rng), 10) * t.pow(2));
    Expr x = xi + t;
    if (pick(rng) != 0)
        x = x + t * (q(c(rng), 20) * t + q(c(rng), 20) * xi + q(c(rng), 20) * t.pow(2) + q(c(rng), 20) * xi * t +
                     q(c(rng), 20) * t.pow(3));
    return PlaneMapGerm::from_expressions(x, y, Box::square(0.5));
}

Outcome cross_validation()
{
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(20240611);
    int agree = 0, tangential = 0, n1 = 0, n2 = 0, nd = 0;
    const int total = 200;
    for (int k = 0; k < total; ++k) {
        const PlaneMapGerm f = random_tangential_germ(rng);
        if (is_tangential_family(f).tangential())
            ++tangential;
        const Classification c = classify(f);
        agree += c.agree;
        (c.verdict.type == VerdictType::type_I ? n1 : c.verdict.type == VerdictType::type_II ? n2 : nd) += 1;
    }
    const double s = seconds_since(t0);
    return {agree == total && tangential == total && s < 30.0,
            fmt("%d/%d agree (%d tangential; I %d, II %d, degenerate %d); %.2f s", agree, total, tangential, n1, n2,
                nd, s)};
}

Outcome a_invariance()
{
    std::mt19937_64 rng(7);
    const std::vector<PlaneMapGerm> germs{fI(), fII(), fdeg()};
    std::vector<VerdictType> base;
    for (const auto& f : germs)
        base.push_back(classify(f).verdict.type);
    int same = 0, total = 0;
    for (int k = 0; k < 50; ++k) {
        const SourceDiffeo phi = random_source_diffeo(rng);
        const TargetDiffeo psi = random_target_diffeo(rng);
        for (std::size_t i = 0; i < germs.size(); ++i) {
            ++total;
            same += classify(apply_equivalence(germs[i], phi, psi)).verdict.type == base[i];
        }
    }
    return {same == 150 && total == 150, fmt("%d/%d verdicts unchanged", same, total)};
}

Outcome beak_census()
{
    const auto scan = beak_to_beak_scan({-0.01, 0.0, 0.01});
    const double lam = -0.01;
    const double y = (2 * lam / 3) * std::sqrt(-lam / 3);
    double err = std::numeric_limits<double>::infinity();
    if (scan[0].points.size() == 2) {
        std::vector<double> ys{scan[0].points[0].point.y, scan[0].points[1].point.y};
        std::sort(ys.begin(), ys.end());
        err = std::max(std::fabs(ys[0] + std::fabs(y)), std::fabs(ys[1] - std::fabs(y)));
        for (const auto& p : scan[0].points)
            err = std::max(err, std::fabs(p.point.x));
    }
    const bool ok = scan[0].count == 2 && scan[1].count == 1 && scan[2].count == 0 && err < 1e-5;
    return {ok, fmt("counts (%d,%d,%d); lam=-0.01 point error %.2e", scan[0].count, scan[1].count, scan[2].count,
                    err)};
}

Outcome stability()
{
    int kept = 0, total = 0;
    for (const auto& [f, seed, type] : {std::tuple{fI(), 101u, VerdictType::type_I},
                                        std::tuple{fII(), 202u, VerdictType::type_II}}) {
        for (const StabilityTrial& tr : stability_suite(f, 20, 1e-2, seed)) {
            ++total;
            kept += tr.outcome.result.verdict.type == type;
        }
    }
    int induced = 0;
    for (double l : {0.01, 0.1})
        induced += type_inducing_deformation(fdeg(), l).classification.verdict.type == VerdictType::type_II;
    return {kept == 40 && total == 40 && induced == 2,
            fmt("%d/%d types kept; degenerate germ becomes II at %d/2 of lam in {0.01, 0.1}", kept, total, induced)};
}

Outcome sphere()
{
    const auto t0 = std::chrono::steady_clock::now();
    const double r = 0.5;
    const GeodesicFamily fam(MetricChart::sphere(), SupportCurve::circle(r, true));
    double band = 0.0;
    int found = 0;
    for (int n = -3; n <= 3; ++n) {
        if (n == 0)
            continue;
        const CurveBranch br = order_n_envelope(fam, n, {64, 64});
        ++found;
        for (const Vec2& p : br.params)
            band = std::max(band, std::fabs(p.y - n * pi));
    }
    const CurveBranch e1 = order_n_envelope(fam, 1, {2048, 64});
    std::vector<Vec2> circle;
    const int m = 20000;
    for (int k = 0; k <= m; ++k)
        circle.push_back({(pi - r) * std::cos(2 * pi * k / m), (pi - r) * std::sin(2 * pi * k / m)});
    std::vector<Vec2> loop = e1.image;
    if (e1.closed && !loop.empty())
        loop.push_back(loop.front());
    const double h = hausdorff(loop, circle);
    const GeodesicPath path = integrate_geodesic(MetricChart::sphere(), {r, 0}, {0, 1 / std::sin(r)}, 4 * pi);
    const double s = seconds_since(t0);
    const bool ok = found == 6 && band < 1e-6 && h < 1e-5 && path.max_drift < 1e-8 && s < 60.0;
    return {ok, fmt("%d/6 bands, max |t - n pi| %.2e; E1 Hausdorff %.2e; drift over 4 pi %.2e; %.2f s", found, band, h,
                    path.max_drift, s)};
}

Outcome inflection()
{
    EnvelopeReport cubic_env, circle_env;
    const auto cubic = inflection_selftangency_check(GeodesicFamily(MetricChart::flat(), SupportCurve::cubic()), 1e-4,
                                                     512, 0.5, &cubic_env);
    const auto circle = inflection_selftangency_check(
        GeodesicFamily(MetricChart::flat(), SupportCurve::circle(1.0, false)), 1e-4, 512, 0.5, &circle_env);
    double dist = std::numeric_limits<double>::infinity();
    if (cubic.tangencies.size() == 1 && cubic.inflections.size() == 1)
        dist = distance(cubic.tangencies[0].point, cubic.inflections[0].point);
    const bool ok = cubic_env.tangencies.size() == 1 && cubic.tangencies.size() == 1 &&
                    cubic.tangencies[0].contact_order == 2 && dist < 1e-4 && circle_env.tangencies.empty();
    return {ok, fmt("cubic: %zu tangency (order %d) at %.2e from the inflection; circle: %zu tangencies",
                    cubic_env.tangencies.size(), cubic.tangencies.empty() ? -1 : cubic.tangencies[0].contact_order,
                    dist, circle_env.tangencies.size())};
}

Outcome four_cusps()
{
    const auto t0 = std::chrono::steady_clock::now();
    const GeodesicFamily fam(MetricChart::ellipsoid(0.05), SupportCurve::circle(0.2, true));
    const CurveBranch br = order_n_envelope(fam, 1, {256, 64});
    const int cusps = count_cusps(fam, br);
    const double s = seconds_since(t0);
    // The configuration about the symmetry axis, for the record.
    const GeodesicFamily axial(MetricChart::ellipsoid_axial(0.05), SupportCurve::circle(0.3, true));
    const int axial_cusps = count_cusps(axial, order_n_envelope(axial, 1, {256, 64}));
    return {cusps >= 4 && s < 120.0,
            fmt("axes (1,1,1.05), circle r=0.2 about an equator point: %d cusps, %.2f s; "
                "r=0.3 about the symmetry axis: %d cusps",
                cusps, s, axial_cusps)};
}

Outcome grid_doubling()
{
    int changed = 0;
    double shift = 0.0;
    std::ostringstream notes;
    auto compare = [&](const char* name, const EnvelopeReport& a, const EnvelopeReport& b) {
        const bool same = a.branches.size() == b.branches.size() && a.cusps.size() == b.cusps.size() &&
                          contact_orders(a) == contact_orders(b);
        const double d = std::max(branch_shift(a.branches, b.branches), branch_shift(b.branches, a.branches));
        shift = std::max(shift, d);
        if (!same) {
            ++changed;
            notes << ' ' << name;
        }
    };
    for (const auto& [name, f] : {std::pair{"I", fI()}, std::pair{"II", fII()}}) {
        const auto a = analyze_envelope(f, Box::square(0.5), {.grid = 512});
        const auto b = analyze_envelope(f, Box::square(0.5), {.grid = 1024});
        compare(name, a, b);
    }
    const std::vector<double> lams{-0.01, 0.0, 0.01};
    const auto sa = beak_to_beak_scan(lams, Box::square(0.5), 512), sb = beak_to_beak_scan(lams, Box::square(0.5), 1024);
    for (std::size_t k = 0; k < lams.size(); ++k) {
        if (sa[k].count != sb[k].count) {
            ++changed;
            notes << " beak-census";
        }
        const PlaneMapGerm h = beak_to_beak_family().specialize(lams[k]);
        compare("beak", analyze_envelope(h, Box::square(0.5), {.grid = 512}),
                analyze_envelope(h, Box::square(0.5), {.grid = 1024}));
    }
    const GeodesicFamily cubic(MetricChart::flat(), SupportCurve::cubic());
    EnvelopeReport ca, cb;
    const auto ia = inflection_selftangency_check(cubic, 1e-4, 512, 0.5, &ca);
    const auto ib = inflection_selftangency_check(cubic, 1e-4, 1024, 0.5, &cb);
    if (ia.matched != ib.matched || ia.tangencies.size() != ib.tangencies.size()) {
        ++changed;
        notes << " inflection";
    }
    compare("cubic-support", ca, cb);
    return {changed == 0 && shift < 1e-5,
            fmt("%d verdict changes%s; max branch shift %.2e", changed, notes.str().c_str(), shift)};
}

} // namespace

int main()
{
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"normal-form classification", normal_forms},
        {"type II envelope", type_two_envelope},
        {"classifier cross-validation", cross_validation},
        {"A-invariance", a_invariance},
        {"beak-to-beak census", beak_census},
        {"stability", stability},
        {"sphere geometry", sphere},
        {"inflection/self-tangency", inflection},
        {"four cusps", four_cusps},
        {"grid doubling", grid_doubling},
    };
    int failed = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
