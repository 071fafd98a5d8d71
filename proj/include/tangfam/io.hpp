#pragma once

#include "tangfam/classify.hpp"
#include "tangfam/deform.hpp"
#include "tangfam/envelope.hpp"
#include "tangfam/geodesic.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tangfam::io {

using Json = nlohmann::ordered_json;

/// Malformed input file or spec.
class SpecError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// 17 significant digits.
inline std::string num(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline Json read_json_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw SpecError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw SpecError(path + ": " + e.what());
    }
}

inline void write_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << text;
}

namespace detail {

inline std::string need_string(const Json& j, const char* key)
{
    if (!j.contains(key) || !j[key].is_string())
        throw SpecError(std::string("missing string field '") + key + "'");
    return j[key].get<std::string>();
}

inline std::vector<double> need_numbers(const Json& j, std::size_t n, const char* what)
{
    if (!j.is_array() || j.size() != n)
        throw SpecError(std::string(what) + " must be an array of " + std::to_string(n) + " numbers");
    std::vector<double> v;
    for (const auto& e : j) {
        if (!e.is_number())
            throw SpecError(std::string(what) + " must contain numbers");
        v.push_back(e.get<double>());
    }
    return v;
}

} // namespace detail

inline Box box_from_json(const Json& j)
{
    const auto v = detail::need_numbers(j, 4, "box");
    if (!(v[0] < v[1]) || !(v[2] < v[3]))
        throw SpecError("box bounds must be increasing");
    return {v[0], v[1], v[2], v[3]};
}

inline Json to_json(const Box& b) { return Json::array({b.xi_min, b.xi_max, b.t_min, b.t_max}); }

/// {"x": expr, "y": expr, "box": [xi_min, xi_max, t_min, t_max]}; box is optional.
inline PlaneMapGerm germ_from_json(const Json& j, const Box& fallback = Box::square(0.5))
{
    if (!j.is_object())
        throw SpecError("germ spec must be an object");
    const Box b = j.contains("box") ? box_from_json(j["box"]) : fallback;
    return PlaneMapGerm::parse(detail::need_string(j, "x"), detail::need_string(j, "y"), b);
}

/// {"base": germ, "delta_x": expr, "delta_y": expr, "lambda_range": [a, b]}.
inline DeformedFamily deformation_from_json(const Json& j, const Box& fallback = Box::square(0.5))
{
    if (!j.is_object() || !j.contains("base"))
        throw SpecError("deformation spec needs a 'base' germ");
    const PlaneMapGerm base = germ_from_json(j["base"], fallback);
    double lo = -1.0, hi = 1.0;
    if (j.contains("lambda_range")) {
        const auto r = detail::need_numbers(j["lambda_range"], 2, "lambda_range");
        lo = r[0];
        hi = r[1];
    }
    return DeformedFamily::additive(base, parse_expression(detail::need_string(j, "delta_x")),
                                    parse_expression(detail::need_string(j, "delta_y")), lo, hi);
}

/// Preset name or {"g11", "g12", "g22", "domain", "polar"}; "polar" defaults to false.
inline MetricChart metric_from_json(const Json& j)
{
    if (j.is_string())
        return MetricChart::preset(j.get<std::string>());
    if (!j.is_object())
        throw SpecError("metric spec must be a preset name or an object");
    const Box dom = j.contains("domain") ? box_from_json(j["domain"]) : Box{-1e6, 1e6, -1e6, 1e6};
    MetricChart m = MetricChart::parse(detail::need_string(j, "g11"), detail::need_string(j, "g12"),
                                       detail::need_string(j, "g22"), dom);
    if (!m.positive_definite_on_samples())
        throw SpecError("metric is not positive definite on the domain");
    return m.with_polar(j.value("polar", false));
}

/// Preset name or {"u": expr, "v": expr, "period": p} with "range": [a, b] when p = 0.
inline SupportCurve support_from_json(const Json& j, bool polar)
{
    if (j.is_string())
        return SupportCurve::preset(j.get<std::string>(), polar);
    if (!j.is_object())
        throw SpecError("support spec must be a preset name or an object");
    const double period = j.value("period", 0.0);
    double lo = 0.0, hi = 0.0;
    if (period <= 0) {
        if (!j.contains("range"))
            throw SpecError("open support needs 'range'");
        const auto r = detail::need_numbers(j["range"], 2, "range");
        lo = r[0];
        hi = r[1];
    }
    return SupportCurve::parse(detail::need_string(j, "u"), detail::need_string(j, "v"), period, lo, hi);
}

inline Json to_json(const Verdict& v)
{
    Json j;
    j["type"] = to_string(v.type);
    j["reason"] = to_string(v.reason);
    return j;
}

inline Json to_json(const Classification& c)
{
    Json j;
    j["type"] = to_string(c.verdict.type);
    j["k0"] = c.invariants.k0;
    j["k1"] = c.invariants.k1;
    j["alpha"] = c.invariants.alpha;
    j["reason"] = to_string(c.verdict.reason);
    j["mode"] = to_string(c.mode);
    if (c.invariants.exact()) {
        j["exact"] = {{"k0", c.invariants.k0_exact->str()},
                      {"k1", c.invariants.k1_exact->str()},
                      {"alpha", c.invariants.alpha_exact->str()}};
    }
    j["crosscheck"] = {{"invariants", to_json(c.by_invariants)},
                       {"criminant", to_json(c.by_criminant)},
                       {"agree", c.agree}};
    return j;
}

inline Json point_json(const Vec2& p) { return Json::array({p.x, p.y}); }

inline Json to_json(const EnvelopeReport& r)
{
    Json j;
    Json branches = Json::array();
    for (const CurveBranch& b : r.branches)
        branches.push_back({{"id", b.label}, {"vertices", b.size()}, {"closed", b.closed}, {"support", b.support}});
    j["branches"] = branches;
    Json cusps = Json::array();
    for (const Cusp& c : r.cusps)
        cusps.push_back({{"point", point_json(c.point)}, {"param", point_json(c.param)}, {"branch", c.branch}});
    j["cusps"] = cusps;
    Json xs = Json::array();
    for (const SelfIntersection& s : r.intersections)
        xs.push_back({{"point", point_json(s.point)}, {"branches", {s.branch_a, s.branch_b}}, {"angle", s.angle}});
    j["intersections"] = xs;
    Json ts = Json::array();
    for (const SelfTangency& t : r.tangencies) {
        Json e = {{"point", point_json(t.point)},
                  {"branches", {t.branch_a, t.branch_b}},
                  {"contact_order", t.contact_order},
                  {"at_least", t.at_least}};
        if (!t.note.empty())
            e["note"] = t.note;
        ts.push_back(e);
    }
    j["tangencies"] = ts;
    Json bp = Json::array();
    for (const Vec2& p : r.branch_points)
        bp.push_back(point_json(p));
    j["branch_points"] = bp;
    Json amb = Json::array();
    for (const Vec2& p : r.ambiguous_cells)
        amb.push_back(point_json(p));
    j["ambiguous_cells"] = amb;
    return j;
}

inline Json to_json(const SectionCensus& c)
{
    Json pts = Json::array();
    for (const SectionPoint& p : c.points)
        pts.push_back({{"point", point_json(p.point)}, {"param", point_json(p.param)}});
    Json j = {{"lambda", c.lam}, {"count", c.count}, {"points", pts}, {"ambiguous", c.ambiguous}};
    if (!c.note.empty())
        j["note"] = c.note;
    return j;
}

/// One row per vertex: branch id, xi, t, x, y.
inline std::string branches_csv(const std::vector<CurveBranch>& branches)
{
    std::ostringstream os;
    os << "branch,xi,t,x,y\n";
    for (const CurveBranch& b : branches)
        for (std::size_t k = 0; k < b.size(); ++k) {
            const Vec2 img = k < b.image.size() ? b.image[k] : Vec2{NAN, NAN};
            os << b.label << ',' << num(b.params[k].x) << ',' << num(b.params[k].y) << ',' << num(img.x) << ','
               << num(img.y) << '\n';
        }
    return os.str();
}

/// lambda, count, points as "x y" pairs separated by ';'.
inline std::string scan_csv(const std::vector<SectionCensus>& scan)
{
    std::ostringstream os;
    os << "lambda,count,points\n";
    for (const SectionCensus& c : scan) {
        os << num(c.lam) << ',' << c.count << ',';
        for (std::size_t k = 0; k < c.points.size(); ++k)
            os << (k ? ";" : "") << num(c.points[k].point.x) << ' ' << num(c.points[k].point.y);
        os << '\n';
    }
    return os.str();
}

/// Image-plane rectangle for rendering.
struct View {
    double x_min = -1, x_max = 1, y_min = -1, y_max = 1;
};

/// Bounding rectangle of f over the parameter box, from a 33 x 33 sample.
inline View view_of(const PlaneMapGerm& f, const Box& b)
{
    View v{1e300, -1e300, 1e300, -1e300};
    const int n = 32;
    for (int i = 0; i <= n; ++i)
        for (int k = 0; k <= n; ++k) {
            const Vec2 p = f.raw(b.xi_min + b.xi_width() * i / n, b.t_min + b.t_width() * k / n);
            v.x_min = std::min(v.x_min, p.x);
            v.x_max = std::max(v.x_max, p.x);
            v.y_min = std::min(v.y_min, p.y);
            v.y_max = std::max(v.y_max, p.y);
        }
    if (!(v.x_max > v.x_min))
        v.x_min -= 1, v.x_max += 1;
    if (!(v.y_max > v.y_min))
        v.y_min -= 1, v.y_max += 1;
    return v;
}

/// Bounding rectangle of the branch images, padded by 5%.
inline View view_of(const EnvelopeReport& r)
{
    View v{1e300, -1e300, 1e300, -1e300};
    for (const CurveBranch& b : r.branches)
        for (const Vec2& p : b.image) {
            v.x_min = std::min(v.x_min, p.x);
            v.x_max = std::max(v.x_max, p.x);
            v.y_min = std::min(v.y_min, p.y);
            v.y_max = std::max(v.y_max, p.y);
        }
    if (v.x_min > v.x_max)
        return {};
    const double pad = 0.05 * std::max(v.x_max - v.x_min, v.y_max - v.y_min) + 1e-9;
    return {v.x_min - pad, v.x_max + pad, v.y_min - pad, v.y_max + pad};
}

/// Branches as paths, cusps as squares, tangencies as circles, intersections as crosses.
inline std::string render_svg(const EnvelopeReport& r, const View& v, int size = 800)
{
    const double w = v.x_max - v.x_min, h = v.y_max - v.y_min;
    const double scale = size / std::max(w, h);
    const int W = int(std::ceil(w * scale)), H = int(std::ceil(h * scale));
    auto f3 = [](double a) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", a);
        return std::string(buf);
    };
    auto sx = [&](const Vec2& p) { return (p.x - v.x_min) * scale; };
    auto sy = [&](const Vec2& p) { return (v.y_max - p.y) * scale; };
    auto px = [&](const Vec2& p) { return f3(sx(p)) + "," + f3(sy(p)); };
    auto inside = [&](const Vec2& p) {
        return p.x >= v.x_min && p.x <= v.x_max && p.y >= v.y_min && p.y <= v.y_max && std::isfinite(p.x) &&
               std::isfinite(p.y);
    };
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
       << ' ' << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    for (const CurveBranch& b : r.branches) {
        os << "<path fill=\"none\" stroke=\"" << colors[std::size_t(b.label) % 6] << "\" stroke-width=\"1.5\" d=\"";
        bool pen = false;
        for (const Vec2& p : b.image) {
            if (!inside(p)) {
                pen = false;
                continue;
            }
            os << (pen ? " L" : " M") << px(p);
            pen = true;
        }
        if (b.closed && !b.image.empty() && inside(b.image.front()) && inside(b.image.back()))
            os << " Z";
        os << "\"/>\n";
    }
    for (const Cusp& c : r.cusps) {
        if (!inside(c.point))
            continue;
        os << "<rect x=\"" << f3(sx(c.point) - 4) << "\" y=\"" << f3(sy(c.point) - 4)
           << "\" width=\"8\" height=\"8\" fill=\"black\"/>\n";
    }
    for (const SelfTangency& t : r.tangencies) {
        if (!inside(t.point))
            continue;
        os << "<circle cx=\"" << f3(sx(t.point)) << "\" cy=\"" << f3(sy(t.point))
           << "\" r=\"6\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n";
    }
    for (const SelfIntersection& x : r.intersections) {
        if (!inside(x.point))
            continue;
        os << "<path stroke=\"black\" d=\"M" << px(x.point - Vec2{4 / scale, 4 / scale}) << " L"
           << px(x.point + Vec2{4 / scale, 4 / scale}) << " M" << px(x.point + Vec2{-4 / scale, 4 / scale}) << " L"
           << px(x.point + Vec2{4 / scale, -4 / scale}) << "\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace tangfam::io
