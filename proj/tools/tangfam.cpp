// tangfam: command-line front end.

#include "tangfam/tangfam.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

using namespace tangfam;
namespace fs = std::filesystem;

namespace {

enum Exit { ok = 0, parse_error = 1, not_tangential = 2, degenerate = 3, undecidable = 4 };

struct GermInput {
    std::string x, y, spec;
    std::vector<double> box;
    std::optional<std::string> lam;

    std::optional<Rational> lam_value() const
    {
        if (!lam)
            return std::nullopt;
        std::string_view text = *lam;
        const bool negative = text.starts_with('-');
        if (negative || text.starts_with('+'))
            text.remove_prefix(1);
        Rational q;
        if (!parse_decimal(text, q))
            throw io::SpecError("--lam must be a decimal number");
        return negative ? Rational(-q) : q;
    }
};

struct Output {
    std::string dir = "tangfam_out";
    std::string formats = "json,csv";

    bool wants(const std::string& f) const
    {
        std::stringstream ss(formats);
        std::string item;
        while (std::getline(ss, item, ','))
            if (item == f)
                return true;
        return false;
    }
    std::string path(const std::string& name) const
    {
        fs::create_directories(dir);
        return (fs::path(dir) / name).string();
    }
};

Box resolve_box(const std::vector<double>& v, const Box& fallback)
{
    if (v.empty())
        return fallback;
    if (v.size() != 4 || !(v[0] < v[1]) || !(v[2] < v[3]))
        throw io::SpecError("--box needs xi_min xi_max t_min t_max");
    return {v[0], v[1], v[2], v[3]};
}

void add_germ_options(CLI::App* cmd, GermInput& in)
{
    cmd->add_option("--x", in.x, "x component, an expression in xi and t");
    cmd->add_option("--y", in.y, "y component");
    cmd->add_option("--spec", in.spec, "germ JSON file {\"x\", \"y\", \"box\"}");
    cmd->add_option("--box", in.box, "xi_min xi_max t_min t_max (default -0.5 0.5 -0.5 0.5)")->expected(4);
    cmd->add_option("--lam", in.lam, "value substituted for lam");
}

PlaneMapGerm load_germ(const GermInput& in)
{
    const Box fallback = Box::square(0.5);
    Expr x, y;
    Box b = fallback;
    if (!in.spec.empty()) {
        const io::Json j = io::read_json_file(in.spec);
        b = j.contains("box") ? io::box_from_json(j["box"]) : fallback;
        x = parse_expression(io::detail::need_string(j, "x"));
        y = parse_expression(io::detail::need_string(j, "y"));
    } else {
        if (in.x.empty() || in.y.empty())
            throw io::SpecError("give --x and --y, or --spec");
        x = parse_expression(in.x);
        y = parse_expression(in.y);
    }
    b = resolve_box(in.box, b);
    const Expr lam = Expr::constant(in.lam_value().value_or(Rational(0)));
    return PlaneMapGerm::from_expressions(x.substitute(var_lam, lam), y.substitute(var_lam, lam), b);
}

NumericMode parse_mode(const std::string& m)
{
    if (m == "exact")
        return NumericMode::exact;
    if (m == "floating")
        return NumericMode::floating;
    if (m == "fd" || m == "finite_difference")
        return NumericMode::finite_difference;
    throw io::SpecError("unknown mode: " + m);
}

int verdict_exit(const Verdict& v)
{
    if (v.type != VerdictType::degenerate)
        return ok;
    return v.undecidable() ? undecidable : degenerate;
}

int cmd_classify(const GermInput& in, const std::string& mode, bool black_box)
{
    PlaneMapGerm f = load_germ(in);
    if (black_box)
        f = f.as_black_box();
    const auto tan = is_tangential_family(f);
    if (tan.verdict == Tangency::not_tangential) {
        std::cout << io::Json{{"error", "not a tangential family"}, {"reason", tan.reason}}.dump(2) << '\n';
        return not_tangential;
    }
    ClassifyOptions opt;
    if (!mode.empty())
        opt.mode = parse_mode(mode);
    const Classification c = classify(f, opt);
    std::cout << io::to_json(c).dump(2) << '\n';
    return verdict_exit(c.verdict);
}

int cmd_envelope(const GermInput& in, int grid, const Output& out, std::optional<double> section)
{
    const PlaneMapGerm f = load_germ(in);
    TraceOptions opt;
    opt.grid = grid;
    const EnvelopeReport rep = analyze_envelope(f, f.box(), opt);
    io::Json j = io::to_json(rep);
    if (section || in.lam) {
        SectionCensus c = section_census(f, f.box(), grid, section.value_or(0.0));
        c.lam = to_double(in.lam_value().value_or(Rational(0)));
        j["section"] = io::to_json(c);
    }
    if (out.wants("csv"))
        io::write_file(out.path("envelope.csv"), io::branches_csv(rep.branches));
    if (out.wants("json"))
        io::write_file(out.path("envelope.json"), j.dump(2) + "\n");
    if (out.wants("svg"))
        io::write_file(out.path("envelope.svg"), io::render_svg(rep, io::view_of(f, f.box())));
    std::cout << j.dump(2) << '\n';
    return ok;
}

int cmd_deform(const GermInput& in, const std::string& dx, const std::string& dy, const std::string& spec,
               std::vector<double> lams, int grid, const Output& out, bool type_inducing)
{
    io::Json j;
    if (type_inducing) {
        const PlaneMapGerm f = load_germ(in);
        const Rational lam = in.lam_value().value_or(Rational(1, 10));
        const auto r = type_inducing_deformation(f, lam);
        j = {{"lambda", to_double(lam)},
             {"x", r.germ.x().to_string()},
             {"y", r.germ.y().to_string()},
             {"verdict", io::to_json(r.classification)}};
        std::cout << j.dump(2) << '\n';
        if (out.wants("json"))
            io::write_file(out.path("deform.json"), j.dump(2) + "\n");
        return verdict_exit(r.classification.verdict);
    }
    DeformedFamily F = [&] {
        if (!spec.empty())
            return io::deformation_from_json(io::read_json_file(spec));
        if (in.x.empty() || in.y.empty())
            throw io::SpecError("give --x and --y (lam allowed), or --spec");
        if (dx.empty() && dy.empty()) {
            return DeformedFamily::parse(in.x, in.y, -1.0, 1.0, resolve_box(in.box, Box::square(0.5)));
        }
        const GermInput base{in.x, in.y, "", in.box, std::nullopt};
        return DeformedFamily::additive(load_germ(base), parse_expression(dx.empty() ? "0" : dx),
                                        parse_expression(dy.empty() ? "0" : dy));
    }();
    if (lams.empty())
        lams = {-0.01, 0.0, 0.01};
    // The tangency check wants at least five samples including 0; fill with midpoints.
    std::vector<double> sample = lams;
    sample.push_back(0.0);
    std::sort(sample.begin(), sample.end());
    sample.erase(std::unique(sample.begin(), sample.end()), sample.end());
    while (sample.size() < 5) {
        if (sample.size() == 1)
            sample = {-1e-3, 0.0, 1e-3};
        std::vector<double> denser;
        for (std::size_t k = 0; k + 1 < sample.size(); ++k)
            denser.insert(denser.end(), {sample[k], 0.5 * (sample[k] + sample[k + 1])});
        denser.push_back(sample.back());
        sample = denser;
    }
    // The section census applies to any family; tangency is reported, not required.
    const auto diag = is_tangential_deformation(F, sample);
    j["tangential"] = diag.verdict == Tangency::tangential;
    if (diag.verdict != Tangency::tangential)
        j["reason"] = diag.reason;
    std::vector<SectionCensus> scan;
    for (double l : lams) {
        SectionCensus c = section_census(F.specialize(l), F.base().box(), grid);
        c.lam = l;
        scan.push_back(c);
    }
    io::Json arr = io::Json::array();
    for (const auto& c : scan)
        arr.push_back(io::to_json(c));
    j["scan"] = arr;
    if (out.wants("csv"))
        io::write_file(out.path("scan.csv"), io::scan_csv(scan));
    if (out.wants("json"))
        io::write_file(out.path("deform.json"), j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
    return ok;
}

int cmd_geodesic(const std::string& metric_spec, const std::string& support_spec, std::optional<int> order,
                 const std::string& census, int grid, int rows, const Output& out)
{
    const MetricChart m = metric_spec.ends_with(".json") ? io::metric_from_json(io::read_json_file(metric_spec))
                                                         : MetricChart::preset(metric_spec);
    const SupportCurve s = support_spec.ends_with(".json")
                               ? io::support_from_json(io::read_json_file(support_spec), m.polar())
                               : SupportCurve::preset(support_spec, m.polar());
    const GeodesicFamily fam(m, s);
    io::Json j;
    j["metric"] = m.name();
    EnvelopeReport rep;
    if (!order && m.is_flat()) {
        const auto r = inflection_selftangency_check(fam, 1e-4, grid, 0.5, &rep);
        io::Json infl = io::Json::array();
        for (const auto& i : r.inflections)
            infl.push_back({{"xi", i.xi}, {"point", io::point_json(i.point)}, {"tangency", i.tangency}});
        j["inflections"] = infl;
        j["matched"] = r.matched;
        j["envelope"] = io::to_json(rep);
    } else {
        const int n = order.value_or(1);
        j["order"] = n;
        CurveBranch br;
        try {
            br = order_n_envelope(fam, n, {grid, rows});
        } catch (const BranchNotFoundError& e) {
            j["error"] = e.what();
            std::cout << j.dump(2) << '\n';
            return ok;
        }
        rep.branches = {br};
        if (census == "cusps") {
            rep.cusps = geodesic_cusps(fam, br);
            j["cusp_count"] = rep.cusps.size();
        }
        j["envelope"] = io::to_json(rep);
    }
    if (out.wants("csv"))
        io::write_file(out.path("geodesic.csv"), io::branches_csv(rep.branches));
    if (out.wants("json"))
        io::write_file(out.path("geodesic.json"), j.dump(2) + "\n");
    if (out.wants("svg"))
        io::write_file(out.path("geodesic.svg"), io::render_svg(rep, io::view_of(rep)));
    std::cout << j.dump(2) << '\n';
    return ok;
}

int cmd_selftest()
{
    const auto a = classify(PlaneMapGerm::parse("xi + t", "t^2")).verdict.type;
    const auto b = classify(PlaneMapGerm::parse("xi + t", "xi*t^2")).verdict.type;
    const auto c = classify(PlaneMapGerm::parse("xi + t", "t^3 + xi*t^2")).verdict.type;
    const bool pass = a == VerdictType::type_I && b == VerdictType::type_II && c == VerdictType::degenerate;
    std::cout << (pass ? "selftest PASS" : "selftest FAIL") << '\n';
    return pass ? ok : 5;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Envelopes and singularities of tangential families of plane curves"};
    app.require_subcommand(1);

    GermInput germ;
    Output out;
    std::string mode;
    bool black_box = false;
    int grid = 512;
    std::optional<double> section;

    auto* classify_cmd = app.add_subcommand("classify", "classify the germ at the origin");
    add_germ_options(classify_cmd, germ);
    classify_cmd->add_option("--mode", mode, "exact, floating or fd");
    classify_cmd->add_flag("--black-box", black_box, "evaluate numerically only");

    auto* envelope_cmd = app.add_subcommand("envelope", "trace the criminant and the envelope");
    add_germ_options(envelope_cmd, germ);
    envelope_cmd->add_option("--grid", grid, "cells per side")->check(CLI::Range(64, 8192));
    envelope_cmd->add_option("--section", section, "census of the critical values on the line x = X");
    envelope_cmd->add_option("--out", out.dir, "output directory");
    envelope_cmd->add_option("--formats", out.formats, "comma list of json, csv, svg");

    std::string dx, dy, dspec;
    std::vector<double> lams;
    bool type_inducing = false;
    auto* deform_cmd = app.add_subcommand("deform", "deformations and section census");
    add_germ_options(deform_cmd, germ);
    deform_cmd->add_option("--dx", dx, "added x term in xi, t, lam");
    deform_cmd->add_option("--dy", dy, "added y term in xi, t, lam");
    deform_cmd->add_option("--deformation", dspec, "deformation JSON file");
    deform_cmd->add_option("--lams", lams, "lambda values")->delimiter(',');
    deform_cmd->add_flag("--type-inducing", type_inducing, "apply the type-inducing deformation at --lam");
    deform_cmd->add_option("--grid", grid, "cells per side")->check(CLI::Range(64, 8192));
    deform_cmd->add_option("--out", out.dir, "output directory");
    deform_cmd->add_option("--formats", out.formats, "comma list of json, csv");

    std::string metric = "sphere", support = "circle:0.5", census;
    std::optional<int> order;
    int rows = 64;
    auto* geo_cmd = app.add_subcommand("geodesic", "geodesic tangential families");
    geo_cmd->add_option("--metric", metric, "flat, sphere, ellipsoid:EPS, ellipsoid-axial:EPS or a JSON file");
    geo_cmd->add_option("--support", support, "circle:R, cubic, sine or a JSON file");
    geo_cmd->add_option("--order", order, "envelope order n, |n| <= 5");
    geo_cmd->add_option("--census", census, "'cusps' to count cusps")->check(CLI::IsMember({"", "cusps"}));
    geo_cmd->add_option("--grid", grid, "cells along xi")->check(CLI::Range(64, 8192));
    geo_cmd->add_option("--rows", rows, "cells along t for order-n bands")->check(CLI::Range(16, 4096));
    geo_cmd->add_option("--out", out.dir, "output directory");
    geo_cmd->add_option("--formats", out.formats, "comma list of json, csv, svg");

    auto* self_cmd = app.add_subcommand("selftest", "quick sanity run");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : parse_error;
    }

    try {
        if (*classify_cmd)
            return cmd_classify(germ, mode, black_box);
        if (*envelope_cmd)
            return cmd_envelope(germ, grid, out, section);
        if (*deform_cmd)
            return cmd_deform(germ, dx, dy, dspec, lams, grid, out, type_inducing);
        if (*geo_cmd)
            return cmd_geodesic(metric, support, order, census, grid, rows, out);
        if (*self_cmd)
            return cmd_selftest();
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return parse_error;
    } catch (const io::SpecError& e) {
        std::cerr << "bad input: " << e.what() << '\n';
        return parse_error;
    } catch (const NotTangentialError& e) {
        std::cerr << "not a tangential family: " << e.what() << '\n';
        return not_tangential;
    } catch (const std::invalid_argument& e) {
        std::cerr << "bad input: " << e.what() << '\n';
        return parse_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 6;
    }
    return ok;
}
