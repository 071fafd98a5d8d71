#include "tangfam/io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace tangfam;
using io::Json;

namespace {

PlaneMapGerm fII() { return PlaneMapGerm::parse("xi + t", "xi*t^2", Box::square(0.5)); }

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST(IoNumbers, SeventeenDigitsRoundTrip)
{
    for (double v : {0.1, -1.0 / 3.0, 4.0 / 27.0, 1e-300, 12345.678})
        EXPECT_EQ(std::stod(io::num(v)), v);
}

TEST(IoSpec, GermWithBox)
{
    const auto j = Json::parse(R"({"x": "xi + t", "y": "t^2", "box": [-0.25, 0.25, -0.5, 0.5]})");
    const PlaneMapGerm f = io::germ_from_json(j);
    EXPECT_EQ(f.box().xi_min, -0.25);
    EXPECT_EQ(f.box().t_max, 0.5);
    EXPECT_EQ(classify(f).verdict.type, VerdictType::type_I);
}

TEST(IoSpec, GermFallbackBox)
{
    const PlaneMapGerm f = io::germ_from_json(Json::parse(R"({"x": "xi + t", "y": "xi*t^2"})"), Box::square(0.3));
    EXPECT_EQ(f.box().xi_max, 0.3);
}

TEST(IoSpec, Rejections)
{
    EXPECT_THROW(io::germ_from_json(Json::parse(R"([1, 2])")), io::SpecError);
    EXPECT_THROW(io::germ_from_json(Json::parse(R"({"x": "xi"})")), io::SpecError);
    EXPECT_THROW(io::germ_from_json(Json::parse(R"({"x": "xi", "y": 3})")), io::SpecError);
    EXPECT_THROW(io::box_from_json(Json::parse(R"([0, 1, 2])")), io::SpecError);
    EXPECT_THROW(io::box_from_json(Json::parse(R"([1, 0, -1, 1])")), io::SpecError);
    EXPECT_THROW(io::box_from_json(Json::parse(R"([0, 1, "a", 2])")), io::SpecError);
    EXPECT_THROW(io::deformation_from_json(Json::parse(R"({"delta_x": "0"})")), io::SpecError);
    EXPECT_THROW(io::metric_from_json(Json::parse("3")), io::SpecError);
    EXPECT_THROW(io::support_from_json(Json::parse(R"({"u": "xi", "v": "0"})"), false), io::SpecError);
}

TEST(IoSpec, MissingFile)
{
    EXPECT_THROW(io::read_json_file("/nonexistent/spec.json"), io::SpecError);
}

TEST(IoSpec, MalformedFile)
{
    const auto path = std::filesystem::temp_directory_path() / "tangfam_bad.json";
    io::write_file(path.string(), "{\"x\": ");
    EXPECT_THROW(io::read_json_file(path.string()), io::SpecError);
    std::filesystem::remove(path);
}

TEST(IoSpec, Deformation)
{
    const auto j = Json::parse(
        R"({"base": {"x": "xi + t", "y": "xi*t^2"}, "delta_x": "0", "delta_y": "lam*t^2", "lambda_range": [-0.1, 0.2]})");
    const DeformedFamily d = io::deformation_from_json(j);
    EXPECT_EQ(d.lam_min(), -0.1);
    EXPECT_EQ(d.lam_max(), 0.2);
    EXPECT_NEAR(d.specialize(Rational(1, 5)).raw(0.1, 0.3).y, 0.1 * 0.09 + 0.2 * 0.09, 1e-15);
}

TEST(IoSpec, MetricObjectAndPolarFlag)
{
    const auto j = Json::parse(R"J({"g11": "1", "g12": "0", "g22": "sin(u)^2",
                                   "domain": [0.001, 3.14, -100, 100], "polar": true})J");
    const MetricChart m = io::metric_from_json(j);
    EXPECT_TRUE(m.polar());
    EXPECT_NEAR(m.metric(1.0, 0.0)[2], std::sin(1.0) * std::sin(1.0), 1e-14);
    EXPECT_FALSE(io::metric_from_json(Json::parse(R"({"g11": "1", "g12": "0", "g22": "1"})")).polar());
}

TEST(IoSpec, MetricNotPositiveDefinite)
{
    EXPECT_THROW(io::metric_from_json(Json::parse(R"({"g11": "1", "g12": "2", "g22": "1"})")), io::SpecError);
}

TEST(IoSpec, MetricPreset)
{
    EXPECT_TRUE(io::metric_from_json(Json("flat")).is_flat());
    EXPECT_TRUE(io::metric_from_json(Json("sphere")).polar());
}

TEST(IoSpec, SupportObject)
{
    const auto open = io::support_from_json(Json::parse(R"({"u": "xi", "v": "xi^3", "range": [-0.5, 0.5]})"), false);
    EXPECT_FALSE(open.closed());
    EXPECT_EQ(open.hi(), 0.5);
    const auto loop =
        io::support_from_json(Json::parse(R"J({"u": "cos(xi)", "v": "sin(xi)", "period": 6.283185307179586})J"), false);
    EXPECT_TRUE(loop.closed());
}

TEST(IoJson, ClassificationFields)
{
    const Json j = io::to_json(classify(fII()));
    EXPECT_EQ(j["type"], "II");
    EXPECT_TRUE(j.contains("exact"));
    EXPECT_TRUE(j["crosscheck"]["agree"].get<bool>());
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items())
        keys.push_back(k);
    ASSERT_GE(keys.size(), 6u);
    EXPECT_EQ(keys[0], "type");
    EXPECT_EQ(keys[1], "k0");
}

TEST(IoJson, EnvelopeRoundTrip)
{
    const auto rep = analyze_envelope(fII(), Box::square(0.5), {.grid = 128});
    const Json j = io::to_json(rep);
    const Json back = Json::parse(j.dump(2));
    EXPECT_EQ(back, j);
    EXPECT_EQ(back["branches"].size(), rep.branches.size());
    EXPECT_EQ(back["tangencies"].size(), rep.tangencies.size());
}

TEST(IoCsv, BranchesOneRowPerVertex)
{
    const auto rep = analyze_envelope(fII(), Box::square(0.5), {.grid = 128});
    const std::string csv = io::branches_csv(rep.branches);
    std::size_t vertices = 0;
    for (const auto& b : rep.branches)
        vertices += b.size();
    EXPECT_EQ(csv.rfind("branch,xi,t,x,y\n", 0), 0u);
    EXPECT_EQ(count_lines(csv), vertices + 1);
}

TEST(IoCsv, Scan)
{
    SectionCensus c;
    c.lam = 0.25;
    c.count = 2;
    c.points = {{{1, 2}, {0, 0}}, {{3, 4}, {0, 0}}};
    EXPECT_EQ(io::scan_csv({c}), "lambda,count,points\n0.25,2,1 2;3 4\n");
}

TEST(IoSvg, DeterministicAndWellFormed)
{
    const auto rep = analyze_envelope(fII(), Box::square(0.5), {.grid = 128});
    const auto view = io::view_of(rep);
    const std::string a = io::render_svg(rep, view, 400), b = io::render_svg(rep, view, 400);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.rfind("<svg", 0), 0u);
    EXPECT_NE(a.find("</svg>"), std::string::npos);
    EXPECT_NE(a.find("<path"), std::string::npos);
}

TEST(IoSvg, ViewCoversImage)
{
    const auto f = fII();
    const auto v = io::view_of(f, f.box());
    const Vec2 p = f.raw(0.5, 0.5);
    EXPECT_LE(v.x_min, p.x);
    EXPECT_GE(v.x_max, p.x);
    EXPECT_GE(v.y_max, p.y);
}
