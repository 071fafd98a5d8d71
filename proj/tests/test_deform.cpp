#include "tangfam/deform.hpp"
#include "tangfam/equivalence.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace tangfam;

namespace {

PlaneMapGerm fI() { return PlaneMapGerm::parse("xi + t", "t^2"); }
PlaneMapGerm fII() { return PlaneMapGerm::parse("xi + t", "xi*t^2"); }
PlaneMapGerm fdeg() { return PlaneMapGerm::parse("xi + t", "t^3 + xi*t^2"); }

void expect_same_map(const PlaneMapGerm& a, const PlaneMapGerm& b, double tol)
{
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
            const double xi = -0.4 + 0.09 * i, t = -0.35 + 0.08 * j;
            EXPECT_LE(distance(a.raw(xi, t), b.raw(xi, t)), tol);
        }
}

const std::vector<double> lams{-0.1, -0.05, 0.0, 0.05, 0.1};

} // namespace

TEST(Specialize, BeakFamilyAtZero)
{
    expect_same_map(beak_to_beak_family().specialize(0.0), PlaneMapGerm::parse("xi", "xi*t^2 + t^3"), 0.0);
}

TEST(Specialize, TrivialDeformation)
{
    const auto F = DeformedFamily::additive(fI(), Expr::constant(Rational(0)), Expr::constant(Rational(0)));
    expect_same_map(F.specialize(0.37), fI(), 0.0);
}

TEST(Specialize, CubicDeformationExact)
{
    const auto g = cubic_deformation(fdeg()).specialize(Rational(1, 10));
    expect_same_map(g, PlaneMapGerm::parse("xi + t", "1.1*t^3 + 1.1*xi*t^2"), 1e-15);
}

TEST(Specialize, RangeAndBase)
{
    const auto F = cubic_deformation(fII(), -0.5, 0.5);
    EXPECT_THROW(F.specialize(0.6), std::out_of_range);
    EXPECT_NO_THROW(F.specialize(-0.5));
    expect_same_map(F.specialize(0.0), fII(), 1e-12);
    EXPECT_THROW(DeformedFamily::additive(fI(), Expr::constant(Rational(1)), Expr::constant(Rational(0))),
                 std::invalid_argument);
}

TEST(Specialize, BlackBoxBase)
{
    const auto F = cubic_deformation(fdeg().as_black_box());
    expect_same_map(F.specialize(0.1), cubic_deformation(fdeg()).specialize(0.1), 1e-15);
    EXPECT_TRUE(is_tangential_family(F.specialize(0.1)).tangential());
}

TEST(TangentialDeformation, Translation)
{
    const auto F = DeformedFamily::additive(fI(), Expr::lam(), Expr::constant(Rational(0)));
    EXPECT_EQ(is_tangential_deformation(F, lams).verdict, Tangency::tangential);
}

TEST(TangentialDeformation, TransportedBeakIsNot)
{
    const auto F = DeformedFamily::parse("xi + t", "xi*t^2 + lam*t");
    const auto d = is_tangential_deformation(F, lams);
    EXPECT_EQ(d.verdict, Tangency::not_tangential);
    EXPECT_EQ(d.per_lam[2].verdict, Tangency::tangential);
}

TEST(TangentialDeformation, CubicTermIs)
{
    EXPECT_EQ(is_tangential_deformation(cubic_deformation(fdeg()), lams).verdict, Tangency::tangential);
}

TEST(TangentialDeformation, NeedsFiveSamples)
{
    EXPECT_THROW(is_tangential_deformation(cubic_deformation(fI()), {-0.1, 0.0, 0.1}), std::invalid_argument);
    EXPECT_THROW(is_tangential_deformation(cubic_deformation(fI()), {-0.2, -0.1, 0.1, 0.2, 0.3}),
                 std::invalid_argument);
}

TEST(BeakToBeak, Census)
{
    const auto scan = beak_to_beak_scan({-0.01, 0.0, 0.01});
    ASSERT_EQ(scan.size(), 3u);
    EXPECT_EQ(scan[0].count, 2);
    EXPECT_EQ(scan[1].count, 1);
    EXPECT_EQ(scan[2].count, 0);
    const double lam = -0.01;
    const double y = (2 * lam / 3) * std::sqrt(-lam / 3);
    ASSERT_EQ(scan[0].points.size(), 2u);
    EXPECT_NEAR(scan[0].points[0].point.y, -std::fabs(y), 1e-5);
    EXPECT_NEAR(scan[0].points[1].point.y, std::fabs(y), 1e-5);
    EXPECT_FALSE(scan[0].ambiguous);
    EXPECT_LT(norm(scan[1].points[0].point), 1e-8);
}

TEST(BeakToBeak, SignMonotone)
{
    for (double a : {0.002, 0.02, 0.05}) {
        const auto scan = beak_to_beak_scan({-a, 0.0, a}, Box::square(0.5), 256);
        EXPECT_EQ(scan[0].count, 2) << a;
        EXPECT_EQ(scan[1].count, 1) << a;
        EXPECT_EQ(scan[2].count, 0) << a;
    }
}

TEST(TypeInducing, FamilyFormula)
{
    const auto g = type_inducing_family(fdeg()).specialize(Rational(1, 10));
    expect_same_map(g, PlaneMapGerm::parse("xi + t", "1.2*t^3 + 1.1*xi*t^2"), 1e-15);
}

TEST(TypeInducing, Examples)
{
    EXPECT_EQ(classify(fdeg()).verdict.type, VerdictType::degenerate);
    for (double l : {0.01, 0.1})
        EXPECT_EQ(type_inducing_deformation(fdeg(), l).classification.verdict.type, VerdictType::type_II) << l;
    EXPECT_EQ(type_inducing_deformation(fII(), 0.05).classification.verdict.type, VerdictType::type_II);
    EXPECT_EQ(type_inducing_deformation(fI(), 0.05).classification.verdict.type, VerdictType::type_I);
}

TEST(TypeInducing, RotatedGerm)
{
    // The degenerate germ turned by 90 degrees in the target.
    const auto g = PlaneMapGerm::parse("-(t^3 + xi*t^2)", "xi + t");
    EXPECT_EQ(classify(g).verdict.type, VerdictType::degenerate);
    EXPECT_EQ(type_inducing_deformation(g, 0.1).classification.verdict.type, VerdictType::type_II);
}

TEST(TypeInducing, LiteralCubicTermKeepsDegenerate)
{
    // (1 + lam)(t^3 + xi t^2) is a rescaling of the degenerate germ.
    const auto g = cubic_deformation(fdeg()).specialize(Rational(1, 10));
    EXPECT_EQ(classify(g).verdict.type, VerdictType::degenerate);
}

TEST(Recenter, FindsRootNearOrigin)
{
    // k0 vanishes at xi0 = 0.05 for the type II germ shifted along the support.
    const auto g = PlaneMapGerm::parse("xi + t", "(xi - 0.05)*t^2");
    const auto r = classify_recentered(g);
    EXPECT_TRUE(r.root_found);
    EXPECT_NEAR(r.xi0, 0.05, 1e-9);
    EXPECT_EQ(r.result.verdict.type, VerdictType::type_II);
    const auto f1 = classify_recentered(fI());
    EXPECT_FALSE(f1.root_found);
    EXPECT_EQ(f1.result.verdict.type, VerdictType::type_I);
}

TEST(Stability, TypeOne)
{
    for (const auto& tr : stability_suite(fI(), 20, 1e-2, 11))
        EXPECT_EQ(tr.outcome.result.verdict.type, VerdictType::type_I);
}

TEST(Stability, TypeTwo)
{
    for (const auto& tr : stability_suite(fII(), 20, 1e-2, 12)) {
        EXPECT_TRUE(tr.outcome.root_found);
        EXPECT_EQ(tr.outcome.result.verdict.type, VerdictType::type_II);
    }
}

TEST(Stability, DeformationsAreTangential)
{
    for (const auto& tr : stability_suite(fII(), 5, 1e-2, 13)) {
        const auto g = PlaneMapGerm::from_expressions(fII().x() + tr.dx, fII().y() + tr.dy);
        EXPECT_TRUE(is_tangential_family(g).tangential());
    }
}

TEST(Equivalence, VerdictsInvariant)
{
    std::mt19937_64 rng(2024);
    for (int k = 0; k < 10; ++k) {
        const SourceDiffeo phi = random_source_diffeo(rng);
        const TargetDiffeo psi = random_target_diffeo(rng);
        for (const auto& f : {fI(), fII(), fdeg()}) {
            const auto g = apply_equivalence(f, phi, psi);
            ASSERT_TRUE(is_tangential_family(g).tangential());
            const auto a = classify(f).verdict, b = classify(g).verdict;
            EXPECT_EQ(a.type, b.type);
            EXPECT_TRUE(classify(g).agree);
        }
    }
}

TEST(Equivalence, ComposeIsSimultaneous)
{
    const SourceDiffeo phi{parse_expression("t"), parse_expression("xi")};
    const TargetDiffeo psi{parse_expression("t"), Expr::constant(Rational(0))};
    // f o phi = (xi + 2t + xi t, ...), then x + y.
    const auto g = apply_equivalence(fI(), phi, psi);
    const double xi = 0.3, t = -0.2;
    const double a = xi + t, b = t + t * xi;
    EXPECT_NEAR(g.raw(xi, t).x, (a + b) + b * b, 1e-15);
    EXPECT_NEAR(g.raw(xi, t).y, b * b, 1e-15);
}
