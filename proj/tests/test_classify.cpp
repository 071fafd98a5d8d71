#include "tangfam/classify.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tangfam;

namespace {

PlaneMapGerm fI() { return PlaneMapGerm::parse("xi + t", "t^2"); }
PlaneMapGerm fII() { return PlaneMapGerm::parse("xi + t", "xi*t^2"); }
PlaneMapGerm fdeg() { return PlaneMapGerm::parse("xi + t", "t^3 + xi*t^2"); }
PlaneMapGerm cubic_tangents() { return PlaneMapGerm::parse("xi + t", "xi^3 + 3*xi^2*t"); }

Expr q(long n, long d = 1) { return Expr::constant(Rational(n, d)); }

} // namespace

TEST(Flatten, IdentityForFlatSupport)
{
    const auto [map, g] = flatten_support(fI());
    EXPECT_EQ(map.matrix, (std::array<double, 4>{1, 0, 0, 1}));
    EXPECT_TRUE(map.shear.empty());
    EXPECT_DOUBLE_EQ(map.angle, 0.0);
}

TEST(Flatten, CubicSupportShear)
{
    const auto [map, g] = flatten_support(cubic_tangents());
    ASSERT_EQ(map.shear.size(), 4u);
    EXPECT_EQ(map.shear[3], 1.0);
    // Oracle: (xi^3 + 3 xi^2 t) - (xi + t)^3 = -3 xi t^2 - t^3.
    for (double xi : {-0.2, 0.1})
        for (double t : {-0.3, 0.05})
            EXPECT_NEAR(g(xi, t).y, -3 * xi * t * t - t * t * t, 1e-14);
}

TEST(Flatten, RotatedSupport)
{
    const PlaneMapGerm f =
        PlaneMapGerm::parse("(xi + t)*sqrt(2)/2 - t^2*sqrt(2)/2", "(xi + t)*sqrt(2)/2 + t^2*sqrt(2)/2");
    const auto [map, g] = flatten_support(f);
    EXPECT_NEAR(map.angle, M_PI / 4, 1e-14);
    for (double s : map.shear)
        EXPECT_NEAR(s, 0.0, 1e-14);
    // Support flat: |y| < 1e-10 |x| + 1e-12.
    for (int i = -10; i <= 10; ++i) {
        const Vec2 p = g(0.05 * i, 0);
        EXPECT_LT(std::fabs(p.y), 1e-10 * std::fabs(p.x) + 1e-12);
    }
}

TEST(Flatten, CurvedSupportIsFlattened)
{
    const PlaneMapGerm f = PlaneMapGerm::parse("xi + t", "xi^2/2 + xi*t + t^2");
    const auto [map, g] = flatten_support(f);
    for (int i = -5; i <= 5; ++i) {
        const Vec2 p = g(0.01 * i, 0);
        EXPECT_LT(std::fabs(p.y), 1e-10 * std::fabs(p.x) + 1e-12);
    }
}

TEST(Flatten, NotImmersed)
{
    EXPECT_THROW(flatten_support(PlaneMapGerm::parse("xi^2 + t", "t^2")), DomainError);
}

TEST(GraphCoefficients, Representatives)
{
    for (double xi0 : {0.0, 0.3, -0.2}) {
        const auto cI = graph_coefficients(fI(), xi0);
        EXPECT_NEAR(cI[2], 1.0, 1e-14);
        EXPECT_NEAR(cI[3], 0.0, 1e-14);
        const auto cII = graph_coefficients(fII(), xi0);
        EXPECT_NEAR(cII[2], xi0, 1e-14);
        EXPECT_NEAR(cII[3], 0.0, 1e-14);
        const auto c3 = graph_coefficients(flatten_support(cubic_tangents()).second, xi0);
        EXPECT_NEAR(c3[2], -3 * xi0, 1e-12);
        EXPECT_NEAR(c3[3], -1.0, 1e-12);
    }
}

TEST(GraphCoefficients, VerticalCurve)
{
    EXPECT_THROW(graph_coefficients(PlaneMapGerm::parse("xi + t^2", "t^2"), 0.0), DomainError);
}

TEST(Invariants, ExactRepresentatives)
{
    const PrenormalInvariants a = prenormal_invariants(fI());
    ASSERT_TRUE(a.exact());
    EXPECT_EQ(*a.k0_exact, 1);
    EXPECT_EQ(*a.k1_exact, 0);
    EXPECT_EQ(*a.alpha_exact, 0);
    const PrenormalInvariants b = prenormal_invariants(fII());
    EXPECT_EQ(*b.k0_exact, 0);
    EXPECT_EQ(*b.k1_exact, 1);
    EXPECT_EQ(*b.alpha_exact, 0);
    const PrenormalInvariants c = prenormal_invariants(fdeg());
    EXPECT_EQ(*c.k0_exact, 0);
    EXPECT_EQ(*c.k1_exact, 1);
    EXPECT_EQ(*c.alpha_exact, 1);
}

TEST(Invariants, BlackBoxClose)
{
    ClassifyOptions o;
    o.mode = NumericMode::finite_difference;
    const PrenormalInvariants a = prenormal_invariants(fI().as_black_box(), o);
    EXPECT_NEAR(a.k0, 1, 1e-6);
    EXPECT_NEAR(a.k1, 0, 1e-6);
    EXPECT_NEAR(a.alpha, 0, 1e-6);
    const PrenormalInvariants b = prenormal_invariants(fII().as_black_box(), o);
    EXPECT_NEAR(b.k0, 0, 1e-6);
    EXPECT_NEAR(b.k1, 1, 1e-6);
    EXPECT_NEAR(b.alpha, 0, 1e-6);
}

TEST(Invariants, RationalInExactMode)
{
    const PrenormalInvariants a = prenormal_invariants(PlaneMapGerm::parse("3*xi + t", "t^2/7 + 2*t^3"));
    ASSERT_TRUE(a.exact());
    // Similarity by 1/3 and x-parameterization: y = (u/3)^2/7 * 3 ... checked against floating mode.
    ClassifyOptions o;
    o.mode = NumericMode::floating;
    const PrenormalInvariants b = prenormal_invariants(PlaneMapGerm::parse("3*xi + t", "t^2/7 + 2*t^3"), o);
    EXPECT_NEAR(to_double(*a.k0_exact), b.k0, 1e-14);
    EXPECT_NEAR(to_double(*a.alpha_exact), b.alpha, 1e-14);
}

TEST(ByInvariants, Table)
{
    PrenormalInvariants inv;
    inv.k0_exact = 1, inv.k1_exact = 0, inv.alpha_exact = 0;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::I());
    inv.k0_exact = 0, inv.k1_exact = 1;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::II());
    inv.alpha_exact = 1;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::degenerate(DegenerateReason::k1_equals_alpha));
    inv.k1_exact = 0, inv.alpha_exact = 0;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::degenerate(DegenerateReason::k1_zero));
}

TEST(ByInvariants, GuardBand)
{
    PrenormalInvariants inv;
    inv.epsilon = 1e-6;
    inv.k0 = 5e-6;
    inv.k1 = 1;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::degenerate(DegenerateReason::undecidable));
    inv.k0 = 5e-7;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::II());
    inv.k0 = 2e-5;
    EXPECT_EQ(classify_by_invariants(inv), Verdict::I());
}

TEST(ByCriminant, ClosedForms)
{
    const CriminantData d = criminant_data(fII());
    EXPECT_EQ(d.u00, 0.0);
    EXPECT_EQ(d.u_xi, 2.0);
    EXPECT_EQ(d.u_t, -1.0);
    EXPECT_EQ(d.verdict, Verdict::II());
    EXPECT_EQ(classify_by_criminant(fI()), Verdict::I());
    EXPECT_EQ(criminant_data(fI()).u00, 2.0);
    EXPECT_EQ(classify_by_criminant(fdeg()), Verdict::degenerate(DegenerateReason::branch_vertical));
    EXPECT_EQ(classify_by_criminant(PlaneMapGerm::parse("xi + t", "t^3")).type, VerdictType::degenerate);
}

TEST(ByCriminant, NotTangential)
{
    EXPECT_THROW(classify_by_criminant(PlaneMapGerm::parse("xi + t", "t")), NotTangentialError);
}

TEST(TangencyOrder, Profiles)
{
    EXPECT_EQ(support_tangency_order(fI(), 0.0), (TangencyOrder{1, false}));
    EXPECT_EQ(support_tangency_order(fI(), 0.3), (TangencyOrder{1, false}));
    const TangencyOrder o = support_tangency_order(fII(), 0.0);
    EXPECT_GE(o.order, 2);
    EXPECT_TRUE(o.at_least);
    EXPECT_EQ(support_tangency_order(fII(), 0.1), (TangencyOrder{1, false}));
    EXPECT_EQ(support_tangency_order(cubic_tangents(), 0.0), (TangencyOrder{2, false}));
    EXPECT_EQ(support_tangency_order(PlaneMapGerm::parse("xi + t", "t^5"), 0.0), (TangencyOrder{4, false}));
}

TEST(Classify, Agreement)
{
    const Classification a = classify(fI());
    EXPECT_TRUE(a.agree);
    EXPECT_EQ(a.verdict, Verdict::I());
    const Classification b = classify(fII());
    EXPECT_TRUE(b.agree);
    EXPECT_EQ(b.verdict, Verdict::II());
    const Classification c = classify(PlaneMapGerm::parse("xi + t", "t^2 + 0.3*t^3 + 0.7*xi*t^2"));
    EXPECT_EQ(c.verdict, Verdict::I());
    EXPECT_EQ(*c.invariants.k0_exact, 1);
    const Classification d = classify(fdeg());
    EXPECT_TRUE(d.agree);
    EXPECT_EQ(d.verdict.type, VerdictType::degenerate);
}

TEST(Classify, RandomGermsAgree)
{
    std::mt19937 rng(17);
    std::uniform_int_distribution<int> num(-30, 30);
    std::uniform_int_distribution<int> pick(0, 2);
    for (int trial = 0; trial < 60; ++trial) {
        const Rational k0 = pick(rng) == 0 ? Rational(0) : Rational(num(rng) | 1, 10);
        const Rational alpha(num(rng), 10);
        const int p = pick(rng);
        const Rational k1 = p == 0 ? Rational(0) : p == 1 ? alpha : Rational(num(rng) | 1, 7);
        Expr y = q(0);
        y = y + Expr::constant(k0) * Expr::t().pow(2) + Expr::constant(k1) * Expr::xi() * Expr::t().pow(2) +
            Expr::constant(alpha) * Expr::t().pow(3);
        y = y + q(num(rng), 10) * Expr::xi().pow(2) * Expr::t().pow(2) + q(num(rng), 10) * Expr::t().pow(4) +
            q(num(rng), 10) * Expr::xi() * Expr::t().pow(3);
        const PlaneMapGerm f = PlaneMapGerm::from_expressions(Expr::xi() + Expr::t(), y);
        const Classification c = classify(f);
        EXPECT_TRUE(c.agree) << y.to_string();
        EXPECT_EQ(*c.invariants.k0_exact, k0);
        EXPECT_EQ(*c.invariants.k1_exact, k1);
        EXPECT_EQ(*c.invariants.alpha_exact, alpha);
    }
}

TEST(Classify, PredicatesSurviveTargetScaling)
{
    // (x, y) -> (x, y (1 + c x)) keeps y = 0 but changes individual invariants.
    for (const PlaneMapGerm& f : {fI(), fII(), fdeg()}) {
        const Verdict base = classify(f).verdict;
        for (int c10 : {-5, -2, 3, 5}) {
            const Expr x = f.x();
            const PlaneMapGerm g = PlaneMapGerm::from_expressions(x, f.y() * (q(1) + q(c10, 10) * x));
            EXPECT_EQ(classify(g).verdict.type, base.type);
        }
    }
}

TEST(Classify, FloatingAndBlackBoxModes)
{
    ClassifyOptions o;
    o.mode = NumericMode::finite_difference;
    EXPECT_EQ(classify(fI().as_black_box(), o).verdict, Verdict::I());
    EXPECT_EQ(classify(fII().as_black_box(), o).verdict, Verdict::II());
    EXPECT_EQ(classify(fdeg().as_black_box(), o).verdict.type, VerdictType::degenerate);
    o.mode = NumericMode::floating;
    EXPECT_EQ(classify(fII(), o).verdict, Verdict::II());
}
