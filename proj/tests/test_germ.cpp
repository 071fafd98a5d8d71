#include "tangfam/germ.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tangfam;

namespace {

PlaneMapGerm fI() { return PlaneMapGerm::parse("xi + t", "t^2"); }
PlaneMapGerm fII() { return PlaneMapGerm::parse("xi + t", "xi*t^2"); }

/// Random polynomial in xi, t of total degree <= deg with rational coefficients in [-2, 2].
Expr random_poly(std::mt19937& rng, int deg, bool vanish_at_origin)
{
    std::uniform_int_distribution<int> num(-20, 20);
    Expr e = Expr::constant(Rational(0));
    for (int d = vanish_at_origin ? 1 : 0; d <= deg; ++d)
        for (int b = 0; b <= d; ++b)
            e = e + Expr::constant(Rational(num(rng), 10)) * Expr::xi().pow(d - b) * Expr::t().pow(b);
    return e;
}

} // namespace

TEST(EvaluateMap, Direct)
{
    const Vec2 p = evaluate_map(fII(), {0.1, 0.2});
    EXPECT_NEAR(p.x, 0.3, 1e-15);
    EXPECT_NEAR(p.y, 0.004, 1e-15);
    EXPECT_EQ(evaluate_map(fI(), {0, 0}), (Vec2{0, 0}));
}

TEST(EvaluateMap, StrictBounds)
{
    EXPECT_NO_THROW(fII()(1, 2));
    EXPECT_THROW(fII().with_strict_bounds()(1, 2), DomainError);
    EXPECT_THROW(PlaneMapGerm::parse("1/t", "t")(0.0, 0.0), EvaluationError);
}

TEST(EvaluateMap, RejectsParameter)
{
    EXPECT_THROW(PlaneMapGerm::parse("xi + lam", "t^2"), std::invalid_argument);
}

TEST(TaylorJet, TypeIRepresentative)
{
    const Jet<double> y = taylor_jet(fI(), Quantity::y, {0, 0}, 3, NumericMode::exact);
    for (int d = 0; d <= 3; ++d)
        for (int b = 0; b <= d; ++b)
            EXPECT_EQ(y.coeff(d - b, b), (d - b == 0 && b == 2) ? 1.0 : 0.0);
}

TEST(TaylorJet, TypeIIRepresentative)
{
    const Jet<Rational> y = taylor_jet_exact(fII(), Quantity::y, 0, 0, 3);
    for (int d = 0; d <= 3; ++d)
        for (int b = 0; b <= d; ++b)
            EXPECT_EQ(y.coeff(d - b, b), (d - b == 1 && b == 2) ? 1 : 0);
}

TEST(TaylorJet, ConstantComponent)
{
    const PlaneMapGerm f = PlaneMapGerm::parse("xi + t", "0");
    for (NumericMode m : {NumericMode::exact, NumericMode::floating, NumericMode::finite_difference}) {
        const Jet<double> y = taylor_jet(f, Quantity::y, {0, 0}, 5, m);
        EXPECT_EQ(y.max_abs(), 0.0);
    }
}

TEST(TaylorJet, OrderCap)
{
    EXPECT_THROW(taylor_jet(fI(), Quantity::y, {0, 0}, 9, NumericMode::exact), std::invalid_argument);
}

TEST(TaylorJet, InexactExpressionInExactMode)
{
    EXPECT_THROW(taylor_jet(PlaneMapGerm::parse("sin(xi) + t", "t^2"), Quantity::x, {0, 0}, 3, NumericMode::exact),
                 InexactError);
}

TEST(TaylorJet, IllConditioned)
{
    const PlaneMapGerm f = PlaneMapGerm::parse("xi + t", "1/(t - 0.02)").as_black_box();
    EXPECT_THROW(fd_map_jet(f, 0, 0, 4), IllConditionedError);
}

TEST(TaylorJet, BlackBoxBaseMustBeInterior)
{
    EXPECT_THROW(fd_map_jet(fI().as_black_box(), 1.0, 0.0, 2), DomainError);
}

TEST(TaylorJet, FiniteDifferencesAgreeWithExact)
{
    std::mt19937 rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const PlaneMapGerm f = PlaneMapGerm::from_expressions(random_poly(rng, 5, true), random_poly(rng, 5, true));
        const MapJet<double> e = map_jet(f, {0, 0}, 4, NumericMode::exact);
        const MapJet<double> n = fd_map_jet(f.as_black_box(), 0, 0, 4);
        for (int d = 0; d <= 4; ++d)
            for (int b = 0; b <= d; ++b) {
                worst = std::max(worst, std::fabs(e.x.coeff(d - b, b) - n.x.coeff(d - b, b)));
                worst = std::max(worst, std::fabs(e.y.coeff(d - b, b) - n.y.coeff(d - b, b)));
            }
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(TaylorJet, ShiftedBaseMatchesReexpansion)
{
    std::mt19937 rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        const PlaneMapGerm f = PlaneMapGerm::from_expressions(random_poly(rng, 4, true), random_poly(rng, 4, true));
        const double xi0 = 0.25;
        const MapJet<double> at = map_jet(f, {xi0, 0}, 6, NumericMode::floating);
        const MapJet<double> re = map_jet(f.recentered(xi0), {0, 0}, 6, NumericMode::exact);
        const Vec2 origin = f(xi0, 0);
        EXPECT_NEAR(at.x.coeff(0, 0) - origin.x, re.x.coeff(0, 0), 1e-10);
        for (int d = 1; d <= 6; ++d)
            for (int b = 0; b <= d; ++b) {
                EXPECT_NEAR(at.x.coeff(d - b, b), re.x.coeff(d - b, b), 1e-10);
                EXPECT_NEAR(at.y.coeff(d - b, b), re.y.coeff(d - b, b), 1e-10);
            }
    }
}

TEST(JacobianDeterminant, ClosedForms)
{
    const JacobianDeterminant dII = jacobian_determinant(fII());
    const JacobianDeterminant dI = jacobian_determinant(fI());
    const JacobianDeterminant did = jacobian_determinant(PlaneMapGerm::parse("xi", "t"));
    for (double xi : {-0.3, 0.2})
        for (double t : {-0.1, 0.4}) {
            EXPECT_NEAR(dII(xi, t), 2 * xi * t - t * t, 1e-15);
            EXPECT_NEAR(dI(xi, t), 2 * t, 1e-15);
            EXPECT_EQ(did(xi, t), 1.0);
            EXPECT_NEAR((*dII.expression())(xi, t), 2 * xi * t - t * t, 1e-15);
        }
    const Jet<double> j = dII.jet({0, 0}, 2, NumericMode::exact);
    EXPECT_EQ(j.coeff(1, 1), 2.0);
    EXPECT_EQ(j.coeff(0, 2), -1.0);
}

TEST(JacobianDeterminant, BlackBoxFallback)
{
    const PlaneMapGerm f = fII().as_black_box();
    EXPECT_NEAR(f.det(0.3, 0.2), 2 * 0.3 * 0.2 - 0.04, 1e-10);
}

TEST(Tangency, Representatives)
{
    EXPECT_EQ(is_tangential_family(fI()).verdict, Tangency::tangential);
    EXPECT_EQ(is_tangential_family(fII()).verdict, Tangency::tangential);
    EXPECT_FALSE(is_tangential_family(fI()).embeddedness_checked);
}

TEST(Tangency, VanishingVelocity)
{
    const TangencyDiagnostics d = is_tangential_family(PlaneMapGerm::parse("xi", "t^2"));
    EXPECT_EQ(d.verdict, Tangency::not_tangential);
    EXPECT_NE(d.reason.find("d/dt"), std::string::npos);
}

TEST(Tangency, NotParallel)
{
    const TangencyDiagnostics d = is_tangential_family(PlaneMapGerm::parse("xi + t", "t"));
    EXPECT_EQ(d.verdict, Tangency::not_tangential);
    EXPECT_NEAR(d.samples.front().defect, 1.0, 1e-15);
}

TEST(Tangency, Borderline)
{
    const TangencyDiagnostics d = is_tangential_family(PlaneMapGerm::parse("xi + t", "1e-9*t"));
    EXPECT_EQ(d.verdict, Tangency::inconclusive);
}

TEST(Tangency, BlackBox)
{
    EXPECT_EQ(is_tangential_family(fII().as_black_box()).verdict, Tangency::tangential);
}

TEST(Tangency, DetVanishesOnSupport)
{
    std::mt19937 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Expr p = random_poly(rng, 2, false);
        const PlaneMapGerm f = PlaneMapGerm::from_expressions(
            Expr::xi() + Expr::t() + Expr::t().pow(2) * random_poly(rng, 2, false),
            Expr::xi().pow(2) + Expr::constant(Rational(2)) * Expr::xi() * Expr::t() + Expr::t().pow(2) * p);
        ASSERT_TRUE(is_tangential_family(f).tangential());
        for (int i = 0; i < 100; ++i) {
            const double xi = -1 + 2 * i / 99.0;
            EXPECT_LT(std::fabs(f.det(xi, 0)), 1e-8);
        }
    }
}

TEST(Recenter, MovesBasePoint)
{
    const PlaneMapGerm g = fII().recentered(0.5);
    const Vec2 p = g(0, 0);
    EXPECT_EQ(p, (Vec2{0, 0}));
    EXPECT_NEAR(g(0.1, 0.2).y, 0.6 * 0.04, 1e-15);
    const PlaneMapGerm b = fII().as_black_box().recentered(0.5);
    EXPECT_NEAR(b(0.1, 0.2).y, 0.6 * 0.04, 1e-15);
}
