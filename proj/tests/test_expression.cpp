#include "tangfam/expression.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace tangfam;

namespace {

double at(const Expr& e, double xi, double t, double lam = 0.0) { return e(xi, t, lam); }

} // namespace

TEST(Parse, SumOfVariables)
{
    const Expr e = parse_expression("xi + t");
    EXPECT_EQ(e.op(), Op::add);
    EXPECT_EQ(e.node().lhs->op, Op::variable);
    EXPECT_EQ(e.node().lhs->var, var_xi);
    EXPECT_EQ(e.node().rhs->var, var_t);
}

TEST(Parse, ProductWithPower)
{
    const Expr e = parse_expression("xi*t^2");
    EXPECT_DOUBLE_EQ(at(e, 0.1, 0.2), 0.1 * 0.04);
    EXPECT_TRUE(e.exact_capable());
}

TEST(Parse, WhitespaceInsensitive)
{
    EXPECT_DOUBLE_EQ(at(parse_expression(" xi\t*  t ^2 "), 0.5, 3), 4.5);
}

TEST(Parse, RejectsFractionalExponent)
{
    try {
        parse_expression("t^2.5");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseError::Kind::non_integer_exponent);
        EXPECT_EQ(e.position(), 2u);
    }
    EXPECT_THROW(parse_expression("t^xi"), ParseError);
}

TEST(Parse, UnknownIdentifierPosition)
{
    try {
        parse_expression("xi + zeta");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.kind(), ParseError::Kind::unknown_identifier);
        EXPECT_EQ(e.position(), 5u);
    }
}

TEST(Parse, SyntaxErrors)
{
    for (const char* bad : {"", "xi +", "(xi", "xi t", "2**t", "sin xi", "1.2.3"})
        EXPECT_THROW(parse_expression(bad), ParseError) << bad;
}

TEST(Parse, UnaryMinusBindsLooserThanPower)
{
    EXPECT_DOUBLE_EQ(at(parse_expression("-t^2"), 0, 3), -9.0);
    EXPECT_DOUBLE_EQ(at(parse_expression("2^-1"), 0, 0), 0.5);
    EXPECT_DOUBLE_EQ(at(parse_expression("t^(-2)"), 0, 2), 0.25);
}

TEST(Parse, ExactDecimals)
{
    const Expr e = parse_expression("0.1");
    ASSERT_TRUE(e.node().exact);
    EXPECT_EQ(*e.node().exact, Rational(1, 10));
    EXPECT_EQ(*parse_expression("1.5e-3").node().exact, Rational(3, 2000));
}

TEST(Parse, Functions)
{
    const Expr e = parse_expression("sin(xi) + cos(t) * sqrt(lam)");
    EXPECT_NEAR(at(e, 0.3, 0.4, 4.0), std::sin(0.3) + std::cos(0.4) * 2.0, 1e-15);
    EXPECT_FALSE(e.exact_capable());
    EXPECT_TRUE(e.uses_variable(var_lam));
    EXPECT_FALSE(parse_expression("pi").exact_capable());
}

TEST(Parse, ChartVariables)
{
    const Expr g = parse_expression("sin(u)^2", VariableSet::chart());
    EXPECT_NEAR(g(0.5, 0.0), std::pow(std::sin(0.5), 2), 1e-15);
    EXPECT_THROW(parse_expression("xi", VariableSet::chart()), ParseError);
}

TEST(Print, PolynomialRoundTrip)
{
    std::mt19937 rng(7);
    std::uniform_int_distribution<int> coef(-9, 9);
    std::uniform_real_distribution<double> pt(-1, 1);
    for (int trial = 0; trial < 40; ++trial) {
        Expr e = Expr::constant(Rational(coef(rng), 7));
        for (int a = 0; a <= 3; ++a)
            for (int b = 0; a + b <= 4; ++b)
                e = e + Expr::constant(Rational(coef(rng), 1 + std::abs(coef(rng)))) * Expr::xi().pow(a) *
                            (Expr::t() - Expr::constant(Rational(1, 3))).pow(b);
        const std::string text = e.to_string();
        const Expr back = parse_expression(text);
        for (int k = 0; k < 100; ++k) {
            const double x = pt(rng), t = pt(rng);
            const double a = at(e, x, t), b = at(back, x, t);
            EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::fabs(a))) << text;
        }
    }
}

TEST(Print, NegativesAndQuotients)
{
    for (const char* s : {"-(xi - t)", "xi - (t - 1)", "xi/(t*2)", "-1/3*t", "(-t)^3", "xi - -t", "2^(-1)"}) {
        const Expr e = parse_expression(s);
        const Expr back = parse_expression(e.to_string());
        EXPECT_DOUBLE_EQ(at(e, 0.7, 0.3), at(back, 0.7, 0.3)) << s << " -> " << e.to_string();
    }
}

TEST(Derivative, Product)
{
    const Expr e = parse_expression("xi*t^2 + sin(t)");
    EXPECT_NEAR(at(e.derivative(var_t), 0.5, 0.3), 2 * 0.5 * 0.3 + std::cos(0.3), 1e-15);
    EXPECT_NEAR(at(e.derivative(var_xi), 0.5, 0.3), 0.09, 1e-15);
    EXPECT_NEAR(at(parse_expression("sqrt(1 + t^2)").derivative(var_t), 0, 2), 2 / std::sqrt(5.0), 1e-15);
    EXPECT_NEAR(at(parse_expression("1/t").derivative(var_t), 0, 2), -0.25, 1e-15);
}

TEST(Substitute, ShiftsVariable)
{
    const Expr e = parse_expression("xi*t^2").substitute(var_xi, parse_expression("xi + 1"));
    EXPECT_DOUBLE_EQ(at(e, 0.5, 2), 6.0);
}

TEST(Compiled, MatchesTree)
{
    const Expr e = parse_expression("xi^3 - 2*xi*t + cos(t)/(1 + xi^2) - t^(-1)");
    const CompiledExpr c(e);
    for (double x : {-0.7, 0.1, 0.9})
        for (double t : {-0.4, 0.3})
            EXPECT_DOUBLE_EQ(c(x, t), at(e, x, t));
}
