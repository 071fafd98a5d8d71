#pragma once

#include <cmath>

namespace tangfam {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
    Vec2& operator*=(double k) { x *= k; y *= k; return *this; }

    friend Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
    friend Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
    friend Vec2 operator-(const Vec2& a) { return {-a.x, -a.y}; }
    friend Vec2 operator*(Vec2 a, double k) { return a *= k; }
    friend Vec2 operator*(double k, Vec2 a) { return a *= k; }
    friend Vec2 operator/(const Vec2& a, double k) { return {a.x / k, a.y / k}; }
    friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
inline double cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }
inline double norm(const Vec2& a) { return std::hypot(a.x, a.y); }
inline Vec2 perp(const Vec2& a) { return {-a.y, a.x}; }
inline double distance(const Vec2& a, const Vec2& b) { return norm(a - b); }

inline Vec2 normalized(const Vec2& a)
{
    const double n = norm(a);
    return n > 0 ? a / n : Vec2{};
}

/// 2x2 matrix stored by columns: col0 = d/dxi, col1 = d/dt for a Jacobian.
struct Mat2 {
    Vec2 c0;
    Vec2 c1;

    Vec2 operator*(const Vec2& v) const { return c0 * v.x + c1 * v.y; }
    double det() const { return cross(c0, c1); }
    double max_abs() const
    {
        return std::fmax(std::fmax(std::fabs(c0.x), std::fabs(c0.y)), std::fmax(std::fabs(c1.x), std::fabs(c1.y)));
    }
};

} // namespace tangfam
