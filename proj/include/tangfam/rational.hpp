#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cctype>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tangfam {

/// Exact rational numbers used by the exact jet backend.
using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

inline double to_double(const Rational& q) { return q.convert_to<double>(); }
inline double to_double(double v) { return v; }

inline std::string to_string(const Rational& q) { return q.str(); }

/// Parses a decimal literal such as "12", "0.25" or "1.5e-3" into an exact rational.
/// Returns false if `text` is not a well-formed unsigned decimal literal.
inline bool parse_decimal(std::string_view text, Rational& out)
{
    std::size_t i = 0;
    BigInt mantissa = 0;
    long scale = 0;
    bool digits = false;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
        mantissa = mantissa * 10 + (text[i] - '0');
        digits = true;
        ++i;
    }
    if (i < text.size() && text[i] == '.') {
        ++i;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
            mantissa = mantissa * 10 + (text[i] - '0');
            --scale;
            digits = true;
            ++i;
        }
    }
    if (!digits)
        return false;
    if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
        ++i;
        int sign = 1;
        if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
            sign = text[i] == '-' ? -1 : 1;
            ++i;
        }
        long e = 0;
        bool edigits = false;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
            e = e * 10 + (text[i] - '0');
            if (e > 4000)
                return false;
            edigits = true;
            ++i;
        }
        if (!edigits)
            return false;
        scale += sign * e;
    }
    if (i != text.size())
        return false;
    BigInt p = 1;
    for (long k = 0; k < (scale < 0 ? -scale : scale); ++k)
        p *= 10;
    out = scale < 0 ? Rational(mantissa, p) : Rational(mantissa * p);
    return true;
}

} // namespace tangfam
