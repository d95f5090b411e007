#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

namespace terata {

// Shortest round-trip decimal form via std::to_chars. Locale free and stable
// across runs, so repeated runs with equal doubles produce byte-identical
// CSV/JSON artifacts. NaN renders as NA (used for undefined table entries).
inline std::string format_double(double v) {
    if (std::isnan(v)) return "NA";
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto res = std::from_chars(first, last, out);
    return res.ec == std::errc() && res.ptr == last;
}

inline double expit(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// Standard normal CDF, used for Wald p-values.
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double wald_p(double estimate, double se) {
    if (!(se > 0.0)) return std::nan("");
    double z = std::fabs(estimate / se);
    return 2.0 * (1.0 - norm_cdf(z));
}

}  // namespace terata
