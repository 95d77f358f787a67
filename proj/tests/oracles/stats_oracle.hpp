#pragma once
// Independent reference implementations for the statistics tests: Pearson
// correlation evaluated in 50-digit arithmetic with Boost.Math's incomplete
// beta, and Benjamini-Hochberg decisions by subset enumeration.

#include <cstddef>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

namespace entrain::oracle {

using Big = boost::multiprecision::cpp_bin_float_50;

struct PearsonRef {
    double r = 0.0;
    double p = 1.0;
};

inline PearsonRef pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    Big mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += Big(x[i]);
        my += Big(y[i]);
    }
    mx /= n;
    my /= n;
    Big sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Big dx = Big(x[i]) - mx;
        const Big dy = Big(y[i]) - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    const Big r = sxy / boost::multiprecision::sqrt(sxx * syy);
    const Big df = Big(n) - 2;
    const Big one_minus_r2 = 1 - r * r;
    PearsonRef out;
    out.r = static_cast<double>(r);
    if (one_minus_r2 <= 0) {
        out.p = 0.0;
        return out;
    }
    const Big t2 = r * r * df / one_minus_r2;
    out.p = static_cast<double>(boost::math::ibeta(df / 2, Big(0.5), df / (df + t2)));
    return out;
}

/// The BH rejection set is the largest self-consistent set R, i.e. every
/// p in R satisfies p <= |R| * alpha / m; the union of all such sets is
/// itself self-consistent, so enumerating subsets finds it.
inline std::vector<bool> bh_bruteforce(const std::vector<double>& p, double alpha) {
    const std::size_t m = p.size();
    std::vector<bool> out(m, false);
    for (unsigned mask = 1; mask < (1u << m); ++mask) {
        std::size_t size = 0;
        for (std::size_t i = 0; i < m; ++i) size += (mask >> i) & 1u;
        bool consistent = true;
        for (std::size_t i = 0; i < m; ++i) {
            if (((mask >> i) & 1u) && !(p[i] <= static_cast<double>(size) * alpha / static_cast<double>(m))) {
                consistent = false;
            }
        }
        if (!consistent) continue;
        for (std::size_t i = 0; i < m; ++i) {
            if ((mask >> i) & 1u) out[i] = true;
        }
    }
    return out;
}

inline bool any_rejected(const std::vector<double>& p, double alpha) {
    for (bool b : bh_bruteforce(p, alpha)) {
        if (b) return true;
    }
    return false;
}

}  // namespace entrain::oracle
