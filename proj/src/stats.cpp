#include "entrain/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "entrain/common.hpp"

namespace entrain::stats {

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) return h;
    }
    throw Error(fmt::format("incomplete_beta: no convergence for a={} b={} x={}", a, b, x));
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw Error("incomplete_beta: a and b must be positive");
    if (x < 0.0 || x > 1.0) throw Error("incomplete_beta: x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_tailed(double t, double df) {
    if (!(df > 0.0)) throw Error("student_t_two_tailed: df must be positive");
    if (std::isinf(t)) return 0.0;
    const double t2 = t * t;
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2); the complement form keeps
    // precision when t is small.
    if (t2 < df) {
        return 1.0 - incomplete_beta(0.5, 0.5 * df, t2 / (df + t2));
    }
    return incomplete_beta(0.5 * df, 0.5, df / (df + t2));
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw Error(fmt::format("pearson: length mismatch {} vs {}", x.size(), y.size()));
    }
    const std::size_t n = x.size();
    if (n < 3) throw Error(fmt::format("pearson: need at least 3 pairs, got {}", n));
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("undefined correlation: constant input");

    Correlation out;
    out.n = static_cast<int>(n);
    out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    const double df = static_cast<double>(n) - 2.0;
    const double one_minus_r2 = (1.0 - out.r) * (1.0 + out.r);
    if (one_minus_r2 <= 0.0) {
        out.p = 0.0;
    } else {
        out.p = student_t_two_tailed(out.r * std::sqrt(df / one_minus_r2), df);
    }
    return out;
}

namespace {

std::vector<std::size_t> ascending_order(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    return order;
}

void check_pvalues(std::span<const double> pvals) {
    for (double p : pvals) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw Error(fmt::format("p-value {} outside [0, 1]", p));
        }
    }
}

}  // namespace

std::vector<bool> bh_select(std::span<const double> pvals, double alpha) {
    check_pvalues(pvals);
    const auto order = ascending_order(pvals);
    const double m = static_cast<double>(pvals.size());
    std::size_t last = 0;  // number of rejections
    for (std::size_t k = 1; k <= order.size(); ++k) {
        if (pvals[order[k - 1]] <= static_cast<double>(k) * alpha / m) last = k;
    }
    std::vector<bool> out(pvals.size(), false);
    for (std::size_t k = 0; k < last; ++k) out[order[k]] = true;
    return out;
}

WithinRun bh_within_run(std::span<const double> pvals, double alpha) {
    if (pvals.empty()) throw Error("bh_within_run: no p-values");
    WithinRun out;
    out.significant = bh_select(pvals, alpha);
    const auto order = ascending_order(pvals);
    const double m = static_cast<double>(pvals.size());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= order.size(); ++k) {
        best = std::min(best, m * pvals[order[k - 1]] / static_cast<double>(k));
    }
    out.min_alpha = best;
    return out;
}

AcrossRuns multi_run_significance(std::span<const double> min_alphas, double level) {
    const auto order = ascending_order(min_alphas);
    const double m = static_cast<double>(min_alphas.size());
    AcrossRuns out;
    for (std::size_t k = 1; k <= order.size(); ++k) {
        if (min_alphas[order[k - 1]] < static_cast<double>(k) * level / m) {
            out.k = static_cast<int>(k);
        }
    }
    for (int k = 0; k < out.k; ++k) out.runs.push_back(static_cast<int>(order[static_cast<std::size_t>(k)]));
    out.threshold = out.k > 0 ? out.k * level / m : 0.0;
    return out;
}

BinomialBand binomial_band(int trials, double p, double confidence) {
    if (trials < 1) throw Error("binomial_band: trials must be >= 1");
    if (!(p > 0.0 && p < 1.0)) throw Error("binomial_band: p must lie in (0, 1)");
    const double tail = (1.0 - confidence) / 2.0;
    std::vector<double> pmf(static_cast<std::size_t>(trials) + 1);
    for (int k = 0; k <= trials; ++k) {
        pmf[static_cast<std::size_t>(k)] =
            std::exp(std::lgamma(trials + 1.0) - std::lgamma(k + 1.0) -
                     std::lgamma(trials - k + 1.0) + k * std::log(p) +
                     (trials - k) * std::log1p(-p));
    }
    BinomialBand band{0, trials};
    double below = 0.0;  // P(X < k)
    for (int k = 0; k <= trials; ++k) {
        if (below + pmf[static_cast<std::size_t>(k)] > tail) {
            band.lo = k;
            break;
        }
        below += pmf[static_cast<std::size_t>(k)];
    }
    double above = 0.0;  // P(X > k)
    for (int k = trials; k >= 0; --k) {
        if (above + pmf[static_cast<std::size_t>(k)] > tail) {
            band.hi = k;
            break;
        }
        above += pmf[static_cast<std::size_t>(k)];
    }
    return band;
}

}  // namespace entrain::stats
