#pragma once

#include <span>
#include <vector>

namespace entrain::stats {

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-tailed p-value of Student's t with `df` degrees of freedom.
double student_t_two_tailed(double t, double df);

struct Correlation {
    double r = 0.0;
    double p = 1.0;
    int n = 0;
};

/// Sample Pearson r with a two-tailed p from t = r sqrt((n-2)/(1-r^2)).
/// Needs n >= 3 and non-constant inputs.
Correlation pearson(std::span<const double> x, std::span<const double> y);

/// Standard Benjamini-Hochberg step-up selection at level alpha, in input order.
std::vector<bool> bh_select(std::span<const double> pvals, double alpha);

struct WithinRun {
    std::vector<bool> significant;  // input order
    /// Smallest alpha at which at least one p_(k) <= k * alpha / m.
    double min_alpha = 1.0;
};

/// BH over one run's family (the three social variables).
WithinRun bh_within_run(std::span<const double> pvals, double alpha);

struct AcrossRuns {
    int k = 0;
    /// Indices of the runs holding the k smallest alphas, ascending by alpha.
    std::vector<int> runs;
    /// k * level / m; zero when k == 0.
    double threshold = 0.0;
};

/// Largest k with alpha_(k) < k * level / m over the per-run minimal alphas.
AcrossRuns multi_run_significance(std::span<const double> min_alphas, double level = 0.05);

struct BinomialBand {
    int lo = 0;  // inclusive success counts
    int hi = 0;
};

/// Central band holding at least `confidence` of Binomial(trials, p) mass:
/// lo is the largest count with P(X < lo) <= (1 - confidence) / 2 and hi
/// the smallest with P(X > hi) <= (1 - confidence) / 2.
BinomialBand binomial_band(int trials, double p, double confidence);

}  // namespace entrain::stats
