#pragma once

// Central finite-difference verification of every hand-written backward pass.

#include <cstdint>
#include <string>
#include <vector>

namespace entrain::gradcheck {

struct Options {
    double step = 1e-5;        // central difference half-width h
    double tolerance = 1e-4;   // max accepted relative error
    /// Denominator floor for near-zero gradients; raised per coordinate to the
    /// loss round-off scale 4 eps |L| / (h * tolerance) when that is larger.
    double abs_floor = 1e-6;
    int feature_dim = 8;       // width for the exhaustive network checks
    int batch = 6;
    /// Coordinates sampled per parameter array in the full-width (228) checks;
    /// 0 disables those checks.
    int full_width_samples = 24;
    std::uint64_t seed = 0;
};

struct CheckResult {
    std::string name;
    int checked = 0;
    /// Coordinates whose +-h probes changed a ReLU activation pattern.
    int skipped_kinks = 0;
    double max_rel_error = 0.0;
    bool passed = false;
};

struct Report {
    Options options;
    std::vector<CheckResult> checks;
    bool passed() const;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Dense, batch norm, ReLU, smooth-L1, component, both DR stages, the
/// adversarial network, and the exact-negation property of gradient reversal.
Report run_all(const Options& options = {});

}  // namespace entrain::gradcheck
