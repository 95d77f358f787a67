#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "entrain/corpus.hpp"

namespace entrain {

/// Linear-Gaussian dialogue generator. Per speaker s with baseline b_s ~ N(0, I):
///   first IPU            x0 = b_s + e
///   turn-final IPU       x1 = c * b_s + e
///   later turn-initial   x2 = c * b_s + lambda_s * (partner's preceding x1) + e
/// with e ~ N(0, noise_sigma^2 I). Every turn holds two IPUs (initial, final),
/// turns alternate and speaker A opens each session.
///
/// With latent_dim = k > 0 the same process runs in k dimensions and every
/// IPU vector is mapped to feature_dim features through one fixed random
/// mixing matrix with N(0, 1/k) entries, giving rank-k correlated features.
struct SynthParams {
    int n_sessions = 100;
    int turns_per_session = 51;
    int feature_dim = 228;
    int latent_dim = 0;
    double consistency = 0.5;
    double entrainment = 0.5;
    double noise_sigma = 0.5;
    /// Per-speaker lambda_s = clamp(entrainment + spread * U(-1, 1), 0, 1).
    double lambda_spread = 0.0;
    /// Contiguous blocks of turns; 1 means no task ids.
    int tasks_per_session = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SpeakerTruth {
    std::string session_id;
    std::string speaker;
    double lambda = 0.0;
};

struct SynthCorpus {
    Corpus corpus;
    /// enc tracks the speaker's lambda through six equal-width bins of [0, 1];
    /// lik and dom are independent uniform draws on 0..5.
    std::vector<Annotation> annotations;
    std::vector<SpeakerTruth> speakers;
};

SynthCorpus generate_corpus(const SynthParams& params);

/// Annotation count for a speaker lambda: floor(6 * lambda) capped at 5.
int quantize_lambda(double lambda);

struct OracleGap {
    double gap = 0.0;        // mean of L(shuffled) - L(real)
    double std_error = 0.0;  // Monte-Carlo standard error of the gap
    double z = 0.0;
    int n_eval = 0;
};

/// Fits a ridge-regularized linear predictor of x2 from (x0, x1) on half of
/// n_mc fresh triplets and measures, on the other half, how much the
/// smooth-L1 loss grows when x1 is shuffled across samples.
OracleGap oracle_gap(const SynthParams& params, int n_mc);

}  // namespace entrain
