#pragma once

#include <string>

#include "entrain/corpus.hpp"

namespace entrain {

/// Functional order within each LLD's block of six.
enum class Functional { mean = 0, median, stddev, p1, p99, range };

inline constexpr int kNumFunctionals = 6;

/// Index of functional `f` of LLD channel `lld` in a feature vector.
constexpr int feature_index(int lld, Functional f) {
    return kNumFunctionals * lld + static_cast<int>(f);
}

/// Per-channel statistics of one speaker over the frames of all their
/// turn-initial and turn-final IPUs (turn-medial IPUs are ignored).
struct SpeakerStats {
    std::string session_id;
    std::string speaker;
    Vector mu;
    Vector sigma;  // population standard deviation
};

SpeakerStats speaker_stats(const Session& session, const std::string& speaker);

/// (x - mu) / sigma per channel; channels with sigma == 0 map to 0.
LldFrameMatrix zscore(const LldFrameMatrix& frames, const SpeakerStats& stats);

/// Linear interpolation between closest ranks at position p/100 * (n-1)
/// of the sorted values.
double percentile(std::vector<double> values, double p);

/// mean, median, population std, p1, p99 and p99 - p1 per channel,
/// concatenated channel by channel.
Vector apply_functionals(const LldFrameMatrix& frames);

/// Attaches features to every turn-edge IPU of an LLD session. Sessions that
/// already carry feature payloads are returned unchanged.
Session featurize_session(const Session& session);

/// Featurizes every session; the result holds turn-edge IPUs with feature
/// payloads only, so it can be written back as a feature corpus.
Corpus featurize_corpus(const Corpus& corpus);

}  // namespace entrain
