#include "entrain/featurize.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace entrain {

SpeakerStats speaker_stats(const Session& session, const std::string& speaker) {
    Eigen::Index width = -1;
    Eigen::Index frames = 0;
    for (const Ipu& ipu : session.ipus) {
        if (ipu.speaker != speaker || !ipu.is_turn_edge() || !ipu.has_lld()) continue;
        width = ipu.lld.cols();
        frames += ipu.lld.rows();
    }
    if (frames == 0) {
        throw Error(fmt::format("session {}: speaker '{}' has no turn-initial/final LLD frames",
                                session.id, speaker));
    }

    Vector sum = Vector::Zero(width);
    for (const Ipu& ipu : session.ipus) {
        if (ipu.speaker != speaker || !ipu.is_turn_edge() || !ipu.has_lld()) continue;
        sum += ipu.lld.colwise().sum().transpose();
    }
    const Vector mu = sum / static_cast<double>(frames);
    Vector sq = Vector::Zero(width);
    for (const Ipu& ipu : session.ipus) {
        if (ipu.speaker != speaker || !ipu.is_turn_edge() || !ipu.has_lld()) continue;
        sq += (ipu.lld.rowwise() - mu.transpose()).array().square().colwise().sum().matrix().transpose();
    }
    return {session.id, speaker, mu, (sq / static_cast<double>(frames)).cwiseSqrt()};
}

LldFrameMatrix zscore(const LldFrameMatrix& frames, const SpeakerStats& stats) {
    if (frames.cols() != stats.mu.size() || frames.cols() != stats.sigma.size()) {
        throw Error(fmt::format("zscore: frames have {} channels, stats have {}", frames.cols(),
                                stats.mu.size()));
    }
    LldFrameMatrix z(frames.rows(), frames.cols());
    for (Eigen::Index c = 0; c < frames.cols(); ++c) {
        const double sigma = stats.sigma[c];
        if (sigma == 0.0) {
            z.col(c).setZero();
        } else {
            z.col(c) = (frames.col(c).array() - stats.mu[c]) / sigma;
        }
    }
    return z;
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw Error("percentile of an empty sequence");
    std::sort(values.begin(), values.end());
    const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Vector apply_functionals(const LldFrameMatrix& frames) {
    if (frames.rows() == 0 || frames.cols() == 0) {
        throw Error("apply_functionals: empty frame matrix");
    }
    const double n = static_cast<double>(frames.rows());
    Vector out(kNumFunctionals * frames.cols());
    for (Eigen::Index c = 0; c < frames.cols(); ++c) {
        const auto col = frames.col(c);
        const double mean = col.mean();
        const double stddev = std::sqrt((col.array() - mean).square().sum() / n);
        const std::vector<double> values(col.begin(), col.end());
        const double p1 = percentile(values, 1.0);
        const double p99 = percentile(values, 99.0);
        const int lld = static_cast<int>(c);
        out[feature_index(lld, Functional::mean)] = mean;
        out[feature_index(lld, Functional::median)] = percentile(values, 50.0);
        out[feature_index(lld, Functional::stddev)] = stddev;
        out[feature_index(lld, Functional::p1)] = p1;
        out[feature_index(lld, Functional::p99)] = p99;
        out[feature_index(lld, Functional::range)] = p99 - p1;
    }
    return out;
}

Session featurize_session(const Session& session) {
    if (session.payload == PayloadKind::features) return session;
    Session out = session;
    for (const std::string& speaker : session.speakers()) {
        const SpeakerStats stats = speaker_stats(session, speaker);
        for (Ipu& ipu : out.ipus) {
            if (ipu.speaker != speaker || !ipu.is_turn_edge()) continue;
            ipu.features = apply_functionals(zscore(ipu.lld, stats));
        }
    }
    return out;
}

Corpus featurize_corpus(const Corpus& corpus) {
    Corpus out;
    out.sessions.reserve(corpus.sessions.size());
    for (const Session& s : corpus.sessions) {
        Session f = featurize_session(s);
        // Dropping turn-medial units leaves turn boundaries where they were.
        std::erase_if(f.ipus, [](const Ipu& ipu) { return !ipu.features.has_value(); });
        for (Ipu& ipu : f.ipus) ipu.lld.resize(0, 0);
        f.payload = PayloadKind::features;
        assign_turns(f);
        out.sessions.push_back(std::move(f));
    }
    return out;
}

}  // namespace entrain
