#pragma once

#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "entrain/corpus.hpp"

namespace entrain::testing {

/// A feature-payload session whose IPU speakers follow `speakers`
/// (e.g. "AABA"); IPU i gets the constant feature vector (i + 1).
inline Session feature_session(const std::string& id, const std::string& speakers, int dim = 3) {
    Session s;
    s.id = id;
    s.payload = PayloadKind::features;
    for (std::size_t i = 0; i < speakers.size(); ++i) {
        Ipu ipu;
        ipu.session_id = id;
        ipu.speaker = std::string(1, speakers[i]);
        ipu.index = static_cast<std::int64_t>(i);
        ipu.features = Vector::Constant(dim, static_cast<double>(i + 1));
        s.ipus.push_back(ipu);
    }
    assign_turns(s);
    return s;
}

/// Alternating two-speaker session with `turns` single-IPU turns.
inline Session alternating_session(const std::string& id, int turns, int dim = 3) {
    std::string speakers;
    for (int t = 0; t < turns; ++t) speakers += (t % 2 == 0) ? 'A' : 'B';
    return feature_session(id, speakers, dim);
}

inline Corpus corpus_of(std::vector<Session> sessions) {
    Corpus c;
    c.sessions = std::move(sessions);
    return c;
}

inline std::string corpus_text(const Corpus& c) {
    std::ostringstream out;
    write_corpus(c, out);
    return out.str();
}

inline Corpus parse_text(const std::string& text) {
    std::istringstream in(text);
    return parse_corpus(in);
}

}  // namespace entrain::testing
