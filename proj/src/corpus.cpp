#include "entrain/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include "json.hpp"

namespace entrain {

using nlohmann::json;

const char* to_string(Position p) {
    switch (p) {
        case Position::turn_initial: return "turn_initial";
        case Position::turn_final: return "turn_final";
        case Position::both: return "both";
        case Position::medial: return "medial";
    }
    return "?";
}

std::vector<std::string> Session::speakers() const {
    std::vector<std::string> out;
    for (const auto& ipu : ipus) {
        if (std::find(out.begin(), out.end(), ipu.speaker) == out.end()) {
            out.push_back(ipu.speaker);
        }
    }
    return out;
}

std::vector<Turn> segment_turns(const Session& session) {
    std::vector<Turn> turns;
    for (std::size_t i = 0; i < session.ipus.size(); ++i) {
        const auto& speaker = session.ipus[i].speaker;
        if (turns.empty() || turns.back().speaker != speaker) {
            Turn t;
            t.speaker = speaker;
            t.turn_index = static_cast<int>(turns.size());
            turns.push_back(std::move(t));
        }
        turns.back().ipus.push_back(i);
    }
    return turns;
}

void assign_turns(Session& session) {
    for (const Turn& turn : segment_turns(session)) {
        for (std::size_t k = 0; k < turn.ipus.size(); ++k) {
            Ipu& ipu = session.ipus[turn.ipus[k]];
            ipu.turn_index = turn.turn_index;
            if (turn.ipus.size() == 1) {
                ipu.position = Position::both;
            } else if (k == 0) {
                ipu.position = Position::turn_initial;
            } else if (k + 1 == turn.ipus.size()) {
                ipu.position = Position::turn_final;
            } else {
                ipu.position = Position::medial;
            }
        }
    }
}

void validate_session(const Session& session) {
    const auto speakers = session.speakers();
    if (speakers.size() > 2) {
        throw Error(fmt::format("session {}: more than two speakers", session.id));
    }
    if (speakers.size() < 2) {
        throw Error(fmt::format("session {}: needs exactly two speakers, found {}", session.id,
                                speakers.size()));
    }
    for (std::size_t i = 1; i < session.ipus.size(); ++i) {
        if (session.ipus[i].index <= session.ipus[i - 1].index) {
            throw Error(fmt::format("session {}: duplicate or unordered IPU index {}",
                                    session.id, session.ipus[i].index));
        }
    }
}

namespace {

Vector vector_from_json(const json& j, std::size_t line, const char* key) {
    if (!j.is_array()) {
        throw Error(fmt::format("line {}: '{}' must be an array", line, key));
    }
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) {
            throw Error(fmt::format("line {}: '{}' holds a non-number", line, key));
        }
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

LldFrameMatrix frames_from_json(const json& j, std::size_t line) {
    if (!j.is_array() || j.empty()) {
        throw Error(fmt::format("line {}: 'lld_frames' must be a non-empty array", line));
    }
    const std::size_t width = j[0].is_array() ? j[0].size() : 0;
    if (width == 0) {
        throw Error(fmt::format("line {}: 'lld_frames' rows must be non-empty arrays", line));
    }
    LldFrameMatrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != width) {
            throw Error(fmt::format("line {}: ragged 'lld_frames' row {}", line, r));
        }
        for (std::size_t c = 0; c < width; ++c) {
            if (!j[r][c].is_number()) {
                throw Error(fmt::format("line {}: 'lld_frames' holds a non-number", line));
            }
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
        }
    }
    return m;
}

std::string required_string(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j[key].is_string()) {
        throw Error(fmt::format("line {}: missing string field '{}'", line, key));
    }
    return j[key].get<std::string>();
}

}  // namespace

Corpus parse_corpus(std::istream& in) {
    Corpus corpus;
    std::map<std::string, std::size_t> by_id;
    std::optional<Eigen::Index> feature_width;
    std::optional<Eigen::Index> lld_width;

    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw Error(fmt::format("line {}: parse error: {}", line, e.what()));
        }
        if (!j.is_object()) {
            throw Error(fmt::format("line {}: expected a JSON object", line));
        }
        Ipu ipu;
        ipu.session_id = required_string(j, "session_id", line);
        ipu.speaker = required_string(j, "speaker", line);
        if (!j.contains("index") || !j["index"].is_number_integer()) {
            throw Error(fmt::format("line {}: missing integer field 'index'", line));
        }
        ipu.index = j["index"].get<std::int64_t>();
        if (ipu.index < 0) {
            throw Error(fmt::format("line {}: 'index' must be >= 0", line));
        }
        if (j.contains("task_id") && !j["task_id"].is_null()) {
            if (!j["task_id"].is_string()) {
                throw Error(fmt::format("line {}: 'task_id' must be a string or null", line));
            }
            ipu.task_id = j["task_id"].get<std::string>();
        }

        const bool has_lld = j.contains("lld_frames");
        const bool has_features = j.contains("features");
        if (has_lld == has_features) {
            throw Error(fmt::format("line {}: exactly one of 'lld_frames' or 'features' required",
                                    line));
        }
        PayloadKind kind;
        if (has_lld) {
            kind = PayloadKind::lld;
            ipu.lld = frames_from_json(j["lld_frames"], line);
            if (lld_width && *lld_width != ipu.lld.cols()) {
                throw Error(fmt::format("line {}: LLD width {} differs from {}", line,
                                        ipu.lld.cols(), *lld_width));
            }
            lld_width = ipu.lld.cols();
        } else {
            kind = PayloadKind::features;
            ipu.features = vector_from_json(j["features"], line, "features");
            if (ipu.features->size() == 0) {
                throw Error(fmt::format("line {}: 'features' is empty", line));
            }
            if (feature_width && *feature_width != ipu.features->size()) {
                throw Error(fmt::format("line {}: feature width {} differs from {}", line,
                                        ipu.features->size(), *feature_width));
            }
            feature_width = ipu.features->size();
        }

        auto it = by_id.find(ipu.session_id);
        if (it == by_id.end()) {
            Session s;
            s.id = ipu.session_id;
            s.payload = kind;
            it = by_id.emplace(s.id, corpus.sessions.size()).first;
            corpus.sessions.push_back(std::move(s));
        }
        Session& session = corpus.sessions[it->second];
        if (session.payload != kind) {
            throw Error(fmt::format("line {}: session {} mixes LLD and feature payloads", line,
                                    session.id));
        }
        session.ipus.push_back(std::move(ipu));
    }

    if (corpus.sessions.empty()) {
        throw Error("no sessions");
    }
    for (Session& s : corpus.sessions) {
        std::stable_sort(s.ipus.begin(), s.ipus.end(),
                         [](const Ipu& a, const Ipu& b) { return a.index < b.index; });
        validate_session(s);
        assign_turns(s);
    }
    return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(fmt::format("cannot open corpus file '{}'", path.string()));
    }
    try {
        return parse_corpus(in);
    } catch (const Error& e) {
        throw Error(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
    for (const Session& s : corpus.sessions) {
        for (const Ipu& ipu : s.ipus) {
            json j;
            j["session_id"] = ipu.session_id;
            j["task_id"] = ipu.task_id ? json(*ipu.task_id) : json(nullptr);
            j["speaker"] = ipu.speaker;
            j["index"] = ipu.index;
            if (ipu.features) {
                j["features"] = std::vector<double>(ipu.features->begin(), ipu.features->end());
            } else {
                json frames = json::array();
                for (Eigen::Index r = 0; r < ipu.lld.rows(); ++r) {
                    std::vector<double> row(static_cast<std::size_t>(ipu.lld.cols()));
                    for (Eigen::Index c = 0; c < ipu.lld.cols(); ++c) {
                        row[static_cast<std::size_t>(c)] = ipu.lld(r, c);
                    }
                    frames.push_back(std::move(row));
                }
                j["lld_frames"] = std::move(frames);
            }
            out << j.dump() << '\n';
        }
    }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(fmt::format("cannot write corpus file '{}'", path.string()));
    }
    write_corpus(corpus, out);
}

TripletBuild build_triplets(const Session& session) {
    TripletBuild result;
    const auto turns = segment_turns(session);
    if (turns.size() < 2) return result;

    auto features_of = [&](std::size_t pos) -> const Vector& {
        const Ipu& ipu = session.ipus[pos];
        if (!ipu.features) {
            throw Error(fmt::format("session {}: IPU {} has no features; featurize first",
                                    session.id, ipu.index));
        }
        return *ipu.features;
    };

    std::map<std::string, std::size_t> first_ipu;
    for (std::size_t i = 0; i < session.ipus.size(); ++i) {
        first_ipu.try_emplace(session.ipus[i].speaker, i);
    }

    for (std::size_t t = 0; t + 1 < turns.size(); ++t) {
        const std::size_t final_pos = turns[t].ipus.back();
        const std::size_t initial_pos = turns[t + 1].ipus.front();
        const std::string& responder = turns[t + 1].speaker;
        const std::size_t x0_pos = first_ipu.at(responder);
        if (x0_pos == initial_pos) {
            ++result.excluded;
            continue;
        }
        TripletSample s;
        s.x0 = features_of(x0_pos);
        s.x1 = features_of(final_pos);
        s.x2 = features_of(initial_pos);
        s.session_id = session.id;
        s.task_id = session.ipus[initial_pos].task_id;
        s.responder = responder;
        s.index0 = session.ipus[x0_pos].index;
        s.index1 = session.ipus[final_pos].index;
        s.index2 = session.ipus[initial_pos].index;
        result.samples.push_back(std::move(s));
    }
    return result;
}

const Session& find_session(const Corpus& corpus, const std::string& id) {
    for (const Session& s : corpus.sessions) {
        if (s.id == id) return s;
    }
    throw Error(fmt::format("unknown session '{}'", id));
}

std::vector<TripletSample> collect_triplets(const Corpus& corpus,
                                            const std::vector<std::string>& session_ids,
                                            std::size_t* excluded) {
    std::vector<TripletSample> out;
    std::size_t dropped = 0;
    for (const auto& id : session_ids) {
        auto built = build_triplets(find_session(corpus, id));
        dropped += built.excluded;
        std::move(built.samples.begin(), built.samples.end(), std::back_inserter(out));
    }
    if (excluded != nullptr) *excluded = dropped;
    return out;
}

CorpusSplit split_corpus(const Corpus& corpus) {
    const std::size_t n = corpus.sessions.size();
    if (n < 10) {
        throw Error(fmt::format("too few sessions to split: {} (need at least 10)", n));
    }
    const std::size_t n_train = (8 * n) / 10;
    const std::size_t n_val = n / 10;
    CorpusSplit split;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string& id = corpus.sessions[i].id;
        if (i < n_train) {
            split.train.push_back(id);
        } else if (i < n_train + n_val) {
            split.validation.push_back(id);
        } else {
            split.test.push_back(id);
        }
    }
    return split;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) {
        if (!field.empty() && field.back() == '\r') field.pop_back();
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

std::vector<Annotation> parse_annotations(std::istream& in) {
    static const std::set<std::string> kVariables = {"enc", "lik", "dom"};
    std::string text;
    std::size_t line = 0;
    if (!std::getline(in, text)) {
        throw Error("annotations: empty file");
    }
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text != "session_id,task_id,speaker,variable,count") {
        throw Error("annotations: header must be 'session_id,task_id,speaker,variable,count'");
    }
    std::vector<Annotation> out;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = split_csv_line(text);
        if (f.size() != 5) {
            throw Error(fmt::format("annotations line {}: expected 5 fields, got {}", line,
                                    f.size()));
        }
        Annotation a;
        a.session_id = f[0];
        a.task_id = f[1];
        a.speaker = f[2];
        a.variable = f[3];
        if (!kVariables.contains(a.variable)) {
            throw Error(fmt::format("annotations line {}: unknown variable '{}'", line,
                                    a.variable));
        }
        try {
            std::size_t used = 0;
            a.count = std::stoi(f[4], &used);
            if (used != f[4].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw Error(fmt::format("annotations line {}: count '{}' is not an integer", line,
                                    f[4]));
        }
        if (a.count < 0 || a.count > 5) {
            throw Error(fmt::format("annotations line {}: count {} outside 0..5", line, a.count));
        }
        out.push_back(std::move(a));
    }
    return out;
}

std::vector<Annotation> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(fmt::format("cannot open annotations file '{}'", path.string()));
    }
    try {
        return parse_annotations(in);
    } catch (const Error& e) {
        throw Error(fmt::format("{}: {}", path.string(), e.what()));
    }
}

void write_annotations(const std::vector<Annotation>& annotations, std::ostream& out) {
    out << "session_id,task_id,speaker,variable,count\n";
    for (const auto& a : annotations) {
        out << a.session_id << ',' << a.task_id << ',' << a.speaker << ',' << a.variable << ','
            << a.count << '\n';
    }
}

}  // namespace entrain
