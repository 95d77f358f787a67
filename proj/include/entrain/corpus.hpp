#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "entrain/common.hpp"

namespace entrain {

enum class Position { turn_initial, turn_final, both, medial };

const char* to_string(Position p);

/// frames x LLD channels.
using LldFrameMatrix = Matrix;

/// One inter-pausal unit. Exactly one of `lld` (non-empty) or `features`
/// is present in input data; featurization adds `features` to LLD units.
struct Ipu {
    std::string session_id;
    std::optional<std::string> task_id;
    std::string speaker;
    std::int64_t index = 0;
    int turn_index = -1;
    Position position = Position::both;
    LldFrameMatrix lld;
    std::optional<Vector> features;

    bool has_lld() const { return lld.rows() > 0; }
    bool is_turn_edge() const { return position != Position::medial; }
};

enum class PayloadKind { lld, features };

struct Session {
    std::string id;
    PayloadKind payload = PayloadKind::features;
    /// Sorted by index; turn_index/position filled in by load_corpus.
    std::vector<Ipu> ipus;

    /// Speakers in order of first appearance.
    std::vector<std::string> speakers() const;
};

struct Corpus {
    /// In order of first appearance in the input file.
    std::vector<Session> sessions;
};

struct Turn {
    std::string speaker;
    int turn_index = 0;
    /// Positions into Session::ipus, in temporal order.
    std::vector<std::size_t> ipus;
};

/// Maximal runs of consecutive same-speaker IPUs.
std::vector<Turn> segment_turns(const Session& session);

/// Writes turn_index and position into every IPU of the session.
void assign_turns(Session& session);

/// Checks the two-speaker and strict-ordering invariants; throws naming the session.
void validate_session(const Session& session);

Corpus load_corpus(const std::filesystem::path& path);
Corpus parse_corpus(std::istream& in);
/// One IPU per line. Feature payloads are written when present, LLD otherwise.
void write_corpus(const Corpus& corpus, std::ostream& out);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

struct TripletSample {
    Vector x0;  // responder's first IPU in the session
    Vector x1;  // interlocutor's turn-final IPU
    Vector x2;  // responder's turn-initial IPU right after x1
    std::string session_id;
    std::optional<std::string> task_id;
    std::string responder;
    std::int64_t index0 = 0;
    std::int64_t index1 = 0;
    std::int64_t index2 = 0;
};

struct TripletBuild {
    std::vector<TripletSample> samples;
    /// Exchanges dropped because x2 was the responder's first IPU (x0 == x2).
    std::size_t excluded = 0;
};

/// One sample per turn exchange. Requires features on every turn-edge IPU.
TripletBuild build_triplets(const Session& session);

/// All samples of the given sessions, in session order.
std::vector<TripletSample> collect_triplets(const Corpus& corpus,
                                            const std::vector<std::string>& session_ids,
                                            std::size_t* excluded = nullptr);

struct CorpusSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

/// Contiguous 80/10/10 split in corpus order: floor(0.8n), floor(0.1n), rest.
CorpusSplit split_corpus(const Corpus& corpus);

const Session& find_session(const Corpus& corpus, const std::string& id);

struct Annotation {
    std::string session_id;
    std::string task_id;  // empty when the session has no tasks
    std::string speaker;
    std::string variable;  // enc, lik or dom
    int count = 0;         // annotators (out of five) answering yes
};

std::vector<Annotation> load_annotations(const std::filesystem::path& path);
std::vector<Annotation> parse_annotations(std::istream& in);
void write_annotations(const std::vector<Annotation>& annotations, std::ostream& out);

}  // namespace entrain
