#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "entrain/corpus.hpp"
#include "helpers.hpp"

using namespace entrain;
using namespace entrain::testing;

namespace {

std::string ipu_line(const std::string& session, const std::string& speaker, int index,
                     const std::string& payload = "\"features\": [1.0, 2.0]") {
    return "{\"session_id\": \"" + session + "\", \"task_id\": null, \"speaker\": \"" + speaker +
           "\", \"index\": " + std::to_string(index) + ", " + payload + "}\n";
}

std::string error_of(const std::string& text) {
    try {
        parse_text(text);
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("load_corpus rejects an empty file") {
    CHECK(error_of("").find("no sessions") != std::string::npos);
    CHECK(error_of("\n\n").find("no sessions") != std::string::npos);
}

TEST_CASE("load_corpus rejects a third speaker") {
    const std::string text = ipu_line("s1", "A", 0) + ipu_line("s1", "B", 1) + ipu_line("s1", "C", 2);
    CHECK(error_of(text).find("more than two speakers") != std::string::npos);
}

TEST_CASE("load_corpus errors carry the line number") {
    const std::string text = ipu_line("s1", "A", 0) + "{not json}\n";
    CHECK(error_of(text).find("line 2") != std::string::npos);
    const std::string missing = ipu_line("s1", "A", 0) + "{\"session_id\": \"s1\", \"speaker\": \"B\"}\n";
    CHECK(error_of(missing).find("line 2") != std::string::npos);
}

TEST_CASE("load_corpus rejects duplicate indices and mixed payloads") {
    CHECK(error_of(ipu_line("s1", "A", 0) + ipu_line("s1", "B", 0)).find("s1") != std::string::npos);
    const std::string mixed =
        ipu_line("s1", "A", 0) + ipu_line("s1", "B", 1, "\"lld_frames\": [[1.0, 2.0]]");
    CHECK(error_of(mixed).find("mixes") != std::string::npos);
}

TEST_CASE("load_corpus orders IPUs and round-trips a two-session file") {
    const std::string text = ipu_line("s1", "B", 3) + ipu_line("s1", "A", 1) +
                             ipu_line("s2", "A", 0) + ipu_line("s1", "A", 2) +
                             ipu_line("s2", "B", 5);
    const Corpus c = parse_text(text);
    REQUIRE(c.sessions.size() == 2);
    CHECK(c.sessions[0].id == "s1");
    CHECK(c.sessions[1].id == "s2");
    std::vector<std::int64_t> idx;
    for (const auto& ipu : c.sessions[0].ipus) idx.push_back(ipu.index);
    CHECK(idx == std::vector<std::int64_t>{1, 2, 3});

    const Corpus again = parse_text(corpus_text(c));
    CHECK(corpus_text(again) == corpus_text(c));
    REQUIRE(again.sessions.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        REQUIRE(again.sessions[s].ipus.size() == c.sessions[s].ipus.size());
        for (std::size_t i = 0; i < c.sessions[s].ipus.size(); ++i) {
            const auto& a = again.sessions[s].ipus[i];
            const auto& b = c.sessions[s].ipus[i];
            CHECK(a.speaker == b.speaker);
            CHECK(a.index == b.index);
            CHECK(*a.features == *b.features);
        }
    }
}

TEST_CASE("segment_turns groups maximal same-speaker runs") {
    SUBCASE("A A B A") {
        const Session s = feature_session("s", "AABA");
        const auto turns = segment_turns(s);
        REQUIRE(turns.size() == 3);
        CHECK(turns[0].ipus.size() == 2);
        CHECK(turns[1].ipus.size() == 1);
        CHECK(turns[2].ipus.size() == 1);
        CHECK(s.ipus[0].position == Position::turn_initial);
        CHECK(s.ipus[1].position == Position::turn_final);
        CHECK(s.ipus[2].position == Position::both);
        CHECK(s.ipus[3].position == Position::both);
        CHECK(s.ipus[3].turn_index == 2);
    }
    SUBCASE("single IPU") {
        const Session s = feature_session("s", "A");
        REQUIRE(segment_turns(s).size() == 1);
        CHECK(s.ipus[0].position == Position::both);
    }
    SUBCASE("alternating") {
        const auto turns = segment_turns(feature_session("s", "ABAB"));
        CHECK(turns.size() == 4);
        for (const auto& t : turns) CHECK(t.ipus.size() == 1);
    }
    SUBCASE("medial units") {
        const Session s = feature_session("s", "AAAB");
        CHECK(s.ipus[1].position == Position::medial);
    }
}

TEST_CASE("build_triplets follows the exchange definition") {
    SUBCASE("A B A gives one sample") {
        const Session s = feature_session("s", "ABA");
        const TripletBuild b = build_triplets(s);
        REQUIRE(b.samples.size() == 1);
        CHECK(b.excluded == 1);
        const auto& t = b.samples[0];
        CHECK(t.index1 == 1);
        CHECK(t.index2 == 2);
        CHECK(t.index0 == 0);
        CHECK(t.responder == "A");
        CHECK(t.x1 == Vector::Constant(3, 2.0));
        CHECK(t.x2 == Vector::Constant(3, 3.0));
        CHECK(t.x0 == Vector::Constant(3, 1.0));
    }
    SUBCASE("single turn gives nothing") {
        CHECK(build_triplets(feature_session("s", "AAA")).samples.empty());
    }
    SUBCASE("14 alternating turns") {
        // 13 exchanges; only the second speaker's first response is x0 == x2
        // (the first speaker's x0 opens the session and is never a response).
        const TripletBuild b = build_triplets(alternating_session("s", 14));
        CHECK(b.excluded == 1);
        CHECK(b.samples.size() == 12);
    }
    SUBCASE("multi-IPU turns use final and initial units") {
        const Session s = feature_session("s", "AABBA");
        const TripletBuild b = build_triplets(s);
        REQUIRE(b.samples.size() == 1);
        CHECK(b.samples[0].index1 == 3);  // B's turn-final
        CHECK(b.samples[0].index2 == 4);
        CHECK(b.samples[0].index0 == 0);
    }
}

TEST_CASE("triplet invariants hold on random sessions") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<int> len(2, 30);
        std::bernoulli_distribution coin(0.5);
        std::string speakers = "AB";
        const int n = len(rng);
        for (int i = 2; i < n; ++i) speakers += coin(rng) ? 'A' : 'B';
        std::shuffle(speakers.begin(), speakers.end(), rng);
        if (speakers.find('A') == std::string::npos || speakers.find('B') == std::string::npos) continue;
        const Session s = feature_session("s", speakers);
        const TripletBuild b = build_triplets(s);

        std::map<std::int64_t, std::string> speaker_of;
        for (const auto& ipu : s.ipus) speaker_of[ipu.index] = ipu.speaker;
        const auto turns = segment_turns(s);
        CHECK(b.samples.size() + b.excluded == turns.size() - 1);
        for (const auto& t : b.samples) {
            CHECK(speaker_of[t.index1] != speaker_of[t.index2]);
            CHECK(speaker_of[t.index0] == t.responder);
            CHECK(speaker_of[t.index2] == t.responder);
            CHECK(t.index0 < t.index2);
            for (const auto& [idx, spk] : speaker_of) {
                if (spk == t.responder) {
                    CHECK(idx >= t.index0);
                    if (idx > t.index1) {
                        CHECK(idx >= t.index2);
                    }
                }
            }
        }
        // Deterministic and order-stable.
        const TripletBuild again = build_triplets(s);
        REQUIRE(again.samples.size() == b.samples.size());
        for (std::size_t i = 0; i < b.samples.size(); ++i) {
            CHECK(again.samples[i].index2 == b.samples[i].index2);
        }
    }
}

TEST_CASE("build_triplets requires features") {
    Session s = feature_session("s", "ABA");
    s.ipus[1].features.reset();
    CHECK_THROWS_AS(build_triplets(s), Error);
}

TEST_CASE("split_corpus sizes") {
    auto make = [](int n) {
        std::vector<Session> sessions;
        for (int i = 0; i < n; ++i) sessions.push_back(alternating_session("s" + std::to_string(i), 4));
        return corpus_of(std::move(sessions));
    };
    SUBCASE("10 sessions") {
        const CorpusSplit s = split_corpus(make(10));
        CHECK(s.train.size() == 8);
        CHECK(s.validation.size() == 1);
        CHECK(s.test.size() == 1);
        CHECK(s.train.front() == "s0");
        CHECK(s.validation.front() == "s8");
        CHECK(s.test.front() == "s9");
    }
    SUBCASE("25 sessions") {
        const CorpusSplit s = split_corpus(make(25));
        CHECK(s.train.size() == 20);
        CHECK(s.validation.size() == 2);
        CHECK(s.test.size() == 3);
    }
    SUBCASE("9 sessions") { CHECK_THROWS_WITH_AS(split_corpus(make(9)), doctest::Contains("too few"), Error); }
    SUBCASE("partition") {
        const Corpus c = make(37);
        const CorpusSplit s = split_corpus(c);
        std::vector<std::string> all = s.train;
        all.insert(all.end(), s.validation.begin(), s.validation.end());
        all.insert(all.end(), s.test.begin(), s.test.end());
        REQUIRE(all.size() == c.sessions.size());
        for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == c.sessions[i].id);
    }
}

TEST_CASE("annotations parse and validate") {
    std::istringstream good("session_id,task_id,speaker,variable,count\ns1,,A,enc,3\ns1,t1,B,dom,0\n");
    const auto a = parse_annotations(good);
    REQUIRE(a.size() == 2);
    CHECK(a[0].task_id.empty());
    CHECK(a[0].count == 3);
    CHECK(a[1].variable == "dom");

    std::istringstream bad_var("session_id,task_id,speaker,variable,count\ns1,,A,val,3\n");
    CHECK_THROWS_AS(parse_annotations(bad_var), Error);
    std::istringstream bad_count("session_id,task_id,speaker,variable,count\ns1,,A,enc,6\n");
    CHECK_THROWS_AS(parse_annotations(bad_count), Error);
    std::istringstream bad_header("a,b,c\n");
    CHECK_THROWS_AS(parse_annotations(bad_header), Error);

    std::ostringstream out;
    write_annotations(a, out);
    std::istringstream back(out.str());
    const auto again = parse_annotations(back);
    REQUIRE(again.size() == 2);
    CHECK(again[1].task_id == "t1");
}
