// entrain: command-line front end for the entrainment measures.
//
// Every command writes its outputs plus a manifest (resolved options, seeds
// and SHA-256 digests of inputs and outputs); `entrain rerun` repeats a
// command from its manifest and checks the outputs come back bitwise equal.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "entrain/eval.hpp"
#include "entrain/featurize.hpp"
#include "entrain/gradcheck.hpp"
#include "entrain/model_io.hpp"
#include "entrain/synth.hpp"
#include "json.hpp"
#include "manifest.hpp"

#ifndef ENTRAIN_VERSION
#define ENTRAIN_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace entrain::cli {

// ---------------------------------------------------------------------------
// Option structs. Their JSON form is the manifest's config snapshot.

struct TrainFlags {
    int batch_size = 128;
    int max_epochs = 100;
    int patience = 5;
    double lr = 1e-3;
    double grl_lambda = 1.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainFlags, batch_size, max_epochs, patience, lr,
                                                grl_lambda)

struct SynthOptions {
    std::string out;
    std::string annotations_out;
    std::string truth_out;
    std::string summary_out;
    int sessions = 100;
    int turns = 51;
    int feature_dim = 228;
    int latent_dim = 0;
    double consistency = 0.5;
    double entrainment = 0.5;
    double noise = 0.5;
    double lambda_spread = 0.0;
    int tasks = 1;
    int oracle_mc = 0;
    std::uint64_t seed = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthOptions, out, annotations_out, truth_out,
                                                summary_out, sessions, turns, feature_dim,
                                                latent_dim, consistency, entrainment, noise,
                                                lambda_spread, tasks, oracle_mc, seed)

struct IngestOptions {
    std::string corpus;
    std::string out;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(IngestOptions, corpus, out)

struct FeaturizeOptions {
    std::string corpus;
    std::string out;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeaturizeOptions, corpus, out)

struct TrainOptions {
    std::string corpus;
    std::string measure = "dr";
    std::string out;
    std::string log;
    std::uint64_t seed = 0;
    TrainFlags train;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainOptions, corpus, measure, out, log, seed,
                                                train)

struct ScoreOptions {
    std::string model;
    std::string corpus;
    std::string out;
    std::string split = "test";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScoreOptions, model, corpus, out, split)

struct ShuffleOptions {
    std::string corpus;
    std::string measure = "dr";
    std::string out_dir;
    int runs = 30;
    std::uint64_t seed = 0;
    int parallel = 1;
    TrainFlags train;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ShuffleOptions, corpus, measure, out_dir, runs,
                                                seed, parallel, train)

struct CorrelateOptions {
    std::string corpus;
    std::string annotations;
    std::string eval_corpus;
    std::string measure = "dr";
    std::string out_dir;
    int runs = 100;
    std::uint64_t seed = 0;
    int parallel = 1;
    double level = 0.05;
    TrainFlags train;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CorrelateOptions, corpus, annotations, eval_corpus,
                                                measure, out_dir, runs, seed, parallel, level,
                                                train)

struct GradcheckOptions {
    std::string out;
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    int samples = 24;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GradcheckOptions, out, seed, tolerance, samples)

// ---------------------------------------------------------------------------
// Helpers

/// Result of one command: its manifest plus whether it met its own checks.
struct Outcome {
    Manifest manifest;
    int exit_code = 0;
};

Manifest start_manifest(const std::string& command, const json& config) {
    Manifest m;
    m.command = command;
    m.tool_version = ENTRAIN_VERSION;
    m.working_directory = fs::current_path().string();
    m.config = config;
    return m;
}

void record_input(Manifest& m, const std::string& path) {
    if (!path.empty()) m.inputs[path] = sha256_file(path);
}

void record_output(Manifest& m, const std::string& path) { m.outputs[path] = sha256_file(path); }

/// Invocation mistakes detected after parsing; reported like parse errors.
struct UsageError : Error {
    using Error::Error;
};

void require(const std::string& value, const std::string& flag) {
    if (value.empty()) throw UsageError(fmt::format("missing required option {}", flag));
}

std::ofstream open_output(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    return out;
}

void write_json(const fs::path& path, const json& j) {
    auto out = open_output(path);
    out << j.dump(2) << "\n";
}

/// Loads a corpus, featurizing LLD payloads on the fly.
Corpus load_feature_corpus(const std::string& path) {
    Corpus corpus = load_corpus(path);
    const bool has_lld = std::any_of(corpus.sessions.begin(), corpus.sessions.end(),
                                     [](const Session& s) { return s.payload == PayloadKind::lld; });
    return has_lld ? featurize_corpus(corpus) : corpus;
}

TrainConfig to_train_config(const TrainFlags& f, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.batch_size = f.batch_size;
    cfg.max_epochs = f.max_epochs;
    cfg.patience = f.patience;
    cfg.adam.lr = f.lr;
    cfg.grl_lambda = f.grl_lambda;
    cfg.seed = seed;
    return cfg;
}

std::function<void(int, std::uint64_t)> progress(const std::string& label, int runs) {
    auto mutex = std::make_shared<std::mutex>();
    auto done = std::make_shared<int>(0);
    return [=](int run, std::uint64_t seed) {
        std::lock_guard lock(*mutex);
        ++*done;
        fmt::print(stderr, "{}: run {} (seed {}) finished [{}/{}]\n", label, run, seed, *done, runs);
    };
}

std::vector<std::uint64_t> run_seeds(std::uint64_t base, int runs) {
    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < runs; ++r) seeds.push_back(base + static_cast<std::uint64_t>(r));
    return seeds;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

// ---------------------------------------------------------------------------
// Commands

Outcome run_synth(const SynthOptions& o) {
    require(o.out, "--out");
    SynthParams p;
    p.n_sessions = o.sessions;
    p.turns_per_session = o.turns;
    p.feature_dim = o.feature_dim;
    p.latent_dim = o.latent_dim;
    p.consistency = o.consistency;
    p.entrainment = o.entrainment;
    p.noise_sigma = o.noise;
    p.lambda_spread = o.lambda_spread;
    p.tasks_per_session = o.tasks;
    p.seed = o.seed;
    const SynthCorpus synth = generate_corpus(p);

    Outcome result{start_manifest("synth", o)};
    result.manifest.seeds = {o.seed};
    {
        auto out = open_output(o.out);
        write_corpus(synth.corpus, out);
    }
    record_output(result.manifest, o.out);
    if (!o.annotations_out.empty()) {
        {
            auto out = open_output(o.annotations_out);
            write_annotations(synth.annotations, out);
        }
        record_output(result.manifest, o.annotations_out);
    }
    if (!o.truth_out.empty()) {
        {
            auto out = open_output(o.truth_out);
            out << "session_id,speaker,lambda\n";
            for (const auto& s : synth.speakers) {
                out << fmt::format("{},{},{}\n", s.session_id, s.speaker, s.lambda);
            }
        }
        record_output(result.manifest, o.truth_out);
    }
    if (!o.summary_out.empty()) {
        std::size_t ipus = 0;
        for (const auto& s : synth.corpus.sessions) ipus += s.ipus.size();
        json summary = {{"sessions", synth.corpus.sessions.size()}, {"ipus", ipus}};
        if (o.oracle_mc > 0) {
            const OracleGap g = oracle_gap(p, o.oracle_mc);
            summary["oracle_gap"] = {
                {"gap", g.gap}, {"std_error", g.std_error}, {"z", g.z}, {"n_eval", g.n_eval}};
        }
        write_json(o.summary_out, summary);
        record_output(result.manifest, o.summary_out);
    }
    return result;
}

Outcome run_ingest(const IngestOptions& o) {
    require(o.corpus, "--corpus");
    require(o.out, "--out");
    const Corpus corpus = load_corpus(o.corpus);
    json sessions = json::array();
    std::size_t total_samples = 0;
    std::size_t total_excluded = 0;
    const bool features = std::all_of(corpus.sessions.begin(), corpus.sessions.end(),
                                      [](const Session& s) { return s.payload == PayloadKind::features; });
    for (const Session& s : corpus.sessions) {
        json entry = {{"session_id", s.id},
                      {"payload", s.payload == PayloadKind::lld ? "lld" : "features"},
                      {"ipus", s.ipus.size()},
                      {"turns", segment_turns(s).size()}};
        if (s.payload == PayloadKind::features) {
            const TripletBuild b = build_triplets(s);
            entry["samples"] = b.samples.size();
            entry["excluded_exchanges"] = b.excluded;
            total_samples += b.samples.size();
            total_excluded += b.excluded;
        }
        sessions.push_back(entry);
    }
    json summary = {{"sessions", corpus.sessions.size()}, {"per_session", sessions}};
    if (features) {
        summary["samples"] = total_samples;
        summary["excluded_exchanges"] = total_excluded;
    }
    if (corpus.sessions.size() >= 10) {
        const CorpusSplit split = split_corpus(corpus);
        summary["split"] = {{"train", split.train.size()},
                            {"validation", split.validation.size()},
                            {"test", split.test.size()}};
    }
    write_json(o.out, summary);
    Outcome result{start_manifest("ingest", o)};
    record_input(result.manifest, o.corpus);
    record_output(result.manifest, o.out);
    return result;
}

Outcome run_featurize(const FeaturizeOptions& o) {
    require(o.corpus, "--corpus");
    require(o.out, "--out");
    const Corpus featurized = featurize_corpus(load_corpus(o.corpus));
    {
        auto out = open_output(o.out);
        write_corpus(featurized, out);
    }
    Outcome result{start_manifest("featurize", o)};
    record_input(result.manifest, o.corpus);
    record_output(result.manifest, o.out);
    return result;
}

Outcome run_train(const TrainOptions& o) {
    require(o.corpus, "--corpus");
    require(o.out, "--out");
    const Measure measure = parse_measure(o.measure);
    const Corpus corpus = load_feature_corpus(o.corpus);
    const CorpusSplit split = split_corpus(corpus);
    const auto train = collect_triplets(corpus, split.train);
    const auto val = collect_triplets(corpus, split.validation);
    const MeasureModel model = train_measure(measure, train, val, to_train_config(o.train, o.seed));

    Outcome result{start_manifest("train", o)};
    result.manifest.seeds = {o.seed};
    record_input(result.manifest, o.corpus);
    if (fs::path(o.out).has_parent_path()) fs::create_directories(fs::path(o.out).parent_path());
    save_model(model, o.out);
    record_output(result.manifest, o.out);
    if (!o.log.empty()) {
        {
            auto out = open_output(o.log);
            write_training_log(training_log(model), out);
        }
        record_output(result.manifest, o.log);
    }
    return result;
}

Outcome run_score(const ScoreOptions& o) {
    require(o.model, "--model");
    require(o.corpus, "--corpus");
    require(o.out, "--out");
    const MeasureModel model = load_model(o.model);
    const Corpus corpus = load_feature_corpus(o.corpus);
    std::vector<std::string> ids;
    if (o.split == "all") {
        for (const auto& s : corpus.sessions) ids.push_back(s.id);
    } else {
        const CorpusSplit split = split_corpus(corpus);
        if (o.split == "train") ids = split.train;
        else if (o.split == "validation") ids = split.validation;
        else if (o.split == "test") ids = split.test;
        else throw UsageError(fmt::format("unknown split '{}' (train|validation|test|all)", o.split));
    }
    {
        auto out = open_output(o.out);
        out << "session_id,task_id,responder,index0,index1,index2,score\n";
        for (const auto& id : ids) {
            const auto samples = build_triplets(find_session(corpus, id)).samples;
            if (samples.empty()) continue;
            const Vector scores = score_samples(model, samples);
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const auto& s = samples[i];
                out << fmt::format("{},{},{},{},{},{},{}\n", csv_field(s.session_id),
                                   csv_field(s.task_id.value_or("")), csv_field(s.responder),
                                   s.index0, s.index1, s.index2,
                                   scores[static_cast<Eigen::Index>(i)]);
            }
        }
    }
    Outcome result{start_manifest("score", o)};
    record_input(result.manifest, o.model);
    record_input(result.manifest, o.corpus);
    record_output(result.manifest, o.out);
    return result;
}

Outcome run_shuffle_test(const ShuffleOptions& o) {
    require(o.corpus, "--corpus");
    require(o.out_dir, "--out-dir");
    const Measure measure = parse_measure(o.measure);
    const Corpus corpus = load_feature_corpus(o.corpus);

    ExperimentOptions ex;
    ex.n_runs = o.runs;
    ex.base_seed = o.seed;
    ex.train = to_train_config(o.train, o.seed);
    ex.parallel = o.parallel;
    ex.on_run_done = progress("shuffle-test", o.runs);
    const DiscriminationResult res = discrimination_experiment(corpus, measure, ex);

    const fs::path dir(o.out_dir);
    const fs::path summary_path = dir / "summary.json";
    const fs::path runs_path = dir / "runs.csv";
    const fs::path sessions_path = dir / "sessions.csv";

    json accuracies = json::array();
    json seeds = json::array();
    for (const auto& r : res.runs) {
        accuracies.push_back(r.accuracy);
        seeds.push_back(r.seed);
    }
    write_json(summary_path, {{"measure", to_string(measure)},
                              {"runs", res.runs.size()},
                              {"accuracy_mean", res.accuracy_mean},
                              {"accuracy_std", res.accuracy_std},
                              {"per_variable", json::object()},
                              {"run_accuracies", accuracies},
                              {"seeds", seeds},
                              {"test_sessions", res.runs.front().sessions.size()},
                              {"excluded_sessions", res.runs.front().excluded.size()}});
    {
        auto out = open_output(runs_path);
        out << "run,seed,accuracy,sessions,excluded\n";
        for (const auto& r : res.runs) {
            out << fmt::format("{},{},{},{},{}\n", r.run, r.seed, r.accuracy, r.sessions.size(),
                               r.excluded.size());
        }
    }
    {
        auto out = open_output(sessions_path);
        out << "run,seed,session_id,real_score,fake_score,success\n";
        for (const auto& r : res.runs) {
            for (const auto& s : r.sessions) {
                out << fmt::format("{},{},{},{},{},{}\n", r.run, r.seed, csv_field(s.session_id),
                                   s.real_score, s.fake_score, s.success ? 1 : 0);
            }
        }
    }
    fmt::print("{}: accuracy {:.4f} (std {:.4f}) over {} runs\n", to_string(measure),
               res.accuracy_mean, res.accuracy_std, res.runs.size());

    Outcome result{start_manifest("shuffle-test", o)};
    result.manifest.seeds = run_seeds(o.seed, o.runs);
    record_input(result.manifest, o.corpus);
    for (const auto& p : {summary_path, runs_path, sessions_path}) record_output(result.manifest, p.string());
    return result;
}

Outcome run_correlate(const CorrelateOptions& o) {
    require(o.corpus, "--corpus");
    require(o.annotations, "--annotations");
    require(o.out_dir, "--out-dir");
    const Measure measure = parse_measure(o.measure);
    const Corpus corpus = load_feature_corpus(o.corpus);
    const auto annotations = load_annotations(o.annotations);

    CorrelationOptions co;
    co.experiment.n_runs = o.runs;
    co.experiment.base_seed = o.seed;
    co.experiment.train = to_train_config(o.train, o.seed);
    co.experiment.parallel = o.parallel;
    co.experiment.on_run_done = progress("correlate", o.runs);
    if (!o.eval_corpus.empty()) co.eval_corpus = load_feature_corpus(o.eval_corpus);
    CorrelationReport report = correlation_experiment(corpus, measure, annotations, co);
    finalize_report(report, o.level);

    if (!report.runs.empty() && report.runs.front().dropped_pairs > 0) {
        fmt::print(stderr, "warning: {} (session, task, speaker) pairs lacked annotations and were dropped\n",
                   report.runs.front().dropped_pairs);
    }

    const fs::path dir(o.out_dir);
    const fs::path summary_path = dir / "summary.json";
    const fs::path runs_path = dir / "runs.csv";

    json per_variable = json::object();
    for (const auto& [name, v] : report.per_variable) {
        per_variable[name] = {{"r_distribution", v.r_distribution},
                              {"significant_runs", v.significant_runs},
                              {"significant_negative_runs", v.significant_negative_runs},
                              {"significant_positive_runs", v.significant_positive_runs}};
    }
    json seeds = json::array();
    for (const auto& r : report.runs) seeds.push_back(r.seed);
    write_json(summary_path, {{"measure", to_string(measure)},
                              {"runs", report.runs.size()},
                              {"accuracy_mean", nullptr},
                              {"accuracy_std", nullptr},
                              {"per_variable", per_variable},
                              {"significant_run_count", report.across.k},
                              {"across_run_threshold", report.across.threshold},
                              {"level", o.level},
                              {"dropped_pairs", report.runs.front().dropped_pairs},
                              {"seeds", seeds}});
    {
        auto out = open_output(runs_path);
        out << "run,seed,variable,r,p,n,significant_within_run,min_alpha,run_significant,significant\n";
        for (const auto& r : report.runs) {
            for (const auto& v : r.variables) {
                out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.run, r.seed, v.variable,
                                   v.correlation.r, v.correlation.p, v.correlation.n,
                                   v.significant_within_run ? 1 : 0, r.min_alpha,
                                   r.run_significant ? 1 : 0, v.significant ? 1 : 0);
            }
        }
    }
    for (const auto& [name, v] : report.per_variable) {
        fmt::print("{} {}: significant in {}/{} runs ({} negative)\n", to_string(measure), name,
                   v.significant_runs, report.runs.size(), v.significant_negative_runs);
    }

    Outcome result{start_manifest("correlate", o)};
    result.manifest.seeds = run_seeds(o.seed, o.runs);
    record_input(result.manifest, o.corpus);
    record_input(result.manifest, o.annotations);
    record_input(result.manifest, o.eval_corpus);
    record_output(result.manifest, summary_path.string());
    record_output(result.manifest, runs_path.string());
    return result;
}

Outcome run_gradcheck(const GradcheckOptions& o) {
    require(o.out, "--out");
    gradcheck::Options opt;
    opt.seed = o.seed;
    opt.tolerance = o.tolerance;
    opt.full_width_samples = o.samples;
    const gradcheck::Report report = gradcheck::run_all(opt);

    json checks = json::array();
    for (const auto& c : report.checks) {
        checks.push_back({{"name", c.name},
                          {"checked", c.checked},
                          {"skipped_kinks", c.skipped_kinks},
                          {"max_rel_error", c.max_rel_error},
                          {"passed", c.passed}});
        fmt::print("{:<22} {:>6} coords  max rel err {:.3e}  {}\n", c.name, c.checked,
                   c.max_rel_error, c.passed ? "PASS" : "FAIL");
    }
    write_json(o.out, {{"step", opt.step},
                       {"tolerance", opt.tolerance},
                       {"passed", report.passed()},
                       {"checks", checks}});
    Outcome result{start_manifest("gradcheck", o)};
    result.manifest.seeds = {o.seed};
    record_output(result.manifest, o.out);
    result.exit_code = report.passed() ? 0 : 1;
    return result;
}

Outcome dispatch(const std::string& command, const json& config) {
    if (command == "synth") return run_synth(config.get<SynthOptions>());
    if (command == "ingest") return run_ingest(config.get<IngestOptions>());
    if (command == "featurize") return run_featurize(config.get<FeaturizeOptions>());
    if (command == "train") return run_train(config.get<TrainOptions>());
    if (command == "score") return run_score(config.get<ScoreOptions>());
    if (command == "shuffle-test") return run_shuffle_test(config.get<ShuffleOptions>());
    if (command == "correlate") return run_correlate(config.get<CorrelateOptions>());
    if (command == "gradcheck") return run_gradcheck(config.get<GradcheckOptions>());
    throw Error(fmt::format("manifest names unknown command '{}'", command));
}

/// Repeats a manifest's command in its recorded working directory and
/// compares every output digest. Returns 0 when all match.
int rerun(const std::string& manifest_path) {
    require(manifest_path, "--manifest");
    const fs::path path = fs::absolute(manifest_path);
    const Manifest recorded = read_manifest(path);
    fs::current_path(recorded.working_directory);
    for (const auto& [input, digest] : recorded.inputs) {
        if (sha256_file(input) != digest) {
            throw Error(fmt::format("input '{}' changed since the manifest was written", input));
        }
    }
    const Outcome again = dispatch(recorded.command, recorded.config);
    json files = json::object();
    bool all_match = again.manifest.outputs.size() == recorded.outputs.size();
    for (const auto& [output, digest] : recorded.outputs) {
        auto it = again.manifest.outputs.find(output);
        const bool match = it != again.manifest.outputs.end() && it->second == digest;
        all_match = all_match && match;
        files[output] = match;
    }
    std::cout << json{{"manifest", path.string()}, {"reproduced", all_match}, {"files", files}}.dump(2)
              << "\n";
    return all_match ? 0 : 1;
}

std::string default_manifest(const std::string& out) { return out + ".manifest.json"; }

// ---------------------------------------------------------------------------
// Flag wiring

void add_train_flags(CLI::App* app, TrainFlags& f) {
    app->add_option("--batch-size", f.batch_size, "Mini-batch size")->capture_default_str();
    app->add_option("--max-epochs", f.max_epochs, "Epoch cap per training stage")->capture_default_str();
    app->add_option("--patience", f.patience, "Early-stopping patience in epochs")->capture_default_str();
    app->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
    app->add_option("--grl-lambda", f.grl_lambda, "Gradient-reversal scale (adv only)")->capture_default_str();
}

void add_common(CLI::App* app, std::string& config, std::string& manifest) {
    app->add_option("--config", config,
                    "key=value option file; keys are flag names, command-line flags win");
    app->add_option("--manifest", manifest, "Manifest path (default: next to the outputs)");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// Fills options not given on the command line from a key=value file.
/// Blank lines, '#' comments and [section] headers are ignored; keys may use
/// dashes or underscores.
void apply_config_file(CLI::App* app, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(fmt::format("cannot open config file '{}'", path));
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(fmt::format("{}:{}: expected key=value", path, number));
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        key.erase(0, key.find_first_not_of('-'));
        std::replace(key.begin(), key.end(), '_', '-');
        if (key == "config" || key == "manifest") {
            throw Error(fmt::format("{}:{}: '{}' cannot be set from a config file", path, number, key));
        }
        CLI::Option* opt = app->get_option_no_throw("--" + key);
        if (opt == nullptr) {
            throw Error(fmt::format("{}:{}: unknown option '{}' for {}", path, number, key,
                                    app->get_name()));
        }
        if (opt->count() > 0) continue;
        opt->add_result(value);
        opt->run_callback();
    }
}

int run_main(int argc, char** argv) {
    CLI::App app{"entrain: deconfounded neural measures of vocal entrainment"};
    app.set_version_flag("--version", std::string("entrain ") + ENTRAIN_VERSION);
    app.require_subcommand(1);

    std::string manifest;
    std::string config_file;

    SynthOptions synth;
    auto* c_synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted effects");
    c_synth->add_option("--out", synth.out, "Corpus JSONL output (required)");
    c_synth->add_option("--annotations-out", synth.annotations_out, "Pseudo-annotation CSV output");
    c_synth->add_option("--truth-out", synth.truth_out, "Per-speaker lambda CSV output");
    c_synth->add_option("--summary-out", synth.summary_out, "Summary JSON output");
    c_synth->add_option("--sessions", synth.sessions, "Number of sessions")->capture_default_str();
    c_synth->add_option("--turns", synth.turns, "Turns per session")->capture_default_str();
    c_synth->add_option("--feature-dim", synth.feature_dim, "Feature width")->capture_default_str();
    c_synth->add_option("--latent-dim", synth.latent_dim, "Latent width (0 = independent features)")
        ->capture_default_str();
    c_synth->add_option("--consistency", synth.consistency, "Consistency c in [0,1]")->capture_default_str();
    c_synth->add_option("--entrainment", synth.entrainment, "Entrainment lambda in [0,1]")
        ->capture_default_str();
    c_synth->add_option("--noise", synth.noise, "Noise standard deviation")->capture_default_str();
    c_synth->add_option("--lambda-spread", synth.lambda_spread, "Per-speaker lambda spread")
        ->capture_default_str();
    c_synth->add_option("--tasks", synth.tasks, "Tasks per session")->capture_default_str();
    c_synth->add_option("--oracle-mc", synth.oracle_mc, "Monte-Carlo triplets for the oracle gap (summary)")
        ->capture_default_str();
    c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
    add_common(c_synth, config_file, manifest);

    IngestOptions ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Validate a corpus and report turns, samples and split");
    c_ingest->add_option("--corpus", ingest.corpus, "Corpus JSONL (required)");
    c_ingest->add_option("--out", ingest.out, "Summary JSON output (required)");
    add_common(c_ingest, config_file, manifest);

    FeaturizeOptions featurize;
    auto* c_feat = app.add_subcommand("featurize", "Turn LLD frames into functional feature vectors");
    c_feat->add_option("--corpus", featurize.corpus, "LLD corpus JSONL (required)");
    c_feat->add_option("--out", featurize.out, "Feature corpus JSONL output (required)");
    add_common(c_feat, config_file, manifest);

    TrainOptions train;
    auto* c_train = app.add_subcommand("train", "Train one DR or A model on the corpus split");
    c_train->add_option("--corpus", train.corpus, "Corpus JSONL (required)");
    c_train->add_option("--measure", train.measure, "dr or adv")->capture_default_str();
    c_train->add_option("--out", train.out, "Model file output (required)");
    c_train->add_option("--log", train.log, "Training log CSV output");
    c_train->add_option("--seed", train.seed, "Training seed")->capture_default_str();
    add_train_flags(c_train, train.train);
    add_common(c_train, config_file, manifest);

    ScoreOptions score;
    auto* c_score = app.add_subcommand("score", "Score every sample of a split with a trained model");
    c_score->add_option("--model", score.model, "Model file (required)");
    c_score->add_option("--corpus", score.corpus, "Corpus JSONL (required)");
    c_score->add_option("--out", score.out, "Per-sample score CSV output (required)");
    c_score->add_option("--split", score.split, "train|validation|test|all")->capture_default_str();
    add_common(c_score, config_file, manifest);

    ShuffleOptions shuffle;
    auto* c_shuffle = app.add_subcommand("shuffle-test", "Real-vs-fake session discrimination over retrainings");
    c_shuffle->add_option("--corpus", shuffle.corpus, "Corpus JSONL (required)");
    c_shuffle->add_option("--measure", shuffle.measure, "dr or adv")->capture_default_str();
    c_shuffle->add_option("--out-dir", shuffle.out_dir, "Output directory (required)");
    c_shuffle->add_option("--runs", shuffle.runs, "Retraining runs")->capture_default_str();
    c_shuffle->add_option("--seed,--seeds", shuffle.seed, "Base seed; run r uses seed + r")->capture_default_str();
    c_shuffle->add_option("--parallel", shuffle.parallel, "Concurrent training runs")->capture_default_str();
    add_train_flags(c_shuffle, shuffle.train);
    add_common(c_shuffle, config_file, manifest);

    CorrelateOptions correlate;
    auto* c_corr = app.add_subcommand("correlate", "Correlate measures with social-variable annotations");
    c_corr->add_option("--corpus", correlate.corpus, "Training corpus JSONL (required)");
    c_corr->add_option("--annotations", correlate.annotations, "Annotations CSV (required)");
    c_corr->add_option("--eval-corpus", correlate.eval_corpus,
                       "Corpus whose sessions are correlated (default: test split)");
    c_corr->add_option("--measure", correlate.measure, "dr or adv")->capture_default_str();
    c_corr->add_option("--out-dir", correlate.out_dir, "Output directory (required)");
    c_corr->add_option("--runs", correlate.runs, "Retraining runs")->capture_default_str();
    c_corr->add_option("--seed,--seeds", correlate.seed, "Base seed; run r uses seed + r")->capture_default_str();
    c_corr->add_option("--parallel", correlate.parallel, "Concurrent training runs")->capture_default_str();
    c_corr->add_option("--level", correlate.level, "Across-run FDR level")->capture_default_str();
    add_train_flags(c_corr, correlate.train);
    add_common(c_corr, config_file, manifest);

    GradcheckOptions gc;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    c_gc->add_option("--out", gc.out, "Report JSON output (required)");
    c_gc->add_option("--seed", gc.seed, "Seed for random instances")->capture_default_str();
    c_gc->add_option("--tolerance", gc.tolerance, "Max relative error")->capture_default_str();
    c_gc->add_option("--samples", gc.samples, "Sampled coordinates per array at full width")
        ->capture_default_str();
    add_common(c_gc, config_file, manifest);

    std::string rerun_path;
    auto* c_rerun = app.add_subcommand("rerun", "Repeat a command from its manifest and verify outputs");
    c_rerun->add_option("--manifest", rerun_path, "Manifest written by an earlier command (required)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << json{{"status", "error"}, {"kind", "usage"}, {"error", e.what()}}.dump() << "\n";
        return 2;
    }

    CLI::App* chosen = app.get_subcommands().front();
    const std::string command = chosen->get_name();
    try {
        if (command == "rerun") return rerun(rerun_path);
        if (!config_file.empty()) apply_config_file(chosen, config_file);
        json config;
        std::string out_path;
        if (command == "synth") { config = synth; out_path = default_manifest(synth.out); }
        if (command == "ingest") { config = ingest; out_path = default_manifest(ingest.out); }
        if (command == "featurize") { config = featurize; out_path = default_manifest(featurize.out); }
        if (command == "train") { config = train; out_path = default_manifest(train.out); }
        if (command == "score") { config = score; out_path = default_manifest(score.out); }
        if (command == "shuffle-test") {
            config = shuffle;
            out_path = (fs::path(shuffle.out_dir) / "manifest.json").string();
        }
        if (command == "correlate") {
            config = correlate;
            out_path = (fs::path(correlate.out_dir) / "manifest.json").string();
        }
        if (command == "gradcheck") { config = gc; out_path = default_manifest(gc.out); }
        Outcome outcome = dispatch(command, config);
        if (!config_file.empty()) record_input(outcome.manifest, config_file);
        write_manifest(outcome.manifest, manifest.empty() ? out_path : manifest);
        return outcome.exit_code;
    } catch (const UsageError& e) {
        std::cerr << json{{"status", "error"}, {"kind", "usage"}, {"command", command}, {"error", e.what()}}.dump()
                  << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << json{{"status", "error"}, {"command", command}, {"error", e.what()}}.dump() << "\n";
        return 1;
    }
}

}  // namespace entrain::cli

int main(int argc, char** argv) { return entrain::cli::run_main(argc, argv); }
