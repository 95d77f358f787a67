#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "entrain/corpus.hpp"
#include "entrain/measures.hpp"
#include "entrain/stats.hpp"

namespace entrain {

/// Permutes x1 uniformly across the session's samples, leaving x0/x2 alone.
/// Returns nullopt for sessions with fewer than two samples.
std::optional<std::vector<TripletSample>> make_fake_session(
    const std::vector<TripletSample>& samples, std::mt19937_64& rng);

/// True iff the real session scores strictly lower than the fake one.
bool discriminate_session(const MeasureModel& model, const std::vector<TripletSample>& real,
                          const std::vector<TripletSample>& fake);

struct SessionOutcome {
    std::string session_id;
    double real_score = 0.0;
    double fake_score = 0.0;
    bool success = false;
};

struct DiscriminationRun {
    int run = 0;
    std::uint64_t seed = 0;
    std::vector<SessionOutcome> sessions;
    /// Test sessions with fewer than two samples.
    std::vector<std::string> excluded;
    double accuracy = 0.0;
};

struct DiscriminationResult {
    Measure measure = Measure::dr;
    std::vector<DiscriminationRun> runs;  // ascending seed
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;  // sample std over runs (0 for a single run)
};

/// Scores every test session of one trained model against freshly shuffled
/// fakes drawn from `seed`.
DiscriminationRun discriminate_sessions(const MeasureModel& model, const Corpus& corpus,
                                        const std::vector<std::string>& session_ids,
                                        std::uint64_t seed);

struct ExperimentOptions {
    int n_runs = 30;
    std::uint64_t base_seed = 0;  // run r uses base_seed + r
    TrainConfig train;            // its seed is replaced per run
    int parallel = 1;
    /// Called after each finished run (from worker threads when parallel > 1).
    std::function<void(int run, std::uint64_t seed)> on_run_done;
};

/// Retrains the measure per run on the corpus' train/validation split and
/// reports real-vs-fake accuracy over its test split.
DiscriminationResult discrimination_experiment(const Corpus& corpus, Measure measure,
                                               const ExperimentOptions& options);

inline const std::vector<std::string> kSocialVariables = {"enc", "lik", "dom"};

struct VariableCorrelation {
    std::string variable;
    stats::Correlation correlation;
    bool significant_within_run = false;  // BH over the run's variables at level 0.05
    bool significant = false;             // after the across-run step
};

struct CorrelationRun {
    int run = 0;
    std::uint64_t seed = 0;
    std::vector<VariableCorrelation> variables;  // enc, lik, dom order
    double min_alpha = 1.0;
    bool run_significant = false;
    /// (session, task, speaker) units without an annotation.
    int dropped_pairs = 0;
};

/// Mean score per (session, task, responder) paired with each variable's
/// annotator count.
CorrelationRun correlate_social(const MeasureModel& model, const Corpus& corpus,
                                const std::vector<std::string>& session_ids,
                                const std::vector<Annotation>& annotations);

struct VariableSummary {
    std::vector<double> r_distribution;
    int significant_runs = 0;
    int significant_negative_runs = 0;
    int significant_positive_runs = 0;
};

struct CorrelationReport {
    Measure measure = Measure::dr;
    std::vector<CorrelationRun> runs;  // ascending seed
    stats::AcrossRuns across;
    std::map<std::string, VariableSummary> per_variable;
};

/// Applies the across-run step to per-run results and fills the summaries.
/// Inside a significant run a variable is significant when it passes BH over
/// the run's family at the across-run threshold.
void finalize_report(CorrelationReport& report, double level = 0.05);

struct CorrelationOptions {
    ExperimentOptions experiment;
    /// Sessions scored for correlation; the corpus' test split when empty.
    std::optional<Corpus> eval_corpus;
};

CorrelationReport correlation_experiment(const Corpus& corpus, Measure measure,
                                         const std::vector<Annotation>& annotations,
                                         const CorrelationOptions& options);

}  // namespace entrain
