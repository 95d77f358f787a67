#include "entrain/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <tuple>

#include <fmt/format.h>

namespace entrain {

std::optional<std::vector<TripletSample>> make_fake_session(
    const std::vector<TripletSample>& samples, std::mt19937_64& rng) {
    if (samples.size() < 2) return std::nullopt;
    std::vector<std::size_t> perm(samples.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<TripletSample> fake = samples;
    for (std::size_t i = 0; i < fake.size(); ++i) fake[i].x1 = samples[perm[i]].x1;
    return fake;
}

bool discriminate_session(const MeasureModel& model, const std::vector<TripletSample>& real,
                          const std::vector<TripletSample>& fake) {
    return session_score(model, real) < session_score(model, fake);
}

namespace {

std::mt19937_64 session_rng(std::uint64_t seed, std::size_t session_index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(session_index)};
    return std::mt19937_64(seq);
}

/// Runs fn(run) for run in [0, n) on up to `parallel` threads and rethrows
/// the first failure.
template <class Fn>
void for_each_run(int n, int parallel, Fn fn) {
    const int workers = std::clamp(parallel, 1, std::max(n, 1));
    if (workers == 1) {
        for (int r = 0; r < n; ++r) fn(r);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int r = next++; r < n; r = next++) {
                try {
                    fn(r);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

struct SplitSamples {
    CorpusSplit split;
    std::vector<TripletSample> train;
    std::vector<TripletSample> val;
};

SplitSamples split_samples(const Corpus& corpus) {
    SplitSamples s;
    s.split = split_corpus(corpus);
    s.train = collect_triplets(corpus, s.split.train);
    s.val = collect_triplets(corpus, s.split.validation);
    return s;
}

}  // namespace

DiscriminationRun discriminate_sessions(const MeasureModel& model, const Corpus& corpus,
                                        const std::vector<std::string>& session_ids,
                                        std::uint64_t seed) {
    DiscriminationRun run;
    run.seed = seed;
    int successes = 0;
    for (std::size_t i = 0; i < session_ids.size(); ++i) {
        const auto real = build_triplets(find_session(corpus, session_ids[i])).samples;
        auto rng = session_rng(seed, i);
        const auto fake = make_fake_session(real, rng);
        if (!fake) {
            run.excluded.push_back(session_ids[i]);
            continue;
        }
        SessionOutcome o;
        o.session_id = session_ids[i];
        o.real_score = session_score(model, real);
        o.fake_score = session_score(model, *fake);
        o.success = o.real_score < o.fake_score;
        successes += o.success ? 1 : 0;
        run.sessions.push_back(std::move(o));
    }
    if (run.sessions.empty()) {
        throw Error("discrimination: no test session has at least two samples");
    }
    run.accuracy = static_cast<double>(successes) / static_cast<double>(run.sessions.size());
    return run;
}

DiscriminationResult discrimination_experiment(const Corpus& corpus, Measure measure,
                                               const ExperimentOptions& options) {
    if (options.n_runs < 1) throw Error("n_runs must be >= 1");
    const SplitSamples data = split_samples(corpus);

    DiscriminationResult result;
    result.measure = measure;
    result.runs.resize(static_cast<std::size_t>(options.n_runs));
    for_each_run(options.n_runs, options.parallel, [&](int r) {
        TrainConfig cfg = options.train;
        cfg.seed = options.base_seed + static_cast<std::uint64_t>(r);
        const MeasureModel model = train_measure(measure, data.train, data.val, cfg);
        DiscriminationRun run = discriminate_sessions(model, corpus, data.split.test, cfg.seed);
        run.run = r;
        result.runs[static_cast<std::size_t>(r)] = std::move(run);
        if (options.on_run_done) options.on_run_done(r, cfg.seed);
    });

    double sum = 0.0;
    for (const auto& run : result.runs) sum += run.accuracy;
    const double n = static_cast<double>(result.runs.size());
    result.accuracy_mean = sum / n;
    if (result.runs.size() > 1) {
        double sq = 0.0;
        for (const auto& run : result.runs) sq += std::pow(run.accuracy - result.accuracy_mean, 2);
        result.accuracy_std = std::sqrt(sq / (n - 1.0));
    }
    return result;
}

CorrelationRun correlate_social(const MeasureModel& model, const Corpus& corpus,
                                const std::vector<std::string>& session_ids,
                                const std::vector<Annotation>& annotations) {
    using Unit = std::tuple<std::string, std::string, std::string>;  // session, task, speaker
    // Unit order follows session_ids, then task and speaker lexicographically.
    std::vector<std::pair<std::size_t, Unit>> order;
    std::map<Unit, std::pair<double, int>> sums;
    for (std::size_t si = 0; si < session_ids.size(); ++si) {
        const auto samples = build_triplets(find_session(corpus, session_ids[si])).samples;
        if (samples.empty()) continue;
        const Vector scores = score_samples(model, samples);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            Unit u{samples[i].session_id, samples[i].task_id.value_or(""), samples[i].responder};
            auto [it, inserted] = sums.try_emplace(u, 0.0, 0);
            if (inserted) order.emplace_back(si, u);
            it->second.first += scores[static_cast<Eigen::Index>(i)];
            it->second.second += 1;
        }
    }
    std::stable_sort(order.begin(), order.end());

    std::map<std::tuple<std::string, std::string, std::string, std::string>, int> counts;
    for (const auto& a : annotations) {
        counts[{a.session_id, a.task_id, a.speaker, a.variable}] = a.count;
    }

    CorrelationRun run;
    std::vector<double> pvals;
    for (const auto& variable : kSocialVariables) {
        std::vector<double> x;
        std::vector<double> y;
        for (const auto& [si, unit] : order) {
            const auto& [session, task, speaker] = unit;
            auto it = counts.find({session, task, speaker, variable});
            if (it == counts.end()) {
                ++run.dropped_pairs;
                continue;
            }
            const auto& [sum, n] = sums.at(unit);
            x.push_back(static_cast<double>(it->second));
            y.push_back(sum / n);
        }
        VariableCorrelation vc;
        vc.variable = variable;
        try {
            vc.correlation = stats::pearson(x, y);
        } catch (const Error& e) {
            throw Error(fmt::format("correlation for '{}': {}", variable, e.what()));
        }
        pvals.push_back(vc.correlation.p);
        run.variables.push_back(std::move(vc));
    }
    const auto within = stats::bh_within_run(pvals, 0.05);
    run.min_alpha = within.min_alpha;
    for (std::size_t j = 0; j < run.variables.size(); ++j) {
        run.variables[j].significant_within_run = within.significant[j];
    }
    return run;
}

void finalize_report(CorrelationReport& report, double level) {
    std::vector<double> alphas;
    for (const auto& run : report.runs) alphas.push_back(run.min_alpha);
    report.across = stats::multi_run_significance(alphas, level);
    for (auto& run : report.runs) {
        run.run_significant = false;
        for (auto& v : run.variables) v.significant = false;
    }
    for (int idx : report.across.runs) {
        auto& run = report.runs[static_cast<std::size_t>(idx)];
        run.run_significant = true;
        std::vector<double> pvals;
        for (const auto& v : run.variables) pvals.push_back(v.correlation.p);
        const auto selected = stats::bh_select(pvals, report.across.threshold);
        for (std::size_t j = 0; j < run.variables.size(); ++j) {
            run.variables[j].significant = selected[j];
        }
    }
    report.per_variable.clear();
    for (const auto& run : report.runs) {
        for (const auto& v : run.variables) {
            auto& summary = report.per_variable[v.variable];
            summary.r_distribution.push_back(v.correlation.r);
            if (v.significant) {
                ++summary.significant_runs;
                if (v.correlation.r < 0.0) ++summary.significant_negative_runs;
                if (v.correlation.r > 0.0) ++summary.significant_positive_runs;
            }
        }
    }
}

CorrelationReport correlation_experiment(const Corpus& corpus, Measure measure,
                                         const std::vector<Annotation>& annotations,
                                         const CorrelationOptions& options) {
    const ExperimentOptions& ex = options.experiment;
    if (ex.n_runs < 1) throw Error("n_runs must be >= 1");
    const SplitSamples data = split_samples(corpus);
    const Corpus& scored = options.eval_corpus ? *options.eval_corpus : corpus;
    std::vector<std::string> ids;
    if (options.eval_corpus) {
        for (const auto& s : options.eval_corpus->sessions) ids.push_back(s.id);
    } else {
        ids = data.split.test;
    }

    CorrelationReport report;
    report.measure = measure;
    report.runs.resize(static_cast<std::size_t>(ex.n_runs));
    for_each_run(ex.n_runs, ex.parallel, [&](int r) {
        TrainConfig cfg = ex.train;
        cfg.seed = ex.base_seed + static_cast<std::uint64_t>(r);
        const MeasureModel model = train_measure(measure, data.train, data.val, cfg);
        CorrelationRun run = correlate_social(model, scored, ids, annotations);
        run.run = r;
        run.seed = cfg.seed;
        report.runs[static_cast<std::size_t>(r)] = std::move(run);
        if (ex.on_run_done) ex.on_run_done(r, cfg.seed);
    });
    finalize_report(report);
    return report;
}

}  // namespace entrain
