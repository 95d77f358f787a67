#include <fstream>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "entrain/eval.hpp"
#include "entrain/featurize.hpp"
#include "entrain/gradcheck.hpp"
#include "entrain/model_io.hpp"
#include "entrain/stats.hpp"
#include "entrain/synth.hpp"

namespace py = pybind11;
using namespace entrain;

namespace {

Corpus load_feature_corpus(const std::filesystem::path& path) {
    Corpus corpus = load_corpus(path);
    for (const auto& s : corpus.sessions) {
        if (s.payload == PayloadKind::lld) return featurize_corpus(corpus);
    }
    return corpus;
}

TrainConfig make_config(std::uint64_t seed, int batch_size, int max_epochs, int patience,
                        double lr, double grl_lambda) {
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.batch_size = batch_size;
    cfg.max_epochs = max_epochs;
    cfg.patience = patience;
    cfg.adam.lr = lr;
    cfg.grl_lambda = grl_lambda;
    return cfg;
}

/// Holder so the model variant is exposed as one opaque Python class.
struct Model {
    MeasureModel m;
};

std::vector<TripletSample> session_samples(const Corpus& corpus, const std::vector<std::string>& ids) {
    return collect_triplets(corpus, ids);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Deconfounded neural measures of vocal entrainment";

    py::register_exception<Error>(m, "EntrainError", PyExc_ValueError);

    py::enum_<Measure>(m, "Measure").value("dr", Measure::dr).value("adv", Measure::adv);

    // --- neural core -------------------------------------------------------
    m.def("smooth_l1", &nn::smooth_l1, py::arg("d"));
    m.def("smooth_l1_loss", &nn::smooth_l1_loss, py::arg("x"), py::arg("y"),
          "Summed smooth-L1 loss between two vectors");

    // --- featurize ---------------------------------------------------------
    m.def("apply_functionals",
          [](const Eigen::Ref<const LldFrameMatrix>& frames) { return apply_functionals(frames); },
          py::arg("frames"), "Six functionals per LLD column of a frames x channels matrix");
    m.def("percentile", &percentile, py::arg("values"), py::arg("p"));
    m.def("featurize_file",
          [](const std::filesystem::path& in, const std::filesystem::path& out) {
              save_corpus(featurize_corpus(load_corpus(in)), out);
          },
          py::arg("corpus"), py::arg("out"));

    // --- corpus ------------------------------------------------------------
    py::class_<Corpus>(m, "Corpus")
        .def_property_readonly("session_ids",
                               [](const Corpus& c) {
                                   std::vector<std::string> ids;
                                   for (const auto& s : c.sessions) ids.push_back(s.id);
                                   return ids;
                               })
        .def("__len__", [](const Corpus& c) { return c.sessions.size(); })
        .def("triplet_count", [](const Corpus& c) {
            std::size_t n = 0;
            for (const auto& s : c.sessions) n += build_triplets(s).samples.size();
            return n;
        });
    m.def("load_corpus", &load_feature_corpus, py::arg("path"),
          "Load a corpus file, featurizing LLD payloads");
    m.def("split_corpus",
          [](const Corpus& c) {
              const CorpusSplit s = split_corpus(c);
              return py::make_tuple(s.train, s.validation, s.test);
          },
          py::arg("corpus"));

    // --- synthetic corpora -------------------------------------------------
    m.def(
        "synth",
        [](const std::filesystem::path& out, int sessions, int turns, int feature_dim,
           int latent_dim, double consistency, double entrainment, double noise,
           double lambda_spread, std::uint64_t seed,
           std::optional<std::filesystem::path> annotations_out) {
            SynthParams p;
            p.n_sessions = sessions;
            p.turns_per_session = turns;
            p.feature_dim = feature_dim;
            p.latent_dim = latent_dim;
            p.consistency = consistency;
            p.entrainment = entrainment;
            p.noise_sigma = noise;
            p.lambda_spread = lambda_spread;
            p.seed = seed;
            const SynthCorpus s = generate_corpus(p);
            save_corpus(s.corpus, out);
            if (annotations_out) {
                std::ofstream a(*annotations_out, std::ios::binary);
                write_annotations(s.annotations, a);
            }
            return s.corpus;
        },
        py::arg("out"), py::arg("sessions") = 100, py::arg("turns") = 51,
        py::arg("feature_dim") = 228, py::arg("latent_dim") = 0, py::arg("consistency") = 0.5,
        py::arg("entrainment") = 0.5, py::arg("noise") = 0.5, py::arg("lambda_spread") = 0.0,
        py::arg("seed") = 0, py::arg("annotations_out") = py::none(),
        "Write a synthetic corpus (and optional pseudo-annotations); returns it");
    m.def(
        "oracle_gap",
        [](double consistency, double entrainment, double noise, int feature_dim, int n_mc,
           std::uint64_t seed) {
            SynthParams p;
            p.consistency = consistency;
            p.entrainment = entrainment;
            p.noise_sigma = noise;
            p.feature_dim = feature_dim;
            p.seed = seed;
            const OracleGap g = oracle_gap(p, n_mc);
            return py::dict(py::arg("gap") = g.gap, py::arg("std_error") = g.std_error,
                            py::arg("z") = g.z, py::arg("n_eval") = g.n_eval);
        },
        py::arg("consistency"), py::arg("entrainment"), py::arg("noise") = 0.5,
        py::arg("feature_dim") = 8, py::arg("n_mc") = 10000, py::arg("seed") = 0);

    // --- measures ----------------------------------------------------------
    py::class_<Model>(m, "Model")
        .def_property_readonly("measure", [](const Model& mm) { return measure_of(mm.m); })
        .def("parameter_shapes",
             [](const Model& mm) {
                 std::vector<std::tuple<std::string, int, int>> out;
                 for (const auto& s : parameter_shapes(mm.m)) out.emplace_back(s.name, s.rows, s.cols);
                 return out;
             })
        .def("score",
             [](const Model& mm, const Corpus& c, std::vector<std::string> ids) {
                 if (ids.empty()) ids = split_corpus(c).test;
                 return score_samples(mm.m, session_samples(c, ids));
             },
             py::arg("corpus"), py::arg("session_ids") = std::vector<std::string>{},
             "Per-sample scores over the given sessions (default: test split)")
        .def("session_score",
             [](const Model& mm, const Corpus& c, const std::string& id) {
                 return session_score(mm.m, build_triplets(find_session(c, id)).samples);
             },
             py::arg("corpus"), py::arg("session_id"))
        .def("save", [](const Model& mm, const std::filesystem::path& p) { save_model(mm.m, p); },
             py::arg("path"));
    m.def("load_model", [](const std::filesystem::path& p) { return Model{load_model(p)}; },
          py::arg("path"));
    m.def(
        "train",
        [](const Corpus& c, Measure measure, std::uint64_t seed, int batch_size, int max_epochs,
           int patience, double lr, double grl_lambda) {
            const CorpusSplit split = split_corpus(c);
            const auto tr = collect_triplets(c, split.train);
            const auto va = collect_triplets(c, split.validation);
            py::gil_scoped_release release;
            return Model{train_measure(
                measure, tr, va, make_config(seed, batch_size, max_epochs, patience, lr, grl_lambda))};
        },
        py::arg("corpus"), py::arg("measure") = Measure::dr, py::arg("seed") = 0,
        py::arg("batch_size") = 128, py::arg("max_epochs") = 100, py::arg("patience") = 5,
        py::arg("lr") = 1e-3, py::arg("grl_lambda") = 1.0,
        "Train a measure on the corpus' train/validation split");

    // --- evaluation --------------------------------------------------------
    m.def(
        "shuffle_test",
        [](const Corpus& c, Measure measure, int runs, std::uint64_t seed, int parallel,
           int max_epochs) {
            ExperimentOptions ex;
            ex.n_runs = runs;
            ex.base_seed = seed;
            ex.parallel = parallel;
            ex.train.max_epochs = max_epochs;
            DiscriminationResult r;
            {
                py::gil_scoped_release release;
                r = discrimination_experiment(c, measure, ex);
            }
            std::vector<double> acc;
            for (const auto& run : r.runs) acc.push_back(run.accuracy);
            return py::dict(py::arg("measure") = to_string(measure), py::arg("runs") = r.runs.size(),
                            py::arg("accuracy_mean") = r.accuracy_mean,
                            py::arg("accuracy_std") = r.accuracy_std,
                            py::arg("run_accuracies") = acc);
        },
        py::arg("corpus"), py::arg("measure") = Measure::dr, py::arg("runs") = 30,
        py::arg("seed") = 0, py::arg("parallel") = 1, py::arg("max_epochs") = 100,
        "Real-vs-fake session discrimination over retraining runs");
    m.def(
        "pearson",
        [](const std::vector<double>& x, const std::vector<double>& y) {
            const auto c = stats::pearson(x, y);
            return py::make_tuple(c.r, c.p);
        },
        py::arg("x"), py::arg("y"), "Pearson r and two-tailed p");
    m.def(
        "bh_within_run",
        [](const std::vector<double>& p, double alpha) {
            const auto w = stats::bh_within_run(p, alpha);
            return py::make_tuple(w.significant, w.min_alpha);
        },
        py::arg("pvals"), py::arg("alpha") = 0.05);
    m.def(
        "multi_run_significance",
        [](const std::vector<double>& alphas, double level) {
            const auto a = stats::multi_run_significance(alphas, level);
            return py::make_tuple(a.k, a.runs, a.threshold);
        },
        py::arg("min_alphas"), py::arg("level") = 0.05);

    m.def(
        "gradcheck",
        [](std::uint64_t seed) {
            gradcheck::Options opt;
            opt.seed = seed;
            const auto report = gradcheck::run_all(opt);
            py::dict checks;
            for (const auto& c : report.checks) checks[py::str(c.name)] = c.max_rel_error;
            return py::make_tuple(report.passed(), checks);
        },
        py::arg("seed") = 0, "Finite-difference gradient checks: (passed, {check: max rel error})");
}
