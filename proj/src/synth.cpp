#include "entrain/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include <fmt/format.h>

#include "entrain/nn.hpp"

namespace entrain {

void SynthParams::validate() const {
    if (n_sessions < 1) throw Error("n_sessions must be >= 1");
    if (turns_per_session < 2) throw Error("turns_per_session must be >= 2");
    if (feature_dim < 1) throw Error("feature_dim must be >= 1");
    if (latent_dim < 0) throw Error("latent_dim must be >= 0");
    if (consistency < 0.0 || consistency > 1.0) throw Error("consistency must lie in [0, 1]");
    if (entrainment < 0.0 || entrainment > 1.0) throw Error("entrainment must lie in [0, 1]");
    if (!(noise_sigma > 0.0)) throw Error("noise_sigma must be > 0");
    if (lambda_spread < 0.0 || lambda_spread > 1.0) {
        throw Error("lambda_spread must lie in [0, 1]");
    }
    if (tasks_per_session < 1 || tasks_per_session > turns_per_session) {
        throw Error("tasks_per_session must lie in [1, turns_per_session]");
    }
}

int quantize_lambda(double lambda) {
    return std::clamp(static_cast<int>(std::floor(6.0 * lambda)), 0, 5);
}

namespace {

using Rng = std::mt19937_64;

Rng derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
    return Rng(seq);
}

Vector normal_vector(Rng& rng, int dim, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = dist(rng);
    return v;
}

double draw_lambda(Rng& rng, const SynthParams& p) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return std::clamp(p.entrainment + p.lambda_spread * u(rng), 0.0, 1.0);
}

int generative_dim(const SynthParams& p) {
    return p.latent_dim > 0 ? p.latent_dim : p.feature_dim;
}

/// Identity-free path when latent_dim == 0; otherwise feature_dim x latent_dim.
std::optional<Matrix> mixing_matrix(const SynthParams& p) {
    if (p.latent_dim == 0) return std::nullopt;
    Rng rng = derived_rng(p.seed, 3, 0);
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(p.latent_dim)));
    Matrix m(p.feature_dim, p.latent_dim);
    for (int r = 0; r < p.feature_dim; ++r) {
        for (int c = 0; c < p.latent_dim; ++c) m(r, c) = dist(rng);
    }
    return m;
}

Vector observe(const std::optional<Matrix>& mix, const Vector& latent) {
    return mix ? Vector(*mix * latent) : latent;
}

Matrix observe(const std::optional<Matrix>& mix, const Matrix& latent) {
    return mix ? Matrix(*mix * latent) : latent;
}

constexpr std::array<const char*, 2> kSpeakers = {"A", "B"};

}  // namespace

SynthCorpus generate_corpus(const SynthParams& params) {
    params.validate();
    SynthCorpus out;
    const int dim = generative_dim(params);
    const auto mix = mixing_matrix(params);
    const double c = params.consistency;
    const double sigma = params.noise_sigma;

    for (int si = 0; si < params.n_sessions; ++si) {
        Rng rng = derived_rng(params.seed, 0, static_cast<std::uint64_t>(si));
        Session session;
        session.id = fmt::format("s{:04d}", si);
        session.payload = PayloadKind::features;

        std::array<Vector, 2> baseline;
        std::array<double, 2> lambda{};
        for (int k = 0; k < 2; ++k) {
            baseline[k] = normal_vector(rng, dim, 1.0);
            lambda[k] = draw_lambda(rng, params);
            out.speakers.push_back({session.id, kSpeakers[k], lambda[k]});
        }

        std::array<bool, 2> spoken{false, false};
        Vector previous_final;
        for (int t = 0; t < params.turns_per_session; ++t) {
            const int k = t % 2;
            std::optional<std::string> task;
            if (params.tasks_per_session > 1) {
                const int block = t * params.tasks_per_session / params.turns_per_session;
                task = fmt::format("t{:02d}", block);
            }
            Vector initial = normal_vector(rng, dim, sigma);
            if (!spoken[k]) {
                initial += baseline[k];
                spoken[k] = true;
            } else {
                initial += c * baseline[k] + lambda[k] * previous_final;
            }
            Vector final_ipu = c * baseline[k] + normal_vector(rng, dim, sigma);

            Ipu first;
            first.session_id = session.id;
            first.task_id = task;
            first.speaker = kSpeakers[k];
            first.index = 2 * t;
            first.features = observe(mix, initial);
            Ipu last = first;
            last.index = 2 * t + 1;
            last.features = observe(mix, final_ipu);
            session.ipus.push_back(std::move(first));
            session.ipus.push_back(std::move(last));
            previous_final = std::move(final_ipu);
        }
        assign_turns(session);
        out.corpus.sessions.push_back(std::move(session));

        Rng ann_rng = derived_rng(params.seed, 1, static_cast<std::uint64_t>(si));
        std::uniform_int_distribution<int> count(0, 5);
        const auto& s = out.corpus.sessions.back();
        std::vector<std::string> tasks;
        for (const Ipu& ipu : s.ipus) {
            const std::string id = ipu.task_id.value_or("");
            if (tasks.empty() || tasks.back() != id) tasks.push_back(id);
        }
        for (const auto& task : tasks) {
            for (int k = 0; k < 2; ++k) {
                out.annotations.push_back({s.id, task, kSpeakers[k], "enc", quantize_lambda(lambda[k])});
                out.annotations.push_back({s.id, task, kSpeakers[k], "lik", count(ann_rng)});
                out.annotations.push_back({s.id, task, kSpeakers[k], "dom", count(ann_rng)});
            }
        }
    }
    return out;
}

OracleGap oracle_gap(const SynthParams& params, int n_mc) {
    params.validate();
    if (n_mc < 4) throw Error("oracle_gap: n_mc too small");
    const int gen_dim = generative_dim(params);
    const int dim = params.feature_dim;
    const double c = params.consistency;
    const auto mix = mixing_matrix(params);
    Rng rng = derived_rng(params.seed, 2, 0);

    Matrix l0(gen_dim, n_mc), l1(gen_dim, n_mc), l2(gen_dim, n_mc);
    for (int i = 0; i < n_mc; ++i) {
        const Vector b_self = normal_vector(rng, gen_dim, 1.0);
        const Vector b_other = normal_vector(rng, gen_dim, 1.0);
        const double lambda = draw_lambda(rng, params);
        l0.col(i) = b_self + normal_vector(rng, gen_dim, params.noise_sigma);
        l1.col(i) = c * b_other + normal_vector(rng, gen_dim, params.noise_sigma);
        l2.col(i) = c * b_self + lambda * l1.col(i) + normal_vector(rng, gen_dim, params.noise_sigma);
    }
    const Matrix x0 = observe(mix, l0);
    const Matrix x1 = observe(mix, l1);
    const Matrix x2 = observe(mix, l2);

    const int n_fit = n_mc / 2;
    const int n_eval = n_mc - n_fit;
    auto design = [&](const Matrix& a0, const Matrix& a1) {
        Matrix z(2 * dim + 1, a0.cols());
        z.topRows(dim) = a0;
        z.middleRows(dim, dim) = a1;
        z.bottomRows(1).setOnes();
        return z;
    };
    const Matrix z_fit = design(x0.leftCols(n_fit), x1.leftCols(n_fit));
    Matrix gram = z_fit * z_fit.transpose();
    gram.diagonal().array() += 1.0;  // ridge
    const Matrix weights =
        gram.ldlt().solve(z_fit * x2.leftCols(n_fit).transpose()).transpose();

    const Matrix e0 = x0.rightCols(n_eval);
    const Matrix e1 = x1.rightCols(n_eval);
    const Matrix e2 = x2.rightCols(n_eval);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n_eval));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(dim, n_eval);
    for (int i = 0; i < n_eval; ++i) shuffled.col(i) = e1.col(perm[static_cast<std::size_t>(i)]);

    const Vector real_loss = nn::smooth_l1_per_sample(weights * design(e0, e1), e2);
    const Vector fake_loss = nn::smooth_l1_per_sample(weights * design(e0, shuffled), e2);
    const Vector diff = fake_loss - real_loss;

    OracleGap g;
    g.n_eval = n_eval;
    g.gap = diff.mean();
    const double var = (diff.array() - g.gap).square().sum() / (n_eval - 1);
    g.std_error = std::sqrt(var / n_eval);
    g.z = g.std_error > 0.0 ? g.gap / g.std_error : 0.0;
    return g;
}

}  // namespace entrain
