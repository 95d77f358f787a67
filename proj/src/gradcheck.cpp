#include "entrain/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>

#include "entrain/measures.hpp"
#include "entrain/nn.hpp"

namespace entrain::gradcheck {

namespace {

using nn::Component;
using nn::ComponentCache;
using nn::ComponentGrads;
using nn::Mode;
using nn::Rng;

/// Loss at the current parameter values together with every ReLU's on/off
/// state, so probes straddling a kink can be recognised.
struct Probe {
    double loss = 0.0;
    std::vector<bool> pattern;
    /// Magnitude of the terms summed into `loss`, for round-off estimates
    /// when the loss is a difference; |loss| when zero.
    double scale = 0.0;
};

double magnitude(const Probe& p) { return std::max(std::abs(p.loss), p.scale); }

using ProbeFn = std::function<Probe()>;

void append_pattern(const ComponentCache& cache, std::vector<bool>& pattern) {
    const Matrix& z = cache.pre_relu;
    for (Eigen::Index i = 0; i < z.size(); ++i) pattern.push_back(z.data()[i] > 0.0);
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

/// Perturbs coordinates of `value` (all, or `samples` random ones) and folds
/// the comparison with `analytic` into `result`.
void check_array(std::span<double> value, std::span<const double> analytic, const ProbeFn& probe,
                 const Options& opt, int samples, Rng& rng, CheckResult& result) {
    std::vector<std::size_t> coords(value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (samples > 0 && static_cast<std::size_t>(samples) < coords.size()) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(static_cast<std::size_t>(samples));
    }
    const std::vector<bool> base = probe().pattern;
    for (std::size_t i : coords) {
        const double saved = value[i];
        value[i] = saved + opt.step;
        const Probe plus = probe();
        value[i] = saved - opt.step;
        const Probe minus = probe();
        value[i] = saved;
        if (plus.pattern != base || minus.pattern != base) {
            ++result.skipped_kinks;
            continue;
        }
        const double numeric = (plus.loss - minus.loss) / (2.0 * opt.step);
        // The difference quotient cannot resolve gradients below the loss's
        // round-off scale, so those are compared on an absolute basis.
        const double roundoff = 4.0 * std::numeric_limits<double>::epsilon() *
                                std::max(magnitude(plus), magnitude(minus)) / opt.step;
        const double floor = std::max(opt.abs_floor, roundoff / opt.tolerance);
        result.max_rel_error =
            std::max(result.max_rel_error, relative_error(analytic[i], numeric, floor));
        ++result.checked;
    }
}

std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> cspan(const Matrix& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> cspan(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

void check_component(Component& c, const ComponentGrads& g, const ProbeFn& probe,
                     const Options& opt, int samples, Rng& rng, CheckResult& result) {
    check_array(span_of(c.layer1.W), cspan(g.layer1.dW), probe, opt, samples, rng, result);
    check_array(span_of(c.layer1.b), cspan(g.layer1.db), probe, opt, samples, rng, result);
    check_array(span_of(c.bn.gamma), cspan(g.bn.dgamma), probe, opt, samples, rng, result);
    check_array(span_of(c.bn.beta), cspan(g.bn.dbeta), probe, opt, samples, rng, result);
    check_array(span_of(c.layer2.W), cspan(g.layer2.dW), probe, opt, samples, rng, result);
    check_array(span_of(c.layer2.b), cspan(g.layer2.db), probe, opt, samples, rng, result);
}

/// Non-trivial batch-norm affine parameters so their gradients are exercised
/// away from the (1, 0) initialisation.
void jitter_bn(Component& c, Rng& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (Eigen::Index i = 0; i < c.bn.gamma.size(); ++i) {
        c.bn.gamma[i] = 1.0 + u(rng);
        c.bn.beta[i] = u(rng);
    }
}

bool near_smooth_l1_kink(const Matrix& prediction, const Matrix& target) {
    const Matrix d = prediction - target;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        if (std::abs(std::abs(d.data()[i]) - 1.0) <= 1e-3) return true;
    }
    return false;
}

/// Draws targets until no residual lies within 1e-3 of the smooth-L1 kink.
Matrix kink_free_target(const std::function<Matrix()>& predict, Eigen::Index rows,
                        Eigen::Index cols, Rng& rng) {
    const Matrix prediction = predict();
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Matrix target = random_matrix(rows, cols, rng);
        if (!near_smooth_l1_kink(prediction, target)) return target;
    }
    throw Error("gradcheck: could not sample a kink-free target");
}

void finish(CheckResult& r, const Options& opt) {
    r.passed = r.checked > 0 && r.max_rel_error < opt.tolerance;
}

CheckResult check_dense(const Options& opt, Rng& rng) {
    CheckResult r{"dense"};
    nn::DenseParams p = nn::DenseParams::init(5, 4, rng);
    p.b = random_matrix(4, 1, rng);
    Matrix x = random_matrix(5, opt.batch, rng);
    const Matrix weight = random_matrix(4, opt.batch, rng);
    nn::DenseGrads g;
    const Matrix dx = nn::dense_backward(p, x, weight, g);
    const ProbeFn probe = [&] { return Probe{(weight.array() * nn::dense_forward(p, x).array()).sum(), {}}; };
    check_array(span_of(p.W), cspan(g.dW), probe, opt, 0, rng, r);
    check_array(span_of(p.b), cspan(g.db), probe, opt, 0, rng, r);
    check_array(span_of(x), cspan(dx), probe, opt, 0, rng, r);
    finish(r, opt);
    return r;
}

CheckResult check_batchnorm(const Options& opt, Rng& rng) {
    CheckResult r{"batchnorm"};
    nn::BatchNormState s = nn::BatchNormState::init(4);
    s.gamma = Vector::Constant(4, 1.0) + random_matrix(4, 1, rng, 0.3);
    s.beta = random_matrix(4, 1, rng);
    Matrix x = random_matrix(4, opt.batch, rng, 2.0);
    const Matrix weight = random_matrix(4, opt.batch, rng);
    nn::BatchNormCache cache;
    nn::batchnorm_forward(s, x, Mode::train, &cache);
    nn::BatchNormGrads g;
    const Matrix dx = nn::batchnorm_backward(s, cache, weight, g);
    const ProbeFn probe = [&] {
        nn::BatchNormState scratch = s;
        return Probe{(weight.array() * nn::batchnorm_forward(scratch, x, Mode::train).array()).sum(), {}};
    };
    check_array(span_of(s.gamma), cspan(g.dgamma), probe, opt, 0, rng, r);
    check_array(span_of(s.beta), cspan(g.dbeta), probe, opt, 0, rng, r);
    check_array(span_of(x), cspan(dx), probe, opt, 0, rng, r);
    finish(r, opt);
    return r;
}

CheckResult check_relu(const Options& opt, Rng& rng) {
    CheckResult r{"relu"};
    Matrix x = random_matrix(5, opt.batch, rng);
    // Keep every input clear of the kink at 0.
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (std::abs(x.data()[i]) < 1e-2) x.data()[i] = x.data()[i] < 0 ? -0.5 : 0.5;
    }
    const Matrix weight = random_matrix(5, opt.batch, rng);
    const Matrix dx = nn::relu_backward(x, weight);
    const ProbeFn probe = [&] {
        Probe p{(weight.array() * nn::relu_forward(x).array()).sum(), {}};
        for (Eigen::Index i = 0; i < x.size(); ++i) p.pattern.push_back(x.data()[i] > 0.0);
        return p;
    };
    check_array(span_of(x), cspan(dx), probe, opt, 0, rng, r);
    finish(r, opt);
    return r;
}

CheckResult check_smooth_l1(const Options& opt, Rng& rng) {
    CheckResult r{"smooth_l1"};
    Matrix prediction = random_matrix(5, opt.batch, rng, 1.5);
    const Matrix target =
        kink_free_target([&] { return prediction; }, prediction.rows(), prediction.cols(), rng);
    const Matrix grad = nn::smooth_l1_grad(prediction, target);
    const ProbeFn probe = [&] { return Probe{nn::smooth_l1_per_sample(prediction, target).sum(), {}}; };
    check_array(span_of(prediction), cspan(grad), probe, opt, 0, rng, r);
    finish(r, opt);
    return r;
}

CheckResult check_component_alone(const Options& opt, Rng& rng) {
    CheckResult r{"component"};
    Component c = Component::init(5, 7, 3, rng);
    jitter_bn(c, rng);
    Matrix x = random_matrix(5, opt.batch, rng);
    const Matrix weight = random_matrix(3, opt.batch, rng);
    ComponentCache cache;
    nn::component_forward(c, x, Mode::train, &cache);
    ComponentGrads g;
    const Matrix dx = nn::component_backward(c, cache, weight, g);
    const ProbeFn probe = [&] {
        Component scratch = c;
        ComponentCache pc;
        Probe p{(weight.array() * nn::component_forward(scratch, x, Mode::train, &pc).array()).sum(), {}};
        append_pattern(pc, p.pattern);
        return p;
    };
    check_component(c, g, probe, opt, 0, rng, r);
    check_array(span_of(x), cspan(dx), probe, opt, 0, rng, r);
    finish(r, opt);
    return r;
}

/// Independent forward of an encoder/decoder pair: mean summed smooth-L1.
Probe regressor_probe(const Component& enc, const Component& dec, const Matrix& input,
                      const Matrix& target) {
    Component e = enc;
    Component d = dec;
    ComponentCache ec;
    ComponentCache dc;
    const Matrix prediction = nn::component_forward(
        d, nn::component_forward(e, input, Mode::train, &ec), Mode::train, &dc);
    Probe p{nn::smooth_l1_per_sample(prediction, target).mean(), {}};
    append_pattern(ec, p.pattern);
    append_pattern(dc, p.pattern);
    return p;
}

Matrix regressor_predict(const Component& enc, const Component& dec, const Matrix& input) {
    Component e = enc;
    Component d = dec;
    return nn::component_forward(d, nn::component_forward(e, input, Mode::train), Mode::train);
}

void check_regressor(Component& enc, Component& dec, const Matrix& input, const Matrix& target,
                     const Options& opt, int samples, Rng& rng, CheckResult& r) {
    RegressorGrads g;
    Component e = enc;
    Component d = dec;
    regressor_loss_and_grads(e, d, input, target, &g);
    const ProbeFn probe = [&] { return regressor_probe(enc, dec, input, target); };
    check_component(enc, g.enc, probe, opt, samples, rng, r);
    check_component(dec, g.dec, probe, opt, samples, rng, r);
}

struct DrFixture {
    Component enc0, dec0, enc1, dec1;
    Matrix x0, x1, x2, stage2_input;
};

DrFixture make_dr_fixture(int dim, int batch, Rng& rng) {
    DrFixture f;
    f.enc0 = nn::make_encoder(dim, rng);
    f.dec0 = nn::make_decoder(dim, rng);
    f.enc1 = nn::make_encoder(2 * dim, rng);
    f.dec1 = nn::make_decoder(dim, rng);
    for (Component* c : {&f.enc0, &f.dec0, &f.enc1, &f.dec1}) jitter_bn(*c, rng);
    f.x0 = random_matrix(dim, batch, rng);
    f.x1 = random_matrix(dim, batch, rng);
    // Stage-1 running statistics feed the eval-mode intermediate prediction.
    nn::component_forward(f.dec0, nn::component_forward(f.enc0, f.x0, Mode::train), Mode::train);
    const Matrix intermediate = nn::component_eval(f.dec0, nn::component_eval(f.enc0, f.x0));
    f.stage2_input.resize(2 * dim, batch);
    f.stage2_input.topRows(dim) = intermediate;
    f.stage2_input.bottomRows(dim) = f.x1;
    const Matrix pred1 = regressor_predict(f.enc0, f.dec0, f.x0);
    const Matrix pred2 = regressor_predict(f.enc1, f.dec1, f.stage2_input);
    for (int attempt = 0;; ++attempt) {
        f.x2 = random_matrix(dim, batch, rng);
        if (!near_smooth_l1_kink(pred1, f.x2) && !near_smooth_l1_kink(pred2, f.x2)) break;
        if (attempt > 1000) throw Error("gradcheck: could not sample a kink-free target");
    }
    return f;
}

CheckResult check_dr(const std::string& name, int stage, int dim, int samples, const Options& opt,
                     Rng& rng) {
    CheckResult r{name};
    DrFixture f = make_dr_fixture(dim, opt.batch, rng);
    if (stage == 1) {
        check_regressor(f.enc0, f.dec0, f.x0, f.x2, opt, samples, rng, r);
    } else {
        check_regressor(f.enc1, f.dec1, f.stage2_input, f.x2, opt, samples, rng, r);
    }
    finish(r, opt);
    return r;
}

struct AdvFixture {
    Component enc, dec1, dec2;
    Matrix x0, x1, x2;
};

AdvFixture make_adv_fixture(int dim, int batch, Rng& rng) {
    AdvFixture f;
    f.enc = nn::make_encoder(dim, rng);
    f.dec1 = nn::make_decoder(dim, rng);
    f.dec2 = nn::make_decoder(dim, rng);
    for (Component* c : {&f.enc, &f.dec1, &f.dec2}) jitter_bn(*c, rng);
    f.x1 = random_matrix(dim, batch, rng);
    const Matrix p2 = regressor_predict(f.enc, f.dec1, f.x1);
    const Matrix p0 = regressor_predict(f.enc, f.dec2, f.x1);
    f.x2 = kink_free_target([&] { return p2; }, dim, batch, rng);
    f.x0 = kink_free_target([&] { return p0; }, dim, batch, rng);
    return f;
}

/// Independent forward of the adversarial network. Returns the x2 and x0 losses.
std::pair<double, double> adv_losses(const AdvFixture& f, std::vector<bool>* pattern) {
    Component enc = f.enc;
    Component dec1 = f.dec1;
    Component dec2 = f.dec2;
    ComponentCache ec, c1, c2;
    const Matrix code = nn::component_forward(enc, f.x1, Mode::train, &ec);
    const Matrix p2 = nn::component_forward(dec1, code, Mode::train, &c1);
    const Matrix p0 = nn::component_forward(dec2, code, Mode::train, &c2);
    if (pattern != nullptr) {
        append_pattern(ec, *pattern);
        append_pattern(c1, *pattern);
        append_pattern(c2, *pattern);
    }
    return {nn::smooth_l1_per_sample(p2, f.x2).mean(), nn::smooth_l1_per_sample(p0, f.x0).mean()};
}

CheckResult check_adversarial(const std::string& name, int dim, int samples, double lambda,
                              const Options& opt, Rng& rng) {
    CheckResult r{name};
    AdvFixture f = make_adv_fixture(dim, opt.batch, rng);
    AdvGrads g;
    {
        AdvFixture scratch = f;
        adversarial_loss_and_grads(scratch.enc, scratch.dec1, scratch.dec2, f.x1, f.x2, f.x0,
                                   lambda, &g);
    }
    // The encoder descends L2 - lambda * L0; each decoder descends its own
    // loss, so the total L2 + L0 is the right reference for both of them.
    const ProbeFn encoder_view = [&] {
        Probe p;
        const auto [l2, l0] = adv_losses(f, &p.pattern);
        p.loss = l2 - lambda * l0;
        p.scale = l2 + lambda * l0;
        return p;
    };
    const ProbeFn decoder_view = [&] {
        Probe p;
        const auto [l2, l0] = adv_losses(f, &p.pattern);
        p.loss = l2 + l0;
        return p;
    };
    check_component(f.enc, g.enc, encoder_view, opt, samples, rng, r);
    check_component(f.dec1, g.dec1, decoder_view, opt, samples, rng, r);
    check_component(f.dec2, g.dec2, decoder_view, opt, samples, rng, r);
    finish(r, opt);
    return r;
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data());
}

bool same_bits(const Vector& a, const Vector& b) {
    return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

/// The encoder gradient arriving through the reversal layer must be the exact
/// negation of the same path without it.
CheckResult check_reversal(const Options& opt, Rng& rng) {
    CheckResult r{"grad_reverse_exact"};
    AdvFixture f = make_adv_fixture(opt.feature_dim, opt.batch, rng);
    ComponentCache ec, c2;
    const Matrix code = nn::component_forward(f.enc, f.x1, Mode::train, &ec);
    const Matrix& reversed_in = nn::grad_reverse_forward(code);
    const bool forward_identity = same_bits(reversed_in, code);
    const Matrix p0 = nn::component_forward(f.dec2, reversed_in, Mode::train, &c2);
    ComponentGrads dec_g;
    const Matrix d_code =
        nn::component_backward(f.dec2, c2, nn::smooth_l1_grad(p0, f.x0), dec_g);

    ComponentGrads plain, reversed;
    const Matrix dx_plain = nn::component_backward(f.enc, ec, d_code, plain);
    const Matrix dx_rev =
        nn::component_backward(f.enc, ec, nn::grad_reverse_backward(d_code, 1.0), reversed);
    const bool exact =
        forward_identity && same_bits(dx_rev, -dx_plain) &&
        same_bits(reversed.layer1.dW, -plain.layer1.dW) &&
        same_bits(reversed.layer1.db, -plain.layer1.db) &&
        same_bits(reversed.bn.dgamma, -plain.bn.dgamma) &&
        same_bits(reversed.bn.dbeta, -plain.bn.dbeta) &&
        same_bits(reversed.layer2.dW, -plain.layer2.dW) &&
        same_bits(reversed.layer2.db, -plain.layer2.db);
    r.checked = static_cast<int>(dx_plain.size() + plain.layer1.dW.size() + plain.layer1.db.size() +
                                 plain.bn.dgamma.size() + plain.bn.dbeta.size() +
                                 plain.layer2.dW.size() + plain.layer2.db.size());
    r.max_rel_error = exact ? 0.0 : 1.0;
    r.passed = exact;
    return r;
}

}  // namespace

bool Report::passed() const {
    return !checks.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

Report run_all(const Options& options) {
    Report report;
    report.options = options;
    Rng rng(options.seed);
    const int dim = options.feature_dim;
    report.checks.push_back(check_dense(options, rng));
    report.checks.push_back(check_batchnorm(options, rng));
    report.checks.push_back(check_relu(options, rng));
    report.checks.push_back(check_smooth_l1(options, rng));
    report.checks.push_back(check_component_alone(options, rng));
    report.checks.push_back(check_dr("dr_stage1", 1, dim, 0, options, rng));
    report.checks.push_back(check_dr("dr_stage2", 2, dim, 0, options, rng));
    report.checks.push_back(check_adversarial("adversarial", dim, 0, 1.0, options, rng));
    report.checks.push_back(check_adversarial("adversarial_lambda2", dim, 0, 2.0, options, rng));
    report.checks.push_back(check_reversal(options, rng));
    if (options.full_width_samples > 0) {
        const int n = options.full_width_samples;
        report.checks.push_back(check_dr("dr_stage1_228", 1, 228, n, options, rng));
        report.checks.push_back(check_dr("dr_stage2_228", 2, 228, n, options, rng));
        report.checks.push_back(check_adversarial("adversarial_228", 228, n, 1.0, options, rng));
    }
    return report;
}

}  // namespace entrain::gradcheck
