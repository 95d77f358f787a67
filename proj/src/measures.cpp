#include "entrain/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

namespace entrain {

const char* to_string(Measure m) { return m == Measure::dr ? "dr" : "adv"; }

Measure parse_measure(const std::string& name) {
    if (name == "dr") return Measure::dr;
    if (name == "adv" || name == "a") return Measure::adv;
    throw Error(fmt::format("unknown measure '{}' (expected dr or adv)", name));
}

Measure measure_of(const MeasureModel& m) {
    return std::holds_alternative<DrModel>(m) ? Measure::dr : Measure::adv;
}

const TrainingLog& training_log(const MeasureModel& m) {
    return std::visit([](const auto& model) -> const TrainingLog& { return model.log; }, m);
}

TripletMatrices to_matrices(std::span<const TripletSample> samples) {
    TripletMatrices out;
    if (samples.empty()) return out;
    const Eigen::Index dim = samples.front().x2.size();
    const auto n = static_cast<Eigen::Index>(samples.size());
    out.x0.resize(dim, n);
    out.x1.resize(dim, n);
    out.x2.resize(dim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const TripletSample& s = samples[static_cast<std::size_t>(i)];
        if (s.x0.size() != dim || s.x1.size() != dim || s.x2.size() != dim) {
            throw Error(fmt::format("sample {} of session {} has inconsistent feature width", i,
                                    s.session_id));
        }
        out.x0.col(i) = s.x0;
        out.x1.col(i) = s.x1;
        out.x2.col(i) = s.x2;
    }
    return out;
}

double regressor_loss_and_grads(nn::Component& enc, nn::Component& dec, const Matrix& input,
                                const Matrix& target, RegressorGrads* grads) {
    nn::ComponentCache enc_cache;
    nn::ComponentCache dec_cache;
    const Matrix code = nn::component_forward(enc, input, nn::Mode::train, &enc_cache);
    const Matrix prediction = nn::component_forward(dec, code, nn::Mode::train, &dec_cache);
    const double n = static_cast<double>(input.cols());
    const double loss = nn::smooth_l1_per_sample(prediction, target).sum() / n;
    if (grads != nullptr) {
        const Matrix d_pred = nn::smooth_l1_grad(prediction, target) / n;
        const Matrix d_code = nn::component_backward(dec, dec_cache, d_pred, grads->dec);
        nn::component_backward(enc, enc_cache, d_code, grads->enc);
    }
    return loss;
}

AdvLosses adversarial_loss_and_grads(nn::Component& enc, nn::Component& dec1,
                                     nn::Component& dec2, const Matrix& x1, const Matrix& x2,
                                     const Matrix& x0, double grl_lambda, AdvGrads* grads) {
    nn::ComponentCache enc_cache;
    nn::ComponentCache dec1_cache;
    nn::ComponentCache dec2_cache;
    const Matrix code = nn::component_forward(enc, x1, nn::Mode::train, &enc_cache);
    const Matrix pred2 = nn::component_forward(dec1, code, nn::Mode::train, &dec1_cache);
    const Matrix pred0 = nn::component_forward(dec2, nn::grad_reverse_forward(code),
                                               nn::Mode::train, &dec2_cache);
    const double n = static_cast<double>(x1.cols());
    AdvLosses losses;
    losses.x2_loss = nn::smooth_l1_per_sample(pred2, x2).sum() / n;
    losses.x0_loss = nn::smooth_l1_per_sample(pred0, x0).sum() / n;
    if (grads != nullptr) {
        const Matrix d_code2 = nn::component_backward(
            dec1, dec1_cache, nn::smooth_l1_grad(pred2, x2) / n, grads->dec1);
        const Matrix d_code0 = nn::component_backward(
            dec2, dec2_cache, nn::smooth_l1_grad(pred0, x0) / n, grads->dec2);
        nn::component_backward(enc, enc_cache,
                               d_code2 + nn::grad_reverse_backward(d_code0, grl_lambda),
                               grads->enc);
    }
    return losses;
}

namespace {

using Index = Eigen::Index;

Matrix gather(const Matrix& src, std::span<const Index> cols) {
    Matrix out(src.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        out.col(static_cast<Index>(k)) = src.col(cols[k]);
    }
    return out;
}

Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
}

void check_training_inputs(std::span<const TripletSample> train,
                           std::span<const TripletSample> val, const TrainConfig& cfg) {
    if (train.empty()) throw Error("training set is empty");
    if (val.empty()) throw Error("validation set is empty");
    if (cfg.batch_size < 2) throw Error("batch_size must be at least 2");
    if (cfg.max_epochs < 1) throw Error("max_epochs must be at least 1");
    if (cfg.patience < 1) throw Error("patience must be at least 1");
    if (train.size() < 2) throw Error("training set needs at least 2 samples");
}

/// Mini-batch Adam with early stopping on validation loss; restores the
/// best-scoring parameters. Batches shorter than 2 are skipped since batch
/// norm cannot train on them.
template <class Net, class StepFn, class ValFn>
void fit(Net& net, Index n_train, const TrainConfig& cfg, nn::Rng& rng, StepFn step,
         ValFn validate, const std::string& stage, TrainingLog& log) {
    std::vector<Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), Index{0});

    Net best = net;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int since_best = 0;
    const auto batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t len = std::min(batch, order.size() - start);
            if (len < 2) break;
            total += step(net, std::span<const Index>(order).subspan(start, len)) *
                     static_cast<double>(len);
            seen += len;
        }
        const double train_loss = total / static_cast<double>(seen);
        const double val_loss = validate(net);
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
            throw Error(fmt::format("{}: training diverged at epoch {} (train loss {}, val loss {})",
                                    stage, epoch, train_loss, val_loss));
        }
        log.epochs.push_back({stage, epoch, train_loss, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            best = net;
            best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    net = std::move(best);
    log.stages.push_back({stage, best_epoch, best_val});
}

struct Regressor {
    nn::Component enc;
    nn::Component dec;
};

void fit_regressor(Regressor& net, const Matrix& train_in, const Matrix& train_target,
                   const Matrix& val_in, const Matrix& val_target, const TrainConfig& cfg,
                   nn::Rng& rng, const std::string& stage, TrainingLog& log) {
    nn::OptimizerState opt{cfg.adam, 0, {}, {}};
    RegressorGrads grads;
    std::vector<nn::ParamRef> params;
    auto step = [&](Regressor& r, std::span<const Index> cols) {
        const double loss = regressor_loss_and_grads(r.enc, r.dec, gather(train_in, cols),
                                                     gather(train_target, cols), &grads);
        params.clear();
        nn::collect_params(r.enc, grads.enc, params);
        nn::collect_params(r.dec, grads.dec, params);
        nn::adam_step(opt, params);
        return loss;
    };
    auto validate = [&](const Regressor& r) {
        const Matrix pred = nn::component_eval(r.dec, nn::component_eval(r.enc, val_in));
        return nn::smooth_l1_per_sample(pred, val_target).mean();
    };
    fit(net, train_in.cols(), cfg, rng, step, validate, stage, log);
}

Matrix dr_intermediate_unchecked(const DrModel& m, const Matrix& x0) {
    return nn::component_eval(m.dec0, nn::component_eval(m.enc0, x0));
}

void require_trained(bool trained, int feature_dim, const TripletMatrices& batch) {
    if (!trained) throw Error("model is untrained");
    if (batch.size() > 0 && batch.x0.rows() != feature_dim) {
        throw Error(fmt::format("model expects {} features, samples have {}", feature_dim,
                                batch.x0.rows()));
    }
}

}  // namespace

DrModel train_dr(std::span<const TripletSample> train, std::span<const TripletSample> val,
                 const TrainConfig& cfg) {
    check_training_inputs(train, val, cfg);
    const TripletMatrices tr = to_matrices(train);
    const TripletMatrices va = to_matrices(val);
    const int dim = static_cast<int>(tr.x0.rows());
    if (va.x0.rows() != dim) throw Error("train and validation feature widths differ");

    nn::Rng rng(cfg.seed);
    DrModel model;
    model.feature_dim = dim;
    model.config = cfg;
    Regressor stage1{nn::make_encoder(dim, rng), nn::make_decoder(dim, rng)};
    Regressor stage2{nn::make_encoder(2 * dim, rng), nn::make_decoder(dim, rng)};

    fit_regressor(stage1, tr.x0, tr.x2, va.x0, va.x2, cfg, rng, "dr_stage1", model.log);
    model.enc0 = std::move(stage1.enc);
    model.dec0 = std::move(stage1.dec);

    // Stage 1 is frozen from here on; its eval-mode prediction is a fixed input.
    const Matrix train_in = stack_rows(dr_intermediate_unchecked(model, tr.x0), tr.x1);
    const Matrix val_in = stack_rows(dr_intermediate_unchecked(model, va.x0), va.x1);
    fit_regressor(stage2, train_in, tr.x2, val_in, va.x2, cfg, rng, "dr_stage2", model.log);
    model.enc1 = std::move(stage2.enc);
    model.dec1 = std::move(stage2.dec);
    model.trained = true;
    return model;
}

AdvModel train_adv(std::span<const TripletSample> train, std::span<const TripletSample> val,
                   const TrainConfig& cfg) {
    check_training_inputs(train, val, cfg);
    const TripletMatrices tr = to_matrices(train);
    const TripletMatrices va = to_matrices(val);
    const int dim = static_cast<int>(tr.x0.rows());
    if (va.x0.rows() != dim) throw Error("train and validation feature widths differ");

    nn::Rng rng(cfg.seed);
    AdvModel model;
    model.feature_dim = dim;
    model.config = cfg;
    model.enc0 = nn::make_encoder(dim, rng);
    model.dec1 = nn::make_decoder(dim, rng);
    model.dec2 = nn::make_decoder(dim, rng);

    struct Net {
        nn::Component enc;
        nn::Component dec1;
        nn::Component dec2;
    } net{model.enc0, model.dec1, model.dec2};

    nn::OptimizerState opt{cfg.adam, 0, {}, {}};
    AdvGrads grads;
    std::vector<nn::ParamRef> params;
    auto step = [&](Net& n, std::span<const Index> cols) {
        const AdvLosses losses =
            adversarial_loss_and_grads(n.enc, n.dec1, n.dec2, gather(tr.x1, cols),
                                       gather(tr.x2, cols), gather(tr.x0, cols),
                                       cfg.grl_lambda, &grads);
        params.clear();
        nn::collect_params(n.enc, grads.enc, params);
        nn::collect_params(n.dec1, grads.dec1, params);
        nn::collect_params(n.dec2, grads.dec2, params);
        nn::adam_step(opt, params);
        return losses.total();
    };
    auto validate = [&](const Net& n) {
        const Matrix code = nn::component_eval(n.enc, va.x1);
        const double l2 = nn::smooth_l1_per_sample(nn::component_eval(n.dec1, code), va.x2).mean();
        const double l0 = nn::smooth_l1_per_sample(nn::component_eval(n.dec2, code), va.x0).mean();
        return l2 + l0;
    };
    fit(net, tr.size(), cfg, rng, step, validate, "adv", model.log);

    model.enc0 = std::move(net.enc);
    model.dec1 = std::move(net.dec1);
    model.dec2 = std::move(net.dec2);
    model.trained = true;
    return model;
}

MeasureModel train_measure(Measure measure, std::span<const TripletSample> train,
                           std::span<const TripletSample> val, const TrainConfig& cfg) {
    if (measure == Measure::dr) return train_dr(train, val, cfg);
    return train_adv(train, val, cfg);
}

Matrix dr_intermediate(const DrModel& m, const Matrix& x0) {
    if (!m.trained) throw Error("model is untrained");
    return dr_intermediate_unchecked(m, x0);
}

DrParts dr_parts(const DrModel& m, const TripletMatrices& batch) {
    require_trained(m.trained, m.feature_dim, batch);
    const Matrix intermediate = dr_intermediate_unchecked(m, batch.x0);
    const Matrix final_pred = nn::component_eval(
        m.dec1, nn::component_eval(m.enc1, stack_rows(intermediate, batch.x1)));
    return {nn::smooth_l1_per_sample(intermediate, batch.x2),
            nn::smooth_l1_per_sample(final_pred, batch.x2)};
}

AdvParts adv_parts(const AdvModel& m, const TripletMatrices& batch) {
    require_trained(m.trained, m.feature_dim, batch);
    const Matrix code = nn::component_eval(m.enc0, batch.x1);
    return {nn::smooth_l1_per_sample(nn::component_eval(m.dec1, code), batch.x2),
            nn::smooth_l1_per_sample(nn::component_eval(m.dec2, code), batch.x0)};
}

double score_dr(const DrModel& m, const TripletSample& s) {
    const DrParts parts = dr_parts(m, to_matrices({&s, 1}));
    return parts.final_loss[0] - parts.intermediate_loss[0];
}

double score_adv(const AdvModel& m, const TripletSample& s) {
    const AdvParts parts = adv_parts(m, to_matrices({&s, 1}));
    return parts.x2_loss[0] - parts.x0_loss[0];
}

Vector score_samples(const MeasureModel& m, std::span<const TripletSample> samples) {
    const TripletMatrices batch = to_matrices(samples);
    if (const auto* dr = std::get_if<DrModel>(&m)) {
        const DrParts parts = dr_parts(*dr, batch);
        return parts.final_loss - parts.intermediate_loss;
    }
    const AdvParts parts = adv_parts(std::get<AdvModel>(m), batch);
    return parts.x2_loss - parts.x0_loss;
}

double session_score(const MeasureModel& m, std::span<const TripletSample> samples) {
    if (samples.empty()) throw Error("session_score: no samples");
    return score_samples(m, samples).mean();
}

}  // namespace entrain
