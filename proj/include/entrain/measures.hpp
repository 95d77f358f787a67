#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "entrain/corpus.hpp"
#include "entrain/nn.hpp"

namespace entrain {

enum class Measure { dr, adv };

const char* to_string(Measure m);
Measure parse_measure(const std::string& name);

struct TrainConfig {
    int batch_size = 128;
    int max_epochs = 100;
    int patience = 5;
    nn::AdamConfig adam;
    double grl_lambda = 1.0;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    std::string stage;
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct StageSummary {
    std::string stage;
    int best_epoch = 0;
    double best_val_loss = 0.0;
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    std::vector<StageSummary> stages;
};

/// Deep residualization: stage 1 predicts x2 from x0 (enc0/dec0) and is
/// frozen; stage 2 predicts x2 from concat(stage-1 prediction, x1).
struct DrModel {
    int feature_dim = 0;
    nn::Component enc0;
    nn::Component dec0;
    nn::Component enc1;
    nn::Component dec1;
    TrainConfig config;
    bool trained = false;
    TrainingLog log;
};

/// Shared encoder over x1 feeding a decoder for x2 and, behind gradient
/// reversal, a decoder for x0.
struct AdvModel {
    int feature_dim = 0;
    nn::Component enc0;
    nn::Component dec1;
    nn::Component dec2;
    TrainConfig config;
    bool trained = false;
    TrainingLog log;
};

using MeasureModel = std::variant<DrModel, AdvModel>;

Measure measure_of(const MeasureModel& m);
const TrainingLog& training_log(const MeasureModel& m);

/// Feature-major batch views of a sample list (one column per sample).
struct TripletMatrices {
    Matrix x0;
    Matrix x1;
    Matrix x2;
    Eigen::Index size() const { return x0.cols(); }
};

TripletMatrices to_matrices(std::span<const TripletSample> samples);

DrModel train_dr(std::span<const TripletSample> train, std::span<const TripletSample> val,
                 const TrainConfig& cfg);
AdvModel train_adv(std::span<const TripletSample> train, std::span<const TripletSample> val,
                   const TrainConfig& cfg);
MeasureModel train_measure(Measure measure, std::span<const TripletSample> train,
                           std::span<const TripletSample> val, const TrainConfig& cfg);

/// Per-sample losses behind a DR score: score = final - intermediate.
struct DrParts {
    Vector intermediate_loss;  // L(x2, x2_hat')
    Vector final_loss;         // L(x2, x2_hat)
};

/// Per-sample losses behind an A score: score = x2_loss - x0_loss.
struct AdvParts {
    Vector x2_loss;
    Vector x0_loss;
};

DrParts dr_parts(const DrModel& m, const TripletMatrices& batch);
AdvParts adv_parts(const AdvModel& m, const TripletMatrices& batch);

/// Stage-1 prediction x2_hat' (eval mode).
Matrix dr_intermediate(const DrModel& m, const Matrix& x0);

double score_dr(const DrModel& m, const TripletSample& s);
double score_adv(const AdvModel& m, const TripletSample& s);
Vector score_samples(const MeasureModel& m, std::span<const TripletSample> samples);
/// Mean per-sample score; throws on an empty list.
double session_score(const MeasureModel& m, std::span<const TripletSample> samples);

// Batch objectives in train mode, shared by training and gradient checking.
// Both return mean per-sample losses and gradients of those means.

struct RegressorGrads {
    nn::ComponentGrads enc;
    nn::ComponentGrads dec;
};

double regressor_loss_and_grads(nn::Component& enc, nn::Component& dec, const Matrix& input,
                                const Matrix& target, RegressorGrads* grads);

struct AdvGrads {
    nn::ComponentGrads enc;
    nn::ComponentGrads dec1;
    nn::ComponentGrads dec2;
};

struct AdvLosses {
    double x2_loss = 0.0;
    double x0_loss = 0.0;
    double total() const { return x2_loss + x0_loss; }
};

/// The encoder receives dec1's gradient plus -grl_lambda times dec2's.
AdvLosses adversarial_loss_and_grads(nn::Component& enc, nn::Component& dec1,
                                     nn::Component& dec2, const Matrix& x1, const Matrix& x2,
                                     const Matrix& x0, double grl_lambda, AdvGrads* grads);

}  // namespace entrain
