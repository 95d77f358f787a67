#pragma once

// Small feed-forward network engine: dense layers, batch normalization, ReLU,
// smooth-L1 loss, gradient reversal and Adam. Backward passes are written by
// hand; gradcheck.hpp verifies them against finite differences.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "entrain/common.hpp"

namespace entrain::nn {

inline constexpr int kHiddenWidth = 128;
inline constexpr int kCodeWidth = 30;

enum class Mode { train, eval };

using Rng = std::mt19937_64;

struct DenseParams {
    Matrix W;  // out_dim x in_dim
    Vector b;  // out_dim

    int in_dim() const { return static_cast<int>(W.cols()); }
    int out_dim() const { return static_cast<int>(W.rows()); }

    /// Uniform(-1/sqrt(in_dim), 1/sqrt(in_dim)) weights, zero bias.
    static DenseParams init(int in_dim, int out_dim, Rng& rng);
};

struct DenseGrads {
    Matrix dW;
    Vector db;
};

Matrix dense_forward(const DenseParams& p, const Matrix& x);
/// Writes parameter gradients into g and returns dL/dx.
Matrix dense_backward(const DenseParams& p, const Matrix& x, const Matrix& dy,
                      DenseGrads& g);

struct BatchNormState {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    int dim() const { return static_cast<int>(gamma.size()); }
    static BatchNormState init(int dim);
};

struct BatchNormCache {
    Matrix x_hat;
    Vector inv_std;
};

struct BatchNormGrads {
    Vector dgamma;
    Vector dbeta;
};

/// Train mode normalizes with the batch's population statistics and folds
/// them into the running averages; eval mode reads the running averages.
/// The cache is filled in train mode only.
Matrix batchnorm_forward(BatchNormState& s, const Matrix& x, Mode mode,
                         BatchNormCache* cache = nullptr);
Matrix batchnorm_eval(const BatchNormState& s, const Matrix& x);
Matrix batchnorm_backward(const BatchNormState& s, const BatchNormCache& cache,
                          const Matrix& dy, BatchNormGrads& g);

Matrix relu_forward(const Matrix& x);
Matrix relu_backward(const Matrix& x, const Matrix& dy);

/// 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise.
double smooth_l1(double d);
double smooth_l1_derivative(double d);
/// Summed (not averaged) smooth-L1 over components.
double smooth_l1_loss(const Vector& x, const Vector& y);
/// Per-column summed loss between prediction and target batches.
Vector smooth_l1_per_sample(const Matrix& prediction, const Matrix& target);
/// d(per-sample loss)/d(prediction), elementwise.
Matrix smooth_l1_grad(const Matrix& prediction, const Matrix& target);

inline const Matrix& grad_reverse_forward(const Matrix& x) { return x; }
inline Matrix grad_reverse_backward(const Matrix& dy, double lambda) {
    return -lambda * dy;
}

/// Two fully connected layers with batch norm and ReLU between them:
/// layer2(relu(bn(layer1(x)))).
struct Component {
    DenseParams layer1;
    BatchNormState bn;
    DenseParams layer2;

    int in_dim() const { return layer1.in_dim(); }
    int out_dim() const { return layer2.out_dim(); }
    static Component init(int in_dim, int hidden_dim, int out_dim, Rng& rng);
};

inline Component make_encoder(int in_dim, Rng& rng) {
    return Component::init(in_dim, kHiddenWidth, kCodeWidth, rng);
}
inline Component make_decoder(int out_dim, Rng& rng) {
    return Component::init(kCodeWidth, kHiddenWidth, out_dim, rng);
}

struct ComponentCache {
    Matrix input;
    Matrix pre_bn;
    BatchNormCache bn;
    Matrix pre_relu;
    Matrix hidden;
};

struct ComponentGrads {
    DenseGrads layer1;
    BatchNormGrads bn;
    DenseGrads layer2;
};

Matrix component_forward(Component& c, const Matrix& x, Mode mode,
                         ComponentCache* cache = nullptr);
Matrix component_eval(const Component& c, const Matrix& x);
Matrix component_backward(const Component& c, const ComponentCache& cache,
                          const Matrix& dy, ComponentGrads& g);

/// A trainable tensor paired with its gradient buffer.
struct ParamRef {
    std::span<double> value;
    std::span<const double> grad;
};

void collect_params(Component& c, const ComponentGrads& g, std::vector<ParamRef>& out);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamConfig config;
    std::int64_t step = 0;
    std::vector<Vector> m;
    std::vector<Vector> v;
};

/// Bias-corrected Adam update. Moment buffers are sized on the first call and
/// must see the same parameter list (shapes and order) afterwards.
void adam_step(OptimizerState& opt, std::span<const ParamRef> params);

}  // namespace entrain::nn
