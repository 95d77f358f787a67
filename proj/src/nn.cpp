#include "entrain/nn.hpp"

#include <cmath>

#include <fmt/format.h>

namespace entrain::nn {

DenseParams DenseParams::init(int in_dim, int out_dim, Rng& rng) {
    if (in_dim <= 0 || out_dim <= 0) {
        throw Error(fmt::format("dense layer needs positive dims, got {}x{}", out_dim, in_dim));
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseParams p;
    p.W.resize(out_dim, in_dim);
    // Row-major fill so the draw order does not depend on Eigen's storage order.
    for (int r = 0; r < out_dim; ++r) {
        for (int c = 0; c < in_dim; ++c) {
            p.W(r, c) = dist(rng);
        }
    }
    p.b = Vector::Zero(out_dim);
    return p;
}

Matrix dense_forward(const DenseParams& p, const Matrix& x) {
    if (x.rows() != p.W.cols()) {
        throw Error(fmt::format("dense_forward: input width {} != in_dim {}", x.rows(),
                                p.W.cols()));
    }
    Matrix y(p.W.rows(), x.cols());
    y.noalias() = p.W * x;
    y.colwise() += p.b;
    return y;
}

Matrix dense_backward(const DenseParams& p, const Matrix& x, const Matrix& dy,
                      DenseGrads& g) {
    if (dy.rows() != p.W.rows() || dy.cols() != x.cols()) {
        throw Error("dense_backward: gradient shape mismatch");
    }
    g.dW.resize(p.W.rows(), p.W.cols());
    g.dW.noalias() = dy * x.transpose();
    g.db = dy.rowwise().sum();
    Matrix dx(p.W.cols(), dy.cols());
    dx.noalias() = p.W.transpose() * dy;
    return dx;
}

BatchNormState BatchNormState::init(int dim) {
    BatchNormState s;
    s.gamma = Vector::Ones(dim);
    s.beta = Vector::Zero(dim);
    s.running_mean = Vector::Zero(dim);
    s.running_var = Vector::Ones(dim);
    return s;
}

Matrix batchnorm_eval(const BatchNormState& s, const Matrix& x) {
    if (x.rows() != s.dim()) {
        throw Error(fmt::format("batchnorm: input width {} != {}", x.rows(), s.dim()));
    }
    const Vector scale =
        s.gamma.array() / (s.running_var.array() + s.epsilon).sqrt();
    const Vector shift = s.beta.array() - s.running_mean.array() * scale.array();
    Matrix y = x;
    y.array().colwise() *= scale.array();
    y.colwise() += shift;
    return y;
}

Matrix batchnorm_forward(BatchNormState& s, const Matrix& x, Mode mode,
                         BatchNormCache* cache) {
    if (mode == Mode::eval) {
        return batchnorm_eval(s, x);
    }
    if (x.rows() != s.dim()) {
        throw Error(fmt::format("batchnorm: input width {} != {}", x.rows(), s.dim()));
    }
    if (x.cols() < 2) {
        throw Error("batchnorm: train mode needs a batch of at least 2 samples");
    }
    const double n = static_cast<double>(x.cols());
    const Vector mean = x.rowwise().mean();
    Matrix centered = x.colwise() - mean;
    const Vector var = centered.array().square().rowwise().sum() / n;
    const Vector inv_std = (var.array() + s.epsilon).rsqrt();

    centered.array().colwise() *= inv_std.array();
    Matrix y = centered;
    y.array().colwise() *= s.gamma.array();
    y.colwise() += s.beta;

    s.running_mean = (1.0 - s.momentum) * s.running_mean + s.momentum * mean;
    s.running_var = (1.0 - s.momentum) * s.running_var + s.momentum * var;

    if (cache != nullptr) {
        cache->x_hat = std::move(centered);
        cache->inv_std = inv_std;
    }
    return y;
}

Matrix batchnorm_backward(const BatchNormState& s, const BatchNormCache& cache,
                          const Matrix& dy, BatchNormGrads& g) {
    if (dy.rows() != cache.x_hat.rows() || dy.cols() != cache.x_hat.cols()) {
        throw Error("batchnorm_backward: gradient shape mismatch");
    }
    const double n = static_cast<double>(dy.cols());
    g.dbeta = dy.rowwise().sum();
    g.dgamma = (dy.array() * cache.x_hat.array()).rowwise().sum();

    // dx = gamma * inv_std / n * (n dy - sum(dy) - x_hat * sum(dy x_hat))
    Matrix dx = n * dy;
    dx.colwise() -= g.dbeta;
    dx -= (cache.x_hat.array().colwise() * g.dgamma.array()).matrix();
    const Vector coef = s.gamma.array() * cache.inv_std.array() / n;
    dx.array().colwise() *= coef.array();
    return dx;
}

Matrix relu_forward(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
    return (x.array() > 0.0).select(dy, 0.0);
}

double smooth_l1(double d) {
    const double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_derivative(double d) {
    if (d >= 1.0) return 1.0;
    if (d <= -1.0) return -1.0;
    return d;
}

double smooth_l1_loss(const Vector& x, const Vector& y) {
    if (x.size() != y.size()) {
        throw Error(fmt::format("smooth_l1_loss: length mismatch {} vs {}", x.size(), y.size()));
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        total += smooth_l1(x[i] - y[i]);
    }
    return total;
}

Vector smooth_l1_per_sample(const Matrix& prediction, const Matrix& target) {
    if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
        throw Error("smooth_l1: prediction/target shape mismatch");
    }
    Vector out(prediction.cols());
    for (Eigen::Index c = 0; c < prediction.cols(); ++c) {
        double total = 0.0;
        for (Eigen::Index r = 0; r < prediction.rows(); ++r) {
            total += smooth_l1(prediction(r, c) - target(r, c));
        }
        out[c] = total;
    }
    return out;
}

Matrix smooth_l1_grad(const Matrix& prediction, const Matrix& target) {
    if (prediction.rows() != target.rows() || prediction.cols() != target.cols()) {
        throw Error("smooth_l1: prediction/target shape mismatch");
    }
    return (prediction - target).unaryExpr([](double d) { return smooth_l1_derivative(d); });
}

Component Component::init(int in_dim, int hidden_dim, int out_dim, Rng& rng) {
    Component c;
    c.layer1 = DenseParams::init(in_dim, hidden_dim, rng);
    c.bn = BatchNormState::init(hidden_dim);
    c.layer2 = DenseParams::init(hidden_dim, out_dim, rng);
    return c;
}

Matrix component_forward(Component& c, const Matrix& x, Mode mode, ComponentCache* cache) {
    if (mode == Mode::eval) {
        return component_eval(c, x);
    }
    Matrix pre_bn = dense_forward(c.layer1, x);
    BatchNormCache bn_cache;
    Matrix pre_relu = batchnorm_forward(c.bn, pre_bn, Mode::train, &bn_cache);
    Matrix hidden = relu_forward(pre_relu);
    Matrix out = dense_forward(c.layer2, hidden);
    if (cache != nullptr) {
        cache->input = x;
        cache->pre_bn = std::move(pre_bn);
        cache->bn = std::move(bn_cache);
        cache->pre_relu = std::move(pre_relu);
        cache->hidden = std::move(hidden);
    }
    return out;
}

Matrix component_eval(const Component& c, const Matrix& x) {
    return dense_forward(c.layer2,
                         relu_forward(batchnorm_eval(c.bn, dense_forward(c.layer1, x))));
}

Matrix component_backward(const Component& c, const ComponentCache& cache, const Matrix& dy,
                          ComponentGrads& g) {
    Matrix d_hidden = dense_backward(c.layer2, cache.hidden, dy, g.layer2);
    Matrix d_pre_relu = relu_backward(cache.pre_relu, d_hidden);
    Matrix d_pre_bn = batchnorm_backward(c.bn, cache.bn, d_pre_relu, g.bn);
    return dense_backward(c.layer1, cache.input, d_pre_bn, g.layer1);
}

namespace {

std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> span_of(const Matrix& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}
std::span<const double> span_of(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

void collect_params(Component& c, const ComponentGrads& g, std::vector<ParamRef>& out) {
    out.push_back({span_of(c.layer1.W), span_of(g.layer1.dW)});
    out.push_back({span_of(c.layer1.b), span_of(g.layer1.db)});
    out.push_back({span_of(c.bn.gamma), span_of(g.bn.dgamma)});
    out.push_back({span_of(c.bn.beta), span_of(g.bn.dbeta)});
    out.push_back({span_of(c.layer2.W), span_of(g.layer2.dW)});
    out.push_back({span_of(c.layer2.b), span_of(g.layer2.db)});
}

void adam_step(OptimizerState& opt, std::span<const ParamRef> params) {
    if (opt.m.empty()) {
        opt.m.reserve(params.size());
        opt.v.reserve(params.size());
        for (const auto& p : params) {
            opt.m.push_back(Vector::Zero(static_cast<Eigen::Index>(p.value.size())));
            opt.v.push_back(Vector::Zero(static_cast<Eigen::Index>(p.value.size())));
        }
    }
    if (opt.m.size() != params.size()) {
        throw Error(fmt::format("adam_step: optimizer tracks {} tensors, got {}", opt.m.size(),
                                params.size()));
    }
    const AdamConfig& cfg = opt.config;
    ++opt.step;
    const double t = static_cast<double>(opt.step);
    const double bias1 = 1.0 - std::pow(cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(cfg.beta2, t);

    for (std::size_t k = 0; k < params.size(); ++k) {
        const ParamRef& p = params[k];
        if (p.value.size() != p.grad.size() ||
            static_cast<Eigen::Index>(p.value.size()) != opt.m[k].size()) {
            throw Error(fmt::format("adam_step: shape mismatch in tensor {}", k));
        }
        Eigen::Map<Vector> value(p.value.data(), static_cast<Eigen::Index>(p.value.size()));
        Eigen::Map<const Vector> grad(p.grad.data(), static_cast<Eigen::Index>(p.grad.size()));
        Vector& m = opt.m[k];
        Vector& v = opt.v[k];
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
        value.array() -=
            cfg.lr * (m.array() / bias1) / ((v.array() / bias2).sqrt() + cfg.epsilon);
    }
}

}  // namespace entrain::nn
