#ifndef TREID_ENCODER_HPP
#define TREID_ENCODER_HPP

// Fully connected encoder f(x) = normalize(L_n(relu(... relu(L_1(x))))),
// its analytic backward pass, SGD with momentum and the momentum (key)
// encoder update.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "treid/error.hpp"
#include "treid/linalg.hpp"
#include "treid/rng.hpp"

namespace treid {

/// Layer widths including input and output, e.g. {64, 256, 128}.
using EncoderDims = std::vector<std::size_t>;

template <class T>
struct Layer {
    Matrix<T> weight;  // out x in
    std::vector<T> bias;

    bool operator==(const Layer&) const = default;
};

template <class T>
struct EncoderParams {
    std::vector<Layer<T>> layers;

    EncoderDims dims() const {
        EncoderDims d;
        if (layers.empty()) return d;
        d.push_back(layers.front().weight.cols());
        for (const auto& l : layers) d.push_back(l.weight.rows());
        return d;
    }
    std::size_t in_dim() const { return layers.front().weight.cols(); }
    std::size_t out_dim() const { return layers.back().weight.rows(); }
    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weight.size() + l.bias.size();
        return n;
    }

    template <class U>
    EncoderParams<U> cast() const {
        EncoderParams<U> out;
        for (const auto& l : layers)
            out.layers.push_back({l.weight.template cast<U>(), std::vector<U>(l.bias.begin(), l.bias.end())});
        return out;
    }

    bool operator==(const EncoderParams&) const = default;
};

/// Gradients share the parameter layout.
template <class T>
using EncoderGrads = EncoderParams<T>;

template <class T>
struct EncoderPair {
    EncoderParams<T> query;
    EncoderParams<T> key;
    T momentum = T(0.999);
};

template <class T>
EncoderParams<T> zeros_like(const EncoderParams<T>& p) {
    EncoderParams<T> z;
    for (const auto& l : p.layers)
        z.layers.push_back({Matrix<T>(l.weight.rows(), l.weight.cols()), std::vector<T>(l.bias.size(), T(0))});
    return z;
}

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights
/// and biases. The key encoder starts as an exact copy of the query encoder.
template <class T>
EncoderPair<T> init_encoder(const EncoderDims& dims, std::uint64_t seed, T momentum = T(0.999)) {
    require(dims.size() >= 2, "init_encoder: need at least input and output widths");
    for (auto w : dims)
        if (w == 0) throw InvalidInput("init_encoder: zero-width layer");
    require(momentum >= T(0) && momentum <= T(1), "init_encoder: momentum must lie in [0, 1]");

    Rng rng = make_rng(seed, {kInitStream});
    EncoderPair<T> pair;
    pair.momentum = momentum;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[i]));
        std::uniform_real_distribution<double> u(-bound, bound);
        Layer<T> l{Matrix<T>(dims[i + 1], dims[i]), std::vector<T>(dims[i + 1])};
        for (auto& w : l.weight.storage()) w = static_cast<T>(u(rng));
        for (auto& b : l.bias) b = static_cast<T>(u(rng));
        pair.query.layers.push_back(std::move(l));
    }
    pair.key = pair.query;
    return pair;
}

/// Intermediate values kept for backward.
template <class T>
struct ForwardCache {
    std::vector<Matrix<T>> inputs;  // input to each layer
    std::vector<Matrix<T>> pre;     // pre-activation of each layer
    std::vector<T> norms;           // ||z|| per row before normalization
    Matrix<T> output;               // unit-norm rows
};

template <class T>
Matrix<T> forward(const EncoderParams<T>& params, const Matrix<T>& batch, ForwardCache<T>* cache = nullptr) {
    require(!params.layers.empty(), "forward: empty encoder");
    require(batch.cols() == params.in_dim(), "forward: batch width does not match encoder input");
    if (!all_finite(batch)) throw InvalidInput("forward: non-finite input");

    Matrix<T> x = batch;
    if (cache) {
        cache->inputs.clear();
        cache->pre.clear();
    }
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& layer = params.layers[li];
        Matrix<T> h = matmul_abt(x, layer.weight);
        for (std::size_t r = 0; r < h.rows(); ++r) {
            auto row = h.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.bias[c];
        }
        if (cache) {
            cache->inputs.push_back(std::move(x));
            cache->pre.push_back(h);
        }
        if (li + 1 < params.layers.size())
            for (auto& v : h.storage()) v = v > T(0) ? v : T(0);
        x = std::move(h);
    }

    std::vector<T> norms(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto row = x.row(r);
        T n = norm(std::span<const T>(row));
        // An all-zero pre-normalization row has no direction; pin it to a
        // tiny norm so the output stays finite.
        if (!(n > T(0))) n = std::numeric_limits<T>::min();
        norms[r] = n;
        for (auto& v : row) v /= n;
    }
    if (cache) {
        cache->norms = std::move(norms);
        cache->output = x;
    }
    return x;
}

/// Gradients of sum_r <grad_out[r], f(x_r)> w.r.t. every parameter, including
/// the Jacobian of the final L2 normalization. If grad_input is non-null it
/// receives the gradient w.r.t. the batch.
template <class T>
EncoderGrads<T> backward(const EncoderParams<T>& params, const ForwardCache<T>& cache, const Matrix<T>& grad_out,
                         Matrix<T>* grad_input = nullptr) {
    require(grad_out.rows() == cache.output.rows() && grad_out.cols() == cache.output.cols(),
            "backward: gradient shape does not match forward output");
    require(cache.pre.size() == params.layers.size(), "backward: cache does not belong to this encoder");

    // d z = (d y - y <y, d y>) / ||z||
    Matrix<T> delta(grad_out.rows(), grad_out.cols());
    for (std::size_t r = 0; r < delta.rows(); ++r) {
        auto y = cache.output.row(r);
        auto g = grad_out.row(r);
        const T proj = dot(y, g);
        auto d = delta.row(r);
        for (std::size_t c = 0; c < d.size(); ++c) d[c] = (g[c] - y[c] * proj) / cache.norms[r];
    }

    EncoderGrads<T> grads = zeros_like(params);
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& layer = params.layers[li];
        auto& gl = grads.layers[li];
        gl.weight = matmul_atb(delta, cache.inputs[li]);
        for (std::size_t r = 0; r < delta.rows(); ++r) {
            auto d = delta.row(r);
            for (std::size_t c = 0; c < d.size(); ++c) gl.bias[c] += d[c];
        }
        if (li == 0 && !grad_input) break;
        Matrix<T> dx = matmul(delta, layer.weight);
        if (li > 0) {
            const auto& pre = cache.pre[li - 1];
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (!(pre.storage()[i] > T(0))) dx.storage()[i] = T(0);
            delta = std::move(dx);
        } else {
            *grad_input = std::move(dx);
        }
    }
    return grads;
}

struct OptimConfig {
    double base_lr = 0.03;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

template <class T>
struct OptimState {
    EncoderParams<T> velocity;
    OptimConfig config;
};

template <class T>
OptimState<T> make_optim_state(const EncoderParams<T>& params, OptimConfig config = {}) {
    return {zeros_like(params), config};
}

/// velocity <- momentum * velocity + grad + wd * param; param <- param - lr * velocity
template <class T>
void sgd_step(EncoderParams<T>& params, const EncoderGrads<T>& grads, OptimState<T>& optim, T lr) {
    require(grads.layers.size() == params.layers.size() && optim.velocity.layers.size() == params.layers.size(),
            "sgd_step: shape mismatch");
    const T mu = static_cast<T>(optim.config.momentum);
    const T wd = static_cast<T>(optim.config.weight_decay);
    for (const auto& l : grads.layers)
        if (!all_finite(l.weight) || !all_finite(std::span<const T>(l.bias)))
            throw TrainingDivergence("sgd_step: non-finite gradient");

    auto update = [&](std::vector<T>& p, const std::vector<T>& g, std::vector<T>& v) {
        require(p.size() == g.size() && p.size() == v.size(), "sgd_step: shape mismatch");
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = mu * v[i] + g[i] + wd * p[i];
            p[i] -= lr * v[i];
        }
    };
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        update(params.layers[li].weight.storage(), grads.layers[li].weight.storage(),
               optim.velocity.layers[li].weight.storage());
        update(params.layers[li].bias, grads.layers[li].bias, optim.velocity.layers[li].bias);
    }
}

/// 0.5 * base_lr * (1 + cos(pi * epoch / total_epochs))
inline double cosine_lr(double epoch, double total_epochs, double base_lr) {
    if (!(total_epochs > 0)) throw InvalidInput("cosine_lr: total_epochs must be positive");
    require(epoch >= 0 && epoch <= total_epochs, "cosine_lr: epoch out of range");
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * epoch / total_epochs));
}

/// key <- m * key + (1 - m) * query, element-wise.
template <class T>
void momentum_update(EncoderPair<T>& pair) {
    require(pair.key.layers.size() == pair.query.layers.size(), "momentum_update: shape mismatch");
    const T m = pair.momentum;
    auto blend = [m](std::vector<T>& k, const std::vector<T>& q) {
        require(k.size() == q.size(), "momentum_update: shape mismatch");
        for (std::size_t i = 0; i < k.size(); ++i) k[i] = m * k[i] + (T(1) - m) * q[i];
    };
    for (std::size_t li = 0; li < pair.key.layers.size(); ++li) {
        blend(pair.key.layers[li].weight.storage(), pair.query.layers[li].weight.storage());
        blend(pair.key.layers[li].bias, pair.query.layers[li].bias);
    }
}

/// Largest absolute element-wise difference between two parameter sets.
template <class T>
T max_abs_diff(const EncoderParams<T>& a, const EncoderParams<T>& b) {
    require(a.layers.size() == b.layers.size(), "max_abs_diff: shape mismatch");
    T worst = 0;
    for (std::size_t li = 0; li < a.layers.size(); ++li) {
        const auto& wa = a.layers[li].weight.storage();
        const auto& wb = b.layers[li].weight.storage();
        for (std::size_t i = 0; i < wa.size(); ++i) worst = std::max(worst, std::abs(wa[i] - wb[i]));
        for (std::size_t i = 0; i < a.layers[li].bias.size(); ++i)
            worst = std::max(worst, std::abs(a.layers[li].bias[i] - b.layers[li].bias[i]));
    }
    return worst;
}

}  // namespace treid

#endif  // TREID_ENCODER_HPP
