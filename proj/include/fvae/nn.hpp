#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fvae/common.hpp"
#include "fvae/param_set.hpp"
#include "fvae/rng.hpp"
#include "fvae/tensor.hpp"

namespace fvae {

enum class Activation { identity, relu, tanh, sigmoid };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

template <typename S>
inline S apply_activation(Activation a, S z) {
    switch (a) {
        case Activation::identity: return z;
        case Activation::relu: return z > S(0) ? z : S(0);
        case Activation::tanh: return std::tanh(z);
        case Activation::sigmoid: return S(1) / (S(1) + std::exp(-z));
    }
    return z;
}

// Derivative expressed through the activation output y = f(z).
template <typename S>
inline S activation_grad_from_output(Activation a, S y) {
    switch (a) {
        case Activation::identity: return S(1);
        case Activation::relu: return y > S(0) ? S(1) : S(0);
        case Activation::tanh: return S(1) - y * y;
        case Activation::sigmoid: return y * (S(1) - y);
    }
    return S(1);
}

// Fully connected layer: y = f(x W^T + b), weight stored [out x in].
template <typename S>
struct DenseLayerT {
    TensorT<S> weight;  // [out x in]
    TensorT<S> bias;    // [out]
    Activation activation = Activation::identity;

    DenseLayerT() = default;

    DenseLayerT(std::size_t in_dim, std::size_t out_dim, Activation act, RngStream& rng)
        : weight(TensorT<S>::zeros({out_dim, in_dim})),
          bias(TensorT<S>::zeros({out_dim})),
          activation(act) {
        // Glorot uniform
        const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
        for (std::size_t i = 0; i < weight.numel(); ++i) {
            weight[i] = static_cast<S>((rng.uniform() * 2.0 - 1.0) * bound);
        }
    }

    std::size_t in_dim() const { return weight.shape()[1]; }
    std::size_t out_dim() const { return weight.shape()[0]; }

    struct Cache {
        TensorT<S> input;   // [B x in]
        TensorT<S> output;  // [B x out], post-activation
    };

    TensorT<S> forward(const TensorT<S>& x, Cache* cache) const {
        if (x.cols() != in_dim()) {
            throw ConfigError("dense layer fan-in mismatch: input has " +
                              std::to_string(x.cols()) + " features, layer expects " +
                              std::to_string(in_dim()));
        }
        const std::size_t batch = x.rows();
        const std::size_t in = in_dim();
        const std::size_t out = out_dim();
        TensorT<S> y = TensorT<S>::zeros({batch, out});
        for (std::size_t r = 0; r < batch; ++r) {
            const S* xr = x.data() + r * in;
            S* yr = y.data() + r * out;
            for (std::size_t o = 0; o < out; ++o) {
                const S* w = weight.data() + o * in;
                S acc = bias[o];
                for (std::size_t i = 0; i < in; ++i) acc += w[i] * xr[i];
                yr[o] = apply_activation(activation, acc);
            }
        }
        if (cache != nullptr) {
            cache->input = x;
            cache->output = y;
        }
        return y;
    }

    // Returns input grad; writes parameter grads.
    TensorT<S> backward(const Cache& cache, const TensorT<S>& grad_out,
                        TensorT<S>& grad_weight, TensorT<S>& grad_bias) const {
        if (cache.input.numel() == 0) {
            throw UsageError("dense backward called without a matching forward cache");
        }
        if (!grad_out.same_shape(cache.output)) {
            throw UsageError("dense backward: output grad shape mismatch");
        }
        const std::size_t batch = cache.input.rows();
        const std::size_t in = in_dim();
        const std::size_t out = out_dim();
        grad_weight = TensorT<S>::zeros({out, in});
        grad_bias = TensorT<S>::zeros({out});
        TensorT<S> grad_in = TensorT<S>::zeros({batch, in});
        for (std::size_t r = 0; r < batch; ++r) {
            const S* xr = cache.input.data() + r * in;
            const S* yr = cache.output.data() + r * out;
            const S* gr = grad_out.data() + r * out;
            S* gi = grad_in.data() + r * in;
            for (std::size_t o = 0; o < out; ++o) {
                const S dz = gr[o] * activation_grad_from_output(activation, yr[o]);
                if (dz == S(0)) continue;
                S* gw = grad_weight.data() + o * in;
                const S* w = weight.data() + o * in;
                grad_bias[o] += dz;
                for (std::size_t i = 0; i < in; ++i) {
                    gw[i] += dz * xr[i];
                    gi[i] += dz * w[i];
                }
            }
        }
        return grad_in;
    }
};

// Plain layer stack. Parameter names are "<prefix>.<layer>.weight|bias".
template <typename S>
class MlpT {
public:
    MlpT() = default;

    // widths = {in, h1, ..., out}; hidden layers use `hidden`, final uses `final_act`.
    MlpT(const std::vector<std::size_t>& widths, Activation hidden, Activation final_act,
         RngStream& rng) {
        if (widths.size() < 2) throw ConfigError("layer stack needs at least two widths");
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            const bool last = (i + 2 == widths.size());
            layers_.emplace_back(widths[i], widths[i + 1], last ? final_act : hidden, rng);
        }
    }

    std::size_t in_dim() const { return layers_.front().in_dim(); }
    std::size_t out_dim() const { return layers_.back().out_dim(); }
    std::size_t layer_count() const { return layers_.size(); }
    const DenseLayerT<S>& layer(std::size_t i) const { return layers_[i]; }
    DenseLayerT<S>& layer(std::size_t i) { return layers_[i]; }

    struct Cache {
        std::vector<typename DenseLayerT<S>::Cache> layers;
    };

    TensorT<S> forward(const TensorT<S>& x, Cache* cache) const {
        TensorT<S> h = x;
        if (cache != nullptr) cache->layers.resize(layers_.size());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            h = layers_[i].forward(h, cache != nullptr ? &cache->layers[i] : nullptr);
        }
        return h;
    }

    // Accumulates parameter grads into `grads` under this stack's names.
    TensorT<S> backward(const Cache& cache, const TensorT<S>& grad_out,
                        const std::string& prefix, ParamSetT<S>& grads) const {
        if (cache.layers.size() != layers_.size()) {
            throw UsageError("layer stack backward: stale or missing cache");
        }
        TensorT<S> g = grad_out;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            TensorT<S> gw, gb;
            g = layers_[i].backward(cache.layers[i], g, gw, gb);
            accumulate(grads, layer_name(prefix, i) + ".weight", std::move(gw));
            accumulate(grads, layer_name(prefix, i) + ".bias", std::move(gb));
        }
        return g;
    }

    void append_params(const std::string& prefix, ParamSetT<S>& out) const {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            out.add(layer_name(prefix, i) + ".weight", layers_[i].weight);
            out.add(layer_name(prefix, i) + ".bias", layers_[i].bias);
        }
    }

    void load_params(const std::string& prefix, const ParamSetT<S>& in) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].weight = in.tensor(layer_name(prefix, i) + ".weight");
            layers_[i].bias = in.tensor(layer_name(prefix, i) + ".bias");
        }
    }

    static std::string layer_name(const std::string& prefix, std::size_t i) {
        return prefix + "." + std::to_string(i);
    }

    static void accumulate(ParamSetT<S>& grads, const std::string& name, TensorT<S> g) {
        if (grads.contains(name)) {
            TensorT<S>& t = grads.tensor(name);
            for (std::size_t i = 0; i < t.numel(); ++i) t[i] += g[i];
        } else {
            grads.add(name, std::move(g));
        }
    }

private:
    std::vector<DenseLayerT<S>> layers_;
};

enum class OptimizerKind { sgd, adam };

// Per-parameter moment state is keyed by ParamSet names and created lazily
// with matching shapes.
template <typename S>
class OptimizerT {
public:
    OptimizerT(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999,
               double epsilon = 1e-8)
        : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
        if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    }

    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }

    void step(ParamSetT<S>& params, const ParamSetT<S>& grads) {
        params.require_compatible(grads, "optimizer step");
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t p = 0; p < params.size(); ++p) {
                TensorT<S>& w = params[p].tensor;
                const TensorT<S>& g = grads[p].tensor;
                for (std::size_t i = 0; i < w.numel(); ++i) {
                    w[i] = static_cast<S>(w[i] - lr_ * g[i]);
                }
            }
            return;
        }
        ++step_count_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            TensorT<S>& w = params[p].tensor;
            const TensorT<S>& g = grads[p].tensor;
            Moments& mo = moments(params[p].name, w.shape());
            for (std::size_t i = 0; i < w.numel(); ++i) {
                const double gi = static_cast<double>(g[i]);
                mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * gi;
                mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * gi * gi;
                const double m_hat = mo.m[i] / bc1;
                const double v_hat = mo.v[i] / bc2;
                w[i] = static_cast<S>(w[i] - lr_ * m_hat / (std::sqrt(v_hat) + epsilon_));
            }
        }
    }

private:
    struct Moments {
        std::vector<double> m, v;
    };

    Moments& moments(const std::string& name, const std::vector<std::size_t>& shape) {
        auto it = state_.find(name);
        if (it == state_.end()) {
            Moments mo;
            mo.m.assign(TensorT<S>::numel_of(shape), 0.0);
            mo.v.assign(TensorT<S>::numel_of(shape), 0.0);
            it = state_.emplace(name, std::move(mo)).first;
        }
        return it->second;
    }

    OptimizerKind kind_;
    double lr_, beta1_, beta2_, epsilon_;
    std::uint64_t step_count_ = 0;
    std::unordered_map<std::string, Moments> state_;
};

using Optimizer = OptimizerT<float>;

}  // namespace fvae
