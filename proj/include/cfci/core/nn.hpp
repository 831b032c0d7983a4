#pragma once

#include "cfci/core/conv.hpp"

namespace cfci {

using NamedVars = std::vector<std::pair<std::string, Var>>;
using NamedBuffers = std::vector<std::pair<std::string, Tensor*>>;

inline Tensor kaiming_conv3d(std::int64_t co, std::int64_t ci, std::int64_t k, std::mt19937_64& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(ci * k * k * k));
    return Tensor::randn({co, ci, k, k, k}, rng, std);
}

inline Tensor xavier_linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in + out));
    return Tensor::randn({in, out}, rng, std);
}

// ---------------------------------------------------------------------------

struct Linear {
    Var weight; // [in, out]
    Var bias;   // [out], may be undefined

    Linear() = default;
    Linear(std::int64_t in, std::int64_t out, std::mt19937_64& rng, bool with_bias = true)
        : weight(Var::param(xavier_linear(in, out, rng))) {
        if (with_bias) bias = Var::param(Tensor({out}));
    }

    Var operator()(const Var& x) const {
        const Shape& s = x.shape();
        const std::int64_t in = weight.shape()[0], out = weight.shape()[1];
        const std::int64_t rows = x.numel() / in;
        Var y = matmul(reshape(x, {rows, in}), weight);
        if (bias.defined()) y = add(y, bias);
        Shape os(s.begin(), s.end() - 1);
        os.push_back(out);
        return reshape(y, std::move(os));
    }

    void params(const std::string& p, NamedVars& out) const {
        out.emplace_back(p + ".weight", weight);
        if (bias.defined()) out.emplace_back(p + ".bias", bias);
    }
};

struct Conv3dLayer {
    Var weight; // [Co,Ci,k,k,k]
    Var bias;   // [Co]
    std::int64_t stride = 1, pad = 0;

    Conv3dLayer() = default;
    Conv3dLayer(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t stride_, std::int64_t pad_,
                std::mt19937_64& rng, bool with_bias = true)
        : weight(Var::param(kaiming_conv3d(co, ci, k, rng))), stride(stride_), pad(pad_) {
        if (with_bias) bias = Var::param(Tensor({co}));
    }

    Var operator()(const Var& x) const { return conv3d(x, weight, bias, stride, pad); }

    void params(const std::string& p, NamedVars& out) const {
        out.emplace_back(p + ".weight", weight);
        if (bias.defined()) out.emplace_back(p + ".bias", bias);
    }
};

// ---------------------------------------------------------------------------

struct BatchNorm3d {
    Var gamma, beta;           // [C]
    Tensor running_mean, running_var;
    double momentum = 0.1, eps = 1e-5;

    BatchNorm3d() = default;
    explicit BatchNorm3d(std::int64_t c)
        : gamma(Var::param(Tensor({c}, 1.0))), beta(Var::param(Tensor({c}))),
          running_mean(Tensor({c})), running_var(Tensor({c}, 1.0)) {}

    Var operator()(const Var& x, bool training) const {
        const std::int64_t C = x.shape()[1];
        const Shape bshape{1, C, 1, 1, 1};
        Var xhat;
        if (training) {
            Var mu = mean_axes(x, {0, 2, 3, 4}, true);
            Var centered = sub(x, mu);
            Var var = mean_axes(square(centered), {0, 2, 3, 4}, true);
            xhat = div(centered, sqrt_op(add_scalar(var, eps)));
            update_running(mu.value(), var.value(), x.numel() / C);
        } else {
            Var mu = Var::leaf(running_mean.clone().reshaped(Shape(bshape)));
            Var var = Var::leaf(running_var.clone().reshaped(Shape(bshape)));
            xhat = div(sub(x, mu), sqrt_op(add_scalar(var, eps)));
        }
        return add(mul(xhat, reshape(gamma, Shape(bshape))), reshape(beta, Shape(bshape)));
    }

    void params(const std::string& p, NamedVars& out) const {
        out.emplace_back(p + ".gamma", gamma);
        out.emplace_back(p + ".beta", beta);
    }
    void buffers(const std::string& p, NamedBuffers& out) {
        out.emplace_back(p + ".running_mean", &running_mean);
        out.emplace_back(p + ".running_var", &running_var);
    }

private:
    void update_running(const Tensor& mu, const Tensor& var, std::int64_t n) const {
        // unbiased variance for the running estimate
        const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
        auto& rm = const_cast<Tensor&>(running_mean);
        auto& rv = const_cast<Tensor&>(running_var);
        for (std::int64_t c = 0; c < rm.numel(); ++c) {
            rm[c] = (1 - momentum) * rm[c] + momentum * mu[c];
            rv[c] = (1 - momentum) * rv[c] + momentum * var[c] * unbias;
        }
    }
};

struct LayerNorm {
    Var gamma, beta; // [E]
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(std::int64_t e)
        : gamma(Var::param(Tensor({e}, 1.0))), beta(Var::param(Tensor({e}))) {}

    Var operator()(const Var& x) const {
        const int last = static_cast<int>(x.shape().size()) - 1;
        Var mu = mean_axes(x, {last}, true);
        Var centered = sub(x, mu);
        Var var = mean_axes(square(centered), {last}, true);
        Var xhat = div(centered, sqrt_op(add_scalar(var, eps)));
        return add(mul(xhat, gamma), beta);
    }

    void params(const std::string& p, NamedVars& out) const {
        out.emplace_back(p + ".gamma", gamma);
        out.emplace_back(p + ".beta", beta);
    }
};

// ---------------------------------------------------------------------------

/// Pre-activation residual block: BN-ReLU-Conv3 twice, identity or 1x1x1
/// projection skip when the channel count changes.
struct ResBlock3d {
    BatchNorm3d bn1, bn2;
    Conv3dLayer conv1, conv2;
    Conv3dLayer proj; // defined only when ci != co

    ResBlock3d() = default;
    ResBlock3d(std::int64_t ci, std::int64_t co, std::mt19937_64& rng)
        : bn1(ci), bn2(co), conv1(ci, co, 3, 1, 1, rng), conv2(co, co, 3, 1, 1, rng) {
        if (ci != co) proj = Conv3dLayer(ci, co, 1, 1, 0, rng);
    }

    Var operator()(const Var& x, bool training) const {
        Var h = conv1(relu(bn1(x, training)));
        h = conv2(relu(bn2(h, training)));
        Var skip = proj.weight.defined() ? proj(x) : x;
        return add(h, skip);
    }

    void params(const std::string& p, NamedVars& out) const {
        bn1.params(p + ".bn1", out);
        bn2.params(p + ".bn2", out);
        conv1.params(p + ".conv1", out);
        conv2.params(p + ".conv2", out);
        if (proj.weight.defined()) proj.params(p + ".proj", out);
    }
    void buffers(const std::string& p, NamedBuffers& out) {
        bn1.buffers(p + ".bn1", out);
        bn2.buffers(p + ".bn2", out);
    }
};

/// Conv3 -> BN -> ReLU, the decoder/SCFF trunk unit.
struct ConvBnRelu {
    Conv3dLayer conv;
    BatchNorm3d bn;

    ConvBnRelu() = default;
    ConvBnRelu(std::int64_t ci, std::int64_t co, std::mt19937_64& rng)
        : conv(ci, co, 3, 1, 1, rng), bn(co) {}

    Var operator()(const Var& x, bool training) const { return relu(bn(conv(x), training)); }

    void params(const std::string& p, NamedVars& out) const {
        conv.params(p + ".conv", out);
        bn.params(p + ".bn", out);
    }
    void buffers(const std::string& p, NamedBuffers& out) { bn.buffers(p + ".bn", out); }
};

} // namespace cfci
