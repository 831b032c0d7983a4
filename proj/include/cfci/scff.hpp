#pragma once

#include "cfci/core/nn.hpp"

namespace cfci {

/// Adaptive 1-D channel-interaction kernel size: K = floor((log2(C)+1)/2)
/// bumped to the next odd value when even, never below 1.
inline std::int64_t channel_kernel_size(std::int64_t channels) {
    if (channels < 1) throw std::invalid_argument("channel_kernel_size: channel count must be >= 1");
    const double t = (std::log2(static_cast<double>(channels)) + 1.0) / 2.0;
    std::int64_t k = static_cast<std::int64_t>(std::floor(t));
    if (k % 2 == 0) ++k;
    return std::max<std::int64_t>(1, k);
}

/// Soft-selection gate of one modality pair: three axis-retaining average
/// pools with pointwise convolutions give the spatial logits, a global
/// average pool with a shared 1-D channel convolution gives the channel
/// logits, and the gate is the sigmoid of their sum.
struct ScffGate {
    Conv3dLayer pw_d, pw_h, pw_w; // 1x1x1 convs on the pooled branches
    Var eca_kernel;               // [K]

    ScffGate() = default;
    ScffGate(std::int64_t c, std::mt19937_64& rng)
        : pw_d(c, c, 1, 1, 0, rng), pw_h(c, c, 1, 1, 0, rng), pw_w(c, c, 1, 1, 0, rng) {
        const std::int64_t k = channel_kernel_size(c);
        eca_kernel = Var::param(Tensor::randn({k}, rng, 1.0 / std::sqrt(static_cast<double>(k))));
    }

    /// Pre-activation spatial logits, broadcast-summed to full [B,C,D,H,W].
    Var spatial_weight(const Var& f) const {
        Var fd = pw_d(mean_axes(f, {3, 4}, true)); // [B,C,D,1,1]
        Var fh = pw_h(mean_axes(f, {2, 4}, true)); // [B,C,1,H,1]
        Var fw = pw_w(mean_axes(f, {2, 3}, true)); // [B,C,1,1,W]
        return add(add(fd, fh), fw);
    }

    /// Per-channel logits [B,C,1,1,1] from the global average pool.
    Var channel_weight(const Var& f) const {
        const std::int64_t b = f.shape()[0], c = f.shape()[1];
        Var gap = reshape(mean_axes(f, {2, 3, 4}, true), {b, c});
        return reshape(conv1d_channel(gap, eca_kernel), {b, c, 1, 1, 1});
    }

    /// gate = sigmoid(spatial_weight(Fa+Fb) + channel_weight(Fa+Fb)).
    Var operator()(const Var& fa, const Var& fb) const {
        if (fa.shape() != fb.shape())
            throw std::invalid_argument("complementary gate: modality shapes differ " +
                                        shape_str(fa.shape()) + " vs " + shape_str(fb.shape()));
        Var f = add(fa, fb);
        return sigmoid(add(spatial_weight(f), channel_weight(f)));
    }

    void params(const std::string& p, NamedVars& out) const {
        pw_d.params(p + ".pw_d", out);
        pw_h.params(p + ".pw_h", out);
        pw_w.params(p + ".pw_w", out);
        out.emplace_back(p + ".eca_kernel", eca_kernel);
    }
};

/// gate*a + (1-gate)*b, elementwise convex combination.
inline Var pair_fusion(const Var& a, const Var& b, const Var& gate) {
    Var complement = ew_unary(gate, [](double g) { return 1.0 - g; }, [](double, double) { return -1.0; });
    return add(mul(gate, a), mul(complement, b));
}

/// Full SCFF block at one skip level: two gated pair fusions, channel
/// concatenation, then two Conv3-BN-ReLU stages mapping 2C -> C.
struct ScffFusion {
    std::int64_t channels = 0;
    bool adaptive = true; // ablation switch: false fixes the gate at 0.5
    ScffGate gate1, gate2;
    ConvBnRelu trunk1, trunk2;

    ScffFusion() = default;
    ScffFusion(std::int64_t c, std::mt19937_64& rng, bool adaptive_gate = true)
        : channels(c), adaptive(adaptive_gate),
          trunk1(2 * c, c, rng), trunk2(c, c, rng) {
        if (adaptive) {
            gate1 = ScffGate(c, rng);
            gate2 = ScffGate(c, rng);
        }
    }

    /// The two gated pair fusions, channel-concatenated (pre-trunk).
    Var fused_pairs(const Var& a1, const Var& b1, const Var& a2, const Var& b2) const {
        for (const Var* v : {&b1, &a2, &b2})
            if (v->shape() != a1.shape())
                throw std::invalid_argument("scff: modality feature shapes differ");
        Var p1, p2;
        if (adaptive) {
            p1 = pair_fusion(a1, b1, gate1(a1, b1));
            p2 = pair_fusion(a2, b2, gate2(a2, b2));
        } else {
            p1 = mul_scalar(add(a1, b1), 0.5);
            p2 = mul_scalar(add(a2, b2), 0.5);
        }
        return concat({p1, p2}, 1);
    }

    /// Pairs are given in fusion order: (a1,b1) and (a2,b2).
    Var operator()(const Var& a1, const Var& b1, const Var& a2, const Var& b2, bool training) const {
        return trunk2(trunk1(fused_pairs(a1, b1, a2, b2), training), training);
    }

    void params(const std::string& p, NamedVars& out) const {
        if (adaptive) {
            gate1.params(p + ".gate1", out);
            gate2.params(p + ".gate2", out);
        }
        trunk1.params(p + ".trunk1", out);
        trunk2.params(p + ".trunk2", out);
    }
    void buffers(const std::string& p, NamedBuffers& out) {
        trunk1.buffers(p + ".trunk1", out);
        trunk2.buffers(p + ".trunk2", out);
    }
};

} // namespace cfci
