#pragma once

#include "cfci/mfci.hpp"
#include "cfci/scff.hpp"

namespace cfci {

enum class Pairing { T1T2_T1ceFlair, T1T1ce_T2Flair, T1Flair_T1ceT2 };

inline const char* pairing_name(Pairing p) {
    switch (p) {
        case Pairing::T1T2_T1ceFlair: return "t1+t2,t1ce+flair";
        case Pairing::T1T1ce_T2Flair: return "t1+t1ce,t2+flair";
        case Pairing::T1Flair_T1ceT2: return "t1+flair,t1ce+t2";
    }
    return "?";
}

inline Pairing pairing_from_string(const std::string& s) {
    if (s == "t1+t2,t1ce+flair" || s == "default") return Pairing::T1T2_T1ceFlair;
    if (s == "t1+t1ce,t2+flair") return Pairing::T1T1ce_T2Flair;
    if (s == "t1+flair,t1ce+t2") return Pairing::T1Flair_T1ceT2;
    throw std::invalid_argument("unknown pairing strategy '" + s + "'");
}

/// Modality order everywhere: [T1, T1ce, T2, FLAIR]. Returns the two fusion
/// pairs as modality indices.
inline std::array<std::array<int, 2>, 2> pairing_indices(Pairing p) {
    switch (p) {
        case Pairing::T1T2_T1ceFlair: return {{{0, 2}, {1, 3}}};
        case Pairing::T1T1ce_T2Flair: return {{{0, 1}, {2, 3}}};
        case Pairing::T1Flair_T1ceT2: return {{{0, 3}, {1, 2}}};
    }
    throw std::logic_error("unreachable");
}

struct NetworkConfig {
    std::int64_t base_width = 16;
    std::int64_t depth = 4;
    std::int64_t input_size = 128; // cubic training patch edge
    std::int64_t num_classes = 4;
    std::int64_t bottleneck_channels = 0; // 0 -> bottleneck encoder width (4:1 compression)
    MfciConfig mfci;
    Pairing pairing = Pairing::T1T2_T1ceFlair;
    bool enable_scff = true;
    bool enable_mfci = true;
    bool parallel_encoders = true;

    std::vector<std::int64_t> stage_widths() const {
        std::vector<std::int64_t> w;
        for (std::int64_t i = 0; i < depth; ++i) w.push_back(base_width << i);
        return w;
    }
    std::int64_t bottleneck_width() const { return base_width << (depth - 1); }
    std::int64_t out_channels() const {
        return bottleneck_channels > 0 ? bottleneck_channels : bottleneck_width();
    }
    std::int64_t bottleneck_spatial() const { return input_size >> depth; }

    void validate() const {
        if (base_width < 1) throw std::invalid_argument("config: base_width must be positive");
        if (depth < 2) throw std::invalid_argument("config: depth must be >= 2");
        if (num_classes != 4) throw std::invalid_argument("config: expected 4 classes (background + 3 labels)");
        const std::int64_t div = (std::int64_t(1) << depth) * mfci.patch_size;
        if (input_size % div)
            throw std::invalid_argument("config: input_size must be divisible by 2^depth * mfci patch size");
        if (!parallel_encoders && (enable_scff || enable_mfci))
            throw std::invalid_argument("config: single-encoder baseline requires scff and mfci disabled");
        mfci.validate();
    }
};

// ---------------------------------------------------------------------------
// encoder: stride-2 conv into a residual block per stage
// ---------------------------------------------------------------------------

struct EncoderStage {
    Conv3dLayer down; // k=3, stride 2
    ResBlock3d block;

    EncoderStage() = default;
    EncoderStage(std::int64_t ci, std::int64_t co, std::mt19937_64& rng)
        : down(ci, co, 3, 2, 1, rng), block(co, co, rng) {}

    Var operator()(const Var& x, bool training) const { return block(down(x), training); }

    void params(const std::string& p, NamedVars& out) const {
        down.params(p + ".down", out);
        block.params(p + ".block", out);
    }
    void buffers(const std::string& p, NamedBuffers& out) { block.buffers(p + ".block", out); }
};

struct Encoder {
    std::vector<EncoderStage> stages;

    Encoder() = default;
    Encoder(std::int64_t in_ch, const std::vector<std::int64_t>& widths, std::mt19937_64& rng) {
        std::int64_t ci = in_ch;
        for (auto w : widths) {
            stages.emplace_back(ci, w, rng);
            ci = w;
        }
    }

    /// One output per stage; the last is the bottleneck feature.
    std::vector<Var> operator()(const Var& x, bool training) const {
        const Shape& s = x.shape();
        const std::int64_t div = std::int64_t(1) << stages.size();
        for (int a = 2; a < 5; ++a)
            if (s[a] % div)
                throw std::invalid_argument("encoder: spatial extent " + std::to_string(s[a]) +
                                            " not divisible by 2^depth");
        std::vector<Var> outs;
        Var h = x;
        for (const auto& st : stages) {
            h = st(h, training);
            outs.push_back(h);
        }
        return outs;
    }

    void params(const std::string& p, NamedVars& out) const {
        for (std::size_t i = 0; i < stages.size(); ++i)
            stages[i].params(p + ".stage" + std::to_string(i), out);
    }
    void buffers(const std::string& p, NamedBuffers& out) {
        for (std::size_t i = 0; i < stages.size(); ++i)
            stages[i].buffers(p + ".stage" + std::to_string(i), out);
    }
};

// ---------------------------------------------------------------------------
// decoder: trilinear x2 upsample, skip concat, two conv-BN-ReLU blocks
// ---------------------------------------------------------------------------

struct DecoderStage {
    ConvBnRelu conv1, conv2;

    DecoderStage() = default;
    DecoderStage(std::int64_t in_ch, std::int64_t out_ch, std::mt19937_64& rng)
        : conv1(in_ch, out_ch, rng), conv2(out_ch, out_ch, rng) {}

    Var operator()(const Var& up, const Var* skip, bool training) const {
        Var h = skip ? concat({up, *skip}, 1) : up;
        return conv2(conv1(h, training), training);
    }

    void params(const std::string& p, NamedVars& out) const {
        conv1.params(p + ".conv1", out);
        conv2.params(p + ".conv2", out);
    }
    void buffers(const std::string& p, NamedBuffers& out) {
        conv1.buffers(p + ".conv1", out);
        conv2.buffers(p + ".conv2", out);
    }
};

// ---------------------------------------------------------------------------
// full network
// ---------------------------------------------------------------------------

struct CfciNet {
    NetworkConfig cfg;
    std::vector<Encoder> encoders;   // 4 parallel or 1 stacked
    std::vector<ScffFusion> fusions; // one per skip level (depth-1)
    Mfci mfci;
    Conv3dLayer single_bridge; // bottleneck projection for the single-encoder baseline
    std::vector<DecoderStage> decoder; // depth stages, deepest first; last has no skip
    Conv3dLayer head;

    CfciNet() = default;
    CfciNet(NetworkConfig cfg_, std::mt19937_64& rng) : cfg(cfg_) {
        cfg.validate();
        const auto widths = cfg.stage_widths();
        const std::int64_t c_out = cfg.out_channels();

        if (cfg.parallel_encoders) {
            for (int m = 0; m < 4; ++m) encoders.emplace_back(1, widths, rng);
            for (std::int64_t l = 0; l + 1 < cfg.depth; ++l)
                fusions.emplace_back(widths[l], rng, cfg.enable_scff);
            MfciConfig mcfg = cfg.mfci;
            if (!cfg.enable_mfci) {
                mcfg.enable_mfc = false;
                mcfg.enable_mfi = false;
            }
            const std::int64_t bs = cfg.bottleneck_spatial();
            mfci = Mfci(cfg.bottleneck_width(), c_out, {bs, bs, bs}, mcfg, rng);
        } else {
            encoders.emplace_back(4, widths, rng);
            single_bridge = Conv3dLayer(cfg.bottleneck_width(), c_out, 1, 1, 0, rng);
        }

        std::int64_t ch = c_out;
        for (std::int64_t l = cfg.depth - 2; l >= 0; --l) {
            decoder.emplace_back(ch + widths[l], widths[l], rng);
            ch = widths[l];
        }
        decoder.emplace_back(ch, cfg.base_width, rng); // final full-resolution stage, no skip
        head = Conv3dLayer(cfg.base_width, cfg.num_classes, 1, 1, 0, rng);
    }

    /// x: [B,4,D,H,W] in modality order T1, T1ce, T2, FLAIR.
    Var operator()(const Var& x, bool training) const {
        const Shape& s = x.shape();
        if (s.size() != 5 || s[1] != 4)
            throw std::invalid_argument("cfci_forward: expected [B,4,D,H,W] input, got " + shape_str(s));
        if (s[2] != cfg.input_size || s[3] != cfg.input_size || s[4] != cfg.input_size)
            throw std::invalid_argument("cfci_forward: input spatial size " + shape_str(s) +
                                        " does not match configured patch size " +
                                        std::to_string(cfg.input_size));

        std::vector<Var> skips; // fused skip per level, shallow -> deep
        Var bottleneck;
        if (cfg.parallel_encoders) {
            std::array<std::vector<Var>, 4> feats;
            for (int m = 0; m < 4; ++m) feats[m] = encoders[m](slice(x, 1, m, 1), training);
            const auto pairs = pairing_indices(cfg.pairing);
            for (std::int64_t l = 0; l + 1 < cfg.depth; ++l)
                skips.push_back(fusions[l](feats[pairs[0][0]][l], feats[pairs[0][1]][l],
                                           feats[pairs[1][0]][l], feats[pairs[1][1]][l], training));
            const std::int64_t d = cfg.depth - 1;
            bottleneck = mfci(feats[0][d], feats[1][d], feats[2][d], feats[3][d], training);
        } else {
            std::vector<Var> feats = encoders[0](x, training);
            for (std::int64_t l = 0; l + 1 < cfg.depth; ++l) skips.push_back(feats[l]);
            bottleneck = single_bridge(feats[cfg.depth - 1]);
        }

        Var h = bottleneck;
        for (std::size_t i = 0; i < decoder.size(); ++i) {
            h = upsample_trilinear2x(h);
            const std::int64_t level = cfg.depth - 2 - static_cast<std::int64_t>(i);
            h = decoder[i](h, level >= 0 ? &skips[level] : nullptr, training);
        }
        return head(h);
    }

    NamedVars named_params() const {
        NamedVars out;
        for (std::size_t m = 0; m < encoders.size(); ++m)
            encoders[m].params("enc" + std::to_string(m), out);
        for (std::size_t l = 0; l < fusions.size(); ++l)
            fusions[l].params("scff" + std::to_string(l), out);
        if (cfg.parallel_encoders) mfci.params("mfci", out);
        else single_bridge.params("bridge", out);
        for (std::size_t i = 0; i < decoder.size(); ++i)
            decoder[i].params("dec" + std::to_string(i), out);
        head.params("head", out);
        return out;
    }

    NamedBuffers named_buffers() {
        NamedBuffers out;
        for (std::size_t m = 0; m < encoders.size(); ++m)
            encoders[m].buffers("enc" + std::to_string(m), out);
        for (std::size_t l = 0; l < fusions.size(); ++l)
            fusions[l].buffers("scff" + std::to_string(l), out);
        if (cfg.parallel_encoders) mfci.buffers("mfci", out);
        for (std::size_t i = 0; i < decoder.size(); ++i)
            decoder[i].buffers("dec" + std::to_string(i), out);
        return out;
    }
};

/// Number of trainable scalars.
inline std::int64_t param_count(const CfciNet& net) {
    std::int64_t n = 0;
    for (const auto& [name, v] : net.named_params()) n += v.numel();
    return n;
}

inline double param_count_millions(const CfciNet& net) {
    return static_cast<double>(param_count(net)) / 1e6;
}

} // namespace cfci
