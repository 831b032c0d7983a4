#pragma once

#include <functional>

#include "cfci/engine.hpp"

namespace cfci {

struct SlidingSpec {
    std::int64_t patch = 128;
    double overlap = 0.75;

    std::int64_t stride() const {
        return std::max<std::int64_t>(1, std::llround(static_cast<double>(patch) * (1.0 - overlap)));
    }
    void validate() const {
        if (patch < 1) throw std::invalid_argument("sliding: patch must be positive");
        if (overlap < 0.0 || overlap >= 1.0)
            throw std::invalid_argument("sliding: overlap must be in [0,1)");
    }
};

/// Regular grid with the final position clamped to end at the volume edge.
inline std::vector<std::int64_t> tile_positions_1d(std::int64_t extent, std::int64_t patch,
                                                   std::int64_t stride) {
    if (extent < patch) throw std::invalid_argument("tiling: extent smaller than patch (pad first)");
    std::vector<std::int64_t> out;
    for (std::int64_t p = 0;; p += stride) {
        if (p + patch >= extent) {
            const std::int64_t last = extent - patch;
            if (out.empty() || out.back() != last) out.push_back(last);
            break;
        }
        out.push_back(p);
    }
    return out;
}

/// Ordered patch origins covering the whole volume.
inline std::vector<Grid3> tile_positions(const Grid3& shape, const SlidingSpec& spec) {
    spec.validate();
    const std::int64_t s = spec.stride();
    const auto zs = tile_positions_1d(shape[0], spec.patch, s);
    const auto ys = tile_positions_1d(shape[1], spec.patch, s);
    const auto xs = tile_positions_1d(shape[2], spec.patch, s);
    std::vector<Grid3> out;
    out.reserve(zs.size() * ys.size() * xs.size());
    for (auto z : zs)
        for (auto y : ys)
            for (auto x : xs) out.push_back({z, y, x});
    return out;
}

/// Per-voxel number of covering tiles.
inline std::vector<std::int32_t> coverage_counts(const Grid3& shape, const SlidingSpec& spec) {
    std::vector<std::int32_t> cov(grid_numel(shape), 0);
    for (const auto& o : tile_positions(shape, spec))
        for (std::int64_t z = 0; z < spec.patch; ++z)
            for (std::int64_t y = 0; y < spec.patch; ++y) {
                std::int32_t* row = cov.data() + ((o[0] + z) * shape[1] + o[1] + y) * shape[2] + o[2];
                for (std::int64_t x = 0; x < spec.patch; ++x) ++row[x];
            }
    return cov;
}

/// Evaluates one [1,4,p,p,p] patch to [1,C,p,p,p] logits.
using PatchModel = std::function<Tensor(const Tensor&)>;

struct InferenceResult {
    Tensor probabilities; // [C,D,H,W], uniform mean of covering-patch softmaxes
    LabelVolume prediction;
};

/// Whole-volume prediction by averaging overlapping patch softmax outputs.
/// Volumes smaller than the patch are zero-padded symmetrically and the
/// output is cropped back.
inline InferenceResult sliding_window_infer(const MultiModalVolume& v, const PatchModel& model,
                                            const SlidingSpec& spec, std::int64_t num_classes = 4,
                                            const std::vector<Grid3>* origins_override = nullptr) {
    spec.validate();
    const Grid3 orig = v.dims();
    Grid3 work = orig;
    Grid3 pad_lo{0, 0, 0};
    for (int a = 0; a < 3; ++a)
        if (work[a] < spec.patch) {
            pad_lo[a] = (spec.patch - work[a]) / 2;
            work[a] = spec.patch;
        }

    // padded modality stack
    Tensor full({4, work[0], work[1], work[2]});
    for (int m = 0; m < 4; ++m)
        for (std::int64_t z = 0; z < orig[0]; ++z)
            for (std::int64_t y = 0; y < orig[1]; ++y) {
                const double* src = v.modality[m].data.data() + (z * orig[1] + y) * orig[2];
                double* dst = full.data() +
                              ((m * work[0] + z + pad_lo[0]) * work[1] + y + pad_lo[1]) * work[2] + pad_lo[2];
                std::copy(src, src + orig[2], dst);
            }

    Tensor accum({num_classes, work[0], work[1], work[2]});
    std::vector<std::int32_t> count(grid_numel(work), 0);
    const std::int64_t p = spec.patch;
    const std::int64_t wvol = work[0] * work[1] * work[2];

    NoGradGuard ng;
    const std::vector<Grid3> origins = origins_override ? *origins_override : tile_positions(work, spec);
    for (const auto& origin : origins) {
        Tensor patch({1, 4, p, p, p});
        for (int m = 0; m < 4; ++m)
            for (std::int64_t z = 0; z < p; ++z)
                for (std::int64_t y = 0; y < p; ++y) {
                    const double* src = full.data() +
                                        ((m * work[0] + origin[0] + z) * work[1] + origin[1] + y) * work[2] +
                                        origin[2];
                    std::copy(src, src + p, patch.data() + ((m * p + z) * p + y) * p);
                }
        Tensor logits = model(patch);
        if (logits.shape() != Shape{1, num_classes, p, p, p})
            throw std::invalid_argument("sliding: model returned " + shape_str(logits.shape()) +
                                        ", expected [1," + std::to_string(num_classes) + "," +
                                        std::to_string(p) + "^3]");
        Tensor probs = softmax_last(permute(Var::leaf(logits), {0, 2, 3, 4, 1})).value(); // [1,p,p,p,C]

        for (std::int64_t z = 0; z < p; ++z)
            for (std::int64_t y = 0; y < p; ++y)
                for (std::int64_t x = 0; x < p; ++x) {
                    const std::int64_t widx =
                        ((origin[0] + z) * work[1] + origin[1] + y) * work[2] + origin[2] + x;
                    const double* pv = probs.data() + ((z * p + y) * p + x) * num_classes;
                    for (std::int64_t c = 0; c < num_classes; ++c) accum[c * wvol + widx] += pv[c];
                    ++count[widx];
                }
    }

    for (std::int64_t i = 0; i < wvol; ++i) {
        if (count[i] < 1) throw std::logic_error("sliding: voxel left uncovered");
        const double inv = 1.0 / count[i];
        for (std::int64_t c = 0; c < num_classes; ++c) accum[c * wvol + i] *= inv;
    }

    // crop back to the original extent
    InferenceResult res;
    res.probabilities = Tensor({num_classes, orig[0], orig[1], orig[2]});
    const std::int64_t ovol = grid_numel(orig);
    for (std::int64_t c = 0; c < num_classes; ++c)
        for (std::int64_t z = 0; z < orig[0]; ++z)
            for (std::int64_t y = 0; y < orig[1]; ++y) {
                const double* src = accum.data() + (((c * work[0]) + z + pad_lo[0]) * work[1] + y + pad_lo[1]) *
                                                       work[2] +
                                    pad_lo[2];
                std::copy(src, src + orig[2],
                          res.probabilities.data() + ((c * orig[0] + z) * orig[1] + y) * orig[2]);
            }

    res.prediction.dims = orig;
    res.prediction.spacing = v.spacing;
    res.prediction.data.resize(ovol);
    for (std::int64_t i = 0; i < ovol; ++i) {
        std::int64_t best = 0;
        double bv = res.probabilities[i];
        for (std::int64_t c = 1; c < num_classes; ++c) {
            const double x = res.probabilities[c * ovol + i];
            if (x > bv) {
                bv = x;
                best = c;
            }
        }
        res.prediction.data[i] = class_to_label(best);
    }
    return res;
}

/// PatchModel backed by a trained network in eval mode.
inline PatchModel model_from_net(const CfciNet& net) {
    return [&net](const Tensor& patch) {
        NoGradGuard ng;
        return net(Var::leaf(patch), false).value();
    };
}

} // namespace cfci
