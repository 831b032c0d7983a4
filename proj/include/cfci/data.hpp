#pragma once

#include <algorithm>
#include <optional>
#include <random>
#include <utility>

#include "cfci/nifti.hpp"

namespace cfci {

constexpr std::array<const char*, 4> kModalityNames = {"t1", "t1ce", "t2", "flair"};

struct Volume {
    Grid3 dims{};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<double> data;

    double& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return data[(z * dims[1] + y) * dims[2] + x];
    }
    double at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data[(z * dims[1] + y) * dims[2] + x];
    }
};

struct MultiModalVolume {
    std::string id;
    std::array<Volume, 4> modality; // T1, T1ce, T2, FLAIR
    std::optional<LabelVolume> labels;
    Spacing3 spacing{1.0, 1.0, 1.0};

    const Grid3& dims() const { return modality[0].dims; }

    void validate() const {
        for (int m = 1; m < 4; ++m)
            if (modality[m].dims != modality[0].dims)
                throw std::invalid_argument("case '" + id + "': modality shapes differ");
        if (labels) {
            if (labels->dims != modality[0].dims)
                throw std::invalid_argument("case '" + id + "': label shape differs from modalities");
            labels->validate();
        }
    }
};

// ---------------------------------------------------------------------------
// BraTS directory I/O: <dir>/<id>_{t1,t1ce,t2,flair,seg}.nii[.gz]
// ---------------------------------------------------------------------------

namespace detail {
inline std::optional<std::string> find_suffix_file(const std::filesystem::path& dir, const std::string& suffix) {
    for (const auto& ext : {std::string(".nii.gz"), std::string(".nii")}) {
        const std::string tail = "_" + suffix + ext;
        for (const auto& e : std::filesystem::directory_iterator(dir)) {
            const std::string name = e.path().filename().string();
            if (name.size() > tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
                return e.path().string();
        }
    }
    return std::nullopt;
}
} // namespace detail

inline MultiModalVolume load_case(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        throw std::runtime_error("case directory '" + dir.string() + "' does not exist");
    MultiModalVolume v;
    v.id = dir.filename().string();
    if (v.id.empty()) v.id = dir.parent_path().filename().string();

    for (int m = 0; m < 4; ++m) {
        auto path = detail::find_suffix_file(dir, kModalityNames[m]);
        if (!path)
            throw std::runtime_error("case '" + v.id + "': missing modality file for '" +
                                     kModalityNames[m] + "'");
        NiftiVolume nv = nifti_read(*path);
        v.modality[m] = Volume{nv.dims, nv.spacing, std::move(nv.data)};
    }
    v.spacing = v.modality[0].spacing;

    if (auto seg = detail::find_suffix_file(dir, "seg")) {
        NiftiVolume nv = nifti_read(*seg);
        LabelVolume l;
        l.dims = nv.dims;
        l.spacing = nv.spacing;
        l.data.resize(nv.data.size());
        for (std::size_t i = 0; i < nv.data.size(); ++i) {
            const double x = nv.data[i];
            if (x != 0 && x != 1 && x != 2 && x != 4)
                throw std::runtime_error("case '" + v.id + "': invalid label value " + std::to_string(x));
            l.data[i] = static_cast<std::uint8_t>(x);
        }
        v.labels = std::move(l);
    }
    v.validate();
    return v;
}

inline void write_case(const MultiModalVolume& v, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (int m = 0; m < 4; ++m) {
        NiftiVolume nv{v.modality[m].dims, v.modality[m].spacing, v.modality[m].data};
        nifti_write((dir / (v.id + "_" + kModalityNames[m] + ".nii.gz")).string(), nv, kNiftiFloat64);
    }
    if (v.labels) {
        NiftiVolume nv;
        nv.dims = v.labels->dims;
        nv.spacing = v.labels->spacing;
        nv.data.assign(v.labels->data.begin(), v.labels->data.end());
        nifti_write((dir / (v.id + "_seg.nii.gz")).string(), nv, kNiftiUint8);
    }
}

inline void write_prediction(const LabelVolume& pred, const std::string& path) {
    NiftiVolume nv;
    nv.dims = pred.dims;
    nv.spacing = pred.spacing;
    nv.data.assign(pred.data.begin(), pred.data.end());
    nifti_write(path, nv, kNiftiUint8);
}

// ---------------------------------------------------------------------------
// normalisation: per-modality z-score over nonzero (brain) voxels
// ---------------------------------------------------------------------------

inline MultiModalVolume normalize(const MultiModalVolume& v) {
    MultiModalVolume out = v;
    for (int m = 0; m < 4; ++m) {
        const auto& src = v.modality[m].data;
        double sum = 0;
        std::int64_t n = 0;
        for (double x : src)
            if (x != 0.0) {
                sum += x;
                ++n;
            }
        if (n == 0)
            throw std::invalid_argument("normalize: modality '" + std::string(kModalityNames[m]) +
                                        "' of case '" + v.id + "' is all zero");
        const double mean = sum / n;
        double var = 0;
        for (double x : src)
            if (x != 0.0) var += (x - mean) * (x - mean);
        double sd = std::sqrt(var / n);
        if (sd < 1e-12) sd = 1.0;
        auto& dst = out.modality[m].data;
        for (std::size_t i = 0; i < src.size(); ++i)
            dst[i] = src[i] == 0.0 ? 0.0 : (src[i] - mean) / sd;
    }
    return out;
}

// ---------------------------------------------------------------------------
// augmentation: one scale draw, per-axis flips, one random crop; identical
// geometry for all four modalities and the labels
// ---------------------------------------------------------------------------

struct AugmentationSpec {
    double scale_lo = 0.9, scale_hi = 1.1;
    double flip_prob = 0.5;
    std::int64_t crop = 128;
};

namespace detail {

inline Volume resize_trilinear(const Volume& v, const Grid3& out_dims) {
    Volume o{out_dims, v.spacing, std::vector<double>(grid_numel(out_dims))};
    for (int a = 0; a < 3; ++a)
        o.spacing[a] = v.spacing[a] * double(v.dims[a]) / double(out_dims[a]);
    for (std::int64_t z = 0; z < out_dims[0]; ++z)
        for (std::int64_t y = 0; y < out_dims[1]; ++y)
            for (std::int64_t x = 0; x < out_dims[2]; ++x) {
                double c[3];
                const std::int64_t oi[3] = {z, y, x};
                std::int64_t lo[3], hi[3];
                double w[3];
                for (int a = 0; a < 3; ++a) {
                    c[a] = out_dims[a] == 1
                               ? 0.0
                               : double(oi[a]) * double(v.dims[a] - 1) / double(out_dims[a] - 1);
                    lo[a] = static_cast<std::int64_t>(std::floor(c[a]));
                    hi[a] = std::min(lo[a] + 1, v.dims[a] - 1);
                    w[a] = c[a] - double(lo[a]);
                }
                double acc = 0;
                for (int dz = 0; dz < 2; ++dz)
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) {
                            const double wt = (dz ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) *
                                              (dx ? w[2] : 1 - w[2]);
                            if (wt == 0) continue;
                            acc += wt * v.at(dz ? hi[0] : lo[0], dy ? hi[1] : lo[1], dx ? hi[2] : lo[2]);
                        }
                o.at(z, y, x) = acc;
            }
    return o;
}

inline std::vector<std::uint8_t> resize_nearest(const std::vector<std::uint8_t>& data, const Grid3& in,
                                                const Grid3& out) {
    std::vector<std::uint8_t> o(grid_numel(out));
    for (std::int64_t z = 0; z < out[0]; ++z)
        for (std::int64_t y = 0; y < out[1]; ++y)
            for (std::int64_t x = 0; x < out[2]; ++x) {
                const std::int64_t oi[3] = {z, y, x};
                std::int64_t src[3];
                for (int a = 0; a < 3; ++a) {
                    const double c = out[a] == 1 ? 0.0 : double(oi[a]) * double(in[a] - 1) / double(out[a] - 1);
                    src[a] = std::min<std::int64_t>(in[a] - 1, std::llround(c));
                }
                o[(z * out[1] + y) * out[2] + x] = data[(src[0] * in[1] + src[1]) * in[2] + src[2]];
            }
    return o;
}

template <class T>
inline void flip_axis(std::vector<T>& data, const Grid3& dims, int axis) {
    const auto [D, H, W] = dims;
    auto idx = [&](std::int64_t z, std::int64_t y, std::int64_t x) { return (z * H + y) * W + x; };
    for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                std::int64_t m[3] = {z, y, x};
                const std::int64_t lim = dims[axis];
                if (m[axis] >= lim / 2 + lim % 2) continue;
                std::int64_t n[3] = {z, y, x};
                n[axis] = lim - 1 - m[axis];
                if (n[axis] == m[axis]) continue;
                std::swap(data[idx(m[0], m[1], m[2])], data[idx(n[0], n[1], n[2])]);
            }
}

template <class T>
inline std::vector<T> crop_block(const std::vector<T>& data, const Grid3& dims, const Grid3& origin,
                                 std::int64_t size) {
    std::vector<T> o(size * size * size);
    for (std::int64_t z = 0; z < size; ++z)
        for (std::int64_t y = 0; y < size; ++y) {
            const T* src = data.data() + ((origin[0] + z) * dims[1] + origin[1] + y) * dims[2] + origin[2];
            std::copy(src, src + size, o.data() + (z * size + y) * size);
        }
    return o;
}

} // namespace detail

/// Labels are required: augmentation is a training-time transform.
inline std::pair<MultiModalVolume, LabelVolume> augment(const MultiModalVolume& v,
                                                        const AugmentationSpec& spec,
                                                        std::mt19937_64& rng) {
    if (!v.labels) throw std::invalid_argument("augment: case has no labels");

    // fixed draw order keeps the stream stable across spec settings
    const double scale = std::uniform_real_distribution<double>(spec.scale_lo, spec.scale_hi)(rng);
    bool flips[3];
    for (auto& f : flips) f = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.flip_prob;

    Grid3 scaled;
    for (int a = 0; a < 3; ++a)
        scaled[a] = std::max<std::int64_t>(1, std::llround(double(v.dims()[a]) * scale));
    for (int a = 0; a < 3; ++a)
        if (spec.crop > scaled[a])
            throw std::invalid_argument("augment: crop " + std::to_string(spec.crop) +
                                        " exceeds scaled extent " + std::to_string(scaled[a]));

    Grid3 origin;
    for (int a = 0; a < 3; ++a)
        origin[a] = std::uniform_int_distribution<std::int64_t>(0, scaled[a] - spec.crop)(rng);

    MultiModalVolume out;
    out.id = v.id;
    const Grid3 crop_dims{spec.crop, spec.crop, spec.crop};
    for (int m = 0; m < 4; ++m) {
        Volume s = scale == 1.0 && scaled == v.dims() ? v.modality[m]
                                                      : detail::resize_trilinear(v.modality[m], scaled);
        for (int a = 0; a < 3; ++a)
            if (flips[a]) detail::flip_axis(s.data, scaled, a);
        out.modality[m] = Volume{crop_dims, s.spacing, detail::crop_block(s.data, scaled, origin, spec.crop)};
    }
    out.spacing = out.modality[0].spacing;

    LabelVolume lab;
    lab.dims = crop_dims;
    lab.spacing = out.spacing;
    std::vector<std::uint8_t> ldata = scale == 1.0 && scaled == v.labels->dims
                                          ? v.labels->data
                                          : detail::resize_nearest(v.labels->data, v.labels->dims, scaled);
    for (int a = 0; a < 3; ++a)
        if (flips[a]) detail::flip_axis(ldata, scaled, a);
    lab.data = detail::crop_block(ldata, scaled, origin, spec.crop);
    out.labels = lab;
    return {std::move(out), std::move(lab)};
}

// ---------------------------------------------------------------------------
// synthetic phantom: ellipsoidal brain with nested WT/TC/ET regions and
// modality-specific contrasts; stands in for licensed data at desk scale
// ---------------------------------------------------------------------------

inline MultiModalVolume synth_case(std::mt19937_64& rng, std::int64_t size, const std::string& id = "") {
    if (size < 16) throw std::invalid_argument("synth_case: size must be >= 16");
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    const double s = static_cast<double>(size);
    double brain_c[3], brain_r[3];
    for (int a = 0; a < 3; ++a) {
        brain_c[a] = s / 2 + (u01(rng) - 0.5) * s / 8;
        brain_r[a] = s * (0.34 + 0.08 * u01(rng));
    }
    double tum_c[3], wt_r[3], tc_r[3], et_r[3];
    for (int a = 0; a < 3; ++a) {
        tum_c[a] = brain_c[a] + (u01(rng) - 0.5) * 0.3 * brain_r[a];
        wt_r[a] = std::max(3.0, s * (0.16 + 0.06 * u01(rng)));
        tc_r[a] = std::max(2.2, wt_r[a] * 0.65);
        et_r[a] = std::max(1.6, wt_r[a] * 0.38);
    }

    auto inside = [](const double* c, const double* r, double z, double y, double x) {
        const double dz = (z - c[0]) / r[0], dy = (y - c[1]) / r[1], dx = (x - c[2]) / r[2];
        return dz * dz + dy * dy + dx * dx <= 1.0;
    };

    // brain tissue base intensity and per-region shifts, one row per modality
    constexpr double base[4] = {0.80, 0.75, 0.45, 0.55};               // T1 T1ce T2 FLAIR
    constexpr double edema[4] = {-0.15, -0.10, 0.35, 0.40};
    constexpr double necrotic[4] = {-0.30, -0.25, 0.45, 0.10};
    constexpr double enhancing[4] = {-0.05, 0.50, 0.15, 0.15};

    MultiModalVolume v;
    v.id = id.empty() ? "phantom" : id;
    const Grid3 dims{size, size, size};
    for (int m = 0; m < 4; ++m) v.modality[m] = Volume{dims, {1, 1, 1}, std::vector<double>(grid_numel(dims))};
    LabelVolume lab;
    lab.dims = dims;
    lab.data.assign(grid_numel(dims), 0);

    std::normal_distribution<double> noise(0.0, 0.02);
    for (std::int64_t z = 0; z < size; ++z)
        for (std::int64_t y = 0; y < size; ++y)
            for (std::int64_t x = 0; x < size; ++x) {
                const std::int64_t i = (z * size + y) * size + x;
                const double zz = z + 0.5, yy = y + 0.5, xx = x + 0.5;
                if (!inside(brain_c, brain_r, zz, yy, xx)) continue;
                int region = 0; // 0 tissue, else BraTS label
                if (inside(tum_c, et_r, zz, yy, xx)) region = 4;
                else if (inside(tum_c, tc_r, zz, yy, xx)) region = 1;
                else if (inside(tum_c, wt_r, zz, yy, xx)) region = 2;
                lab.data[i] = static_cast<std::uint8_t>(region);
                for (int m = 0; m < 4; ++m) {
                    double val = base[m];
                    if (region == 2) val += edema[m];
                    else if (region == 1) val += necrotic[m];
                    else if (region == 4) val += enhancing[m];
                    v.modality[m].data[i] = std::max(0.05, val + noise(rng));
                }
            }
    v.labels = std::move(lab);
    v.validate();
    return v;
}

} // namespace cfci
