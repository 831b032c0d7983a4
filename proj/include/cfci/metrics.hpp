#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfci {

using Grid3 = std::array<std::int64_t, 3>; // [D,H,W]
using Spacing3 = std::array<double, 3>;    // mm per voxel along [D,H,W]

inline std::int64_t grid_numel(const Grid3& g) { return g[0] * g[1] * g[2]; }

enum class Region { WT, TC, ET };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::WT: return "WT";
        case Region::TC: return "TC";
        case Region::ET: return "ET";
    }
    return "?";
}

inline Region region_from_string(const std::string& s) {
    if (s == "WT" || s == "wt") return Region::WT;
    if (s == "TC" || s == "tc") return Region::TC;
    if (s == "ET" || s == "et") return Region::ET;
    throw std::invalid_argument("unknown region code '" + s + "' (expected WT, TC or ET)");
}

/// BraTS ground-truth mask: voxel labels in {0,1,2,4}.
struct LabelVolume {
    Grid3 dims{};
    std::vector<std::uint8_t> data;
    Spacing3 spacing{1.0, 1.0, 1.0};

    void validate() const {
        if (dims[0] < 1 || dims[1] < 1 || dims[2] < 1)
            throw std::invalid_argument("LabelVolume: non-positive shape");
        if (static_cast<std::int64_t>(data.size()) != grid_numel(dims))
            throw std::invalid_argument("LabelVolume: data size does not match dims");
        for (auto v : data)
            if (v != 0 && v != 1 && v != 2 && v != 4)
                throw std::invalid_argument("LabelVolume: invalid label value " + std::to_string(int(v)) +
                                            " (expected 0, 1, 2 or 4)");
    }
};

struct RegionMask {
    Grid3 dims{};
    std::vector<std::uint8_t> data; // 0/1
    Region region = Region::WT;

    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto v : data) n += v ? 1 : 0;
        return n;
    }
};

/// WT = {1,2,4}, TC = {1,4}, ET = {4}.
inline RegionMask region_extract(const LabelVolume& labels, Region region) {
    RegionMask m;
    m.dims = labels.dims;
    m.region = region;
    m.data.resize(labels.data.size());
    for (std::size_t i = 0; i < labels.data.size(); ++i) {
        const std::uint8_t v = labels.data[i];
        bool in = false;
        switch (region) {
            case Region::WT: in = (v == 1 || v == 2 || v == 4); break;
            case Region::TC: in = (v == 1 || v == 4); break;
            case Region::ET: in = (v == 4); break;
        }
        m.data[i] = in ? 1 : 0;
    }
    return m;
}

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline ConfusionCounts confusion(const RegionMask& pred, const RegionMask& gt) {
    if (pred.dims != gt.dims)
        throw std::invalid_argument("confusion: mask shapes differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i], g = gt.data[i];
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// Dice = 2TP / (2TP + FN + FP); both-empty convention -> 1.
inline double dice(const ConfusionCounts& c) {
    const std::int64_t denom = 2 * c.tp + c.fn + c.fp;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Sensitivity = TP / (TP + FN); empty-set convention -> 1.
inline double sensitivity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fn;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Specificity as printed in the reference formulation: TP / (TP + FP).
inline double specificity(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fp;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(denom);
}

/// Conventional true-negative-rate specificity: TN / (TN + FP).
inline double specificity_tnr(const ConfusionCounts& c) {
    const std::int64_t denom = c.tn + c.fp;
    if (denom == 0) return 1.0;
    return static_cast<double>(c.tn) / static_cast<double>(denom);
}

// ---------------------------------------------------------------------------
// HD95: boundary voxels (6-connectivity), exact euclidean distance transform,
// 95th percentile per direction with linear interpolation, symmetric max.
// ---------------------------------------------------------------------------

namespace detail {

/// Boundary = true voxel with a false/outside 6-neighbour.
inline std::vector<std::uint8_t> boundary_mask(const RegionMask& m) {
    const auto [D, H, W] = m.dims;
    std::vector<std::uint8_t> b(m.data.size(), 0);
    auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) -> bool {
        if (z < 0 || z >= D || y < 0 || y >= H || x < 0 || x >= W) return false;
        return m.data[(z * H + y) * W + x] != 0;
    };
    for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                if (!at(z, y, x)) continue;
                if (!(at(z - 1, y, x) && at(z + 1, y, x) && at(z, y - 1, x) && at(z, y + 1, x) &&
                      at(z, y, x - 1) && at(z, y, x + 1)))
                    b[(z * H + y) * W + x] = 1;
            }
    return b;
}

constexpr double kEdtInf = 1e300;

/// 1-D lower envelope of parabolas rooted at positions pos[i] with heights
/// f[i]; writes squared distances back into f. Infinite heights are valid
/// (no site at that sample).
inline void edt_1d(std::vector<double>& f, const std::vector<double>& pos, std::vector<int>& v,
                   std::vector<double>& z, std::vector<double>& out) {
    const int n = static_cast<int>(f.size());
    int nsites = 0;
    for (int i = 0; i < n; ++i)
        if (f[i] < kEdtInf) v[nsites++] = i; // v temporarily holds finite-site indices
    if (nsites == 0) {
        std::fill(f.begin(), f.end(), kEdtInf);
        return;
    }
    // build envelope over the finite sites only; env[0..k] reuses v in place,
    // which is safe because the envelope never outruns the site cursor
    int k = 0;
    z[0] = -kEdtInf;
    z[1] = kEdtInf;
    std::vector<int>& env = v;
    for (int si = 1; si < nsites; ++si) {
        const int q = v[si];
        double s = 0;
        while (k >= 0) {
            const int p = env[k];
            s = ((f[q] + pos[q] * pos[q]) - (f[p] + pos[p] * pos[p])) / (2 * pos[q] - 2 * pos[p]);
            if (s <= z[k]) --k;
            else break;
        }
        ++k;
        env[k] = q;
        z[k] = s;
        z[k + 1] = kEdtInf;
    }
    int kk = 0;
    for (int q = 0; q < n; ++q) {
        while (z[kk + 1] < pos[q]) ++kk;
        const double d = pos[q] - pos[env[kk]];
        out[q] = d * d + f[env[kk]];
    }
    std::copy(out.begin(), out.begin() + n, f.begin());
}

/// Exact squared EDT to the set of seed voxels, anisotropic spacing.
inline std::vector<double> edt_sq(const std::vector<std::uint8_t>& seeds, const Grid3& dims,
                                  const Spacing3& spacing) {
    const auto [D, H, W] = dims;
    std::vector<double> dist(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) dist[i] = seeds[i] ? 0.0 : kEdtInf;

    const std::int64_t maxn = std::max({D, H, W});
    std::vector<double> f(maxn), pos(maxn), z(maxn + 1), out(maxn);
    std::vector<int> v(maxn);

    // along W
    for (std::int64_t i = 0; i < W; ++i) pos[i] = i * spacing[2];
    std::vector<double> posW(pos.begin(), pos.begin() + W);
    for (std::int64_t zi = 0; zi < D; ++zi)
        for (std::int64_t yi = 0; yi < H; ++yi) {
            double* row = dist.data() + (zi * H + yi) * W;
            f.assign(row, row + W);
            f.resize(W);
            edt_1d(f, posW, v, z, out);
            std::copy(f.begin(), f.begin() + W, row);
        }
    // along H
    std::vector<double> posH(H);
    for (std::int64_t i = 0; i < H; ++i) posH[i] = i * spacing[1];
    for (std::int64_t zi = 0; zi < D; ++zi)
        for (std::int64_t xi = 0; xi < W; ++xi) {
            f.resize(H);
            for (std::int64_t yi = 0; yi < H; ++yi) f[yi] = dist[(zi * H + yi) * W + xi];
            edt_1d(f, posH, v, z, out);
            for (std::int64_t yi = 0; yi < H; ++yi) dist[(zi * H + yi) * W + xi] = f[yi];
        }
    // along D
    std::vector<double> posD(D);
    for (std::int64_t i = 0; i < D; ++i) posD[i] = i * spacing[0];
    for (std::int64_t yi = 0; yi < H; ++yi)
        for (std::int64_t xi = 0; xi < W; ++xi) {
            f.resize(D);
            for (std::int64_t zi = 0; zi < D; ++zi) f[zi] = dist[(zi * H + yi) * W + xi];
            edt_1d(f, posD, v, z, out);
            for (std::int64_t zi = 0; zi < D; ++zi) dist[(zi * H + yi) * W + xi] = f[zi];
        }
    return dist;
}

/// 95th percentile with linear interpolation over the sorted list.
inline double percentile_95(std::vector<double>& values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n == 1) return values[0];
    const double rank = 0.95 * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= n) return values[n - 1];
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

} // namespace detail

/// 95th-percentile symmetric Hausdorff distance between mask boundaries.
/// Both masks empty -> 0; exactly one empty -> nullopt (undefined).
inline std::optional<double> hausdorff95(const RegionMask& a, const RegionMask& b,
                                         const Spacing3& spacing = {1.0, 1.0, 1.0}) {
    if (a.dims != b.dims) throw std::invalid_argument("hausdorff95: mask shapes differ");
    const std::int64_t na = a.count(), nb = b.count();
    if (na == 0 && nb == 0) return 0.0;
    if (na == 0 || nb == 0) return std::nullopt;

    const auto ba = detail::boundary_mask(a);
    const auto bb = detail::boundary_mask(b);
    const auto da = detail::edt_sq(ba, a.dims, spacing); // distance to A's boundary
    const auto db = detail::edt_sq(bb, b.dims, spacing); // distance to B's boundary

    auto directed = [&](const std::vector<std::uint8_t>& from, const std::vector<double>& dist_to_other) {
        std::vector<double> ds;
        for (std::size_t i = 0; i < from.size(); ++i)
            if (from[i]) ds.push_back(std::sqrt(dist_to_other[i]));
        return detail::percentile_95(ds);
    };
    return std::max(directed(ba, db), directed(bb, da));
}

/// Per-region evaluation record.
struct RegionMetrics {
    Region region;
    ConfusionCounts counts;
    double dice_score = 0, sensitivity_score = 0, specificity_score = 0, specificity_tnr_score = 0;
    std::optional<double> hd95;
};

inline RegionMetrics evaluate_region(const LabelVolume& pred, const LabelVolume& gt, Region region) {
    if (pred.dims != gt.dims) throw std::invalid_argument("evaluate: prediction/GT shapes differ");
    RegionMetrics r;
    r.region = region;
    const RegionMask pm = region_extract(pred, region);
    const RegionMask gm = region_extract(gt, region);
    r.counts = confusion(pm, gm);
    r.dice_score = dice(r.counts);
    r.sensitivity_score = sensitivity(r.counts);
    r.specificity_score = specificity(r.counts);
    r.specificity_tnr_score = specificity_tnr(r.counts);
    r.hd95 = hausdorff95(pm, gm, gt.spacing);
    return r;
}

inline std::array<RegionMetrics, 3> evaluate_all_regions(const LabelVolume& pred, const LabelVolume& gt) {
    return {evaluate_region(pred, gt, Region::WT), evaluate_region(pred, gt, Region::TC),
            evaluate_region(pred, gt, Region::ET)};
}

} // namespace cfci
