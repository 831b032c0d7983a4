#include <catch2/catch.hpp>

#include <random>

#include "cfci/infer.hpp"

using namespace cfci;

namespace {

// position-independent model: constant logits everywhere
PatchModel constant_model(std::vector<double> class_logits, std::int64_t p) {
    return [class_logits, p](const Tensor&) {
        Tensor out({1, static_cast<std::int64_t>(class_logits.size()), p, p, p});
        for (std::size_t c = 0; c < class_logits.size(); ++c)
            for (std::int64_t i = 0; i < p * p * p; ++i)
                out[static_cast<std::int64_t>(c) * p * p * p + i] = class_logits[c];
        return out;
    };
}

MultiModalVolume flat_case(Grid3 dims) {
    MultiModalVolume v;
    v.id = "flat";
    for (int m = 0; m < 4; ++m)
        v.modality[m] = Volume{dims, {1, 1, 1}, std::vector<double>(grid_numel(dims), 0.5)};
    return v;
}

} // namespace

TEST_CASE("tile positions") {
    SECTION("exact fit gives a single origin") {
        SlidingSpec spec{128, 0.75};
        auto tiles = tile_positions({128, 128, 128}, spec);
        REQUIRE(tiles.size() == 1);
        REQUIRE(tiles[0] == Grid3{0, 0, 0});
    }
    SECTION("extent 160 at 75% overlap gives origins 0 and 32") {
        REQUIRE(SlidingSpec{128, 0.75}.stride() == 32);
        auto xs = tile_positions_1d(160, 128, 32);
        REQUIRE(xs == std::vector<std::int64_t>{0, 32});
    }
    SECTION("extent 130 clamps the last origin to 2") {
        auto xs = tile_positions_1d(130, 128, 32);
        REQUIRE(xs == std::vector<std::int64_t>{0, 2});
    }
    SECTION("native 155-slice depth axis tiles without padding") {
        auto xs = tile_positions_1d(155, 128, 32);
        REQUIRE(xs == std::vector<std::int64_t>{0, 27});
    }
    SECTION("full coverage for assorted shapes") {
        std::mt19937_64 rng(71);
        for (int t = 0; t < 30; ++t) {
            SlidingSpec spec{8, std::uniform_real_distribution<double>(0.0, 0.9)(rng)};
            Grid3 g{8 + std::int64_t(rng() % 12), 8 + std::int64_t(rng() % 12), 8 + std::int64_t(rng() % 12)};
            auto cov = coverage_counts(g, spec);
            for (auto c : cov) REQUIRE(c >= 1);
        }
    }
    SECTION("coverage counts on extent 160 / patch 128 / stride 32") {
        SlidingSpec spec{128, 0.75};
        auto xs = tile_positions_1d(160, 128, 32);
        // oracle: voxels 32..127 covered twice along the axis, others once
        std::vector<int> cov(160, 0);
        for (auto o : xs)
            for (int i = 0; i < 128; ++i) ++cov[o + i];
        for (int i = 0; i < 160; ++i) REQUIRE(cov[i] == ((i >= 32 && i <= 127) ? 2 : 1));
    }
    SECTION("invalid overlap rejected") {
        REQUIRE_THROWS_AS((SlidingSpec{128, 1.0}.validate()), std::invalid_argument);
        REQUIRE_THROWS_AS((SlidingSpec{128, -0.1}.validate()), std::invalid_argument);
    }
}

TEST_CASE("sliding window inference") {
    SECTION("constant model is overlap-invariant") {
        auto v = flat_case({12, 12, 12});
        auto model = constant_model({0.1, 1.4, 0.3, -0.2}, 8);
        Tensor ref;
        for (double ov : {0.0, 0.5, 0.75}) {
            auto res = sliding_window_infer(v, model, SlidingSpec{8, ov});
            REQUIRE(res.probabilities.shape() == Shape{4, 12, 12, 12});
            if (!ref.defined()) {
                ref = res.probabilities;
            } else {
                for (std::int64_t i = 0; i < ref.numel(); ++i)
                    REQUIRE(res.probabilities[i] == Approx(ref[i]).margin(1e-12));
            }
            // every voxel argmaxes to class 1 -> label 1
            for (auto d : res.prediction.data) REQUIRE(d == 1);
        }
    }
    SECTION("zero overlap on an exact multiple equals disjoint stitching") {
        Grid3 dims{8, 8, 8};
        MultiModalVolume v = flat_case(dims);
        // model echoes the patch mean of modality 0 into class-1 logits,
        // so disjoint tiles are directly comparable
        PatchModel model = [](const Tensor& patch) {
            double mean = 0;
            const std::int64_t n = 4 * 4 * 4;
            for (std::int64_t i = 0; i < n; ++i) mean += patch[i];
            mean /= n;
            Tensor out({1, 4, 4, 4, 4});
            for (std::int64_t i = 0; i < n; ++i) out[n + i] = mean;
            return out;
        };
        // distinct octant values
        for (int m = 0; m < 4; ++m)
            for (std::int64_t z = 0; z < 8; ++z)
                for (std::int64_t y = 0; y < 8; ++y)
                    for (std::int64_t x = 0; x < 8; ++x)
                        v.modality[m].at(z, y, x) = double((z / 4) * 4 + (y / 4) * 2 + (x / 4));
        auto res = sliding_window_infer(v, model, SlidingSpec{4, 0.0});
        auto cov = coverage_counts({8, 8, 8}, SlidingSpec{4, 0.0});
        for (auto c : cov) REQUIRE(c == 1);
        // probability in each octant equals softmax of that octant's mean
        for (std::int64_t z = 0; z < 8; ++z)
            for (std::int64_t y = 0; y < 8; ++y)
                for (std::int64_t x = 0; x < 8; ++x) {
                    const double logit = double((z / 4) * 4 + (y / 4) * 2 + (x / 4));
                    const double e = std::exp(logit);
                    const double want = e / (3.0 + e);
                    const std::int64_t i = (z * 8 + y) * 8 + x;
                    REQUIRE(res.probabilities[512 + i] == Approx(want).margin(1e-12));
                }
    }
    SECTION("volume smaller than patch is padded and cropped back") {
        auto v = flat_case({5, 6, 7});
        auto res = sliding_window_infer(v, constant_model({0, 2, 0, 0}, 8), SlidingSpec{8, 0.5});
        REQUIRE(res.prediction.dims == Grid3{5, 6, 7});
        for (auto d : res.prediction.data) REQUIRE(d == 1);
    }
    SECTION("tile order does not change the average") {
        std::mt19937_64 rng(72);
        auto v = flat_case({10, 10, 10});
        for (int m = 0; m < 4; ++m)
            for (auto& x : v.modality[m].data) x = std::uniform_real_distribution<double>(0, 1)(rng);
        // model with genuine position dependence
        PatchModel model = [](const Tensor& patch) {
            Tensor out({1, 4, 8, 8, 8});
            for (std::int64_t i = 0; i < 8 * 8 * 8; ++i) {
                out[i] = patch[i];
                out[8 * 8 * 8 + i] = -patch[i];
            }
            return out;
        };
        SlidingSpec spec{8, 0.75};
        auto a = sliding_window_infer(v, model, spec);
        auto origins = tile_positions({10, 10, 10}, spec);
        std::shuffle(origins.begin(), origins.end(), rng);
        auto b = sliding_window_infer(v, model, spec, 4, &origins);
        for (std::int64_t i = 0; i < a.probabilities.numel(); ++i)
            REQUIRE(a.probabilities[i] == Approx(b.probabilities[i]).margin(1e-6));
    }
    SECTION("bad model output shape rejected") {
        auto v = flat_case({8, 8, 8});
        PatchModel bad = [](const Tensor&) { return Tensor({1, 4, 4, 4, 4}); };
        REQUIRE_THROWS_AS(sliding_window_infer(v, bad, SlidingSpec{8, 0.0}), std::invalid_argument);
    }
}
