#include <catch2/catch.hpp>

#include "cfci/scff.hpp"
#include "testing_util.hpp"

using namespace cfci;
using cfci::testing::max_grad_rel_err;

namespace {

// identity 1x1x1 conv: weight[c][c] = 1, zero bias
void make_identity_pointwise(Conv3dLayer& l) {
    Tensor& w = l.weight.value_mut();
    w.fill(0.0);
    const std::int64_t c = w.shape()[0];
    for (std::int64_t i = 0; i < c; ++i) w[i * c + i] = 1.0;
    l.bias.value_mut().fill(0.0);
}

ScffGate identity_gate(std::int64_t c, std::mt19937_64& rng) {
    ScffGate g(c, rng);
    make_identity_pointwise(g.pw_d);
    make_identity_pointwise(g.pw_h);
    make_identity_pointwise(g.pw_w);
    g.eca_kernel.value_mut().fill(0.0);
    g.eca_kernel.value_mut()[(g.eca_kernel.numel() - 1) / 2] = 1.0; // delta kernel
    return g;
}

} // namespace

TEST_CASE("channel kernel size rule") {
    REQUIRE(channel_kernel_size(2) == 1);
    REQUIRE(channel_kernel_size(64) == 3);  // (6+1)/2 = 3.5 -> floor 3, odd
    REQUIRE(channel_kernel_size(256) == 5); // (8+1)/2 = 4.5 -> floor 4, bump to 5
    REQUIRE(channel_kernel_size(1) == 1);
    for (std::int64_t c = 1; c <= 1024; c *= 2) {
        const auto k = channel_kernel_size(c);
        REQUIRE(k >= 1);
        REQUIRE(k % 2 == 1);
    }
    REQUIRE_THROWS_AS(channel_kernel_size(0), std::invalid_argument);
}

TEST_CASE("spatial weight pooling") {
    std::mt19937_64 rng(21);

    SECTION("constant input with identity pointwise convs gives 3c") {
        auto g = identity_gate(2, rng);
        Var f = Var::leaf(Tensor({1, 2, 3, 3, 3}, 1.7));
        Tensor s = g.spatial_weight(f).value();
        REQUIRE(s.shape() == Shape{1, 2, 3, 3, 3});
        for (std::int64_t i = 0; i < s.numel(); ++i) REQUIRE(s[i] == Approx(3 * 1.7));
    }
    SECTION("degenerate spatial extent: each branch equals the input") {
        auto g = identity_gate(3, rng);
        Tensor x = Tensor::randn({2, 3, 1, 1, 1}, rng);
        Var f = Var::leaf(x);
        Tensor s = g.spatial_weight(f).value();
        for (std::int64_t i = 0; i < s.numel(); ++i) REQUIRE(s[i] == Approx(3 * x[i]));
    }
    SECTION("values 1..8: per-voxel sum of the three axis means") {
        auto g = identity_gate(1, rng);
        std::vector<double> vals(8);
        for (int i = 0; i < 8; ++i) vals[i] = i + 1;
        Tensor x({1, 1, 2, 2, 2}, vals);
        Tensor s = g.spatial_weight(Var::leaf(x)).value();
        auto at = [&](int z, int y, int xx) { return vals[(z * 2 + y) * 2 + xx]; };
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y)
                for (int xx = 0; xx < 2; ++xx) {
                    const double md = (at(z, 0, 0) + at(z, 0, 1) + at(z, 1, 0) + at(z, 1, 1)) / 4;
                    const double mh = (at(0, y, 0) + at(0, y, 1) + at(1, y, 0) + at(1, y, 1)) / 4;
                    const double mw = (at(0, 0, xx) + at(0, 1, xx) + at(1, 0, xx) + at(1, 1, xx)) / 4;
                    REQUIRE(s[(z * 2 + y) * 2 + xx] == Approx(md + mh + mw));
                }
    }
}

TEST_CASE("channel weight") {
    std::mt19937_64 rng(22);

    SECTION("delta kernel reproduces per-channel spatial means") {
        auto g = identity_gate(4, rng); // K(4)=1, kernel = [1]
        REQUIRE(g.eca_kernel.numel() == 1);
        Tensor x = Tensor::randn({1, 4, 2, 2, 2}, rng);
        Tensor c = g.channel_weight(Var::leaf(x)).value();
        REQUIRE(c.shape() == Shape{1, 4, 1, 1, 1});
        for (int ch = 0; ch < 4; ++ch) {
            double m = 0;
            for (int i = 0; i < 8; ++i) m += x[ch * 8 + i];
            REQUIRE(c[ch] == Approx(m / 8));
        }
    }
    SECTION("K=3 kernel: interior channels get c * sum(w)") {
        ScffGate g(8, rng); // K(8)=(3+1)/2=2 -> 3
        REQUIRE(g.eca_kernel.numel() == 3);
        Tensor kw({3}, {0.25, 0.5, -0.125});
        g.eca_kernel.value_mut() = kw;
        Var f = Var::leaf(Tensor({1, 8, 1, 1, 1}, 2.0));
        Tensor c = g.channel_weight(f).value();
        const double full = 2.0 * (0.25 + 0.5 - 0.125);
        for (int ch = 1; ch < 7; ++ch) REQUIRE(c[ch] == Approx(full));
        // zero padding clips one tap at the edges
        REQUIRE(c[0] == Approx(2.0 * (0.5 - 0.125)));
        REQUIRE(c[7] == Approx(2.0 * (0.25 + 0.5)));
    }
    SECTION("single channel forces K=1") {
        ScffGate g(1, rng);
        REQUIRE(g.eca_kernel.numel() == 1);
    }
}

TEST_CASE("complementary gate") {
    std::mt19937_64 rng(23);

    SECTION("zero inputs and zero-initialised convs give 0.5 everywhere") {
        ScffGate g(2, rng);
        g.pw_d.weight.value_mut().fill(0);
        g.pw_h.weight.value_mut().fill(0);
        g.pw_w.weight.value_mut().fill(0);
        g.eca_kernel.value_mut().fill(0);
        Var z = Var::leaf(Tensor({1, 2, 2, 2, 2}, 0.0));
        Tensor gate = g(z, z).value();
        for (std::int64_t i = 0; i < gate.numel(); ++i) REQUIRE(gate[i] == 0.5);
    }
    SECTION("gate stays strictly inside (0,1)") {
        ScffGate g(4, rng);
        Tensor a = Tensor::randn({2, 4, 3, 3, 3}, rng, 5.0);
        Tensor b = Tensor::randn({2, 4, 3, 3, 3}, rng, 5.0);
        Tensor gate = g(Var::leaf(a), Var::leaf(b)).value();
        for (std::int64_t i = 0; i < gate.numel(); ++i) {
            REQUIRE(gate[i] > 0.0);
            REQUIRE(gate[i] < 1.0);
        }
    }
    SECTION("logit +20 saturates above 0.9999") {
        auto g = identity_gate(1, rng);
        // identity branches on constant input c: logits = 3c + c = 4c
        Var f = Var::leaf(Tensor({1, 1, 2, 2, 2}, 5.0));
        Tensor gate = g(f, Var::leaf(Tensor({1, 1, 2, 2, 2}, 0.0))).value();
        for (std::int64_t i = 0; i < gate.numel(); ++i) REQUIRE(gate[i] > 0.9999);
    }
    SECTION("shape mismatch rejected") {
        ScffGate g(2, rng);
        Var a = Var::leaf(Tensor({1, 2, 2, 2, 2}));
        Var b = Var::leaf(Tensor({1, 2, 2, 2, 1}));
        REQUIRE_THROWS_AS(g(a, b), std::invalid_argument);
    }
}

TEST_CASE("scff pair fusion") {
    std::mt19937_64 rng(24);
    ScffFusion scff(2, rng);

    SECTION("equal pair members pass through unchanged") {
        Tensor t1 = Tensor::randn({1, 2, 2, 2, 2}, rng);
        Tensor t1ce = Tensor::randn({1, 2, 2, 2, 2}, rng);
        Var a = Var::leaf(t1), b = Var::leaf(t1ce);
        Tensor z = scff.fused_pairs(a, a, b, b).value();
        REQUIRE(z.shape() == Shape{1, 4, 2, 2, 2});
        for (std::int64_t i = 0; i < 16; ++i) {
            REQUIRE(z[i] == Approx(t1[i]).margin(1e-12));
            REQUIRE(z[16 + i] == Approx(t1ce[i]).margin(1e-12));
        }
    }
    SECTION("saturated gate copies the first modality exactly") {
        ScffFusion s(1, rng);
        // +50 bias on every gate branch drives the sigmoid to exactly 1.0
        s.gate1.pw_d.bias.value_mut().fill(50.0);
        Tensor t1 = Tensor::randn({1, 1, 2, 2, 2}, rng);
        Tensor t2 = Tensor::randn({1, 1, 2, 2, 2}, rng);
        Var a = Var::leaf(t1), b = Var::leaf(t2);
        Tensor z = s.fused_pairs(a, b, a, b).value();
        for (std::int64_t i = 0; i < 8; ++i) REQUIRE(z[i] == t1[i]);
    }
    SECTION("fusion equals independently computed gate blend") {
        // small config the oracle can evaluate with plain loops:
        // identity pointwise convs, delta channel kernel
        ScffFusion s(2, rng);
        s.gate1 = identity_gate(2, rng);
        Tensor a = Tensor::randn({1, 2, 2, 2, 2}, rng);
        Tensor b = Tensor::randn({1, 2, 2, 2, 2}, rng);
        Tensor zz = s.fused_pairs(Var::leaf(a), Var::leaf(b), Var::leaf(a), Var::leaf(b)).value();

        // oracle: logits = mean_HW + mean_DW + mean_DH + mean_DHW of (a+b)
        auto sum_at = [&](int c, int z, int y, int x) {
            const std::int64_t i = ((c * 2 + z) * 2 + y) * 2 + x;
            return a[i] + b[i];
        };
        for (int c = 0; c < 2; ++c)
            for (int z = 0; z < 2; ++z)
                for (int y = 0; y < 2; ++y)
                    for (int x = 0; x < 2; ++x) {
                        double md = 0, mh = 0, mw = 0, g4 = 0;
                        for (int i = 0; i < 2; ++i)
                            for (int j = 0; j < 2; ++j) {
                                md += sum_at(c, z, i, j);
                                mh += sum_at(c, i, y, j);
                                mw += sum_at(c, i, j, x);
                            }
                        for (int i = 0; i < 8; ++i) g4 += sum_at(c, i / 4, (i / 2) % 2, i % 2);
                        const double logit = md / 4 + mh / 4 + mw / 4 + g4 / 8;
                        const double gate = 1.0 / (1.0 + std::exp(-logit));
                        const std::int64_t idx = ((c * 2 + z) * 2 + y) * 2 + x;
                        const double want = gate * a[idx] + (1 - gate) * b[idx];
                        REQUIRE(zz[idx] == Approx(want).margin(1e-12));
                    }
    }
    SECTION("convexity and complement across random inputs") {
        for (int t = 0; t < 20; ++t) {
            Tensor a = Tensor::randn({1, 2, 2, 2, 2}, rng, 2.0);
            Tensor b = Tensor::randn({1, 2, 2, 2, 2}, rng, 2.0);
            Var va = Var::leaf(a), vb = Var::leaf(b);
            Tensor gate = scff.gate1(va, vb).value();
            Tensor fused = pair_fusion(va, vb, Var::leaf(gate)).value();
            for (std::int64_t i = 0; i < fused.numel(); ++i) {
                REQUIRE(fused[i] >= std::min(a[i], b[i]) - 1e-12);
                REQUIRE(fused[i] <= std::max(a[i], b[i]) + 1e-12);
                // weights on the two modalities sum to exactly 1
                REQUIRE(gate[i] + (1.0 - gate[i]) == 1.0);
            }
            // swap-complement: fusion(b,a,1-g) == fusion(a,b,g)
            Tensor comp{Shape(gate.shape())};
            for (std::int64_t i = 0; i < comp.numel(); ++i) comp[i] = 1.0 - gate[i];
            Tensor swapped = pair_fusion(vb, va, Var::leaf(comp)).value();
            for (std::int64_t i = 0; i < fused.numel(); ++i)
                REQUIRE(swapped[i] == Approx(fused[i]).margin(1e-12));
        }
    }
    SECTION("fixed-gate variant averages the pair") {
        ScffFusion plain(2, rng, false);
        Tensor a = Tensor::randn({1, 2, 2, 2, 2}, rng);
        Tensor b = Tensor::randn({1, 2, 2, 2, 2}, rng);
        Tensor z = plain.fused_pairs(Var::leaf(a), Var::leaf(b), Var::leaf(a), Var::leaf(b)).value();
        for (std::int64_t i = 0; i < 16; ++i) REQUIRE(z[i] == Approx(0.5 * (a[i] + b[i])));
    }
}

TEST_CASE("scff full block shape and gradients") {
    std::mt19937_64 rng(25);
    ScffFusion scff(2, rng);

    Var t1 = Var::param(Tensor::randn({1, 2, 2, 2, 2}, rng));
    Var t2 = Var::param(Tensor::randn({1, 2, 2, 2, 2}, rng));
    Var t1ce = Var::param(Tensor::randn({1, 2, 2, 2, 2}, rng));
    Var fl = Var::param(Tensor::randn({1, 2, 2, 2, 2}, rng));

    Tensor out = scff(t1, t2, t1ce, fl, true).value();
    REQUIRE(out.shape() == Shape{1, 2, 2, 2, 2});

    SECTION("gradient check vs central differences") {
        Var weight = Var::leaf(Tensor::randn({1, 2, 2, 2, 2}, rng));
        auto loss = [&] { return sum_all(mul(scff(t1, t2, t1ce, fl, true), weight)); };
        NamedVars ps;
        scff.params("scff", ps);
        std::vector<Var> probes = {t1, t2, t1ce, fl};
        for (auto& [name, v] : ps) probes.push_back(v);
        REQUIRE(max_grad_rel_err(probes, loss) < 1e-3);
    }
}
