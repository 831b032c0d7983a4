#include <catch2/catch.hpp>

#include <set>

#include "cfci/core/optim.hpp"
#include "cfci/network.hpp"

using namespace cfci;

namespace {

NetworkConfig tiny_net(std::int64_t input = 16) {
    NetworkConfig c;
    c.base_width = 4;
    c.depth = 2;
    c.input_size = input;
    c.mfci.l1 = 1;
    c.mfci.l2 = 1;
    c.mfci.heads = 2;
    c.mfci.embed_dim = 8;
    c.mfci.patch_size = 2;
    return c;
}

} // namespace

TEST_CASE("encoder stage walk") {
    std::mt19937_64 rng(41);

    SECTION("depth-4 halving arithmetic and width schedule") {
        NetworkConfig c;
        c.base_width = 2;
        c.depth = 4;
        c.input_size = 32;
        c.mfci.patch_size = 2;
        Encoder enc(1, c.stage_widths(), rng);
        auto feats = enc(Var::leaf(Tensor::randn({1, 1, 32, 32, 32}, rng)), true);
        REQUIRE(feats.size() == 4);
        const std::int64_t sizes[4] = {16, 8, 4, 2};
        const std::int64_t widths[4] = {2, 4, 8, 16};
        for (int i = 0; i < 4; ++i) {
            REQUIRE(feats[i].shape() == Shape{1, widths[i], sizes[i], sizes[i], sizes[i]});
        }
    }
    SECTION("divisibility rejection") {
        Encoder enc(1, {2, 4}, rng);
        REQUIRE_THROWS_AS(enc(Var::leaf(Tensor({1, 1, 6, 8, 8})), true), std::invalid_argument);
    }
    SECTION("zero input with bias-free params stays zero") {
        Encoder enc(1, {2, 4}, rng);
        NamedVars ps;
        enc.params("e", ps);
        for (auto& [n, v] : ps)
            if (n.find("bias") != std::string::npos || n.find("beta") != std::string::npos)
                v.value_mut().fill(0);
        auto feats = enc(Var::leaf(Tensor({1, 1, 8, 8, 8})), true);
        for (const auto& f : feats)
            for (std::int64_t i = 0; i < f.numel(); ++i) REQUIRE(f.value()[i] == 0.0);
    }
}

TEST_CASE("cfci forward contract") {
    std::mt19937_64 rng(42);
    CfciNet net(tiny_net(), rng);

    SECTION("output shape and determinism") {
        Tensor x = Tensor::randn({1, 4, 16, 16, 16}, rng);
        NoGradGuard ng;
        Tensor a = net(Var::leaf(x), false).value();
        REQUIRE(a.shape() == Shape{1, 4, 16, 16, 16});
        Tensor b = net(Var::leaf(x), false).value();
        for (std::int64_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);
    }
    SECTION("input size mismatch rejected") {
        REQUIRE_THROWS_AS(net(Var::leaf(Tensor({1, 4, 8, 8, 8})), false), std::invalid_argument);
        REQUIRE_THROWS_AS(net(Var::leaf(Tensor({1, 3, 16, 16, 16})), false), std::invalid_argument);
    }
    SECTION("encoder parameters are distinct objects") {
        REQUIRE(net.encoders.size() == 4);
        std::set<const double*> seen;
        for (const auto& enc : net.encoders) {
            NamedVars ps;
            enc.params("e", ps);
            for (auto& [n, v] : ps) {
                REQUIRE(seen.count(v.value().data()) == 0);
                seen.insert(v.value().data());
            }
        }
    }
}

TEST_CASE("gradient reaches every parameter group") {
    std::mt19937_64 rng(43);
    NetworkConfig c = tiny_net(32);
    c.depth = 3;
    CfciNet net(c, rng);
    auto named = net.named_params();
    std::vector<Var> params;
    for (auto& [n, v] : named) params.push_back(v);
    AdamW opt(params, 0.0);

    Tensor x = Tensor::randn({1, 4, 32, 32, 32}, rng);
    opt.zero_grad();
    Var logits = net(Var::leaf(x), true);
    Var target = Var::leaf(Tensor::randn({1, 4, 32, 32, 32}, rng));
    Var loss = mean_all(square(sub(logits, target)));
    backward(loss);

    int dead = 0;
    for (auto& [name, v] : named) {
        double mx = 0;
        if (v.has_grad())
            for (std::int64_t i = 0; i < v.numel(); ++i) mx = std::max(mx, std::abs(v.grad()[i]));
        if (mx == 0.0) {
            ++dead;
            WARN("zero gradient tensor: " << name);
        }
    }
    REQUIRE(dead == 0);

    // one optimizer step changes the loss
    const double before = loss.value().item();
    opt.step(1e-3);
    NoGradGuard ng;
    Var logits2 = net(Var::leaf(x), true);
    const double after = mean_all(square(sub(logits2, target))).value().item();
    REQUIRE(after != before);
}

TEST_CASE("modality sensitivity") {
    std::mt19937_64 rng(44);
    CfciNet net(tiny_net(), rng);
    // brief training pulls the gates and attention away from init symmetry
    auto named = net.named_params();
    std::vector<Var> params;
    for (auto& [n, v] : named) params.push_back(v);
    AdamW opt(params, 0.0);
    Tensor x = Tensor::randn({1, 4, 16, 16, 16}, rng);
    Var target = Var::leaf(Tensor::randn({1, 4, 16, 16, 16}, rng));
    for (int it = 0; it < 3; ++it) {
        opt.zero_grad();
        Var loss = mean_all(square(sub(net(Var::leaf(x), true), target)));
        backward(loss);
        opt.step(1e-3);
    }

    NoGradGuard ng;
    Tensor base = net(Var::leaf(x), false).value();
    for (int m = 0; m < 4; ++m) {
        Tensor xz = x.clone();
        for (std::int64_t i = 0; i < 16 * 16 * 16; ++i) xz[m * 16 * 16 * 16 + i] = 0.0;
        Tensor out = net(Var::leaf(xz), false).value();
        double diff = 0;
        for (std::int64_t i = 0; i < out.numel(); ++i) diff = std::max(diff, std::abs(out[i] - base[i]));
        INFO("modality " << m);
        REQUIRE(diff > 1e-8);
    }
}

TEST_CASE("network variants") {
    std::mt19937_64 rng(45);

    SECTION("single-encoder baseline") {
        NetworkConfig c = tiny_net();
        c.parallel_encoders = false;
        c.enable_scff = false;
        c.enable_mfci = false;
        CfciNet net(c, rng);
        REQUIRE(net.encoders.size() == 1);
        NoGradGuard ng;
        Tensor out = net(Var::leaf(Tensor::randn({1, 4, 16, 16, 16}, rng)), false).value();
        REQUIRE(out.shape() == Shape{1, 4, 16, 16, 16});
    }
    SECTION("single encoder with modules enabled is rejected") {
        NetworkConfig c = tiny_net();
        c.parallel_encoders = false;
        REQUIRE_THROWS_AS(CfciNet(c, rng), std::invalid_argument);
    }
    SECTION("all pairings construct and run") {
        for (auto p : {Pairing::T1T2_T1ceFlair, Pairing::T1T1ce_T2Flair, Pairing::T1Flair_T1ceT2}) {
            NetworkConfig c = tiny_net();
            c.pairing = p;
            CfciNet net(c, rng);
            NoGradGuard ng;
            REQUIRE(net(Var::leaf(Tensor::randn({1, 4, 16, 16, 16}, rng)), false).shape() ==
                    Shape{1, 4, 16, 16, 16});
        }
    }
}

TEST_CASE("parameter counting") {
    std::mt19937_64 rng(46);

    SECTION("bias-free pointwise conv 2->4 has 8 parameters") {
        Conv3dLayer l(2, 4, 1, 1, 0, rng, false);
        REQUIRE(l.weight.numel() == 8);
    }
    SECTION("default configuration lands near the reported budget") {
        NetworkConfig c; // defaults: base 16, depth 4, 128^3
        CfciNet net(c, rng);
        const double m = param_count_millions(net);
        INFO("param count (M): " << m);
        // same order of magnitude as the published 10.61M
        REQUIRE(m > 1.0);
        REQUIRE(m < 107.0);
    }
    SECTION("doubling widths roughly quadruples conv-dominated stages") {
        NetworkConfig a = tiny_net();
        a.enable_mfci = true;
        NetworkConfig b = a;
        b.base_width *= 2;
        const auto ca = param_count(CfciNet(a, rng));
        const auto cb = param_count(CfciNet(b, rng));
        const double ratio = double(cb) / double(ca);
        REQUIRE(ratio > 2.0);
        REQUIRE(ratio < 5.0);
    }
}
