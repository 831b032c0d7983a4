#pragma once

#include <functional>
#include <sstream>

#include "cfci/infer.hpp"

namespace cfci {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace selfcheck_detail {

inline double fd_max_err(std::vector<Var> probes, const std::function<Var()>& loss_fn) {
    for (auto& p : probes) p.zero_grad();
    Var loss = loss_fn();
    backward(loss);
    const double h = 1e-5;
    double worst = 0;
    for (auto& p : probes) {
        Tensor& x = p.value_mut();
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double x0 = x[i];
            double lp, lm;
            {
                NoGradGuard ng;
                x[i] = x0 + h;
                lp = loss_fn().value().item();
                x[i] = x0 - h;
                lm = loss_fn().value().item();
                x[i] = x0;
            }
            const double fd = (lp - lm) / (2 * h);
            const double an = p.has_grad() ? p.grad()[i] : 0.0;
            worst = std::max(worst, std::abs(an - fd) / std::max({1e-5, std::abs(an), std::abs(fd)}));
        }
    }
    return worst;
}

inline RegionMask random_mask(Grid3 dims, std::mt19937_64& rng, double p) {
    RegionMask m;
    m.dims = dims;
    m.data.resize(grid_numel(dims));
    for (auto& v : m.data) v = std::uniform_real_distribution<double>(0, 1)(rng) < p ? 1 : 0;
    return m;
}

} // namespace selfcheck_detail

/// Fast end-to-end invariant suite behind the `selfcheck` subcommand.
inline std::vector<CheckResult> run_selfcheck() {
    using namespace selfcheck_detail;
    std::vector<CheckResult> results;
    auto check = [&](const std::string& name, const std::function<std::string()>& body) {
        CheckResult r;
        r.name = name;
        try {
            r.detail = body(); // empty string = pass
            r.pass = r.detail.empty();
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = e.what();
        }
        results.push_back(r);
    };

    check("metrics match brute-force voxel counting", [] {
        std::mt19937_64 rng(101);
        for (int t = 0; t < 60; ++t) {
            Grid3 g{1 + std::int64_t(rng() % 5), 1 + std::int64_t(rng() % 5), 1 + std::int64_t(rng() % 5)};
            auto p = random_mask(g, rng, 0.5);
            auto q = random_mask(g, rng, 0.5);
            auto c = confusion(p, q);
            std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
            for (std::size_t i = 0; i < p.data.size(); ++i) {
                tp += p.data[i] && q.data[i];
                fp += p.data[i] && !q.data[i];
                fn += !p.data[i] && q.data[i];
                tn += !p.data[i] && !q.data[i];
            }
            if (c.tp != tp || c.fp != fp || c.fn != fn || c.tn != tn) return std::string("confusion mismatch");
            const double want = (2 * tp + fn + fp) == 0 ? 1.0 : 2.0 * tp / double(2 * tp + fn + fp);
            if (dice(c) != want) return std::string("dice mismatch");
        }
        return std::string();
    });

    check("hausdorff95 symmetric, zero on self, translation invariant", [] {
        std::mt19937_64 rng(102);
        for (int t = 0; t < 15; ++t) {
            auto a = random_mask({4, 4, 4}, rng, 0.4);
            auto b = random_mask({4, 4, 4}, rng, 0.4);
            if (a.count() == 0 || b.count() == 0) continue;
            const auto ab = hausdorff95(a, b), ba = hausdorff95(b, a), aa = hausdorff95(a, a);
            if (std::abs(*ab - *ba) > 1e-12) return std::string("asymmetric");
            if (*aa != 0.0) return std::string("self-distance nonzero");
        }
        return std::string();
    });

    check("channel kernel size odd and matches the rounding rule", [] {
        if (channel_kernel_size(2) != 1 || channel_kernel_size(64) != 3 || channel_kernel_size(256) != 5)
            return std::string("rule values wrong");
        for (std::int64_t c = 1; c <= 1024; c *= 2)
            if (channel_kernel_size(c) % 2 != 1) return std::string("even kernel at C=" + std::to_string(c));
        return std::string();
    });

    check("scff fusion convex with complementary weights", [] {
        std::mt19937_64 rng(103);
        ScffFusion scff(2, rng);
        for (int t = 0; t < 20; ++t) {
            Tensor a = Tensor::randn({1, 2, 2, 2, 2}, rng, 2.0);
            Tensor b = Tensor::randn({1, 2, 2, 2, 2}, rng, 2.0);
            Var va = Var::leaf(a), vb = Var::leaf(b);
            Tensor g = scff.gate1(va, vb).value();
            Tensor f = pair_fusion(va, vb, Var::leaf(g)).value();
            for (std::int64_t i = 0; i < f.numel(); ++i) {
                if (f[i] < std::min(a[i], b[i]) - 1e-9 || f[i] > std::max(a[i], b[i]) + 1e-9)
                    return std::string("fusion left the [min,max] interval");
                if (std::abs(g[i] + (1 - g[i]) - 1.0) > 1e-6) return std::string("weights do not sum to 1");
            }
        }
        return std::string();
    });

    check("attention rows sum to one", [] {
        std::mt19937_64 rng(104);
        for (int t = 0; t < 20; ++t) {
            const std::int64_t gsz = 1 + t % 4, n = 1 + t % 3, dk = 1 + t % 2;
            Var q = Var::leaf(Tensor::randn({gsz, n, dk}, rng, 4.0));
            Var k = Var::leaf(Tensor::randn({gsz, 4 * n, dk}, rng, 4.0));
            Var bank = Var::leaf(Tensor::randn({gsz, n, 2}, rng));
            auto [attn, mixed] = scaled_bank_attention(q, k, bank);
            for (std::int64_t r = 0; r < gsz * n; ++r) {
                double s = 0;
                for (std::int64_t c = 0; c < 4 * n; ++c) s += attn.value()[r * 4 * n + c];
                if (std::abs(s - 1.0) > 1e-6) return std::string("row sum off by " + std::to_string(s - 1));
            }
        }
        return std::string();
    });

    check("dice loss gradient matches finite differences", [] {
        std::mt19937_64 rng(105);
        Var logits = Var::param(Tensor::randn({1, 4, 2, 2, 2}, rng));
        LabelVolume lab;
        lab.dims = {2, 2, 2};
        lab.data = {0, 1, 2, 4, 0, 1, 2, 4};
        const double e = fd_max_err({logits}, [&] { return dice_loss(logits, lab); });
        return e < 1e-4 ? std::string() : "max rel err " + std::to_string(e);
    });

    check("scff gradient matches finite differences", [] {
        std::mt19937_64 rng(106);
        ScffFusion scff(1, rng);
        Var a = Var::param(Tensor::randn({1, 1, 2, 2, 2}, rng));
        Var b = Var::param(Tensor::randn({1, 1, 2, 2, 2}, rng));
        Var w = Var::leaf(Tensor::randn({1, 1, 2, 2, 2}, rng));
        const double e = fd_max_err({a, b}, [&] { return sum_all(mul(scff(a, b, a, b, true), w)); });
        return e < 1e-3 ? std::string() : "max rel err " + std::to_string(e);
    });

    check("tiling covers every voxel with clamped final origins", [] {
        if (tile_positions_1d(160, 128, 32) != std::vector<std::int64_t>{0, 32})
            return std::string("stride-32 origins wrong");
        std::mt19937_64 rng(107);
        for (int t = 0; t < 10; ++t) {
            SlidingSpec spec{6, 0.25 * (t % 4)};
            Grid3 g{6 + std::int64_t(rng() % 8), 6 + std::int64_t(rng() % 8), 6 + std::int64_t(rng() % 8)};
            for (auto c : coverage_counts(g, spec))
                if (c < 1) return std::string("uncovered voxel");
        }
        return std::string();
    });

    check("checkpoint round-trips forward outputs bitwise", [] {
        namespace fs = std::filesystem;
        std::mt19937_64 rng(108);
        NetworkConfig nc;
        nc.base_width = 2;
        nc.depth = 2;
        nc.input_size = 8;
        nc.mfci = MfciConfig{1, 1, 2, 8, 2, 0.5, 0.5, true, true};
        CfciNet net(nc, rng);
        Tensor x = Tensor::randn({1, 4, 8, 8, 8}, rng);
        NoGradGuard ng;
        Tensor before = net(Var::leaf(x), false).value();
        const auto path = (fs::temp_directory_path() / "cfci_selfcheck.ckpt").string();
        save_checkpoint(path, net, nullptr, 0, 0, "");
        std::mt19937_64 rng2(9);
        CfciNet net2(read_checkpoint_meta(path).net_cfg, rng2);
        load_checkpoint_state(path, net2);
        Tensor after = net2(Var::leaf(x), false).value();
        fs::remove(path);
        for (std::int64_t i = 0; i < before.numel(); ++i)
            if (before[i] != after[i]) return std::string("outputs differ after reload");
        return std::string();
    });

    check("sliding average equals constant model output", [] {
        MultiModalVolume v;
        v.id = "c";
        for (int m = 0; m < 4; ++m)
            v.modality[m] = Volume{{10, 10, 10}, {1, 1, 1}, std::vector<double>(1000, 0.3)};
        PatchModel model = [](const Tensor&) {
            Tensor out({1, 4, 8, 8, 8});
            for (std::int64_t i = 0; i < 512; ++i) out[512 + i] = 2.0;
            return out;
        };
        Tensor ref;
        for (double ov : {0.0, 0.5, 0.75}) {
            auto res = sliding_window_infer(v, model, SlidingSpec{8, ov});
            if (!ref.defined()) ref = res.probabilities;
            for (std::int64_t i = 0; i < ref.numel(); ++i)
                if (std::abs(res.probabilities[i] - ref[i]) > 1e-12)
                    return std::string("overlap changed a constant prediction");
        }
        return std::string();
    });

    return results;
}

} // namespace cfci
