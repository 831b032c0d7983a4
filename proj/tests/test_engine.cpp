#include <catch2/catch.hpp>

#include "cfci/engine.hpp"
#include "testing_util.hpp"

using namespace cfci;
using cfci::testing::max_grad_rel_err;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("cfci_engine_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

TrainConfig tiny_train(std::uint64_t seed = 1) {
    TrainConfig c;
    c.net.base_width = 4;
    c.net.depth = 2;
    c.net.input_size = 16;
    c.net.mfci.l1 = 1;
    c.net.mfci.l2 = 1;
    c.net.mfci.heads = 2;
    c.net.mfci.embed_dim = 8;
    c.net.mfci.patch_size = 2;
    c.epochs = 1;
    c.lr = 1e-3;
    c.seed = seed;
    c.augment_enabled = false;
    return c;
}

LabelVolume labels_from(Grid3 dims, std::vector<std::uint8_t> v) {
    LabelVolume l;
    l.dims = dims;
    l.data = std::move(v);
    return l;
}

} // namespace

TEST_CASE("dice loss values") {
    const double eps = 1e-5;

    SECTION("near-one-hot correct prediction gives loss near zero") {
        // 2x2x2 volume, all voxels class 1 (label 1), +40 logit margin
        Tensor logits({1, 4, 2, 2, 2});
        for (int i = 0; i < 8; ++i) logits[8 + i] = 40.0; // class-1 channel
        auto lab = labels_from({2, 2, 2}, std::vector<std::uint8_t>(8, 1));
        const double l = dice_loss(Var::leaf(logits), lab).value().item();
        REQUIRE(l < 1e-4);
    }
    SECTION("disjoint prediction gives loss near one") {
        // every foreground class present in gt, prediction all background
        Tensor logits({1, 4, 2, 2, 2});
        for (int i = 0; i < 8; ++i) logits[i] = 40.0; // class-0 channel
        const std::uint8_t lut[4] = {1, 2, 4, 1};
        std::vector<std::uint8_t> lv(8);
        for (int i = 0; i < 8; ++i) lv[i] = lut[i % 4];
        const double l = dice_loss(Var::leaf(logits), labels_from({2, 2, 2}, lv)).value().item();
        REQUIRE(l == Approx(1.0).margin(1e-3));
    }
    SECTION("two-voxel toy matches the hand-evaluated formula") {
        // logits (0, ln3, 0, 0) -> p(class1) = 0.5 at both voxels
        Tensor logits({1, 4, 1, 1, 2});
        logits[2] = std::log(3.0);
        logits[3] = std::log(3.0);
        auto lab = labels_from({1, 1, 2}, {1, 0}); // voxel0 class1, voxel1 background
        const double got = dice_loss(Var::leaf(logits), lab).value().item();
        // class-1 soft dice: (2*0.5 + eps)/(1 + 1 + eps) ~ 0.5
        const double d1 = (2 * 0.5 + eps) / (2.0 + eps);
        REQUIRE(d1 == Approx(0.5).margin(1e-4));
        // classes 2,3: pred mass 2/6 each, no gt mass
        const double d23 = eps / (2.0 / 6.0 + eps);
        const double want = 1.0 - (d1 + 2 * d23) / 3.0;
        REQUIRE(got == Approx(want).margin(1e-12));
    }
    SECTION("loss stays in [0, 1+delta]") {
        std::mt19937_64 rng(61);
        for (int t = 0; t < 20; ++t) {
            Tensor logits = Tensor::randn({1, 4, 2, 2, 2}, rng, 3.0);
            std::vector<std::uint8_t> lv(8);
            const std::uint8_t lut[4] = {0, 1, 2, 4};
            for (auto& x : lv) x = lut[rng() % 4];
            const double l = dice_loss(Var::leaf(logits), labels_from({2, 2, 2}, lv)).value().item();
            REQUIRE(l >= 0.0);
            REQUIRE(l <= 1.0 + 1e-4);
        }
    }
    SECTION("shape mismatch rejected") {
        Tensor logits({1, 4, 2, 2, 2});
        REQUIRE_THROWS_AS(dice_loss(Var::leaf(logits), labels_from({2, 2, 1}, std::vector<std::uint8_t>(4, 0))),
                          std::invalid_argument);
    }
    SECTION("gradient matches central differences within 1e-4") {
        std::mt19937_64 rng(62);
        Var logits = Var::param(Tensor::randn({1, 4, 2, 2, 2}, rng));
        std::vector<std::uint8_t> lv(8);
        const std::uint8_t lut[4] = {0, 1, 2, 4};
        for (auto& x : lv) x = lut[rng() % 4];
        auto lab = labels_from({2, 2, 2}, lv);
        auto loss = [&] { return dice_loss(logits, lab); };
        REQUIRE(max_grad_rel_err({logits}, loss) < 1e-4);
    }
}

TEST_CASE("logits argmax to labels") {
    Tensor logits({1, 4, 1, 1, 2});
    // voxel 0: class 3 wins -> label 4; voxel 1: class 0 wins -> label 0
    logits[6] = 5.0; // class 3, voxel 0
    logits[1] = 2.0; // class 0, voxel 1
    auto lab = logits_to_labels(logits);
    REQUIRE(lab.data[0] == 4);
    REQUIRE(lab.data[1] == 0);
}

TEST_CASE("checkpoint round trip") {
    TempDir td("ckpt");
    std::mt19937_64 rng(63);
    TrainConfig cfg = tiny_train();
    CfciNet net(cfg.net, rng);
    auto named = net.named_params();
    std::vector<Var> params;
    for (auto& [n, v] : named) params.push_back(v);
    AdamW opt(params, 1e-5);

    // a couple of steps so optimizer state / BN buffers are non-trivial
    Tensor x = Tensor::randn({1, 4, 16, 16, 16}, rng);
    auto lab = labels_from({16, 16, 16}, std::vector<std::uint8_t>(16 * 16 * 16, 0));
    for (int i = 0; i < 1000; ++i) lab.data[i] = 1;
    for (int it = 0; it < 2; ++it) {
        opt.zero_grad();
        Var loss = dice_loss(net(Var::leaf(x), true), lab);
        backward(loss);
        opt.step(1e-3);
    }

    const std::string path = (td.path / "model.ckpt").string();
    save_checkpoint(path, net, &opt, 7, 14, "rngstate");

    SECTION("meta carries the config echo and counters") {
        auto meta = read_checkpoint_meta(path);
        REQUIRE(meta.epoch == 7);
        REQUIRE(meta.step == 14);
        REQUIRE(meta.rng_state == "rngstate");
        REQUIRE(meta.net_cfg.base_width == cfg.net.base_width);
        REQUIRE(meta.net_cfg.mfci.embed_dim == cfg.net.mfci.embed_dim);
    }
    SECTION("forward outputs reproduce bitwise after reload") {
        NoGradGuard ng;
        Tensor before = net(Var::leaf(x), false).value();
        auto meta = read_checkpoint_meta(path);
        std::mt19937_64 rng2(999); // different init, then overwritten by the load
        CfciNet net2(meta.net_cfg, rng2);
        load_checkpoint_state(path, net2);
        Tensor after = net2(Var::leaf(x), false).value();
        REQUIRE(before.numel() == after.numel());
        for (std::int64_t i = 0; i < before.numel(); ++i) REQUIRE(before[i] == after[i]);
    }
    SECTION("optimizer state restores the training trajectory") {
        auto meta = read_checkpoint_meta(path);
        std::mt19937_64 rng2(1234);
        CfciNet net2(meta.net_cfg, rng2);
        auto named2 = net2.named_params();
        std::vector<Var> params2;
        for (auto& [n, v] : named2) params2.push_back(v);
        AdamW opt2(params2, 1e-5);
        load_checkpoint_state(path, net2, &opt2);
        REQUIRE(opt2.step_count == opt.step_count);

        auto step_once = [&](CfciNet& n, AdamW& o) {
            o.zero_grad();
            Var loss = dice_loss(n(Var::leaf(x), true), lab);
            backward(loss);
            o.step(1e-3);
            return loss.value().item();
        };
        const double l1 = step_once(net, opt);
        const double l2 = step_once(net2, opt2);
        REQUIRE(l1 == l2);
    }
    SECTION("wrong-config model rejects the blob") {
        NetworkConfig other = cfg.net;
        other.base_width = 8;
        std::mt19937_64 rng3(5);
        CfciNet net3(other, rng3);
        REQUIRE_THROWS_AS(load_checkpoint_state(path, net3), std::runtime_error);
    }
}

TEST_CASE("training loop") {
    SECTION("one epoch smoke: logs and checkpoints written") {
        TempDir td("smoke");
        std::mt19937_64 rng(64);
        auto c = normalize(synth_case(rng, 16, "smoke"));
        auto res = train(tiny_train(), {c}, {}, td.path);
        REQUIRE(res.epochs.size() == 1);
        REQUIRE(res.step_losses.size() == 1);
        REQUIRE(std::isfinite(res.epochs[0].mean_loss));
        REQUIRE(fs::exists(res.last_checkpoint));
        REQUIRE(fs::exists(res.best_checkpoint));
        REQUIRE(fs::exists(td.path / "train_log.csv"));
    }
    SECTION("fixed seed reproduces the loss curve bitwise") {
        std::mt19937_64 rng(65);
        auto c = normalize(synth_case(rng, 16, "det"));
        TrainConfig cfg = tiny_train(42);
        cfg.epochs = 3;
        TempDir t1("det1"), t2("det2");
        auto r1 = train(cfg, {c}, {}, t1.path);
        auto r2 = train(cfg, {c}, {}, t2.path);
        REQUIRE(r1.step_losses.size() == r2.step_losses.size());
        for (std::size_t i = 0; i < r1.step_losses.size(); ++i)
            REQUIRE(r1.step_losses[i] == r2.step_losses[i]);
    }
    SECTION("loss decreases on a short overfit run") {
        TempDir td("overfit");
        std::mt19937_64 rng(66);
        auto c = normalize(synth_case(rng, 16, "fit"));
        TrainConfig cfg = tiny_train(7);
        cfg.epochs = 40;
        cfg.lr = 3e-3;
        cfg.schedule = "constant";
        auto res = train(cfg, {c}, {}, td.path);
        REQUIRE(res.step_losses[39] < res.step_losses[4]);
    }
    SECTION("gradient accumulation over a batch still trains") {
        TempDir td("batch");
        std::mt19937_64 rng(69);
        std::vector<MultiModalVolume> cs = {normalize(synth_case(rng, 16, "b0")),
                                            normalize(synth_case(rng, 16, "b1")),
                                            normalize(synth_case(rng, 16, "b2"))};
        TrainConfig cfg = tiny_train(2);
        cfg.batch_size = 2;
        cfg.epochs = 2;
        auto res = train(cfg, cs, {}, td.path);
        // 3 cases / batch 2 -> 2 optimizer steps per epoch
        REQUIRE(res.step_losses.size() == 4);
        for (double l : res.step_losses) REQUIRE(std::isfinite(l));
    }
    SECTION("non-finite loss aborts naming the step") {
        TempDir td("nan");
        std::mt19937_64 rng(67);
        auto c = normalize(synth_case(rng, 16, "nan"));
        TrainConfig cfg = tiny_train(3);
        cfg.epochs = 3;
        cfg.lr = std::numeric_limits<double>::quiet_NaN(); // poisons params after step 0
        try {
            train(cfg, {c}, {}, td.path);
            FAIL("expected abort");
        } catch (const std::runtime_error& e) {
            REQUIRE(std::string(e.what()).find("step") != std::string::npos);
        }
    }
}

TEST_CASE("ablation grids") {
    SECTION("component grid covers the on/off rows") {
        auto cells = components_grid(tiny_train());
        REQUIRE(cells.size() == 5);
        REQUIRE(cells[0].name == "baseline");
        REQUIRE_FALSE(cells[0].cfg.net.parallel_encoders);
        REQUIRE(cells[2].cfg.net.enable_mfci);
        REQUIRE_FALSE(cells[2].cfg.net.enable_scff);
        REQUIRE(cells[4].cfg.net.enable_mfci);
        REQUIRE(cells[4].cfg.net.enable_scff);
    }
    SECTION("pairing grid covers the three strategies") {
        auto cells = pairing_grid(tiny_train());
        REQUIRE(cells.size() == 3);
        REQUIRE(cells[2].cfg.net.pairing == Pairing::T1T2_T1ceFlair);
    }
    SECTION("layer grid mirrors the published row set") {
        auto cells = layers_grid(tiny_train());
        REQUIRE(cells.size() == 7);
        bool has44 = false, has62 = false, has412 = false;
        for (const auto& c : cells) {
            if (c.cfg.net.mfci.l1 == 4 && c.cfg.net.mfci.l2 == 4) has44 = true;
            if (c.cfg.net.mfci.l1 == 6 && c.cfg.net.mfci.l2 == 2) has62 = true;
            if (c.cfg.net.mfci.l1 == 4 && c.cfg.net.mfci.l2 == 12) has412 = true;
        }
        REQUIRE(has44);
        REQUIRE(has62);
        REQUIRE(has412);
    }
    SECTION("component grid runs end to end on phantoms") {
        TempDir td("grid");
        std::mt19937_64 rng(68);
        std::vector<MultiModalVolume> cases = {normalize(synth_case(rng, 16, "a")),
                                               normalize(synth_case(rng, 16, "b"))};
        std::vector<MultiModalVolume> evals = {normalize(synth_case(rng, 16, "e"))};
        auto rows = ablation_run(components_grid(tiny_train()), cases, evals, td.path);
        REQUIRE(rows.size() == 5);
        for (const auto& r : rows) {
            REQUIRE(r.dice_wt >= 0.0);
            REQUIRE(r.dice_wt <= 1.0);
        }
        REQUIRE(fs::exists(td.path / "ablation.csv"));
        const std::string table = ablation_table(rows);
        REQUIRE(table.find("CFCI-Net") != std::string::npos);
    }
}
