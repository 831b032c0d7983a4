// cfci: multimodal brain-tumor segmentation reference tool.
// Subcommands: synth, train, infer, evaluate, ablate, selfcheck.

#include <CLI11.hpp>

#include <iostream>

#include "cfci/selfcheck.hpp"

namespace fs = std::filesystem;
using namespace cfci;

namespace {

bool is_case_dir(const fs::path& dir) {
    return detail::find_suffix_file(dir, "t1").has_value();
}

std::vector<MultiModalVolume> load_cases(const fs::path& data_dir, std::ostream& log) {
    std::vector<MultiModalVolume> cases;
    if (is_case_dir(data_dir)) {
        cases.push_back(normalize(load_case(data_dir)));
    } else {
        std::vector<fs::path> subdirs;
        for (const auto& e : fs::directory_iterator(data_dir))
            if (e.is_directory() && is_case_dir(e.path())) subdirs.push_back(e.path());
        std::sort(subdirs.begin(), subdirs.end());
        for (const auto& d : subdirs) {
            cases.push_back(normalize(load_case(d)));
            log << "loaded case " << cases.back().id << "\n";
        }
    }
    if (cases.empty()) throw std::runtime_error("no cases found under '" + data_dir.string() + "'");
    return cases;
}

void print_metrics_table(const std::array<RegionMetrics, 3>& rep, std::ostream& os) {
    os << std::left << std::setw(8) << "region" << std::right << std::setw(10) << "dice" << std::setw(12)
       << "sens" << std::setw(12) << "spec" << std::setw(12) << "spec(tnr)" << std::setw(12) << "hd95"
       << "\n";
    for (const auto& r : rep) {
        os << std::left << std::setw(8) << region_name(r.region) << std::right << std::fixed
           << std::setprecision(4) << std::setw(10) << r.dice_score << std::setw(12) << r.sensitivity_score
           << std::setw(12) << r.specificity_score << std::setw(12) << r.specificity_tnr_score;
        if (r.hd95) os << std::setw(12) << *r.hd95;
        else os << std::setw(12) << "undef";
        os << "\n";
    }
}

void write_metrics_csv(const std::array<RegionMetrics, 3>& rep, std::ostream& os) {
    os << "region,dice,sensitivity,specificity,specificity_tnr,hd95\n";
    for (const auto& r : rep) {
        os << region_name(r.region) << ',' << r.dice_score << ',' << r.sensitivity_score << ','
           << r.specificity_score << ',' << r.specificity_tnr_score << ',';
        if (r.hd95) os << *r.hd95;
        else os << "undefined";
        os << "\n";
    }
}

LabelVolume read_label_volume(const std::string& path) {
    NiftiVolume nv = nifti_read(path);
    LabelVolume l;
    l.dims = nv.dims;
    l.spacing = nv.spacing;
    l.data.resize(nv.data.size());
    for (std::size_t i = 0; i < nv.data.size(); ++i) {
        const double x = nv.data[i];
        if (x != 0 && x != 1 && x != 2 && x != 4)
            throw std::runtime_error("'" + path + "': invalid label value " + std::to_string(x));
        l.data[i] = static_cast<std::uint8_t>(x);
    }
    return l;
}

} // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"CFCI-Net multimodal brain-tumor segmentation"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate synthetic phantom cases");
    std::string synth_out = "phantoms";
    std::int64_t synth_cases = 1, synth_size = 128;
    std::uint64_t synth_seed = 0;
    std::string synth_prefix = "phantom";
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--cases", synth_cases, "number of cases");
    synth->add_option("--size", synth_size, "cubic volume edge (>= 16)");
    synth->add_option("--seed", synth_seed, "rng seed");
    synth->add_option("--prefix", synth_prefix, "case id prefix");

    // ---- train ----
    auto* tr = app.add_subcommand("train", "train a model on a case directory");
    std::string tr_data, tr_out = "runs/train", tr_config;
    TrainConfig tr_base;
    std::string tr_pairing;
    bool tr_no_augment = false, tr_no_scff = false, tr_no_mfci = false, tr_single = false;
    tr->add_option("--data", tr_data, "case directory (or directory of cases)")->required();
    tr->add_option("--out", tr_out, "run directory for logs and checkpoints");
    tr->add_option("--config", tr_config, "JSON config file (flags override keys)");
    auto* tr_epochs = tr->add_option("--epochs", tr_base.epochs, "training epochs");
    auto* tr_lr = tr->add_option("--lr", tr_base.lr, "initial learning rate");
    auto* tr_wd = tr->add_option("--weight-decay", tr_base.weight_decay, "decoupled weight decay");
    auto* tr_seed = tr->add_option("--seed", tr_base.seed, "rng seed");
    auto* tr_sched = tr->add_option("--schedule", tr_base.schedule, "lr schedule: cosine|constant");
    auto* tr_isz = tr->add_option("--input-size", tr_base.net.input_size, "training patch edge");
    auto* tr_bw = tr->add_option("--base-width", tr_base.net.base_width, "first-stage channels");
    auto* tr_depth = tr->add_option("--depth", tr_base.net.depth, "downsampling stages");
    auto* tr_bc = tr->add_option("--bottleneck-channels", tr_base.net.bottleneck_channels,
                                 "compressed bottleneck width (0 = stage width)");
    auto* tr_l1 = tr->add_option("--l1", tr_base.net.mfci.l1, "single-modality transformer layers");
    auto* tr_l2 = tr->add_option("--l2", tr_base.net.mfci.l2, "interaction layers");
    auto* tr_heads = tr->add_option("--heads", tr_base.net.mfci.heads, "attention heads");
    auto* tr_embed = tr->add_option("--embed-dim", tr_base.net.mfci.embed_dim, "token embedding width");
    auto* tr_patch = tr->add_option("--mfci-patch", tr_base.net.mfci.patch_size, "bottleneck patch size");
    auto* tr_alpha = tr->add_option("--alpha", tr_base.net.mfci.alpha, "pre-compression mixing weight");
    auto* tr_beta = tr->add_option("--beta", tr_base.net.mfci.beta, "post-compression mixing weight");
    tr->add_option("--pairing", tr_pairing, "modality pairing strategy");
    tr->add_flag("--no-augment", tr_no_augment, "disable augmentation");
    tr->add_flag("--no-scff", tr_no_scff, "fixed 0.5 skip gates instead of SCFF");
    tr->add_flag("--no-mfci", tr_no_mfci, "plain conv bottleneck instead of MFCI");
    tr->add_flag("--single-encoder", tr_single, "stacked-modality baseline encoder");

    // ---- infer ----
    auto* inf = app.add_subcommand("infer", "sliding-window inference on one case");
    std::string inf_case, inf_ckpt, inf_out = "prediction.nii.gz";
    double inf_overlap = 0.75;
    std::int64_t inf_patch = 0;
    inf->add_option("--case", inf_case, "case directory")->required();
    inf->add_option("--checkpoint", inf_ckpt, "trained checkpoint")->required();
    inf->add_option("--out", inf_out, "output prediction path (.nii/.nii.gz)");
    inf->add_option("--overlap", inf_overlap, "per-axis patch overlap fraction");
    inf->add_option("--patch", inf_patch, "patch edge (must match the checkpoint)");

    // ---- evaluate ----
    auto* ev = app.add_subcommand("evaluate", "per-region metrics for a prediction against GT");
    std::string ev_pred, ev_gt, ev_csv;
    ev->add_option("prediction", ev_pred, "predicted label volume")->required();
    ev->add_option("ground_truth", ev_gt, "reference label volume")->required();
    ev->add_option("--csv", ev_csv, "also write CSV here ('-' for stdout)");

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "desk-scale ablation grids on phantoms");
    std::string ab_grid = "components", ab_out = "runs/ablation";
    std::int64_t ab_size = 16, ab_cases = 2, ab_epochs = 1;
    std::uint64_t ab_seed = 0;
    ab->add_option("--grid", ab_grid, "components|pairing|layers")
        ->check(CLI::IsMember({"components", "pairing", "layers"}));
    ab->add_option("--out", ab_out, "output directory");
    ab->add_option("--size", ab_size, "phantom edge length");
    ab->add_option("--cases", ab_cases, "training phantoms per cell");
    ab->add_option("--epochs", ab_epochs, "epochs per cell");
    ab->add_option("--seed", ab_seed, "rng seed");

    // ---- selfcheck ----
    auto* sc = app.add_subcommand("selfcheck", "run the invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            std::mt19937_64 rng(synth_seed);
            fs::create_directories(synth_out);
            for (std::int64_t i = 0; i < synth_cases; ++i) {
                std::ostringstream id;
                id << synth_prefix << "_" << std::setw(3) << std::setfill('0') << i;
                auto c = synth_case(rng, synth_size, id.str());
                write_case(c, fs::path(synth_out) / id.str());
                std::cout << "wrote " << (fs::path(synth_out) / id.str()).string() << "\n";
            }
            return 0;
        }

        if (*tr) {
            TrainConfig cfg = tr_config.empty() ? TrainConfig{} : load_train_config(tr_config);
            // flags override config-file keys
            if (*tr_epochs) cfg.epochs = tr_base.epochs;
            if (*tr_lr) cfg.lr = tr_base.lr;
            if (*tr_wd) cfg.weight_decay = tr_base.weight_decay;
            if (*tr_seed) cfg.seed = tr_base.seed;
            if (*tr_sched) cfg.schedule = tr_base.schedule;
            if (*tr_isz) cfg.net.input_size = tr_base.net.input_size;
            if (*tr_bw) cfg.net.base_width = tr_base.net.base_width;
            if (*tr_depth) cfg.net.depth = tr_base.net.depth;
            if (*tr_bc) cfg.net.bottleneck_channels = tr_base.net.bottleneck_channels;
            if (*tr_l1) cfg.net.mfci.l1 = tr_base.net.mfci.l1;
            if (*tr_l2) cfg.net.mfci.l2 = tr_base.net.mfci.l2;
            if (*tr_heads) cfg.net.mfci.heads = tr_base.net.mfci.heads;
            if (*tr_embed) cfg.net.mfci.embed_dim = tr_base.net.mfci.embed_dim;
            if (*tr_patch) cfg.net.mfci.patch_size = tr_base.net.mfci.patch_size;
            if (*tr_alpha) cfg.net.mfci.alpha = tr_base.net.mfci.alpha;
            if (*tr_beta) cfg.net.mfci.beta = tr_base.net.mfci.beta;
            if (!tr_pairing.empty()) cfg.net.pairing = pairing_from_string(tr_pairing);
            if (tr_no_augment) cfg.augment_enabled = false;
            if (tr_no_scff) cfg.net.enable_scff = false;
            if (tr_no_mfci) cfg.net.enable_mfci = false;
            if (tr_single) {
                cfg.net.parallel_encoders = false;
                cfg.net.enable_scff = false;
                cfg.net.enable_mfci = false;
            }
            cfg.aug.crop = cfg.net.input_size;
            cfg.validate();

            auto cases = load_cases(tr_data, std::cout);
            {
                std::mt19937_64 rng(cfg.seed);
                CfciNet probe(cfg.net, rng);
                std::cout << "model parameters: " << std::fixed << std::setprecision(2)
                          << param_count_millions(probe) << "M\n";
            }
            fs::create_directories(tr_out);
            std::ofstream cfg_echo(fs::path(tr_out) / "config.json");
            cfg_echo << to_json(cfg).dump(2) << "\n";
            auto res = train(cfg, cases, {}, tr_out, &std::cout);
            std::cout << "best checkpoint: " << res.best_checkpoint << "\n"
                      << "last checkpoint: " << res.last_checkpoint << "\n";
            return 0;
        }

        if (*inf) {
            const CheckpointMeta meta = read_checkpoint_meta(inf_ckpt);
            if (inf_patch != 0 && inf_patch != meta.net_cfg.input_size)
                throw std::runtime_error("--patch " + std::to_string(inf_patch) +
                                         " does not match the checkpoint input size " +
                                         std::to_string(meta.net_cfg.input_size));
            std::mt19937_64 rng(0);
            CfciNet net(meta.net_cfg, rng);
            load_checkpoint_state(inf_ckpt, net);

            auto v = normalize(load_case(inf_case));
            SlidingSpec spec{meta.net_cfg.input_size, inf_overlap};
            auto res = sliding_window_infer(v, model_from_net(net), spec, meta.net_cfg.num_classes);
            write_prediction(res.prediction, inf_out);
            std::cout << "wrote " << inf_out << "\n";
            return 0;
        }

        if (*ev) {
            LabelVolume pred = read_label_volume(ev_pred);
            LabelVolume gt = read_label_volume(ev_gt);
            auto rep = evaluate_all_regions(pred, gt);
            print_metrics_table(rep, std::cout);
            if (!ev_csv.empty()) {
                if (ev_csv == "-") {
                    write_metrics_csv(rep, std::cout);
                } else {
                    std::ofstream f(ev_csv);
                    write_metrics_csv(rep, f);
                    std::cout << "wrote " << ev_csv << "\n";
                }
            }
            return 0;
        }

        if (*ab) {
            TrainConfig base;
            base.net.base_width = 4;
            base.net.depth = 2;
            base.net.input_size = ab_size;
            base.net.mfci.heads = 2;
            base.net.mfci.embed_dim = 8;
            base.net.mfci.patch_size = 2;
            base.net.mfci.l1 = 1;
            base.net.mfci.l2 = 1;
            base.epochs = ab_epochs;
            base.lr = 1e-3;
            base.seed = ab_seed;
            base.augment_enabled = false;

            std::mt19937_64 rng(ab_seed);
            std::vector<MultiModalVolume> cases, evals;
            for (std::int64_t i = 0; i < ab_cases; ++i)
                cases.push_back(normalize(synth_case(rng, ab_size, "train_" + std::to_string(i))));
            evals.push_back(normalize(synth_case(rng, ab_size, "eval_0")));

            std::vector<AblationCell> grid;
            if (ab_grid == "components") grid = components_grid(base);
            else if (ab_grid == "pairing") grid = pairing_grid(base);
            else grid = layers_grid(base);

            auto rows = ablation_run(grid, cases, evals, ab_out, &std::cout);
            std::cout << "\n" << ablation_table(rows);
            std::cout << "table written to " << (fs::path(ab_out) / "ablation.csv").string() << "\n";
            return 0;
        }

        if (*sc) {
            auto results = run_selfcheck();
            bool ok = true;
            for (const auto& r : results) {
                std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
                if (!r.pass) std::cout << " -- " << r.detail;
                std::cout << "\n";
                ok = ok && r.pass;
            }
            std::cout << (ok ? "selfcheck passed" : "selfcheck FAILED") << "\n";
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

int main(int argc, char** argv) { return cli_main(argc, argv); }
