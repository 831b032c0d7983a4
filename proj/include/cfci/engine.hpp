#pragma once

#include <algorithm>
#include <iomanip>
#include <random>

#include "cfci/config.hpp"
#include "cfci/core/optim.hpp"

namespace cfci {

// ---------------------------------------------------------------------------
// dice loss
// ---------------------------------------------------------------------------

/// Label values {0,1,2,4} -> class indices {0,1,2,3}.
inline std::int64_t label_to_class(std::uint8_t v) { return v == 4 ? 3 : v; }
inline std::uint8_t class_to_label(std::int64_t c) { return c == 3 ? 4 : static_cast<std::uint8_t>(c); }

/// [1,D,H,W] class-index tensor from a label volume.
inline Tensor class_tensor(const LabelVolume& labels) {
    Tensor t({1, labels.dims[0], labels.dims[1], labels.dims[2]});
    for (std::size_t i = 0; i < labels.data.size(); ++i)
        t[static_cast<std::int64_t>(i)] = static_cast<double>(label_to_class(labels.data[i]));
    return t;
}

/// Soft Dice loss: 1 - mean over the three foreground classes of
/// (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps) with softmax probabilities.
inline Var dice_loss(const Var& logits, const Tensor& class_idx, double eps = 1e-5) {
    const Shape& s = logits.shape();
    if (s.size() != 5) throw std::invalid_argument("dice_loss: expected [B,C,D,H,W] logits");
    const std::int64_t B = s[0], C = s[1];
    if (class_idx.shape() != Shape{B, s[2], s[3], s[4]})
        throw std::invalid_argument("dice_loss: label shape " + shape_str(class_idx.shape()) +
                                    " does not match logits " + shape_str(s));

    Var p = softmax_last(permute(logits, {0, 2, 3, 4, 1})); // [B,D,H,W,C]

    // one-hot targets, same layout
    Tensor onehot{Shape{B, s[2], s[3], s[4], C}};
    const std::int64_t vox = B * s[2] * s[3] * s[4];
    for (std::int64_t i = 0; i < vox; ++i) {
        const auto cls = static_cast<std::int64_t>(class_idx[i]);
        if (cls < 0 || cls >= C) throw std::invalid_argument("dice_loss: class index out of range");
        onehot[i * C + cls] = 1.0;
    }
    Var g = Var::leaf(onehot);

    Var total;
    for (std::int64_t c = 1; c < C; ++c) { // foreground classes only
        Var pc = slice(p, 4, c, 1);
        Var gc = slice(g, 4, c, 1);
        Var num = add_scalar(mul_scalar(sum_all(mul(pc, gc)), 2.0), eps);
        Var den = add_scalar(add(sum_all(pc), sum_all(gc)), eps);
        Var d = div(num, den);
        total = total.defined() ? add(total, d) : d;
    }
    Var mean_dice = mul_scalar(total, 1.0 / static_cast<double>(C - 1));
    return add_scalar(neg(mean_dice), 1.0);
}

inline Var dice_loss(const Var& logits, const LabelVolume& labels, double eps = 1e-5) {
    return dice_loss(logits, class_tensor(labels), eps);
}

/// Voxelwise argmax over channel 1 mapped back to BraTS labels.
inline LabelVolume logits_to_labels(const Tensor& logits, const Spacing3& spacing = {1, 1, 1}) {
    const Shape& s = logits.shape();
    const std::int64_t C = s[1], vox = s[2] * s[3] * s[4];
    LabelVolume out;
    out.dims = {s[2], s[3], s[4]};
    out.spacing = spacing;
    out.data.resize(vox);
    for (std::int64_t i = 0; i < vox; ++i) {
        std::int64_t best = 0;
        double bv = logits[i];
        for (std::int64_t c = 1; c < C; ++c) {
            const double v = logits[c * vox + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out.data[i] = class_to_label(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// checkpoints: versioned binary blob, bitwise round trip
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v;
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
inline void put_string(std::ostream& os, const std::string& s) {
    put<std::uint64_t>(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_string(std::istream& is) {
    const auto n = get<std::uint64_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}
inline void put_tensor(std::ostream& os, const Tensor& t) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), t.numel() * 8);
}
inline Tensor get_tensor(std::istream& is) {
    const auto rank = get<std::uint32_t>(is);
    Shape s(rank);
    for (auto& d : s) d = get<std::int64_t>(is);
    Tensor t{Shape(s)};
    is.read(reinterpret_cast<char*>(t.data()), t.numel() * 8);
    if (!is) throw std::runtime_error("checkpoint: truncated tensor");
    return t;
}
} // namespace detail

struct CheckpointMeta {
    NetworkConfig net_cfg;
    std::int64_t epoch = 0;
    std::int64_t step = 0;
    std::string rng_state;
    std::uint32_t version = kCheckpointVersion;
};

inline void save_checkpoint(const std::string& path, CfciNet& net, const AdamW* opt,
                            std::int64_t epoch, std::int64_t step, const std::string& rng_state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint '" + path + "'");
    os.write("CFCK", 4);
    detail::put<std::uint32_t>(os, kCheckpointVersion);

    json meta = {{"network", to_json(net.cfg)}, {"epoch", epoch}, {"step", step}, {"rng", rng_state}};
    detail::put_string(os, meta.dump());

    const auto params = net.named_params();
    detail::put<std::uint64_t>(os, params.size());
    for (const auto& [name, v] : params) {
        detail::put_string(os, name);
        detail::put_tensor(os, v.value());
    }
    auto buffers = net.named_buffers();
    detail::put<std::uint64_t>(os, buffers.size());
    for (const auto& [name, t] : buffers) {
        detail::put_string(os, name);
        detail::put_tensor(os, *t);
    }
    detail::put<std::uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        detail::put<std::int64_t>(os, opt->step_count);
        detail::put<std::uint64_t>(os, opt->m.size());
        for (std::size_t i = 0; i < opt->m.size(); ++i) {
            detail::put_tensor(os, opt->m[i]);
            detail::put_tensor(os, opt->v[i]);
        }
    }
    if (!os) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

inline CheckpointMeta read_checkpoint_meta(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "CFCK")
        throw std::runtime_error("'" + path + "' is not a checkpoint file");
    CheckpointMeta m;
    m.version = detail::get<std::uint32_t>(is);
    if (m.version != kCheckpointVersion)
        throw std::runtime_error("checkpoint version " + std::to_string(m.version) + " unsupported");
    json meta = json::parse(detail::get_string(is));
    m.net_cfg = network_from_json(meta["network"]);
    m.epoch = meta.value("epoch", 0);
    m.step = meta.value("step", 0);
    m.rng_state = meta.value("rng", "");
    return m;
}

/// Loads parameters/buffers (and optimizer state when given) into a net
/// that was constructed from the checkpoint's config.
inline void load_checkpoint_state(const std::string& path, CfciNet& net, AdamW* opt = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    is.seekg(4);
    detail::get<std::uint32_t>(is);
    detail::get_string(is); // meta

    auto params = net.named_params();
    const auto np = detail::get<std::uint64_t>(is);
    if (np != params.size())
        throw std::runtime_error("checkpoint: parameter count mismatch (config/model disagree)");
    for (auto& [name, v] : params) {
        const std::string stored = detail::get_string(is);
        if (stored != name)
            throw std::runtime_error("checkpoint: parameter order mismatch at '" + stored + "' vs '" + name + "'");
        Tensor t = detail::get_tensor(is);
        if (t.shape() != v.shape()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        std::copy(t.data(), t.data() + t.numel(), v.value_mut().data());
    }
    auto buffers = net.named_buffers();
    const auto nb = detail::get<std::uint64_t>(is);
    if (nb != buffers.size()) throw std::runtime_error("checkpoint: buffer count mismatch");
    for (auto& [name, tp] : buffers) {
        const std::string stored = detail::get_string(is);
        if (stored != name) throw std::runtime_error("checkpoint: buffer order mismatch at '" + stored + "'");
        Tensor t = detail::get_tensor(is);
        std::copy(t.data(), t.data() + t.numel(), tp->data());
    }
    const auto has_opt = detail::get<std::uint8_t>(is);
    if (opt) {
        if (!has_opt) throw std::runtime_error("checkpoint: no optimizer state stored");
        opt->step_count = detail::get<std::int64_t>(is);
        const auto n = detail::get<std::uint64_t>(is);
        if (n != opt->m.size()) throw std::runtime_error("checkpoint: optimizer state count mismatch");
        for (std::size_t i = 0; i < n; ++i) {
            opt->m[i] = detail::get_tensor(is);
            opt->v[i] = detail::get_tensor(is);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochLog {
    std::int64_t epoch = 0;
    double mean_loss = 0;
    double lr = 0;
    double dice_wt = 0, dice_tc = 0, dice_et = 0;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::vector<double> step_losses;
    std::string last_checkpoint, best_checkpoint;
    double best_eval_dice = -1;
};

inline std::string rng_state_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

namespace detail {
inline Tensor stack_modalities(const MultiModalVolume& v) {
    const auto [D, H, W] = v.dims();
    Tensor x({1, 4, D, H, W});
    for (int m = 0; m < 4; ++m)
        std::copy(v.modality[m].data.begin(), v.modality[m].data.end(), x.data() + m * D * H * W);
    return x;
}

inline std::array<double, 3> region_dices(const LabelVolume& pred, const LabelVolume& gt) {
    std::array<double, 3> out{};
    const Region regions[3] = {Region::WT, Region::TC, Region::ET};
    for (int r = 0; r < 3; ++r)
        out[r] = dice(confusion(region_extract(pred, regions[r]), region_extract(gt, regions[r])));
    return out;
}

/// Whole case when it matches the input size, deterministic center crop
/// otherwise.
inline std::pair<Tensor, LabelVolume> fixed_patch(const MultiModalVolume& c, std::int64_t size) {
    if (c.dims() == Grid3{size, size, size}) return {stack_modalities(c), *c.labels};
    for (int a = 0; a < 3; ++a)
        if (c.dims()[a] < size)
            throw std::invalid_argument("train: case '" + c.id + "' is smaller than input_size");
    Grid3 origin;
    for (int a = 0; a < 3; ++a) origin[a] = (c.dims()[a] - size) / 2;
    const Grid3 cd{size, size, size};
    MultiModalVolume cc;
    cc.id = c.id;
    for (int m = 0; m < 4; ++m)
        cc.modality[m] = Volume{cd, c.modality[m].spacing,
                                crop_block(c.modality[m].data, c.dims(), origin, size)};
    LabelVolume lab;
    lab.dims = cd;
    lab.spacing = c.labels->spacing;
    lab.data = crop_block(c.labels->data, c.dims(), origin, size);
    return {stack_modalities(cc), std::move(lab)};
}
} // namespace detail

/// Deterministic single-thread training. Cases must be normalised. When
/// `eval_cases` is empty the first training case doubles as the selection
/// split.
inline TrainResult train(const TrainConfig& cfg, const std::vector<MultiModalVolume>& cases,
                         const std::vector<MultiModalVolume>& eval_cases,
                         const std::filesystem::path& out_dir, std::ostream* progress = nullptr) {
    cfg.validate();
    if (cases.empty()) throw std::invalid_argument("train: no cases");
    for (const auto& c : cases)
        if (!c.labels) throw std::invalid_argument("train: case '" + c.id + "' has no labels");
    std::filesystem::create_directories(out_dir);

    std::mt19937_64 rng(cfg.seed);
    CfciNet net(cfg.net, rng);
    auto named = net.named_params();
    std::vector<Var> params;
    for (auto& [n, v] : named) params.push_back(v);
    AdamW opt(params, cfg.weight_decay);

    const std::int64_t n_cases = static_cast<std::int64_t>(cases.size());
    const std::int64_t steps_per_epoch = (n_cases + cfg.batch_size - 1) / cfg.batch_size;
    const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

    TrainResult res;
    std::ofstream csv(out_dir / "train_log.csv");
    csv << "epoch,step,loss,lr,dice_wt,dice_tc,dice_et\n";
    std::ofstream txt(out_dir / "train_log.txt");

    const auto eval_pool = eval_cases.empty() ? std::vector<MultiModalVolume>{cases.front()} : eval_cases;

    std::int64_t global_step = 0;
    for (std::int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(cases.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0;
        std::array<double, 3> last_dice{};
        for (std::int64_t chunk = 0; chunk < n_cases; chunk += cfg.batch_size) {
            const std::int64_t bsz = std::min<std::int64_t>(cfg.batch_size, n_cases - chunk);
            const double lr = cfg.schedule == "cosine"
                                  ? cosine_lr(cfg.lr, cfg.lr_min, global_step, total_steps)
                                  : cfg.lr;
            opt.zero_grad();
            double step_loss = 0;
            for (std::int64_t bi = 0; bi < bsz; ++bi) {
                const auto& c = cases[order[chunk + bi]];
                Tensor x;
                LabelVolume lab;
                if (cfg.augment_enabled) {
                    AugmentationSpec spec = cfg.aug;
                    spec.crop = cfg.net.input_size;
                    auto [aug_v, aug_l] = augment(c, spec, rng);
                    x = detail::stack_modalities(aug_v);
                    lab = std::move(aug_l);
                } else {
                    std::tie(x, lab) = detail::fixed_patch(c, cfg.net.input_size);
                }
                Var logits = net(Var::leaf(x), true);
                Var loss = dice_loss(logits, lab);
                const double lv = loss.value().item();
                if (!std::isfinite(lv))
                    throw std::runtime_error("train: non-finite loss at step " + std::to_string(global_step) +
                                             " (epoch " + std::to_string(epoch) + ", case '" + c.id + "')");
                backward(mul_scalar(loss, 1.0 / static_cast<double>(bsz)));
                step_loss += lv / static_cast<double>(bsz);
                if (bi + 1 == bsz) {
                    NoGradGuard ng;
                    last_dice = detail::region_dices(logits_to_labels(logits.value()), lab);
                }
            }
            opt.step(lr);

            loss_sum += step_loss;
            res.step_losses.push_back(step_loss);
            csv << epoch << ',' << global_step << ',' << std::setprecision(17) << step_loss << ',' << lr
                << ',' << last_dice[0] << ',' << last_dice[1] << ',' << last_dice[2] << '\n';
            ++global_step;
        }

        EpochLog log;
        log.epoch = epoch;
        log.mean_loss = loss_sum / static_cast<double>(steps_per_epoch);
        log.lr = cfg.schedule == "cosine" ? cosine_lr(cfg.lr, cfg.lr_min, global_step - 1, total_steps) : cfg.lr;
        log.dice_wt = last_dice[0];
        log.dice_tc = last_dice[1];
        log.dice_et = last_dice[2];
        res.epochs.push_back(log);
        txt << "epoch " << epoch << "  loss " << std::fixed << std::setprecision(6) << log.mean_loss
            << "  wt " << log.dice_wt << "  tc " << log.dice_tc << "  et " << log.dice_et << "\n";
        if (progress)
            (*progress) << "epoch " << epoch << "  loss " << log.mean_loss << "  wt " << log.dice_wt
                        << std::endl;

        // selection on the held-out split: mean region dice of direct forwards
        double eval_dice = 0;
        {
            NoGradGuard ng;
            for (const auto& ec : eval_pool) {
                auto [ex, elab] = detail::fixed_patch(ec, cfg.net.input_size);
                Tensor elog = net(Var::leaf(ex), false).value();
                auto d = detail::region_dices(logits_to_labels(elog), elab);
                eval_dice += (d[0] + d[1] + d[2]) / 3.0;
            }
            eval_dice /= static_cast<double>(eval_pool.size());
        }
        const std::string last = (out_dir / "last.ckpt").string();
        save_checkpoint(last, net, &opt, epoch, global_step, rng_state_string(rng));
        res.last_checkpoint = last;
        if (eval_dice > res.best_eval_dice) {
            res.best_eval_dice = eval_dice;
            const std::string best = (out_dir / "best.ckpt").string();
            save_checkpoint(best, net, &opt, epoch, global_step, rng_state_string(rng));
            res.best_checkpoint = best;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// ablation grids
// ---------------------------------------------------------------------------

struct AblationCell {
    std::string name;
    TrainConfig cfg;
};

struct AblationRow {
    std::string name;
    double dice_wt = 0, dice_tc = 0, dice_et = 0;
};

/// Table-3 shape: component on/off combinations.
inline std::vector<AblationCell> components_grid(const TrainConfig& base) {
    auto cell = [&](const std::string& name, bool parallel, bool mfci, bool scff) {
        TrainConfig c = base;
        c.net.parallel_encoders = parallel;
        c.net.enable_mfci = mfci;
        c.net.enable_scff = scff;
        return AblationCell{name, c};
    };
    return {cell("baseline", false, false, false),
            cell("baseline(P)", true, false, false),
            cell("baseline(P)+MFCI", true, true, false),
            cell("baseline(P)+SCFF", true, false, true),
            cell("CFCI-Net", true, true, true)};
}

/// Table-5 shape: the three modality pairing strategies.
inline std::vector<AblationCell> pairing_grid(const TrainConfig& base) {
    std::vector<AblationCell> out;
    for (auto p : {Pairing::T1T1ce_T2Flair, Pairing::T1Flair_T1ceT2, Pairing::T1T2_T1ceFlair}) {
        TrainConfig c = base;
        c.net.pairing = p;
        out.push_back({pairing_name(p), c});
    }
    return out;
}

/// Table-6 shape: (L1, L2) layer-count grid.
inline std::vector<AblationCell> layers_grid(const TrainConfig& base) {
    std::vector<AblationCell> out;
    for (auto [l1, l2] : std::vector<std::pair<std::int64_t, std::int64_t>>{
             {6, 2}, {6, 4}, {4, 12}, {4, 16}, {2, 2}, {4, 4}, {6, 6}}) {
        TrainConfig c = base;
        c.net.mfci.l1 = l1;
        c.net.mfci.l2 = l2;
        out.push_back({"L1=" + std::to_string(l1) + ",L2=" + std::to_string(l2), c});
    }
    return out;
}

/// Trains each cell at desk scale and scores it on a held-out phantom.
inline std::vector<AblationRow> ablation_run(const std::vector<AblationCell>& grid,
                                             const std::vector<MultiModalVolume>& cases,
                                             const std::vector<MultiModalVolume>& eval_cases,
                                             const std::filesystem::path& out_dir,
                                             std::ostream* progress = nullptr) {
    std::vector<AblationRow> rows;
    for (const auto& cell : grid) {
        if (progress) (*progress) << "[ablate] " << cell.name << std::endl;
        auto res = train(cell.cfg, cases, eval_cases, out_dir / cell.name, nullptr);

        // score the best checkpoint on the evaluation split
        CheckpointMeta meta = read_checkpoint_meta(res.best_checkpoint);
        std::mt19937_64 rng(0);
        CfciNet net(meta.net_cfg, rng);
        load_checkpoint_state(res.best_checkpoint, net);
        AblationRow row;
        row.name = cell.name;
        NoGradGuard ng;
        const auto& pool = eval_cases.empty() ? cases : eval_cases;
        for (const auto& ec : pool) {
            auto [ex, elab] = detail::fixed_patch(ec, cell.cfg.net.input_size);
            Tensor out = net(Var::leaf(ex), false).value();
            auto d = detail::region_dices(logits_to_labels(out), elab);
            row.dice_wt += d[0] / pool.size();
            row.dice_tc += d[1] / pool.size();
            row.dice_et += d[2] / pool.size();
        }
        rows.push_back(row);
    }

    std::filesystem::create_directories(out_dir);
    std::ofstream csv(out_dir / "ablation.csv");
    csv << "cell,dice_wt,dice_tc,dice_et\n";
    for (const auto& r : rows)
        csv << r.name << ',' << r.dice_wt << ',' << r.dice_tc << ',' << r.dice_et << '\n';
    return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(22) << "cell" << std::right << std::setw(10) << "Dice WT"
       << std::setw(10) << "Dice TC" << std::setw(10) << "Dice ET" << "\n";
    for (const auto& r : rows)
        os << std::left << std::setw(22) << r.name << std::right << std::fixed << std::setprecision(4)
           << std::setw(10) << r.dice_wt << std::setw(10) << r.dice_tc << std::setw(10) << r.dice_et << "\n";
    return os.str();
}

} // namespace cfci
