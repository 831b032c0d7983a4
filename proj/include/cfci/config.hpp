#pragma once

#include <json.hpp>

#include "cfci/data.hpp"
#include "cfci/network.hpp"

namespace cfci {

using nlohmann::json;

struct TrainConfig {
    NetworkConfig net;
    std::int64_t epochs = 200;
    double lr = 1e-4;
    double lr_min = 1e-6;
    std::string schedule = "cosine"; // or "constant"
    double weight_decay = 1e-5;
    std::int64_t batch_size = 1;
    std::uint64_t seed = 0;
    bool augment_enabled = true;
    AugmentationSpec aug;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (schedule != "cosine" && schedule != "constant")
            throw std::invalid_argument("config: unknown schedule '" + schedule + "'");
        if (aug.flip_prob < 0 || aug.flip_prob > 1)
            throw std::invalid_argument("config: flip_prob must be in [0,1]");
        net.validate();
    }
};

// ---------------------------------------------------------------------------
// JSON (all keys optional, defaults apply)
// ---------------------------------------------------------------------------

inline json to_json(const MfciConfig& c) {
    return {{"l1", c.l1},       {"l2", c.l2},           {"heads", c.heads},
            {"embed_dim", c.embed_dim}, {"patch_size", c.patch_size},
            {"alpha", c.alpha}, {"beta", c.beta},
            {"enable_mfc", c.enable_mfc}, {"enable_mfi", c.enable_mfi}};
}

inline MfciConfig mfci_from_json(const json& j) {
    MfciConfig c;
    c.l1 = j.value("l1", c.l1);
    c.l2 = j.value("l2", c.l2);
    c.heads = j.value("heads", c.heads);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.enable_mfc = j.value("enable_mfc", c.enable_mfc);
    c.enable_mfi = j.value("enable_mfi", c.enable_mfi);
    return c;
}

inline json to_json(const NetworkConfig& c) {
    return {{"base_width", c.base_width},
            {"depth", c.depth},
            {"input_size", c.input_size},
            {"num_classes", c.num_classes},
            {"bottleneck_channels", c.bottleneck_channels},
            {"pairing", pairing_name(c.pairing)},
            {"enable_scff", c.enable_scff},
            {"enable_mfci", c.enable_mfci},
            {"parallel_encoders", c.parallel_encoders},
            {"mfci", to_json(c.mfci)}};
}

inline NetworkConfig network_from_json(const json& j) {
    NetworkConfig c;
    c.base_width = j.value("base_width", c.base_width);
    c.depth = j.value("depth", c.depth);
    c.input_size = j.value("input_size", c.input_size);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.bottleneck_channels = j.value("bottleneck_channels", c.bottleneck_channels);
    if (j.contains("pairing")) c.pairing = pairing_from_string(j["pairing"].get<std::string>());
    c.enable_scff = j.value("enable_scff", c.enable_scff);
    c.enable_mfci = j.value("enable_mfci", c.enable_mfci);
    c.parallel_encoders = j.value("parallel_encoders", c.parallel_encoders);
    if (j.contains("mfci")) c.mfci = mfci_from_json(j["mfci"]);
    return c;
}

inline json to_json(const TrainConfig& c) {
    return {{"network", to_json(c.net)},
            {"epochs", c.epochs},
            {"lr", c.lr},
            {"lr_min", c.lr_min},
            {"schedule", c.schedule},
            {"weight_decay", c.weight_decay},
            {"batch_size", c.batch_size},
            {"seed", c.seed},
            {"augment", {{"enabled", c.augment_enabled},
                         {"scale_lo", c.aug.scale_lo},
                         {"scale_hi", c.aug.scale_hi},
                         {"flip_prob", c.aug.flip_prob}}}};
}

inline TrainConfig train_from_json(const json& j) {
    TrainConfig c;
    if (j.contains("network")) c.net = network_from_json(j["network"]);
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.schedule = j.value("schedule", c.schedule);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("augment")) {
        const json& a = j["augment"];
        c.augment_enabled = a.value("enabled", c.augment_enabled);
        c.aug.scale_lo = a.value("scale_lo", c.aug.scale_lo);
        c.aug.scale_hi = a.value("scale_hi", c.aug.scale_hi);
        c.aug.flip_prob = a.value("flip_prob", c.aug.flip_prob);
    }
    c.aug.crop = c.net.input_size;
    return c;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file '" + path + "'");
    json j;
    f >> j;
    return train_from_json(j);
}

} // namespace cfci
